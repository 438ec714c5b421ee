use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dims, MdpError, StageTable, TabularMdp};

/// On-disk MDP layout: `p[h][s][a][s']` over the first `H - 1` stages and `r[h][s][a]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MdpFile {
    #[serde(rename = "S")]
    pub states: usize,
    #[serde(rename = "A")]
    pub actions: usize,
    #[serde(rename = "H")]
    pub horizon: usize,
    pub s1: usize,
    pub p: Vec<Vec<Vec<Vec<f64>>>>,
    pub r: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, thiserror::Error)]
pub enum MdpFileError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Invalid(#[from] MdpError),
}

impl MdpFile {
    pub fn from_mdp(mdp: &TabularMdp) -> Self {
        let d = mdp.dims();
        let p = (0..d.horizon.saturating_sub(1))
            .map(|h| {
                (0..d.states)
                    .map(|s| {
                        (0..d.actions)
                            .map(|a| mdp.next_state_probs(h, s, a).to_vec())
                            .collect()
                    })
                    .collect()
            })
            .collect();
        MdpFile {
            states: d.states,
            actions: d.actions,
            horizon: d.horizon,
            s1: mdp.initial_state(),
            p,
            r: mdp.reward_means().to_nested(),
        }
    }

    pub fn into_mdp(self) -> Result<TabularMdp, MdpError> {
        let d = Dims::new(self.states, self.actions, self.horizon)?;
        let expected_stages = d.horizon - 1;
        if self.p.len() != expected_stages {
            return Err(MdpError::Shape {
                what: "p stages",
                expected: expected_stages,
                got: self.p.len(),
            });
        }
        let mut flat = Vec::with_capacity(expected_stages * d.states * d.actions * d.states);
        for stage in self.p {
            if stage.len() != d.states {
                return Err(MdpError::Shape {
                    what: "p states",
                    expected: d.states,
                    got: stage.len(),
                });
            }
            for row in stage {
                if row.len() != d.actions {
                    return Err(MdpError::Shape {
                        what: "p actions",
                        expected: d.actions,
                        got: row.len(),
                    });
                }
                for dist in row {
                    if dist.len() != d.states {
                        return Err(MdpError::Shape {
                            what: "p next states",
                            expected: d.states,
                            got: dist.len(),
                        });
                    }
                    flat.extend(dist);
                }
            }
        }
        let rewards = StageTable::from_nested(d, self.r)?;
        TabularMdp::new(d, self.s1, flat, rewards)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<TabularMdp, MdpFileError> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<TabularMdp, MdpFileError> {
        let file: MdpFile = serde_json::from_str(text)?;
        Ok(file.into_mdp()?)
    }

    pub fn save(mdp: &TabularMdp, path: impl AsRef<Path>) -> Result<(), MdpFileError> {
        let text = serde_json::to_string_pretty(&Self::from_mdp(mdp))?;
        std::fs::write(path, text)?;
        Ok(())
    }
}
