//! The two no-regret players of the coverage game.

mod ucbvi;
mod wmf;

pub use ucbvi::{beta, ucbvi_plan, Ucbvi, UcbviStats};
pub use wmf::WmfState;

use crate::mdp::{MdpError, Triplet};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LearnerError {
    #[error("exponential weights need a nonempty support")]
    EmptySupport,
    #[error("loss {value} for support element {index} is outside [0, 1]")]
    LossRange { index: usize, value: f64 },
    #[error("support index {0} out of range")]
    BadIndex(usize),
    #[error("reward entry {value} at {at:?} is outside [0, 1]")]
    RewardRange { at: Triplet, value: f64 },
    #[error("reward admits trajectories with total reward {0} > 1")]
    RewardMass(f64),
    #[error(transparent)]
    Mdp(#[from] MdpError),
}
