use serde::{Deserialize, Serialize};

use super::LearnerError;
use crate::mdp::{Dims, StageTable, Triplet};

/// Exponential weights over a finite support with the small-loss learning rate
/// `xi = min(1/2, sqrt(ln K / (1 + L*)))`, `L*` the smallest cumulative loss.
///
/// Weights are kept unnormalised relative to the current leader,
/// `w_i = exp(-xi (L_i - L*))`. A round that moves neither `xi` nor `L*`
/// only recomputes the touched entries.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WmfState {
    support: Vec<Triplet>,
    cumulative_loss: Vec<f64>,
    cumulative_alg_loss: f64,
    rate: f64,
    min_loss: f64,
    raw: Vec<f64>,
    raw_sum: f64,
    rounds: u64,
}

fn rate_for(k: usize, min_loss: f64) -> f64 {
    (((k as f64).ln() / (1.0 + min_loss)).sqrt()).min(0.5)
}

impl WmfState {
    /// Uniform weights on `support`.
    pub fn new(support: Vec<Triplet>) -> Result<Self, LearnerError> {
        if support.is_empty() {
            return Err(LearnerError::EmptySupport);
        }
        let k = support.len();
        Ok(WmfState {
            cumulative_loss: vec![0.0; k],
            cumulative_alg_loss: 0.0,
            rate: rate_for(k, 0.0),
            min_loss: 0.0,
            raw: vec![1.0; k],
            raw_sum: k as f64,
            rounds: 0,
            support,
        })
    }

    pub fn support(&self) -> &[Triplet] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.support.len()
    }

    pub fn is_empty(&self) -> bool {
        self.support.is_empty()
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn cumulative_loss(&self) -> &[f64] {
        &self.cumulative_loss
    }

    /// `sum_t <lambda^t, loss^t>`.
    pub fn cumulative_alg_loss(&self) -> f64 {
        self.cumulative_alg_loss
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.raw[i] / self.raw_sum
    }

    pub fn weights(&self) -> Vec<f64> {
        self.raw.iter().map(|w| w / self.raw_sum).collect()
    }

    /// Writes the weights into `out` on the support and zero elsewhere.
    pub fn write_weights(&self, out: &mut StageTable<f64>) {
        out.as_mut_slice().fill(0.0);
        for (t, w) in self.support.iter().zip(&self.raw) {
            out[*t] = w / self.raw_sum;
        }
    }

    pub fn weight_table(&self, dims: Dims) -> StageTable<f64> {
        let mut t = StageTable::zeros(dims);
        self.write_weights(&mut t);
        t
    }

    /// Dense loss vector aligned with the support.
    pub fn update(&mut self, loss: &[f64]) -> Result<f64, LearnerError> {
        if loss.len() != self.len() {
            return Err(LearnerError::BadIndex(loss.len()));
        }
        let sparse: Vec<(usize, f64)> = loss
            .iter()
            .enumerate()
            .filter(|(_, &l)| l != 0.0)
            .map(|(i, &l)| (i, l))
            .collect();
        self.update_sparse(&sparse)
    }

    /// Feeds a loss given as `(support index, value)` pairs; absent entries are 0.
    /// Returns the algorithm's loss `<lambda^t, loss^t>` for this round.
    pub fn update_sparse(&mut self, loss: &[(usize, f64)]) -> Result<f64, LearnerError> {
        for &(i, l) in loss {
            if i >= self.len() {
                return Err(LearnerError::BadIndex(i));
            }
            if !(0.0..=1.0).contains(&l) {
                return Err(LearnerError::LossRange { index: i, value: l });
            }
        }
        let alg_loss: f64 = loss.iter().map(|&(i, l)| self.weight(i) * l).sum();
        self.cumulative_alg_loss += alg_loss;
        self.rounds += 1;
        for &(i, l) in loss {
            self.cumulative_loss[i] += l;
        }
        let min_loss = self
            .cumulative_loss
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min);
        let rate = rate_for(self.len(), min_loss);
        if rate == self.rate && min_loss == self.min_loss {
            for &(i, l) in loss {
                if l != 0.0 {
                    self.raw[i] = (-rate * (self.cumulative_loss[i] - min_loss)).exp();
                }
            }
            self.raw_sum = self.raw.iter().sum();
        } else {
            self.rate = rate;
            self.min_loss = min_loss;
            self.recompute();
        }
        Ok(alg_loss)
    }

    fn recompute(&mut self) {
        for (w, l) in self.raw.iter_mut().zip(&self.cumulative_loss) {
            *w = (-self.rate * (l - self.min_loss)).exp();
        }
        self.raw_sum = self.raw.iter().sum();
    }

    /// `L_alg - min_i L_i`.
    pub fn regret(&self) -> f64 {
        self.cumulative_alg_loss - self.min_loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn support(k: usize) -> Vec<Triplet> {
        (0..k).map(|i| Triplet::new(0, i, 0)).collect()
    }

    #[test]
    fn uniform_start() {
        let w = WmfState::new(support(4)).unwrap();
        assert_eq!(w.weights(), vec![0.25; 4]);
        assert_eq!(WmfState::new(support(1)).unwrap().weights(), vec![1.0]);
        assert_eq!(WmfState::new(vec![]), Err(LearnerError::EmptySupport));
    }

    #[test]
    fn zero_losses_keep_uniform() {
        let mut w = WmfState::new(support(3)).unwrap();
        for _ in 0..100 {
            w.update_sparse(&[]).unwrap();
        }
        assert_eq!(w.weights(), vec![1.0 / 3.0; 3]);
    }

    #[test]
    fn repeatedly_hit_element_loses_weight() {
        let mut w = WmfState::new(support(3)).unwrap();
        let mut last = w.weight(0);
        for _ in 0..50 {
            w.update_sparse(&[(0, 1.0)]).unwrap();
            assert!(w.weight(0) < last);
            last = w.weight(0);
        }
    }

    #[test]
    fn rejects_bad_losses() {
        let mut w = WmfState::new(support(2)).unwrap();
        assert!(matches!(
            w.update_sparse(&[(0, 1.5)]),
            Err(LearnerError::LossRange { .. })
        ));
        assert!(matches!(
            w.update_sparse(&[(2, 0.5)]),
            Err(LearnerError::BadIndex(2))
        ));
    }

    proptest! {
        #[test]
        fn weights_match_closed_form(
            k in 1usize..8,
            stream in proptest::collection::vec(proptest::collection::vec(0.0f64..=1.0, 8), 0..200),
        ) {
            let mut w = WmfState::new(support(k)).unwrap();
            for row in &stream {
                w.update(&row[..k]).unwrap();
                let sum: f64 = w.weights().iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                let lmin = w.cumulative_loss().iter().copied().fold(f64::INFINITY, f64::min);
                let expect: Vec<f64> = w
                    .cumulative_loss()
                    .iter()
                    .map(|l| (-w.rate() * (l - lmin)).exp())
                    .collect();
                let total: f64 = expect.iter().sum();
                for (a, e) in w.weights().iter().zip(&expect) {
                    prop_assert!((a - e / total).abs() < 1e-9);
                }
                // the leader carries the largest weight
                let best = w.cumulative_loss().iter().position(|&l| l == lmin).unwrap();
                let top = w.weights().iter().copied().fold(0.0, f64::max);
                prop_assert!(w.weight(best) >= top - 1e-15);
            }
        }
    }
}
