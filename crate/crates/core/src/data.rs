//! Logged bandit feedback.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{ActionId, ContextVector};

/// One logged interaction `(x, a, r)` with the behavior propensity `μ(a|x)`
/// and, when the logging system provides one, an action embedding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoggedSample {
    pub context: ContextVector,
    pub action: ActionId,
    pub reward: f64,
    pub behavior_propensity: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

impl LoggedSample {
    pub fn new(context: ContextVector, action: ActionId, reward: f64, behavior_propensity: f64) -> Self {
        LoggedSample { context, action, reward, behavior_propensity, embedding: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    samples: Vec<LoggedSample>,
    context_dim: usize,
    num_actions: usize,
}

impl Dataset {
    /// Validates every sample against the declared shape.
    pub fn new(samples: Vec<LoggedSample>, context_dim: usize, num_actions: usize) -> Result<Self> {
        if num_actions == 0 {
            return Err(Error::invalid("dataset needs at least one action"));
        }
        for (i, s) in samples.iter().enumerate() {
            if s.context.dim() != context_dim {
                return Err(Error::invalid(format!(
                    "sample {i}: context has {} entries, expected {context_dim}",
                    s.context.dim()
                )));
            }
            if s.action.index() >= num_actions {
                return Err(Error::invalid(format!(
                    "sample {i}: action {} out of range for {num_actions} actions",
                    s.action.index()
                )));
            }
            if !s.reward.is_finite() {
                return Err(Error::NonFinite(format!("sample {i}: reward")));
            }
            if !(s.behavior_propensity > 0.0 && s.behavior_propensity <= 1.0) {
                return Err(Error::invalid(format!(
                    "sample {i}: propensity {} outside (0, 1]",
                    s.behavior_propensity
                )));
            }
        }
        Ok(Dataset { samples, context_dim, num_actions })
    }

    pub fn samples(&self) -> &[LoggedSample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn mean_reward(&self) -> f64 {
        self.samples.iter().map(|s| s.reward).sum::<f64>() / self.samples.len() as f64
    }

    /// A new dataset made of the samples at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            context_dim: self.context_dim,
            num_actions: self.num_actions,
        }
    }

    pub fn require_non_empty(&self) -> Result<()> {
        if self.samples.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn sample(a: usize, p: f64) -> LoggedSample {
        LoggedSample::new(ContextVector::new(vec![0.5, 0.5]).unwrap(), ActionId(a), 1.0, p)
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(Dataset::new(vec![sample(0, 0.5)], 2, 2).is_ok());
        assert!(Dataset::new(vec![sample(2, 0.5)], 2, 2).is_err());
        assert!(Dataset::new(vec![sample(0, 0.0)], 2, 2).is_err());
        assert!(Dataset::new(vec![sample(0, 1.5)], 2, 2).is_err());
        assert!(Dataset::new(vec![sample(0, 0.5)], 3, 2).is_err());
    }

    #[test]
    fn select_preserves_order() {
        let d = Dataset::new(vec![sample(0, 0.5), sample(1, 0.5)], 2, 2).unwrap();
        let s = d.select(&[1, 0, 1]);
        assert_eq!(s.samples()[0].action, ActionId(1));
        assert_eq!(s.len(), 3);
    }
}
