//! Synthetic environment with a Gaussian-bump reward surface.
//!
//! Contexts are uniform on `[0, 1]^d`. Action `a` (0-based) has a
//! representation whose first coordinate is `(a + 1) / K`; the remaining
//! `d - 1` coordinates are fixed uniform draws that never affect the reward.
//! The mean reward is `q(x, a) = 10 exp(-(x_1 - a_1)^2)` and observed
//! rewards carry `N(0, σ²)` noise.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LoggedSample};
use crate::error::{Error, Result};
use crate::policy::{epsilon_greedy_policy, ActionId, ActionValue, ContextVector, EpsilonGreedy, Policy};
use crate::rng::RngSeed;

/// Peak height of the reward surface.
pub const REWARD_SCALE: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticEnv {
    context_dim: usize,
    num_actions: usize,
    action_reps: Vec<Vec<f64>>,
    reward_std: f64,
    seed: RngSeed,
}

/// `q(x, a)` for the bump surface; only needs the first coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct BumpReward {
    first_coords: Vec<f64>,
}

impl ActionValue for BumpReward {
    fn value(&self, x: &ContextVector, a: ActionId) -> f64 {
        let t = x[0] - self.first_coords[a.index()];
        REWARD_SCALE * libm::exp(-t * t)
    }
}

pub type SyntheticTarget = EpsilonGreedy<BumpReward>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub value: f64,
    pub mc_samples: usize,
    pub std_error: f64,
}

impl SyntheticEnv {
    pub fn new(context_dim: usize, num_actions: usize, reward_std: f64, seed: RngSeed) -> Result<Self> {
        if context_dim == 0 || num_actions == 0 {
            return Err(Error::invalid("context dimension and action count must be positive"));
        }
        if !(reward_std >= 0.0 && reward_std.is_finite()) {
            return Err(Error::invalid("reward standard deviation must be finite and non-negative"));
        }
        let mut rng = seed.rng();
        let k = num_actions as f64;
        let action_reps = (0..num_actions)
            .map(|a| {
                let mut rep = Vec::with_capacity(context_dim);
                rep.push((a + 1) as f64 / k);
                rep.extend((1..context_dim).map(|_| rng.random::<f64>()));
                rep
            })
            .collect();
        Ok(SyntheticEnv { context_dim, num_actions, action_reps, reward_std, seed })
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn reward_std(&self) -> f64 {
        self.reward_std
    }

    pub fn seed(&self) -> RngSeed {
        self.seed
    }

    pub fn action_rep(&self, a: ActionId) -> &[f64] {
        &self.action_reps[a.index()]
    }

    pub fn expected_reward(&self, x: &ContextVector, a: ActionId) -> f64 {
        let t = x[0] - self.action_reps[a.index()][0];
        REWARD_SCALE * libm::exp(-t * t)
    }

    pub fn reward_fn(&self) -> BumpReward {
        BumpReward { first_coords: self.action_reps.iter().map(|r| r[0]).collect() }
    }

    /// The ε-greedy target policy with respect to the true `q`.
    pub fn target_policy(&self, epsilon: f64) -> Result<SyntheticTarget> {
        epsilon_greedy_policy(self.reward_fn(), epsilon, self.num_actions)
    }

    pub fn sample_context<R: Rng + ?Sized>(&self, rng: &mut R) -> ContextVector {
        let values = (0..self.context_dim).map(|_| rng.random::<f64>()).collect();
        ContextVector::new(values).expect("uniform draws are finite")
    }

    /// Logs `n` iid interactions of `mu` with the environment.
    pub fn generate_dataset<M: Policy + ?Sized>(&self, mu: &M, n: usize, seed: RngSeed) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::invalid("dataset size must be positive"));
        }
        if mu.num_actions() != self.num_actions {
            return Err(Error::invalid("behavior policy has the wrong number of actions"));
        }
        let mut rng = seed.rng();
        let mut samples = Vec::with_capacity(n);
        for _ in 0..n {
            let x = self.sample_context(&mut rng);
            let probs = mu.probs(&x);
            let dist = WeightedIndex::new(&probs)
                .map_err(|_| Error::invalid("behavior policy returned an invalid distribution"))?;
            let a = ActionId(dist.sample(&mut rng));
            let noise: f64 = rng.sample(StandardNormal);
            let reward = self.expected_reward(&x, a) + self.reward_std * noise;
            let propensity = probs[a.index()];
            samples.push(LoggedSample::new(x, a, reward, propensity));
        }
        Dataset::new(samples, self.context_dim, self.num_actions)
    }

    /// `v(π)` by Monte Carlo over `mc_contexts` fresh contexts, with the sum
    /// over actions done exactly.
    pub fn true_value<P: Policy + ?Sized>(&self, pi: &P, mc_contexts: usize, seed: RngSeed) -> Result<GroundTruth> {
        if mc_contexts == 0 {
            return Err(Error::invalid("need at least one Monte Carlo context"));
        }
        let mut rng = seed.rng();
        // Welford keeps the variance stable at 10^6 draws.
        let mut mean = 0.0;
        let mut m2 = 0.0;
        for m in 0..mc_contexts {
            let x = self.sample_context(&mut rng);
            let probs = pi.probs(&x);
            let v: f64 = probs
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(a, p)| p * self.expected_reward(&x, ActionId(a)))
                .sum();
            let delta = v - mean;
            mean += delta / (m + 1) as f64;
            m2 += delta * (v - mean);
        }
        let std_error = if mc_contexts > 1 {
            libm::sqrt(m2 / (mc_contexts - 1) as f64 / mc_contexts as f64)
        } else {
            0.0
        };
        Ok(GroundTruth { value: mean, mc_samples: mc_contexts, std_error })
    }
}
