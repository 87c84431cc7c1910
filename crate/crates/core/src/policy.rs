//! Contexts, actions and stochastic policies over a finite action set.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Deref;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "sums to one".
pub const PROB_TOL: f64 = 1e-9;

/// A context `x ∈ R^d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ContextVector(Vec<f64>);

impl ContextVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("context entry {i}")));
        }
        Ok(ContextVector(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl Deref for ContextVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// Index of an action in `[0, K)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActionId(pub usize);

impl ActionId {
    pub fn new(index: usize, num_actions: usize) -> Result<Self> {
        if index >= num_actions {
            return Err(Error::invalid(format!(
                "action {index} out of range for {num_actions} actions"
            )));
        }
        Ok(ActionId(index))
    }

    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

/// A mean-reward function `q(x, a)`, or anything used like one.
pub trait ActionValue: Send + Sync {
    fn value(&self, x: &ContextVector, a: ActionId) -> f64;
}

impl<F> ActionValue for F
where
    F: Fn(&ContextVector, ActionId) -> f64 + Send + Sync,
{
    fn value(&self, x: &ContextVector, a: ActionId) -> f64 {
        self(x, a)
    }
}

/// A conditional distribution over actions given a context.
pub trait Policy: Send + Sync {
    fn num_actions(&self) -> usize;

    /// Action probabilities for `x`; non-negative and summing to one.
    fn probs(&self, x: &ContextVector) -> Vec<f64>;

    fn prob(&self, x: &ContextVector, a: ActionId) -> f64 {
        self.probs(x)[a.index()]
    }
}

impl<P: Policy + ?Sized> Policy for &P {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn probs(&self, x: &ContextVector) -> Vec<f64> {
        (**self).probs(x)
    }
    fn prob(&self, x: &ContextVector, a: ActionId) -> f64 {
        (**self).prob(x, a)
    }
}

/// Checks that `p` lies on the probability simplex.
pub fn validate_probs(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::invalid("empty probability vector"));
    }
    if let Some(i) = p.iter().position(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::invalid(format!("probability {i} is {}", p[i])));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > PROB_TOL {
        return Err(Error::invalid(format!("probabilities sum to {total}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UniformPolicy {
    num_actions: usize,
}

pub fn uniform_policy(num_actions: usize) -> Result<UniformPolicy> {
    if num_actions == 0 {
        return Err(Error::invalid("uniform policy needs at least one action"));
    }
    Ok(UniformPolicy { num_actions })
}

impl Policy for UniformPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn probs(&self, _x: &ContextVector) -> Vec<f64> {
        vec![1.0 / self.num_actions as f64; self.num_actions]
    }

    fn prob(&self, _x: &ContextVector, _a: ActionId) -> f64 {
        1.0 / self.num_actions as f64
    }
}

/// Plays `argmax_a q(x, a)` with probability `1 - ε + ε/K` and every other
/// action with `ε/K`. Ties go to the lowest index.
#[derive(Clone)]
pub struct EpsilonGreedy<Q> {
    q: Q,
    epsilon: f64,
    num_actions: usize,
}

impl<Q> core::fmt::Debug for EpsilonGreedy<Q> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("EpsilonGreedy")
            .field("epsilon", &self.epsilon)
            .field("num_actions", &self.num_actions)
            .finish_non_exhaustive()
    }
}

pub fn epsilon_greedy_policy<Q>(q: Q, epsilon: f64, num_actions: usize) -> Result<EpsilonGreedy<Q>>
where
    Q: ActionValue,
{
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [0, 1]")));
    }
    if num_actions == 0 {
        return Err(Error::invalid("epsilon-greedy policy needs at least one action"));
    }
    Ok(EpsilonGreedy { q, epsilon, num_actions })
}

impl<Q: ActionValue> EpsilonGreedy<Q> {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn greedy_action(&self, x: &ContextVector) -> ActionId {
        let mut best = 0;
        let mut best_q = self.q.value(x, ActionId(0));
        for a in 1..self.num_actions {
            let v = self.q.value(x, ActionId(a));
            if v > best_q {
                best = a;
                best_q = v;
            }
        }
        ActionId(best)
    }
}

impl<Q: ActionValue> Policy for EpsilonGreedy<Q> {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn probs(&self, x: &ContextVector) -> Vec<f64> {
        let k = self.num_actions as f64;
        let mut p = vec![self.epsilon / k; self.num_actions];
        p[self.greedy_action(x).index()] = 1.0 - self.epsilon + self.epsilon / k;
        p
    }
}

/// A context-free policy given by one probability vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPolicy {
    probs: Vec<f64>,
}

impl FixedPolicy {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        validate_probs(&probs)?;
        Ok(FixedPolicy { probs })
    }
}

impl Policy for FixedPolicy {
    fn num_actions(&self) -> usize {
        self.probs.len()
    }

    fn probs(&self, _x: &ContextVector) -> Vec<f64> {
        self.probs.clone()
    }

    fn prob(&self, _x: &ContextVector, a: ActionId) -> f64 {
        self.probs[a.index()]
    }
}

/// A policy tabulated on a finite set of contexts, keyed by the exact bit
/// pattern of the context vector. Contexts outside the table get `fallback`
/// when one is set and panic otherwise.
#[derive(Debug, Clone, Default)]
pub struct LookupPolicy {
    num_actions: usize,
    table: BTreeMap<Vec<u64>, Vec<f64>>,
    fallback: Option<Vec<f64>>,
}

fn context_key(x: &[f64]) -> Vec<u64> {
    // +0.0 and -0.0 must map to the same key.
    x.iter().map(|v| if *v == 0.0 { 0 } else { v.to_bits() }).collect()
}

impl LookupPolicy {
    pub fn new(num_actions: usize) -> Self {
        LookupPolicy { num_actions, table: BTreeMap::new(), fallback: None }
    }

    /// Adds a row. Re-inserting the same context with different
    /// probabilities is an error: a policy is a function of the context.
    pub fn insert(&mut self, x: &ContextVector, probs: Vec<f64>) -> Result<()> {
        if probs.len() != self.num_actions {
            return Err(Error::invalid(format!(
                "expected {} probabilities, got {}",
                self.num_actions,
                probs.len()
            )));
        }
        validate_probs(&probs)?;
        let key = context_key(x);
        if let Some(existing) = self.table.get(&key) {
            let same = existing.iter().zip(&probs).all(|(a, b)| (a - b).abs() <= PROB_TOL);
            if !same {
                return Err(Error::invalid(
                    "conflicting target probabilities for one context",
                ));
            }
            return Ok(());
        }
        self.table.insert(key, probs);
        Ok(())
    }

    pub fn set_fallback(&mut self, probs: Vec<f64>) -> Result<()> {
        validate_probs(&probs)?;
        self.fallback = Some(probs);
        Ok(())
    }

    pub fn contains(&self, x: &ContextVector) -> bool {
        self.table.contains_key(&context_key(x))
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl Policy for LookupPolicy {
    fn num_actions(&self) -> usize {
        self.num_actions
    }

    fn probs(&self, x: &ContextVector) -> Vec<f64> {
        match self.table.get(&context_key(x)) {
            Some(p) => p.clone(),
            None => self.fallback.clone().expect("context missing from lookup policy"),
        }
    }
}

/// The importance weight `π(a|x) / μ(a|x)`.
pub fn ips_weight<P, M>(pi: &P, mu: &M, x: &ContextVector, a: ActionId) -> Result<f64>
where
    P: Policy + ?Sized,
    M: Policy + ?Sized,
{
    let behavior = mu.prob(x, a);
    if behavior <= 0.0 {
        return Err(Error::UnsupportedAction { action: a.index() });
    }
    Ok(pi.prob(x, a) / behavior)
}

/// Weights `w(x, a)` for every action. Actions that neither policy supports
/// get weight zero; an action with target mass but no behavior mass is an
/// error.
pub fn weight_vector<P, M>(pi: &P, mu: &M, x: &ContextVector) -> Result<Vec<f64>>
where
    P: Policy + ?Sized,
    M: Policy + ?Sized,
{
    let target = pi.probs(x);
    let behavior = mu.probs(x);
    if target.len() != behavior.len() {
        return Err(Error::invalid("policies disagree on the number of actions"));
    }
    target
        .iter()
        .zip(&behavior)
        .enumerate()
        .map(|(a, (&p, &m))| {
            if m > 0.0 {
                Ok(p / m)
            } else if p == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::UnsupportedAction { action: a })
            }
        })
        .collect()
}
