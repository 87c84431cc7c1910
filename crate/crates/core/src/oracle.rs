//! Exact computations on small, fully enumerable bandit instances.
//!
//! A [`DiscreteInstance`] has finitely many contexts, actions, embeddings and
//! reward atoms, so every expectation, bias and variance of a single-sample
//! estimator term can be summed exactly. Estimator-level variances follow by
//! dividing by `n` since samples are iid.
//!
//! The bias and variance identities for marginalized IPS are each computed
//! along two independent routes and the routes are compared.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::ActionPosterior;
use crate::policy::{ActionId, ContextVector, Policy};

/// Tolerance for pmfs and exact identities.
pub const EXACT_TOL: f64 = 1e-10;
const PMF_TOL: f64 = 1e-12;

/// A finite reward distribution given as `(value, probability)` atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct RewardDist {
    atoms: Vec<(f64, f64)>,
}

impl RewardDist {
    pub fn new(atoms: Vec<(f64, f64)>) -> Result<Self> {
        if atoms.is_empty() {
            return Err(Error::invalid("reward distribution needs at least one atom"));
        }
        check_pmf(atoms.iter().map(|(_, p)| *p), "reward pmf")?;
        if atoms.iter().any(|(v, _)| !v.is_finite()) {
            return Err(Error::NonFinite(String::from("reward atom")));
        }
        Ok(RewardDist { atoms })
    }

    pub fn constant(value: f64) -> Self {
        RewardDist { atoms: vec![(value, 1.0)] }
    }

    pub fn atoms(&self) -> &[(f64, f64)] {
        &self.atoms
    }

    pub fn mean(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * p).sum()
    }

    pub fn second_moment(&self) -> f64 {
        self.atoms.iter().map(|(v, p)| v * v * p).sum()
    }

    fn range(&self) -> (f64, f64) {
        self.atoms
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (v, _)| (lo.min(*v), hi.max(*v)))
    }
}

fn check_pmf(p: impl Iterator<Item = f64>, what: &str) -> Result<()> {
    let mut total = 0.0;
    for v in p {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(Error::invalid(format!("{what}: negative or non-finite entry {v}")));
        }
        total += v;
    }
    if (total - 1.0).abs() > PMF_TOL {
        return Err(Error::invalid(format!("{what} sums to {total}")));
    }
    Ok(())
}

/// A bandit instance small enough to enumerate.
///
/// Tables are indexed `[x][a]` for policies, `[x][a][e]` for embedding pmfs
/// and reward distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    context_probs: Vec<f64>,
    num_actions: usize,
    num_embeddings: usize,
    embedding_probs: Vec<Vec<Vec<f64>>>,
    rewards: Vec<Vec<Vec<RewardDist>>>,
    behavior: Vec<Vec<f64>>,
    target: Vec<Vec<f64>>,
}

/// The two routes to the MIPS bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MipsBias {
    /// Pairwise covariance decomposition over the exact posterior.
    pub decomposition: f64,
    /// `E[v̂_MIPS] - v(π)` from the single-sample distribution.
    pub direct: f64,
}

/// Exact posterior `μ(a|x,e) = μ(a|x) p_E(e|x,a) / p_E(e|x,μ)`, stored
/// `[x][e][a]`. Rows where `p_E(e|x,μ) = 0` are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPosterior {
    table: Vec<Vec<Option<Vec<f64>>>>,
}

impl ExactPosterior {
    pub fn get(&self, x: usize, e: usize) -> Option<&[f64]> {
        self.table[x][e].as_deref()
    }
}

/// Reads `(x, e)` indices from the first coordinate of the context and the
/// embedding, matching [`DiscreteInstance::sample_context`] and
/// [`DiscreteInstance::sample_embedding`].
impl ActionPosterior for ExactPosterior {
    fn posterior(&self, x: &ContextVector, e: &[f64]) -> Vec<f64> {
        let xi = x[0] as usize;
        let ei = e[0] as usize;
        self.table[xi][ei].clone().expect("embedding has zero probability under the behavior policy")
    }
}

/// A policy table over the instance's indexed contexts.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexedPolicy {
    table: Vec<Vec<f64>>,
}

impl Policy for IndexedPolicy {
    fn num_actions(&self) -> usize {
        self.table[0].len()
    }

    fn probs(&self, x: &ContextVector) -> Vec<f64> {
        self.table[x[0] as usize].clone()
    }

    fn prob(&self, x: &ContextVector, a: ActionId) -> f64 {
        self.table[x[0] as usize][a.index()]
    }
}

/// Bounds for [`DiscreteInstance::random`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomInstanceSpec {
    pub max_contexts: usize,
    pub max_actions: usize,
    pub max_embeddings: usize,
    pub max_reward_atoms: usize,
    /// Make reward distributions depend on `(x, e)` only.
    pub no_direct_effect: bool,
}

impl Default for RandomInstanceSpec {
    fn default() -> Self {
        RandomInstanceSpec {
            max_contexts: 4,
            max_actions: 5,
            max_embeddings: 4,
            max_reward_atoms: 3,
            no_direct_effect: false,
        }
    }
}

fn random_pmf<R: Rng + ?Sized>(rng: &mut R, len: usize, floor: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| floor + rng.random::<f64>()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

fn random_reward<R: Rng + ?Sized>(rng: &mut R, max_atoms: usize) -> RewardDist {
    let atoms = rng.random_range(1..=max_atoms);
    let probs = random_pmf(rng, atoms, 0.1);
    RewardDist {
        atoms: probs.into_iter().map(|p| (10.0 * rng.random::<f64>(), p)).collect(),
    }
}

impl DiscreteInstance {
    pub fn new(
        context_probs: Vec<f64>,
        embedding_probs: Vec<Vec<Vec<f64>>>,
        rewards: Vec<Vec<Vec<RewardDist>>>,
        behavior: Vec<Vec<f64>>,
        target: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let nx = context_probs.len();
        if nx == 0 {
            return Err(Error::invalid("instance needs at least one context"));
        }
        check_pmf(context_probs.iter().copied(), "context pmf")?;
        let num_actions = behavior.first().map_or(0, Vec::len);
        if num_actions == 0 {
            return Err(Error::invalid("instance needs at least one action"));
        }
        let num_embeddings = embedding_probs.first().and_then(|r| r.first()).map_or(0, Vec::len);
        if num_embeddings == 0 {
            return Err(Error::invalid("instance needs at least one embedding"));
        }
        let shape_ok = embedding_probs.len() == nx
            && rewards.len() == nx
            && behavior.len() == nx
            && target.len() == nx
            && (0..nx).all(|x| {
                behavior[x].len() == num_actions
                    && target[x].len() == num_actions
                    && embedding_probs[x].len() == num_actions
                    && rewards[x].len() == num_actions
                    && (0..num_actions).all(|a| {
                        embedding_probs[x][a].len() == num_embeddings
                            && rewards[x][a].len() == num_embeddings
                    })
            });
        if !shape_ok {
            return Err(Error::invalid("instance tables have inconsistent shapes"));
        }
        for x in 0..nx {
            check_pmf(behavior[x].iter().copied(), "behavior policy")?;
            check_pmf(target[x].iter().copied(), "target policy")?;
            for a in 0..num_actions {
                check_pmf(embedding_probs[x][a].iter().copied(), "embedding pmf")?;
            }
        }
        Ok(DiscreteInstance {
            context_probs,
            num_actions,
            num_embeddings,
            embedding_probs,
            rewards,
            behavior,
            target,
        })
    }

    /// A random instance with full-support behavior policy.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, spec: &RandomInstanceSpec) -> Self {
        let nx = rng.random_range(1..=spec.max_contexts);
        let k = rng.random_range(2..=spec.max_actions.max(2));
        let ne = rng.random_range(1..=spec.max_embeddings);
        let context_probs = random_pmf(rng, nx, 0.1);
        let behavior = (0..nx).map(|_| random_pmf(rng, k, 0.05)).collect();
        let target = (0..nx).map(|_| random_pmf(rng, k, 0.0)).collect();
        let embedding_probs = (0..nx)
            .map(|_| (0..k).map(|_| random_pmf(rng, ne, 0.0)).collect())
            .collect();
        let rewards = (0..nx)
            .map(|_| {
                if spec.no_direct_effect {
                    let per_e: Vec<RewardDist> =
                        (0..ne).map(|_| random_reward(rng, spec.max_reward_atoms)).collect();
                    (0..k).map(|_| per_e.clone()).collect()
                } else {
                    (0..k)
                        .map(|_| (0..ne).map(|_| random_reward(rng, spec.max_reward_atoms)).collect())
                        .collect()
                }
            })
            .collect();
        DiscreteInstance::new(context_probs, embedding_probs, rewards, behavior, target)
            .expect("generator produces valid instances")
    }

    pub fn num_contexts(&self) -> usize {
        self.context_probs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_embeddings(&self) -> usize {
        self.num_embeddings
    }

    pub fn behavior(&self) -> &[Vec<f64>] {
        &self.behavior
    }

    pub fn target(&self) -> &[Vec<f64>] {
        &self.target
    }

    pub fn behavior_policy(&self) -> IndexedPolicy {
        IndexedPolicy { table: self.behavior.clone() }
    }

    pub fn target_policy(&self) -> IndexedPolicy {
        IndexedPolicy { table: self.target.clone() }
    }

    /// Context `x` as the one-dimensional vector `[x]`.
    pub fn sample_context(&self, x: usize) -> ContextVector {
        ContextVector::new(vec![x as f64]).expect("finite")
    }

    pub fn sample_embedding(&self, e: usize) -> Vec<f64> {
        vec![e as f64]
    }

    /// Same instance with a different target policy.
    pub fn with_target(&self, target: Vec<Vec<f64>>) -> Result<Self> {
        DiscreteInstance::new(
            self.context_probs.clone(),
            self.embedding_probs.clone(),
            self.rewards.clone(),
            self.behavior.clone(),
            target,
        )
    }

    pub fn context_prob(&self, x: usize) -> f64 {
        self.context_probs[x]
    }

    pub fn embedding_prob(&self, x: usize, a: usize, e: usize) -> f64 {
        self.embedding_probs[x][a][e]
    }

    pub fn reward(&self, x: usize, a: usize, e: usize) -> &RewardDist {
        &self.rewards[x][a][e]
    }

    /// `q(x, a) = Σ_e p_E(e|x,a) q(x,a,e)`.
    pub fn mean_reward(&self, x: usize, a: usize) -> f64 {
        (0..self.num_embeddings)
            .map(|e| self.embedding_probs[x][a][e] * self.rewards[x][a][e].mean())
            .sum()
    }

    /// `E[R² | x, a]`.
    pub fn reward_second_moment(&self, x: usize, a: usize) -> f64 {
        (0..self.num_embeddings)
            .map(|e| self.embedding_probs[x][a][e] * self.rewards[x][a][e].second_moment())
            .sum()
    }

    /// `w(x, a) = π(a|x) / μ(a|x)`; `None` where `μ(a|x) = 0`.
    pub fn ips_weight(&self, x: usize, a: usize) -> Option<f64> {
        let m = self.behavior[x][a];
        (m > 0.0).then(|| self.target[x][a] / m)
    }

    pub fn has_overlap(&self) -> bool {
        (0..self.num_contexts()).all(|x| {
            (0..self.num_actions).all(|a| self.target[x][a] == 0.0 || self.behavior[x][a] > 0.0)
        })
    }

    fn require_overlap(&self) -> Result<()> {
        if self.has_overlap() {
            Ok(())
        } else {
            Err(Error::Precondition(String::from(
                "target policy puts mass on actions the behavior policy never takes",
            )))
        }
    }

    /// Weights with unsupported actions set to zero (they have zero
    /// posterior mass, so the value never matters once overlap holds).
    fn weight_row(&self, x: usize) -> Vec<f64> {
        (0..self.num_actions).map(|a| self.ips_weight(x, a).unwrap_or(0.0)).collect()
    }

    /// `p_E(e | x, policy) = Σ_a p_E(e|x,a) policy(a|x)`.
    pub fn marginal_embedding_prob(&self, x: usize, e: usize, policy: &[Vec<f64>]) -> f64 {
        (0..self.num_actions).map(|a| self.embedding_probs[x][a][e] * policy[x][a]).sum()
    }

    pub fn exact_posterior(&self) -> ExactPosterior {
        let table = (0..self.num_contexts())
            .map(|x| {
                (0..self.num_embeddings)
                    .map(|e| {
                        let marginal = self.marginal_embedding_prob(x, e, &self.behavior);
                        (marginal > 0.0).then(|| {
                            (0..self.num_actions)
                                .map(|a| self.behavior[x][a] * self.embedding_probs[x][a][e] / marginal)
                                .collect()
                        })
                    })
                    .collect()
            })
            .collect();
        ExactPosterior { table }
    }

    /// Satisfies `A ⟂ R | X, E` up to the first two reward moments, over
    /// the actions that can produce each embedding.
    pub fn satisfies_no_direct_effect(&self) -> bool {
        for x in 0..self.num_contexts() {
            for e in 0..self.num_embeddings {
                let mut reference: Option<(f64, f64)> = None;
                for a in 0..self.num_actions {
                    if self.embedding_probs[x][a][e] == 0.0 {
                        continue;
                    }
                    let r = &self.rewards[x][a][e];
                    let moments = (r.mean(), r.second_moment());
                    match reference {
                        None => reference = Some(moments),
                        Some((m1, m2)) => {
                            if (m1 - moments.0).abs() > PMF_TOL * 10.0 || (m2 - moments.1).abs() > 1e-9 {
                                return false;
                            }
                        }
                    }
                }
            }
        }
        true
    }

    /// Calls `f(x, a, e, p)` for every logged `(x, a, e)` cell with positive
    /// probability `p = p_X(x) μ(a|x) p_E(e|x,a)`.
    fn for_each_logged_cell(&self, mut f: impl FnMut(usize, usize, usize, f64)) {
        for x in 0..self.num_contexts() {
            for a in 0..self.num_actions {
                for e in 0..self.num_embeddings {
                    let p = self.context_probs[x] * self.behavior[x][a] * self.embedding_probs[x][a][e];
                    if p > 0.0 {
                        f(x, a, e, p);
                    }
                }
            }
        }
    }

    /// Mean and variance of the single-sample IPS term `w(X,A) R`.
    pub fn ips_term_moments(&self) -> (f64, f64) {
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        self.for_each_logged_cell(|x, a, e, p| {
            let w = self.target[x][a] / self.behavior[x][a];
            let r = &self.rewards[x][a][e];
            m1 += p * w * r.mean();
            m2 += p * w * w * r.second_moment();
        });
        (m1, m2 - m1 * m1)
    }

    /// Marginal weight `w(x, e) = Σ_a μ(a|x,e) w(x,a)` under the exact posterior.
    pub fn marginal_weight(&self, posterior: &ExactPosterior, x: usize, e: usize) -> Option<f64> {
        let w = self.weight_row(x);
        posterior.get(x, e).map(|p| p.iter().zip(&w).map(|(p, w)| p * w).sum())
    }

    /// Mean and variance of the single-sample MIPS term `w(X,E) R` under the
    /// exact posterior.
    pub fn mips_term_moments(&self) -> Result<(f64, f64)> {
        self.require_overlap()?;
        let posterior = self.exact_posterior();
        let mut m1 = 0.0;
        let mut m2 = 0.0;
        self.for_each_logged_cell(|x, a, e, p| {
            let w = self.marginal_weight(&posterior, x, e).expect("logged cell has positive marginal");
            let r = &self.rewards[x][a][e];
            m1 += p * w * r.mean();
            m2 += p * w * w * r.second_moment();
        });
        Ok((m1, m2 - m1 * m1))
    }

    /// `E[v̂_IPS]`, identical for every dataset size.
    pub fn exact_ips_expectation(&self) -> f64 {
        self.ips_term_moments().0
    }

    /// `E[v̂_MIPS]` with the exact posterior.
    pub fn exact_mips_expectation(&self) -> Result<f64> {
        Ok(self.mips_term_moments()?.0)
    }

    /// Expectation over `(x, e) ~ p_X p_E(·|x,μ)` of `g(x, e, posterior row, weight row)`.
    fn expect_over_logged_embeddings(&self, mut g: impl FnMut(usize, usize, &[f64], &[f64]) -> f64) -> f64 {
        let posterior = self.exact_posterior();
        let mut total = 0.0;
        for x in 0..self.num_contexts() {
            let w = self.weight_row(x);
            for e in 0..self.num_embeddings {
                let marginal = self.marginal_embedding_prob(x, e, &self.behavior);
                if let Some(post) = posterior.get(x, e) {
                    total += self.context_probs[x] * marginal * g(x, e, post, &w);
                }
            }
        }
        total
    }
}

/// `v(policy) = Σ_x Σ_a Σ_e p_X π p_E q`.
pub fn exact_value(inst: &DiscreteInstance, policy: &[Vec<f64>]) -> f64 {
    let mut v = 0.0;
    for x in 0..inst.num_contexts() {
        for a in 0..inst.num_actions {
            for e in 0..inst.num_embeddings {
                v += inst.context_probs[x] * policy[x][a] * inst.embedding_probs[x][a][e] * inst.rewards[x][a][e].mean();
            }
        }
    }
    v
}

/// Bias of MIPS with the exact posterior, by the pairwise decomposition and
/// by direct enumeration. Fails if the two disagree beyond [`EXACT_TOL`].
pub fn exact_mips_bias(inst: &DiscreteInstance) -> Result<MipsBias> {
    inst.require_overlap()?;
    let k = inst.num_actions;
    let decomposition = inst.expect_over_logged_embeddings(|x, e, post, w| {
        let mut s = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                let dq = inst.rewards[x][i][e].mean() - inst.rewards[x][j][e].mean();
                s += post[i] * post[j] * dq * (w[j] - w[i]);
            }
        }
        s
    });
    let direct = inst.exact_mips_expectation()? - exact_value(inst, &inst.target);
    if (decomposition - direct).abs() > EXACT_TOL {
        return Err(Error::Precondition(format!(
            "bias routes disagree: decomposition {decomposition}, enumeration {direct}"
        )));
    }
    Ok(MipsBias { decomposition, direct })
}

/// `(b - a) E[Σ_{i<j} μ(i|X,E) μ(j|X,E) |w(X,j) - w(X,i)|]`, an upper bound
/// on the absolute MIPS bias when rewards lie in `[a, b]`.
pub fn bias_upper_bound(inst: &DiscreteInstance, reward_range: (f64, f64)) -> Result<f64> {
    inst.require_overlap()?;
    let (lo, hi) = reward_range;
    if !(lo <= hi) {
        return Err(Error::invalid("reward range must satisfy a <= b"));
    }
    for x in 0..inst.num_contexts() {
        for a in 0..inst.num_actions {
            for e in 0..inst.num_embeddings {
                let (rlo, rhi) = inst.rewards[x][a][e].range();
                if rlo < lo || rhi > hi {
                    return Err(Error::Precondition(format!(
                        "reward atoms in [{rlo}, {rhi}] fall outside [{lo}, {hi}]"
                    )));
                }
            }
        }
    }
    let k = inst.num_actions;
    let pairwise = inst.expect_over_logged_embeddings(|_, _, post, w| {
        let mut s = 0.0;
        for i in 0..k {
            for j in (i + 1)..k {
                s += post[i] * post[j] * (w[j] - w[i]).abs();
            }
        }
        s
    });
    Ok((hi - lo) * pairwise)
}

fn require_no_direct_effect(inst: &DiscreteInstance) -> Result<()> {
    if inst.satisfies_no_direct_effect() {
        Ok(())
    } else {
        Err(Error::Precondition(String::from(
            "rewards depend on the action beyond the embedding (no-direct-effect violated)",
        )))
    }
}

/// `E[R² Σ_a μ(a|X,E)² Σ_a w(X,a)²]` over the logging distribution.
fn collision_weighted_second_moment(inst: &DiscreteInstance) -> f64 {
    let posterior = inst.exact_posterior();
    let mut total = 0.0;
    inst.for_each_logged_cell(|x, a, e, p| {
        let post = posterior.get(x, e).expect("logged cell has positive marginal");
        let collision: f64 = post.iter().map(|v| v * v).sum();
        let w2: f64 = inst.weight_row(x).iter().map(|w| w * w).sum();
        total += p * inst.rewards[x][a][e].second_moment() * collision * w2;
    });
    total
}

/// `V[v̂_IPS] - V[v̂_MIPS]` for datasets of size `n`, by the closed form
/// `(1/n) E[E[R²|X,E] V_{μ(·|X,E)}[w(X,A)]]`, checked against the
/// difference of enumerated variances.
pub fn exact_variance_reduction(inst: &DiscreteInstance, n: usize) -> Result<f64> {
    require_no_direct_effect(inst)?;
    inst.require_overlap()?;
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let posterior = inst.exact_posterior();
    let mut closed = 0.0;
    inst.for_each_logged_cell(|x, a, e, p| {
        let post = posterior.get(x, e).expect("logged cell has positive marginal");
        let w = inst.weight_row(x);
        let mean: f64 = post.iter().zip(&w).map(|(p, w)| p * w).sum();
        let var: f64 = post.iter().zip(&w).map(|(p, w)| p * (w - mean) * (w - mean)).sum();
        closed += p * inst.rewards[x][a][e].second_moment() * var;
    });
    let closed = closed / n as f64;
    let (_, ips_var) = inst.ips_term_moments();
    let (_, mips_var) = inst.mips_term_moments()?;
    let enumerated = (ips_var - mips_var) / n as f64;
    if (closed - enumerated).abs() > EXACT_TOL {
        return Err(Error::Precondition(format!(
            "variance-reduction routes disagree: closed form {closed}, enumeration {enumerated}"
        )));
    }
    Ok(closed)
}

/// Exact `V[v̂_MIPS]` and its Cauchy-Schwarz upper bound
/// `V[v̂_IPS] + (1/n) E[R² Σ_a μ(a|X,E)² Σ_a w(X,a)²]`.
pub fn variance_upper_bound_gap(inst: &DiscreteInstance, n: usize) -> Result<(f64, f64)> {
    require_no_direct_effect(inst)?;
    inst.require_overlap()?;
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let nf = n as f64;
    let (_, ips_var) = inst.ips_term_moments();
    let (_, mips_var) = inst.mips_term_moments()?;
    let lhs = mips_var / nf;
    let rhs = ips_var / nf + collision_weighted_second_moment(inst) / nf;
    if lhs > rhs + EXACT_TOL {
        return Err(Error::Precondition(format!("variance bound violated: {lhs} > {rhs}")));
    }
    Ok((lhs, rhs))
}

/// Central differences `(f(θ + h e_i) - f(θ - h e_i)) / 2h` per coordinate.
pub fn finite_difference_gradient<F>(mut loss: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid("step size must be positive"));
    }
    let mut theta = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = theta[i];
        theta[i] = orig + h;
        let up = loss(&theta);
        theta[i] = orig - h;
        let down = loss(&theta);
        theta[i] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::NonFinite(format!("loss at coordinate {i}")));
        }
        grad.push((up - down) / (2.0 * h));
    }
    Ok(grad)
}

/// Outcome of one pass of the identity suite.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IdentityReport {
    pub instances: usize,
    pub max_bias_gap: f64,
    pub max_variance_gap: f64,
    pub bias_bound_violations: usize,
    pub variance_bound_violations: usize,
    pub failures: Vec<String>,
}

impl IdentityReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
            && self.bias_bound_violations == 0
            && self.variance_bound_violations == 0
            && self.max_bias_gap <= EXACT_TOL
            && self.max_variance_gap <= EXACT_TOL
    }
}

/// Runs the bias decomposition, variance-reduction identity and both upper
/// bounds on `instances` random instances of each kind.
pub fn identity_suite<R: Rng + ?Sized>(rng: &mut R, instances: usize, n: usize) -> IdentityReport {
    let mut report = IdentityReport::default();
    for i in 0..instances {
        report.instances += 1;

        let general = DiscreteInstance::random(rng, &RandomInstanceSpec::default());
        match exact_mips_bias(&general) {
            Ok(b) => {
                report.max_bias_gap = report.max_bias_gap.max((b.decomposition - b.direct).abs());
                match bias_upper_bound(&general, (0.0, 10.0)) {
                    Ok(bound) if bound + EXACT_TOL >= b.direct.abs() => {}
                    Ok(_) => report.bias_bound_violations += 1,
                    Err(e) => report.failures.push(format!("instance {i}: bias bound: {e}")),
                }
            }
            Err(e) => report.failures.push(format!("instance {i}: bias: {e}")),
        }

        let nde = DiscreteInstance::random(rng, &RandomInstanceSpec { no_direct_effect: true, ..Default::default() });
        match exact_variance_reduction(&nde, n) {
            Ok(closed) => {
                let (_, ips_var) = nde.ips_term_moments();
                let mips_var = nde.mips_term_moments().map(|m| m.1).unwrap_or(f64::NAN);
                let gap = (closed - (ips_var - mips_var) / n as f64).abs();
                report.max_variance_gap = report.max_variance_gap.max(gap);
            }
            Err(e) => report.failures.push(format!("instance {i}: variance reduction: {e}")),
        }
        match variance_upper_bound_gap(&nde, n) {
            Ok((lhs, rhs)) if lhs <= rhs + EXACT_TOL => {}
            Ok(_) => report.variance_bound_violations += 1,
            Err(Error::Precondition(_)) => report.variance_bound_violations += 1,
            Err(e) => report.failures.push(format!("instance {i}: variance bound: {e}")),
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;

    /// One context, `k` actions, uniform behavior.
    fn single_context(
        k: usize,
        embedding_probs: Vec<Vec<f64>>,
        rewards: Vec<Vec<RewardDist>>,
        target: Vec<f64>,
    ) -> DiscreteInstance {
        DiscreteInstance::new(
            vec![1.0],
            vec![embedding_probs],
            vec![rewards],
            vec![vec![1.0 / k as f64; k]],
            vec![target],
        )
        .unwrap()
    }

    fn identity_embedding(k: usize) -> Vec<Vec<f64>> {
        (0..k).map(|a| (0..k).map(|e| if e == a { 1.0 } else { 0.0 }).collect()).collect()
    }

    #[test]
    fn value_of_single_atom() {
        let inst = single_context(1, vec![vec![1.0]], vec![vec![RewardDist::constant(3.5)]], vec![1.0]);
        assert_eq!(exact_value(&inst, inst.target()), 3.5);
    }

    #[test]
    fn constant_reward_value() {
        let mut rng = RngSeed(1).rng();
        let mut inst = DiscreteInstance::random(&mut rng, &RandomInstanceSpec::default());
        for row in inst.rewards.iter_mut() {
            for cell in row.iter_mut() {
                for r in cell.iter_mut() {
                    *r = RewardDist::constant(4.0);
                }
            }
        }
        assert!((exact_value(&inst, inst.target()) - 4.0).abs() < 1e-12);
        assert!((exact_value(&inst, inst.behavior()) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn value_matches_rollouts() {
        // 2 contexts x 3 actions x 2 embeddings, two-atom rewards.
        let mut rng = RngSeed(2024).rng();
        let spec = RandomInstanceSpec { max_contexts: 2, max_actions: 3, max_embeddings: 2, ..Default::default() };
        let inst = loop {
            let i = DiscreteInstance::random(&mut rng, &spec);
            if i.num_contexts() == 2 && i.num_actions() == 3 && i.num_embeddings() == 2 {
                break i;
            }
        };
        let exact = exact_value(&inst, inst.target());
        let draws = 1_000_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let pick = |rng: &mut crate::rng::TrialRng, p: &[f64]| {
            let u: f64 = rng.random();
            let mut acc = 0.0;
            for (i, v) in p.iter().enumerate() {
                acc += v;
                if u < acc {
                    return i;
                }
            }
            p.len() - 1
        };
        for _ in 0..draws {
            let x = pick(&mut rng, &inst.context_probs);
            let a = pick(&mut rng, &inst.target[x]);
            let e = pick(&mut rng, &inst.embedding_probs[x][a]);
            let atoms = inst.rewards[x][a][e].atoms();
            let probs: Vec<f64> = atoms.iter().map(|(_, p)| *p).collect();
            let r = atoms[pick(&mut rng, &probs)].0;
            sum += r;
            sumsq += r * r;
        }
        let mean = sum / draws as f64;
        let se = libm::sqrt((sumsq / draws as f64 - mean * mean) / draws as f64);
        assert!((mean - exact).abs() <= 3.0 * se, "{mean} vs {exact} (se {se})");
    }

    #[test]
    fn no_direct_effect_gives_zero_bias() {
        let mut rng = RngSeed(5).rng();
        for _ in 0..20 {
            let inst = DiscreteInstance::random(&mut rng, &RandomInstanceSpec { no_direct_effect: true, ..Default::default() });
            let b = exact_mips_bias(&inst).unwrap();
            assert!(b.decomposition.abs() < 1e-10);
            assert!(b.direct.abs() < 1e-10);
        }
    }

    #[test]
    fn equal_policies_give_zero_bias_and_bound() {
        let mut rng = RngSeed(6).rng();
        let inst = DiscreteInstance::random(&mut rng, &RandomInstanceSpec::default());
        let same = inst.with_target(inst.behavior().to_vec()).unwrap();
        let b = exact_mips_bias(&same).unwrap();
        assert!(b.decomposition.abs() < 1e-12);
        assert!(bias_upper_bound(&same, (0.0, 10.0)).unwrap().abs() < 1e-12);
    }

    #[test]
    fn fixed_instance_bias_routes_agree_and_bound_dominates() {
        // 2 contexts, 3 actions, 2 embeddings; reward depends on the action
        // given the embedding.
        let inst = DiscreteInstance::new(
            vec![0.4, 0.6],
            vec![
                vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.5, 0.5]],
                vec![vec![0.9, 0.1], vec![0.4, 0.6], vec![0.1, 0.9]],
            ],
            vec![
                vec![
                    vec![RewardDist::constant(1.0), RewardDist::constant(4.0)],
                    vec![RewardDist::constant(6.0), RewardDist::constant(2.0)],
                    vec![RewardDist::new(vec![(0.0, 0.5), (10.0, 0.5)]).unwrap(), RewardDist::constant(3.0)],
                ],
                vec![
                    vec![RewardDist::constant(8.0), RewardDist::constant(1.0)],
                    vec![RewardDist::constant(2.0), RewardDist::constant(9.0)],
                    vec![RewardDist::constant(5.0), RewardDist::new(vec![(1.0, 0.25), (7.0, 0.75)]).unwrap()],
                ],
            ],
            vec![vec![0.5, 0.3, 0.2], vec![0.2, 0.2, 0.6]],
            vec![vec![0.1, 0.1, 0.8], vec![0.7, 0.2, 0.1]],
        )
        .unwrap();
        let b = exact_mips_bias(&inst).unwrap();
        assert!((b.direct - FIXED_INSTANCE_BIAS).abs() < 1e-12, "{}", b.direct);
        assert!((b.decomposition - b.direct).abs() < 1e-10);
        let bound = bias_upper_bound(&inst, (0.0, 10.0)).unwrap();
        assert!(bound >= b.direct.abs());
        // Frozen from the enumeration above.
        assert!((bound - FIXED_INSTANCE_BIAS_BOUND).abs() < 1e-12, "{bound}");
    }

    // Independent NumPy enumeration of the same instance.
    const FIXED_INSTANCE_BIAS_BOUND: f64 = 4.732563025210084;
    const FIXED_INSTANCE_BIAS: f64 = -0.9949203681472587;

    #[test]
    fn identity_embedding_reduces_to_ips() {
        let k = 3;
        let rewards: Vec<Vec<RewardDist>> = (0..k)
            .map(|a| (0..k).map(|_| RewardDist::new(vec![(a as f64, 0.5), (a as f64 + 2.0, 0.5)]).unwrap()).collect())
            .collect();
        let inst = single_context(k, identity_embedding(k), rewards, vec![0.6, 0.3, 0.1]);
        assert!(inst.satisfies_no_direct_effect());
        assert!(exact_mips_bias(&inst).unwrap().direct.abs() < 1e-12);
        assert!(exact_variance_reduction(&inst, 5).unwrap().abs() < 1e-12);
        let (ips_m, ips_v) = inst.ips_term_moments();
        let (mips_m, mips_v) = inst.mips_term_moments().unwrap();
        assert!((ips_m - mips_m).abs() < 1e-12 && (ips_v - mips_v).abs() < 1e-12);
    }

    #[test]
    fn constant_embedding_hand_example() {
        // K = 2, uniform behavior, weights (2, 0), E[R^2] = 1, n = 1.
        let rewards = vec![vec![RewardDist::new(vec![(-1.0, 0.5), (1.0, 0.5)]).unwrap()]; 2];
        let inst = single_context(2, vec![vec![1.0], vec![1.0]], rewards, vec![1.0, 0.0]);
        let reduction = exact_variance_reduction(&inst, 1).unwrap();
        assert!((reduction - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_embedding_bias_is_behavior_gap() {
        let mut rng = RngSeed(8).rng();
        let spec = RandomInstanceSpec { max_embeddings: 1, ..Default::default() };
        for _ in 0..10 {
            let inst = DiscreteInstance::random(&mut rng, &spec);
            let post = inst.exact_posterior();
            for x in 0..inst.num_contexts() {
                assert!((inst.marginal_weight(&post, x, 0).unwrap() - 1.0).abs() < 1e-12);
            }
            let b = exact_mips_bias(&inst).unwrap();
            let gap = exact_value(&inst, inst.behavior()) - exact_value(&inst, inst.target());
            assert!((b.direct - gap).abs() < 1e-10);
        }
    }

    #[test]
    fn variance_bound_with_point_mass_posterior() {
        let k = 2;
        let rewards = vec![vec![RewardDist::constant(1.0), RewardDist::constant(1.0)]; k];
        let inst = single_context(k, identity_embedding(k), rewards, vec![0.9, 0.1]);
        let (lhs, rhs) = variance_upper_bound_gap(&inst, 3).unwrap();
        assert!(rhs - lhs >= 0.0);
    }

    #[test]
    fn variance_bound_single_action() {
        let inst = single_context(
            1,
            vec![vec![1.0]],
            vec![vec![RewardDist::new(vec![(0.0, 0.5), (2.0, 0.5)]).unwrap()]],
            vec![1.0],
        );
        let (lhs, rhs) = variance_upper_bound_gap(&inst, 4).unwrap();
        let (_, ips_var) = inst.ips_term_moments();
        assert!((lhs - ips_var / 4.0).abs() < 1e-12);
        // rhs adds E[R²] Σμ² Σw² / n = 2 / 4.
        assert!((rhs - lhs - 0.5).abs() < 1e-12);
    }

    #[test]
    fn variance_identity_needs_no_direct_effect() {
        let mut rng = RngSeed(3).rng();
        let inst = loop {
            let i = DiscreteInstance::random(&mut rng, &RandomInstanceSpec { max_embeddings: 1, ..Default::default() });
            if !i.satisfies_no_direct_effect() {
                break i;
            }
        };
        assert!(matches!(exact_variance_reduction(&inst, 1), Err(Error::Precondition(_))));
    }

    #[test]
    fn exact_posterior_columns_sum_to_one() {
        let mut rng = RngSeed(9).rng();
        let inst = DiscreteInstance::random(&mut rng, &RandomInstanceSpec::default());
        let post = inst.exact_posterior();
        for x in 0..inst.num_contexts() {
            for e in 0..inst.num_embeddings() {
                if let Some(p) = post.get(x, e) {
                    assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn marginal_weights_have_mean_one() {
        let mut rng = RngSeed(10).rng();
        for _ in 0..50 {
            let inst = DiscreteInstance::random(&mut rng, &RandomInstanceSpec::default());
            let post = inst.exact_posterior();
            let mean = inst.expect_over_logged_embeddings(|x, e, _, _| inst.marginal_weight(&post, x, e).unwrap());
            assert!((mean - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn finite_differences_on_simple_losses() {
        let g = finite_difference_gradient(|t| t[0] * t[0] + t[1] * t[1], &[1.0, 2.0], 1e-5).unwrap();
        assert!((g[0] - 2.0).abs() < 1e-8 && (g[1] - 4.0).abs() < 1e-8);
        let c = [3.0, -1.5, 0.25];
        let g = finite_difference_gradient(|t| t.iter().zip(&c).map(|(a, b)| a * b).sum(), &[0.3, 0.1, -2.0], 1e-5)
            .unwrap();
        for (a, b) in g.iter().zip(&c) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!(finite_difference_gradient(|t| libm::sqrt(t[0]), &[0.0], 1e-5).is_err());
    }

    #[test]
    fn identity_suite_passes() {
        let mut rng = RngSeed(77).rng();
        let report = identity_suite(&mut rng, 120, 10);
        assert!(report.passed(), "{report:?}");
        assert!(report.max_bias_gap < 1e-10 && report.max_variance_gap < 1e-10);
    }
}
