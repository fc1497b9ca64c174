//! Finite discounted MDPs with dense tables.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::linalg::{column, solve_resolvent, sup_norm};

pub(crate) const STOCHASTIC_TOL: f64 = 1e-12;
const MAX_ITERATIONS: usize = 10_000_000;

/// A finite discounted MDP.
///
/// `transition` is stored flat as `[s][a][s']`, `reward` as `[s][a]`. The
/// successor lists are derived from the kernel and only used to skip zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpDocument", into = "MdpDocument")]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<f64>,
    reward: Vec<f64>,
    initial_dist: Vec<f64>,
    successors: Vec<Vec<(usize, f64)>>,
}

/// JSON layout of an MDP: nested arrays `transition[s][a][s']`, `reward[s][a]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MdpDocument {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    pub transition: Vec<Vec<Vec<f64>>>,
    pub reward: Vec<Vec<f64>>,
    pub initial_dist: Vec<f64>,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        transition: Vec<f64>,
        reward: Vec<f64>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidMdp("state and action counts must be positive".into()));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidMdp(format!("discount {gamma} outside [0, 1)")));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(Error::InvalidMdp(format!(
                "transition table has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(Error::InvalidMdp(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        if initial_dist.len() != n_states {
            return Err(Error::InvalidMdp("initial distribution has wrong length".into()));
        }
        if reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::InvalidMdp("non-finite reward".into()));
        }
        for (row_index, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row).map_err(|msg| {
                Error::InvalidMdp(format!(
                    "P(.|s={}, a={}) {msg}",
                    row_index / n_actions,
                    row_index % n_actions
                ))
            })?;
        }
        check_distribution(&initial_dist)
            .map_err(|msg| Error::InvalidMdp(format!("initial distribution {msg}")))?;

        let successors = transition
            .chunks(n_states)
            .map(|row| {
                row.iter()
                    .enumerate()
                    .filter(|(_, &p)| p > 0.0)
                    .map(|(s, &p)| (s, p))
                    .collect()
            })
            .collect();
        Ok(Self {
            n_states,
            n_actions,
            gamma,
            transition,
            reward,
            initial_dist,
            successors,
        })
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn prob(&self, s: usize, a: usize, s_next: usize) -> f64 {
        self.transition[(s * self.n_actions + a) * self.n_states + s_next]
    }

    /// The row `P(.|s,a)`.
    pub fn transition_row(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    /// Non-zero entries of `P(.|s,a)` as `(s', p)` pairs.
    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.successors[s * self.n_actions + a]
    }

    /// Copy of this MDP with a different discount.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            gamma,
            self.transition.clone(),
            self.reward.clone(),
            self.initial_dist.clone(),
        )
    }

    /// Copy of this MDP with a different start distribution.
    pub fn with_initial_dist(&self, initial_dist: Vec<f64>) -> Result<Self> {
        Self::new(
            self.n_states,
            self.n_actions,
            self.gamma,
            self.transition.clone(),
            self.reward.clone(),
            initial_dist,
        )
    }

    /// Relabels states so that old state `s` becomes `perm[s]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.n_states;
        let na = self.n_actions;
        if perm.len() != n {
            return Err(Error::ShapeMismatch("permutation length".into()));
        }
        let mut transition = vec![0.0; self.transition.len()];
        let mut reward = vec![0.0; self.reward.len()];
        let mut initial = vec![0.0; n];
        for s in 0..n {
            initial[perm[s]] = self.initial_dist[s];
            for a in 0..na {
                reward[perm[s] * na + a] = self.reward(s, a);
                for s2 in 0..n {
                    transition[(perm[s] * na + a) * n + perm[s2]] = self.prob(s, a, s2);
                }
            }
        }
        Self::new(n, na, self.gamma, transition, reward, initial)
    }

    /// Expected value of `values` at the successor of `(s, a)`.
    pub fn expected_next(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.successors(s, a)
            .iter()
            .map(|&(s2, p)| p * values[s2])
            .sum()
    }

    fn q_backup(&self, s: usize, a: usize, values: &[f64]) -> f64 {
        self.reward(s, a) + self.gamma * self.expected_next(s, a, values)
    }
}

impl TryFrom<MdpDocument> for Mdp {
    type Error = Error;

    fn try_from(doc: MdpDocument) -> Result<Self> {
        let ns = doc.n_states;
        let na = doc.n_actions;
        if doc.transition.len() != ns
            || doc.transition.iter().any(|rows| {
                rows.len() != na || rows.iter().any(|row| row.len() != ns)
            })
        {
            return Err(Error::InvalidMdp("transition array has wrong shape".into()));
        }
        if doc.reward.len() != ns || doc.reward.iter().any(|row| row.len() != na) {
            return Err(Error::InvalidMdp("reward array has wrong shape".into()));
        }
        let transition = doc.transition.into_iter().flatten().flatten().collect();
        let reward = doc.reward.into_iter().flatten().collect();
        Mdp::new(ns, na, doc.gamma, transition, reward, doc.initial_dist)
    }
}

impl From<Mdp> for MdpDocument {
    fn from(mdp: Mdp) -> Self {
        let ns = mdp.n_states;
        let na = mdp.n_actions;
        Self {
            n_states: ns,
            n_actions: na,
            gamma: mdp.gamma,
            transition: mdp
                .transition
                .chunks(na * ns)
                .map(|block| block.chunks(ns).map(<[f64]>::to_vec).collect())
                .collect(),
            reward: mdp.reward.chunks(na).map(<[f64]>::to_vec).collect(),
            initial_dist: mdp.initial_dist,
        }
    }
}

fn check_distribution(row: &[f64]) -> std::result::Result<(), String> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err("has a negative or non-finite entry".into());
    }
    let total: f64 = row.iter().sum();
    if (total - 1.0).abs() > STOCHASTIC_TOL {
        return Err(format!("sums to {total}, not 1"));
    }
    Ok(())
}

/// A randomized stationary policy `pi(a|s)`, stored `[s][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationaryPolicy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl StationaryPolicy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != n_states * n_actions {
            return Err(Error::InvalidPolicy(format!(
                "expected {} probabilities, got {}",
                n_states * n_actions,
                probs.len()
            )));
        }
        for (s, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row)
                .map_err(|msg| Error::InvalidPolicy(format!("row {s} {msg}")))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            n_states,
            n_actions,
            probs: vec![1.0 / n_actions as f64; n_states * n_actions],
        }
    }

    pub fn deterministic(n_actions: usize, choices: &[usize]) -> Result<Self> {
        let mut probs = vec![0.0; choices.len() * n_actions];
        for (s, &a) in choices.iter().enumerate() {
            check_index("action", a, n_actions)?;
            probs[s * n_actions + a] = 1.0;
        }
        Self::new(choices.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    fn check_against(&self, mdp: &Mdp) -> Result<()> {
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::ShapeMismatch(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")))
    }
}

/// Sup-norm residual `|T_pi V - V|` of the policy Bellman operator.
pub fn policy_bellman_residual(mdp: &Mdp, policy: &StationaryPolicy, values: &[f64]) -> f64 {
    sup_norm((0..mdp.n_states()).map(|s| {
        let backup: f64 = (0..mdp.n_actions())
            .map(|a| policy.prob(s, a) * mdp.q_backup(s, a, values))
            .sum();
        backup - values[s]
    }))
}

/// Exact policy evaluation through a direct linear solve of the Bellman
/// equations, followed by a residual check.
pub fn policy_evaluation(mdp: &Mdp, policy: &StationaryPolicy, tol: f64) -> Result<Vec<f64>> {
    check_tol(tol)?;
    policy.check_against(mdp)?;
    let n = mdp.n_states();
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut r = vec![0.0; n];
    for s in 0..n {
        for a in 0..mdp.n_actions() {
            let p_a = policy.prob(s, a);
            if p_a == 0.0 {
                continue;
            }
            r[s] += p_a * mdp.reward(s, a);
            for &(s2, p) in mdp.successors(s, a) {
                m[(s, s2)] += mdp.gamma() * p_a * p;
            }
        }
    }
    let values = solve_resolvent(&m, column(&r))?.as_slice().to_vec();
    let residual = policy_bellman_residual(mdp, policy, &values);
    if residual > tol {
        return Err(Error::NotConverged {
            iterations: 0,
            residual,
        });
    }
    Ok(values)
}

/// Policy evaluation by successive approximation (Jacobi sweeps).
pub fn policy_evaluation_iterative(
    mdp: &Mdp,
    policy: &StationaryPolicy,
    tol: f64,
) -> Result<Vec<f64>> {
    check_tol(tol)?;
    policy.check_against(mdp)?;
    let n = mdp.n_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    for iteration in 0..MAX_ITERATIONS {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            next[s] = (0..mdp.n_actions())
                .map(|a| policy.prob(s, a) * mdp.q_backup(s, a, &values))
                .sum();
            residual = residual.max((next[s] - values[s]).abs());
        }
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            return Ok(values);
        }
        if iteration + 1 == MAX_ITERATIONS {
            return Err(Error::NotConverged {
                iterations: MAX_ITERATIONS,
                residual,
            });
        }
    }
    unreachable!()
}

/// Optimal values and a greedy deterministic policy.
#[derive(Debug, Clone)]
pub struct ValueIterationResult {
    pub values: Vec<f64>,
    pub greedy: Vec<usize>,
    pub iterations: usize,
}

impl ValueIterationResult {
    pub fn policy(&self, n_actions: usize) -> StationaryPolicy {
        StationaryPolicy::deterministic(n_actions, &self.greedy)
            .expect("greedy actions are in range")
    }
}

/// Value iteration until the Bellman optimality residual is at most `tol`.
/// Greedy ties go to the lowest action index.
pub fn value_iteration(mdp: &Mdp, tol: f64) -> Result<ValueIterationResult> {
    check_tol(tol)?;
    let n = mdp.n_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    for iteration in 1..=MAX_ITERATIONS {
        let mut residual: f64 = 0.0;
        for s in 0..n {
            next[s] = (0..mdp.n_actions())
                .map(|a| mdp.q_backup(s, a, &values))
                .fold(f64::NEG_INFINITY, f64::max);
            residual = residual.max((next[s] - values[s]).abs());
        }
        std::mem::swap(&mut values, &mut next);
        if residual <= tol {
            let greedy = (0..n)
                .map(|s| argmax((0..mdp.n_actions()).map(|a| mdp.q_backup(s, a, &values))))
                .collect();
            return Ok(ValueIterationResult {
                values,
                greedy,
                iterations: iteration,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: MAX_ITERATIONS,
        residual: f64::NAN,
    })
}

/// Index of the largest item; ties go to the lowest index.
pub fn argmax(items: impl IntoIterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_value = f64::NEG_INFINITY;
    for (i, v) in items.into_iter().enumerate() {
        if v > best_value {
            best = i;
            best_value = v;
        }
    }
    best
}

/// Draws an index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding can leave `acc` a hair under one; fall back to the last
    // index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Samples `s' ~ P(.|s,a)` and returns it with the reward `r(s,a)`.
pub fn sample_transition<R: Rng + ?Sized>(
    mdp: &Mdp,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<(usize, f64)> {
    check_index("state", s, mdp.n_states())?;
    check_index("action", a, mdp.n_actions())?;
    Ok((sample_successor(mdp, s, a, rng), mdp.reward(s, a)))
}

pub(crate) fn sample_successor<R: Rng + ?Sized>(mdp: &Mdp, s: usize, a: usize, rng: &mut R) -> usize {
    let succ = mdp.successors(s, a);
    if succ.len() == 1 {
        return succ[0].0;
    }
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for &(s2, p) in succ {
        acc += p;
        if u < acc {
            return s2;
        }
    }
    succ[succ.len() - 1].0
}

/// Small fixtures shared by unit tests and downstream test suites.
pub mod fixtures {
    use super::*;

    pub const GO: usize = 0;
    pub const STAY: usize = 1;

    /// Two states; `go` moves 0 -> 1 and keeps 1 in place, `stay` self-loops.
    /// Only `(0, go)` is rewarded, with 1. Discount 0.5, start in state 0.
    pub fn chain2() -> Mdp {
        chain2_with_gamma(0.5)
    }

    pub fn chain2_with_gamma(gamma: f64) -> Mdp {
        let transition = vec![
            // s = 0: go, stay
            0.0, 1.0, 1.0, 0.0, //
            // s = 1: go, stay
            0.0, 1.0, 0.0, 1.0,
        ];
        let reward = vec![1.0, 0.0, 0.0, 0.0];
        Mdp::new(2, 2, gamma, transition, reward, vec![1.0, 0.0]).expect("valid fixture")
    }

    /// One state, `n_actions` self-looping actions with the given rewards.
    pub fn bandit(rewards: &[f64], gamma: f64) -> Mdp {
        let n = rewards.len();
        Mdp::new(1, n, gamma, vec![1.0; n], rewards.to_vec(), vec![1.0]).expect("valid fixture")
    }

    /// A dense random MDP with strictly positive transition rows.
    pub fn random_mdp<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        rng: &mut R,
    ) -> Mdp {
        let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            transition.extend((0..n_states).map(|_| rng.gen_range(0.05..1.0)));
        }
        normalize_rows(&mut transition, n_states);
        let reward = (0..n_states * n_actions).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut initial: Vec<f64> = (0..n_states).map(|_| rng.gen_range(0.1..1.0)).collect();
        normalize_rows(&mut initial, n_states);
        Mdp::new(n_states, n_actions, gamma, transition, reward, initial).expect("valid fixture")
    }

    /// Rescales rows so they sum to one and pushes the rounding remainder
    /// onto the largest entry.
    pub fn normalize_rows(values: &mut [f64], width: usize) {
        for row in values.chunks_mut(width) {
            let total: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= total);
            let drift = 1.0 - row.iter().sum::<f64>();
            let i = argmax(row.iter().copied());
            row[i] += drift;
        }
    }
}
