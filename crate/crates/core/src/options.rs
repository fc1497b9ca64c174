//! Options over a base MDP: parameters, the augmented state-option chain,
//! intra-option and SMDP evaluation, and the two execution models.
//!
//! Every option may be initiated in every state. Option `o` has a softmax
//! policy `pi(a|s,o)` over the logits `theta_pi[o][s][.]` and a sigmoid
//! termination `beta(s,o) = sigmoid(theta_beta[o][s])`. The policy over
//! options is epsilon-greedy on the scores `theta_mu[s][.]`:
//! `mu(o|s) = (1 - eps) [o = argmax theta_mu[s]] + eps / n_options`,
//! ties going to the lowest option index.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::linalg::{column, solve_resolvent, sup_norm};
use crate::mdp::{argmax, sample_categorical, sample_successor, Mdp};
use crate::table::StateOptionTable;

/// Logit magnitude used to pin a softmax or sigmoid to a corner.
/// `sigmoid(40)` rounds to exactly 1 in f64.
pub const SATURATED_LOGIT: f64 = 40.0;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Writes `softmax(logits)` into `out`.
pub fn softmax_into(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        total += *o;
    }
    out.iter_mut().for_each(|o| *o /= total);
}

/// Parameters of a set of options and of the policy over them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ThetaDocument", into = "ThetaDocument")]
pub struct Theta {
    n_states: usize,
    n_actions: usize,
    n_options: usize,
    /// `[o][s][a]`
    pub theta_pi: Vec<f64>,
    /// `[o][s]`
    pub theta_beta: Vec<f64>,
    /// `[s][o]`
    pub theta_mu: Vec<f64>,
    pub epsilon_mu: f64,
}

/// JSON layout of [`Theta`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThetaDocument {
    pub theta_pi: Vec<Vec<Vec<f64>>>,
    pub theta_beta: Vec<Vec<f64>>,
    pub theta_mu: Vec<Vec<f64>>,
    pub epsilon_mu: f64,
}

impl TryFrom<ThetaDocument> for Theta {
    type Error = Error;

    fn try_from(doc: ThetaDocument) -> Result<Self> {
        let n_options = doc.theta_pi.len();
        let n_states = doc.theta_pi.first().map_or(0, Vec::len);
        let n_actions = doc
            .theta_pi
            .first()
            .and_then(|rows| rows.first())
            .map_or(0, Vec::len);
        let shape_ok = doc
            .theta_pi
            .iter()
            .all(|rows| rows.len() == n_states && rows.iter().all(|r| r.len() == n_actions))
            && doc.theta_beta.len() == n_options
            && doc.theta_beta.iter().all(|r| r.len() == n_states)
            && doc.theta_mu.len() == n_states
            && doc.theta_mu.iter().all(|r| r.len() == n_options);
        if !shape_ok {
            return Err(Error::InvalidTheta("parameter blocks have inconsistent shapes".into()));
        }
        let theta = Theta {
            n_states,
            n_actions,
            n_options,
            theta_pi: doc.theta_pi.into_iter().flatten().flatten().collect(),
            theta_beta: doc.theta_beta.into_iter().flatten().collect(),
            theta_mu: doc.theta_mu.into_iter().flatten().collect(),
            epsilon_mu: doc.epsilon_mu,
        };
        theta.validate()?;
        Ok(theta)
    }
}

impl From<Theta> for ThetaDocument {
    fn from(t: Theta) -> Self {
        Self {
            theta_pi: t
                .theta_pi
                .chunks(t.n_states * t.n_actions)
                .map(|block| block.chunks(t.n_actions).map(<[f64]>::to_vec).collect())
                .collect(),
            theta_beta: t.theta_beta.chunks(t.n_states).map(<[f64]>::to_vec).collect(),
            theta_mu: t.theta_mu.chunks(t.n_options).map(<[f64]>::to_vec).collect(),
            epsilon_mu: t.epsilon_mu,
        }
    }
}

impl Theta {
    pub fn zeros(n_states: usize, n_actions: usize, n_options: usize, epsilon_mu: f64) -> Self {
        Self {
            n_states,
            n_actions,
            n_options,
            theta_pi: vec![0.0; n_options * n_states * n_actions],
            theta_beta: vec![0.0; n_options * n_states],
            theta_mu: vec![0.0; n_states * n_options],
            epsilon_mu,
        }
    }

    /// All three blocks drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(
        n_states: usize,
        n_actions: usize,
        n_options: usize,
        epsilon_mu: f64,
        scale: f64,
        rng: &mut R,
    ) -> Self {
        let mut theta = Self::zeros(n_states, n_actions, n_options, epsilon_mu);
        for x in theta
            .theta_pi
            .iter_mut()
            .chain(theta.theta_beta.iter_mut())
            .chain(theta.theta_mu.iter_mut())
        {
            *x = rng.gen_range(-scale..=scale);
        }
        theta
    }

    /// One option per primitive action: a point-mass policy on that action
    /// and termination after every step.
    pub fn primitive(n_states: usize, n_actions: usize) -> Self {
        let mut theta = Self::zeros(n_states, n_actions, n_actions, 0.0);
        for o in 0..n_actions {
            for s in 0..n_states {
                for a in 0..n_actions {
                    let i = theta.pi_index(o, s, a);
                    theta.theta_pi[i] = if a == o { SATURATED_LOGIT } else { -SATURATED_LOGIT };
                }
            }
        }
        theta.set_all_beta_logits(SATURATED_LOGIT);
        theta
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_options(&self) -> usize {
        self.n_options
    }

    pub fn n_augmented(&self) -> usize {
        self.n_states * self.n_options
    }

    pub fn pi_index(&self, o: usize, s: usize, a: usize) -> usize {
        (o * self.n_states + s) * self.n_actions + a
    }

    pub fn beta_index(&self, s: usize, o: usize) -> usize {
        o * self.n_states + s
    }

    pub fn pi_logits(&self, s: usize, o: usize) -> &[f64] {
        let start = self.pi_index(o, s, 0);
        &self.theta_pi[start..start + self.n_actions]
    }

    pub fn pi_into(&self, s: usize, o: usize, out: &mut [f64]) {
        softmax_into(self.pi_logits(s, o), out);
    }

    pub fn pi(&self, s: usize, o: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n_actions];
        self.pi_into(s, o, &mut out);
        out
    }

    pub fn beta(&self, s: usize, o: usize) -> f64 {
        sigmoid(self.theta_beta[self.beta_index(s, o)])
    }

    /// `d beta / d theta_beta` at `(s, o)`.
    pub fn beta_slope(&self, s: usize, o: usize) -> f64 {
        let b = self.beta(s, o);
        b * (1.0 - b)
    }

    pub fn mu_scores(&self, s: usize) -> &[f64] {
        &self.theta_mu[s * self.n_options..(s + 1) * self.n_options]
    }

    pub fn greedy_option(&self, s: usize) -> usize {
        argmax(self.mu_scores(s).iter().copied())
    }

    pub fn mu(&self, s: usize) -> Vec<f64> {
        epsilon_greedy_probs(self.greedy_option(s), self.n_options, self.epsilon_mu)
    }

    pub fn set_all_beta_logits(&mut self, logit: f64) {
        self.theta_beta.iter_mut().for_each(|x| *x = logit);
    }

    /// Makes `mu` choose `choices[s]` in state `s` (before epsilon mixing).
    pub fn set_greedy_mu(&mut self, choices: &[usize]) -> Result<()> {
        if choices.len() != self.n_states {
            return Err(Error::ShapeMismatch("one option choice per state expected".into()));
        }
        for (s, &o) in choices.iter().enumerate() {
            check_index("option", o, self.n_options)?;
            for k in 0..self.n_options {
                self.theta_mu[s * self.n_options + k] = if k == o { 1.0 } else { 0.0 };
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 || self.n_options == 0 {
            return Err(Error::InvalidTheta("empty parameter blocks".into()));
        }
        if self.theta_pi.len() != self.n_options * self.n_states * self.n_actions
            || self.theta_beta.len() != self.n_options * self.n_states
            || self.theta_mu.len() != self.n_states * self.n_options
        {
            return Err(Error::InvalidTheta("parameter block sizes".into()));
        }
        if !(0.0..=1.0).contains(&self.epsilon_mu) {
            return Err(Error::InvalidTheta(format!(
                "epsilon_mu {} outside [0, 1]",
                self.epsilon_mu
            )));
        }
        if self
            .theta_pi
            .iter()
            .chain(&self.theta_beta)
            .chain(&self.theta_mu)
            .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidTheta("non-finite parameter".into()));
        }
        Ok(())
    }

    pub(crate) fn check_against(&self, mdp: &Mdp) -> Result<()> {
        self.validate()?;
        if self.n_states != mdp.n_states() || self.n_actions != mdp.n_actions() {
            return Err(Error::ShapeMismatch(format!(
                "parameters cover {} states x {} actions, MDP has {} x {}",
                self.n_states,
                self.n_actions,
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }

    /// Evaluates all three parametrized distributions once.
    pub fn probabilities(&self) -> OptionProbs {
        let (ns, na, no) = (self.n_states, self.n_actions, self.n_options);
        let mut pi = vec![0.0; ns * no * na];
        let mut beta = vec![0.0; ns * no];
        let mut mu = vec![0.0; ns * no];
        for s in 0..ns {
            for o in 0..no {
                let z = s * no + o;
                self.pi_into(s, o, &mut pi[z * na..(z + 1) * na]);
                beta[z] = self.beta(s, o);
            }
            mu[s * no..(s + 1) * no].copy_from_slice(&self.mu(s));
        }
        OptionProbs {
            n_states: ns,
            n_actions: na,
            n_options: no,
            pi,
            beta,
            mu,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// `(1 - eps)` on `greedy` plus `eps` spread uniformly.
pub fn epsilon_greedy_probs(greedy: usize, n: usize, epsilon: f64) -> Vec<f64> {
    let mut probs = vec![epsilon / n as f64; n];
    probs[greedy] += 1.0 - epsilon;
    probs
}

/// Materialized option distributions, all indexed by the flat augmented
/// index `z = s * n_options + o`.
#[derive(Debug, Clone)]
pub struct OptionProbs {
    pub n_states: usize,
    pub n_actions: usize,
    pub n_options: usize,
    /// `pi[z * n_actions + a]`
    pub pi: Vec<f64>,
    /// `beta[z]`
    pub beta: Vec<f64>,
    /// `mu[s * n_options + o]`
    pub mu: Vec<f64>,
}

impl OptionProbs {
    pub fn n_augmented(&self) -> usize {
        self.n_states * self.n_options
    }

    pub fn pi_row(&self, z: usize) -> &[f64] {
        &self.pi[z * self.n_actions..(z + 1) * self.n_actions]
    }

    pub fn mu_row(&self, s: usize) -> &[f64] {
        &self.mu[s * self.n_options..(s + 1) * self.n_options]
    }

    /// `sum_o mu(o|s) table(s, o)`
    pub fn mu_average(&self, table: &[f64], s: usize) -> f64 {
        let no = self.n_options;
        self.mu_row(s)
            .iter()
            .zip(&table[s * no..(s + 1) * no])
            .map(|(m, q)| m * q)
            .sum()
    }

    /// Expected one-step reward `sum_a pi(a|z) r(s, a)` for every `z`.
    pub fn policy_reward(&self, mdp: &Mdp) -> Vec<f64> {
        (0..self.n_augmented())
            .map(|z| {
                let s = z / self.n_options;
                self.pi_row(z)
                    .iter()
                    .enumerate()
                    .map(|(a, p)| p * mdp.reward(s, a))
                    .sum()
            })
            .collect()
    }

    /// Next-state distribution under the option's own policy,
    /// `K(s'|z) = sum_a pi(a|z) P(s'|s,a)`, as sparse rows.
    pub fn state_kernel(&self, mdp: &Mdp) -> Vec<Vec<(usize, f64)>> {
        let ns = self.n_states;
        let mut dense = vec![0.0; ns];
        (0..self.n_augmented())
            .map(|z| {
                let s = z / self.n_options;
                dense.iter_mut().for_each(|x| *x = 0.0);
                for (a, &p_a) in self.pi_row(z).iter().enumerate() {
                    if p_a == 0.0 {
                        continue;
                    }
                    for &(s2, p) in mdp.successors(s, a) {
                        dense[s2] += p_a * p;
                    }
                }
                dense
                    .iter()
                    .enumerate()
                    .filter(|(_, &p)| p != 0.0)
                    .map(|(s2, &p)| (s2, p))
                    .collect()
            })
            .collect()
    }

    /// Matrix of the augmented chain scaled by `discount`:
    /// `M[z, z'] = discount * sum_a pi(a|z) Ptilde(z'|z, a)`.
    pub fn chain_matrix(&self, kernel: &[Vec<(usize, f64)>], discount: f64) -> DMatrix<f64> {
        let n = self.n_augmented();
        let no = self.n_options;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for z in 0..n {
            let o = z % no;
            for &(s2, p) in &kernel[z] {
                let b = self.beta[s2 * no + o];
                let w = discount * p;
                m[(z, s2 * no + o)] += w * (1.0 - b);
                for (o2, &m2) in self.mu_row(s2).iter().enumerate() {
                    m[(z, s2 * no + o2)] += w * b * m2;
                }
            }
        }
        m
    }
}

/// Option values with their state values and advantages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTables {
    pub q: StateOptionTable,
    pub v: Vec<f64>,
    pub a: StateOptionTable,
}

impl ValueTables {
    /// Fills `v(s) = sum_o mu(o|s) q(s,o)` and `a = q - v`.
    pub fn from_q(q: StateOptionTable, probs: &OptionProbs) -> Self {
        let v: Vec<f64> = (0..probs.n_states)
            .map(|s| probs.mu_average(q.as_slice(), s))
            .collect();
        let mut a = q.clone();
        for s in 0..probs.n_states {
            for x in a.row_mut(s) {
                *x -= v[s];
            }
        }
        Self { q, v, a }
    }

    /// Utility of arriving in `s` with option `o` still active,
    /// `U(s,o) = Q(s,o) - beta(s,o) A(s,o)`.
    pub fn utility(&self, theta: &Theta, s: usize, o: usize) -> f64 {
        self.q[(s, o)] - theta.beta(s, o) * self.a[(s, o)]
    }
}

/// Explicit augmented kernel `Ptilde(z'|z,a)`, stored `[z][a][z']`.
#[derive(Debug, Clone)]
pub struct AugmentedKernel {
    n_augmented: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

impl AugmentedKernel {
    pub fn prob(&self, z: usize, a: usize, z_next: usize) -> f64 {
        self.probs[(z * self.n_actions + a) * self.n_augmented + z_next]
    }

    pub fn row(&self, z: usize, a: usize) -> &[f64] {
        let start = (z * self.n_actions + a) * self.n_augmented;
        &self.probs[start..start + self.n_augmented]
    }

    pub fn n_augmented(&self) -> usize {
        self.n_augmented
    }
}

/// `Ptilde(z'|z,a) = P(s'|s,a) [(1 - beta(s',o)) [o' = o] + beta(s',o) mu(o'|s')]`.
pub fn augmented_transition(mdp: &Mdp, theta: &Theta) -> Result<AugmentedKernel> {
    theta.check_against(mdp)?;
    let probs = theta.probabilities();
    let (no, na) = (theta.n_options(), theta.n_actions());
    let n = theta.n_augmented();
    let mut out = vec![0.0; n * na * n];
    for z in 0..n {
        let (s, o) = (z / no, z % no);
        for a in 0..na {
            let row = &mut out[(z * na + a) * n..(z * na + a + 1) * n];
            for &(s2, p) in mdp.successors(s, a) {
                let b = probs.beta[s2 * no + o];
                row[s2 * no + o] += p * (1.0 - b);
                for (o2, &m) in probs.mu_row(s2).iter().enumerate() {
                    row[s2 * no + o2] += p * b * m;
                }
            }
        }
    }
    Ok(AugmentedKernel {
        n_augmented: n,
        n_actions: na,
        probs: out,
    })
}

/// Start distribution over state-option pairs, `alpha(s,o) = d0(s) mu(o|s)`.
pub fn start_distribution(mdp: &Mdp, theta: &Theta) -> StateOptionTable {
    let mut alpha = StateOptionTable::zeros(theta.n_states(), theta.n_options());
    for (s, &p) in mdp.initial_dist().iter().enumerate() {
        for (o, m) in theta.mu(s).into_iter().enumerate() {
            alpha[(s, o)] = p * m;
        }
    }
    alpha
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")))
    }
}

/// Sup-norm residual of the intra-option Bellman equations
/// `Q(s,o) = sum_a pi(a|s,o) (r(s,a) + gamma sum_s' P(s'|s,a) U(s',o))`.
pub fn intra_option_residual(mdp: &Mdp, theta: &Theta, values: &ValueTables) -> f64 {
    let no = theta.n_options();
    let mut pi = vec![0.0; theta.n_actions()];
    sup_norm((0..theta.n_augmented()).map(|z| {
        let (s, o) = (z / no, z % no);
        theta.pi_into(s, o, &mut pi);
        let backup: f64 = pi
            .iter()
            .enumerate()
            .map(|(a, &p_a)| {
                let cont: f64 = mdp
                    .successors(s, a)
                    .iter()
                    .map(|&(s2, p)| p * values.utility(theta, s2, o))
                    .sum();
                p_a * (mdp.reward(s, a) + mdp.gamma() * cont)
            })
            .sum();
        backup - values.q[(s, o)]
    }))
}

/// Solves the intra-option Bellman equations exactly (dense linear solve
/// over the augmented space) and checks the residual against `tol`.
pub fn intra_option_evaluate(mdp: &Mdp, theta: &Theta, tol: f64) -> Result<ValueTables> {
    check_tol(tol)?;
    theta.check_against(mdp)?;
    let probs = theta.probabilities();
    let kernel = probs.state_kernel(mdp);
    let m = probs.chain_matrix(&kernel, mdp.gamma());
    let rhs = probs.policy_reward(mdp);
    let q = solve_resolvent(&m, column(&rhs))?;
    let q = StateOptionTable::from_flat(theta.n_states(), theta.n_options(), q.as_slice().to_vec());
    let values = ValueTables::from_q(q, &probs);
    let residual = intra_option_residual(mdp, theta, &values);
    if residual > tol {
        return Err(Error::NotConverged {
            iterations: 0,
            residual,
        });
    }
    Ok(values)
}

/// Reward and transition models of one option.
#[derive(Debug, Clone)]
pub struct OptionModel {
    /// `b_o(s)`: expected discounted reward until termination from `s`.
    pub reward: Vec<f64>,
    /// `termination[(s, s')] = F_o(s', s)`: expected discount-weighted
    /// probability of terminating in `s'` when started in `s`.
    pub termination: DMatrix<f64>,
}

/// Computes `b_o` and `F_o` from their Bellman-like equations
/// `b(s) = sum_a pi r + gamma sum K(s'|s) (1 - beta(s')) b(s')` and
/// `F(., s) = gamma sum K(x|s) [beta(x) e_x + (1 - beta(x)) F(., x)]`.
pub fn option_models(mdp: &Mdp, theta: &Theta, o: usize, tol: f64) -> Result<OptionModel> {
    check_tol(tol)?;
    theta.check_against(mdp)?;
    check_index("option", o, theta.n_options())?;
    let ns = mdp.n_states();
    let gamma = mdp.gamma();
    let mut pi = vec![0.0; mdp.n_actions()];
    let mut kernel = DMatrix::<f64>::zeros(ns, ns);
    let mut r_pi = vec![0.0; ns];
    for s in 0..ns {
        theta.pi_into(s, o, &mut pi);
        for (a, &p_a) in pi.iter().enumerate() {
            r_pi[s] += p_a * mdp.reward(s, a);
            for &(s2, p) in mdp.successors(s, a) {
                kernel[(s, s2)] += p_a * p;
            }
        }
    }
    let beta: Vec<f64> = (0..ns).map(|s| theta.beta(s, o)).collect();
    let mut continue_m = kernel.clone();
    let mut stop_m = kernel.clone();
    for s2 in 0..ns {
        continue_m.column_mut(s2).scale_mut(gamma * (1.0 - beta[s2]));
        stop_m.column_mut(s2).scale_mut(gamma * beta[s2]);
    }
    let reward = solve_resolvent(&continue_m, column(&r_pi))?.as_slice().to_vec();
    let termination = solve_resolvent(&continue_m, stop_m.clone())?;

    let b_residual = sup_norm(
        (&continue_m * column(&reward) + column(&r_pi) - column(&reward)).iter().copied(),
    );
    let f_residual =
        sup_norm((&continue_m * &termination + &stop_m - &termination).iter().copied());
    let residual = b_residual.max(f_residual);
    if residual > tol {
        return Err(Error::NotConverged {
            iterations: 0,
            residual,
        });
    }
    Ok(OptionModel {
        reward,
        termination,
    })
}

/// Solves `Q(s,o) = b_o(s) + sum_s' F_o(s', s) V(s')` over all state-option
/// pairs, with `V(s') = sum_o' mu(o'|s') Q(s',o')`.
pub fn smdp_evaluate(mdp: &Mdp, theta: &Theta, tol: f64) -> Result<StateOptionTable> {
    check_tol(tol)?;
    theta.check_against(mdp)?;
    let (ns, no) = (theta.n_states(), theta.n_options());
    let n = ns * no;
    let probs = theta.probabilities();
    let models = (0..no)
        .map(|o| option_models(mdp, theta, o, tol))
        .collect::<Result<Vec<_>>>()?;
    let mut m = DMatrix::<f64>::zeros(n, n);
    let mut b = vec![0.0; n];
    for s in 0..ns {
        for (o, model) in models.iter().enumerate() {
            let z = s * no + o;
            b[z] = model.reward[s];
            for s2 in 0..ns {
                let f = model.termination[(s, s2)];
                if f == 0.0 {
                    continue;
                }
                for (o2, &mu) in probs.mu_row(s2).iter().enumerate() {
                    m[(z, s2 * no + o2)] += f * mu;
                }
            }
        }
    }
    let q = solve_resolvent(&m, column(&b))?;
    let residual = sup_norm((&m * &q + column(&b) - &q).iter().copied());
    if residual > tol {
        return Err(Error::NotConverged {
            iterations: 0,
            residual,
        });
    }
    Ok(StateOptionTable::from_flat(ns, no, q.as_slice().to_vec()))
}

/// How options end during execution.
#[derive(Debug, Clone, Copy)]
pub enum ExecutionMode<'a> {
    /// Terminate only when the `beta` coin fires.
    CallAndReturn,
    /// Also terminate wherever the active option has negative advantage
    /// under the given tables.
    Interruption(&'a ValueTables),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub state: usize,
    pub option: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    /// The option ended in `next_state` and a new one was chosen there.
    pub switched: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn switch_count(&self) -> usize {
        self.steps.iter().filter(|s| s.switched).count()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps
            .iter()
            .rev()
            .fold(0.0, |acc, step| step.reward + gamma * acc)
    }
}

/// Runs options from `start` for at most `horizon` steps.
pub fn execute<R: Rng + ?Sized>(
    mdp: &Mdp,
    theta: &Theta,
    mode: ExecutionMode<'_>,
    start: usize,
    rng: &mut R,
    horizon: usize,
) -> Result<Trajectory> {
    execute_until(mdp, theta, mode, start, rng, horizon, |_| false)
}

/// Like [`execute`], but stops after entering a state where `is_terminal` holds.
pub fn execute_until<R: Rng + ?Sized>(
    mdp: &Mdp,
    theta: &Theta,
    mode: ExecutionMode<'_>,
    start: usize,
    rng: &mut R,
    horizon: usize,
    is_terminal: impl Fn(usize) -> bool,
) -> Result<Trajectory> {
    theta.check_against(mdp)?;
    check_index("state", start, mdp.n_states())?;
    if horizon == 0 {
        return Err(Error::InvalidConfig("horizon must be positive".into()));
    }
    let probs = theta.probabilities();
    let mut steps = Vec::with_capacity(horizon.min(1 << 16));
    let mut s = start;
    let mut o = sample_categorical(probs.mu_row(s), rng);
    let no = theta.n_options();
    for _ in 0..horizon {
        let z = s * no + o;
        let a = sample_categorical(probs.pi_row(z), rng);
        let s2 = sample_successor(mdp, s, a, rng);
        let r = mdp.reward(s, a);
        let mut terminate = rng.gen::<f64>() < probs.beta[s2 * no + o];
        if let ExecutionMode::Interruption(values) = mode {
            terminate |= values.a[(s2, o)] < 0.0;
        }
        let o2 = if terminate {
            sample_categorical(probs.mu_row(s2), rng)
        } else {
            o
        };
        steps.push(TrajectoryStep {
            state: s,
            option: o,
            action: a,
            reward: r,
            next_state: s2,
            switched: terminate,
        });
        s = s2;
        o = o2;
        if is_terminal(s) {
            break;
        }
    }
    Ok(Trajectory { steps })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{chain2, random_mdp, GO};
    use crate::mdp::{policy_evaluation, StationaryPolicy};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Options on CHAIN2 where option 0 always picks `go`.
    fn chain2_theta(beta_logit: f64) -> Theta {
        let mut theta = Theta::zeros(2, 2, 1, 0.0);
        for s in 0..2 {
            let i = theta.pi_index(0, s, GO);
            theta.theta_pi[i] = SATURATED_LOGIT;
            let i = theta.pi_index(0, s, 1 - GO);
            theta.theta_pi[i] = -SATURATED_LOGIT;
        }
        theta.set_all_beta_logits(beta_logit);
        theta
    }

    #[test]
    fn chain2_always_go_option() {
        let values = intra_option_evaluate(&chain2(), &chain2_theta(-SATURATED_LOGIT), 1e-10).unwrap();
        assert!((values.q[(0, 0)] - 1.0).abs() < 1e-12);
        assert!(values.q[(1, 0)].abs() < 1e-12);
    }

    #[test]
    fn kernel_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = random_mdp(4, 2, 0.9, &mut rng);
        let mut theta = Theta::random(4, 2, 3, 0.2, 1.0, &mut rng);
        theta.set_all_beta_logits(SATURATED_LOGIT);
        let k = augmented_transition(&mdp, &theta).unwrap();
        for z in 0..12 {
            for a in 0..2 {
                for z2 in 0..12 {
                    let (s2, o2) = (z2 / 3, z2 % 3);
                    let expected = mdp.prob(z / 3, a, s2) * theta.mu(s2)[o2];
                    assert!((k.prob(z, a, z2) - expected).abs() < 1e-12);
                }
            }
        }
        theta.set_all_beta_logits(-SATURATED_LOGIT);
        let k = augmented_transition(&mdp, &theta).unwrap();
        for z in 0..12 {
            for a in 0..2 {
                for z2 in 0..12 {
                    let same = (z2 % 3 == z % 3) as u8 as f64;
                    let expected = mdp.prob(z / 3, a, z2 / 3) * same;
                    assert!((k.prob(z, a, z2) - expected).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_never_ending_option_is_a_flat_policy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = random_mdp(6, 3, 0.9, &mut rng);
        let mut theta = Theta::random(6, 3, 1, 0.0, 2.0, &mut rng);
        theta.set_all_beta_logits(-SATURATED_LOGIT);
        let probs: Vec<f64> = (0..6).flat_map(|s| theta.pi(s, 0)).collect();
        let policy = StationaryPolicy::new(6, 3, probs).unwrap();
        let v = policy_evaluation(&mdp, &policy, 1e-10).unwrap();
        let q = intra_option_evaluate(&mdp, &theta, 1e-10).unwrap().q;
        for s in 0..6 {
            assert!((q[(s, 0)] - v[s]).abs() < 1e-9);
        }
        // with termination everywhere the single option is still the same policy
        theta.set_all_beta_logits(SATURATED_LOGIT);
        let q1 = smdp_evaluate(&mdp, &theta, 1e-10).unwrap();
        for s in 0..6 {
            assert!((q1[(s, 0)] - v[s]).abs() < 1e-9);
        }
    }

    #[test]
    fn one_step_option_models() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mdp = random_mdp(5, 3, 0.8, &mut rng);
        let mut theta = Theta::random(5, 3, 2, 0.1, 1.0, &mut rng);
        theta.set_all_beta_logits(SATURATED_LOGIT);
        let model = option_models(&mdp, &theta, 1, 1e-10).unwrap();
        for s in 0..5 {
            let pi = theta.pi(s, 1);
            let b: f64 = (0..3).map(|a| pi[a] * mdp.reward(s, a)).sum();
            assert!((model.reward[s] - b).abs() < 1e-12);
            for s2 in 0..5 {
                let f: f64 = (0..3).map(|a| 0.8 * pi[a] * mdp.prob(s, a, s2)).sum();
                assert!((model.termination[(s, s2)] - f).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn evaluations_agree_on_random_instances() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..4 {
            let mdp = random_mdp(7, 3, 0.95, &mut rng);
            let theta = Theta::random(7, 3, 3, 0.1, 2.0, &mut rng);
            let values = intra_option_evaluate(&mdp, &theta, 1e-10).unwrap();
            let q = smdp_evaluate(&mdp, &theta, 1e-10).unwrap();
            assert!(values.q.max_abs_diff(&q) < 1e-9);
            assert!(intra_option_residual(&mdp, &theta, &values) < 1e-10);
        }
    }

    #[test]
    fn execution_switch_limits() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mdp = random_mdp(5, 2, 0.9, &mut rng);
        let mut theta = Theta::random(5, 2, 3, 0.3, 1.0, &mut rng);
        theta.set_all_beta_logits(-SATURATED_LOGIT);
        let traj = execute(&mdp, &theta, ExecutionMode::CallAndReturn, 0, &mut rng, 500).unwrap();
        assert_eq!(traj.len(), 500);
        assert_eq!(traj.switch_count(), 0);
        assert!(traj.steps.iter().all(|s| s.option == traj.steps[0].option));
        theta.set_all_beta_logits(SATURATED_LOGIT);
        let traj = execute(&mdp, &theta, ExecutionMode::CallAndReturn, 0, &mut rng, 500).unwrap();
        assert_eq!(traj.switch_count(), 500);
        assert!(execute(&mdp, &theta, ExecutionMode::CallAndReturn, 0, &mut rng, 0).is_err());
    }

    #[test]
    fn theta_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let theta = Theta::random(3, 2, 2, 0.1, 1.0, &mut rng);
        let text = theta.to_json().unwrap();
        assert_eq!(Theta::from_json(&text).unwrap(), theta);
    }
}
