//! Deliberation costs: the switching cost, its discounted accumulation
//! `D^lambda`, values under the cost-transformed reward, the mixed objective
//! and planning over the policy over options for a fixed cost coefficient.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{check_index, Error, Result};
use crate::linalg::{column, solve_resolvent, sup_norm};
use crate::mdp::{argmax, Mdp};
use crate::options::{OptionProbs, Theta, ValueTables};
use crate::table::StateOptionTable;

/// Discount applied to the deliberation cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Named(LambdaName),
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaName {
    Zero,
    Gamma,
}

impl LambdaSpec {
    pub const ZERO: Self = Self::Named(LambdaName::Zero);
    pub const GAMMA: Self = Self::Named(LambdaName::Gamma);

    pub fn resolve(self, gamma: f64) -> f64 {
        match self {
            Self::Named(LambdaName::Zero) => 0.0,
            Self::Named(LambdaName::Gamma) => gamma,
            Self::Value(x) => x,
        }
    }
}

/// Expected immediate cost of the step `(s, o) --a--> s'`, averaged over
/// whether the option terminates in `s'` and which option follows.
pub trait ExpectedCost: Send + Sync {
    #[allow(clippy::too_many_arguments)]
    fn expected_cost(
        &self,
        probs: &OptionProbs,
        gamma: f64,
        s: usize,
        o: usize,
        a: usize,
        s_next: usize,
    ) -> f64;
}

#[derive(Clone, Default)]
pub enum CostKind {
    /// `c(s', o) = gamma * beta(s', o)`.
    #[default]
    Switching,
    Custom(Arc<dyn ExpectedCost>),
}

impl fmt::Debug for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Switching => f.write_str("Switching"),
            Self::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

impl CostKind {
    fn cost(&self, probs: &OptionProbs, gamma: f64, s: usize, o: usize, a: usize, s2: usize) -> f64 {
        match self {
            Self::Switching => gamma * probs.beta[s2 * probs.n_options + o],
            Self::Custom(c) => c.expected_cost(probs, gamma, s, o, a, s2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeliberationConfig {
    pub eta: f64,
    pub lambda: LambdaSpec,
    pub cost: CostKind,
    /// Budget `k` of the constrained form; kept for reporting only.
    pub constraint_bound: Option<f64>,
}

impl DeliberationConfig {
    pub fn new(eta: f64, lambda: LambdaSpec) -> Self {
        Self {
            eta,
            lambda,
            cost: CostKind::Switching,
            constraint_bound: None,
        }
    }

    pub fn validate(&self, gamma: f64) -> Result<f64> {
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidConfig(format!("eta must be >= 0, got {}", self.eta)));
        }
        let lambda = self.lambda.resolve(gamma);
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::InvalidConfig(format!("lambda {lambda} outside [0, 1)")));
        }
        Ok(lambda)
    }
}

/// Cost tables under a deliberation config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostTables {
    /// `D^lambda(s, o)`
    pub d: StateOptionTable,
    /// `Q^c(s, o)`, values of the reward `r - eta c` at discount gamma.
    pub qc: StateOptionTable,
    /// `A^c = Q^c - sum_o mu Q^c`
    pub ac: StateOptionTable,
}

/// `gamma * beta(s', o)`: the expected cost of the termination coin at `s'`.
pub fn switching_cost(theta: &Theta, gamma: f64, s_next: usize, o: usize) -> Result<f64> {
    check_index("state", s_next, theta.n_states())?;
    check_index("option", o, theta.n_options())?;
    Ok(gamma * theta.beta(s_next, o))
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tolerance must be positive, got {tol}")))
    }
}

/// Expected one-step cost `sum_a pi(a|z) sum_s' P(s'|s,a) c(z, a, s')` per pair.
pub(crate) fn policy_cost(mdp: &Mdp, probs: &OptionProbs, cost: &CostKind) -> Vec<f64> {
    let no = probs.n_options;
    (0..probs.n_augmented())
        .map(|z| {
            let (s, o) = (z / no, z % no);
            probs
                .pi_row(z)
                .iter()
                .enumerate()
                .map(|(a, &p_a)| {
                    let c: f64 = mdp
                        .successors(s, a)
                        .iter()
                        .map(|&(s2, p)| p * cost.cost(probs, mdp.gamma(), s, o, a, s2))
                        .sum();
                    p_a * c
                })
                .sum()
        })
        .collect()
}

/// Residual of `x(z) = reward(z) + discount * sum_a pi sum_s' P [(1-beta) x(s',o) + beta sum mu x(s',.)]`.
fn chain_residual(
    mdp: &Mdp,
    probs: &OptionProbs,
    reward: &[f64],
    discount: f64,
    x: &[f64],
) -> f64 {
    let no = probs.n_options;
    sup_norm((0..probs.n_augmented()).map(|z| {
        let (s, o) = (z / no, z % no);
        let cont: f64 = probs
            .pi_row(z)
            .iter()
            .enumerate()
            .map(|(a, &p_a)| {
                p_a * mdp
                    .successors(s, a)
                    .iter()
                    .map(|&(s2, p)| {
                        let b = probs.beta[s2 * no + o];
                        p * ((1.0 - b) * x[s2 * no + o] + b * probs.mu_average(x, s2))
                    })
                    .sum::<f64>()
            })
            .sum();
        reward[z] + discount * cont - x[z]
    }))
}

fn solve_chain(
    mdp: &Mdp,
    probs: &OptionProbs,
    reward: &[f64],
    discount: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let kernel = probs.state_kernel(mdp);
    let m = probs.chain_matrix(&kernel, discount);
    let x = solve_resolvent(&m, column(reward))?.as_slice().to_vec();
    let residual = chain_residual(mdp, probs, reward, discount, &x);
    if residual > tol {
        return Err(Error::NotConverged {
            iterations: 0,
            residual,
        });
    }
    Ok(x)
}

/// `D^lambda`: expected lambda-discounted sum of deliberation costs.
pub fn deliberation_value(
    mdp: &Mdp,
    theta: &Theta,
    config: &DeliberationConfig,
    tol: f64,
) -> Result<StateOptionTable> {
    check_tol(tol)?;
    theta.check_against(mdp)?;
    let lambda = config.validate(mdp.gamma())?;
    let probs = theta.probabilities();
    let cost = policy_cost(mdp, &probs, &config.cost);
    let d = solve_chain(mdp, &probs, &cost, lambda, tol)?;
    Ok(StateOptionTable::from_flat(theta.n_states(), theta.n_options(), d))
}

/// Values under the transformed reward `r - eta c`, solved directly as an
/// augmented chain with that reward, plus `D^lambda` for the configured lambda.
pub fn transformed_evaluate(
    mdp: &Mdp,
    theta: &Theta,
    config: &DeliberationConfig,
    tol: f64,
) -> Result<CostTables> {
    check_tol(tol)?;
    theta.check_against(mdp)?;
    config.validate(mdp.gamma())?;
    let probs = theta.probabilities();
    let cost = policy_cost(mdp, &probs, &config.cost);
    let reward: Vec<f64> = probs
        .policy_reward(mdp)
        .iter()
        .zip(&cost)
        .map(|(r, c)| r - config.eta * c)
        .collect();
    let qc = solve_chain(mdp, &probs, &reward, mdp.gamma(), tol)?;
    let qc = StateOptionTable::from_flat(theta.n_states(), theta.n_options(), qc);
    let ValueTables { q: qc, a: ac, .. } = ValueTables::from_q(qc, &probs);
    let d = deliberation_value(mdp, theta, config, tol)?;
    Ok(CostTables { d, qc, ac })
}

/// `J = sum_{s,o} alpha(s,o) (Q(s,o) - eta D(s,o))`.
pub fn mixed_objective(
    alpha: &StateOptionTable,
    q: &StateOptionTable,
    d: &StateOptionTable,
    eta: f64,
) -> Result<f64> {
    if !alpha.same_shape(q) || !alpha.same_shape(d) {
        return Err(Error::ShapeMismatch("alpha, Q and D must share a shape".into()));
    }
    let mass = alpha.sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("alpha sums to {mass}, not 1")));
    }
    Ok(alpha
        .as_slice()
        .iter()
        .zip(q.as_slice())
        .zip(d.as_slice())
        .map(|((w, q), d)| w * (q - eta * d))
        .sum())
}

/// Result of planning over deterministic policies over options.
#[derive(Debug, Clone)]
pub struct MuPlan {
    /// Input parameters with `theta_mu` one-hot on the chosen options and
    /// `epsilon_mu = 0`.
    pub theta: Theta,
    pub choices: Vec<usize>,
    /// `Q*` under the transformed reward for the chosen policy.
    pub q: StateOptionTable,
    pub iterations: usize,
}

/// Policy iteration over deterministic `mu` with option policies and
/// terminations frozen. Values use the transformed reward `r - eta c` at
/// discount gamma (the cost is accumulated at the environment discount);
/// the config's lambda is not used.
pub fn optimize_mu(
    mdp: &Mdp,
    theta: &Theta,
    config: &DeliberationConfig,
    tol: f64,
) -> Result<MuPlan> {
    check_tol(tol)?;
    theta.check_against(mdp)?;
    config.validate(mdp.gamma())?;
    let ns = theta.n_states();
    let mut plan_theta = theta.clone();
    plan_theta.epsilon_mu = 0.0;
    let mut choices: Vec<usize> = (0..ns).map(|s| theta.greedy_option(s)).collect();
    let max_iterations = 10_000;
    for iteration in 1..=max_iterations {
        plan_theta.set_greedy_mu(&choices)?;
        let tables = transformed_evaluate(mdp, &plan_theta, config, tol)?;
        let mut changed = false;
        for (s, choice) in choices.iter_mut().enumerate() {
            let row = tables.qc.row(s);
            let best = argmax(row.iter().copied());
            // switch only on strict improvement so ties cannot cycle
            if row[best] > row[*choice] + 1e-12 * (1.0 + row[*choice].abs()) {
                *choice = best;
                changed = true;
            }
        }
        if !changed {
            return Ok(MuPlan {
                theta: plan_theta,
                choices,
                q: tables.qc,
                iterations: iteration,
            });
        }
    }
    Err(Error::NotConverged {
        iterations: max_iterations,
        residual: f64::NAN,
    })
}

/// Expected discounted duration `d = 1 / (1 - gamma kappa)` of an option
/// with constant continuation probability `kappa`, and its cost rate
/// `eta / d = (1 - gamma kappa) eta`.
pub fn expected_duration(kappa: f64, gamma: f64, eta: f64) -> Result<(f64, f64)> {
    if !(0.0..=1.0).contains(&kappa) {
        return Err(Error::InvalidConfig(format!("kappa {kappa} outside [0, 1]")));
    }
    let gk = gamma * kappa;
    if !(gk < 1.0) || gamma < 0.0 {
        return Err(Error::InvalidConfig(format!(
            "gamma * kappa = {gk} must be below 1"
        )));
    }
    Ok((1.0 / (1.0 - gk), (1.0 - gk) * eta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::fixtures::{chain2, random_mdp, GO};
    use crate::options::{intra_option_evaluate, SATURATED_LOGIT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn switching_cost_limits() {
        let mut theta = Theta::zeros(2, 2, 1, 0.0);
        theta.set_all_beta_logits(-1e3);
        assert_eq!(switching_cost(&theta, 0.99, 1, 0).unwrap(), 0.0);
        theta.set_all_beta_logits(SATURATED_LOGIT);
        assert_eq!(switching_cost(&theta, 0.99, 1, 0).unwrap(), 0.99);
        assert!(switching_cost(&theta, 0.99, 2, 0).is_err());
    }

    #[test]
    fn lambda_zero_is_immediate_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mdp = random_mdp(5, 2, 0.9, &mut rng);
        let theta = Theta::random(5, 2, 3, 0.1, 1.5, &mut rng);
        let config = DeliberationConfig::new(0.1, LambdaSpec::ZERO);
        let d = deliberation_value(&mdp, &theta, &config, 1e-10).unwrap();
        for s in 0..5 {
            for o in 0..3 {
                let pi = theta.pi(s, o);
                let expected: f64 = (0..2)
                    .map(|a| {
                        pi[a] * (0..5)
                            .map(|s2| mdp.prob(s, a, s2) * 0.9 * theta.beta(s2, o))
                            .sum::<f64>()
                    })
                    .sum();
                assert!((d[(s, o)] - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn never_switching_costs_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = random_mdp(4, 2, 0.9, &mut rng);
        let mut theta = Theta::random(4, 2, 2, 0.1, 1.0, &mut rng);
        theta.set_all_beta_logits(-1e3);
        let config = DeliberationConfig::new(0.1, LambdaSpec::GAMMA);
        let d = deliberation_value(&mdp, &theta, &config, 1e-10).unwrap();
        assert!(d.as_slice().iter().all(|x| x.abs() < 1e-300));
    }

    #[test]
    fn zero_eta_reproduces_plain_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(6, 3, 0.95, &mut rng);
        let theta = Theta::random(6, 3, 2, 0.1, 1.0, &mut rng);
        let plain = intra_option_evaluate(&mdp, &theta, 1e-10).unwrap();
        let tables =
            transformed_evaluate(&mdp, &theta, &DeliberationConfig::new(0.0, LambdaSpec::GAMMA), 1e-10)
                .unwrap();
        assert!(tables.qc.max_abs_diff(&plain.q) < 1e-10);
    }

    #[test]
    fn chain2_always_switching_go_option() {
        // One option that always goes and always terminates. From state 0 the
        // agent collects 1 and pays gamma at every step forever:
        // Qc(0) = 1 - eta gamma / (1 - gamma), Qc(1) = -eta gamma / (1 - gamma).
        let gamma = 0.5;
        let eta = 0.2;
        let mut theta = Theta::zeros(2, 2, 1, 0.0);
        for s in 0..2 {
            let i = theta.pi_index(0, s, GO);
            theta.theta_pi[i] = SATURATED_LOGIT;
            let i = theta.pi_index(0, s, 1 - GO);
            theta.theta_pi[i] = -SATURATED_LOGIT;
        }
        theta.set_all_beta_logits(SATURATED_LOGIT);
        let config = DeliberationConfig::new(eta, LambdaSpec::GAMMA);
        let tables = transformed_evaluate(&chain2(), &theta, &config, 1e-12).unwrap();
        let tail = eta * gamma / (1.0 - gamma);
        assert!((tables.qc[(0, 0)] - (1.0 - tail)).abs() < 1e-12);
        assert!((tables.qc[(1, 0)] + tail).abs() < 1e-12);
    }

    #[test]
    fn mixed_objective_checks() {
        let alpha = StateOptionTable::from_flat(1, 2, vec![0.25, 0.75]);
        let q = StateOptionTable::from_flat(1, 2, vec![1.0, 2.0]);
        let d = StateOptionTable::from_flat(1, 2, vec![4.0, 8.0]);
        assert!((mixed_objective(&alpha, &q, &d, 0.0).unwrap() - 1.75).abs() < 1e-15);
        assert!((mixed_objective(&alpha, &q, &d, 0.5).unwrap() - (1.75 - 3.5)).abs() < 1e-15);
        let zero = StateOptionTable::zeros(1, 2);
        assert_eq!(
            mixed_objective(&alpha, &q, &zero, 0.0).unwrap(),
            mixed_objective(&alpha, &q, &zero, 3.0).unwrap()
        );
        let wrong = StateOptionTable::zeros(2, 2);
        assert!(mixed_objective(&alpha, &wrong, &d, 0.1).is_err());
        let unnormalized = StateOptionTable::from_flat(1, 2, vec![0.5, 0.75]);
        assert!(mixed_objective(&unnormalized, &q, &d, 0.1).is_err());
    }

    #[test]
    fn duration_closed_form() {
        let (d, rate) = expected_duration(0.0, 0.9, 0.02).unwrap();
        assert_eq!(d, 1.0);
        assert_eq!(rate, 0.02);
        let (d, rate) = expected_duration(0.5, 0.9, 1.0).unwrap();
        assert!((d - 1.0 / 0.55).abs() < 1e-12);
        assert!((rate - 0.55).abs() < 1e-12);
        let (d, _) = expected_duration(1.0, 0.99, 1.0).unwrap();
        assert!((d - 100.0).abs() < 1e-9);
        assert!(expected_duration(1.0, 1.0, 1.0).is_err());
        assert!(expected_duration(1.5, 0.5, 1.0).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DeliberationConfig::new(-0.1, LambdaSpec::ZERO).validate(0.9).is_err());
        assert!(DeliberationConfig::new(0.1, LambdaSpec::Value(1.0)).validate(0.9).is_err());
        assert_eq!(
            DeliberationConfig::new(0.1, LambdaSpec::GAMMA).validate(0.9).unwrap(),
            0.9
        );
        let parsed: Vec<LambdaSpec> = serde_json::from_str(r#"["zero", "gamma", 0.5]"#).unwrap();
        assert_eq!(parsed, vec![LambdaSpec::ZERO, LambdaSpec::GAMMA, LambdaSpec::Value(0.5)]);
    }
}
