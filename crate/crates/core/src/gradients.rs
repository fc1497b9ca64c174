//! Exact gradients of the mixed objective `J = alpha' (Q - eta D^lambda)`
//! with respect to the option policies and terminations.
//!
//! With `e_l(s', o) = sum_s d_l(s, o) K(s'|s, o)` the expected discounted
//! arrival in `s'` with `o` still running (`d_l` the `l`-discounted
//! occupancy of the augmented chain from `alpha`), the termination gradient
//! for a general cost discount `lambda` is
//!
//! `dJ/dtheta_beta(s', o) = -beta' [gamma e_gamma A + eta e_lambda (gamma - lambda A_D)]`
//!
//! where `A_D = D - sum mu D`. At `lambda = gamma` this is
//! `-gamma e_gamma beta' (A^c + eta)`. At `lambda = 0` the cost term is
//! weighted by `e_0`, the arrival mass straight out of `alpha`, rather than
//! by the discounted occupancy.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deliberation::{policy_cost, CostKind, DeliberationConfig, LambdaSpec};
use crate::error::{Error, Result};
use crate::linalg::{column, solve, solve_resolvent, sup_norm};
use crate::mdp::Mdp;
use crate::options::{OptionProbs, Theta, ValueTables};
use crate::table::StateOptionTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// `J = alpha' Q`, no cost.
    Plain,
    /// `J = alpha' (Q - eta D^gamma)`.
    LambdaGamma,
    /// `J = alpha' (Q - eta D^0)`.
    LambdaZero,
}

impl Regime {
    fn lambda(self) -> Option<LambdaSpec> {
        match self {
            Self::Plain => None,
            Self::LambdaGamma => Some(LambdaSpec::GAMMA),
            Self::LambdaZero => Some(LambdaSpec::ZERO),
        }
    }
}

/// Gradient blocks laid out like `Theta::theta_pi` and `Theta::theta_beta`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientReport {
    pub d_theta_pi: Vec<f64>,
    pub d_theta_beta: Vec<f64>,
    pub regime: Regime,
}

fn check_alpha(theta: &Theta, alpha: &StateOptionTable) -> Result<()> {
    if alpha.n_states() != theta.n_states() || alpha.n_options() != theta.n_options() {
        return Err(Error::ShapeMismatch("alpha must be states x options".into()));
    }
    if alpha.as_slice().iter().any(|&w| !(w >= 0.0)) {
        return Err(Error::InvalidConfig("alpha has negative or NaN mass".into()));
    }
    let mass = alpha.sum();
    if (mass - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidConfig(format!("alpha sums to {mass}, not 1")));
    }
    Ok(())
}

/// Solves `d = alpha + M' d` where `M` is the augmented chain matrix at `discount`.
fn occupancy_from(
    chain: &DMatrix<f64>,
    alpha: &StateOptionTable,
    tol: f64,
) -> Result<Vec<f64>> {
    let mt = chain.transpose();
    let d = solve_resolvent(&mt, column(alpha.as_slice()))?;
    let residual = sup_norm((&mt * &d + column(alpha.as_slice()) - &d).iter().copied());
    if residual > tol {
        return Err(Error::NotConverged {
            iterations: 0,
            residual,
        });
    }
    Ok(d.as_slice().to_vec())
}

/// Discounted visit measure `d(s,o) = sum_t gamma^t P(z_t = (s,o))` of the
/// augmented chain started from `alpha`. Its mass is `1 / (1 - gamma)`.
pub fn discounted_occupancy(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    tol: f64,
) -> Result<StateOptionTable> {
    theta.check_against(mdp)?;
    check_alpha(theta, alpha)?;
    let probs = theta.probabilities();
    let chain = probs.chain_matrix(&probs.state_kernel(mdp), mdp.gamma());
    let d = occupancy_from(&chain, alpha, tol)?;
    Ok(StateOptionTable::from_flat(theta.n_states(), theta.n_options(), d))
}

/// Occupancy over `(s, o, a)`: `d(s,o) pi(a|s,o)`, laid out like `theta_pi`.
pub fn action_occupancy(theta: &Theta, occupancy: &StateOptionTable) -> Vec<f64> {
    let mut out = vec![0.0; theta.theta_pi.len()];
    for s in 0..theta.n_states() {
        for o in 0..theta.n_options() {
            let pi = theta.pi(s, o);
            let start = theta.pi_index(o, s, 0);
            for (a, p) in pi.into_iter().enumerate() {
                out[start + a] = occupancy[(s, o)] * p;
            }
        }
    }
    out
}

/// Shared pieces for one `theta`.
struct Ingredients {
    probs: OptionProbs,
    kernel: Vec<Vec<(usize, f64)>>,
    values: ValueTables,
    /// `d_gamma`
    occupancy: Vec<f64>,
}

fn ingredients(mdp: &Mdp, theta: &Theta, alpha: &StateOptionTable, tol: f64) -> Result<Ingredients> {
    theta.check_against(mdp)?;
    check_alpha(theta, alpha)?;
    let probs = theta.probabilities();
    let kernel = probs.state_kernel(mdp);
    let chain = probs.chain_matrix(&kernel, mdp.gamma());
    let q = solve_resolvent(&chain, column(&probs.policy_reward(mdp)))?;
    let q = StateOptionTable::from_flat(theta.n_states(), theta.n_options(), q.as_slice().to_vec());
    let values = ValueTables::from_q(q, &probs);
    let occupancy = occupancy_from(&chain, alpha, tol)?;
    Ok(Ingredients {
        probs,
        kernel,
        values,
        occupancy,
    })
}

/// `U(s',o) = (1 - beta) x(s',o) + beta sum mu x(s',.)` for a flat table `x`.
fn utility(probs: &OptionProbs, x: &[f64], s2: usize, o: usize) -> f64 {
    let b = probs.beta[s2 * probs.n_options + o];
    (1.0 - b) * x[s2 * probs.n_options + o] + b * probs.mu_average(x, s2)
}

/// Softmax chain rule: `grad[a'] += w pi(a') (f(a') - sum_a pi f(a))`.
fn softmax_accumulate(
    probs: &OptionProbs,
    weights: &[f64],
    action_value: impl Fn(usize, usize, usize) -> f64,
    out: &mut [f64],
) {
    let (ns, na, no) = (probs.n_states, probs.n_actions, probs.n_options);
    for z in 0..ns * no {
        let w = weights[z];
        if w == 0.0 {
            continue;
        }
        let (s, o) = (z / no, z % no);
        let pi = probs.pi_row(z);
        let f: Vec<f64> = (0..na).map(|a| action_value(s, o, a)).collect();
        let mean: f64 = pi.iter().zip(&f).map(|(p, v)| p * v).sum();
        let start = (o * ns + s) * na;
        for a in 0..na {
            out[start + a] += w * pi[a] * (f[a] - mean);
        }
    }
}

fn plain_policy_gradient(mdp: &Mdp, ing: &Ingredients) -> Vec<f64> {
    let probs = &ing.probs;
    let q = ing.values.q.as_slice();
    let gamma = mdp.gamma();
    let mut out = vec![0.0; probs.pi.len()];
    softmax_accumulate(
        probs,
        &ing.occupancy,
        |s, o, a| {
            let cont: f64 = mdp
                .successors(s, a)
                .iter()
                .map(|&(s2, p)| p * utility(probs, q, s2, o))
                .sum();
            mdp.reward(s, a) + gamma * cont
        },
        &mut out,
    );
    out
}

/// Exact `dJ/dtheta_pi` for `J = alpha' Q` with `theta_beta`, `theta_mu`
/// held fixed: `d(z) pi(a'|z) (Qt(z,a') - sum_a pi Qt(z,a))` with
/// `Qt(z,a) = r(s,a) + gamma sum P U(s',o)`.
pub fn option_policy_gradient(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    tol: f64,
) -> Result<Vec<f64>> {
    let ing = ingredients(mdp, theta, alpha, tol)?;
    Ok(plain_policy_gradient(mdp, &ing))
}

/// `e_l(s', o) = sum_s d_l(s,o) K(s'|s,o)`.
fn arrival(ing: &Ingredients, d: &[f64]) -> Vec<f64> {
    let no = ing.probs.n_options;
    let mut e = vec![0.0; d.len()];
    for (z, row) in ing.kernel.iter().enumerate() {
        let o = z % no;
        for &(s2, p) in row {
            e[s2 * no + o] += d[z] * p;
        }
    }
    e
}

/// Cost-side quantities for one lambda.
struct CostSide {
    lambda: f64,
    /// `D^lambda`
    d: Vec<f64>,
    /// `d_lambda`
    occupancy: Vec<f64>,
}

fn cost_side(
    mdp: &Mdp,
    ing: &Ingredients,
    alpha: &StateOptionTable,
    lambda: f64,
    tol: f64,
) -> Result<CostSide> {
    let probs = &ing.probs;
    let cost = policy_cost(mdp, probs, &CostKind::Switching);
    if lambda == 0.0 {
        return Ok(CostSide {
            lambda,
            d: cost,
            occupancy: alpha.as_slice().to_vec(),
        });
    }
    let chain = probs.chain_matrix(&ing.kernel, lambda);
    let d = solve_resolvent(&chain, column(&cost))?.as_slice().to_vec();
    let occupancy = occupancy_from(&chain, alpha, tol)?;
    Ok(CostSide {
        lambda,
        d,
        occupancy,
    })
}

fn check_cost(config: &DeliberationConfig) -> Result<()> {
    match config.cost {
        CostKind::Switching => Ok(()),
        CostKind::Custom(_) => Err(Error::Unsupported(
            "analytic gradients are only available for the switching cost".into(),
        )),
    }
}

fn cost_policy_gradient(mdp: &Mdp, ing: &Ingredients, side: &CostSide, eta: f64, out: &mut [f64]) {
    let probs = &ing.probs;
    let no = probs.n_options;
    let gamma = mdp.gamma();
    let weights: Vec<f64> = side.occupancy.iter().map(|d| -eta * d).collect();
    softmax_accumulate(
        probs,
        &weights,
        |s, o, a| {
            mdp.successors(s, a)
                .iter()
                .map(|&(s2, p)| {
                    p * (gamma * probs.beta[s2 * no + o] + side.lambda * utility(probs, &side.d, s2, o))
                })
                .sum()
        },
        out,
    );
}

fn termination_from(
    theta: &Theta,
    ing: &Ingredients,
    gamma: f64,
    cost: Option<(&CostSide, f64)>,
) -> Vec<f64> {
    let (ns, no) = (theta.n_states(), theta.n_options());
    let e_gamma = arrival(ing, &ing.occupancy);
    let cost = cost.map(|(side, eta)| {
        let e = arrival(ing, &side.occupancy);
        let ad = ValueTables::from_q(
            StateOptionTable::from_flat(ns, no, side.d.clone()),
            &ing.probs,
        )
        .a;
        (side, eta, e, ad)
    });
    let mut out = vec![0.0; theta.theta_beta.len()];
    for s in 0..ns {
        for o in 0..no {
            let z = s * no + o;
            let mut g = gamma * e_gamma[z] * ing.values.a[(s, o)];
            if let Some((side, eta, e, ad)) = &cost {
                g += eta * e[z] * (gamma - side.lambda * ad[(s, o)]);
            }
            out[theta.beta_index(s, o)] = -theta.beta_slope(s, o) * g;
        }
    }
    out
}

/// Exact `dJ/dtheta_beta` for the regime's objective, with `theta_pi` and
/// `theta_mu` held fixed. `Plain` ignores `config.eta`; the cost regimes
/// use their own lambda and ignore `config.lambda`.
pub fn termination_gradient(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    config: &DeliberationConfig,
    regime: Regime,
    tol: f64,
) -> Result<Vec<f64>> {
    Ok(gradient(mdp, theta, alpha, config, regime, tol)?.d_theta_beta)
}

/// Both gradient blocks for the regime's objective.
pub fn gradient(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    config: &DeliberationConfig,
    regime: Regime,
    tol: f64,
) -> Result<GradientReport> {
    match regime.lambda() {
        None => {
            let ing = ingredients(mdp, theta, alpha, tol)?;
            Ok(GradientReport {
                d_theta_pi: plain_policy_gradient(mdp, &ing),
                d_theta_beta: termination_from(theta, &ing, mdp.gamma(), None),
                regime,
            })
        }
        Some(lambda) => {
            let config = DeliberationConfig {
                lambda,
                ..config.clone()
            };
            let mut report = gradient_general(mdp, theta, alpha, &config, tol)?;
            report.regime = regime;
            Ok(report)
        }
    }
}

/// Both gradient blocks of `alpha' (Q - eta D^lambda)` for the configured
/// lambda. The report is tagged with the nearest named regime.
pub fn gradient_general(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    config: &DeliberationConfig,
    tol: f64,
) -> Result<GradientReport> {
    check_cost(config)?;
    let lambda = config.validate(mdp.gamma())?;
    let ing = ingredients(mdp, theta, alpha, tol)?;
    let side = cost_side(mdp, &ing, alpha, lambda, tol)?;
    let mut d_theta_pi = plain_policy_gradient(mdp, &ing);
    cost_policy_gradient(mdp, &ing, &side, config.eta, &mut d_theta_pi);
    let d_theta_beta = termination_from(theta, &ing, mdp.gamma(), Some((&side, config.eta)));
    let regime = if config.eta == 0.0 {
        Regime::Plain
    } else if lambda == 0.0 {
        Regime::LambdaZero
    } else {
        Regime::LambdaGamma
    };
    Ok(GradientReport {
        d_theta_pi,
        d_theta_beta,
        regime,
    })
}

/// `dJ/dtheta_beta` of `alpha' (Q - eta D^lambda)` for any lambda in `[0, 1)`.
pub fn termination_gradient_general(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    config: &DeliberationConfig,
    tol: f64,
) -> Result<Vec<f64>> {
    Ok(gradient_general(mdp, theta, alpha, config, tol)?.d_theta_beta)
}

/// Margin-form termination direction `-gamma e_gamma beta' (adv + eta)`,
/// with `adv = A^c` under `LambdaGamma` and the original-reward `A` under
/// `LambdaZero`. It is the exact gradient for `Plain` and `LambdaGamma`;
/// under `LambdaZero` the exact gradient weights the eta term by `e_0`
/// instead of `e_gamma`.
pub fn termination_margin_direction(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    config: &DeliberationConfig,
    regime: Regime,
    tol: f64,
) -> Result<Vec<f64>> {
    check_cost(config)?;
    config.validate(mdp.gamma())?;
    let ing = ingredients(mdp, theta, alpha, tol)?;
    let (ns, no) = (theta.n_states(), theta.n_options());
    let (adv, eta) = match regime {
        Regime::Plain => (ing.values.a.clone(), 0.0),
        Regime::LambdaZero => (ing.values.a.clone(), config.eta),
        Regime::LambdaGamma => {
            let side = cost_side(mdp, &ing, alpha, mdp.gamma(), tol)?;
            let qc: Vec<f64> = ing
                .values
                .q
                .as_slice()
                .iter()
                .zip(&side.d)
                .map(|(q, d)| q - config.eta * d)
                .collect();
            let qc = StateOptionTable::from_flat(ns, no, qc);
            (ValueTables::from_q(qc, &ing.probs).a, config.eta)
        }
    };
    let e = arrival(&ing, &ing.occupancy);
    let gamma = mdp.gamma();
    let mut out = vec![0.0; theta.theta_beta.len()];
    for s in 0..ns {
        for o in 0..no {
            out[theta.beta_index(s, o)] =
                -gamma * e[s * no + o] * theta.beta_slope(s, o) * (adv[(s, o)] + eta);
        }
    }
    Ok(out)
}

/// Solves the differentiated intra-option Bellman equations for every
/// termination parameter at once. For parameter `j = (s*, o*)` the
/// derivative table `X_j` satisfies `X_j = R_j + M X_j` with the "reward"
/// `R_j(s, o) = -[o = o*] gamma K(s*|s,o) beta'(s*,o*) (adv(s*,o*) + margin)`;
/// the gradient is `alpha' X_j`.
fn exact_bellman_route(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    kernel: &[Vec<(usize, f64)>],
    chain: &DMatrix<f64>,
    adv: &StateOptionTable,
    margin: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let (ns, no) = (theta.n_states(), theta.n_options());
    let n = ns * no;
    let gamma = mdp.gamma();
    let n_params = theta.theta_beta.len();
    let mut rhs = DMatrix::<f64>::zeros(n, n_params);
    for (z, row) in kernel.iter().enumerate() {
        let o = z % no;
        for &(s_star, p) in row {
            let j = theta.beta_index(s_star, o);
            rhs[(z, j)] -= gamma * p * theta.beta_slope(s_star, o) * (adv[(s_star, o)] + margin);
        }
    }
    let system = DMatrix::<f64>::identity(n, n) - chain;
    let x = solve(system.clone(), rhs.clone())?;
    let residual = sup_norm((&system * &x - &rhs).iter().copied());
    if residual > tol {
        return Err(Error::NotConverged {
            iterations: 0,
            residual,
        });
    }
    let a = column(alpha.as_slice());
    Ok((x.transpose() * a).as_slice().to_vec())
}

/// `dJ/dtheta_beta` for `J = alpha' Q` through the recursive derivative of
/// the intra-option Bellman equations rather than the occupancy expectation.
pub fn termination_gradient_exact_bellman(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    tol: f64,
) -> Result<Vec<f64>> {
    let ing = ingredients(mdp, theta, alpha, tol)?;
    let chain = ing.probs.chain_matrix(&ing.kernel, mdp.gamma());
    exact_bellman_route(
        mdp,
        theta,
        alpha,
        &ing.kernel,
        &chain,
        &ing.values.a,
        0.0,
        tol,
    )
}

/// The same recursion on the MDP with reward `r - eta c`: the values are
/// `Q^c`, and differentiating the cost `gamma beta(s*,o*)` inside the
/// reward adds `eta` to the advantage. Equals the `LambdaGamma` gradient.
pub fn termination_gradient_exact_bellman_transformed(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &StateOptionTable,
    eta: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    if !(eta >= 0.0 && eta.is_finite()) {
        return Err(Error::InvalidConfig(format!("eta must be >= 0, got {eta}")));
    }
    theta.check_against(mdp)?;
    check_alpha(theta, alpha)?;
    let probs = theta.probabilities();
    let kernel = probs.state_kernel(mdp);
    let chain = probs.chain_matrix(&kernel, mdp.gamma());
    let cost = policy_cost(mdp, &probs, &CostKind::Switching);
    let reward: Vec<f64> = probs
        .policy_reward(mdp)
        .iter()
        .zip(&cost)
        .map(|(r, c)| r - eta * c)
        .collect();
    let qc = solve_resolvent(&chain, column(&reward))?;
    let qc = StateOptionTable::from_flat(theta.n_states(), theta.n_options(), qc.as_slice().to_vec());
    let ac = ValueTables::from_q(qc, &probs).a;
    exact_bellman_route(mdp, theta, alpha, &kernel, &chain, &ac, eta, tol)
}

/// Parameter block of a coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Block {
    Pi,
    Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coordinate {
    pub block: Block,
    /// Flat index into the block.
    pub index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoordinateCheck {
    pub coordinate: Coordinate,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(1, |analytic|)`
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceReport {
    pub checks: Vec<CoordinateCheck>,
    pub worst: Option<CoordinateCheck>,
}

impl FiniteDifferenceReport {
    pub fn max_relative_error(&self) -> f64 {
        self.worst.map_or(0.0, |c| c.relative_error)
    }

    fn from_checks(checks: Vec<CoordinateCheck>) -> Self {
        // first maximal entry, so the report does not depend on ordering ties
        let worst = checks
            .iter()
            .copied()
            .fold(None, |best: Option<CoordinateCheck>, c| match best {
                Some(b) if b.relative_error >= c.relative_error => Some(b),
                _ => Some(c),
            });
        Self { checks, worst }
    }
}

fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(1.0)
}

/// Central differences of a function of a flat vector at the listed indices.
pub fn finite_difference_vector<F>(
    objective: F,
    x: &[f64],
    analytic: &[f64],
    indices: &[usize],
    h: f64,
) -> Result<FiniteDifferenceReport>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {h}")));
    }
    if analytic.len() != x.len() {
        return Err(Error::ShapeMismatch("gradient and point differ in length".into()));
    }
    let checks = indices
        .par_iter()
        .map(|&i| {
            crate::error::check_index("coordinate", i, x.len())?;
            let mut plus = x.to_vec();
            plus[i] += h;
            let mut minus = x.to_vec();
            minus[i] -= h;
            let numeric = (objective(&plus)? - objective(&minus)?) / (2.0 * h);
            Ok(CoordinateCheck {
                coordinate: Coordinate {
                    block: Block::Pi,
                    index: i,
                },
                analytic: analytic[i],
                numeric,
                relative_error: relative_error(analytic[i], numeric),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FiniteDifferenceReport::from_checks(checks))
}

/// Central differences `(f(theta + h e) - f(theta - h e)) / 2h` of an
/// objective on `Theta` at the given coordinates, compared with `analytic`.
/// Coordinates are evaluated independently, in parallel.
pub fn finite_difference_check<F>(
    objective: F,
    theta: &Theta,
    analytic: &GradientReport,
    coordinates: &[Coordinate],
    h: f64,
) -> Result<FiniteDifferenceReport>
where
    F: Fn(&Theta) -> Result<f64> + Sync,
{
    if !(h > 0.0) {
        return Err(Error::InvalidConfig(format!("step must be positive, got {h}")));
    }
    if analytic.d_theta_pi.len() != theta.theta_pi.len()
        || analytic.d_theta_beta.len() != theta.theta_beta.len()
    {
        return Err(Error::ShapeMismatch("gradient report does not match theta".into()));
    }
    let checks = coordinates
        .par_iter()
        .map(|&c| {
            let (len, g) = match c.block {
                Block::Pi => (theta.theta_pi.len(), &analytic.d_theta_pi),
                Block::Beta => (theta.theta_beta.len(), &analytic.d_theta_beta),
            };
            crate::error::check_index("coordinate", c.index, len)?;
            let shifted = |delta: f64| {
                let mut t = theta.clone();
                match c.block {
                    Block::Pi => t.theta_pi[c.index] += delta,
                    Block::Beta => t.theta_beta[c.index] += delta,
                }
                objective(&t)
            };
            let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);
            Ok(CoordinateCheck {
                coordinate: c,
                analytic: g[c.index],
                numeric,
                relative_error: relative_error(g[c.index], numeric),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FiniteDifferenceReport::from_checks(checks))
}

/// Every coordinate of both blocks.
pub fn all_coordinates(theta: &Theta) -> Vec<Coordinate> {
    let pi = (0..theta.theta_pi.len()).map(|index| Coordinate {
        block: Block::Pi,
        index,
    });
    let beta = (0..theta.theta_beta.len()).map(|index| Coordinate {
        block: Block::Beta,
        index,
    });
    pi.chain(beta).collect()
}

/// The `n_largest` coordinates of each block by `|gradient|` plus
/// `n_random` further ones per block drawn with `rng`.
pub fn select_coordinates<R: rand::Rng + ?Sized>(
    report: &GradientReport,
    n_largest: usize,
    n_random: usize,
    rng: &mut R,
) -> Vec<Coordinate> {
    use rand::seq::SliceRandom;
    let mut out = Vec::new();
    for (block, g) in [(Block::Pi, &report.d_theta_pi), (Block::Beta, &report.d_theta_beta)] {
        let mut order: Vec<usize> = (0..g.len()).collect();
        order.sort_by(|&i, &j| g[j].abs().total_cmp(&g[i].abs()).then(i.cmp(&j)));
        let (top, rest) = order.split_at(n_largest.min(order.len()));
        let mut rest = rest.to_vec();
        rest.shuffle(rng);
        for &index in top.iter().chain(rest.iter().take(n_random)) {
            out.push(Coordinate { block, index });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::deliberation::{deliberation_value, mixed_objective};
    use crate::mdp::fixtures::{bandit, chain2, random_mdp, GO, STAY};
    use crate::options::{intra_option_evaluate, start_distribution, SATURATED_LOGIT};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn setup(seed: u64) -> (Mdp, Theta, StateOptionTable) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mdp = random_mdp(5, 3, 0.9, &mut rng);
        let theta = Theta::random(5, 3, 3, 0.2, 1.0, &mut rng);
        let alpha = start_distribution(&mdp, &theta);
        (mdp, theta, alpha)
    }

    fn library_objective<'a>(
        mdp: &'a Mdp,
        alpha: &StateOptionTable,
        config: &DeliberationConfig,
    ) -> impl Fn(&Theta) -> Result<f64> + Sync + 'a {
        let alpha = alpha.clone();
        let config = config.clone();
        move |t: &Theta| {
            let q = intra_option_evaluate(mdp, t, 1e-8)?.q;
            let d = deliberation_value(mdp, t, &config, 1e-8)?;
            mixed_objective(&alpha, &q, &d, config.eta)
        }
    }

    #[test]
    fn occupancy_mass_and_gamma_zero() {
        let (mdp, theta, alpha) = setup(1);
        let d = discounted_occupancy(&mdp, &theta, &alpha, 1e-10).unwrap();
        assert!((d.sum() - 10.0).abs() < 1e-9);
        let mdp0 = mdp.with_gamma(0.0).unwrap();
        let d0 = discounted_occupancy(&mdp0, &theta, &alpha, 1e-10).unwrap();
        assert_eq!(d0.as_slice(), alpha.as_slice());
    }

    #[test]
    fn constant_action_values_give_zero_policy_gradient() {
        // every action has the same reward and the same successor law
        let mdp = bandit(&[0.5, 0.5, 0.5], 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let theta = Theta::random(1, 3, 2, 0.1, 1.0, &mut rng);
        let alpha = start_distribution(&mdp, &theta);
        let g = option_policy_gradient(&mdp, &theta, &alpha, 1e-10).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn bandit_gradient_favours_better_arm() {
        let mdp = bandit(&[1.0, 0.0], 0.5);
        let theta = Theta::zeros(1, 2, 1, 0.0);
        let alpha = start_distribution(&mdp, &theta);
        let g = option_policy_gradient(&mdp, &theta, &alpha, 1e-10).unwrap();
        assert!(g[0] > 0.0 && g[1] < 0.0);
        assert!((g[0] + g[1]).abs() < 1e-12);
    }

    #[test]
    fn eta_zero_collapses_regimes() {
        let (mdp, theta, alpha) = setup(2);
        let config = DeliberationConfig::new(0.0, LambdaSpec::GAMMA);
        let plain = gradient(&mdp, &theta, &alpha, &config, Regime::Plain, 1e-10).unwrap();
        for regime in [Regime::LambdaGamma, Regime::LambdaZero] {
            let g = gradient(&mdp, &theta, &alpha, &config, regime, 1e-10).unwrap();
            for (x, y) in g.d_theta_beta.iter().zip(&plain.d_theta_beta) {
                assert!((x - y).abs() <= 1e-12);
            }
            for (x, y) in g.d_theta_pi.iter().zip(&plain.d_theta_pi) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn termination_gradient_opposes_advantage() {
        // option 0 goes, option 1 stays, mu prefers staying
        let mut theta = Theta::zeros(2, 2, 2, 0.2);
        for s in 0..2 {
            let i = theta.pi_index(0, s, GO);
            theta.theta_pi[i] = SATURATED_LOGIT;
            let i = theta.pi_index(1, s, STAY);
            theta.theta_pi[i] = SATURATED_LOGIT;
        }
        theta.set_greedy_mu(&[1, 1]).unwrap();
        let mdp = chain2();
        let alpha = start_distribution(&mdp, &theta);
        let values = intra_option_evaluate(&mdp, &theta, 1e-12).unwrap();
        let config = DeliberationConfig::new(0.0, LambdaSpec::GAMMA);
        let g = termination_gradient(&mdp, &theta, &alpha, &config, Regime::Plain, 1e-12).unwrap();
        let mut strict = 0;
        for s in 0..2 {
            for o in 0..2 {
                let gi = g[theta.beta_index(s, o)];
                let adv = values.a[(s, o)];
                assert!(gi * adv <= 0.0, "({s},{o}) grad {gi} adv {adv}");
                if adv > 1e-9 && gi < 0.0 {
                    strict += 1;
                }
            }
        }
        assert!(strict > 0);
    }

    #[test]
    fn library_finite_differences_all_regimes() {
        let (mdp, theta, alpha) = setup(3);
        for (regime, eta) in [
            (Regime::Plain, 0.0),
            (Regime::LambdaGamma, 0.1),
            (Regime::LambdaZero, 0.1),
        ] {
            let lambda = regime.lambda().unwrap_or(LambdaSpec::GAMMA);
            let config = DeliberationConfig::new(eta, lambda);
            let report = gradient(&mdp, &theta, &alpha, &config, regime, 1e-10).unwrap();
            let fd = finite_difference_check(
                library_objective(&mdp, &alpha, &config),
                &theta,
                &report,
                &all_coordinates(&theta),
                1e-6,
            )
            .unwrap();
            assert!(fd.max_relative_error() < 1e-6, "{regime:?}: {:?}", fd.worst);
        }
    }

    #[test]
    fn general_lambda_matches_finite_differences() {
        let (mdp, theta, alpha) = setup(5);
        let config = DeliberationConfig::new(0.3, LambdaSpec::Value(0.5));
        let report = gradient_general(&mdp, &theta, &alpha, &config, 1e-10).unwrap();
        let fd = finite_difference_check(
            library_objective(&mdp, &alpha, &config),
            &theta,
            &report,
            &all_coordinates(&theta),
            1e-6,
        )
        .unwrap();
        assert!(fd.max_relative_error() < 1e-6, "{:?}", fd.worst);
    }

    #[test]
    fn exact_bellman_routes_agree() {
        let (mdp, theta, alpha) = setup(6);
        let config = DeliberationConfig::new(0.05, LambdaSpec::GAMMA);
        let plain = termination_gradient(&mdp, &theta, &alpha, &config, Regime::Plain, 1e-10).unwrap();
        let bellman = termination_gradient_exact_bellman(&mdp, &theta, &alpha, 1e-10).unwrap();
        assert!(crate::table::max_abs_diff(&plain, &bellman) < 1e-9);
        let lg = termination_gradient(&mdp, &theta, &alpha, &config, Regime::LambdaGamma, 1e-10).unwrap();
        let transformed =
            termination_gradient_exact_bellman_transformed(&mdp, &theta, &alpha, 0.05, 1e-10).unwrap();
        assert!(crate::table::max_abs_diff(&lg, &transformed) < 1e-10);
        let margin =
            termination_margin_direction(&mdp, &theta, &alpha, &config, Regime::LambdaGamma, 1e-10)
                .unwrap();
        assert!(crate::table::max_abs_diff(&lg, &margin) < 1e-10);
    }

    #[test]
    fn chain2_hand_derivative() {
        // One option that always goes, beta = b everywhere, gamma = 1/2,
        // alpha on state 0. Going from 0 earns 1 and lands in 1; from 1 it
        // lands in 1. With one option V = Q, so A = 0 and dJ/dbeta = 0 at
        // eta = 0, while the lambda = gamma cost term is
        // -eta * dD(0)/dbeta with D(0) = gamma b / (1 - gamma) = b.
        let mut theta = Theta::zeros(2, 2, 1, 0.0);
        for s in 0..2 {
            let i = theta.pi_index(0, s, GO);
            theta.theta_pi[i] = SATURATED_LOGIT;
            let i = theta.pi_index(0, s, STAY);
            theta.theta_pi[i] = -SATURATED_LOGIT;
        }
        theta.set_all_beta_logits(0.3);
        let mdp = chain2();
        let alpha = start_distribution(&mdp, &theta);
        let eta = 0.7;
        let config = DeliberationConfig::new(eta, LambdaSpec::GAMMA);
        let b = crate::options::sigmoid(0.3);
        let slope = b * (1.0 - b);
        let bellman = termination_gradient_exact_bellman(&mdp, &theta, &alpha, 1e-12).unwrap();
        assert!(bellman.iter().all(|g| g.abs() < 1e-15));
        let g = termination_gradient(&mdp, &theta, &alpha, &config, Regime::LambdaGamma, 1e-12).unwrap();
        // D(0) = sum_t gamma^t gamma b over visits to state 1 from time 0:
        // arrival weights at state 1 are gamma^t, t >= 0, so dD(0)/db = 1,
        // all of it through the beta parameter of state 1.
        assert!(g[theta.beta_index(0, 0)].abs() < 1e-15);
        assert!((g[theta.beta_index(1, 0)] + eta * slope).abs() < 1e-12);
    }

    #[test]
    fn unreachable_coordinate_has_zero_gradient() {
        // state 1 of a two-state MDP that is never entered
        let mdp = Mdp::new(
            2,
            1,
            0.9,
            vec![1.0, 0.0, 0.0, 1.0],
            vec![1.0, 0.0],
            vec![1.0, 0.0],
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let theta = Theta::random(2, 1, 2, 0.3, 1.0, &mut rng);
        let alpha = start_distribution(&mdp, &theta);
        let config = DeliberationConfig::new(0.1, LambdaSpec::GAMMA);
        for regime in [Regime::Plain, Regime::LambdaGamma, Regime::LambdaZero] {
            let g = termination_gradient(&mdp, &theta, &alpha, &config, regime, 1e-12).unwrap();
            for o in 0..2 {
                assert_eq!(g[theta.beta_index(1, o)], 0.0);
            }
        }
        let bellman = termination_gradient_exact_bellman(&mdp, &theta, &alpha, 1e-12).unwrap();
        for o in 0..2 {
            assert_eq!(bellman[theta.beta_index(1, o)], 0.0);
        }
    }

    #[test]
    fn finite_difference_on_polynomials() {
        let quadratic = |x: &[f64]| Ok(3.0 * x[0] * x[0] - 2.0 * x[0] * x[1] + 0.5 * x[1]);
        let x = [0.7, -1.3];
        let g = [6.0 * 0.7 + 2.6, -1.4 + 0.5];
        let report = finite_difference_vector(quadratic, &x, &g, &[0, 1], 1e-3).unwrap();
        assert!(report.max_relative_error() <= 1e-10);
        let linear = |x: &[f64]| Ok(4.0 * x[0] - x[1]);
        let report = finite_difference_vector(linear, &x, &[4.0, -1.0], &[0, 1], 1e-6).unwrap();
        assert!(report.max_relative_error() < 1e-9);
        assert!(finite_difference_vector(linear, &x, &[4.0, -1.0], &[0], 0.0).is_err());
    }

    #[test]
    fn custom_cost_is_unsupported() {
        struct Flat;
        impl crate::deliberation::ExpectedCost for Flat {
            fn expected_cost(&self, _: &OptionProbs, _: f64, _: usize, _: usize, _: usize, _: usize) -> f64 {
                1.0
            }
        }
        let (mdp, theta, alpha) = setup(9);
        let mut config = DeliberationConfig::new(0.1, LambdaSpec::GAMMA);
        config.cost = CostKind::Custom(std::sync::Arc::new(Flat));
        let err = gradient(&mdp, &theta, &alpha, &config, Regime::LambdaGamma, 1e-10).unwrap_err();
        assert!(matches!(err, Error::Unsupported(_)));
    }

    #[test]
    fn report_json_round_trip() {
        let (mdp, theta, alpha) = setup(10);
        let config = DeliberationConfig::new(0.02, LambdaSpec::ZERO);
        let report = gradient(&mdp, &theta, &alpha, &config, Regime::LambdaZero, 1e-10).unwrap();
        let text = serde_json::to_string(&report).unwrap();
        assert!(text.contains("\"lambda_zero\""));
        let back: GradientReport = serde_json::from_str(&text).unwrap();
        assert_eq!(back, report);
    }
}
