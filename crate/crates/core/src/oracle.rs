//! Brute-force reference computations. Nothing here calls the evaluation
//! code of `options` or `deliberation`: the augmented MDP is built by
//! explicit enumeration over `(s, o, a, s', o')`, solved by plain value
//! iteration or by a hand-written Gaussian elimination, and sampled directly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::deliberation::{CostKind, DeliberationConfig};
use crate::error::{Error, Result};
use crate::mdp::Mdp;
use crate::options::Theta;

/// The augmented chain over `z = s * n_options + o` with the option
/// policies marginalized out.
#[derive(Debug, Clone)]
pub struct AugmentedMdp {
    pub n_states: usize,
    pub n_options: usize,
    pub gamma: f64,
    /// Dense `[z][z']`.
    pub kernel: Vec<f64>,
    /// `sum_a pi(a|z) r(s,a)`
    pub reward: Vec<f64>,
    /// `sum_a pi(a|z) sum_s' P(s'|s,a) gamma beta(s',o)`
    pub cost: Vec<f64>,
    /// `d0(s) mu(o|s)`
    pub start: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
}

impl AugmentedMdp {
    pub fn build(mdp: &Mdp, theta: &Theta) -> Result<Self> {
        theta.validate()?;
        if theta.n_states() != mdp.n_states() || theta.n_actions() != mdp.n_actions() {
            return Err(Error::ShapeMismatch("theta does not match the MDP".into()));
        }
        let (ns, na, no) = (mdp.n_states(), mdp.n_actions(), theta.n_options());
        let n = ns * no;
        let gamma = mdp.gamma();
        let mut kernel = vec![0.0; n * n];
        let mut reward = vec![0.0; n];
        let mut cost = vec![0.0; n];
        let mut start = vec![0.0; n];
        let mus: Vec<Vec<f64>> = (0..ns).map(|s| theta.mu(s)).collect();
        for s in 0..ns {
            for o in 0..no {
                let z = s * no + o;
                start[z] = mdp.initial_dist()[s] * mus[s][o];
                let pi = theta.pi(s, o);
                for a in 0..na {
                    reward[z] += pi[a] * mdp.reward(s, a);
                    for s2 in 0..ns {
                        let p = pi[a] * mdp.transition_row(s, a)[s2];
                        if p == 0.0 {
                            continue;
                        }
                        let b = theta.beta(s2, o);
                        cost[z] += p * gamma * b;
                        for o2 in 0..no {
                            let stay = if o2 == o { 1.0 - b } else { 0.0 };
                            kernel[z * n + s2 * no + o2] += p * (stay + b * mus[s2][o2]);
                        }
                    }
                }
            }
        }
        let rows = (0..n)
            .map(|z| {
                (0..n)
                    .filter(|&z2| kernel[z * n + z2] != 0.0)
                    .map(|z2| (z2, kernel[z * n + z2]))
                    .collect()
            })
            .collect();
        Ok(Self {
            n_states: ns,
            n_options: no,
            gamma,
            kernel,
            reward,
            cost,
            start,
            rows,
        })
    }

    pub fn n(&self) -> usize {
        self.n_states * self.n_options
    }

    /// `r - eta c`
    pub fn transformed_reward(&self, eta: f64) -> Vec<f64> {
        self.reward.iter().zip(&self.cost).map(|(r, c)| r - eta * c).collect()
    }

    /// The chain as a one-action [`Mdp`] over augmented states.
    pub fn to_mdp(&self, reward: &[f64]) -> Result<Mdp> {
        Mdp::new(
            self.n(),
            1,
            self.gamma,
            self.kernel.clone(),
            reward.to_vec(),
            self.start.clone(),
        )
    }

    /// Iterates `x <- reward + discount P x` from zero until successive
    /// iterates are within `tol (1 - discount) / discount`, which bounds the
    /// distance to the fixed point by `tol`.
    pub fn evaluate_iterative(&self, reward: &[f64], discount: f64, tol: f64) -> Result<(Vec<f64>, usize)> {
        if !(tol > 0.0) || !(0.0..1.0).contains(&discount) {
            return Err(Error::InvalidConfig("need tol > 0 and discount in [0, 1)".into()));
        }
        let n = self.n();
        let mut x = vec![0.0; n];
        let mut next = vec![0.0; n];
        let stop = if discount == 0.0 { f64::INFINITY } else { tol * (1.0 - discount) / discount };
        for iteration in 1..=1_000_000 {
            let mut delta: f64 = 0.0;
            for z in 0..n {
                let cont: f64 = self.rows[z].iter().map(|&(z2, p)| p * x[z2]).sum();
                next[z] = reward[z] + discount * cont;
                delta = delta.max((next[z] - x[z]).abs());
            }
            std::mem::swap(&mut x, &mut next);
            if delta <= stop {
                return Ok((x, iteration));
            }
        }
        Err(Error::NotConverged {
            iterations: 1_000_000,
            residual: f64::NAN,
        })
    }

    /// Solves `(I - discount P) x = b` for each right-hand side by Gaussian
    /// elimination.
    pub fn evaluate_direct(&self, rhs: &[&[f64]], discount: f64) -> Result<Vec<Vec<f64>>> {
        let n = self.n();
        let mut a = vec![0.0; n * n];
        for z in 0..n {
            for z2 in 0..n {
                a[z * n + z2] = -discount * self.kernel[z * n + z2];
            }
            a[z * n + z] += 1.0;
        }
        gauss_solve(a, n, rhs)
    }
}

/// Gaussian elimination with partial pivoting on a dense row-major `n x n`
/// matrix, for several right-hand sides.
pub fn gauss_solve(mut a: Vec<f64>, n: usize, rhs: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
    let k = rhs.len();
    if a.len() != n * n || rhs.iter().any(|b| b.len() != n) {
        return Err(Error::ShapeMismatch("system and right-hand sides disagree".into()));
    }
    // right-hand sides stored row-major [row][k]
    let mut b = vec![0.0; n * k];
    for (j, col) in rhs.iter().enumerate() {
        for i in 0..n {
            b[i * k + j] = col[i];
        }
    }
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap_or(col);
        if a[pivot * n + col] == 0.0 {
            return Err(Error::Singular);
        }
        if pivot != col {
            for c in 0..n {
                a.swap(col * n + c, pivot * n + c);
            }
            for c in 0..k {
                b.swap(col * k + c, pivot * k + c);
            }
        }
        let p = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / p;
            if f == 0.0 {
                continue;
            }
            a[row * n + col] = 0.0;
            for c in col + 1..n {
                a[row * n + c] -= f * a[col * n + c];
            }
            for c in 0..k {
                b[row * k + c] -= f * b[col * k + c];
            }
        }
    }
    let mut x = vec![vec![0.0; n]; k];
    for row in (0..n).rev() {
        for (c, xc) in x.iter_mut().enumerate() {
            let mut acc = b[row * k + c];
            for j in row + 1..n {
                acc -= a[row * n + j] * xc[j];
            }
            xc[row] = acc / a[row * n + row];
        }
    }
    Ok(x)
}

fn switching_only(config: &DeliberationConfig) -> Result<f64> {
    if let CostKind::Custom(_) = config.cost {
        return Err(Error::Unsupported("the oracle models the switching cost only".into()));
    }
    if !(config.eta >= 0.0 && config.eta.is_finite()) {
        return Err(Error::InvalidConfig(format!("eta must be >= 0, got {}", config.eta)));
    }
    Ok(config.eta)
}

/// Option values by value iteration on the augmented MDP, with reward
/// `r - eta c` when a cost config is given (discount gamma either way).
pub fn augmented_value_iteration(
    mdp: &Mdp,
    theta: &Theta,
    cost: Option<&DeliberationConfig>,
    tol: f64,
) -> Result<Vec<f64>> {
    let aug = AugmentedMdp::build(mdp, theta)?;
    let reward = match cost {
        None => aug.reward.clone(),
        Some(config) => aug.transformed_reward(switching_only(config)?),
    };
    Ok(aug.evaluate_iterative(&reward, aug.gamma, tol)?.0)
}

/// `D^lambda` by value iteration on the cost stream.
pub fn augmented_cost_iteration(
    mdp: &Mdp,
    theta: &Theta,
    lambda: f64,
    tol: f64,
) -> Result<Vec<f64>> {
    let aug = AugmentedMdp::build(mdp, theta)?;
    if lambda == 0.0 {
        return Ok(aug.cost.clone());
    }
    Ok(aug.evaluate_iterative(&aug.cost, lambda, tol)?.0)
}

/// `sum_z alpha(z) (Q(z) - eta D^lambda(z))` by direct elimination, with
/// `alpha` given as a flat table over `z`. `lambda = None` means no cost.
pub fn direct_objective(
    mdp: &Mdp,
    theta: &Theta,
    alpha: &[f64],
    eta: f64,
    lambda: Option<f64>,
) -> Result<f64> {
    let aug = AugmentedMdp::build(mdp, theta)?;
    if alpha.len() != aug.n() {
        return Err(Error::ShapeMismatch("alpha must cover the augmented states".into()));
    }
    let gamma = aug.gamma;
    let dot = |x: &[f64]| alpha.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
    match lambda {
        None => {
            let q = aug.evaluate_direct(&[&aug.reward], gamma)?;
            Ok(dot(&q[0]))
        }
        Some(l) if l == gamma => {
            let sol = aug.evaluate_direct(&[&aug.reward, &aug.cost], gamma)?;
            Ok(dot(&sol[0]) - eta * dot(&sol[1]))
        }
        Some(l) if l == 0.0 => {
            let q = aug.evaluate_direct(&[&aug.reward], gamma)?;
            Ok(dot(&q[0]) - eta * dot(&aug.cost))
        }
        Some(l) => {
            let q = aug.evaluate_direct(&[&aug.reward], gamma)?;
            let d = aug.evaluate_direct(&[&aug.cost], l)?;
            Ok(dot(&q[0]) - eta * dot(&d[0]))
        }
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    compensation: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.compensation += (self.sum - t) + x;
        } else {
            self.compensation += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn merge(&mut self, other: &Self) {
        self.add(other.sum);
        self.add(other.compensation);
    }

    pub fn value(&self) -> f64 {
        self.sum + self.compensation
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloEstimate {
    pub n_episodes: usize,
    pub horizon: usize,
    /// Estimate of `sum alpha Q`.
    pub mean_return: f64,
    /// Estimate of `sum alpha D^lambda`.
    pub mean_cost: f64,
    /// Estimate of `sum alpha (Q - eta D^lambda)`.
    pub mean_objective: f64,
    pub return_std_error: f64,
    pub cost_std_error: f64,
    pub objective_std_error: f64,
    /// `max |r| gamma^H / (1 - gamma)`
    pub return_bias_bound: f64,
    /// `gamma lambda^H / (1 - lambda)`
    pub cost_bias_bound: f64,
}

#[derive(Default, Clone, Copy)]
struct Moments {
    count: usize,
    sums: [CompensatedSum; 3],
    squares: [CompensatedSum; 3],
}

impl Moments {
    fn push(&mut self, xs: [f64; 3]) {
        self.count += 1;
        for i in 0..3 {
            self.sums[i].add(xs[i]);
            self.squares[i].add(xs[i] * xs[i]);
        }
    }

    fn merge(&mut self, other: &Self) {
        self.count += other.count;
        for i in 0..3 {
            self.sums[i].merge(&other.sums[i]);
            self.squares[i].merge(&other.squares[i]);
        }
    }

    fn mean_and_error(&self, i: usize) -> (f64, f64) {
        let n = self.count as f64;
        let mean = self.sums[i].value() / n;
        if self.count < 2 {
            return (mean, 0.0);
        }
        let var = ((self.squares[i].value() - n * mean * mean) / (n - 1.0)).max(0.0);
        (mean, (var / n).sqrt())
    }
}

fn draw(probs: &[f64], rng: &mut ChaCha8Rng) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

const EPISODES_PER_CHUNK: usize = 4096;

/// Estimates `sum alpha Q` and `sum alpha D^lambda` from `n_episodes`
/// rollouts of `horizon` steps under call-and-return execution. Each switch
/// at `s_{t+1}` incurs cost `gamma` discounted by `lambda^t`.
///
/// Episodes are split into fixed chunks with their own ChaCha stream derived
/// from one draw of `rng`, so the result does not depend on thread count.
pub fn monte_carlo_objective<R: Rng + ?Sized>(
    mdp: &Mdp,
    theta: &Theta,
    config: &DeliberationConfig,
    n_episodes: usize,
    horizon: usize,
    rng: &mut R,
) -> Result<MonteCarloEstimate> {
    if n_episodes == 0 || horizon == 0 {
        return Err(Error::InvalidConfig("need at least one episode and one step".into()));
    }
    let eta = switching_only(config)?;
    let lambda = config.validate(mdp.gamma())?;
    theta.validate()?;
    if theta.n_states() != mdp.n_states() || theta.n_actions() != mdp.n_actions() {
        return Err(Error::ShapeMismatch("theta does not match the MDP".into()));
    }
    let (ns, no) = (mdp.n_states(), theta.n_options());
    let gamma = mdp.gamma();
    let pis: Vec<Vec<f64>> = (0..ns * no).map(|z| theta.pi(z / no, z % no)).collect();
    let betas: Vec<f64> = (0..ns * no).map(|z| theta.beta(z / no, z % no)).collect();
    let mus: Vec<Vec<f64>> = (0..ns).map(|s| theta.mu(s)).collect();
    let base_seed: u64 = rng.gen();
    let n_chunks = n_episodes.div_ceil(EPISODES_PER_CHUNK);

    let chunks: Vec<Moments> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(base_seed);
            rng.set_stream(c as u64);
            let count = EPISODES_PER_CHUNK.min(n_episodes - c * EPISODES_PER_CHUNK);
            let mut m = Moments::default();
            for _ in 0..count {
                let mut s = draw(mdp.initial_dist(), &mut rng);
                let mut o = draw(&mus[s], &mut rng);
                let (mut g, mut cost) = (0.0, 0.0);
                let (mut disc_r, mut disc_c) = (1.0, 1.0);
                for _ in 0..horizon {
                    let a = draw(&pis[s * no + o], &mut rng);
                    let s2 = draw(mdp.transition_row(s, a), &mut rng);
                    g += disc_r * mdp.reward(s, a);
                    if rng.gen::<f64>() < betas[s2 * no + o] {
                        cost += disc_c * gamma;
                        o = draw(&mus[s2], &mut rng);
                    }
                    s = s2;
                    disc_r *= gamma;
                    disc_c *= lambda;
                }
                m.push([g, cost, g - eta * cost]);
            }
            m
        })
        .collect();
    let mut total = Moments::default();
    for chunk in &chunks {
        total.merge(chunk);
    }
    let (mean_return, return_std_error) = total.mean_and_error(0);
    let (mean_cost, cost_std_error) = total.mean_and_error(1);
    let (mean_objective, objective_std_error) = total.mean_and_error(2);
    let r_max = (0..ns)
        .flat_map(|s| (0..mdp.n_actions()).map(move |a| (s, a)))
        .map(|(s, a)| mdp.reward(s, a).abs())
        .fold(0.0, f64::max);
    let h = horizon as i32;
    Ok(MonteCarloEstimate {
        n_episodes,
        horizon,
        mean_return,
        mean_cost,
        mean_objective,
        return_std_error,
        cost_std_error,
        objective_std_error,
        return_bias_bound: r_max * gamma.powi(h) / (1.0 - gamma),
        cost_bias_bound: gamma * lambda.powi(h) / (1.0 - lambda),
    })
}

/// Outcome of scoring every deterministic policy over options.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuEnumeration {
    /// Best choice per state; the lowest code wins ties.
    pub best: Vec<usize>,
    pub best_objective: f64,
    /// Objective per policy, indexed by `sum_s choice[s] * n_options^s`.
    pub objectives: Vec<f64>,
}

pub const MAX_ENUMERATED_POLICIES: usize = 1_000_000;

/// Scores `sum_s d0(s) (Q - eta D^lambda)(s, mu(s))` for every deterministic
/// `mu` (with `epsilon_mu = 0`), solving each instance directly.
pub fn enumerate_deterministic_mu(
    mdp: &Mdp,
    theta: &Theta,
    config: &DeliberationConfig,
) -> Result<MuEnumeration> {
    let eta = switching_only(config)?;
    let lambda = config.validate(mdp.gamma())?;
    let (ns, no) = (theta.n_states(), theta.n_options());
    let total = (0..ns).try_fold(1usize, |acc, _| acc.checked_mul(no).filter(|&t| t <= MAX_ENUMERATED_POLICIES));
    let Some(total) = total else {
        return Err(Error::InstanceTooLarge(format!(
            "{no}^{ns} deterministic policies exceed {MAX_ENUMERATED_POLICIES}"
        )));
    };
    let mut objectives = Vec::with_capacity(total);
    let mut choices = vec![0usize; ns];
    let mut t = theta.clone();
    t.epsilon_mu = 0.0;
    for code in 0..total {
        let mut rest = code;
        for c in choices.iter_mut() {
            *c = rest % no;
            rest /= no;
        }
        for s in 0..ns {
            for o in 0..no {
                t.theta_mu[s * no + o] = if o == choices[s] { 1.0 } else { 0.0 };
            }
        }
        let mut alpha = vec![0.0; ns * no];
        for s in 0..ns {
            alpha[s * no + choices[s]] = mdp.initial_dist()[s];
        }
        let lambda = if eta == 0.0 { None } else { Some(lambda) };
        objectives.push(direct_objective(mdp, &t, &alpha, eta, lambda)?);
    }
    let best_code = crate::mdp::argmax(objectives.iter().copied());
    let mut rest = best_code;
    let best = (0..ns)
        .map(|_| {
            let c = rest % no;
            rest /= no;
            c
        })
        .collect();
    Ok(MuEnumeration {
        best,
        best_objective: objectives[best_code],
        objectives,
    })
}
