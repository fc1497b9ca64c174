//! Tabular asynchronous advantage option-critic.
//!
//! Each worker owns an environment and a ChaCha stream (`seed`, stream =
//! worker index). It snapshots the shared parameters, rolls out a segment
//! of at most `t_max` steps, forms n-step targets and adds its parameter
//! increments to the shared copy under a short lock.

use std::sync::{mpsc, Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{argmax, sample_categorical, Mdp};
use crate::options::{intra_option_evaluate, sigmoid, Theta};
use crate::table::StateOptionTable;

pub type WorkerRng = ChaCha8Rng;

/// Episodic environment with discrete states and actions.
pub trait Environment: Send {
    fn n_states(&self) -> usize;
    fn n_actions(&self) -> usize;
    /// Starts an episode and returns the first state.
    fn reset(&mut self, rng: &mut WorkerRng) -> usize;
    fn step(&mut self, action: usize, rng: &mut WorkerRng) -> EnvStep;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvStep {
    pub next_state: usize,
    pub reward: f64,
    pub done: bool,
}

/// An [`Mdp`] with a set of terminal states.
#[derive(Debug, Clone)]
pub struct MdpEnv {
    mdp: Arc<Mdp>,
    terminal: Arc<Vec<bool>>,
    state: usize,
}

impl MdpEnv {
    pub fn new(mdp: Arc<Mdp>, terminal: Arc<Vec<bool>>) -> Result<Self> {
        if terminal.len() != mdp.n_states() {
            return Err(Error::ShapeMismatch("one terminal flag per state expected".into()));
        }
        Ok(Self {
            mdp,
            terminal,
            state: 0,
        })
    }

    pub fn mdp(&self) -> &Mdp {
        &self.mdp
    }

    pub fn state(&self) -> usize {
        self.state
    }

    pub fn set_state(&mut self, s: usize) -> Result<()> {
        crate::error::check_index("state", s, self.mdp.n_states())?;
        self.state = s;
        Ok(())
    }
}

impl Environment for MdpEnv {
    fn n_states(&self) -> usize {
        self.mdp.n_states()
    }

    fn n_actions(&self) -> usize {
        self.mdp.n_actions()
    }

    fn reset(&mut self, rng: &mut WorkerRng) -> usize {
        self.state = sample_categorical(self.mdp.initial_dist(), rng);
        self.state
    }

    fn step(&mut self, action: usize, rng: &mut WorkerRng) -> EnvStep {
        let (next_state, reward) = crate::mdp::sample_transition(&self.mdp, self.state, action, rng)
            .expect("action index checked by the learner");
        self.state = next_state;
        EnvStep {
            next_state,
            reward,
            done: self.terminal[next_state],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    /// Clean rewards; `eta` enters only as the termination margin.
    Zero,
    /// `-eta` folded into the reward after each switch, plus the margin.
    Gamma,
}

/// State value used in the termination advantage `Q(s',o) - V(s')`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AdvantageBaseline {
    /// `V = max_o Q`
    Greedy,
    /// `V = sum_o mu_eps(o|s) Q`
    Soft,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct A2OCConfig {
    pub eta: f64,
    pub lambda_mode: LambdaMode,
    pub epsilon: f64,
    pub entropy_coef: f64,
    pub lr_q: f64,
    pub lr_pi: f64,
    pub lr_beta: f64,
    pub t_max: usize,
    pub t_min: usize,
    pub n_workers: usize,
    pub total_steps: u64,
    pub gamma: f64,
    pub seed: u64,
    pub n_options: usize,
    /// Episodes are cut after this many steps and restarted.
    pub max_episode_steps: usize,
    pub baseline: AdvantageBaseline,
    /// Initial `theta_beta` for every pair.
    pub init_beta_logit: f64,
    /// Initial `theta_pi` drawn uniformly from `[-init_pi_scale, init_pi_scale]`.
    pub init_pi_scale: f64,
}

impl Default for A2OCConfig {
    fn default() -> Self {
        Self {
            eta: 0.0,
            lambda_mode: LambdaMode::Zero,
            epsilon: 0.1,
            entropy_coef: 0.001,
            lr_q: 0.2,
            lr_pi: 0.5,
            lr_beta: 2.0,
            t_max: 20,
            t_min: 1,
            n_workers: 1,
            total_steps: 500_000,
            gamma: 0.99,
            seed: 0,
            n_options: 4,
            max_episode_steps: 1000,
            baseline: AdvantageBaseline::Greedy,
            init_beta_logit: 0.0,
            init_pi_scale: 0.0,
        }
    }
}

impl A2OCConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return bad(format!("eta must be >= 0, got {}", self.eta));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return bad(format!("epsilon {} outside [0, 1]", self.epsilon));
        }
        if !(self.entropy_coef >= 0.0 && self.entropy_coef.is_finite()) {
            return bad(format!("entropy_coef must be >= 0, got {}", self.entropy_coef));
        }
        for (name, lr) in [("lr_q", self.lr_q), ("lr_pi", self.lr_pi), ("lr_beta", self.lr_beta)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("{name} must be positive, got {lr}"));
            }
        }
        if self.t_min >= self.t_max {
            return bad(format!("t_min {} must be below t_max {}", self.t_min, self.t_max));
        }
        if self.n_workers == 0 || self.n_options == 0 || self.max_episode_steps == 0 {
            return bad("n_workers, n_options and max_episode_steps must be positive".into());
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad(format!("gamma {} outside [0, 1)", self.gamma));
        }
        if !self.init_beta_logit.is_finite() || !(self.init_pi_scale >= 0.0) {
            return bad("initial parameters must be finite".into());
        }
        Ok(())
    }

    fn reward_penalty(&self) -> f64 {
        match self.lambda_mode {
            LambdaMode::Zero => 0.0,
            LambdaMode::Gamma => self.eta,
        }
    }
}

/// Parameters shared by all workers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SharedParams {
    /// Option policies and terminations. `theta_mu` is kept equal to the
    /// critic and `epsilon_mu` to the exploration rate at the end of training.
    pub theta: Theta,
    /// Critic `Q(s, o)`.
    pub q: StateOptionTable,
    /// Global step counter.
    pub steps: u64,
}

impl SharedParams {
    pub fn init(n_states: usize, n_actions: usize, config: &A2OCConfig) -> Self {
        let mut theta = Theta::zeros(n_states, n_actions, config.n_options, config.epsilon);
        if config.init_pi_scale > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed_0f_7e7a);
            let scale = config.init_pi_scale;
            theta.theta_pi.iter_mut().for_each(|x| *x = rng.gen_range(-scale..scale));
        }
        theta.set_all_beta_logits(config.init_beta_logit);
        Self {
            theta,
            q: StateOptionTable::zeros(n_states, config.n_options),
            steps: 0,
        }
    }

    /// `theta` with the policy over options set to the greedy critic choice
    /// (`epsilon` mixing as given).
    pub fn policy_theta(&self, epsilon: f64) -> Theta {
        let mut theta = self.theta.clone();
        theta.theta_mu.copy_from_slice(self.q.as_slice());
        theta.epsilon_mu = epsilon;
        theta
    }
}

/// Argmax of `q_row` with probability `1 - epsilon` (lowest index on ties),
/// otherwise a uniform draw.
pub fn epsilon_soft_choice<R: Rng + ?Sized>(q_row: &[f64], epsilon: f64, rng: &mut R) -> usize {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        rng.gen_range(0..q_row.len())
    } else {
        argmax(q_row.iter().copied())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SegmentStep {
    pub state: usize,
    pub option: usize,
    pub action: usize,
    /// Environment reward.
    pub reward: f64,
    /// Reward used for learning, after the deliberation penalty.
    pub shaped_reward: f64,
    pub next_state: usize,
    /// `beta(next_state, option)`; `None` when `next_state` ends the episode.
    pub beta: Option<f64>,
    /// The option terminated in `next_state` and a new one was drawn.
    pub switched: bool,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegmentEnd {
    /// The environment reached a terminal state.
    EpisodeEnd,
    /// `t_max` steps, or a termination after more than `t_min` steps.
    Truncated,
    /// `max_episode_steps` reached; the episode restarts next segment.
    EpisodeLimit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub steps: Vec<SegmentStep>,
    pub end: SegmentEnd,
    /// State and active option after the last step.
    pub final_state: usize,
    pub final_option: usize,
}

/// Per-worker state carried across segments.
#[derive(Debug, Clone)]
pub struct WorkerState {
    pub state: usize,
    pub option: usize,
    /// A switch happened on arrival in `state`; its penalty goes on the next step.
    pub pending_switch: bool,
    pub needs_reset: bool,
    pub episode: EpisodeStats,
}

impl WorkerState {
    pub fn new(n_options: usize) -> Self {
        Self {
            state: 0,
            option: 0,
            pending_switch: false,
            needs_reset: true,
            episode: EpisodeStats::new(n_options),
        }
    }

    /// Starts mid-episode in `(state, option)`.
    pub fn at(state: usize, option: usize, n_options: usize) -> Self {
        Self {
            state,
            option,
            pending_switch: false,
            needs_reset: false,
            episode: EpisodeStats::new(n_options),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EpisodeStats {
    pub steps: usize,
    pub discounted_return: f64,
    discount: f64,
    pub beta_sum: f64,
    pub beta_count: usize,
    pub switches: usize,
    pub options_used: Vec<bool>,
}

impl EpisodeStats {
    fn new(n_options: usize) -> Self {
        Self {
            steps: 0,
            discounted_return: 0.0,
            discount: 1.0,
            beta_sum: 0.0,
            beta_count: 0,
            switches: 0,
            options_used: vec![false; n_options],
        }
    }
}

/// Rolls out one segment from the worker's persistent state.
pub fn collect_segment<E: Environment + ?Sized>(
    env: &mut E,
    theta: &Theta,
    q: &StateOptionTable,
    worker: &mut WorkerState,
    config: &A2OCConfig,
    rng: &mut WorkerRng,
) -> Segment {
    let no = theta.n_options();
    if worker.needs_reset {
        worker.state = env.reset(rng);
        worker.option = epsilon_soft_choice(q.row(worker.state), config.epsilon, rng);
        worker.pending_switch = false;
        worker.needs_reset = false;
        worker.episode = EpisodeStats::new(no);
    }
    let penalty = config.reward_penalty();
    let mut pi = vec![0.0; theta.n_actions()];
    let mut steps = Vec::with_capacity(config.t_max);
    let end = loop {
        let (s, o) = (worker.state, worker.option);
        theta.pi_into(s, o, &mut pi);
        let a = sample_categorical(&pi, rng);
        let out = env.step(a, rng);
        let shaped_reward = if worker.pending_switch { out.reward - penalty } else { out.reward };
        worker.pending_switch = false;
        let s2 = out.next_state;
        let (beta, switched) = if out.done {
            (None, false)
        } else {
            let b = sigmoid(theta.theta_beta[theta.beta_index(s2, o)]);
            let terminated = rng.gen::<f64>() < b;
            if terminated {
                worker.option = epsilon_soft_choice(q.row(s2), config.epsilon, rng);
                worker.pending_switch = true;
            }
            (Some(b), terminated)
        };
        worker.state = s2;
        let ep = &mut worker.episode;
        ep.steps += 1;
        ep.discounted_return += ep.discount * out.reward;
        ep.discount *= config.gamma;
        ep.options_used[o] = true;
        if let Some(b) = beta {
            ep.beta_sum += b;
            ep.beta_count += 1;
        }
        ep.switches += usize::from(switched);
        steps.push(SegmentStep {
            state: s,
            option: o,
            action: a,
            reward: out.reward,
            shaped_reward,
            next_state: s2,
            beta,
            switched,
            done: out.done,
        });
        if out.done {
            worker.needs_reset = true;
            break SegmentEnd::EpisodeEnd;
        }
        if ep.steps >= config.max_episode_steps {
            worker.needs_reset = true;
            break SegmentEnd::EpisodeLimit;
        }
        if steps.len() >= config.t_max || (steps.len() > config.t_min && switched) {
            break SegmentEnd::Truncated;
        }
    };
    Segment {
        steps,
        end,
        final_state: worker.state,
        final_option: worker.option,
    }
}

/// `G_k = r_k + gamma G_{k+1}`, starting from `bootstrap` after the last step.
pub fn n_step_targets(rewards: &[f64], bootstrap: f64, gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut g = bootstrap;
    for (k, &r) in rewards.iter().enumerate().rev() {
        g = r + gamma * g;
        out[k] = g;
    }
    out
}

/// Target after the last step of a segment: zero at a true episode end,
/// otherwise the critic at the final state and active option.
pub fn bootstrap_value(segment: &Segment, q: &StateOptionTable) -> f64 {
    match segment.end {
        SegmentEnd::EpisodeEnd => 0.0,
        SegmentEnd::Truncated | SegmentEnd::EpisodeLimit => q[(segment.final_state, segment.final_option)],
    }
}

/// Sparse parameter increments `(flat index, value)` per block; learning
/// rates are already applied.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamDeltas {
    pub q: Vec<(usize, f64)>,
    pub theta_pi: Vec<(usize, f64)>,
    pub theta_beta: Vec<(usize, f64)>,
}

impl ParamDeltas {
    pub fn apply(&self, theta: &mut Theta, q: &mut StateOptionTable) {
        let qs = q.as_mut_slice();
        for &(i, d) in &self.q {
            qs[i] += d;
        }
        for &(i, d) in &self.theta_pi {
            theta.theta_pi[i] += d;
        }
        for &(i, d) in &self.theta_beta {
            theta.theta_beta[i] += d;
        }
    }
}

fn state_value(q_row: &[f64], config: &A2OCConfig) -> f64 {
    let max = q_row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    match config.baseline {
        AdvantageBaseline::Greedy => max,
        AdvantageBaseline::Soft => {
            let greedy = argmax(q_row.iter().copied());
            let n = q_row.len() as f64;
            let mean: f64 = q_row.iter().sum::<f64>() / n;
            (1.0 - config.epsilon) * q_row[greedy] + config.epsilon * mean
        }
    }
}

/// Critic, policy and termination increments for a segment, all computed
/// against the segment-start snapshot:
///
/// - `dq = lr_q (G - Q(s,o))`
/// - `dtheta_pi = lr_pi [(e_a - pi) (G - Q(s,o)) + entropy_coef dH/dtheta]`
/// - `dtheta_beta(s',o) = -lr_beta beta' (Q(s',o) - V(s') + eta)` at each
///   non-terminal post-transition state.
pub fn accumulate_updates(
    segment: &Segment,
    targets: &[f64],
    theta: &Theta,
    q: &StateOptionTable,
    config: &A2OCConfig,
) -> ParamDeltas {
    assert_eq!(segment.steps.len(), targets.len(), "one target per step");
    let no = theta.n_options();
    let na = theta.n_actions();
    let mut deltas = ParamDeltas::default();
    let mut pi = vec![0.0; na];
    for (step, &g) in segment.steps.iter().zip(targets) {
        let (s, o) = (step.state, step.option);
        let adv = g - q[(s, o)];
        deltas.q.push((s * no + o, config.lr_q * adv));

        theta.pi_into(s, o, &mut pi);
        let entropy: f64 = -pi.iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>();
        let start = theta.pi_index(o, s, 0);
        for (b, &p) in pi.iter().enumerate() {
            let score = if b == step.action { 1.0 - p } else { -p };
            let dh = if p > 0.0 { -p * (p.ln() + entropy) } else { 0.0 };
            let d = config.lr_pi * (score * adv + config.entropy_coef * dh);
            if d != 0.0 {
                deltas.theta_pi.push((start + b, d));
            }
        }

        if !step.done {
            let s2 = step.next_state;
            let row = q.row(s2);
            let advantage = row[o] - state_value(row, config);
            let j = theta.beta_index(s2, o);
            let b = sigmoid(theta.theta_beta[j]);
            let d = -config.lr_beta * b * (1.0 - b) * (advantage + config.eta);
            if d != 0.0 {
                deltas.theta_beta.push((j, d));
            }
        }
    }
    deltas
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub worker: usize,
    /// Global step count after the segment that ended the episode.
    pub step: u64,
    pub length: usize,
    /// Discounted environment return.
    pub discounted_return: f64,
    /// Sum and count of the `beta` values met along the episode.
    pub beta_sum: f64,
    pub beta_count: usize,
    pub switches: usize,
    pub options_used: usize,
    /// Reached a terminal state, as opposed to hitting the step limit.
    pub completed: bool,
}

impl EpisodeRecord {
    pub fn mean_termination(&self) -> f64 {
        if self.beta_count == 0 {
            0.0
        } else {
            self.beta_sum / self.beta_count as f64
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub episodes: Vec<EpisodeRecord>,
    /// Steps spent in each option.
    pub option_usage: Vec<u64>,
    pub total_steps: u64,
}

impl TrainMetrics {
    /// Mean of the `beta` values met in episodes that ended in the last
    /// `fraction` of training steps.
    pub fn late_mean_termination(&self, fraction: f64) -> f64 {
        let cutoff = (self.total_steps as f64 * (1.0 - fraction)) as u64;
        let (sum, count) = self
            .episodes
            .iter()
            .filter(|e| e.step > cutoff)
            .fold((0.0, 0usize), |(s, c), e| (s + e.beta_sum, c + e.beta_count));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Mean discounted return of episodes that ended in the last `fraction`.
    pub fn late_mean_return(&self, fraction: f64) -> f64 {
        let cutoff = (self.total_steps as f64 * (1.0 - fraction)) as u64;
        let late: Vec<f64> = self
            .episodes
            .iter()
            .filter(|e| e.step > cutoff)
            .map(|e| e.discounted_return)
            .collect();
        if late.is_empty() {
            0.0
        } else {
            late.iter().sum::<f64>() / late.len() as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: SharedParams,
    pub metrics: TrainMetrics,
}

struct Shared {
    theta: Theta,
    q: StateOptionTable,
    steps: u64,
    version: u64,
}

enum Message {
    Episode(EpisodeRecord),
    Usage(Vec<u64>),
}

fn worker_loop<E: Environment>(
    index: usize,
    mut env: E,
    shared: &Mutex<Shared>,
    config: &A2OCConfig,
    sender: mpsc::Sender<Message>,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let (mut theta, mut q, mut version) = {
        let g = shared.lock().expect("shared parameters poisoned");
        (g.theta.clone(), g.q.clone(), g.version)
    };
    let mut worker = WorkerState::new(theta.n_options());
    let mut usage = vec![0u64; theta.n_options()];
    loop {
        {
            let g = shared.lock().expect("shared parameters poisoned");
            if g.steps >= config.total_steps {
                break;
            }
            if g.version != version {
                theta.clone_from(&g.theta);
                q.clone_from(&g.q);
                version = g.version;
            }
        }
        let segment = collect_segment(&mut env, &theta, &q, &mut worker, config, &mut rng);
        let rewards: Vec<f64> = segment.steps.iter().map(|s| s.shaped_reward).collect();
        let targets = n_step_targets(&rewards, bootstrap_value(&segment, &q), config.gamma);
        let deltas = accumulate_updates(&segment, &targets, &theta, &q, config);
        for step in &segment.steps {
            usage[step.option] += 1;
        }
        let step_after = {
            let mut g = shared.lock().expect("shared parameters poisoned");
            let Shared {
                theta: gt, q: gq, ..
            } = &mut *g;
            deltas.apply(gt, gq);
            g.steps += segment.steps.len() as u64;
            if g.version == version {
                // nobody else wrote since our snapshot: replay locally instead of copying
                deltas.apply(&mut theta, &mut q);
                g.version += 1;
                version = g.version;
            } else {
                g.version += 1;
            }
            g.steps
        };
        if segment.end != SegmentEnd::Truncated {
            let ep = &worker.episode;
            let record = EpisodeRecord {
                worker: index,
                step: step_after,
                length: ep.steps,
                discounted_return: ep.discounted_return,
                beta_sum: ep.beta_sum,
                beta_count: ep.beta_count,
                switches: ep.switches,
                options_used: ep.options_used.iter().filter(|&&u| u).count(),
                completed: segment.end == SegmentEnd::EpisodeEnd,
            };
            if sender.send(Message::Episode(record)).is_err() {
                break;
            }
        }
    }
    let _ = sender.send(Message::Usage(usage));
}

/// Runs `n_workers` workers until the global step count reaches
/// `total_steps`. `make_env(i)` builds worker `i`'s environment.
/// With one worker the outcome is a deterministic function of the config.
pub fn train<E, F>(make_env: F, config: &A2OCConfig) -> Result<TrainOutcome>
where
    E: Environment,
    F: Fn(usize) -> Result<E>,
{
    config.validate()?;
    let envs = (0..config.n_workers).map(&make_env).collect::<Result<Vec<E>>>()?;
    let (ns, na) = (envs[0].n_states(), envs[0].n_actions());
    if envs.iter().any(|e| e.n_states() != ns || e.n_actions() != na) {
        return Err(Error::InvalidConfig("workers' environments differ in shape".into()));
    }
    let init = SharedParams::init(ns, na, config);
    let shared = Mutex::new(Shared {
        theta: init.theta,
        q: init.q,
        steps: 0,
        version: 0,
    });
    let (sender, receiver) = mpsc::channel();
    let mut metrics = TrainMetrics {
        option_usage: vec![0; config.n_options],
        ..TrainMetrics::default()
    };
    std::thread::scope(|scope| {
        for (i, env) in envs.into_iter().enumerate() {
            let sender = sender.clone();
            let shared = &shared;
            scope.spawn(move || worker_loop(i, env, shared, config, sender));
        }
        drop(sender);
        for message in receiver {
            match message {
                Message::Episode(record) => metrics.episodes.push(record),
                Message::Usage(usage) => {
                    for (total, u) in metrics.option_usage.iter_mut().zip(usage) {
                        *total += u;
                    }
                }
            }
        }
    });
    let shared = shared.into_inner().expect("shared parameters poisoned");
    metrics.total_steps = shared.steps;
    let mut params = SharedParams {
        theta: shared.theta,
        q: shared.q,
        steps: shared.steps,
    };
    params.theta = params.policy_theta(config.epsilon);
    Ok(TrainOutcome { params, metrics })
}

/// Exact value `sum_s d0(s) Q(s, argmax_o Qhat(s, .))` of the learned
/// options run under the greedy critic policy over options (no exploration),
/// where `Qhat` is the learned critic.
pub fn greedy_return(mdp: &Mdp, params: &SharedParams, tol: f64) -> Result<f64> {
    let theta = params.policy_theta(0.0);
    let values = intra_option_evaluate(mdp, &theta, tol)?;
    Ok(mdp
        .initial_dist()
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(s, &p)| p * values.v[s])
        .sum())
}
