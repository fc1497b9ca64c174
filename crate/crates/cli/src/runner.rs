use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use anyhow::{Context, Result};
use delib_core::a2oc::{greedy_return, train, A2OCConfig, MdpEnv, SharedParams, TrainMetrics};
use delib_core::gridworld::GridWorld;
use delib_core::mdp::value_iteration;
use delib_core::options::{execute_until, ExecutionMode};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{EnvironmentSpec, ExperimentConfig, RunKey};
use crate::render::{CellStep, TrajectoryFile};

/// Fraction of training counted as "late" in the summaries.
pub const LATE_FRACTION: f64 = 0.1;

pub const METRICS_FILE: &str = "metrics.csv";
pub const PARAMS_FILE: &str = "params.json";
pub const TRAJECTORY_FILE: &str = "trajectory.json";
pub const RUN_FILE: &str = "run.json";
pub const LAYOUT_FILE: &str = "layout.txt";
pub const SUMMARY_FILE: &str = "summary.json";

/// One row of `metrics.csv`, written once per finished episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    /// Global step count when the episode ended.
    pub step: u64,
    pub episode: usize,
    /// Discounted environment return of the episode.
    #[serde(rename = "return")]
    pub episode_return: f64,
    /// Mean termination probability met along the episode.
    pub mean_termination: f64,
    pub switches: usize,
    /// Number of distinct options used in the episode.
    pub active_options: usize,
}

pub fn metrics_rows(metrics: &TrainMetrics) -> Vec<MetricsRow> {
    metrics
        .episodes
        .iter()
        .enumerate()
        .map(|(episode, e)| MetricsRow {
            step: e.step,
            episode,
            episode_return: e.discounted_return,
            mean_termination: e.mean_termination(),
            switches: e.switches,
            active_options: e.options_used,
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).with_context(|| format!("cannot write {}", path.display()))?;
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let rows = reader.deserialize().collect::<std::result::Result<Vec<MetricsRow>, _>>()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub eta: f64,
    pub seed: u64,
    pub total_steps: u64,
    pub episodes: usize,
    /// Mean discounted return of episodes ending in the last 10% of steps.
    pub final_return: f64,
    /// Mean termination probability over the last 10% of steps.
    pub final_mean_termination: f64,
    /// Exact value of the learned options under the greedy critic.
    pub greedy_return: f64,
    /// Optimal value of the start distribution.
    pub optimal_return: f64,
    /// Share of the recorded rollout's switches that happen at intersections.
    pub switches_at_intersections: Option<f64>,
}

/// Contents of `run.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub environment: EnvironmentSpec,
    pub a2oc: A2OCConfig,
    pub result: RunResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: Vec<RunResult>,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    let mut file = fs::File::create(path).with_context(|| format!("cannot write {}", path.display()))?;
    file.write_all(text.as_bytes())?;
    file.write_all(b"\n")?;
    Ok(())
}

/// Greedy rollout of the trained options from the start distribution.
pub fn record_trajectory(world: &GridWorld, params: &SharedParams, seed: u64, steps: usize) -> Result<TrajectoryFile> {
    let theta = params.policy_theta(0.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = match world.start_state {
        Some(s) => s,
        None => delib_core::mdp::sample_categorical(world.mdp.initial_dist(), &mut rng),
    };
    let goal = world.goal_state;
    let trajectory = execute_until(
        &world.mdp,
        &theta,
        ExecutionMode::CallAndReturn,
        start,
        &mut rng,
        steps.max(1),
        |s| s == goal,
    )?;
    let cell = |s: usize| world.cell(s).expect("state index from the world");
    Ok(TrajectoryFile {
        steps: trajectory
            .steps
            .iter()
            .map(|step| {
                let (row, col) = cell(step.state);
                let (next_row, next_col) = cell(step.next_state);
                CellStep {
                    row,
                    col,
                    option: step.option,
                    action: step.action,
                    switched: step.switched,
                    next_row,
                    next_col,
                }
            })
            .collect(),
    })
}

/// Trains one sweep cell and writes its directory.
pub fn execute_run(config: &ExperimentConfig, key: RunKey, root: &Path) -> Result<RunResult> {
    let world = config.build_world()?;
    let a2oc = config.a2oc_for(key);
    let mdp = Arc::new(world.mdp.clone());
    let terminal = Arc::new(world.terminal_mask());
    let outcome = train(|_| Ok(MdpEnv::new(mdp.clone(), terminal.clone())?), &a2oc)?;

    let optimum = value_iteration(&world.mdp, 1e-10)?;
    let optimal_return: f64 = world
        .mdp
        .initial_dist()
        .iter()
        .zip(&optimum.values)
        .map(|(p, v)| p * v)
        .sum();
    let trajectory = record_trajectory(&world, &outcome.params, key.seed, config.trajectory_steps)?;
    let result = RunResult {
        eta: key.eta,
        seed: key.seed,
        total_steps: outcome.metrics.total_steps,
        episodes: outcome.metrics.episodes.len(),
        final_return: outcome.metrics.late_mean_return(LATE_FRACTION),
        final_mean_termination: outcome.metrics.late_mean_termination(LATE_FRACTION),
        greedy_return: greedy_return(&world.mdp, &outcome.params, 1e-8)?,
        optimal_return,
        switches_at_intersections: crate::render::intersection_share(&world.layout, &trajectory)?,
    };

    let dir = root.join(key.dir_name());
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_metrics_csv(&dir.join(METRICS_FILE), &metrics_rows(&outcome.metrics))?;
    write_json(&dir.join(PARAMS_FILE), &outcome.params)?;
    write_json(&dir.join(TRAJECTORY_FILE), &trajectory)?;
    fs::write(dir.join(LAYOUT_FILE), world.layout.to_string())?;
    write_json(
        &dir.join(RUN_FILE),
        &RunRecord {
            environment: config.environment.clone(),
            a2oc,
            result: result.clone(),
        },
    )?;
    Ok(result)
}

/// Runs every sweep cell, `parallel` over threads or one after another,
/// then writes `summary.json`. Returns the output root.
pub fn run_experiment(config: &ExperimentConfig, parallel: bool) -> Result<(PathBuf, Summary)> {
    let root = config.output_root();
    fs::create_dir_all(&root).with_context(|| format!("cannot create {}", root.display()))?;
    let keys = config.runs();
    let results: Vec<RunResult> = if parallel {
        let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(keys.len());
        let next = AtomicUsize::new(0);
        let slots: Mutex<Vec<Option<Result<RunResult>>>> = Mutex::new((0..keys.len()).map(|_| None).collect());
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&key) = keys.get(i) else { break };
                    let result = execute_run(config, key, &root);
                    slots.lock().expect("result slots poisoned")[i] = Some(result);
                });
            }
        });
        slots
            .into_inner()
            .expect("result slots poisoned")
            .into_iter()
            .map(|r| r.expect("every run was executed"))
            .collect::<Result<_>>()?
    } else {
        keys.iter().map(|&key| execute_run(config, key, &root)).collect::<Result<_>>()?
    };
    let summary = Summary { runs: results };
    write_json(&root.join(SUMMARY_FILE), &summary)?;
    Ok((root, summary))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_rows_round_trip() {
        let rows = vec![
            MetricsRow {
                step: 20,
                episode: 0,
                episode_return: 0.1 + 0.2,
                mean_termination: 1.0 / 3.0,
                switches: 4,
                active_options: 2,
            },
            MetricsRow {
                step: 41,
                episode: 1,
                episode_return: 0.0,
                mean_termination: 5e-324,
                switches: 0,
                active_options: 1,
            },
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        write_metrics_csv(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("step,episode,return,mean_termination,switches,active_options\n"));
        assert_eq!(read_metrics_csv(&path).unwrap(), rows);
    }
}
