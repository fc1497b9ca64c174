//! Collects finished runs under an output root into `sweep.csv` and a
//! gnuplot data file of termination curves.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};

use crate::runner::{read_metrics_csv, RunRecord, METRICS_FILE, RUN_FILE};

pub const SWEEP_FILE: &str = "sweep.csv";
pub const CURVES_FILE: &str = "termination_curves.dat";
pub const DEFAULT_BINS: usize = 50;

#[derive(Debug, Clone)]
pub struct RunData {
    pub dir: PathBuf,
    pub record: RunRecord,
    pub rows: Vec<crate::runner::MetricsRow>,
}

impl RunData {
    pub fn eta(&self) -> f64 {
        self.record.result.eta
    }

    pub fn total_steps(&self) -> u64 {
        self.record.result.total_steps
    }
}

fn load_run(dir: &Path) -> Result<RunData> {
    let text = fs::read_to_string(dir.join(RUN_FILE)).with_context(|| format!("missing {RUN_FILE}"))?;
    let record: RunRecord = serde_json::from_str(&text).with_context(|| format!("corrupt {RUN_FILE}"))?;
    let rows = read_metrics_csv(&dir.join(METRICS_FILE))?;
    Ok(RunData {
        dir: dir.to_path_buf(),
        record,
        rows,
    })
}

/// Loads every `eta_*_seed_*` directory under `root`, sorted by
/// `(eta, seed)`. Unreadable runs go to `skipped` with the reason.
pub fn load_runs(root: &Path) -> Result<(Vec<RunData>, Vec<String>)> {
    let mut runs = Vec::new();
    let mut skipped = Vec::new();
    let entries = fs::read_dir(root).with_context(|| format!("cannot list {}", root.display()))?;
    let mut dirs: Vec<PathBuf> = entries
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir())
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("eta_") && n.contains("_seed_"))
        })
        .collect();
    dirs.sort();
    for dir in dirs {
        match load_run(&dir) {
            Ok(run) => runs.push(run),
            Err(e) => skipped.push(format!("{}: {e:#}", dir.display())),
        }
    }
    runs.sort_by(|a, b| {
        a.eta()
            .total_cmp(&b.eta())
            .then(a.record.result.seed.cmp(&b.record.result.seed))
    });
    Ok((runs, skipped))
}

/// Time-averaged episode return: each episode's return holds from the end
/// of the previous episode until its own end, normalised by `total_steps`.
pub fn auc(rows: &[crate::runner::MetricsRow], total_steps: u64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    let mut previous = 0u64;
    let mut area = 0.0;
    for row in rows {
        let step = row.step.min(total_steps);
        area += row.episode_return * step.saturating_sub(previous) as f64;
        previous = previous.max(step);
    }
    area / total_steps as f64
}

/// Mean termination of the episodes ending in each of `bins` equal step bins.
pub fn termination_curve(rows: &[crate::runner::MetricsRow], total_steps: u64, bins: usize) -> Vec<Option<f64>> {
    let mut sum = vec![0.0; bins];
    let mut count = vec![0usize; bins];
    if total_steps == 0 || bins == 0 {
        return vec![None; bins];
    }
    for row in rows {
        let b = ((row.step.saturating_sub(1) as u128 * bins as u128) / total_steps as u128) as usize;
        let b = b.min(bins - 1);
        sum[b] += row.mean_termination;
        count[b] += 1;
    }
    sum.iter()
        .zip(&count)
        .map(|(s, &n)| (n > 0).then(|| s / n as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EtaMean {
    pub eta: f64,
    pub n_runs: usize,
    pub final_return: f64,
    pub final_mean_termination: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AggregateReport {
    pub runs: usize,
    pub skipped: Vec<String>,
    pub means: Vec<EtaMean>,
    pub sweep_csv: PathBuf,
    pub curves: PathBuf,
}

pub fn aggregate(root: &Path, bins: usize) -> Result<AggregateReport> {
    let (runs, skipped) = load_runs(root)?;
    let sweep_csv = root.join(SWEEP_FILE);
    let mut writer = csv::Writer::from_path(&sweep_csv)?;
    writer.write_record(["eta", "seed", "final_return", "final_mean_termination", "auc"])?;
    let mut by_eta: BTreeMap<u64, Vec<(&RunData, f64)>> = BTreeMap::new();
    for run in &runs {
        let r = &run.record.result;
        let area = auc(&run.rows, run.total_steps());
        writer.write_record([
            r.eta.to_string(),
            r.seed.to_string(),
            r.final_return.to_string(),
            r.final_mean_termination.to_string(),
            area.to_string(),
        ])?;
        // eta >= 0, so the bit pattern orders like the value.
        by_eta.entry(r.eta.to_bits()).or_default().push((run, area));
    }
    let mut means = Vec::new();
    for (bits, group) in &by_eta {
        let n = group.len() as f64;
        let mean = |f: &dyn Fn(&(&RunData, f64)) -> f64| group.iter().map(f).sum::<f64>() / n;
        let m = EtaMean {
            eta: f64::from_bits(*bits),
            n_runs: group.len(),
            final_return: mean(&|(r, _)| r.record.result.final_return),
            final_mean_termination: mean(&|(r, _)| r.record.result.final_mean_termination),
            auc: mean(&|(_, a)| *a),
        };
        writer.write_record([
            m.eta.to_string(),
            "mean".to_string(),
            m.final_return.to_string(),
            m.final_mean_termination.to_string(),
            m.auc.to_string(),
        ])?;
        means.push(m);
    }
    writer.flush()?;

    let curves = root.join(CURVES_FILE);
    let mut file = fs::File::create(&curves)?;
    write!(file, "# step")?;
    for m in &means {
        write!(file, " eta={}", m.eta)?;
    }
    writeln!(file)?;
    let max_steps = runs.iter().map(RunData::total_steps).max().unwrap_or(0);
    let columns: Vec<Vec<Option<f64>>> = by_eta
        .values()
        .map(|group| {
            let per_run: Vec<Vec<Option<f64>>> = group
                .iter()
                .map(|(r, _)| termination_curve(&r.rows, r.total_steps(), bins))
                .collect();
            (0..bins)
                .map(|b| {
                    let vals: Vec<f64> = per_run.iter().filter_map(|c| c[b]).collect();
                    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
                })
                .collect()
        })
        .collect();
    for b in 0..bins {
        let step = (b as u64 + 1) * max_steps / bins.max(1) as u64;
        write!(file, "{step}")?;
        for column in &columns {
            match column[b] {
                Some(v) => write!(file, " {v}")?,
                None => write!(file, " NaN")?,
            }
        }
        writeln!(file)?;
    }

    Ok(AggregateReport {
        runs: runs.len(),
        skipped,
        means,
        sweep_csv,
        curves,
    })
}
