use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use delib_cli::aggregate::{aggregate, DEFAULT_BINS};
use delib_cli::config::ExperimentConfig;
use delib_cli::render::{intersection_share, render_ascii, render_svg, RenderMode, TrajectoryFile};
use delib_cli::runner::run_experiment;
use delib_core::gridworld::GridLayout;

#[derive(Parser)]
#[command(name = "delib", version, about = "Option learning with a deliberation cost")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single configuration (ignores any [sweep] section).
    Run {
        config: PathBuf,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train every (eta, seed) cell of the [sweep] section, then aggregate.
    Sweep {
        config: PathBuf,
        /// Run the cells one after another instead of in parallel.
        #[arg(long)]
        sequential: bool,
    },
    /// Summarise finished runs under an output directory.
    Aggregate {
        root: PathBuf,
        #[arg(long, default_value_t = DEFAULT_BINS)]
        bins: usize,
    },
    /// Draw a recorded trajectory on its layout.
    Render {
        layout: PathBuf,
        trajectory: PathBuf,
        #[arg(long, value_enum, default_value = "options")]
        mode: RenderMode,
        /// Also write an SVG picture to this path.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run { config, eta, seed } => {
            let mut config = ExperimentConfig::load(&config)?;
            config.sweep = Default::default();
            if let Some(eta) = eta {
                config.deliberation.eta = eta;
            }
            if let Some(seed) = seed {
                config.a2oc.seed = seed;
            }
            config.validate()?;
            let (root, summary) = run_experiment(&config, false)?;
            for r in &summary.runs {
                println!(
                    "eta={} seed={} episodes={} final_return={:.4} final_mean_termination={:.4} greedy_return={:.4} optimal_return={:.4}",
                    r.eta, r.seed, r.episodes, r.final_return, r.final_mean_termination, r.greedy_return, r.optimal_return
                );
            }
            println!("wrote {}", root.display());
        }
        Command::Sweep { config, sequential } => {
            let config = ExperimentConfig::load(&config)?;
            let (root, summary) = run_experiment(&config, !sequential)?;
            println!("finished {} runs in {}", summary.runs.len(), root.display());
            report_aggregate(&root, DEFAULT_BINS)?;
        }
        Command::Aggregate { root, bins } => report_aggregate(&root, bins)?,
        Command::Render {
            layout,
            trajectory,
            mode,
            svg,
        } => {
            let text = std::fs::read_to_string(&layout).with_context(|| format!("cannot read {}", layout.display()))?;
            let layout = GridLayout::parse(&text)?;
            let text =
                std::fs::read_to_string(&trajectory).with_context(|| format!("cannot read {}", trajectory.display()))?;
            let trajectory: TrajectoryFile = serde_json::from_str(&text).context("corrupt trajectory")?;
            print!("{}", render_ascii(&layout, &trajectory, mode)?);
            match intersection_share(&layout, &trajectory)? {
                Some(share) => println!("switches at intersections: {share:.3}"),
                None => println!("switches at intersections: no switches"),
            }
            if let Some(path) = svg {
                std::fs::write(&path, render_svg(&layout, &trajectory, mode)?)?;
                println!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn report_aggregate(root: &std::path::Path, bins: usize) -> Result<()> {
    let report = aggregate(root, bins)?;
    for reason in &report.skipped {
        eprintln!("warning: skipped {reason}");
    }
    println!("eta      runs  final_return  final_mean_termination  auc");
    for m in &report.means {
        println!(
            "{:<8} {:>4}  {:>12.4}  {:>22.4}  {:.4}",
            m.eta, m.n_runs, m.final_return, m.final_mean_termination, m.auc
        );
    }
    println!("wrote {} and {}", report.sweep_csv.display(), report.curves.display());
    Ok(())
}
