//! Experiment configuration files (TOML).
//!
//! ```toml
//! output_dir = "runs/four_rooms"
//!
//! [environment]
//! name = "four_rooms"        # four_rooms | maze | layout
//! layout = "my_map.txt"      # required for name = "layout"
//! slip = 0.3333333333333333
//! gamma = 0.99
//!
//! [a2oc]
//! total_steps = 500000
//! n_options = 4
//!
//! [deliberation]
//! eta = 0.01
//! lambda_mode = "zero"       # zero | gamma | a number
//!
//! [sweep]
//! eta = [0.0, 0.01, 0.02, 0.03]
//! seeds = [0, 1, 2, 3, 4]
//! ```

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use delib_core::a2oc::{A2OCConfig, LambdaMode};
use delib_core::deliberation::{LambdaName, LambdaSpec};
use delib_core::gridworld::{GridLayout, GridWorld, DEFAULT_SLIP};
use serde::{Deserialize, Serialize};

pub const OUTPUT_ROOT_ENV: &str = "DELIB_OUTPUT_ROOT";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvironmentName {
    FourRooms,
    Maze,
    Layout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSpec {
    pub name: EnvironmentName,
    #[serde(default)]
    pub layout: Option<PathBuf>,
    #[serde(default = "default_slip")]
    pub slip: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
}

fn default_slip() -> f64 {
    DEFAULT_SLIP
}

fn default_gamma() -> f64 {
    0.99
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeliberationSection {
    #[serde(default)]
    pub eta: f64,
    #[serde(default = "default_lambda")]
    pub lambda_mode: LambdaSpec,
}

fn default_lambda() -> LambdaSpec {
    LambdaSpec::ZERO
}

impl Default for DeliberationSection {
    fn default() -> Self {
        Self {
            eta: 0.0,
            lambda_mode: default_lambda(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub eta: Vec<f64>,
    #[serde(default)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub output_dir: PathBuf,
    pub environment: EnvironmentSpec,
    #[serde(default)]
    pub a2oc: A2OCConfig,
    #[serde(default)]
    pub deliberation: DeliberationSection,
    #[serde(default)]
    pub sweep: SweepSection,
    /// Steps of the greedy rollout saved for rendering.
    #[serde(default = "default_trajectory_steps")]
    pub trajectory_steps: usize,
    /// Directory the config was read from; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_trajectory_steps() -> usize {
    500
}

/// One `(eta, seed)` cell of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunKey {
    pub eta: f64,
    pub seed: u64,
}

impl RunKey {
    pub fn dir_name(&self) -> String {
        format!("eta_{}_seed_{}", self.eta, self.seed)
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        let mut config = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        config.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(config)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.environment.name == EnvironmentName::Layout && self.environment.layout.is_none() {
            bail!("environment.layout is required when environment.name = \"layout\"");
        }
        if self.sweep.eta.iter().any(|&e| !(e >= 0.0 && e.is_finite())) || !(self.deliberation.eta >= 0.0) {
            bail!("eta values must be finite and non-negative");
        }
        self.lambda_mode()?;
        for key in self.runs() {
            self.a2oc_for(key).validate()?;
        }
        Ok(())
    }

    /// A2OC supports the two named cost discounts only.
    pub fn lambda_mode(&self) -> Result<LambdaMode> {
        match self.deliberation.lambda_mode {
            LambdaSpec::Named(LambdaName::Zero) => Ok(LambdaMode::Zero),
            LambdaSpec::Named(LambdaName::Gamma) => Ok(LambdaMode::Gamma),
            LambdaSpec::Value(x) if x == 0.0 => Ok(LambdaMode::Zero),
            LambdaSpec::Value(x) if x == self.environment.gamma => Ok(LambdaMode::Gamma),
            LambdaSpec::Value(x) => bail!("the learner supports lambda = 0 or gamma, got {x}"),
        }
    }

    /// Sweep cells in `eta`-major order. Without a `[sweep]` section this is
    /// the single run `(deliberation.eta, a2oc.seed)`.
    pub fn runs(&self) -> Vec<RunKey> {
        let etas = if self.sweep.eta.is_empty() {
            vec![self.deliberation.eta]
        } else {
            self.sweep.eta.clone()
        };
        let seeds = if self.sweep.seeds.is_empty() {
            vec![self.a2oc.seed]
        } else {
            self.sweep.seeds.clone()
        };
        etas.iter()
            .flat_map(|&eta| seeds.iter().map(move |&seed| RunKey { eta, seed }))
            .collect()
    }

    pub fn a2oc_for(&self, key: RunKey) -> A2OCConfig {
        A2OCConfig {
            eta: key.eta,
            seed: key.seed,
            gamma: self.environment.gamma,
            lambda_mode: self.lambda_mode().unwrap_or(LambdaMode::Zero),
            ..self.a2oc.clone()
        }
    }

    /// Output root: `$DELIB_OUTPUT_ROOT` if set, else `output_dir` relative
    /// to the config file.
    pub fn output_root(&self) -> PathBuf {
        match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if !root.is_empty() => PathBuf::from(root),
            _ => self.base_dir.join(&self.output_dir),
        }
    }

    pub fn layout(&self) -> Result<GridLayout> {
        let layout = match self.environment.name {
            EnvironmentName::FourRooms => GridLayout::four_rooms(),
            EnvironmentName::Maze => GridLayout::default_maze(),
            EnvironmentName::Layout => {
                let path = self.base_dir.join(self.environment.layout.as_ref().expect("validated"));
                let text = std::fs::read_to_string(&path)
                    .with_context(|| format!("cannot read layout {}", path.display()))?;
                GridLayout::parse(&text)?
            }
        };
        Ok(layout.with_slip(self.environment.slip))
    }

    pub fn build_world(&self) -> Result<GridWorld> {
        let layout = self.layout()?;
        let world = match self.environment.name {
            EnvironmentName::Maze => delib_core::gridworld::build_intersection_maze(layout, self.environment.gamma)?,
            _ => GridWorld::new(layout, self.environment.gamma)?,
        };
        Ok(world)
    }
}
