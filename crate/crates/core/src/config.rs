//! Run configuration shared by the command-line subcommands.
//!
//! A config file holds `key = value` lines (TOML) whose keys are the flag
//! names, e.g. `outer-max-iters = 20`. Flags given on the command line take
//! precedence over the file.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::contour::Contour;
use crate::error::{Error, Result};
use crate::interp::StackOptions;
use crate::mean::MeanOptions;
use crate::reconstruct::{InitialGuess, ReconstructOptions};
use crate::reparam::ReparamOptions;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    /// Points per contour after resampling.
    pub points: usize,
    pub exponent: f64,

    pub outer_max_iters: usize,
    pub outer_energy_tol: f64,
    pub reference: usize,

    pub step_size: f64,
    pub max_iters: usize,
    pub residual_tol: f64,
    pub lut_oversample: usize,
    pub step_clamp: f64,
    pub smoothing: f64,

    pub max_newton_iters: usize,
    pub newton_residual_tol: f64,
    pub initial_guess: InitialGuess,

    pub output_dir: PathBuf,
    pub svg: Option<PathBuf>,
    pub threads: Option<usize>,
    pub flag_outliers: Option<f64>,
    pub frames_per_gap: usize,
    /// Seed for randomized fixtures.
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let mean = MeanOptions::default();
        let r = mean.reparam;
        let n = mean.reconstruct;
        Self {
            points: 256,
            exponent: mean.exponent,
            outer_max_iters: mean.outer_max_iters,
            outer_energy_tol: mean.outer_energy_tol,
            reference: mean.reference,
            step_size: r.step_size,
            max_iters: r.max_iters,
            residual_tol: r.residual_tol,
            lut_oversample: r.lut_oversample,
            step_clamp: r.step_clamp,
            smoothing: r.smoothing,
            max_newton_iters: n.max_newton_iters,
            newton_residual_tol: n.residual_tol,
            initial_guess: n.initial_guess,
            output_dir: PathBuf::from("."),
            svg: None,
            threads: None,
            flag_outliers: None,
            frames_per_gap: 1,
            seed: 0x5eed,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::InvalidOptions(format!("config: {}", e.message())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("a run config always serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::InvalidOptions(msg) => Error::InvalidOptions(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn reparam_options(&self) -> ReparamOptions {
        ReparamOptions {
            step_size: self.step_size,
            max_iters: self.max_iters,
            residual_tol: self.residual_tol,
            lut_oversample: self.lut_oversample,
            step_clamp: self.step_clamp,
            smoothing: self.smoothing,
            exponent: self.exponent,
        }
    }

    pub fn reconstruct_options(&self) -> ReconstructOptions {
        ReconstructOptions {
            max_newton_iters: self.max_newton_iters,
            residual_tol: self.newton_residual_tol,
            initial_guess: self.initial_guess,
        }
    }

    pub fn mean_options(&self) -> MeanOptions {
        MeanOptions {
            outer_max_iters: self.outer_max_iters,
            outer_energy_tol: self.outer_energy_tol,
            exponent: self.exponent,
            reference: self.reference,
            reparam: self.reparam_options(),
            reconstruct: self.reconstruct_options(),
        }
    }

    pub fn stack_options(&self) -> StackOptions {
        StackOptions { exponent: self.exponent, reparam: self.reparam_options(), reconstruct: self.reconstruct_options() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.points < Contour::MIN_POINTS {
            return Err(Error::InvalidOptions(format!("points must be at least {}", Contour::MIN_POINTS)));
        }
        if self.threads == Some(0) {
            return Err(Error::InvalidOptions("threads must be positive".into()));
        }
        if let Some(f) = self.flag_outliers {
            if !(f >= 0.0) {
                return Err(Error::InvalidOptions(format!("flag-outliers factor {f} must be non-negative")));
            }
        }
        self.mean_options().validate()
    }
}

impl FromStr for InitialGuess {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "from-system-speeds" => Ok(Self::FromSystemSpeeds),
            "from-q-power" => Ok(Self::FromQPower),
            _ => Err(Error::InvalidOptions(format!(
                "unknown initial guess `{s}` (expected from-system-speeds or from-q-power)"
            ))),
        }
    }
}

/// Command-line overrides for every [`RunConfig`] field.
#[derive(Debug, Clone, Default, clap::Args)]
pub struct ConfigArgs {
    /// Config file of `key = value` lines
    #[arg(long, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Points per contour after resampling
    #[arg(long, value_name = "M")]
    pub points: Option<usize>,
    /// Representation exponent
    #[arg(long, value_name = "m", allow_negative_numbers = true)]
    pub exponent: Option<f64>,
    #[arg(long)]
    pub outer_max_iters: Option<usize>,
    #[arg(long)]
    pub outer_energy_tol: Option<f64>,
    /// Member held fixed while reparameterizing
    #[arg(long)]
    pub reference: Option<usize>,
    #[arg(long)]
    pub step_size: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub residual_tol: Option<f64>,
    #[arg(long)]
    pub lut_oversample: Option<usize>,
    #[arg(long)]
    pub step_clamp: Option<f64>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    #[arg(long)]
    pub max_newton_iters: Option<usize>,
    #[arg(long)]
    pub newton_residual_tol: Option<f64>,
    /// from-system-speeds or from-q-power
    #[arg(long)]
    pub initial_guess: Option<InitialGuess>,
    /// Directory receiving the output files
    #[arg(long, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    /// Also write an SVG overlay
    #[arg(long, value_name = "PATH")]
    pub svg: Option<PathBuf>,
    /// Worker threads
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    /// Flag members farther than FACTOR times the median from the mean
    #[arg(long, value_name = "FACTOR")]
    pub flag_outliers: Option<f64>,
    /// Frames inserted between consecutive slices
    #[arg(long, value_name = "K")]
    pub frames_per_gap: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// The config file (or the defaults) with the given flags applied.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        self.apply(&mut cfg);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        set!(
            points, exponent, outer_max_iters, outer_energy_tol, reference, step_size, max_iters, residual_tol,
            lut_oversample, step_clamp, smoothing, max_newton_iters, newton_residual_tol, initial_guess, output_dir,
            frames_per_gap, seed
        );
        if self.svg.is_some() {
            cfg.svg = self.svg.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        if self.flag_outliers.is_some() {
            cfg.flag_outliers = self.flag_outliers;
        }
    }
}
