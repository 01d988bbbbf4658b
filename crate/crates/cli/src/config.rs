//! Run configuration: a JSON file merged with command-line overrides.

use std::fs;
use std::path::{Path, PathBuf};

use mvreplica::{CovarianceFamily, Divisor, Loadings, MarketModel, MeanSpec, Mode, SingularPolicy};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Grid of target returns for `frontier`: explicit values or an inclusive
/// `lo..=hi` range with a fixed step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ReturnGrid {
    Values(Vec<f64>),
    Range { lo: f64, hi: f64, step: f64 },
}

impl ReturnGrid {
    pub fn points(&self) -> Result<Vec<f64>, CliError> {
        let pts = match *self {
            ReturnGrid::Values(ref v) => v.clone(),
            ReturnGrid::Range { lo, hi, step } => {
                if !(step > 0.0 && step.is_finite()) || !(hi >= lo) {
                    return Err(CliError::config(format!(
                        "return_grid needs lo <= hi and step > 0, got lo={lo} hi={hi} step={step}"
                    )));
                }
                let count = ((hi - lo) / step + 1e-9).floor() as usize;
                (0..=count).map(|k| lo + k as f64 * step).collect()
            }
        };
        if pts.is_empty() || pts.iter().any(|p| !p.is_finite()) {
            return Err(CliError::config("return_grid must be non-empty and finite"));
        }
        Ok(pts)
    }
}

/// Everything a run can be configured with. Every field is optional in the
/// file; command defaults fill the gaps.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Model file (JSON or CSV); relative paths resolve against the config
    /// file's directory.
    pub model: Option<PathBuf>,
    pub family: Option<CovarianceFamily>,
    pub families: Option<Vec<CovarianceFamily>>,
    pub n_assets: Option<usize>,
    pub means: Option<MeanSpec>,

    pub target_return: Option<f64>,
    pub targets: Option<Vec<f64>>,
    pub return_grid: Option<ReturnGrid>,

    pub r: Option<f64>,
    pub r_grid: Option<Vec<f64>>,
    pub mode: Option<Mode>,
    pub n_trials: Option<usize>,
    pub base_seed: Option<u64>,
    pub divisor: Option<Divisor>,
    pub policy: Option<SingularPolicy>,
    pub skip_threshold: Option<f64>,

    pub betas: Option<Vec<f64>>,
    pub beta_limit: Option<f64>,

    pub beta: Option<f64>,
    pub nu: Option<f64>,
    pub n_replicas: Option<f64>,
    pub check_n: Option<Vec<usize>>,

    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub threads: Option<usize>,
    pub no_timestamp: Option<bool>,
}

/// Values given on the command line; each one beats the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub threads: Option<usize>,
    pub no_timestamp: bool,
}

#[derive(Debug, Clone)]
pub struct Config {
    pub file: FileConfig,
    base_dir: PathBuf,
}

pub const DEFAULT_N_ASSETS: usize = 64;
pub const DEFAULT_TRIALS: usize = 500;
pub const DEFAULT_SEED: u64 = 42;
pub const DEFAULT_SKIP_THRESHOLD: f64 = 0.10;

impl Config {
    pub fn load(path: Option<&Path>, overrides: Overrides) -> Result<Self, CliError> {
        let (mut file, base_dir) = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::config(format!("cannot read config {}: {e}", p.display())))?;
                let file: FileConfig = serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("invalid config {}: {e}", p.display())))?;
                let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (file, dir)
            }
            None => (FileConfig::default(), PathBuf::new()),
        };
        if overrides.out.is_some() {
            file.out = overrides.out;
        }
        if overrides.format.is_some() {
            file.format = overrides.format;
        }
        if overrides.seed.is_some() {
            file.base_seed = overrides.seed;
        }
        if overrides.trials.is_some() {
            file.n_trials = overrides.trials;
        }
        if overrides.threads.is_some() {
            file.threads = overrides.threads;
        }
        if overrides.no_timestamp {
            file.no_timestamp = Some(true);
        }
        if file.threads == Some(0) {
            return Err(CliError::config("threads must be >= 1"));
        }
        Ok(Config { file, base_dir })
    }

    pub fn format(&self) -> Format {
        self.file.format.unwrap_or_default()
    }

    pub fn timestamp(&self) -> bool {
        !self.file.no_timestamp.unwrap_or(false)
    }

    pub fn n_assets(&self) -> Result<usize, CliError> {
        let n = self.file.n_assets.unwrap_or(DEFAULT_N_ASSETS);
        if n < 2 {
            return Err(CliError::config(format!("n_assets must be >= 2, got {n}")));
        }
        Ok(n)
    }

    pub fn means(&self) -> MeanSpec {
        self.file.means.clone().unwrap_or(MeanSpec::Linspace { lo: 0.0, hi: 1.0 })
    }

    pub fn family(&self) -> CovarianceFamily {
        self.file.family.clone().unwrap_or(CovarianceFamily::Identity)
    }

    pub fn mode(&self) -> Mode {
        self.file.mode.unwrap_or(Mode::FullMarkowitz)
    }

    pub fn n_trials(&self) -> Result<usize, CliError> {
        let n = self.file.n_trials.unwrap_or(DEFAULT_TRIALS);
        if n < 2 {
            return Err(CliError::config(format!("n_trials must be >= 2, got {n}")));
        }
        Ok(n)
    }

    pub fn base_seed(&self) -> u64 {
        self.file.base_seed.unwrap_or(DEFAULT_SEED)
    }

    pub fn skip_threshold(&self) -> Result<f64, CliError> {
        let t = self.file.skip_threshold.unwrap_or(DEFAULT_SKIP_THRESHOLD);
        if !(0.0..=1.0).contains(&t) {
            return Err(CliError::config(format!("skip_threshold must lie in [0, 1], got {t}")));
        }
        Ok(t)
    }

    /// The model named by `model`, or else the one built from
    /// `family`/`n_assets`/`means`, with its display label.
    pub fn market_model(&self) -> Result<(MarketModel, String), CliError> {
        if let Some(path) = &self.file.model {
            let full = if path.is_absolute() { path.clone() } else { self.base_dir.join(path) };
            let model = MarketModel::load(&full)?;
            return Ok((model, full.file_stem().map_or("model".into(), |s| s.to_string_lossy().into_owned())));
        }
        let family = self.family();
        family.validate()?;
        let model = mvreplica::make_family(&family, self.n_assets()?, &self.means())?;
        Ok((model, family.label()))
    }

    /// Explicit target, else the midpoint of the asset means.
    pub fn target_return(&self, model: &MarketModel) -> Result<f64, CliError> {
        let t = self.file.target_return.unwrap_or_else(|| {
            let m = model.means();
            0.5 * (m.min() + m.max())
        });
        if !t.is_finite() {
            return Err(CliError::config("target_return must be finite"));
        }
        Ok(t)
    }

    pub fn families(&self) -> Vec<CovarianceFamily> {
        self.file.families.clone().unwrap_or_else(|| {
            vec![
                CovarianceFamily::Identity,
                CovarianceFamily::Toeplitz { rho: 0.6 },
                CovarianceFamily::OneFactor {
                    loadings: Loadings::Uniform(0.5),
                    idio: 1.0,
                },
            ]
        })
    }
}

/// Rejects an `r` outside the open interval where predictions exist, and a
/// sample too short for the requested mode.
pub fn check_ratio(r: f64, n_assets: usize, mode: Mode) -> Result<(), CliError> {
    if !(r > 0.0 && r < 1.0) {
        return Err(CliError::config(format!("r must lie in (0, 1), got {r}")));
    }
    let t = mvreplica::experiment::obs_for_ratio(n_assets, r);
    let min = mode.min_obs(n_assets);
    if t < min {
        return Err(CliError::config(format!(
            "r = {r} gives T = {t} but {mode} with N = {n_assets} needs T >= {min}"
        )));
    }
    Ok(())
}
