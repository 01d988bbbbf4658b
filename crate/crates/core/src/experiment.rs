//! Monte Carlo harness: re-optimize on finite samples and measure how far
//! the estimated portfolio is from the true optimum.
//!
//! Every trial draws a fresh sample from its own substream
//! (`base_seed ^ trial_index`), estimates `μ̂, σ̂`, solves the estimated
//! problem at unit budget and records
//!
//! * `q0 = ŵᵀ Σ ŵ / w*ᵀ Σ w*` (true covariance in both forms), and
//! * the in-sample variance `ŵᵀ σ̂ ŵ` relative to `w*ᵀ Σ w*`.
//!
//! Trials run in parallel, but results are reduced in trial-index order so
//! a sweep is bit-identical for any thread count.

use std::fmt;
use std::io::Write;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{compensated_sum, quad_form};
use crate::markowitz::{solve_exact, solve_global_min, MarketModel, PortfolioSolution};
use crate::replica::predict;
use crate::sampling::{
    estimate, generate, make_family, mix_seed, substream_seed, CovarianceFamily, Divisor, MeanSpec,
};

/// Experiments always use a unit budget; `q0` and the in-sample ratio do
/// not depend on it.
pub const BUDGET: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Budget constraint only.
    GlobalMin,
    /// Budget plus a return constraint written with the sample means.
    FullMarkowitz,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::GlobalMin => "global_min",
            Mode::FullMarkowitz => "full_markowitz",
        }
    }

    /// Smallest sample length accepted for `n_assets` assets.
    pub fn min_obs(self, n_assets: usize) -> usize {
        match self {
            Mode::GlobalMin => n_assets + 1,
            Mode::FullMarkowitz => n_assets + 2,
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// What to do when a trial's sample covariance cannot be factorized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularPolicy {
    Abort,
    #[default]
    SkipAndCount,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub seed: u64,
    pub r: f64,
    pub q0: f64,
    pub in_sample_variance: f64,
    pub in_sample_ratio: f64,
    pub target_return: Option<f64>,
    pub mode: Mode,
}

/// True optimum shared by all trials on one model.
#[derive(Debug, Clone)]
struct Reference {
    solution: PortfolioSolution,
    variance: f64,
}

fn reference(model: &MarketModel, target_return: f64, mode: Mode) -> Result<Reference> {
    let solution = match mode {
        Mode::GlobalMin => solve_global_min(model, BUDGET)?,
        Mode::FullMarkowitz => solve_exact(model, target_return, BUDGET)?,
    };
    let variance = quad_form(model.covariance(), &solution.weights_vector());
    Ok(Reference { solution, variance })
}

fn check_obs(n_assets: usize, t_obs: usize, mode: Mode) -> Result<()> {
    let min = mode.min_obs(n_assets);
    if t_obs < min {
        return Err(Error::InvalidParameter(format!(
            "{mode} with N = {n_assets} needs T >= {min}, got T = {t_obs}"
        )));
    }
    Ok(())
}

fn trial_with_reference(
    model: &MarketModel,
    reference: &Reference,
    t_obs: usize,
    mode: Mode,
    divisor: Divisor,
    seed: u64,
) -> Result<TrialRecord> {
    let n = model.n_assets();
    let sample = generate(model, t_obs, seed)?;
    let est = estimate(&sample, divisor);
    let cov_hat = est.cov_hat.clone();
    let sample_model = MarketModel::new(est.cov_hat, est.mean_hat).map_err(|e| match e {
        Error::NotPositiveDefinite { .. } => Error::SingularSampleCovariance {
            n_assets: n,
            t_obs,
        },
        other => other,
    })?;
    let target = reference.solution.target_return;
    let estimated = match mode {
        Mode::GlobalMin => solve_global_min(&sample_model, BUDGET)?,
        Mode::FullMarkowitz => solve_exact(
            &sample_model,
            target.expect("full mode reference carries a target"),
            BUDGET,
        )?,
    };
    let w_hat: DVector<f64> = estimated.weights_vector();
    let q0 = quad_form(model.covariance(), &w_hat) / reference.variance;
    let in_sample_variance = quad_form(&cov_hat, &w_hat);
    Ok(TrialRecord {
        seed,
        r: n as f64 / t_obs as f64,
        q0,
        in_sample_variance,
        in_sample_ratio: in_sample_variance / reference.variance,
        target_return: target,
        mode,
    })
}

/// One sample, one estimated optimum. The sample covariance uses the `1/T`
/// divisor; see [`run_trial_with_divisor`].
pub fn run_trial(model: &MarketModel, t_obs: usize, target_return: f64, mode: Mode, seed: u64) -> Result<TrialRecord> {
    run_trial_with_divisor(model, t_obs, target_return, mode, Divisor::T, seed)
}

pub fn run_trial_with_divisor(
    model: &MarketModel,
    t_obs: usize,
    target_return: f64,
    mode: Mode,
    divisor: Divisor,
    seed: u64,
) -> Result<TrialRecord> {
    check_obs(model.n_assets(), t_obs, mode)?;
    let reference = reference(model, target_return, mode)?;
    trial_with_reference(model, &reference, t_obs, mode, divisor, seed)
}

/// Sweep settings shared by [`run_sweep`] and [`universality_battery`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSpec {
    pub r_grid: Vec<f64>,
    /// Ignored in [`Mode::GlobalMin`].
    pub target_return: f64,
    pub mode: Mode,
    pub n_trials: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub divisor: Divisor,
    #[serde(default)]
    pub policy: SingularPolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub family_label: String,
    pub mode: Mode,
    pub target_return: Option<f64>,
    pub n_assets: usize,
    pub n_trials: usize,
    pub policy: SingularPolicy,
    pub r_grid: Vec<f64>,
    pub t_grid: Vec<usize>,
    pub n_skipped: Vec<usize>,
    pub mean_q0: Vec<f64>,
    pub se_q0: Vec<f64>,
    pub mean_in_ratio: Vec<f64>,
    pub se_in_ratio: Vec<f64>,
    /// Trials with `q0 < 1`; only possible with a return constraint.
    pub q0_below_one: Vec<usize>,
}

impl SweepResult {
    pub fn skip_fraction(&self, index: usize) -> f64 {
        self.n_skipped[index] as f64 / self.n_trials as f64
    }

    pub fn max_skip_fraction(&self) -> f64 {
        (0..self.r_grid.len())
            .map(|i| self.skip_fraction(i))
            .fold(0.0, f64::max)
    }

    /// Output rows with the replica predictions attached.
    pub fn rows(&self) -> Vec<SweepRow> {
        (0..self.r_grid.len())
            .map(|i| {
                let r = self.r_grid[i];
                let pred = predict(r).ok();
                SweepRow {
                    family: self.family_label.clone(),
                    target: self.target_return,
                    mode: self.mode.as_str().to_string(),
                    n_assets: self.n_assets,
                    t_obs: self.t_grid[i],
                    r,
                    n_trials: self.n_trials,
                    n_skipped: self.n_skipped[i],
                    mean_q0: self.mean_q0[i],
                    se_q0: self.se_q0[i],
                    mean_in_ratio: self.mean_in_ratio[i],
                    se_in_ratio: self.se_in_ratio[i],
                    pred_q0: pred.map_or(f64::NAN, |p| p.expected_q0),
                    pred_in_ratio: pred.map_or(f64::NAN, |p| p.in_sample_factor),
                }
            })
            .collect()
    }
}

/// One line of the sweep output table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub family: String,
    pub target: Option<f64>,
    pub mode: String,
    #[serde(rename = "N")]
    pub n_assets: usize,
    #[serde(rename = "T")]
    pub t_obs: usize,
    pub r: f64,
    pub n_trials: usize,
    pub n_skipped: usize,
    pub mean_q0: f64,
    pub se_q0: f64,
    pub mean_in_ratio: f64,
    pub se_in_ratio: f64,
    pub pred_q0: f64,
    pub pred_in_ratio: f64,
}

pub const CSV_COLUMNS: [&str; 14] = [
    "family",
    "target",
    "mode",
    "N",
    "T",
    "r",
    "n_trials",
    "n_skipped",
    "mean_q0",
    "se_q0",
    "mean_in_ratio",
    "se_in_ratio",
    "pred_q0",
    "pred_in_ratio",
];

pub fn write_rows_csv<W: Write>(rows: &[SweepRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(CSV_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn rows_to_json(rows: &[SweepRow]) -> serde_json::Value {
    serde_json::to_value(rows).expect("rows serialize")
}

/// `T = round(N / r)`.
pub fn obs_for_ratio(n_assets: usize, r: f64) -> usize {
    (n_assets as f64 / r).round() as usize
}

fn validate_spec(n_assets: usize, spec: &SweepSpec) -> Result<()> {
    if spec.n_trials < 2 {
        return Err(Error::InvalidParameter(format!(
            "n_trials must be >= 2 for a standard error, got {}",
            spec.n_trials
        )));
    }
    if spec.r_grid.is_empty() {
        return Err(Error::InvalidParameter("r_grid is empty".into()));
    }
    for &r in &spec.r_grid {
        if !(r > 0.0 && r < 1.0) {
            return Err(Error::OutOfDomain {
                name: "r",
                value: r,
                domain: "(0, 1)",
            });
        }
        check_obs(n_assets, obs_for_ratio(n_assets, r), spec.mode)?;
    }
    if spec.mode == Mode::FullMarkowitz && !spec.target_return.is_finite() {
        return Err(Error::InvalidParameter("target_return must be finite".into()));
    }
    Ok(())
}

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = compensated_sum(values.iter().cloned()) / n as f64;
    if n < 2 {
        return (mean, f64::NAN);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1) as f64).sqrt() / (n as f64).sqrt())
}

/// Runs `spec` on an explicit model.
pub fn run_sweep_model(model: &MarketModel, label: &str, spec: &SweepSpec) -> Result<SweepResult> {
    let n = model.n_assets();
    validate_spec(n, spec)?;
    let reference = reference(model, spec.target_return, spec.mode)?;

    let mut result = SweepResult {
        family_label: label.to_string(),
        mode: spec.mode,
        target_return: reference.solution.target_return,
        n_assets: n,
        n_trials: spec.n_trials,
        policy: spec.policy,
        r_grid: spec.r_grid.clone(),
        t_grid: Vec::new(),
        n_skipped: Vec::new(),
        mean_q0: Vec::new(),
        se_q0: Vec::new(),
        mean_in_ratio: Vec::new(),
        se_in_ratio: Vec::new(),
        q0_below_one: Vec::new(),
    };

    for &r in &spec.r_grid {
        let t_obs = obs_for_ratio(n, r);
        let outcomes: Vec<Result<TrialRecord>> = (0..spec.n_trials as u64)
            .into_par_iter()
            .map(|i| {
                let seed = substream_seed(spec.base_seed, i);
                trial_with_reference(model, &reference, t_obs, spec.mode, spec.divisor, seed)
            })
            .collect();

        let mut q0 = Vec::with_capacity(spec.n_trials);
        let mut ratio = Vec::with_capacity(spec.n_trials);
        let mut skipped = 0usize;
        for outcome in outcomes {
            match outcome {
                Ok(rec) => {
                    q0.push(rec.q0);
                    ratio.push(rec.in_sample_ratio);
                }
                Err(Error::SingularSampleCovariance { .. })
                    if spec.policy == SingularPolicy::SkipAndCount =>
                {
                    skipped += 1
                }
                Err(e) => return Err(e),
            }
        }
        let (mq, sq) = mean_and_se(&q0);
        let (mi, si) = mean_and_se(&ratio);
        result.t_grid.push(t_obs);
        result.n_skipped.push(skipped);
        result.mean_q0.push(mq);
        result.se_q0.push(sq);
        result.mean_in_ratio.push(mi);
        result.se_in_ratio.push(si);
        result.q0_below_one.push(q0.iter().filter(|&&q| q < 1.0).count());
    }
    Ok(result)
}

/// Builds the model from a family and runs `spec` on it.
pub fn run_sweep(
    family: &CovarianceFamily,
    n_assets: usize,
    means: &MeanSpec,
    spec: &SweepSpec,
) -> Result<SweepResult> {
    let model = make_family(family, n_assets, means)?;
    run_sweep_model(&model, &family.label(), spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatterySpec {
    pub n_assets: usize,
    pub r: f64,
    pub families: Vec<CovarianceFamily>,
    pub targets: Vec<f64>,
    pub means: MeanSpec,
    pub mode: Mode,
    pub n_trials: usize,
    pub base_seed: u64,
    #[serde(default)]
    pub divisor: Divisor,
    #[serde(default)]
    pub policy: SingularPolicy,
}

/// Base seed of cell `index`; cells get independent streams.
pub fn cell_seed(base_seed: u64, index: usize) -> u64 {
    mix_seed(base_seed.wrapping_add(index as u64))
}

/// One single-`r` sweep per (family, target) cell, families outermost.
pub fn universality_battery(spec: &BatterySpec) -> Result<Vec<SweepResult>> {
    if spec.families.len() < 2 && spec.targets.len() < 2 {
        return Err(Error::InvalidParameter(
            "universality needs at least two families or two targets".into(),
        ));
    }
    if spec.families.is_empty() || spec.targets.is_empty() {
        return Err(Error::InvalidParameter("families and targets must be non-empty".into()));
    }
    let mut cells = Vec::with_capacity(spec.families.len() * spec.targets.len());
    for family in &spec.families {
        let model = make_family(family, spec.n_assets, &spec.means)?;
        for &target in &spec.targets {
            let sweep = SweepSpec {
                r_grid: vec![spec.r],
                target_return: target,
                mode: spec.mode,
                n_trials: spec.n_trials,
                base_seed: cell_seed(spec.base_seed, cells.len()),
                divisor: spec.divisor,
                policy: spec.policy,
            };
            cells.push(run_sweep_model(&model, &family.label(), &sweep)?);
        }
    }
    Ok(cells)
}

/// Largest `|Δ mean_q0| / sqrt(se_a² + se_b²)` over all cell pairs, using
/// each cell's first grid point.
pub fn max_pairwise_z(cells: &[SweepResult]) -> f64 {
    let mut worst = 0.0_f64;
    for (i, a) in cells.iter().enumerate() {
        for b in &cells[i + 1..] {
            let diff = (a.mean_q0[0] - b.mean_q0[0]).abs();
            let pooled = a.se_q0[0].hypot(b.se_q0[0]);
            worst = worst.max(diff / pooled);
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DivergenceFit {
    /// Slope of `ln mean_q0` against `ln 1/(1-r)`.
    pub slope: f64,
    pub intercept: f64,
    /// `|mean_q0 (1-r) - 1|` per fitted point.
    pub rel_errors: Vec<f64>,
    pub points_used: usize,
}

pub const DIVERGENCE_FIT_MAX_R: f64 = 0.95;

/// Least-squares fit of `ln q0 = intercept + slope · ln(1/(1-r))` on the
/// points with `0 < r <= 0.95`.
pub fn fit_divergence(r_grid: &[f64], mean_q0: &[f64]) -> Result<DivergenceFit> {
    let pts: Vec<(f64, f64, f64)> = r_grid
        .iter()
        .zip(mean_q0)
        .filter(|(&r, &q)| r > 0.0 && r <= DIVERGENCE_FIT_MAX_R && q > 0.0 && q.is_finite())
        .map(|(&r, &q)| (r, -(1.0 - r).ln(), q.ln()))
        .collect();
    if pts.len() < 4 {
        return Err(Error::InsufficientPoints {
            required: 4,
            got: pts.len(),
        });
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.2).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.1 - mx) * (p.2 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.1 - mx) * (p.1 - mx)).sum();
    let slope = sxy / sxx;
    Ok(DivergenceFit {
        slope,
        intercept: my - slope * mx,
        rel_errors: pts.iter().map(|p| (p.2.exp() * (1.0 - p.0) - 1.0).abs()).collect(),
        points_used: pts.len(),
    })
}

pub fn divergence_fit(sweep: &SweepResult) -> Result<DivergenceFit> {
    fit_divergence(&sweep.r_grid, &sweep.mean_q0)
}
