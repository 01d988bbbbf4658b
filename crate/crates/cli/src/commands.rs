use mvreplica::experiment::write_rows_csv;
use mvreplica::{
    compute_abc, divergence_fit, free_energy, frontier, hessian_numeric_check, hessian_spectrum,
    max_pairwise_z, run_sweep_model, solve_exact, thermal_weights, universality_battery, BatterySpec,
    SweepResult, SweepRow, SweepSpec,
};
use serde::Serialize;

use crate::config::{check_ratio, Config, ReturnGrid};
use crate::error::CliError;
use crate::output::Sink;

pub fn frontier_cmd(config: &Config) -> Result<(), CliError> {
    let sink = Sink::new(config);
    let (model, _) = config.market_model()?;
    let abc = compute_abc(&model);
    if abc.is_degenerate() {
        return Err(mvreplica::Error::DegenerateReturns {
            discriminant: abc.discriminant,
            threshold: mvreplica::markowitz::DEGENERACY_TOLERANCE * abc.a * abc.c,
        }
        .into());
    }
    let grid = match &config.file.return_grid {
        Some(g) => g.points()?,
        None => {
            let m = model.means();
            let (lo, hi) = (m.min(), m.max());
            ReturnGrid::Range { lo, hi, step: (hi - lo) / 20.0 }.points()?
        }
    };
    let points = frontier(&model, &grid)?;
    sink.table(&points)?;
    sink.report(format!("A = {:.12e}", abc.a));
    sink.report(format!("B = {:.12e}", abc.b));
    sink.report(format!("C = {:.12e}", abc.c));
    sink.report(format!("B/A = {:.12e}", abc.apex_return()));
    sink.report(format!("1/A = {:.12e}", 1.0 / abc.a));
    Ok(())
}

fn sweep_rows(results: &[SweepResult]) -> Vec<SweepRow> {
    results.iter().flat_map(SweepResult::rows).collect()
}

fn write_sweep(sink: &Sink, results: &[SweepResult]) -> Result<(), CliError> {
    let rows = sweep_rows(results);
    sink.table_with(&rows, |buf| Ok(write_rows_csv(&rows, buf)?))
}

fn log_rows(sink: &Sink, results: &[SweepResult]) {
    for row in sweep_rows(results) {
        sink.report(format!(
            "{} target={} N={} T={} r={:.4}: mean_q0={:.5} (se {:.5}, pred {:.5}), in_ratio={:.5} (pred {:.5}), skipped {}/{}",
            row.family,
            row.target.map_or("-".to_string(), |t| t.to_string()),
            row.n_assets,
            row.t_obs,
            row.r,
            row.mean_q0,
            row.se_q0,
            row.pred_q0,
            row.mean_in_ratio,
            row.pred_in_ratio,
            row.n_skipped,
            row.n_trials,
        ));
    }
}

fn check_skips(results: &[SweepResult], threshold: f64) -> Result<(), CliError> {
    let fraction = results.iter().map(SweepResult::max_skip_fraction).fold(0.0, f64::max);
    if fraction > threshold {
        return Err(CliError::ExcessiveSkips { fraction, threshold });
    }
    Ok(())
}

pub fn sweep_cmd(config: &Config) -> Result<(), CliError> {
    let sink = Sink::new(config);
    let mode = config.mode();
    let n_trials = config.n_trials()?;
    let threshold = config.skip_threshold()?;
    let r_grid = config
        .file
        .r_grid
        .clone()
        .unwrap_or_else(|| (1..=8).map(|k| k as f64 / 10.0).collect());
    if r_grid.is_empty() {
        return Err(CliError::config("r_grid is empty"));
    }
    let (model, label) = config.market_model()?;
    for &r in &r_grid {
        check_ratio(r, model.n_assets(), mode)?;
    }
    let spec = SweepSpec {
        r_grid,
        target_return: config.target_return(&model)?,
        mode,
        n_trials,
        base_seed: config.base_seed(),
        divisor: config.file.divisor.unwrap_or_default(),
        policy: config.file.policy.unwrap_or_default(),
    };
    let result = run_sweep_model(&model, &label, &spec)?;
    let results = [result];
    write_sweep(&sink, &results)?;
    log_rows(&sink, &results);
    match divergence_fit(&results[0]) {
        Ok(fit) => sink.report(format!("divergence slope: {:.6} ({} points)", fit.slope, fit.points_used)),
        Err(e) => sink.report(format!("divergence slope: n/a ({e})")),
    }
    check_skips(&results, threshold)
}

pub fn universality_cmd(config: &Config) -> Result<(), CliError> {
    let sink = Sink::new(config);
    let mode = config.mode();
    let n_assets = config.n_assets()?;
    let n_trials = config.n_trials()?;
    let threshold = config.skip_threshold()?;
    let r = config.file.r.unwrap_or(0.5);
    check_ratio(r, n_assets, mode)?;
    let families = config.families();
    let targets = config.file.targets.clone().unwrap_or_else(|| vec![0.5, 0.55]);
    if families.is_empty() || targets.is_empty() {
        return Err(CliError::config("families and targets must be non-empty"));
    }
    if families.len() < 2 && targets.len() < 2 {
        return Err(CliError::config("universality needs at least two families or two targets"));
    }
    if let Some(t) = targets.iter().find(|t| !t.is_finite()) {
        return Err(CliError::config(format!("targets must be finite, got {t}")));
    }
    for family in &families {
        family
            .validate()
            .map_err(|e| CliError::config(format!("family {}: {e}", family.label())))?;
    }
    let means = config.means();
    means.means(n_assets)?;
    let spec = BatterySpec {
        n_assets,
        r,
        families,
        targets,
        means,
        mode,
        n_trials,
        base_seed: config.base_seed(),
        divisor: config.file.divisor.unwrap_or_default(),
        policy: config.file.policy.unwrap_or_default(),
    };
    let cells = universality_battery(&spec)?;
    write_sweep(&sink, &cells)?;
    log_rows(&sink, &cells);
    sink.report(format!("max pairwise z: {:.4} over {} cells", max_pairwise_z(&cells), cells.len()));
    check_skips(&cells, threshold)
}

#[derive(Debug, Serialize)]
struct StatmechRow {
    beta: f64,
    max_weight_deviation: f64,
    free_energy: f64,
    gap: f64,
}

pub const WEIGHT_TOLERANCE: f64 = 1e-9;
pub const GAP_TOLERANCE: f64 = 1e-4;

pub fn statmech_cmd(config: &Config) -> Result<(), CliError> {
    let sink = Sink::new(config);
    let betas = config.file.betas.clone().unwrap_or_else(|| vec![0.1, 1.0, 10.0, 1000.0]);
    let beta_limit = config.file.beta_limit.unwrap_or(1e6);
    if betas.is_empty() {
        return Err(CliError::config("betas is empty"));
    }
    if let Some(b) = betas.iter().chain([&beta_limit]).find(|b| !(**b > 0.0 && b.is_finite())) {
        return Err(CliError::config(format!("beta must be positive and finite, got {b}")));
    }
    let (model, _) = config.market_model()?;
    let target = config.target_return(&model)?;
    let exact = solve_exact(&model, target, 1.0)?;
    let sigma2 = exact.variance;
    let zero = vec![0.0; model.n_assets()];

    let mut rows = Vec::with_capacity(betas.len() + 1);
    for &beta in betas.iter().chain([&beta_limit]) {
        let w = thermal_weights(&model, target, beta)?;
        let dev = w.iter().zip(&exact.weights).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let f = free_energy(&model, target, &zero, beta)?;
        rows.push(StatmechRow {
            beta,
            max_weight_deviation: dev,
            free_energy: f,
            gap: (2.0 * f - sigma2).abs(),
        });
    }
    sink.table(&rows)?;

    let max_dev = rows[..betas.len()].iter().map(|r| r.max_weight_deviation).fold(0.0, f64::max);
    let gap = rows.last().expect("beta_limit row").gap;
    let weights_ok = max_dev < WEIGHT_TOLERANCE;
    let gap_ok = gap < GAP_TOLERANCE * sigma2;
    sink.report(format!("sigma*^2 = {sigma2:.12e} at target {target}"));
    sink.report(format!(
        "max |w(beta) - w*| = {max_dev:.3e} (tolerance {WEIGHT_TOLERANCE:e}): {}",
        if weights_ok { "ok" } else { "FAIL" }
    ));
    sink.report(format!(
        "|2F - sigma*^2| at beta = {beta_limit:e}: {gap:.3e} = {:.3e} sigma*^2 (tolerance {GAP_TOLERANCE:e} sigma*^2): {}",
        gap / sigma2,
        if gap_ok { "ok" } else { "FAIL" }
    ));
    if weights_ok && gap_ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed("statmech bridge outside tolerance".into()))
    }
}

#[derive(Debug, Serialize)]
struct HessianRow {
    r: f64,
    lambda1: f64,
    lambda2: f64,
    lambda3: f64,
    stable: bool,
}

/// Least-squares slope of `ln y` against `ln x`.
fn log_log_slope(pts: &[(f64, f64)]) -> Option<f64> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let logs: Vec<(f64, f64)> = pts.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = logs.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = logs.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

pub fn hessian_cmd(config: &Config) -> Result<(), CliError> {
    let sink = Sink::new(config);
    let beta = config.file.beta.unwrap_or(1.0);
    let nu = config.file.nu.unwrap_or(1.0);
    let n = config.file.n_replicas.unwrap_or(0.0);
    let r_grid = config.file.r_grid.clone().unwrap_or_else(|| {
        let mut g: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        g.extend([0.99, 1.0]);
        g
    });
    let check_n = config.file.check_n.clone().unwrap_or_else(|| vec![2, 3, 4]);
    if !(beta > 0.0 && beta.is_finite()) || !(nu > 0.0 && nu.is_finite()) {
        return Err(CliError::config(format!("beta and nu must be positive, got beta={beta} nu={nu}")));
    }
    if !(n >= 0.0 && n.is_finite()) {
        return Err(CliError::config(format!("n_replicas must be >= 0, got {n}")));
    }
    if r_grid.is_empty() || r_grid.iter().any(|r| !(*r >= 0.0 && r.is_finite())) {
        return Err(CliError::config("r_grid must be non-empty with finite r >= 0"));
    }
    if let Some(k) = check_n.iter().find(|&&k| k < 2) {
        return Err(CliError::config(format!("check_n entries must be >= 2, got {k}")));
    }

    let mut rows = Vec::with_capacity(r_grid.len());
    for &r in &r_grid {
        let s = hessian_spectrum(beta, r, nu, n)?;
        rows.push(HessianRow {
            r,
            lambda1: s.lambda1,
            lambda2: s.lambda2,
            lambda3: s.lambda3,
            stable: s.stable,
        });
    }
    sink.table(&rows)?;

    let sub: Vec<(f64, f64)> = rows.iter().filter(|x| x.r < 1.0).map(|x| (1.0 - x.r, x.lambda3)).collect();
    match log_log_slope(&sub) {
        Some(s) => sink.report(format!("lambda3 log-log slope vs (1-r): {s:.12}")),
        None => sink.report("lambda3 log-log slope: n/a (need two points with r < 1)"),
    }

    let mut all_ok = true;
    for &k in &check_n {
        for row in rows.iter().filter(|x| x.r < 1.0) {
            let c = hessian_numeric_check(beta, row.r, nu, k);
            all_ok &= c.passed;
            sink.report(format!(
                "numeric check n={k} r={}: max rel error {:.3e}, multiplicities {:?} (expected {:?}): {}",
                row.r,
                c.max_rel_error,
                c.found_multiplicities,
                c.expected_multiplicities,
                if c.passed { "ok" } else { "FAIL" }
            ));
        }
    }
    if all_ok {
        Ok(())
    } else {
        Err(CliError::CheckFailed("numeric Hessian disagrees with the analytic spectrum".into()))
    }
}
