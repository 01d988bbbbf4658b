//! Exact mean-variance optimization with known moments.
//!
//! Minimizes `wᵀ Σ w` subject to `Σ_i w_i = budget` and, optionally,
//! `Σ_i w_i μ_i = target`. With `x = Σ⁻¹ 1` and `y = Σ⁻¹ μ` the problem
//! collapses onto three scalars
//!
//! ```text
//!     A = 1ᵀ x,   B = 1ᵀ y,   C = μᵀ y
//! ```
//!
//! and the optimum is `w* = λ* x + η* y` with
//! `λ* = (C b - B t) / (AC - B²)` and `η* = (A t - B b) / (AC - B²)`.
//! For `b = 1` the frontier is `σ*²(t) = A/(AC-B²) (t - B/A)² + 1/A`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Cholesky};

/// Relative threshold on `AC - B²` below which the return constraint is
/// treated as redundant.
pub const DEGENERACY_TOLERANCE: f64 = 1e-10;

/// True covariance and mean vector of the asset returns.
///
/// Construction symmetrizes the covariance and verifies it is strictly
/// positive definite; the Cholesky factor is kept alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct MarketModel {
    covariance: DMatrix<f64>,
    means: DVector<f64>,
    chol: Cholesky,
}

#[derive(Serialize, Deserialize)]
struct MarketModelFile {
    covariance: Vec<Vec<f64>>,
    means: Vec<f64>,
}

impl MarketModel {
    pub fn new(covariance: DMatrix<f64>, means: DVector<f64>) -> Result<Self> {
        let n = covariance.nrows();
        if n == 0 {
            return Err(Error::Dimension("model needs at least one asset".into()));
        }
        if means.len() != n {
            return Err(Error::Dimension(format!(
                "covariance is {n}x{}, means has length {}",
                covariance.ncols(),
                means.len()
            )));
        }
        if covariance.iter().chain(means.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("model contains non-finite values".into()));
        }
        let covariance = linalg::symmetrize(&covariance)?;
        let chol = Cholesky::factor(&covariance)?;
        Ok(Self {
            covariance,
            means,
            chol,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.means.len()
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn means(&self) -> &DVector<f64> {
        &self.means
    }

    pub fn cholesky(&self) -> &Cholesky {
        &self.chol
    }

    /// Same model with the covariance multiplied by `c > 0`.
    pub fn scaled_covariance(&self, c: f64) -> Result<Self> {
        Self::new(&self.covariance * c, self.means.clone())
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: MarketModelFile = serde_json::from_str(s)?;
        let n = file.covariance.len();
        if file.covariance.iter().any(|row| row.len() != n) {
            return Err(Error::Dimension("covariance rows must all have length N".into()));
        }
        let flat: Vec<f64> = file.covariance.into_iter().flatten().collect();
        Self::new(
            DMatrix::from_row_slice(n, n, &flat),
            DVector::from_vec(file.means),
        )
    }

    pub fn to_json_string(&self) -> String {
        let file = MarketModelFile {
            covariance: self
                .covariance
                .row_iter()
                .map(|r| r.iter().cloned().collect())
                .collect(),
            means: self.means.iter().cloned().collect(),
        };
        serde_json::to_string_pretty(&file).expect("plain numeric data serializes")
    }

    /// Parses N rows of the covariance matrix followed by one row of means.
    /// Blank lines and lines starting with `#` are skipped.
    pub fn from_csv_str(s: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(s.as_bytes());
        let mut rows: Vec<Vec<f64>> = Vec::new();
        for record in reader.records() {
            let record = record?;
            if record.iter().all(|f| f.is_empty()) {
                continue;
            }
            let row = record
                .iter()
                .map(|f| {
                    f.parse::<f64>()
                        .map_err(|e| Error::Parse(format!("bad number {f:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            rows.push(row);
        }
        if rows.len() < 2 {
            return Err(Error::Parse(
                "expected an N x N covariance block followed by a means row".into(),
            ));
        }
        let n = rows.len() - 1;
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::Dimension(format!(
                "found {} rows; every row must have {n} columns",
                rows.len()
            )));
        }
        let means = rows.pop().expect("checked above");
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        Self::new(DMatrix::from_row_slice(n, n, &flat), DVector::from_vec(means))
    }

    pub fn to_csv_string(&self) -> String {
        let mut out = String::new();
        let fmt_row = |it: &mut dyn Iterator<Item = f64>| {
            it.map(|v| format!("{v:?}")).collect::<Vec<_>>().join(",")
        };
        for row in self.covariance.row_iter() {
            out.push_str(&fmt_row(&mut row.iter().cloned()));
            out.push('\n');
        }
        out.push_str(&fmt_row(&mut self.means.iter().cloned()));
        out.push('\n');
        out
    }

    /// Loads a model from `.json` or `.csv` (chosen by extension).
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("json") => Self::from_json_str(&text),
            Some(ext) if ext.eq_ignore_ascii_case("csv") => Self::from_csv_str(&text),
            _ => Err(Error::Parse(format!(
                "unrecognized model file extension: {}",
                path.display()
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbcScalars {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub discriminant: f64,
}

impl AbcScalars {
    pub fn is_degenerate(&self) -> bool {
        self.discriminant <= DEGENERACY_TOLERANCE * self.a * self.c
    }

    fn require_non_degenerate(&self) -> Result<()> {
        if self.is_degenerate() {
            Err(Error::DegenerateReturns {
                discriminant: self.discriminant,
                threshold: DEGENERACY_TOLERANCE * self.a * self.c,
            })
        } else {
            Ok(())
        }
    }

    /// Minimum-variance return `B/A`.
    pub fn apex_return(&self) -> f64 {
        self.b / self.a
    }

    /// Frontier variance at unit budget.
    pub fn frontier_variance(&self, target: f64) -> f64 {
        let apex = self.apex_return();
        self.a / self.discriminant * (target - apex).powi(2) + 1.0 / self.a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSolution {
    pub weights: Vec<f64>,
    /// Budget multiplier.
    pub lambda: f64,
    /// Return multiplier; zero when only the budget is constrained.
    pub eta: f64,
    pub variance: f64,
    /// `None` for the budget-only (global minimum) problem.
    pub target_return: Option<f64>,
    pub budget: f64,
}

impl PortfolioSolution {
    pub fn weights_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.weights)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub target_return: f64,
    pub variance: f64,
    pub is_efficient: bool,
}

/// Lower Cholesky factor `D` of a covariance, `D Dᵀ = Σ`.
pub fn cholesky_factor(covariance: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = linalg::symmetrize(covariance)?;
    Ok(Cholesky::factor(&sym)?.lower().clone())
}

struct Solves {
    x: DVector<f64>,
    y: DVector<f64>,
    abc: AbcScalars,
}

fn solves(model: &MarketModel) -> Solves {
    let n = model.n_assets();
    let x = model.chol.solve(&DVector::from_element(n, 1.0));
    let y = model.chol.solve(&model.means);
    let a = x.sum();
    let b = y.sum();
    let c = model.means.dot(&y);
    Solves {
        x,
        y,
        abc: AbcScalars {
            a,
            b,
            c,
            discriminant: a * c - b * b,
        },
    }
}

pub fn compute_abc(model: &MarketModel) -> AbcScalars {
    solves(model).abc
}

fn check_budget(budget: f64) -> Result<()> {
    if budget == 0.0 || !budget.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "budget must be finite and non-zero, got {budget}"
        )));
    }
    Ok(())
}

/// Closed-form solution with both the budget and the return constraint.
pub fn solve_exact(model: &MarketModel, target_return: f64, budget: f64) -> Result<PortfolioSolution> {
    check_budget(budget)?;
    let Solves { x, y, abc } = solves(model);
    abc.require_non_degenerate()?;
    let AbcScalars {
        a,
        b,
        c,
        discriminant: d,
    } = abc;
    let lambda = (c * budget - b * target_return) / d;
    let eta = (a * target_return - b * budget) / d;
    let w = x * lambda + y * eta;
    let variance =
        (a * target_return * target_return - 2.0 * b * target_return * budget + c * budget * budget) / d;
    Ok(PortfolioSolution {
        weights: w.iter().cloned().collect(),
        lambda,
        eta,
        variance,
        target_return: Some(target_return),
        budget,
    })
}

/// Minimum-variance portfolio under the budget constraint alone.
pub fn solve_global_min(model: &MarketModel, budget: f64) -> Result<PortfolioSolution> {
    check_budget(budget)?;
    let n = model.n_assets();
    let x = model.chol.solve(&DVector::from_element(n, 1.0));
    let a = x.sum();
    let lambda = budget / a;
    let w = x * lambda;
    Ok(PortfolioSolution {
        weights: w.iter().cloned().collect(),
        lambda,
        eta: 0.0,
        variance: budget * budget / a,
        target_return: None,
        budget,
    })
}

/// Unit-budget frontier variance at each grid value.
pub fn frontier(model: &MarketModel, return_grid: &[f64]) -> Result<Vec<FrontierPoint>> {
    let abc = compute_abc(model);
    abc.require_non_degenerate()?;
    let apex = abc.apex_return();
    Ok(return_grid
        .iter()
        .map(|&mu| FrontierPoint {
            target_return: mu,
            variance: abc.frontier_variance(mu),
            is_efficient: mu > apex,
        })
        .collect())
}

/// Reference solver: assembles the full `(N+2)×(N+2)` KKT system and
/// solves it through an SVD, sharing nothing with [`solve_exact`].
pub fn brute_force_qp(model: &MarketModel, target_return: f64, budget: f64) -> Result<PortfolioSolution> {
    check_budget(budget)?;
    let n = model.n_assets();
    let sigma = model.covariance();
    let mu = model.means();
    let m = n + 2;
    let mut kkt = DMatrix::<f64>::zeros(m, m);
    kkt.view_mut((0, 0), (n, n)).copy_from(sigma);
    for i in 0..n {
        kkt[(i, n)] = -1.0;
        kkt[(i, n + 1)] = -mu[i];
        kkt[(n, i)] = 1.0;
        kkt[(n + 1, i)] = mu[i];
    }
    let mut rhs = DVector::<f64>::zeros(m);
    rhs[n] = budget;
    rhs[n + 1] = target_return;

    let svd = kkt.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 1e-13 * smax) {
        return Err(Error::SingularKkt);
    }
    let sol = svd.solve(&rhs, 0.0).map_err(|_| Error::SingularKkt)?;
    let w = sol.rows(0, n).into_owned();
    Ok(PortfolioSolution {
        variance: linalg::quad_form(sigma, &w),
        weights: w.iter().cloned().collect(),
        lambda: sol[n],
        eta: sol[n + 1],
        target_return: Some(target_return),
        budget,
    })
}
