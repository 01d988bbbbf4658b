//! Closed-form replica results for variance optimization on noisy samples.
//!
//! With `r = N/T < 1` the sample-averaged estimation error is
//! `E[q0] = 1/(1-r)` and the in-sample optimum shrinks by `(1-r)`. The
//! replica-symmetric saddle point is
//!
//! ```text
//!     Q^{ab}  = (ν + β⁻¹ δ^{ab}) / (1-r)
//!     Q̂^{ab}  = β (1-r) (δ^{ab} - βrν / (βrν n + 1))
//! ```
//!
//! and the Hessian of the replica functional at that point factorizes as
//! `H^{ab,cd} = R^{ac} R^{bd}` with `R = β (1-r)^{3/2} (δ - βrν/(βrν n + 1))`.
//!
//! The replica count `n` is a real parameter. `n = 0` is the physical
//! limit; small integer `n` is what [`saddle_residual`] and
//! [`hessian_numeric_check`] evaluate with explicit `n × n` matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplicaPrediction {
    pub r: f64,
    pub expected_q0: f64,
    pub in_sample_factor: f64,
}

pub fn predict(r: f64) -> Result<ReplicaPrediction> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::OutOfDomain {
            name: "r",
            value: r,
            domain: "(0, 1)",
        });
    }
    let in_sample_factor = 1.0 - r;
    Ok(ReplicaPrediction {
        r,
        expected_q0: 1.0 / in_sample_factor,
        in_sample_factor,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SaddlePoint {
    pub beta: f64,
    pub r: f64,
    pub nu: f64,
    pub n_replicas: f64,
    pub q_diag: f64,
    pub q_offdiag: f64,
    pub qhat_diag: f64,
    pub qhat_offdiag: f64,
}

impl SaddlePoint {
    /// `Q^{aa} / ν`; tends to `1/(1-r)` as `β → ∞`.
    pub fn q0_estimate(&self) -> f64 {
        self.q_diag / self.nu
    }
}

fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            name,
            value,
            domain: "(0, inf)",
        })
    }
}

fn check_replicas(n: f64) -> Result<()> {
    if n >= 0.0 && n.is_finite() {
        Ok(())
    } else {
        Err(Error::OutOfDomain {
            name: "n",
            value: n,
            domain: "[0, inf)",
        })
    }
}

/// `βrν / (βrν n + 1)`
fn coupling(beta: f64, r: f64, nu: f64, n: f64) -> f64 {
    let brn = beta * r * nu;
    brn / (brn * n + 1.0)
}

pub fn saddle_point(beta: f64, r: f64, nu: f64, n: f64) -> Result<SaddlePoint> {
    check_positive("beta", beta)?;
    check_positive("nu", nu)?;
    check_replicas(n)?;
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::OutOfDomain {
            name: "r",
            value: r,
            domain: "(0, 1)",
        });
    }
    let q_offdiag = nu / (1.0 - r);
    let q_diag = (nu + 1.0 / beta) / (1.0 - r);
    let scale = beta * (1.0 - r);
    let qhat_offdiag = -scale * coupling(beta, r, nu, n);
    Ok(SaddlePoint {
        beta,
        r,
        nu,
        n_replicas: n,
        q_diag,
        q_offdiag,
        qhat_diag: qhat_offdiag + scale,
        qhat_offdiag,
    })
}

fn replica_matrix(n: usize, diag: f64, offdiag: f64) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |a, b| if a == b { diag } else { offdiag })
}

/// Largest absolute residual of the two stationarity conditions
/// `Q̂ = β (rβQ + I)⁻¹` and `Q = ν U + Q̂⁻¹`, using explicit `n × n`
/// inverses.
pub fn saddle_residual(beta: f64, r: f64, nu: f64, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParameter("need at least one replica".into()));
    }
    let sp = saddle_point(beta, r, nu, n as f64)?;
    let q = replica_matrix(n, sp.q_diag, sp.q_offdiag);
    let qhat = replica_matrix(n, sp.qhat_diag, sp.qhat_offdiag);
    let id = DMatrix::<f64>::identity(n, n);
    let ones = DMatrix::<f64>::from_element(n, n, 1.0);

    let inner = (&q * (r * beta) + &id)
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("rβQ + I is singular".into()))?;
    let qhat_inv = qhat
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::InvalidParameter("Q̂ is singular".into()))?;
    let res_q = -&qhat + inner.transpose() * beta;
    let res_qhat = -&q + ones * nu + qhat_inv.transpose();
    Ok(res_q.amax().max(res_qhat.amax()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HessianSpectrum {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub mult1: f64,
    pub mult2: f64,
    pub mult3: f64,
    pub stable: bool,
}

impl HessianSpectrum {
    pub fn min_eigenvalue(&self) -> f64 {
        self.lambda1.min(self.lambda2).min(self.lambda3)
    }
}

/// Eigenvalues `β²(1-r)³ / (βrνn+1)^k` for `k = 2, 1, 0`.
///
/// Defined for any `r ≥ 0`; for `r ≥ 1` the eigenvalues are non-positive and
/// the spectrum is reported unstable.
pub fn hessian_spectrum(beta: f64, r: f64, nu: f64, n: f64) -> Result<HessianSpectrum> {
    check_positive("beta", beta)?;
    check_positive("nu", nu)?;
    check_replicas(n)?;
    if !(r >= 0.0 && r.is_finite()) {
        return Err(Error::OutOfDomain {
            name: "r",
            value: r,
            domain: "[0, inf)",
        });
    }
    let lambda3 = beta * beta * (1.0 - r).powi(3);
    let denom = beta * r * nu * n + 1.0;
    let lambda2 = lambda3 / denom;
    let lambda1 = lambda3 / (denom * denom);
    let mut s = HessianSpectrum {
        lambda1,
        lambda2,
        lambda3,
        mult1: 1.0,
        mult2: 2.0 * (n - 1.0),
        mult3: (n - 1.0) * (n - 1.0),
        stable: false,
    };
    s.stable = s.min_eigenvalue() > 0.0;
    Ok(s)
}

/// `R^{ab} = ρ + Δρ δ^{ab}` as `(ρ, Δρ)`.
pub fn r_matrix_elements(beta: f64, r: f64, nu: f64, n: f64) -> (f64, f64) {
    let delta = beta * (1.0 - r).powf(1.5);
    (-delta * coupling(beta, r, nu, n), delta)
}

/// `n² × n²` Hessian `H^{ab,cd} = R^{ac} R^{bd}`, pair `(a,b)` at row `a·n + b`.
pub fn hessian_matrix(beta: f64, r: f64, nu: f64, n: usize) -> DMatrix<f64> {
    let (rho, delta) = r_matrix_elements(beta, r, nu, n as f64);
    let rm = replica_matrix(n, rho + delta, rho);
    rm.kronecker(&rm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HessianCheck {
    pub n: usize,
    pub analytic: HessianSpectrum,
    /// Numeric eigenvalues, ascending.
    pub numeric: Vec<f64>,
    /// Numeric eigenvalues matched to `λ1, λ2, λ3`.
    pub found_multiplicities: [usize; 3],
    pub expected_multiplicities: [usize; 3],
    /// Largest `|numeric - analytic|` over the sorted spectra, relative to
    /// the largest analytic eigenvalue magnitude.
    pub max_rel_error: f64,
    pub passed: bool,
}

pub const HESSIAN_CHECK_TOLERANCE: f64 = 1e-9;

/// Diagonalizes [`hessian_matrix`] and compares against the closed-form
/// eigenvalues and multiplicities `{1, 2(n-1), (n-1)²}`.
///
/// # Panics
///
/// If `n < 2` or the domain checks of [`hessian_spectrum`] fail.
pub fn hessian_numeric_check(beta: f64, r: f64, nu: f64, n: usize) -> HessianCheck {
    assert!(n >= 2, "numeric Hessian check needs n >= 2");
    let analytic = hessian_spectrum(beta, r, nu, n as f64).expect("valid Hessian parameters");
    let h = hessian_matrix(beta, r, nu, n);
    let mut numeric: Vec<f64> = h.symmetric_eigenvalues().iter().cloned().collect();
    numeric.sort_by(f64::total_cmp);

    let expected = [1, 2 * (n - 1), (n - 1) * (n - 1)];
    let values = [analytic.lambda1, analytic.lambda2, analytic.lambda3];
    let mut multiset: Vec<f64> = values
        .iter()
        .zip(expected)
        .flat_map(|(&v, m)| std::iter::repeat_n(v, m))
        .collect();
    multiset.sort_by(f64::total_cmp);

    let scale = values.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let max_abs = numeric
        .iter()
        .zip(&multiset)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0_f64, f64::max);
    let max_rel_error = if scale > 0.0 { max_abs / scale } else { max_abs };

    let mut found = [0usize; 3];
    for &ev in &numeric {
        let (k, _) = values
            .iter()
            .enumerate()
            .map(|(k, v)| (k, (ev - v).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .expect("three eigenvalues");
        found[k] += 1;
    }
    let distinct = {
        let tol = HESSIAN_CHECK_TOLERANCE * scale.max(f64::MIN_POSITIVE);
        (values[0] - values[1]).abs() > tol
            && (values[1] - values[2]).abs() > tol
            && (values[0] - values[2]).abs() > tol
    };
    let passed = max_rel_error < HESSIAN_CHECK_TOLERANCE && (!distinct || found == expected);
    HessianCheck {
        n,
        analytic,
        numeric,
        found_multiplicities: found,
        expected_multiplicities: expected,
        max_rel_error,
        passed,
    }
}
