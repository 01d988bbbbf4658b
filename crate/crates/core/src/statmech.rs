//! Finite-temperature view of the Markowitz problem.
//!
//! The Hamiltonian is `½ wᵀ Σ w + hᵀ w` with the budget fixed to one and the
//! return fixed to `target`. Integrating the Boltzmann weight at inverse
//! temperature `β` gives the closed-form free energy implemented here; its
//! gradient in the fields is the thermal average of the weights, and
//! `2 F` tends to the frontier variance as `β → ∞`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::markowitz::{compute_abc, AbcScalars, MarketModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalState {
    pub beta: f64,
    pub fields: Vec<f64>,
    pub free_energy: f64,
    /// `∂F/∂h_i` at `fields`.
    pub thermal_weights: Vec<f64>,
}

struct Terms {
    abc: AbcScalars,
    x: DVector<f64>,
    y: DVector<f64>,
    /// `Σ⁻¹ h`
    g: DVector<f64>,
    /// `1ᵀ Σ⁻¹ h + 1`
    p: f64,
    /// `μᵀ Σ⁻¹ h + target`
    s: f64,
}

fn terms(model: &MarketModel, target: f64, fields: &DVector<f64>, beta: f64) -> Result<Terms> {
    if !(beta > 0.0) || !beta.is_finite() {
        return Err(Error::OutOfDomain {
            name: "beta",
            value: beta,
            domain: "(0, inf)",
        });
    }
    let n = model.n_assets();
    if fields.len() != n {
        return Err(Error::Dimension(format!(
            "fields has length {}, model has {n} assets",
            fields.len()
        )));
    }
    let abc = compute_abc(model);
    if abc.is_degenerate() {
        return Err(Error::DegenerateReturns {
            discriminant: abc.discriminant,
            threshold: crate::markowitz::DEGENERACY_TOLERANCE * abc.a * abc.c,
        });
    }
    let chol = model.cholesky();
    let x = chol.solve(&DVector::from_element(n, 1.0));
    let y = chol.solve(model.means());
    let g = chol.solve(fields);
    let p = g.sum() + 1.0;
    let s = model.means().dot(&g) + target;
    Ok(Terms { abc, x, y, g, p, s })
}

/// Free energy `F = -β⁻¹ ln Z` in closed form.
///
/// The β-dependent constants are kept in their conventional printed form:
/// `-(N/2β) ln(2π/β) + (1/2β) ln det Σ - (1/2β) ln(AC-B²)`. They do not
/// depend on the fields and vanish as `β → ∞`.
pub fn free_energy(model: &MarketModel, target: f64, fields: &[f64], beta: f64) -> Result<f64> {
    let h = DVector::from_column_slice(fields);
    let t = terms(model, target, &h, beta)?;
    let AbcScalars {
        a,
        b,
        c,
        discriminant: d,
    } = t.abc;
    let n = model.n_assets() as f64;
    let entropic = -(n / (2.0 * beta)) * (2.0 * std::f64::consts::PI / beta).ln()
        + model.cholesky().log_det() / (2.0 * beta)
        - d.ln() / (2.0 * beta);
    let field_self = -0.5 * h.dot(&t.g);
    let constrained = (a * t.s * t.s + c * t.p * t.p - 2.0 * b * t.s * t.p) / (2.0 * d);
    Ok(entropic + field_self + constrained)
}

/// Analytic `∂F/∂h` at arbitrary fields.
pub fn free_energy_gradient(
    model: &MarketModel,
    target: f64,
    fields: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    let h = DVector::from_column_slice(fields);
    let t = terms(model, target, &h, beta)?;
    let AbcScalars {
        a,
        b,
        c,
        discriminant: d,
    } = t.abc;
    let eta = (a * t.s - b * t.p) / d;
    let lambda = (c * t.p - b * t.s) / d;
    let grad = &t.x * lambda + &t.y * eta - &t.g;
    Ok(grad.iter().cloned().collect())
}

/// Thermal average `⟨w_i⟩ = ∂F/∂h_i` at zero field. Independent of `β`.
pub fn thermal_weights(model: &MarketModel, target: f64, beta: f64) -> Result<Vec<f64>> {
    free_energy_gradient(model, target, &vec![0.0; model.n_assets()], beta)
}

pub fn thermal_state(model: &MarketModel, target: f64, fields: &[f64], beta: f64) -> Result<ThermalState> {
    Ok(ThermalState {
        beta,
        fields: fields.to_vec(),
        free_energy: free_energy(model, target, fields, beta)?,
        thermal_weights: free_energy_gradient(model, target, fields, beta)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markowitz::solve_exact;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn unit2() -> MarketModel {
        MarketModel::new(DMatrix::identity(2, 2), DVector::from_column_slice(&[1.0, 0.0])).unwrap()
    }

    fn model3() -> MarketModel {
        MarketModel::new(
            DMatrix::from_row_slice(3, 3, &[2.0, 0.4, 0.1, 0.4, 1.0, -0.2, 0.1, -0.2, 1.5]),
            DVector::from_column_slice(&[0.05, 0.12, -0.03]),
        )
        .unwrap()
    }

    /// Zero-field free energy written directly from the scalar formula.
    fn zero_field_reference(model: &MarketModel, mu: f64, beta: f64) -> f64 {
        let abc = compute_abc(model);
        let n = model.n_assets() as f64;
        let det = model.covariance().clone().determinant();
        -(n / (2.0 * beta)) * (2.0 * std::f64::consts::PI / beta).ln() + det.ln() / (2.0 * beta)
            - abc.discriminant.ln() / (2.0 * beta)
            + 0.5 * (abc.a * mu * mu - 2.0 * abc.b * mu + abc.c) / abc.discriminant
    }

    #[test]
    fn zero_field_specialization() {
        for m in [unit2(), model3()] {
            for beta in [0.1, 1.0, 37.0] {
                let f = free_energy(&m, 0.07, &vec![0.0; m.n_assets()], beta).unwrap();
                assert_relative_eq!(f, zero_field_reference(&m, 0.07, beta), max_relative = 1e-12);
            }
        }
    }

    #[test]
    fn low_temperature_limit_two_assets() {
        let f = free_energy(&unit2(), 0.5, &[0.0, 0.0], 1e6).unwrap();
        assert!((2.0 * f - 0.5).abs() < 1e-4 * 0.5);
    }

    #[test]
    fn thermal_weights_match_exact_solution_at_any_beta() {
        let m = unit2();
        assert_eq!(thermal_weights(&m, 0.5, 1.0).unwrap(), vec![0.5, 0.5]);
        assert_eq!(thermal_weights(&m, 0.5, 100.0).unwrap(), vec![0.5, 0.5]);

        let m = model3();
        let exact = solve_exact(&m, 0.04, 1.0).unwrap();
        for beta in [0.1, 1.0, 10.0, 1000.0] {
            let w = thermal_weights(&m, 0.04, beta).unwrap();
            for (a, b) in w.iter().zip(&exact.weights) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = model3();
        let step = 1e-6;
        for fields in [vec![0.0; 3], vec![0.01, -0.02, 0.005]] {
            let grad = free_energy_gradient(&m, 0.04, &fields, 3.0).unwrap();
            for i in 0..3 {
                let mut up = fields.clone();
                let mut dn = fields.clone();
                up[i] += step;
                dn[i] -= step;
                let fd = (free_energy(&m, 0.04, &up, 3.0).unwrap()
                    - free_energy(&m, 0.04, &dn, 3.0).unwrap())
                    / (2.0 * step);
                assert!((fd - grad[i]).abs() < 1e-5, "component {i}: {fd} vs {}", grad[i]);
            }
        }
    }

    #[test]
    fn invalid_beta_and_degenerate_means() {
        assert!(matches!(
            free_energy(&unit2(), 0.5, &[0.0, 0.0], 0.0),
            Err(Error::OutOfDomain { .. })
        ));
        let flat = MarketModel::new(DMatrix::identity(2, 2), DVector::from_column_slice(&[1.0, 1.0])).unwrap();
        assert!(matches!(
            thermal_weights(&flat, 1.0, 1.0),
            Err(Error::DegenerateReturns { .. })
        ));
    }
}
