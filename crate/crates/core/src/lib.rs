//! Mean-variance portfolio optimization under estimation noise.
//!
//! * [`markowitz`]: exact solution of the budget- and return-constrained
//!   variance minimization for known moments.
//! * [`statmech`]: the same problem as a Gaussian statistical-mechanics
//!   model; free energy, thermal weights and the zero-temperature limit.
//! * [`sampling`]: seeded Gaussian samples and sample estimators.
//! * [`experiment`]: Monte Carlo re-optimization on samples, sweeps over
//!   `r = N/T`, universality batteries and divergence fits.
//! * [`replica`]: closed-form replica predictions, saddle point and Hessian
//!   stability.

pub mod error;
pub mod experiment;
pub mod linalg;
pub mod markowitz;
pub mod replica;
pub mod sampling;
pub mod statmech;

pub use error::{Error, Result};
pub use experiment::{
    divergence_fit, fit_divergence, max_pairwise_z, run_sweep, run_sweep_model, run_trial,
    universality_battery, BatterySpec, DivergenceFit, Mode, SingularPolicy, SweepResult, SweepRow,
    SweepSpec, TrialRecord,
};
pub use markowitz::{
    brute_force_qp, cholesky_factor, compute_abc, frontier, solve_exact, solve_global_min,
    AbcScalars, FrontierPoint, MarketModel, PortfolioSolution,
};
pub use replica::{
    hessian_numeric_check, hessian_spectrum, predict, saddle_point, HessianCheck, HessianSpectrum,
    ReplicaPrediction, SaddlePoint,
};
pub use sampling::{
    estimate, generate, make_family, CovarianceFamily, Divisor, Loadings, MeanSpec, SampleEstimators,
    SampleSet,
};
pub use statmech::{free_energy, thermal_state, thermal_weights, ThermalState};

pub use nalgebra::{DMatrix, DVector};
