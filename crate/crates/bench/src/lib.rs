//! Fixtures shared by the criterion benches.

use mvreplica::{make_family, CovarianceFamily, MarketModel, MeanSpec};

pub fn toeplitz_model(n_assets: usize) -> MarketModel {
    make_family(
        &CovarianceFamily::Toeplitz { rho: 0.6 },
        n_assets,
        &MeanSpec::Linspace { lo: 0.0, hi: 1.0 },
    )
    .expect("toeplitz fixture is valid")
}
