//! Two-block spin Ising model: exact and Glauber sampling, block recovery by
//! a low-rank SDP relaxation, and scaled fluctuation checks on the critical
//! line.

mod error;
pub mod fluctuations;
pub mod io;
pub mod model;
mod quadrature;
pub mod recovery;
pub mod sampler;

pub use error::{Error, Result};
pub use model::{
    block_magnetizations, classify_regime, coupling_matrix, hamiltonian_magnetization, hamiltonian_pairs,
    limit_support_points, solve_mplus, BlockMagnetization, ModelParams, Partition, Regime, SpinConfiguration,
};
pub use recovery::{
    center, empirical_second_moment, extract_partition, ml_local_search, recover, recovery_error, sdp_solve,
    CenteredGram, ElliptopeFactor, EmpiricalCovariance, RecoverOptions, RecoveryResult, SdpOptions, SdpSolution,
};
pub use sampler::{exact_correlations, exact_sample, glauber_sample, Correlations, SampleBatch, SeedSpec, WeightTable};
pub use fluctuations::{
    correlation_gap, gap_scaling_exponent, ks_statistic, phi_exponent, phi_limit, predict_limit, quartic_law,
    scaled_statistic, tilted_density, Branch, CorrelationGapEstimate, LimitLaw, LimitPrediction, QuarticLaw, Scale,
    ScaledStatistic, StatKind,
};
