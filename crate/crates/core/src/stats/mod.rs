//! Streaming moments, histograms of the second-class position, identity
//! checks and power-law fits.

mod accumulator;
mod batch;
mod check;
mod fit;
mod histogram;
mod identities;

pub use accumulator::MomentAccumulator;
pub use batch::{zip, Batched, Estimate};
pub use check::{CheckRecord, CheckStatus};
pub use fit::{fit_exponent, fit_exponent_weighted, FitPoint, FitResult};
pub use histogram::Histogram;
pub use identities::{
    diffusivity, identity_laplacian, moment_of_histogram, reconstruct_var_from_s, weighted_var_integral,
    LaplacianReport, VarProfile,
};
