//! Latent Gaussian models for separating glaciological signals: SPDE Matérn
//! fields on triangular meshes, spatio-temporal process priors, point and
//! footprint observation operators, and sparse Gaussian inference with
//! Metropolis-within-Gibbs hyperparameter sampling.

pub mod cholesky;
pub mod error;
pub mod experiments;
pub mod gmrf;
pub mod io;
pub mod matern;
pub mod mesh;
pub mod observations;
pub mod processes;
pub mod sparse;
pub mod transport;

pub use error::{Error, Result};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The random generator used everywhere a seed is accepted.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Independent stream `stream` of the generator seeded with `seed`.
pub fn seeded_rng_stream(seed: u64, stream: u64) -> SeededRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
