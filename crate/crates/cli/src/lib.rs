//! Stage-wise command-line pipeline: basis, surrogates, synthetic data,
//! sampling and postprocessing, all rooted in one workdir.

pub mod config;
pub mod stages;
pub mod summary;

use std::fmt;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use config::RunConfig;

/// Error with its process exit code: 2 config/input, 3 accuracy threshold, 1 internal.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self { code: 2, message: message.into() }
    }

    pub fn accuracy(message: impl Into<String>) -> Self {
        Self { code: 3, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { code: 1, message: message.into() }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<fieldinv::Error> for CliError {
    fn from(e: fieldinv::Error) -> Self {
        match e {
            fieldinv::Error::Invalid(_) | fieldinv::Error::DimensionMismatch { .. } | fieldinv::Error::Format(_) => CliError::config(e.to_string()),
            other => CliError::internal(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::internal(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::internal(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// RNG streams derived from the master seed, one per consumer.
pub mod streams {
    pub const DATA_NOISE: u64 = 1;
    pub const PRIOR_VALIDATION: u64 = 2;
    pub const FORWARD_VALIDATION: u64 = 3;
    pub const CHAIN_COM: u64 = 4;
    pub const CHAIN_COC: u64 = 5;
    pub const POST_AUGMENT: u64 = 6;
    pub const PRIOR_BAND: u64 = 7;
}

/// First word of the ChaCha8 stream `stream` keyed by `master`.
pub fn stage_seed(master: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(stream);
    rng.next_u64()
}

pub fn stage_rng(master: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stage_seed(master, stream))
}
