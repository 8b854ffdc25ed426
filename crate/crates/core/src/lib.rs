//! Simulation and optimization library for user-centric cell-free mmWave
//! MIMO downlinks: random drops and clustering, multipath beamspace
//! channels, two-stage beam selection, a distributed weighted sum-MSE
//! precoder with exact and Neumann-series solvers, rate metrics, and a
//! Monte-Carlo experiment harness.

pub mod beamselect;
pub mod channel;
mod error;
pub mod harness;
pub mod metrics;
pub mod numerics;
pub mod precoder;
pub mod topology;

use rand::SeedableRng;

pub use beamselect::{BeamAssignment, RatioReport};
pub use channel::{ChannelSet, PathParams};
pub use metrics::{RateMode, RateReport};
pub use error::{Error, Result};
pub use harness::{ExperimentKind, ExperimentSpec, OutputFormat, Scheme, SimResult};
pub use numerics::{CMatrix, FlopCounter, HermitianEig, LowRankOperator, C64};
pub use precoder::{EffectiveChannels, PrecoderState};
pub use topology::{SolverMode, SystemConfig, Topology};

/// Random stream used for every draw in the crate.
pub type SimRng = rand_chacha::ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}
