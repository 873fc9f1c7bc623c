//! Reservoir computing for forecasting, classification and control of
//! dynamical systems.
//!
//! A model is an embedding of the input into reservoir space, a driver that
//! advances the reservoir state, and a linear readout trained by ridge
//! regression.

pub mod checkpoint;
pub mod classify;
pub mod control;
pub mod data;
pub mod driver;
pub mod embed;
pub mod error;
pub mod forecast;
pub mod ode;
mod parallel;
pub mod readout;
pub mod rng;
pub mod series;
pub mod sparse;
pub mod train;

pub use driver::{ContinuousEsnDriver, Driver, GruDriver, LeakyEsnDriver, ReservoirWeights};
pub use embed::{ChunkLayout, Embedding, LinearEmbedding};
pub use error::{Error, Result};
pub use readout::LinearReadout;
pub use rng::{seeded_rng, RngSpec, SeededRng};
pub use series::{ForcedStates, ReservoirState, TimeSeries};
