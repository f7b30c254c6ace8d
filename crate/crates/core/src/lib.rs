//! Joint visible-light / RF-backscatter indoor tracking simulator.
//!
//! LEDs broadcast their identifiers as square-wave BFSK; a batteryless tag
//! turns the light it sees into a backscatter switch signal, and a reader
//! decodes the identifiers and measures backscatter strength. A particle
//! filter fuses both into a position track.

// `!(x > 0.0)` is how validation rejects NaN along with non-positive values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod geometry;
pub mod grid;
pub mod harness;
pub mod rf;
pub mod receiver;
pub mod scenario;
pub mod tracker;
pub mod vlc;
pub mod waveform;

pub use error::{Error, Result};
pub use geometry::{Point2, Point3};
pub use scenario::{FrequencyPair, LedAp, LedId, Scenario, ScenarioConfig};
