//! Resilient state estimation for bounded-noise LTI plants under sparse
//! sensor attacks.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`] and [`model`]: tolerant rank tests, stacked observation
//!   matrices, unstable eigenstructure.
//! * [`decoder`]: the l0 decoder with an alternating-projection feasibility
//!   oracle.
//! * [`detect`]: the two intrusion detectors and the innovation threshold.
//! * [`sim`]: closed-loop plant simulation, attack injection, authentication.
//! * [`attackability`]: perfect-attackability verdicts and policy checks.
//! * [`synth`]: constructive stealthy attack plans.
//! * [`config`] and [`scenario`]: declarative scenarios and the built-in
//!   vehicle-trajectory experiments.

pub mod attackability;
pub mod config;
pub mod decoder;
pub mod detect;
pub mod fixtures;
pub mod linalg;
pub mod model;
pub mod par;
pub mod scenario;
pub mod sim;
pub mod synth;

pub use model::{build_f, build_o, SensorSet, StackedWindow, SystemModel};
pub use decoder::{decode, DecodeResult, Decoder, NoiseFeasibleSet, OmegaMode};
