//! Replicated plain-text editing under a common transformation contract,
//! with an operational transformation engine and a WOOT engine.

pub mod error;
pub mod framework;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod netsim;
pub mod ot;
pub mod scenario;
pub mod trace;
pub mod woot;

pub use error::{Error, Result};
pub use framework::{Engine, EngineKind, OtEngine, Site, WireMessage, WootEngine};
pub use harness::{run_scenario, Ablation, RunOptions, RunReport};
pub use model::{ExternalOp, ExternalState, SiteId, TimestampedOp, VectorClock};
pub use scenario::Scenario;
