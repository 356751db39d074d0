//! Two-level IoT simulation: a coarse, partitioned time-stepped engine that
//! hands selected regions to fine-grained discrete-event instances.

pub mod config;
pub mod coord;
pub mod dissemination;
pub mod engine;
pub mod harness;
pub mod level1;
pub mod metrics;
pub mod mobility;
pub mod model;
pub mod rng;
pub mod spatial;

pub use config::{ConfigError, ConfigOverrides, SimConfig, SpawnTrigger};
pub use coord::{CoordError, CoordMessage, L1Launcher};
pub use engine::{simulate, Engine, EngineError, EngineOptions, RunOutcome, TimestepReport};
pub use metrics::{MetricsRow, RunMetrics};
pub use model::{Entity, EntityId, EntityKind, EntityStatus, InstanceId, Position, ToroidalWorld};
