//! Control-plane toolkit for LEO constellations: controller placement,
//! per-satellite handover prediction, and simulation of seamless versus
//! drain-and-rejoin controller handovers.

pub mod assignment;
pub mod config;
pub mod error;
pub mod orbit;
pub mod pipeline;
pub mod placement;
pub mod protocol;
pub mod report;
pub mod scenario;
pub mod topology;

pub use error::{AssignmentError, ConfigError, PipelineError, PlacementError, ReportError, SimError};
