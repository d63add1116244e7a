//! Resilient visual-agent runtime and GUI-drift simulator.

pub mod env;
pub mod geom;
pub mod rng;
pub mod fusion;
pub mod perception;
pub mod anchoring;
pub mod ledger;
pub mod hierarchy;
pub mod scenegraph;
pub mod scenario;
pub mod runtime;
pub mod bench;
