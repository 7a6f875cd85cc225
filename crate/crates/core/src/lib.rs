//! Islanding partition solver for radial distribution networks.
//!
//! Given a feeder case and a set of line faults, the library finds the
//! de-energized regions, grows a capacity-bounded supply range around each
//! distributed generator, pools or splits overlapping ranges, narrows each
//! range so critical loads and their feed paths survive, and solves an exact
//! tree knapsack that maximizes weighted load restoration. A backward/
//! forward sweep then verifies voltages and currents on every island.

pub mod feasibility;
pub mod grid_model;
pub mod oracle;
pub mod partition_solver;
pub mod power_circle;
pub mod reachability;
pub mod report;

pub use grid_model::{load_case, parse_case, Network, Priority};
pub use report::{run_pipeline, PartitionReport, PipelineOptions};
