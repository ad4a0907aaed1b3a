pub mod dataset;
pub mod error;
pub mod key;
pub mod net_effects;
pub mod point_params;
pub mod report;
pub mod stats;
pub mod table;
pub mod expr;
pub mod target;
pub mod pattern;
pub mod estimation;
pub mod simulator;
pub mod cli;
