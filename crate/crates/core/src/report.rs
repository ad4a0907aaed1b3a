//! Shared pieces of the JSON outputs.

/// Bumped whenever a JSON layout changes incompatibly.
pub const SCHEMA_VERSION: u32 = 1;
