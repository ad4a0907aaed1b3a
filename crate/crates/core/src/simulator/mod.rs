//! Synthetic data, causal oracles and Monte Carlo experiments.

pub mod dgp;
pub mod experiments;
pub mod fixture;
pub mod montecarlo;
pub mod oracle;

pub use dgp::{population_table, simulate, DgpSpec, DEFAULT_SEED};
pub use experiments::{
    equivalence_experiment, fit_experiment, motivation_experiment, population_equivalence,
};
pub use fixture::make_fixture_d0;
pub use oracle::{g_oracle, CausalOracleResult};
