//! Scenario handling, simulation and validation oracles.

mod oracle;
mod scenario;
mod sim;
mod validate;

pub use oracle::{brute_force_policy_value, tableau_max, MAX_LEVELS, MAX_NETWORKS, MAX_SLOTS, MAX_TYPES};
pub use scenario::{
    generate_benchmark, BenchmarkOptions, ConstraintSpec, DistSpec, Model, NetworkSpec, Objective, PriceRange,
    Scenario, Seeds, TypeSpec, SCHEMA_VERSION,
};
pub use sim::{
    compute_opt_ub, conversion_experiment, fmt_sig, learn_duals, learn_scenario_duals, peaks, run_many, run_two_phase,
    sweep, write_rows_csv, write_summary_csv, ConversionReport, Estimate, Family, RepRow, SimOptions, SimReport,
    BUCKET_GRID,
};
pub use validate::{run_suite, validate_duals, SuiteResult, SUITES};
