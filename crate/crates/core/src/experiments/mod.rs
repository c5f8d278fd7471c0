//! Configuration-driven experiments: price/delta sweeps over the initial
//! forward level, the penalty variant, the truncated Euler study and the
//! verification suite.

mod config;
mod sweep;
mod verify;

pub use config::{
    BangBangMode, EulerGapConfig, ExperimentConfig, FieldSpec, RawGrid, Scenario, SolverConfig, SweepRange,
    VerifyConfig, DEFAULT_LAMBDA, LAMBDA_MAX,
};
pub use sweep::{
    price_scenarios, pricing_seed, run_penalty_experiment, run_sweep, solve_scenario, write_sweep_csv,
    ScenarioCurve, SweepRow,
};
pub use verify::{
    run_euler_gap, run_verification_suite, write_gap_csv, CheckOutcome, CheckStatus, EulerGapReport,
    VerificationReport,
};
