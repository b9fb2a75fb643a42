// Negated comparisons like `!(x > 0.0)` are deliberate: they reject NaN
// where `x <= 0.0` would accept it.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Library surface of the `tdforge` CLI: instance generators, experiment
//! orchestration (runs and sweeps), the verification suite, and report
//! rendering. The binary in `main.rs` is a thin argument-parsing shell over
//! these functions so that tests can drive the exact same code paths.

pub mod experiment;
pub mod generator;
pub mod report;
pub mod verify;

pub use experiment::{
    run_experiment, sweep_experiment, AlgorithmConfig, ExperimentConfig, InstanceSource,
    OutputConfig, RunAggregate, SweepAxes, SweepRow, TAggregate,
};
pub use generator::{generate_instance, ChainScheme, FeatureScheme, GeneratorSpec};
pub use report::render_report;
pub use verify::{run_verify, VerifyLevel, VerifyOutcome};
