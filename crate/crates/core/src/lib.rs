//! Design mining for heterogeneous arrays of interacting turbines.
//!
//! The engine fits one neural surrogate per array position, inverts it with a
//! real-coded evolutionary algorithm, and sends the most promising array
//! configurations to an oracle: a synthetic interacting-array power model for
//! benchmarking, or a human measuring a physical rig. Every evaluation is
//! appended to a journal from which a run can be resumed exactly.

pub mod engine;
pub mod journal;
pub mod optimizer;
pub mod oracle;
pub mod rng;
pub mod space;
pub mod surrogate;

pub use engine::{
    baseline_run, run, run_journaled, EngineError, NoObserver, OracleKind, Pin, Proposal, Run,
    RunConfig, RunEvent, RunMode, RunObserver, RunResult, RunState, RunStatus, SeedDesign,
};
pub use journal::{EvaluationRecord, JournalError, JournalWriter, LoadedJournal, ProposalSource};
pub use optimizer::{Candidate, EAParams};
pub use oracle::{
    aggregate_fitness, brute_force_optimum, ArrayConfiguration, LayoutSpec, ManualOracle,
    ManualQueue, Measurement, Oracle, OracleConstants, OracleError, Provenance, SyntheticOracle,
};
pub use rng::RandomKey;
pub use space::{DesignSpace, Genome, ParamKind, ParamValue, ParameterSpec, UnitVector, Violation};
pub use surrogate::{Dataset, FitHyper, SurrogateModel};
