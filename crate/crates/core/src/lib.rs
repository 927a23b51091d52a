//! Energy-minimal frequency schedules for message-passing task graphs.
//!
//! The library models programs whose cores run a fixed sequence of tasks
//! separated by message sends/receptions, and searches for the per-processor
//! DVFS schedule of least energy that still meets a deadline expressed as a
//! tolerated slowdown over the all-max-frequency makespan.
//!
//! Two mixed-integer formulations are provided over a common constraint core:
//! one with a variable per tuple of potentially parallel tasks (workloads),
//! one with a fixed budget of cyclically-ordered frequency switch slots per
//! processor.  A bounded-variable simplex plus branch and bound solves the
//! models; a discrete-event simulator replays decoded schedules and serves as
//! ground truth for energy accounting.

pub mod error;
pub mod milp;
pub mod oracle;
pub mod report;
pub mod simulate;
pub mod solver;
pub mod shared;
pub mod switch;
pub mod task_graph;
pub mod workload;

pub use error::Error;
