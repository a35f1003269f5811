//! Workbench for quantum pushdown automata with a garbage tape (QPAG),
//! quantum pushdown automata with a classical stack (QCPDA) and
//! probabilistic pushdown automata (PPA).

pub mod compile;
pub mod format;
pub mod model;
pub mod ppa;
pub mod problem1;
pub mod qcpda;
pub mod random;
pub mod result;
pub mod sim;
pub mod validate;

pub use model::{Amplitude, Configuration, MachineBuilder, Ppa, Qcpda, Qpag, Signature, StateVector};
pub use result::RunResult;
pub use sim::{run, RunOptions, SimError};
