//! Well-formedness checks: the symbolic column conditions for QPAGs, the
//! per-stack-symbol unitarity conditions for QCPDAs, stochastic validity for
//! PPAs, and a direct unitarity audit on the reachable configurations.

use std::collections::BTreeMap;
use std::fmt;

use serde::Serialize;

use crate::result::ser_f64;

mod audit;
mod classical;
mod qpag;

pub use audit::{audit_unitarity, reachable_step_matrix, AuditOptions, AuditReport, NormWitness, OverlapWitness, StepMatrix};
pub use classical::{check_ppa, check_qcpda};
pub use qpag::check_qpag;

/// Partial mode leaves columns with no transitions unconstrained; Total mode
/// requires every column to be normalized.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Partial,
    Total,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Partial => "partial",
            Mode::Total => "total",
        })
    }
}

/// Which condition a violation belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ConditionId {
    /// Column normalization.
    C1,
    /// Orthogonality of columns differing only in state.
    C2,
    /// Same head position, stacks differ, neither side pops.
    C3a,
    /// Same head position, one side pops.
    C3b,
    /// Head positions differ, same stack operation.
    C4,
    /// Head positions differ, stacks differ, neither side pops.
    C5a,
    /// Head positions differ, one side pops.
    C5b,
    /// PPA column probabilities do not sum to 1.
    Stochastic,
    /// PPA probability outside [0, 1].
    ProbabilityRange,
    /// Pop with stack top Z.
    PopOnBottom,
}

impl ConditionId {
    pub fn as_str(self) -> &'static str {
        match self {
            ConditionId::C1 => "1",
            ConditionId::C2 => "2",
            ConditionId::C3a => "3a",
            ConditionId::C3b => "3b",
            ConditionId::C4 => "4",
            ConditionId::C5a => "5a",
            ConditionId::C5b => "5b",
            ConditionId::Stochastic => "stochastic",
            ConditionId::ProbabilityRange => "probability_range",
            ConditionId::PopOnBottom => "pop_on_bottom",
        }
    }
}

impl fmt::Display for ConditionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl Serialize for ConditionId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

/// Named coordinates of the tuple a condition was evaluated at.
pub type Witness = BTreeMap<String, String>;

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Violation {
    pub condition: ConditionId,
    pub witness: Witness,
    #[serde(serialize_with = "ser_f64")]
    pub residual: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq, Default)]
pub struct ReportMetadata {
    /// Number of nontrivial sums evaluated per condition.
    pub evaluations: BTreeMap<String, usize>,
    pub notes: Vec<String>,
}

/// Result of a symbolic well-formedness check.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct WfReport {
    pub passed: bool,
    pub mode: Mode,
    pub violations: Vec<Violation>,
    pub metadata: ReportMetadata,
}

impl WfReport {
    pub(crate) fn finish(mode: Mode, mut violations: Vec<Violation>, metadata: ReportMetadata) -> Self {
        violations.sort_by(|a, b| (a.condition, &a.witness).cmp(&(b.condition, &b.witness)));
        WfReport {
            passed: violations.is_empty(),
            mode,
            violations,
            metadata,
        }
    }

    pub fn has(&self, c: ConditionId) -> bool {
        self.violations.iter().any(|v| v.condition == c)
    }

    pub fn evaluations(&self, c: ConditionId) -> usize {
        self.metadata.evaluations.get(c.as_str()).copied().unwrap_or(0)
    }
}

pub(crate) fn witness<const N: usize>(pairs: [(&str, String); N]) -> Witness {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}
