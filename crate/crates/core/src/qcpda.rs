//! QCPDA execution: the quantum part lives on (state, head) pairs, the stack
//! is classical and branches on the stack-operation outcome of each
//! measurement.

use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;
use serde::Serialize;

use crate::model::{apply_stack_op_in_place, Amplitude, InputSym, Qcpda, QcpdaRule, StackOp, StackSym, StateId, Tape};
use crate::result::{ser_f64, RunResult};
use crate::sim::{default_max_steps, SimError};

pub const DEFAULT_BRANCH_CAP: usize = 100_000;

/// Rounding grid for the amplitudes in a branch fingerprint.
const FINGERPRINT_GRID: f64 = 1e-10;

pub type QuantumState = BTreeMap<(StateId, usize), Amplitude>;

#[derive(Clone, Debug, PartialEq)]
pub struct Branch {
    pub prob: f64,
    pub stack: Vec<StackSym>,
    /// Unit-norm state over (q, k).
    pub psi: QuantumState,
    pub steps: usize,
}

impl Branch {
    pub fn initial(m: &Qcpda) -> Self {
        let sig = m.signature();
        Branch {
            prob: 1.0,
            stack: vec![sig.stack().bottom()],
            psi: BTreeMap::from([((sig.initial(), 0), Complex64::new(1.0, 0.0))]),
            steps: 0,
        }
    }

    fn key(&self) -> (Vec<StackSym>, Vec<(StateId, usize, i64, i64)>) {
        let fp = self
            .psi
            .iter()
            .map(|(&(q, k), a)| (q, k, (a.re / FINGERPRINT_GRID).round() as i64, (a.im / FINGERPRINT_GRID).round() as i64))
            .collect();
        (self.stack.clone(), fp)
    }
}

/// Measurement outcome classes of the QCPDA observable.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Outcome {
    Accept,
    Reject,
    Op(StackOp),
}

/// Result of one step of a branch, all masses absolute (scaled by the
/// branch probability).
#[derive(Clone, Debug, Default)]
pub struct BranchStep {
    pub children: Vec<(Outcome, Branch)>,
    pub p_acc: f64,
    pub p_rej: f64,
    /// Mass of (q, k) entries past the right endmarker.
    pub parked: f64,
    /// Mass at undefined columns.
    pub undefined: f64,
}

pub(crate) struct QcpdaIndex<'m> {
    columns: HashMap<(StateId, InputSym, StackSym), Vec<&'m QcpdaRule>>,
}

impl<'m> QcpdaIndex<'m> {
    pub(crate) fn new(m: &'m Qcpda) -> Self {
        let mut columns: HashMap<_, Vec<&QcpdaRule>> = HashMap::new();
        for r in m.rules() {
            columns.entry((r.from, r.read, r.top)).or_default().push(r);
        }
        for v in columns.values_mut() {
            v.sort_by_key(|r| (r.to, r.mv));
        }
        QcpdaIndex { columns }
    }
}

/// Applies U_b for the branch's stack top b, measures, and splits the branch
/// by outcome. Each child carries the renormalized projection.
pub fn qcpda_step(m: &Qcpda, tape: &Tape, branch: &Branch) -> Result<BranchStep, SimError> {
    step_indexed(m, &QcpdaIndex::new(m), tape, branch)
}

fn step_indexed(m: &Qcpda, index: &QcpdaIndex<'_>, tape: &Tape, branch: &Branch) -> Result<BranchStep, SimError> {
    let sig = m.signature();
    let top = *branch.stack.last().expect("stack keeps its bottom symbol");
    let mut out = BranchStep::default();
    let mut next: QuantumState = BTreeMap::new();
    for (&(q, k), &alpha) in &branch.psi {
        let Some(a) = tape.get(k) else {
            out.parked += alpha.norm_sqr();
            continue;
        };
        let Some(col) = index.columns.get(&(q, a, top)) else {
            out.undefined += alpha.norm_sqr();
            continue;
        };
        for r in col {
            *next.entry((r.to, k + r.mv.offset())).or_default() += alpha * r.amp;
        }
    }
    let mut classes: BTreeMap<Outcome, QuantumState> = BTreeMap::new();
    for (key, amp) in next {
        let q = key.0;
        let outcome = if sig.is_accepting(q) {
            Outcome::Accept
        } else if sig.is_rejecting(q) {
            Outcome::Reject
        } else {
            Outcome::Op(m.sigma()[&q].clone())
        };
        classes.entry(outcome).or_default().insert(key, amp);
    }
    out.parked *= branch.prob;
    out.undefined *= branch.prob;
    for (outcome, psi) in classes {
        let mass: f64 = psi.values().map(|a| a.norm_sqr()).sum();
        match outcome {
            Outcome::Accept => out.p_acc += branch.prob * mass,
            Outcome::Reject => out.p_rej += branch.prob * mass,
            Outcome::Op(ref op) => {
                if mass == 0.0 {
                    continue;
                }
                let mut stack = branch.stack.clone();
                apply_stack_op_in_place(&mut stack, op).map_err(|_| SimError::PopOnBottom)?;
                let scale = 1.0 / mass.sqrt();
                let child = Branch {
                    prob: branch.prob * mass,
                    stack,
                    psi: psi.into_iter().map(|(k, a)| (k, a * scale)).collect(),
                    steps: branch.steps + 1,
                };
                out.children.push((outcome, child));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct QcpdaOptions {
    pub max_steps: Option<usize>,
    pub prune_prob: f64,
    pub branch_cap: usize,
}

impl Default for QcpdaOptions {
    fn default() -> Self {
        QcpdaOptions {
            max_steps: None,
            prune_prob: 0.0,
            branch_cap: DEFAULT_BRANCH_CAP,
        }
    }
}

/// One level of the branch tree, for debugging dumps.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct FrontierSummary {
    pub step: usize,
    pub branches: Vec<BranchSummary>,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct BranchSummary {
    pub stack: String,
    #[serde(serialize_with = "ser_f64")]
    pub prob: f64,
    pub support: usize,
}

/// Breadth-first expansion of the branch tree. Identical branches (same
/// stack, same amplitudes up to 1e-10) are merged after every step.
pub fn run_qcpda<S: AsRef<str>>(m: &Qcpda, word: &[S], max_steps: Option<usize>, prune_prob: f64) -> Result<RunResult, SimError> {
    let opts = QcpdaOptions {
        max_steps,
        prune_prob,
        ..Default::default()
    };
    run_qcpda_with(m, word, &opts, None)
}

/// As [`run_qcpda`], optionally recording the first `dump_depth` frontiers.
pub fn run_qcpda_with<S: AsRef<str>>(
    m: &Qcpda,
    word: &[S],
    opts: &QcpdaOptions,
    mut dump: Option<(&mut Vec<FrontierSummary>, usize)>,
) -> Result<RunResult, SimError> {
    let sig = m.signature();
    let tape = sig.make_tape(word)?;
    let index = QcpdaIndex::new(m);
    let max_steps = opts.max_steps.unwrap_or_else(|| default_max_steps(word.len())).max(1);
    let mut frontier = vec![Branch::initial(m)];
    let (mut p_acc, mut p_rej, mut parked, mut truncation) = (0.0, 0.0, 0.0, 0.0);
    let mut steps = 0;
    while steps < max_steps && !frontier.is_empty() {
        let mut merged: BTreeMap<_, Branch> = BTreeMap::new();
        for b in &frontier {
            let s = step_indexed(m, &index, &tape, b)?;
            p_acc += s.p_acc;
            p_rej += s.p_rej;
            parked += s.parked;
            truncation += s.undefined;
            for (_, child) in s.children {
                match merged.entry(child.key()) {
                    std::collections::btree_map::Entry::Occupied(mut e) => e.get_mut().prob += child.prob,
                    std::collections::btree_map::Entry::Vacant(e) => {
                        e.insert(child);
                    }
                }
            }
            if merged.len() > opts.branch_cap {
                return Err(SimError::StateSpaceOverflow {
                    count: merged.len(),
                    cap: opts.branch_cap,
                });
            }
        }
        steps += 1;
        frontier = Vec::with_capacity(merged.len());
        for (_, b) in merged {
            if b.prob < opts.prune_prob || b.prob == 0.0 {
                truncation += b.prob;
            } else {
                frontier.push(b);
            }
        }
        if let Some((ref mut levels, depth)) = dump {
            if steps <= depth {
                levels.push(FrontierSummary {
                    step: steps,
                    branches: frontier
                        .iter()
                        .map(|b| BranchSummary {
                            stack: sig.stack().render(&b.stack),
                            prob: b.prob,
                            support: b.psi.len(),
                        })
                        .collect(),
                });
            }
        }
    }
    let mut warnings = Vec::new();
    if truncation > 1e-12 {
        warnings.push(format!("{truncation} probability mass lost to undefined columns or pruning"));
    }
    Ok(RunResult {
        p_acc,
        p_rej,
        p_non: parked + frontier.iter().map(|b| b.prob).sum::<f64>(),
        truncation_loss: truncation,
        steps,
        trace: None,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{push, MachineBuilder, EPS};

    fn c(x: f64) -> Amplitude {
        Amplitude::new(x, 0.0)
    }

    fn w(s: &str) -> Vec<String> {
        s.chars().map(|c| c.to_string()).collect()
    }

    fn empty_word_acceptor() -> Qcpda {
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a"], "Z");
        b.initial("q0").accept("acc").reject("rej").sigma("q0", EPS);
        b.qc("q0", "¢", "Z", "q0", 1, c(1.0)).qc("q0", "$", "Z", "acc", 1, c(1.0));
        b.build_qcpda().unwrap()
    }

    /// On ¢, q0 → (push + eps)/√2; both branches accept at $ or reject,
    /// depending on `reject_push`.
    fn hadamard(reject_push: bool) -> Qcpda {
        let h = 1.0 / 2f64.sqrt();
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        b.sigma("q0", EPS).sigma("qp", push("a")).sigma("qe", EPS);
        b.qc("q0", "¢", "Z", "qp", 1, c(h)).qc("q0", "¢", "Z", "qe", 1, c(h));
        b.qc("qe", "$", "Z", "acc", 1, c(1.0));
        b.qc("qp", "$", "a", if reject_push { "rej" } else { "acc" }, 1, c(1.0));
        b.build_qcpda().unwrap()
    }

    #[test]
    fn deterministic_acceptor() {
        let m = empty_word_acceptor();
        let tape = m.signature().make_tape::<&str>(&[]).unwrap();
        let s = qcpda_step(&m, &tape, &Branch::initial(&m)).unwrap();
        assert_eq!(s.children.len(), 1);
        let s = qcpda_step(&m, &tape, &s.children[0].1).unwrap();
        assert!(s.children.is_empty());
        assert_eq!(s.p_acc, 1.0);
        let r = run_qcpda::<&str>(&m, &[], None, 0.0).unwrap();
        assert_eq!((r.p_acc, r.steps), (1.0, 2));
    }

    #[test]
    fn hadamard_splits_the_stack() {
        let m = hadamard(false);
        let tape = m.signature().make_tape::<&str>(&[]).unwrap();
        let s = qcpda_step(&m, &tape, &Branch::initial(&m)).unwrap();
        assert_eq!(s.children.len(), 2);
        let stacks: Vec<String> = s.children.iter().map(|(_, b)| m.signature().stack().render(&b.stack)).collect();
        assert!(stacks.contains(&"Za".to_string()) && stacks.contains(&"Z".to_string()));
        for (_, b) in &s.children {
            assert!((b.prob - 0.5).abs() < 1e-15);
            let n: f64 = b.psi.values().map(|a| a.norm_sqr()).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let r = run_qcpda::<&str>(&m, &[], None, 0.0).unwrap();
        assert!((r.p_acc - 1.0).abs() < 1e-12);
        let r = run_qcpda::<&str>(&hadamard(true), &[], None, 0.0).unwrap();
        assert!((r.p_acc - 0.5).abs() < 1e-12 && (r.p_rej - 0.5).abs() < 1e-12);
    }

    #[test]
    fn halting_only_branch_has_no_children() {
        let m = empty_word_acceptor();
        let tape = m.signature().make_tape(&["a"]).unwrap();
        let acc = m.signature().state("q0").unwrap();
        let b = Branch {
            prob: 0.25,
            stack: vec![StackSym(0)],
            psi: BTreeMap::from([((acc, 2), c(1.0))]),
            steps: 1,
        };
        let s = qcpda_step(&m, &tape, &b).unwrap();
        assert!(s.children.is_empty());
        assert_eq!(s.p_acc, 0.25);
    }

    #[test]
    fn identical_branches_merge() {
        // Stacks Zb and Za both pop back to Z in the same state.
        let h = 1.0 / 2f64.sqrt();
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a", "b"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        b.sigma("q0", EPS).sigma("p", push("b")).sigma("r", push("a")).sigma("t", crate::model::POP);
        b.qc("q0", "¢", "Z", "p", 1, c(h)).qc("q0", "¢", "Z", "r", 1, c(h));
        b.qc("p", "a", "b", "t", 1, c(1.0)).qc("r", "a", "a", "t", 1, c(1.0));
        b.qc("t", "$", "Z", "acc", 1, c(1.0));
        let m = b.build_qcpda().unwrap();
        let mut dump = Vec::new();
        let r = run_qcpda_with(&m, &w("a"), &QcpdaOptions::default(), Some((&mut dump, 5))).unwrap();
        assert_eq!(dump[0].branches.len(), 2);
        assert_eq!(dump[1].branches.len(), 1);
        assert!((dump[1].branches[0].prob - 1.0).abs() < 1e-12);
        assert!((r.p_acc - 1.0).abs() < 1e-12);
    }

    #[test]
    fn branch_cap() {
        let m = hadamard(false);
        let opts = QcpdaOptions {
            branch_cap: 1,
            ..Default::default()
        };
        assert!(matches!(
            run_qcpda_with::<&str>(&m, &[], &opts, None),
            Err(SimError::StateSpaceOverflow { cap: 1, .. })
        ));
    }
}
