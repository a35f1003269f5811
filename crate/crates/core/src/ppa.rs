//! Exact distribution propagation for probabilistic pushdown automata, and a
//! single-path runner for the deterministic special case.

use std::collections::{BTreeMap, HashMap};

use serde::Serialize;

use crate::model::{apply_stack_op_in_place, InputSym, Ppa, PpaRule, StackSym, StateId, DEFAULT_STATE_CAP, PRUNE_THRESHOLD};
use crate::result::RunResult;
use crate::sim::{default_max_steps, SimError};

/// A PPA configuration (q, k, w_s); there is no garbage tape.
pub type ClassicalConfig = (StateId, usize, Vec<StackSym>);

/// Sparse configuration distribution.
pub type ClassicalDist = BTreeMap<ClassicalConfig, f64>;

type Columns<'m> = HashMap<(StateId, InputSym, StackSym), Vec<&'m PpaRule>>;

fn columns(m: &Ppa) -> Columns<'_> {
    let mut cols: Columns = HashMap::new();
    for r in m.rules() {
        cols.entry(r.column()).or_default().push(r);
    }
    for v in cols.values_mut() {
        v.sort_by(|x, y| (x.to, &x.op, x.mv).cmp(&(y.to, &y.op, y.mv)));
    }
    cols
}

/// Propagates the configuration distribution for at most `max_steps` steps
/// (default as for QPAG runs). Mass reaching a halting state is removed;
/// mass stuck at an undefined column or past the right endmarker is reported
/// as non-halting.
pub fn run_ppa<S: AsRef<str>>(m: &Ppa, word: &[S], max_steps: Option<usize>) -> Result<RunResult, SimError> {
    run_ppa_capped(m, word, max_steps, DEFAULT_STATE_CAP)
}

pub fn run_ppa_capped<S: AsRef<str>>(m: &Ppa, word: &[S], max_steps: Option<usize>, cap: usize) -> Result<RunResult, SimError> {
    let sig = m.signature();
    let tape = sig.make_tape(word)?;
    let cols = columns(m);
    let max_steps = max_steps.unwrap_or_else(|| default_max_steps(word.len())).max(1);
    let mut dist: ClassicalDist = BTreeMap::from([((sig.initial(), 0, vec![sig.stack().bottom()]), 1.0)]);
    let (mut p_acc, mut p_rej, mut stuck, mut pruned) = (0.0, 0.0, 0.0, 0.0);
    let mut undefined = 0.0;
    let mut steps = 0;
    while steps < max_steps && dist.values().sum::<f64>() >= PRUNE_THRESHOLD {
        let mut next: ClassicalDist = BTreeMap::new();
        for ((q, k, stack), p) in dist {
            let Some(a) = tape.get(k) else {
                stuck += p;
                continue;
            };
            let top = *stack.last().expect("stack keeps its bottom symbol");
            let Some(col) = cols.get(&(q, a, top)) else {
                stuck += p;
                undefined += p;
                continue;
            };
            for r in col {
                let mut s = stack.clone();
                apply_stack_op_in_place(&mut s, &r.op).map_err(|_| SimError::PopOnBottom)?;
                *next.entry((r.to, k + r.mv.offset(), s)).or_insert(0.0) += p * r.weight;
            }
        }
        if next.len() > cap {
            return Err(SimError::StateSpaceOverflow { count: next.len(), cap });
        }
        steps += 1;
        dist = BTreeMap::new();
        for (c, p) in next {
            if sig.is_accepting(c.0) {
                p_acc += p;
            } else if sig.is_rejecting(c.0) {
                p_rej += p;
            } else if p < PRUNE_THRESHOLD {
                pruned += p;
            } else {
                dist.insert(c, p);
            }
        }
    }
    let mut warnings = Vec::new();
    if undefined > 0.0 {
        warnings.push(format!("{undefined} probability mass reached undefined columns and is reported as non-halting"));
    }
    Ok(RunResult {
        p_acc,
        p_rej,
        p_non: stuck + dist.values().sum::<f64>(),
        truncation_loss: pruned,
        steps,
        trace: None,
        warnings,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum DpdaOutcome {
    Accept,
    Reject,
    /// Step budget exhausted.
    Loop,
    /// Undefined column, or the head moved past the right endmarker.
    Block,
}

/// Follows the unique computation path of a deterministic machine.
pub fn run_dpda<S: AsRef<str>>(m: &Ppa, word: &[S], max_steps: Option<usize>) -> Result<DpdaOutcome, SimError> {
    let sig = m.signature();
    let cols = columns(m);
    for (&(q, a, b), col) in &cols {
        if col.len() > 1 || (col[0].weight - 1.0).abs() > 1e-12 {
            return Err(SimError::NotDeterministic(format!(
                "({}, {}, {})",
                sig.state_name(q),
                sig.input().display(a),
                sig.stack().token(b)
            )));
        }
    }
    let tape = sig.make_tape(word)?;
    let max_steps = max_steps.unwrap_or_else(|| default_max_steps(word.len())).max(1);
    let (mut q, mut k, mut stack) = (sig.initial(), 0, vec![sig.stack().bottom()]);
    for _ in 0..max_steps {
        let Some(a) = tape.get(k) else {
            return Ok(DpdaOutcome::Block);
        };
        let Some(col) = cols.get(&(q, a, *stack.last().expect("nonempty stack"))) else {
            return Ok(DpdaOutcome::Block);
        };
        let r = col[0];
        apply_stack_op_in_place(&mut stack, &r.op).map_err(|_| SimError::PopOnBottom)?;
        q = r.to;
        k += r.mv.offset();
        if sig.is_accepting(q) {
            return Ok(DpdaOutcome::Accept);
        }
        if sig.is_rejecting(q) {
            return Ok(DpdaOutcome::Reject);
        }
    }
    Ok(DpdaOutcome::Loop)
}

/// Textbook DPDA for { w c wᴿ : w ∈ {a,b}* }: push until c, then match and
/// pop. Mismatches and early endmarkers go to the rejecting state.
pub fn build_wcwr_dpda() -> Ppa {
    use crate::model::{push, MachineBuilder, EPS, POP};
    let mut b = MachineBuilder::new(&["a", "b", "c"], "¢", "$", &["a", "b"], "Z");
    b.initial("q0").accept("acc").reject("rej");
    b.state("push").state("match");
    b.prob("q0", "¢", "Z", "push", EPS, 1, 1.0);
    for top in ["Z", "a", "b"] {
        b.prob("push", "a", top, "push", push("a"), 1, 1.0)
            .prob("push", "b", top, "push", push("b"), 1, 1.0)
            .prob("push", "c", top, "match", EPS, 1, 1.0)
            .prob("push", "$", top, "rej", EPS, 1, 1.0);
        b.prob("match", "c", top, "rej", EPS, 1, 1.0);
    }
    b.prob("match", "a", "a", "match", POP, 1, 1.0)
        .prob("match", "b", "b", "match", POP, 1, 1.0)
        .prob("match", "a", "b", "rej", EPS, 1, 1.0)
        .prob("match", "b", "a", "rej", EPS, 1, 1.0)
        .prob("match", "a", "Z", "rej", EPS, 1, 1.0)
        .prob("match", "b", "Z", "rej", EPS, 1, 1.0)
        .prob("match", "$", "Z", "acc", EPS, 1, 1.0)
        .prob("match", "$", "a", "rej", EPS, 1, 1.0)
        .prob("match", "$", "b", "rej", EPS, 1, 1.0);
    b.build_ppa().expect("wcwr DPDA is well formed")
}

/// From q₀ on ¢, accept or reject with probability ½ each.
pub fn build_coin_flip() -> Ppa {
    use crate::model::{MachineBuilder, EPS};
    let mut b = MachineBuilder::new(&["a", "b"], "¢", "$", &["a"], "Z");
    b.initial("q0").accept("acc").reject("rej");
    b.prob("q0", "¢", "Z", "acc", EPS, 1, 0.5).prob("q0", "¢", "Z", "rej", EPS, 1, 0.5);
    b.build_ppa().expect("coin flip is well formed")
}
