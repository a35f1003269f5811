//! QPAG evolution: unitary step, three-outcome measurement, halt or continue.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{
    apply_stack_op_in_place, Amplitude, Configuration, InputSym, ModelError, Qpag, QpagRule, Signature, StackSym,
    StateId, StateVector, Tape, DEFAULT_STATE_CAP, PRUNE_THRESHOLD,
};
use crate::result::{RunResult, StepSnapshot, Survivor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("state space overflow: {count} configurations exceed the cap of {cap}")]
    StateSpaceOverflow { count: usize, cap: usize },
    #[error("cannot pop the bottom symbol")]
    PopOnBottom,
    #[error("machine is not deterministic at {0}")]
    NotDeterministic(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Default step budget: enough for one left-to-right pass plus slack for
/// stationary moves.
pub fn default_max_steps(word_len: usize) -> usize {
    10 * (word_len + 2) + 10
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    pub max_steps: Option<usize>,
    pub trace_depth: Option<usize>,
    pub state_cap: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            max_steps: None,
            trace_depth: None,
            state_cap: DEFAULT_STATE_CAP,
        }
    }
}

impl RunOptions {
    pub fn with_max_steps(n: usize) -> Self {
        RunOptions {
            max_steps: Some(n),
            ..Default::default()
        }
    }
}

type Column = (StateId, InputSym, StackSym);

/// Transitions grouped by (q, a, b) and sorted by (q′, b′, D).
pub struct ColumnIndex<'m> {
    columns: HashMap<Column, Vec<&'m QpagRule>>,
}

impl<'m> ColumnIndex<'m> {
    pub fn new(m: &'m Qpag) -> Self {
        let mut columns: HashMap<Column, Vec<&QpagRule>> = HashMap::new();
        for r in m.rules() {
            columns.entry(r.column()).or_default().push(r);
        }
        for v in columns.values_mut() {
            v.sort_by(|x, y| (x.to, &x.op, x.mv).cmp(&(y.to, &y.op, y.mv)));
        }
        ColumnIndex { columns }
    }

    pub fn get(&self, q: StateId, a: InputSym, b: StackSym) -> Option<&[&'m QpagRule]> {
        self.columns.get(&(q, a, b)).map(|v| v.as_slice())
    }
}

/// Result of applying U once, before measurement.
#[derive(Clone, Debug, Default)]
pub struct StepOutput {
    pub next: StateVector,
    /// Mass of configurations past $ that have no successor.
    pub parked: f64,
    /// Mass of configurations whose column δ(q, a, b, ·) is undefined.
    pub undefined: f64,
}

/// The evolution state |ψ⟩ = |q₀, 0, Z, ε⟩.
pub fn initial_vector(m: &Qpag) -> StateVector {
    StateVector::basis(Configuration::initial(m.signature().initial()))
}

/// Images of a single basis configuration under U.
pub(crate) fn image_of(index: &ColumnIndex<'_>, tape: &Tape, c: &Configuration) -> Result<Option<Vec<(Configuration, Amplitude)>>, SimError> {
    let Some(a) = tape.get(c.head) else {
        return Ok(None);
    };
    let Some(col) = index.get(c.state, a, c.top()) else {
        return Ok(None);
    };
    let mut out = Vec::with_capacity(col.len());
    for r in col {
        let mut stack = c.stack.clone();
        let popped = apply_stack_op_in_place(&mut stack, &r.op).map_err(|_| SimError::PopOnBottom)?;
        let mut garbage = c.garbage.clone();
        garbage.extend(popped);
        out.push((
            Configuration {
                state: r.to,
                head: c.head + r.mv.offset(),
                stack,
                garbage,
            },
            r.weight,
        ));
    }
    Ok(Some(out))
}

/// Applies U to ψ. Contributions to the same configuration are summed in
/// sorted order of (source configuration, q′, b′, D).
pub fn step(m: &Qpag, tape: &Tape, psi: &StateVector) -> Result<StepOutput, SimError> {
    step_indexed(&ColumnIndex::new(m), tape, psi)
}

pub(crate) fn step_indexed(index: &ColumnIndex<'_>, tape: &Tape, psi: &StateVector) -> Result<StepOutput, SimError> {
    let mut out = StepOutput::default();
    for (c, &alpha) in psi.iter() {
        if c.head >= tape.len() {
            out.parked += alpha.norm_sqr();
            continue;
        }
        match image_of(index, tape, c)? {
            Some(images) => {
                for (target, beta) in images {
                    out.next.add(target, alpha * beta);
                }
            }
            None => out.undefined += alpha.norm_sqr(),
        }
    }
    Ok(out)
}

/// Splits ψ by the observable E_non ⊕ E_acc ⊕ E_rej. The non-halting part is
/// returned unnormalized.
pub fn measure(m: &Qpag, psi: &StateVector) -> (StateVector, f64, f64) {
    let sig = m.signature();
    let mut non = StateVector::new();
    let (mut acc, mut rej) = (0.0, 0.0);
    for (c, a) in psi.iter() {
        if sig.is_accepting(c.state) {
            acc += a.norm_sqr();
        } else if sig.is_rejecting(c.state) {
            rej += a.norm_sqr();
        } else {
            non.insert(c.clone(), *a);
        }
    }
    (non, acc, rej)
}

/// Probability bookkeeping for one measured step.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepDelta {
    pub p_acc: f64,
    pub p_rej: f64,
    pub parked: f64,
    pub undefined: f64,
    pub pruned: f64,
}

/// A run in progress. Drives the (a)-(c) loop one step at a time so callers
/// can inspect the non-halting part of the state between steps.
pub struct Evolution<'m> {
    machine: &'m Qpag,
    index: ColumnIndex<'m>,
    tape: Tape,
    psi: StateVector,
    p_acc: f64,
    p_rej: f64,
    parked: f64,
    truncation: f64,
    steps: usize,
    state_cap: usize,
}

impl<'m> Evolution<'m> {
    pub fn new(machine: &'m Qpag, tape: Tape) -> Self {
        Evolution {
            machine,
            index: ColumnIndex::new(machine),
            tape,
            psi: initial_vector(machine),
            p_acc: 0.0,
            p_rej: 0.0,
            parked: 0.0,
            truncation: 0.0,
            steps: 0,
            state_cap: DEFAULT_STATE_CAP,
        }
    }

    pub fn with_state_cap(mut self, cap: usize) -> Self {
        self.state_cap = cap;
        self
    }

    pub fn psi(&self) -> &StateVector {
        &self.psi
    }

    pub fn tape(&self) -> &Tape {
        &self.tape
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// True once the non-halting mass has dropped below the prune threshold.
    pub fn finished(&self) -> bool {
        self.psi.norm_sqr() < PRUNE_THRESHOLD
    }

    /// Performs (a) evolve, (b) measure. Halting mass is accumulated; the
    /// remaining non-halting part becomes the new ψ.
    pub fn advance(&mut self) -> Result<StepDelta, SimError> {
        let mut out = step_indexed(&self.index, &self.tape, &self.psi)?;
        if out.next.len() > self.state_cap {
            return Err(SimError::StateSpaceOverflow {
                count: out.next.len(),
                cap: self.state_cap,
            });
        }
        let pruned = out.next.prune(PRUNE_THRESHOLD);
        let (non, acc, rej) = measure(self.machine, &out.next);
        self.psi = non;
        self.p_acc += acc;
        self.p_rej += rej;
        self.parked += out.parked;
        self.truncation += out.undefined + pruned;
        self.steps += 1;
        Ok(StepDelta {
            p_acc: acc,
            p_rej: rej,
            parked: out.parked,
            undefined: out.undefined,
            pruned,
        })
    }

    /// Current totals, with the surviving non-halting mass reported as p_non.
    pub fn result(&self) -> RunResult {
        RunResult {
            p_acc: self.p_acc,
            p_rej: self.p_rej,
            p_non: self.parked + self.psi.norm_sqr(),
            truncation_loss: self.truncation,
            steps: self.steps,
            trace: None,
            warnings: Vec::new(),
        }
    }

    pub fn snapshot(&self, delta: &StepDelta, depth: usize) -> StepSnapshot {
        StepSnapshot {
            step: self.steps,
            survivors: top_survivors(self.machine.signature(), &self.psi, depth),
            p_acc_delta: delta.p_acc,
            p_rej_delta: delta.p_rej,
        }
    }
}

/// The `k` largest-magnitude entries, ties broken by configuration order.
pub fn top_survivors(sig: &Signature, psi: &StateVector, k: usize) -> Vec<Survivor> {
    let mut entries: Vec<_> = psi.iter().collect();
    entries.sort_by(|(c1, a1), (c2, a2)| a2.norm().total_cmp(&a1.norm()).then_with(|| c1.cmp(c2)));
    entries
        .into_iter()
        .take(k)
        .map(|(c, a)| Survivor {
            state: sig.state_name(c.state).to_string(),
            head: c.head,
            stack: sig.stack().render(&c.stack),
            garbage: sig.stack().render(&c.garbage),
            amp: *a,
        })
        .collect()
}

/// Runs the machine on `word` until the non-halting mass vanishes or the step
/// budget is exhausted.
pub fn run<S: AsRef<str>>(m: &Qpag, word: &[S], opts: &RunOptions) -> Result<RunResult, SimError> {
    let tape = m.signature().make_tape(word)?;
    let max_steps = opts.max_steps.unwrap_or_else(|| default_max_steps(word.len())).max(1);
    let mut evo = Evolution::new(m, tape).with_state_cap(opts.state_cap);
    let mut trace = opts.trace_depth.map(|_| Vec::new());
    while evo.steps() < max_steps && !evo.finished() {
        let delta = evo.advance()?;
        if let (Some(t), Some(k)) = (trace.as_mut(), opts.trace_depth) {
            t.push(evo.snapshot(&delta, k));
        }
    }
    let mut result = evo.result();
    result.trace = trace;
    if result.truncation_loss > PRUNE_THRESHOLD {
        result
            .warnings
            .push(format!("{:.3e} probability lost to undefined columns or pruning", result.truncation_loss));
    }
    Ok(result)
}
