//! QCPDA → QPAG translation. Each QCPDA step becomes three QPAG steps: the
//! original move with the stack operation σ(q′), a push of a label recording
//! that operation, and a pop that moves the label to the garbage tape.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::model::{
    signature_from_parts, Amplitude, Configuration, ModelError, Move, Qcpda, Qpag, QpagRule, StackAlphabet, StackOp,
    StackSym, StateId, DEFAULT_TOL,
};
use crate::qcpda::run_qcpda;
use crate::result::ser_f64;
use crate::sim::{default_max_steps, Evolution, SimError};
use crate::validate::{check_qcpda, Mode};

#[derive(Debug, Error)]
pub enum CompileError {
    #[error("input machine is not well formed: {0}")]
    NonWellFormedInput(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct AuxPair {
    pub a: String,
    pub b: String,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CompileCounts {
    pub original_transitions: usize,
    /// Images of the original transitions (first micro-step).
    pub move_transitions: usize,
    /// Label pushes out of q_a (second micro-step).
    pub label_push_transitions: usize,
    /// Label pops out of q_b (third micro-step).
    pub label_pop_transitions: usize,
    pub total: usize,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct CompileMap {
    /// Original state name → image state name.
    pub state_map: BTreeMap<String, String>,
    /// Reached non-halting target q′ → (q_a(q′), q_b(q′)).
    pub aux_states: BTreeMap<String, AuxPair>,
    /// Rendered stack operation → label symbol.
    pub label_symbols: BTreeMap<String, String>,
    /// Aux states are shared by all transitions into the same target.
    pub aux_indexing: &'static str,
    pub counts: CompileCounts,
}

fn fresh(base: String, taken: &BTreeSet<String>) -> String {
    let mut name = base;
    while taken.contains(&name) {
        name.push('\'');
    }
    name
}

fn label_name(op: &StackOp, stack: &StackAlphabet) -> String {
    match op {
        StackOp::Epsilon => "ℓ_ε".to_string(),
        StackOp::Pop => "ℓ_pop".to_string(),
        StackOp::Push(s) => {
            let body: Vec<&str> = s.iter().map(|&x| stack.token(x)).collect();
            format!("ℓ_push_{}", body.join("_"))
        }
    }
}

/// Translates `m` into a QPAG with the same acceptance probabilities. The
/// input must pass the Partial-mode QCPDA check.
pub fn compile(m: &Qcpda) -> Result<(Qpag, CompileMap), CompileError> {
    let report = check_qcpda(m, Mode::Partial, DEFAULT_TOL);
    if !report.passed {
        let v = &report.violations[0];
        return Err(CompileError::NonWellFormedInput(format!(
            "{} violation(s); first: condition {} at {:?}",
            report.violations.len(),
            v.condition,
            v.witness
        )));
    }
    let sig = m.signature();
    let stack = sig.stack();

    let targets: BTreeSet<StateId> = m.rules().iter().map(|r| r.to).filter(|&q| !sig.is_halting(q)).collect();
    let ops: BTreeSet<&StackOp> = targets.iter().map(|q| &m.sigma()[q]).collect();

    let mut stack_tokens: BTreeSet<String> = stack.table().tokens().iter().cloned().collect();
    let mut labels: BTreeMap<&StackOp, String> = BTreeMap::new();
    for op in ops {
        let name = fresh(label_name(op, stack), &stack_tokens);
        stack_tokens.insert(name.clone());
        labels.insert(op, name);
    }
    let mut ordinary: Vec<String> = stack.ordinary().map(|s| stack.token(s).to_string()).collect();
    ordinary.extend(labels.values().cloned());
    let image_stack = StackAlphabet::new(&ordinary, stack.token(stack.bottom()))?;
    let label_sym = |op: &StackOp| StackSym((stack.len() + labels.keys().position(|o| *o == op).expect("label exists")) as u16);

    let mut names: Vec<String> = sig.states().map(|q| sig.state_name(q).to_string()).collect();
    let mut taken: BTreeSet<String> = names.iter().cloned().collect();
    let mut aux: BTreeMap<StateId, (StateId, StateId)> = BTreeMap::new();
    for &q in &targets {
        let mut ids = [StateId(0); 2];
        for (slot, suffix) in ids.iter_mut().zip(["a", "b"]) {
            let n = fresh(format!("{}_{suffix}", sig.state_name(q)), &taken);
            taken.insert(n.clone());
            *slot = StateId(names.len() as u32);
            names.push(n);
        }
        aux.insert(q, (ids[0], ids[1]));
    }
    let name_of = |q: StateId| sig.state_name(q).to_string();
    let image_sig = signature_from_parts(
        &names,
        sig.input().clone(),
        image_stack.clone(),
        sig.state_name(sig.initial()),
        &sig.accepting().iter().map(|&q| name_of(q)).collect::<Vec<_>>(),
        &sig.rejecting().iter().map(|&q| name_of(q)).collect::<Vec<_>>(),
        None,
    )?;

    let one = Amplitude::new(1.0, 0.0);
    let mut rules: Vec<QpagRule> = Vec::new();
    for r in m.rules() {
        let (to, op) = match aux.get(&r.to) {
            Some(&(qa, _)) => (qa, m.sigma()[&r.to].clone()),
            None => (r.to, StackOp::Epsilon),
        };
        rules.push(QpagRule {
            from: r.from,
            read: r.read,
            top: r.top,
            to,
            op,
            mv: r.mv,
            weight: r.amp,
        });
    }
    let move_transitions = rules.len();
    for (&q, &(qa, qb)) in &aux {
        let label = label_sym(&m.sigma()[&q]);
        for a in sig.input().symbols() {
            for top in image_stack.symbols() {
                rules.push(QpagRule {
                    from: qa,
                    read: a,
                    top,
                    to: qb,
                    op: StackOp::Push(vec![label]),
                    mv: Move::Stay,
                    weight: one,
                });
            }
        }
    }
    let label_push_transitions = rules.len() - move_transitions;
    for (&q, &(_, qb)) in &aux {
        let label = label_sym(&m.sigma()[&q]);
        for a in sig.input().symbols() {
            rules.push(QpagRule {
                from: qb,
                read: a,
                top: label,
                to: q,
                op: StackOp::Pop,
                mv: Move::Stay,
                weight: one,
            });
        }
    }
    let total = rules.len();
    let compiled = Qpag::new(image_sig, rules)?;

    let map = CompileMap {
        state_map: sig.states().map(|q| (name_of(q), name_of(q))).collect(),
        aux_states: aux
            .iter()
            .map(|(&q, &(qa, qb))| {
                (
                    name_of(q),
                    AuxPair {
                        a: names[qa.index()].clone(),
                        b: names[qb.index()].clone(),
                    },
                )
            })
            .collect(),
        label_symbols: labels.iter().map(|(op, l)| (op.render(stack), l.clone())).collect(),
        aux_indexing: "per target state",
        counts: CompileCounts {
            original_transitions: m.rules().len(),
            move_transitions,
            label_push_transitions,
            label_pop_transitions: total - move_transitions - label_push_transitions,
            total,
        },
    };
    Ok((compiled, map))
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct WordDelta {
    pub word: String,
    #[serde(serialize_with = "ser_f64")]
    pub p_acc_original: f64,
    #[serde(serialize_with = "ser_f64")]
    pub p_acc_compiled: f64,
    #[serde(serialize_with = "ser_f64")]
    pub p_rej_original: f64,
    #[serde(serialize_with = "ser_f64")]
    pub p_rej_compiled: f64,
    #[serde(serialize_with = "ser_f64")]
    pub delta_acc: f64,
    #[serde(serialize_with = "ser_f64")]
    pub delta_rej: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct EquivReport {
    pub passed: bool,
    pub words: Vec<WordDelta>,
    #[serde(serialize_with = "ser_f64")]
    pub max_delta: f64,
    /// Steps 3t where two surviving configurations share a garbage string
    /// but not a stack.
    pub decoherence_violations: usize,
    /// Compiled steps ≢ 1 (mod 3) at which halting mass appeared.
    pub alignment_violations: usize,
    pub decoherence_checks: usize,
}

/// True when configurations with equal garbage carry equal stacks.
pub fn garbage_determines_stack<'a>(configs: impl IntoIterator<Item = &'a Configuration>) -> bool {
    let mut seen: BTreeMap<&[StackSym], &[StackSym]> = BTreeMap::new();
    for c in configs {
        match seen.insert(&c.garbage, &c.stack) {
            Some(prev) if prev != c.stack.as_slice() => return false,
            _ => {}
        }
    }
    true
}

/// Runs both machines on every word and compares halting probabilities. The
/// compiled machine gets three times the original step budget.
pub fn equiv_check<S: AsRef<str>>(
    original: &Qcpda,
    compiled: &Qpag,
    words: &[Vec<S>],
    max_steps: Option<usize>,
    tol: f64,
) -> Result<EquivReport, SimError> {
    let mut report = EquivReport {
        passed: true,
        words: Vec::new(),
        max_delta: 0.0,
        decoherence_violations: 0,
        alignment_violations: 0,
        decoherence_checks: 0,
    };
    for word in words {
        let budget = max_steps.unwrap_or_else(|| default_max_steps(word.len())).max(1);
        let orig = run_qcpda(original, word, Some(budget), 0.0)?;
        let tape = compiled.signature().make_tape(word)?;
        let mut ev = Evolution::new(compiled, tape);
        while ev.steps() < 3 * budget && !ev.finished() {
            let d = ev.advance()?;
            if ev.steps() % 3 != 1 && d.p_acc + d.p_rej > 1e-15 {
                report.alignment_violations += 1;
            }
            if ev.steps() % 3 == 0 {
                report.decoherence_checks += 1;
                if !garbage_determines_stack(ev.psi().iter().map(|(c, _)| c)) {
                    report.decoherence_violations += 1;
                }
            }
        }
        let comp = ev.result();
        let delta_acc = (orig.p_acc - comp.p_acc).abs();
        let delta_rej = (orig.p_rej - comp.p_rej).abs();
        report.max_delta = report.max_delta.max(delta_acc).max(delta_rej);
        let text: Vec<&str> = word.iter().map(|s| s.as_ref()).collect();
        report.words.push(WordDelta {
            word: text.join(" "),
            p_acc_original: orig.p_acc,
            p_acc_compiled: comp.p_acc,
            p_rej_original: orig.p_rej,
            p_rej_compiled: comp.p_rej,
            delta_acc,
            delta_rej,
        });
    }
    report.passed = report.max_delta <= tol && report.decoherence_violations == 0 && report.alignment_violations == 0;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{push, MachineBuilder, EPS};
    use crate::sim::{run, RunOptions};
    use crate::validate::check_qpag;

    fn c(x: f64) -> Amplitude {
        Amplitude::new(x, 0.0)
    }

    fn acceptor() -> Qcpda {
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a"], "Z");
        b.initial("q0").accept("acc").reject("rej").sigma("q0", EPS);
        b.qc("q0", "¢", "Z", "q0", 1, c(1.0)).qc("q0", "$", "Z", "acc", 1, c(1.0));
        b.build_qcpda().unwrap()
    }

    fn hadamard() -> Qcpda {
        let h = 1.0 / 2f64.sqrt();
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        b.sigma("q0", EPS).sigma("qp", push("a")).sigma("qe", EPS);
        b.qc("q0", "¢", "Z", "qp", 1, c(h)).qc("q0", "¢", "Z", "qe", 1, c(h));
        b.qc("qe", "$", "Z", "acc", 1, c(h)).qc("qe", "$", "Z", "rej", 1, c(h));
        b.qc("qp", "$", "a", "acc", 1, c(h)).qc("qp", "$", "a", "rej", 1, c(-h));
        b.build_qcpda().unwrap()
    }

    #[test]
    fn acceptor_compiles() {
        let (q, map) = compile(&acceptor()).unwrap();
        assert_eq!(map.aux_states.len(), 1);
        assert_eq!(map.aux_states["q0"], AuxPair { a: "q0_a".into(), b: "q0_b".into() });
        assert_eq!(q.signature().state_count(), 3 + 2);
        // ¢ a $ and stack Z a ℓ_ε.
        assert_eq!(map.counts.move_transitions, 2);
        assert_eq!(map.counts.label_push_transitions, 3 * 3);
        assert_eq!(map.counts.label_pop_transitions, 3);
        assert_eq!(map.counts.total, q.rules().len());
        let r = run::<&str>(&q, &[], &RunOptions::default()).unwrap();
        assert_eq!(r.p_acc, 1.0);
        assert_eq!(r.steps, 4);
        let rep = equiv_check::<&str>(&acceptor(), &q, &[vec![]], None, 1e-12).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.max_delta, 0.0);
    }

    #[test]
    fn hadamard_branches_do_not_interfere() {
        let m = hadamard();
        let (q, map) = compile(&m).unwrap();
        assert!(check_qpag(&q, Mode::Partial, 1e-9).passed);
        assert_eq!(map.label_symbols.len(), 2);
        let tape = q.signature().make_tape::<&str>(&[]).unwrap();
        let mut ev = Evolution::new(&q, tape);
        for _ in 0..3 {
            ev.advance().unwrap();
        }
        let garbage: BTreeSet<String> = ev.psi().iter().map(|(c, _)| q.signature().stack().render(&c.garbage)).collect();
        assert_eq!(garbage, BTreeSet::from(["ℓ_ε".to_string(), "ℓ_push_a".to_string()]));
        let words: Vec<Vec<&str>> = vec![vec![], vec!["a"]];
        let rep = equiv_check(&m, &q, &words, None, 1e-9).unwrap();
        assert!(rep.passed, "{rep:?}");
        assert!((rep.words[0].p_acc_compiled - 0.5).abs() < 1e-12);
        assert!(rep.decoherence_checks > 0);
    }

    /// Two ε-branches recombined by a second Hadamard: all mass accepts.
    fn interferometer() -> Qcpda {
        let h = 1.0 / 2f64.sqrt();
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        b.sigma("q0", EPS).sigma("p1", EPS).sigma("p2", EPS);
        b.qc("q0", "¢", "Z", "p1", 1, c(h)).qc("q0", "¢", "Z", "p2", 1, c(h));
        b.qc("p1", "$", "Z", "acc", 1, c(h)).qc("p1", "$", "Z", "rej", 1, c(h));
        b.qc("p2", "$", "Z", "acc", 1, c(h)).qc("p2", "$", "Z", "rej", 1, c(-h));
        b.build_qcpda().unwrap()
    }

    #[test]
    fn corrupted_compilation_is_flagged() {
        let m = interferometer();
        let (q, _) = compile(&m).unwrap();
        let rep = equiv_check::<&str>(&m, &q, &[vec![]], None, 1e-9).unwrap();
        assert!(rep.passed);
        assert!((rep.words[0].p_acc_compiled - 1.0).abs() < 1e-12);

        let mut rules = q.rules().to_vec();
        let p2 = q.signature().state("p2").unwrap();
        let i = rules.iter().position(|r| r.from == p2 && q.signature().is_accepting(r.to)).unwrap();
        rules[i].weight = -rules[i].weight;
        let bad = Qpag::new(q.signature().clone(), rules).unwrap();
        let rep = equiv_check::<&str>(&m, &bad, &[vec![]], None, 1e-9).unwrap();
        assert!(!rep.passed);
        assert!((rep.max_delta - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ill_formed_input_is_refused() {
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a"], "Z");
        b.initial("q0").accept("acc").reject("rej").sigma("q0", EPS);
        b.qc("q0", "¢", "Z", "acc", 1, c(1.0)).qc("q0", "¢", "Z", "rej", 1, c(1.0));
        assert!(matches!(compile(&b.build_qcpda().unwrap()), Err(CompileError::NonWellFormedInput(_))));
    }
}
