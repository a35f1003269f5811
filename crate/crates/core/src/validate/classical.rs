use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;

use super::{witness, ConditionId, Mode, ReportMetadata, Violation, WfReport};
use crate::model::{InputSym, Move, Ppa, Qcpda, QcpdaRule, StackOp, StackSym, StateId};

/// Checks that U_b is unitary for every stack symbol b: columns (q, a) over
/// the index set (q′, D) are normalized (1), columns reading the same input
/// symbol are orthogonal (2), and a column that stays is orthogonal to every
/// column that moves onto the same cell (4).
pub fn check_qcpda(m: &Qcpda, mode: Mode, tol: f64) -> WfReport {
    let sig = m.signature();
    let mut violations = Vec::new();
    let mut metadata = ReportMetadata {
        notes: vec!["columns are indexed by (q, a) for each stack symbol b; entries by (q′, D)".into()],
        ..Default::default()
    };
    let name = |q: StateId| sig.state_name(q).to_string();
    let sym = |a: InputSym| sig.input().display(a).to_string();
    let top = |b: StackSym| sig.stack().token(b).to_string();

    let mut columns: BTreeMap<(StackSym, InputSym, StateId), Vec<&QcpdaRule>> = BTreeMap::new();
    for r in m.rules() {
        columns.entry((r.top, r.read, r.from)).or_default().push(r);
    }
    for col in columns.values_mut() {
        col.sort_by_key(|r| (r.to, r.mv));
    }

    let mut evaluated = 0;
    let mut norm = |b: StackSym, a: InputSym, q: StateId, col: Option<&Vec<&QcpdaRule>>, violations: &mut Vec<Violation>| {
        let sum: f64 = col.map(|c| c.iter().map(|r| r.amp.norm_sqr()).sum()).unwrap_or(0.0);
        evaluated += 1;
        let residual = match mode {
            Mode::Total => (sum - 1.0).abs(),
            Mode::Partial => sum - 1.0,
        };
        if residual > tol {
            violations.push(Violation {
                condition: ConditionId::C1,
                witness: witness([("q", name(q)), ("a", sym(a)), ("b", top(b))]),
                residual,
            });
        }
    };
    match mode {
        Mode::Total => {
            for b in sig.stack().symbols() {
                for a in sig.input().symbols() {
                    for q in sig.states() {
                        norm(b, a, q, columns.get(&(b, a, q)), &mut violations);
                    }
                }
            }
        }
        Mode::Partial => {
            for (&(b, a, q), col) in &columns {
                norm(b, a, q, Some(col), &mut violations);
            }
        }
    }
    metadata.evaluations.insert(ConditionId::C1.as_str().into(), evaluated);

    // (2) same stack top and input symbol, different states.
    let mut groups: BTreeMap<(StackSym, InputSym), Vec<(StateId, &Vec<&QcpdaRule>)>> = BTreeMap::new();
    for (&(b, a, q), col) in &columns {
        groups.entry((b, a)).or_default().push((q, col));
    }
    let mut evaluated = 0;
    for (&(b, a), cols) in &groups {
        for (i, (q1, c1)) in cols.iter().enumerate() {
            for (q2, c2) in &cols[i + 1..] {
                let targets: HashMap<(StateId, Move), Complex64> = c2.iter().map(|r| ((r.to, r.mv), r.amp)).collect();
                let mut sum = Complex64::new(0.0, 0.0);
                let mut any = false;
                for r1 in c1.iter() {
                    if let Some(w2) = targets.get(&(r1.to, r1.mv)) {
                        sum += r1.amp.conj() * w2;
                        any = true;
                    }
                }
                if !any {
                    continue;
                }
                evaluated += 1;
                if sum.norm() > tol {
                    violations.push(Violation {
                        condition: ConditionId::C2,
                        witness: witness([("q1", name(*q1)), ("q2", name(*q2)), ("a", sym(a)), ("b", top(b))]),
                        residual: sum.norm(),
                    });
                }
            }
        }
    }
    metadata.evaluations.insert(ConditionId::C2.as_str().into(), evaluated);

    // (4) a column that stays against one that moves, any input symbols.
    let mut movers: HashMap<(StackSym, StateId), Vec<&QcpdaRule>> = HashMap::new();
    for r in m.rules().iter().filter(|r| r.mv == Move::Right) {
        movers.entry((r.top, r.to)).or_default().push(r);
    }
    let mut sums: BTreeMap<(StackSym, StateId, InputSym, StateId, InputSym), Vec<(StateId, Complex64)>> = BTreeMap::new();
    for r1 in m.rules().iter().filter(|r| r.mv == Move::Stay) {
        for r2 in movers.get(&(r1.top, r1.to)).into_iter().flatten() {
            sums.entry((r1.top, r1.from, r1.read, r2.from, r2.read))
                .or_default()
                .push((r1.to, r1.amp.conj() * r2.amp));
        }
    }
    metadata.evaluations.insert(ConditionId::C4.as_str().into(), sums.len());
    for ((b, q1, a1, q2, a2), mut terms) in sums {
        terms.sort_by_key(|t| t.0);
        let sum: Complex64 = terms.iter().map(|t| t.1).sum();
        if sum.norm() > tol {
            violations.push(Violation {
                condition: ConditionId::C4,
                witness: witness([
                    ("q1", name(q1)),
                    ("a1", sym(a1)),
                    ("q2", name(q2)),
                    ("a2", sym(a2)),
                    ("b", top(b)),
                ]),
                residual: sum.norm(),
            });
        }
    }

    WfReport::finish(mode, violations, metadata)
}

/// Checks that every defined column of a PPA is a probability distribution
/// and that nothing pops the bottom symbol.
pub fn check_ppa(m: &Ppa, tol: f64) -> WfReport {
    let sig = m.signature();
    let mut violations = Vec::new();
    let mut metadata = ReportMetadata::default();
    let name = |q: StateId| sig.state_name(q).to_string();
    let sym = |a: InputSym| sig.input().display(a).to_string();
    let top = |b: StackSym| sig.stack().token(b).to_string();

    let mut sums: BTreeMap<(StateId, InputSym, StackSym), f64> = BTreeMap::new();
    for r in m.rules() {
        *sums.entry(r.column()).or_insert(0.0) += r.weight;
        if !(-tol..=1.0 + tol).contains(&r.weight) {
            violations.push(Violation {
                condition: ConditionId::ProbabilityRange,
                witness: witness([("q", name(r.from)), ("a", sym(r.read)), ("b", top(r.top)), ("q'", name(r.to))]),
                residual: if r.weight < 0.0 { -r.weight } else { r.weight - 1.0 },
            });
        }
        if r.op == StackOp::Pop && r.top == sig.stack().bottom() && r.weight > 0.0 {
            violations.push(Violation {
                condition: ConditionId::PopOnBottom,
                witness: witness([("q", name(r.from)), ("a", sym(r.read)), ("q'", name(r.to)), ("D", r.mv.to_string())]),
                residual: r.weight,
            });
        }
    }
    for (&(q, a, b), &s) in &sums {
        if (s - 1.0).abs() > tol {
            violations.push(Violation {
                condition: ConditionId::Stochastic,
                witness: witness([("q", name(q)), ("a", sym(a)), ("b", top(b))]),
                residual: s,
            });
        }
    }
    let undefined = sig.state_count() * sig.input().len() * sig.stack().len() - sums.len();
    metadata.evaluations.insert(ConditionId::Stochastic.as_str().into(), sums.len());
    metadata.notes.push(format!(
        "{undefined} columns have no transitions; their mass is reported as non-halting"
    ));
    WfReport::finish(Mode::Partial, violations, metadata)
}
