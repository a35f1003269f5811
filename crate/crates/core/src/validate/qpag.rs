use std::collections::{BTreeMap, HashMap};

use num_complex::Complex64;

use super::{witness, ConditionId, Mode, ReportMetadata, Violation, WfReport, Witness};
use crate::model::{InputSym, Move, Qpag, QpagRule, Signature, StackOp, StackSym, StateId};

const NOTE_INDEX: &str = "condition 4 sums over the stack-operation slot b′ ∈ G∪{ε, pop} with the stack top b fixed";
const NOTE_PAIRS: &str = "condition 3 is evaluated for pairs with b1 = b2 as well, overlapping condition 2";
const NOTE_ORDERED: &str = "conditions 3a, 3b, 4, 5a and 5b are evaluated over ordered pairs of triples, \
including a triple paired with itself (distinct configurations with equal (q, a, b) can collide)";
const NOTE_PUSHES: &str = "conditions 3a and 5a also cover push-vs-push overlaps: the first factor may push s1 \
and the second pushes b3·b1·s1 for any string b3";

/// Tuple a condition is evaluated at. Unused coordinates stay `None`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct PairKey {
    q1: StateId,
    a1: InputSym,
    b1: StackSym,
    d1: Option<Move>,
    q2: StateId,
    a2: InputSym,
    b2: Option<StackSym>,
    d2: Option<Move>,
    extra: Option<Vec<StackSym>>,
}

/// Summation coordinates; only used to order terms deterministically.
type TermOrder = (StateId, StackOp, Option<Move>);

struct Sums {
    terms: Vec<(PairKey, TermOrder, Complex64)>,
}

impl Sums {
    fn new() -> Self {
        Sums { terms: Vec::new() }
    }

    fn add(&mut self, key: PairKey, order: TermOrder, value: Complex64) {
        self.terms.push((key, order, value));
    }

    /// Sums terms per key in sorted term order.
    fn fold(mut self) -> Vec<(PairKey, Complex64)> {
        self.terms.sort_by(|x, y| (&x.0, &x.1).cmp(&(&y.0, &y.1)));
        let mut out: Vec<(PairKey, Complex64)> = Vec::new();
        for (k, _, v) in self.terms {
            match out.last_mut() {
                Some((last, acc)) if *last == k => *acc += v,
                _ => out.push((k, v)),
            }
        }
        out
    }
}

struct Renderer<'a> {
    sig: &'a Signature,
}

impl Renderer<'_> {
    fn q(&self, q: StateId) -> String {
        self.sig.state_name(q).to_string()
    }
    fn a(&self, a: InputSym) -> String {
        self.sig.input().display(a).to_string()
    }
    fn b(&self, b: StackSym) -> String {
        self.sig.stack().token(b).to_string()
    }
    fn s(&self, s: &[StackSym]) -> String {
        if s.is_empty() {
            "ε".to_string()
        } else {
            self.sig.stack().render(s)
        }
    }
    fn d(&self, d: Option<Move>) -> String {
        d.map(|m| m.offset().to_string()).unwrap_or_default()
    }

    fn pair(&self, k: &PairKey, extra_name: &str) -> Witness {
        let mut w = witness([
            ("q1", self.q(k.q1)),
            ("a1", self.a(k.a1)),
            ("b1", self.b(k.b1)),
            ("q2", self.q(k.q2)),
            ("a2", self.a(k.a2)),
        ]);
        if let Some(b2) = k.b2 {
            w.insert("b2".into(), self.b(b2));
        }
        if k.d1.is_some() {
            w.insert("D1".into(), self.d(k.d1));
            w.insert("D2".into(), self.d(k.d2));
        }
        if let Some(e) = &k.extra {
            w.insert(extra_name.into(), self.s(e));
        }
        w
    }
}

fn column_key(r: &QpagRule) -> (StateId, &StackOp, Move) {
    (r.to, &r.op, r.mv)
}

/// Evaluates the column conditions for a QPAG's transition function.
///
/// Condition 1 checks that each column (q, a, b) is normalized. The others
/// require that the images of any two distinct configurations that could map
/// onto a common configuration are orthogonal, split by whether the head
/// positions agree and by which side pops.
pub fn check_qpag(m: &Qpag, mode: Mode, tol: f64) -> WfReport {
    let sig = m.signature();
    let render = Renderer { sig };
    let rules = m.rules();
    let mut violations = Vec::new();
    let mut metadata = ReportMetadata {
        notes: vec![NOTE_INDEX.into(), NOTE_PAIRS.into(), NOTE_ORDERED.into(), NOTE_PUSHES.into()],
        ..Default::default()
    };

    let mut columns: BTreeMap<(StateId, InputSym, StackSym), Vec<&QpagRule>> = BTreeMap::new();
    for r in rules {
        columns.entry(r.column()).or_default().push(r);
    }
    for col in columns.values_mut() {
        col.sort_by(|x, y| column_key(x).cmp(&column_key(y)));
    }

    // (1) normalization.
    let mut evaluated = 0;
    let mut check_column = |q: StateId, a: InputSym, b: StackSym, col: Option<&Vec<&QpagRule>>| {
        let sum: f64 = col.map(|c| c.iter().map(|r| r.weight.norm_sqr()).sum()).unwrap_or(0.0);
        evaluated += 1;
        let residual = match mode {
            Mode::Total => (sum - 1.0).abs(),
            Mode::Partial => sum - 1.0,
        };
        if residual > tol {
            violations.push(Violation {
                condition: ConditionId::C1,
                witness: witness([("q", render.q(q)), ("a", render.a(a)), ("b", render.b(b))]),
                residual,
            });
        }
    };
    match mode {
        Mode::Total => {
            for q in sig.states() {
                for a in sig.input().symbols() {
                    for b in sig.stack().symbols() {
                        check_column(q, a, b, columns.get(&(q, a, b)));
                    }
                }
            }
        }
        Mode::Partial => {
            for (&(q, a, b), col) in &columns {
                check_column(q, a, b, Some(col));
            }
        }
    }
    metadata.evaluations.insert(ConditionId::C1.as_str().into(), evaluated);

    let mut record = |id: ConditionId, sums: Sums, extra_name: &str, violations: &mut Vec<Violation>| {
        let folded = sums.fold();
        metadata.evaluations.insert(id.as_str().into(), folded.len());
        for (k, v) in folded {
            if v.norm() > tol {
                violations.push(Violation {
                    condition: id,
                    witness: render.pair(&k, extra_name),
                    residual: v.norm(),
                });
            }
        }
    };

    // (2) columns differing only in state.
    let mut by_symbols: BTreeMap<(InputSym, StackSym), Vec<(StateId, &Vec<&QpagRule>)>> = BTreeMap::new();
    for (&(q, a, b), col) in &columns {
        by_symbols.entry((a, b)).or_default().push((q, col));
    }
    let mut sums = Sums::new();
    for (&(a, b), cols) in &by_symbols {
        for (i, (q1, c1)) in cols.iter().enumerate() {
            for (q2, c2) in &cols[i + 1..] {
                let targets: HashMap<_, Complex64> = c2.iter().map(|r| (column_key(r), r.weight)).collect();
                for r1 in c1.iter() {
                    if let Some(&w2) = targets.get(&column_key(r1)) {
                        let key = PairKey {
                            q1: *q1,
                            a1: a,
                            b1: b,
                            d1: None,
                            q2: *q2,
                            a2: a,
                            b2: Some(b),
                            d2: None,
                            extra: None,
                        };
                        sums.add(key, (r1.to, r1.op.clone(), Some(r1.mv)), r1.weight.conj() * w2);
                    }
                }
            }
        }
    }
    record(ConditionId::C2, sums, "", &mut violations);

    let mut by_target: HashMap<StateId, Vec<&QpagRule>> = HashMap::new();
    for r in rules {
        by_target.entry(r.to).or_default().push(r);
    }

    // (3a)/(5a): neither side pops; the second pushes b3·b1·s1 where the first
    // applies s1 (ε or a push).
    let mut same_head = Sums::new();
    let mut diff_head = Sums::new();
    for r1 in rules.iter().filter(|r| !r.op.is_pop()) {
        let s1 = r1.op.pushed();
        for r2 in by_target.get(&r1.to).into_iter().flatten() {
            let StackOp::Push(s2) = &r2.op else { continue };
            if s2.len() <= s1.len() || !s2.ends_with(s1) || s2[s2.len() - s1.len() - 1] != r1.top {
                continue;
            }
            let b3 = s2[..s2.len() - s1.len() - 1].to_vec();
            let value = r1.weight.conj() * r2.weight;
            if r1.mv == r2.mv {
                if r1.read != r2.read {
                    continue;
                }
                let key = PairKey {
                    q1: r1.from,
                    a1: r1.read,
                    b1: r1.top,
                    d1: None,
                    q2: r2.from,
                    a2: r2.read,
                    b2: Some(r2.top),
                    d2: None,
                    extra: Some(b3),
                };
                same_head.add(key, (r1.to, r1.op.clone(), Some(r1.mv)), value);
            } else {
                let key = PairKey {
                    q1: r1.from,
                    a1: r1.read,
                    b1: r1.top,
                    d1: Some(r1.mv),
                    q2: r2.from,
                    a2: r2.read,
                    b2: Some(r2.top),
                    d2: Some(r2.mv),
                    extra: Some(b3),
                };
                diff_head.add(key, (r1.to, r1.op.clone(), None), value);
            }
        }
    }
    record(ConditionId::C3a, same_head, "b3", &mut violations);
    record(ConditionId::C5a, diff_head, "b3", &mut violations);

    // (3b)/(5b): the first pops, the second applies b3 ∈ G ∪ {ε}.
    let mut same_head = Sums::new();
    let mut diff_head = Sums::new();
    for r1 in rules.iter().filter(|r| r.op.is_pop()) {
        for r2 in by_target.get(&r1.to).into_iter().flatten() {
            if r2.op.is_pop() {
                continue;
            }
            let b3 = r2.op.pushed().to_vec();
            let value = r1.weight.conj() * r2.weight;
            if r1.mv == r2.mv {
                if r1.read != r2.read {
                    continue;
                }
                let key = PairKey {
                    q1: r1.from,
                    a1: r1.read,
                    b1: r1.top,
                    d1: None,
                    q2: r2.from,
                    a2: r2.read,
                    b2: Some(r2.top),
                    d2: None,
                    extra: Some(b3),
                };
                same_head.add(key, (r1.to, StackOp::Pop, Some(r1.mv)), value);
            } else {
                let key = PairKey {
                    q1: r1.from,
                    a1: r1.read,
                    b1: r1.top,
                    d1: Some(r1.mv),
                    q2: r2.from,
                    a2: r2.read,
                    b2: Some(r2.top),
                    d2: Some(r2.mv),
                    extra: Some(b3),
                };
                diff_head.add(key, (r1.to, StackOp::Pop, None), value);
            }
        }
    }
    record(ConditionId::C3b, same_head, "b3", &mut violations);
    record(ConditionId::C5b, diff_head, "b3", &mut violations);

    // (4): same stack top and operation, the first stays and the second moves.
    let mut movers: HashMap<(StackSym, StateId, &StackOp), Vec<&QpagRule>> = HashMap::new();
    for r in rules.iter().filter(|r| r.mv == Move::Right) {
        movers.entry((r.top, r.to, &r.op)).or_default().push(r);
    }
    let mut sums = Sums::new();
    for r1 in rules.iter().filter(|r| r.mv == Move::Stay) {
        for r2 in movers.get(&(r1.top, r1.to, &r1.op)).into_iter().flatten() {
            let key = PairKey {
                q1: r1.from,
                a1: r1.read,
                b1: r1.top,
                d1: None,
                q2: r2.from,
                a2: r2.read,
                b2: None,
                d2: None,
                extra: None,
            };
            sums.add(key, (r1.to, r1.op.clone(), None), r1.weight.conj() * r2.weight);
        }
    }
    record(ConditionId::C4, sums, "", &mut violations);

    WfReport::finish(mode, violations, metadata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{push, Amplitude, MachineBuilder, EPS, POP};
    use crate::problem1::build_problem1_machine;

    fn builder() -> MachineBuilder {
        let mut b = MachineBuilder::new(&["a", "#"], "¢", "$", &["a", "b"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        b
    }

    #[test]
    fn problem1_machine_passes_partial() {
        let r = check_qpag(&build_problem1_machine(), Mode::Partial, 1e-9);
        assert!(r.passed, "{:?}", r.violations);
        // 135 transitions; the eight 4-way columns (#-split and Hadamard) share keys.
        assert_eq!(r.evaluations(ConditionId::C1), 135 - 8 * 3);
    }

    #[test]
    fn problem1_machine_fails_total() {
        let r = check_qpag(&build_problem1_machine(), Mode::Total, 1e-9);
        assert!(!r.passed);
        assert!(r.violations.iter().all(|v| v.condition == ConditionId::C1));
    }

    #[test]
    fn norm_two_column() {
        let mut b = builder();
        b.rule("q0", "a", "Z", "q1", EPS, 1, 1.0).rule("q0", "a", "Z", "q2", EPS, 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert_eq!(r.violations.len(), 1);
        let v = &r.violations[0];
        assert_eq!(v.condition, ConditionId::C1);
        assert!((v.residual - 1.0).abs() < 1e-12);
        // Total mode reports |2 − 1| as well, plus every undefined column.
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Total, 1e-9);
        assert!(r.violations.iter().any(|v| v.condition == ConditionId::C1 && (v.residual - 1.0).abs() < 1e-12));
    }

    #[test]
    fn quarter_split_is_normalized() {
        let mut b = builder();
        for (to, a) in [("p0", 0.5), ("p1", -0.5), ("p2", 0.5), ("p3", -0.5)] {
            b.rule("q0", "#", "a", to, EPS, 1, a);
        }
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.passed);
    }

    #[test]
    fn orthogonality_between_states() {
        let mut b = builder();
        b.rule("q0", "a", "Z", "p", EPS, 1, 1.0).rule("q1", "a", "Z", "p", EPS, 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C2));
        assert_eq!(r.violations[0].witness["q1"], "q0");
        assert_eq!(r.violations[0].witness["q2"], "q1");
    }

    #[test]
    fn epsilon_against_push_collides() {
        let mut b = builder();
        b.rule("q0", "a", "a", "p", EPS, 1, 1.0).rule("q1", "a", "b", "p", push("a"), 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C3a), "{:?}", r.violations);
        assert_eq!(r.violations.len(), 1);
    }

    #[test]
    fn push_against_longer_push_collides() {
        // (q0, Z…xb) pushing a and (q1, Z…x) pushing "ba" both reach Z…xba.
        let mut b = builder();
        b.rule("q0", "a", "b", "p", push("a"), 1, 1.0).rule("q1", "a", "a", "p", push("ba"), 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C3a), "{:?}", r.violations);
    }

    #[test]
    fn same_triple_epsilon_and_push() {
        let h = 1.0 / 2f64.sqrt();
        let mut b = builder();
        b.rule("q0", "a", "a", "p", EPS, 1, h).rule("q0", "a", "a", "p", push("a"), 1, h);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C3a));
        assert!(!r.has(ConditionId::C1));
    }

    #[test]
    fn pop_against_epsilon_collides() {
        let mut b = builder();
        b.rule("q0", "a", "a", "p", POP, 1, 1.0).rule("q1", "a", "b", "p", EPS, 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C3b));
        assert!(r.violations.iter().all(|v| v.condition == ConditionId::C3b));
    }

    #[test]
    fn stay_against_move_collides() {
        let mut b = builder();
        b.rule("q0", "a", "Z", "p", EPS, 0, 1.0).rule("q1", "#", "Z", "p", EPS, 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C4));
        assert_eq!(r.violations.len(), 1);
        // A single transition that stays can still collide with itself.
        let mut b = builder();
        b.rule("q0", "a", "Z", "q0", EPS, 0, 1.0).rule("q0", "#", "Z", "q0", EPS, 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C4));
    }

    #[test]
    fn different_heads_and_stacks() {
        let mut b = builder();
        b.rule("q0", "a", "a", "p", EPS, 0, 1.0).rule("q1", "#", "b", "p", push("a"), 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C5a));

        let mut b = builder();
        b.rule("q0", "a", "a", "p", POP, 1, 1.0).rule("q1", "#", "b", "p", EPS, 0, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.has(ConditionId::C5b));
    }

    #[test]
    fn pop_free_machines_skip_pop_conditions() {
        let mut b = builder();
        b.rule("q0", "a", "Z", "q0", push("a"), 1, 1.0)
            .rule("q0", "a", "a", "q0", push("a"), 1, 1.0)
            .rule("q0", "#", "a", "q1", EPS, 1, 1.0);
        let r = check_qpag(&b.build_qpag().unwrap(), Mode::Partial, 1e-9);
        assert!(r.passed);
        assert_eq!(r.evaluations(ConditionId::C3b), 0);
        assert_eq!(r.evaluations(ConditionId::C5b), 0);
        assert!(r.evaluations(ConditionId::C1) > 0);
    }

    #[test]
    fn report_is_independent_of_rule_order() {
        let m = build_problem1_machine();
        let mut b = builder();
        b.rule("q0", "a", "a", "p", POP, 1, 1.0)
            .rule("q1", "a", "b", "p", EPS, 1, 0.5)
            .amp("q2", "a", "a", "p", EPS, 1, Amplitude::new(0.0, 0.5))
            .rule("q0", "a", "Z", "p", EPS, 0, 1.0);
        let x = b.build_qpag().unwrap();
        for machine in [m, x] {
            let mut rules = machine.rules().to_vec();
            rules.reverse();
            let rev = Qpag::new(machine.signature().clone(), rules).unwrap();
            assert_eq!(check_qpag(&machine, Mode::Partial, 1e-9), check_qpag(&rev, Mode::Partial, 1e-9));
        }
    }
}
