use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use qpag::compile::compile;
use qpag::model::{MachineBuilder, Ppa, PpaRule, EPS};
use qpag::ppa::{build_wcwr_dpda, run_dpda, run_ppa, DpdaOutcome};
use qpag::problem1::build_problem1_machine;
use qpag::random::{all_words, random_permutation_qpag, random_qcpda, random_total_qpag, random_word};
use qpag::sim::{run, RunOptions};
use qpag::validate::{audit_unitarity, check_qcpda, check_qpag, reachable_step_matrix, AuditOptions, ConditionId, Mode};
use qpag::{Signature, StateVector};

fn w(s: &str) -> Vec<String> {
    Signature::split_word(s, false)
}

#[test]
fn problem1_evaluation_counts() {
    let r = check_qpag(&build_problem1_machine(), Mode::Partial, 1e-9);
    assert!(r.passed);
    let counts: Vec<usize> = [
        ConditionId::C1,
        ConditionId::C2,
        ConditionId::C3a,
        ConditionId::C3b,
        ConditionId::C4,
        ConditionId::C5a,
        ConditionId::C5b,
    ]
    .iter()
    .map(|&c| r.evaluations(c))
    .collect();
    assert_eq!(counts, [111, 6, 0, 0, 0, 0, 0]);
}

#[test]
fn problem1_audit_passes() {
    let opts = AuditOptions {
        depth: 12,
        ..Default::default()
    };
    let r = audit_unitarity(&build_problem1_machine(), &w("a#a#d"), &opts).unwrap();
    assert!(r.passed, "{r:?}");
    assert_eq!((r.configurations, r.checked), (23, 19));
}

#[test]
fn audit_flags_a_long_column() {
    let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a"], "Z");
    b.initial("q0").accept("acc").reject("rej").state("p");
    b.rule("q0", "¢", "Z", "p", EPS, 1, 1.0).rule("q0", "¢", "Z", "acc", EPS, 1, 1.0);
    let r = audit_unitarity(&b.build_qpag().unwrap(), &w("a"), &AuditOptions::default()).unwrap();
    assert!(!r.passed);
    assert_eq!(r.norm_failures.len(), 1);
    assert!((r.norm_failures[0].norm_sqr - 2.0).abs() < 1e-12);
}

#[test]
fn audit_of_machine_without_rules_is_vacuous() {
    let mut b = MachineBuilder::new(&["a"], "¢", "$", &["a"], "Z");
    b.initial("q0").accept("acc").reject("rej");
    let r = audit_unitarity(&b.build_qpag().unwrap(), &w("a"), &AuditOptions::default()).unwrap();
    assert!(r.passed);
    assert_eq!(r.undefined_columns, 1);
    assert!(!r.warnings.is_empty());
}

#[test]
fn step_is_reversible_on_total_machines() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for seed in 0..15 {
        let m = random_total_qpag(seed);
        assert!(check_qpag(&m, Mode::Total, 1e-9).passed);
        let word = random_word(&["a", "b"], 4, &mut rng);
        let sm = reachable_step_matrix(&m, &word, 6, 100_000).unwrap();
        // A spread-out ψ over the live basis.
        let mut psi = StateVector::new();
        for (i, c) in sm.basis.iter().enumerate() {
            psi.insert(c.clone(), Complex64::new(1.0 + i as f64, -(i as f64) / 3.0));
        }
        let back = sm.adjoint_apply(&sm.apply(&psi));
        for (c, a) in psi.iter() {
            assert!((back.get(c) - a).norm() < 1e-9, "seed {seed}");
        }
        assert!((sm.apply(&psi).norm_sqr() - psi.norm_sqr()).abs() < 1e-9 * psi.norm_sqr());
    }
}

/// Replaces every amplitude by its squared modulus.
fn as_ppa(m: &qpag::Qpag) -> Ppa {
    let rules: Vec<PpaRule> = m
        .rules()
        .iter()
        .map(|r| PpaRule {
            from: r.from,
            read: r.read,
            top: r.top,
            to: r.to,
            op: r.op.clone(),
            mv: r.mv,
            weight: r.weight.norm_sqr(),
        })
        .collect();
    Ppa::new(m.signature().clone(), rules).unwrap()
}

#[test]
fn phased_permutations_match_their_classical_shadow() {
    for seed in 0..20 {
        let q = random_permutation_qpag(seed);
        let p = as_ppa(&q);
        for word in all_words(&["a", "b"], 3) {
            let rq = run(&q, &word, &RunOptions::default()).unwrap();
            let rp = run_ppa(&p, &word, None).unwrap();
            assert!((rq.p_acc - rp.p_acc).abs() < 1e-9, "seed {seed} word {word:?}");
            assert!((rq.p_rej - rp.p_rej).abs() < 1e-9, "seed {seed} word {word:?}");
            assert_eq!(run_dpda(&p, &word, None).unwrap() == DpdaOutcome::Accept, rp.p_acc == 1.0);
        }
    }
}

#[test]
fn compiled_machines_are_well_formed() {
    for seed in 0..30 {
        let m = random_qcpda(seed);
        assert!(check_qcpda(&m, Mode::Partial, 1e-9).passed);
        let (c, _) = compile(&m).unwrap();
        let r = check_qpag(&c, Mode::Partial, 1e-9);
        assert!(r.passed, "seed {seed}: {:?}", r.violations.first());
    }
}

proptest! {
    #[test]
    fn ppa_and_dpda_agree_on_wcwr(word in proptest::collection::vec(prop_oneof!["a", "b", "c"], 0..12)) {
        let m = build_wcwr_dpda();
        let r = run_ppa(&m, &word, None).unwrap();
        prop_assert!((r.total() - 1.0).abs() < 1e-12);
        let d = run_dpda(&m, &word, None).unwrap();
        prop_assert_eq!(d == DpdaOutcome::Accept, r.p_acc == 1.0);
        prop_assert_eq!(d == DpdaOutcome::Reject, r.p_rej == 1.0);
    }
}

#[test]
fn documented_machine_matches_builder() {
    let doc = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/format.md")).unwrap();
    let block = doc.split("<!-- promise-machine -->").nth(1).unwrap();
    let json = block.split("```json").nth(1).unwrap().split("```").next().unwrap();
    let m = qpag::format::parse_machine(json).unwrap();
    assert_eq!(m, qpag::format::Machine::Qpag(build_problem1_machine()));
}
