//! Seeded generators for test corpora: random unitaries, fully specified
//! QPAGs, and well-formed QCPDAs.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use num_complex::Complex64;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{Amplitude, MachineBuilder, OpSpec, Qcpda, Qpag, EPS, POP};

/// A random n×n unitary, returned as its columns. Half of the draws are
/// phased permutations, the rest Gram-Schmidt on a random complex matrix.
pub fn random_unitary(n: usize, rng: &mut impl Rng) -> Vec<Vec<Complex64>> {
    if rng.gen_bool(0.5) {
        return random_permutation(n, rng);
    }
    random_dense_unitary(n, rng)
}

/// A permutation matrix with random phases from {1, i, -1, -i}.
pub fn random_permutation(n: usize, rng: &mut impl Rng) -> Vec<Vec<Complex64>> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    perm.into_iter()
        .map(|row| {
            let mut col = vec![Complex64::new(0.0, 0.0); n];
            let phase = [0.0, 0.5, 1.0, 1.5][rng.gen_range(0..4)] * PI;
            col[row] = Complex64::from_polar(1.0, phase);
            col
        })
        .collect()
}

fn random_dense_unitary(n: usize, rng: &mut impl Rng) -> Vec<Vec<Complex64>> {
    loop {
        let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(n);
        let mut ok = true;
        for _ in 0..n {
            let mut v: Vec<Complex64> = (0..n).map(|_| Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))).collect();
            for u in &cols {
                let proj: Complex64 = u.iter().zip(&v).map(|(x, y)| x.conj() * y).sum();
                for (vi, ui) in v.iter_mut().zip(u) {
                    *vi -= proj * ui;
                }
            }
            let norm = v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
            if norm < 1e-3 {
                ok = false;
                break;
            }
            v.iter_mut().for_each(|x| *x /= norm);
            cols.push(v);
        }
        if ok {
            return cols;
        }
    }
}

fn add_column(b: &mut MachineBuilder, from: &str, read: &str, top: &str, targets: &[(String, OpSpec, u8)], col: &[Complex64]) {
    for ((to, op, mv), amp) in targets.iter().zip(col) {
        if amp.norm() > 1e-14 {
            b.amp(from, read, top, to, op.clone(), *mv, *amp);
        }
    }
}

/// A QPAG whose columns are all defined and orthonormal. Every state has a
/// fixed stack operation (ε or a push) and a fixed head move, and every
/// column (q, a, b) is a column of a random unitary over the states.
pub fn random_total_qpag(seed: u64) -> Qpag {
    total_qpag(seed, false)
}

/// As [`random_total_qpag`] with every block a phased permutation, so the
/// machine is deterministic up to phases.
pub fn random_permutation_qpag(seed: u64) -> Qpag {
    total_qpag(seed, true)
}

fn total_qpag(seed: u64, permutations: bool) -> Qpag {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extra = rng.gen_range(0..=2);
    let mut names = vec!["q0".to_string()];
    names.extend((0..extra).map(|i| format!("p{i}")));
    names.extend(["acc".to_string(), "rej".to_string()]);
    let pushes = [OpSpec::Epsilon, crate::model::push("x"), crate::model::push("y"), crate::model::push("xy")];
    let targets: Vec<(String, OpSpec, u8)> = names
        .iter()
        .map(|n| {
            let op = pushes[rng.gen_range(0..pushes.len())].clone();
            // The initial state keeps moving so every run reaches $.
            let mv = if n == "q0" || rng.gen_bool(0.7) { 1 } else { 0 };
            (n.clone(), op, mv)
        })
        .collect();
    let mut b = MachineBuilder::new(&["a", "b"], "¢", "$", &["x", "y"], "Z");
    b.initial("q0").accept("acc").reject("rej");
    for n in &names {
        b.state(n);
    }
    for read in ["¢", "a", "b", "$"] {
        for top in ["Z", "x", "y"] {
            let u = if permutations {
                random_permutation(names.len(), &mut rng)
            } else {
                random_unitary(names.len(), &mut rng)
            };
            for (from, col) in names.iter().zip(&u) {
                add_column(&mut b, from, read, top, &targets, col);
            }
        }
    }
    b.build_qpag().expect("generated machine is structurally valid")
}

/// A QCPDA that passes the Partial-mode check: at most four states, stack
/// alphabet {Z, x}, input {a, b}. For each stack symbol, a random subset of
/// states is entered without moving the head and the rest with a move, so
/// the stay/move condition holds trivially; each (a, b) block is a slice of
/// a random unitary. States whose σ pops are not targets under top Z.
pub fn random_qcpda(seed: u64) -> Qcpda {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let inner = rng.gen_range(1..=2);
    let mut names: Vec<String> = (0..inner).map(|i| format!("q{i}")).collect();
    let sigma_choices = [EPS, POP, crate::model::push("x"), crate::model::push("xx")];
    let sigma: Vec<OpSpec> = (0..inner).map(|_| sigma_choices[rng.gen_range(0..4)].clone()).collect();
    names.extend(["acc".to_string(), "rej".to_string()]);
    let mut b = MachineBuilder::new(&["a", "b"], "¢", "$", &["x"], "Z");
    b.initial("q0").accept("acc").reject("rej");
    for (n, op) in names.iter().zip(&sigma) {
        b.sigma(n, op.clone());
    }
    let pops: Vec<bool> = (0..names.len()).map(|i| i < inner && sigma[i] == POP).collect();
    for top in ["Z", "x"] {
        let stay: Vec<bool> = (0..names.len()).map(|_| rng.gen_bool(0.3)).collect();
        let allowed: Vec<usize> = (0..names.len()).filter(|&i| !(top == "Z" && pops[i])).collect();
        for read in ["¢", "a", "b", "$"] {
            // Leave some columns undefined; Partial mode allows it.
            if read != "¢" && rng.gen_bool(0.1) {
                continue;
            }
            let u = random_unitary(allowed.len(), &mut rng);
            for (src, col) in (0..inner).zip(&u) {
                for (&t, amp) in allowed.iter().zip(col) {
                    if amp.norm() > 1e-14 {
                        b.qc(&names[src], read, top, &names[t], if stay[t] { 0 } else { 1 }, *amp);
                    }
                }
            }
        }
    }
    b.build_qcpda().expect("generated machine is structurally valid")
}

/// All words over `alphabet` of length at most `max_len`, shortest first.
pub fn all_words(alphabet: &[&str], max_len: usize) -> Vec<Vec<String>> {
    let mut out = vec![Vec::new()];
    let mut layer: Vec<Vec<String>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for w in &layer {
            for s in alphabet {
                let mut v = w.clone();
                v.push(s.to_string());
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        layer = next;
    }
    out
}

/// A random word over `alphabet` with length in `0..=max_len`.
pub fn random_word(alphabet: &[&str], max_len: usize, rng: &mut impl Rng) -> Vec<String> {
    let n = rng.gen_range(0..=max_len);
    (0..n).map(|_| alphabet[rng.gen_range(0..alphabet.len())].to_string()).collect()
}

/// Empirical check helper: the Gram matrix of `cols` against the identity.
pub fn unitarity_defect(cols: &[Vec<Amplitude>]) -> f64 {
    let mut worst: f64 = 0.0;
    for (i, u) in cols.iter().enumerate() {
        for (j, v) in cols.iter().enumerate() {
            let g: Complex64 = u.iter().zip(v).map(|(x, y)| x.conj() * y).sum();
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g - target).norm());
        }
    }
    worst
}

/// Per-state σ of a generated QCPDA, by name; handy in test diagnostics.
pub fn sigma_table(m: &Qcpda) -> BTreeMap<String, String> {
    let sig = m.signature();
    m.sigma().iter().map(|(&q, op)| (sig.state_name(q).to_string(), op.render(sig.stack()))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validate::{check_qcpda, check_qpag, Mode};

    #[test]
    fn unitaries_are_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 1..6 {
            for _ in 0..10 {
                assert!(unitarity_defect(&random_unitary(n, &mut rng)) < 1e-12);
            }
        }
    }

    #[test]
    fn generated_machines_are_well_formed() {
        for seed in 0..40 {
            let q = random_total_qpag(seed);
            let r = check_qpag(&q, Mode::Total, 1e-9);
            assert!(r.passed, "seed {seed}: {:?}", r.violations.first());
            let c = random_qcpda(seed);
            let r = check_qcpda(&c, Mode::Partial, 1e-9);
            assert!(r.passed, "seed {seed}: {:?}", r.violations.first());
        }
    }

    #[test]
    fn word_enumeration() {
        let w = all_words(&["a", "b"], 4);
        assert_eq!(w.len(), 1 + 2 + 4 + 8 + 16);
        assert!(w[0].is_empty());
    }
}
