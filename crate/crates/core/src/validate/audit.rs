//! Direct unitarity audit: enumerate the configurations reachable within a
//! few steps and check that U maps them to an orthonormal family.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use num_complex::Complex64;
use serde::Serialize;

use crate::model::{Amplitude, Configuration, Qpag, StateVector, DEFAULT_STATE_CAP, DEFAULT_TOL};
use crate::result::ser_f64;
use crate::sim::{image_of, ColumnIndex, SimError};

/// Witnesses kept per failure kind.
const MAX_WITNESSES: usize = 20;

#[derive(Clone, Debug)]
pub struct AuditOptions {
    pub depth: usize,
    pub tol: f64,
    pub cap: usize,
}

impl Default for AuditOptions {
    fn default() -> Self {
        AuditOptions {
            depth: 10,
            tol: DEFAULT_TOL,
            cap: DEFAULT_STATE_CAP,
        }
    }
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct NormWitness {
    pub config: String,
    #[serde(serialize_with = "ser_f64")]
    pub norm_sqr: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct OverlapWitness {
    pub left: String,
    pub right: String,
    #[serde(serialize_with = "ser_f64")]
    pub overlap: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct AuditReport {
    pub passed: bool,
    pub depth: usize,
    /// Configurations reached in layers 0..=depth.
    pub configurations: usize,
    /// Configurations whose image under U was checked.
    pub checked: usize,
    pub undefined_columns: usize,
    pub norm_failures: Vec<NormWitness>,
    pub overlap_failures: Vec<OverlapWitness>,
    #[serde(serialize_with = "ser_f64")]
    pub max_norm_residual: f64,
    #[serde(serialize_with = "ser_f64")]
    pub max_overlap: f64,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// U restricted to the reachable live configurations: `basis[i]` maps to
/// `images[i]`.
#[derive(Clone, Debug)]
pub struct StepMatrix {
    pub basis: Vec<Configuration>,
    pub images: Vec<Vec<(Configuration, Amplitude)>>,
    undefined: Vec<Configuration>,
    reached: usize,
}

impl StepMatrix {
    /// U|ψ⟩ for ψ supported on the basis. Entries outside it are ignored.
    pub fn apply(&self, psi: &StateVector) -> StateVector {
        let mut out = StateVector::new();
        for (c, img) in self.basis.iter().zip(&self.images) {
            let a = psi.get(c);
            if a == Complex64::new(0.0, 0.0) {
                continue;
            }
            for (t, w) in img {
                out.add(t.clone(), a * w);
            }
        }
        out
    }

    /// U†|φ⟩ projected onto the basis.
    pub fn adjoint_apply(&self, phi: &StateVector) -> StateVector {
        let mut out = StateVector::new();
        for (c, img) in self.basis.iter().zip(&self.images) {
            let s: Complex64 = img.iter().map(|(t, w)| w.conj() * phi.get(t)).sum();
            if s != Complex64::new(0.0, 0.0) {
                out.insert(c.clone(), s);
            }
        }
        out
    }
}

/// Breadth-first enumeration from the initial configuration. Halting
/// configurations and configurations past the right endmarker are reached
/// but have no image.
pub fn reachable_step_matrix<S: AsRef<str>>(m: &Qpag, word: &[S], depth: usize, cap: usize) -> Result<StepMatrix, SimError> {
    let sig = m.signature();
    let tape = sig.make_tape(word)?;
    let index = ColumnIndex::new(m);
    let start = Configuration::initial(sig.initial());
    let mut seen: BTreeSet<Configuration> = BTreeSet::from([start.clone()]);
    let mut layer = vec![start];
    let mut matrix = StepMatrix {
        basis: Vec::new(),
        images: Vec::new(),
        undefined: Vec::new(),
        reached: 0,
    };
    for level in 0..=depth {
        let mut next = Vec::new();
        for c in layer {
            if sig.is_halting(c.state) || c.head >= tape.len() {
                continue;
            }
            let Some(img) = image_of(&index, &tape, &c)? else {
                matrix.undefined.push(c);
                continue;
            };
            if level < depth {
                for (t, w) in &img {
                    if w.norm_sqr() > 0.0 && !seen.contains(t) {
                        seen.insert(t.clone());
                        next.push(t.clone());
                    }
                }
                if seen.len() > cap {
                    return Err(SimError::StateSpaceOverflow { count: seen.len(), cap });
                }
            }
            matrix.basis.push(c);
            matrix.images.push(img);
        }
        layer = next;
    }
    matrix.reached = seen.len();
    Ok(matrix)
}

/// Checks ‖U|c⟩‖ = 1 and ⟨c₁|U†U|c₂⟩ = 0 over the live configurations reachable
/// within `opts.depth` steps of the initial configuration on `word`.
pub fn audit_unitarity<S: AsRef<str>>(m: &Qpag, word: &[S], opts: &AuditOptions) -> Result<AuditReport, SimError> {
    let sig = m.signature();
    let sm = reachable_step_matrix(m, word, opts.depth, opts.cap)?;
    let mut norm_failures = Vec::new();
    let mut max_norm_residual: f64 = 0.0;
    let mut inverse: HashMap<&Configuration, Vec<(usize, Amplitude)>> = HashMap::new();
    for (i, (c, img)) in sm.basis.iter().zip(&sm.images).enumerate() {
        let n: f64 = img.iter().map(|(_, w)| w.norm_sqr()).sum();
        let residual = (n - 1.0).abs();
        max_norm_residual = max_norm_residual.max(residual);
        if residual > opts.tol {
            norm_failures.push(NormWitness {
                config: sig.render_config(c),
                norm_sqr: n,
            });
        }
        for (t, w) in img {
            inverse.entry(t).or_default().push((i, *w));
        }
    }
    let mut pairs: BTreeMap<(usize, usize), Complex64> = BTreeMap::new();
    let mut targets: Vec<_> = inverse.into_iter().collect();
    targets.sort_by(|x, y| x.0.cmp(y.0));
    for (_, sources) in targets {
        for (k, &(i, wi)) in sources.iter().enumerate() {
            for &(j, wj) in &sources[k + 1..] {
                let key = if i < j { (i, j) } else { (j, i) };
                *pairs.entry(key).or_default() += wi.conj() * wj;
            }
        }
    }
    let mut overlap_failures = Vec::new();
    let mut max_overlap: f64 = 0.0;
    for ((i, j), s) in pairs {
        let o = s.norm();
        max_overlap = max_overlap.max(o);
        if o > opts.tol {
            overlap_failures.push(OverlapWitness {
                left: sig.render_config(&sm.basis[i]),
                right: sig.render_config(&sm.basis[j]),
                overlap: o,
            });
        }
    }
    let passed = norm_failures.is_empty() && overlap_failures.is_empty();
    norm_failures.truncate(MAX_WITNESSES);
    overlap_failures.truncate(MAX_WITNESSES);
    let warnings = sm
        .undefined
        .iter()
        .take(MAX_WITNESSES)
        .map(|c| format!("undefined column at {}", sig.render_config(c)))
        .collect();
    Ok(AuditReport {
        passed,
        depth: opts.depth,
        configurations: sm.reached,
        checked: sm.basis.len(),
        undefined_columns: sm.undefined.len(),
        norm_failures,
        overlap_failures,
        max_norm_residual,
        max_overlap,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MachineBuilder, EPS, POP};
    use crate::problem1::build_problem1_machine;

    fn words(s: &str) -> Vec<String> {
        s.chars().map(|c| c.to_string()).collect()
    }

    #[test]
    fn problem1_machine_is_unitary_on_reachable_part() {
        let m = build_problem1_machine();
        let r = audit_unitarity(&m, &words("ab#ba#cd"), &AuditOptions::default()).unwrap();
        assert!(r.passed, "{r:?}");
        assert!(r.checked > 10);
        assert!(r.max_norm_residual < 1e-12);
    }

    fn two_into_one() -> Qpag {
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["x"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        let h = 1.0 / 2f64.sqrt();
        b.rule("q0", "¢", "Z", "p", EPS, 1, h)
            .rule("q0", "¢", "Z", "r", EPS, 1, h)
            .rule("p", "a", "Z", "acc", EPS, 1, 1.0)
            .rule("r", "a", "Z", "acc", EPS, 1, 1.0);
        b.build_qpag().unwrap()
    }

    #[test]
    fn merging_columns_overlap() {
        let r = audit_unitarity(&two_into_one(), &words("a"), &AuditOptions::default()).unwrap();
        assert!(!r.passed);
        assert_eq!(r.overlap_failures.len(), 1);
        assert!((r.max_overlap - 1.0).abs() < 1e-12);
    }

    #[test]
    fn overweight_column_fails_norm() {
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["x"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        b.rule("q0", "¢", "Z", "q0", EPS, 1, 1.0)
            .rule("q0", "a", "Z", "acc", EPS, 1, 1.0)
            .rule("q0", "a", "Z", "rej", EPS, 1, 1.0);
        let m = b.build_qpag().unwrap();
        let shallow = audit_unitarity(&m, &words("a"), &AuditOptions { depth: 0, ..Default::default() }).unwrap();
        assert!(shallow.passed);
        let r = audit_unitarity(&m, &words("a"), &AuditOptions { depth: 1, ..Default::default() }).unwrap();
        assert_eq!(r.norm_failures.len(), 1);
        assert!((r.norm_failures[0].norm_sqr - 2.0).abs() < 1e-12);
    }

    #[test]
    fn undefined_columns_are_warnings() {
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["x"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        b.rule("q0", "¢", "Z", "q0", EPS, 1, 1.0);
        let r = audit_unitarity(&b.build_qpag().unwrap(), &words("a"), &AuditOptions::default()).unwrap();
        assert!(r.passed);
        assert_eq!(r.undefined_columns, 1);
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn cap_is_enforced() {
        let m = build_problem1_machine();
        let opts = AuditOptions { cap: 3, ..Default::default() };
        let e = audit_unitarity(&m, &words("ab#ba#cd"), &opts).unwrap_err();
        assert!(matches!(e, SimError::StateSpaceOverflow { cap: 3, .. }));
    }

    #[test]
    fn adjoint_undoes_step() {
        let mut b = MachineBuilder::new(&["a"], "¢", "$", &["x"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        let h = 1.0 / 2f64.sqrt();
        b.rule("q0", "¢", "Z", "q0", EPS, 1, 1.0)
            .rule("q0", "a", "Z", "p", EPS, 1, h)
            .rule("q0", "a", "Z", "p", crate::model::push("x"), 1, h)
            .rule("q0", "a", "x", "p", POP, 1, 1.0);
        let m = b.build_qpag().unwrap();
        let sm = reachable_step_matrix(&m, &words("aa"), 3, 1000).unwrap();
        let psi: StateVector = sm.basis.iter().enumerate().map(|(i, c)| (c.clone(), Complex64::new(1.0 + i as f64, 0.5))).collect();
        let back = sm.adjoint_apply(&sm.apply(&psi));
        for (c, a) in psi.iter() {
            assert!((back.get(c) - a).norm() < 1e-12);
        }
    }
}
