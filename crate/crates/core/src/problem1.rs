//! The promise problem: given w1#w2#w3, decide whether exactly one of w1 ~e w2ᴿ and
//! w1 ~e w3ᴿ holds. Includes the classical oracle, instance generators, the
//! exact QPAG that decides it, and sweeps that check the machine against the
//! oracle.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{MachineBuilder, Qpag, EPS, POP};
use crate::result::ser_f64;
use crate::sim::{self, RunOptions, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Problem1Error {
    #[error("strings have different lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("instance length must be at least 1")]
    EmptyInstance,
    #[error("symbol `{symbol}` is not allowed in {part}")]
    BadSymbol { part: &'static str, symbol: char },
    #[error("expected the form w1#w2#w3, got `{0}`")]
    BadForm(String),
    #[error("exhaustive sweep at n = {n} would check {count} instances (cap {cap})")]
    TooManyInstances { n: usize, count: u128, cap: u128 },
    #[error(transparent)]
    Sim(#[from] SimError),
}

const W12: [char; 3] = ['a', 'b', 'c'];
const W3: [char; 4] = ['a', 'b', 'c', 'd'];

/// Exhaustive sweeps are refused above this many instances.
pub const EXHAUSTIVE_CAP: u128 = 1_000_000;

/// True iff `u` and `v` differ in an even number of positions.
pub fn even_distinct(u: &str, v: &str) -> Result<bool, Problem1Error> {
    let (lu, lv) = (u.chars().count(), v.chars().count());
    if lu != lv {
        return Err(Problem1Error::LengthMismatch(lu, lv));
    }
    let d = u.chars().zip(v.chars()).filter(|(x, y)| x != y).count();
    Ok(d % 2 == 0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum PromiseClass {
    Yes,
    No,
}

impl fmt::Display for PromiseClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PromiseClass::Yes => "yes",
            PromiseClass::No => "no",
        })
    }
}

/// A promised input w1#w2#w3 with w1, w2 ∈ {a,b,c}ⁿ and w3 ∈ {a,b,c,d}ⁿ.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Instance {
    w1: String,
    w2: String,
    w3: String,
}

impl Instance {
    pub fn new(w1: &str, w2: &str, w3: &str) -> Result<Self, Problem1Error> {
        let n = w1.chars().count();
        if n == 0 {
            return Err(Problem1Error::EmptyInstance);
        }
        for (part, w, allowed) in [("w1", w1, &W12[..]), ("w2", w2, &W12[..]), ("w3", w3, &W3[..])] {
            let len = w.chars().count();
            if len != n {
                return Err(Problem1Error::LengthMismatch(n, len));
            }
            if let Some(symbol) = w.chars().find(|c| !allowed.contains(c)) {
                return Err(Problem1Error::BadSymbol { part, symbol });
            }
        }
        Ok(Instance {
            w1: w1.to_string(),
            w2: w2.to_string(),
            w3: w3.to_string(),
        })
    }

    /// Parses `w1#w2#w3`.
    pub fn parse(text: &str) -> Result<Self, Problem1Error> {
        let parts: Vec<&str> = text.split('#').collect();
        match parts.as_slice() {
            [a, b, c] => Instance::new(a, b, c),
            _ => Err(Problem1Error::BadForm(text.to_string())),
        }
    }

    pub fn n(&self) -> usize {
        self.w1.chars().count()
    }

    pub fn w1(&self) -> &str {
        &self.w1
    }

    pub fn w2(&self) -> &str {
        &self.w2
    }

    pub fn w3(&self) -> &str {
        &self.w3
    }

    /// The input word w1#w2#w3 as single-character tokens.
    pub fn encode(&self) -> Vec<String> {
        self.to_string().chars().map(|c| c.to_string()).collect()
    }
}

impl fmt::Display for Instance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}#{}#{}", self.w1, self.w2, self.w3)
    }
}

fn reversed(s: &str) -> String {
    s.chars().rev().collect()
}

/// Yes iff exactly one of w1 ~e w2ᴿ and w1 ~e w3ᴿ holds.
pub fn classify(inst: &Instance) -> PromiseClass {
    let e2 = even_distinct(&inst.w1, &reversed(&inst.w2)).expect("instance lengths agree");
    let e3 = even_distinct(&inst.w1, &reversed(&inst.w3)).expect("instance lengths agree");
    if e2 ^ e3 {
        PromiseClass::Yes
    } else {
        PromiseClass::No
    }
}

fn random_instance(n: usize, rng: &mut ChaCha8Rng) -> Instance {
    let pick = |alphabet: &[char], rng: &mut ChaCha8Rng| -> String {
        (0..n).map(|_| *alphabet.choose(rng).expect("nonempty alphabet")).collect()
    };
    let w1 = pick(&W12, rng);
    let w2 = pick(&W12, rng);
    let w3 = pick(&W3, rng);
    Instance { w1, w2, w3 }
}

/// Draws uniform instances until one of the requested class appears.
/// Deterministic for a fixed seed.
pub fn generate(n: usize, class: PromiseClass, seed: u64) -> Result<Instance, Problem1Error> {
    if n == 0 {
        return Err(Problem1Error::EmptyInstance);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let inst = random_instance(n, &mut rng);
        if classify(&inst) == class {
            return Ok(inst);
        }
    }
}

/// Every instance of length `n`, in lexicographic order.
pub fn all_instances(n: usize) -> Result<Vec<Instance>, Problem1Error> {
    if n == 0 {
        return Err(Problem1Error::EmptyInstance);
    }
    let count = instance_count(n);
    if count > EXHAUSTIVE_CAP {
        return Err(Problem1Error::TooManyInstances {
            n,
            count,
            cap: EXHAUSTIVE_CAP,
        });
    }
    let words = |alphabet: &[char]| -> Vec<String> {
        let mut out = vec![String::new()];
        for _ in 0..n {
            out = out
                .iter()
                .flat_map(|p| alphabet.iter().map(move |c| format!("{p}{c}")))
                .collect();
        }
        out
    };
    let (ws, w3s) = (words(&W12), words(&W3));
    let mut out = Vec::with_capacity(count as usize);
    for w1 in &ws {
        for w2 in &ws {
            for w3 in &w3s {
                out.push(Instance {
                    w1: w1.clone(),
                    w2: w2.clone(),
                    w3: w3.clone(),
                });
            }
        }
    }
    Ok(out)
}

/// 3ⁿ · 3ⁿ · 4ⁿ.
pub fn instance_count(n: usize) -> u128 {
    (36u128).checked_pow(n as u32).unwrap_or(u128::MAX)
}

fn state_name(sub: usize, phase: char, parity: usize) -> String {
    format!("q{sub}_{phase}{parity}")
}

/// The 13-state QPAG that decides the promise problem exactly.
///
/// Stage I pushes w1 and splits into the two sub-automata with amplitudes
/// ±1/2. Sub-automaton 1 pops w1 against w2 and flips its parity bit on every
/// mismatch, then skips w3; sub-automaton 2 skips w2 and pops against w3.
/// Both end with stack Z and garbage w1ᴿ, so reading $ applies a 4×4
/// Hadamard that sends all amplitude to accept iff the parities differ.
///
/// Every `*` row is expanded over {a, b, c, Z}. The rows that compare against
/// `d` read `d` from the input and a, b or c from the stack, since `d` is not
/// a stack symbol.
pub fn build_problem1_machine() -> Qpag {
    let mut b = MachineBuilder::new(&["a", "b", "c", "d", "#"], "¢", "$", &["a", "b", "c"], "Z");
    let any = ["a", "b", "c", "Z"];
    let letters = ["a", "b", "c"];

    b.initial("q0");
    for sub in 1..=2 {
        for phase in ['I', 'O'] {
            for parity in 0..=1 {
                b.state(&state_name(sub, phase, parity));
            }
        }
    }
    b.accept("qf_acc").reject("qf_rej").state("qf_-0").state("qf_-1");

    // Stage I: push w1, then split on the first #.
    b.rule("q0", "¢", "Z", "q0", EPS, 1, 1.0);
    for x in letters {
        for top in any {
            b.rule("q0", x, top, "q0", crate::model::push(x), 1, 1.0);
        }
    }
    for top in any {
        b.rule("q0", "#", top, "q1_I0", EPS, 1, 0.5)
            .rule("q0", "#", top, "q1_I1", EPS, 1, -0.5)
            .rule("q0", "#", top, "q2_I0", EPS, 1, 0.5)
            .rule("q0", "#", top, "q2_I1", EPS, 1, -0.5);
    }

    // Stage II, sub-automaton 1: compare w2 with the popped w1, skip w3.
    for parity in 0..=1 {
        let here = state_name(1, 'I', parity);
        let flip = state_name(1, 'I', 1 - parity);
        for x in letters {
            for top in letters {
                let to = if x == top { &here } else { &flip };
                b.rule(&here, x, top, to, POP, 1, 1.0);
            }
        }
        let out = state_name(1, 'O', parity);
        for top in any {
            b.rule(&here, "#", top, &out, EPS, 1, 1.0);
        }
        for x in ["a", "b", "c", "d"] {
            b.rule(&out, x, "Z", &out, EPS, 1, 1.0);
        }
    }

    // Stage II, sub-automaton 2: skip w2, compare w3 with the popped w1.
    for parity in 0..=1 {
        let skip = state_name(2, 'I', parity);
        let here = state_name(2, 'O', parity);
        let flip = state_name(2, 'O', 1 - parity);
        for x in letters {
            for top in any {
                b.rule(&skip, x, top, &skip, EPS, 1, 1.0);
            }
        }
        for top in any {
            b.rule(&skip, "#", top, &here, EPS, 1, 1.0);
        }
        for x in ["a", "b", "c", "d"] {
            for top in letters {
                let to = if x == top { &here } else { &flip };
                b.rule(&here, x, top, to, POP, 1, 1.0);
            }
        }
    }

    // Stage III: Hadamard over (qf_-0, qf_acc, qf_-1, qf_rej) on $.
    let hadamard: [(&str, [f64; 4]); 4] = [
        ("q1_O0", [0.5, 0.5, 0.5, 0.5]),
        ("q1_O1", [0.5, -0.5, 0.5, -0.5]),
        ("q2_O0", [-0.5, -0.5, 0.5, 0.5]),
        ("q2_O1", [-0.5, 0.5, 0.5, -0.5]),
    ];
    for (from, row) in hadamard {
        for (to, amp) in ["qf_-0", "qf_acc", "qf_-1", "qf_rej"].into_iter().zip(row) {
            b.rule(from, "$", "Z", to, EPS, 1, amp);
        }
    }

    b.build_qpag().expect("the promise-problem machine is structurally valid")
}

/// How a sweep chooses its instances.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepMode {
    Exhaustive,
    Sample { count: usize, seed: u64 },
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SweepFailure {
    pub instance: String,
    pub expected: PromiseClass,
    #[serde(serialize_with = "ser_f64")]
    pub p_acc: f64,
    #[serde(serialize_with = "ser_f64")]
    pub p_rej: f64,
}

#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct SweepReport {
    pub n: usize,
    pub mode: String,
    pub checked: usize,
    pub failures: Vec<SweepFailure>,
    #[serde(serialize_with = "ser_f64")]
    pub max_deviation: f64,
}

impl SweepReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Tolerance on 1 − p for a sweep to count an instance as exact.
pub const SWEEP_TOL: f64 = 1e-9;

/// Deviation from the exact answer: 1 − p_acc on yes, 1 − p_rej on no.
pub fn deviation(m: &Qpag, inst: &Instance, max_steps: Option<usize>) -> Result<(f64, SweepFailure), SimError> {
    let expected = classify(inst);
    let opts = RunOptions {
        max_steps,
        ..Default::default()
    };
    let r = sim::run(m, &inst.encode(), &opts)?;
    let dev = match expected {
        PromiseClass::Yes => 1.0 - r.p_acc,
        PromiseClass::No => 1.0 - r.p_rej,
    };
    Ok((
        dev.abs(),
        SweepFailure {
            instance: inst.to_string(),
            expected,
            p_acc: r.p_acc,
            p_rej: r.p_rej,
        },
    ))
}

/// Runs the promise-problem machine on every (or a sample of) length-n instance and
/// compares it with [`classify`].
pub fn sweep(n: usize, mode: SweepMode, max_steps: Option<usize>) -> Result<SweepReport, Problem1Error> {
    let instances = match mode {
        SweepMode::Exhaustive => all_instances(n)?,
        SweepMode::Sample { count, seed } => {
            if n == 0 {
                return Err(Problem1Error::EmptyInstance);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..count).map(|_| random_instance(n, &mut rng)).collect()
        }
    };
    let m = build_problem1_machine();
    let results: Vec<(f64, SweepFailure)> = instances
        .par_iter()
        .map(|inst| deviation(&m, inst, max_steps))
        .collect::<Result<_, _>>()?;
    let max_deviation = results.iter().map(|(d, _)| *d).fold(0.0, f64::max);
    let failures = results
        .into_iter()
        .filter(|(d, _)| *d > SWEEP_TOL)
        .map(|(_, f)| f)
        .collect();
    Ok(SweepReport {
        n,
        mode: match mode {
            SweepMode::Exhaustive => "exhaustive".to_string(),
            SweepMode::Sample { count, seed } => format!("sample(count={count}, seed={seed})"),
        },
        checked: instances.len(),
        failures,
        max_deviation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::validate::{check_qpag, Mode};

    #[test]
    fn even_distinctions() {
        assert!(even_distinct("1100", "1111").unwrap());
        assert!(!even_distinct("1000", "1111").unwrap());
        assert!(even_distinct("abc", "abc").unwrap());
        assert!(even_distinct("", "").unwrap());
        assert_eq!(even_distinct("ab", "a"), Err(Problem1Error::LengthMismatch(2, 1)));
    }

    #[test]
    fn classify_examples() {
        assert_eq!(classify(&Instance::new("a", "a", "d").unwrap()), PromiseClass::Yes);
        assert_eq!(classify(&Instance::new("a", "b", "d").unwrap()), PromiseClass::No);
        assert_eq!(classify(&Instance::new("ab", "ba", "dd").unwrap()), PromiseClass::No);
    }

    #[test]
    fn instance_validation() {
        assert_eq!(Instance::new("", "", ""), Err(Problem1Error::EmptyInstance));
        assert_eq!(Instance::new("a", "ab", "d"), Err(Problem1Error::LengthMismatch(1, 2)));
        assert!(matches!(Instance::new("d", "a", "a"), Err(Problem1Error::BadSymbol { part: "w1", .. })));
        assert_eq!(Instance::parse("ab#ca#dd").unwrap().to_string(), "ab#ca#dd");
        assert!(matches!(Instance::parse("ab#ca"), Err(Problem1Error::BadForm(_))));
    }

    #[test]
    fn encode_joins_with_hashes() {
        assert_eq!(Instance::new("a", "a", "d").unwrap().encode().concat(), "a#a#d");
        assert_eq!(Instance::new("ab", "ca", "dd").unwrap().encode().concat(), "ab#ca#dd");
    }

    #[test]
    fn generator_is_deterministic_and_class_correct() {
        let yes = generate(3, PromiseClass::Yes, 42).unwrap();
        assert_eq!(classify(&yes), PromiseClass::Yes);
        assert_eq!(generate(3, PromiseClass::Yes, 42).unwrap(), yes);
        let no = generate(1, PromiseClass::No, 7).unwrap();
        assert_eq!(classify(&no), PromiseClass::No);
        assert_eq!(generate(0, PromiseClass::No, 7), Err(Problem1Error::EmptyInstance));
    }

    #[test]
    fn both_classes_exist_for_every_n() {
        for n in 1..8 {
            let a = "a".repeat(n);
            let base = Instance::new(&a, &a, &"d".repeat(n)).unwrap();
            let expected = if n % 2 == 1 { PromiseClass::Yes } else { PromiseClass::No };
            assert_eq!(classify(&base), expected);
            let flipped = Instance::new(&a, &format!("b{}", &a[1..]), &"d".repeat(n)).unwrap();
            assert_ne!(classify(&flipped), expected);
        }
    }

    #[test]
    fn machine_shape() {
        let m = build_problem1_machine();
        assert_eq!(m.signature().state_count(), 13);
        assert_eq!(m.signature().input().len(), 7);
        assert_eq!(m.signature().stack().len(), 4);
        // Stage I: 1 + 3·4 + 4·4; stage II: 2·(9+4+4) + 2·(12+4+12); stage III: 16.
        assert_eq!(m.rules().len(), 29 + 90 + 16);
        let splits: Vec<f64> = m
            .rules()
            .iter()
            .filter(|r| m.signature().state_name(r.from) == "q0" && m.signature().input().token(r.read) == "#")
            .map(|r| r.weight.re)
            .collect();
        assert_eq!(splits.len(), 16);
        assert!(splits.iter().all(|a| a.abs() == 0.5));
    }

    #[test]
    fn machine_is_partially_well_formed() {
        let report = check_qpag(&build_problem1_machine(), Mode::Partial, 1e-9);
        assert!(report.passed, "{:?}", report.violations);
    }

    #[test]
    fn exhaustive_cap() {
        assert_eq!(instance_count(1), 36);
        assert_eq!(instance_count(3), 46656);
        assert!(matches!(all_instances(4), Err(Problem1Error::TooManyInstances { .. })));
    }

    #[test]
    fn sweep_n1() {
        let r = sweep(1, SweepMode::Exhaustive, None).unwrap();
        assert_eq!(r.checked, 36);
        assert!(r.passed());
        assert!(r.max_deviation < 1e-9);
    }
}
