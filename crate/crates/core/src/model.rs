//! Machine descriptions, alphabets, stack operations and configurations shared
//! by every engine.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;

use num_complex::Complex64;
use thiserror::Error;

/// Complex transition amplitude.
pub type Amplitude = Complex64;

/// Default tolerance for orthonormality and probability checks.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Amplitudes with magnitude below this are dropped from sparse vectors.
pub const PRUNE_THRESHOLD: f64 = 1e-12;

/// Default cap on the number of configurations an engine may hold.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown {alphabet} symbol `{token}`")]
    UnknownSymbol { alphabet: &'static str, token: String },
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("duplicate {what} `{token}`")]
    Duplicate { what: &'static str, token: String },
    #[error("endmarker `{0}` may not appear inside an input word")]
    EndmarkerInWord(String),
    #[error("cannot pop the bottom symbol")]
    PopOnBottom,
    #[error("{at}: violates `{rule}`: {detail}")]
    Invariant {
        rule: &'static str,
        at: String,
        detail: String,
    },
}

impl ModelError {
    fn invariant(rule: &'static str, at: impl Into<String>, detail: impl Into<String>) -> Self {
        ModelError::Invariant {
            rule,
            at: at.into(),
            detail: detail.into(),
        }
    }
}

pub mod rules {
    //! Names of the structural rules reported by [`super::ModelError::Invariant`].
    pub const DISJOINT_HALTING: &str = "Q_acc ∩ Q_rej = ∅";
    pub const PUSH_ALPHABET: &str = "G ⊆ (Γ\\{Z})⁺";
    pub const NO_POP_ON_BOTTOM: &str = "δ(q,a,Z,q′,pop,D) = 0";
    pub const UNIQUE_TUPLE: &str = "one weight per (q,a,b,q′,b′,D)";
    pub const FINITE_WEIGHT: &str = "weights are finite";
    pub const AMPLITUDE_BOUND: &str = "|δ| ≤ 1";
    pub const DECLARED_PUSHES: &str = "declared G ⊇ inferred G";
    pub const SIGMA_TOTAL: &str = "σ is total on Q \\ (Q_acc ∪ Q_rej)";
    pub const SIGMA_POP_ON_BOTTOM: &str = "σ(q′) = pop ⇒ δ(q,a,Z,q′,D) = 0";
    pub const NONEMPTY_TOKEN: &str = "symbols are nonempty tokens";
    pub const ENDMARKERS_DISTINCT: &str = "¢ ≠ $";
}

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident, $inner:ty) => {
        $(#[$m])*
        #[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub $inner);

        impl $name {
            pub fn index(self) -> usize {
                self.0 as usize
            }
        }
    };
}

id_type!(
    /// Index of a state in its machine's state table.
    StateId,
    u32
);
id_type!(
    /// Index of an input symbol (Σ, endmarkers included).
    InputSym,
    u16
);
id_type!(
    /// Index of a stack symbol (Γ, bottom included).
    StackSym,
    u16
);

/// Interned, ordered set of nonempty text tokens.
#[derive(Clone, Debug, Default)]
pub struct SymbolTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl PartialEq for SymbolTable {
    fn eq(&self, other: &Self) -> bool {
        self.tokens == other.tokens
    }
}

impl SymbolTable {
    pub fn new<S: AsRef<str>>(what: &'static str, tokens: &[S]) -> Result<Self, ModelError> {
        let mut table = SymbolTable::default();
        for t in tokens {
            table.insert(what, t.as_ref())?;
        }
        Ok(table)
    }

    fn insert(&mut self, what: &'static str, token: &str) -> Result<usize, ModelError> {
        if token.is_empty() {
            return Err(ModelError::invariant(rules::NONEMPTY_TOKEN, what, "empty token"));
        }
        if self.index.contains_key(token) {
            return Err(ModelError::Duplicate {
                what,
                token: token.to_string(),
            });
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        Ok(self.tokens.len() - 1)
    }

    fn intern(&mut self, token: &str) -> usize {
        if let Some(&i) = self.index.get(token) {
            return i;
        }
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), self.tokens.len() - 1);
        self.tokens.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, i: usize) -> &str {
        &self.tokens[i]
    }

    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// True when every token is a single character.
    pub fn single_char(&self) -> bool {
        self.tokens.iter().all(|t| t.chars().count() == 1)
    }
}

/// Role a symbol plays in its alphabet.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SymbolRole {
    Ordinary,
    LeftEnd,
    RightEnd,
    Bottom,
}

/// Input alphabet Σ. Ordinary symbols come first, then ¢ and $.
#[derive(Clone, Debug, PartialEq)]
pub struct InputAlphabet {
    table: SymbolTable,
    left: InputSym,
    right: InputSym,
}

impl InputAlphabet {
    pub fn new<S: AsRef<str>>(ordinary: &[S], left: &str, right: &str) -> Result<Self, ModelError> {
        if left == right {
            return Err(ModelError::invariant(rules::ENDMARKERS_DISTINCT, "input alphabet", left));
        }
        let mut table = SymbolTable::new("input symbol", ordinary)?;
        let l = table.insert("input symbol", left)?;
        let r = table.insert("input symbol", right)?;
        Ok(InputAlphabet {
            table,
            left: InputSym(l as u16),
            right: InputSym(r as u16),
        })
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn left(&self) -> InputSym {
        self.left
    }

    pub fn right(&self) -> InputSym {
        self.right
    }

    pub fn role(&self, s: InputSym) -> SymbolRole {
        if s == self.left {
            SymbolRole::LeftEnd
        } else if s == self.right {
            SymbolRole::RightEnd
        } else {
            SymbolRole::Ordinary
        }
    }

    pub fn token(&self, s: InputSym) -> &str {
        self.table.token(s.index())
    }

    /// Token as printed in traces: endmarkers always render as ¢ and $.
    pub fn display(&self, s: InputSym) -> &str {
        match self.role(s) {
            SymbolRole::LeftEnd => "¢",
            SymbolRole::RightEnd => "$",
            _ => self.token(s),
        }
    }

    pub fn lookup(&self, token: &str) -> Option<InputSym> {
        self.table.lookup(token).map(|i| InputSym(i as u16))
    }

    pub fn symbols(&self) -> impl Iterator<Item = InputSym> + '_ {
        (0..self.table.len()).map(|i| InputSym(i as u16))
    }

    pub fn ordinary(&self) -> impl Iterator<Item = InputSym> + '_ {
        self.symbols().filter(|&s| self.role(s) == SymbolRole::Ordinary)
    }

    pub fn table(&self) -> &SymbolTable {
        &self.table
    }
}

/// Stack alphabet Γ. The bottom symbol Z is always index 0.
#[derive(Clone, Debug, PartialEq)]
pub struct StackAlphabet {
    table: SymbolTable,
}

impl StackAlphabet {
    pub fn new<S: AsRef<str>>(ordinary: &[S], bottom: &str) -> Result<Self, ModelError> {
        let mut table = SymbolTable::default();
        table.insert("stack symbol", bottom)?;
        for t in ordinary {
            table.insert("stack symbol", t.as_ref())?;
        }
        Ok(StackAlphabet { table })
    }

    pub fn bottom(&self) -> StackSym {
        StackSym(0)
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }

    pub fn role(&self, s: StackSym) -> SymbolRole {
        if s.0 == 0 {
            SymbolRole::Bottom
        } else {
            SymbolRole::Ordinary
        }
    }

    pub fn token(&self, s: StackSym) -> &str {
        self.table.token(s.index())
    }

    pub fn lookup(&self, token: &str) -> Option<StackSym> {
        self.table.lookup(token).map(|i| StackSym(i as u16))
    }

    pub fn symbols(&self) -> impl Iterator<Item = StackSym> + '_ {
        (0..self.table.len()).map(|i| StackSym(i as u16))
    }

    pub fn ordinary(&self) -> impl Iterator<Item = StackSym> + '_ {
        (1..self.table.len()).map(|i| StackSym(i as u16))
    }

    pub fn table(&self) -> &SymbolTable {
        &self.table
    }

    /// Splits a push string into tokens: whitespace-separated if it contains
    /// whitespace, otherwise one token per character.
    pub fn parse_string(&self, text: &str) -> Result<Vec<StackSym>, ModelError> {
        let parts: Vec<String> = if text.split_whitespace().count() > 1 || !self.table.single_char() {
            text.split_whitespace().map(str::to_string).collect()
        } else {
            text.chars().map(|c| c.to_string()).collect()
        };
        parts
            .iter()
            .map(|p| {
                self.lookup(p).ok_or_else(|| ModelError::UnknownSymbol {
                    alphabet: "stack",
                    token: p.clone(),
                })
            })
            .collect()
    }

    pub fn render(&self, s: &[StackSym]) -> String {
        let sep = if self.table.single_char() { "" } else { " " };
        s.iter().map(|&x| self.token(x)).collect::<Vec<_>>().join(sep)
    }
}

/// Stack operation b′ ∈ G ∪ {ε, pop}.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum StackOp {
    Push(Vec<StackSym>),
    Epsilon,
    Pop,
}

impl StackOp {
    pub fn is_pop(&self) -> bool {
        matches!(self, StackOp::Pop)
    }

    /// Symbols appended to the stack, empty for ε and pop.
    pub fn pushed(&self) -> &[StackSym] {
        match self {
            StackOp::Push(s) => s,
            _ => &[],
        }
    }

    pub fn render(&self, stack: &StackAlphabet) -> String {
        match self {
            StackOp::Push(s) => format!("push {}", stack.render(s)),
            StackOp::Epsilon => "ε".to_string(),
            StackOp::Pop => "pop".to_string(),
        }
    }
}

/// Head move D: 0 stays, 1 moves right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Move {
    Stay,
    Right,
}

impl Move {
    pub fn offset(self) -> usize {
        match self {
            Move::Stay => 0,
            Move::Right => 1,
        }
    }

    pub fn from_digit(d: u8) -> Option<Move> {
        match d {
            0 => Some(Move::Stay),
            1 => Some(Move::Right),
            _ => None,
        }
    }
}

/// Applies `op` to `stack` (bottom at index 0). Returns the new stack and the
/// symbol written to the garbage tape, if any.
pub fn apply_stack_op(stack: &[StackSym], op: &StackOp) -> Result<(Vec<StackSym>, Option<StackSym>), ModelError> {
    let mut out = stack.to_vec();
    let garbage = apply_stack_op_in_place(&mut out, op)?;
    Ok((out, garbage))
}

pub(crate) fn apply_stack_op_in_place(stack: &mut Vec<StackSym>, op: &StackOp) -> Result<Option<StackSym>, ModelError> {
    match op {
        StackOp::Push(s) => {
            stack.extend_from_slice(s);
            Ok(None)
        }
        StackOp::Epsilon => Ok(None),
        StackOp::Pop => {
            if stack.len() <= 1 {
                return Err(ModelError::PopOnBottom);
            }
            Ok(stack.pop())
        }
    }
}

/// True iff `a` and `b` agree to within `tol` in both components.
pub fn amplitude_close(a: Amplitude, b: Amplitude, tol: f64) -> bool {
    let d = a - b;
    d.re.abs() <= tol && d.im.abs() <= tol
}

/// Everything a machine declares apart from its transition table.
#[derive(Clone, Debug, PartialEq)]
pub struct Signature {
    states: SymbolTable,
    input: InputAlphabet,
    stack: StackAlphabet,
    initial: StateId,
    accepting: BTreeSet<StateId>,
    rejecting: BTreeSet<StateId>,
    declared_pushes: Option<BTreeSet<Vec<StackSym>>>,
}

impl Signature {
    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.states.len()).map(|i| StateId(i as u32))
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn state_name(&self, q: StateId) -> &str {
        self.states.token(q.index())
    }

    pub fn state(&self, name: &str) -> Option<StateId> {
        self.states.lookup(name).map(|i| StateId(i as u32))
    }

    pub fn input(&self) -> &InputAlphabet {
        &self.input
    }

    pub fn stack(&self) -> &StackAlphabet {
        &self.stack
    }

    pub fn initial(&self) -> StateId {
        self.initial
    }

    pub fn accepting(&self) -> &BTreeSet<StateId> {
        &self.accepting
    }

    pub fn rejecting(&self) -> &BTreeSet<StateId> {
        &self.rejecting
    }

    pub fn declared_pushes(&self) -> Option<&BTreeSet<Vec<StackSym>>> {
        self.declared_pushes.as_ref()
    }

    pub fn is_accepting(&self, q: StateId) -> bool {
        self.accepting.contains(&q)
    }

    pub fn is_rejecting(&self, q: StateId) -> bool {
        self.rejecting.contains(&q)
    }

    pub fn is_halting(&self, q: StateId) -> bool {
        self.is_accepting(q) || self.is_rejecting(q)
    }

    /// Splits a command-line word into tokens: characters by default, or
    /// comma-separated tokens when `tokens` is set.
    pub fn split_word(text: &str, tokens: bool) -> Vec<String> {
        if tokens {
            text.split(',').filter(|t| !t.is_empty()).map(str::to_string).collect()
        } else {
            text.chars().map(|c| c.to_string()).collect()
        }
    }

    /// Wraps `word` with the endmarkers: index 0 holds ¢, the last cell $.
    pub fn make_tape<S: AsRef<str>>(&self, word: &[S]) -> Result<Tape, ModelError> {
        let mut cells = Vec::with_capacity(word.len() + 2);
        cells.push(self.input.left());
        for t in word {
            let t = t.as_ref();
            let s = self.input.lookup(t).ok_or_else(|| ModelError::UnknownSymbol {
                alphabet: "input",
                token: t.to_string(),
            })?;
            if self.input.role(s) != SymbolRole::Ordinary {
                return Err(ModelError::EndmarkerInWord(t.to_string()));
            }
            cells.push(s);
        }
        cells.push(self.input.right());
        Ok(Tape { cells })
    }

    pub fn render_config(&self, c: &Configuration) -> String {
        format!(
            "({}, {}, {}, {})",
            self.state_name(c.state),
            c.head,
            self.stack.render(&c.stack),
            if c.garbage.is_empty() {
                "ε".to_string()
            } else {
                self.stack.render(&c.garbage)
            }
        )
    }

    fn check(&self) -> Result<(), ModelError> {
        if let Some(q) = self.accepting.intersection(&self.rejecting).next() {
            return Err(ModelError::invariant(
                rules::DISJOINT_HALTING,
                "accepting/rejecting",
                format!("state `{}` is in both sets", self.state_name(*q)),
            ));
        }
        if let Some(g) = &self.declared_pushes {
            for (i, p) in g.iter().enumerate() {
                check_push_payload(p, &format!("push_strings[{i}]"))?;
            }
        }
        Ok(())
    }

    fn check_declared(&self, inferred: &BTreeSet<Vec<StackSym>>) -> Result<(), ModelError> {
        if let Some(declared) = &self.declared_pushes {
            if let Some(missing) = inferred.iter().find(|p| !declared.contains(*p)) {
                return Err(ModelError::invariant(
                    rules::DECLARED_PUSHES,
                    "push_strings",
                    format!("`{}` is used but not declared", self.stack.render(missing)),
                ));
            }
        }
        Ok(())
    }
}

fn check_push_payload(p: &[StackSym], at: &str) -> Result<(), ModelError> {
    if p.is_empty() {
        return Err(ModelError::invariant(rules::PUSH_ALPHABET, at, "empty push string"));
    }
    if p.iter().any(|s| s.0 == 0) {
        return Err(ModelError::invariant(
            rules::PUSH_ALPHABET,
            at,
            "push string contains the bottom symbol",
        ));
    }
    Ok(())
}

/// Input word wrapped in endmarkers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Tape {
    cells: Vec<InputSym>,
}

impl Tape {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    /// Symbol under the head, `None` once the head has moved past $.
    pub fn get(&self, head: usize) -> Option<InputSym> {
        self.cells.get(head).copied()
    }

    pub fn cells(&self) -> &[InputSym] {
        &self.cells
    }
}

/// One entry of δ for the models that carry a per-transition stack operation.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule<W> {
    pub from: StateId,
    pub read: InputSym,
    pub top: StackSym,
    pub to: StateId,
    pub op: StackOp,
    pub mv: Move,
    pub weight: W,
}

pub type QpagRule = Rule<Amplitude>;
pub type PpaRule = Rule<f64>;

/// One entry of a QCPDA's δ; the stack operation comes from σ(to).
#[derive(Clone, Debug, PartialEq)]
pub struct QcpdaRule {
    pub from: StateId,
    pub read: InputSym,
    pub top: StackSym,
    pub to: StateId,
    pub mv: Move,
    pub amp: Amplitude,
}

impl<W> Rule<W> {
    pub fn column(&self) -> (StateId, InputSym, StackSym) {
        (self.from, self.read, self.top)
    }

    fn describe(&self, sig: &Signature) -> String {
        format!(
            "δ({}, {}, {}, {}, {}, {})",
            sig.state_name(self.from),
            sig.input.display(self.read),
            sig.stack.token(self.top),
            sig.state_name(self.to),
            self.op.render(&sig.stack),
            self.mv.offset()
        )
    }
}

fn check_rules<W>(sig: &Signature, rules: &[Rule<W>], finite: impl Fn(&W) -> bool) -> Result<BTreeSet<Vec<StackSym>>, ModelError> {
    let mut seen = HashSet::new();
    let mut inferred = BTreeSet::new();
    for (i, r) in rules.iter().enumerate() {
        let at = || format!("transitions[{i}] {}", r.describe(sig));
        if !finite(&r.weight) {
            return Err(ModelError::invariant(rules::FINITE_WEIGHT, at(), "non-finite weight"));
        }
        match &r.op {
            StackOp::Push(p) => {
                check_push_payload(p, &at())?;
                inferred.insert(p.clone());
            }
            StackOp::Pop if r.top == sig.stack.bottom() => {
                return Err(ModelError::invariant(rules::NO_POP_ON_BOTTOM, at(), "pop on the bottom symbol"));
            }
            _ => {}
        }
        if !seen.insert((r.from, r.read, r.top, r.to, r.op.clone(), r.mv)) {
            return Err(ModelError::invariant(rules::UNIQUE_TUPLE, at(), "tuple appears twice"));
        }
    }
    sig.check_declared(&inferred)?;
    Ok(inferred)
}

/// Quantum pushdown automaton with a garbage tape.
#[derive(Clone, Debug, PartialEq)]
pub struct Qpag {
    sig: Signature,
    rules: Vec<QpagRule>,
}

impl Qpag {
    pub fn new(sig: Signature, rules: Vec<QpagRule>) -> Result<Self, ModelError> {
        sig.check()?;
        check_rules(&sig, &rules, |a| a.re.is_finite() && a.im.is_finite())?;
        for (i, r) in rules.iter().enumerate() {
            if r.weight.norm() > 1.0 + DEFAULT_TOL {
                return Err(ModelError::invariant(
                    rules::AMPLITUDE_BOUND,
                    format!("transitions[{i}] {}", r.describe(&sig)),
                    format!("magnitude {}", r.weight.norm()),
                ));
            }
        }
        Ok(Qpag { sig, rules })
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn rules(&self) -> &[QpagRule] {
        &self.rules
    }

    /// The finite set G of push strings used by δ.
    pub fn push_strings(&self) -> BTreeSet<Vec<StackSym>> {
        self.rules.iter().filter_map(|r| match &r.op {
            StackOp::Push(p) => Some(p.clone()),
            _ => None,
        })
        .collect()
    }
}

/// Probabilistic pushdown automaton; a DPDA when every column is a single
/// probability-one transition.
#[derive(Clone, Debug, PartialEq)]
pub struct Ppa {
    sig: Signature,
    rules: Vec<PpaRule>,
}

impl Ppa {
    pub fn new(sig: Signature, rules: Vec<PpaRule>) -> Result<Self, ModelError> {
        sig.check()?;
        check_rules(&sig, &rules, |p| p.is_finite())?;
        Ok(Ppa { sig, rules })
    }

    /// Builds a PPA without structural validation, so that tables produced
    /// elsewhere can still be audited by [`crate::validate::check_ppa`].
    pub fn new_unchecked(sig: Signature, rules: Vec<PpaRule>) -> Self {
        Ppa { sig, rules }
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn rules(&self) -> &[PpaRule] {
        &self.rules
    }
}

/// Quantum pushdown automaton with a classical stack.
#[derive(Clone, Debug, PartialEq)]
pub struct Qcpda {
    sig: Signature,
    rules: Vec<QcpdaRule>,
    sigma: BTreeMap<StateId, StackOp>,
}

impl Qcpda {
    pub fn new(sig: Signature, rules: Vec<QcpdaRule>, sigma: BTreeMap<StateId, StackOp>) -> Result<Self, ModelError> {
        sig.check()?;
        let mut inferred = BTreeSet::new();
        for q in sig.states() {
            let name = sig.state_name(q);
            match (sig.is_halting(q), sigma.get(&q)) {
                (false, None) => {
                    return Err(ModelError::invariant(rules::SIGMA_TOTAL, format!("sigma[{name}]"), "missing"));
                }
                (true, Some(_)) => {
                    return Err(ModelError::invariant(
                        rules::SIGMA_TOTAL,
                        format!("sigma[{name}]"),
                        "defined on a halting state",
                    ));
                }
                (false, Some(StackOp::Push(p))) => {
                    check_push_payload(p, &format!("sigma[{name}]"))?;
                    inferred.insert(p.clone());
                }
                _ => {}
            }
        }
        let mut seen = HashSet::new();
        for (i, r) in rules.iter().enumerate() {
            let at = || {
                format!(
                    "transitions[{i}] δ({}, {}, {}, {}, {})",
                    sig.state_name(r.from),
                    sig.input.display(r.read),
                    sig.stack.token(r.top),
                    sig.state_name(r.to),
                    r.mv.offset()
                )
            };
            if !(r.amp.re.is_finite() && r.amp.im.is_finite()) {
                return Err(ModelError::invariant(rules::FINITE_WEIGHT, at(), "non-finite amplitude"));
            }
            if r.amp.norm() > 1.0 + DEFAULT_TOL {
                return Err(ModelError::invariant(rules::AMPLITUDE_BOUND, at(), format!("magnitude {}", r.amp.norm())));
            }
            if r.top == sig.stack.bottom() && matches!(sigma.get(&r.to), Some(StackOp::Pop)) && r.amp.norm() > 0.0 {
                return Err(ModelError::invariant(rules::SIGMA_POP_ON_BOTTOM, at(), "target pops on the bottom symbol"));
            }
            if !seen.insert((r.from, r.read, r.top, r.to, r.mv)) {
                return Err(ModelError::invariant(rules::UNIQUE_TUPLE, at(), "tuple appears twice"));
            }
        }
        sig.check_declared(&inferred)?;
        Ok(Qcpda { sig, rules, sigma })
    }

    pub fn signature(&self) -> &Signature {
        &self.sig
    }

    pub fn rules(&self) -> &[QcpdaRule] {
        &self.rules
    }

    pub fn sigma(&self) -> &BTreeMap<StateId, StackOp> {
        &self.sigma
    }
}

/// Basis configuration (q, k, w_s, w_g). The stack includes the bottom symbol
/// at index 0.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Configuration {
    pub state: StateId,
    pub head: usize,
    pub stack: Vec<StackSym>,
    pub garbage: Vec<StackSym>,
}

impl Configuration {
    pub fn initial(q0: StateId) -> Self {
        Configuration {
            state: q0,
            head: 0,
            stack: vec![StackSym(0)],
            garbage: Vec::new(),
        }
    }

    pub fn top(&self) -> StackSym {
        *self.stack.last().expect("stack always holds the bottom symbol")
    }
}

/// Sparse superposition over configurations.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct StateVector {
    entries: BTreeMap<Configuration, Amplitude>,
}

impl StateVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn basis(c: Configuration) -> Self {
        let mut v = Self::new();
        v.entries.insert(c, Amplitude::new(1.0, 0.0));
        v
    }

    pub fn add(&mut self, c: Configuration, amp: Amplitude) {
        *self.entries.entry(c).or_insert(Amplitude::new(0.0, 0.0)) += amp;
    }

    pub fn insert(&mut self, c: Configuration, amp: Amplitude) {
        self.entries.insert(c, amp);
    }

    pub fn get(&self, c: &Configuration) -> Amplitude {
        self.entries.get(c).copied().unwrap_or_default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Configuration, &Amplitude)> {
        self.entries.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.entries.values().map(|a| a.norm_sqr()).sum()
    }

    /// Removes entries with magnitude below `threshold`; returns their mass.
    pub fn prune(&mut self, threshold: f64) -> f64 {
        let mut lost = 0.0;
        self.entries.retain(|_, a| {
            if a.norm() < threshold {
                lost += a.norm_sqr();
                false
            } else {
                true
            }
        });
        lost
    }

    /// ⟨self|other⟩, conjugating `self`.
    pub fn inner(&self, other: &StateVector) -> Amplitude {
        let (small, large, flip) = if self.len() <= other.len() {
            (self, other, false)
        } else {
            (other, self, true)
        };
        let mut acc = Amplitude::new(0.0, 0.0);
        for (c, a) in small.iter() {
            if let Some(b) = large.entries.get(c) {
                acc += if flip { b.conj() * a } else { a.conj() * b };
            }
        }
        acc
    }

    pub fn into_entries(self) -> BTreeMap<Configuration, Amplitude> {
        self.entries
    }
}

impl FromIterator<(Configuration, Amplitude)> for StateVector {
    fn from_iter<T: IntoIterator<Item = (Configuration, Amplitude)>>(iter: T) -> Self {
        let mut v = StateVector::new();
        for (c, a) in iter {
            v.add(c, a);
        }
        v
    }
}

/// Builder by name for stack operations in [`MachineBuilder`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum OpSpec {
    Push(String),
    Epsilon,
    Pop,
}

pub fn push(s: &str) -> OpSpec {
    OpSpec::Push(s.to_string())
}

pub const EPS: OpSpec = OpSpec::Epsilon;
pub const POP: OpSpec = OpSpec::Pop;

struct PendingRule {
    from: String,
    read: String,
    top: String,
    to: String,
    op: Option<OpSpec>,
    mv: Move,
    weight: Amplitude,
}

/// Name-based builder for all three machine kinds. States are registered in
/// order of first mention.
pub struct MachineBuilder {
    input: Result<InputAlphabet, ModelError>,
    stack: Result<StackAlphabet, ModelError>,
    states: SymbolTable,
    initial: Option<String>,
    accepting: Vec<String>,
    rejecting: Vec<String>,
    declared: Option<Vec<String>>,
    sigma: Vec<(String, OpSpec)>,
    rules: Vec<PendingRule>,
}

impl MachineBuilder {
    pub fn new<S: AsRef<str>, T: AsRef<str>>(input: &[S], left: &str, right: &str, stack: &[T], bottom: &str) -> Self {
        MachineBuilder {
            input: InputAlphabet::new(input, left, right),
            stack: StackAlphabet::new(stack, bottom),
            states: SymbolTable::default(),
            initial: None,
            accepting: Vec::new(),
            rejecting: Vec::new(),
            declared: None,
            sigma: Vec::new(),
            rules: Vec::new(),
        }
    }

    pub fn state(&mut self, name: &str) -> &mut Self {
        self.states.intern(name);
        self
    }

    pub fn initial(&mut self, name: &str) -> &mut Self {
        self.state(name);
        self.initial = Some(name.to_string());
        self
    }

    pub fn accept(&mut self, name: &str) -> &mut Self {
        self.state(name);
        self.accepting.push(name.to_string());
        self
    }

    pub fn reject(&mut self, name: &str) -> &mut Self {
        self.state(name);
        self.rejecting.push(name.to_string());
        self
    }

    pub fn declare_pushes(&mut self, strings: &[&str]) -> &mut Self {
        self.declared = Some(strings.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn sigma(&mut self, state: &str, op: OpSpec) -> &mut Self {
        self.state(state);
        self.sigma.push((state.to_string(), op));
        self
    }

    #[allow(clippy::too_many_arguments)]
    fn pending(&mut self, from: &str, read: &str, top: &str, to: &str, op: Option<OpSpec>, mv: u8, weight: Amplitude) -> &mut Self {
        self.state(from);
        self.state(to);
        self.rules.push(PendingRule {
            from: from.to_string(),
            read: read.to_string(),
            top: top.to_string(),
            to: to.to_string(),
            op,
            mv: if mv == 0 { Move::Stay } else { Move::Right },
            weight,
        });
        self
    }

    /// QPAG transition with a complex amplitude.
    #[allow(clippy::too_many_arguments)]
    pub fn amp(&mut self, from: &str, read: &str, top: &str, to: &str, op: OpSpec, mv: u8, amp: Amplitude) -> &mut Self {
        self.pending(from, read, top, to, Some(op), mv, amp)
    }

    /// QPAG transition with a real amplitude.
    #[allow(clippy::too_many_arguments)]
    pub fn rule(&mut self, from: &str, read: &str, top: &str, to: &str, op: OpSpec, mv: u8, amp: f64) -> &mut Self {
        self.pending(from, read, top, to, Some(op), mv, Amplitude::new(amp, 0.0))
    }

    /// PPA transition.
    #[allow(clippy::too_many_arguments)]
    pub fn prob(&mut self, from: &str, read: &str, top: &str, to: &str, op: OpSpec, mv: u8, p: f64) -> &mut Self {
        self.pending(from, read, top, to, Some(op), mv, Amplitude::new(p, 0.0))
    }

    /// QCPDA transition (no stack operation; σ of the target decides it).
    pub fn qc(&mut self, from: &str, read: &str, top: &str, to: &str, mv: u8, amp: Amplitude) -> &mut Self {
        self.pending(from, read, top, to, None, mv, amp)
    }

    fn signature(&self) -> Result<Signature, ModelError> {
        let input = self.input.clone()?;
        let stack = self.stack.clone()?;
        let lookup = |n: &String| -> Result<StateId, ModelError> {
            self.states
                .lookup(n)
                .map(|i| StateId(i as u32))
                .ok_or_else(|| ModelError::UnknownState(n.clone()))
        };
        let initial = match &self.initial {
            Some(n) => lookup(n)?,
            None => return Err(ModelError::UnknownState("<initial state not set>".into())),
        };
        let declared = match &self.declared {
            Some(d) => Some(d.iter().map(|s| stack.parse_string(s)).collect::<Result<BTreeSet<_>, _>>()?),
            None => None,
        };
        Ok(Signature {
            states: self.states.clone(),
            input,
            stack,
            initial,
            accepting: self.accepting.iter().map(lookup).collect::<Result<_, _>>()?,
            rejecting: self.rejecting.iter().map(lookup).collect::<Result<_, _>>()?,
            declared_pushes: declared,
        })
    }

    fn resolve_op(stack: &StackAlphabet, op: &OpSpec) -> Result<StackOp, ModelError> {
        Ok(match op {
            OpSpec::Push(s) => StackOp::Push(stack.parse_string(s)?),
            OpSpec::Epsilon => StackOp::Epsilon,
            OpSpec::Pop => StackOp::Pop,
        })
    }

    fn resolve<W>(&self, sig: &Signature, weight: impl Fn(Amplitude) -> W) -> Result<Vec<Rule<W>>, ModelError> {
        self.rules
            .iter()
            .map(|p| {
                let (from, read, top, to) = resolve_names(sig, &p.from, &p.read, &p.top, &p.to)?;
                let op = match &p.op {
                    Some(op) => Self::resolve_op(&sig.stack, op)?,
                    None => StackOp::Epsilon,
                };
                Ok(Rule {
                    from,
                    read,
                    top,
                    to,
                    op,
                    mv: p.mv,
                    weight: weight(p.weight),
                })
            })
            .collect()
    }

    pub fn build_qpag(&self) -> Result<Qpag, ModelError> {
        let sig = self.signature()?;
        let rules = self.resolve(&sig, |a| a)?;
        Qpag::new(sig, rules)
    }

    pub fn build_ppa(&self) -> Result<Ppa, ModelError> {
        let sig = self.signature()?;
        let rules = self.resolve(&sig, |a| a.re)?;
        Ppa::new(sig, rules)
    }

    pub fn build_ppa_unchecked(&self) -> Result<Ppa, ModelError> {
        let sig = self.signature()?;
        let rules = self.resolve(&sig, |a| a.re)?;
        Ok(Ppa::new_unchecked(sig, rules))
    }

    pub fn build_qcpda(&self) -> Result<Qcpda, ModelError> {
        let sig = self.signature()?;
        let rules = self
            .resolve(&sig, |a| a)?
            .into_iter()
            .map(|r| QcpdaRule {
                from: r.from,
                read: r.read,
                top: r.top,
                to: r.to,
                mv: r.mv,
                amp: r.weight,
            })
            .collect();
        let mut sigma = BTreeMap::new();
        for (name, op) in &self.sigma {
            let q = sig.state(name).ok_or_else(|| ModelError::UnknownState(name.clone()))?;
            sigma.insert(q, Self::resolve_op(&sig.stack, op)?);
        }
        Qcpda::new(sig, rules, sigma)
    }
}

pub(crate) fn resolve_names(
    sig: &Signature,
    from: &str,
    read: &str,
    top: &str,
    to: &str,
) -> Result<(StateId, InputSym, StackSym, StateId), ModelError> {
    let state = |n: &str| sig.state(n).ok_or_else(|| ModelError::UnknownState(n.to_string()));
    let read = sig.input.lookup(read).ok_or_else(|| ModelError::UnknownSymbol {
        alphabet: "input",
        token: read.to_string(),
    })?;
    let top = sig.stack.lookup(top).ok_or_else(|| ModelError::UnknownSymbol {
        alphabet: "stack",
        token: top.to_string(),
    })?;
    Ok((state(from)?, read, top, state(to)?))
}

/// Assembles a signature from already-resolved parts; used by the file
/// loader and the compiler.
pub(crate) fn signature_from_parts(
    states: &[String],
    input: InputAlphabet,
    stack: StackAlphabet,
    initial: &str,
    accepting: &[String],
    rejecting: &[String],
    declared: Option<BTreeSet<Vec<StackSym>>>,
) -> Result<Signature, ModelError> {
    let states = SymbolTable::new("state", states)?;
    let lookup = |n: &String| -> Result<StateId, ModelError> {
        states
            .lookup(n)
            .map(|i| StateId(i as u32))
            .ok_or_else(|| ModelError::UnknownState(n.clone()))
    };
    let initial = lookup(&initial.to_string())?;
    Ok(Signature {
        initial,
        accepting: accepting.iter().map(lookup).collect::<Result<_, _>>()?,
        rejecting: rejecting.iter().map(lookup).collect::<Result<_, _>>()?,
        states,
        input,
        stack,
        declared_pushes: declared,
    })
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.offset())
    }
}
