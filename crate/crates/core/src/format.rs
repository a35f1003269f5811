//! JSON machine files. See `docs/format.md` for the schema.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    resolve_names, signature_from_parts, Amplitude, InputAlphabet, ModelError, Move, Ppa, PpaRule, Qcpda, QcpdaRule,
    Qpag, QpagRule, Signature, StackAlphabet, StackOp,
};

#[derive(Debug, Error, PartialEq)]
pub enum FormatError {
    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: usize, column: usize, message: String },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("invariant error: {0}")]
    Invariant(ModelError),
}

impl FormatError {
    /// The violated rule, for invariant errors that name one.
    pub fn rule(&self) -> Option<&'static str> {
        match self {
            FormatError::Invariant(ModelError::Invariant { rule, .. }) => Some(rule),
            _ => None,
        }
    }
}

impl From<ModelError> for FormatError {
    fn from(e: ModelError) -> Self {
        match e {
            ModelError::UnknownSymbol { .. } | ModelError::UnknownState(_) => FormatError::Schema(e.to_string()),
            other => FormatError::Invariant(other),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Qpag,
    Qcpda,
    Ppa,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase", deny_unknown_fields)]
pub enum OpJson {
    Push { string: String },
    Epsilon,
    Pop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransitionJson {
    pub from: String,
    pub read: String,
    pub top: String,
    pub to: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub op: Option<OpJson>,
    #[serde(rename = "move")]
    pub mv: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amp: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prob: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MachineFile {
    pub kind: Kind,
    pub states: Vec<String>,
    pub input_alphabet: Vec<String>,
    pub left_endmarker: String,
    pub right_endmarker: String,
    pub stack_alphabet: Vec<String>,
    pub bottom: String,
    pub initial: String,
    pub accepting: Vec<String>,
    pub rejecting: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub push_strings: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<BTreeMap<String, OpJson>>,
    pub transitions: Vec<TransitionJson>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Machine {
    Qpag(Qpag),
    Qcpda(Qcpda),
    Ppa(Ppa),
}

impl Machine {
    pub fn kind(&self) -> Kind {
        match self {
            Machine::Qpag(_) => Kind::Qpag,
            Machine::Qcpda(_) => Kind::Qcpda,
            Machine::Ppa(_) => Kind::Ppa,
        }
    }

    pub fn signature(&self) -> &Signature {
        match self {
            Machine::Qpag(m) => m.signature(),
            Machine::Qcpda(m) => m.signature(),
            Machine::Ppa(m) => m.signature(),
        }
    }
}

impl From<Qpag> for Machine {
    fn from(m: Qpag) -> Self {
        Machine::Qpag(m)
    }
}

impl From<Qcpda> for Machine {
    fn from(m: Qcpda) -> Self {
        Machine::Qcpda(m)
    }
}

impl From<Ppa> for Machine {
    fn from(m: Ppa) -> Self {
        Machine::Ppa(m)
    }
}

fn op_from_json(stack: &StackAlphabet, op: &OpJson) -> Result<StackOp, ModelError> {
    Ok(match op {
        OpJson::Push { string } => StackOp::Push(stack.parse_string(string)?),
        OpJson::Epsilon => StackOp::Epsilon,
        OpJson::Pop => StackOp::Pop,
    })
}

fn op_to_json(stack: &StackAlphabet, op: &StackOp) -> OpJson {
    match op {
        StackOp::Push(s) => OpJson::Push { string: stack.render(s) },
        StackOp::Epsilon => OpJson::Epsilon,
        StackOp::Pop => OpJson::Pop,
    }
}

fn schema(at: String, what: &str) -> FormatError {
    FormatError::Schema(format!("{at}: {what}"))
}

/// Parses a machine document. Syntax errors carry a line and column, shape
/// errors the offending field, and structural violations the rule name.
pub fn parse_machine(text: &str) -> Result<Machine, FormatError> {
    let value: serde_json::Value = serde_json::from_str(text).map_err(|e| FormatError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let file: MachineFile = serde_json::from_value(value).map_err(|e| FormatError::Schema(e.to_string()))?;
    from_file(&file)
}

pub fn from_file(f: &MachineFile) -> Result<Machine, FormatError> {
    let input = InputAlphabet::new(&f.input_alphabet, &f.left_endmarker, &f.right_endmarker)?;
    let stack = StackAlphabet::new(&f.stack_alphabet, &f.bottom)?;
    let declared = match &f.push_strings {
        Some(v) => Some(v.iter().map(|s| stack.parse_string(s)).collect::<Result<_, _>>()?),
        None => None,
    };
    let sig = signature_from_parts(&f.states, input, stack, &f.initial, &f.accepting, &f.rejecting, declared)?;
    if f.kind != Kind::Qcpda && f.sigma.is_some() {
        return Err(schema("sigma".into(), "only allowed for kind \"qcpda\""));
    }
    let mv = |i: usize, t: &TransitionJson| Move::from_digit(t.mv).ok_or_else(|| schema(format!("transitions[{i}].move"), "must be 0 or 1"));
    match f.kind {
        Kind::Qpag | Kind::Ppa => {
            let mut amps = Vec::new();
            let mut probs = Vec::new();
            for (i, t) in f.transitions.iter().enumerate() {
                let (from, read, top, to) = resolve_names(&sig, &t.from, &t.read, &t.top, &t.to)?;
                let op = t.op.as_ref().ok_or_else(|| schema(format!("transitions[{i}]"), "missing field `op`"))?;
                let op = op_from_json(sig.stack(), op)?;
                let mv = mv(i, t)?;
                if f.kind == Kind::Qpag {
                    if t.prob.is_some() {
                        return Err(schema(format!("transitions[{i}]"), "`prob` is not allowed in a qpag"));
                    }
                    let [re, im] = t.amp.ok_or_else(|| schema(format!("transitions[{i}]"), "missing field `amp`"))?;
                    amps.push(QpagRule {
                        from,
                        read,
                        top,
                        to,
                        op,
                        mv,
                        weight: Amplitude::new(re, im),
                    });
                } else {
                    if t.amp.is_some() {
                        return Err(schema(format!("transitions[{i}]"), "`amp` is not allowed in a ppa"));
                    }
                    let p = t.prob.ok_or_else(|| schema(format!("transitions[{i}]"), "missing field `prob`"))?;
                    probs.push(PpaRule {
                        from,
                        read,
                        top,
                        to,
                        op,
                        mv,
                        weight: p,
                    });
                }
            }
            Ok(if f.kind == Kind::Qpag {
                Machine::Qpag(Qpag::new(sig, amps)?)
            } else {
                Machine::Ppa(Ppa::new(sig, probs)?)
            })
        }
        Kind::Qcpda => {
            let mut rules = Vec::new();
            for (i, t) in f.transitions.iter().enumerate() {
                let (from, read, top, to) = resolve_names(&sig, &t.from, &t.read, &t.top, &t.to)?;
                if t.op.is_some() || t.prob.is_some() {
                    return Err(schema(format!("transitions[{i}]"), "qcpda transitions carry only `amp`"));
                }
                let [re, im] = t.amp.ok_or_else(|| schema(format!("transitions[{i}]"), "missing field `amp`"))?;
                rules.push(QcpdaRule {
                    from,
                    read,
                    top,
                    to,
                    mv: mv(i, t)?,
                    amp: Amplitude::new(re, im),
                });
            }
            let mut sigma = BTreeMap::new();
            for (name, op) in f.sigma.as_ref().ok_or_else(|| schema("sigma".into(), "required for kind \"qcpda\""))? {
                let q = sig.state(name).ok_or_else(|| ModelError::UnknownState(name.clone()))?;
                sigma.insert(q, op_from_json(sig.stack(), op)?);
            }
            Ok(Machine::Qcpda(Qcpda::new(sig, rules, sigma)?))
        }
    }
}

fn header(kind: Kind, sig: &Signature) -> MachineFile {
    let names = |set: &std::collections::BTreeSet<_>| set.iter().map(|&q| sig.state_name(q).to_string()).collect();
    let input = sig.input();
    let stack = sig.stack();
    MachineFile {
        kind,
        states: sig.states().map(|q| sig.state_name(q).to_string()).collect(),
        input_alphabet: input.ordinary().map(|s| input.token(s).to_string()).collect(),
        left_endmarker: input.token(input.left()).to_string(),
        right_endmarker: input.token(input.right()).to_string(),
        stack_alphabet: stack.ordinary().map(|s| stack.token(s).to_string()).collect(),
        bottom: stack.token(stack.bottom()).to_string(),
        initial: sig.state_name(sig.initial()).to_string(),
        accepting: names(sig.accepting()),
        rejecting: names(sig.rejecting()),
        push_strings: sig.declared_pushes().map(|d| d.iter().map(|s| stack.render(s)).collect()),
        sigma: None,
        transitions: Vec::new(),
    }
}

pub fn to_file(m: &Machine) -> MachineFile {
    let sig = m.signature();
    let mut f = header(m.kind(), sig);
    let input = sig.input();
    let stack = sig.stack();
    let base = |from, read, top, to, mv: Move| TransitionJson {
        from: sig.state_name(from).to_string(),
        read: input.token(read).to_string(),
        top: stack.token(top).to_string(),
        to: sig.state_name(to).to_string(),
        op: None,
        mv: mv.offset() as u8,
        amp: None,
        prob: None,
    };
    match m {
        Machine::Qpag(q) => {
            for r in q.rules() {
                f.transitions.push(TransitionJson {
                    op: Some(op_to_json(stack, &r.op)),
                    amp: Some([r.weight.re, r.weight.im]),
                    ..base(r.from, r.read, r.top, r.to, r.mv)
                });
            }
        }
        Machine::Ppa(p) => {
            for r in p.rules() {
                f.transitions.push(TransitionJson {
                    op: Some(op_to_json(stack, &r.op)),
                    prob: Some(r.weight),
                    ..base(r.from, r.read, r.top, r.to, r.mv)
                });
            }
        }
        Machine::Qcpda(c) => {
            f.sigma = Some(c.sigma().iter().map(|(&q, op)| (sig.state_name(q).to_string(), op_to_json(stack, op))).collect());
            for r in c.rules() {
                f.transitions.push(TransitionJson {
                    amp: Some([r.amp.re, r.amp.im]),
                    ..base(r.from, r.read, r.top, r.to, r.mv)
                });
            }
        }
    }
    f
}

/// Pretty-printed JSON with a trailing newline. Floats use the shortest
/// representation that reads back to the same value.
pub fn serialize_machine(m: &Machine) -> String {
    let mut s = serde_json::to_string_pretty(&to_file(m)).expect("machine files always serialize");
    s.push('\n');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rules;
    use crate::problem1::build_problem1_machine;

    #[test]
    fn problem1_round_trip() {
        let m = Machine::Qpag(build_problem1_machine());
        let text = serialize_machine(&m);
        let back = parse_machine(&text).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.signature().state_count(), 13);
        assert_eq!(serialize_machine(&back), text);
    }

    const SMALL: &str = r#"{
        "kind": "qpag", "states": ["q0", "acc", "rej"],
        "input_alphabet": ["a"], "left_endmarker": "¢", "right_endmarker": "$",
        "stack_alphabet": ["x"], "bottom": "Z",
        "initial": "q0", "accepting": ["acc"], "rejecting": ["rej"],
        "transitions": [
            {"from": "q0", "read": "¢", "top": "Z", "to": "acc", "op": {"op": "push", "string": "x"}, "move": 1, "amp": [1, 0]}
        ]
    }"#;

    #[test]
    fn small_machine_parses() {
        let Machine::Qpag(m) = parse_machine(SMALL).unwrap() else { panic!() };
        assert_eq!(m.rules().len(), 1);
    }

    #[test]
    fn syntax_error_has_position() {
        let e = parse_machine("{\n  \"kind\": ,\n}").unwrap_err();
        assert!(matches!(e, FormatError::Parse { line: 2, .. }), "{e:?}");
    }

    #[test]
    fn extra_and_missing_fields_are_schema_errors() {
        let extra = SMALL.replacen("\"kind\"", "\"color\": 1, \"kind\"", 1);
        assert!(matches!(parse_machine(&extra), Err(FormatError::Schema(_))));
        let missing = SMALL.replace("\"bottom\": \"Z\",", "");
        assert!(matches!(parse_machine(&missing), Err(FormatError::Schema(_))));
        let no_amp = SMALL.replace(", \"amp\": [1, 0]", "");
        assert!(matches!(parse_machine(&no_amp), Err(FormatError::Schema(_))));
    }

    #[test]
    fn overlapping_halting_sets() {
        let bad = SMALL.replace("\"rejecting\": [\"rej\"]", "\"rejecting\": [\"acc\"]");
        let e = parse_machine(&bad).unwrap_err();
        assert_eq!(e.rule(), Some(rules::DISJOINT_HALTING));
        assert!(e.to_string().contains("Q_acc ∩ Q_rej = ∅"));
    }

    #[test]
    fn push_of_bottom_names_the_rule() {
        let bad = SMALL.replace("\"string\": \"x\"", "\"string\": \"xZ\"");
        let e = parse_machine(&bad).unwrap_err();
        assert_eq!(e.rule(), Some(rules::PUSH_ALPHABET));
    }

    #[test]
    fn qcpda_and_ppa_round_trip() {
        use crate::model::{push, MachineBuilder, EPS};
        let mut b = MachineBuilder::new(&["a", "bb"], "<", ">", &["x", "yy"], "Z");
        b.initial("q0").accept("acc").reject("rej");
        b.sigma("q0", EPS).sigma("p", push("x yy"));
        b.qc("q0", "<", "Z", "p", 1, Amplitude::new(0.6, 0.0))
            .qc("q0", "<", "Z", "q0", 1, Amplitude::new(0.0, -0.8))
            .qc("p", "bb", "yy", "acc", 0, Amplitude::new(1.0 / 3f64.sqrt(), 0.1));
        let m = Machine::Qcpda(b.build_qcpda().unwrap());
        let text = serialize_machine(&m);
        assert_eq!(parse_machine(&text).unwrap(), m);

        let m = Machine::Ppa(crate::ppa::build_wcwr_dpda());
        assert_eq!(parse_machine(&serialize_machine(&m)).unwrap(), m);
    }
}
