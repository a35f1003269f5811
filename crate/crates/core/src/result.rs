//! Run results and the number formatting shared by every JSON report.

use serde::{Serialize, Serializer};

use crate::model::Amplitude;

/// Rounds to 12 significant digits so that reports are byte-stable.
pub fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { 0.0 } else { x };
    }
    let r: f64 = format!("{x:.11e}").parse().unwrap_or(x);
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

pub fn ser_f64<S: Serializer>(x: &f64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_f64(round_sig(*x))
}

pub fn ser_amp<S: Serializer>(a: &Amplitude, s: S) -> Result<S::Ok, S::Error> {
    [round_sig(a.re), round_sig(a.im)].serialize(s)
}

/// One survivor in a trace snapshot.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct Survivor {
    pub state: String,
    pub head: usize,
    pub stack: String,
    pub garbage: String,
    #[serde(serialize_with = "ser_amp")]
    pub amp: Amplitude,
}

/// Post-measurement view of one step.
#[derive(Clone, Debug, Serialize, PartialEq)]
pub struct StepSnapshot {
    pub step: usize,
    pub survivors: Vec<Survivor>,
    #[serde(serialize_with = "ser_f64")]
    pub p_acc_delta: f64,
    #[serde(serialize_with = "ser_f64")]
    pub p_rej_delta: f64,
}

/// Outcome probabilities of a run. `p_acc + p_rej + p_non + truncation_loss`
/// is 1 for well-formed machines.
#[derive(Clone, Debug, Default, Serialize, PartialEq)]
pub struct RunResult {
    #[serde(serialize_with = "ser_f64")]
    pub p_acc: f64,
    #[serde(serialize_with = "ser_f64")]
    pub p_rej: f64,
    #[serde(serialize_with = "ser_f64")]
    pub p_non: f64,
    #[serde(serialize_with = "ser_f64")]
    pub truncation_loss: f64,
    pub steps: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<StepSnapshot>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl RunResult {
    pub fn total(&self) -> f64 {
        self.p_acc + self.p_rej + self.p_non + self.truncation_loss
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rounding_is_twelve_significant_digits() {
        assert_eq!(round_sig(0.1 + 0.2), 0.3);
        assert_eq!(round_sig(1.0 - 1e-15), 1.0);
        assert_eq!(round_sig(123456.7890123456), 123456.789012);
        assert_eq!(round_sig(-0.0), 0.0);
        assert_eq!(round_sig(2.5e-13), 2.5e-13);
    }

    #[test]
    fn run_result_json_shape() {
        let r = RunResult {
            p_acc: 1.0 - 1e-16,
            steps: 7,
            ..Default::default()
        };
        let j = serde_json::to_string(&r).unwrap();
        assert_eq!(j, r#"{"p_acc":1.0,"p_rej":0.0,"p_non":0.0,"truncation_loss":0.0,"steps":7}"#);
    }
}
