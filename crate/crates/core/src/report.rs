//! Machine-readable check reports. Status is derived from value, bound and
//! tolerance when a check is built, never set by hand.

use serde::{Deserialize, Serialize};

/// Where the expected value of a check comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Stated in the source construction; `reference` quotes it.
    Published,
    /// Immediate from definitions.
    Elementary,
    /// Computed by an independent oracle.
    Oracle,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    Info,
}

/// What the value is compared against.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Expected {
    AtMost {
        bound: f64,
    },
    AtLeast {
        bound: f64,
    },
    Near {
        target: f64,
    },
    /// Exact equality of printed values, e.g. rationals as "p/q".
    Exact {
        value: String,
    },
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub status: Status,
    pub value: Value,
    pub expected: Expected,
    pub tolerance: Option<f64>,
    pub provenance: Provenance,
    /// Quoted formula or statement when `provenance` is `published`.
    pub reference: Option<String>,
}

impl Check {
    fn new(name: &str, value: Value, expected: Expected, tolerance: Option<f64>, status: Status) -> Self {
        Check {
            name: name.to_string(),
            status,
            value,
            expected,
            tolerance,
            provenance: Provenance::Oracle,
            reference: None,
        }
    }

    fn pass_if(ok: bool) -> Status {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    /// `value <= bound`; NaN fails.
    pub fn at_most(name: &str, value: f64, bound: f64) -> Self {
        Self::new(
            name,
            Value::Number(value),
            Expected::AtMost { bound },
            None,
            Self::pass_if(value <= bound),
        )
    }

    /// `value >= bound`; NaN fails.
    pub fn at_least(name: &str, value: f64, bound: f64) -> Self {
        Self::new(
            name,
            Value::Number(value),
            Expected::AtLeast { bound },
            None,
            Self::pass_if(value >= bound),
        )
    }

    /// `|value - target| <= tol`.
    pub fn near(name: &str, value: f64, target: f64, tol: f64) -> Self {
        Self::new(
            name,
            Value::Number(value),
            Expected::Near { target },
            Some(tol),
            Self::pass_if((value - target).abs() <= tol),
        )
    }

    pub fn exact(name: &str, value: impl ToString, expected: impl ToString) -> Self {
        let (v, e) = (value.to_string(), expected.to_string());
        let status = Self::pass_if(v == e);
        Self::new(name, Value::Text(v), Expected::Exact { value: e }, Some(0.0), status)
    }

    /// Boolean outcome of a compound test, reported as 1 or 0.
    pub fn holds(name: &str, ok: bool) -> Self {
        Self::new(
            name,
            Value::Number(ok as u8 as f64),
            Expected::AtLeast { bound: 1.0 },
            None,
            Self::pass_if(ok),
        )
    }

    /// Recorded, never gated.
    pub fn info(name: &str, value: f64) -> Self {
        Self::new(name, Value::Number(value), Expected::None, None, Status::Info)
    }

    pub fn published(mut self, reference: &str) -> Self {
        self.provenance = Provenance::Published;
        self.reference = Some(reference.to_string());
        self
    }

    pub fn elementary(mut self) -> Self {
        self.provenance = Provenance::Elementary;
        self
    }

    pub fn oracle(mut self) -> Self {
        self.provenance = Provenance::Oracle;
        self
    }

    pub fn passed(&self) -> bool {
        self.status != Status::Fail
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    /// Unix seconds.
    pub started: u64,
    pub finished: u64,
    pub version: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub checks: Vec<Check>,
    pub metadata: Metadata,
}

fn now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

impl CheckReport {
    pub fn new(seed: Option<u64>, config: serde_json::Value) -> Self {
        let t = now();
        CheckReport {
            checks: Vec::new(),
            metadata: Metadata {
                seed,
                config,
                started: t,
                finished: t,
                version: env!("CARGO_PKG_VERSION").to_string(),
            },
        }
    }

    /// A report holding only `checks`, without seed or config.
    pub fn of(checks: Vec<Check>) -> Self {
        let mut r = Self::new(None, serde_json::Value::Null);
        r.checks = checks;
        r
    }

    pub fn push(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn extend(&mut self, other: CheckReport) {
        self.checks.extend(other.checks);
    }

    pub fn finish(&mut self) {
        self.metadata.finished = now();
    }

    /// True iff no non-info check failed.
    pub fn passed(&self) -> bool {
        self.checks.iter().all(Check::passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Every published check carries a reference.
    pub fn well_formed(&self) -> bool {
        self.checks
            .iter()
            .all(|c| c.provenance != Provenance::Published || c.reference.as_deref().is_some_and(|r| !r.is_empty()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }
}

/// The JSON schema shipped with the crate.
pub const SCHEMA: &str = include_str!("../schemas/check_report.schema.json");

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_is_mechanical() {
        assert_eq!(Check::at_most("a", 1.0, 2.0).status, Status::Pass);
        assert_eq!(Check::at_most("a", f64::NAN, 2.0).status, Status::Fail);
        assert_eq!(Check::at_least("a", 1.0, 2.0).status, Status::Fail);
        assert_eq!(Check::near("a", 1.0, 1.1, 0.2).status, Status::Pass);
        assert_eq!(Check::exact("a", "29/3", "29/3").status, Status::Pass);
        assert_eq!(Check::exact("a", "29/3", "6/5").status, Status::Fail);
        assert_eq!(Check::info("a", 3.0).status, Status::Info);
    }

    #[test]
    fn info_does_not_fail_a_report() {
        let mut r = CheckReport::of(vec![Check::info("x", -1.0), Check::holds("y", true).elementary()]);
        assert!(r.passed() && r.well_formed());
        r.push(Check::holds("z", false).published(""));
        assert!(!r.passed() && !r.well_formed());
        assert_eq!(r.failures().len(), 1);
    }

    #[test]
    fn round_trip_json() {
        let r = CheckReport::of(vec![
            Check::near("n", 0.5, 0.5, 1e-12).published("f(1) = R"),
            Check::exact("e", "1", "1").elementary(),
        ]);
        let back: CheckReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back, r);
    }
}
