use std::fmt::Write as _;

use indexmap::IndexMap;
use qmeasure::Error;
use serde::Serialize;
use serde_json::Value;

/// Why a command did not produce a passing report.
#[derive(Debug)]
pub enum Failure {
    /// Unreadable file, malformed JSON, wrong schema or usage. Exit code 2.
    Input(String),
    /// A physical invariant failed. Exit code 1.
    Check(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Check(_) => 1,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Check(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Format(_) | Error::NonFinite => Failure::Input(e.to_string()),
            other => Failure::Check(other.to_string()),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Debug, Serialize)]
pub struct Report {
    pub command: String,
    pub passed: bool,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "IndexMap::is_empty")]
    pub info: IndexMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.to_owned(),
            passed: true,
            checks: Vec::new(),
            info: IndexMap::new(),
            output: None,
            error: None,
        }
    }

    pub fn failed(command: &str, failure: &Failure) -> Self {
        let mut r = Self::new(command);
        r.passed = false;
        r.error = Some(failure.message().to_owned());
        r
    }

    /// Records `value ≤ tol`.
    pub fn check(&mut self, name: &str, value: f64, tol: f64) -> &mut Self {
        let passed = value <= tol;
        self.passed &= passed;
        self.checks.push(Check {
            name: name.to_owned(),
            value,
            tol,
            passed,
        });
        self
    }

    pub fn info(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.info.insert(key.to_owned(), value.into());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let verdict = if self.passed { "PASS" } else { "FAIL" };
        let _ = writeln!(s, "{}: {verdict}", self.command);
        if let Some(e) = &self.error {
            let _ = writeln!(s, "  error: {e}");
        }
        for c in &self.checks {
            let mark = if c.passed { "ok  " } else { "FAIL" };
            let _ = writeln!(
                s,
                "  [{mark}] {} = {:.3e} (tol {:.1e})",
                c.name, c.value, c.tol
            );
        }
        for (k, v) in &self.info {
            let _ = writeln!(s, "  {k}: {v}");
        }
        if let Some(o) = &self.output {
            let _ = writeln!(s, "  wrote {o}");
        }
        s
    }
}
