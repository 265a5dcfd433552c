//! Machine-readable experiment reports: `summary.json` plus CSV detail.

use std::path::Path;

use anyhow::Context;
use heiskern_core::cameron_martin::IdentityCheck;
use heiskern_core::heat_kernel::PairedEstimate;
use heiskern_core::stats::McEstimate;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::config::Tolerance;
use crate::formats::{SkewFormJson, Table};

/// One gated comparison. `allowed` is the largest `|gap|` that passes;
/// for pure flags `lhs`, `rhs` and `gap` carry whatever the test measured.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    pub sigma: f64,
    pub allowed: f64,
    pub pass: bool,
}

impl Check {
    /// `|lhs - rhs| <= allowed`.
    pub fn within(name: impl Into<String>, lhs: f64, rhs: f64, sigma: f64, allowed: f64) -> Self {
        let gap = lhs - rhs;
        Check { name: name.into(), lhs, rhs, gap, sigma, allowed, pass: gap.abs() <= allowed }
    }

    /// A paired gap within `k` standard errors plus `slack`.
    pub fn paired(name: impl Into<String>, c: &IdentityCheck, k: f64, slack: f64) -> Self {
        let allowed = k * c.sigma + slack;
        Check {
            name: name.into(),
            lhs: c.lhs.mean,
            rhs: c.rhs.mean,
            gap: c.gap,
            sigma: c.sigma,
            allowed,
            pass: c.gap.abs() <= allowed,
        }
    }

    pub fn paired_estimate(name: impl Into<String>, p: &PairedEstimate, k: f64, slack: f64) -> Self {
        Check::paired(name, &IdentityCheck::from(*p), k, slack)
    }

    /// An estimate against an exact target.
    pub fn estimate(name: impl Into<String>, e: &McEstimate, target: f64, k: f64, slack: f64) -> Self {
        Check::within(name, e.mean, target, e.std_error, k * e.std_error + slack)
    }

    /// `|lhs / rhs - 1| <= rel`.
    pub fn relative(name: impl Into<String>, lhs: f64, rhs: f64, sigma: f64, rel: f64) -> Self {
        Check::within(name, lhs, rhs, sigma, rel * rhs.abs())
    }

    /// `value <= limit`.
    pub fn at_most(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            lhs: value,
            rhs: limit,
            gap: value - limit,
            sigma: 0.0,
            allowed: 0.0,
            pass: value <= limit,
        }
    }

    /// `value >= limit`.
    pub fn at_least(name: impl Into<String>, value: f64, limit: f64) -> Self {
        Check {
            name: name.into(),
            lhs: value,
            rhs: limit,
            gap: value - limit,
            sigma: 0.0,
            allowed: 0.0,
            pass: value >= limit,
        }
    }

    pub fn flag(name: impl Into<String>, pass: bool) -> Self {
        let v = if pass { 1.0 } else { 0.0 };
        Check { name: name.into(), lhs: v, rhs: 1.0, gap: v - 1.0, sigma: 0.0, allowed: 0.0, pass }
    }
}

/// What an experiment produces before the runner adds provenance.
#[derive(Debug, Default)]
pub struct Outcome {
    pub params: Value,
    pub checks: Vec<Check>,
    pub results: Map<String, Value>,
    pub detail: Table,
    /// Additional CSV files, written next to `detail.csv`.
    pub extra: Vec<(String, Table)>,
}

impl Outcome {
    pub fn new(params: &impl Serialize) -> Self {
        Outcome { params: serde_json::to_value(params).expect("parameters serialise"), ..Default::default() }
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn check(&mut self, c: Check) {
        self.checks.push(c);
    }

    pub fn result(&mut self, key: &str, v: impl Serialize) {
        self.results.insert(key.to_string(), serde_json::to_value(v).expect("results serialise"));
    }

    /// Fold the checks of a nested experiment into this one, prefixed by its name.
    pub fn absorb(&mut self, name: &str, other: Outcome) {
        for mut c in other.checks {
            c.name = format!("{name}.{}", c.name);
            self.checks.push(c);
        }
        let mut nested = Map::new();
        nested.insert("params".into(), other.params);
        nested.insert("results".into(), Value::Object(other.results));
        self.results.insert(name.to_string(), Value::Object(nested));
        self.extra.push((format!("{name}_detail.csv"), other.detail));
        for (file, t) in other.extra {
            self.extra.push((format!("{name}_{file}"), t));
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Timestamp {
    pub started_unix_ms: u128,
    pub wall_time_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub pass: bool,
    pub config_hash: String,
    pub seed: u64,
    pub n_paths: usize,
    pub n_steps: usize,
    pub horizon: f64,
    pub form: SkewFormJson,
    pub tolerance: Tolerance,
    pub params: Value,
    pub checks: Vec<Check>,
    pub results: Map<String, Value>,
    /// Kept last so that everything above it is reproducible byte for byte.
    pub timestamp: Timestamp,
}

impl Summary {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("summary serialises");
        s.push('\n');
        s
    }
}

/// Writes `summary.json`, `detail.csv` and any extra tables into `dir`.
pub fn write(dir: &Path, summary: &Summary, detail: &Table, extra: &[(String, Table)]) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join("summary.json"), summary.to_json()).context("writing summary.json")?;
    detail.write_file(&dir.join("detail.csv"))?;
    for (name, t) in extra {
        t.write_file(&dir.join(name))?;
    }
    Ok(())
}
