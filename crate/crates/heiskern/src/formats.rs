//! Serialised forms of core types and the CSV layouts written by experiments.

use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context};
use heiskern_core::group::SkewForm;
use heiskern_core::linalg::Mat;
use heiskern_core::path::SampledPath;
use heiskern_core::stats::McEstimate;
use heiskern_core::tails::TailReport;
use serde::{Deserialize, Serialize};

/// `{"dim_w": N, "dim_c": d, "omegas": [[row-major N x N], ...]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SkewFormJson {
    pub dim_w: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim_c: Option<usize>,
    pub omegas: Vec<Vec<f64>>,
}

impl From<&SkewForm> for SkewFormJson {
    fn from(f: &SkewForm) -> Self {
        SkewFormJson {
            dim_w: f.dim_w(),
            dim_c: Some(f.dim_c()),
            omegas: f.omegas().iter().map(|m| m.as_slice().to_vec()).collect(),
        }
    }
}

impl SkewFormJson {
    /// Validates skewness and surjectivity.
    pub fn to_form(&self) -> anyhow::Result<SkewForm> {
        if let Some(d) = self.dim_c {
            if d != self.omegas.len() {
                bail!("dim_c is {d} but {} matrices were given", self.omegas.len());
            }
        }
        Ok(SkewForm::from_row_major(self.dim_w, &self.omegas)?)
    }

    pub fn load(path: &Path) -> anyhow::Result<SkewForm> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let json: SkewFormJson = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        json.to_form()
    }
}

/// `{"mean", "std_error", "n_samples", "n_steps", "seed"}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateJson {
    pub mean: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub n_steps: usize,
    pub seed: u64,
}

impl From<McEstimate> for EstimateJson {
    fn from(e: McEstimate) -> Self {
        EstimateJson { mean: e.mean, std_error: e.std_error, n_samples: e.n_samples, n_steps: e.n_steps, seed: e.seed }
    }
}

pub fn matrix_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

/// A rectangular table written as CSV.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Table { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, w: W) -> anyhow::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_file(&self, path: &Path) -> anyhow::Result<()> {
        let f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        self.write(std::io::BufWriter::new(f))
    }
}

/// Shortest round-trip formatting, `NaN`/`inf` spelled out.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// `threshold, p_hat, ci_low, ci_high, bound_value`; an empty bound cell when none applies.
pub fn tail_table(report: &TailReport) -> Table {
    let mut t = Table::new(["threshold", "p_hat", "ci_low", "ci_high", "bound_value"]);
    for p in &report.points {
        t.push(vec![
            num(p.threshold),
            num(p.p_hat),
            num(p.ci_low),
            num(p.ci_high),
            p.bound.map(num).unwrap_or_default(),
        ]);
    }
    t
}

/// `t, x1, ..., xN`, one row per grid node.
pub fn path_table(p: &SampledPath) -> Table {
    let mut header = vec!["t".to_string()];
    header.extend((1..=p.dim()).map(|i| format!("x{i}")));
    let mut t = Table::new(header);
    for k in 0..p.n_nodes() {
        let mut row = vec![num(p.grid().time(k))];
        row.extend(p.row(k).iter().map(|v| num(*v)));
        t.push(row);
    }
    t
}
