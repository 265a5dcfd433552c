//! Experiment configuration: a JSON file, overridden by command-line flags.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use heiskern_core::group::SkewForm;
use heiskern_core::mc::McConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::formats::SkewFormJson;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FormSpec {
    /// The Heisenberg group with `ω = a (x1 y2 - x2 y1)`.
    H3 {
        #[serde(default = "one")]
        a: f64,
    },
    /// `R^{2k} x R` with `ω = Σ a_i (x_{2i} y_{2i+1} - x_{2i+1} y_{2i})`.
    Blocks {
        weights: Vec<f64>,
    },
    /// The free step-two group on `n` generators.
    Free {
        n: usize,
    },
    Inline(SkewFormJson),
    File {
        path: PathBuf,
    },
}

impl Default for FormSpec {
    fn default() -> Self {
        FormSpec::H3 { a: 1.0 }
    }
}

impl FormSpec {
    pub fn build(&self) -> anyhow::Result<SkewForm> {
        Ok(match self {
            FormSpec::H3 { a } => SkewForm::block_diagonal(&[*a]),
            FormSpec::Blocks { weights } => {
                if weights.is_empty() {
                    bail!("block form needs at least one weight");
                }
                SkewForm::block_diagonal(weights)
            }
            FormSpec::Free { n } => {
                if *n < 2 {
                    bail!("the free step-two group needs n >= 2");
                }
                SkewForm::free_step_two(*n)
            }
            FormSpec::Inline(json) => json.to_form()?,
            FormSpec::File { path } => SkewFormJson::load(path)?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl Default for McSettings {
    fn default() -> Self {
        let d = McConfig::default();
        McSettings { n_paths: d.n_paths, n_steps: d.n_steps, seed: d.seed }
    }
}

impl From<McSettings> for McConfig {
    fn from(m: McSettings) -> Self {
        McConfig::new(m.n_paths, m.n_steps, m.seed)
    }
}

/// Tolerance policy shared by all experiments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerance {
    /// Standard errors allowed in Monte Carlo comparisons.
    pub k_sigma: f64,
    /// Relative tolerance for moment and scaling comparisons.
    pub relative: f64,
    /// Relative tolerance for density comparisons against the oracle.
    pub density_relative: f64,
    /// Significance level of each KS test.
    pub ks_level: f64,
    /// Absolute tolerance for exact algebraic identities.
    pub algebraic: f64,
    /// Least acceptable observed convergence order of difference quotients.
    pub min_order: f64,
}

impl Default for Tolerance {
    fn default() -> Self {
        Tolerance {
            k_sigma: 3.0,
            relative: 0.02,
            density_relative: 0.05,
            ks_level: 1e-3,
            algebraic: 1e-10,
            min_order: 1.9,
        }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub experiment: Option<String>,
    #[serde(default)]
    pub form: FormSpec,
    #[serde(default = "one")]
    pub horizon: f64,
    #[serde(default)]
    pub mc: McSettings,
    /// Experiment-specific parameters; for `all`, one object per experiment name.
    #[serde(default)]
    pub params: serde_json::Map<String, serde_json::Value>,
    #[serde(default)]
    pub tolerance: Tolerance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: None,
            form: FormSpec::default(),
            horizon: 1.0,
            mc: McSettings::default(),
            params: serde_json::Map::new(),
            tolerance: Tolerance::default(),
            out: None,
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub n_paths: Option<usize>,
    pub n_steps: Option<usize>,
    pub out: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.mc.seed = s;
        }
        if let Some(n) = o.n_paths {
            self.mc.n_paths = n;
        }
        if let Some(n) = o.n_steps {
            self.mc.n_steps = n;
        }
        if let Some(p) = &o.out {
            self.out = Some(p.clone());
        }
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            bail!("horizon must be positive");
        }
        if self.mc.n_paths < 2 {
            bail!("need at least two paths");
        }
        if self.mc.n_steps < 2 {
            bail!("need at least two time steps");
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON of everything that affects numbers;
    /// the output directory is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        let bytes = serde_json::to_vec(&c).expect("config serialises");
        hex::encode(Sha256::digest(bytes))
    }

    /// Parameters of experiment `name`: the whole `params` object, or the
    /// entry `params[name]` when running under `all`.
    pub fn params_for(&self, name: &str, nested: bool) -> serde_json::Value {
        if nested {
            self.params.get(name).cloned().unwrap_or_else(|| serde_json::Value::Object(Default::default()))
        } else {
            serde_json::Value::Object(self.params.clone())
        }
    }
}
