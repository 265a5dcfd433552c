//! The experiment registry. Every experiment reads its typed parameters from
//! the config, runs on the configured form and returns an [`Outcome`].

use anyhow::Context as _;
use heiskern_core::group::SkewForm;
use heiskern_core::mc::McConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::config::Tolerance;
use crate::exec::Pool;
use crate::report::Outcome;

pub mod all;
pub mod fernique;
pub mod gamma;
pub mod heat_kernel;
pub mod ibp;
pub mod quasi_invariance;
pub mod spectral;
pub mod tails;
pub mod yor;

/// Everything an experiment needs.
pub struct Context<'a> {
    pub exec: &'a Pool,
    pub form: SkewForm,
    pub horizon: f64,
    pub mc: McConfig,
    pub tol: Tolerance,
    pub params: Value,
}

impl Context<'_> {
    /// Typed parameters; absent fields take their defaults.
    pub fn params<P: DeserializeOwned + Default>(&self, experiment: &str) -> anyhow::Result<P> {
        match &self.params {
            Value::Null => Ok(P::default()),
            Value::Object(m) if m.is_empty() => Ok(P::default()),
            v => serde_json::from_value(v.clone()).with_context(|| format!("parameters of {experiment}")),
        }
    }

    /// A seed for a derived computation, distinct from the main one.
    pub fn derived_seed(&self, salt: u64) -> u64 {
        self.mc.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
    }

    /// The main budget with a different path count.
    pub fn with_paths(&self, n: usize) -> McConfig {
        McConfig { n_paths: n, ..self.mc }
    }
}

pub type RunFn = fn(&Context) -> anyhow::Result<Outcome>;

pub struct Experiment {
    pub name: &'static str,
    /// What is being tested, in a few words.
    pub tests: &'static str,
    pub run: RunFn,
    pub defaults: fn() -> Value,
}

fn defaults_of<P: Default + Serialize>() -> Value {
    serde_json::to_value(P::default()).expect("defaults serialise")
}

pub const EXPERIMENTS: &[Experiment] = &[
    Experiment {
        name: "yor",
        tests: "Yor's identity for Ito quadratic functionals, Ito isometry",
        run: yor::run,
        defaults: defaults_of::<yor::Params>,
    },
    Experiment {
        name: "heat-kernel",
        tests: "J0 heat-kernel formula: normalisation, characteristic function, scaling, inversion invariance",
        run: heat_kernel::run,
        defaults: defaults_of::<heat_kernel::Params>,
    },
    Experiment {
        name: "gamma",
        tests: "Heisenberg density gamma_T(x, c) against Fourier inversion",
        run: gamma::run,
        defaults: defaults_of::<gamma::Params>,
    },
    Experiment {
        name: "quasi-invariance",
        tests: "Quasi-invariance of the heat kernel under right and left translation",
        run: quasi_invariance::run,
        defaults: defaults_of::<quasi_invariance::Params>,
    },
    Experiment {
        name: "ibp",
        tests: "Integration by parts for the invariant vector fields, derivative rules",
        run: ibp::run,
        defaults: defaults_of::<ibp::Params>,
    },
    Experiment {
        name: "tails",
        tests: "Small-ball and tail estimates for rho_T and its inverse",
        run: tails::run,
        defaults: defaults_of::<tails::Params>,
    },
    Experiment {
        name: "fernique",
        tests: "Fernique-type exponential integrability of (B_T, Z_T)",
        run: fernique::run,
        defaults: defaults_of::<fernique::Params>,
    },
    Experiment {
        name: "spectral",
        tests: "Ground state and commutation of the harmonic-oscillator pair L, S",
        run: spectral::run,
        defaults: defaults_of::<spectral::Params>,
    },
    Experiment { name: "all", tests: "Every experiment above in sequence", run: all::run, defaults: all::defaults },
];

pub fn find(name: &str) -> Option<&'static Experiment> {
    EXPERIMENTS.iter().find(|e| e.name == name)
}

/// Plain-text table of experiments, what they test and their default parameters.
pub fn list_table() -> String {
    let mut out = String::new();
    let width = EXPERIMENTS.iter().map(|e| e.name.len()).max().unwrap_or(0);
    for e in EXPERIMENTS {
        out.push_str(&format!("{:width$}  {}\n", e.name, e.tests));
        let d = (e.defaults)();
        if let Value::Object(m) = &d {
            for (k, v) in m {
                out.push_str(&format!("{:width$}    {k} = {v}\n", ""));
            }
        }
    }
    out
}

/// Unit vector along the first coordinate.
pub(crate) fn e1(n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[0] = 1.0;
    v
}
