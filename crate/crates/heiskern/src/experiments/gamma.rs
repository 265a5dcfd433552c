//! Bridge Monte Carlo of the Heisenberg density against Fourier inversion.

use heiskern_core::group::SkewForm;
use heiskern_core::heat_kernel::{gamma_estimate, gamma_estimate_on, validate_gamma_oracle};
use heiskern_core::oracles::gamma_h3_oracle;
use heiskern_core::rng::tag;
use serde::{Deserialize, Serialize};

use super::Context;
use crate::formats::{num, EstimateJson, Table};
use crate::report::{Check, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Endpoints at which the conditional characteristic function is validated.
    pub validation_points: Vec<[f64; 2]>,
    pub validation_lambdas: Vec<f64>,
    /// `(x1, x2, c)` points compared with their mirror images.
    pub symmetry_probes: Vec<[f64; 3]>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            validation_points: vec![[0.0, 0.0], [0.8, -0.5]],
            validation_lambdas: vec![0.5, 1.0, 2.0, 4.0],
            symmetry_probes: vec![[0.5, 0.0, 0.2], [0.0, -0.7, 0.5], [0.6, 0.4, -0.3]],
        }
    }
}

pub fn run(ctx: &Context) -> anyhow::Result<Outcome> {
    let p: Params = ctx.params("gamma")?;
    if ctx.form != SkewForm::h3() {
        anyhow::bail!("gamma runs on the Heisenberg form only (form kind h3 with a = 1)");
    }
    let mut out = Outcome::new(&p);
    let (form, t, k) = (&ctx.form, ctx.horizon, ctx.tol.k_sigma);
    let mut detail = Table::new(["x1", "x2", "c", "gamma_mean", "gamma_stderr", "oracle"]);

    // The oracle gates the density comparison.
    let mut gate = true;
    let mut validations = Vec::new();
    for x in &p.validation_points {
        let v = validate_gamma_oracle(ctx.exec, x, t, &p.validation_lambdas, ctx.mc)?;
        gate &= v.max_relative_deviation < ctx.tol.density_relative;
        validations.push(serde_json::json!({
            "x": x,
            "lambdas": v.lambdas,
            "oracle": v.oracle,
            "bridge": v.bridge.iter().map(|e| EstimateJson::from(*e)).collect::<Vec<_>>(),
            "max_relative_deviation": v.max_relative_deviation,
        }));
    }
    out.check(Check::flag("oracle_validation", gate));
    out.result("oracle_validation", validations);

    let est = gamma_estimate(ctx.exec, form, t, &[0.0, 0.0], &[0.0], ctx.mc)?;
    let oracle = gamma_h3_oracle(&[0.0, 0.0], 0.0, t)?;
    let mut origin = Check::relative("origin", est.mean, oracle, est.std_error, ctx.tol.density_relative);
    origin.pass &= gate;
    out.check(origin);
    detail.push(vec![num(0.0), num(0.0), num(0.0), num(est.mean), num(est.std_error), num(oracle)]);
    out.result("origin", serde_json::json!({ "estimate": EstimateJson::from(est), "oracle": oracle }));

    let mut probes = Vec::new();
    for (i, q) in p.symmetry_probes.iter().enumerate() {
        let (x, c) = ([q[0], q[1]], [q[2]]);
        let (mx, mc) = ([-q[0], -q[1]], [-q[2]]);
        let a = gamma_estimate_on(ctx.exec, form, t, &x, &c, ctx.mc, tag::PRIMARY)?;
        let b = gamma_estimate_on(ctx.exec, form, t, &mx, &mc, ctx.mc, tag::SECONDARY)?;
        let sigma = a.std_error.hypot(b.std_error);
        out.check(Check::within(format!("symmetry.probe{i}"), a.mean, b.mean, sigma, k * sigma));
        for (pt, cc, e) in [(x, c, a), (mx, mc, b)] {
            let o = gamma_h3_oracle(&pt, cc[0], t)?;
            detail.push(vec![num(pt[0]), num(pt[1]), num(cc[0]), num(e.mean), num(e.std_error), num(o)]);
        }
        probes.push(serde_json::json!({
            "point": q,
            "estimate": EstimateJson::from(a),
            "mirrored": EstimateJson::from(b),
        }));
    }
    out.result("symmetry", probes);
    out.detail = detail;
    Ok(out)
}
