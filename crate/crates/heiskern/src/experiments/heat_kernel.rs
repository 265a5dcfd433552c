//! The `J⁰` representation of the heat kernel.

use heiskern_core::heat_kernel::{
    char_function_check, expect_via_j0, horizon_control, inversion_check, scaling_check, InversionReport,
};
use serde::{Deserialize, Serialize};

use super::Context;
use crate::formats::{num, EstimateJson, Table};
use crate::report::{Check, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Magnitudes of `λ`, taken along `(1, ..., 1)/√d`.
    pub lambdas: Vec<f64>,
    pub scaling_factor: f64,
    /// Horizon ratio of the control that must be rejected.
    pub control_factor: f64,
}

impl Default for Params {
    fn default() -> Self {
        Params { lambdas: vec![0.5, 1.0, 2.0], scaling_factor: 2.0, control_factor: 1.1 }
    }
}

/// Moments of `ρ` are compared relatively, those of `(B, Z)` in standard errors.
fn is_rho_moment(name: &str) -> bool {
    name.starts_with("rho")
}

fn ks_rows(t: &mut Table, which: &str, r: &InversionReport) {
    for p in &r.projections {
        t.push(vec![which.into(), p.name.clone(), num(p.statistic), num(p.p_value)]);
    }
}

pub fn run(ctx: &Context) -> anyhow::Result<Outcome> {
    let p: Params = ctx.params("heat-kernel")?;
    let mut out = Outcome::new(&p);
    let (form, t, k) = (&ctx.form, ctx.horizon, ctx.tol.k_sigma);
    let d = form.dim_c();

    let mass = expect_via_j0(ctx.exec, form, t, |_, _| 1.0, ctx.mc)?;
    out.check(Check::within("j0_mass", mass.mean, 1.0, mass.std_error, ctx.tol.algebraic));
    out.result("j0_mass", EstimateJson::from(mass));

    let mut detail = Table::new(["section", "name", "lhs", "lhs_se", "rhs", "rhs_se", "gap", "gap_se"]);
    let mut chars = Vec::new();
    for &l in &p.lambdas {
        let lambda = vec![l / (d as f64).sqrt(); d];
        let (pair, sine) = char_function_check(ctx.exec, form, t, &lambda, ctx.mc)?;
        out.check(Check::paired_estimate(format!("char_function.lambda_{l}"), &pair, k, 0.0));
        detail.push(vec![
            "char_function".into(),
            num(l),
            num(pair.lhs.mean),
            num(pair.lhs.std_error),
            num(pair.rhs.mean),
            num(pair.rhs.std_error),
            num(pair.gap),
            num(pair.gap_std_error),
        ]);
        chars.push(serde_json::json!({
            "lambda": l,
            "cos": EstimateJson::from(pair.lhs),
            "rho_side": EstimateJson::from(pair.rhs),
            "sin": EstimateJson::from(sine),
            "gap": pair.gap,
            "gap_std_error": pair.gap_std_error,
        }));
    }
    out.result("char_function", chars);

    let moments = scaling_check(ctx.exec, form, t, p.scaling_factor, ctx.mc)?;
    let mut scaling = Vec::new();
    for m in &moments {
        let sigma = m.scaled.std_error.hypot(m.rescaled.std_error);
        let c = if is_rho_moment(&m.name) {
            Check::relative(format!("scaling.{}", m.name), m.scaled.mean, m.rescaled.mean, sigma, ctx.tol.relative)
        } else {
            Check::within(format!("scaling.{}", m.name), m.scaled.mean, m.rescaled.mean, sigma, k * sigma)
        };
        out.check(c);
        detail.push(vec![
            "scaling".into(),
            m.name.clone(),
            num(m.scaled.mean),
            num(m.scaled.std_error),
            num(m.rescaled.mean),
            num(m.rescaled.std_error),
            num(m.scaled.mean - m.rescaled.mean),
            num(sigma),
        ]);
        scaling.push(serde_json::json!({
            "name": m.name,
            "scaled": EstimateJson::from(m.scaled),
            "rescaled": EstimateJson::from(m.rescaled),
            "relative_gap": m.relative_gap,
            "z_score": m.z_score,
        }));
    }
    out.result("scaling", scaling);

    let inv = inversion_check(ctx.exec, form, t, ctx.mc)?;
    let control = horizon_control(ctx.exec, form, t, p.control_factor, ctx.mc)?;
    let level = ctx.tol.ks_level;
    out.check(Check::at_least("inversion.min_p_value", inv.min_p_value, level));
    // The control compares different horizons and must be rejected.
    out.check(Check::at_most("inversion.control_rejected", control.min_p_value, level));
    let mut ks = Table::new(["battery", "projection", "statistic", "p_value"]);
    ks_rows(&mut ks, "inversion", &inv);
    ks_rows(&mut ks, "control", &control);
    out.extra.push(("ks.csv".into(), ks));
    out.result("inversion_min_p_value", inv.min_p_value);
    out.result("control_min_p_value", control.min_p_value);

    out.detail = detail;
    Ok(out)
}
