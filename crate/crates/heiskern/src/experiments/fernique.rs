//! Exponential integrability `E exp((ε/T)(|B_T|² + |Z_T|)) < ∞` for small ε.

use heiskern_core::tails::{fernique_doubling, fernique_ladder, FerniqueStability};
use serde::{Deserialize, Serialize};

use super::Context;
use crate::formats::{num, EstimateJson, Table};
use crate::report::{Check, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub eps: f64,
    /// Second horizon at which the verdict must agree.
    pub compare_horizon: f64,
    pub ladder: Vec<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Params { eps: 0.05, compare_horizon: 4.0, ladder: vec![0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6] }
    }
}

fn json(s: &FerniqueStability) -> serde_json::Value {
    serde_json::json!({
        "eps": s.base.eps,
        "base": EstimateJson::from(s.base.estimate),
        "doubled": EstimateJson::from(s.doubled.estimate),
        "gap_sigma": s.gap_sigma,
        "max_share": s.doubled.max_share,
        "heavy_tailed": s.doubled.heavy_tailed,
        "stable": s.stable,
    })
}

fn row(t: &mut Table, section: &str, horizon: f64, s: &FerniqueStability) {
    t.push(vec![
        section.into(),
        num(horizon),
        num(s.base.eps),
        num(s.base.estimate.mean),
        num(s.base.estimate.std_error),
        num(s.doubled.estimate.mean),
        num(s.doubled.estimate.std_error),
        num(s.doubled.max_share),
        s.stable.to_string(),
    ]);
}

pub fn run(ctx: &Context) -> anyhow::Result<Outcome> {
    let p: Params = ctx.params("fernique")?;
    if !(p.compare_horizon > 0.0) {
        anyhow::bail!("compare_horizon must be positive");
    }
    let mut out = Outcome::new(&p);
    let form = &ctx.form;
    let mut detail = Table::new([
        "section",
        "horizon",
        "eps",
        "base_mean",
        "base_se",
        "doubled_mean",
        "doubled_se",
        "max_share",
        "stable",
    ]);

    let base = fernique_doubling(ctx.exec, form, ctx.horizon, p.eps, ctx.mc)?;
    let gap = base.base.estimate.mean - base.doubled.estimate.mean;
    let mut c = Check::within(
        "doubling",
        base.base.estimate.mean,
        base.doubled.estimate.mean,
        base.gap_sigma,
        ctx.tol.k_sigma * base.gap_sigma,
    );
    c.gap = gap;
    c.pass &= !base.doubled.heavy_tailed;
    out.check(c);
    row(&mut detail, "doubling", ctx.horizon, &base);
    out.result("doubling", json(&base));

    let other = fernique_doubling(ctx.exec, form, p.compare_horizon, p.eps, ctx.mc)?;
    out.check(Check::flag("horizon_independent_verdict", other.stable == base.stable));
    row(&mut detail, "compare_horizon", p.compare_horizon, &other);
    out.result("compare_horizon", json(&other));

    let (rungs, largest) = fernique_ladder(ctx.exec, form, ctx.horizon, &p.ladder, ctx.mc)?;
    for r in &rungs {
        row(&mut detail, "ladder", ctx.horizon, r);
    }
    out.result("ladder", rungs.iter().map(json).collect::<Vec<_>>());
    out.result("largest_stable_eps", largest);
    out.detail = detail;
    Ok(out)
}
