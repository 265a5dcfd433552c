//! Small-ball probabilities and tails of `ρ_T` and `ρ_T^{-1}`.

use heiskern_core::tails::{
    pa_op_identity, perturbed_small_ball, rho_inverse_moments, rho_inverse_tail, rho_norm_tail, small_ball_1d,
    small_ball_operator, TailReport,
};
use serde::{Deserialize, Serialize};

use super::{e1, Context};
use crate::formats::{num, tail_table, EstimateJson, Table};
use crate::report::{Check, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    /// Sample size of the one-dimensional small-ball fit.
    pub small_ball_paths: usize,
    pub small_ball_eps: Vec<f64>,
    pub operator_eps: Vec<f64>,
    pub alpha_grid: Vec<f64>,
    pub rho_inverse_r: Vec<f64>,
    pub alpha0: f64,
    pub n_alpha: usize,
    pub moment_powers: Vec<f64>,
    pub moment_grids: (usize, usize),
    pub rho_norm_r: Vec<f64>,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            small_ball_paths: 1_000_000,
            small_ball_eps: vec![0.015, 0.02, 0.025, 0.03, 0.04, 0.05, 0.07, 0.1],
            operator_eps: vec![0.05, 0.07, 0.1, 0.15, 0.2, 0.3],
            alpha_grid: vec![-1.0, -0.5, 0.0, 0.5, 1.0],
            rho_inverse_r: vec![5.0, 10.0, 15.0, 20.0, 30.0, 40.0],
            alpha0: 0.5,
            n_alpha: 11,
            moment_powers: vec![1.0, 2.0, 4.0],
            moment_grids: (11, 21),
            rho_norm_r: vec![0.5, 0.75, 1.0, 1.25, 1.5],
        }
    }
}

fn absorb(out: &mut Outcome, detail: &mut Table, r: &TailReport) {
    for v in &r.verdicts {
        out.check(Check::flag(format!("{}.{}", r.name, v.name), v.pass));
    }
    for p in &r.points {
        detail.push(vec![
            r.name.clone(),
            num(p.threshold),
            p.successes.to_string(),
            num(p.p_hat),
            num(p.ci_low),
            num(p.ci_high),
            p.bound.map(num).unwrap_or_default(),
        ]);
    }
    let params: serde_json::Map<String, serde_json::Value> = {
        let mut m = serde_json::Map::new();
        for (k, v) in &r.parameters {
            match m.get_mut(k) {
                Some(serde_json::Value::Array(a)) => a.push((*v).into()),
                Some(old) => *old = serde_json::Value::Array(vec![old.clone(), (*v).into()]),
                None => {
                    m.insert(k.clone(), (*v).into());
                }
            }
        }
        m
    };
    out.result(
        &r.name,
        serde_json::json!({
            "n_paths": r.n_paths,
            "n_steps": r.n_steps,
            "seed": r.seed,
            "fit": r.fit.map(|f| serde_json::json!({
                "slope": f.slope, "intercept": f.intercept, "r_squared": f.r_squared, "slope_std_error": f.slope_std_error,
            })),
            "parameters": params,
            "verdicts": r.verdicts.iter().map(|v| (v.name.clone(), serde_json::Value::Bool(v.pass))).collect::<serde_json::Map<_, _>>(),
        }),
    );
    out.extra.push((format!("tail_{}.csv", r.name), tail_table(r)));
}

pub fn run(ctx: &Context) -> anyhow::Result<Outcome> {
    let p: Params = ctx.params("tails")?;
    let mut out = Outcome::new(&p);
    let (form, t) = (&ctx.form, ctx.horizon);
    let mut detail = Table::new(["report", "threshold", "successes", "p_hat", "ci_low", "ci_high", "bound_value"]);
    let h = e1(form.dim_w());
    let a = form.omega(0).clone();

    let sb = small_ball_1d(ctx.exec, t, &p.small_ball_eps, ctx.with_paths(p.small_ball_paths))?;
    absorb(&mut out, &mut detail, &sb);
    let op = small_ball_operator(ctx.exec, &a, t, &p.operator_eps, ctx.mc)?;
    absorb(&mut out, &mut detail, &op);
    let pert = perturbed_small_ball(ctx.exec, &a, &h, t, &p.operator_eps, &p.alpha_grid, ctx.mc)?;
    absorb(&mut out, &mut detail, &pert);

    let pa = pa_op_identity(&a, &h)?;
    out.check(Check::within(
        "pa_op_identity",
        pa.norm_pa.max(pa.norm_ap),
        pa.norm_a,
        0.0,
        ctx.tol.algebraic * pa.norm_a.max(1.0),
    ));
    out.result(
        "pa_op_identity",
        serde_json::json!({ "norm_a": pa.norm_a, "norm_pa": pa.norm_pa, "norm_ap": pa.norm_ap, "max_deviation": pa.max_deviation }),
    );

    let inv = rho_inverse_tail(ctx.exec, form, t, &p.rho_inverse_r, p.alpha0, &h, p.n_alpha, ctx.mc)?;
    absorb(&mut out, &mut detail, &inv);
    let gm = rho_inverse_moments(ctx.exec, form, t, p.alpha0, &h, &p.moment_powers, p.moment_grids, ctx.mc)?;
    let mut moments = Vec::new();
    for (i, pw) in gm.powers.iter().enumerate() {
        let finite = gm.fine[i].mean.is_finite() && gm.fine[i].std_error.is_finite();
        out.check(Check::flag(format!("rho_inverse_moments.p{pw}_finite"), finite));
        out.check(Check::flag(format!("rho_inverse_moments.p{pw}_grid_stable"), gm.stable[i]));
        moments.push(serde_json::json!({
            "power": pw,
            "coarse": EstimateJson::from(gm.coarse[i]),
            "fine": EstimateJson::from(gm.fine[i]),
            "grid_stable": gm.stable[i],
        }));
    }
    out.result("rho_inverse_moments", moments);

    let norm = rho_norm_tail(ctx.exec, form, t, &p.rho_norm_r, ctx.mc)?;
    absorb(&mut out, &mut detail, &norm);

    out.detail = detail;
    Ok(out)
}
