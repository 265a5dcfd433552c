//! `E[f(B_T) e^{i∫<AB,dB>}] = E[f(B_T) e^{-½∫|AB|^2}]` and the Ito isometry.

use heiskern_core::linalg::Mat;
use heiskern_core::mc::McConfig;
use heiskern_core::oracles::exp_quadratic_oracle;
use heiskern_core::quadratics::{calibrate_bias, ito_integral, ito_moments, quadratic_energy, yor_gap};
use serde::{Deserialize, Serialize};

use super::Context;
use crate::formats::{num, EstimateJson, Table};
use crate::report::{Check, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Case {
    /// Block rotation speeds; `A` is `2k x 2k` with blocks `[[0, a], [-a, 0]]`.
    pub blocks: Vec<f64>,
    /// `one` or `indicator` (of the unit ball).
    pub f: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub cases: Vec<Case>,
    /// Paths spent calibrating the discretisation bias, per statistic.
    pub bias_paths: usize,
}

impl Default for Params {
    fn default() -> Self {
        let case = |blocks: &[f64], f: &str| Case { blocks: blocks.to_vec(), f: f.into() };
        Params {
            cases: vec![case(&[1.0], "one"), case(&[1.0], "indicator"), case(&[1.0, 0.5], "indicator")],
            bias_paths: 20_000,
        }
    }
}

pub fn block_matrix(blocks: &[f64]) -> Mat {
    let n = 2 * blocks.len();
    let mut a = Mat::zeros(n, n);
    for (k, &w) in blocks.iter().enumerate() {
        a[(2 * k, 2 * k + 1)] = w;
        a[(2 * k + 1, 2 * k)] = -w;
    }
    a
}

fn test_function(name: &str) -> anyhow::Result<fn(&[f64]) -> f64> {
    Ok(match name {
        "one" => |_| 1.0,
        "indicator" => |x| if x.iter().map(|v| v * v).sum::<f64>() <= 1.0 { 1.0 } else { 0.0 },
        _ => anyhow::bail!("unknown test function {name:?}; expected one or indicator"),
    })
}

pub fn run(ctx: &Context) -> anyhow::Result<Outcome> {
    let p: Params = ctx.params("yor")?;
    let mut out = Outcome::new(&p);
    let k = ctx.tol.k_sigma;
    let mut detail = Table::new([
        "case",
        "f",
        "blocks",
        "lhs_re",
        "lhs_re_se",
        "lhs_im",
        "rhs",
        "rhs_se",
        "gap",
        "gap_se",
        "bias_budget",
        "oracle",
    ]);
    let bias_mc = McConfig { n_paths: p.bias_paths, n_steps: ctx.mc.n_steps, seed: ctx.derived_seed(1) };
    for (i, case) in p.cases.iter().enumerate() {
        if case.blocks.is_empty() {
            anyhow::bail!("case {i} has no blocks");
        }
        let a = block_matrix(&case.blocks);
        let f = test_function(&case.f)?;
        let r = yor_gap(ctx.exec, &a, f, ctx.horizon, ctx.mc)?;
        // Bias of each side, by paired refinement; the larger one is budgeted.
        let b_lhs = calibrate_bias(ctx.exec, a.rows(), ctx.horizon, bias_mc, |q| {
            f(q.terminal()) * ito_integral(&a, q).unwrap().cos()
        })?;
        let b_rhs = calibrate_bias(ctx.exec, a.rows(), ctx.horizon, bias_mc, |q| {
            f(q.terminal()) * (-0.5 * quadratic_energy(&a, q).unwrap()).exp()
        })?;
        let dt = ctx.horizon / ctx.mc.n_steps as f64;
        let budget = [b_lhs, b_rhs].iter().map(|b| b.budget(dt) + k * b.difference_std_error).fold(0.0, f64::max);
        let tag = format!("case{i}");
        let gap = r.gap;
        out.check(Check::within(
            format!("{tag}.paired_gap"),
            r.lhs_re.mean,
            r.rhs.mean,
            r.gap_std_error,
            k * r.gap_std_error + budget,
        ));
        let oracle = if case.f == "one" { Some(exp_quadratic_oracle(&a, ctx.horizon)?) } else { None };
        if let Some(o) = oracle {
            out.check(Check::estimate(format!("{tag}.lhs_vs_oracle"), &r.lhs_re, o, k, budget));
            out.check(Check::estimate(format!("{tag}.rhs_vs_oracle"), &r.rhs, o, k, budget));
        }
        detail.push(vec![
            i.to_string(),
            case.f.clone(),
            case.blocks.iter().map(|v| num(*v)).collect::<Vec<_>>().join(" "),
            num(r.lhs_re.mean),
            num(r.lhs_re.std_error),
            num(r.lhs_im.mean),
            num(r.rhs.mean),
            num(r.rhs.std_error),
            num(gap),
            num(r.gap_std_error),
            num(budget),
            oracle.map(num).unwrap_or_default(),
        ]);
        out.result(
            &tag,
            serde_json::json!({
                "lhs_re": EstimateJson::from(r.lhs_re),
                "lhs_im": EstimateJson::from(r.lhs_im),
                "rhs": EstimateJson::from(r.rhs),
                "gap": gap,
                "gap_std_error": r.gap_std_error,
                "bias_budget": budget,
                "oracle": oracle,
            }),
        );
    }

    // Ito isometry on the first case.
    if let Some(case) = p.cases.first() {
        let a = block_matrix(&case.blocks);
        let m = ito_moments(ctx.exec, &a, ctx.horizon, ctx.mc)?;
        out.check(Check::estimate("ito.mean_zero", &m.mean, 0.0, k, 0.0));
        out.check(Check::relative(
            "ito.second_moment",
            m.second.mean,
            m.isometry,
            m.second.std_error,
            ctx.tol.relative,
        ));
        out.result(
            "ito",
            serde_json::json!({
                "mean": EstimateJson::from(m.mean),
                "second": EstimateJson::from(m.second),
                "energy": EstimateJson::from(m.energy),
                "isometry": m.isometry,
            }),
        );
    }
    out.detail = detail;
    Ok(out)
}
