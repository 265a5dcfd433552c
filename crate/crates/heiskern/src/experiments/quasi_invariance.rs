//! Right, left and weighted translation of the heat kernel.

use heiskern_core::battery::{cylinder, functional};
use heiskern_core::cameron_martin::{
    left_translation_check, right_translation_check, sup_jg_moments, weighted_translation_check, IdentityCheck,
};
use heiskern_core::group::{GroupElement, TangentVector};
use serde::{Deserialize, Serialize};

use super::{e1, Context};
use crate::formats::{num, EstimateJson, Table};
use crate::report::{Check, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub functions: Vec<String>,
    /// Horizontal part of `g`; `e1` when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<Vec<f64>>,
    /// Every fibre coordinate of `g`.
    pub z: f64,
    pub weight: String,
    pub sup_powers: Vec<f64>,
    /// Point counts of the ε-grid and of its refinement.
    pub sup_grids: (usize, usize),
    pub sup_paths: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params {
            functions: vec!["wave".into(), "bump".into(), "tanh".into()],
            h: None,
            z: 0.3,
            weight: "rho_inv_quadratic".into(),
            sup_powers: vec![1.0, 2.0, 4.0],
            sup_grids: (11, 21),
            sup_paths: 10_000,
        }
    }
}

fn row(t: &mut Table, f: &str, kind: &str, c: &IdentityCheck) {
    t.push(vec![
        f.into(),
        kind.into(),
        num(c.lhs.mean),
        num(c.lhs.std_error),
        num(c.rhs.mean),
        num(c.rhs.std_error),
        num(c.gap),
        num(c.sigma),
    ]);
}

pub fn run(ctx: &Context) -> anyhow::Result<Outcome> {
    let p: Params = ctx.params("quasi-invariance")?;
    let mut out = Outcome::new(&p);
    let (form, t, k) = (&ctx.form, ctx.horizon, ctx.tol.k_sigma);
    let h = p.h.clone().unwrap_or_else(|| e1(form.dim_w()));
    let g = GroupElement::new(h.clone(), vec![p.z; form.dim_c()]);
    TangentVector::new(h.clone(), g.c.clone()).check(form)?;
    let psi = functional(&p.weight)?;
    let mut detail = Table::new(["function", "check", "lhs", "lhs_se", "rhs", "rhs_se", "gap", "gap_se"]);

    let one = cylinder("one", form)?;
    let mass = right_translation_check(ctx.exec, form, one.as_ref(), &g, t, ctx.mc)?;
    out.check(Check::estimate("mass", &mass.rhs, 1.0, k, 0.0));
    row(&mut detail, "one", "right", &mass);

    for name in &p.functions {
        let f = cylinder(name, form)?;
        let right = right_translation_check(ctx.exec, form, f.as_ref(), &g, t, ctx.mc)?;
        let left = left_translation_check(ctx.exec, form, f.as_ref(), &g, t, ctx.mc)?;
        let weighted = weighted_translation_check(ctx.exec, form, f.as_ref(), psi.as_ref(), &g, t, ctx.mc)?;
        for (kind, c) in [("right", &right), ("left", &left), ("weighted", &weighted)] {
            out.check(Check::paired(format!("{name}.{kind}"), c, k, 0.0));
            row(&mut detail, name, kind, c);
        }
    }

    let tv = TangentVector::new(h, g.c.clone());
    let mc = ctx.with_paths(p.sup_paths);
    let coarse = sup_jg_moments(ctx.exec, form, &tv, t, &p.sup_powers, p.sup_grids.0, mc)?;
    let fine = sup_jg_moments(ctx.exec, form, &tv, t, &p.sup_powers, p.sup_grids.1, mc)?;
    let mut moments = Vec::new();
    for ((q, c), f) in p.sup_powers.iter().zip(&coarse).zip(&fine) {
        out.check(Check::within(format!("sup.p{q}_grid_stable"), f.mean, c.mean, f.std_error, f.std_error));
        moments
            .push(serde_json::json!({ "power": q, "coarse": EstimateJson::from(*c), "fine": EstimateJson::from(*f) }));
    }
    out.result("sup_jg_moments", moments);
    out.detail = detail;
    Ok(out)
}
