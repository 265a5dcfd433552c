//! Integration by parts against the invariant vector fields.

use heiskern_core::battery::cylinder;
use heiskern_core::cameron_martin::{
    derivative_orders, ibp_check, psi_estimate, psi_mean, right_ibp_check, IdentityCheck,
};
use heiskern_core::group::{SkewForm, TangentVector};
use heiskern_core::oracles::{gamma_h3_oracle, gamma_h3_oracle_dc};
use heiskern_core::path::{sample_bm, TimeGrid};
use heiskern_core::rng::RngStream;
use serde::{Deserialize, Serialize};

use super::{e1, Context};
use crate::formats::{num, EstimateJson, Table};
use crate::report::{Check, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Direction {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub functions: Vec<String>,
    /// Two directions; defaults depend on the form's dimensions.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directions: Option<[Direction; 2]>,
    /// ε-ladder of the central-difference checks.
    pub ladder: Vec<f64>,
    /// Number of sampled paths at which derivative rules are checked.
    pub derivative_paths: usize,
    /// `(x1, x2, c)` at which `ψ` is compared with the density oracle (Heisenberg form only).
    pub psi_point: [f64; 3],
}

impl Default for Params {
    fn default() -> Self {
        Params {
            functions: vec!["wave".into(), "bump".into(), "tanh".into()],
            directions: None,
            ladder: vec![0.08, 0.04, 0.02, 0.01],
            derivative_paths: 5,
            psi_point: [0.3, -0.2, 0.4],
        }
    }
}

fn default_directions(form: &SkewForm) -> [TangentVector; 2] {
    let (n, d) = (form.dim_w(), form.dim_c());
    let mut h2 = vec![0.0; n];
    h2[0] = 0.6;
    h2[1] = -0.8;
    [TangentVector::new(e1(n), vec![0.2; d]), TangentVector::new(h2, vec![-0.1; d])]
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
    let p: Params = ctx.params("ibp")?;
    let mut out = Outcome::new(&p);
    let (form, t, k) = (&ctx.form, ctx.horizon, ctx.tol.k_sigma);
    let [x1, x2] = match &p.directions {
        Some([a, b]) => [TangentVector::new(a.h.clone(), a.z.clone()), TangentVector::new(b.h.clone(), b.z.clone())],
        None => default_directions(form),
    };
    x1.check(form)?;
    x2.check(form)?;
    let mut detail = Table::new(["function", "check", "lhs", "lhs_se", "rhs", "rhs_se", "gap", "gap_se"]);

    for name in &p.functions {
        let f = cylinder(name, form)?;
        let cases: [(&str, Vec<TangentVector>); 4] = [
            ("m1.x1", vec![x1.clone()]),
            ("m1.x2", vec![x2.clone()]),
            ("m2.x1x2", vec![x1.clone(), x2.clone()]),
            ("m2.x2x1", vec![x2.clone(), x1.clone()]),
        ];
        for (kind, xs) in &cases {
            let c = ibp_check(ctx.exec, form, xs, f.as_ref(), t, ctx.mc)?;
            out.check(Check::paired(format!("{name}.{kind}"), &c, k, 0.0));
            row(&mut detail, name, kind, &c);
        }
        let r = right_ibp_check(ctx.exec, form, std::slice::from_ref(&x1), f.as_ref(), t, ctx.mc)?;
        out.check(Check::paired(format!("{name}.right.m1.x1"), &r, k, 0.0));
        row(&mut detail, name, "right.m1.x1", &r);
    }
    if let Some(name) = p.functions.first() {
        let f = cylinder(name, form)?;
        let r = right_ibp_check(ctx.exec, form, &[x1.clone(), x2.clone()], f.as_ref(), t, ctx.mc)?;
        out.check(Check::paired(format!("{name}.right.m2.x1x2"), &r, k, 0.0));
        row(&mut detail, name, "right.m2.x1x2", &r);
    }

    // F = c·v with X = (0, v): the field applied to F is the constant |v|^2.
    let d = form.dim_c();
    let v = vec![1.0; d];
    let fl = cylinder("fibre_linear", form)?;
    let xv = TangentVector::new(vec![0.0; form.dim_w()], v.clone());
    let exact = ibp_check(ctx.exec, form, std::slice::from_ref(&xv), fl.as_ref(), t, ctx.mc)?;
    let norm2 = d as f64;
    out.check(Check::within("exact.lhs", exact.lhs.mean, norm2, exact.lhs.std_error, ctx.tol.algebraic));
    out.check(Check::estimate("exact.rhs", &exact.rhs, norm2, k, 0.0));
    row(&mut detail, "fibre_linear", "exact", &exact);

    let mut means = Vec::new();
    for (label, x) in [("x1", &x1), ("x2", &x2)] {
        let m = psi_mean(ctx.exec, form, std::slice::from_ref(x), t, ctx.mc)?;
        out.check(Check::estimate(format!("psi_mean_zero.{label}"), &m, 0.0, k, 0.0));
        means.push(serde_json::json!({ "direction": label, "mean": EstimateJson::from(m) }));
    }
    out.result("psi_mean", means);

    if *form == SkewForm::h3() {
        let [a, b, c] = p.psi_point;
        let est = psi_estimate(ctx.exec, form, std::slice::from_ref(&xv), &[a, b], &[c], t, ctx.mc)?;
        let oracle = -gamma_h3_oracle_dc(&[a, b], c, t)? / gamma_h3_oracle(&[a, b], c, t)?;
        out.check(Check::estimate("psi_vs_density_oracle", &est, oracle, k, 0.0));
        out.result(
            "psi_vs_density_oracle",
            serde_json::json!({ "estimate": EstimateJson::from(est), "oracle": oracle }),
        );
    }

    // Analytic derivative rules against central differences.
    let grid = TimeGrid::new(t, ctx.mc.n_steps)?;
    let mut orders = Table::new(["path", "direction", "rule", "eps", "error"]);
    let mut worst: Vec<(String, f64)> = Vec::new();
    for i in 0..p.derivative_paths {
        let path = sample_bm(grid, form.dim_w(), RngStream::new(ctx.derived_seed(7), i as u64));
        let c: Vec<f64> = (0..d).map(|j| 0.3 * ((i + j) as f64 * 0.7).sin()).collect();
        for (label, x) in [("x1", &x1), ("x2", &x2)] {
            for ch in derivative_orders(form, x, &path, &c, &p.ladder)? {
                for (e, err) in ch.eps.iter().zip(&ch.errors) {
                    orders.push(vec![i.to_string(), label.into(), ch.name.into(), num(*e), num(*err)]);
                }
                match worst.iter_mut().find(|(n, _)| n == ch.name) {
                    Some(w) => w.1 = w.1.min(ch.order),
                    None => worst.push((ch.name.to_string(), ch.order)),
                }
            }
        }
    }
    for (name, order) in &worst {
        out.check(Check::at_least(format!("order.{name}"), *order, ctx.tol.min_order));
    }
    out.result(
        "observed_orders",
        worst.iter().map(|(n, o)| serde_json::json!({ "rule": n, "min_order": o })).collect::<Vec<_>>(),
    );
    out.extra.push(("orders.csv".into(), orders));
    out.detail = detail;
    Ok(out)
}
