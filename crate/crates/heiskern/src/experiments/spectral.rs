//! The oscillator pair `L = ½Δ - ½|Ax|²`, `S = i Ax·∇` in the reduced
//! representation on polynomials times the ground state.

use heiskern_core::linalg::Mat;
use heiskern_core::oracles::{
    apply_reduced_l, apply_reduced_s, commutator_residual, exp_quadratic_oracle, ground_state_sigma, levy_char,
    quasi_diagonalize, GaussPolynomial, MonomialBasis,
};
use heiskern_core::rng::RngStream;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::Context;
use crate::formats::{matrix_rows, num, Table};
use crate::report::{Check, Outcome};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Params {
    pub degree: usize,
    pub random_matrices: usize,
    pub max_dim: usize,
}

impl Default for Params {
    fn default() -> Self {
        Params { degree: 6, random_matrices: 20, max_dim: 8 }
    }
}

fn random_skew(seed: u64, index: u64, max_dim: usize) -> Mat {
    let mut g = RngStream::new(seed, index).generator();
    let n = 2 + (g.next_u64() % (max_dim as u64 - 1)) as usize;
    let vals: Vec<f64> = (0..n * n).map(|_| g.normal()).collect();
    let b = Mat::from_row_major(n, n, vals).expect("square");
    b.sub(&b.transpose()).scale(0.5)
}

/// `(max |L_red 1 + ½tr Σ|, max |S_red 1|)`, both zero in exact arithmetic.
fn ground_state_residuals(a: &Mat, degree: usize) -> anyhow::Result<(f64, f64, f64)> {
    let basis = MonomialBasis::new(a.rows(), degree)?;
    let one = GaussPolynomial::monomial(&basis, &vec![0; a.rows()], Complex64::new(1.0, 0.0))?;
    let eigen = -0.5 * ground_state_sigma(a)?.trace();
    let l = apply_reduced_l(a, &one)?;
    let l_res = l.add(&one.scale(Complex64::new(-eigen, 0.0))).max_abs_coeff();
    let s_res = apply_reduced_s(a, &one)?.max_abs_coeff();
    Ok((eigen, l_res, s_res))
}

pub fn run(ctx: &Context) -> anyhow::Result<Outcome> {
    let p: Params = ctx.params("spectral")?;
    if p.max_dim < 2 {
        anyhow::bail!("max_dim must be at least 2");
    }
    let mut out = Outcome::new(&p);
    let tol = ctx.tol.algebraic;
    let a = ctx.form.omega(0).clone();

    let qd = quasi_diagonalize(&a)?;
    let recon = qd.reconstruct().sub(&a).max_abs();
    out.check(Check::at_most("form.quasi_diagonal_reconstruction", recon, tol));
    let (eigen, l_res, s_res) = ground_state_residuals(&a, p.degree)?;
    out.check(Check::at_most("form.ground_state_l", l_res, tol));
    out.check(Check::at_most("form.ground_state_s", s_res, tol));
    let comm = commutator_residual(&a, p.degree)?;
    out.check(Check::at_most("form.commutator_residual", comm, tol));
    let oracle = exp_quadratic_oracle(&a, ctx.horizon)?;
    let blocks = levy_char(&qd.angles, ctx.horizon);
    out.check(Check::within("form.exp_quadratic_vs_levy_char", oracle, blocks, 0.0, tol));
    out.result(
        "form",
        serde_json::json!({
            "a": matrix_rows(&a),
            "angles": qd.angles,
            "ground_state_eigenvalue": eigen,
            "commutator_residual": comm,
            "exp_quadratic_oracle": oracle,
        }),
    );

    let mut detail =
        Table::new(["index", "dim", "commutator_residual", "ground_state_eigenvalue", "l_residual", "s_residual"]);
    let seed = ctx.derived_seed(11);
    let mut worst = 0.0_f64;
    for i in 0..p.random_matrices {
        let m = random_skew(seed, i as u64, p.max_dim);
        let r = commutator_residual(&m, p.degree)?;
        let (e, lr, sr) = ground_state_residuals(&m, p.degree)?;
        worst = worst.max(r);
        out.check(Check::at_most(format!("random{i}.commutator_residual"), r, tol));
        out.check(Check::at_most(format!("random{i}.ground_state"), lr.max(sr), tol));
        detail.push(vec![i.to_string(), m.rows().to_string(), num(r), num(e), num(lr), num(sr)]);
    }
    out.result("worst_random_commutator_residual", worst);
    out.detail = detail;
    Ok(out)
}
