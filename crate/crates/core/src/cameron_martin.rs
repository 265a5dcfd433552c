//! Quasi-invariance under Cameron-Martin translations and integration by
//! parts for the invariant vector fields, checked by Monte Carlo.
//!
//! Path functionals shift as `Ψ_g(B, c) = Ψ(B - 𝐡, c - z - ω(B_T, h)/2)` for
//! `g = (h, z)`, with `𝐡(t) = (t/T) h`. The path-space derivative `X~Ψ` is
//! `d/dε Ψ_{εX}` at `ε = 0`; on functions of `(B_T, c)` it acts as minus
//! the left-invariant field.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::group::{group_inv, group_mul, CylinderFunction, GroupElement, SkewForm, TangentVector};
use crate::heat_kernel::{draw_fibre, j0_density, log_j0_density, PairedEstimate};
use crate::linalg::{dot, Mat};
use crate::mc::{accumulate, Executor, McConfig, Moments};
use crate::path::{drift_path, sample_bm_with, sample_bridge_with, shift_path, SampledPath, TimeGrid};
use crate::polynomial::{EvalContext, PolynomialFunctional};
use crate::quadratics::{levy_z, rho};
use crate::rng::{tag, RngStream};
use crate::stats::{linear_fit, McEstimate};

/// `J̄_h(x) = exp(<h, x>/T - |h|^2/(2T))`.
pub fn jbar(h: &[f64], x: &[f64], horizon: f64) -> f64 {
    libm::exp(dot(h, x) / horizon - 0.5 * dot(h, h) / horizon)
}

/// Arguments of `Ψ_g`: `(B - 𝐡, c - z - ω(B_T, h)/2)`.
pub fn shift_args(form: &SkewForm, g: &TangentVector, p: &SampledPath, c: &[f64]) -> Result<(SampledPath, Vec<f64>)> {
    g.check(form)?;
    if c.len() != form.dim_c() {
        return Err(Error::Dimension { expected: form.dim_c(), got: c.len() });
    }
    let shifted = shift_path(p, -1.0, &drift_path(p.grid(), &g.h))?;
    let om = form.eval(p.terminal(), &g.h);
    let cs = (0..c.len()).map(|j| c[j] - g.z[j] - 0.5 * om[j]).collect();
    Ok((shifted, cs))
}

/// `J_g(B, c) = J⁰_T(B - 𝐡, c - z - ω(B_T, h)/2)`.
pub fn jg(form: &SkewForm, g: &TangentVector, p: &SampledPath, c: &[f64]) -> Result<f64> {
    let (ps, cs) = shift_args(form, g, p, c)?;
    j0_density(form, &ps, &cs)
}

/// A functional of `(B, c)` that can be translated along Cameron-Martin directions.
pub trait ShiftableFunctional: Sync {
    fn eval(&self, form: &SkewForm, p: &SampledPath, c: &[f64]) -> Result<f64>;

    /// Exact `X~Ψ(B, c)`, when known.
    fn xtilde(&self, _form: &SkewForm, _x: &TangentVector, _p: &SampledPath, _c: &[f64]) -> Option<Result<f64>> {
        None
    }

    fn shifted(&self, form: &SkewForm, g: &TangentVector, p: &SampledPath, c: &[f64]) -> Result<f64> {
        let (ps, cs) = shift_args(form, g, p, c)?;
        self.eval(form, &ps, &cs)
    }
}

impl ShiftableFunctional for PolynomialFunctional {
    fn eval(&self, form: &SkewForm, p: &SampledPath, c: &[f64]) -> Result<f64> {
        PolynomialFunctional::eval(self, form, p, c)
    }

    fn xtilde(&self, form: &SkewForm, x: &TangentVector, p: &SampledPath, c: &[f64]) -> Option<Result<f64>> {
        let mut dirs = self.directions().to_vec();
        let k = dirs.len();
        dirs.push(x.clone());
        let ext = self.with_directions(dirs).ok()?;
        Some(ext.derivative(k).eval(form, p, c))
    }
}

/// A functional given by a closure, differentiated numerically.
pub struct FnFunctional<F>(pub F);

impl<F> ShiftableFunctional for FnFunctional<F>
where
    F: Fn(&SkewForm, &SampledPath, &[f64]) -> Result<f64> + Sync,
{
    fn eval(&self, form: &SkewForm, p: &SampledPath, c: &[f64]) -> Result<f64> {
        (self.0)(form, p, c)
    }
}

/// `X~Ψ` by 5-point central differences of `ε ↦ Ψ_{εX}` at steps `1e-3` and
/// `5e-4`, combined by Richardson extrapolation.
pub fn xtilde_numeric<S: ShiftableFunctional + ?Sized>(
    psi: &S,
    form: &SkewForm,
    x: &TangentVector,
    p: &SampledPath,
    c: &[f64],
) -> Result<f64> {
    let at = |e: f64| psi.shifted(form, &x.scaled(e), p, c);
    let five =
        |h: f64| -> Result<f64> { Ok((-at(2.0 * h)? + 8.0 * at(h)? - 8.0 * at(-h)? + at(-2.0 * h)?) / (12.0 * h)) };
    let coarse = five(1e-3)?;
    let fine = five(5e-4)?;
    Ok((16.0 * fine - coarse) / 15.0)
}

pub fn xtilde_apply<S: ShiftableFunctional + ?Sized>(
    psi: &S,
    form: &SkewForm,
    x: &TangentVector,
    p: &SampledPath,
    c: &[f64],
) -> Result<f64> {
    match psi.xtilde(form, x, p, c) {
        Some(v) => v,
        None => xtilde_numeric(psi, form, x, p, c),
    }
}

/// `X~ log J⁰_T(B, c)`.
pub fn xtilde_log_j0(form: &SkewForm, x: &TangentVector, p: &SampledPath, c: &[f64]) -> Result<f64> {
    PolynomialFunctional::xtilde_log_j0(vec![x.clone()], 0).eval(form, p, c)
}

/// `X~*Ψ = X~Ψ + Ψ (X~ log J⁰ + <h, B_T>/T)`.
pub fn xstar_apply<S: ShiftableFunctional + ?Sized>(
    form: &SkewForm,
    x: &TangentVector,
    psi: &S,
    p: &SampledPath,
    c: &[f64],
) -> Result<f64> {
    let d = xtilde_apply(psi, form, x, p, c)?;
    let v = psi.eval(form, p, c)?;
    let w = xtilde_log_j0(form, x, p, c)? + dot(&x.h, p.terminal()) / p.grid().horizon();
    Ok(d + v * w)
}

/// Derivative of `ρ_T(B - ε𝐡)^{-1}` at `ε = 0`: `ρ^{-1}(M + M^T)ρ^{-1}` with `M = ρ_T(B, 𝐡)`.
pub fn rho_inverse_derivative(form: &SkewForm, h: &[f64], p: &SampledPath) -> Result<Mat> {
    let r = rho(form, p)?;
    let inv = r.cholesky()?.inverse();
    let m = crate::quadratics::rho_matrix(form, p, &drift_path(p.grid(), h))?.entries;
    Ok(inv.matmul(&m.add(&m.transpose())).matmul(&inv))
}

/// Derivative of `det(ρ_T(B - ε𝐡))^{-1/2}` at `ε = 0`: `det(ρ)^{-1/2} tr(ρ^{-1} M)`.
pub fn det_rho_derivative(form: &SkewForm, h: &[f64], p: &SampledPath) -> Result<f64> {
    let r = rho(form, p)?;
    let ch = r.cholesky()?;
    let m = crate::quadratics::rho_matrix(form, p, &drift_path(p.grid(), h))?.entries;
    Ok(libm::exp(-0.5 * ch.log_det()) * ch.inverse().matmul(&m).trace())
}

/// Result of a both-sides Monte Carlo check on common paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IdentityCheck {
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    pub gap: f64,
    /// Standard error of the paired gap.
    pub sigma: f64,
}

impl IdentityCheck {
    pub fn within(&self, k: f64, slack: f64) -> bool {
        self.gap.abs() <= k * self.sigma + slack
    }

    fn from_moments(m: &Moments, mc: McConfig) -> Self {
        IdentityCheck {
            lhs: m.estimate(0, mc.n_steps, mc.seed),
            rhs: m.estimate(1, mc.n_steps, mc.seed),
            gap: m.mean(0) - m.mean(1),
            sigma: m.diff_std_error(0, 1),
        }
    }
}

impl From<PairedEstimate> for IdentityCheck {
    fn from(p: PairedEstimate) -> Self {
        IdentityCheck { lhs: p.lhs, rhs: p.rhs, gap: p.gap, sigma: p.gap_std_error }
    }
}

fn finish(m: Moments, mc: McConfig) -> Result<IdentityCheck> {
    if m.count() as usize != mc.n_paths {
        return Err(Error::DegeneratePath { pivot: 0.0, threshold: 0.0 });
    }
    Ok(IdentityCheck::from_moments(&m, mc))
}

fn element_as_tangent(g: &GroupElement) -> TangentVector {
    TangentVector::new(g.w.clone(), g.c.clone())
}

/// `E[F(g_T g)]` against `E ∫ F(B_T, c) J_g(B, c) J̄_h(B_T) dc`. The `dc`
/// integral is sampled from `J_g`'s own Gaussian:
/// `c = ζ + z + ω(B_T, h)/2` with `ζ ~ N(0, ρ_T(B - 𝐡))`.
pub fn right_translation_check<E, F>(
    exec: &E,
    form: &SkewForm,
    f: &F,
    g: &GroupElement,
    horizon: f64,
    mc: McConfig,
) -> Result<IdentityCheck>
where
    E: Executor + ?Sized,
    F: CylinderFunction + ?Sized,
{
    let t = element_as_tangent(g);
    t.check(form)?;
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let m = accumulate(exec, mc.n_paths, 2, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(z) = levy_z(form, &p) else { return false };
        let gt = GroupElement::new(p.terminal().to_vec(), z);
        let Ok(moved) = group_mul(form, &gt, g) else { return false };
        out[0] = f.value(&moved.w, &moved.c);
        let Ok(ps) = shift_path(&p, -1.0, &drift_path(grid, &g.w)) else { return false };
        let Ok(fd) = draw_fibre(form, &ps, &mut rng) else { return false };
        let om = form.eval(p.terminal(), &g.w);
        let c: Vec<f64> = (0..form.dim_c()).map(|j| fd.xi[j] + g.c[j] + 0.5 * om[j]).collect();
        out[1] = f.value(p.terminal(), &c) * jbar(&g.w, p.terminal(), horizon);
        true
    });
    finish(m, mc)
}

struct Inverted<'a, F: ?Sized>(&'a F);

impl<F: CylinderFunction + ?Sized> CylinderFunction for Inverted<'_, F> {
    fn value(&self, x: &[f64], c: &[f64]) -> f64 {
        let mx: Vec<f64> = x.iter().map(|v| -v).collect();
        let mc: Vec<f64> = c.iter().map(|v| -v).collect();
        self.0.value(&mx, &mc)
    }

    fn gradient(&self, x: &[f64], c: &[f64], gx: &mut [f64], gc: &mut [f64]) {
        let mx: Vec<f64> = x.iter().map(|v| -v).collect();
        let mc: Vec<f64> = c.iter().map(|v| -v).collect();
        self.0.gradient(&mx, &mc, gx, gc);
        gx.iter_mut().for_each(|v| *v = -*v);
        gc.iter_mut().for_each(|v| *v = -*v);
    }

    fn hessian(&self, x: &[f64], c: &[f64]) -> Option<Mat> {
        let mx: Vec<f64> = x.iter().map(|v| -v).collect();
        let mc: Vec<f64> = c.iter().map(|v| -v).collect();
        self.0.hessian(&mx, &mc)
    }

    fn growth(&self) -> (f64, f64) {
        self.0.growth()
    }
}

/// `E[F(g g_T)]`: left side directly; right side as the right translation of
/// `u = F ∘ inv` by `g^{-1}`, using that `g_T` and `g_T^{-1}` share a law.
pub fn left_translation_check<E, F>(
    exec: &E,
    form: &SkewForm,
    f: &F,
    g: &GroupElement,
    horizon: f64,
    mc: McConfig,
) -> Result<IdentityCheck>
where
    E: Executor + ?Sized,
    F: CylinderFunction + ?Sized,
{
    element_as_tangent(g).check(form)?;
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let ginv = group_inv(g);
    let u = Inverted(f);
    let m = accumulate(exec, mc.n_paths, 2, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(z) = levy_z(form, &p) else { return false };
        let gt = GroupElement::new(p.terminal().to_vec(), z);
        let Ok(moved) = group_mul(form, g, &gt) else { return false };
        out[0] = f.value(&moved.w, &moved.c);
        let Ok(ps) = shift_path(&p, -1.0, &drift_path(grid, &ginv.w)) else { return false };
        let Ok(fd) = draw_fibre(form, &ps, &mut rng) else { return false };
        let om = form.eval(p.terminal(), &ginv.w);
        let c: Vec<f64> = (0..form.dim_c()).map(|j| fd.xi[j] + ginv.c[j] + 0.5 * om[j]).collect();
        out[1] = u.value(p.terminal(), &c) * jbar(&ginv.w, p.terminal(), horizon);
        true
    });
    finish(m, mc)
}

/// `E ∫ F((B_T, c) g) Ψ(B, c) J⁰ dc` against `E ∫ F(B_T, c) Ψ_g(B, c) J_g J̄_h dc`.
/// Both fibre draws use the same standard normals, so at `g = e` the two
/// estimators coincide path by path.
pub fn weighted_translation_check<E, F, S>(
    exec: &E,
    form: &SkewForm,
    f: &F,
    psi: &S,
    g: &GroupElement,
    horizon: f64,
    mc: McConfig,
) -> Result<IdentityCheck>
where
    E: Executor + ?Sized,
    F: CylinderFunction + ?Sized,
    S: ShiftableFunctional + ?Sized,
{
    let t = element_as_tangent(g);
    t.check(form)?;
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let m = accumulate(exec, mc.n_paths, 2, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(fd) = draw_fibre(form, &p, &mut rng) else { return false };
        let base = GroupElement::new(p.terminal().to_vec(), fd.xi.clone());
        let Ok(moved) = group_mul(form, &base, g) else { return false };
        let Ok(w) = psi.eval(form, &p, &fd.xi) else { return false };
        out[0] = f.value(&moved.w, &moved.c) * w;
        let Ok(ps) = shift_path(&p, -1.0, &drift_path(grid, &g.w)) else { return false };
        let Ok(r) = rho(form, &ps) else { return false };
        let Ok(ch) = r.cholesky() else { return false };
        let zeta = ch.correlate(&fd.eta);
        let om = form.eval(p.terminal(), &g.w);
        let c: Vec<f64> = (0..form.dim_c()).map(|j| zeta[j] + g.c[j] + 0.5 * om[j]).collect();
        let Ok(wg) = psi.eval(form, &ps, &zeta) else { return false };
        out[1] = f.value(p.terminal(), &c) * wg * jbar(&g.w, p.terminal(), horizon);
        true
    });
    finish(m, mc)
}

/// Moments of `sup_{|ε| <= 1} J_{εg}(B, ξ) / J⁰(B, ξ)` raised to `p`, with
/// `ξ ~ N(0, ρ_T(B))`, over a symmetric grid of `n_grid` points.
pub fn sup_jg_moments<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    g: &TangentVector,
    horizon: f64,
    powers: &[f64],
    n_grid: usize,
    mc: McConfig,
) -> Result<Vec<McEstimate>> {
    g.check(form)?;
    if n_grid < 2 {
        return Err(invalid("the ε-grid needs at least two points"));
    }
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let k = powers.len();
    let m = accumulate(exec, mc.n_paths, k, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(fd) = draw_fibre(form, &p, &mut rng) else { return false };
        let Ok(base) = log_j0_density(form, &p, &fd.xi) else { return false };
        let mut best = f64::NEG_INFINITY;
        for s in 0..n_grid {
            let e = -1.0 + 2.0 * s as f64 / (n_grid - 1) as f64;
            let Ok((ps, cs)) = shift_args(form, &g.scaled(e), &p, &fd.xi) else { return false };
            let Ok(l) = log_j0_density(form, &ps, &cs) else { return false };
            best = best.max(l);
        }
        for (o, &pw) in out.iter_mut().zip(powers) {
            *o = libm::exp(pw * best - base);
        }
        true
    });
    if m.count() as usize != mc.n_paths {
        return Err(Error::DegeneratePath { pivot: 0.0, threshold: 0.0 });
    }
    Ok((0..k).map(|j| m.estimate(j, mc.n_steps, mc.seed)).collect())
}

fn check_orders(xs: &[TangentVector], form: &SkewForm, max: usize) -> Result<()> {
    if xs.is_empty() || xs.len() > max {
        return Err(invalid("unsupported number of vector fields"));
    }
    for x in xs {
        x.check(form)?;
    }
    Ok(())
}

/// `X~_1 ... X~_m F` (`sign = 1`) or `X^_1 ... X^_m F` (`sign = -1`) at `g`, for `m <= 2`.
pub fn iterated_field<F: CylinderFunction + ?Sized>(
    form: &SkewForm,
    xs: &[TangentVector],
    f: &F,
    g: &GroupElement,
    sign: f64,
) -> Result<f64> {
    check_orders(xs, form, 2)?;
    let n = form.dim_w();
    let d = form.dim_c();
    let dir = |x: &TangentVector| -> Vec<f64> {
        let om = form.eval(&g.w, &x.h);
        let mut v = x.h.clone();
        v.extend((0..d).map(|j| x.z[j] + 0.5 * sign * om[j]));
        v
    };
    let mut gx = vec![0.0; n];
    let mut gc = vec![0.0; d];
    f.gradient(&g.w, &g.c, &mut gx, &mut gc);
    match xs {
        [x] => {
            let v = dir(x);
            Ok(dot(&gx, &v[..n]) + dot(&gc, &v[n..]))
        }
        [x1, x2] => {
            let hess = f.hessian(&g.w, &g.c).ok_or_else(|| invalid("second-order fields need a Hessian"))?;
            let (v1, v2) = (dir(x1), dir(x2));
            let om12 = form.eval(&x1.h, &x2.h);
            Ok(dot(&v1, &hess.matvec(&v2)) + 0.5 * sign * dot(&gc, &om12))
        }
        _ => unreachable!(),
    }
}

/// `ψ^{X_m, ..., X_1} = X~*_m ... X~*_1 1` as a symbolic functional.
pub fn psi_functional(xs: &[TangentVector]) -> PolynomialFunctional {
    PolynomialFunctional::psi(xs.to_vec())
}

/// `E[X~_1 ... X~_m F(g_T)]` against `E[F(B_T, ξ) ψ(B, ξ)]`, `ξ ~ N(0, ρ_T(B))`.
pub fn ibp_check<E, F>(
    exec: &E,
    form: &SkewForm,
    xs: &[TangentVector],
    f: &F,
    horizon: f64,
    mc: McConfig,
) -> Result<IdentityCheck>
where
    E: Executor + ?Sized,
    F: CylinderFunction + ?Sized,
{
    ibp_impl(exec, form, xs, f, horizon, mc, 1.0)
}

/// `E[X^_1 ... X^_m F(g_T)]` against `(-1)^m E[F(g_T) ψ(g_T^{-1})]`, the latter
/// sampled as `(-1)^m E[F((B_T, ξ)^{-1}) ψ(B, ξ)]`.
pub fn right_ibp_check<E, F>(
    exec: &E,
    form: &SkewForm,
    xs: &[TangentVector],
    f: &F,
    horizon: f64,
    mc: McConfig,
) -> Result<IdentityCheck>
where
    E: Executor + ?Sized,
    F: CylinderFunction + ?Sized,
{
    ibp_impl(exec, form, xs, f, horizon, mc, -1.0)
}

fn ibp_impl<E, F>(
    exec: &E,
    form: &SkewForm,
    xs: &[TangentVector],
    f: &F,
    horizon: f64,
    mc: McConfig,
    sign: f64,
) -> Result<IdentityCheck>
where
    E: Executor + ?Sized,
    F: CylinderFunction + ?Sized,
{
    check_orders(xs, form, 2)?;
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let psi = psi_functional(xs);
    let parity = if sign < 0.0 && xs.len() % 2 == 1 { -1.0 } else { 1.0 };
    let probe = GroupElement::identity(form);
    iterated_field(form, xs, f, &probe, sign)?;
    let m = accumulate(exec, mc.n_paths, 2, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(z) = levy_z(form, &p) else { return false };
        let gt = GroupElement::new(p.terminal().to_vec(), z);
        let Ok(lhs) = iterated_field(form, xs, f, &gt, sign) else { return false };
        out[0] = lhs;
        let Ok(fd) = draw_fibre(form, &p, &mut rng) else { return false };
        let Ok(ctx) = EvalContext::new(form, psi.directions(), &p, &fd.xi) else { return false };
        let w = psi.eval_in(&ctx);
        let fv = if sign > 0.0 {
            f.value(p.terminal(), &fd.xi)
        } else {
            let inv = group_inv(&GroupElement::new(p.terminal().to_vec(), fd.xi.clone()));
            f.value(&inv.w, &inv.c)
        };
        out[1] = parity * fv * w;
        true
    });
    finish(m, mc)
}

/// Mean of `ψ(g_T)` under `ν_T`, sampled as `E[ψ(B, ξ)]`.
pub fn psi_mean<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    xs: &[TangentVector],
    horizon: f64,
    mc: McConfig,
) -> Result<McEstimate> {
    check_orders(xs, form, 3)?;
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let psi = psi_functional(xs);
    let m = accumulate(exec, mc.n_paths, 1, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(fd) = draw_fibre(form, &p, &mut rng) else { return false };
        let Ok(v) = psi.eval(form, &p, &fd.xi) else { return false };
        out[0] = v;
        true
    });
    if m.count() as usize != mc.n_paths {
        return Err(Error::DegeneratePath { pivot: 0.0, threshold: 0.0 });
    }
    Ok(m.estimate(0, mc.n_steps, mc.seed))
}

/// `ψ^{X_m..X_1}(x, c) = E[ψ(B, c) J⁰(B, c) | B_T = x] / γ_T(x, c)` by bridge
/// Monte Carlo, as a ratio estimator with a delta-method standard error.
/// At most three vector fields are accepted.
pub fn psi_estimate<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    xs: &[TangentVector],
    x: &[f64],
    c: &[f64],
    horizon: f64,
    mc: McConfig,
) -> Result<McEstimate> {
    check_orders(xs, form, 3)?;
    if x.len() != form.dim_w() || c.len() != form.dim_c() {
        return Err(Error::Dimension { expected: form.dim_w(), got: x.len() });
    }
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let psi = psi_functional(xs);
    let m = accumulate(exec, mc.n_paths, 2, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let Ok(p) = sample_bridge_with(grid, form.dim_w(), x, &mut rng) else { return false };
        let Ok(j) = j0_density(form, &p, c) else { return false };
        let Ok(v) = psi.eval(form, &p, c) else { return false };
        out[0] = v * j;
        out[1] = j;
        true
    });
    if m.count() as usize != mc.n_paths {
        return Err(Error::DegeneratePath { pivot: 0.0, threshold: 0.0 });
    }
    let r = m.mean(0) / m.mean(1);
    let var = m.variance(0) - 2.0 * r * m.covariance(0, 1) + r * r * m.variance(1);
    let se = libm::sqrt(var.max(0.0) / m.count() as f64) / m.mean(1).abs();
    Ok(McEstimate { mean: r, std_error: se, n_samples: m.count(), n_steps: mc.n_steps, seed: mc.seed })
}

/// Central differences of one analytic derivative on a shrinking ε-ladder.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderCheck {
    pub name: &'static str,
    pub eps: Vec<f64>,
    pub errors: Vec<f64>,
    /// Slope of `log error` against `log ε`; infinite when the difference
    /// quotient is exact to rounding at every rung.
    pub order: f64,
}

fn observed_order(eps: &[f64], errors: &[f64], scale: f64) -> f64 {
    if errors.iter().all(|e| *e <= 1e-11 * (1.0 + scale)) {
        return f64::INFINITY;
    }
    let x: Vec<f64> = eps.iter().map(|e| libm::log(*e)).collect();
    let y: Vec<f64> = errors.iter().map(|e| libm::log(e.max(f64::MIN_POSITIVE))).collect();
    linear_fit(&x, &y).map_or(f64::NAN, |f| f.slope)
}

fn ladder_check(
    name: &'static str,
    ladder: &[f64],
    analytic: &[f64],
    at: impl Fn(f64) -> Result<Vec<f64>>,
) -> Result<OrderCheck> {
    let mut errors = Vec::with_capacity(ladder.len());
    for &e in ladder {
        let (a, b) = (at(e)?, at(-e)?);
        let err =
            a.iter().zip(&b).zip(analytic).map(|((u, v), d)| libm::fabs((u - v) / (2.0 * e) - d)).fold(0.0, f64::max);
        errors.push(err);
    }
    let scale = analytic.iter().fold(0.0_f64, |m, v| m.max(libm::fabs(*v)));
    Ok(OrderCheck { name, eps: ladder.to_vec(), order: observed_order(ladder, &errors, scale), errors })
}

/// `xtilde_log_j0`, `rho_inverse_derivative` and `det_rho_derivative`
/// against central differences of the shifted quantities at one `(B, c)`.
pub fn derivative_orders(
    form: &SkewForm,
    x: &TangentVector,
    p: &SampledPath,
    c: &[f64],
    ladder: &[f64],
) -> Result<Vec<OrderCheck>> {
    if ladder.len() < 2 || ladder.iter().any(|e| *e <= 0.0) {
        return Err(invalid("the ε-ladder needs at least two positive steps"));
    }
    let shifted = |e: f64| shift_args(form, &x.scaled(e), p, c);
    let log_j0 = ladder_check("xtilde_log_j0", ladder, &[xtilde_log_j0(form, x, p, c)?], |e| {
        let (q, cs) = shifted(e)?;
        Ok(vec![log_j0_density(form, &q, &cs)?])
    })?;
    let inv = ladder_check("rho_inverse_derivative", ladder, rho_inverse_derivative(form, &x.h, p)?.as_slice(), |e| {
        Ok(rho(form, &shifted(e)?.0)?.cholesky()?.inverse().as_slice().to_vec())
    })?;
    let det = ladder_check("det_rho_derivative", ladder, &[det_rho_derivative(form, &x.h, p)?], |e| {
        Ok(vec![libm::exp(-0.5 * rho(form, &shifted(e)?.0)?.cholesky()?.log_det())])
    })?;
    Ok(vec![log_j0, inv, det])
}

/// Boxed functional, for registries keyed by name.
pub type DynFunctional = Box<dyn ShiftableFunctional + Send>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::FiniteDifference;
    use crate::path::sample_bm;

    fn path(form: &SkewForm, seed: u64) -> SampledPath {
        sample_bm(TimeGrid::new(1.0, 128).unwrap(), form.dim_w(), RngStream::new(seed, 0))
    }

    #[test]
    fn jbar_values() {
        assert_eq!(jbar(&[0.0, 0.0], &[1.0, 2.0], 1.0), 1.0);
        assert!((jbar(&[1.0, 0.0], &[1.0, 0.0], 2.0) - libm::exp(0.25)).abs() < 1e-15);
    }

    #[test]
    fn jg_at_identity_and_inverse_shift() {
        let form = SkewForm::h3();
        let p = path(&form, 1);
        let e = TangentVector::new(vec![0.0; 2], vec![0.0]);
        assert_eq!(jg(&form, &e, &p, &[0.2]).unwrap(), j0_density(&form, &p, &[0.2]).unwrap());
        let g = TangentVector::new(vec![0.7, -0.4], vec![0.3]);
        // Shift (p, c) forward by g, then evaluate J_g: recovers J⁰(p, c).
        let fwd = shift_path(&p, 1.0, &drift_path(p.grid(), &g.h)).unwrap();
        let om = form.eval(fwd.terminal(), &g.h);
        let c = [0.25];
        let cf = [c[0] + g.z[0] + 0.5 * om[0]];
        let v = jg(&form, &g, &fwd, &cf).unwrap();
        assert!((v - j0_density(&form, &p, &c).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn shifts_compose_as_group_product() {
        let form = SkewForm::free_step_two(3);
        let p = path(&form, 2);
        let c = vec![0.1, 0.2, -0.3];
        let psi = FnFunctional(|f: &SkewForm, q: &SampledPath, c: &[f64]| {
            let z = levy_z(f, q)?;
            Ok(libm::sin(dot(&z, c)) + q.terminal()[0] * c[1] + rho(f, q)?.entries.trace())
        });
        let g1 = TangentVector::new(vec![0.3, -0.5, 0.2], vec![0.1, 0.4, -0.2]);
        let g2 = TangentVector::new(vec![-0.1, 0.6, 0.25], vec![0.3, -0.1, 0.05]);
        let (p1, c1) = shift_args(&form, &g1, &p, &c).unwrap();
        let twice = psi.shifted(&form, &g2, &p1, &c1).unwrap();
        let prod = group_mul(&form, &g2.as_element(), &g1.as_element()).unwrap();
        let once = psi.shifted(&form, &TangentVector::new(prod.w, prod.c), &p, &c).unwrap();
        assert!((twice - once).abs() < 1e-10, "{twice} {once}");
        let e = TangentVector::new(vec![0.0; 3], vec![0.0; 3]);
        assert_eq!(psi.shifted(&form, &e, &p, &c).unwrap(), psi.eval(&form, &p, &c).unwrap());
    }

    #[test]
    fn numeric_and_symbolic_xtilde_agree() {
        let form = SkewForm::free_step_two(3);
        let p = path(&form, 3);
        let c = vec![0.05, -0.1, 0.2];
        let x = TangentVector::new(vec![0.3, 0.1, -0.4], vec![0.2, 0.0, 0.1]);
        let poly = PolynomialFunctional::rho_inv_quadratic(Vec::new());
        let exact = poly.xtilde(&form, &x, &p, &c).unwrap().unwrap();
        let num = xtilde_numeric(&poly, &form, &x, &p, &c).unwrap();
        assert!((exact - num).abs() < 1e-7 * (1.0 + exact.abs()));
        let one = FnFunctional(|_: &SkewForm, _: &SampledPath, _: &[f64]| Ok(1.0));
        let s = xstar_apply(&form, &x, &one, &p, &c).unwrap();
        let w = xtilde_log_j0(&form, &x, &p, &c).unwrap() + dot(&x.h, p.terminal());
        assert!((s - w).abs() < 1e-12);
    }

    #[test]
    fn rho_inverse_rule_and_det_rule() {
        for form in [SkewForm::h3(), SkewForm::free_step_two(3)] {
            let p = path(&form, 4);
            let h: Vec<f64> = (0..form.dim_w()).map(|i| 0.3 - 0.2 * i as f64).collect();
            let x = TangentVector::new(h.clone(), vec![0.0; form.dim_c()]);
            let d = form.dim_c();
            let analytic = rho_inverse_derivative(&form, &h, &p).unwrap();
            for a in 0..d {
                for b in 0..d {
                    let entry = FnFunctional(move |f: &SkewForm, q: &SampledPath, _: &[f64]| {
                        Ok(rho(f, q)?.cholesky()?.inverse()[(a, b)])
                    });
                    let num = xtilde_numeric(&entry, &form, &x, &p, &vec![0.0; d]).unwrap();
                    assert!((num - analytic[(a, b)]).abs() < 1e-6 * (1.0 + num.abs()));
                }
            }
            let det = FnFunctional(|f: &SkewForm, q: &SampledPath, _: &[f64]| {
                Ok(libm::exp(-0.5 * rho(f, q)?.cholesky()?.log_det()))
            });
            let num = xtilde_numeric(&det, &form, &x, &p, &vec![0.0; d]).unwrap();
            let an = det_rho_derivative(&form, &h, &p).unwrap();
            assert!((num - an).abs() < 1e-6 * (1.0 + an.abs()));
        }
    }

    #[test]
    fn hat_field_is_conjugated_tilde_field() {
        let form = SkewForm::h3();
        let f = FiniteDifference::new(
            |x: &[f64], c: &[f64]| libm::sin(x[0] - 0.3 * x[1] + 0.8 * c[0]) * libm::exp(-0.1 * c[0] * c[0]),
            (1.0, 0.0),
        );
        let u = Inverted(&f);
        let x = TangentVector::new(vec![0.4, -0.2], vec![0.3]);
        let g = GroupElement::new(vec![0.5, 1.1], vec![-0.7]);
        let hat = iterated_field(&form, core::slice::from_ref(&x), &f, &g, -1.0).unwrap();
        let tilde_u = iterated_field(&form, core::slice::from_ref(&x), &u, &group_inv(&g), 1.0).unwrap();
        assert!((hat + tilde_u).abs() < 1e-8);
    }

    #[test]
    fn orders_are_guarded() {
        let form = SkewForm::h3();
        let x = TangentVector::new(vec![1.0, 0.0], vec![0.0]);
        let mc = McConfig::new(4, 4, 1);
        let f = FiniteDifference::new(|_: &[f64], c: &[f64]| c[0], (1.0, 1.0));
        let xs = vec![x.clone(); 3];
        assert!(ibp_check(&crate::mc::Sequential, &form, &xs, &f, 1.0, mc).is_err());
        let xs4 = vec![x; 4];
        assert!(psi_estimate(&crate::mc::Sequential, &form, &xs4, &[0.0, 0.0], &[0.0], 1.0, mc).is_err());
    }

    #[test]
    fn derivative_rules_converge_at_second_order() {
        let form = SkewForm::free_step_two(3);
        let p = path(&form, 9);
        let x = TangentVector::new(vec![0.4, -0.3, 0.2], vec![0.1, 0.0, -0.2]);
        let checks = derivative_orders(&form, &x, &p, &[0.05, -0.1, 0.2], &[0.08, 0.04, 0.02, 0.01]).unwrap();
        assert_eq!(checks.len(), 3);
        for ch in &checks {
            assert!(ch.order >= 1.9, "{} {:?}", ch.name, ch.errors);
        }
        assert!(derivative_orders(&form, &x, &p, &[0.0; 3], &[0.1]).is_err());
    }
}
