//! Empirical small-ball probabilities, tails of `ρ_T` and `ρ_T^{-1}`, and
//! exponential moments of the heat kernel.
//!
//! Every probability carries a Wilson interval at [`CI_Z`] standard errors,
//! and every bound verdict is taken at the upper edge of that interval.
//! Constants the theory leaves unspecified (`K₀`) are calibrated from the
//! same data, so those audits test the exponential shape only.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::group::SkewForm;
use crate::linalg::{dot, Mat, SymEigen};
use crate::mc::{accumulate, collect, Executor, McConfig};
use crate::path::{drift_path, sample_bm_with, SampledPath, TimeGrid};
use crate::quadratics::{levy_z, quadratic_energy, rho_matrix};
use crate::rng::{tag, RngStream};
use crate::stats::{linear_fit, wilson_interval, LinearFit, McEstimate};

pub const CI_Z: f64 = 3.0;

/// Events with fewer hits than this are treated as unresolved.
pub const MIN_COUNT: u64 = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailPoint {
    pub threshold: f64,
    pub successes: u64,
    pub p_hat: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub bound: Option<f64>,
}

impl TailPoint {
    fn new(threshold: f64, successes: u64, n: u64) -> Self {
        let (ci_low, ci_high) = wilson_interval(successes, n, CI_Z);
        TailPoint { threshold, successes, p_hat: successes as f64 / n as f64, ci_low, ci_high, bound: None }
    }

    pub fn resolved(&self) -> bool {
        self.successes >= MIN_COUNT
    }

    /// Upper CI edge at or below the bound (vacuous without a bound).
    pub fn respects_bound(&self) -> bool {
        self.bound.is_none_or(|b| self.ci_high <= b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailReport {
    pub name: String,
    pub points: Vec<TailPoint>,
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub fit: Option<LinearFit>,
    /// Named scalars: calibrated constants, fitted rates, reference values.
    pub parameters: Vec<(String, f64)>,
    pub verdicts: Vec<Verdict>,
}

impl TailReport {
    fn new(name: &str, points: Vec<TailPoint>, mc: McConfig) -> Self {
        TailReport {
            name: name.into(),
            points,
            n_paths: mc.n_paths,
            n_steps: mc.n_steps,
            seed: mc.seed,
            fit: None,
            parameters: Vec::new(),
            verdicts: Vec::new(),
        }
    }

    fn param(&mut self, name: &str, v: f64) {
        self.parameters.push((name.into(), v));
    }

    fn verdict(&mut self, name: &str, pass: bool) {
        self.verdicts.push(Verdict { name: name.into(), pass });
    }

    pub fn parameter(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict_of(&self, name: &str) -> Option<bool> {
        self.verdicts.iter().find(|v| v.name == name).map(|v| v.pass)
    }
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite() || *v <= 0.0) {
        return Err(invalid("thresholds must be positive and finite"));
    }
    Ok(())
}

/// Points for `{stat < ε}` over a grid, counted on shared samples.
fn below_points(stats: &[f64], grid: &[f64]) -> Vec<TailPoint> {
    let n = stats.len() as u64;
    grid.iter().map(|&e| TailPoint::new(e, stats.iter().filter(|&&s| s < e).count() as u64, n)).collect()
}

fn above_points(stats: &[f64], grid: &[f64]) -> Vec<TailPoint> {
    let n = stats.len() as u64;
    grid.iter().map(|&r| TailPoint::new(r, stats.iter().filter(|&&s| s > r).count() as u64, n)).collect()
}

/// `K̂ = max over resolved points of ci_high / shape(t)`; sets `bound = K̂ shape(t)`.
fn calibrate(points: &mut [TailPoint], shape: impl Fn(f64) -> f64) -> f64 {
    let k = points.iter().filter(|p| p.resolved()).map(|p| p.ci_high / shape(p.threshold)).fold(0.0, f64::max);
    for p in points.iter_mut() {
        p.bound = Some(k * shape(p.threshold));
    }
    k
}

/// `log p̂ = a + s/ε` over resolved points; `s` tends to the small-ball rate.
fn small_ball_fit(points: &[TailPoint]) -> Option<LinearFit> {
    let (x, y): (Vec<f64>, Vec<f64>) = points
        .iter()
        .filter(|p| p.resolved() && p.p_hat < 1.0)
        .map(|p| (1.0 / p.threshold, libm::log(p.p_hat)))
        .unzip();
    linear_fit(&x, &y)
}

fn energies<E: Executor + ?Sized>(exec: &E, a: &Mat, horizon: f64, mc: McConfig) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let n = a.rows();
    collect(exec, mc.n_paths, |i| {
        let p = sample_bm_with(grid, n, &mut RngStream::new(mc.seed, tag::PRIMARY + i).generator());
        quadratic_energy(a, &p)
    })
    .into_iter()
    .collect()
}

/// `P(∫_0^T b_t^2 dt < ε)` for a one-dimensional Brownian motion.
pub fn small_ball_1d<E: Executor + ?Sized>(
    exec: &E,
    horizon: f64,
    eps_grid: &[f64],
    mc: McConfig,
) -> Result<TailReport> {
    check_grid(eps_grid)?;
    let stats = energies(exec, &Mat::identity(1), horizon, mc)?;
    let mut points = below_points(&stats, eps_grid);
    let k0 = calibrate(&mut points, |e| libm::exp(-horizon * horizon / (4.0 * e)));
    let fit = small_ball_fit(&points);
    let mut report = TailReport::new("small_ball_1d", points, mc);
    report.param("k0_calibrated", k0);
    report.param("asymptotic_rate", -horizon * horizon / 8.0);
    if let Some(f) = fit {
        report.param("fitted_rate", f.slope);
        report.verdict("fitted_rate_in_range", (-0.20..=-0.08).contains(&(f.slope / (horizon * horizon))));
    } else {
        report.verdict("fitted_rate_in_range", false);
    }
    // p̂ e^{1/(4ε)} should not grow as ε shrinks if a single K₀ serves all ε.
    let pref: Vec<f64> = report
        .points
        .iter()
        .filter(|p| p.resolved())
        .map(|p| p.p_hat * libm::exp(horizon * horizon / (4.0 * p.threshold)))
        .collect();
    let growing = pref.len() >= 2 && pref.first() > pref.last();
    report.param("prefactor_grows_as_eps_shrinks", if growing { 1.0 } else { 0.0 });
    let bound_ok = report.points.iter().all(TailPoint::respects_bound);
    report.verdict("calibrated_bound", bound_ok);
    report.fit = fit;
    Ok(report)
}

/// Top right singular pair of `a`: `(‖a‖_op, u)` with `|a u| = ‖a‖_op`.
fn top_singular(a: &Mat) -> (f64, Vec<f64>) {
    let eig = SymEigen::new(&a.transpose().matmul(a));
    (libm::sqrt(eig.values[0].max(0.0)), eig.vectors.column(0))
}

/// `P(∫_0^T |A B_t|^2 dt < ε)` with the calibrated bound `K₀ exp(-‖A‖²T²/(4ε))`
/// and the one-dimensional projection event `‖A‖² ∫ <B_t, u>^2 dt < ε` on the same paths.
pub fn small_ball_operator<E: Executor + ?Sized>(
    exec: &E,
    a: &Mat,
    horizon: f64,
    eps_grid: &[f64],
    mc: McConfig,
) -> Result<TailReport> {
    check_grid(eps_grid)?;
    if !a.is_square() {
        return Err(Error::Dimension { expected: a.rows(), got: a.cols() });
    }
    let (lambda, u) = top_singular(a);
    if lambda <= 0.0 {
        return Err(invalid("the zero operator has no small-ball decay"));
    }
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let n = a.rows();
    let pairs: Vec<(f64, f64)> = collect(exec, mc.n_paths, |i| {
        let p = sample_bm_with(grid, n, &mut RngStream::new(mc.seed, tag::PRIMARY + i).generator());
        let e = quadratic_energy(a, &p).unwrap_or(f64::NAN);
        let proj: f64 = (0..grid.n_steps())
            .map(|k| {
                let s = dot(p.row(k), &u);
                s * s
            })
            .sum::<f64>()
            * grid.dt();
        (e, lambda * lambda * proj)
    });
    let direct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let proj: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rate = lambda * lambda * horizon * horizon / 4.0;
    let mut points = below_points(&direct, eps_grid);
    let k0 = calibrate(&mut points, |e| libm::exp(-rate / e));
    let proj_points = below_points(&proj, eps_grid);
    let mut report = TailReport::new("small_ball_operator", points, mc);
    report.param("op_norm", lambda);
    report.param("k0_calibrated", k0);
    let dominated = report.points.iter().zip(&proj_points).all(|(d, q)| d.successes <= q.successes);
    report.verdict("projection_dominates", dominated);
    for q in &proj_points {
        report.param("projection_p_hat", q.p_hat);
    }
    report.fit = small_ball_fit(&report.points);
    let ok = report.points.iter().all(TailPoint::respects_bound);
    report.verdict("calibrated_bound", ok);
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PaOpReport {
    pub norm_a: f64,
    pub norm_pa: f64,
    pub norm_ap: f64,
    pub max_deviation: f64,
    pub pass: bool,
}

/// `‖PA‖ = ‖AP‖ = ‖A‖` for `P` the orthogonal projection onto `h0^⊥`.
/// A zero `h0` gives `P = I`.
pub fn pa_op_identity(a: &Mat, h0: &[f64]) -> Result<PaOpReport> {
    let residual = a.skew_residual();
    if residual > crate::group::SKEW_TOL {
        return Err(Error::NotSkew { index: 0, residual });
    }
    if h0.len() != a.rows() {
        return Err(Error::Dimension { expected: a.rows(), got: h0.len() });
    }
    let p = projection_off(h0);
    let norm_a = a.op_norm();
    let norm_pa = p.matmul(a).op_norm();
    let norm_ap = a.matmul(&p).op_norm();
    let max_deviation = (norm_pa - norm_a).abs().max((norm_ap - norm_a).abs());
    Ok(PaOpReport { norm_a, norm_pa, norm_ap, max_deviation, pass: max_deviation <= 1e-10 * norm_a.max(1.0) })
}

fn projection_off(v: &[f64]) -> Mat {
    let n = v.len();
    let nv = libm::sqrt(dot(v, v));
    if nv == 0.0 {
        return Mat::identity(n);
    }
    Mat::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 } - v[i] * v[j] / (nv * nv))
}

/// `P(min_α ∫_0^T |A(B_t + α t h0 / T)|^2 dt < ε)` over `alpha_grid`, and the
/// surrogate `∫ |P A B_t|^2 dt` with `P` projecting off `A h0`, which is
/// pathwise no larger. The calibrated bound is audited on the surrogate.
pub fn perturbed_small_ball<E: Executor + ?Sized>(
    exec: &E,
    a: &Mat,
    h0: &[f64],
    horizon: f64,
    eps_grid: &[f64],
    alpha_grid: &[f64],
    mc: McConfig,
) -> Result<TailReport> {
    check_grid(eps_grid)?;
    if alpha_grid.is_empty() {
        return Err(invalid("empty α-grid"));
    }
    if h0.len() != a.rows() {
        return Err(Error::Dimension { expected: a.rows(), got: h0.len() });
    }
    let residual = a.skew_residual();
    if residual > crate::group::SKEW_TOL {
        return Err(Error::NotSkew { index: 0, residual });
    }
    let lambda = a.op_norm();
    if lambda <= 0.0 {
        return Err(invalid("the zero operator has no small-ball decay"));
    }
    let pa = projection_off(&a.matvec(h0)).matmul(a);
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let n = a.rows();
    let drift = drift_path(grid, h0);
    let pairs: Vec<(f64, f64)> = collect(exec, mc.n_paths, |i| {
        let p = sample_bm_with(grid, n, &mut RngStream::new(mc.seed, tag::PRIMARY + i).generator());
        let (mut e0, mut cross, mut dd) = (0.0, 0.0, 0.0);
        let mut ab = vec![0.0; n];
        let mut ah = vec![0.0; n];
        for k in 0..grid.n_steps() {
            a.matvec_into(p.row(k), &mut ab);
            a.matvec_into(drift.row(k), &mut ah);
            e0 += dot(&ab, &ab);
            cross += dot(&ab, &ah);
            dd += dot(&ah, &ah);
        }
        let dt = grid.dt();
        let direct =
            alpha_grid.iter().map(|&al| (e0 + 2.0 * al * cross + al * al * dd) * dt).fold(f64::INFINITY, f64::min);
        (direct, quadratic_energy(&pa, &p).unwrap_or(f64::NAN))
    });
    let direct: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let surrogate: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let rate = lambda * lambda * horizon * horizon / 4.0;
    let mut points = below_points(&surrogate, eps_grid);
    let k0 = calibrate(&mut points, |e| libm::exp(-rate / e));
    let direct_points = below_points(&direct, eps_grid);
    let mut report = TailReport::new("perturbed_small_ball", points, mc);
    report.param("op_norm", lambda);
    report.param("op_norm_projected", pa.op_norm());
    report.param("k0_calibrated", k0);
    let contains = direct_points.iter().zip(&report.points).all(|(d, s)| d.successes <= s.successes);
    report.verdict("surrogate_contains_direct", contains);
    for d in &direct_points {
        report.param("direct_p_hat", d.p_hat);
    }
    let ok = report.points.iter().all(TailPoint::respects_bound);
    report.verdict("calibrated_bound", ok);
    Ok(report)
}

/// `ρ_T(B + α𝐡)` from `ρ(B)`, `ρ(B, 𝐡)` and `ρ(𝐡)`.
fn rho_family(form: &SkewForm, p: &SampledPath, h: &[f64]) -> Result<(Mat, Mat, Mat)> {
    let d = drift_path(p.grid(), h);
    let r = rho_matrix(form, p, p)?.entries;
    let m = rho_matrix(form, p, &d)?.entries;
    let dd = rho_matrix(form, &d, &d)?.entries;
    Ok((r, m.add(&m.transpose()), dd))
}

fn alpha_nodes(alpha0: f64, n: usize) -> Vec<f64> {
    if n <= 1 || alpha0 == 0.0 {
        return vec![0.0];
    }
    (0..n).map(|i| -alpha0 + 2.0 * alpha0 * i as f64 / (n - 1) as f64).collect()
}

fn sup_rho_inverse(fam: &(Mat, Mat, Mat), alphas: &[f64]) -> f64 {
    alphas
        .iter()
        .map(|&al| {
            let m = fam.0.add(&fam.1.scale(al)).add(&fam.2.scale(al * al));
            let low = SymEigen::new(&m).values.last().copied().unwrap_or(0.0);
            if low > 0.0 {
                1.0 / low
            } else {
                f64::INFINITY
            }
        })
        .fold(0.0, f64::max)
}

/// `P(max_α ‖ρ_T(B + α𝐡)^{-1}‖_op > r)` over `n_alpha` equally spaced `α ∈ [-α0, α0]`,
/// with a fit of `log p̂` against `r` over the resolved points.
#[allow(clippy::too_many_arguments)]
pub fn rho_inverse_tail<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    r_grid: &[f64],
    alpha0: f64,
    h: &[f64],
    n_alpha: usize,
    mc: McConfig,
) -> Result<TailReport> {
    check_grid(r_grid)?;
    if h.len() != form.dim_w() {
        return Err(Error::Dimension { expected: form.dim_w(), got: h.len() });
    }
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let alphas = alpha_nodes(alpha0, n_alpha);
    let stats: Vec<f64> = collect(exec, mc.n_paths, |i| {
        let p = sample_bm_with(grid, form.dim_w(), &mut RngStream::new(mc.seed, tag::PRIMARY + i).generator());
        rho_family(form, &p, h).map(|f| sup_rho_inverse(&f, &alphas)).unwrap_or(f64::INFINITY)
    });
    let points = above_points(&stats, r_grid);
    let (x, y): (Vec<f64>, Vec<f64>) =
        points.iter().filter(|p| p.resolved() && p.p_hat < 1.0).map(|p| (p.threshold, libm::log(p.p_hat))).unzip();
    let fit = linear_fit(&x, &y);
    let mut report = TailReport::new("rho_inverse_tail", points, mc);
    report.param("alpha0", alpha0);
    report.param("n_alpha", alphas.len() as f64);
    match fit {
        Some(f) => {
            report.param("fitted_decay", f.slope);
            report.param("r_squared", f.r_squared);
            report.verdict("log_linear_decay", f.slope < 0.0 && f.r_squared > 0.9);
        }
        None => report.verdict("log_linear_decay", false),
    }
    report.fit = fit;
    Ok(report)
}

/// Moments `E[max_α ‖ρ_T(B + α𝐡)^{-1}‖^p]` on a coarse and a refined α-grid.
#[derive(Clone, Debug, PartialEq)]
pub struct GridMoments {
    pub powers: Vec<f64>,
    pub coarse: Vec<McEstimate>,
    pub fine: Vec<McEstimate>,
    /// Refinement changed each moment by less than one standard error.
    pub stable: Vec<bool>,
}

#[allow(clippy::too_many_arguments)]
pub fn rho_inverse_moments<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    alpha0: f64,
    h: &[f64],
    powers: &[f64],
    (n_coarse, n_fine): (usize, usize),
    mc: McConfig,
) -> Result<GridMoments> {
    if h.len() != form.dim_w() {
        return Err(Error::Dimension { expected: form.dim_w(), got: h.len() });
    }
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let (ac, af) = (alpha_nodes(alpha0, n_coarse), alpha_nodes(alpha0, n_fine));
    let k = powers.len();
    let m = accumulate(exec, mc.n_paths, 2 * k, |i, out| {
        let p = sample_bm_with(grid, form.dim_w(), &mut RngStream::new(mc.seed, tag::PRIMARY + i).generator());
        let Ok(fam) = rho_family(form, &p, h) else { return false };
        let (sc, sf) = (sup_rho_inverse(&fam, &ac), sup_rho_inverse(&fam, &af));
        for (j, &pw) in powers.iter().enumerate() {
            out[j] = libm::pow(sc, pw);
            out[k + j] = libm::pow(sf, pw);
        }
        true
    });
    let coarse: Vec<McEstimate> = (0..k).map(|j| m.estimate(j, mc.n_steps, mc.seed)).collect();
    let fine: Vec<McEstimate> = (0..k).map(|j| m.estimate(k + j, mc.n_steps, mc.seed)).collect();
    let stable = coarse.iter().zip(&fine).map(|(c, f)| (f.mean - c.mean).abs() < f.std_error).collect();
    Ok(GridMoments { powers: powers.to_vec(), coarse, fine, stable })
}

/// `(e^{-1/2}/2) v^{-1/2}`, the rate for a second-order chaos with `E‖ρ - Eρ‖² = v`.
pub fn chaos_rate(v: f64) -> f64 {
    0.5 * libm::exp(-0.5) / libm::sqrt(v)
}

/// `(e^{-1/2}/2) v^{-1}`, the same expression with the exponent as printed in the proof.
pub fn chaos_rate_as_printed(v: f64) -> f64 {
    0.5 * libm::exp(-0.5) / v
}

/// `P(‖ρ_T‖_op > r)` and the curve `(1/r) log p̂` against `-k̂/T²`, with
/// `k̂ = chaos_rate(E‖ρ_1 - Eρ_1‖²)` estimated from the same sample.
pub fn rho_norm_tail<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    r_grid: &[f64],
    mc: McConfig,
) -> Result<TailReport> {
    check_grid(r_grid)?;
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let mats: Vec<Mat> = collect(exec, mc.n_paths, |i| {
        let p = sample_bm_with(grid, form.dim_w(), &mut RngStream::new(mc.seed, tag::PRIMARY + i).generator());
        rho_matrix(form, &p, &p).map(|r| r.entries)
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let d = form.dim_c();
    let nf = mats.len() as f64;
    let mut mean = Mat::zeros(d, d);
    for m in &mats {
        mean = mean.add(m);
    }
    mean = mean.scale(1.0 / nf);
    let t4 = libm::pow(horizon, 4.0);
    let devs: Vec<f64> = mats
        .iter()
        .map(|m| {
            let s = m.sub(&mean).op_norm();
            s * s / t4
        })
        .collect();
    let v = devs.iter().sum::<f64>() / nf;
    let v_var = devs.iter().map(|x| (x - v) * (x - v)).sum::<f64>() / (nf - 1.0);
    let norms: Vec<f64> = mats.iter().map(Mat::op_norm).collect();
    let points = above_points(&norms, r_grid);
    let k_hat = chaos_rate(v);
    let k_printed = chaos_rate_as_printed(v);
    let target = -k_hat / (horizon * horizon);
    let mut report = TailReport::new("rho_norm_tail", points, mc);
    report.param("variance_estimate", v);
    report.param("variance_std_error", libm::sqrt(v_var / nf));
    report.param("k_hat", k_hat);
    report.param("k_hat_as_printed", k_printed);
    let last =
        report.points.iter().filter(|p| p.resolved()).max_by(|a, b| a.threshold.total_cmp(&b.threshold)).copied();
    match last {
        Some(p) => {
            let curve = libm::log(p.ci_high) / p.threshold;
            report.param("largest_resolved_r", p.threshold);
            report.param("curve_upper_at_largest_r", curve);
            report.verdict("curve_below_rate", curve <= target);
            report.param("printed_rate_respected", if curve <= -k_printed / (horizon * horizon) { 1.0 } else { 0.0 });
        }
        None => report.verdict("curve_below_rate", false),
    }
    report.verdict("k_hat_positive", k_hat > 0.0 && k_hat.is_finite());
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FerniqueEstimate {
    pub eps: f64,
    pub estimate: McEstimate,
    /// Largest single summand as a share of the total.
    pub max_share: f64,
    pub heavy_tailed: bool,
}

pub const HEAVY_TAIL_SHARE: f64 = 0.1;

fn fernique_summands<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    eps: f64,
    mc: McConfig,
    stream: u64,
) -> Result<Vec<f64>> {
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    collect(exec, mc.n_paths, |i| {
        let p = sample_bm_with(grid, form.dim_w(), &mut RngStream::new(mc.seed, stream + i).generator());
        let z = levy_z(form, &p)?;
        let b = p.terminal();
        Ok(libm::exp(eps / horizon * (dot(b, b) + libm::sqrt(dot(&z, &z)))))
    })
    .into_iter()
    .collect()
}

fn summarise(eps: f64, v: &[f64], mc: McConfig) -> FerniqueEstimate {
    let n = v.len() as f64;
    let total: f64 = v.iter().sum();
    let mean = total / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    let max_share = v.iter().copied().fold(0.0, f64::max) / total;
    FerniqueEstimate {
        eps,
        estimate: McEstimate {
            mean,
            std_error: libm::sqrt(var / n),
            n_samples: v.len() as u64,
            n_steps: mc.n_steps,
            seed: mc.seed,
        },
        max_share,
        heavy_tailed: max_share > HEAVY_TAIL_SHARE,
    }
}

/// `E exp((ε/T)(|B_T|² + |Z_T|))` with the heavy-tail diagnostic.
pub fn fernique_moment<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    eps: f64,
    mc: McConfig,
) -> Result<FerniqueEstimate> {
    if !(eps >= 0.0) {
        return Err(invalid("ε must be non-negative"));
    }
    let v = fernique_summands(exec, form, horizon, eps, mc, tag::PRIMARY)?;
    Ok(summarise(eps, &v, mc))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FerniqueStability {
    pub base: FerniqueEstimate,
    pub doubled: FerniqueEstimate,
    pub gap_sigma: f64,
    pub stable: bool,
}

/// The estimate at `n` paths against the estimate at `2n` paths (the first
/// `n` shared). Their difference is half the difference of two independent
/// halves, which fixes its standard error.
pub fn fernique_doubling<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    eps: f64,
    mc: McConfig,
) -> Result<FerniqueStability> {
    let big = McConfig { n_paths: 2 * mc.n_paths, ..mc };
    let v = fernique_summands(exec, form, horizon, eps, big, tag::PRIMARY)?;
    let base = summarise(eps, &v[..mc.n_paths], mc);
    let second = summarise(eps, &v[mc.n_paths..], mc);
    let doubled = summarise(eps, &v, big);
    let gap_sigma = 0.5 * libm::hypot(base.estimate.std_error, second.estimate.std_error);
    let gap = (base.estimate.mean - doubled.estimate.mean).abs();
    let stable = gap <= 3.0 * gap_sigma && !doubled.heavy_tailed;
    Ok(FerniqueStability { base, doubled, gap_sigma, stable })
}

/// Doubling check on each `ε` of a ladder; returns the checks and the largest
/// `ε` up to which every rung is stable.
pub fn fernique_ladder<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    ladder: &[f64],
    mc: McConfig,
) -> Result<(Vec<FerniqueStability>, Option<f64>)> {
    let mut out = Vec::with_capacity(ladder.len());
    let mut sorted = ladder.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut largest = None;
    let mut broken = false;
    for &e in &sorted {
        let s = fernique_doubling(exec, form, horizon, e, mc)?;
        if s.stable && !broken {
            largest = Some(e);
        } else {
            broken = true;
        }
        out.push(s);
    }
    Ok((out, largest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::Sequential;

    #[test]
    fn pa_op_examples() {
        let j = SkewForm::h3().omega(0).clone();
        for h in [[1.0, 0.0], [0.3, -0.8], [0.0, 0.0]] {
            let r = pa_op_identity(&j, &h).unwrap();
            assert!(r.pass && (r.norm_a - 1.0).abs() < 1e-12);
        }
        // 4x4 with a two-dimensional kernel.
        let mut a = Mat::zeros(4, 4);
        a[(0, 1)] = 2.0;
        a[(1, 0)] = -2.0;
        for h in [[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0], [0.5, 0.5, 0.5, 0.5]] {
            let r = pa_op_identity(&a, &h).unwrap();
            assert!(r.pass, "{r:?}");
        }
        assert!(pa_op_identity(&Mat::identity(2), &[1.0, 0.0]).is_err());
    }

    #[test]
    fn rates() {
        // E(ρ - Eρ)^2 = 1/24 on the Heisenberg group at T = 1.
        assert!((chaos_rate(1.0 / 24.0) - 1.4857).abs() < 1e-4);
        assert!((chaos_rate_as_printed(1.0 / 24.0) - 7.27837).abs() < 1e-4);
    }

    #[test]
    fn fernique_at_zero_is_one() {
        let f = fernique_moment(&Sequential, &SkewForm::h3(), 1.0, 0.0, McConfig::new(64, 16, 1)).unwrap();
        assert_eq!(f.estimate.mean, 1.0);
        assert_eq!(f.estimate.std_error, 0.0);
    }

    #[test]
    fn monotone_on_shared_samples() {
        let mc = McConfig::new(2000, 64, 5);
        let grid = [0.05, 0.1, 0.2, 0.4, 1e9];
        let r = small_ball_1d(&Sequential, 1.0, &grid, mc).unwrap();
        assert!(r.points.windows(2).all(|w| w[0].successes <= w[1].successes));
        assert_eq!(r.points.last().unwrap().p_hat, 1.0);
        assert!(r.points.iter().all(|p| (0.0..=1.0).contains(&p.p_hat) && p.ci_low <= p.p_hat && p.p_hat <= p.ci_high));
    }

    #[test]
    fn zero_alpha_grid_matches_operator_small_ball() {
        let j = SkewForm::h3().omega(0).clone();
        let mc = McConfig::new(3000, 64, 8);
        let eps = [0.1, 0.2, 0.3];
        let a = small_ball_operator(&Sequential, &j, 1.0, &eps, mc).unwrap();
        let b = perturbed_small_ball(&Sequential, &j, &[1.0, 0.0], 1.0, &eps, &[0.0], mc).unwrap();
        let direct: Vec<f64> = b.parameters.iter().filter(|(n, _)| n == "direct_p_hat").map(|(_, v)| *v).collect();
        let plain: Vec<f64> = a.points.iter().map(|p| p.p_hat).collect();
        assert_eq!(direct, plain);
        assert_eq!(b.verdict_of("surrogate_contains_direct"), Some(true));
        assert!(small_ball_operator(&Sequential, &Mat::zeros(2, 2), 1.0, &eps, mc).is_err());
    }
}
