//! The heat kernel `ν_T = Law(g_T)`: the conditional Gaussian density `J⁰`,
//! sampling, the density `γ_T` by bridge Monte Carlo, and inversion symmetry.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::group::{group_inv, GroupElement, SkewForm};
use crate::linalg::{dot, norm, Cholesky};
use crate::mc::{accumulate, collect, Executor, McConfig};
use crate::oracles::conditional_levy_char;
use crate::path::{sample_bm_with, sample_bridge_with, SampledPath, TimeGrid};
use crate::quadratics::{levy_z, rho, RhoMatrix};
use crate::rng::{tag, RngStream, StreamRng};
use crate::stats::{ks_two_sample, McEstimate};

/// `log` of the `N(0, ρ)` density at `c`, given the Cholesky factor of `ρ`.
pub fn gaussian_log_density(ch: &Cholesky, c: &[f64]) -> f64 {
    let d = ch.dim() as f64;
    -0.5 * ch.inv_quad(c) - 0.5 * ch.log_det() - 0.5 * d * libm::log(2.0 * PI)
}

pub fn log_j0_density(form: &SkewForm, p: &SampledPath, c: &[f64]) -> Result<f64> {
    if c.len() != form.dim_c() {
        return Err(Error::Dimension { expected: form.dim_c(), got: c.len() });
    }
    let r = rho(form, p)?;
    Ok(gaussian_log_density(&r.cholesky()?, c))
}

/// `J⁰_T(p, c) = exp(-½ ρ_T(p)^{-1} c·c) / sqrt(det(2π ρ_T(p)))`.
pub fn j0_density(form: &SkewForm, p: &SampledPath, c: &[f64]) -> Result<f64> {
    Ok(libm::exp(log_j0_density(form, p, c)?))
}

/// A path with its `ρ_T`, its Cholesky factor and a fibre draw `ξ ~ N(0, ρ_T)`.
pub struct FibreDraw {
    pub rho: RhoMatrix,
    pub chol: Cholesky,
    /// The standard normals behind `xi`.
    pub eta: Vec<f64>,
    pub xi: Vec<f64>,
}

pub fn draw_fibre(form: &SkewForm, p: &SampledPath, rng: &mut StreamRng) -> Result<FibreDraw> {
    let r = rho(form, p)?;
    let chol = r.cholesky()?;
    let mut eta = vec![0.0; form.dim_c()];
    rng.fill_normal(&mut eta);
    let xi = chol.correlate(&eta);
    Ok(FibreDraw { rho: r, chol, eta, xi })
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeatKernelSample {
    pub g: GroupElement,
    pub rho: Option<RhoMatrix>,
}

/// Draw `g_T = (B_T, Z_T)` for path `index`.
pub fn sample_g(form: &SkewForm, grid: TimeGrid, seed: u64, index: u64) -> Result<(SampledPath, GroupElement)> {
    let p = sample_bm_with(grid, form.dim_w(), &mut RngStream::new(seed, index).generator());
    let z = levy_z(form, &p)?;
    let g = GroupElement::new(p.terminal().to_vec(), z);
    Ok((p, g))
}

pub fn sample_nu<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    mc: McConfig,
    keep_rho: bool,
) -> Result<Vec<HeatKernelSample>> {
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    collect(exec, mc.n_paths, |i| {
        let (p, g) = sample_g(form, grid, mc.seed, tag::PRIMARY + i)?;
        let rho = if keep_rho { Some(rho(form, &p)?) } else { None };
        Ok(HeatKernelSample { g, rho })
    })
    .into_iter()
    .collect()
}

fn require_all(n_done: u64, n_paths: usize) -> Result<()> {
    if n_done as usize != n_paths {
        return Err(Error::DegeneratePath { pivot: 0.0, threshold: 0.0 });
    }
    Ok(())
}

/// Bridge Monte Carlo of `γ_T(x, c) = E[J⁰_T(B, c) | B_T = x]`.
pub fn gamma_estimate<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    x: &[f64],
    c: &[f64],
    mc: McConfig,
) -> Result<McEstimate> {
    gamma_estimate_on(exec, form, horizon, x, c, mc, tag::PRIMARY)
}

/// [`gamma_estimate`] on the streams starting at `stream_base`, so that two
/// estimates can be made independent.
pub fn gamma_estimate_on<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    x: &[f64],
    c: &[f64],
    mc: McConfig,
    stream_base: u64,
) -> Result<McEstimate> {
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    if x.len() != form.dim_w() {
        return Err(Error::Dimension { expected: form.dim_w(), got: x.len() });
    }
    let m = accumulate(exec, mc.n_paths, 1, |i, out| {
        let mut rng = RngStream::new(mc.seed, stream_base + i).generator();
        let Ok(p) = sample_bridge_with(grid, form.dim_w(), x, &mut rng) else { return false };
        match j0_density(form, &p, c) {
            Ok(v) => {
                out[0] = v;
                true
            }
            Err(_) => false,
        }
    });
    require_all(m.count(), mc.n_paths)?;
    Ok(m.estimate(0, mc.n_steps, mc.seed))
}

/// `E[F(g_T)]` evaluated as `E ∫ F(B_T, c) J⁰_T(B, c) dc` with `c ~ N(0, ρ_T(B))`.
pub fn expect_via_j0<E, F>(exec: &E, form: &SkewForm, horizon: f64, f: F, mc: McConfig) -> Result<McEstimate>
where
    E: Executor + ?Sized,
    F: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let m = accumulate(exec, mc.n_paths, 1, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(fd) = draw_fibre(form, &p, &mut rng) else { return false };
        out[0] = f(p.terminal(), &fd.xi);
        true
    });
    require_all(m.count(), mc.n_paths)?;
    Ok(m.estimate(0, mc.n_steps, mc.seed))
}

/// Two estimators of one expectation on common paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedEstimate {
    pub lhs: McEstimate,
    pub rhs: McEstimate,
    pub gap: f64,
    pub gap_std_error: f64,
}

impl PairedEstimate {
    pub fn within(&self, k: f64, slack: f64) -> bool {
        self.gap.abs() <= k * self.gap_std_error + slack
    }
}

/// `E[F(B_T, Z_T)]` directly and through `J⁰` on the same paths.
pub fn j0_consistency<E, F>(exec: &E, form: &SkewForm, horizon: f64, f: F, mc: McConfig) -> Result<PairedEstimate>
where
    E: Executor + ?Sized,
    F: Fn(&[f64], &[f64]) -> f64 + Sync + Send,
{
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let m = accumulate(exec, mc.n_paths, 2, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(z) = levy_z(form, &p) else { return false };
        let Ok(fd) = draw_fibre(form, &p, &mut rng) else { return false };
        out[0] = f(p.terminal(), &z);
        out[1] = f(p.terminal(), &fd.xi);
        true
    });
    require_all(m.count(), mc.n_paths)?;
    Ok(PairedEstimate {
        lhs: m.estimate(0, mc.n_steps, mc.seed),
        rhs: m.estimate(1, mc.n_steps, mc.seed),
        gap: m.mean(0) - m.mean(1),
        gap_std_error: m.diff_std_error(0, 1),
    })
}

/// `E[cos(λ·Z_T)]` against `E[exp(-½ ρ_T λ·λ)]` on common paths. The sine
/// part of the characteristic function is returned separately.
pub fn char_function_check<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    lambda: &[f64],
    mc: McConfig,
) -> Result<(PairedEstimate, McEstimate)> {
    if lambda.len() != form.dim_c() {
        return Err(Error::Dimension { expected: form.dim_c(), got: lambda.len() });
    }
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let m = accumulate(exec, mc.n_paths, 3, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::PRIMARY + i).generator();
        let p = sample_bm_with(grid, form.dim_w(), &mut rng);
        let Ok(z) = levy_z(form, &p) else { return false };
        let Ok(r) = rho(form, &p) else { return false };
        let phase = dot(lambda, &z);
        out[0] = libm::cos(phase);
        out[1] = libm::exp(-0.5 * r.quad(lambda));
        out[2] = libm::sin(phase);
        true
    });
    Ok((
        PairedEstimate {
            lhs: m.estimate(0, mc.n_steps, mc.seed),
            rhs: m.estimate(1, mc.n_steps, mc.seed),
            gap: m.mean(0) - m.mean(1),
            gap_std_error: m.diff_std_error(0, 1),
        },
        m.estimate(2, mc.n_steps, mc.seed),
    ))
}

/// Comparison of the conditional characteristic function used by the
/// Heisenberg density oracle with bridge Monte Carlo.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleValidation {
    pub lambdas: Vec<f64>,
    pub oracle: Vec<f64>,
    pub bridge: Vec<McEstimate>,
    pub max_relative_deviation: f64,
    pub pass: bool,
}

/// Gate: every `|MC - Φ| / Φ` must be below 5%.
pub fn validate_gamma_oracle<E: Executor + ?Sized>(
    exec: &E,
    x: &[f64],
    horizon: f64,
    lambdas: &[f64],
    mc: McConfig,
) -> Result<OracleValidation> {
    let form = SkewForm::h3();
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let k = lambdas.len();
    let m = accumulate(exec, mc.n_paths, k, |i, out| {
        let mut rng = RngStream::new(mc.seed, tag::SECONDARY + i).generator();
        let Ok(p) = sample_bridge_with(grid, 2, x, &mut rng) else { return false };
        let z = levy_z(&form, &p).unwrap()[0];
        for (o, l) in out.iter_mut().zip(lambdas) {
            *o = libm::cos(l * z);
        }
        true
    });
    let oracle: Vec<f64> = lambdas.iter().map(|&l| conditional_levy_char(l, x, horizon)).collect();
    let bridge: Vec<McEstimate> = (0..k).map(|j| m.estimate(j, mc.n_steps, mc.seed)).collect();
    let max_relative_deviation =
        oracle.iter().zip(&bridge).map(|(o, b)| (b.mean - o).abs() / o.abs()).fold(0.0, f64::max);
    Ok(OracleValidation {
        lambdas: lambdas.to_vec(),
        oracle,
        bridge,
        max_relative_deviation,
        pass: max_relative_deviation < 0.05,
    })
}

/// One projection of the inversion battery.
#[derive(Clone, Debug, PartialEq)]
pub struct ProjectionTest {
    pub name: String,
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InversionReport {
    pub projections: Vec<ProjectionTest>,
    pub min_p_value: f64,
    /// All p-values above the 0.001 level.
    pub pass: bool,
}

pub const KS_LEVEL: f64 = 1e-3;

/// Seeded directions `(u, v)` for the mixed projection `<u, x> + v·c`.
pub fn projection_directions(form: &SkewForm, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = RngStream::new(seed, tag::CONTROL).generator();
    let mut u = vec![0.0; form.dim_w()];
    let mut v = vec![0.0; form.dim_c()];
    rng.fill_normal(&mut u);
    rng.fill_normal(&mut v);
    let (nu, nv) = (norm(&u), norm(&v));
    u.iter_mut().for_each(|x| *x /= nu);
    v.iter_mut().for_each(|x| *x /= nv);
    (u, v)
}

fn projections(form: &SkewForm, u: &[f64], v: &[f64], g: &GroupElement) -> Vec<f64> {
    let mut out = Vec::with_capacity(form.dim_w() + form.dim_c() + 2);
    out.extend_from_slice(&g.w);
    out.extend_from_slice(&g.c);
    out.push(norm(&g.w));
    out.push(dot(u, &g.w) + dot(v, &g.c));
    out
}

pub fn projection_names(form: &SkewForm) -> Vec<String> {
    let mut names = Vec::new();
    for i in 0..form.dim_w() {
        names.push(alloc::format!("x{}", i + 1));
    }
    for j in 0..form.dim_c() {
        names.push(alloc::format!("c{}", j + 1));
    }
    names.push(String::from("norm_x"));
    names.push(String::from("mixed"));
    names
}

/// Two-sample KS tests on the projection battery.
pub fn ks_battery(form: &SkewForm, a: &[GroupElement], b: &[GroupElement], direction_seed: u64) -> InversionReport {
    let (u, v) = projection_directions(form, direction_seed);
    let pa: Vec<Vec<f64>> = a.iter().map(|g| projections(form, &u, &v, g)).collect();
    let pb: Vec<Vec<f64>> = b.iter().map(|g| projections(form, &u, &v, g)).collect();
    let names = projection_names(form);
    let mut tests = Vec::with_capacity(names.len());
    for (k, name) in names.into_iter().enumerate() {
        let xa: Vec<f64> = pa.iter().map(|r| r[k]).collect();
        let xb: Vec<f64> = pb.iter().map(|r| r[k]).collect();
        let ks = ks_two_sample(&xa, &xb);
        tests.push(ProjectionTest { name, statistic: ks.statistic, p_value: ks.p_value });
    }
    let min_p_value = tests.iter().map(|t| t.p_value).fold(1.0, f64::min);
    InversionReport { projections: tests, min_p_value, pass: min_p_value > KS_LEVEL }
}

fn draw_elements<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
    stream_tag: u64,
) -> Result<Vec<GroupElement>> {
    let grid = TimeGrid::new(horizon, n_steps)?;
    collect(exec, n_paths, |i| sample_g(form, grid, seed, stream_tag + i).map(|r| r.1)).into_iter().collect()
}

/// One moment at horizon `cT` against the matching rescaled moment at `T`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalingMoment {
    pub name: String,
    /// Moment at `cT`.
    pub scaled: McEstimate,
    /// `c^k` times the moment at `T`.
    pub rescaled: McEstimate,
    pub relative_gap: f64,
    /// `|gap| / combined standard error`.
    pub z_score: f64,
}

/// Moments of `(B, Z, ρ)` at horizon `factor * T` (secondary streams) against
/// those at `T` (primary streams) under `B ~ √c`, `Z ~ c`, `ρ ~ c²`.
pub fn scaling_check<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    factor: f64,
    mc: McConfig,
) -> Result<Vec<ScalingMoment>> {
    if !(factor > 0.0) {
        return Err(crate::error::invalid("scaling factor must be positive"));
    }
    // |B|^2, |Z|^2, |Z|, tr ρ, (tr ρ)^2 with their scaling exponents in c.
    const NAMES: [(&str, i32); 5] = [("b_sq", 1), ("z_sq", 2), ("z_abs", 1), ("rho_trace", 2), ("rho_trace_sq", 4)];
    let run = |t: f64, stream: u64| -> Result<crate::mc::Moments> {
        let grid = TimeGrid::new(t, mc.n_steps)?;
        let m = accumulate(exec, mc.n_paths, NAMES.len(), |i, out| {
            let p = sample_bm_with(grid, form.dim_w(), &mut RngStream::new(mc.seed, stream + i).generator());
            let Ok(z) = levy_z(form, &p) else { return false };
            let Ok(r) = rho(form, &p) else { return false };
            let b = p.terminal();
            let tr = r.entries.trace();
            out[0] = dot(b, b);
            out[1] = dot(&z, &z);
            out[2] = libm::sqrt(out[1]);
            out[3] = tr;
            out[4] = tr * tr;
            true
        });
        require_all(m.count(), mc.n_paths)?;
        Ok(m)
    };
    let base = run(horizon, tag::PRIMARY)?;
    let big = run(factor * horizon, tag::SECONDARY)?;
    Ok(NAMES
        .iter()
        .enumerate()
        .map(|(j, (name, k))| {
            let s = libm::pow(factor, f64::from(*k));
            let scaled = big.estimate(j, mc.n_steps, mc.seed);
            let mut rescaled = base.estimate(j, mc.n_steps, mc.seed);
            rescaled.mean *= s;
            rescaled.std_error *= s;
            let gap = scaled.mean - rescaled.mean;
            ScalingMoment {
                name: String::from(*name),
                scaled,
                rescaled,
                relative_gap: gap / rescaled.mean,
                z_score: gap / libm::hypot(scaled.std_error, rescaled.std_error),
            }
        })
        .collect())
}

/// KS battery comparing `g_T` with an independent sample of `g_T^{-1}`.
pub fn inversion_check<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    mc: McConfig,
) -> Result<InversionReport> {
    let a = draw_elements(exec, form, horizon, mc.n_paths, mc.n_steps, mc.seed, tag::PRIMARY)?;
    let b: Vec<GroupElement> = draw_elements(exec, form, horizon, mc.n_paths, mc.n_steps, mc.seed, tag::SECONDARY)?
        .iter()
        .map(group_inv)
        .collect();
    Ok(ks_battery(form, &a, &b, mc.seed))
}

/// Calibration control: `g_T` against `g_{factor T}`, which should be rejected.
pub fn horizon_control<E: Executor + ?Sized>(
    exec: &E,
    form: &SkewForm,
    horizon: f64,
    factor: f64,
    mc: McConfig,
) -> Result<InversionReport> {
    let a = draw_elements(exec, form, horizon, mc.n_paths, mc.n_steps, mc.seed, tag::PRIMARY)?;
    let b = draw_elements(exec, form, horizon * factor, mc.n_paths, mc.n_steps, mc.seed, tag::SECONDARY)?;
    Ok(ks_battery(form, &a, &b, mc.seed))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::Sequential;
    use crate::path::drift_path;

    #[test]
    fn j0_on_drift_path() {
        let form = SkewForm::h3();
        let grid = TimeGrid::new(1.0, 4096).unwrap();
        let d = drift_path(grid, &[1.0, 0.0]);
        let v = j0_density(&form, &d, &[0.0]).unwrap();
        assert!((v - 1.0 / libm::sqrt(2.0 * PI / 12.0)).abs() < 2e-3);
        let zero = SampledPath::zeros(grid, 2);
        assert!(matches!(j0_density(&form, &zero, &[0.0]), Err(Error::DegeneratePath { .. })));
    }

    #[test]
    fn j0_is_even() {
        let form = SkewForm::free_step_two(3);
        let p = crate::path::sample_bm(TimeGrid::new(1.0, 64).unwrap(), 3, RngStream::new(5, 5));
        let c = [0.1, -0.3, 0.2];
        let mc: Vec<f64> = c.iter().map(|x| -x).collect();
        assert_eq!(j0_density(&form, &p, &c).unwrap(), j0_density(&form, &p.negated(), &mc).unwrap());
    }

    #[test]
    fn j0_mass_is_one_by_gauss_hermite() {
        // 20-point Gauss-Hermite with weight e^{-t^2} on a 2-d fibre.
        let nodes = gauss_hermite_20();
        let full = SkewForm::free_step_two(3);
        let form2 = SkewForm::new(vec![full.omega(0).clone(), full.omega(1).clone()]).unwrap();
        let p = crate::path::sample_bm(TimeGrid::new(1.0, 64).unwrap(), 3, RngStream::new(6, 1));
        let r = rho(&form2, &p).unwrap();
        let l = r.cholesky().unwrap();
        let mut total = 0.0;
        for &(t1, w1) in &nodes {
            for &(t2, w2) in &nodes {
                // c = sqrt(2) L t maps the Hermite weight onto N(0, ρ).
                let c = l.correlate(&[libm::sqrt(2.0) * t1, libm::sqrt(2.0) * t2]);
                let dens = j0_density(&form2, &p, &c).unwrap();
                let jac = 2.0 * libm::exp(0.5 * l.log_det());
                total += w1 * w2 * libm::exp(t1 * t1 + t2 * t2) * dens * jac;
            }
        }
        assert!((total - 1.0).abs() < 1e-10, "{total}");
    }

    fn gauss_hermite_20() -> Vec<(f64, f64)> {
        // Newton iteration on the Hermite recurrence.
        let n = 20;
        let mut out: Vec<(f64, f64)> = Vec::new();
        let mut z: f64 = 0.0;
        for i in 0..n / 2 {
            z = match i {
                0 => libm::sqrt(2.0 * n as f64 + 1.0) - 1.85575 * libm::pow(2.0 * n as f64 + 1.0, -0.16667),
                1 => z - 1.14 * libm::pow(n as f64, 0.426) / z,
                2 => 1.86 * z - 0.86 * out[0].0,
                3 => 1.91 * z - 0.91 * out[1].0,
                _ => 2.0 * z - out[i - 2].0,
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = libm::pow(PI, -0.25);
                let mut p2 = 0.0;
                for j in 0..n {
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * libm::sqrt(2.0 / (j + 1) as f64) * p2 - libm::sqrt(j as f64 / (j + 1) as f64) * p3;
                }
                pp = libm::sqrt(2.0 * n as f64) * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() < 1e-15 {
                    break;
                }
            }
            out.push((z, 2.0 / (pp * pp)));
        }
        let mut all: Vec<(f64, f64)> = out.iter().map(|&(x, w)| (-x, w)).collect();
        all.extend(out);
        all
    }

    #[test]
    fn expect_via_j0_of_one_is_exact() {
        let form = SkewForm::h3();
        let e = expect_via_j0(&Sequential, &form, 1.0, |_, _| 1.0, McConfig::new(2000, 32, 3)).unwrap();
        assert_eq!(e.mean, 1.0);
        assert_eq!(e.std_error, 0.0);
    }

    #[test]
    fn even_projection_is_blind_to_inversion() {
        let form = SkewForm::h3();
        let a = draw_elements(&Sequential, &form, 1.0, 500, 16, 9, tag::PRIMARY).unwrap();
        let b: Vec<GroupElement> = a.iter().map(group_inv).collect();
        let rep = ks_battery(&form, &a, &b, 9);
        let norm_test = rep.projections.iter().find(|t| t.name == "norm_x").unwrap();
        assert_eq!(norm_test.statistic, 0.0);
        // Inverting twice is the identity.
        let back: Vec<GroupElement> = b.iter().map(group_inv).collect();
        assert_eq!(back, a);
    }

    #[test]
    fn time_reversal_inverts_pathwise() {
        let form = SkewForm::free_step_two(3);
        let p = crate::path::sample_bm(TimeGrid::new(1.0, 64).unwrap(), 3, RngStream::new(8, 2));
        let z = levy_z(&form, &p).unwrap();
        let zr = levy_z(&form, &p.time_reversed()).unwrap();
        for (a, b) in z.iter().zip(&zr) {
            assert!((a + b).abs() < 1e-13);
        }
    }
}
