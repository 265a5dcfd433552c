//! Quadratic functionals of sampled paths: Itô integrals `∫<AB, dB>`, the
//! area process, energies `∫|AB|^2 dt` and the matrices `ρ_T`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::group::{SkewForm, SKEW_TOL};
use crate::linalg::{dot, Cholesky, Mat, SymEigen};
use crate::mc::{accumulate, Executor, McConfig};
use crate::path::{coarsen, sample_bm_with, SampledPath, TimeGrid};
use crate::rng::{tag, RngStream};
use crate::stats::McEstimate;

fn check_square(a: &Mat, p: &SampledPath) -> Result<()> {
    if !a.is_square() || a.rows() != p.dim() {
        return Err(Error::Dimension { expected: p.dim(), got: a.rows() });
    }
    Ok(())
}

/// Left-point sum `Σ_k <A p(t_k), p(t_{k+1}) - p(t_k)>`.
pub fn ito_integral(a: &Mat, p: &SampledPath) -> Result<f64> {
    check_square(a, p)?;
    let n = p.dim();
    let mut ap = vec![0.0; n];
    let mut s = 0.0;
    for k in 0..p.grid().n_steps() {
        let x = p.row(k);
        let y = p.row(k + 1);
        a.matvec_into(x, &mut ap);
        for i in 0..n {
            s += ap[i] * (y[i] - x[i]);
        }
    }
    Ok(s)
}

/// Discrete area `Z_T = ½ Σ_k ω(p(t_k), Δp_k)`.
pub fn levy_z(form: &SkewForm, p: &SampledPath) -> Result<Vec<f64>> {
    if p.dim() != form.dim_w() {
        return Err(Error::Dimension { expected: form.dim_w(), got: p.dim() });
    }
    let d = form.dim_c();
    let n = p.dim();
    let mut z = vec![0.0; d];
    let mut incr = vec![0.0; n];
    let mut om = vec![0.0; d];
    for k in 0..p.grid().n_steps() {
        let x = p.row(k);
        for (i, v) in incr.iter_mut().enumerate() {
            *v = p.row(k + 1)[i] - x[i];
        }
        form.eval_into(x, &incr, &mut om);
        for j in 0..d {
            z[j] += 0.5 * om[j];
        }
    }
    Ok(z)
}

/// Same area with the integrand at the midpoint of each step.
pub fn levy_z_midpoint(form: &SkewForm, p: &SampledPath) -> Result<Vec<f64>> {
    if p.dim() != form.dim_w() {
        return Err(Error::Dimension { expected: form.dim_w(), got: p.dim() });
    }
    let d = form.dim_c();
    let n = p.dim();
    let mut z = vec![0.0; d];
    let mut mid = vec![0.0; n];
    let mut incr = vec![0.0; n];
    let mut om = vec![0.0; d];
    for k in 0..p.grid().n_steps() {
        let (x, y) = (p.row(k), p.row(k + 1));
        for i in 0..n {
            mid[i] = 0.5 * (x[i] + y[i]);
            incr[i] = y[i] - x[i];
        }
        form.eval_into(&mid, &incr, &mut om);
        for j in 0..d {
            z[j] += 0.5 * om[j];
        }
    }
    Ok(z)
}

/// Left-point sum `Σ_k |A p(t_k)|^2 dt`.
pub fn quadratic_energy(a: &Mat, p: &SampledPath) -> Result<f64> {
    check_square(a, p)?;
    let mut ap = vec![0.0; p.dim()];
    let mut s = 0.0;
    for k in 0..p.grid().n_steps() {
        a.matvec_into(p.row(k), &mut ap);
        s += dot(&ap, &ap);
    }
    Ok(s * p.grid().dt())
}

/// `ρ_T(p, q)` as a `d x d` matrix together with its horizon.
#[derive(Clone, Debug, PartialEq)]
pub struct RhoMatrix {
    pub entries: Mat,
    pub horizon: f64,
}

impl RhoMatrix {
    pub fn dim(&self) -> usize {
        self.entries.rows()
    }

    pub fn cholesky(&self) -> Result<Cholesky> {
        Cholesky::new(&self.entries)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymEigen::new(&self.entries).values.last().copied().unwrap_or(0.0)
    }

    pub fn op_norm(&self) -> f64 {
        self.entries.op_norm()
    }

    /// `ρ λ·λ`.
    pub fn quad(&self, lambda: &[f64]) -> f64 {
        dot(&self.entries.matvec(lambda), lambda)
    }
}

/// `ρ_{jk} = ¼ Σ_m <Ω_j p(t_m), Ω_k q(t_m)> dt`, left-point.
pub fn rho_matrix(form: &SkewForm, p: &SampledPath, q: &SampledPath) -> Result<RhoMatrix> {
    if !p.same_shape(q) {
        return Err(Error::GridMismatch);
    }
    if p.dim() != form.dim_w() {
        return Err(Error::Dimension { expected: form.dim_w(), got: p.dim() });
    }
    let d = form.dim_c();
    let n = form.dim_w();
    let mut op = vec![0.0; d * n];
    let mut oq = vec![0.0; d * n];
    let mut acc = Mat::zeros(d, d);
    for m in 0..p.grid().n_steps() {
        for j in 0..d {
            form.omega(j).matvec_into(p.row(m), &mut op[j * n..(j + 1) * n]);
            form.omega(j).matvec_into(q.row(m), &mut oq[j * n..(j + 1) * n]);
        }
        for j in 0..d {
            for k in 0..d {
                acc[(j, k)] += dot(&op[j * n..(j + 1) * n], &oq[k * n..(k + 1) * n]);
            }
        }
    }
    Ok(RhoMatrix { entries: acc.scale(0.25 * p.grid().dt()), horizon: p.grid().horizon() })
}

pub fn rho(form: &SkewForm, p: &SampledPath) -> Result<RhoMatrix> {
    rho_matrix(form, p, p)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct YorReport {
    pub lhs_re: McEstimate,
    pub lhs_im: McEstimate,
    pub rhs: McEstimate,
    /// `Re(lhs) - rhs` on common paths and its standard error.
    pub gap: f64,
    pub gap_std_error: f64,
}

/// Both sides of `E[f(B_T) e^{i∫<AB,dB>}] = E[f(B_T) e^{-½∫|AB|^2}]` on common paths.
pub fn yor_gap<E, F>(exec: &E, a: &Mat, f: F, horizon: f64, mc: McConfig) -> Result<YorReport>
where
    E: Executor + ?Sized,
    F: Fn(&[f64]) -> f64 + Sync + Send,
{
    let residual = a.skew_residual();
    if residual > SKEW_TOL {
        return Err(Error::NotSkew { index: 0, residual });
    }
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let n = a.rows();
    let m = accumulate(exec, mc.n_paths, 3, |i, out| {
        let p = sample_bm_with(grid, n, &mut RngStream::new(mc.seed, tag::PRIMARY + i).generator());
        let fv = f(p.terminal());
        let phase = ito_integral(a, &p).unwrap();
        let energy = quadratic_energy(a, &p).unwrap();
        out[0] = fv * libm::cos(phase);
        out[1] = fv * libm::sin(phase);
        out[2] = fv * libm::exp(-0.5 * energy);
        true
    });
    Ok(YorReport {
        lhs_re: m.estimate(0, mc.n_steps, mc.seed),
        lhs_im: m.estimate(1, mc.n_steps, mc.seed),
        rhs: m.estimate(2, mc.n_steps, mc.seed),
        gap: m.mean(0) - m.mean(2),
        gap_std_error: m.diff_std_error(0, 2),
    })
}

/// `E[M_T]`, `E[M_T^2]` for `M_T = ∫<AB, dB>` and `E ∫|AB|^2 dt`, on common paths.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ItoMoments {
    pub mean: McEstimate,
    pub second: McEstimate,
    pub energy: McEstimate,
    /// `T^2 ‖A‖_HS^2 / 2`, the exact value of the last two.
    pub isometry: f64,
}

pub fn ito_moments<E: Executor + ?Sized>(exec: &E, a: &Mat, horizon: f64, mc: McConfig) -> Result<ItoMoments> {
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let n = a.rows();
    if !a.is_square() {
        return Err(Error::Dimension { expected: n, got: a.cols() });
    }
    let m = accumulate(exec, mc.n_paths, 3, |i, out| {
        let p = sample_bm_with(grid, n, &mut RngStream::new(mc.seed, tag::PRIMARY + i).generator());
        let v = ito_integral(a, &p).unwrap();
        out[0] = v;
        out[1] = v * v;
        out[2] = quadratic_energy(a, &p).unwrap();
        true
    });
    let f = a.frobenius();
    Ok(ItoMoments {
        mean: m.estimate(0, mc.n_steps, mc.seed),
        second: m.estimate(1, mc.n_steps, mc.seed),
        energy: m.estimate(2, mc.n_steps, mc.seed),
        isometry: 0.5 * horizon * horizon * f * f,
    })
}

/// Discretisation bias measured by paired grid refinement: every path is
/// evaluated on its fine grid and on the grid with every other node dropped.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BiasCalibration {
    /// `mean(coarse) - mean(fine)`.
    pub difference: f64,
    pub difference_std_error: f64,
    pub dt_fine: f64,
    /// `|difference| / dt_fine`; the bias at step `dt` is budgeted as `c_bias * dt`.
    pub c_bias: f64,
}

impl BiasCalibration {
    pub fn budget(&self, dt: f64) -> f64 {
        self.c_bias * dt
    }
}

pub fn calibrate_bias<E, F>(exec: &E, dim: usize, horizon: f64, mc: McConfig, stat: F) -> Result<BiasCalibration>
where
    E: Executor + ?Sized,
    F: Fn(&SampledPath) -> f64 + Sync + Send,
{
    if mc.n_steps < 2 || mc.n_steps % 2 != 0 {
        return Err(crate::error::invalid("refinement needs an even number of fine steps"));
    }
    let grid = TimeGrid::new(horizon, mc.n_steps)?;
    let m = accumulate(exec, mc.n_paths, 1, |i, out| {
        let p = sample_bm_with(grid, dim, &mut RngStream::new(mc.seed, tag::EXTRA + i).generator());
        let c = coarsen(&p, 2).unwrap();
        out[0] = stat(&c) - stat(&p);
        true
    });
    let dt = grid.dt();
    Ok(BiasCalibration {
        difference: m.mean(0),
        difference_std_error: m.std_error(0),
        dt_fine: dt,
        c_bias: m.mean(0).abs() / dt,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{drift_path, sample_bm};

    #[test]
    fn deterministic_values() {
        let form = SkewForm::h3();
        let grid = TimeGrid::new(1.0, 1000).unwrap();
        let d = drift_path(grid, &[1.0, 0.0]);
        let e = quadratic_energy(form.omega(0), &d).unwrap();
        assert!((e - 1.0 / 3.0).abs() < 2e-3);
        let r = rho(&form, &d).unwrap();
        assert!((r.entries[(0, 0)] - 1.0 / 12.0).abs() < 1e-3);
        let p = sample_bm(grid, 2, RngStream::new(1, 1));
        assert_eq!(ito_integral(&Mat::zeros(2, 2), &p).unwrap(), 0.0);
        assert_eq!(quadratic_energy(&Mat::zeros(2, 2), &p).unwrap(), 0.0);
    }

    #[test]
    fn h3_area_is_discrete_levy_area() {
        let form = SkewForm::h3();
        let p = sample_bm(TimeGrid::new(1.0, 64).unwrap(), 2, RngStream::new(2, 5));
        let mut s = 0.0;
        for k in 0..64 {
            let (x, y) = (p.row(k), p.row(k + 1));
            s += x[0] * (y[1] - x[1]) - x[1] * (y[0] - x[0]);
        }
        assert!((levy_z(&form, &p).unwrap()[0] - 0.5 * s).abs() < 1e-14);
    }

    #[test]
    fn rho_transpose_symmetry() {
        let form = SkewForm::free_step_two(3);
        let g = TimeGrid::new(1.0, 32).unwrap();
        let p = sample_bm(g, 3, RngStream::new(3, 1));
        let q = sample_bm(g, 3, RngStream::new(3, 2));
        let a = rho_matrix(&form, &p, &q).unwrap();
        let b = rho_matrix(&form, &q, &p).unwrap();
        assert_eq!(a.entries, b.entries.transpose());
        let r = rho(&form, &p).unwrap();
        assert!(r.min_eigenvalue() > 0.0);
    }

    #[test]
    fn yor_trivial_case() {
        let r =
            yor_gap(&crate::mc::Sequential, &Mat::zeros(2, 2), |x| x[0].abs().min(1.0), 1.0, McConfig::new(300, 8, 1))
                .unwrap();
        assert_eq!(r.lhs_re.mean, r.rhs.mean);
        assert_eq!(r.gap, 0.0);
        let bad = Mat::from_row_major(2, 2, alloc::vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!(yor_gap(&crate::mc::Sequential, &bad, |_| 1.0, 1.0, McConfig::new(10, 8, 1)).is_err());
    }
}
