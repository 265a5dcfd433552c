//! Named cylinder functions and path functionals used by experiments.
//!
//! Every cylinder function here has an analytic gradient and Hessian. Their
//! parameters are fixed functions of the dimensions so that a name alone
//! determines the function on any form.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use crate::cameron_martin::ShiftableFunctional;
use crate::error::{invalid, Result};
use crate::group::{CylinderFunction, SkewForm, TangentVector};
use crate::linalg::{dot, Mat};
use crate::path::{drift_path, SampledPath};
use crate::polynomial::{Factor, MatAtom, PolynomialFunctional, Term};
use crate::quadratics::{rho, rho_matrix};

pub const CYLINDER_NAMES: [&str; 5] = ["one", "wave", "bump", "tanh", "fibre_linear"];
pub const FUNCTIONAL_NAMES: [&str; 4] = ["one", "rho_inv_quadratic", "rho_inv_trace", "det_rho_inv_sqrt"];

fn joined(x: &[f64], c: &[f64]) -> Vec<f64> {
    x.iter().chain(c).copied().collect()
}

fn split(v: &[f64], n: usize, gx: &mut [f64], gc: &mut [f64]) {
    gx.copy_from_slice(&v[..n]);
    gc.copy_from_slice(&v[n..]);
}

/// Coefficients `0.6 / (1 + k/2)` with alternating signs.
fn weights(len: usize, scale: f64) -> Vec<f64> {
    (0..len).map(|k| scale * if k % 2 == 0 { 1.0 } else { -1.0 } / (1.0 + 0.5 * k as f64)).collect()
}

pub struct One;

impl CylinderFunction for One {
    fn value(&self, _: &[f64], _: &[f64]) -> f64 {
        1.0
    }

    fn gradient(&self, _: &[f64], _: &[f64], gx: &mut [f64], gc: &mut [f64]) {
        gx.fill(0.0);
        gc.fill(0.0);
    }

    fn hessian(&self, x: &[f64], c: &[f64]) -> Option<Mat> {
        let n = x.len() + c.len();
        Some(Mat::zeros(n, n))
    }

    fn growth(&self) -> (f64, f64) {
        (1.0, 0.0)
    }
}

/// `F(x, c) = c · v`.
pub struct FibreLinear {
    pub v: Vec<f64>,
}

impl CylinderFunction for FibreLinear {
    fn value(&self, _: &[f64], c: &[f64]) -> f64 {
        dot(c, &self.v)
    }

    fn gradient(&self, _: &[f64], _: &[f64], gx: &mut [f64], gc: &mut [f64]) {
        gx.fill(0.0);
        gc.copy_from_slice(&self.v);
    }

    fn hessian(&self, x: &[f64], c: &[f64]) -> Option<Mat> {
        let n = x.len() + c.len();
        Some(Mat::zeros(n, n))
    }

    fn growth(&self) -> (f64, f64) {
        (libm::sqrt(dot(&self.v, &self.v)), 1.0)
    }
}

/// `F(u) = sin(a·u + b)` with `u = (x, c)`.
pub struct Wave {
    pub a: Vec<f64>,
    pub b: f64,
}

impl CylinderFunction for Wave {
    fn value(&self, x: &[f64], c: &[f64]) -> f64 {
        libm::sin(dot(&self.a, &joined(x, c)) + self.b)
    }

    fn gradient(&self, x: &[f64], c: &[f64], gx: &mut [f64], gc: &mut [f64]) {
        let s = libm::cos(dot(&self.a, &joined(x, c)) + self.b);
        let g: Vec<f64> = self.a.iter().map(|v| s * v).collect();
        split(&g, x.len(), gx, gc);
    }

    fn hessian(&self, x: &[f64], c: &[f64]) -> Option<Mat> {
        let s = -libm::sin(dot(&self.a, &joined(x, c)) + self.b);
        let n = self.a.len();
        Some(Mat::from_fn(n, n, |i, j| s * self.a[i] * self.a[j]))
    }

    fn growth(&self) -> (f64, f64) {
        (1.0, 0.0)
    }
}

/// `F(u) = exp(-|u - m|^2 / (2 s^2))`.
pub struct Bump {
    pub centre: Vec<f64>,
    pub width: f64,
}

impl Bump {
    fn offset(&self, x: &[f64], c: &[f64]) -> Vec<f64> {
        joined(x, c).iter().zip(&self.centre).map(|(u, m)| u - m).collect()
    }
}

impl CylinderFunction for Bump {
    fn value(&self, x: &[f64], c: &[f64]) -> f64 {
        let d = self.offset(x, c);
        libm::exp(-dot(&d, &d) / (2.0 * self.width * self.width))
    }

    fn gradient(&self, x: &[f64], c: &[f64], gx: &mut [f64], gc: &mut [f64]) {
        let d = self.offset(x, c);
        let s2 = self.width * self.width;
        let f = libm::exp(-dot(&d, &d) / (2.0 * s2));
        let g: Vec<f64> = d.iter().map(|v| -f * v / s2).collect();
        split(&g, x.len(), gx, gc);
    }

    fn hessian(&self, x: &[f64], c: &[f64]) -> Option<Mat> {
        let d = self.offset(x, c);
        let s2 = self.width * self.width;
        let f = libm::exp(-dot(&d, &d) / (2.0 * s2));
        let n = d.len();
        Some(Mat::from_fn(n, n, |i, j| f * (d[i] * d[j] / (s2 * s2) - if i == j { 1.0 / s2 } else { 0.0 })))
    }

    fn growth(&self) -> (f64, f64) {
        (1.0, 0.0)
    }
}

/// `F(u) = tanh(a·u)`.
pub struct Tanh {
    pub a: Vec<f64>,
}

impl CylinderFunction for Tanh {
    fn value(&self, x: &[f64], c: &[f64]) -> f64 {
        libm::tanh(dot(&self.a, &joined(x, c)))
    }

    fn gradient(&self, x: &[f64], c: &[f64], gx: &mut [f64], gc: &mut [f64]) {
        let t = libm::tanh(dot(&self.a, &joined(x, c)));
        let g: Vec<f64> = self.a.iter().map(|v| (1.0 - t * t) * v).collect();
        split(&g, x.len(), gx, gc);
    }

    fn hessian(&self, x: &[f64], c: &[f64]) -> Option<Mat> {
        let t = libm::tanh(dot(&self.a, &joined(x, c)));
        let s = -2.0 * t * (1.0 - t * t);
        let n = self.a.len();
        Some(Mat::from_fn(n, n, |i, j| s * self.a[i] * self.a[j]))
    }

    fn growth(&self) -> (f64, f64) {
        (1.0, 0.0)
    }
}

/// A registered cylinder function for the dimensions of `form`.
pub fn cylinder(name: &str, form: &SkewForm) -> Result<Box<dyn CylinderFunction + Send>> {
    let (n, d) = (form.dim_w(), form.dim_c());
    Ok(match name {
        "one" => Box::new(One),
        "wave" => Box::new(Wave { a: weights(n + d, 0.9), b: 0.4 }),
        "bump" => Box::new(Bump { centre: weights(n + d, 0.3), width: 1.2 }),
        "tanh" => Box::new(Tanh { a: weights(n + d, 0.7).into_iter().rev().collect() }),
        "fibre_linear" => Box::new(FibreLinear { v: vec![1.0; d] }),
        _ => return Err(invalid("unknown cylinder function")),
    })
}

/// `det(ρ_T(B))^{-1/2}`, with the analytic shift derivative `det^{-1/2} tr(ρ^{-1} ρ_T(B, 𝐡))`.
pub struct DetRhoInvSqrt;

impl ShiftableFunctional for DetRhoInvSqrt {
    fn eval(&self, form: &SkewForm, p: &SampledPath, _: &[f64]) -> Result<f64> {
        Ok(libm::exp(-0.5 * rho(form, p)?.cholesky()?.log_det()))
    }

    fn xtilde(&self, form: &SkewForm, x: &TangentVector, p: &SampledPath, _: &[f64]) -> Option<Result<f64>> {
        Some((|| {
            let ch = rho(form, p)?.cholesky()?;
            let m = rho_matrix(form, p, &drift_path(p.grid(), &x.h))?.entries;
            Ok(libm::exp(-0.5 * ch.log_det()) * ch.inverse().matmul(&m).trace())
        })())
    }
}

/// A registered path functional. The polynomial ones carry no directions.
pub fn functional(name: &str) -> Result<Box<dyn ShiftableFunctional + Send>> {
    Ok(match name {
        "one" => Box::new(PolynomialFunctional::one(Vec::new())),
        "rho_inv_quadratic" => Box::new(PolynomialFunctional::rho_inv_quadratic(Vec::new())),
        "rho_inv_trace" => Box::new(PolynomialFunctional::from_terms(
            Vec::new(),
            vec![Term { coeff: 1.0, factors: vec![Factor::Trace(vec![MatAtom::RhoInv])] }],
        )),
        "det_rho_inv_sqrt" => Box::new(DetRhoInvSqrt),
        _ => return Err(invalid("unknown path functional")),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cameron_martin::xtilde_numeric;
    use crate::group::FiniteDifference;
    use crate::path::{sample_bm, TimeGrid};
    use crate::rng::RngStream;

    #[test]
    fn derivatives_match_finite_differences() {
        let form = SkewForm::free_step_two(3);
        let x = [0.3, -0.2, 0.5];
        let c = [0.1, 0.4, -0.3];
        for name in CYLINDER_NAMES {
            let f = cylinder(name, &form).unwrap();
            let fd = FiniteDifference::new(|x: &[f64], c: &[f64]| f.value(x, c), (1.0, 1.0));
            let (mut g1, mut c1) = (vec![0.0; 3], vec![0.0; 3]);
            let (mut g2, mut c2) = (vec![0.0; 3], vec![0.0; 3]);
            f.gradient(&x, &c, &mut g1, &mut c1);
            fd.gradient(&x, &c, &mut g2, &mut c2);
            for k in 0..3 {
                assert!((g1[k] - g2[k]).abs() < 1e-8 && (c1[k] - c2[k]).abs() < 1e-8, "{name}");
            }
            let h1 = f.hessian(&x, &c).unwrap();
            let h2 = fd.hessian(&x, &c).unwrap();
            assert!(h1.sub(&h2).max_abs() < 1e-5, "{name}");
        }
        assert!(cylinder("nope", &form).is_err());
    }

    #[test]
    fn det_functional_rule() {
        let form = SkewForm::free_step_two(3);
        let p = sample_bm(TimeGrid::new(1.0, 128).unwrap(), 3, RngStream::new(6, 0));
        let x = TangentVector::new(vec![0.2, 0.4, -0.1], vec![0.0; 3]);
        let f = functional("det_rho_inv_sqrt").unwrap();
        let a = f.xtilde(&form, &x, &p, &[0.0; 3]).unwrap().unwrap();
        let b = xtilde_numeric(f.as_ref(), &form, &x, &p, &[0.0; 3]).unwrap();
        assert!((a - b).abs() < 1e-7 * (1.0 + a.abs()));
        for name in FUNCTIONAL_NAMES {
            assert!(functional(name).is_ok());
        }
    }
}
