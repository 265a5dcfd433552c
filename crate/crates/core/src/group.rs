//! Heisenberg-like groups `G = R^N x R^d` with product
//! `(w1, c1)(w2, c2) = (w1 + w2, c1 + c2 + ω(w1, w2) / 2)`.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{dot, Mat, SymEigen};

pub const SKEW_TOL: f64 = 1e-12;

/// The skew form `ω: R^N x R^N -> R^d`, stored as `d` skew matrices with
/// `(Ω_j)_{ik} = ω(e_i, e_k)_j`.
#[derive(Clone, Debug, PartialEq)]
pub struct SkewForm {
    dim_w: usize,
    omegas: Vec<Mat>,
}

impl SkewForm {
    /// Antisymmetrizes each matrix; rejects inputs whose residual exceeds
    /// [`SKEW_TOL`] and forms that are not onto `R^d`.
    pub fn new(omegas: Vec<Mat>) -> Result<Self> {
        let first = omegas.first().ok_or_else(|| crate::error::invalid("a form needs at least one matrix"))?;
        let n = first.rows();
        if n == 0 {
            return Err(crate::error::invalid("dim_w must be at least 1"));
        }
        let mut clean = Vec::with_capacity(omegas.len());
        for (index, m) in omegas.iter().enumerate() {
            if m.rows() != n || m.cols() != n {
                return Err(Error::Dimension { expected: n, got: m.rows().max(m.cols()) });
            }
            let residual = m.skew_residual();
            if residual > SKEW_TOL {
                return Err(Error::NotSkew { index, residual });
            }
            clean.push(Mat::from_fn(n, n, |i, k| 0.5 * (m[(i, k)] - m[(k, i)])));
        }
        let form = SkewForm { dim_w: n, omegas: clean };
        let rank = form.rank();
        if rank < form.dim_c() {
            return Err(Error::NotSurjective { rank, dim_c: form.dim_c() });
        }
        Ok(form)
    }

    pub fn from_row_major(dim_w: usize, omegas: &[Vec<f64>]) -> Result<Self> {
        let ms = omegas.iter().map(|o| Mat::from_row_major(dim_w, dim_w, o.clone())).collect::<Result<Vec<_>>>()?;
        SkewForm::new(ms)
    }

    /// The three-dimensional Heisenberg group, `ω(x, y) = x1 y2 - x2 y1`.
    pub fn h3() -> Self {
        SkewForm::block_diagonal(&[1.0])
    }

    /// `R^{2k} x R` with `ω(x, y) = Σ a_i (x_{2i} y_{2i+1} - x_{2i+1} y_{2i})`.
    pub fn block_diagonal(weights: &[f64]) -> Self {
        let n = 2 * weights.len();
        let mut m = Mat::zeros(n, n);
        for (i, &a) in weights.iter().enumerate() {
            m[(2 * i, 2 * i + 1)] = a;
            m[(2 * i + 1, 2 * i)] = -a;
        }
        SkewForm::new(vec![m]).expect("block form is valid")
    }

    /// Free step-two group `R^N x R^{N(N-1)/2}` with one
    /// fibre coordinate per pair `i < k`.
    pub fn free_step_two(n: usize) -> Self {
        let mut ms = Vec::new();
        for i in 0..n {
            for k in (i + 1)..n {
                let mut m = Mat::zeros(n, n);
                m[(i, k)] = 1.0;
                m[(k, i)] = -1.0;
                ms.push(m);
            }
        }
        SkewForm::new(ms).expect("free step-two form is valid")
    }

    pub fn dim_w(&self) -> usize {
        self.dim_w
    }

    pub fn dim_c(&self) -> usize {
        self.omegas.len()
    }

    pub fn omegas(&self) -> &[Mat] {
        &self.omegas
    }

    pub fn omega(&self, j: usize) -> &Mat {
        &self.omegas[j]
    }

    /// Rank of the span of `{ω(e_i, e_k)}_{i<k}` in `R^d`.
    pub fn rank(&self) -> usize {
        let d = self.dim_c();
        let n = self.dim_w;
        let mut gram = Mat::zeros(d, d);
        for i in 0..n {
            for k in (i + 1)..n {
                for a in 0..d {
                    for b in 0..d {
                        gram[(a, b)] += self.omegas[a][(i, k)] * self.omegas[b][(i, k)];
                    }
                }
            }
        }
        let eig = SymEigen::new(&gram);
        let top = eig.values.first().copied().unwrap_or(0.0).max(0.0);
        eig.values.iter().filter(|&&v| v > 1e-12 * top.max(1e-300)).count()
    }

    fn check_w(&self, w: &[f64]) -> Result<()> {
        if w.len() != self.dim_w {
            return Err(Error::Dimension { expected: self.dim_w, got: w.len() });
        }
        Ok(())
    }

    fn check_c(&self, c: &[f64]) -> Result<()> {
        if c.len() != self.dim_c() {
            return Err(Error::Dimension { expected: self.dim_c(), got: c.len() });
        }
        Ok(())
    }

    /// `ω(w1, w2)`, unchecked.
    pub fn eval_into(&self, w1: &[f64], w2: &[f64], out: &mut [f64]) {
        for (o, m) in out.iter_mut().zip(&self.omegas) {
            let mut s = 0.0;
            for i in 0..self.dim_w {
                let a = w1[i];
                if a != 0.0 {
                    s += a * dot(m.row(i), w2);
                }
            }
            *o = s;
        }
    }

    pub fn eval(&self, w1: &[f64], w2: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim_c()];
        self.eval_into(w1, w2, &mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupElement {
    pub w: Vec<f64>,
    pub c: Vec<f64>,
}

impl GroupElement {
    pub fn new(w: Vec<f64>, c: Vec<f64>) -> Self {
        GroupElement { w, c }
    }

    pub fn identity(form: &SkewForm) -> Self {
        GroupElement { w: vec![0.0; form.dim_w()], c: vec![0.0; form.dim_c()] }
    }

    pub fn norm(&self) -> f64 {
        libm::sqrt(dot(&self.w, &self.w) + dot(&self.c, &self.c))
    }
}

/// `X = (h, z)` in the Lie algebra of the Cameron-Martin subgroup.
#[derive(Clone, Debug, PartialEq)]
pub struct TangentVector {
    pub h: Vec<f64>,
    pub z: Vec<f64>,
}

impl TangentVector {
    pub fn new(h: Vec<f64>, z: Vec<f64>) -> Self {
        TangentVector { h, z }
    }

    pub fn check(&self, form: &SkewForm) -> Result<()> {
        form.check_w(&self.h)?;
        form.check_c(&self.z)
    }

    pub fn scaled(&self, s: f64) -> TangentVector {
        TangentVector { h: self.h.iter().map(|x| x * s).collect(), z: self.z.iter().map(|x| x * s).collect() }
    }

    pub fn as_element(&self) -> GroupElement {
        GroupElement { w: self.h.clone(), c: self.z.clone() }
    }
}

pub fn omega_eval(form: &SkewForm, w1: &[f64], w2: &[f64]) -> Result<Vec<f64>> {
    form.check_w(w1)?;
    form.check_w(w2)?;
    Ok(form.eval(w1, w2))
}

/// The measurable extension of `ω(h, ·)`; on a finite-dimensional
/// truncation it is `ω` itself.
pub fn omega_h_extension(form: &SkewForm, h: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    omega_eval(form, h, w)
}

pub fn group_mul(form: &SkewForm, g1: &GroupElement, g2: &GroupElement) -> Result<GroupElement> {
    form.check_w(&g1.w)?;
    form.check_w(&g2.w)?;
    form.check_c(&g1.c)?;
    form.check_c(&g2.c)?;
    let om = form.eval(&g1.w, &g2.w);
    let w = g1.w.iter().zip(&g2.w).map(|(a, b)| a + b).collect();
    let c = (0..form.dim_c()).map(|j| g1.c[j] + g2.c[j] + 0.5 * om[j]).collect();
    Ok(GroupElement { w, c })
}

pub fn group_inv(g: &GroupElement) -> GroupElement {
    GroupElement { w: g.w.iter().map(|x| -x).collect(), c: g.c.iter().map(|x| -x).collect() }
}

/// The matrix `Ω_λ` with `<Ω_λ h, k> = ω(h, k)·λ`, i.e. `Σ_j λ_j Ω_j^T`.
pub fn omega_lambda(form: &SkewForm, lambda: &[f64]) -> Result<Mat> {
    form.check_c(lambda)?;
    let n = form.dim_w();
    let mut m = Mat::zeros(n, n);
    for (l, om) in lambda.iter().zip(form.omegas()) {
        m.axpy(*l, &om.transpose());
    }
    Ok(m)
}

/// Hilbert-Schmidt (Frobenius) norm.
pub fn hs_norm(a: &Mat) -> f64 {
    a.frobenius()
}

/// Value and first derivatives of a smooth function on `G`.
pub trait CylinderFunction: Sync {
    fn value(&self, x: &[f64], c: &[f64]) -> f64;

    /// Writes `∂_x F` into `gx` and `∂_c F` into `gc`.
    fn gradient(&self, x: &[f64], c: &[f64], gx: &mut [f64], gc: &mut [f64]);

    /// Full Hessian over `(x, c)`, of size `(N + d) x (N + d)`, if known.
    fn hessian(&self, _x: &[f64], _c: &[f64]) -> Option<Mat> {
        None
    }

    /// `(K, M)` with `|F(g)| <= K (1 + |g|)^M`.
    fn growth(&self) -> (f64, f64);
}

/// Central finite-difference derivatives around a bare evaluator.
/// Used only when a caller wraps a function in it explicitly.
pub struct FiniteDifference<G> {
    pub f: G,
    pub step: f64,
    pub growth: (f64, f64),
}

impl<G: Fn(&[f64], &[f64]) -> f64 + Sync> FiniteDifference<G> {
    pub fn new(f: G, growth: (f64, f64)) -> Self {
        FiniteDifference { f, step: 1e-5, growth }
    }
}

impl<G: Fn(&[f64], &[f64]) -> f64 + Sync> CylinderFunction for FiniteDifference<G> {
    fn value(&self, x: &[f64], c: &[f64]) -> f64 {
        (self.f)(x, c)
    }

    fn gradient(&self, x: &[f64], c: &[f64], gx: &mut [f64], gc: &mut [f64]) {
        let mut xv = x.to_vec();
        let mut cv = c.to_vec();
        let h = self.step;
        for i in 0..x.len() {
            xv[i] = x[i] + h;
            let fp = (self.f)(&xv, c);
            xv[i] = x[i] - h;
            let fm = (self.f)(&xv, c);
            xv[i] = x[i];
            gx[i] = (fp - fm) / (2.0 * h);
        }
        for j in 0..c.len() {
            cv[j] = c[j] + h;
            let fp = (self.f)(x, &cv);
            cv[j] = c[j] - h;
            let fm = (self.f)(x, &cv);
            cv[j] = c[j];
            gc[j] = (fp - fm) / (2.0 * h);
        }
    }

    fn hessian(&self, x: &[f64], c: &[f64]) -> Option<Mat> {
        let (n, d) = (x.len(), c.len());
        let h = 1e-4;
        let mut z: Vec<f64> = x.iter().chain(c).copied().collect();
        let eval = |z: &[f64]| (self.f)(&z[..n], &z[n..]);
        let mut hess = Mat::zeros(n + d, n + d);
        let f0 = eval(&z);
        for a in 0..n + d {
            for b in a..n + d {
                let val = if a == b {
                    let za = z[a];
                    z[a] = za + h;
                    let fp = eval(&z);
                    z[a] = za - h;
                    let fm = eval(&z);
                    z[a] = za;
                    (fp - 2.0 * f0 + fm) / (h * h)
                } else {
                    let (za, zb) = (z[a], z[b]);
                    let mut corner = |sa: f64, sb: f64| {
                        z[a] = za + sa * h;
                        z[b] = zb + sb * h;
                        let v = eval(&z);
                        z[a] = za;
                        z[b] = zb;
                        v
                    };
                    (corner(1.0, 1.0) - corner(1.0, -1.0) - corner(-1.0, 1.0) + corner(-1.0, -1.0)) / (4.0 * h * h)
                };
                hess[(a, b)] = val;
                hess[(b, a)] = val;
            }
        }
        Some(hess)
    }

    fn growth(&self) -> (f64, f64) {
        self.growth
    }
}

fn directional<F: CylinderFunction + ?Sized>(f: &F, g: &GroupElement, h: &[f64], v: &[f64]) -> f64 {
    let mut gx = vec![0.0; g.w.len()];
    let mut gc = vec![0.0; g.c.len()];
    f.gradient(&g.w, &g.c, &mut gx, &mut gc);
    dot(&gx, h) + dot(&gc, v)
}

/// The direction `(h, z + s ω(w, h) / 2)` in coordinates.
pub fn field_direction(form: &SkewForm, x: &TangentVector, w: &[f64], sign: f64) -> Vec<f64> {
    let om = form.eval(w, &x.h);
    x.z.iter().zip(&om).map(|(z, o)| z + 0.5 * sign * o).collect()
}

/// Left-invariant field: `X~F(g) = ∂_{(h, z + ω(w, h)/2)} F(g)`.
pub fn tilde_x_apply<F: CylinderFunction + ?Sized>(
    form: &SkewForm,
    x: &TangentVector,
    f: &F,
    g: &GroupElement,
) -> Result<f64> {
    x.check(form)?;
    form.check_w(&g.w)?;
    form.check_c(&g.c)?;
    let v = field_direction(form, x, &g.w, 1.0);
    Ok(directional(f, g, &x.h, &v))
}

/// Right-invariant field: `X^F(g) = ∂_{(h, z - ω(w, h)/2)} F(g)`.
pub fn hat_x_apply<F: CylinderFunction + ?Sized>(
    form: &SkewForm,
    x: &TangentVector,
    f: &F,
    g: &GroupElement,
) -> Result<f64> {
    x.check(form)?;
    form.check_w(&g.w)?;
    form.check_c(&g.c)?;
    let v = field_direction(form, x, &g.w, -1.0);
    Ok(directional(f, g, &x.h, &v))
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Poly;
    impl CylinderFunction for Poly {
        fn value(&self, x: &[f64], c: &[f64]) -> f64 {
            x[0] * x[0] * c[0] + libm::sin(x[1]) + c[0] * c[0]
        }
        fn gradient(&self, x: &[f64], c: &[f64], gx: &mut [f64], gc: &mut [f64]) {
            gx[0] = 2.0 * x[0] * c[0];
            gx[1] = libm::cos(x[1]);
            gc[0] = x[0] * x[0] + 2.0 * c[0];
        }
        fn growth(&self) -> (f64, f64) {
            (2.0, 3.0)
        }
    }

    #[test]
    fn h3_values() {
        let f = SkewForm::h3();
        assert_eq!(omega_eval(&f, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), vec![1.0]);
        assert_eq!(omega_eval(&f, &[0.0, 1.0], &[1.0, 0.0]).unwrap(), vec![-1.0]);
        let g =
            group_mul(&f, &GroupElement::new(vec![1.0, 0.0], vec![0.0]), &GroupElement::new(vec![0.0, 1.0], vec![0.0]))
                .unwrap();
        assert_eq!(g, GroupElement::new(vec![1.0, 1.0], vec![0.5]));
        let ol = omega_lambda(&f, &[1.0]).unwrap();
        assert_eq!(ol.matvec(&[1.0, 0.0]), vec![0.0, 1.0]);
        assert_eq!(ol.matvec(&[0.0, 1.0]), vec![-1.0, 0.0]);
        assert!((hs_norm(f.omega(0)) - libm::sqrt(2.0)).abs() < 1e-15);
        assert_eq!(
            group_inv(&GroupElement::new(vec![1.0, 0.0], vec![0.5])),
            GroupElement::new(vec![-1.0, 0.0], vec![-0.5])
        );
    }

    #[test]
    fn rejects_bad_forms() {
        let m = Mat::from_row_major(2, 2, vec![0.0, 1.0, -0.9, 0.0]).unwrap();
        assert!(matches!(SkewForm::new(vec![m]), Err(Error::NotSkew { .. })));
        let j = Mat::from_row_major(2, 2, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        assert!(matches!(
            SkewForm::new(vec![j.clone(), j.scale(2.0)]),
            Err(Error::NotSurjective { rank: 1, dim_c: 2 })
        ));
        assert!(matches!(SkewForm::new(vec![Mat::zeros(3, 3)]), Err(Error::NotSurjective { .. })));
        assert!(omega_eval(&SkewForm::h3(), &[1.0], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn fields_on_simple_functions() {
        let f = SkewForm::h3();
        let c_fn = FiniteDifference::new(|_x: &[f64], c: &[f64]| c[0], (1.0, 1.0));
        let x = TangentVector::new(vec![0.3, -0.7], vec![0.2]);
        let g = GroupElement::new(vec![1.5, 0.4], vec![2.0]);
        let want = 0.2 + 0.5 * f.eval(&g.w, &x.h)[0];
        assert!((tilde_x_apply(&f, &x, &c_fn, &g).unwrap() - want).abs() < 1e-9);
        let want_hat = 0.2 - 0.5 * f.eval(&g.w, &x.h)[0];
        assert!((hat_x_apply(&f, &x, &c_fn, &g).unwrap() - want_hat).abs() < 1e-9);
        let e = GroupElement::identity(&f);
        assert_eq!(tilde_x_apply(&f, &x, &Poly, &e).unwrap(), hat_x_apply(&f, &x, &Poly, &e).unwrap());
    }

    #[test]
    fn fields_match_group_finite_differences() {
        let f = SkewForm::h3();
        let x = TangentVector::new(vec![0.3, -0.7], vec![0.2]);
        let g = GroupElement::new(vec![1.5, 0.4], vec![-0.6]);
        let mut errs = [0.0; 2];
        for (k, eps) in [1e-2, 5e-3].iter().enumerate() {
            let gp = group_mul(&f, &g, &x.scaled(*eps).as_element()).unwrap();
            let gm = group_mul(&f, &g, &x.scaled(-eps).as_element()).unwrap();
            let fd = (Poly.value(&gp.w, &gp.c) - Poly.value(&gm.w, &gm.c)) / (2.0 * eps);
            errs[k] = (fd - tilde_x_apply(&f, &x, &Poly, &g).unwrap()).abs();
        }
        assert!(errs[0] < 1e-3);
        // Second order: halving the step quarters the error.
        assert!(errs[1] < 0.3 * errs[0]);
        let lp = group_mul(&f, &x.scaled(1e-4).as_element(), &g).unwrap();
        let lm = group_mul(&f, &x.scaled(-1e-4).as_element(), &g).unwrap();
        let fd = (Poly.value(&lp.w, &lp.c) - Poly.value(&lm.w, &lm.c)) / 2e-4;
        assert!((fd - hat_x_apply(&f, &x, &Poly, &g).unwrap()).abs() < 1e-6);
    }

    #[test]
    fn finite_difference_hessian() {
        let fd = FiniteDifference::new(|x: &[f64], c: &[f64]| x[0] * x[1] * c[0] + x[0] * x[0], (1.0, 3.0));
        let h = fd.hessian(&[1.0, 2.0], &[3.0]).unwrap();
        let want = [[2.0, 3.0, 2.0], [3.0, 0.0, 1.0], [2.0, 1.0, 0.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((h[(i, j)] - want[i][j]).abs() < 1e-5, "{i}{j} {}", h[(i, j)]);
            }
        }
    }
}
