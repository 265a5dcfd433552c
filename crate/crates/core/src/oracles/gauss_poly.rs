//! Polynomials `p` standing for `Φ p` with the ground state
//! `Φ(x) = exp(-½ Σx·x)`, and the conjugated operators
//! `L_red = ½Δ - Σx·∇ - ½tr Σ` and `S_red = i Ax·∇`.

use alloc::collections::BTreeMap;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::ground_state_sigma;
use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;

pub const MAX_DEGREE: usize = 10;

/// Graded monomial basis of polynomials in `n` variables up to degree `m`.
#[derive(Clone, Debug, PartialEq)]
pub struct MonomialBasis {
    n_vars: usize,
    max_degree: usize,
    exponents: Vec<Vec<u8>>,
    index: BTreeMap<Vec<u8>, usize>,
}

impl MonomialBasis {
    pub fn new(n_vars: usize, max_degree: usize) -> Result<Arc<Self>> {
        if max_degree > MAX_DEGREE {
            return Err(invalid("polynomial degree is capped at 10"));
        }
        let mut exponents = Vec::new();
        for deg in 0..=max_degree {
            let mut cur = vec![0u8; n_vars];
            push_degree(&mut exponents, &mut cur, 0, deg);
        }
        let index = exponents.iter().enumerate().map(|(i, e)| (e.clone(), i)).collect();
        Ok(Arc::new(MonomialBasis { n_vars, max_degree, exponents, index }))
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn exponent(&self, k: usize) -> &[u8] {
        &self.exponents[k]
    }

    pub fn find(&self, e: &[u8]) -> Option<usize> {
        self.index.get(e).copied()
    }
}

fn push_degree(out: &mut Vec<Vec<u8>>, cur: &mut Vec<u8>, var: usize, left: usize) {
    if cur.is_empty() {
        if left == 0 {
            out.push(Vec::new());
        }
        return;
    }
    if var + 1 == cur.len() {
        cur[var] = left as u8;
        out.push(cur.clone());
        cur[var] = 0;
        return;
    }
    for k in (0..=left).rev() {
        cur[var] = k as u8;
        push_degree(out, cur, var + 1, left - k);
    }
    cur[var] = 0;
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussPolynomial {
    basis: Arc<MonomialBasis>,
    coeffs: Vec<Complex64>,
}

impl GaussPolynomial {
    pub fn zero(basis: &Arc<MonomialBasis>) -> Self {
        GaussPolynomial { basis: basis.clone(), coeffs: vec![Complex64::new(0.0, 0.0); basis.len()] }
    }

    pub fn monomial(basis: &Arc<MonomialBasis>, exponent: &[u8], coeff: Complex64) -> Result<Self> {
        let k = basis.find(exponent).ok_or_else(|| invalid("monomial outside the basis"))?;
        let mut p = GaussPolynomial::zero(basis);
        p.coeffs[k] = coeff;
        Ok(p)
    }

    pub fn basis(&self) -> &Arc<MonomialBasis> {
        &self.basis
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn degree(&self) -> Option<usize> {
        self.coeffs
            .iter()
            .enumerate()
            .filter(|(_, c)| c.norm() > 0.0)
            .map(|(k, _)| self.basis.exponent(k).iter().map(|&e| e as usize).sum())
            .max()
    }

    pub fn eval(&self, x: &[f64]) -> Complex64 {
        let mut s = Complex64::new(0.0, 0.0);
        for (k, c) in self.coeffs.iter().enumerate() {
            if c.norm() == 0.0 {
                continue;
            }
            let m: f64 = self.basis.exponent(k).iter().zip(x).map(|(&e, &xi)| libm::pow(xi, e as f64)).product();
            s += c * m;
        }
        s
    }

    pub fn add(&self, other: &GaussPolynomial) -> GaussPolynomial {
        let coeffs = self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a + b).collect();
        GaussPolynomial { basis: self.basis.clone(), coeffs }
    }

    pub fn scale(&self, s: Complex64) -> GaussPolynomial {
        GaussPolynomial { basis: self.basis.clone(), coeffs: self.coeffs.iter().map(|c| c * s).collect() }
    }

    pub fn max_abs_coeff(&self) -> f64 {
        self.coeffs.iter().fold(0.0, |m, c| m.max(c.norm()))
    }

    fn add_to(&mut self, e: &[u8], v: Complex64) {
        let k = self.basis.find(e).expect("degree-preserving operator left the basis");
        self.coeffs[k] += v;
    }
}

/// `Σ_{ij} M_ij x_j ∂_i p`, scaled by `s`.
fn apply_linear_field(m: &Mat, s: Complex64, g: &GaussPolynomial, out: &mut GaussPolynomial) {
    let n = g.basis.n_vars();
    let mut e = vec![0u8; n];
    for (k, c) in g.coeffs.iter().enumerate() {
        if c.norm() == 0.0 {
            continue;
        }
        let alpha = g.basis.exponent(k);
        for i in 0..n {
            if alpha[i] == 0 {
                continue;
            }
            for j in 0..n {
                let mij = m[(i, j)];
                if mij == 0.0 {
                    continue;
                }
                e.copy_from_slice(alpha);
                e[i] -= 1;
                e[j] += 1;
                out.add_to(&e, c * s * (mij * alpha[i] as f64));
            }
        }
    }
}

fn check_dims(a: &Mat, g: &GaussPolynomial) -> Result<()> {
    if !a.is_square() || a.rows() != g.basis.n_vars() {
        return Err(Error::Dimension { expected: g.basis.n_vars(), got: a.rows() });
    }
    Ok(())
}

fn reduced_l_with_sigma(sigma: &Mat, g: &GaussPolynomial) -> GaussPolynomial {
    let n = g.basis.n_vars();
    let mut out = g.scale(Complex64::new(-0.5 * sigma.trace(), 0.0));
    let mut e = vec![0u8; n];
    for (k, c) in g.coeffs.iter().enumerate() {
        if c.norm() == 0.0 {
            continue;
        }
        let alpha = g.basis.exponent(k);
        for i in 0..n {
            if alpha[i] >= 2 {
                e.copy_from_slice(alpha);
                e[i] -= 2;
                out.add_to(&e, c * (0.5 * (alpha[i] as f64) * (alpha[i] as f64 - 1.0)));
            }
        }
    }
    apply_linear_field(sigma, Complex64::new(-1.0, 0.0), g, &mut out);
    out
}

fn reduced_s(a: &Mat, g: &GaussPolynomial) -> GaussPolynomial {
    let mut out = GaussPolynomial::zero(&g.basis);
    apply_linear_field(a, Complex64::new(0.0, 1.0), g, &mut out);
    out
}

/// `(½Δ - Σx·∇ - ½tr Σ) g`, so that `L(Φg) = Φ L_red g` for `L = ½Δ - ½|Ax|^2`.
pub fn apply_reduced_l(a: &Mat, g: &GaussPolynomial) -> Result<GaussPolynomial> {
    check_dims(a, g)?;
    Ok(reduced_l_with_sigma(&ground_state_sigma(a)?, g))
}

/// `i Ax·∇ g`.
pub fn apply_reduced_s(a: &Mat, g: &GaussPolynomial) -> Result<GaussPolynomial> {
    check_dims(a, g)?;
    Ok(reduced_s(a, g))
}

/// Largest coefficient of `[L_red, S_red] g` over the monomial basis of degree `<= m`.
pub fn commutator_residual(a: &Mat, m: usize) -> Result<f64> {
    let basis = MonomialBasis::new(a.rows(), m)?;
    let sigma = ground_state_sigma(a)?;
    let mut worst: f64 = 0.0;
    for k in 0..basis.len() {
        let g = GaussPolynomial::monomial(&basis, basis.exponent(k), Complex64::new(1.0, 0.0))?;
        let ls = reduced_l_with_sigma(&sigma, &reduced_s(a, &g));
        let sl = reduced_s(a, &reduced_l_with_sigma(&sigma, &g));
        let diff = ls.add(&sl.scale(Complex64::new(-1.0, 0.0)));
        worst = worst.max(diff.max_abs_coeff());
    }
    Ok(worst)
}
