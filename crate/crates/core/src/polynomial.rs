//! Symbolic path functionals built from `ρ_T(B)^{-1}`, the cross matrices
//! `ρ_T(B, 𝐡_i)`, the fibre variable `c` and the vectors `z_i`, `ω(B_T, h_i)`.
//!
//! The set is closed under the derivative along shifts `B -> B - ε𝐡_k`,
//! `c -> c - ε z_k - ε ω(B_T, h_k)/2` and under multiplication, so iterated
//! adjoints `X~*_m ... X~*_1 1` can be built exactly.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::group::{SkewForm, TangentVector};
use crate::linalg::{dot, Mat};
use crate::path::{drift_path, SampledPath};
use crate::quadratics::{rho, rho_matrix};

/// `d x d` matrix atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum MatAtom {
    /// `ρ_T(B)^{-1}`
    RhoInv,
    /// `ρ_T(B, 𝐡_i)`
    Cross(usize),
    /// `ρ_T(𝐡_i, B)`
    CrossT(usize),
    /// `ρ_T(𝐡_i, 𝐡_j)`
    Drift(usize, usize),
}

/// `d`-vector atoms.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VecAtom {
    C,
    Z(usize),
    /// `ω(B_T, h_i)`
    OmegaB(usize),
    /// `ω(h_i, h_j)`
    OmegaH(usize, usize),
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Factor {
    /// `right · (W left)` with `W` the product of `word`.
    Bilinear {
        word: Vec<MatAtom>,
        left: VecAtom,
        right: VecAtom,
    },
    Trace(Vec<MatAtom>),
    /// `<h_i, B_T> / T`
    Pairing(usize),
    /// `<h_i, h_j> / T`
    Inner(usize, usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub coeff: f64,
    pub factors: Vec<Factor>,
}

/// A finite sum of products of [`Factor`]s, with the directions `X_i = (h_i, z_i)`
/// its atoms refer to.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialFunctional {
    dirs: Vec<TangentVector>,
    terms: Vec<Term>,
}

fn d_mat(a: MatAtom, k: usize) -> Vec<(f64, Vec<MatAtom>)> {
    match a {
        MatAtom::RhoInv => vec![
            (1.0, vec![MatAtom::RhoInv, MatAtom::Cross(k), MatAtom::RhoInv]),
            (1.0, vec![MatAtom::RhoInv, MatAtom::CrossT(k), MatAtom::RhoInv]),
        ],
        MatAtom::Cross(i) => vec![(-1.0, vec![MatAtom::Drift(k, i)])],
        MatAtom::CrossT(i) => vec![(-1.0, vec![MatAtom::Drift(i, k)])],
        MatAtom::Drift(..) => Vec::new(),
    }
}

fn d_vec(v: VecAtom, k: usize) -> Vec<(f64, VecAtom)> {
    match v {
        VecAtom::C => vec![(-1.0, VecAtom::Z(k)), (-0.5, VecAtom::OmegaB(k))],
        VecAtom::OmegaB(i) => vec![(-1.0, VecAtom::OmegaH(k, i))],
        VecAtom::Z(_) | VecAtom::OmegaH(..) => Vec::new(),
    }
}

fn d_word(word: &[MatAtom], k: usize) -> Vec<(f64, Vec<MatAtom>)> {
    let mut out = Vec::new();
    for (pos, &a) in word.iter().enumerate() {
        for (s, rep) in d_mat(a, k) {
            let mut w = Vec::with_capacity(word.len() + rep.len());
            w.extend_from_slice(&word[..pos]);
            w.extend(rep);
            w.extend_from_slice(&word[pos + 1..]);
            out.push((s, w));
        }
    }
    out
}

fn d_factor(f: &Factor, k: usize) -> Vec<(f64, Factor)> {
    match f {
        Factor::Bilinear { word, left, right } => {
            let mut out: Vec<(f64, Factor)> = d_word(word, k)
                .into_iter()
                .map(|(s, w)| (s, Factor::Bilinear { word: w, left: *left, right: *right }))
                .collect();
            for (s, l) in d_vec(*left, k) {
                out.push((s, Factor::Bilinear { word: word.clone(), left: l, right: *right }));
            }
            for (s, r) in d_vec(*right, k) {
                out.push((s, Factor::Bilinear { word: word.clone(), left: *left, right: r }));
            }
            out
        }
        Factor::Trace(word) => d_word(word, k).into_iter().map(|(s, w)| (s, Factor::Trace(w))).collect(),
        Factor::Pairing(i) => vec![(-1.0, Factor::Inner(*i, k))],
        Factor::Inner(..) => Vec::new(),
    }
}

impl PolynomialFunctional {
    pub fn constant(dirs: Vec<TangentVector>, value: f64) -> Self {
        PolynomialFunctional { dirs, terms: vec![Term { coeff: value, factors: Vec::new() }] }.simplified()
    }

    pub fn one(dirs: Vec<TangentVector>) -> Self {
        PolynomialFunctional::constant(dirs, 1.0)
    }

    pub fn from_terms(dirs: Vec<TangentVector>, terms: Vec<Term>) -> Self {
        PolynomialFunctional { dirs, terms }.simplified()
    }

    /// `ρ_T(B)^{-1} c·c`.
    pub fn rho_inv_quadratic(dirs: Vec<TangentVector>) -> Self {
        let f = Factor::Bilinear { word: vec![MatAtom::RhoInv], left: VecAtom::C, right: VecAtom::C };
        PolynomialFunctional::from_terms(dirs, vec![Term { coeff: 1.0, factors: vec![f] }])
    }

    pub fn directions(&self) -> &[TangentVector] {
        &self.dirs
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn with_directions(&self, dirs: Vec<TangentVector>) -> Result<Self> {
        if dirs.len() < self.dirs.len() || dirs[..self.dirs.len()] != self.dirs[..] {
            return Err(crate::error::invalid("new directions must extend the old ones"));
        }
        Ok(PolynomialFunctional { dirs, terms: self.terms.clone() })
    }

    /// Sort factors, merge equal terms and drop zero coefficients.
    fn simplified(mut self) -> Self {
        let mut acc: BTreeMap<Vec<Factor>, f64> = BTreeMap::new();
        for mut t in core::mem::take(&mut self.terms) {
            t.factors.sort();
            *acc.entry(t.factors).or_insert(0.0) += t.coeff;
        }
        self.terms =
            acc.into_iter().filter(|(_, c)| *c != 0.0).map(|(factors, coeff)| Term { coeff, factors }).collect();
        self
    }

    pub fn add(&self, other: &PolynomialFunctional) -> PolynomialFunctional {
        assert_eq!(self.dirs, other.dirs, "functionals must share directions");
        let mut terms = self.terms.clone();
        terms.extend(other.terms.iter().cloned());
        PolynomialFunctional { dirs: self.dirs.clone(), terms }.simplified()
    }

    pub fn mul(&self, other: &PolynomialFunctional) -> PolynomialFunctional {
        assert_eq!(self.dirs, other.dirs, "functionals must share directions");
        let mut terms = Vec::with_capacity(self.terms.len() * other.terms.len());
        for a in &self.terms {
            for b in &other.terms {
                let mut factors = a.factors.clone();
                factors.extend(b.factors.iter().cloned());
                terms.push(Term { coeff: a.coeff * b.coeff, factors });
            }
        }
        PolynomialFunctional { dirs: self.dirs.clone(), terms }.simplified()
    }

    /// Derivative along the shift by direction `k` (the path-space `X~_k`).
    pub fn derivative(&self, k: usize) -> PolynomialFunctional {
        assert!(k < self.dirs.len(), "direction index out of range");
        let mut terms = Vec::new();
        for t in &self.terms {
            for (pos, f) in t.factors.iter().enumerate() {
                for (s, df) in d_factor(f, k) {
                    let mut factors = t.factors.clone();
                    factors[pos] = df;
                    terms.push(Term { coeff: t.coeff * s, factors });
                }
            }
        }
        PolynomialFunctional { dirs: self.dirs.clone(), terms }.simplified()
    }

    /// `X~_k log J⁰ = -ρ^{-1}Mρ^{-1}c·c + ρ^{-1}c·(z + ω(B_T,h)/2) + tr(ρ^{-1}M)`, `M = ρ(B, 𝐡_k)`.
    pub fn xtilde_log_j0(dirs: Vec<TangentVector>, k: usize) -> PolynomialFunctional {
        use MatAtom::*;
        let b = |word: Vec<MatAtom>, left, right| Factor::Bilinear { word, left, right };
        let terms = vec![
            Term { coeff: -1.0, factors: vec![b(vec![RhoInv, Cross(k), RhoInv], VecAtom::C, VecAtom::C)] },
            Term { coeff: 1.0, factors: vec![b(vec![RhoInv], VecAtom::C, VecAtom::Z(k))] },
            Term { coeff: 0.5, factors: vec![b(vec![RhoInv], VecAtom::C, VecAtom::OmegaB(k))] },
            Term { coeff: 1.0, factors: vec![Factor::Trace(vec![RhoInv, Cross(k)])] },
        ];
        PolynomialFunctional::from_terms(dirs, terms)
    }

    /// `X~*_k Ψ = X~_k Ψ + Ψ (X~_k log J⁰ + <h_k, B_T>/T)`.
    pub fn xstar(&self, k: usize) -> PolynomialFunctional {
        let mut weight = PolynomialFunctional::xtilde_log_j0(self.dirs.clone(), k);
        weight = weight.add(&PolynomialFunctional::from_terms(
            self.dirs.clone(),
            vec![Term { coeff: 1.0, factors: vec![Factor::Pairing(k)] }],
        ));
        self.derivative(k).add(&self.mul(&weight))
    }

    /// `ψ = X~*_m ... X~*_1 1` for the directions in order (`X~*_1` applied first).
    pub fn psi(dirs: Vec<TangentVector>) -> PolynomialFunctional {
        let m = dirs.len();
        let mut p = PolynomialFunctional::one(dirs);
        for k in 0..m {
            p = p.xstar(k);
        }
        p
    }

    /// Every atom refers to a known direction, and every matrix word is non-empty.
    pub fn is_well_formed(&self) -> bool {
        let n = self.dirs.len();
        let mat_ok = |a: &MatAtom| match *a {
            MatAtom::RhoInv => true,
            MatAtom::Cross(i) | MatAtom::CrossT(i) => i < n,
            MatAtom::Drift(i, j) => i < n && j < n,
        };
        let vec_ok = |v: &VecAtom| match *v {
            VecAtom::C => true,
            VecAtom::Z(i) | VecAtom::OmegaB(i) => i < n,
            VecAtom::OmegaH(i, j) => i < n && j < n,
        };
        self.terms.iter().all(|t| {
            t.factors.iter().all(|f| match f {
                Factor::Bilinear { word, left, right } => {
                    !word.is_empty() && word.iter().all(mat_ok) && vec_ok(left) && vec_ok(right)
                }
                Factor::Trace(word) => !word.is_empty() && word.iter().all(mat_ok),
                Factor::Pairing(i) => *i < n,
                Factor::Inner(i, j) => *i < n && *j < n,
            })
        })
    }

    pub fn eval(&self, form: &SkewForm, p: &SampledPath, c: &[f64]) -> Result<f64> {
        let ctx = EvalContext::new(form, &self.dirs, p, c)?;
        Ok(self.eval_in(&ctx))
    }

    pub fn eval_in(&self, ctx: &EvalContext) -> f64 {
        self.terms.iter().map(|t| t.coeff * t.factors.iter().map(|f| ctx.factor(f)).product::<f64>()).sum()
    }
}

/// Numerical values of all atoms for one `(B, c)`.
pub struct EvalContext {
    rho_inv: Mat,
    cross: Vec<Mat>,
    cross_t: Vec<Mat>,
    drift: Vec<Vec<Mat>>,
    c: Vec<f64>,
    z: Vec<Vec<f64>>,
    omega_b: Vec<Vec<f64>>,
    omega_h: Vec<Vec<Vec<f64>>>,
    pairing: Vec<f64>,
    inner: Vec<Vec<f64>>,
}

impl EvalContext {
    pub fn new(form: &SkewForm, dirs: &[TangentVector], p: &SampledPath, c: &[f64]) -> Result<Self> {
        if c.len() != form.dim_c() {
            return Err(Error::Dimension { expected: form.dim_c(), got: c.len() });
        }
        for x in dirs {
            x.check(form)?;
        }
        let r = rho(form, p)?;
        let rho_inv = r.cholesky()?.inverse();
        let grid = p.grid();
        let t = grid.horizon();
        let drifts: Vec<SampledPath> = dirs.iter().map(|x| drift_path(grid, &x.h)).collect();
        let cross: Vec<Mat> =
            drifts.iter().map(|d| rho_matrix(form, p, d).map(|m| m.entries)).collect::<Result<_>>()?;
        let cross_t = cross.iter().map(Mat::transpose).collect();
        let mut drift = Vec::with_capacity(dirs.len());
        for a in &drifts {
            drift.push(drifts.iter().map(|b| rho_matrix(form, a, b).map(|m| m.entries)).collect::<Result<Vec<_>>>()?);
        }
        let bt = p.terminal();
        Ok(EvalContext {
            rho_inv,
            cross,
            cross_t,
            drift,
            c: c.to_vec(),
            z: dirs.iter().map(|x| x.z.clone()).collect(),
            omega_b: dirs.iter().map(|x| form.eval(bt, &x.h)).collect(),
            omega_h: dirs.iter().map(|a| dirs.iter().map(|b| form.eval(&a.h, &b.h)).collect()).collect(),
            pairing: dirs.iter().map(|x| dot(&x.h, bt) / t).collect(),
            inner: dirs.iter().map(|a| dirs.iter().map(|b| dot(&a.h, &b.h) / t).collect()).collect(),
        })
    }

    fn mat(&self, a: MatAtom) -> &Mat {
        match a {
            MatAtom::RhoInv => &self.rho_inv,
            MatAtom::Cross(i) => &self.cross[i],
            MatAtom::CrossT(i) => &self.cross_t[i],
            MatAtom::Drift(i, j) => &self.drift[i][j],
        }
    }

    fn vector(&self, v: VecAtom) -> &[f64] {
        match v {
            VecAtom::C => &self.c,
            VecAtom::Z(i) => &self.z[i],
            VecAtom::OmegaB(i) => &self.omega_b[i],
            VecAtom::OmegaH(i, j) => &self.omega_h[i][j],
        }
    }

    fn factor(&self, f: &Factor) -> f64 {
        match f {
            Factor::Bilinear { word, left, right } => {
                let mut v = self.vector(*left).to_vec();
                for a in word.iter().rev() {
                    v = self.mat(*a).matvec(&v);
                }
                dot(self.vector(*right), &v)
            }
            Factor::Trace(word) => {
                let mut m = self.mat(word[0]).clone();
                for a in &word[1..] {
                    m = m.matmul(self.mat(*a));
                }
                m.trace()
            }
            Factor::Pairing(i) => self.pairing[*i],
            Factor::Inner(i, j) => self.inner[*i][*j],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::path::{sample_bm, shift_path, TimeGrid};
    use crate::rng::RngStream;

    fn setup() -> (SkewForm, SampledPath, Vec<f64>, Vec<TangentVector>) {
        let form = SkewForm::free_step_two(3);
        let p = sample_bm(TimeGrid::new(1.0, 128).unwrap(), 3, RngStream::new(21, 0));
        let c = vec![0.2, -0.1, 0.3];
        let dirs = vec![
            TangentVector::new(vec![0.5, -0.2, 0.1], vec![0.1, 0.0, -0.3]),
            TangentVector::new(vec![0.0, 0.3, 0.4], vec![-0.2, 0.25, 0.0]),
        ];
        (form, p, c, dirs)
    }

    /// `Ψ` evaluated at the shift of `(p, c)` by `ε X_k`, atoms fixed.
    fn shifted(psi: &PolynomialFunctional, form: &SkewForm, p: &SampledPath, c: &[f64], k: usize, eps: f64) -> f64 {
        let x = &psi.directions()[k];
        let d = drift_path(p.grid(), &x.h);
        let ps = shift_path(p, -eps, &d).unwrap();
        let om = form.eval(p.terminal(), &x.h);
        let cs: Vec<f64> = (0..c.len()).map(|j| c[j] - eps * x.z[j] - 0.5 * eps * om[j]).collect();
        psi.eval(form, &ps, &cs).unwrap()
    }

    fn fd(psi: &PolynomialFunctional, form: &SkewForm, p: &SampledPath, c: &[f64], k: usize) -> f64 {
        let h = 1e-3;
        let f = |e: f64| shifted(psi, form, p, c, k, e);
        (-f(2.0 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn derivative_matches_shift_differences() {
        let (form, p, c, dirs) = setup();
        let mut psi = PolynomialFunctional::rho_inv_quadratic(dirs.clone());
        psi = psi.add(&PolynomialFunctional::xtilde_log_j0(dirs.clone(), 1));
        for k in 0..2 {
            let exact = psi.derivative(k).eval(&form, &p, &c).unwrap();
            let approx = fd(&psi, &form, &p, &c, k);
            assert!((exact - approx).abs() < 1e-6 * (1.0 + exact.abs()), "{k}: {exact} vs {approx}");
        }
    }

    #[test]
    fn xtilde_log_j0_matches_log_density() {
        let (form, p, c, dirs) = setup();
        let logj = |pp: &SampledPath, cc: &[f64]| crate::heat_kernel::log_j0_density(&form, pp, cc).unwrap();
        let x = &dirs[0];
        let d = drift_path(p.grid(), &x.h);
        let om = form.eval(p.terminal(), &x.h);
        let at = |e: f64| {
            let cs: Vec<f64> = (0..3).map(|j| c[j] - e * x.z[j] - 0.5 * e * om[j]).collect();
            logj(&shift_path(&p, -e, &d).unwrap(), &cs)
        };
        let exact = PolynomialFunctional::xtilde_log_j0(dirs.clone(), 0).eval(&form, &p, &c).unwrap();
        let mut errs = Vec::new();
        for eps in [1e-2, 5e-3, 2.5e-3] {
            errs.push(((at(eps) - at(-eps)) / (2.0 * eps) - exact).abs());
        }
        assert!(errs[2] < 1e-3);
        // Second order convergence over the ladder.
        assert!(errs[1] < 0.3 * errs[0] && errs[2] < 0.3 * errs[1], "{errs:?}");
    }

    #[test]
    fn xtilde_log_j0_special_cases() {
        let (form, p, c, _) = setup();
        let z = vec![0.3, -0.1, 0.7];
        let dirs = vec![TangentVector::new(vec![0.0; 3], z.clone())];
        let v = PolynomialFunctional::xtilde_log_j0(dirs, 0).eval(&form, &p, &c).unwrap();
        let r = rho(&form, &p).unwrap().cholesky().unwrap();
        assert!((v - dot(&r.solve(&c), &z)).abs() < 1e-10);
        let h = vec![0.4, 0.1, -0.2];
        let dirs = vec![TangentVector::new(h.clone(), vec![0.0; 3])];
        let v = PolynomialFunctional::xtilde_log_j0(dirs, 0).eval(&form, &p, &[0.0; 3]).unwrap();
        let m = rho_matrix(&form, &p, &drift_path(p.grid(), &h)).unwrap().entries;
        assert!((v - r.inverse().matmul(&m).trace()).abs() < 1e-10);
    }

    #[test]
    fn psi_is_closed_and_consistent() {
        let (form, p, c, dirs) = setup();
        let psi1 = PolynomialFunctional::psi(dirs[..1].to_vec()).with_directions(dirs.clone()).unwrap();
        let psi2 = PolynomialFunctional::psi(dirs.clone());
        assert!(psi1.is_well_formed() && psi2.is_well_formed());
        // X~*_2 applied to psi1 by hand: derivative by finite differences.
        let ctx_val = psi1.eval(&form, &p, &c).unwrap();
        let weight = PolynomialFunctional::xtilde_log_j0(dirs.clone(), 1).eval(&form, &p, &c).unwrap()
            + dot(&dirs[1].h, p.terminal());
        let manual = fd(&psi1, &form, &p, &c, 1) + ctx_val * weight;
        let exact = psi2.eval(&form, &p, &c).unwrap();
        assert!((manual - exact).abs() < 1e-6 * (1.0 + exact.abs()));
    }

    #[test]
    fn constant_has_zero_derivative() {
        let (form, p, c, dirs) = setup();
        let one = PolynomialFunctional::one(dirs);
        assert!(one.derivative(0).terms().is_empty());
        assert_eq!(one.eval(&form, &p, &c).unwrap(), 1.0);
    }
}
