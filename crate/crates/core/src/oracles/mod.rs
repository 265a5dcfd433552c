//! Closed-form reference values.

mod gauss_poly;
pub mod quadrature;

pub use gauss_poly::{apply_reduced_l, apply_reduced_s, commutator_residual, GaussPolynomial, MonomialBasis};

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::error::{Error, Result};
use crate::group::SKEW_TOL;
use crate::linalg::{dot, norm, Mat, SymEigen};

/// Real canonical form `A = Q Ã Q^T`, `Ã` block diagonal with blocks
/// `[[0, a_i], [-a_i, 0]]` followed by a zero block.
#[derive(Clone, Debug)]
pub struct QuasiDiagonal {
    pub q: Mat,
    pub angles: Vec<f64>,
    pub zero_block: usize,
}

impl QuasiDiagonal {
    pub fn canonical(&self) -> Mat {
        let n = self.q.rows();
        let mut m = Mat::zeros(n, n);
        for (i, &a) in self.angles.iter().enumerate() {
            m[(2 * i, 2 * i + 1)] = a;
            m[(2 * i + 1, 2 * i)] = -a;
        }
        m
    }

    pub fn reconstruct(&self) -> Mat {
        self.q.matmul(&self.canonical()).matmul(&self.q.transpose())
    }
}

fn orthogonalize(v: &mut [f64], basis: &[Vec<f64>]) {
    for _ in 0..2 {
        for b in basis {
            let s = dot(v, b);
            for (x, y) in v.iter_mut().zip(b) {
                *x -= s * y;
            }
        }
    }
}

pub fn quasi_diagonalize(a: &Mat) -> Result<QuasiDiagonal> {
    if !a.is_square() {
        return Err(Error::Dimension { expected: a.rows(), got: a.cols() });
    }
    let residual = a.skew_residual();
    if residual > SKEW_TOL {
        return Err(Error::NotSkew { index: 0, residual });
    }
    let n = a.rows();
    let at = a.transpose();
    let eig = SymEigen::new(&at.matmul(a));
    let top = libm::sqrt(eig.values.first().copied().unwrap_or(0.0).max(0.0));
    let cutoff = 1e-12 * top.max(1e-300);
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut angles = Vec::new();
    for k in 0..n {
        if cols.len() + 1 >= n || libm::sqrt(eig.values[k].max(0.0)) <= cutoff {
            break;
        }
        let mut u = eig.vectors.column(k);
        orthogonalize(&mut u, &cols);
        let nu = norm(&u);
        if nu < 1e-6 {
            continue;
        }
        u.iter_mut().for_each(|x| *x /= nu);
        let mut q2 = at.matvec(&u);
        let ang = norm(&q2);
        if ang <= cutoff {
            continue;
        }
        orthogonalize(&mut q2, &cols);
        let n2 = norm(&q2);
        q2.iter_mut().for_each(|x| *x /= n2);
        cols.push(u);
        cols.push(q2);
        angles.push(ang);
    }
    let n_blocks = angles.len();
    for k in (0..n).rev() {
        if cols.len() == n {
            break;
        }
        let mut v = eig.vectors.column(k);
        orthogonalize(&mut v, &cols);
        let nv = norm(&v);
        if nv > 1e-6 {
            v.iter_mut().for_each(|x| *x /= nv);
            cols.push(v);
        }
    }
    // Fall back to coordinate vectors if the eigenvectors left gaps.
    for e in 0..n {
        if cols.len() == n {
            break;
        }
        let mut v = vec![0.0; n];
        v[e] = 1.0;
        orthogonalize(&mut v, &cols);
        let nv = norm(&v);
        if nv > 1e-6 {
            v.iter_mut().for_each(|x| *x /= nv);
            cols.push(v);
        }
    }
    let q = Mat::from_fn(n, n, |i, j| cols[j][i]);
    // Angles come out in the eigenvalue order, largest first.
    Ok(QuasiDiagonal { q, angles, zero_block: n - 2 * n_blocks })
}

/// `Σ = sqrt(A^T A) = Q diag(a_1, a_1, ..., 0) Q^T`.
pub fn ground_state_sigma(a: &Mat) -> Result<Mat> {
    let qd = quasi_diagonalize(a)?;
    let n = a.rows();
    let mut d = vec![0.0; n];
    for (i, &ang) in qd.angles.iter().enumerate() {
        d[2 * i] = ang;
        d[2 * i + 1] = ang;
    }
    Ok(qd.q.matmul(&Mat::diag(&d)).matmul(&qd.q.transpose()))
}

/// `Π_i sech(a_i T)`.
pub fn levy_char(angles: &[f64], horizon: f64) -> f64 {
    angles.iter().map(|&a| 1.0 / libm::cosh(a * horizon)).product()
}

/// `E exp(-½∫_0^T |A B_t|^2 dt) = det(cosh(Σ T))^{-1/2}`.
pub fn exp_quadratic_oracle(a: &Mat, horizon: f64) -> Result<f64> {
    let sigma = ground_state_sigma(a)?;
    let eig = SymEigen::new(&sigma);
    Ok(eig.values.iter().map(|&s| 1.0 / libm::sqrt(libm::cosh(s.max(0.0) * horizon))).product())
}

/// `E[e^{iλ Z_T} | B_T = x]` for the Lévy area on the Heisenberg group.
pub fn conditional_levy_char(lambda: f64, x: &[f64], horizon: f64) -> f64 {
    let u = 0.5 * lambda.abs() * horizon;
    let r2 = dot(x, x);
    // u / sinh u and u coth u - 1, with series near zero.
    let (ratio, excess) = if u < 1e-4 {
        let u2 = u * u;
        (1.0 - u2 / 6.0, u2 / 3.0)
    } else if u > 700.0 {
        (0.0, u - 1.0)
    } else {
        (u / libm::sinh(u), u / libm::tanh(u) - 1.0)
    };
    ratio * libm::exp(-r2 / (2.0 * horizon) * excess)
}

/// Density of the Heisenberg heat kernel with respect to `μ_T(dx) dc`, by
/// Fourier inversion of [`conditional_levy_char`].
pub fn gamma_h3_oracle(x: &[f64], c: f64, horizon: f64) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::Dimension { expected: 2, got: x.len() });
    }
    // The integrand decays like u e^{-u} with u = λT/2.
    let upper = 160.0 / horizon;
    let v =
        quadrature::integrate(|l| libm::cos(l * c) * conditional_levy_char(l, x, horizon), 0.0, upper, 1e-13, 1e-11)?;
    Ok(v / PI)
}

/// `∂_c γ_T(x, c) = -(1/π) ∫_0^∞ λ sin(λc) Φ(λ; x, T) dλ`.
pub fn gamma_h3_oracle_dc(x: &[f64], c: f64, horizon: f64) -> Result<f64> {
    if x.len() != 2 {
        return Err(Error::Dimension { expected: 2, got: x.len() });
    }
    let upper = 160.0 / horizon;
    let v = quadrature::integrate(
        |l| l * libm::sin(l * c) * conditional_levy_char(l, x, horizon),
        0.0,
        upper,
        1e-13,
        1e-11,
    )?;
    Ok(-v / PI)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_skew(n: usize, salt: u64) -> Mat {
        let mut g = crate::rng::RngStream::new(salt, n as u64).generator();
        let vals: Vec<f64> = (0..n * n).map(|_| g.normal()).collect();
        let b = Mat::from_row_major(n, n, vals).unwrap();
        b.sub(&b.transpose()).scale(0.5)
    }

    #[test]
    fn quasi_diagonal_simple_cases() {
        let j = Mat::from_row_major(2, 2, vec![0.0, 1.5, -1.5, 0.0]).unwrap();
        let qd = quasi_diagonalize(&j).unwrap();
        assert_eq!(qd.angles.len(), 1);
        assert!((qd.angles[0] - 1.5).abs() < 1e-14);
        assert!(qd.q.sub(&Mat::identity(2)).max_abs() < 1e-14);
        let z = quasi_diagonalize(&Mat::zeros(3, 3)).unwrap();
        assert!(z.angles.is_empty());
        assert_eq!(z.zero_block, 3);
        assert!(quasi_diagonalize(&Mat::identity(2)).is_err());
    }

    #[test]
    fn quasi_diagonal_random() {
        for (n, salt) in [(6, 1), (5, 2), (8, 3), (7, 4)] {
            let a = random_skew(n, salt);
            let qd = quasi_diagonalize(&a).unwrap();
            let qtq = qd.q.transpose().matmul(&qd.q);
            assert!(qtq.sub(&Mat::identity(n)).max_abs() < 1e-12);
            assert!(qd.reconstruct().sub(&a).max_abs() < 1e-10);
            assert!(qd.angles.windows(2).all(|w| w[0] >= w[1]));
            assert!((a.op_norm() - qd.angles[0]).abs() < 1e-10);
            assert_eq!(qd.angles.len(), n / 2);
        }
    }

    #[test]
    fn sigma_properties() {
        let a = random_skew(6, 9);
        let s = ground_state_sigma(&a).unwrap();
        assert!(a.matmul(&s).sub(&s.matmul(&a)).max_abs() < 1e-10);
        assert!(s.matmul(&s).add(&a.matmul(&a)).max_abs() < 1e-10);
        let j = Mat::from_row_major(2, 2, vec![0.0, 0.7, -0.7, 0.0]).unwrap();
        assert!(ground_state_sigma(&j).unwrap().sub(&Mat::identity(2).scale(0.7)).max_abs() < 1e-14);
    }

    #[test]
    fn closed_forms() {
        assert_eq!(levy_char(&[], 2.0), 1.0);
        assert!((levy_char(&[1.0], 1.0) - 0.648_054_273_663_885_4).abs() < 1e-12);
        let j = Mat::from_row_major(2, 2, vec![0.0, 1.0, -1.0, 0.0]).unwrap();
        assert!((exp_quadratic_oracle(&j, 1.0).unwrap() - 0.648_054_273_663_885_4).abs() < 1e-12);
        assert_eq!(exp_quadratic_oracle(&Mat::zeros(3, 3), 1.0).unwrap(), 1.0);
        let a = random_skew(5, 12);
        let qd = quasi_diagonalize(&a).unwrap();
        assert!((exp_quadratic_oracle(&a, 0.8).unwrap() - levy_char(&qd.angles, 0.8)).abs() < 1e-12);
    }

    #[test]
    fn gamma_oracle_values() {
        let v = gamma_h3_oracle(&[0.0, 0.0], 0.0, 1.0).unwrap();
        assert!((v - PI / 2.0).abs() < 1e-9);
        let a = gamma_h3_oracle(&[0.3, -0.2], 0.4, 1.0).unwrap();
        let b = gamma_h3_oracle(&[0.3, -0.2], -0.4, 1.0).unwrap();
        assert_eq!(a, b);
        let x = [0.5, 0.8];
        let total = quadrature::integrate(|c| gamma_h3_oracle(&x, c, 1.0).unwrap(), -15.0, 15.0, 1e-9, 1e-9).unwrap();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn gamma_derivative_matches_differences() {
        let x = [0.4, -0.3];
        for c in [-0.7, 0.0, 0.35, 1.2] {
            let h = 1e-4;
            let fd = (gamma_h3_oracle(&x, c + h, 1.0).unwrap() - gamma_h3_oracle(&x, c - h, 1.0).unwrap()) / (2.0 * h);
            let an = gamma_h3_oracle_dc(&x, c, 1.0).unwrap();
            assert!((fd - an).abs() < 1e-6, "{c}: {fd} {an}");
        }
    }
}
