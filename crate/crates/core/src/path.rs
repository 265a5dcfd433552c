//! Brownian paths, bridges and drift paths on a uniform time grid.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::Mat;
use crate::rng::{RngStream, StreamRng};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(invalid("horizon must be positive"));
        }
        if n_steps == 0 {
            return Err(invalid("n_steps must be at least 1"));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    /// `t_k`, with `t_n = T` exactly.
    pub fn time(&self, k: usize) -> f64 {
        if k == self.n_steps {
            self.horizon
        } else {
            self.horizon * k as f64 / self.n_steps as f64
        }
    }
}

/// Path values at the grid nodes; row `k` is the value at `t_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledPath {
    grid: TimeGrid,
    dim: usize,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn zeros(grid: TimeGrid, dim: usize) -> Self {
        SampledPath { grid, dim, values: vec![0.0; (grid.n_steps + 1) * dim] }
    }

    pub fn from_values(grid: TimeGrid, dim: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != (grid.n_steps + 1) * dim {
            return Err(Error::Dimension { expected: (grid.n_steps + 1) * dim, got: values.len() });
        }
        Ok(SampledPath { grid, dim, values })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_nodes(&self) -> usize {
        self.grid.n_steps + 1
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn row_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn terminal(&self) -> &[f64] {
        self.row(self.grid.n_steps)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn same_shape(&self, other: &SampledPath) -> bool {
        self.dim == other.dim && self.grid == other.grid
    }

    /// `p ↦ -p`.
    pub fn negated(&self) -> SampledPath {
        SampledPath { grid: self.grid, dim: self.dim, values: self.values.iter().map(|v| -v).collect() }
    }

    /// `t ↦ p(T - t) - p(T)`, a pathwise realisation of the group inverse.
    pub fn time_reversed(&self) -> SampledPath {
        let n = self.grid.n_steps;
        let mut out = SampledPath::zeros(self.grid, self.dim);
        let end = self.terminal().to_vec();
        for k in 0..=n {
            let src = self.row(n - k);
            for (o, (s, e)) in out.row_mut(k).iter_mut().zip(src.iter().zip(&end)) {
                *o = s - e;
            }
        }
        out
    }

    /// `t ↦ s p(t / c)` on the grid stretched to horizon `c T`.
    pub fn rescaled(&self, time_factor: f64, space_factor: f64) -> Result<SampledPath> {
        let grid = TimeGrid::new(self.grid.horizon * time_factor, self.grid.n_steps)?;
        Ok(SampledPath { grid, dim: self.dim, values: self.values.iter().map(|v| v * space_factor).collect() })
    }
}

/// Fill `path` with a Brownian motion drawn from `rng`.
pub fn fill_bm(path: &mut SampledPath, rng: &mut StreamRng) {
    let sd = libm::sqrt(path.grid.dt());
    let dim = path.dim;
    for k in 1..path.n_nodes() {
        for i in 0..dim {
            let prev = path.values[(k - 1) * dim + i];
            path.values[k * dim + i] = prev + sd * rng.normal();
        }
    }
}

pub fn sample_bm_with(grid: TimeGrid, dim: usize, rng: &mut StreamRng) -> SampledPath {
    let mut p = SampledPath::zeros(grid, dim);
    fill_bm(&mut p, rng);
    p
}

pub fn sample_bm(grid: TimeGrid, dim: usize, stream: RngStream) -> SampledPath {
    sample_bm_with(grid, dim, &mut stream.generator())
}

/// Pin a Brownian path to end at `x`: `X_t = B_t - (t/T)(B_T - x)`.
pub fn pin_to(path: &mut SampledPath, x: &[f64]) {
    let n = path.grid.n_steps;
    let dim = path.dim;
    let shift: Vec<f64> = path.terminal().iter().zip(x).map(|(b, x)| b - x).collect();
    for k in 1..n {
        let s = k as f64 / n as f64;
        for i in 0..dim {
            path.values[k * dim + i] -= s * shift[i];
        }
    }
    path.row_mut(n).copy_from_slice(x);
}

pub fn sample_bridge_with(grid: TimeGrid, dim: usize, x: &[f64], rng: &mut StreamRng) -> Result<SampledPath> {
    if x.len() != dim {
        return Err(Error::Dimension { expected: dim, got: x.len() });
    }
    let mut p = sample_bm_with(grid, dim, rng);
    pin_to(&mut p, x);
    Ok(p)
}

pub fn sample_bridge(grid: TimeGrid, dim: usize, x: &[f64], stream: RngStream) -> Result<SampledPath> {
    sample_bridge_with(grid, dim, x, &mut stream.generator())
}

/// `t ↦ (t/T) h`.
pub fn drift_path(grid: TimeGrid, h: &[f64]) -> SampledPath {
    let n = grid.n_steps;
    let dim = h.len();
    let mut p = SampledPath::zeros(grid, dim);
    for k in 1..n {
        let s = k as f64 / n as f64;
        for (o, hi) in p.row_mut(k).iter_mut().zip(h) {
            *o = s * hi;
        }
    }
    p.row_mut(n).copy_from_slice(h);
    p
}

/// `p + α q`.
pub fn shift_path(p: &SampledPath, alpha: f64, q: &SampledPath) -> Result<SampledPath> {
    if !p.same_shape(q) {
        return Err(Error::GridMismatch);
    }
    let values = p.values.iter().zip(&q.values).map(|(a, b)| a + alpha * b).collect();
    Ok(SampledPath { grid: p.grid, dim: p.dim, values })
}

/// Keep every `factor`-th node.
pub fn coarsen(p: &SampledPath, factor: usize) -> Result<SampledPath> {
    if factor == 0 || p.grid.n_steps % factor != 0 {
        return Err(invalid("coarsening factor must divide n_steps"));
    }
    let grid = TimeGrid::new(p.grid.horizon, p.grid.n_steps / factor)?;
    let mut values = Vec::with_capacity((grid.n_steps + 1) * p.dim);
    for k in 0..=grid.n_steps {
        values.extend_from_slice(p.row(k * factor));
    }
    Ok(SampledPath { grid, dim: p.dim, values })
}

/// Coordinate projection `P_n A P_n`: zero every row and column with index `>= n`.
pub fn galerkin_project(a: &Mat, n: usize) -> Result<Mat> {
    if !a.is_square() || n > a.rows() {
        return Err(invalid("projection rank must not exceed the matrix size"));
    }
    Ok(Mat::from_fn(a.rows(), a.cols(), |i, k| if i < n && k < n { a[(i, k)] } else { 0.0 }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::hs_norm;

    fn grid() -> TimeGrid {
        TimeGrid::new(2.0, 16).unwrap()
    }

    #[test]
    fn grid_endpoints() {
        let g = TimeGrid::new(0.3, 7).unwrap();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(7), 0.3);
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn bm_and_bridge_basics() {
        let p = sample_bm(grid(), 3, RngStream::new(1, 2));
        assert_eq!(p.row(0), &[0.0, 0.0, 0.0]);
        let x = [0.25, -1.0, 3.0];
        let b = sample_bridge(grid(), 3, &x, RngStream::new(1, 2)).unwrap();
        assert_eq!(b.terminal(), &x);
        assert_eq!(b.row(0), &[0.0, 0.0, 0.0]);
        assert_eq!(p, sample_bm(grid(), 3, RngStream::new(1, 2)));
    }

    #[test]
    fn drift_and_shift() {
        let h = [1.0, -2.0];
        let d = drift_path(grid(), &h);
        assert_eq!(d.terminal(), &h);
        assert_eq!(d.row(0), &[0.0, 0.0]);
        assert_eq!(d.row(8), &[0.5, -1.0]);
        let p = sample_bm(grid(), 2, RngStream::new(4, 0));
        assert_eq!(shift_path(&p, 0.0, &d).unwrap(), p);
        let s = shift_path(&p, 1.0, &d).unwrap();
        assert!((s.terminal()[0] - p.terminal()[0] - 1.0).abs() < 1e-15);
        let back = shift_path(&shift_path(&p, 0.7, &d).unwrap(), -0.7, &d).unwrap();
        for (a, b) in back.values().iter().zip(p.values()) {
            assert!((a - b).abs() < 1e-14);
        }
        let other = sample_bm(TimeGrid::new(2.0, 8).unwrap(), 2, RngStream::new(4, 0));
        assert_eq!(shift_path(&p, 1.0, &other), Err(Error::GridMismatch));
    }

    #[test]
    fn time_reversal_and_coarsening() {
        let p = sample_bm(grid(), 2, RngStream::new(9, 9));
        let r = p.time_reversed();
        assert_eq!(r.row(0), &[0.0, 0.0]);
        for (a, b) in r.terminal().iter().zip(p.terminal()) {
            assert!((a + b).abs() < 1e-15);
        }
        let c = coarsen(&p, 4).unwrap();
        assert_eq!(c.grid().n_steps(), 4);
        assert_eq!(c.row(1), p.row(4));
        assert!(coarsen(&p, 3).is_err());
    }

    fn model_form(n: usize) -> Mat {
        Mat::from_fn(n, n, |i, k| {
            let v = 1.0 / ((i + 1) * (k + 1)) as f64;
            if i < k {
                v
            } else if i > k {
                -v
            } else {
                0.0
            }
        })
    }

    #[test]
    fn galerkin_residuals() {
        let a = model_form(64);
        assert_eq!(galerkin_project(&a, 64).unwrap(), a);
        let mut prev = f64::INFINITY;
        for n in 0..=64 {
            let r = hs_norm(&a.sub(&galerkin_project(&a, n).unwrap()));
            assert!(r <= prev + 1e-15);
            prev = r;
        }
        // Direct tail sum: pairs i < k with k > 8, counted twice by skewness.
        let mut tail = 0.0;
        for i in 1..=64usize {
            for k in (i + 1)..=64usize {
                if k > 8 {
                    tail += 2.0 / ((i * k) as f64).powi(2);
                }
            }
        }
        let r = hs_norm(&a.sub(&galerkin_project(&a, 8).unwrap()));
        assert!((r - libm::sqrt(tail)).abs() < 1e-14);
    }
}
