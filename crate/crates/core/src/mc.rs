//! Deterministic Monte Carlo driver.
//!
//! Paths are grouped into fixed-size blocks. Each block accumulates its own
//! moments and the blocks are merged by a fixed pairwise tree, so the result
//! is bit-identical whatever executor (and thread count) evaluates the blocks.

use alloc::vec;
use alloc::vec::Vec;

use crate::stats::McEstimate;

pub const BLOCK_SIZE: usize = 512;

/// Evaluates independent blocks, possibly in parallel. Outputs must be
/// returned in block order.
pub trait Executor: Sync {
    fn map_blocks<A, F>(&self, n_blocks: usize, f: F) -> Vec<A>
    where
        A: Send,
        F: Fn(usize) -> A + Sync + Send;
}

#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map_blocks<A, F>(&self, n_blocks: usize, f: F) -> Vec<A>
    where
        A: Send,
        F: Fn(usize) -> A + Sync + Send,
    {
        (0..n_blocks).map(f).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct McConfig {
    pub n_paths: usize,
    pub n_steps: usize,
    pub seed: u64,
}

impl McConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64) -> Self {
        McConfig { n_paths, n_steps, seed }
    }
}

impl Default for McConfig {
    fn default() -> Self {
        McConfig { n_paths: 100_000, n_steps: 1024, seed: 20_240_917 }
    }
}

/// Running mean and co-moment matrix of a vector of channels.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    n: u64,
    mean: Vec<f64>,
    // Upper-triangular co-moments stored densely.
    co: Vec<f64>,
    k: usize,
}

impl Moments {
    pub fn new(channels: usize) -> Self {
        Moments { n: 0, mean: vec![0.0; channels], co: vec![0.0; channels * channels], k: channels }
    }

    pub fn channels(&self) -> usize {
        self.k
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        debug_assert_eq!(x.len(), self.k);
        self.n += 1;
        let n = self.n as f64;
        let k = self.k;
        let mut delta = [0.0f64; 32];
        let mut big;
        let d: &mut [f64] = if k <= 32 {
            &mut delta[..k]
        } else {
            big = vec![0.0; k];
            &mut big
        };
        for i in 0..k {
            d[i] = x[i] - self.mean[i];
            self.mean[i] += d[i] / n;
        }
        for i in 0..k {
            let post = x[i] - self.mean[i];
            for j in i..k {
                self.co[i * k + j] += d[j] * post;
            }
        }
    }

    /// Chan's parallel update.
    pub fn merge(&mut self, other: &Moments) {
        if other.n == 0 {
            return;
        }
        if self.n == 0 {
            *self = other.clone();
            return;
        }
        let k = self.k;
        let na = self.n as f64;
        let nb = other.n as f64;
        let n = na + nb;
        let d: Vec<f64> = (0..k).map(|i| other.mean[i] - self.mean[i]).collect();
        for i in 0..k {
            for j in i..k {
                self.co[i * k + j] += other.co[i * k + j] + d[i] * d[j] * na * nb / n;
            }
        }
        for i in 0..k {
            self.mean[i] += d[i] * nb / n;
        }
        self.n += other.n;
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.mean[i]
    }

    /// Unbiased sample covariance of channels `i` and `j`.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        if self.n < 2 {
            return 0.0;
        }
        self.co[a * self.k + b] / (self.n as f64 - 1.0)
    }

    pub fn variance(&self, i: usize) -> f64 {
        self.covariance(i, i)
    }

    pub fn std_error(&self, i: usize) -> f64 {
        if self.n == 0 {
            return f64::NAN;
        }
        libm::sqrt(self.variance(i).max(0.0) / self.n as f64)
    }

    /// Standard error of the paired difference `mean(i) - mean(j)`.
    pub fn diff_std_error(&self, i: usize, j: usize) -> f64 {
        let v = self.variance(i) + self.variance(j) - 2.0 * self.covariance(i, j);
        libm::sqrt(v.max(0.0) / self.n as f64)
    }

    pub fn estimate(&self, i: usize, n_steps: usize, seed: u64) -> McEstimate {
        McEstimate { mean: self.mean(i), std_error: self.std_error(i), n_samples: self.n, n_steps, seed }
    }
}

fn tree_merge(mut parts: Vec<Moments>, channels: usize) -> Moments {
    if parts.is_empty() {
        return Moments::new(channels);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.merge(&b);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Accumulate `channels` per-path outputs over paths `0..n_paths`.
/// `f(i, out)` fills the outputs of path `i`; it should derive all its
/// randomness from the index. Paths for which `f` returns `false` are skipped.
pub fn accumulate<E, F>(exec: &E, n_paths: usize, channels: usize, f: F) -> Moments
where
    E: Executor + ?Sized,
    F: Fn(u64, &mut [f64]) -> bool + Sync + Send,
{
    let n_blocks = n_paths.div_ceil(BLOCK_SIZE);
    let parts = exec.map_blocks(n_blocks, |b| {
        let mut m = Moments::new(channels);
        let mut out = vec![0.0; channels];
        let lo = b * BLOCK_SIZE;
        let hi = ((b + 1) * BLOCK_SIZE).min(n_paths);
        for i in lo..hi {
            if f(i as u64, &mut out) {
                m.push(&out);
            }
        }
        m
    });
    tree_merge(parts, channels)
}

/// Per-path outputs in index order.
pub fn collect<E, T, F>(exec: &E, n_paths: usize, f: F) -> Vec<T>
where
    E: Executor + ?Sized,
    T: Send,
    F: Fn(u64) -> T + Sync + Send,
{
    let n_blocks = n_paths.div_ceil(BLOCK_SIZE);
    let blocks = exec.map_blocks(n_blocks, |b| {
        let lo = b * BLOCK_SIZE;
        let hi = ((b + 1) * BLOCK_SIZE).min(n_paths);
        (lo..hi).map(|i| f(i as u64)).collect::<Vec<T>>()
    });
    blocks.into_iter().flatten().collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Reversed;
    impl Executor for Reversed {
        fn map_blocks<A, F>(&self, n_blocks: usize, f: F) -> Vec<A>
        where
            A: Send,
            F: Fn(usize) -> A + Sync + Send,
        {
            let mut v: Vec<(usize, A)> = (0..n_blocks).rev().map(|b| (b, f(b))).collect();
            v.sort_by_key(|p| p.0);
            v.into_iter().map(|p| p.1).collect()
        }
    }

    #[test]
    fn merge_matches_single_pass() {
        let xs: Vec<[f64; 2]> = (0..1000).map(|i| [libm::sin(i as f64), libm::cos(0.3 * i as f64)]).collect();
        let mut all = Moments::new(2);
        xs.iter().for_each(|x| all.push(x));
        let mut a = Moments::new(2);
        let mut b = Moments::new(2);
        xs[..377].iter().for_each(|x| a.push(x));
        xs[377..].iter().for_each(|x| b.push(x));
        a.merge(&b);
        for i in 0..2 {
            assert!((a.mean(i) - all.mean(i)).abs() < 1e-14);
            for j in 0..2 {
                assert!((a.covariance(i, j) - all.covariance(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn executor_order_does_not_change_result() {
        let f = |i: u64, out: &mut [f64]| {
            out[0] = libm::sin(i as f64 * 0.7);
            true
        };
        let a = accumulate(&Sequential, 5000, 1, f);
        let b = accumulate(&Reversed, 5000, 1, f);
        assert_eq!(a, b);
        assert_eq!(a.count(), 5000);
    }
}
