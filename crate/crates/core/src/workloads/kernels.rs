//! Kernel bodies shared by the threaded runner, and sequential references
//! written independently of it.

use std::sync::atomic::{AtomicU64, Ordering};

/// Midpoint-rule sum of 4/(1+x²) over steps `from..to` of `total`.
/// Accumulates into `acc` so chunked calls sum in the same order as one call.
#[inline]
pub fn pi_partial(acc: &mut f64, from: u64, to: u64, total: u64) {
    let step = 1.0 / total as f64;
    let mut sum = *acc;
    for i in from..to {
        let x = (i as f64 + 0.5) * step;
        sum += 4.0 / (1.0 + x * x);
    }
    *acc = sum;
}

pub fn pi_reference(iterations: u64) -> f64 {
    let h = 1.0 / iterations as f64;
    let mut s = 0.0;
    let mut i = 0;
    while i < iterations {
        let mid = h * (i as f64 + 0.5);
        s += 4.0 / (1.0 + mid * mid);
        i += 1;
    }
    s * h
}

/// Initial Jacobi grid: top edge held at 1, everything else 0.
pub fn jacobi_initial(grid: usize) -> Vec<f64> {
    let mut g = vec![0.0; grid * grid];
    g[..grid].fill(1.0);
    g
}

pub fn jacobi_reference(grid: usize, cycles: u64) -> Vec<f64> {
    let mut cur = jacobi_initial(grid);
    let mut next = cur.clone();
    for _ in 0..cycles {
        for r in 1..grid - 1 {
            for c in 1..grid - 1 {
                let up = cur[(r - 1) * grid + c];
                let down = cur[(r + 1) * grid + c];
                let left = cur[r * grid + c - 1];
                let right = cur[r * grid + c + 1];
                next[r * grid + c] = 0.25 * (up + down + left + right);
            }
        }
        std::mem::swap(&mut cur, &mut next);
    }
    cur
}

/// Two grids of f64 bits. Each cycle every thread reads `src` and writes
/// only its own interior rows of `dst`; a barrier separates cycles.
pub struct JacobiGrids {
    pub grid: usize,
    bufs: [Vec<AtomicU64>; 2],
}

impl JacobiGrids {
    pub fn new(grid: usize) -> Self {
        let init = jacobi_initial(grid);
        let make = || init.iter().map(|v| AtomicU64::new(v.to_bits())).collect::<Vec<_>>();
        Self { grid, bufs: [make(), make()] }
    }

    /// Updates interior row `row` for cycle `cycle` (reads buffer `cycle % 2`).
    #[inline]
    pub fn update_row(&self, cycle: u64, row: usize) {
        let g = self.grid;
        let src = &self.bufs[(cycle % 2) as usize];
        let dst = &self.bufs[((cycle + 1) % 2) as usize];
        let at = |i: usize| f64::from_bits(src[i].load(Ordering::Relaxed));
        for c in 1..g - 1 {
            let v = 0.25 * (at((row - 1) * g + c) + at((row + 1) * g + c) + at(row * g + c - 1) + at(row * g + c + 1));
            dst[row * g + c].store(v.to_bits(), Ordering::Relaxed);
        }
    }

    /// The grid after `cycles` completed cycles.
    pub fn result(&self, cycles: u64) -> Vec<f64> {
        self.bufs[(cycles % 2) as usize].iter().map(|v| f64::from_bits(v.load(Ordering::Relaxed))).collect()
    }
}

/// Deterministic dense inputs for matrix multiplication.
pub fn matmul_inputs(dim: usize) -> (Vec<f64>, Vec<f64>) {
    let a = (0..dim * dim).map(|k| ((k * 7 + 3) % 23) as f64 / 23.0 - 0.5).collect();
    let b = (0..dim * dim).map(|k| ((k * 11 + 5) % 19) as f64 / 19.0 - 0.5).collect();
    (a, b)
}

pub fn transpose(m: &[f64], dim: usize) -> Vec<f64> {
    let mut t = vec![0.0; dim * dim];
    for r in 0..dim {
        for c in 0..dim {
            t[c * dim + r] = m[r * dim + c];
        }
    }
    t
}

/// One output element: row `r` of `a` against row `c` of `bt` (= column `c` of b).
#[inline]
pub fn matmul_element(a: &[f64], bt: &[f64], dim: usize, r: usize, c: usize) -> f64 {
    let ar = &a[r * dim..(r + 1) * dim];
    let bc = &bt[c * dim..(c + 1) * dim];
    let mut s = 0.0;
    for k in 0..dim {
        s += ar[k] * bc[k];
    }
    s
}

pub fn matmul_reference(a: &[f64], b: &[f64], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim * dim];
    for i in 0..dim {
        for j in 0..dim {
            let mut acc = 0.0;
            for k in 0..dim {
                acc += a[i * dim + k] * b[k * dim + j];
            }
            out[i * dim + j] = acc;
        }
    }
    out
}

/// Contiguous share of `0..n` for thread `t` of `threads`.
pub fn band(n: usize, t: usize, threads: usize) -> std::ops::Range<usize> {
    n * t / threads..n * (t + 1) / threads
}

/// Largest relative difference, with absolute comparison near zero.
pub fn max_relative_error(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len());
    got.iter()
        .zip(want)
        .map(|(g, w)| (g - w).abs() / w.abs().max(1.0))
        .fold(0.0, f64::max)
}
