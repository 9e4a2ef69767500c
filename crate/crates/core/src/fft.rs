//! Multi-dimensional complex FFTs on the torus grid.
//!
//! Forward transforms are normalised by `1/n^dim`, so a coefficient is the mean of
//! `u(x) e^{-ik·x}` over the grid; inverse transforms are plain sums.

use std::sync::{Arc, Mutex, OnceLock};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::grid::Grid;

fn planner() -> &'static Mutex<FftPlanner<f64>> {
    static PLANNER: OnceLock<Mutex<FftPlanner<f64>>> = OnceLock::new();
    PLANNER.get_or_init(|| Mutex::new(FftPlanner::new()))
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut p = planner().lock().unwrap_or_else(|e| e.into_inner());
    if inverse {
        p.plan_fft_inverse(n)
    } else {
        p.plan_fft_forward(n)
    }
}

fn transform(grid: &Grid, buf: &mut [Complex64], inverse: bool) {
    let n = grid.n();
    let len = grid.len();
    assert_eq!(buf.len(), len, "buffer length does not match grid");
    let fft = plan(n, inverse);
    fft.process(buf);

    let mut tmp = vec![Complex64::default(); len];
    let mut stride = n;
    for _axis in 1..grid.dim() {
        let block = stride * n;
        for b in 0..len / block {
            let base = b * block;
            for i in 0..stride {
                let line = (b * stride + i) * n;
                for j in 0..n {
                    tmp[line + j] = buf[base + j * stride + i];
                }
            }
        }
        fft.process(&mut tmp);
        for b in 0..len / block {
            let base = b * block;
            for i in 0..stride {
                let line = (b * stride + i) * n;
                for j in 0..n {
                    buf[base + j * stride + i] = tmp[line + j];
                }
            }
        }
        stride = block;
    }
}

/// In-place normalised forward transform.
pub fn forward_inplace(grid: &Grid, buf: &mut [Complex64]) {
    transform(grid, buf, false);
    let s = 1.0 / grid.len() as f64;
    for z in buf.iter_mut() {
        *z *= s;
    }
}

/// In-place inverse transform (no normalisation).
pub fn inverse_inplace(grid: &Grid, buf: &mut [Complex64]) {
    transform(grid, buf, true);
}

/// Spectral coefficients of a real array.
pub fn forward_real(grid: &Grid, data: &[f64]) -> Vec<Complex64> {
    let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    forward_inplace(grid, &mut buf);
    buf
}

/// Real part of the inverse transform.
pub fn inverse_real(grid: &Grid, spec: &[Complex64]) -> Vec<f64> {
    let mut buf = spec.to_vec();
    inverse_inplace(grid, &mut buf);
    buf.into_iter().map(|z| z.re).collect()
}

/// Index of the mode `-k` for spectral index `idx`.
#[inline]
pub fn conjugate_index(grid: &Grid, idx: usize) -> usize {
    let n = grid.n();
    let c = grid.coords(idx);
    let mut r = [0usize; 3];
    for a in 0..grid.dim() {
        r[a] = (n - c[a]) % n;
    }
    grid.flat_index(r)
}

/// Spectra of two real arrays from a single complex transform.
pub fn forward_real_pair(grid: &Grid, a: &[f64], b: &[f64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let mut z: Vec<Complex64> = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| Complex64::new(x, y))
        .collect();
    forward_inplace(grid, &mut z);
    let mut sa = vec![Complex64::default(); z.len()];
    let mut sb = vec![Complex64::default(); z.len()];
    for idx in 0..z.len() {
        let zc = z[conjugate_index(grid, idx)].conj();
        sa[idx] = (z[idx] + zc) * 0.5;
        sb[idx] = (z[idx] - zc) * Complex64::new(0.0, -0.5);
    }
    (sa, sb)
}

/// Real fields of two Hermitian spectra from a single complex transform.
pub fn inverse_real_pair(grid: &Grid, a: &[Complex64], b: &[Complex64]) -> (Vec<f64>, Vec<f64>) {
    let i = Complex64::new(0.0, 1.0);
    let mut z: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| x + i * y).collect();
    inverse_inplace(grid, &mut z);
    (z.iter().map(|c| c.re).collect(), z.iter().map(|c| c.im).collect())
}

/// Forward transforms of several real arrays, pairing them to halve the work.
pub fn forward_many(grid: &Grid, data: &[&[f64]]) -> Vec<Vec<Complex64>> {
    let mut out = Vec::with_capacity(data.len());
    let mut it = data.chunks(2);
    for chunk in &mut it {
        if chunk.len() == 2 {
            let (a, b) = forward_real_pair(grid, chunk[0], chunk[1]);
            out.push(a);
            out.push(b);
        } else {
            out.push(forward_real(grid, chunk[0]));
        }
    }
    out
}

/// Inverse transforms of several Hermitian spectra, paired.
pub fn inverse_many(grid: &Grid, data: &[&[Complex64]]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(data.len());
    for chunk in data.chunks(2) {
        if chunk.len() == 2 {
            let (a, b) = inverse_real_pair(grid, chunk[0], chunk[1]);
            out.push(a);
            out.push(b);
        } else {
            out.push(inverse_real(grid, chunk[0]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
        (0..grid.len()).map(|i| f(grid.position(i))).collect()
    }

    #[test]
    fn single_mode_coefficient() {
        let g = Grid::new(2, 16).unwrap();
        let u = sample(&g, |x| (2.0 * x[0] - x[1]).cos());
        let s = forward_real(&g, &u);
        let k = g.flat_index([2, g.index_of_wavenumber(-1), 0]);
        assert!((s[k].re - 0.5).abs() < 1e-14);
        let total: f64 = s.iter().map(|z| z.norm_sqr()).sum();
        assert!((total - 0.5).abs() < 1e-14);
    }

    #[test]
    fn pair_matches_single() {
        let g = Grid::new(3, 8).unwrap();
        let a = sample(&g, |x| (x[0] + 2.0 * x[2]).sin() + 0.3);
        let b = sample(&g, |x| (x[1] - x[2]).cos() * x[0].sin());
        let (sa, sb) = forward_real_pair(&g, &a, &b);
        let ra = forward_real(&g, &a);
        let rb = forward_real(&g, &b);
        for i in 0..g.len() {
            assert!((sa[i] - ra[i]).norm() < 1e-14);
            assert!((sb[i] - rb[i]).norm() < 1e-14);
        }
        let (ia, ib) = inverse_real_pair(&g, &sa, &sb);
        for i in 0..g.len() {
            assert!((ia[i] - a[i]).abs() < 1e-13);
            assert!((ib[i] - b[i]).abs() < 1e-13);
        }
    }
}
