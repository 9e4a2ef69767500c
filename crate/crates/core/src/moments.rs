//! Exact two-point increment statistics from ensemble-averaged spectral moments.
//!
//! For band-limited members every quadratic and cubic increment integral
//! `∫ δu_i δu_j dx`, `∫ δu_i δu_j δu_k dx` at an arbitrary offset `h` is a finite Fourier
//! sum over the retained modes. A [`Moments`] value stores those mode-wise ensemble means
//! once per snapshot, so evaluating at a new offset costs one pass over the modes and no
//! transforms. [`real_space_stats`] computes the same quantities by explicit spectral
//! shifts and serves as an independent route.

use rayon::prelude::*;
use rustfft::num_complex::Complex64;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fft;
use crate::field::{k_sq, VelocityField};
use crate::grid::Grid;

/// Relative spectral energy tolerated outside the band a path relies on.
pub const BAND_TOL: f64 = 1e-24;

pub type Mat = [[f64; 3]; 3];
pub type Cube = [[[f64; 3]; 3]; 3];

/// Index pairs `(a, b)`, `a ≤ b`, for products `u_a u_b`.
fn pairs(dim: usize) -> Vec<(usize, usize)> {
    (0..dim).flat_map(|a| (a..dim).map(move |b| (a, b))).collect()
}

#[inline]
fn pair_index(dim: usize, a: usize, b: usize) -> usize {
    let (a, b) = if a <= b { (a, b) } else { (b, a) };
    a * dim - a * a.saturating_sub(1) / 2 + (b - a)
}

fn canonical(k: &[i64; 3]) -> bool {
    k[2] > 0 || (k[2] == 0 && (k[1] > 0 || (k[1] == 0 && k[0] > 0)))
}

/// Increment statistics at one offset `h`, ensemble means of space integrals.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PairStats {
    /// `R_ij(h) = ∫ u_i(x+h) u_j(x) dx`.
    pub r: Mat,
    /// `G_ij(h) = ∫ ∇u_i(x+h)·∇u_j(x) dx`.
    pub g: Mat,
    /// `D_ij(h) = ∫ δu_i δu_j dx` with `δu = u(x+h) - u(x)`.
    pub d: Mat,
    /// `T_ijk(h) = ∫ δu_i δu_j δu_k dx`, when cubic moments are available.
    pub t: Option<Cube>,
}

impl PairStats {
    pub fn trace_r(&self) -> f64 {
        (0..3).map(|i| self.r[i][i]).sum()
    }

    pub fn trace_d(&self) -> f64 {
        (0..3).map(|i| self.d[i][i]).sum()
    }

    pub fn trace_g(&self) -> f64 {
        (0..3).map(|i| self.g[i][i]).sum()
    }

    /// `Σ_ij M_ij n_i n_j`.
    pub fn quad_form(m: &Mat, n: &[f64; 3]) -> f64 {
        let mut s = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                s += m[i][j] * n[i] * n[j];
            }
        }
        s
    }

    /// `∫ (δu·n)³` and `∫ |δu|² δu·n`.
    pub fn cubic_longitudinal(&self, n: &[f64; 3]) -> Option<(f64, f64)> {
        let t = self.t.as_ref()?;
        let mut l3 = 0.0;
        let mut l0 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    l3 += t[i][j][k] * n[i] * n[j] * n[k];
                }
            }
            for k in 0..3 {
                l0 += t[i][i][k] * n[k];
            }
        }
        Some((l3, l0))
    }
}

/// Mode-wise ensemble moments of one snapshot.
#[derive(Clone, Debug)]
pub struct Moments {
    grid: Grid,
    time: f64,
    nu: f64,
    members: usize,
    modes: Vec<[i64; 3]>,
    weights: Vec<f64>,
    k2: Vec<f64>,
    /// `A_ij(k) = mean û_i(k) conj û_j(k)`, row-major `3×3`.
    a: Vec<[Complex64; 9]>,
    /// `Im Ψ_{ab,c}(k)` with `Ψ_{ab,c} = mean conj(FFT(u_a u_b)) û_c`, index `pair*3 + c`.
    psi_im: Option<Vec<[f64; 18]>>,
    mean_energy: f64,
    mean_h1: f64,
}

struct MemberContribution {
    a: Vec<[Complex64; 9]>,
    psi_im: Option<Vec<[f64; 18]>>,
}

impl Moments {
    /// Moments of `ensemble`. With `cubic`, members must be band limited to the
    /// dealiased band, otherwise [`Error::NotBandLimited`] is returned.
    pub fn new(ensemble: &Ensemble, cubic: bool) -> Result<Self> {
        let g = *ensemble.grid();
        let d = g.dim();
        let cut = g.dealias_cutoff();
        let mut band_limited = true;
        for (m, u) in ensemble.members().iter().enumerate() {
            let s = u.spectrum();
            if s.energy_outside_band(cut) > BAND_TOL {
                band_limited = false;
                if cubic {
                    return Err(Error::NotBandLimited(format!(
                        "member {m} has energy outside |k_j| <= {cut}"
                    )));
                }
            }
            if s.energy_outside_band(g.nyquist() - 1) > BAND_TOL {
                return Err(Error::NotBandLimited(format!(
                    "member {m} carries Nyquist modes"
                )));
            }
        }
        let limit = if band_limited { cut } else { g.nyquist() - 1 };
        let mut modes = Vec::new();
        let mut weights = Vec::new();
        let mut idxs = Vec::new();
        let mut k2 = Vec::new();
        for idx in 0..g.len() {
            let k = g.wave_vector(idx);
            if k[..d].iter().any(|c| c.abs() > limit) {
                continue;
            }
            let zero = k == [0, 0, 0];
            if !zero && !canonical(&k) {
                continue;
            }
            modes.push(k);
            weights.push(if zero { 1.0 } else { 2.0 });
            idxs.push(idx);
            k2.push(k_sq(&k));
        }

        let contributions: Vec<MemberContribution> = ensemble
            .members()
            .par_iter()
            .map(|u| member_contribution(u, &idxs, cubic))
            .collect();
        let nm = ensemble.len() as f64;
        let mut a = vec![[Complex64::default(); 9]; modes.len()];
        let mut psi_im = if cubic {
            Some(vec![[0.0; 18]; modes.len()])
        } else {
            None
        };
        for c in &contributions {
            for (acc, v) in a.iter_mut().zip(&c.a) {
                for q in 0..9 {
                    acc[q] += v[q] / nm;
                }
            }
            if let (Some(acc), Some(v)) = (psi_im.as_mut(), c.psi_im.as_ref()) {
                for (x, y) in acc.iter_mut().zip(v) {
                    for q in 0..18 {
                        x[q] += y[q] / nm;
                    }
                }
            }
        }

        Ok(Moments {
            grid: g,
            time: ensemble.time(),
            nu: ensemble.nu(),
            members: ensemble.len(),
            modes,
            weights,
            k2,
            a,
            psi_im,
            mean_energy: ensemble.mean_energy(),
            mean_h1: ensemble.mean_h1(),
        })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.nu
    }

    #[inline]
    pub fn members(&self) -> usize {
        self.members
    }

    #[inline]
    pub fn mean_energy(&self) -> f64 {
        self.mean_energy
    }

    #[inline]
    pub fn mean_h1(&self) -> f64 {
        self.mean_h1
    }

    #[inline]
    pub fn has_cubic(&self) -> bool {
        self.psi_im.is_some()
    }

    /// Statistics at offset `h`; cubic terms only if requested and available.
    pub fn eval(&self, h: &[f64; 3], cubic: bool) -> PairStats {
        let g = &self.grid;
        let d = g.dim();
        let half = g.nyquist();
        let tables: Vec<Vec<Complex64>> = (0..3)
            .map(|a| {
                if a >= d {
                    return vec![Complex64::new(1.0, 0.0); (2 * half + 1) as usize];
                }
                (-half..=half)
                    .map(|k| {
                        let th = k as f64 * h[a];
                        Complex64::new(th.cos(), th.sin())
                    })
                    .collect()
            })
            .collect();
        let psi = if cubic { self.psi_im.as_ref() } else { None };

        let mut r = [0.0f64; 9];
        let mut gg = [0.0f64; 9];
        let mut dc = [0.0f64; 18];
        for (m, k) in self.modes.iter().enumerate() {
            let e = tables[0][(k[0] + half) as usize]
                * tables[1][(k[1] + half) as usize]
                * tables[2][(k[2] + half) as usize];
            let w = self.weights[m];
            let a = &self.a[m];
            let k2 = self.k2[m];
            for i in 0..d {
                for j in 0..d {
                    let z = a[3 * i + j];
                    let v = w * (z.re * e.re - z.im * e.im);
                    r[3 * i + j] += v;
                    gg[3 * i + j] += k2 * v;
                }
            }
            if let Some(p) = psi {
                let s = -2.0 * w * e.im;
                let pm = &p[m];
                for q in 0..18 {
                    dc[q] += s * pm[q];
                }
            }
        }
        let vol = g.volume();
        let mut out = PairStats::default();
        for i in 0..d {
            for j in 0..d {
                out.r[i][j] = vol * r[3 * i + j];
                out.g[i][j] = vol * gg[3 * i + j];
            }
        }
        let r0 = self.r0();
        for i in 0..d {
            for j in 0..d {
                out.d[i][j] = r0[i][j] + r0[j][i] - out.r[i][j] - out.r[j][i];
            }
        }
        if psi.is_some() {
            let mut t = [[[0.0; 3]; 3]; 3];
            for i in 0..d {
                for j in 0..d {
                    for k in 0..d {
                        let c = |a: usize, b: usize, c: usize| vol * dc[pair_index(d, a, b) * 3 + c];
                        t[i][j][k] = c(j, k, i) + c(i, k, j) + c(i, j, k);
                    }
                }
            }
            out.t = Some(t);
        }
        out
    }

    /// `R_ij(0)`.
    pub fn r0(&self) -> Mat {
        let d = self.grid.dim();
        let mut r = [[0.0; 3]; 3];
        for (m, a) in self.a.iter().enumerate() {
            let w = self.weights[m];
            for i in 0..d {
                for j in 0..d {
                    r[i][j] += w * a[3 * i + j].re;
                }
            }
        }
        let vol = self.grid.volume();
        for row in r.iter_mut() {
            for v in row.iter_mut() {
                *v *= vol;
            }
        }
        r
    }

    /// Moments of the ensemble `u ↦ λu`.
    pub fn scaled(&self, lambda: f64) -> Moments {
        let mut m = self.clone();
        let l2 = lambda * lambda;
        for a in m.a.iter_mut() {
            for z in a.iter_mut() {
                *z *= l2;
            }
        }
        if let Some(p) = m.psi_im.as_mut() {
            let l3 = l2 * lambda;
            for v in p.iter_mut() {
                for x in v.iter_mut() {
                    *x *= l3;
                }
            }
        }
        m.mean_energy *= l2;
        m.mean_h1 *= l2;
        m
    }
}

fn member_contribution(u: &VelocityField, idxs: &[usize], cubic: bool) -> MemberContribution {
    let g = u.grid();
    let d = g.dim();
    let s = u.spectrum().components();
    let mut a = vec![[Complex64::default(); 9]; idxs.len()];
    for (m, &idx) in idxs.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                a[m][3 * i + j] = s[i][idx] * s[j][idx].conj();
            }
        }
    }
    let psi_im = cubic.then(|| {
        let prs = pairs(d);
        let prods: Vec<Vec<f64>> = prs
            .iter()
            .map(|&(p, q)| {
                u.component(p)
                    .iter()
                    .zip(u.component(q))
                    .map(|(x, y)| x * y)
                    .collect()
            })
            .collect();
        let refs: Vec<&[f64]> = prods.iter().map(|p| p.as_slice()).collect();
        let ps = fft::forward_many(g, &refs);
        let mut out = vec![[0.0; 18]; idxs.len()];
        for (m, &idx) in idxs.iter().enumerate() {
            for (pi, p) in ps.iter().enumerate() {
                let pc = p[idx].conj();
                for c in 0..d {
                    out[m][pi * 3 + c] = (pc * s[c][idx]).im;
                }
            }
        }
        out
    });
    MemberContribution { a, psi_im }
}

/// The same statistics as [`Moments::eval`], by explicit shifts of every member.
pub fn real_space_stats(ensemble: &Ensemble, h: &[f64; 3]) -> PairStats {
    let g = *ensemble.grid();
    let d = g.dim();
    let dv = g.cell_volume();
    let nm = ensemble.len() as f64;
    let mut out = PairStats {
        t: Some([[[0.0; 3]; 3]; 3]),
        ..PairStats::default()
    };
    for u in ensemble.members() {
        let v = u.shift(*h);
        let grads_u: Vec<Vec<Vec<f64>>> = (0..d)
            .map(|i| (0..d).map(|j| u.derivative(i, j)).collect())
            .collect();
        let grads_v: Vec<Vec<Vec<f64>>> = (0..d)
            .map(|i| (0..d).map(|j| v.derivative(i, j)).collect())
            .collect();
        let t = out.t.as_mut().unwrap();
        for idx in 0..g.len() {
            let a = u.value(idx);
            let b = v.value(idx);
            let du = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
            for i in 0..d {
                for j in 0..d {
                    out.r[i][j] += b[i] * a[j] * dv / nm;
                    out.d[i][j] += du[i] * du[j] * dv / nm;
                    let mut gs = 0.0;
                    for l in 0..d {
                        gs += grads_v[i][l][idx] * grads_u[j][l][idx];
                    }
                    out.g[i][j] += gs * dv / nm;
                    for k in 0..d {
                        t[i][j][k] += du[i] * du[j] * du[k] * dv / nm;
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{sample_initial, MeasureSpec};
    use std::f64::consts::PI;

    fn close_mat(a: &Mat, b: &Mat, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (a[i][j] - b[i][j]).abs() <= tol))
    }

    #[test]
    fn pair_indices_enumerate_upper_triangle() {
        assert_eq!(pair_index(2, 1, 0), 1);
        assert_eq!(pair_index(3, 2, 1), 4);
        assert_eq!(pair_index(3, 2, 2), 5);
    }

    #[test]
    fn shear_correlation_closed_form() {
        let g = Grid::new(2, 32).unwrap();
        let e = Ensemble::singleton(VelocityField::shear(g));
        let m = Moments::new(&e, true).unwrap();
        for hy in [0.0, 0.3, PI, 2.0] {
            let s = m.eval(&[0.7, hy, 0.0], true);
            let expect = 2.0 * PI * PI * hy.cos();
            assert!((s.trace_r() - expect).abs() < 1e-12);
            assert!((s.d[0][0] - 2.0 * (2.0 * PI * PI - expect)).abs() < 1e-12);
            assert!(s.t.unwrap()[0][0][0].abs() < 1e-12);
        }
    }

    #[test]
    fn spectral_and_real_space_routes_agree() {
        for dim in [2, 3] {
            let n = if dim == 2 { 32 } else { 16 };
            let g = Grid::new(dim, n).unwrap();
            let spec = MeasureSpec::random_fourier(1.0, 1, (n / 3) as u32, 2.0, 10.0, 5);
            let e = sample_initial(&spec, 3, &g).unwrap();
            let m = Moments::new(&e, true).unwrap();
            let h = [0.37, -0.81, if dim == 3 { 0.29 } else { 0.0 }];
            let a = m.eval(&h, true);
            let b = real_space_stats(&e, &h);
            let scale = m.mean_energy();
            assert!(close_mat(&a.r, &b.r, 1e-11 * scale));
            assert!(close_mat(&a.d, &b.d, 1e-11 * scale));
            assert!(close_mat(&a.g, &b.g, 1e-10 * m.mean_h1()));
            let (ta, tb) = (a.t.unwrap(), b.t.unwrap());
            for i in 0..dim {
                for j in 0..dim {
                    for k in 0..dim {
                        assert!((ta[i][j][k] - tb[i][j][k]).abs() < 1e-10 * scale, "{dim} {i}{j}{k}");
                    }
                }
            }
        }
    }

    #[test]
    fn cubic_requires_band_limit() {
        let g = Grid::new(2, 16).unwrap();
        let u = VelocityField::from_fn(g, |x| [(7.0 * x[1]).sin(), 0.0, 0.0]);
        let e = Ensemble::singleton(u);
        assert!(matches!(Moments::new(&e, true), Err(Error::NotBandLimited(_))));
        assert!(Moments::new(&e, false).is_ok());
    }
}
