use std::f64::consts::PI;
use std::sync::OnceLock;

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::grid::Grid;

/// Divergence-free tolerance on `max|k·û| / max|û|`.
pub const DIVERGENCE_TOL: f64 = 1e-10;

/// A named finite scalar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalarStat {
    pub label: String,
    pub value: f64,
}

impl ScalarStat {
    pub fn new(label: impl Into<String>, value: f64) -> Result<Self> {
        let label = label.into();
        if !value.is_finite() {
            return Err(Error::Domain(format!("{label} is not finite")));
        }
        Ok(ScalarStat { label, value })
    }
}

/// Spectral coefficients of a vector field, one full complex array per component.
#[derive(Clone, Debug)]
pub struct Spectrum {
    grid: Grid,
    comps: Vec<Vec<Complex64>>,
}

impl Spectrum {
    pub fn new(grid: Grid, comps: Vec<Vec<Complex64>>) -> Result<Self> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(
                "spectral component count or length does not match grid".into(),
            ));
        }
        Ok(Spectrum { grid, comps })
    }

    pub fn zeros(grid: Grid) -> Self {
        Spectrum {
            grid,
            comps: vec![vec![Complex64::default(); grid.len()]; grid.dim()],
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn components(&self) -> &[Vec<Complex64>] {
        &self.comps
    }

    #[inline]
    pub fn components_mut(&mut self) -> &mut [Vec<Complex64>] {
        &mut self.comps
    }

    pub fn into_components(self) -> Vec<Vec<Complex64>> {
        self.comps
    }

    /// `∫|u|² dx` by Parseval.
    pub fn energy(&self) -> f64 {
        let s: f64 = self
            .comps
            .iter()
            .flat_map(|c| c.iter())
            .map(|z| z.norm_sqr())
            .sum();
        s * self.grid.volume()
    }

    /// `∫|∇u|² dx` by Parseval.
    pub fn h1_seminorm_sq(&self) -> f64 {
        let g = &self.grid;
        let mut s = 0.0;
        for idx in 0..g.len() {
            let k2 = k_sq(&g.wave_vector(idx));
            if k2 == 0.0 {
                continue;
            }
            let a: f64 = self.comps.iter().map(|c| c[idx].norm_sqr()).sum();
            s += k2 * a;
        }
        s * g.volume()
    }

    /// Modewise Leray projection; the mean and Nyquist modes are zeroed.
    pub fn leray_project(&mut self) {
        let g = self.grid;
        let d = g.dim();
        for idx in 0..g.len() {
            let k = g.wave_vector(idx);
            let k2 = k_sq(&k);
            if k2 == 0.0 || g.is_nyquist(&k) {
                for c in self.comps.iter_mut() {
                    c[idx] = Complex64::default();
                }
                continue;
            }
            let mut dot = Complex64::default();
            for a in 0..d {
                dot += self.comps[a][idx] * k[a] as f64;
            }
            let f = dot / k2;
            for a in 0..d {
                self.comps[a][idx] -= f * k[a] as f64;
            }
        }
    }

    /// Zero every mode with some `|k_j| > n/3`.
    pub fn dealias(&mut self) {
        let g = self.grid;
        for idx in 0..g.len() {
            if !g.in_dealiased_band(&g.wave_vector(idx)) {
                for c in self.comps.iter_mut() {
                    c[idx] = Complex64::default();
                }
            }
        }
    }

    /// `max_k |k·û(k)| / max_k |û(k)|`, zero for the zero field.
    pub fn divergence_defect(&self) -> f64 {
        let g = &self.grid;
        let mut num: f64 = 0.0;
        let mut den: f64 = 0.0;
        for idx in 0..g.len() {
            let k = g.wave_vector(idx);
            let mut dot = Complex64::default();
            let mut mag = 0.0;
            for a in 0..g.dim() {
                dot += self.comps[a][idx] * k[a] as f64;
                mag += self.comps[a][idx].norm_sqr();
            }
            num = num.max(dot.norm());
            den = den.max(mag.sqrt());
        }
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// Relative energy carried by modes outside `|k_j| ≤ cutoff`.
    pub fn energy_outside_band(&self, cutoff: i64) -> f64 {
        let g = &self.grid;
        let mut outside = 0.0;
        let mut total = 0.0;
        for idx in 0..g.len() {
            let k = g.wave_vector(idx);
            let e: f64 = self.comps.iter().map(|c| c[idx].norm_sqr()).sum();
            total += e;
            if k[..g.dim()].iter().any(|c| c.abs() > cutoff) {
                outside += e;
            }
        }
        if total == 0.0 {
            0.0
        } else {
            outside / total
        }
    }

    /// Replace every coefficient by the Hermitian part `(û(k) + conj û(-k)) / 2`.
    pub fn symmetrize(&mut self) {
        let g = self.grid;
        for c in self.comps.iter_mut() {
            let old = c.clone();
            for idx in 0..g.len() {
                let j = fft::conjugate_index(&g, idx);
                c[idx] = (old[idx] + old[j].conj()) * 0.5;
            }
        }
    }

    /// Largest violation of `û(-k) = conj û(k)`.
    pub fn reality_defect(&self) -> f64 {
        let g = &self.grid;
        let mut worst: f64 = 0.0;
        for c in &self.comps {
            for idx in 0..g.len() {
                let j = fft::conjugate_index(g, idx);
                worst = worst.max((c[idx] - c[j].conj()).norm());
            }
        }
        worst
    }
}

#[inline]
pub(crate) fn k_sq(k: &[i64; 3]) -> f64 {
    (k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64
}

/// Periodic vector field on the torus with a lazily computed spectral mirror.
///
/// Real-space values are the source of truth; the spectrum is computed on first use and
/// dropped whenever the components are mutated.
#[derive(Clone, Debug)]
pub struct VelocityField {
    grid: Grid,
    comps: Vec<Vec<f64>>,
    time: f64,
    nu: f64,
    spectrum: OnceLock<Spectrum>,
}

impl PartialEq for VelocityField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.comps == other.comps
            && self.time == other.time
            && self.nu == other.nu
    }
}

impl VelocityField {
    pub fn new(grid: Grid, comps: Vec<Vec<f64>>, time: f64, nu: f64) -> Result<Self> {
        if comps.len() != grid.dim() || comps.iter().any(|c| c.len() != grid.len()) {
            return Err(Error::GridMismatch(
                "component count or length does not match grid".into(),
            ));
        }
        if !(nu >= 0.0) {
            return Err(Error::Config(format!("nu must be ≥ 0, got {nu}")));
        }
        Ok(VelocityField {
            grid,
            comps,
            time,
            nu,
            spectrum: OnceLock::new(),
        })
    }

    pub fn zeros(grid: Grid) -> Self {
        VelocityField {
            grid,
            comps: vec![vec![0.0; grid.len()]; grid.dim()],
            time: 0.0,
            nu: 0.0,
            spectrum: OnceLock::new(),
        }
    }

    /// Sample `f(x)` at every grid point; only the first `dim` components are used.
    pub fn from_fn(grid: Grid, mut f: impl FnMut([f64; 3]) -> [f64; 3]) -> Self {
        let d = grid.dim();
        let mut comps = vec![vec![0.0; grid.len()]; d];
        for idx in 0..grid.len() {
            let v = f(grid.position(idx));
            for a in 0..d {
                comps[a][idx] = v[a];
            }
        }
        VelocityField {
            grid,
            comps,
            time: 0.0,
            nu: 0.0,
            spectrum: OnceLock::new(),
        }
    }

    /// Real field of a spectrum; non-Hermitian parts are discarded.
    pub fn from_spectrum(mut spec: Spectrum) -> Self {
        spec.symmetrize();
        let grid = spec.grid;
        let refs: Vec<&[Complex64]> = spec.comps.iter().map(|c| c.as_slice()).collect();
        let comps = fft::inverse_many(&grid, &refs);
        let spectrum = OnceLock::new();
        let _ = spectrum.set(spec);
        VelocityField {
            grid,
            comps,
            time: 0.0,
            nu: 0.0,
            spectrum,
        }
    }

    /// `(cos x sin y, -sin x cos y, 0)`.
    pub fn taylor_green(grid: Grid) -> Self {
        Self::from_fn(grid, |x| {
            [x[0].cos() * x[1].sin(), -x[0].sin() * x[1].cos(), 0.0]
        })
    }

    /// `(sin y, 0, 0)`.
    pub fn shear(grid: Grid) -> Self {
        Self::from_fn(grid, |x| [x[1].sin(), 0.0, 0.0])
    }

    pub fn with_time(mut self, time: f64) -> Self {
        self.time = time;
        self
    }

    pub fn with_nu(mut self, nu: f64) -> Self {
        self.nu = nu;
        self
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn set_time(&mut self, time: f64) {
        self.time = time;
    }

    #[inline]
    pub fn components(&self) -> &[Vec<f64>] {
        &self.comps
    }

    #[inline]
    pub fn component(&self, a: usize) -> &[f64] {
        &self.comps[a]
    }

    /// Mutable access to the real-space data; invalidates the spectral mirror.
    pub fn components_mut(&mut self) -> &mut [Vec<f64>] {
        self.spectrum.take();
        &mut self.comps
    }

    pub fn into_components(self) -> Vec<Vec<f64>> {
        self.comps
    }

    /// Velocity at grid point `idx`, padded to three components.
    #[inline]
    pub fn value(&self, idx: usize) -> [f64; 3] {
        let mut v = [0.0; 3];
        for (a, c) in self.comps.iter().enumerate() {
            v[a] = c[idx];
        }
        v
    }

    pub fn spectrum(&self) -> &Spectrum {
        self.spectrum.get_or_init(|| {
            let refs: Vec<&[f64]> = self.comps.iter().map(|c| c.as_slice()).collect();
            Spectrum {
                grid: self.grid,
                comps: fft::forward_many(&self.grid, &refs),
            }
        })
    }

    /// Forward then inverse transform.
    pub fn fft_roundtrip(&self) -> VelocityField {
        let refs: Vec<&[Complex64]> = self.spectrum().comps.iter().map(|c| c.as_slice()).collect();
        let comps = fft::inverse_many(&self.grid, &refs);
        VelocityField {
            grid: self.grid,
            comps,
            time: self.time,
            nu: self.nu,
            spectrum: OnceLock::new(),
        }
    }

    fn with_spectrum(&self, spec: Spectrum) -> VelocityField {
        VelocityField::from_spectrum(spec)
            .with_time(self.time)
            .with_nu(self.nu)
    }

    pub fn energy(&self) -> f64 {
        self.spectrum().energy()
    }

    pub fn h1_seminorm_sq(&self) -> f64 {
        self.spectrum().h1_seminorm_sq()
    }

    pub fn l2_norm(&self) -> f64 {
        self.energy().sqrt()
    }

    /// Energy and `H¹` seminorm as labelled statistics.
    pub fn norm_stats(&self) -> Result<Vec<ScalarStat>> {
        Ok(vec![
            ScalarStat::new("energy", self.energy())?,
            ScalarStat::new("H1_seminorm_sq", self.h1_seminorm_sq())?,
        ])
    }

    /// Grid quadrature of `∫|u|² dx`.
    pub fn energy_quadrature(&self) -> f64 {
        self.inner(self)
    }

    /// `∫ u·v dx` by grid quadrature.
    pub fn inner(&self, other: &VelocityField) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            s += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        }
        s * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        let mut m: f64 = 0.0;
        for idx in 0..self.grid.len() {
            let s: f64 = self.comps.iter().map(|c| c[idx] * c[idx]).sum();
            m = m.max(s);
        }
        m.sqrt()
    }

    pub fn divergence_defect(&self) -> f64 {
        self.spectrum().divergence_defect()
    }

    /// `|û(0)|`.
    pub fn mean_defect(&self) -> f64 {
        self.spectrum()
            .comps
            .iter()
            .map(|c| c[0].norm_sqr())
            .sum::<f64>()
            .sqrt()
    }

    /// Error unless the field passes the divergence invariant.
    pub fn require_divergence_free(&self) -> Result<()> {
        let d = self.divergence_defect();
        if d > DIVERGENCE_TOL {
            return Err(Error::Precondition(format!(
                "field is not divergence free (defect {d:.3e})"
            )));
        }
        Ok(())
    }

    pub fn leray_project(&self) -> VelocityField {
        let mut s = self.spectrum().clone();
        s.leray_project();
        self.with_spectrum(s)
    }

    pub fn dealias(&self) -> VelocityField {
        let mut s = self.spectrum().clone();
        s.dealias();
        self.with_spectrum(s)
    }

    /// `u(· + offset)`; lattice offsets rotate indices, others use spectral phases.
    pub fn shift(&self, offset: [f64; 3]) -> VelocityField {
        let g = self.grid;
        let h = g.spacing();
        let mut lattice = [0i64; 3];
        let mut on_lattice = true;
        for a in 0..g.dim() {
            let m = offset[a] / h;
            let r = m.round();
            if (m - r).abs() > 1e-12 * m.abs().max(1.0) {
                on_lattice = false;
            }
            lattice[a] = r as i64;
        }
        if on_lattice {
            let mut comps = vec![vec![0.0; g.len()]; g.dim()];
            for idx in 0..g.len() {
                let src = g.rotate(idx, lattice);
                for a in 0..g.dim() {
                    comps[a][idx] = self.comps[a][src];
                }
            }
            return VelocityField {
                grid: g,
                comps,
                time: self.time,
                nu: self.nu,
                spectrum: OnceLock::new(),
            };
        }
        let mut s = self.spectrum().clone();
        for idx in 0..g.len() {
            let k = g.wave_vector(idx);
            let theta: f64 = (0..g.dim()).map(|a| k[a] as f64 * offset[a]).sum();
            let ph = Complex64::new(theta.cos(), theta.sin());
            for c in s.comps.iter_mut() {
                c[idx] *= ph;
            }
        }
        self.with_spectrum(s)
    }

    /// Spectral derivative `∂_j u_a`.
    pub fn derivative(&self, a: usize, j: usize) -> Vec<f64> {
        let g = self.grid;
        let mut s = self.spectrum().comps[a].clone();
        for (idx, z) in s.iter_mut().enumerate() {
            let k = g.wave_vector(idx);
            if g.is_nyquist(&k) {
                *z = Complex64::default();
            } else {
                *z *= Complex64::new(0.0, k[j] as f64);
            }
        }
        fft::inverse_real(&g, &s)
    }

    /// Pointwise `Σ_j ∂_j u_j`.
    pub fn divergence(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for j in 0..self.dim() {
            for (o, v) in out.iter_mut().zip(self.derivative(j, j)) {
                *o += v;
            }
        }
        out
    }

    pub fn scaled(&self, lambda: f64) -> VelocityField {
        let comps = self
            .comps
            .iter()
            .map(|c| c.iter().map(|x| lambda * x).collect())
            .collect();
        VelocityField {
            grid: self.grid,
            comps,
            time: self.time,
            nu: self.nu,
            spectrum: OnceLock::new(),
        }
    }

    /// `self + lambda * other`.
    pub fn axpy(&self, lambda: f64, other: &VelocityField) -> Result<VelocityField> {
        self.grid.check_same(&other.grid)?;
        let comps = self
            .comps
            .iter()
            .zip(&other.comps)
            .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + lambda * y).collect())
            .collect();
        Ok(VelocityField {
            grid: self.grid,
            comps,
            time: self.time,
            nu: self.nu,
            spectrum: OnceLock::new(),
        })
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &VelocityField) -> f64 {
        let mut m: f64 = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (x, y) in a.iter().zip(b) {
                m = m.max((x - y).abs());
            }
        }
        m
    }

    /// `‖self - other‖_{L²}` by grid quadrature.
    pub fn l2_distance(&self, other: &VelocityField) -> f64 {
        let mut s = 0.0;
        for (a, b) in self.comps.iter().zip(&other.comps) {
            s += a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
        }
        (s * self.grid.cell_volume()).sqrt()
    }
}

/// Evaluate a scalar function on the grid.
pub fn sample_scalar(grid: &Grid, f: impl Fn([f64; 3]) -> f64) -> Vec<f64> {
    (0..grid.len()).map(|i| f(grid.position(i))).collect()
}

/// Spectral gradient of a real scalar array.
pub fn scalar_gradient(grid: &Grid, psi: &[f64]) -> VelocityField {
    let s = fft::forward_real(grid, psi);
    let mut comps = Vec::with_capacity(grid.dim());
    for j in 0..grid.dim() {
        let mut sj = s.clone();
        for (idx, z) in sj.iter_mut().enumerate() {
            let k = grid.wave_vector(idx);
            if grid.is_nyquist(&k) {
                *z = Complex64::default();
            } else {
                *z *= Complex64::new(0.0, k[j] as f64);
            }
        }
        comps.push(sj);
    }
    VelocityField::from_spectrum(Spectrum {
        grid: *grid,
        comps,
    })
}

/// `(2π)^dim`, the domain volume, for callers without a grid at hand.
pub fn torus_volume(dim: usize) -> f64 {
    (2.0 * PI).powi(dim as i32)
}
