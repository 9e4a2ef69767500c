use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on the torus `[0, 2π)^dim` with `n` points per axis.
///
/// Real-space arrays are stored with the x index fastest: `ix + n * (iy + n * iz)`.
/// Positions and wave vectors are always returned as three-component arrays; the
/// trailing component is zero in two dimensions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawGrid", into = "RawGrid")]
pub struct Grid {
    dim: usize,
    n: usize,
}

#[derive(Serialize, Deserialize)]
struct RawGrid {
    dim: usize,
    n: usize,
}

impl TryFrom<RawGrid> for Grid {
    type Error = Error;

    fn try_from(raw: RawGrid) -> Result<Self> {
        Grid::new(raw.dim, raw.n)
    }
}

impl From<Grid> for RawGrid {
    fn from(g: Grid) -> Self {
        RawGrid { dim: g.dim, n: g.n }
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(Error::Config(format!(
                "points per dimension must be a power of two >= 8, got {n}"
            )));
        }
        Ok(Grid { dim, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n
    }

    /// Total number of grid points, `n^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Domain period per axis.
    #[inline]
    pub fn period(&self) -> f64 {
        2.0 * PI
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Volume of one grid cell; grid sums times this value are exact integrals
    /// for band-limited integrands.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Domain volume `(2π)^dim`.
    #[inline]
    pub fn volume(&self) -> f64 {
        (2.0 * PI).powi(self.dim as i32)
    }

    /// Signed wavenumber of FFT index `i`, in `[-n/2 + 1, n/2]`.
    #[inline]
    pub fn wavenumber(&self, i: usize) -> i64 {
        let n = self.n as i64;
        let i = i as i64;
        if i <= n / 2 {
            i
        } else {
            i - n
        }
    }

    /// FFT index holding signed wavenumber `k` (taken modulo `n`).
    #[inline]
    pub fn index_of_wavenumber(&self, k: i64) -> usize {
        k.rem_euclid(self.n as i64) as usize
    }

    /// Largest retained wavenumber magnitude under the 2/3 rule.
    #[inline]
    pub fn dealias_cutoff(&self) -> i64 {
        (self.n / 3) as i64
    }

    #[inline]
    pub fn nyquist(&self) -> i64 {
        (self.n / 2) as i64
    }

    /// Per-axis FFT indices of a flat index.
    #[inline]
    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        if self.dim == 2 {
            [idx % n, idx / n, 0]
        } else {
            [idx % n, (idx / n) % n, idx / (n * n)]
        }
    }

    #[inline]
    pub fn flat_index(&self, c: [usize; 3]) -> usize {
        let n = self.n;
        if self.dim == 2 {
            c[0] + n * c[1]
        } else {
            c[0] + n * (c[1] + n * c[2])
        }
    }

    /// Physical position of grid point `idx`.
    #[inline]
    pub fn position(&self, idx: usize) -> [f64; 3] {
        let h = self.spacing();
        let c = self.coords(idx);
        [c[0] as f64 * h, c[1] as f64 * h, c[2] as f64 * h]
    }

    /// Wave vector of spectral index `idx`.
    #[inline]
    pub fn wave_vector(&self, idx: usize) -> [i64; 3] {
        let c = self.coords(idx);
        let mut k = [0i64; 3];
        for a in 0..self.dim {
            k[a] = self.wavenumber(c[a]);
        }
        k
    }

    /// True if any component of the wave vector sits on the Nyquist frequency.
    #[inline]
    pub fn is_nyquist(&self, k: &[i64; 3]) -> bool {
        let ny = self.nyquist();
        k[..self.dim].iter().any(|&c| c == ny)
    }

    /// True if the mode survives 2/3 dealiasing.
    #[inline]
    pub fn in_dealiased_band(&self, k: &[i64; 3]) -> bool {
        let cut = self.dealias_cutoff();
        k[..self.dim].iter().all(|&c| c.abs() <= cut)
    }

    /// Flat index of the point obtained by rotating `idx` by an integer lattice offset.
    #[inline]
    pub fn rotate(&self, idx: usize, offset: [i64; 3]) -> usize {
        let c = self.coords(idx);
        let n = self.n as i64;
        let mut r = [0usize; 3];
        for a in 0..self.dim {
            r[a] = (c[a] as i64 + offset[a]).rem_euclid(n) as usize;
        }
        self.flat_index(r)
    }

    pub fn check_same(&self, other: &Grid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!(
                "dim={} n={} vs dim={} n={}",
                self.dim, self.n, other.dim, other.n
            )));
        }
        Ok(())
    }
}

/// Surface measure of the unit sphere in `dim` dimensions.
pub fn unit_sphere_area(dim: usize) -> f64 {
    match dim {
        2 => 2.0 * PI,
        3 => 4.0 * PI,
        _ => unreachable!("dimension checked at grid construction"),
    }
}

/// Volume of the ball of radius `r` in `dim` dimensions.
pub fn ball_volume(dim: usize, r: f64) -> f64 {
    unit_sphere_area(dim) * r.powi(dim as i32) / dim as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_sizes() {
        assert!(Grid::new(2, 6).is_err());
        assert!(Grid::new(2, 12).is_err());
        assert!(Grid::new(4, 16).is_err());
        assert!(Grid::new(3, 8).is_ok());
    }

    #[test]
    fn wavenumbers_cover_expected_range() {
        let g = Grid::new(2, 16).unwrap();
        let ks: Vec<i64> = (0..16).map(|i| g.wavenumber(i)).collect();
        assert_eq!(*ks.iter().min().unwrap(), -7);
        assert_eq!(*ks.iter().max().unwrap(), 8);
        for k in -7..=8 {
            assert_eq!(g.wavenumber(g.index_of_wavenumber(k)), k);
        }
    }

    #[test]
    fn coords_roundtrip() {
        let g = Grid::new(3, 8).unwrap();
        for idx in 0..g.len() {
            assert_eq!(g.flat_index(g.coords(idx)), idx);
        }
        assert_eq!(g.rotate(0, [-1, 0, 0]), 7);
    }

    #[test]
    fn serde_validates() {
        let bad: std::result::Result<Grid, _> = serde_json::from_str(r#"{"dim":2,"n":10}"#);
        assert!(bad.is_err());
        let ok: Grid = serde_json::from_str(r#"{"dim":3,"n":16}"#).unwrap();
        assert_eq!(ok.len(), 4096);
    }
}
