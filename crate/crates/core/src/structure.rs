//! Sphere-averaged structure functions, their energy bounds, the weak-anisotropy
//! identity and scaling-exponent fits.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::correlation::{check_radius, quad_stats, quadratic_moments};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::unit_sphere_area;
use crate::moments::{Moments, PairStats};
use crate::quadrature::{gauss_legendre, linear_fit, trapezoid};

/// Unit directions with uniform weights for averages over `S^{d-1}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DirectionSet {
    dim: usize,
    dirs: Vec<[f64; 3]>,
}

impl DirectionSet {
    /// Equispaced angles in 2D; in 3D a spherical Fibonacci lattice of `n_dirs / 2`
    /// points together with their antipodes.
    pub fn new(dim: usize, n_dirs: usize) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(Error::Config(format!("dimension {dim} is not 2 or 3")));
        }
        if n_dirs < 8 || n_dirs % 2 != 0 {
            return Err(Error::Config(format!(
                "n_dirs = {n_dirs} must be even and at least 8"
            )));
        }
        let mut dirs = Vec::with_capacity(n_dirs);
        if dim == 2 {
            for k in 0..n_dirs {
                let a = 2.0 * PI * k as f64 / n_dirs as f64;
                dirs.push([a.cos(), a.sin(), 0.0]);
            }
        } else {
            let half = n_dirs / 2;
            let golden = PI * (3.0 - 5f64.sqrt());
            for j in 0..half {
                let z = 1.0 - (2.0 * j as f64 + 1.0) / half as f64;
                let s = (1.0 - z * z).sqrt();
                let a = golden * j as f64;
                dirs.push([s * a.cos(), s * a.sin(), z]);
            }
            for j in 0..half {
                let v = dirs[j];
                dirs.push([-v[0], -v[1], -v[2]]);
            }
        }
        Ok(DirectionSet { dim, dirs })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.dirs.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn directions(&self) -> &[[f64; 3]] {
        &self.dirs
    }

    /// Uniform weight of every direction.
    #[inline]
    pub fn weight(&self) -> f64 {
        1.0 / self.dirs.len() as f64
    }

    /// `⨍ f(n) dS(n)`.
    pub fn average(&self, mut f: impl FnMut(&[f64; 3]) -> f64) -> f64 {
        self.dirs.iter().map(|n| f(n)).sum::<f64>() * self.weight()
    }

    /// Twice as many directions.
    pub fn refined(&self) -> DirectionSet {
        DirectionSet::new(self.dim, 2 * self.dirs.len()).expect("doubling keeps validity")
    }
}

/// Product quadrature over the ball `B_s` (or shell) in `h`: Gauss–Legendre in the radius
/// times a [`DirectionSet`], weight `w_r r^{d-1} |S^{d-1}| / n_dirs`.
#[derive(Clone, Debug)]
pub struct BallQuadrature {
    pub nodes: Vec<[f64; 3]>,
    pub radii: Vec<f64>,
    pub units: Vec<[f64; 3]>,
    pub weights: Vec<f64>,
}

impl BallQuadrature {
    pub fn new(radius: f64, radial_nodes: usize, dirs: &DirectionSet) -> Self {
        let d = dirs.dim();
        let (rs, ws) = gauss_legendre(radial_nodes, 0.0, radius);
        let area = unit_sphere_area(d);
        let mut q = BallQuadrature {
            nodes: Vec::new(),
            radii: Vec::new(),
            units: Vec::new(),
            weights: Vec::new(),
        };
        for (r, w) in rs.iter().zip(&ws) {
            for n in dirs.directions() {
                q.nodes.push([r * n[0], r * n[1], r * n[2]]);
                q.radii.push(*r);
                q.units.push(*n);
                q.weights.push(w * r.powi(d as i32 - 1) * area * dirs.weight());
            }
        }
        q
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Instantaneous sphere-averaged structure functions of one snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureSnapshot {
    pub time: f64,
    pub r_grid: Vec<f64>,
    pub p_list: Vec<u32>,
    /// `s_par[ip][ir] = ⨍ ∫ (δ_{rn}u·n)^p`, ensemble mean.
    pub s_par: Vec<Vec<f64>>,
    /// `⨍ ∫ |δ_{rn}u|² δ_{rn}u·n`.
    pub s0_3: Vec<f64>,
}

/// Time-integrated structure functions over `[t₀, τ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureFunctionTable {
    pub tau: f64,
    pub r_grid: Vec<f64>,
    pub p_list: Vec<u32>,
    pub s_par: Vec<Vec<f64>>,
    pub s0_3: Vec<f64>,
    pub s_perp_3: Vec<f64>,
    /// Mean initial energy `∫ ‖u‖² dμ₀`.
    pub e0: f64,
}

/// One CSV row `(tau, r, p, S_par, S0_3, S_perp_3)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StructureRow {
    pub tau: f64,
    pub r: f64,
    pub p: u32,
    pub s_par: f64,
    pub s0_3: f64,
    pub s_perp_3: f64,
}

impl StructureFunctionTable {
    /// Trapezoid in time over the snapshots.
    pub fn from_snapshots(snaps: &[StructureSnapshot], e0: f64) -> Result<Self> {
        let first = snaps
            .first()
            .ok_or_else(|| Error::Config("no snapshots".into()))?;
        for s in snaps {
            if s.r_grid != first.r_grid || s.p_list != first.p_list {
                return Err(Error::GridMismatch("snapshots use different r or p grids".into()));
            }
        }
        let t: Vec<f64> = snaps.iter().map(|s| s.time).collect();
        if t.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("snapshot times must increase".into()));
        }
        let nr = first.r_grid.len();
        let integrate = |f: &dyn Fn(&StructureSnapshot) -> f64| {
            let y: Vec<f64> = snaps.iter().map(f).collect();
            trapezoid(&t, &y)
        };
        let s_par: Vec<Vec<f64>> = (0..first.p_list.len())
            .map(|ip| (0..nr).map(|ir| integrate(&|s| s.s_par[ip][ir])).collect())
            .collect();
        let s0_3: Vec<f64> = (0..nr).map(|ir| integrate(&|s| s.s0_3[ir])).collect();
        let i3 = first
            .p_list
            .iter()
            .position(|&p| p == 3)
            .ok_or_else(|| Error::Config("snapshots lack p = 3".into()))?;
        let s_perp_3 = s0_3.iter().zip(&s_par[i3]).map(|(a, b)| a - b).collect();
        Ok(StructureFunctionTable {
            tau: *t.last().unwrap(),
            r_grid: first.r_grid.clone(),
            p_list: first.p_list.clone(),
            s_par,
            s0_3,
            s_perp_3,
            e0,
        })
    }

    /// `S‖^p` on the r grid.
    pub fn s_par_p(&self, p: u32) -> Option<&[f64]> {
        self.p_list
            .iter()
            .position(|&q| q == p)
            .map(|i| self.s_par[i].as_slice())
    }

    pub fn rows(&self) -> Vec<StructureRow> {
        let mut out = Vec::new();
        for (ip, &p) in self.p_list.iter().enumerate() {
            for (ir, &r) in self.r_grid.iter().enumerate() {
                out.push(StructureRow {
                    tau: self.tau,
                    r,
                    p,
                    s_par: self.s_par[ip][ir],
                    s0_3: self.s0_3[ir],
                    s_perp_3: self.s_perp_3[ir],
                });
            }
        }
        out
    }
}

/// `p_list` with 2 and 3 added, sorted and deduplicated.
fn normalized_orders(p_list: &[u32]) -> Result<Vec<u32>> {
    if p_list.contains(&0) {
        return Err(Error::Config("structure-function orders must be ≥ 1".into()));
    }
    let mut p: Vec<u32> = p_list.iter().copied().chain([2, 3]).collect();
    p.sort_unstable();
    p.dedup();
    Ok(p)
}

fn check_r_grid(r_grid: &[f64]) -> Result<()> {
    if r_grid.is_empty() {
        return Err(Error::Config("empty r grid".into()));
    }
    r_grid.iter().try_for_each(|&r| check_radius(r))
}

/// `log`-spaced radii in `[r_min, r_max]`.
pub fn log_r_grid(r_min: f64, r_max: f64, count: usize) -> Result<Vec<f64>> {
    if count < 2 || !(r_min > 0.0) || !(r_max > r_min) {
        return Err(Error::Config(format!(
            "log grid needs 0 < r_min < r_max and at least 2 points, got [{r_min}, {r_max}] × {count}"
        )));
    }
    let (a, b) = (r_min.ln(), r_max.ln());
    Ok((0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect())
}

/// Structure functions of `p ∈ {2, 3}` from cubic moments.
pub fn structure_snapshot_moments(m: &Moments, r_grid: &[f64], dirs: &DirectionSet) -> Result<StructureSnapshot> {
    check_r_grid(r_grid)?;
    if !m.has_cubic() {
        return Err(Error::Config("structure functions need cubic moments".into()));
    }
    let rows: Vec<(f64, f64, f64)> = r_grid
        .par_iter()
        .map(|&r| {
            let mut acc = (0.0, 0.0, 0.0);
            for n in dirs.directions() {
                let st = m.eval(&[r * n[0], r * n[1], r * n[2]], true);
                let (l3, l0) = st.cubic_longitudinal(n).expect("cubic requested");
                acc.0 += PairStats::quad_form(&st.d, n);
                acc.1 += l3;
                acc.2 += l0;
            }
            let w = dirs.weight();
            (acc.0 * w, acc.1 * w, acc.2 * w)
        })
        .collect();
    Ok(StructureSnapshot {
        time: m.time(),
        r_grid: r_grid.to_vec(),
        p_list: vec![2, 3],
        s_par: vec![rows.iter().map(|r| r.0).collect(), rows.iter().map(|r| r.1).collect()],
        s0_3: rows.iter().map(|r| r.2).collect(),
    })
}

/// Structure functions of one ensemble by explicit spectral shifts of every member.
/// Orders 2 and 3 are always included.
pub fn structure_snapshot_real(
    ens: &Ensemble,
    r_grid: &[f64],
    dirs: &DirectionSet,
    p_list: &[u32],
) -> Result<StructureSnapshot> {
    check_r_grid(r_grid)?;
    let p_list = normalized_orders(p_list)?;
    let p_list = p_list.as_slice();
    let g = *ens.grid();
    let dv = g.cell_volume();
    let np = p_list.len();
    let nr = r_grid.len();
    let per_member: Vec<Vec<f64>> = ens
        .members()
        .par_iter()
        .map(|u| {
            let mut acc = vec![0.0; (np + 1) * nr];
            for (ir, &r) in r_grid.iter().enumerate() {
                for n in dirs.directions() {
                    let v = u.shift([r * n[0], r * n[1], r * n[2]]);
                    for idx in 0..g.len() {
                        let a = u.value(idx);
                        let b = v.value(idx);
                        let du = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                        let l = du[0] * n[0] + du[1] * n[1] + du[2] * n[2];
                        let sq = du[0] * du[0] + du[1] * du[1] + du[2] * du[2];
                        for (ip, &p) in p_list.iter().enumerate() {
                            acc[ip * nr + ir] += l.powi(p as i32);
                        }
                        acc[np * nr + ir] += sq * l;
                    }
                }
            }
            acc
        })
        .collect();
    let scale = dv * dirs.weight() / ens.len() as f64;
    let mut tot = vec![0.0; (np + 1) * nr];
    for m in &per_member {
        for (t, v) in tot.iter_mut().zip(m) {
            *t += v * scale;
        }
    }
    Ok(StructureSnapshot {
        time: ens.time(),
        r_grid: r_grid.to_vec(),
        p_list: p_list.to_vec(),
        s_par: (0..np).map(|ip| tot[ip * nr..(ip + 1) * nr].to_vec()).collect(),
        s0_3: tot[np * nr..].to_vec(),
    })
}

/// Structure functions of one snapshot; moments for band-limited members and
/// `p ⊆ {2, 3}`, explicit shifts otherwise. Orders 2 and 3 are always included.
pub fn structure_snapshot(
    ens: &Ensemble,
    r_grid: &[f64],
    dirs: &DirectionSet,
    p_list: &[u32],
) -> Result<StructureSnapshot> {
    if normalized_orders(p_list)? == [2, 3] {
        if let Ok(m) = Moments::new(ens, true) {
            return structure_snapshot_moments(&m, r_grid, dirs);
        }
    }
    structure_snapshot_real(ens, r_grid, dirs, p_list)
}

/// Time-integrated structure functions over the time-ordered `ensembles`, with `E₀`
/// taken from the first one.
pub fn structure_functions(
    ensembles: &[Ensemble],
    r_grid: &[f64],
    dirs: &DirectionSet,
    p_list: &[u32],
) -> Result<StructureFunctionTable> {
    let first = ensembles
        .first()
        .ok_or_else(|| Error::Config("no snapshots".into()))?;
    let snaps = ensembles
        .iter()
        .map(|e| structure_snapshot(e, r_grid, dirs, p_list))
        .collect::<Result<Vec<_>>>()?;
    StructureFunctionTable::from_snapshots(&snaps, first.mean_energy())
}

/// Worst ratios `max_r |S³/r| / (2E₀)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub s0_ratio: f64,
    pub par_ratio: f64,
    pub tol: f64,
    pub violated: bool,
}

/// Default slack for the bound ratios.
pub const BOUND_TOL: f64 = 0.05;

pub fn bound_check(table: &StructureFunctionTable) -> Result<BoundCheck> {
    bound_check_with(table, BOUND_TOL)
}

pub fn bound_check_with(table: &StructureFunctionTable, tol: f64) -> Result<BoundCheck> {
    let s3 = table
        .s_par_p(3)
        .ok_or_else(|| Error::Config("bound check needs p = 3".into()))?;
    let worst = |v: &[f64]| {
        v.iter()
            .zip(&table.r_grid)
            .map(|(s, r)| (s / r).abs())
            .fold(0.0, f64::max)
    };
    let (w0, wp) = (worst(&table.s0_3), worst(s3));
    if table.e0 == 0.0 {
        if w0 == 0.0 && wp == 0.0 {
            return Ok(BoundCheck {
                s0_ratio: 0.0,
                par_ratio: 0.0,
                tol,
                violated: false,
            });
        }
        return Err(Error::Inconsistent(
            "initial energy is zero but third-order structure functions are not".into(),
        ));
    }
    let s0_ratio = w0 / (2.0 * table.e0);
    let par_ratio = wp / (2.0 * table.e0);
    Ok(BoundCheck {
        s0_ratio,
        par_ratio,
        tol,
        violated: s0_ratio > 1.0 + tol || par_ratio > 1.0 + tol,
    })
}

/// Both sides of the weak-anisotropy identity
/// `d ⨍_{∂B_r} ∫ (δ_{rn}u·n)² = ⨍_{B_r} ∫ |δ_ℓ u|²`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeakAnisotropy {
    pub r: f64,
    pub sphere: f64,
    pub ball: f64,
    pub residual: f64,
}

/// Weak-anisotropy residual `|L - R| / max(L, R)` with `radial_nodes` Gauss–Legendre
/// radii on `[0, r]` times `dirs` for the ball and `dirs` for the sphere.
pub fn weak_anisotropy_residual(
    ens: &Ensemble,
    r: f64,
    dirs: &DirectionSet,
    radial_nodes: usize,
) -> Result<WeakAnisotropy> {
    check_radius(r)?;
    if dirs.dim() != ens.grid().dim() {
        return Err(Error::GridMismatch("direction set and grid dimensions differ".into()));
    }
    if radial_nodes == 0 {
        return Err(Error::Config("radial_nodes must be positive".into()));
    }
    for u in ens.members() {
        u.require_divergence_free()?;
    }
    let d = dirs.dim();
    let m = quadratic_moments(ens);
    let stats = |h: &[f64; 3]| quad_stats(ens, m.as_ref(), h);
    let sphere = d as f64
        * dirs.average(|n| PairStats::quad_form(&stats(&[r * n[0], r * n[1], r * n[2]]).d, n));
    let q = BallQuadrature::new(r, radial_nodes, dirs);
    let vals: Vec<f64> = q.nodes.par_iter().map(|h| stats(h).trace_d()).collect();
    let ball = vals.iter().zip(&q.weights).map(|(v, w)| v * w).sum::<f64>()
        / crate::grid::ball_volume(d, r);
    let big = sphere.abs().max(ball.abs());
    let residual = if big == 0.0 { 0.0 } else { (sphere - ball).abs() / big };
    Ok(WeakAnisotropy {
        r,
        sphere,
        ball,
        residual,
    })
}

/// She–Leveque exponent `λ(p) = p/9 + 2(1 - (2/3)^{p/3})`.
pub fn she_leveque(p: f64) -> f64 {
    p / 9.0 + 2.0 * (1.0 - (2.0f64 / 3.0).powf(p / 3.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZetaFit {
    pub p: u32,
    pub zeta: f64,
    pub r_squared: f64,
    pub she_leveque: f64,
}

/// Log-log fits of a structure-function table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    /// Slope of `log|S²‖|` against `log|S³‖|`.
    pub alpha: f64,
    pub alpha_r_squared: f64,
    pub zeta: Vec<ZetaFit>,
    pub fit_range: [f64; 2],
    pub points_used: usize,
    pub points_excluded: usize,
    pub warnings: Vec<String>,
}

/// Relative floor below which `|S³‖|` points are excluded from the fits.
pub const SCALING_FLOOR: f64 = 1e-12;
/// Minimum number of usable points inside the fit range.
pub const MIN_FIT_POINTS: usize = 6;

pub fn scaling_fit(table: &StructureFunctionTable, fit_range: [f64; 2]) -> Result<ScalingFit> {
    let [lo, hi] = fit_range;
    if !(lo > 0.0) || !(hi >= lo) {
        return Err(Error::Config(format!("invalid fit range [{lo}, {hi}]")));
    }
    let inside: Vec<usize> = (0..table.r_grid.len())
        .filter(|&i| table.r_grid[i] >= lo && table.r_grid[i] <= hi)
        .collect();
    let s2 = table
        .s_par_p(2)
        .ok_or_else(|| Error::Config("scaling fit needs p = 2".into()))?;
    let s3 = table
        .s_par_p(3)
        .ok_or_else(|| Error::Config("scaling fit needs p = 3".into()))?;
    let mut warnings = Vec::new();
    let signs: Vec<f64> = inside.iter().map(|&i| s3[i].signum()).filter(|s| *s != 0.0).collect();
    if signs.windows(2).any(|w| w[0] != w[1]) {
        warnings.push("S3_par changes sign inside the fit range; fit degraded".to_string());
    }
    let floor = SCALING_FLOOR * inside.iter().map(|&i| s3[i].abs()).fold(0.0, f64::max);
    let used: Vec<usize> = inside
        .iter()
        .copied()
        .filter(|&i| s3[i].abs() > floor && s2[i] != 0.0 && s3[i] != 0.0)
        .collect();
    let excluded = inside.len() - used.len();
    if excluded > 0 {
        warnings.push(format!("{excluded} points below the |S3_par| floor excluded"));
    }
    if used.len() < MIN_FIT_POINTS {
        return Err(Error::Config(format!(
            "scaling fit needs at least {MIN_FIT_POINTS} nonzero points in [{lo}, {hi}], found {}",
            used.len()
        )));
    }
    let log = |v: &[f64]| -> Vec<f64> { used.iter().map(|&i| v[i].abs().ln()).collect() };
    let lr: Vec<f64> = used.iter().map(|&i| table.r_grid[i].ln()).collect();
    let (alpha, _, alpha_r_squared) = linear_fit(&log(s3), &log(s2));
    let zeta = table
        .p_list
        .iter()
        .zip(&table.s_par)
        .map(|(&p, s)| {
            let (zeta, _, r2) = linear_fit(&lr, &log(s));
            ZetaFit {
                p,
                zeta,
                r_squared: r2,
                she_leveque: she_leveque(p as f64),
            }
        })
        .collect();
    Ok(ScalingFit {
        alpha,
        alpha_r_squared,
        zeta,
        fit_range,
        points_used: used.len(),
        points_excluded: excluded,
        warnings,
    })
}
