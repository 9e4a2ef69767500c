//! Empirical correlation-marginal observables.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fft::inverse_real;
use crate::field::{scalar_gradient, torus_volume, VelocityField, DIVERGENCE_TOL};
use crate::grid::Grid;
use crate::moments::{Moments, PairStats};
use crate::quadrature::trapezoid;
use crate::structure::DirectionSet;
use crate::Complex64;

/// Values of a two-point statistic, sorted by separation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoPointStat {
    pub observable: String,
    pub time: f64,
    pub time_integrated: bool,
    pub offsets: Vec<[f64; 3]>,
    pub separations: Vec<f64>,
    pub values: Vec<f64>,
}

impl TwoPointStat {
    fn sorted(observable: &str, time: f64, mut rows: Vec<([f64; 3], f64, f64)>) -> Result<Self> {
        if rows.iter().any(|r| !r.2.is_finite()) {
            return Err(Error::Domain(format!("{observable} produced a non-finite value")));
        }
        rows.sort_by(|a, b| a.1.total_cmp(&b.1));
        Ok(TwoPointStat {
            observable: observable.to_string(),
            time,
            time_integrated: false,
            offsets: rows.iter().map(|r| r.0).collect(),
            separations: rows.iter().map(|r| r.1).collect(),
            values: rows.iter().map(|r| r.2).collect(),
        })
    }
}

pub(crate) fn norm(h: &[f64; 3]) -> f64 {
    (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt()
}

/// A test observable `g` for the duality pairing with `ν¹` or `ν²`.
pub enum Observable<'a> {
    /// `g(x, ξ)`.
    One(&'a (dyn Fn([f64; 3], [f64; 3]) -> f64 + Sync)),
    /// `g(x₁, x₂, ξ₁, ξ₂)` on the pairs `x₂ = x₁ + h` for each lattice offset `h`.
    Two {
        offsets: &'a [[i64; 3]],
        g: &'a (dyn Fn([f64; 3], [f64; 3], [f64; 3], [f64; 3]) -> f64 + Sync),
    },
}

impl Observable<'_> {
    pub fn k(&self) -> usize {
        match self {
            Observable::One(_) => 1,
            Observable::Two { .. } => 2,
        }
    }
}

/// `(1/M) Σ_m ∫ g(x, u_m(x)) dx`, or for `k = 2` the sum over the offsets of
/// `(1/M) Σ_m ∫ g(x, x+h, u_m(x), u_m(x+h)) dx`, by grid quadrature.
pub fn pair_observable(ensemble: &Ensemble, g: &Observable<'_>) -> f64 {
    let grid = *ensemble.grid();
    let dv = grid.cell_volume();
    let per_member: Vec<f64> = ensemble
        .members()
        .par_iter()
        .map(|u| match g {
            Observable::One(f) => (0..grid.len())
                .map(|i| f(grid.position(i), u.value(i)))
                .sum::<f64>(),
            Observable::Two { offsets, g } => offsets
                .iter()
                .map(|&h| {
                    (0..grid.len())
                        .map(|i| {
                            let j = grid.rotate(i, h);
                            let x1 = grid.position(i);
                            let mut x2 = x1;
                            for a in 0..grid.dim() {
                                x2[a] += h[a] as f64 * grid.spacing();
                            }
                            g(x1, x2, u.value(i), u.value(j))
                        })
                        .sum::<f64>()
                })
                .sum::<f64>(),
        })
        .collect();
    per_member.iter().sum::<f64>() * dv / ensemble.len() as f64
}

/// Quadratic moments if the members allow the spectral route.
pub(crate) fn quadratic_moments(ensemble: &Ensemble) -> Option<Moments> {
    Moments::new(ensemble, false).ok()
}

/// Quadratic increment statistics at `h`, spectral route if possible.
pub(crate) fn quad_stats(ensemble: &Ensemble, moments: Option<&Moments>, h: &[f64; 3]) -> PairStats {
    match moments {
        Some(m) => m.eval(h, false),
        None => real_space_quadratic(ensemble, h),
    }
}

fn real_space_quadratic(ensemble: &Ensemble, h: &[f64; 3]) -> PairStats {
    let g = *ensemble.grid();
    let d = g.dim();
    let dv = g.cell_volume();
    let nm = ensemble.len() as f64;
    let mut out = PairStats::default();
    for u in ensemble.members() {
        let v = u.shift(*h);
        for idx in 0..g.len() {
            let a = u.value(idx);
            let b = v.value(idx);
            for i in 0..d {
                for j in 0..d {
                    out.r[i][j] += b[i] * a[j] * dv / nm;
                    out.d[i][j] += (b[i] - a[i]) * (b[j] - a[j]) * dv / nm;
                }
            }
        }
    }
    out
}

/// `(1/M) Σ_m ∫ u_m(x)·u_m(x+h) dx` for each offset.
pub fn two_point_correlation(ensemble: &Ensemble, offsets: &[[f64; 3]]) -> Result<TwoPointStat> {
    let m = quadratic_moments(ensemble);
    let rows = offsets
        .iter()
        .map(|h| (*h, norm(h), quad_stats(ensemble, m.as_ref(), h).trace_r()))
        .collect();
    TwoPointStat::sorted("two_point_correlation", ensemble.time(), rows)
}

/// Offsets used for the ball average `⨍_{B_r}`: every lattice offset with `|ℓ| < r`
/// when there are at least 8 of them, otherwise 32 points of a low-discrepancy
/// area-uniform radial pattern.
pub fn ball_offsets(grid: &Grid, r: f64) -> Vec<[f64; 3]> {
    let h = grid.spacing();
    let d = grid.dim();
    let m = (r / h).ceil() as i64;
    let mut lattice = Vec::new();
    let range = |a: usize| if a < d { -m..=m } else { 0..=0 };
    for i in range(0) {
        for j in range(1) {
            for k in range(2) {
                let off = [i as f64 * h, j as f64 * h, k as f64 * h];
                if norm(&off) < r {
                    lattice.push(off);
                }
            }
        }
    }
    if lattice.len() >= 8 {
        return lattice;
    }
    let count = 32;
    let golden = PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|j| {
            let rho = r * ((j as f64 + 0.5) / count as f64).powf(1.0 / d as f64);
            if d == 2 {
                let a = j as f64 * golden;
                [rho * a.cos(), rho * a.sin(), 0.0]
            } else {
                let z = 1.0 - (2.0 * j as f64 + 1.0) / count as f64;
                let s = (1.0 - z * z).sqrt();
                let a = j as f64 * golden;
                [rho * s * a.cos(), rho * s * a.sin(), rho * z]
            }
        })
        .collect()
}

/// Diagonal-continuity modulus
/// `ω_r^p = (1/M) Σ_m ∫ ⨍_{B_r(x)} |u_m(x) - u_m(y)|^p dy dx`.
pub fn dc_modulus(ensemble: &Ensemble, r: f64, p: f64) -> Result<f64> {
    let m = if p == 2.0 { quadratic_moments(ensemble) } else { None };
    dc_modulus_with(ensemble, m.as_ref(), r, p)
}

pub(crate) fn check_radius(r: f64) -> Result<()> {
    if !(r > 0.0) || r > PI {
        return Err(Error::Domain(format!("radius {r} outside (0, π]")));
    }
    Ok(())
}

fn dc_modulus_with(ensemble: &Ensemble, m: Option<&Moments>, r: f64, p: f64) -> Result<f64> {
    check_radius(r)?;
    if !(p >= 1.0) {
        return Err(Error::Domain(format!("exponent p = {p} must be ≥ 1")));
    }
    let offsets = ball_offsets(ensemble.grid(), r);
    if p == 2.0 {
        let total: f64 = offsets
            .iter()
            .map(|h| quad_stats(ensemble, m, h).trace_d())
            .sum();
        return Ok(total / offsets.len() as f64);
    }
    let g = *ensemble.grid();
    let dv = g.cell_volume();
    let per_member: Vec<f64> = ensemble
        .members()
        .par_iter()
        .map(|u| {
            offsets
                .iter()
                .map(|h| {
                    let v = u.shift(*h);
                    (0..g.len())
                        .map(|i| {
                            let a = u.value(i);
                            let b = v.value(i);
                            let s: f64 = (0..3).map(|c| (b[c] - a[c]).powi(2)).sum();
                            s.powf(p / 2.0)
                        })
                        .sum::<f64>()
                })
                .sum::<f64>()
        })
        .collect();
    Ok(per_member.iter().sum::<f64>() * dv / (ensemble.len() * offsets.len()) as f64)
}

/// `ω_r²` from precomputed quadratic moments.
pub fn dc_modulus_moments(moments: &Moments, r: f64) -> Result<f64> {
    check_radius(r)?;
    let offsets = ball_offsets(moments.grid(), r);
    let total: f64 = offsets.iter().map(|h| moments.eval(h, false).trace_d()).sum();
    Ok(total / offsets.len() as f64)
}

/// `∫ ω_r² dt` over the snapshot times, by trapezoid.
pub fn dc_modulus_time_integrated(moments: &[Moments], r: f64) -> Result<f64> {
    let t: Vec<f64> = moments.iter().map(|m| m.time()).collect();
    let v = moments
        .iter()
        .map(|m| dc_modulus_moments(m, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(trapezoid(&t, &v))
}

/// Time profile `θ(t)` of a separable test function on `[t₀, T]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TimeProfile {
    /// `(1 - s)²`, `s = (t - t₀)/(T - t₀)`.
    Quadratic,
    /// `cos(πs/2)`.
    Cosine,
    /// `1`.
    Constant,
}

impl TimeProfile {
    /// `(θ(t), θ'(t))`.
    pub fn eval(self, t: f64, t0: f64, t1: f64) -> (f64, f64) {
        let len = t1 - t0;
        let s = if len > 0.0 { (t - t0) / len } else { 0.0 };
        match self {
            TimeProfile::Quadratic => ((1.0 - s).powi(2), -2.0 * (1.0 - s) / len),
            TimeProfile::Cosine => {
                let a = 0.5 * PI * s;
                (a.cos(), -0.5 * PI / len * a.sin())
            }
            TimeProfile::Constant => (1.0, 0.0),
        }
    }
}

/// Separable test function `θ(t) f(x₁)` (k = 1) or `θ(t) f(x₁) ⊗ g(x₂)` (k = 2).
#[derive(Clone, Debug)]
pub struct FkTest {
    pub profile: TimeProfile,
    pub f: VelocityField,
    pub g: Option<VelocityField>,
    pub label: String,
}

impl FkTest {
    pub fn new(profile: TimeProfile, f: VelocityField, g: Option<VelocityField>, label: impl Into<String>) -> Result<Self> {
        for (name, v) in [("f", Some(&f)), ("g", g.as_ref())] {
            if let Some(v) = v {
                if v.divergence_defect() > DIVERGENCE_TOL {
                    return Err(Error::Precondition(format!(
                        "spatial factor {name} is not divergence free"
                    )));
                }
                f.grid().check_same(v.grid())?;
            }
        }
        Ok(FkTest {
            profile,
            f,
            g,
            label: label.into(),
        })
    }
}

struct SpatialFactor {
    f: VelocityField,
    grad: Vec<Vec<Vec<f64>>>,
    lap: VelocityField,
}

impl SpatialFactor {
    fn new(f: &VelocityField) -> Self {
        let d = f.dim();
        let grad = (0..d)
            .map(|i| (0..d).map(|j| f.derivative(i, j)).collect())
            .collect();
        let g = *f.grid();
        let mut s = f.spectrum().clone();
        for c in s.components_mut() {
            for (idx, z) in c.iter_mut().enumerate() {
                let k = g.wave_vector(idx);
                *z *= -((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64);
            }
        }
        SpatialFactor {
            f: f.clone(),
            grad,
            lap: VelocityField::from_spectrum(s),
        }
    }

    /// `(∫u·f, ∫u_i u_j ∂_j f_i, ∫u·Δf)`.
    fn scalars(&self, u: &VelocityField) -> (f64, f64, f64) {
        let g = *u.grid();
        let d = g.dim();
        let mut adv = 0.0;
        for idx in 0..g.len() {
            for i in 0..d {
                for j in 0..d {
                    adv += u.component(i)[idx] * u.component(j)[idx] * self.grad[i][j][idx];
                }
            }
        }
        (u.inner(&self.f), adv * g.cell_volume(), u.inner(&self.lap))
    }
}

/// Per-member scalars of one snapshot needed by the moment equations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FkSample {
    pub time: f64,
    /// `∫u·f`, `∫u_iu_j∂_jf_i`, `∫u·Δf` per member.
    pub a: Vec<[f64; 3]>,
    /// The same for the second factor `g`.
    pub b: Vec<[f64; 3]>,
}

/// Extracts [`FkSample`]s for a fixed test function.
pub struct FkSampler {
    first: SpatialFactor,
    second: Option<SpatialFactor>,
}

impl FkSampler {
    pub fn new(test: &FkTest) -> Self {
        FkSampler {
            first: SpatialFactor::new(&test.f),
            second: test.g.as_ref().map(SpatialFactor::new),
        }
    }

    pub fn sample(&self, ensemble: &Ensemble) -> Result<FkSample> {
        ensemble.grid().check_same(self.first.f.grid())?;
        let rows: Vec<([f64; 3], [f64; 3])> = ensemble
            .members()
            .par_iter()
            .map(|u| {
                let (a0, a1, a2) = self.first.scalars(u);
                let b = match &self.second {
                    Some(s) => {
                        let (b0, b1, b2) = s.scalars(u);
                        [b0, b1, b2]
                    }
                    None => [a0, a1, a2],
                };
                ([a0, a1, a2], b)
            })
            .collect();
        Ok(FkSample {
            time: ensemble.time(),
            a: rows.iter().map(|r| r.0).collect(),
            b: rows.iter().map(|r| r.1).collect(),
        })
    }
}

/// Terms of the k-th moment equation tested against a separable function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FKResidual {
    pub k: usize,
    pub test_function: String,
    pub terms: BTreeMap<String, f64>,
    pub residual: f64,
    pub scale: f64,
}

impl FKResidual {
    /// `|residual| / scale`, zero when every term vanishes.
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.residual.abs() / self.scale
        }
    }
}

/// Moment-equation residual for `k ∈ {1, 2}` on time-ordered ensembles.
pub fn fk_residual(ensembles: &[Ensemble], k: usize, test: &FkTest, nu: f64) -> Result<FKResidual> {
    let sampler = FkSampler::new(test);
    let samples = ensembles
        .iter()
        .map(|e| sampler.sample(e))
        .collect::<Result<Vec<_>>>()?;
    fk_residual_samples(&samples, k, test.profile, Some(nu), &test.label)
}

/// Residual from precomputed samples; `nu = None` drops the viscous term
/// (inviscid form).
///
/// The residual is the signed sum
/// `∫M θ' dt + M(t₀)θ(t₀) − M(T)θ(T) + ∫θ·adv dt + ν∫θ·lap dt`,
/// where for `k = 1` `M = mean ∫u·f`, `adv = mean ∫u_iu_j∂_jf_i`, `lap = mean ∫u·Δf`, and
/// for `k = 2` `M = mean(ab)`, `adv = mean(A b + a B)`, `lap = mean(La b + a Lb)`.
pub fn fk_residual_samples(
    samples: &[FkSample],
    k: usize,
    profile: TimeProfile,
    nu: Option<f64>,
    label: &str,
) -> Result<FKResidual> {
    if k != 1 && k != 2 {
        return Err(Error::Config(format!("moment order k = {k} not supported (1 or 2)")));
    }
    if samples.len() < 2 {
        return Err(Error::Config("at least two snapshot times are required".into()));
    }
    let t: Vec<f64> = samples.iter().map(|s| s.time).collect();
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("snapshots must be strictly time ordered".into()));
    }
    let (t0, t1) = (t[0], t[t.len() - 1]);
    let mean = |f: &dyn Fn(&[f64; 3], &[f64; 3]) -> f64, s: &FkSample| {
        s.a.iter().zip(&s.b).map(|(a, b)| f(a, b)).sum::<f64>() / s.a.len() as f64
    };
    let (moment, adv, lap): (Vec<f64>, Vec<f64>, Vec<f64>) = if k == 1 {
        (
            samples.iter().map(|s| mean(&|a, _| a[0], s)).collect(),
            samples.iter().map(|s| mean(&|a, _| a[1], s)).collect(),
            samples.iter().map(|s| mean(&|a, _| a[2], s)).collect(),
        )
    } else {
        (
            samples.iter().map(|s| mean(&|a, b| a[0] * b[0], s)).collect(),
            samples.iter().map(|s| mean(&|a, b| a[1] * b[0] + a[0] * b[1], s)).collect(),
            samples.iter().map(|s| mean(&|a, b| a[2] * b[0] + a[0] * b[2], s)).collect(),
        )
    };
    let th: Vec<(f64, f64)> = t.iter().map(|&x| profile.eval(x, t0, t1)).collect();
    let prod = |v: &[f64], use_derivative: bool| -> Vec<f64> {
        v.iter()
            .zip(&th)
            .map(|(x, (a, b))| x * if use_derivative { *b } else { *a })
            .collect()
    };
    let mut terms = BTreeMap::new();
    terms.insert("time_derivative".to_string(), trapezoid(&t, &prod(&moment, true)));
    terms.insert("initial".to_string(), moment[0] * th[0].0);
    terms.insert("terminal".to_string(), -moment[moment.len() - 1] * th[th.len() - 1].0);
    terms.insert("advection".to_string(), trapezoid(&t, &prod(&adv, false)));
    terms.insert("pressure".to_string(), 0.0);
    if let Some(nu) = nu {
        terms.insert("viscous".to_string(), nu * trapezoid(&t, &prod(&lap, false)));
    }
    let residual: f64 = terms.values().sum();
    let scale = terms.values().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(FKResidual {
        k,
        test_function: format!("{label}; theta={profile:?}"),
        terms,
        residual,
        scale,
    })
}

/// Instances of the divergence constraint with separable test functions.
pub enum DivConstraint<'a> {
    /// `k = 1`: `mean ∫ u·∇ψ`.
    K1 { psi: &'a [f64] },
    /// `k = 2, ℓ = 1`: `mean (∫u·∇s)(∫α(u)·w)`.
    K2L1 {
        s: &'a [f64],
        w: &'a VelocityField,
        alpha: &'a (dyn Fn([f64; 3]) -> [f64; 3] + Sync),
    },
    /// `k = 2, ℓ = 2`: `mean (∫u·∇s₁)(∫u·∇s₂)`.
    K2L2 { s1: &'a [f64], s2: &'a [f64] },
}

/// Value of a divergence-constraint integral and its Cauchy–Schwarz scale.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DivResidual {
    pub value: f64,
    pub scale: f64,
}

impl DivResidual {
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.value.abs() / self.scale
        }
    }
}

/// Evaluate the divergence constraint, which vanishes for divergence-free members.
pub fn divergence_constraint_residual(ensemble: &Ensemble, c: &DivConstraint<'_>) -> Result<DivResidual> {
    let grid = *ensemble.grid();
    let check = |v: &[f64]| {
        if v.len() == grid.len() {
            Ok(())
        } else {
            Err(Error::GridMismatch("test function does not match grid".into()))
        }
    };
    let m = ensemble.len() as f64;
    match c {
        DivConstraint::K1 { psi } => {
            check(psi)?;
            let gp = scalar_gradient(&grid, psi);
            let gn = gp.l2_norm();
            let (mut v, mut s) = (0.0, 0.0);
            for u in ensemble.members() {
                v += u.inner(&gp);
                s += u.l2_norm() * gn;
            }
            Ok(DivResidual { value: v / m, scale: s / m })
        }
        DivConstraint::K2L1 { s, w, alpha } => {
            check(s)?;
            grid.check_same(w.grid())?;
            let gs = scalar_gradient(&grid, s);
            let (gn, wn) = (gs.l2_norm(), w.l2_norm());
            let (mut v, mut sc) = (0.0, 0.0);
            for u in ensemble.members() {
                let au = VelocityField::from_fn(grid, |x| {
                    let _ = x;
                    [0.0; 3]
                });
                let mut au = au;
                {
                    let comps = au.components_mut();
                    for idx in 0..grid.len() {
                        let a = alpha(u.value(idx));
                        for (c, comp) in comps.iter_mut().enumerate() {
                            comp[idx] = a[c];
                        }
                    }
                }
                v += u.inner(&gs) * au.inner(w);
                sc += u.l2_norm() * gn * au.energy_quadrature().sqrt() * wn;
            }
            Ok(DivResidual { value: v / m, scale: sc / m })
        }
        DivConstraint::K2L2 { s1, s2 } => {
            check(s1)?;
            check(s2)?;
            let g1 = scalar_gradient(&grid, s1);
            let g2 = scalar_gradient(&grid, s2);
            let (n1, n2) = (g1.l2_norm(), g2.l2_norm());
            let (mut v, mut sc) = (0.0, 0.0);
            for u in ensemble.members() {
                v += u.inner(&g1) * u.inner(&g2);
                sc += u.energy() * n1 * n2;
            }
            Ok(DivResidual { value: v / m, scale: sc / m })
        }
    }
}

/// `G(h) = h⁻² Σ_j (1/M) Σ_m ∫ |u_m(x + h e_j) - u_m(x)|² dx` for each `h`.
pub fn gradient_two_point(ensemble: &Ensemble, h_list: &[f64]) -> Result<TwoPointStat> {
    if h_list.iter().any(|h| !(*h > 0.0)) {
        return Err(Error::Domain("offsets must be positive".into()));
    }
    let m = quadratic_moments(ensemble);
    let d = ensemble.grid().dim();
    let rows = h_list
        .iter()
        .map(|&h| {
            let mut total = 0.0;
            for j in 0..d {
                let mut off = [0.0; 3];
                off[j] = h;
                total += quad_stats(ensemble, m.as_ref(), &off).trace_d();
            }
            let mut e = [0.0; 3];
            e[0] = h;
            (e, h, total / (h * h))
        })
        .collect();
    TwoPointStat::sorted("gradient_two_point", ensemble.time(), rows)
}

/// Trace correlation `C(h) = (1/M) Σ_m ∫ u_m(x)·u_m(x+h) dx` of one snapshot, tabulated
/// on every lattice offset by a single inverse transform of the mean spectral density.
#[derive(Clone, Debug)]
pub struct LatticeCorrelation {
    grid: Grid,
    modes: Vec<([f64; 3], f64)>,
    values: Vec<f64>,
}

impl LatticeCorrelation {
    pub fn new(ensemble: &Ensemble) -> Self {
        Self::from_fields(ensemble.grid(), ensemble.members())
    }

    pub fn of_field(u: &VelocityField) -> Self {
        Self::from_fields(u.grid(), std::slice::from_ref(u))
    }

    fn from_fields(grid: &Grid, fields: &[VelocityField]) -> Self {
        let g = *grid;
        let vol = torus_volume(g.dim());
        let mut density = vec![0.0; g.len()];
        for u in fields {
            for c in u.spectrum().components() {
                for (d, z) in density.iter_mut().zip(c) {
                    *d += z.norm_sqr();
                }
            }
        }
        let scale = vol / fields.len().max(1) as f64;
        density.iter_mut().for_each(|d| *d *= scale);
        let spec: Vec<Complex64> = density.iter().map(|&d| Complex64::new(d, 0.0)).collect();
        let values = inverse_real(&g, &spec);
        let modes = density
            .iter()
            .enumerate()
            .filter(|(_, d)| **d != 0.0)
            .map(|(i, d)| {
                let k = g.wave_vector(i);
                ([k[0] as f64, k[1] as f64, k[2] as f64], *d)
            })
            .collect();
        LatticeCorrelation { grid: g, modes, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `C(0)`, the mean energy.
    pub fn zero(&self) -> f64 {
        self.values[0]
    }

    /// `C(h)`; tabulated for lattice offsets, summed mode by mode otherwise.
    pub fn at(&self, h: &[f64; 3]) -> f64 {
        let sp = self.grid.spacing();
        let mut c = [0usize; 3];
        let mut on_lattice = true;
        for a in 0..self.grid.dim() {
            let q = h[a] / sp;
            let qr = q.round();
            if (q - qr).abs() > 1e-9 {
                on_lattice = false;
                break;
            }
            c[a] = (qr as i64).rem_euclid(self.grid.n() as i64) as usize;
        }
        if on_lattice {
            return self.values[self.grid.flat_index(c)];
        }
        self.modes
            .iter()
            .map(|(k, d)| d * (k[0] * h[0] + k[1] * h[1] + k[2] * h[2]).cos())
            .sum()
    }

    /// `⨍_{B_r} C(h) dh` over [`ball_offsets`].
    pub fn ball_average(&self, r: f64) -> Result<f64> {
        check_radius(r)?;
        let offsets = ball_offsets(&self.grid, r);
        Ok(offsets.iter().map(|h| self.at(h)).sum::<f64>() / offsets.len() as f64)
    }

    /// `ω_r² = 2C(0) − 2⨍_{B_r} C`, identical to [`dc_modulus`] with `p = 2`.
    pub fn dc_modulus(&self, r: f64) -> Result<f64> {
        Ok(2.0 * (self.zero() - self.ball_average(r)?))
    }

    /// `⨍_{∂B_r} C`, averaged over `dirs`.
    pub fn sphere_average(&self, r: f64, dirs: &DirectionSet) -> f64 {
        dirs.average(|n| self.at(&[r * n[0], r * n[1], r * n[2]]))
    }
}
