//! Initial measures with bounded support, ensemble evolution and the statistical
//! energy inequality.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{Spectrum, VelocityField};
use crate::grid::Grid;
use crate::quadrature::trapezoid;
use crate::solver::{check_times, SolverConfig, Stepper};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasureKind {
    RandomFourier,
    PerturbedBase,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseFlow {
    TaylorGreen,
    Shear,
}

impl BaseFlow {
    pub fn field(self, grid: Grid) -> VelocityField {
        match self {
            BaseFlow::TaylorGreen => VelocityField::taylor_green(grid),
            BaseFlow::Shear => VelocityField::shear(grid),
        }
    }
}

fn default_k_min() -> u32 {
    1
}

/// Random-phase Fourier measure: every member has the shell spectrum
/// `E(s) ∝ s^{-γ}` on `k_min ≤ s ≤ k_max` (shells `s = round|k|`) and random phases.
///
/// The random part has `L²` norm `perturbation_amp`; for `perturbed_base` it is added to
/// the base flow. Members whose norm exceeds `support_radius` are rescaled onto it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureSpec {
    pub kind: MeasureKind,
    pub spectrum_slope: f64,
    #[serde(default = "default_k_min")]
    pub k_min: u32,
    pub k_max: u32,
    #[serde(default)]
    pub base: Option<BaseFlow>,
    pub perturbation_amp: f64,
    pub support_radius: f64,
    pub seed: u64,
}

impl MeasureSpec {
    pub fn random_fourier(slope: f64, k_min: u32, k_max: u32, amp: f64, radius: f64, seed: u64) -> Self {
        MeasureSpec {
            kind: MeasureKind::RandomFourier,
            spectrum_slope: slope,
            k_min,
            k_max,
            base: None,
            perturbation_amp: amp,
            support_radius: radius,
            seed,
        }
    }

    pub fn perturbed(base: BaseFlow, slope: f64, k_min: u32, k_max: u32, amp: f64, radius: f64, seed: u64) -> Self {
        MeasureSpec {
            kind: MeasureKind::PerturbedBase,
            spectrum_slope: slope,
            k_min,
            k_max,
            base: Some(base),
            perturbation_amp: amp,
            support_radius: radius,
            seed,
        }
    }

    /// Every violated constraint for sampling on `grid`.
    pub fn violations(&self, grid: Option<&Grid>) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.support_radius > 0.0) || !self.support_radius.is_finite() {
            v.push("support_radius must be > 0".to_string());
        }
        if self.k_min < 1 {
            v.push("k_min must be ≥ 1".to_string());
        }
        if self.k_max < self.k_min {
            v.push("k_max must be ≥ k_min".to_string());
        }
        if !self.spectrum_slope.is_finite() {
            v.push("spectrum_slope must be finite".to_string());
        }
        if !(self.perturbation_amp >= 0.0) || !self.perturbation_amp.is_finite() {
            v.push("perturbation_amp must be ≥ 0".to_string());
        }
        if self.kind == MeasureKind::PerturbedBase && self.base.is_none() {
            v.push("perturbed_base requires a base flow".to_string());
        }
        if let Some(g) = grid {
            let cut = g.dealias_cutoff();
            if self.k_max as i64 > cut {
                v.push(format!(
                    "spectrum band k_max = {} exceeds the dealiased band n/3 = {} (2/3 rule)",
                    self.k_max, cut
                ));
            }
        }
        v
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        let v = self.violations(Some(grid));
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }
}

/// Members sharing grid, time and viscosity; the empirical measure of equal weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    members: Vec<VelocityField>,
    spec: Option<MeasureSpec>,
}

impl Ensemble {
    pub fn new(members: Vec<VelocityField>) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::Config("an ensemble needs at least one member".into()));
        };
        for m in &members[1..] {
            first.grid().check_same(m.grid())?;
            if m.time() != first.time() || m.nu() != first.nu() {
                return Err(Error::GridMismatch(
                    "ensemble members must share time and viscosity".into(),
                ));
            }
        }
        Ok(Ensemble { members, spec: None })
    }

    pub fn with_spec(mut self, spec: MeasureSpec) -> Self {
        self.spec = Some(spec);
        self
    }

    pub fn singleton(field: VelocityField) -> Self {
        Ensemble {
            members: vec![field],
            spec: None,
        }
    }

    #[inline]
    pub fn members(&self) -> &[VelocityField] {
        &self.members
    }

    pub fn into_members(self) -> Vec<VelocityField> {
        self.members
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.members.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        self.members[0].grid()
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.members[0].time()
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.members[0].nu()
    }

    pub fn spec(&self) -> Option<&MeasureSpec> {
        self.spec.as_ref()
    }

    /// `(1/M) Σ ‖u_m‖²`.
    pub fn mean_energy(&self) -> f64 {
        self.members.iter().map(|m| m.energy()).sum::<f64>() / self.len() as f64
    }

    pub fn mean_h1(&self) -> f64 {
        self.members.iter().map(|m| m.h1_seminorm_sq()).sum::<f64>() / self.len() as f64
    }

    pub fn max_norm(&self) -> f64 {
        self.members.iter().map(|m| m.l2_norm()).fold(0.0, f64::max)
    }

    /// Pointwise ensemble mean.
    pub fn mean_field(&self) -> VelocityField {
        let g = *self.grid();
        let mut comps = vec![vec![0.0; g.len()]; g.dim()];
        for m in &self.members {
            for (acc, c) in comps.iter_mut().zip(m.components()) {
                for (a, v) in acc.iter_mut().zip(c) {
                    *a += v;
                }
            }
        }
        let s = 1.0 / self.len() as f64;
        for c in comps.iter_mut() {
            for v in c.iter_mut() {
                *v *= s;
            }
        }
        VelocityField::new(g, comps, self.time(), self.nu()).expect("shape preserved")
    }

    /// Replace every member by `λ u`.
    pub fn scaled(&self, lambda: f64) -> Ensemble {
        Ensemble {
            members: self.members.iter().map(|m| m.scaled(lambda)).collect(),
            spec: self.spec.clone(),
        }
    }

    /// Members in a different order.
    pub fn permuted(&self, order: &[usize]) -> Ensemble {
        Ensemble {
            members: order.iter().map(|&i| self.members[i].clone()).collect(),
            spec: self.spec.clone(),
        }
    }
}

fn member_rng(seed: u64, member: usize, word: u128) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(member as u64);
    rng.set_word_pos(word);
    rng
}

/// Shell index `round|k|`.
#[inline]
pub fn shell_of(k: &[i64; 3]) -> usize {
    ((k[0] * k[0] + k[1] * k[1] + k[2] * k[2]) as f64).sqrt().round() as usize
}

/// True for the representative of each `±k` pair.
#[inline]
fn canonical(k: &[i64; 3]) -> bool {
    k[2] > 0 || (k[2] == 0 && (k[1] > 0 || (k[1] == 0 && k[0] > 0)))
}

fn unit_perp(k: &[i64; 3], dim: usize, angle: f64) -> [f64; 3] {
    let kf = [k[0] as f64, k[1] as f64, k[2] as f64];
    let kn = (kf[0] * kf[0] + kf[1] * kf[1] + kf[2] * kf[2]).sqrt();
    if dim == 2 {
        return [-kf[1] / kn, kf[0] / kn, 0.0];
    }
    let khat = [kf[0] / kn, kf[1] / kn, kf[2] / kn];
    let helper = if khat[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let mut e1 = cross(khat, helper);
    let n1 = norm3(e1);
    e1 = [e1[0] / n1, e1[1] / n1, e1[2] / n1];
    let e2 = cross(khat, e1);
    let (s, c) = angle.sin_cos();
    [c * e1[0] + s * e2[0], c * e1[1] + s * e2[1], c * e1[2] + s * e2[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

/// Random divergence-free part of member `member`, with unit `L²` norm.
fn random_part(spec: &MeasureSpec, grid: &Grid, member: usize) -> VelocityField {
    let d = grid.dim();
    let (kmin, kmax) = (spec.k_min as usize, spec.k_max as usize);
    let mut counts = vec![0usize; kmax + 1];
    for idx in 0..grid.len() {
        let k = grid.wave_vector(idx);
        let s = shell_of(&k);
        if s >= kmin && s <= kmax && !grid.is_nyquist(&k) {
            counts[s] += 1;
        }
    }
    let mut spec_c = Spectrum::zeros(*grid);
    for idx in 0..grid.len() {
        let k = grid.wave_vector(idx);
        let s = shell_of(&k);
        if s < kmin || s > kmax || grid.is_nyquist(&k) || !canonical(&k) {
            continue;
        }
        let amp = ((s as f64).powf(-spec.spectrum_slope) / counts[s] as f64).sqrt();
        let mut rng = member_rng(spec.seed, member, idx as u128 * 8);
        let phase: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let angle: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let p = unit_perp(&k, d, angle);
        let z = Complex64::from_polar(amp, phase);
        let j = fft::conjugate_index(grid, idx);
        let comps = spec_c.components_mut();
        for a in 0..d {
            comps[a][idx] = z * p[a];
            comps[a][j] = (z * p[a]).conj();
        }
    }
    let e = spec_c.energy();
    let f = VelocityField::from_spectrum(spec_c);
    if e > 0.0 {
        f.scaled(1.0 / e.sqrt())
    } else {
        f
    }
}

/// Draw `m` members of the measure. Member `j` depends only on `(spec.seed, j)`.
pub fn sample_initial(spec: &MeasureSpec, m: usize, grid: &Grid) -> Result<Ensemble> {
    spec.validate(grid)?;
    if m < 1 {
        return Err(Error::Config("ensemble size must be ≥ 1".into()));
    }
    let members: Vec<VelocityField> = (0..m)
        .into_par_iter()
        .map(|j| sample_member(spec, grid, j))
        .collect();
    Ok(Ensemble::new(members)?.with_spec(spec.clone()))
}

fn sample_member(spec: &MeasureSpec, grid: &Grid, j: usize) -> VelocityField {
    let mut u = match (spec.kind, spec.base) {
        (MeasureKind::PerturbedBase, Some(b)) => b.field(*grid),
        _ => VelocityField::zeros(*grid),
    };
    if spec.perturbation_amp > 0.0 {
        let r = random_part(spec, grid, j);
        u = u.axpy(spec.perturbation_amp, &r).expect("same grid");
    }
    let norm = u.l2_norm();
    if norm > spec.support_radius {
        u = u.scaled(spec.support_radius / norm);
    }
    u
}

/// Real-space white noise in `[-1, 1]`, not divergence free.
pub fn white_noise(grid: &Grid, seed: u64, member: usize) -> VelocityField {
    let mut rng = member_rng(seed, member, 0);
    VelocityField::from_fn(*grid, |_| {
        [
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        ]
    })
}

/// Angle-averaged shell spectrum `E(s) = (2π)^d Σ_{round|k| = s} |û(k)|²`, ensemble mean.
pub fn shell_spectrum(ensemble: &Ensemble) -> Vec<f64> {
    let g = ensemble.grid();
    let smax = shell_of(&[g.nyquist(), g.nyquist(), if g.dim() == 3 { g.nyquist() } else { 0 }]);
    let mut out = vec![0.0; smax + 1];
    for m in ensemble.members() {
        let s = m.spectrum();
        for idx in 0..g.len() {
            let k = g.wave_vector(idx);
            let e: f64 = s.components().iter().map(|c| c[idx].norm_sqr()).sum();
            out[shell_of(&k)] += e * g.volume();
        }
    }
    for v in out.iter_mut() {
        *v /= ensemble.len() as f64;
    }
    out
}

/// Evolve every member and deliver the ensemble at each sample time to `observer`,
/// keeping only the current state in memory.
pub fn evolve_streaming(
    ensemble: &Ensemble,
    config: &SolverConfig,
    sample_times: &[f64],
    mut observer: impl FnMut(Ensemble) -> Result<()>,
) -> Result<()> {
    config.validate()?;
    let t0 = ensemble.time();
    check_times(sample_times, t0, t0 + config.t_end)?;
    let mut steppers: Vec<Stepper> = ensemble
        .members()
        .iter()
        .map(|u| Stepper::new(&u.clone().with_nu(config.nu), config))
        .collect::<Result<_>>()?;
    for &t in sample_times {
        let results: Vec<Result<VelocityField>> = steppers
            .par_iter_mut()
            .enumerate()
            .map(|(j, st)| {
                st.advance_to(t).map_err(|e| match e {
                    Error::BlowUp { time, reason } => Error::MemberBlowUp {
                        member: j,
                        time,
                        reason,
                    },
                    other => other,
                })?;
                Ok(st.field())
            })
            .collect();
        let members = results.into_iter().collect::<Result<Vec<_>>>()?;
        let mut e = Ensemble::new(members)?;
        e.spec = ensemble.spec.clone();
        observer(e)?;
    }
    Ok(())
}

/// Evolve every member and return the ensembles at the sample times.
pub fn evolve(ensemble: &Ensemble, config: &SolverConfig, sample_times: &[f64]) -> Result<Vec<Ensemble>> {
    let mut out = Vec::with_capacity(sample_times.len());
    evolve_streaming(ensemble, config, sample_times, |e| {
        out.push(e);
        Ok(())
    })?;
    Ok(out)
}

/// Per-member `‖u‖²` and `|u|²_{H¹}` at one time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergySample {
    pub time: f64,
    pub nu: f64,
    pub energy: Vec<f64>,
    pub h1: Vec<f64>,
}

impl EnergySample {
    pub fn of(ensemble: &Ensemble) -> Self {
        EnergySample {
            time: ensemble.time(),
            nu: ensemble.nu(),
            energy: ensemble.members().iter().map(|m| m.energy()).collect(),
            h1: ensemble.members().iter().map(|m| m.h1_seminorm_sq()).collect(),
        }
    }
}

/// Result of the statistical energy inequality check.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyCheck {
    pub times: Vec<f64>,
    /// `defects[k-1][j]`: signed relative defect for `ψ(s) = s^k` at `times[j]`.
    pub defects: Vec<Vec<f64>>,
    pub worst: f64,
}

/// Statistical energy inequality for `ψ(s) = s^k`, `k = 1..=kmax`, on time-ordered ensembles.
pub fn statistical_energy_check(ensembles: &[Ensemble], kmax: usize) -> Result<EnergyCheck> {
    let samples: Vec<EnergySample> = ensembles.iter().map(EnergySample::of).collect();
    statistical_energy_check_samples(&samples, kmax)
}

/// As [`statistical_energy_check`], from precomputed per-member norms.
///
/// The defect at time `t` is
/// `[mean‖u(t)‖^{2k} + 2νk∫₀ᵗ mean(‖u‖^{2(k-1)}|u|²_{H¹}) − mean‖u(0)‖^{2k}] / mean‖u(0)‖^{2k}`;
/// positive values violate the inequality.
pub fn statistical_energy_check_samples(samples: &[EnergySample], kmax: usize) -> Result<EnergyCheck> {
    if samples.is_empty() {
        return Err(Error::Config("no ensembles supplied".into()));
    }
    let times: Vec<f64> = samples.iter().map(|s| s.time).collect();
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("ensembles must be strictly time ordered".into()));
    }
    let m = samples[0].energy.len();
    if samples.iter().any(|s| s.energy.len() != m) {
        return Err(Error::GridMismatch("ensembles differ in size".into()));
    }
    let nu = samples[0].nu;
    let mut defects = Vec::with_capacity(kmax);
    let mut worst = f64::NEG_INFINITY;
    for k in 1..=kmax {
        let kf = k as i32;
        let mean_pow = |s: &EnergySample| s.energy.iter().map(|e| e.powi(kf)).sum::<f64>() / m as f64;
        let rate: Vec<f64> = samples
            .iter()
            .map(|s| {
                s.energy
                    .iter()
                    .zip(&s.h1)
                    .map(|(e, h)| e.powi(kf - 1) * h)
                    .sum::<f64>()
                    / m as f64
                    * 2.0
                    * nu
                    * k as f64
            })
            .collect();
        let rhs = mean_pow(&samples[0]);
        let mut row = Vec::with_capacity(samples.len());
        for j in 0..samples.len() {
            let diss = trapezoid(&times[..=j], &rate[..=j]);
            let lhs = mean_pow(&samples[j]) + diss;
            let d = if rhs > 0.0 { (lhs - rhs) / rhs } else { lhs - rhs };
            worst = worst.max(d);
            row.push(d);
        }
        defects.push(row);
    }
    if kmax == 0 {
        worst = 0.0;
    }
    Ok(EnergyCheck { times, defects, worst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::linear_fit;
    use crate::solver::uniform_times;

    #[test]
    fn zero_perturbation_is_base_flow() {
        let g = Grid::new(2, 32).unwrap();
        let spec = MeasureSpec::perturbed(BaseFlow::TaylorGreen, 5.0 / 3.0, 1, 8, 0.0, 100.0, 7);
        let e = sample_initial(&spec, 1, &g).unwrap();
        assert_eq!(e.members()[0], VelocityField::taylor_green(g));
    }

    #[test]
    fn spectrum_slope_recovered() {
        let g = Grid::new(2, 64).unwrap();
        let spec = MeasureSpec::random_fourier(5.0 / 3.0, 2, 16, 1.0, 10.0, 11);
        let e = sample_initial(&spec, 64, &g).unwrap();
        let es = shell_spectrum(&e);
        let x: Vec<f64> = (2..=16).map(|s| (s as f64).ln()).collect();
        let y: Vec<f64> = (2..=16).map(|s| es[s].ln()).collect();
        let (slope, _, _) = linear_fit(&x, &y);
        assert!((slope + 5.0 / 3.0).abs() <= 0.1, "slope {slope}");
    }

    #[test]
    fn members_obey_invariants_and_are_reproducible() {
        for dim in [2, 3] {
            let g = Grid::new(dim, 16).unwrap();
            let spec = MeasureSpec::random_fourier(1.0, 1, 5, 3.0, 2.0, 3);
            let e = sample_initial(&spec, 6, &g).unwrap();
            for m in e.members() {
                assert!(m.divergence_defect() <= 1e-10);
                assert!(m.l2_norm() <= 2.0 * (1.0 + 1e-12));
                assert!(m.mean_defect() <= 1e-14);
                assert!(m.spectrum().energy_outside_band(5) < 1e-28);
            }
            let again = sample_initial(&spec, 6, &g).unwrap();
            assert_eq!(e, again);
            let bigger = sample_initial(&spec, 8, &g).unwrap();
            assert_eq!(&bigger.members()[..6], e.members());
        }
    }

    #[test]
    fn band_beyond_dealias_rejected() {
        let g = Grid::new(2, 32).unwrap();
        let spec = MeasureSpec::random_fourier(1.0, 1, 11, 1.0, 2.0, 3);
        let err = sample_initial(&spec, 1, &g).unwrap_err();
        assert!(err.to_string().contains("n/3"));
    }

    #[test]
    fn evolution_matches_single_runs() {
        let g = Grid::new(2, 32).unwrap();
        let u = VelocityField::taylor_green(g);
        let e = Ensemble::new(vec![u.clone(), u.clone()]).unwrap();
        let cfg = SolverConfig::new(0.05, 0.4, 0.2);
        let times = uniform_times(0.4, 0.2);
        let out = evolve(&e, &cfg, &times).unwrap();
        let tr = crate::solver::run(&u, &cfg).unwrap();
        for (ens, snap) in out.iter().zip(&tr.snapshots) {
            assert_eq!(ens.members()[0], ens.members()[1]);
            assert_eq!(&ens.members()[0], snap);
        }
    }

    #[test]
    fn shear_energy_equality() {
        let g = Grid::new(2, 32).unwrap();
        let e = Ensemble::singleton(VelocityField::shear(g));
        let cfg = SolverConfig::new(0.1, 1.0, 0.002);
        let out = evolve(&e, &cfg, &cfg.snapshot_times()).unwrap();
        let chk = statistical_energy_check(&out, 1).unwrap();
        assert!(chk.worst.abs() <= 1e-8, "{}", chk.worst);
    }

    #[test]
    fn zero_ensemble_defect_is_zero() {
        let g = Grid::new(2, 16).unwrap();
        let e = Ensemble::singleton(VelocityField::zeros(g));
        let out = evolve(&e, &SolverConfig::new(0.1, 0.2, 0.1), &[0.0, 0.1, 0.2]).unwrap();
        let chk = statistical_energy_check(&out, 3).unwrap();
        assert_eq!(chk.worst, 0.0);
    }
}
