//! Vanishing-viscosity sweeps: one initial measure evolved across a ladder of
//! viscosities, with uniform diagonal continuity, inviscid moment-equation residuals and
//! Cauchy-type distances between consecutive statistics.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::correlation::{fk_residual_samples, FKResidual, FkSample, FkSampler, FkTest, LatticeCorrelation, TimeProfile};
use crate::ensemble::{evolve_streaming, sample_initial, shell_spectrum, BaseFlow, Ensemble, EnergyCheck, EnergySample, MeasureSpec, statistical_energy_check_samples};
use crate::error::{Error, Result};
use crate::field::{torus_volume, VelocityField};
use crate::grid::Grid;
use crate::io::{fmt_f64, write_csv, write_json, write_nsf, Provenance};
use crate::khm::{khm_budget, KHMBudget, KhmForm, KhmQuadrature, TestTensor};
use crate::moments::Moments;
use crate::quadrature::linear_fit;
use crate::solver::{uniform_times, SolverConfig};
use crate::structure::{bound_check, structure_snapshot_moments, structure_snapshot_real, BoundCheck, DirectionSet, StructureFunctionTable};

/// Number of probe points for the one-point distance.
pub const PROBES: usize = 8;
/// Relative slack on the uniform energy bound across the ladder.
pub const ENERGY_BOUND_TOL: f64 = 1e-8;
/// Relative slack on the statistical energy inequality, covering the trapezoid rule in time.
pub const ENERGY_CHECK_TOL: f64 = 1e-4;
/// Fraction of energy above half the dealiasing cutoff that marks a run as under-resolved.
pub const TAIL_TOL: f64 = 1e-3;

fn default_cfl() -> f64 {
    0.4
}

fn default_dirs() -> usize {
    64
}

fn default_test_flow() -> BaseFlow {
    BaseFlow::TaylorGreen
}

fn default_profile() -> TimeProfile {
    TimeProfile::Quadratic
}

/// A vanishing-viscosity ladder over a shared initial measure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    pub run_id: String,
    /// Viscosities, non-increasing.
    pub nus: Vec<f64>,
    pub spec: MeasureSpec,
    pub grid: Grid,
    pub members: usize,
    pub t_end: f64,
    pub snapshot_interval: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub r_grid: Vec<f64>,
    #[serde(default = "default_dirs")]
    pub directions: usize,
    /// Spatial factor of the moment-equation test function.
    #[serde(default = "default_test_flow")]
    pub fk_flow: BaseFlow,
    #[serde(default = "default_profile")]
    pub fk_profile: TimeProfile,
    /// Bump support of the trace KHM budget; no budget when absent.
    #[serde(default)]
    pub khm_s0: Option<f64>,
}

impl SweepPlan {
    /// Every violated constraint.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.nus.is_empty() {
            v.push("nus must not be empty".to_string());
        }
        if self.nus.iter().any(|&nu| !(nu > 0.0) || !nu.is_finite()) {
            v.push("every nu must be > 0".to_string());
        }
        if self.nus.windows(2).any(|w| w[1] > w[0]) {
            v.push("nus must be non-increasing".to_string());
        }
        if self.members == 0 {
            v.push("members must be ≥ 1".to_string());
        }
        if self.r_grid.is_empty() {
            v.push("r_grid must not be empty".to_string());
        }
        if self.r_grid.iter().any(|&r| !(r > 0.0) || r > std::f64::consts::PI) {
            v.push("r_grid entries must lie in (0, pi]".to_string());
        }
        if self.r_grid.windows(2).any(|w| w[1] <= w[0]) {
            v.push("r_grid must be strictly increasing".to_string());
        }
        if let Err(e) = DirectionSet::new(self.grid.dim(), self.directions) {
            v.push(e.to_string());
        }
        if let Some(s0) = self.khm_s0 {
            if let Err(e) = TestTensor::trace(s0) {
                v.push(e.to_string());
            }
        }
        v.extend(self.spec.violations(Some(&self.grid)));
        let probe = SolverConfig {
            dt: self.dt,
            cfl: self.cfl,
            ..SolverConfig::new(self.nus.first().copied().unwrap_or(1.0), self.t_end, self.snapshot_interval)
        };
        v.extend(probe.violations());
        if !(self.t_end > 0.0) {
            v.push("t_end must be > 0".to_string());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v.join("; ")))
        }
    }

    pub fn solver_config(&self, nu: f64) -> SolverConfig {
        SolverConfig {
            dt: self.dt,
            cfl: self.cfl,
            ..SolverConfig::new(nu, self.t_end, self.snapshot_interval)
        }
    }

    pub fn sample_times(&self) -> Vec<f64> {
        uniform_times(self.t_end, self.snapshot_interval)
    }

    pub fn fk_test(&self) -> Result<FkTest> {
        FkTest::new(
            self.fk_profile,
            self.fk_flow.field(self.grid),
            None,
            format!("{:?}", self.fk_flow),
        )
    }
}

/// Resolution heuristic of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Resolution {
    /// Dealiasing cutoff `n/3`.
    pub k_cut: f64,
    /// `(u_rms/ν)^{1/2}` with `u_rms` from the initial mean energy.
    pub k_required: f64,
    /// Largest fraction of mean energy in shells above `k_cut/2` over the run.
    pub tail_fraction: f64,
    pub adequate: bool,
}

/// Per-member curves and probe values used for the statistic distances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalStatistics {
    pub time: f64,
    /// Ensemble mean of `⨍_{∂B_r} ∫ u(x)·u(x+rn) dx` on the radius grid.
    pub correlation: Vec<f64>,
    /// Standard error of `correlation` across members.
    pub correlation_stderr: Vec<f64>,
    /// Grid indices of the probe points.
    pub probe_points: Vec<usize>,
    /// `probes[p][m] = u¹_m(x_p)`.
    pub probes: Vec<Vec<f64>>,
    /// `‖ū‖` of the ensemble mean field.
    pub mean_field_norm: f64,
    /// `(Σ‖u_m − ū‖² / (M(M−1)))^{1/2}`, zero for one member.
    pub mean_field_stderr: f64,
    #[serde(skip)]
    pub mean_field: Option<VelocityField>,
}

/// Statistics of one viscosity.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NuSummary {
    pub nu: f64,
    pub times: Vec<f64>,
    pub mean_energy: Vec<f64>,
    pub energy_check: EnergyCheck,
    /// Worst energy-inequality defect within [`ENERGY_CHECK_TOL`].
    pub energy_ok: bool,
    /// `max_t mean‖u(t)‖² / mean‖u(0)‖²`.
    pub max_energy_ratio: f64,
    pub r_grid: Vec<f64>,
    /// `∫₀ᵀ ω_r² dt` on `r_grid`.
    pub dc_integrated: Vec<f64>,
    pub structure: StructureFunctionTable,
    pub bound: BoundCheck,
    /// Inviscid residuals for `k = 1, 2`.
    pub fk_inviscid: Vec<FKResidual>,
    /// Viscous residuals for `k = 1, 2`.
    pub fk_viscous: Vec<FKResidual>,
    pub khm: Option<KHMBudget>,
    pub resolution: Resolution,
    pub final_stats: FinalStatistics,
    pub warnings: Vec<String>,
}

/// Outcome of one rung of the ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum NuOutcome {
    Completed(Box<NuSummary>),
    Failed {
        nu: f64,
        member: Option<usize>,
        time: Option<f64>,
        reason: String,
    },
}

impl NuOutcome {
    pub fn nu(&self) -> f64 {
        match self {
            NuOutcome::Completed(s) => s.nu,
            NuOutcome::Failed { nu, .. } => *nu,
        }
    }

    pub fn summary(&self) -> Option<&NuSummary> {
        match self {
            NuOutcome::Completed(s) => Some(s),
            NuOutcome::Failed { .. } => None,
        }
    }
}

/// Envelope fit `sup_ν ∫₀ᵀ ω_r² dt ≈ C r^α`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DcUniformity {
    pub r_grid: Vec<f64>,
    pub envelope: Vec<f64>,
    /// Viscosity attaining the envelope at each radius.
    pub worst_nu_per_r: Vec<f64>,
    /// Viscosity attaining the envelope at the smallest radius.
    pub worst_nu: f64,
    pub alpha_fit: Option<f64>,
    pub c_fit: Option<f64>,
    pub r_squared: Option<f64>,
    /// Set when every envelope value vanishes and no fit is possible.
    pub fit_skipped: bool,
    /// The curves are ordered by `ν` with the same direction at every radius.
    pub nu_monotone: bool,
    /// The envelope is nondecreasing in `r`, so it decreases as `r → 0`.
    pub envelope_nondecreasing: bool,
}

/// Inviscid residual against viscosity for one moment order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InviscidScaling {
    pub k: usize,
    pub nus: Vec<f64>,
    pub residuals: Vec<f64>,
    pub relative: Vec<f64>,
    /// Slope of `log|residual|` against `log ν`; absent with fewer than two distinct `ν`.
    pub slope: Option<f64>,
    pub r_squared: Option<f64>,
    pub largest_exceeds_smallest: bool,
}

/// Distances between the statistics of two viscosities, with Monte-Carlo error estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatisticDistance {
    pub nu_a: f64,
    pub nu_b: f64,
    pub mean_field: f64,
    pub correlation: f64,
    pub wasserstein: f64,
    pub mean_field_mc: f64,
    pub correlation_mc: f64,
    pub wasserstein_mc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub plan: SweepPlan,
    pub outcomes: Vec<NuOutcome>,
    pub dc_uniformity: Option<DcUniformity>,
    pub inviscid: Vec<InviscidScaling>,
    /// Distances between consecutive completed rungs.
    pub distances: Vec<StatisticDistance>,
    /// `max_{ν,t} mean‖u‖² ≤ mean‖u₀‖² (1 + tol)` across the ladder.
    pub uniform_energy_bound: bool,
    pub warnings: Vec<String>,
}

impl SweepReport {
    pub fn completed(&self) -> impl Iterator<Item = &NuSummary> {
        self.outcomes.iter().filter_map(|o| o.summary())
    }

    fn find(&self, nu: f64) -> Result<&NuSummary> {
        self.completed()
            .find(|s| s.nu == nu)
            .ok_or_else(|| Error::Config(format!("no completed run with nu = {nu}")))
    }
}

/// Grid indices of the probe points.
pub fn probe_points(grid: &Grid) -> Vec<usize> {
    let n = grid.n();
    (0..PROBES)
        .map(|p| {
            let c = [
                (p * n / PROBES + n / 16) % n,
                (5 * p * n / PROBES + 3 * n / 16) % n,
                if grid.dim() == 3 { (3 * p * n / PROBES + n / 8) % n } else { 0 },
            ];
            grid.flat_index(c)
        })
        .collect()
}

fn final_statistics(ens: &Ensemble, r_grid: &[f64], dirs: &DirectionSet) -> FinalStatistics {
    let m = ens.len();
    let curves: Vec<Vec<f64>> = ens
        .members()
        .iter()
        .map(|u| {
            let c = LatticeCorrelation::of_field(u);
            r_grid.iter().map(|&r| c.sphere_average(r, dirs)).collect()
        })
        .collect();
    let mean_curve: Vec<f64> = (0..r_grid.len())
        .map(|i| curves.iter().map(|c| c[i]).sum::<f64>() / m as f64)
        .collect();
    let stderr = |mean: f64, vals: &mut dyn Iterator<Item = f64>| {
        if m < 2 {
            return 0.0;
        }
        let ss: f64 = vals.map(|v| (v - mean).powi(2)).sum();
        (ss / ((m * (m - 1)) as f64)).sqrt()
    };
    let correlation_stderr = (0..r_grid.len())
        .map(|i| stderr(mean_curve[i], &mut curves.iter().map(|c| c[i])))
        .collect();
    let points = probe_points(ens.grid());
    let probes = points
        .iter()
        .map(|&idx| ens.members().iter().map(|u| u.component(0)[idx]).collect())
        .collect();
    let mean = ens.mean_field();
    let spread: f64 = ens.members().iter().map(|u| u.l2_distance(&mean).powi(2)).sum();
    FinalStatistics {
        time: ens.time(),
        correlation: mean_curve,
        correlation_stderr,
        probe_points: points,
        probes,
        mean_field_norm: mean.l2_norm(),
        mean_field_stderr: if m < 2 { 0.0 } else { (spread / ((m * (m - 1)) as f64)).sqrt() },
        mean_field: Some(mean),
    }
}

fn tail_fraction(ens: &Ensemble) -> f64 {
    let shells = shell_spectrum(ens);
    let total: f64 = shells.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    let cut = ens.grid().dealias_cutoff() as f64 / 2.0;
    let tail: f64 = shells
        .iter()
        .enumerate()
        .filter(|(s, _)| *s as f64 > cut)
        .map(|(_, e)| e)
        .sum();
    tail / total
}

/// The pipeline of one viscosity: sample the shared measure, evolve it and summarize.
pub fn run_nu(plan: &SweepPlan, nu: f64) -> Result<NuSummary> {
    plan.validate()?;
    let grid = plan.grid;
    let dirs = DirectionSet::new(grid.dim(), plan.directions)?;
    let ens0 = sample_initial(&plan.spec, plan.members, &grid)?;
    let cfg = plan.solver_config(nu);
    let times = plan.sample_times();
    let test = plan.fk_test()?;
    let sampler = FkSampler::new(&test);
    let tensor = plan.khm_s0.map(TestTensor::trace).transpose()?;

    let mut energy = Vec::with_capacity(times.len());
    let mut fk: Vec<FkSample> = Vec::with_capacity(times.len());
    let mut dc: Vec<Vec<f64>> = Vec::with_capacity(times.len());
    let mut structure = Vec::with_capacity(times.len());
    let mut moments: Vec<Moments> = Vec::new();
    let mut tail: f64 = 0.0;
    let mut last: Option<Ensemble> = None;
    let mut warnings = Vec::new();
    let mut khm_possible = tensor.is_some();

    evolve_streaming(&ens0, &cfg, &times, |e| {
        energy.push(EnergySample::of(&e));
        fk.push(sampler.sample(&e)?);
        let lc = LatticeCorrelation::new(&e);
        dc.push(plan.r_grid.iter().map(|&r| lc.dc_modulus(r)).collect::<Result<_>>()?);
        tail = tail.max(tail_fraction(&e));
        match Moments::new(&e, true) {
            Ok(m) => {
                structure.push(structure_snapshot_moments(&m, &plan.r_grid, &dirs)?);
                if khm_possible {
                    moments.push(m);
                }
            }
            Err(Error::NotBandLimited(_)) => {
                structure.push(structure_snapshot_real(&e, &plan.r_grid, &dirs, &[2, 3])?);
                if khm_possible {
                    khm_possible = false;
                    moments.clear();
                    warnings.push("members left the dealiased band; KHM budget skipped".to_string());
                }
            }
            Err(other) => return Err(other),
        }
        last = Some(e);
        Ok(())
    })?;
    let last = last.ok_or_else(|| Error::Config("no snapshots".into()))?;

    let t: Vec<f64> = energy.iter().map(|s| s.time).collect();
    let mean_energy: Vec<f64> = energy
        .iter()
        .map(|s| s.energy.iter().sum::<f64>() / s.energy.len() as f64)
        .collect();
    let e0 = mean_energy[0];
    let max_energy_ratio = if e0 == 0.0 {
        1.0
    } else {
        mean_energy.iter().fold(0.0f64, |m, &e| m.max(e / e0))
    };
    let energy_check = statistical_energy_check_samples(&energy, 2)?;
    let dc_integrated = (0..plan.r_grid.len())
        .map(|i| {
            let y: Vec<f64> = dc.iter().map(|v| v[i]).collect();
            crate::quadrature::trapezoid(&t, &y)
        })
        .collect();
    let table = StructureFunctionTable::from_snapshots(&structure, e0)?;
    let bound = bound_check(&table)?;
    let (fk_inviscid, fk_viscous) = if t.len() >= 2 {
        let inv = [1, 2]
            .iter()
            .map(|&k| fk_residual_samples(&fk, k, plan.fk_profile, None, &test.label))
            .collect::<Result<Vec<_>>>()?;
        let vis = [1, 2]
            .iter()
            .map(|&k| fk_residual_samples(&fk, k, plan.fk_profile, Some(nu), &test.label))
            .collect::<Result<Vec<_>>>()?;
        (inv, vis)
    } else {
        (Vec::new(), Vec::new())
    };
    let khm = match (&tensor, khm_possible && moments.len() >= 2) {
        (Some(tt), true) => Some(khm_budget(
            &moments,
            tt,
            nu,
            KhmForm::Trace,
            &KhmQuadrature::standard(grid.dim()),
        )?),
        _ => None,
    };
    let u_rms = (e0 / torus_volume(grid.dim())).sqrt();
    let k_cut = grid.dealias_cutoff() as f64;
    let k_required = (u_rms / nu).sqrt();
    let adequate = k_cut >= k_required && tail <= TAIL_TOL;
    if !adequate {
        warnings.push(format!(
            "nu = {nu}: grid may not resolve the dissipation scale (k_cut {k_cut}, required {k_required:.1}, tail {tail:.2e})"
        ));
    }
    let energy_ok = energy_check.worst <= ENERGY_CHECK_TOL;
    if !energy_ok {
        warnings.push(format!("nu = {nu}: energy inequality defect {:.3e}", energy_check.worst));
    }
    Ok(NuSummary {
        nu,
        times: t,
        mean_energy,
        energy_check,
        energy_ok,
        max_energy_ratio,
        r_grid: plan.r_grid.clone(),
        dc_integrated,
        structure: table,
        bound,
        fk_inviscid,
        fk_viscous,
        khm,
        resolution: Resolution {
            k_cut,
            k_required,
            tail_fraction: tail,
            adequate,
        },
        final_stats: final_statistics(&last, &plan.r_grid, &dirs),
        warnings,
    })
}

/// Run every rung of the ladder and assemble the report. Member blow-ups are recorded
/// and the sweep moves on.
pub fn run_sweep(plan: &SweepPlan) -> Result<SweepReport> {
    plan.validate()?;
    let mut outcomes = Vec::with_capacity(plan.nus.len());
    for &nu in &plan.nus {
        outcomes.push(match run_nu(plan, nu) {
            Ok(s) => NuOutcome::Completed(Box::new(s)),
            Err(Error::MemberBlowUp { member, time, reason }) => NuOutcome::Failed {
                nu,
                member: Some(member),
                time: Some(time),
                reason,
            },
            Err(Error::BlowUp { time, reason }) => NuOutcome::Failed {
                nu,
                member: None,
                time: Some(time),
                reason,
            },
            Err(e) => return Err(e),
        });
    }
    let mut report = SweepReport {
        plan: plan.clone(),
        outcomes,
        dc_uniformity: None,
        inviscid: Vec::new(),
        distances: Vec::new(),
        uniform_energy_bound: true,
        warnings: Vec::new(),
    };
    let mut warnings = Vec::new();
    for o in &report.outcomes {
        match o {
            NuOutcome::Completed(s) => warnings.extend(s.warnings.iter().cloned()),
            NuOutcome::Failed { nu, reason, .. } => warnings.push(format!("nu = {nu} failed: {reason}")),
        }
    }
    report.warnings = warnings;
    let bounded = report
        .completed()
        .all(|s| s.max_energy_ratio <= 1.0 + ENERGY_BOUND_TOL);
    report.uniform_energy_bound = bounded;
    match dc_uniformity(&report) {
        Ok(u) => report.dc_uniformity = Some(u),
        Err(e) => report.warnings.push(format!("diagonal continuity fit unavailable: {e}")),
    }
    report.inviscid = [1, 2]
        .iter()
        .filter_map(|&k| inviscid_fk_residual(&report, k).ok())
        .collect();
    let done: Vec<f64> = report.completed().map(|s| s.nu).collect();
    let mut distances = Vec::new();
    for w in done.windows(2) {
        distances.push(statistic_distance(&report, w[0], w[1])?);
    }
    report.distances = distances;
    Ok(report)
}

/// [`dc_uniformity_curves`] on the completed rungs of a report.
pub fn dc_uniformity(report: &SweepReport) -> Result<DcUniformity> {
    let curves: Vec<(f64, Vec<f64>)> = report
        .completed()
        .map(|s| (s.nu, s.dc_integrated.clone()))
        .collect();
    dc_uniformity_curves(&report.plan.r_grid, &curves)
}

/// Log-log fit of the envelope `sup_ν ∫₀ᵀ ω_r² dt` against `C r^α`.
pub fn dc_uniformity_curves(r_grid: &[f64], curves: &[(f64, Vec<f64>)]) -> Result<DcUniformity> {
    if r_grid.len() < 4 {
        return Err(Error::Config(format!(
            "at least 4 radii are needed for the envelope fit, got {}",
            r_grid.len()
        )));
    }
    if curves.is_empty() {
        return Err(Error::Config("no curves to fit".into()));
    }
    if curves.iter().any(|(_, c)| c.len() != r_grid.len()) {
        return Err(Error::GridMismatch("curve length differs from the radius grid".into()));
    }
    let nr = r_grid.len();
    let mut envelope = vec![f64::NEG_INFINITY; nr];
    let mut worst_nu_per_r = vec![curves[0].0; nr];
    for (nu, c) in curves {
        for i in 0..nr {
            if c[i] > envelope[i] {
                envelope[i] = c[i];
                worst_nu_per_r[i] = *nu;
            }
        }
    }
    let ordered = |up: bool| {
        curves.windows(2).all(|w| {
            (0..nr).all(|i| if up { w[1].1[i] >= w[0].1[i] } else { w[1].1[i] <= w[0].1[i] })
        })
    };
    let nu_monotone = ordered(true) || ordered(false);
    let envelope_nondecreasing = envelope.windows(2).all(|w| w[1] >= w[0]);
    let positive: Vec<usize> = (0..nr).filter(|&i| envelope[i] > 0.0).collect();
    let fit_skipped = positive.len() < 2;
    let (alpha_fit, c_fit, r_squared) = if fit_skipped {
        (None, None, None)
    } else {
        let x: Vec<f64> = positive.iter().map(|&i| r_grid[i].ln()).collect();
        let y: Vec<f64> = positive.iter().map(|&i| envelope[i].ln()).collect();
        let (b, a, r2) = linear_fit(&x, &y);
        (Some(b), Some(a.exp()), Some(r2))
    };
    Ok(DcUniformity {
        r_grid: r_grid.to_vec(),
        worst_nu: worst_nu_per_r[0],
        envelope,
        worst_nu_per_r,
        alpha_fit,
        c_fit,
        r_squared,
        fit_skipped,
        nu_monotone,
        envelope_nondecreasing,
    })
}

/// [`inviscid_scaling`] on the stored inviscid residuals of a report.
pub fn inviscid_fk_residual(report: &SweepReport, k: usize) -> Result<InviscidScaling> {
    let rows: Vec<(f64, FKResidual)> = report
        .completed()
        .filter_map(|s| s.fk_inviscid.iter().find(|r| r.k == k).map(|r| (s.nu, r.clone())))
        .collect();
    inviscid_scaling(k, &rows)
}

/// Inviscid residuals of per-viscosity samples of the same test function.
pub fn inviscid_fk_residual_samples(
    runs: &[(f64, Vec<FkSample>)],
    k: usize,
    profile: TimeProfile,
    label: &str,
) -> Result<InviscidScaling> {
    let rows = runs
        .iter()
        .map(|(nu, s)| Ok((*nu, fk_residual_samples(s, k, profile, None, label)?)))
        .collect::<Result<Vec<_>>>()?;
    inviscid_scaling(k, &rows)
}

fn inviscid_scaling(k: usize, rows: &[(f64, FKResidual)]) -> Result<InviscidScaling> {
    if rows.is_empty() {
        return Err(Error::Config(format!("no inviscid residuals for k = {k}")));
    }
    let nus: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let residuals: Vec<f64> = rows.iter().map(|r| r.1.residual.abs()).collect();
    let relative = rows.iter().map(|r| r.1.relative()).collect();
    let usable: Vec<usize> = (0..rows.len()).filter(|&i| residuals[i] > 0.0).collect();
    let distinct = usable
        .iter()
        .any(|&i| nus[i] != nus[usable[0]]);
    let (slope, r_squared) = if distinct {
        let x: Vec<f64> = usable.iter().map(|&i| nus[i].ln()).collect();
        let y: Vec<f64> = usable.iter().map(|&i| residuals[i].ln()).collect();
        let (b, _, r2) = linear_fit(&x, &y);
        (Some(b), Some(r2))
    } else {
        (None, None)
    };
    let imax = (0..nus.len()).max_by(|&a, &b| nus[a].total_cmp(&nus[b])).unwrap();
    let imin = (0..nus.len()).min_by(|&a, &b| nus[a].total_cmp(&nus[b])).unwrap();
    Ok(InviscidScaling {
        k,
        largest_exceeds_smallest: residuals[imax] > residuals[imin],
        nus,
        residuals,
        relative,
        slope,
        r_squared,
    })
}

/// One-dimensional Wasserstein-1 distance between two empirical distributions.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> f64 {
    if a.is_empty() || b.is_empty() {
        return 0.0;
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let mut pts: Vec<f64> = xa.iter().chain(&xb).copied().collect();
    pts.sort_by(f64::total_cmp);
    let cdf = |x: &[f64], t: f64| x.partition_point(|&v| v <= t) as f64 / x.len() as f64;
    pts.windows(2)
        .map(|w| (cdf(&xa, w[0]) - cdf(&xb, w[0])).abs() * (w[1] - w[0]))
        .sum()
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Distances between the final statistics of the rungs `nu_a` and `nu_b`.
pub fn statistic_distance(report: &SweepReport, nu_a: f64, nu_b: f64) -> Result<StatisticDistance> {
    let a = report.find(nu_a)?;
    let b = report.find(nu_b)?;
    let (fa, fb) = (&a.final_stats, &b.final_stats);
    let (ma, mb) = match (&fa.mean_field, &fb.mean_field) {
        (Some(x), Some(y)) => (x, y),
        _ => return Err(Error::Config("mean fields not available".into())),
    };
    ma.grid().check_same(mb.grid())?;
    if a.r_grid != b.r_grid || fa.probe_points != fb.probe_points {
        return Err(Error::GridMismatch("radius grids or probe points differ".into()));
    }
    if fa.time != fb.time {
        return Err(Error::GridMismatch("final times differ".into()));
    }
    Ok(distance_between(nu_a, nu_b, fa, fb))
}

fn distance_between(nu_a: f64, nu_b: f64, fa: &FinalStatistics, fb: &FinalStatistics) -> StatisticDistance {
    let (ma, mb) = (fa.mean_field.as_ref().unwrap(), fb.mean_field.as_ref().unwrap());
    let norm = fa.mean_field_norm.max(fb.mean_field_norm);
    let rel = |x: f64, n: f64| if n == 0.0 { 0.0 } else { x / n };
    let mean_field = rel(ma.l2_distance(mb), norm);
    let mean_field_mc = rel(fa.mean_field_stderr.hypot(fb.mean_field_stderr), norm);

    let cn = fa
        .correlation
        .iter()
        .chain(&fb.correlation)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    let correlation = rel(
        fa.correlation
            .iter()
            .zip(&fb.correlation)
            .fold(0.0f64, |m, (x, y)| m.max((x - y).abs())),
        cn,
    );
    let correlation_mc = rel(
        fa.correlation_stderr
            .iter()
            .zip(&fb.correlation_stderr)
            .fold(0.0f64, |m, (x, y)| m.max(x.hypot(*y))),
        cn,
    );
    let np = fa.probes.len() as f64;
    let wasserstein = fa
        .probes
        .iter()
        .zip(&fb.probes)
        .map(|(x, y)| wasserstein1(x, y))
        .sum::<f64>()
        / np;
    let wasserstein_mc = fa
        .probes
        .iter()
        .zip(&fb.probes)
        .map(|(x, y)| {
            let sa = std_dev(x) / (x.len() as f64).sqrt();
            let sb = std_dev(y) / (y.len() as f64).sqrt();
            sa.hypot(sb)
        })
        .sum::<f64>()
        / np;
    StatisticDistance {
        nu_a,
        nu_b,
        mean_field,
        correlation,
        wasserstein,
        mean_field_mc,
        correlation_mc,
        wasserstein_mc,
    }
}

/// Directory name of one rung.
pub fn nu_dir_name(nu: f64) -> String {
    format!("nu={}", fmt_f64(nu))
}

/// Write `report.json` and per-viscosity CSV bundles under `root/{run_id}`.
pub fn write_report(root: &Path, report: &SweepReport, provenance: &Provenance) -> Result<PathBuf> {
    #[derive(Serialize)]
    struct Stamped<'a> {
        provenance: &'a Provenance,
        report: &'a SweepReport,
    }
    let dir = root.join(&report.plan.run_id);
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("report.json"), &Stamped { provenance, report })?;
    for s in report.completed() {
        let sub = dir.join(nu_dir_name(s.nu));
        fs::create_dir_all(&sub)?;
        let rows: Vec<Vec<String>> = s
            .r_grid
            .iter()
            .zip(&s.dc_integrated)
            .map(|(r, v)| vec![fmt_f64(*r), fmt_f64(*v)])
            .collect();
        write_csv(&sub.join("dc.csv"), provenance, &["r", "dc_integrated"], &rows)?;
        let rows: Vec<Vec<String>> = s
            .structure
            .rows()
            .iter()
            .map(|r| {
                vec![
                    fmt_f64(r.tau),
                    fmt_f64(r.r),
                    r.p.to_string(),
                    fmt_f64(r.s_par),
                    fmt_f64(r.s0_3),
                    fmt_f64(r.s_perp_3),
                ]
            })
            .collect();
        write_csv(
            &sub.join("structure.csv"),
            provenance,
            &["tau", "r", "p", "s_par", "s0_3", "s_perp_3"],
            &rows,
        )?;
        let rows: Vec<Vec<String>> = s
            .times
            .iter()
            .zip(&s.mean_energy)
            .map(|(t, e)| vec![fmt_f64(*t), fmt_f64(*e)])
            .collect();
        write_csv(&sub.join("energy.csv"), provenance, &["t", "mean_energy"], &rows)?;
        let f = &s.final_stats;
        let rows: Vec<Vec<String>> = (0..s.r_grid.len())
            .map(|i| {
                vec![
                    fmt_f64(s.r_grid[i]),
                    fmt_f64(f.correlation[i]),
                    fmt_f64(f.correlation_stderr[i]),
                ]
            })
            .collect();
        write_csv(
            &sub.join("correlation.csv"),
            provenance,
            &["r", "correlation", "stderr"],
            &rows,
        )?;
        if let Some(m) = &f.mean_field {
            write_nsf(&sub.join("mean_field.nsf"), m, Some(provenance))?;
        }
    }
    Ok(dir)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structure::log_r_grid;

    fn small_plan(nus: Vec<f64>) -> SweepPlan {
        SweepPlan {
            run_id: "t".into(),
            nus,
            spec: MeasureSpec::perturbed(BaseFlow::TaylorGreen, 2.0, 2, 4, 0.5, 100.0, 5),
            grid: Grid::new(2, 16).unwrap(),
            members: 3,
            t_end: 0.2,
            snapshot_interval: 0.05,
            dt: Some(0.01),
            cfl: 0.4,
            r_grid: log_r_grid(0.3, 2.0, 5).unwrap(),
            directions: 16,
            fk_flow: BaseFlow::TaylorGreen,
            fk_profile: TimeProfile::Quadratic,
            khm_s0: Some(0.8),
        }
    }

    #[test]
    fn plan_validation_lists_every_violation() {
        let mut p = small_plan(vec![0.01, 0.02]);
        p.members = 0;
        p.r_grid = vec![4.0];
        let v = p.violations();
        assert_eq!(v.len(), 3, "{v:?}");
        assert!(matches!(run_sweep(&p), Err(Error::Config(_))));
    }

    #[test]
    fn single_and_duplicate_rungs() {
        let p = small_plan(vec![0.02]);
        let rep = run_sweep(&p).unwrap();
        let standalone = run_nu(&p, 0.02).unwrap();
        assert_eq!(rep.outcomes.len(), 1);
        assert_eq!(rep.outcomes[0].summary().unwrap(), &standalone);
        assert!(rep.distances.is_empty());
        assert!(rep.uniform_energy_bound);
        assert!(standalone.khm.is_some());

        let p2 = small_plan(vec![0.02, 0.02]);
        let rep2 = run_sweep(&p2).unwrap();
        assert_eq!(rep2.outcomes[0], rep2.outcomes[1]);
        let d = statistic_distance(&rep2, 0.02, 0.02).unwrap();
        assert_eq!((d.mean_field, d.correlation, d.wasserstein), (0.0, 0.0, 0.0));
        assert_eq!(rep2.distances[0].mean_field, 0.0);
        assert!(rep2.inviscid.iter().all(|s| s.slope.is_none()));

        let dir = tempfile::tempdir().unwrap();
        let out = write_report(dir.path(), &rep, &Provenance::new("x")).unwrap();
        assert!(out.join("report.json").exists());
        assert!(out.join("nu=0.02/structure.csv").exists());
        assert!(out.join("nu=0.02/mean_field.nsf").exists());
    }

    #[test]
    fn dc_uniformity_examples() {
        let r = log_r_grid(0.1, 2.0, 6).unwrap();
        let curves: Vec<(f64, Vec<f64>)> = [0.01, 0.005]
            .iter()
            .map(|&nu| (nu, r.iter().map(|x: &f64| x.powf(2.0 / 3.0)).collect()))
            .collect();
        let u = dc_uniformity_curves(&r, &curves).unwrap();
        assert!((u.alpha_fit.unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((u.c_fit.unwrap() - 1.0).abs() < 1e-12);
        assert!(u.envelope_nondecreasing && u.nu_monotone && !u.fit_skipped);

        let zeros = vec![(0.01, vec![0.0; 6])];
        let z = dc_uniformity_curves(&r, &zeros).unwrap();
        assert!(z.fit_skipped && z.alpha_fit.is_none());
        assert!(z.envelope.iter().all(|&v| v == 0.0));

        let shifted = vec![(0.01, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]), (0.005, vec![2.0, 1.0, 3.0, 4.0, 5.0, 7.0])];
        let s = dc_uniformity_curves(&r, &shifted).unwrap();
        assert!(!s.nu_monotone);
        assert_eq!(s.worst_nu, 0.005);
        assert_eq!(s.worst_nu_per_r[1], 0.01);
        assert!(matches!(dc_uniformity_curves(&r[..3], &curves), Err(Error::Config(_))));
    }

    #[test]
    fn wasserstein_oracle() {
        assert_eq!(wasserstein1(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]), 0.0);
        assert!((wasserstein1(&[0.0, 1.0], &[0.5, 1.5]) - 0.5).abs() < 1e-15);
        assert!((wasserstein1(&[0.0], &[1.0, 3.0]) - 2.0).abs() < 1e-15);
        let a = [0.3, -1.2, 2.5, 0.0];
        let b = [1.0, 0.1, -0.4, 2.2];
        assert!((wasserstein1(&a, &b) - wasserstein1(&b, &a)).abs() < 1e-15);
        let mut sa = a.to_vec();
        let mut sb = b.to_vec();
        sa.sort_by(f64::total_cmp);
        sb.sort_by(f64::total_cmp);
        let sorted: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum::<f64>() / 4.0;
        assert!((wasserstein1(&a, &b) - sorted).abs() < 1e-14);
    }

    #[test]
    fn one_member_scaled_distance() {
        let g = Grid::new(2, 16).unwrap();
        let spec = MeasureSpec::perturbed(BaseFlow::TaylorGreen, 2.0, 2, 4, 0.5, 100.0, 8);
        let e = sample_initial(&spec, 4, &g).unwrap();
        let mut m = e.members().to_vec();
        m[2] = m[2].scaled(1.01);
        let f = Ensemble::new(m).unwrap();
        let r = log_r_grid(0.3, 2.0, 4).unwrap();
        let dirs = DirectionSet::new(2, 16).unwrap();
        let (fa, fb) = (final_statistics(&e, &r, &dirs), final_statistics(&f, &r, &dirs));
        let d = distance_between(0.0, 0.0, &fa, &fb);

        let u2 = &e.members()[2];
        let mf = 0.01 * u2.l2_norm() / 4.0 / fa.mean_field_norm.max(fb.mean_field_norm);
        assert!((d.mean_field - mf).abs() < 1e-12, "{} {mf}", d.mean_field);
        let dc: Vec<f64> = r
            .iter()
            .map(|&x| (1.0201 - 1.0) * LatticeCorrelation::of_field(u2).sphere_average(x, &dirs) / 4.0)
            .collect();
        let cn = fa.correlation.iter().chain(&fb.correlation).fold(0.0f64, |m, v| m.max(v.abs()));
        let want = dc.iter().fold(0.0f64, |m, v| m.max(v.abs())) / cn;
        assert!((d.correlation - want).abs() < 1e-12);
        let w: f64 = fa
            .probe_points
            .iter()
            .map(|&i| 0.01 * u2.component(0)[i].abs() / 4.0)
            .sum::<f64>()
            / 8.0;
        assert!((d.wasserstein - w).abs() < 1e-3 * w, "{} {w}", d.wasserstein);
        assert!(d.mean_field > 0.0 && d.correlation > 0.0 && d.wasserstein > 0.0);
    }

    #[test]
    fn inviscid_shear_singleton() {
        let g = Grid::new(2, 16).unwrap();
        let f = VelocityField::shear(g);
        let test = FkTest::new(TimeProfile::Quadratic, f.clone(), None, "shear").unwrap();
        let sampler = FkSampler::new(&test);
        let runs: Vec<(f64, Vec<FkSample>)> = [0.1, 0.05, 0.025, 0.0125]
            .iter()
            .map(|&nu| {
                let times = uniform_times(1.0, 0.001);
                let samples = times
                    .iter()
                    .map(|&t| {
                        let u = f.scaled((-nu * t).exp()).with_time(t).with_nu(nu);
                        sampler.sample(&Ensemble::singleton(u)).unwrap()
                    })
                    .collect();
                (nu, samples)
            })
            .collect();
        let s = inviscid_fk_residual_samples(&runs, 1, TimeProfile::Quadratic, "shear").unwrap();
        for (nu, res) in s.nus.iter().zip(&s.residuals) {
            let t = uniform_times(1.0, 1e-4);
            let y: Vec<f64> = t
                .iter()
                .map(|&x| TimeProfile::Quadratic.eval(x, 0.0, 1.0).0 * (-nu * x).exp())
                .collect();
            let exact = nu * crate::quadrature::trapezoid(&t, &y) * 2.0 * std::f64::consts::PI.powi(2);
            assert!((res - exact).abs() < 1e-5 * exact, "{nu}: {res} {exact}");
        }
        let slope = s.slope.unwrap();
        assert!((slope - 1.0).abs() < 0.05, "{slope}");
        assert!(s.largest_exceeds_smallest);
    }

    #[test]
    fn frozen_ensemble_constant_profile() {
        let g = Grid::new(2, 16).unwrap();
        let spec = MeasureSpec::random_fourier(2.0, 1, 4, 2.0, 10.0, 2);
        let e = sample_initial(&spec, 2, &g).unwrap();
        let f = VelocityField::taylor_green(g);
        let test = FkTest::new(TimeProfile::Constant, f.clone(), None, "tg").unwrap();
        let sampler = FkSampler::new(&test);
        let samples: Vec<FkSample> = [0.0, 0.5, 1.0]
            .iter()
            .map(|&t| {
                let m: Vec<VelocityField> = e.members().iter().map(|u| u.clone().with_time(t)).collect();
                sampler.sample(&Ensemble::new(m).unwrap()).unwrap()
            })
            .collect();
        let s = inviscid_fk_residual_samples(&[(0.01, samples)], 1, TimeProfile::Constant, "tg").unwrap();
        let mut adv = 0.0;
        for u in e.members() {
            for idx in 0..g.len() {
                for i in 0..2 {
                    for j in 0..2 {
                        adv += u.component(i)[idx] * u.component(j)[idx] * f.derivative(i, j)[idx];
                    }
                }
            }
        }
        adv *= g.cell_volume() / 2.0;
        assert!((s.residuals[0] - adv.abs()).abs() < 1e-10 * adv.abs().max(1.0));
    }
}
