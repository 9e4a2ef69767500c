//! Integrating-factor RK4 pseudo-spectral integration of the incompressible
//! Navier–Stokes equations on the torus.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft;
use crate::field::{k_sq, Spectrum, VelocityField};
use crate::grid::Grid;

type Coeffs = Vec<Vec<Complex64>>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Integrator {
    #[default]
    #[serde(rename = "IF-RK4")]
    IfRk4,
}

fn default_cfl() -> f64 {
    0.4
}

fn default_true() -> bool {
    true
}

/// Time-integration parameters for one trajectory.
///
/// With `dt` unset the step is `cfl·Δx / max|u|`, recomputed every step. Steps are
/// shortened so that every snapshot time is hit exactly.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub nu: f64,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default = "default_cfl")]
    pub cfl: f64,
    pub t_end: f64,
    pub snapshot_interval: f64,
    #[serde(default = "default_true")]
    pub dealias: bool,
    #[serde(default)]
    pub integrator: Integrator,
}

impl SolverConfig {
    pub fn new(nu: f64, t_end: f64, snapshot_interval: f64) -> Self {
        SolverConfig {
            nu,
            dt: None,
            cfl: default_cfl(),
            t_end,
            snapshot_interval,
            dealias: true,
            integrator: Integrator::IfRk4,
        }
    }

    pub fn with_dt(mut self, dt: f64) -> Self {
        self.dt = Some(dt);
        self
    }

    pub fn with_cfl(mut self, cfl: f64) -> Self {
        self.cfl = cfl;
        self
    }

    /// Every violated constraint, as human-readable messages.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.nu >= 0.0) || !self.nu.is_finite() {
            v.push("nu must be ≥ 0".to_string());
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) || !dt.is_finite() {
                v.push("dt must be > 0".to_string());
            } else if self.snapshot_interval < dt {
                v.push("snapshot_interval must be ≥ dt".to_string());
            }
        }
        if !(self.cfl > 0.0) || !self.cfl.is_finite() {
            v.push("cfl must be > 0".to_string());
        }
        if !(self.t_end >= 0.0) || !self.t_end.is_finite() {
            v.push("t_end must be ≥ 0".to_string());
        }
        if !(self.snapshot_interval > 0.0) || !self.snapshot_interval.is_finite() {
            v.push("snapshot_interval must be > 0".to_string());
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

    /// `0, Δ, 2Δ, …` up to and including `t_end`.
    pub fn snapshot_times(&self) -> Vec<f64> {
        uniform_times(self.t_end, self.snapshot_interval)
    }
}

/// `0, Δ, 2Δ, …, t_end`, with `t_end` appended if it is not a multiple of `Δ`.
pub fn uniform_times(t_end: f64, interval: f64) -> Vec<f64> {
    let steps = (t_end / interval * (1.0 + 1e-12)).floor() as usize;
    let mut t: Vec<f64> = (0..=steps).map(|j| j as f64 * interval).collect();
    if t_end - t[steps] > 1e-12 * t_end.max(1.0) {
        t.push(t_end);
    } else {
        t[steps] = t_end;
    }
    t
}

/// Energy, and cumulative dissipation `2ν∫₀ᵗ|∇u|²`, at one instant.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub t: f64,
    pub energy: f64,
    pub dissipation: f64,
}

/// Stored snapshots of one solver run.
#[derive(Clone, Debug)]
pub struct Trajectory {
    pub snapshots: Vec<VelocityField>,
    pub config: SolverConfig,
    pub energy_series: Vec<EnergyRecord>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.time()).collect()
    }
}

/// The spatial operator of the equations on a fixed grid.
#[derive(Clone, Debug)]
pub struct NavierStokes {
    grid: Grid,
    nu: f64,
    dealias: bool,
    k2: Vec<f64>,
    kv: Vec<[f64; 3]>,
    keep: Vec<bool>,
}

impl NavierStokes {
    pub fn new(grid: Grid, nu: f64, dealias: bool) -> Self {
        let mut k2 = Vec::with_capacity(grid.len());
        let mut kv = Vec::with_capacity(grid.len());
        let mut keep = Vec::with_capacity(grid.len());
        for idx in 0..grid.len() {
            let k = grid.wave_vector(idx);
            k2.push(k_sq(&k));
            kv.push([k[0] as f64, k[1] as f64, k[2] as f64]);
            let inside = !dealias || grid.in_dealiased_band(&k);
            keep.push(inside && !grid.is_nyquist(&k) && k_sq(&k) > 0.0);
        }
        NavierStokes {
            grid,
            nu,
            dealias,
            k2,
            kv,
            keep,
        }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn nu(&self) -> f64 {
        self.nu
    }

    #[inline]
    pub fn dealiases(&self) -> bool {
        self.dealias
    }

    /// Zero the modes the scheme does not carry.
    pub fn truncate(&self, s: &mut [Vec<Complex64>]) {
        for c in s.iter_mut() {
            for (z, &k) in c.iter_mut().zip(&self.keep) {
                if !k {
                    *z = Complex64::default();
                }
            }
        }
    }

    /// `-P ∂_j(u_i u_j)` in spectral space, together with `max|u|` on the grid.
    pub fn nonlinear(&self, s: &[Vec<Complex64>]) -> (Coeffs, f64) {
        let g = &self.grid;
        let d = g.dim();
        let refs: Vec<&[Complex64]> = s.iter().map(|c| c.as_slice()).collect();
        let u = fft::inverse_many(g, &refs);

        let mut umax: f64 = 0.0;
        for idx in 0..g.len() {
            let m: f64 = u.iter().map(|c| c[idx] * c[idx]).sum();
            umax = umax.max(m);
        }

        let pairs: Vec<(usize, usize)> = (0..d).flat_map(|i| (i..d).map(move |j| (i, j))).collect();
        let prods: Vec<Vec<f64>> = pairs
            .iter()
            .map(|&(i, j)| u[i].iter().zip(&u[j]).map(|(a, b)| a * b).collect())
            .collect();
        let prefs: Vec<&[f64]> = prods.iter().map(|p| p.as_slice()).collect();
        let ps = fft::forward_many(g, &prefs);
        let pair_index = |i: usize, j: usize| {
            let (a, b) = if i <= j { (i, j) } else { (j, i) };
            pairs.iter().position(|&p| p == (a, b)).unwrap()
        };
        let table: Vec<Vec<usize>> = (0..d)
            .map(|i| (0..d).map(|j| pair_index(i, j)).collect())
            .collect();

        let mut out = vec![vec![Complex64::default(); g.len()]; d];
        let mut f = [Complex64::default(); 3];
        for idx in 0..g.len() {
            if !self.keep[idx] {
                continue;
            }
            let k = &self.kv[idx];
            for i in 0..d {
                let mut acc = Complex64::default();
                for j in 0..d {
                    acc += ps[table[i][j]][idx] * k[j];
                }
                f[i] = Complex64::new(acc.im, -acc.re);
            }
            let mut dot = Complex64::default();
            for i in 0..d {
                dot += f[i] * k[i];
            }
            let p = dot / self.k2[idx];
            for i in 0..d {
                out[i][idx] = f[i] - p * k[i];
            }
        }
        (out, umax.sqrt())
    }

    /// `∫|∇u|² dx` of spectral coefficients.
    pub fn h1(&self, s: &[Vec<Complex64>]) -> f64 {
        let mut acc = 0.0;
        for (idx, &k2) in self.k2.iter().enumerate() {
            if k2 > 0.0 {
                acc += k2 * s.iter().map(|c| c[idx].norm_sqr()).sum::<f64>();
            }
        }
        acc * self.grid.volume()
    }

    pub fn energy(&self, s: &[Vec<Complex64>]) -> f64 {
        s.iter()
            .flat_map(|c| c.iter())
            .map(|z| z.norm_sqr())
            .sum::<f64>()
            * self.grid.volume()
    }

    fn factors(&self, dt: f64) -> (Vec<f64>, Vec<f64>) {
        let full = self.k2.iter().map(|k2| (-self.nu * k2 * dt).exp()).collect();
        let half = self.k2.iter().map(|k2| (-0.5 * self.nu * k2 * dt).exp()).collect();
        (full, half)
    }

    /// One IF-RK4 step of length `dt` given `a = N(u)`. Returns the RK4 estimate of
    /// `2ν∫|∇u|²` over the step.
    pub fn step_with(&self, s: &mut Coeffs, a: &Coeffs, dt: f64) -> f64 {
        let (e, eh) = self.factors(dt);
        let d = s.len();
        let n = self.grid.len();
        let q = |x: &[Vec<Complex64>]| 2.0 * self.nu * self.h1(x);

        let mut ua = vec![vec![Complex64::default(); n]; d];
        for c in 0..d {
            for idx in 0..n {
                ua[c][idx] = (s[c][idx] + a[c][idx] * (0.5 * dt)) * eh[idx];
            }
        }
        let (b, _) = self.nonlinear(&ua);
        let mut ub = vec![vec![Complex64::default(); n]; d];
        for c in 0..d {
            for idx in 0..n {
                ub[c][idx] = s[c][idx] * eh[idx] + b[c][idx] * (0.5 * dt);
            }
        }
        let (cc, _) = self.nonlinear(&ub);
        let mut uc = vec![vec![Complex64::default(); n]; d];
        for c in 0..d {
            for idx in 0..n {
                uc[c][idx] = s[c][idx] * e[idx] + cc[c][idx] * (dt * eh[idx]);
            }
        }
        let (dd, _) = self.nonlinear(&uc);

        let diss = if self.nu > 0.0 {
            dt / 6.0 * (q(s) + 2.0 * q(&ua) + 2.0 * q(&ub) + q(&uc))
        } else {
            0.0
        };

        for c in 0..d {
            for idx in 0..n {
                s[c][idx] = s[c][idx] * e[idx]
                    + (a[c][idx] * e[idx]
                        + (b[c][idx] + cc[c][idx]) * (2.0 * eh[idx])
                        + dd[c][idx])
                        * (dt / 6.0);
            }
        }
        diss
    }
}

/// Resumable integrator for one trajectory.
#[derive(Clone, Debug)]
pub struct Stepper {
    ns: NavierStokes,
    state: Coeffs,
    time: f64,
    dissipation: f64,
    e0: f64,
    dt: Option<f64>,
    cfl: f64,
    series: Vec<EnergyRecord>,
    steps: usize,
}

impl Stepper {
    /// Start from `u0`, truncated to the modes the scheme carries.
    pub fn new(u0: &VelocityField, config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        u0.require_divergence_free()?;
        let ns = NavierStokes::new(*u0.grid(), config.nu, config.dealias);
        let mut state = u0.spectrum().components().to_vec();
        ns.truncate(&mut state);
        let e0 = ns.energy(&state);
        Ok(Stepper {
            ns,
            state,
            time: u0.time(),
            dissipation: 0.0,
            e0,
            dt: config.dt,
            cfl: config.cfl,
            series: vec![EnergyRecord {
                t: u0.time(),
                energy: e0,
                dissipation: 0.0,
            }],
            steps: 0,
        })
    }

    #[inline]
    pub fn time(&self) -> f64 {
        self.time
    }

    #[inline]
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Cumulative `2ν∫|∇u|²` since the start.
    #[inline]
    pub fn dissipation(&self) -> f64 {
        self.dissipation
    }

    pub fn energy_series(&self) -> &[EnergyRecord] {
        &self.series
    }

    pub fn into_energy_series(self) -> Vec<EnergyRecord> {
        self.series
    }

    pub fn field(&self) -> VelocityField {
        let spec = Spectrum::new(self.ns.grid, self.state.clone()).expect("state matches grid");
        VelocityField::from_spectrum(spec)
            .with_time(self.time)
            .with_nu(self.ns.nu)
    }

    /// Integrate up to exactly `t_target`.
    pub fn advance_to(&mut self, t_target: f64) -> Result<()> {
        let tol = 1e-12 * t_target.abs().max(1.0);
        if t_target < self.time - tol {
            return Err(Error::Config(format!(
                "cannot integrate backwards from {} to {t_target}",
                self.time
            )));
        }
        while t_target - self.time > tol {
            let remaining = t_target - self.time;
            let (a, umax) = self.ns.nonlinear(&self.state);
            let dt_nominal = match self.dt {
                Some(dt) => dt,
                None if umax > 0.0 => self.cfl * self.ns.grid.spacing() / umax,
                None => remaining,
            };
            let n_left = (remaining / dt_nominal - 1e-9).ceil().max(1.0);
            let dt = remaining / n_left;
            self.dissipation += self.ns.step_with(&mut self.state, &a, dt);
            self.steps += 1;
            self.time = if n_left <= 1.0 { t_target } else { self.time + dt };
            let e = self.ns.energy(&self.state);
            self.series.push(EnergyRecord {
                t: self.time,
                energy: e,
                dissipation: self.dissipation,
            });
            if !e.is_finite() {
                return Err(Error::BlowUp {
                    time: self.time,
                    reason: "non-finite energy".into(),
                });
            }
            if self.e0 > 0.0 && e > 10.0 * self.e0 {
                return Err(Error::BlowUp {
                    time: self.time,
                    reason: format!("energy {e:.6e} exceeds ten times the initial {:.6e}", self.e0),
                });
            }
        }
        Ok(())
    }
}

/// Nonlinear tendency `-P[(u·∇)u]`, dealiased.
pub fn rhs_eval(field: &VelocityField) -> VelocityField {
    rhs_eval_with(field, true)
}

pub fn rhs_eval_with(field: &VelocityField, dealias: bool) -> VelocityField {
    let ns = NavierStokes::new(*field.grid(), field.nu(), dealias);
    let mut s = field.spectrum().components().to_vec();
    ns.truncate(&mut s);
    let (out, _) = ns.nonlinear(&s);
    let spec = Spectrum::new(*field.grid(), out).expect("shape preserved");
    VelocityField::from_spectrum(spec)
        .with_time(field.time())
        .with_nu(field.nu())
}

/// One IF-RK4 step with the field's own viscosity.
pub fn step(field: &VelocityField, dt: f64) -> Result<VelocityField> {
    if !(dt > 0.0) {
        return Err(Error::Config("dt must be > 0".into()));
    }
    let config = SolverConfig::new(field.nu(), dt, dt).with_dt(dt);
    let mut st = Stepper::new(field, &config)?;
    st.advance_to(field.time() + dt)?;
    Ok(st.field())
}

/// Integrate and store snapshots at `config.snapshot_times()`.
pub fn run(u0: &VelocityField, config: &SolverConfig) -> Result<Trajectory> {
    let times: Vec<f64> = config
        .snapshot_times()
        .into_iter()
        .map(|t| t + u0.time())
        .collect();
    run_with_times(u0, config, &times)
}

/// Integrate and store snapshots at the given increasing times.
pub fn run_with_times(u0: &VelocityField, config: &SolverConfig, times: &[f64]) -> Result<Trajectory> {
    check_times(times, u0.time(), u0.time() + config.t_end)?;
    let mut st = Stepper::new(u0, config)?;
    let mut snapshots = Vec::with_capacity(times.len());
    for &t in times {
        st.advance_to(t)?;
        snapshots.push(st.field());
    }
    Ok(Trajectory {
        snapshots,
        config: config.clone(),
        energy_series: st.into_energy_series(),
    })
}

pub(crate) fn check_times(times: &[f64], t0: f64, t_end: f64) -> Result<()> {
    let tol = 1e-12 * t_end.abs().max(1.0);
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("sample times must be strictly increasing".into()));
    }
    if let (Some(&first), Some(&last)) = (times.first(), times.last()) {
        if first < t0 - tol || last > t_end + tol {
            return Err(Error::Config(format!(
                "sample times must lie in [{t0}, {t_end}]"
            )));
        }
    }
    Ok(())
}

/// `max_t |E(t) + 2ν∫₀ᵗ|∇u|² - E(0)| / E(0)`.
pub fn energy_budget(trajectory: &Trajectory) -> Result<f64> {
    energy_budget_series(&trajectory.energy_series)
}

pub fn energy_budget_series(series: &[EnergyRecord]) -> Result<f64> {
    let Some(first) = series.first() else {
        return Ok(0.0);
    };
    let e0 = first.energy;
    let worst = series
        .iter()
        .map(|r| (r.energy + r.dissipation - e0).abs())
        .fold(0.0, f64::max);
    if e0 == 0.0 {
        if worst == 0.0 {
            return Ok(0.0);
        }
        return Err(Error::Degenerate(
            "initial energy is zero but the budget defect is not".into(),
        ));
    }
    Ok(worst / e0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn g2(n: usize) -> Grid {
        Grid::new(2, n).unwrap()
    }

    #[test]
    fn shear_and_taylor_green_have_no_tendency() {
        let g = g2(32);
        assert!(rhs_eval(&VelocityField::shear(g)).max_abs() < 1e-14);
        assert!(rhs_eval(&VelocityField::taylor_green(g)).max_abs() < 1e-13);
    }

    fn smooth_field(g: Grid) -> VelocityField {
        VelocityField::from_fn(g, |x| {
            [
                (x[1] + 0.3).sin() + 0.5 * (2.0 * x[0] - x[1]).cos(),
                0.7 * (x[0] - 1.1).cos() + (2.0 * x[0] - x[1]).cos(),
                0.0,
            ]
        })
    }

    fn fd_advection(u: &VelocityField) -> VelocityField {
        let g = *u.grid();
        let h = g.spacing();
        let mut out = vec![vec![0.0; g.len()]; 2];
        for idx in 0..g.len() {
            for i in 0..2 {
                let mut acc = 0.0;
                for j in 0..2 {
                    let mut e = [0i64; 3];
                    e[j] = 1;
                    let p = g.rotate(idx, e);
                    e[j] = -1;
                    let m = g.rotate(idx, e);
                    acc += u.component(j)[idx] * (u.component(i)[p] - u.component(i)[m]) / (2.0 * h);
                }
                out[i][idx] = -acc;
            }
        }
        VelocityField::new(g, out, 0.0, 0.0).unwrap().leray_project()
    }

    #[test]
    fn tendency_matches_finite_differences() {
        let mut errs = Vec::new();
        for n in [32, 64] {
            let u = smooth_field(g2(n));
            assert!(u.divergence_defect() < 1e-12);
            let e = rhs_eval(&u).max_abs_diff(&fd_advection(&u));
            errs.push(e);
        }
        let ratio = errs[0] / errs[1];
        assert!(ratio > 3.5 && ratio < 4.5, "ratio {ratio}");
    }

    #[test]
    fn zero_field_stays_zero() {
        let u = VelocityField::zeros(g2(16));
        let tr = run(&u, &SolverConfig::new(0.1, 0.5, 0.1)).unwrap();
        assert_eq!(tr.snapshots.len(), 6);
        assert!(tr.snapshots.iter().all(|s| s.max_abs() == 0.0));
        assert_eq!(energy_budget(&tr).unwrap(), 0.0);
    }

    #[test]
    fn shear_decays_exactly() {
        let g = g2(32);
        let nu = 0.1;
        let u0 = VelocityField::shear(g).with_nu(nu);
        let tr = run(&u0, &SolverConfig::new(nu, 1.0, 0.25)).unwrap();
        for s in &tr.snapshots {
            let exact = VelocityField::shear(g).scaled((-nu * s.time()).exp());
            assert!(s.l2_distance(&exact) <= 1e-8);
        }
        assert!(energy_budget(&tr).unwrap() <= 1e-8);
    }

    #[test]
    fn taylor_green_decays_exactly() {
        let g = g2(32);
        let nu = 0.01;
        let u0 = VelocityField::taylor_green(g);
        let tr = run(&u0, &SolverConfig::new(nu, 1.0, 0.5).with_dt(1e-2)).unwrap();
        let last = tr.snapshots.last().unwrap();
        assert!((last.time() - 1.0).abs() < 1e-15);
        let exact = VelocityField::taylor_green(g).scaled((-2.0 * nu).exp());
        assert!(last.l2_distance(&exact) <= 1e-6);
        let e_exact = 2.0 * PI * PI * (-4.0 * nu).exp();
        assert!((last.energy() - e_exact).abs() < 1e-10);
        assert!(energy_budget(&tr).unwrap() <= 1e-6);
    }

    #[test]
    fn energy_decreases_and_mean_stays_zero() {
        let g = g2(32);
        let u0 = smooth_field(g);
        let tr = run(&u0, &SolverConfig::new(0.02, 0.5, 0.05)).unwrap();
        for w in tr.energy_series.windows(2) {
            assert!(w[1].energy <= w[0].energy * (1.0 + 1e-10));
        }
        for s in &tr.snapshots {
            assert_eq!(s.mean_defect(), 0.0);
            assert!(s.divergence_defect() <= 1e-10);
        }
        assert!(energy_budget(&tr).unwrap() < 1e-6);
    }

    #[test]
    fn rejects_bad_config_and_input() {
        let g = g2(16);
        let cfg = SolverConfig::new(-1.0, 1.0, 0.0).with_dt(0.1);
        let v = cfg.violations();
        assert!(v.iter().any(|m| m == "nu must be ≥ 0"));
        assert!(v.len() >= 2);
        let bad = VelocityField::from_fn(g, |x| [x[0].sin(), 0.0, 0.0]);
        assert!(matches!(
            run(&bad, &SolverConfig::new(0.1, 1.0, 0.5)),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn uniform_times_end_exactly() {
        assert_eq!(uniform_times(1.0, 0.25), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        let t = uniform_times(0.5, 0.2);
        assert_eq!(t.len(), 4);
        assert_eq!(*t.last().unwrap(), 0.5);
        let t = uniform_times(0.3, 0.1);
        assert_eq!(t.len(), 4);
    }

    #[test]
    fn degenerate_budget() {
        let series = [
            EnergyRecord { t: 0.0, energy: 0.0, dissipation: 0.0 },
            EnergyRecord { t: 1.0, energy: 1.0, dissipation: 0.0 },
        ];
        assert!(matches!(energy_budget_series(&series), Err(Error::Degenerate(_))));
    }
}
