//! Built-in verification suites run by `nsstat check`.

use std::f64::consts::PI;

use nsstat::correlation::gradient_two_point;
use nsstat::ensemble::{evolve, sample_initial, statistical_energy_check, white_noise, Ensemble, MeasureSpec};
use nsstat::field::scalar_gradient;
use nsstat::khm::{khm_budget_ensembles, KhmForm, KhmQuadrature, TestTensor};
use nsstat::solver::{energy_budget, run, SolverConfig};
use nsstat::structure::{weak_anisotropy_residual, DirectionSet};
use nsstat::{Grid, VelocityField};
use serde::Serialize;

use crate::CliError;

pub const SUITES: [&str; 6] = ["leray", "energy", "anisotropy", "taylor-green", "khm-shear", "gradient-rep"];

/// One measured quantity against its tolerance.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tol: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SuiteResult {
    pub suite: String,
    pub passed: bool,
    pub checks: Vec<Check>,
}

fn at_most(name: impl Into<String>, value: f64, tol: f64) -> Check {
    Check {
        name: name.into(),
        value,
        tol,
        passed: value <= tol,
    }
}

fn flag(name: impl Into<String>, ok: bool) -> Check {
    Check {
        name: name.into(),
        value: if ok { 1.0 } else { 0.0 },
        tol: 1.0,
        passed: ok,
    }
}

fn grid(dim: usize, n: usize) -> Grid {
    Grid::new(dim, n).expect("fixed grid")
}

fn leray() -> nsstat::Result<Vec<Check>> {
    let mut idem: f64 = 0.0;
    let mut adj: f64 = 0.0;
    let mut grad: f64 = 0.0;
    for (dim, n) in [(2, 32), (3, 16)] {
        let g = grid(dim, n);
        for j in 0..10 {
            let u = white_noise(&g, 100 + j, 0);
            let v = white_noise(&g, 100 + j, 1);
            let pu = u.leray_project();
            idem = idem.max(pu.leray_project().l2_distance(&pu) / pu.l2_norm());
            let a = pu.inner(&v);
            let b = u.inner(&v.leray_project());
            adj = adj.max((a - b).abs() / (u.l2_norm() * v.l2_norm()));
            let psi = u.component(0).to_vec();
            let gp = scalar_gradient(&g, &psi);
            grad = grad.max(gp.leray_project().l2_norm() / gp.l2_norm());
        }
    }
    Ok(vec![
        at_most("idempotence", idem, 1e-10),
        at_most("self_adjointness", adj, 1e-10),
        at_most("gradient_annihilation", grad, 1e-10),
    ])
}

fn energy() -> nsstat::Result<Vec<Check>> {
    let g = grid(2, 32);
    let shear = VelocityField::shear(g);
    let traj = run(&shear, &SolverConfig::new(0.1, 1.0, 0.1).with_dt(1e-3))?;
    let budget = energy_budget(&traj)?;
    let spec = MeasureSpec::random_fourier(2.0, 1, 8, 3.0, 10.0, 5);
    let ens = sample_initial(&spec, 4, &g)?;
    let cfg = SolverConfig::new(0.01, 0.5, 0.01);
    let snaps = evolve(&ens, &cfg, &cfg.snapshot_times())?;
    let stat = statistical_energy_check(&snaps, 2)?;
    Ok(vec![
        at_most("shear_budget_defect", budget, 1e-8),
        at_most("statistical_energy_defect", stat.worst, 1e-4),
    ])
}

fn anisotropy() -> nsstat::Result<Vec<Check>> {
    let g = grid(2, 64);
    let spec = MeasureSpec::random_fourier(5.0 / 3.0, 1, 16, 3.0, 10.0, 21);
    let ens = sample_initial(&spec, 4, &g)?;
    let dirs = DirectionSet::new(2, 128)?;
    let mut out = Vec::new();
    for u in ens.members() {
        let single = Ensemble::singleton(u.clone());
        for r in [0.2, 0.5] {
            let w = weak_anisotropy_residual(&single, r, &dirs, 16)?;
            out.push(w.residual);
        }
    }
    Ok(vec![at_most("weak_anisotropy_residual", out.iter().cloned().fold(0.0, f64::max), 0.02)])
}

fn taylor_green() -> nsstat::Result<Vec<Check>> {
    let nu = 0.01;
    let u0 = VelocityField::taylor_green(grid(2, 32));
    let traj = run(&u0, &SolverConfig::new(nu, 0.5, 0.1).with_dt(1e-3))?;
    let err = traj
        .snapshots
        .iter()
        .map(|s| s.l2_distance(&u0.scaled((-2.0 * nu * s.time()).exp())) / u0.l2_norm())
        .fold(0.0, f64::max);
    Ok(vec![
        at_most("l2_error", err, 1e-6),
        at_most("energy_budget_defect", energy_budget(&traj)?, 1e-6),
    ])
}

fn khm_shear() -> nsstat::Result<Vec<Check>> {
    let nu = 0.05;
    let ens = Ensemble::singleton(VelocityField::shear(grid(2, 32)).with_nu(nu));
    let cfg = SolverConfig::new(nu, 0.5, 0.01).with_dt(1e-3);
    let snaps = evolve(&ens, &cfg, &cfg.snapshot_times())?;
    let b = khm_budget_ensembles(&snaps, &TestTensor::trace(0.8)?, nu, KhmForm::Trace, &KhmQuadrature::standard(2))?;
    let visc = b.term("viscous");
    let alt = b.term("viscous_alt");
    Ok(vec![
        at_most("relative_residual", b.relative(), 0.01),
        at_most("viscous_forms", (visc - alt).abs() / visc.abs().max(alt.abs()), 0.02),
    ])
}

fn gradient_rep() -> nsstat::Result<Vec<Check>> {
    let g = grid(2, 64);
    let spec = MeasureSpec::random_fourier(3.0, 1, 6, 3.0, 10.0, 8);
    let ens = sample_initial(&spec, 4, &g)?;
    let h1 = ens.mean_h1();
    let hs: Vec<f64> = [8.0, 4.0, 2.0, 1.0].iter().map(|m| m * 2.0 * PI / g.n() as f64).collect();
    let v = gradient_two_point(&ens, &hs)?;
    let mut errs: Vec<(f64, f64)> = v.separations.iter().zip(&v.values).map(|(h, x)| (*h, (x - h1).abs())).collect();
    errs.sort_by(|a, b| b.0.total_cmp(&a.0));
    let decreasing = errs.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(vec![
        flag("strictly_decreasing", decreasing),
        at_most("terminal_relative_error", errs[errs.len() - 1].1 / h1, 0.05),
    ])
}

/// Run one named suite.
pub fn run_suite(name: &str) -> Result<SuiteResult, CliError> {
    let checks = match name {
        "leray" => leray(),
        "energy" => energy(),
        "anisotropy" => anisotropy(),
        "taylor-green" => taylor_green(),
        "khm-shear" => khm_shear(),
        "gradient-rep" => gradient_rep(),
        other => {
            return Err(CliError::config(vec![format!(
                "unknown suite {other:?}; expected one of {}",
                SUITES.join(", ")
            )]))
        }
    }?;
    Ok(SuiteResult {
        suite: name.to_string(),
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}
