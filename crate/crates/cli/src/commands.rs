//! Subcommand implementations. Each returns the JSON summary printed on stdout.

use std::fs;
use std::path::Path;

use nsstat::correlation::LatticeCorrelation;
use nsstat::ensemble::{evolve_streaming, sample_initial, Ensemble, EnergySample};
use nsstat::io::{
    fmt_f64, read_ensemble, read_json, read_trajectory_index, read_trajectory_snapshot, write_csv,
    write_ensemble, write_json, Provenance, TrajectoryWriter, CODE_VERSION,
};
use nsstat::khm::{khm_budget, KhmForm, KhmQuadrature, RadialProfile, TestTensor};
use nsstat::moments::Moments;
use nsstat::quadrature::trapezoid;
use nsstat::structure::{
    bound_check, scaling_fit, structure_snapshot, structure_snapshot_real, DirectionSet,
    StructureFunctionTable, StructureSnapshot,
};
use nsstat::vvlimit::{run_sweep, write_report};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::CliError;

fn stamp(cfg: &RunConfig) -> Value {
    json!({"code_version": CODE_VERSION, "config_hash": cfg.hash()})
}

/// `synth`: draw the initial ensemble into `out`.
pub fn synth(cfg: &RunConfig, out: &Path) -> Result<Value, CliError> {
    let ens = sample_initial(&cfg.measure, cfg.members, &cfg.grid())?;
    let manifest = write_ensemble(out, &ens, &cfg.provenance())?;
    Ok(json!({
        "command": "synth",
        "output": out,
        "members": manifest.member_files.len(),
        "mean_energy": ens.mean_energy(),
        "provenance": stamp(cfg),
    }))
}

/// `simulate`: evolve the configured (or a stored) ensemble into a trajectory directory.
pub fn simulate(cfg: &RunConfig, input: Option<&Path>, out: &Path) -> Result<Value, CliError> {
    let ens = match input {
        Some(dir) => read_ensemble(dir)?.0,
        None => sample_initial(&cfg.measure, cfg.members, &cfg.grid())?,
    };
    let times: Vec<f64> = cfg
        .solver
        .snapshot_times()
        .iter()
        .map(|t| t + ens.time())
        .collect();
    let config_json = serde_json::to_value(cfg).map_err(|e| CliError::Runtime(e.to_string()))?;
    let mut writer = TrajectoryWriter::create(out, cfg.provenance())?.with_config(config_json);
    let nu = cfg.solver.nu;
    evolve_streaming(&ens, &cfg.solver, &times, |e| {
        let s = EnergySample::of(&e);
        let diss: Vec<f64> = s.h1.iter().map(|h| 2.0 * nu * h).collect();
        writer.push(&e, Some(&diss))
    })?;
    let index = writer.finish()?;
    Ok(json!({
        "command": "simulate",
        "output": out,
        "snapshots": index.files.len(),
        "times": index.times,
        "provenance": stamp(cfg),
    }))
}

/// Snapshots of a trajectory directory, or the single ensemble of an ensemble directory.
pub struct SnapshotSource {
    dir: std::path::PathBuf,
    index: Option<nsstat::io::TrajectoryIndex>,
}

impl SnapshotSource {
    pub fn open(dir: &Path) -> Result<Self, CliError> {
        let index = if dir.join("index.json").exists() {
            Some(read_trajectory_index(dir)?)
        } else if dir.join("manifest.json").exists() {
            None
        } else {
            return Err(CliError::Runtime(format!(
                "{} holds neither index.json nor manifest.json",
                dir.display()
            )));
        };
        Ok(SnapshotSource {
            dir: dir.to_path_buf(),
            index,
        })
    }

    pub fn len(&self) -> usize {
        self.index.as_ref().map_or(1, |i| i.files.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize) -> Result<Ensemble, CliError> {
        Ok(match &self.index {
            Some(idx) => read_trajectory_snapshot(&self.dir, idx, i)?,
            None => read_ensemble(&self.dir)?.0,
        })
    }
}

/// Reference values of `S²‖` for the first snapshot of an input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Golden {
    pub oracle: String,
    pub r_grid: Vec<f64>,
    pub s2_par: Vec<f64>,
    pub provenance: Provenance,
}

/// Relative tolerance of the golden comparison.
pub const GOLDEN_TOL: f64 = 0.005;

/// Independent reference: explicit real-space shifts with four times the directions.
pub fn golden_oracle(ens: &Ensemble, r_grid: &[f64], dirs: &DirectionSet) -> Result<Vec<f64>, CliError> {
    let fine = dirs.refined().refined();
    let s = structure_snapshot_real(ens, r_grid, &fine, &[2, 3])?;
    Ok(s.s_par[0].clone())
}

/// `stats`: structure functions, diagonal continuity and the third-order bounds.
pub fn stats(
    cfg: &RunConfig,
    input: &Path,
    out: &Path,
    golden: Option<&Path>,
    bless: bool,
) -> Result<Value, CliError> {
    let src = SnapshotSource::open(input)?;
    let r_grid = cfg.r_grid();
    let dirs = cfg.directions();
    let prov = cfg.provenance();
    fs::create_dir_all(out)?;

    let mut snaps: Vec<StructureSnapshot> = Vec::with_capacity(src.len());
    let mut dc: Vec<Vec<f64>> = Vec::with_capacity(src.len());
    let mut times = Vec::with_capacity(src.len());
    let mut e0 = 0.0;
    let mut first: Option<Ensemble> = None;
    for i in 0..src.len() {
        let e = src.get(i)?;
        if i == 0 {
            e0 = e.mean_energy();
        }
        times.push(e.time());
        snaps.push(structure_snapshot(&e, &r_grid, &dirs, &cfg.analysis.p_list)?);
        let lc = LatticeCorrelation::new(&e);
        dc.push(r_grid.iter().map(|&r| lc.dc_modulus(r)).collect::<nsstat::Result<_>>()?);
        if i == 0 {
            first = Some(e);
        }
    }
    let first = first.ok_or_else(|| CliError::Runtime("input holds no snapshots".into()))?;

    let snap0 = &snaps[0];
    let mut rows = Vec::new();
    for (ip, p) in snap0.p_list.iter().enumerate() {
        for (ir, r) in r_grid.iter().enumerate() {
            rows.push(vec![
                fmt_f64(snap0.time),
                fmt_f64(*r),
                p.to_string(),
                fmt_f64(snap0.s_par[ip][ir]),
                fmt_f64(snap0.s0_3[ir]),
            ]);
        }
    }
    write_csv(
        &out.join("snapshot_structure.csv"),
        &prov,
        &["t", "r", "p", "s_par", "s0_3"],
        &rows,
    )?;
    let dc_integrated: Option<Vec<f64>> = (times.len() > 1).then(|| {
        (0..r_grid.len())
            .map(|i| trapezoid(&times, &dc.iter().map(|v| v[i]).collect::<Vec<_>>()))
            .collect()
    });
    let rows: Vec<Vec<String>> = (0..r_grid.len())
        .map(|i| {
            vec![
                fmt_f64(r_grid[i]),
                fmt_f64(dc[0][i]),
                dc_integrated.as_ref().map_or(String::new(), |v| fmt_f64(v[i])),
            ]
        })
        .collect();
    write_csv(&out.join("dc.csv"), &prov, &["r", "dc_initial", "dc_integrated"], &rows)?;

    let mut summary = json!({
        "command": "stats",
        "snapshots": times.len(),
        "e0": e0,
        "r_grid": r_grid,
        "s2_par_initial": snap0.s_par[snap0.p_list.iter().position(|&p| p == 2).unwrap()],
        "dc_initial": dc[0],
        "dc_integrated": dc_integrated,
        "provenance": stamp(cfg),
    });
    if times.len() > 1 {
        let table = StructureFunctionTable::from_snapshots(&snaps, e0)?;
        let rows: Vec<Vec<String>> = table
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
            &out.join("structure.csv"),
            &prov,
            &["tau", "r", "p", "s_par", "s0_3", "s_perp_3"],
            &rows,
        )?;
        summary["bound"] = serde_json::to_value(bound_check(&table)?).unwrap();
        if let Some(range) = cfg.analysis.fit_range {
            summary["scaling"] = match scaling_fit(&table, range) {
                Ok(f) => serde_json::to_value(f).unwrap(),
                Err(e) => json!({"error": e.to_string()}),
            };
        }
    }

    if bless {
        let path = golden.ok_or_else(|| CliError::config(vec!["--bless requires --golden".into()]))?;
        let g = Golden {
            oracle: "real-space shifts, directions refined four times".into(),
            r_grid: r_grid.clone(),
            s2_par: golden_oracle(&first, &r_grid, &dirs)?,
            provenance: prov.clone(),
        };
        write_json(path, &g)?;
        summary["golden"] = json!({"blessed": path});
    } else if let Some(path) = golden {
        let g: Golden = read_json(path)?;
        let s = structure_snapshot(&first, &g.r_grid, &dirs, &[2, 3])?;
        let worst = s.s_par[0]
            .iter()
            .zip(&g.s2_par)
            .map(|(a, b)| if *b == 0.0 { a.abs() } else { (a - b).abs() / b.abs() })
            .fold(0.0f64, f64::max);
        summary["golden"] = json!({"file": path, "worst_relative": worst, "tol": GOLDEN_TOL});
        if !(worst <= GOLDEN_TOL) {
            write_json(&out.join("stats.json"), &summary)?;
            return Err(CliError::Verification(json!([{
                "check": "golden S2_par",
                "worst_relative": worst,
                "tol": GOLDEN_TOL,
            }])));
        }
    }
    write_json(&out.join("stats.json"), &summary)?;
    Ok(summary)
}

/// `khm`: trace, full and longitudinal budgets with a bump of support `analysis.khm_s0`.
pub fn khm(cfg: &RunConfig, input: &Path, out: Option<&Path>) -> Result<Value, CliError> {
    let src = SnapshotSource::open(input)?;
    let moments = (0..src.len())
        .map(|i| Ok(Moments::new(&src.get(i)?, true)?))
        .collect::<Result<Vec<_>, CliError>>()?;
    let nu = moments
        .first()
        .map(|m| m.nu())
        .ok_or_else(|| CliError::Runtime("input holds no snapshots".into()))?;
    let s0 = cfg.analysis.khm_s0;
    let quad = KhmQuadrature::new(cfg.grid.dim, cfg.analysis.radial_nodes, cfg.analysis.directions)?;
    let bump = RadialProfile::Bump { s0 };
    let mut budgets = serde_json::Map::new();
    for (name, tensor, form) in [
        ("trace", TestTensor::trace(s0)?, KhmForm::Trace),
        ("full", TestTensor::new(bump, bump)?, KhmForm::Full),
        ("longitudinal", TestTensor::longitudinal(s0)?, KhmForm::Longitudinal),
    ] {
        let b = khm_budget(&moments, &tensor, nu, form, &quad)?;
        let mut v = serde_json::to_value(&b).unwrap();
        v["relative_residual"] = b.relative().into();
        budgets.insert(name.to_string(), v);
    }
    let summary = json!({
        "command": "khm",
        "nu": nu,
        "snapshots": moments.len(),
        "budgets": budgets,
        "provenance": stamp(cfg),
    });
    if let Some(path) = out {
        write_json(path, &summary)?;
    }
    Ok(summary)
}

/// `vv`: the viscosity sweep; with `plan_only` the plan is returned without computing.
pub fn vv(cfg: &RunConfig, out: &Path, plan_only: bool) -> Result<Value, CliError> {
    let plan = cfg
        .sweep_plan()
        .ok_or_else(|| CliError::config(vec!["vv needs a sweep section with nus".into()]))?;
    if plan_only {
        return Ok(json!({
            "command": "vv",
            "plan_only": true,
            "plan": plan,
            "sample_times": plan.sample_times(),
            "output": out.join(&plan.run_id),
            "provenance": stamp(cfg),
        }));
    }
    let report = run_sweep(&plan)?;
    let dir = write_report(out, &report, &cfg.provenance())?;
    Ok(json!({
        "command": "vv",
        "output": dir,
        "completed": report.completed().count(),
        "failed": report.outcomes.len() - report.completed().count(),
        "dc_uniformity": report.dc_uniformity,
        "inviscid": report.inviscid,
        "distances": report.distances,
        "uniform_energy_bound": report.uniform_energy_bound,
        "warnings": report.warnings,
        "provenance": stamp(cfg),
    }))
}
