//! Run configuration: schema validation, defaults, cross-field rules and hashing.

use std::path::Path;

use nsstat::correlation::TimeProfile;
use nsstat::ensemble::{BaseFlow, MeasureSpec};
use nsstat::io::Provenance;
use nsstat::khm::TestTensor;
use nsstat::solver::SolverConfig;
use nsstat::structure::{log_r_grid, DirectionSet};
use nsstat::vvlimit::SweepPlan;
use nsstat::Grid;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::CliError;

/// The published JSON schema every configuration is validated against.
pub const SCHEMA: &str = include_str!("../schema/run_config.schema.json");
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
}

/// Log-spaced radius grid.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RGridSpec {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for RGridSpec {
    fn default() -> Self {
        RGridSpec {
            min: 0.05,
            max: 3.0,
            count: 24,
        }
    }
}

fn default_directions() -> usize {
    64
}

fn default_radial_nodes() -> usize {
    16
}

fn default_p_list() -> Vec<u32> {
    vec![2, 3]
}

fn default_khm_s0() -> f64 {
    0.4
}

fn default_fk_flow() -> BaseFlow {
    BaseFlow::TaylorGreen
}

fn default_fk_profile() -> TimeProfile {
    TimeProfile::Quadratic
}

fn default_members() -> usize {
    8
}

fn default_run_id() -> String {
    "vv".to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    #[serde(default)]
    pub r_grid: RGridSpec,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_radial_nodes")]
    pub radial_nodes: usize,
    #[serde(default = "default_p_list")]
    pub p_list: Vec<u32>,
    #[serde(default)]
    pub fit_range: Option<[f64; 2]>,
    #[serde(default = "default_khm_s0")]
    pub khm_s0: f64,
    #[serde(default = "default_fk_flow")]
    pub fk_flow: BaseFlow,
    #[serde(default = "default_fk_profile")]
    pub fk_profile: TimeProfile,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all analysis fields have defaults")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub nus: Vec<f64>,
    #[serde(default = "default_run_id")]
    pub run_id: String,
}

/// Everything a command needs: grid, solver, initial measure, analysis options and an
/// optional viscosity ladder.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub grid: GridConfig,
    pub solver: SolverConfig,
    pub measure: MeasureSpec,
    #[serde(default = "default_members")]
    pub members: usize,
    #[serde(default)]
    pub analysis: AnalysisConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
}

impl RunConfig {
    pub fn grid(&self) -> Grid {
        Grid::new(self.grid.dim, self.grid.n).expect("validated grid")
    }

    pub fn r_grid(&self) -> Vec<f64> {
        let r = self.analysis.r_grid;
        log_r_grid(r.min, r.max, r.count).expect("validated radius grid")
    }

    pub fn directions(&self) -> DirectionSet {
        DirectionSet::new(self.grid.dim, self.analysis.directions).expect("validated directions")
    }

    /// Hex SHA-256 of the canonical, default-filled configuration.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn provenance(&self) -> Provenance {
        Provenance::new(self.hash())
    }

    pub fn sweep_plan(&self) -> Option<SweepPlan> {
        let s = self.sweep.as_ref()?;
        Some(SweepPlan {
            run_id: s.run_id.clone(),
            nus: s.nus.clone(),
            spec: self.measure.clone(),
            grid: self.grid(),
            members: self.members,
            t_end: self.solver.t_end,
            snapshot_interval: self.solver.snapshot_interval,
            dt: self.solver.dt,
            cfl: self.solver.cfl,
            r_grid: self.r_grid(),
            directions: self.analysis.directions,
            fk_flow: self.analysis.fk_flow,
            fk_profile: self.analysis.fk_profile,
            khm_s0: Some(self.analysis.khm_s0),
        })
    }

    /// Cross-field rules beyond the schema.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            v.push(format!("schema_version must be {SCHEMA_VERSION}"));
        }
        let grid = match Grid::new(self.grid.dim, self.grid.n) {
            Ok(g) => Some(g),
            Err(e) => {
                v.push(format!("grid: {}", strip(&e)));
                None
            }
        };
        v.extend(self.solver.violations().into_iter().map(|m| format!("solver: {m}")));
        v.extend(
            self.measure
                .violations(grid.as_ref())
                .into_iter()
                .map(|m| format!("measure: {m}")),
        );
        if self.members == 0 {
            v.push("members must be ≥ 1".into());
        }
        let a = &self.analysis;
        if let Err(e) = log_r_grid(a.r_grid.min, a.r_grid.max, a.r_grid.count) {
            v.push(format!("analysis.r_grid: {}", strip(&e)));
        } else if !(a.r_grid.max <= std::f64::consts::PI) {
            v.push("analysis.r_grid: max must be ≤ π".into());
        }
        if let Err(e) = DirectionSet::new(self.grid.dim, a.directions) {
            v.push(format!("analysis.directions: {}", strip(&e)));
        }
        if let Err(e) = TestTensor::trace(a.khm_s0) {
            v.push(format!("analysis.khm_s0: {}", strip(&e)));
        }
        if let Some([lo, hi]) = a.fit_range {
            if !(lo > 0.0) || !(hi > lo) {
                v.push("analysis.fit_range must satisfy 0 < lo < hi".into());
            }
        }
        if let Some(s) = &self.sweep {
            if s.nus.iter().any(|&nu| !(nu > 0.0)) {
                v.push("sweep.nus: every nu must be > 0".into());
            }
            if s.nus.windows(2).any(|w| w[1] > w[0]) {
                v.push("sweep.nus must be non-increasing".into());
            }
        }
        v
    }
}

fn strip(e: &nsstat::Error) -> String {
    match e {
        nsstat::Error::Config(m) | nsstat::Error::Domain(m) => m.clone(),
        other => other.to_string(),
    }
}

/// Remove keys the schema does not allow, so that the remaining rules can still be
/// checked when the schema reports unknown keys.
fn prune(value: &mut Value, schema: &Value) {
    let (Some(obj), Some(props)) = (value.as_object_mut(), schema.get("properties").and_then(Value::as_object)) else {
        return;
    };
    obj.retain(|k, _| props.contains_key(k));
    for (k, v) in obj.iter_mut() {
        prune(v, &props[k]);
    }
}

/// Validate a configuration document, returning every violation found.
pub fn parse_config_str(text: &str) -> Result<RunConfig, CliError> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CliError::config(vec![format!("invalid JSON: {e}")]))?;
    let schema: Value = serde_json::from_str(SCHEMA).expect("schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).expect("schema compiles");
    let mut violations: Vec<String> = validator
        .iter_errors(&value)
        .map(|e| {
            let path = e.instance_path().to_string();
            if path.is_empty() {
                e.to_string()
            } else {
                format!("{path}: {e}")
            }
        })
        .collect();
    let mut pruned = value;
    prune(&mut pruned, &schema);
    match serde_json::from_value::<RunConfig>(pruned) {
        Ok(cfg) => {
            violations.extend(cfg.violations());
            if violations.is_empty() {
                return Ok(cfg);
            }
        }
        Err(e) if violations.is_empty() => violations.push(e.to_string()),
        Err(_) => {}
    }
    Err(CliError::config(violations))
}

pub fn parse_config(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::config(vec![format!("cannot read {}: {e}", path.display())]))?;
    parse_config_str(&text)
}
