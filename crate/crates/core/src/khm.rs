//! Kármán–Howarth–Monin budget for isotropic test tensors
//! `σ(h) = ω₁(|h|) I + ω₂(|h|) ĥ⊗ĥ`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::grid::unit_sphere_area;
use crate::moments::{Cube, Mat, Moments, PairStats};
use crate::quadrature::{gauss_legendre, trapezoid};
use crate::structure::{BallQuadrature, DirectionSet};

/// Compactly supported radial profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum RadialProfile {
    Zero,
    /// `ω(s) = exp(1 - 1/(1 - (s/s₀)²))` for `s < s₀`, else 0.
    Bump { s0: f64 },
}

impl RadialProfile {
    pub fn support(&self) -> f64 {
        match *self {
            RadialProfile::Zero => 0.0,
            RadialProfile::Bump { s0 } => s0,
        }
    }

    /// `(ω, ω', ω'')` at `s ≥ 0`.
    pub fn eval(&self, s: f64) -> [f64; 3] {
        let RadialProfile::Bump { s0 } = *self else {
            return [0.0; 3];
        };
        let q = s / s0;
        if q >= 1.0 {
            return [0.0; 3];
        }
        let a = 1.0 - q * q;
        let w = (1.0 - 1.0 / a).exp();
        let p1 = -2.0 * q / (a * a);
        let p2 = -2.0 / (a * a) - 8.0 * q * q / (a * a * a);
        [w, w * p1 / s0, w * (p1 * p1 + p2) / (s0 * s0)]
    }

    fn is_zero(&self) -> bool {
        matches!(self, RadialProfile::Zero)
    }
}

/// `σ(h) = ω₁(|h|) I + ω₂(|h|) ĥ⊗ĥ` with analytic derivatives.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestTensor {
    pub omega1: RadialProfile,
    pub omega2: RadialProfile,
}

impl TestTensor {
    pub fn new(omega1: RadialProfile, omega2: RadialProfile) -> Result<Self> {
        for p in [omega1, omega2] {
            if let RadialProfile::Bump { s0 } = p {
                if !(s0 > 0.0) || !s0.is_finite() {
                    return Err(Error::Config(format!("bump radius s0 = {s0} must be > 0")));
                }
                if s0 >= PI {
                    return Err(Error::Domain(format!(
                        "test tensor support s0 = {s0} must lie inside |h| < π"
                    )));
                }
            }
        }
        Ok(TestTensor { omega1, omega2 })
    }

    /// `σ = ω I`.
    pub fn trace(s0: f64) -> Result<Self> {
        TestTensor::new(RadialProfile::Bump { s0 }, RadialProfile::Zero)
    }

    /// `σ = ω ĥ⊗ĥ`.
    pub fn longitudinal(s0: f64) -> Result<Self> {
        TestTensor::new(RadialProfile::Zero, RadialProfile::Bump { s0 })
    }

    pub fn support(&self) -> f64 {
        self.omega1.support().max(self.omega2.support())
    }

    fn unit(h: &[f64; 3]) -> (f64, [f64; 3]) {
        let r = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
        if r == 0.0 {
            (0.0, [0.0; 3])
        } else {
            (r, [h[0] / r, h[1] / r, h[2] / r])
        }
    }

    pub fn sigma(&self, h: &[f64; 3]) -> Mat {
        let (r, n) = Self::unit(h);
        let w1 = self.omega1.eval(r)[0];
        let w2 = self.omega2.eval(r)[0];
        let mut s = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                s[i][j] = w2 * n[i] * n[j] + if i == j { w1 } else { 0.0 };
            }
        }
        s
    }

    /// `∂_{h_k} σ_ij` stored as `[i][j][k]`, for `h ≠ 0`.
    pub fn grad(&self, h: &[f64; 3]) -> Cube {
        let (r, n) = Self::unit(h);
        let [_, a1, _] = self.omega1.eval(r);
        let [b0, b1, _] = self.omega2.eval(r);
        let c = b1 - 2.0 * b0 / r;
        let e = b0 / r;
        let delta = |i: usize, j: usize| if i == j { 1.0 } else { 0.0 };
        let mut g = [[[0.0; 3]; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    g[i][j][k] = a1 * n[k] * delta(i, j)
                        + c * n[i] * n[j] * n[k]
                        + e * (delta(i, k) * n[j] + delta(j, k) * n[i]);
                }
            }
        }
        g
    }

    /// `Δ_h σ_ij` in `dim` dimensions, for `h ≠ 0`.
    pub fn laplacian(&self, h: &[f64; 3], dim: usize) -> Mat {
        let (r, n) = Self::unit(h);
        let d = dim as f64;
        let [_, a1, a2] = self.omega1.eval(r);
        let [b0, b1, b2] = self.omega2.eval(r);
        let iso = a2 + (d - 1.0) * a1 / r + 2.0 * b0 / (r * r);
        let dir = b2 + (d - 1.0) * b1 / r - 2.0 * d * b0 / (r * r);
        let mut l = [[0.0; 3]; 3];
        for i in 0..dim {
            for j in 0..dim {
                l[i][j] = dir * n[i] * n[j] + if i == j { iso } else { 0.0 };
            }
        }
        l
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KhmForm {
    Full,
    Trace,
    Longitudinal,
}

/// h-quadrature settings: Gauss–Legendre radii on the tensor support times directions.
#[derive(Clone, Debug)]
pub struct KhmQuadrature {
    pub radial_nodes: usize,
    pub dirs: DirectionSet,
}

impl KhmQuadrature {
    pub fn new(dim: usize, radial_nodes: usize, n_dirs: usize) -> Result<Self> {
        if radial_nodes == 0 {
            return Err(Error::Config("radial_nodes must be positive".into()));
        }
        Ok(KhmQuadrature {
            radial_nodes,
            dirs: DirectionSet::new(dim, n_dirs)?,
        })
    }

    /// 16 radial nodes and 64 directions.
    pub fn standard(dim: usize) -> Self {
        KhmQuadrature::new(dim, 16, 64).expect("valid defaults")
    }
}

/// Terms of the budget, each carrying the sign it has in the relation, so that
/// `residual = corr_tau + corr_0 + cubic - viscous`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KHMBudget {
    pub form: KhmForm,
    pub omega: RadialProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub omega2: Option<RadialProfile>,
    pub nu: f64,
    pub tau: f64,
    pub terms: BTreeMap<String, f64>,
    pub residual: f64,
    pub scale: f64,
}

impl KHMBudget {
    /// `|residual| / scale`, zero for an all-zero budget.
    pub fn relative(&self) -> f64 {
        if self.scale == 0.0 {
            0.0
        } else {
            self.residual.abs() / self.scale
        }
    }

    pub fn term(&self, name: &str) -> f64 {
        self.terms.get(name).copied().unwrap_or(f64::NAN)
    }
}

struct Node {
    h: [f64; 3],
    n: [f64; 3],
    r: f64,
    w: f64,
    sigma: Mat,
    grad: Cube,
    lap: Mat,
}

fn contract2(a: &Mat, b: &Mat) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            s += a[i][j] * b[i][j];
        }
    }
    s
}

fn contract3(a: &Cube, b: &Cube) -> f64 {
    let mut s = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                s += a[i][j][k] * b[i][j][k];
            }
        }
    }
    s
}

#[derive(Clone, Copy, Default)]
struct Snapshot {
    corr: f64,
    cubic: f64,
    viscous: f64,
    viscous_alt: f64,
    m2_tilde: f64,
    v_tilde: f64,
}

fn snapshot_terms(m: &Moments, nodes: &[Node], nu: f64, profile: &RadialProfile, dim: usize) -> Snapshot {
    let area = unit_sphere_area(dim);
    let parts: Vec<Snapshot> = nodes
        .par_iter()
        .map(|nd| {
            let st = m.eval(&nd.h, true);
            let t = st.t.expect("cubic moments checked");
            let w_rad = profile.eval(nd.r)[0];
            Snapshot {
                corr: nd.w * contract2(&st.r, &nd.sigma),
                cubic: nd.w * 0.5 * contract3(&t, &nd.grad),
                viscous: -nd.w * nu * contract2(&st.d, &nd.lap),
                viscous_alt: -nd.w * 2.0 * nu * contract2(&st.g, &nd.sigma),
                m2_tilde: nd.w / area * PairStats::quad_form(&st.r, &nd.n) * w_rad,
                v_tilde: nd.w / area * PairStats::quad_form(&st.g, &nd.n) * w_rad,
            }
        })
        .collect();
    parts.iter().fold(Snapshot::default(), |a, b| Snapshot {
        corr: a.corr + b.corr,
        cubic: a.cubic + b.cubic,
        viscous: a.viscous + b.viscous,
        viscous_alt: a.viscous_alt + b.viscous_alt,
        m2_tilde: a.m2_tilde + b.m2_tilde,
        v_tilde: a.v_tilde + b.v_tilde,
    })
}

fn nodes_for(tensor: &TestTensor, quad: &KhmQuadrature, dim: usize) -> Vec<Node> {
    let q = BallQuadrature::new(tensor.support(), quad.radial_nodes, &quad.dirs);
    (0..q.len())
        .map(|i| {
            let h = q.nodes[i];
            Node {
                h,
                n: q.units[i],
                r: q.radii[i],
                w: q.weights[i],
                sigma: tensor.sigma(&h),
                grad: tensor.grad(&h),
                lap: tensor.laplacian(&h, dim),
            }
        })
        .collect()
}

fn check_form(tensor: &TestTensor, form: KhmForm) -> Result<RadialProfile> {
    match form {
        KhmForm::Full => Ok(if tensor.omega1.is_zero() { tensor.omega2 } else { tensor.omega1 }),
        KhmForm::Trace if tensor.omega2.is_zero() => Ok(tensor.omega1),
        KhmForm::Longitudinal if tensor.omega1.is_zero() => Ok(tensor.omega2),
        _ => Err(Error::Config(format!(
            "{form:?} form needs a tensor of matching shape"
        ))),
    }
}

/// Budget over the time-ordered snapshots `moments` on `[t₀, τ]`; every snapshot must
/// carry cubic moments.
///
/// Terms: `corr_tau = ∫ ΣR_ij(τ,h) σ_ij dh`, `corr_0` the negated value at `t₀`,
/// `cubic = ½ ∫∫ ΣT_ijk ∂_kσ_ij dh dt`, `viscous = -ν ∫∫ ΣD_ij Δσ_ij dh dt`, and
/// `viscous_alt = -2ν ∫∫ ΣG_ij σ_ij dh dt`. The longitudinal form reports every term with
/// the opposite sign and adds the radial integrals `m2_tilde_tau`, `m2_tilde_0` and
/// `v_tilde` of `⨍ ΣR_ij n_i n_j` and `∫⨍ ΣG_ij n_i n_j dt` against `r^{d-1} ω(r)`.
pub fn khm_budget(
    moments: &[Moments],
    tensor: &TestTensor,
    nu: f64,
    form: KhmForm,
    quad: &KhmQuadrature,
) -> Result<KHMBudget> {
    let profile = check_form(tensor, form)?;
    let first = moments
        .first()
        .ok_or_else(|| Error::Config("no snapshots".into()))?;
    if !(nu >= 0.0) {
        return Err(Error::Config("nu must be ≥ 0".into()));
    }
    if tensor.support() >= PI {
        return Err(Error::Domain("test tensor support exceeds the half period".into()));
    }
    let dim = first.grid().dim();
    if quad.dirs.dim() != dim {
        return Err(Error::GridMismatch("quadrature and grid dimensions differ".into()));
    }
    for m in moments {
        first.grid().check_same(m.grid())?;
        if !m.has_cubic() {
            return Err(Error::Config("KHM budget needs cubic moments".into()));
        }
    }
    let t: Vec<f64> = moments.iter().map(|m| m.time()).collect();
    if t.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("snapshot times must increase".into()));
    }
    let nodes = nodes_for(tensor, quad, dim);
    let snaps: Vec<Snapshot> = moments
        .iter()
        .map(|m| snapshot_terms(m, &nodes, nu, &profile, dim))
        .collect();
    let series = |f: fn(&Snapshot) -> f64| -> f64 {
        let y: Vec<f64> = snaps.iter().map(f).collect();
        trapezoid(&t, &y)
    };
    let last = snaps.last().unwrap();
    let sign = if form == KhmForm::Longitudinal { -1.0 } else { 1.0 };
    let mut terms = BTreeMap::new();
    terms.insert("corr_tau".to_string(), sign * last.corr);
    terms.insert("corr_0".to_string(), -sign * snaps[0].corr);
    terms.insert("cubic".to_string(), sign * series(|s| s.cubic));
    terms.insert("viscous".to_string(), sign * series(|s| s.viscous));
    terms.insert("viscous_alt".to_string(), sign * series(|s| s.viscous_alt));
    if form == KhmForm::Longitudinal {
        terms.insert("m2_tilde_tau".to_string(), last.m2_tilde);
        terms.insert("m2_tilde_0".to_string(), snaps[0].m2_tilde);
        terms.insert("v_tilde".to_string(), series(|s| s.v_tilde));
    }
    let main = ["corr_tau", "corr_0", "cubic", "viscous"].map(|k| terms[k]);
    let residual = main[0] + main[1] + main[2] - main[3];
    let scale = main.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    Ok(KHMBudget {
        form,
        omega: profile,
        omega2: (form == KhmForm::Full && !tensor.omega1.is_zero()).then_some(tensor.omega2),
        nu,
        tau: *t.last().unwrap(),
        terms,
        residual,
        scale,
    })
}

/// [`khm_budget`] on time-ordered ensembles.
pub fn khm_budget_ensembles(
    ensembles: &[Ensemble],
    tensor: &TestTensor,
    nu: f64,
    form: KhmForm,
    quad: &KhmQuadrature,
) -> Result<KHMBudget> {
    let moments = ensembles
        .iter()
        .map(|e| Moments::new(e, true))
        .collect::<Result<Vec<_>>>()?;
    khm_budget(&moments, tensor, nu, form, quad)
}

/// Both sides of the cubic rearrangement
/// `-2 Σ∫∫ u_i(x) u_j(x+h) (u_k(x) - u_k(x+h)) ∂_kσ_ij = Σ∫∫ (u(x)-u(x+h))_i (·)_j (·)_k ∂_kσ_ij`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CubicIdentity {
    pub lhs: f64,
    pub rhs: f64,
    /// `|lhs - rhs|` relative to the larger side, or to a Cauchy–Schwarz scale when both vanish.
    pub defect: f64,
}

/// Evaluates both sides by explicit shifts of every member.
pub fn cubic_identity_check(ensemble: &Ensemble, tensor: &TestTensor, quad: &KhmQuadrature) -> Result<CubicIdentity> {
    let g = *ensemble.grid();
    let dim = g.dim();
    if quad.dirs.dim() != dim {
        return Err(Error::GridMismatch("quadrature and grid dimensions differ".into()));
    }
    let nodes = nodes_for(tensor, quad, dim);
    let dv = g.cell_volume();
    let per_member: Vec<(f64, f64, f64)> = ensemble
        .members()
        .par_iter()
        .map(|u| {
            let mut acc = (0.0, 0.0, 0.0);
            for nd in &nodes {
                let v = u.shift(nd.h);
                let mut lhs = 0.0;
                let mut rhs = 0.0;
                let mut bound = 0.0;
                for idx in 0..g.len() {
                    let a = u.value(idx);
                    let b = v.value(idx);
                    let e = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
                    for i in 0..dim {
                        for j in 0..dim {
                            for k in 0..dim {
                                let s = nd.grad[i][j][k];
                                lhs += -2.0 * a[i] * b[j] * e[k] * s;
                                rhs += e[i] * e[j] * e[k] * s;
                                bound += (a[i] * b[j] * e[k] * s).abs();
                            }
                        }
                    }
                }
                acc.0 += nd.w * lhs * dv;
                acc.1 += nd.w * rhs * dv;
                acc.2 += nd.w * bound * dv;
            }
            acc
        })
        .collect();
    let nm = ensemble.len() as f64;
    let lhs = per_member.iter().map(|p| p.0).sum::<f64>() / nm;
    let rhs = per_member.iter().map(|p| p.1).sum::<f64>() / nm;
    let bound = per_member.iter().map(|p| p.2).sum::<f64>() / nm;
    let denom = lhs.abs().max(rhs.abs()).max(1e-9 * bound);
    let defect = if denom == 0.0 { 0.0 } else { (lhs - rhs).abs() / denom };
    Ok(CubicIdentity { lhs, rhs, defect })
}

/// `∫₀^{s₀} f(r) r^{d-1} ω(r) dr` by Gauss–Legendre, for oracles of the radial terms.
pub fn radial_integral(profile: &RadialProfile, dim: usize, nodes: usize, f: impl Fn(f64) -> f64) -> f64 {
    let (rs, ws) = gauss_legendre(nodes, 0.0, profile.support());
    rs.iter()
        .zip(&ws)
        .map(|(&r, &w)| w * f(r) * r.powi(dim as i32 - 1) * profile.eval(r)[0])
        .sum()
}
