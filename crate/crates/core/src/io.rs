//! File formats: NSF1 binary velocity fields, JSON manifests for ensembles and
//! trajectories, and CSV curves.
//!
//! An NSF1 file is the magic `NSF1`, a little-endian `u32` format version, a
//! little-endian `u32` header length, a compact JSON header and then every component
//! as little-endian `f64` in grid order.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ensemble::{Ensemble, MeasureSpec};
use crate::error::{Error, Result};
use crate::field::VelocityField;
use crate::grid::Grid;

pub const NSF_MAGIC: &[u8; 4] = b"NSF1";
pub const NSF_VERSION: u32 = 1;
pub const MANIFEST_VERSION: u32 = 1;
pub const CODE_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Code version and configuration hash stamped on every output.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub code_version: String,
    pub config_hash: String,
}

impl Provenance {
    pub fn new(config_hash: impl Into<String>) -> Self {
        Provenance {
            code_version: CODE_VERSION.to_string(),
            config_hash: config_hash.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NsfHeader {
    pub dim: usize,
    pub n: usize,
    pub time: f64,
    pub nu: f64,
    pub components: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

/// Serialize `field` as NSF1.
pub fn encode_nsf(field: &VelocityField, provenance: Option<&Provenance>) -> Result<Vec<u8>> {
    let g = field.grid();
    let header = NsfHeader {
        dim: g.dim(),
        n: g.n(),
        time: field.time(),
        nu: field.nu(),
        components: g.dim(),
        provenance: provenance.cloned(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = Vec::with_capacity(12 + json.len() + 8 * g.len() * g.dim());
    out.extend_from_slice(NSF_MAGIC);
    out.extend_from_slice(&NSF_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for c in field.components() {
        for v in c {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

/// Parse an NSF1 byte buffer.
pub fn decode_nsf(bytes: &[u8]) -> Result<(VelocityField, Option<Provenance>)> {
    if bytes.len() < 12 || &bytes[..4] != NSF_MAGIC {
        return Err(Error::Format("missing NSF1 magic".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != NSF_VERSION {
        return Err(Error::Format(format!("unsupported NSF version {version}")));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = bytes
        .get(12..12 + hlen)
        .ok_or_else(|| Error::Format("truncated NSF header".into()))?;
    let header: NsfHeader = serde_json::from_slice(body)
        .map_err(|e| Error::Format(format!("bad NSF header: {e}")))?;
    let grid = Grid::new(header.dim, header.n).map_err(|e| Error::Format(e.to_string()))?;
    if header.components != header.dim {
        return Err(Error::Format("component count differs from dimension".into()));
    }
    let data = &bytes[12 + hlen..];
    if data.len() != 8 * grid.len() * header.components {
        return Err(Error::Format(format!(
            "expected {} payload bytes, found {}",
            8 * grid.len() * header.components,
            data.len()
        )));
    }
    let comps: Vec<Vec<f64>> = data
        .chunks_exact(8 * grid.len())
        .map(|c| {
            c.chunks_exact(8)
                .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                .collect()
        })
        .collect();
    let field = VelocityField::new(grid, comps, header.time, header.nu)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok((field, header.provenance))
}

pub fn write_nsf(path: &Path, field: &VelocityField, provenance: Option<&Provenance>) -> Result<()> {
    let bytes = encode_nsf(field, provenance)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_nsf(path: &Path) -> Result<(VelocityField, Option<Provenance>)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_nsf(&bytes)
}

fn to_pretty<T: Serialize>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    fs::write(path, to_pretty(v)?)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let s = fs::read_to_string(path)?;
    serde_json::from_str(&s).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

/// Index of an ensemble directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub format: String,
    pub format_version: u32,
    pub dim: usize,
    pub n: usize,
    pub time: f64,
    pub nu: f64,
    pub member_files: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<MeasureSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub provenance: Provenance,
}

pub const ENSEMBLE_FORMAT: &str = "nsstat-ensemble";
pub const TRAJECTORY_FORMAT: &str = "nsstat-trajectory";

impl EnsembleManifest {
    pub fn encode(&self) -> Result<String> {
        to_pretty(self)
    }

    pub fn decode(s: &str) -> Result<Self> {
        let m: EnsembleManifest =
            serde_json::from_str(s).map_err(|e| Error::Format(format!("bad manifest: {e}")))?;
        if m.format != ENSEMBLE_FORMAT || m.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!(
                "unsupported manifest {} v{}",
                m.format, m.format_version
            )));
        }
        Ok(m)
    }
}

fn member_file(j: usize) -> String {
    format!("member_{j:04}.nsf")
}

/// Write `ens` into `dir` as `manifest.json` plus one NSF1 file per member.
pub fn write_ensemble(dir: &Path, ens: &Ensemble, provenance: &Provenance) -> Result<EnsembleManifest> {
    fs::create_dir_all(dir)?;
    let member_files: Vec<String> = (0..ens.len()).map(member_file).collect();
    for (u, name) in ens.members().iter().zip(&member_files) {
        write_nsf(&dir.join(name), u, Some(provenance))?;
    }
    let manifest = EnsembleManifest {
        format: ENSEMBLE_FORMAT.to_string(),
        format_version: MANIFEST_VERSION,
        dim: ens.grid().dim(),
        n: ens.grid().n(),
        time: ens.time(),
        nu: ens.nu(),
        member_files,
        spec: ens.spec().cloned(),
        seed: ens.spec().map(|s| s.seed),
        provenance: provenance.clone(),
    };
    fs::write(dir.join("manifest.json"), manifest.encode()?)?;
    Ok(manifest)
}

pub fn read_ensemble(dir: &Path) -> Result<(Ensemble, EnsembleManifest)> {
    let manifest = EnsembleManifest::decode(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let grid = Grid::new(manifest.dim, manifest.n).map_err(|e| Error::Format(e.to_string()))?;
    let members = manifest
        .member_files
        .iter()
        .map(|name| read_nsf(&dir.join(name)).map(|(u, _)| u))
        .collect::<Result<Vec<_>>>()?;
    for u in &members {
        if *u.grid() != grid || u.time() != manifest.time || u.nu() != manifest.nu {
            return Err(Error::Format("member metadata differs from the manifest".into()));
        }
    }
    let mut ens = Ensemble::new(members)?;
    if let Some(s) = &manifest.spec {
        ens = ens.with_spec(s.clone());
    }
    Ok((ens, manifest))
}

/// Index of a trajectory directory: one ensemble subdirectory per snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryIndex {
    pub format: String,
    pub format_version: u32,
    /// The configuration that produced the run, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
    pub times: Vec<f64>,
    pub files: Vec<String>,
    /// Per-member energy records at the snapshot times.
    pub energy: Vec<Vec<TrajectoryEnergy>>,
    pub provenance: Provenance,
}

/// Energy of one member at a snapshot; dissipation is present when the writer was given it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryEnergy {
    pub t: f64,
    pub energy: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dissipation: Option<f64>,
}

impl TrajectoryIndex {
    pub fn encode(&self) -> Result<String> {
        to_pretty(self)
    }

    pub fn decode(s: &str) -> Result<Self> {
        let m: TrajectoryIndex =
            serde_json::from_str(s).map_err(|e| Error::Format(format!("bad index: {e}")))?;
        if m.format != TRAJECTORY_FORMAT || m.format_version != MANIFEST_VERSION {
            return Err(Error::Format(format!("unsupported index {} v{}", m.format, m.format_version)));
        }
        if m.times.len() != m.files.len() {
            return Err(Error::Format("index times and snapshots differ in length".into()));
        }
        Ok(m)
    }
}

/// Streams snapshots of an ensemble run into a trajectory directory.
pub struct TrajectoryWriter {
    dir: PathBuf,
    provenance: Provenance,
    config: Option<serde_json::Value>,
    times: Vec<f64>,
    files: Vec<String>,
    energy: Vec<Vec<TrajectoryEnergy>>,
}

impl TrajectoryWriter {
    pub fn create(dir: &Path, provenance: Provenance) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(TrajectoryWriter {
            dir: dir.to_path_buf(),
            provenance,
            config: None,
            times: Vec::new(),
            files: Vec::new(),
            energy: Vec::new(),
        })
    }

    /// Record the run configuration in the index.
    pub fn with_config(mut self, config: serde_json::Value) -> Self {
        self.config = Some(config);
        self
    }

    pub fn push(&mut self, ens: &Ensemble, dissipation: Option<&[f64]>) -> Result<()> {
        if dissipation.is_some_and(|d| d.len() != ens.len()) {
            return Err(Error::Config("one dissipation value per member is required".into()));
        }
        if !self.energy.is_empty() && self.energy.len() != ens.len() {
            return Err(Error::GridMismatch("ensemble size changed within a trajectory".into()));
        }
        let name = format!("snap_{:04}", self.files.len());
        write_ensemble(&self.dir.join(&name), ens, &self.provenance)?;
        if self.energy.is_empty() {
            self.energy = vec![Vec::new(); ens.len()];
        }
        for (j, u) in ens.members().iter().enumerate() {
            self.energy[j].push(TrajectoryEnergy {
                t: ens.time(),
                energy: u.energy(),
                dissipation: dissipation.map(|d| d[j]),
            });
        }
        self.times.push(ens.time());
        self.files.push(name);
        Ok(())
    }

    pub fn finish(self) -> Result<TrajectoryIndex> {
        let index = TrajectoryIndex {
            format: TRAJECTORY_FORMAT.to_string(),
            format_version: MANIFEST_VERSION,
            config: self.config,
            times: self.times,
            files: self.files,
            energy: self.energy,
            provenance: self.provenance,
        };
        fs::write(self.dir.join("index.json"), index.encode()?)?;
        Ok(index)
    }
}

pub fn read_trajectory_index(dir: &Path) -> Result<TrajectoryIndex> {
    TrajectoryIndex::decode(&fs::read_to_string(dir.join("index.json"))?)
}

/// Load snapshot `i` of a trajectory directory.
pub fn read_trajectory_snapshot(dir: &Path, index: &TrajectoryIndex, i: usize) -> Result<Ensemble> {
    let name = index
        .files
        .get(i)
        .ok_or_else(|| Error::Format(format!("snapshot {i} not in index")))?;
    Ok(read_ensemble(&dir.join(name))?.0)
}

/// Write a CSV file whose first line is a `#` comment carrying the provenance.
pub fn write_csv(path: &Path, provenance: &Provenance, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(
        f,
        "# nsstat {} config_hash={}",
        provenance.code_version, provenance.config_hash
    )?;
    let mut w = csv::Writer::from_writer(f);
    let to_io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(header).map_err(to_io)?;
    for r in rows {
        w.write_record(r).map_err(to_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Header and rows of a CSV file written by [`write_csv`].
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::Format(e.to_string()))?;
    let header = r
        .headers()
        .map_err(|e| Error::Format(e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|x| x.iter().map(String::from).collect())
                .map_err(|e| Error::Format(e.to_string()))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((header, rows))
}

/// Shortest round-trip decimal representation.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}
