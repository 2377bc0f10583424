//! Ensemble persistence: one CSV per coordinate plus a JSON manifest.
//!
//! Each coordinate file has the header `particle,<t_0>,...,<t_K>` and one row
//! per particle. The particle index doubles as its noise stream id.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{Diagnostic, PathEnsemble};
use crate::error::{Error, Result};
use crate::table::fmt_f64;

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleManifest {
    pub version: u32,
    pub seed: u64,
    pub model_fingerprint: String,
    pub dim: usize,
    pub n_particles: usize,
    pub n_nodes: usize,
    pub files: Vec<String>,
    #[serde(default)]
    pub diagnostics: Vec<Diagnostic>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<serde_json::Value>,
}

impl EnsembleManifest {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let m: Self = serde_path_to_error::deserialize(de)
            .map_err(|e| Error::schema(e.path().to_string(), e.inner().to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != BUNDLE_VERSION {
            return Err(Error::schema("version", format!("unsupported version {}", self.version)));
        }
        if self.dim == 0 || self.n_particles == 0 || self.n_nodes == 0 {
            return Err(Error::schema("dim", "dim, n_particles and n_nodes must be positive"));
        }
        if self.files.len() != self.dim {
            return Err(Error::schema(
                "files",
                format!("expected {} files, found {}", self.dim, self.files.len()),
            ));
        }
        for (i, f) in self.files.iter().enumerate() {
            let p = Path::new(f);
            let plain = matches!(p.components().collect::<Vec<_>>()[..], [std::path::Component::Normal(_)]);
            if !plain || f.contains(['/', '\\']) {
                return Err(Error::schema(format!("files[{i}]"), "must be a plain file name"));
            }
        }
        Ok(())
    }
}

/// One coordinate as CSV text.
pub fn coordinate_csv(e: &PathEnsemble, coord: usize) -> String {
    let mut s = String::from("particle");
    for &t in e.grid() {
        s.push(',');
        s.push_str(&fmt_f64(t));
    }
    s.push('\n');
    for p in 0..e.n_particles() {
        s.push_str(&p.to_string());
        for k in 0..e.n_nodes() {
            s.push(',');
            s.push_str(&fmt_f64(e.state(k, p)[coord]));
        }
        s.push('\n');
    }
    s
}

/// Parses a coordinate file into `(grid, rows)`, one row per particle.
pub fn parse_coordinate_csv(text: &str) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| Error::Parse(e.to_string()))?.clone();
    if header.get(0) != Some("particle") {
        return Err(Error::Parse("first header cell must be `particle`".into()));
    }
    let grid = header
        .iter()
        .skip(1)
        .map(|f| f.parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Error::Parse(format!("header: {e}")))?;
    if grid.is_empty() {
        return Err(Error::Parse("no time columns".into()));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(e.to_string()))?;
        let id: usize = rec
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| Error::Parse(format!("row {}: bad particle id", i + 1)))?;
        if id != i {
            return Err(Error::Parse(format!("row {}: particle ids must be 0, 1, ...", i + 1)));
        }
        let vals = rec
            .iter()
            .skip(1)
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| Error::Parse(format!("row {}: {e}", i + 1)))?;
        if vals.len() != grid.len() {
            return Err(Error::Parse(format!("row {}: wrong number of values", i + 1)));
        }
        rows.push(vals);
    }
    Ok((grid, rows))
}

/// Writes `<stem>_x<k>.csv` files and `<stem>_manifest.json` into `dir`.
pub fn write_bundle(
    e: &PathEnsemble,
    dir: &Path,
    stem: &str,
    config: Option<serde_json::Value>,
) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut files = Vec::new();
    for c in 0..e.dim() {
        let name = format!("{stem}_x{}.csv", c + 1);
        fs::write(dir.join(&name), coordinate_csv(e, c))?;
        files.push(name);
    }
    let manifest = EnsembleManifest {
        version: BUNDLE_VERSION,
        seed: e.seed,
        model_fingerprint: e.model_fingerprint.clone(),
        dim: e.dim(),
        n_particles: e.n_particles(),
        n_nodes: e.n_nodes(),
        files,
        diagnostics: e.diagnostics.clone(),
        config,
    };
    let path = dir.join(format!("{stem}_manifest.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Parse(e.to_string()))?;
    fs::write(&path, text)?;
    Ok(path)
}

/// Loads a bundle from its manifest path.
pub fn read_bundle(manifest_path: &Path) -> Result<PathEnsemble> {
    let man = EnsembleManifest::from_json(&fs::read_to_string(manifest_path)?)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let (n, m, k) = (man.n_particles, man.dim, man.n_nodes);
    let mut states = vec![0.0; k * n * m];
    let mut grid = Vec::new();
    for (c, f) in man.files.iter().enumerate() {
        let (g, rows) = parse_coordinate_csv(&fs::read_to_string(dir.join(f))?)?;
        if g.len() != k || rows.len() != n {
            return Err(Error::ShapeMismatch(format!("{f} does not match the manifest")));
        }
        if c > 0 && g != grid {
            return Err(Error::GridMismatch(format!("{f} has a different time grid")));
        }
        grid = g;
        for (p, row) in rows.iter().enumerate() {
            for (node, &x) in row.iter().enumerate() {
                states[(node * n + p) * m + c] = x;
            }
        }
    }
    let mut e = PathEnsemble::from_parts(grid, m, n, states, man.seed, man.model_fingerprint)?;
    e.diagnostics = man.diagnostics;
    Ok(e)
}
