//! Artifacts on disk: atomic writes, CSV tables, field dumps and the manifest
//! that lists every file with its SHA-256.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::grid::{Grid, ScalarField, VectorField};
use crate::{Error, Result};

/// Writes to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| Error::Io(std::io::Error::other("path has no file name")))?;
    let tmp = dir.join(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest round-trip representation; NaN and infinities spelled out.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "nan".into()
    } else if x.is_infinite() {
        if x > 0.0 { "inf".into() } else { "-inf".into() }
    } else {
        format!("{x:e}")
    }
}

/// Minimal CSV table. Cells never contain commas or quotes here, but labels
/// are quoted defensively when they do.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Csv {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        Csv { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn render(&self) -> String {
        let cell = |s: &String| {
            if s.contains([',', '"', '\n']) {
                format!("\"{}\"", s.replace('"', "\"\""))
            } else {
                s.clone()
            }
        };
        let mut out = String::new();
        for line in std::iter::once(&self.header).chain(&self.rows) {
            out.push_str(&line.iter().map(cell).collect::<Vec<_>>().join(","));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Writes artifacts into one directory and remembers them for the manifest.
#[derive(Debug)]
pub struct ArtifactWriter {
    pub dir: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl ArtifactWriter {
    pub fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(ArtifactWriter { dir: dir.to_path_buf(), artifacts: Vec::new() })
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf> {
        let path = self.dir.join(name);
        write_atomic(&path, bytes)?;
        self.artifacts.retain(|a| a.path != name);
        self.artifacts.push(Artifact { path: name.into(), sha256: sha256_hex(bytes), bytes: bytes.len() as u64 });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf> {
        let mut s = serde_json::to_string_pretty(value)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// One compact JSON document per line.
    pub fn write_json_lines<T: Serialize>(&mut self, name: &str, values: &[T]) -> Result<PathBuf> {
        let mut s = String::new();
        for v in values {
            s.push_str(&serde_json::to_string(v)?);
            s.push('\n');
        }
        self.write(name, s.as_bytes())
    }

    pub fn write_csv(&mut self, name: &str, csv: &Csv) -> Result<PathBuf> {
        self.write(name, csv.render().as_bytes())
    }

    pub fn dump_vector(&mut self, name: &str, v: &VectorField, grid: &Grid) -> Result<PathBuf> {
        let bytes = encode_dump(grid, FieldKind::FaceVector, &v.comp.iter().map(|c| c.as_slice()).collect::<Vec<_>>())?;
        self.write(name, &bytes)
    }

    pub fn dump_scalar(&mut self, name: &str, p: &ScalarField, grid: &Grid) -> Result<PathBuf> {
        let bytes = encode_dump(grid, FieldKind::CellScalar, &[p.data.as_slice()])?;
        self.write(name, &bytes)
    }

    /// Writes `manifest.json` listing every artifact written so far.
    pub fn finish(&mut self, mut manifest: Manifest) -> Result<Manifest> {
        let mut list = self.artifacts.clone();
        list.sort_by(|a, b| a.path.cmp(&b.path));
        manifest.artifacts = list;
        let path = self.dir.join(MANIFEST);
        let mut s = serde_json::to_string_pretty(&manifest)?;
        s.push('\n');
        write_atomic(&path, s.as_bytes())?;
        Ok(manifest)
    }
}

pub const MANIFEST: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub scenario: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub deterministic: bool,
    pub threads: usize,
    /// 0 success, 2 partial.
    pub status: i32,
    pub notes: Vec<String>,
    pub artifacts: Vec<Artifact>,
}

impl Manifest {
    pub fn new(scenario: &str, config: serde_json::Value, seed: u64, deterministic: bool, threads: usize) -> Self {
        Manifest {
            tool: "fsieq".into(),
            version: env!("CARGO_PKG_VERSION").into(),
            scenario: scenario.into(),
            config,
            seed,
            deterministic,
            threads,
            status: 0,
            notes: Vec::new(),
            artifacts: Vec::new(),
        }
    }
}

/// Recomputes the hash of every listed artifact; returns the mismatches.
pub fn verify_manifest(dir: &Path) -> Result<Vec<String>> {
    let m: Manifest = serde_json::from_slice(&fs::read(dir.join(MANIFEST))?)?;
    let mut bad = Vec::new();
    for a in &m.artifacts {
        match fs::read(dir.join(&a.path)) {
            Ok(b) if sha256_hex(&b) == a.sha256 => {}
            Ok(_) => bad.push(format!("{}: hash mismatch", a.path)),
            Err(e) => bad.push(format!("{}: {e}", a.path)),
        }
    }
    Ok(bad)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    FaceVector,
    CellScalar,
}

/// First line of a dump file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DumpHeader {
    pub format: String,
    pub kind: FieldKind,
    pub radius: f64,
    pub n: usize,
    pub h: f64,
    pub components: usize,
    /// Array shape of each component, x index fastest.
    pub dims: Vec<[usize; 3]>,
    pub byte_order: String,
}

const DUMP_FORMAT: &str = "fsieq-field-v1";

/// JSON header line, then every component as little-endian f64, x fastest.
pub fn encode_dump(grid: &Grid, kind: FieldKind, comps: &[&[f64]]) -> Result<Vec<u8>> {
    let dims: Vec<[usize; 3]> = match kind {
        FieldKind::FaceVector => (0..3).map(|d| grid.faces(d).dims).collect(),
        FieldKind::CellScalar => vec![grid.cells().dims],
    };
    if comps.len() != dims.len() || comps.iter().zip(&dims).any(|(c, d)| c.len() != d[0] * d[1] * d[2]) {
        return Err(Error::Dump("component sizes do not match the grid".into()));
    }
    let header = DumpHeader {
        format: DUMP_FORMAT.into(),
        kind,
        radius: grid.radius,
        n: grid.n,
        h: grid.h,
        components: dims.len(),
        dims,
        byte_order: "little".into(),
    };
    let mut out = serde_json::to_vec(&header)?;
    out.push(b'\n');
    for c in comps {
        for x in *c {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_dump(bytes: &[u8]) -> Result<(DumpHeader, Vec<Vec<f64>>)> {
    let nl = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Dump("missing header line".into()))?;
    let header: DumpHeader = serde_json::from_slice(&bytes[..nl])?;
    if header.format != DUMP_FORMAT {
        return Err(Error::Dump(format!("unknown format {}", header.format)));
    }
    let mut body = &bytes[nl + 1..];
    let mut comps = Vec::new();
    for d in &header.dims {
        let len = d[0] * d[1] * d[2];
        if body.len() < 8 * len {
            return Err(Error::Dump("truncated data".into()));
        }
        let (head, rest) = body.split_at(8 * len);
        comps.push(head.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8"))).collect());
        body = rest;
    }
    if !body.is_empty() {
        return Err(Error::Dump(format!("{} trailing bytes", body.len())));
    }
    Ok((header, comps))
}
