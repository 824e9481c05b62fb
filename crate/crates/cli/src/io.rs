//! Dataset and model files.
//!
//! Binary datasets (`.wrd`) are little-endian:
//!
//! ```text
//! magic "WRDS" | version u32 | d u64 | n u64
//! per pair: id u64 | k_src u64 | k_src*d f64 points (row-major) | k_src f64 weights
//!                  | k_tgt u64 | k_tgt*d f64 points | k_tgt f64 weights
//! ```
//!
//! JSON datasets carry the same fields with a top-level `version`. Model files
//! are JSON as well.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wassreg_core::measures::MeasurePair;
use wassreg_core::train::TrainedLocalModel;
use wassreg_core::{EmpiricalMeasure, Matrix, RegressionDataset};

use crate::error::{CliError, CliResult};

pub const MAGIC: [u8; 4] = *b"WRDS";
pub const DATASET_VERSION: u32 = 1;
pub const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Binary,
    Json,
}

impl Format {
    /// `.json` is JSON, anything else binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(e) if e.eq_ignore_ascii_case("json") => Format::Json,
            _ => Format::Binary,
        }
    }
}

pub fn encode_binary(data: &RegressionDataset) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&DATASET_VERSION.to_le_bytes());
    out.extend_from_slice(&(data.dim() as u64).to_le_bytes());
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for p in data.pairs() {
        out.extend_from_slice(&p.id.to_le_bytes());
        for m in [&p.source, &p.target] {
            out.extend_from_slice(&(m.len() as u64).to_le_bytes());
            for x in m.points().as_slice().iter().chain(m.weights()) {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize, what: &str) -> Result<&[u8], String> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(format!("truncated file: expected {what} at byte offset {}", self.pos)),
        }
    }

    fn u32(&mut self, what: &str) -> Result<u32, String> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64, String> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn len(&mut self, what: &str) -> Result<usize, String> {
        let at = self.pos;
        let v = self.u64(what)?;
        // every counted item needs at least one byte, so larger counts are corrupt
        usize::try_from(v)
            .ok()
            .filter(|&v| v <= self.bytes.len())
            .ok_or_else(|| format!("implausible {what} {v} at byte offset {at}"))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>, String> {
        let bytes = self.take(n.checked_mul(8).ok_or("size overflow")?, what)?;
        Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn measure(&mut self, d: usize, what: &str) -> Result<EmpiricalMeasure, String> {
        let at = self.pos;
        let k = self.len(&format!("{what} support size"))?;
        let points = self.f64s(k.checked_mul(d).ok_or("size overflow")?, &format!("{what} points"))?;
        let weights = self.f64s(k, &format!("{what} weights"))?;
        let m = Matrix::from_vec(k, d, points).map_err(|e| e.to_string())?;
        EmpiricalMeasure::new(m, weights).map_err(|e| format!("{what} at byte offset {at}: {e}"))
    }
}

pub fn decode_binary(bytes: &[u8]) -> Result<RegressionDataset, String> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err("not a wassreg dataset (bad magic)".into());
    }
    let version = r.u32("version")?;
    if version != DATASET_VERSION {
        return Err(format!("unsupported dataset version {version} (expected {DATASET_VERSION})"));
    }
    let d = r.len("dimension")?;
    let n = r.len("pair count")?;
    let mut pairs = Vec::with_capacity(n);
    for i in 0..n {
        let id = r.u64(&format!("id of pair {i}"))?;
        let source = r.measure(d, &format!("source of pair {i}"))?;
        let target = r.measure(d, &format!("target of pair {i}"))?;
        pairs.push(MeasurePair { id, source, target });
    }
    if r.pos != bytes.len() {
        return Err(format!("{} trailing bytes after byte offset {}", bytes.len() - r.pos, r.pos));
    }
    RegressionDataset::new(d, pairs).map_err(|e| e.to_string())
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct DatasetFile {
    version: u32,
    dim: usize,
    pairs: Vec<MeasurePair>,
}

#[derive(Deserialize)]
struct Versioned {
    version: u32,
}

/// Rejects unknown versions before the body is interpreted.
fn check_version(text: &str, expected: u32, kind: &str) -> Result<(), String> {
    let v: Versioned = serde_json::from_str(text).map_err(|e| e.to_string())?;
    if v.version != expected {
        return Err(format!("unsupported {kind} version {} (expected {expected})", v.version));
    }
    Ok(())
}

pub fn encode_json(data: &RegressionDataset) -> String {
    let file = DatasetFile { version: DATASET_VERSION, dim: data.dim(), pairs: data.pairs().to_vec() };
    serde_json::to_string_pretty(&file).expect("datasets serialize")
}

pub fn decode_json(text: &str) -> Result<RegressionDataset, String> {
    check_version(text, DATASET_VERSION, "dataset")?;
    let f = serde_json::from_str::<DatasetFile>(text).map_err(|e| e.to_string())?;
    RegressionDataset::new(f.dim, f.pairs).map_err(|e| e.to_string())
}

fn read(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

/// Refuses to replace an existing file unless `force`.
pub fn write(path: &Path, bytes: &[u8], force: bool) -> CliResult<()> {
    if !force && path.exists() {
        return Err(CliError::Validation(format!("{} exists; pass --force to overwrite", path.display())));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

pub fn load_dataset(path: &Path) -> CliResult<RegressionDataset> {
    let bytes = read(path)?;
    let parsed = match Format::from_path(path) {
        Format::Binary => decode_binary(&bytes),
        Format::Json => std::str::from_utf8(&bytes).map_err(|e| e.to_string()).and_then(decode_json),
    };
    parsed.map_err(|m| CliError::parse(path, m))
}

pub fn save_dataset(data: &RegressionDataset, path: &Path, force: bool) -> CliResult<()> {
    match Format::from_path(path) {
        Format::Binary => write(path, &encode_binary(data), force),
        Format::Json => write(path, encode_json(data).as_bytes(), force),
    }
}

/// A single measure in JSON (`{"points": [[..]], "weights": [..]}`).
pub fn load_measure(path: &Path) -> CliResult<EmpiricalMeasure> {
    let bytes = read(path)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::parse(path, e.to_string()))
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    version: u32,
    model: TrainedLocalModel,
}

pub fn encode_model(model: &TrainedLocalModel) -> String {
    serde_json::to_string_pretty(&ModelFile { version: MODEL_VERSION, model: model.clone() }).expect("models serialize")
}

pub fn decode_model(text: &str) -> Result<TrainedLocalModel, String> {
    check_version(text, MODEL_VERSION, "model")?;
    let m = serde_json::from_str::<ModelFile>(text).map_err(|e| e.to_string())?.model;
    m.map.validate().map_err(|e| e.to_string())?;
    if m.map.dim() != m.reference.dim() {
        return Err(format!("map acts on R^{} but the reference lives in R^{}", m.map.dim(), m.reference.dim()));
    }
    Ok(m)
}

pub fn load_model(path: &Path) -> CliResult<TrainedLocalModel> {
    let bytes = read(path)?;
    std::str::from_utf8(&bytes)
        .map_err(|e| e.to_string())
        .and_then(decode_model)
        .map_err(|m| CliError::parse(path, m))
}

pub fn save_model(model: &TrainedLocalModel, path: &Path, force: bool) -> CliResult<()> {
    write(path, encode_model(model).as_bytes(), force)
}

/// `out` for a single file, `stem.i.ext` for several.
pub fn indexed_path(out: &Path, i: usize, total: usize) -> PathBuf {
    if total == 1 {
        return out.to_path_buf();
    }
    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("model");
    let name = match out.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}.{i}.{ext}"),
        None => format!("{stem}.{i}"),
    };
    out.with_file_name(name)
}
