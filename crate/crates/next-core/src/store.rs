//! Checkpoint, adapter, and manifest I/O.
//!
//! The on-disk container mirrors the safetensors layout: an 8-byte
//! little-endian header length, a UTF-8 JSON header mapping tensor names to
//! dtype/shape/offsets, then contiguous little-endian payloads. Checkpoints
//! store f32 payloads for compatibility with common exports; datasets and
//! predictor bundles use f64 so their round trips preserve every bit.
//! Entries are laid out in lexicographic name order, which makes writes
//! reproducible byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::linalg::Matrix;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error in {path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("manifest steps not strictly increasing: {prev} then {next}")]
    NonMonotonicSteps { prev: u64, next: u64 },
    #[error("shape mismatch for '{name}': expected {expected:?}, got {got:?}")]
    ShapeMismatch {
        name: String,
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("adapter targets '{0}' which is not a tensor in the base checkpoint")]
    MissingTarget(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("duplicate entry name '{0}'")]
    DuplicateName(String),
}

fn io_err(path: &Path, source: std::io::Error) -> StoreError {
    StoreError::Io { path: path.to_path_buf(), source }
}

fn format_err(path: &Path, message: impl Into<String>) -> StoreError {
    StoreError::Format { path: path.to_path_buf(), message: message.into() }
}

// ---- checkpoint -----------------------------------------------------------

/// Named-tensor snapshot at one training step. 2-D arrays live in `tensors`
/// and take part in delta analysis; 1-D arrays (biases, norms) are carried
/// in `passthrough` and never decomposed. Iteration order is lexicographic.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Checkpoint {
    pub step: u64,
    tensors: BTreeMap<String, Matrix>,
    passthrough: BTreeMap<String, Vec<f64>>,
}

impl Checkpoint {
    pub fn new(step: u64) -> Self {
        Checkpoint { step, ..Default::default() }
    }

    pub fn insert_tensor(&mut self, name: impl Into<String>, m: Matrix) -> Result<(), StoreError> {
        let name = name.into();
        if self.tensors.contains_key(&name) || self.passthrough.contains_key(&name) {
            return Err(StoreError::DuplicateName(name));
        }
        self.tensors.insert(name, m);
        Ok(())
    }

    pub fn insert_passthrough(&mut self, name: impl Into<String>, v: Vec<f64>) -> Result<(), StoreError> {
        let name = name.into();
        if self.tensors.contains_key(&name) || self.passthrough.contains_key(&name) {
            return Err(StoreError::DuplicateName(name));
        }
        self.passthrough.insert(name, v);
        Ok(())
    }

    pub fn tensor(&self, name: &str) -> Option<&Matrix> {
        self.tensors.get(name)
    }

    pub fn tensors(&self) -> impl Iterator<Item = (&String, &Matrix)> {
        self.tensors.iter()
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn passthrough(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.passthrough.iter()
    }

    pub fn n_tensors(&self) -> usize {
        self.tensors.len()
    }

    /// None when both checkpoints carry the same names and shapes,
    /// otherwise a human-readable description of the first difference.
    pub fn schema_diff(&self, other: &Checkpoint) -> Option<String> {
        for (name, m) in &self.tensors {
            match other.tensors.get(name) {
                None => return Some(format!("tensor '{name}' missing from counterpart")),
                Some(o) if o.shape() != m.shape() => {
                    return Some(format!(
                        "tensor '{name}' shape {:?} vs {:?}",
                        m.shape(),
                        o.shape()
                    ))
                }
                _ => {}
            }
        }
        if let Some(name) = other.tensors.keys().find(|n| !self.tensors.contains_key(*n)) {
            return Some(format!("unexpected tensor '{name}'"));
        }
        for (name, v) in &self.passthrough {
            match other.passthrough.get(name) {
                None => return Some(format!("passthrough '{name}' missing from counterpart")),
                Some(o) if o.len() != v.len() => {
                    return Some(format!("passthrough '{name}' length {} vs {}", v.len(), o.len()))
                }
                _ => {}
            }
        }
        if let Some(name) = other.passthrough.keys().find(|n| !self.passthrough.contains_key(*n)) {
            return Some(format!("unexpected passthrough '{name}'"));
        }
        None
    }

    /// Bitwise equality of all payload values, ignoring the step index.
    pub fn payload_eq(&self, other: &Checkpoint) -> bool {
        if self.schema_diff(other).is_some() {
            return false;
        }
        let tensors_eq = self.tensors.iter().all(|(name, m)| {
            let o = &other.tensors[name];
            m.data().iter().zip(o.data()).all(|(a, b)| a.to_bits() == b.to_bits())
        });
        let pass_eq = self.passthrough.iter().all(|(name, v)| {
            let o = &other.passthrough[name];
            v.iter().zip(o).all(|(a, b)| a.to_bits() == b.to_bits())
        });
        tensors_eq && pass_eq
    }
}

// ---- container codec ------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Dtype {
    F32,
    F64,
}

impl Dtype {
    fn name(self) -> &'static str {
        match self {
            Dtype::F32 => "F32",
            Dtype::F64 => "F64",
        }
    }

    fn width(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
        }
    }

    fn parse(s: &str) -> Option<Dtype> {
        match s {
            "F32" => Some(Dtype::F32),
            "F64" => Some(Dtype::F64),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) enum Payload {
    Mat(Matrix),
    Vec1(Vec<f64>),
}

pub(crate) fn write_container(
    path: &Path,
    entries: &BTreeMap<String, Payload>,
    metadata: &BTreeMap<String, String>,
    dtype: Dtype,
) -> Result<(), StoreError> {
    let mut header = serde_json::Map::new();
    if !metadata.is_empty() {
        let meta: serde_json::Map<String, serde_json::Value> = metadata
            .iter()
            .map(|(k, v)| (k.clone(), serde_json::Value::String(v.clone())))
            .collect();
        header.insert("__metadata__".to_string(), serde_json::Value::Object(meta));
    }

    let mut offset = 0usize;
    for (name, payload) in entries {
        let (shape, count) = match payload {
            Payload::Mat(m) => (vec![m.rows(), m.cols()], m.rows() * m.cols()),
            Payload::Vec1(v) => (vec![v.len()], v.len()),
        };
        let nbytes = count * dtype.width();
        header.insert(
            name.clone(),
            json!({
                "dtype": dtype.name(),
                "shape": shape,
                "data_offsets": [offset, offset + nbytes],
            }),
        );
        offset += nbytes;
    }

    let header_bytes = serde_json::to_vec(&serde_json::Value::Object(header))
        .map_err(|e| format_err(path, format!("header serialization: {e}")))?;

    let mut out = Vec::with_capacity(8 + header_bytes.len() + offset);
    out.extend_from_slice(&(header_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&header_bytes);
    for payload in entries.values() {
        let values: &[f64] = match payload {
            Payload::Mat(m) => m.data(),
            Payload::Vec1(v) => v,
        };
        match dtype {
            Dtype::F32 => {
                for x in values {
                    out.extend_from_slice(&(*x as f32).to_le_bytes());
                }
            }
            Dtype::F64 => {
                for x in values {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
        }
    }

    let mut file = fs::File::create(path).map_err(|e| io_err(path, e))?;
    file.write_all(&out).map_err(|e| io_err(path, e))?;
    Ok(())
}

#[derive(Deserialize)]
struct HeaderEntry {
    dtype: String,
    shape: Vec<usize>,
    data_offsets: [usize; 2],
}

pub(crate) type ContainerEntries = BTreeMap<String, Payload>;
pub(crate) type ContainerMetadata = BTreeMap<String, String>;

pub(crate) fn read_container(
    path: &Path,
) -> Result<(ContainerEntries, ContainerMetadata), StoreError> {
    let bytes = fs::read(path).map_err(|e| io_err(path, e))?;
    if bytes.len() < 8 {
        return Err(format_err(path, "file shorter than the 8-byte header length"));
    }
    let header_len = u64::from_le_bytes(bytes[0..8].try_into().unwrap()) as usize;
    if bytes.len() - 8 < header_len {
        return Err(format_err(
            path,
            format!("declared header length {header_len} exceeds file size"),
        ));
    }
    let header_bytes = &bytes[8..8 + header_len];
    let payload = &bytes[8 + header_len..];

    let header: serde_json::Map<String, serde_json::Value> = serde_json::from_slice(header_bytes)
        .map_err(|e| format_err(path, format!("malformed header document: {e}")))?;

    let mut metadata = BTreeMap::new();
    let mut entries = BTreeMap::new();
    let mut ranges: Vec<(usize, usize, String)> = Vec::new();

    for (name, value) in header {
        if name == "__metadata__" {
            let map: BTreeMap<String, String> = serde_json::from_value(value)
                .map_err(|e| format_err(path, format!("malformed __metadata__: {e}")))?;
            metadata = map;
            continue;
        }
        let entry: HeaderEntry = serde_json::from_value(value)
            .map_err(|e| format_err(path, format!("malformed entry '{name}': {e}")))?;
        let dtype = Dtype::parse(&entry.dtype)
            .ok_or_else(|| format_err(path, format!("unknown dtype '{}' for '{name}'", entry.dtype)))?;
        let count: usize = entry.shape.iter().product();
        if entry.shape.contains(&0) {
            return Err(format_err(path, format!("zero dimension in shape of '{name}'")));
        }
        let (begin, end) = (entry.data_offsets[0], entry.data_offsets[1]);
        if begin > end || end > payload.len() {
            return Err(format_err(
                path,
                format!("data range [{begin}, {end}) of '{name}' is out of bounds"),
            ));
        }
        if end - begin != count * dtype.width() {
            return Err(format_err(
                path,
                format!("data range of '{name}' does not match shape {:?}", entry.shape),
            ));
        }
        let mut values = Vec::with_capacity(count);
        match dtype {
            Dtype::F32 => {
                for chunk in payload[begin..end].chunks_exact(4) {
                    values.push(f32::from_le_bytes(chunk.try_into().unwrap()) as f64);
                }
            }
            Dtype::F64 => {
                for chunk in payload[begin..end].chunks_exact(8) {
                    values.push(f64::from_le_bytes(chunk.try_into().unwrap()));
                }
            }
        }
        let parsed = match entry.shape.len() {
            1 => Payload::Vec1(values),
            2 => {
                let m = Matrix::new(entry.shape[0], entry.shape[1], values)
                    .map_err(|e| format_err(path, format!("tensor '{name}': {e}")))?;
                Payload::Mat(m)
            }
            rank => {
                return Err(format_err(
                    path,
                    format!("unsupported rank {rank} for '{name}' (expected 1 or 2)"),
                ))
            }
        };
        if let Payload::Vec1(v) = &parsed {
            if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                return Err(format_err(path, format!("non-finite value in '{name}' at {i}")));
            }
        }
        ranges.push((begin, end, name.clone()));
        entries.insert(name, parsed);
    }

    ranges.sort();
    for pair in ranges.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(format_err(
                path,
                format!("data ranges of '{}' and '{}' overlap", pair[0].2, pair[1].2),
            ));
        }
    }

    Ok((entries, metadata))
}

// ---- checkpoint save/load -------------------------------------------------

/// Write a checkpoint in the container format (f32 payloads). Re-reading
/// yields the same maps with values passed through f32.
pub fn save_checkpoint(c: &Checkpoint, path: impl AsRef<Path>) -> Result<(), StoreError> {
    save_checkpoint_dtype(c, path.as_ref(), Dtype::F32)
}

/// Write a checkpoint with f64 payloads. Used for synthetic trajectories
/// whose delta identities are verified at tolerances f32 cannot carry.
pub fn save_checkpoint_f64(c: &Checkpoint, path: impl AsRef<Path>) -> Result<(), StoreError> {
    save_checkpoint_dtype(c, path.as_ref(), Dtype::F64)
}

fn save_checkpoint_dtype(c: &Checkpoint, path: &Path, dtype: Dtype) -> Result<(), StoreError> {
    let mut entries = BTreeMap::new();
    for (name, m) in &c.tensors {
        entries.insert(name.clone(), Payload::Mat(m.clone()));
    }
    for (name, v) in &c.passthrough {
        if entries.contains_key(name) {
            return Err(StoreError::DuplicateName(name.clone()));
        }
        entries.insert(name.clone(), Payload::Vec1(v.clone()));
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("step".to_string(), c.step.to_string());
    write_container(path, &entries, &metadata, dtype)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, StoreError> {
    let path = path.as_ref();
    let (entries, metadata) = read_container(path)?;
    let step = metadata
        .get("step")
        .map(|s| {
            s.parse::<u64>()
                .map_err(|_| format_err(path, format!("invalid step metadata '{s}'")))
        })
        .transpose()?
        .unwrap_or(0);
    let mut c = Checkpoint::new(step);
    for (name, payload) in entries {
        match payload {
            Payload::Mat(m) => {
                c.tensors.insert(name, m);
            }
            Payload::Vec1(v) => {
                c.passthrough.insert(name, v);
            }
        }
    }
    Ok(c)
}

// ---- LoRA adapters --------------------------------------------------------

/// One low-rank adapter: the target gains `scale * B * A`.
#[derive(Debug, Clone)]
pub struct LoraEntry {
    pub name: String,
    /// r x n
    pub a: Matrix,
    /// m x r
    pub b: Matrix,
    pub rank: usize,
    pub scale: f64,
}

#[derive(Debug, Clone, Default)]
pub struct LoraAdapter {
    pub entries: Vec<LoraEntry>,
    pub step: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct LoraSidecar {
    rank: usize,
    alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    step: Option<u64>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Adapter container: "<target>.lora_A" / "<target>.lora_B" tensor pairs
/// plus a `{rank, alpha}` JSON sidecar; scale = alpha / rank.
pub fn save_lora_adapter(adapter: &LoraAdapter, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let (rank, scale) = match adapter.entries.first() {
        Some(e) => (e.rank, e.scale),
        None => (1, 1.0),
    };
    let mut entries = BTreeMap::new();
    for e in &adapter.entries {
        entries.insert(format!("{}.lora_A", e.name), Payload::Mat(e.a.clone()));
        entries.insert(format!("{}.lora_B", e.name), Payload::Mat(e.b.clone()));
    }
    write_container(path, &entries, &BTreeMap::new(), Dtype::F32)?;
    let sidecar = LoraSidecar { rank, alpha: scale * rank as f64, step: adapter.step };
    let sidecar_file = sidecar_path(path);
    let body = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| format_err(&sidecar_file, e.to_string()))?;
    fs::write(&sidecar_file, body).map_err(|e| io_err(&sidecar_file, e))?;
    Ok(())
}

pub fn load_lora_adapter(path: impl AsRef<Path>) -> Result<LoraAdapter, StoreError> {
    let path = path.as_ref();
    let (entries, _) = read_container(path)?;
    let sidecar_file = sidecar_path(path);
    let body = fs::read_to_string(&sidecar_file).map_err(|e| io_err(&sidecar_file, e))?;
    let sidecar: LoraSidecar = serde_json::from_str(&body)
        .map_err(|e| format_err(&sidecar_file, format!("malformed adapter sidecar: {e}")))?;
    if sidecar.rank == 0 {
        return Err(format_err(&sidecar_file, "adapter rank must be positive"));
    }
    let scale = sidecar.alpha / sidecar.rank as f64;

    let mut by_target: BTreeMap<String, (Option<Matrix>, Option<Matrix>)> = BTreeMap::new();
    for (name, payload) in entries {
        let mat = match payload {
            Payload::Mat(m) => m,
            Payload::Vec1(_) => {
                return Err(format_err(path, format!("adapter entry '{name}' is not 2-D")))
            }
        };
        if let Some(target) = name.strip_suffix(".lora_A") {
            by_target.entry(target.to_string()).or_default().0 = Some(mat);
        } else if let Some(target) = name.strip_suffix(".lora_B") {
            by_target.entry(target.to_string()).or_default().1 = Some(mat);
        } else {
            return Err(format_err(
                path,
                format!("adapter entry '{name}' lacks a .lora_A/.lora_B suffix"),
            ));
        }
    }

    let mut adapter = LoraAdapter { entries: Vec::new(), step: sidecar.step };
    for (target, (a, b)) in by_target {
        let (a, b) = match (a, b) {
            (Some(a), Some(b)) => (a, b),
            _ => {
                return Err(format_err(
                    path,
                    format!("adapter target '{target}' is missing its A or B factor"),
                ))
            }
        };
        adapter.entries.push(LoraEntry { name: target, a, b, rank: sidecar.rank, scale });
    }
    Ok(adapter)
}

/// base + scale * (B * A) per target; non-target tensors and passthrough
/// arrays are copied unchanged.
pub fn merge_lora(base: &Checkpoint, adapter: &LoraAdapter) -> Result<Checkpoint, StoreError> {
    let mut out = base.clone();
    out.step = adapter.step.unwrap_or(base.step);
    for entry in &adapter.entries {
        let target = base
            .tensor(&entry.name)
            .ok_or_else(|| StoreError::MissingTarget(entry.name.clone()))?;
        let (m, n) = target.shape();
        if entry.b.shape() != (m, entry.rank) || entry.a.shape() != (entry.rank, n) {
            return Err(StoreError::ShapeMismatch {
                name: entry.name.clone(),
                expected: (m, n),
                got: (entry.b.rows(), entry.a.cols()),
            });
        }
        let ba = entry.b.matmul(&entry.a).map_err(|_| StoreError::ShapeMismatch {
            name: entry.name.clone(),
            expected: (entry.b.cols(), entry.b.cols()),
            got: (entry.a.rows(), entry.a.rows()),
        })?;
        let merged = target.add_scaled(&ba, entry.scale).expect("shapes already checked");
        out.tensors.insert(entry.name.clone(), merged);
    }
    Ok(out)
}

// ---- trajectory manifest ---------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub step: u64,
    pub path: String,
}

/// Ordered description of a checkpoint sequence on disk. Relative paths are
/// resolved against the manifest's own directory.
#[derive(Debug, Clone)]
pub struct TrajectoryManifest {
    pub base_path: Option<String>,
    pub entries: Vec<ManifestEntry>,
    pub lora_paths: Option<Vec<String>>,
    root: PathBuf,
}

#[derive(Serialize, Deserialize)]
struct ManifestDoc {
    base: Option<String>,
    checkpoints: Vec<ManifestEntry>,
    lora: Option<Vec<String>>,
}

impl TrajectoryManifest {
    pub fn new(base_path: Option<String>, entries: Vec<ManifestEntry>, lora_paths: Option<Vec<String>>) -> Self {
        TrajectoryManifest { base_path, entries, lora_paths, root: PathBuf::from(".") }
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        let p = Path::new(rel);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn steps(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.step).collect()
    }
}

pub fn save_manifest(man: &TrajectoryManifest, path: impl AsRef<Path>) -> Result<(), StoreError> {
    let path = path.as_ref();
    let doc = ManifestDoc {
        base: man.base_path.clone(),
        checkpoints: man.entries.clone(),
        lora: man.lora_paths.clone(),
    };
    let body = serde_json::to_string_pretty(&doc).map_err(|e| format_err(path, e.to_string()))?;
    fs::write(path, body).map_err(|e| io_err(path, e))
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<TrajectoryManifest, StoreError> {
    let path = path.as_ref();
    let body = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let doc: ManifestDoc = serde_json::from_str(&body)
        .map_err(|e| format_err(path, format!("malformed manifest: {e}")))?;
    if doc.checkpoints.is_empty() {
        return Err(format_err(path, "manifest lists no checkpoints"));
    }
    for pair in doc.checkpoints.windows(2) {
        if pair[1].step <= pair[0].step {
            return Err(StoreError::NonMonotonicSteps { prev: pair[0].step, next: pair[1].step });
        }
    }
    if let Some(lora) = &doc.lora {
        if lora.len() != doc.checkpoints.len() {
            return Err(format_err(
                path,
                format!(
                    "lora list has {} entries for {} checkpoints",
                    lora.len(),
                    doc.checkpoints.len()
                ),
            ));
        }
        if doc.base.is_none() {
            return Err(format_err(path, "lora adapters require a base checkpoint"));
        }
    }
    let root = path.parent().map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("."));
    Ok(TrajectoryManifest {
        base_path: doc.base,
        entries: doc.checkpoints,
        lora_paths: doc.lora,
        root,
    })
}

// ---- loaded trajectory ------------------------------------------------------

/// A fully loaded trajectory: the base model W_0 plus the saved checkpoints
/// W_1..W_c, schema-checked and with LoRA adapters already merged.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub base: Checkpoint,
    pub checkpoints: Vec<Checkpoint>,
}

impl Trajectory {
    pub fn load(man: &TrajectoryManifest) -> Result<Self, StoreError> {
        let base_rel = man
            .base_path
            .as_ref()
            .ok_or_else(|| StoreError::SchemaMismatch("manifest has no base checkpoint".into()))?;
        let base = load_checkpoint(man.resolve(base_rel))?;
        let checkpoints = read_trajectory_with_base(man, &base)?;
        Ok(Trajectory { base, checkpoints })
    }

    /// Number of saved checkpoints (excluding the base).
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    /// W_i with W_0 = base, 1-based up to c.
    pub fn weights_at(&self, i: usize) -> &Checkpoint {
        if i == 0 {
            &self.base
        } else {
            &self.checkpoints[i - 1]
        }
    }
}

/// The checkpoints of a manifest in step order, merging LoRA adapters into
/// the base when the manifest carries them.
pub fn read_trajectory(man: &TrajectoryManifest) -> Result<Vec<Checkpoint>, StoreError> {
    match &man.base_path {
        Some(rel) => {
            let base = load_checkpoint(man.resolve(rel))?;
            read_trajectory_with_base(man, &base)
        }
        None => {
            if man.lora_paths.is_some() {
                return Err(StoreError::SchemaMismatch(
                    "lora adapters require a base checkpoint".into(),
                ));
            }
            let mut out = Vec::with_capacity(man.entries.len());
            for entry in &man.entries {
                let mut c = load_checkpoint(man.resolve(&entry.path))?;
                c.step = entry.step;
                out.push(c);
            }
            check_schema(&out)?;
            Ok(out)
        }
    }
}

fn read_trajectory_with_base(
    man: &TrajectoryManifest,
    base: &Checkpoint,
) -> Result<Vec<Checkpoint>, StoreError> {
    let mut out = Vec::with_capacity(man.entries.len());
    for (idx, entry) in man.entries.iter().enumerate() {
        let mut c = match &man.lora_paths {
            Some(lora) => {
                let adapter = load_lora_adapter(man.resolve(&lora[idx]))?;
                merge_lora(base, &adapter)?
            }
            None => load_checkpoint(man.resolve(&entry.path))?,
        };
        c.step = entry.step;
        if let Some(diff) = base.schema_diff(&c) {
            return Err(StoreError::SchemaMismatch(format!(
                "checkpoint at step {}: {diff}",
                entry.step
            )));
        }
        out.push(c);
    }
    Ok(out)
}

fn check_schema(checkpoints: &[Checkpoint]) -> Result<(), StoreError> {
    if let Some((first, rest)) = checkpoints.split_first() {
        for c in rest {
            if let Some(diff) = first.schema_diff(c) {
                return Err(StoreError::SchemaMismatch(format!(
                    "checkpoint at step {}: {diff}",
                    c.step
                )));
            }
        }
    }
    Ok(())
}
