//! Delta extraction: global/local/target differences across a trajectory,
//! rank-1 reduction with temporal sign alignment, and assembly of the
//! predictor training dataset grouped by (field, dimension).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{top_singular_triplet_default, LinalgError, Matrix, Rank1Factor};
use crate::store::{self, StoreError, Trajectory};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("checkpoint index {i} out of range (c = {c}, k = {k})")]
    IndexOutOfRange { i: usize, c: usize, k: usize },
    #[error("need at least k + 2 = {need} checkpoints, trajectory has {c}")]
    InsufficientCheckpoints { need: usize, c: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Which component of the rank-1 factor an example carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    U,
    V,
    Sigma,
}

impl Field {
    pub fn name(self) -> &'static str {
        match self {
            Field::U => "u",
            Field::V => "v",
            Field::Sigma => "sigma",
        }
    }

    fn parse(s: &str) -> Option<Field> {
        match s {
            "u" => Some(Field::U),
            "v" => Some(Field::V),
            "sigma" => Some(Field::Sigma),
            _ => None,
        }
    }
}

/// Optional stabilization applied to sigma examples before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaTransform {
    #[default]
    None,
    Log1p,
}

impl SigmaTransform {
    pub fn apply(self, sigma: f64) -> f64 {
        match self {
            SigmaTransform::None => sigma,
            SigmaTransform::Log1p => sigma.ln_1p(),
        }
    }

    pub fn invert(self, value: f64) -> f64 {
        match self {
            SigmaTransform::None => value,
            SigmaTransform::Log1p => value.exp_m1(),
        }
    }
}

/// The three deltas of one parameter at checkpoint i.
#[derive(Debug, Clone)]
pub struct DeltaSet {
    pub g: Matrix,
    pub l: Matrix,
    pub t: Option<Matrix>,
}

/// One (s_G, s_L, s_T) training triple for a single field.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub param_name: String,
    pub checkpoint_index: usize,
    pub field: Field,
    pub s_g: Vec<f64>,
    pub s_l: Vec<f64>,
    pub s_t: Vec<f64>,
}

/// All examples sharing a field and vector dimension; the unit the
/// predictor trains on.
#[derive(Debug, Clone)]
pub struct DatasetGroup {
    pub dimension: usize,
    pub field: Field,
    pub examples: Vec<TrainingExample>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub k: usize,
    pub c: usize,
    pub fields: Vec<String>,
    pub sign_alignment: String,
    pub sigma_transform: SigmaTransform,
    /// Skipped TrainingExamples (3 per degenerate (param, i) triple), so
    /// that emitted + skipped = 3 * #params * (c - k).
    pub skipped_examples: usize,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub groups: Vec<DatasetGroup>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn n_examples(&self) -> usize {
        self.groups.iter().map(|g| g.examples.len()).sum()
    }
}

#[derive(Debug, Clone, Default)]
pub struct ExtractOptions {
    pub sigma_transform: SigmaTransform,
}

// ---- delta computation ------------------------------------------------------

/// Global, local, and target deltas for every parameter at checkpoint i
/// (1-based): W_i - W_0, W_i - W_{i-1}, and W_{i+k} - W_i when it exists.
pub fn compute_deltas(
    traj: &Trajectory,
    i: usize,
    k: usize,
) -> Result<BTreeMap<String, DeltaSet>, DatasetError> {
    let c = traj.len();
    if i < 1 || i > c || k < 1 {
        return Err(DatasetError::IndexOutOfRange { i, c, k });
    }
    let current = traj.weights_at(i);
    let previous = traj.weights_at(i - 1);
    let target = if i + k <= c { Some(traj.weights_at(i + k)) } else { None };

    let mut out = BTreeMap::new();
    for (name, w_i) in current.tensors() {
        let w_0 = traj
            .base
            .tensor(name)
            .ok_or_else(|| DatasetError::SchemaMismatch(format!("'{name}' missing from base")))?;
        let w_prev = previous
            .tensor(name)
            .ok_or_else(|| DatasetError::SchemaMismatch(format!("'{name}' missing at i-1")))?;
        let g = w_i.sub(w_0).map_err(|_| shape_mismatch(name))?;
        let l = w_i.sub(w_prev).map_err(|_| shape_mismatch(name))?;
        let t = match target {
            Some(ck) => {
                let w_t = ck
                    .tensor(name)
                    .ok_or_else(|| DatasetError::SchemaMismatch(format!("'{name}' missing at i+k")))?;
                Some(w_t.sub(w_i).map_err(|_| shape_mismatch(name))?)
            }
            None => None,
        };
        out.insert(name.clone(), DeltaSet { g, l, t });
    }
    Ok(out)
}

fn shape_mismatch(name: &str) -> DatasetError {
    DatasetError::SchemaMismatch(format!("shape drift for '{name}' across checkpoints"))
}

/// Resolve the (u, v) <-> (-u, -v) ambiguity against a reference factor:
/// if <curr.u, ref.u> < 0, both u and v are negated; sigma is untouched.
pub fn align_sign(curr: &Rank1Factor, reference: &Rank1Factor) -> Rank1Factor {
    debug_assert_eq!(curr.u.len(), reference.u.len());
    let d: f64 = curr.u.iter().zip(&reference.u).map(|(a, b)| a * b).sum();
    if d < 0.0 {
        Rank1Factor {
            sigma: curr.sigma,
            u: curr.u.iter().map(|x| -x).collect(),
            v: curr.v.iter().map(|x| -x).collect(),
            degenerate: curr.degenerate,
        }
    } else {
        curr.clone()
    }
}

// ---- aligned factor chains ---------------------------------------------------

/// Per-parameter rank-1 factors of the global and local deltas for every
/// i in 1..=c, sign-aligned along the trajectory (first checkpoint keeps
/// the canonical sign; later ones align to the previous factor of the same
/// delta kind; degenerate deltas leave gaps without breaking the chain).
#[derive(Debug, Clone)]
pub struct FactorChain {
    pub g: Vec<Option<Rank1Factor>>,
    pub l: Vec<Option<Rank1Factor>>,
}

pub(crate) fn aligned_factor_chain(
    traj: &Trajectory,
    name: &str,
) -> Result<FactorChain, DatasetError> {
    let c = traj.len();
    let base = traj
        .base
        .tensor(name)
        .ok_or_else(|| DatasetError::SchemaMismatch(format!("'{name}' missing from base")))?;

    let mut g_chain = Vec::with_capacity(c);
    let mut l_chain = Vec::with_capacity(c);
    let mut g_ref: Option<Rank1Factor> = None;
    let mut l_ref: Option<Rank1Factor> = None;
    for i in 1..=c {
        let w_i = traj
            .checkpoints[i - 1]
            .tensor(name)
            .ok_or_else(|| DatasetError::SchemaMismatch(format!("'{name}' missing at {i}")))?;
        let w_prev = traj.weights_at(i - 1).tensor(name).expect("schema checked at load");

        let g = w_i.sub(base).map_err(|_| shape_mismatch(name))?;
        let l = w_i.sub(w_prev).map_err(|_| shape_mismatch(name))?;

        g_chain.push(aligned_factor(&g, &mut g_ref)?);
        l_chain.push(aligned_factor(&l, &mut l_ref)?);
    }
    Ok(FactorChain { g: g_chain, l: l_chain })
}

fn aligned_factor(
    delta: &Matrix,
    reference: &mut Option<Rank1Factor>,
) -> Result<Option<Rank1Factor>, DatasetError> {
    let factor = top_singular_triplet_default(delta)?;
    if factor.degenerate {
        return Ok(None);
    }
    let aligned = match reference {
        Some(r) => align_sign(&factor, r),
        None => factor,
    };
    *reference = Some(aligned.clone());
    Ok(Some(aligned))
}

// ---- dataset extraction --------------------------------------------------------

/// Extract the full training dataset for extrapolation distance k: for
/// every parameter and every i in 1..=c-k, the rank-1 factors of the
/// global/local/target deltas become one u, one v, and one sigma example.
pub fn extract_dataset(
    traj: &Trajectory,
    k: usize,
    opts: &ExtractOptions,
) -> Result<Dataset, DatasetError> {
    let c = traj.len();
    if k < 1 || c < k + 2 {
        return Err(DatasetError::InsufficientCheckpoints { need: k + 2, c });
    }

    let names: Vec<String> = traj.base.tensor_names().cloned().collect();
    let per_param: Vec<Result<(Vec<TrainingExample>, usize), DatasetError>> = names
        .par_iter()
        .map(|name| extract_for_param(traj, name, k, opts))
        .collect();

    let mut groups: BTreeMap<(Field, usize), Vec<TrainingExample>> = BTreeMap::new();
    let mut skipped = 0usize;
    for result in per_param {
        let (examples, skips) = result?;
        skipped += skips;
        for ex in examples {
            let dim = ex.s_g.len();
            groups.entry((ex.field, dim)).or_default().push(ex);
        }
    }

    let groups = groups
        .into_iter()
        .map(|((field, dimension), examples)| DatasetGroup { dimension, field, examples })
        .collect();

    Ok(Dataset {
        groups,
        meta: DatasetMeta {
            k,
            c,
            fields: vec!["u".into(), "v".into(), "sigma".into()],
            sign_alignment: "temporal".into(),
            sigma_transform: opts.sigma_transform,
            skipped_examples: skipped,
        },
    })
}

fn extract_for_param(
    traj: &Trajectory,
    name: &str,
    k: usize,
    opts: &ExtractOptions,
) -> Result<(Vec<TrainingExample>, usize), DatasetError> {
    let c = traj.len();
    let chain = aligned_factor_chain(traj, name)?;

    let mut examples = Vec::new();
    let mut skipped = 0usize;
    let mut t_ref: Option<Rank1Factor> = None;
    for i in 1..=(c - k) {
        let w_i = traj.weights_at(i).tensor(name).expect("schema checked");
        let w_ik = traj.weights_at(i + k).tensor(name).expect("schema checked");
        let t_delta = w_ik.sub(w_i).map_err(|_| shape_mismatch(name))?;
        let t_factor = aligned_factor(&t_delta, &mut t_ref)?;

        match (&chain.g[i - 1], &chain.l[i - 1], &t_factor) {
            (Some(g), Some(l), Some(t)) => {
                examples.push(TrainingExample {
                    param_name: name.to_string(),
                    checkpoint_index: i,
                    field: Field::U,
                    s_g: g.u.clone(),
                    s_l: l.u.clone(),
                    s_t: t.u.clone(),
                });
                examples.push(TrainingExample {
                    param_name: name.to_string(),
                    checkpoint_index: i,
                    field: Field::V,
                    s_g: g.v.clone(),
                    s_l: l.v.clone(),
                    s_t: t.v.clone(),
                });
                let tr = opts.sigma_transform;
                examples.push(TrainingExample {
                    param_name: name.to_string(),
                    checkpoint_index: i,
                    field: Field::Sigma,
                    s_g: vec![tr.apply(g.sigma)],
                    s_l: vec![tr.apply(l.sigma)],
                    s_t: vec![tr.apply(t.sigma)],
                });
            }
            _ => skipped += 3,
        }
    }
    Ok((examples, skipped))
}

// ---- dataset file ----------------------------------------------------------------

/// Container keys are "<param>/<i>/<field>/<G|L|T>", each a 1 x d row;
/// the metadata sidecar lives at "<path>.json".
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<(), DatasetError> {
    let path = path.as_ref();
    let mut entries = BTreeMap::new();
    for group in &ds.groups {
        for ex in &group.examples {
            for (kind, values) in [("G", &ex.s_g), ("L", &ex.s_l), ("T", &ex.s_t)] {
                let key = format!("{}/{}/{}/{kind}", ex.param_name, ex.checkpoint_index, ex.field.name());
                let row = Matrix::new(1, values.len(), values.clone())?;
                entries.insert(key, store::Payload::Mat(row));
            }
        }
    }
    store::write_container(path, &entries, &BTreeMap::new(), store::Dtype::F64)?;

    let sidecar = sidecar_path(path);
    let body = serde_json::to_string_pretty(&ds.meta).expect("serializable meta");
    std::fs::write(&sidecar, body).map_err(|e| {
        DatasetError::Store(StoreError::Io { path: sidecar.clone(), source: e })
    })?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let path = path.as_ref();
    let (entries, _) = store::read_container(path)?;
    let sidecar = sidecar_path(path);
    let body = std::fs::read_to_string(&sidecar)
        .map_err(|e| DatasetError::Store(StoreError::Io { path: sidecar.clone(), source: e }))?;
    let meta: DatasetMeta = serde_json::from_str(&body).map_err(|e| {
        DatasetError::Store(StoreError::Format {
            path: sidecar.clone(),
            message: format!("malformed dataset sidecar: {e}"),
        })
    })?;

    // regroup rows into examples keyed by (param, i, field)
    type Triple = [Option<Vec<f64>>; 3];
    let mut triples: BTreeMap<(String, usize, Field), Triple> = BTreeMap::new();
    for (key, payload) in entries {
        let parts: Vec<&str> = key.split('/').collect();
        let parse = || -> Option<(String, usize, Field, usize)> {
            if parts.len() < 4 {
                return None;
            }
            let kind = match *parts.last().unwrap() {
                "G" => 0,
                "L" => 1,
                "T" => 2,
                _ => return None,
            };
            let field = Field::parse(parts[parts.len() - 2])?;
            let index: usize = parts[parts.len() - 3].parse().ok()?;
            let param = parts[..parts.len() - 3].join("/");
            Some((param, index, field, kind))
        };
        let (param, index, field, kind) = parse().ok_or_else(|| {
            DatasetError::Store(StoreError::Format {
                path: path.to_path_buf(),
                message: format!("unparseable dataset key '{key}'"),
            })
        })?;
        let values = match payload {
            store::Payload::Mat(m) if m.rows() == 1 => m.data().to_vec(),
            _ => {
                return Err(DatasetError::Store(StoreError::Format {
                    path: path.to_path_buf(),
                    message: format!("dataset entry '{key}' is not a 1 x d row"),
                }))
            }
        };
        triples.entry((param, index, field)).or_default()[kind] = Some(values);
    }

    let mut groups: BTreeMap<(Field, usize), Vec<TrainingExample>> = BTreeMap::new();
    for ((param, index, field), [g, l, t]) in triples {
        let (s_g, s_l, s_t) = match (g, l, t) {
            (Some(g), Some(l), Some(t)) => (g, l, t),
            _ => {
                return Err(DatasetError::Store(StoreError::Format {
                    path: path.to_path_buf(),
                    message: format!("incomplete G/L/T triple for '{param}' at {index}"),
                }))
            }
        };
        let dim = s_g.len();
        groups.entry((field, dim)).or_default().push(TrainingExample {
            param_name: param,
            checkpoint_index: index,
            field,
            s_g,
            s_l,
            s_t,
        });
    }
    // extraction emits per-parameter in index order; restore it after the
    // lexicographic detour through container keys
    let groups = groups
        .into_iter()
        .map(|((field, dimension), mut examples)| {
            examples.sort_by(|a, b| {
                (&a.param_name, a.checkpoint_index).cmp(&(&b.param_name, b.checkpoint_index))
            });
            DatasetGroup { dimension, field, examples }
        })
        .collect();

    Ok(Dataset { groups, meta })
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}
