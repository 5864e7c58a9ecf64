//! Predict-extend extrapolation of the last checkpoint, plus the linear
//! baselines it is compared against.
//!
//! For each 2-D parameter of the last checkpoint: compute its global and
//! local deltas, sign-align their rank-1 factors along the same temporal
//! chain the training dataset used, predict the target rank-1 factor with
//! the trained bundle, and add the scaled reconstruction back onto the
//! weights. Parameters that cannot be predicted (degenerate deltas, no
//! predictor for their dimension) are copied unchanged and recorded.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::dataset::{aligned_factor_chain, DatasetError, Field};
use crate::linalg::{
    norm2, rank1_reconstruct, top_singular_triplet_default, LinalgError, Matrix, Rank1Factor,
};
use crate::predictor::{forward, PredictorBundle, PredictorError};
use crate::store::{Checkpoint, StoreError, Trajectory};

#[derive(Debug, Error)]
pub enum ExtrapolateError {
    #[error("trajectory has no checkpoints")]
    EmptyTrajectory,
    #[error("need at least {need} checkpoints for this baseline, trajectory has {c}")]
    InsufficientCheckpoints { need: usize, c: usize },
    #[error("no predictor for field {field:?} with dimension {dim}")]
    MissingPredictor { field: Field, dim: usize },
    #[error("predictor output has near-zero norm for '{param}' ({field:?}); cannot normalize")]
    ZeroNormPrediction { param: String, field: Field },
    #[error("shape mismatch between weights and predicted delta")]
    ShapeMismatch,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Predictor(#[from] PredictorError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Outcome of one parameter during extrapolation.
#[derive(Debug, Clone, Serialize)]
pub struct ParamRecord {
    pub param_name: String,
    pub predicted_sigma: f64,
    pub alpha: f64,
    pub delta_frobenius: f64,
    pub skipped: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub skip_reason: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ExtrapolationReport {
    pub records: Vec<ParamRecord>,
    pub k: usize,
    pub alpha: f64,
    pub bundle_id: String,
    pub warnings: Vec<String>,
}

impl ExtrapolationReport {
    /// One JSON object per parameter record, newline separated.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("serializable record"));
            out.push('\n');
        }
        out
    }
}

/// Predict the target delta of one parameter from its aligned global and
/// local rank-1 factors: normalized u and v predictions, clamped sigma,
/// recombined as sigma * u * v^T.
pub fn predict_target_delta(
    bundle: &PredictorBundle,
    g_factor: &Rank1Factor,
    l_factor: &Rank1Factor,
    dims: (usize, usize),
) -> Result<Matrix, ExtrapolateError> {
    let (rows, cols) = dims;
    let fetch = |field: Field, dim: usize| {
        bundle
            .get(field, dim)
            .map(|(_, params)| params)
            .ok_or(ExtrapolateError::MissingPredictor { field, dim })
    };
    let u_params = fetch(Field::U, rows)?;
    let v_params = fetch(Field::V, cols)?;
    let s_params = fetch(Field::Sigma, 1)?;

    let mut u_hat = forward(u_params, &g_factor.u, &l_factor.u)?;
    let mut v_hat = forward(v_params, &g_factor.v, &l_factor.v)?;
    let transform = bundle.meta.sigma_transform;
    let sigma_out = forward(
        s_params,
        &[transform.apply(g_factor.sigma)],
        &[transform.apply(l_factor.sigma)],
    )?;
    let sigma_hat = transform.invert(sigma_out[0]).max(0.0);

    for (vec, field) in [(&mut u_hat, Field::U), (&mut v_hat, Field::V)] {
        let n = norm2(vec);
        if n < 1e-12 {
            return Err(ExtrapolateError::ZeroNormPrediction { param: String::new(), field });
        }
        for x in vec.iter_mut() {
            *x /= n;
        }
    }
    Ok(Matrix::outer(sigma_hat, &u_hat, &v_hat))
}

/// W + alpha * delta. alpha = 0 returns the weights bit-for-bit.
pub fn predict_extend(w: &Matrix, delta_hat: &Matrix, alpha: f64) -> Result<Matrix, ExtrapolateError> {
    if w.shape() != delta_hat.shape() {
        return Err(ExtrapolateError::ShapeMismatch);
    }
    if alpha == 0.0 {
        return Ok(w.clone());
    }
    Ok(w.add_scaled(delta_hat, alpha).expect("shapes checked"))
}

/// Step index for the synthesized checkpoint: last step plus k times the
/// median inter-checkpoint stride (manifests may be irregular).
fn extrapolated_step(traj: &Trajectory, k: usize) -> u64 {
    let steps: Vec<u64> = traj.checkpoints.iter().map(|c| c.step).collect();
    let stride = if steps.len() >= 2 {
        let mut diffs: Vec<u64> = steps.windows(2).map(|w| w[1] - w[0]).collect();
        diffs.sort_unstable();
        diffs[diffs.len() / 2]
    } else {
        steps[0].saturating_sub(traj.base.step).max(1)
    };
    steps.last().unwrap() + k as u64 * stride
}

/// Apply the trained predictor to the last checkpoint of a trajectory.
pub fn extrapolate_checkpoint(
    traj: &Trajectory,
    bundle: &PredictorBundle,
    alpha: f64,
    k: usize,
) -> Result<(Checkpoint, ExtrapolationReport), ExtrapolateError> {
    if traj.is_empty() {
        return Err(ExtrapolateError::EmptyTrajectory);
    }
    let mut warnings = Vec::new();
    if bundle.meta.k != k {
        warnings.push(format!(
            "bundle was trained for k = {} but extrapolation distance is k = {k}",
            bundle.meta.k
        ));
    }

    let c = traj.len();
    let last = traj.weights_at(c);
    let names: Vec<String> = last.tensor_names().cloned().collect();

    let per_param: Vec<Result<(String, Matrix, ParamRecord), ExtrapolateError>> = names
        .par_iter()
        .map(|name| {
            let w = last.tensor(name).expect("own name");
            let chain = aligned_factor_chain(traj, name)?;
            let (g_factor, l_factor) = (&chain.g[c - 1], &chain.l[c - 1]);

            let skip = |reason: String| {
                (
                    name.clone(),
                    w.clone(),
                    ParamRecord {
                        param_name: name.clone(),
                        predicted_sigma: 0.0,
                        alpha,
                        delta_frobenius: 0.0,
                        skipped: true,
                        skip_reason: Some(reason),
                    },
                )
            };

            let (g_factor, l_factor) = match (g_factor, l_factor) {
                (Some(g), Some(l)) => (g, l),
                (None, _) => return Ok(skip("degenerate global delta".into())),
                (_, None) => return Ok(skip("degenerate local delta".into())),
            };

            match predict_target_delta(bundle, g_factor, l_factor, w.shape()) {
                Ok(delta_hat) => {
                    let extended = predict_extend(w, &delta_hat, alpha)?;
                    let sigma_hat = top_sigma(&delta_hat);
                    Ok((
                        name.clone(),
                        extended,
                        ParamRecord {
                            param_name: name.clone(),
                            predicted_sigma: sigma_hat,
                            alpha,
                            delta_frobenius: delta_hat.frobenius_norm(),
                            skipped: false,
                            skip_reason: None,
                        },
                    ))
                }
                Err(ExtrapolateError::MissingPredictor { field, dim }) => {
                    Ok(skip(format!("no predictor for ({}, {dim})", field.name())))
                }
                Err(ExtrapolateError::ZeroNormPrediction { field, .. }) => {
                    Err(ExtrapolateError::ZeroNormPrediction { param: name.clone(), field })
                }
                Err(e) => Err(e),
            }
        })
        .collect();

    let mut out = Checkpoint::new(extrapolated_step(traj, k));
    let mut records = Vec::with_capacity(names.len());
    for item in per_param {
        let (name, tensor, record) = item?;
        out.insert_tensor(name, tensor)?;
        records.push(record);
    }
    for (name, values) in last.passthrough() {
        out.insert_passthrough(name.clone(), values.clone())?;
    }

    let report = ExtrapolationReport {
        records,
        k,
        alpha,
        bundle_id: bundle.id(),
        warnings,
    };
    Ok((out, report))
}

/// sigma of a rank-1 matrix built by predict_target_delta: its Frobenius
/// norm (u and v are unit vectors).
fn top_sigma(delta: &Matrix) -> f64 {
    delta.frobenius_norm()
}

/// Linear extrapolation baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LinearVariant {
    /// last-interval slope on the full parameter: W_c + alpha * k * (W_c - W_{c-1})
    Full,
    /// same slope, but only its rank-1 approximation is applied
    Rank1,
    /// global slope: W_c + alpha * (W_c - W_0)
    FullGlobal,
}

pub fn linear_extrapolate(
    traj: &Trajectory,
    alpha: f64,
    k: usize,
    variant: LinearVariant,
) -> Result<Checkpoint, ExtrapolateError> {
    let c = traj.len();
    if c == 0 {
        return Err(ExtrapolateError::EmptyTrajectory);
    }
    if variant != LinearVariant::FullGlobal && c < 2 {
        return Err(ExtrapolateError::InsufficientCheckpoints { need: 2, c });
    }
    let last = traj.weights_at(c);
    let mut out = Checkpoint::new(extrapolated_step(traj, k));
    for (name, w) in last.tensors() {
        let delta = match variant {
            LinearVariant::Full | LinearVariant::Rank1 => {
                let prev = traj.weights_at(c - 1).tensor(name).ok_or_else(|| {
                    StoreError::SchemaMismatch(format!("'{name}' missing at c-1"))
                })?;
                w.sub(prev)?
            }
            LinearVariant::FullGlobal => {
                let base = traj.base.tensor(name).ok_or_else(|| {
                    StoreError::SchemaMismatch(format!("'{name}' missing from base"))
                })?;
                w.sub(base)?
            }
        };
        let scale = match variant {
            LinearVariant::Full | LinearVariant::Rank1 => alpha * k as f64,
            LinearVariant::FullGlobal => alpha,
        };
        let applied = match variant {
            LinearVariant::Rank1 => {
                let factor = top_singular_triplet_default(&delta)?;
                rank1_reconstruct(&factor)
            }
            _ => delta,
        };
        out.insert_tensor(name.clone(), w.add_scaled(&applied, scale)?)?;
    }
    for (name, values) in last.passthrough() {
        out.insert_passthrough(name.clone(), values.clone())?;
    }
    Ok(out)
}

// ---- comparison output --------------------------------------------------------

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub method: String,
    pub alpha: f64,
    pub param: String,
    pub frobenius_error: f64,
}

/// Per-parameter Frobenius distance between a prediction and the truth.
pub fn frobenius_errors(pred: &Checkpoint, truth: &Checkpoint) -> Result<Vec<(String, f64)>, ExtrapolateError> {
    let mut out = Vec::new();
    for (name, t) in truth.tensors() {
        let p = pred
            .tensor(name)
            .ok_or_else(|| StoreError::SchemaMismatch(format!("'{name}' missing from prediction")))?;
        out.push((name.clone(), p.sub(t)?.frobenius_norm()));
    }
    Ok(out)
}

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("method,alpha,param,frobenius_error\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.method, r.alpha, r.param, r.frobenius_error));
    }
    out
}
