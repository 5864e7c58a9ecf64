//! Trajectory diagnostics: energy-ratio curves of the global deltas over
//! training, per-parameter R^2 of an affine least-squares extrapolation of
//! the rank-1 reconstruction, and the step-per-improvement ICER metric.

use rayon::prelude::*;
use thiserror::Error;

use crate::linalg::{
    energy_ratio, rank1_reconstruct, top_singular_triplet_default, LinalgError,
};
use crate::store::Trajectory;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("need at least {need} checkpoints, trajectory has {c}")]
    InsufficientCheckpoints { need: usize, c: usize },
    #[error("improvement must be positive: baseline {baseline}, new {new}")]
    NonPositiveImprovement { baseline: f64, new: f64 },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Energy-ratio curve of one parameter: E1(global delta) per checkpoint.
/// Degenerate deltas leave gaps rather than zero points.
#[derive(Debug, Clone)]
pub struct EnergySeries {
    pub param_name: String,
    pub points: Vec<(usize, f64)>,
}

/// E1 of the global delta for every parameter at every checkpoint.
pub fn energy_ratio_series(traj: &Trajectory) -> Result<Vec<EnergySeries>, DiagnosticsError> {
    if traj.len() < 2 {
        return Err(DiagnosticsError::InsufficientCheckpoints { need: 2, c: traj.len() });
    }
    let names: Vec<String> = traj.base.tensor_names().cloned().collect();
    names
        .par_iter()
        .map(|name| {
            let base = traj.base.tensor(name).expect("name from base");
            let mut points = Vec::with_capacity(traj.len());
            for (idx, ck) in traj.checkpoints.iter().enumerate() {
                let w = ck.tensor(name).ok_or_else(|| {
                    DiagnosticsError::SchemaMismatch(format!("'{name}' missing at {}", idx + 1))
                })?;
                let delta = w.sub(base).map_err(DiagnosticsError::Linalg)?;
                if delta.frobenius_norm() > 0.0 {
                    points.push((idx + 1, energy_ratio(&delta)?));
                }
            }
            Ok(EnergySeries { param_name: name.clone(), points })
        })
        .collect()
}

/// R^2 histogram bucket edges; bucket 0 also absorbs -inf from frozen
/// parameters with imperfect predictions.
pub const R2_BUCKETS: [&str; 4] = ["(-inf,-0.5)", "[-0.5,0)", "[0,0.5)", "[0.5,1]"];

#[derive(Debug, Clone)]
pub struct R2Report {
    pub per_param: Vec<(String, f64)>,
    pub histogram: [usize; 4],
    pub fit_window: usize,
    pub predict_window: usize,
    /// What the affine fit was computed on.
    pub regressed: &'static str,
}

/// Per parameter: fit every entry of the rank-1 reconstruction of the
/// global delta as an affine function of the checkpoint index over the fit
/// window, predict the next `predict_window` checkpoints, and score
/// R^2 = 1 - SS_res / SS_tot jointly over all predicted entries.
pub fn linear_r2(
    traj: &Trajectory,
    fit_window: usize,
    predict_window: usize,
) -> Result<R2Report, DiagnosticsError> {
    let c = traj.len();
    let need = fit_window + predict_window;
    if fit_window < 2 || predict_window < 1 || c < need {
        return Err(DiagnosticsError::InsufficientCheckpoints { need, c });
    }
    let names: Vec<String> = traj.base.tensor_names().cloned().collect();
    let per_param: Vec<(String, f64)> = names
        .par_iter()
        .map(|name| param_r2(traj, name, fit_window, predict_window).map(|r2| (name.clone(), r2)))
        .collect::<Result<_, DiagnosticsError>>()?;

    let mut histogram = [0usize; 4];
    for (_, r2) in &per_param {
        let bucket = if *r2 < -0.5 {
            0
        } else if *r2 < 0.0 {
            1
        } else if *r2 < 0.5 {
            2
        } else {
            3
        };
        histogram[bucket] += 1;
    }
    Ok(R2Report {
        per_param,
        histogram,
        fit_window,
        predict_window,
        regressed: "rank1-reconstruction-entries",
    })
}

fn param_r2(
    traj: &Trajectory,
    name: &str,
    fit_window: usize,
    predict_window: usize,
) -> Result<f64, DiagnosticsError> {
    let base = traj.base.tensor(name).expect("name from base");
    // rank-1 reconstruction of the global delta at each checkpoint index;
    // sign ambiguity cancels in the reconstruction
    let recon_at = |i: usize| -> Result<Vec<f64>, DiagnosticsError> {
        let w = traj.checkpoints[i - 1].tensor(name).ok_or_else(|| {
            DiagnosticsError::SchemaMismatch(format!("'{name}' missing at {i}"))
        })?;
        let delta = w.sub(base).map_err(DiagnosticsError::Linalg)?;
        let factor = top_singular_triplet_default(&delta)?;
        Ok(rank1_reconstruct(&factor).data().to_vec())
    };

    let fit: Vec<Vec<f64>> = (1..=fit_window).map(recon_at).collect::<Result<_, _>>()?;
    let truth: Vec<Vec<f64>> =
        (fit_window + 1..=fit_window + predict_window).map(recon_at).collect::<Result<_, _>>()?;

    let n_entries = fit[0].len();
    let n = fit_window as f64;
    let sum_i: f64 = (1..=fit_window).map(|i| i as f64).sum();
    let sum_ii: f64 = (1..=fit_window).map(|i| (i * i) as f64).sum();
    let det = n * sum_ii - sum_i * sum_i;

    // per-entry affine coefficients from the closed-form normal equations
    let mut slope = vec![0.0; n_entries];
    let mut intercept = vec![0.0; n_entries];
    for e in 0..n_entries {
        let sum_y: f64 = fit.iter().map(|row| row[e]).sum();
        let sum_iy: f64 = fit.iter().enumerate().map(|(idx, row)| (idx + 1) as f64 * row[e]).sum();
        slope[e] = (n * sum_iy - sum_i * sum_y) / det;
        intercept[e] = (sum_y - slope[e] * sum_i) / n;
    }

    let count = (n_entries * predict_window) as f64;
    let mean_true: f64 =
        truth.iter().flat_map(|row| row.iter()).sum::<f64>() / count;
    let mut ss_res = 0.0;
    let mut ss_tot = 0.0;
    for (offset, row) in truth.iter().enumerate() {
        let i = (fit_window + 1 + offset) as f64;
        for e in 0..n_entries {
            let pred = intercept[e] + slope[e] * i;
            ss_res += (pred - row[e]) * (pred - row[e]);
            ss_tot += (row[e] - mean_true) * (row[e] - mean_true);
        }
    }

    if ss_tot == 0.0 {
        // frozen window: perfect prediction scores 1, anything else falls
        // into the lowest bucket
        let scale = count * (1.0 + mean_true * mean_true);
        return Ok(if ss_res <= 1e-18 * scale { 1.0 } else { f64::NEG_INFINITY });
    }
    Ok(1.0 - ss_res / ss_tot)
}

/// Incremental cost-effectiveness ratio: training steps per percentage
/// point of improvement. Lower is better.
pub fn icer(steps: u64, baseline_avg: f64, new_avg: f64) -> Result<f64, DiagnosticsError> {
    if new_avg <= baseline_avg {
        return Err(DiagnosticsError::NonPositiveImprovement { baseline: baseline_avg, new: new_avg });
    }
    Ok(steps as f64 / (new_avg - baseline_avg))
}

// ---- CSV output -------------------------------------------------------------

pub fn energy_csv(series: &[EnergySeries]) -> String {
    let mut out = String::from("param,checkpoint,energy_ratio\n");
    for s in series {
        for (i, e) in &s.points {
            out.push_str(&format!("{},{},{}\n", s.param_name, i, e));
        }
    }
    out
}

pub fn r2_csv(report: &R2Report) -> String {
    let mut out = String::from("param,r2\n");
    for (name, r2) in &report.per_param {
        out.push_str(&format!("{name},{r2}\n"));
    }
    let buckets: Vec<String> = R2_BUCKETS
        .iter()
        .zip(&report.histogram)
        .map(|(label, count)| format!("{label}:{count}"))
        .collect();
    out.push_str(&format!("bucket_counts,{}\n", buckets.join("|")));
    out
}
