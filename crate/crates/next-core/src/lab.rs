//! Synthetic trajectory generation with known ground truth.
//!
//! Two families: analytic trajectories where every parameter moves along a
//! planted rank-1 direction under a closed-form schedule (so the true
//! continuation is available for any future step), and toy training runs
//! where a small tanh network is actually optimized by full-batch gradient
//! descent, in full-parameter or LoRA mode.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{batch_grad_inputs, batch_grad_weights, batch_linear, normalize, Matrix};
use crate::rng::Stream;
use crate::store::{
    save_checkpoint_f64, save_manifest, Checkpoint, ManifestEntry, StoreError, TrajectoryManifest,
};

/// Checkpoints are labeled with optimizer-step indices at this stride, so a
/// 15-checkpoint run carries steps 10..150.
pub const STEP_STRIDE: u64 = 10;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("training diverged at step {step} (loss {loss})")]
    DivergedTraining { step: usize, loss: f64 },
}

// ---- analytic trajectories --------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DynamicsKind {
    Linear,
    Saturating,
    Logistic,
}

/// Closed-form schedule for the planted rank-1 motion of every parameter.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DynamicsSpec {
    pub kind: DynamicsKind,
    pub amplitude: f64,
    pub timescale: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl DynamicsSpec {
    /// f(t) evaluated at checkpoint index t for a run of `total` checkpoints.
    pub fn factor(&self, t: usize, total: usize) -> f64 {
        let t = t as f64;
        match self.kind {
            DynamicsKind::Linear => self.amplitude * t / total as f64,
            DynamicsKind::Saturating => self.amplitude * (1.0 - (-t / self.timescale).exp()),
            DynamicsKind::Logistic => {
                let mid = total as f64 / 2.0;
                self.amplitude / (1.0 + (-(t - mid) / self.timescale).exp())
            }
        }
    }
}

/// Everything needed to regenerate or continue an analytic run; written next
/// to the manifest so downstream comparisons can recover the ground truth.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyticRun {
    pub dynamics: DynamicsSpec,
    pub shapes: Vec<(usize, usize)>,
    pub n_checkpoints: usize,
}

/// File name of the ground-truth echo written by [`gen_analytic_trajectory`].
pub const ANALYTIC_RUN_FILE: &str = "dynamics.json";
/// File name of the manifest written by the generators.
pub const MANIFEST_FILE: &str = "trajectory.json";

fn param_name(j: usize) -> String {
    format!("param_{j:04}.weight")
}

fn bias_name(j: usize) -> String {
    format!("param_{j:04}.bias")
}

struct Plant {
    sigma: f64,
    u: Vec<f64>,
    v: Vec<f64>,
    base: Matrix,
    bias: Vec<f64>,
}

fn plant_for(spec: &DynamicsSpec, j: usize, (m, n): (usize, usize)) -> Plant {
    let mut rng = Stream::keyed(spec.seed, "plant", &[j as u64]);
    let mut u: Vec<f64> = (0..m).map(|_| rng.normal()).collect();
    let mut v: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
    normalize(&mut u);
    normalize(&mut v);
    // lead component positive so the planted factor already carries the
    // canonical sign
    if u[0] < 0.0 {
        for x in u.iter_mut() {
            *x = -*x;
        }
        for x in v.iter_mut() {
            *x = -*x;
        }
    }
    let sigma = rng.uniform(5.0, 15.0);
    let mut base_rng = Stream::keyed(spec.seed, "base", &[j as u64]);
    let base = Matrix::from_fn(m, n, |_, _| 0.1 * base_rng.normal()).expect("finite base");
    let bias: Vec<f64> = (0..m).map(|_| 0.1 * base_rng.normal()).collect();
    Plant { sigma, u, v, base, bias }
}

/// The checkpoint of an analytic run at index t (t = 0 is the base).
/// Noise is drawn per (parameter, t) from counter-keyed streams, so any
/// checkpoint can be rebuilt in isolation.
pub fn analytic_checkpoint(run: &AnalyticRun, t: usize, with_noise: bool) -> Checkpoint {
    let mut c = Checkpoint::new(t as u64 * STEP_STRIDE);
    let f = if t == 0 { 0.0 } else { run.dynamics.factor(t, run.n_checkpoints) };
    for (j, &shape) in run.shapes.iter().enumerate() {
        let plant = plant_for(&run.dynamics, j, shape);
        let mut w = if f == 0.0 {
            plant.base.clone()
        } else {
            plant.base.add_scaled(&Matrix::outer(plant.sigma, &plant.u, &plant.v), f).unwrap()
        };
        if with_noise && t > 0 && run.dynamics.noise_std > 0.0 {
            let mut noise = Stream::keyed(run.dynamics.seed, "noise", &[j as u64, t as u64]);
            let data = w.data_mut();
            for x in data.iter_mut() {
                *x += run.dynamics.noise_std * noise.normal();
            }
        }
        c.insert_tensor(param_name(j), w).unwrap();
        c.insert_passthrough(bias_name(j), plant.bias.clone()).unwrap();
    }
    c
}

/// Noise-free signal checkpoint at index t: the target against which
/// extrapolations are scored.
pub fn analytic_ground_truth(run: &AnalyticRun, t: usize) -> Checkpoint {
    analytic_checkpoint(run, t, false)
}

/// Generate an analytic trajectory on disk: base checkpoint, `n_checkpoints`
/// noisy checkpoints, the manifest, and the ground-truth echo.
pub fn gen_analytic_trajectory(
    spec: &DynamicsSpec,
    shapes: &[(usize, usize)],
    n_checkpoints: usize,
    out_dir: impl AsRef<Path>,
) -> Result<TrajectoryManifest, LabError> {
    if n_checkpoints < 3 {
        return Err(LabError::InvalidSpec(format!(
            "need at least 3 checkpoints, got {n_checkpoints}"
        )));
    }
    if shapes.is_empty() {
        return Err(LabError::InvalidSpec("no parameter shapes given".into()));
    }
    if spec.timescale <= 0.0 {
        return Err(LabError::InvalidSpec("timescale must be positive".into()));
    }
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| LabError::Io { path: out_dir.into(), source: e })?;

    let run = AnalyticRun {
        dynamics: spec.clone(),
        shapes: shapes.to_vec(),
        n_checkpoints,
    };

    let base = analytic_checkpoint(&run, 0, false);
    save_checkpoint_f64(&base, out_dir.join("base.safetensors"))?;

    let mut entries = Vec::with_capacity(n_checkpoints);
    for t in 1..=n_checkpoints {
        let ck = analytic_checkpoint(&run, t, true);
        let file = format!("ckpt_{t:03}.safetensors");
        save_checkpoint_f64(&ck, out_dir.join(&file))?;
        entries.push(ManifestEntry { step: t as u64 * STEP_STRIDE, path: file });
    }

    let manifest = TrajectoryManifest::new(Some("base.safetensors".into()), entries, None);
    save_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;

    let run_path = out_dir.join(ANALYTIC_RUN_FILE);
    let body = serde_json::to_string_pretty(&run).expect("serializable run");
    fs::write(&run_path, body).map_err(|e| LabError::Io { path: run_path, source: e })?;

    crate::store::load_manifest(out_dir.join(MANIFEST_FILE)).map_err(LabError::Store)
}

/// Load the ground-truth echo of an analytic run, if the directory has one.
pub fn load_analytic_run(dir: impl AsRef<Path>) -> Result<Option<AnalyticRun>, LabError> {
    let path = dir.as_ref().join(ANALYTIC_RUN_FILE);
    if !path.exists() {
        return Ok(None);
    }
    let body = fs::read_to_string(&path).map_err(|e| LabError::Io { path: path.clone(), source: e })?;
    let run = serde_json::from_str(&body)
        .map_err(|e| LabError::InvalidSpec(format!("malformed {}: {e}", path.display())))?;
    Ok(Some(run))
}

// ---- toy training runs -------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "mode", content = "rank")]
pub enum TrainMode {
    Full,
    Lora(usize),
}

/// A small feed-forward regression run: tanh hidden layers, squared error
/// against y = sin(P x) for a fixed random map P, full-batch gradient
/// descent. layer_shapes chain output-to-input: (m_i, n_i) with
/// n_{i+1} = m_i.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ToyTrainSpec {
    pub layer_shapes: Vec<(usize, usize)>,
    pub task_seed: u64,
    pub steps: usize,
    pub save_interval: usize,
    pub learning_rate: f64,
    pub mode: TrainMode,
}

impl ToyTrainSpec {
    fn validate(&self) -> Result<(), LabError> {
        if self.layer_shapes.is_empty() {
            return Err(LabError::InvalidSpec("no layer shapes".into()));
        }
        for pair in self.layer_shapes.windows(2) {
            if pair[1].1 != pair[0].0 {
                return Err(LabError::InvalidSpec(format!(
                    "layer shapes do not chain: {:?} feeds {:?}",
                    pair[0], pair[1]
                )));
            }
        }
        if self.save_interval == 0 || self.steps == 0 || !self.steps.is_multiple_of(self.save_interval) {
            return Err(LabError::InvalidSpec(format!(
                "steps {} must be a positive multiple of save_interval {}",
                self.steps, self.save_interval
            )));
        }
        if let TrainMode::Lora(r) = self.mode {
            for &(m, n) in &self.layer_shapes {
                if r == 0 || r > m.min(n) {
                    return Err(LabError::InvalidSpec(format!(
                        "lora rank {r} out of range for layer {m}x{n}"
                    )));
                }
            }
        }
        Ok(())
    }
}

const TOY_BATCH: usize = 64;

struct ToyNet {
    /// frozen base weights (lora mode) or live weights (full mode)
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    /// per-layer (B: m x r, A: r x n) adapters, lora mode only
    adapters: Option<Vec<(Matrix, Matrix)>>,
}

impl ToyNet {
    fn init(spec: &ToyTrainSpec) -> Self {
        let mut rng = Stream::keyed(spec.task_seed, "toy-init", &[]);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for &(m, n) in &spec.layer_shapes {
            let bound = 1.0 / (n as f64).sqrt();
            weights.push(Matrix::from_fn(m, n, |_, _| rng.uniform(-bound, bound)).unwrap());
            biases.push(vec![0.0; m]);
        }
        let adapters = match spec.mode {
            TrainMode::Full => None,
            TrainMode::Lora(r) => {
                let mut ar = Stream::keyed(spec.task_seed, "toy-lora", &[]);
                Some(
                    spec.layer_shapes
                        .iter()
                        .map(|&(m, n)| {
                            let bound = 1.0 / (n as f64).sqrt();
                            let b = Matrix::zeros(m, r);
                            let a = Matrix::from_fn(r, n, |_, _| ar.uniform(-bound, bound)).unwrap();
                            (b, a)
                        })
                        .collect(),
                )
            }
        };
        ToyNet { weights, biases, adapters }
    }

    /// Effective weight of layer l: W + B A in lora mode, W otherwise.
    fn effective(&self, l: usize) -> Matrix {
        match &self.adapters {
            Some(ad) => {
                let ba = ad[l].0.matmul(&ad[l].1).unwrap();
                self.weights[l].add_scaled(&ba, 1.0).unwrap()
            }
            None => self.weights[l].clone(),
        }
    }

    fn snapshot(&self, step: u64) -> Checkpoint {
        let mut c = Checkpoint::new(step);
        for l in 0..self.weights.len() {
            c.insert_tensor(format!("layer{l:02}.weight"), self.effective(l)).unwrap();
            c.insert_passthrough(format!("layer{l:02}.bias"), self.biases[l].clone()).unwrap();
        }
        c
    }
}

/// Train the toy network and save merged checkpoints every save_interval
/// steps. The base checkpoint is the untrained network.
pub fn gen_toy_training_trajectory(
    spec: &ToyTrainSpec,
    out_dir: impl AsRef<Path>,
) -> Result<TrajectoryManifest, LabError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| LabError::Io { path: out_dir.into(), source: e })?;

    let in_dim = spec.layer_shapes[0].1;
    let out_dim = spec.layer_shapes.last().unwrap().0;
    let n_layers = spec.layer_shapes.len();

    // fixed task: inputs drawn once, targets y = sin(P x) elementwise
    let mut task_rng = Stream::keyed(spec.task_seed, "toy-task", &[]);
    let inputs = Matrix::from_fn(TOY_BATCH, in_dim, |_, _| task_rng.normal()).unwrap();
    let proj_scale = 1.0 / (in_dim as f64).sqrt();
    let proj = Matrix::from_fn(out_dim, in_dim, |_, _| proj_scale * task_rng.normal()).unwrap();
    let targets = Matrix::from_fn(TOY_BATCH, out_dim, |b, o| {
        let mut acc = 0.0;
        for k in 0..in_dim {
            acc += proj.get(o, k) * inputs.get(b, k);
        }
        acc.sin()
    })
    .unwrap();

    let mut net = ToyNet::init(spec);

    let base = net.snapshot(0);
    save_checkpoint_f64(&base, out_dir.join("base.safetensors"))?;

    let mut entries = Vec::new();
    for step in 1..=spec.steps {
        // forward: acts[l] = layer input, last entry is the network output
        let effective: Vec<Matrix> = (0..n_layers).map(|l| net.effective(l)).collect();
        let mut acts: Vec<Matrix> = vec![inputs.clone()];
        for (l, w) in effective.iter().enumerate() {
            let z = batch_linear(acts.last().unwrap(), w, &net.biases[l]);
            let a = if l + 1 == n_layers { z } else { map_matrix(&z, f64::tanh) };
            acts.push(a);
        }
        let output = acts.last().unwrap();

        let mut loss = 0.0;
        for (o, t) in output.data().iter().zip(targets.data()) {
            loss += (o - t) * (o - t);
        }
        loss *= 0.5 / TOY_BATCH as f64;
        if !loss.is_finite() {
            return Err(LabError::DivergedTraining { step, loss });
        }

        // backward
        let mut grad = Matrix::from_fn(TOY_BATCH, out_dim, |b, o| {
            (output.get(b, o) - targets.get(b, o)) / TOY_BATCH as f64
        })
        .unwrap();
        for l in (0..n_layers).rev() {
            if l + 1 != n_layers {
                // through tanh: a = tanh(z), da/dz = 1 - a^2
                let a = acts[l + 1].clone();
                grad = Matrix::from_fn(grad.rows(), grad.cols(), |b, j| {
                    let aj = a.get(b, j);
                    grad.get(b, j) * (1.0 - aj * aj)
                })
                .unwrap();
            }
            let input = &acts[l];
            let dw = batch_grad_weights(&grad, input);
            let db: Vec<f64> = (0..grad.cols())
                .map(|j| (0..TOY_BATCH).map(|b| grad.get(b, j)).sum())
                .collect();
            let next_grad = if l > 0 { Some(batch_grad_inputs(&grad, &effective[l])) } else { None };

            match &mut net.adapters {
                Some(ad) => {
                    // only B and A move; base weights and biases stay frozen
                    let (b_mat, a_mat) = &mut ad[l];
                    let db_mat = dw.matmul_bt(a_mat);
                    let da_mat = b_mat.matmul_t(&dw);
                    axpy_matrix(b_mat, &db_mat, -spec.learning_rate);
                    axpy_matrix(a_mat, &da_mat, -spec.learning_rate);
                }
                None => {
                    axpy_matrix(&mut net.weights[l], &dw, -spec.learning_rate);
                    for (b, g) in net.biases[l].iter_mut().zip(&db) {
                        *b -= spec.learning_rate * g;
                    }
                }
            }

            if let Some(g) = next_grad {
                grad = g;
            }
        }

        if step % spec.save_interval == 0 {
            let ck = net.snapshot(step as u64);
            let file = format!("ckpt_{:03}.safetensors", step / spec.save_interval);
            save_checkpoint_f64(&ck, out_dir.join(&file))?;
            entries.push(ManifestEntry { step: step as u64, path: file });
        }
    }

    let manifest = TrajectoryManifest::new(Some("base.safetensors".into()), entries, None);
    save_manifest(&manifest, out_dir.join(MANIFEST_FILE))?;

    let spec_path = out_dir.join("toytrain.json");
    let body = serde_json::to_string_pretty(spec).expect("serializable spec");
    fs::write(&spec_path, body).map_err(|e| LabError::Io { path: spec_path, source: e })?;

    crate::store::load_manifest(out_dir.join(MANIFEST_FILE)).map_err(LabError::Store)
}

fn map_matrix(m: &Matrix, f: impl Fn(f64) -> f64) -> Matrix {
    let mut out = m.clone();
    for x in out.data_mut() {
        *x = f(*x);
    }
    out
}

fn axpy_matrix(dst: &mut Matrix, delta: &Matrix, alpha: f64) {
    debug_assert_eq!(dst.shape(), delta.shape());
    for (d, g) in dst.data_mut().iter_mut().zip(delta.data()) {
        *d += alpha * g;
    }
}

impl Matrix {
    /// self * other^T
    pub(crate) fn matmul_bt(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.cols(), other.cols());
        Matrix::from_fn(self.rows(), other.rows(), |i, j| {
            let a = self.row(i);
            let b = other.row(j);
            a.iter().zip(b).map(|(x, y)| x * y).sum()
        })
        .unwrap()
    }

    /// self^T * other
    pub(crate) fn matmul_t(&self, other: &Matrix) -> Matrix {
        debug_assert_eq!(self.rows(), other.rows());
        let mut out = Matrix::zeros(self.cols(), other.cols());
        let (rows, a_cols) = self.shape();
        let b_cols = other.cols();
        for r in 0..rows {
            for i in 0..a_cols {
                let a = self.get(r, i);
                if a == 0.0 {
                    continue;
                }
                for k in 0..b_cols {
                    let idx = i * b_cols + k;
                    out.data_mut()[idx] += a * other.get(r, k);
                }
            }
        }
        out
    }
}
