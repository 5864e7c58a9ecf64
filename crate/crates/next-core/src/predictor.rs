//! The learned trajectory predictor: one encoder-decoder perceptron per
//! (field, dimension), trained with L1 loss and Adam on mini-batches of
//! stacked singular-vector examples. Rows of a batch never mix, so stacking
//! same-dimension vectors is purely a throughput device.
//!
//! Gradients are hand-derived: rectifier kinks use derivative 0 at zero
//! pre-activation, and the L1 kink uses sign(0) = 0.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Dataset, DatasetGroup, Field, SigmaTransform};
use crate::linalg::{batch_grad_inputs, batch_grad_weights, batch_linear, Matrix};
use crate::rng::Stream;
use crate::store::{self, StoreError};

#[derive(Debug, Error)]
pub enum PredictorError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("dataset group ({field:?}, {dim}) has no examples")]
    EmptyGroup { field: Field, dim: usize },
    #[error("training diverged in group ({field:?}, {dim}) at epoch {epoch}")]
    DivergedTraining { field: Field, dim: usize, epoch: usize },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Architecture of one predictor. The decoder consumes the concatenation of
/// the two encodings, so its input width is 2 * hidden_dim.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub field: Field,
}

impl PredictorConfig {
    pub fn new(input_dim: usize, field: Field) -> Self {
        PredictorConfig {
            input_dim,
            hidden_dim: 256,
            encoder_layers: 2,
            decoder_layers: 2,
            field,
        }
    }

    fn encoder_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.encoder_layers)
            .map(|l| {
                let n_in = if l == 0 { self.input_dim } else { self.hidden_dim };
                (self.hidden_dim, n_in)
            })
            .collect()
    }

    fn decoder_shapes(&self) -> Vec<(usize, usize)> {
        (0..self.decoder_layers)
            .map(|l| {
                let n_in = if l == 0 { 2 * self.hidden_dim } else { self.hidden_dim };
                let n_out = if l + 1 == self.decoder_layers { self.input_dim } else { self.hidden_dim };
                (n_out, n_in)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictorParams {
    pub enc_g: Vec<LayerParams>,
    pub enc_l: Vec<LayerParams>,
    pub dec: Vec<LayerParams>,
}

impl PredictorParams {
    fn layers(&self) -> impl Iterator<Item = &LayerParams> {
        self.enc_g.iter().chain(self.enc_l.iter()).chain(self.dec.iter())
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut LayerParams> {
        self.enc_g.iter_mut().chain(self.enc_l.iter_mut()).chain(self.dec.iter_mut())
    }

    pub fn zeros_like(&self) -> PredictorParams {
        let z = |layers: &[LayerParams]| {
            layers
                .iter()
                .map(|l| LayerParams {
                    weight: Matrix::zeros(l.weight.rows(), l.weight.cols()),
                    bias: vec![0.0; l.bias.len()],
                })
                .collect()
        };
        PredictorParams { enc_g: z(&self.enc_g), enc_l: z(&self.enc_l), dec: z(&self.dec) }
    }

    /// FNV-1a over the parameter bytes; a cheap content id for reports.
    pub fn content_hash(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut eat = |x: f64| {
            for byte in x.to_le_bytes() {
                h ^= u64::from(byte);
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        for layer in self.layers() {
            for x in layer.weight.data() {
                eat(*x);
            }
            for x in &layer.bias {
                eat(*x);
            }
        }
        h
    }
}

/// Weights i.i.d. uniform on [-1/sqrt(fan_in), +1/sqrt(fan_in)], biases zero.
pub fn init_uniform(cfg: &PredictorConfig, seed: u64) -> PredictorParams {
    let mut rng = Stream::keyed(seed, "predictor-init", &[cfg.input_dim as u64]);
    let mut mk = |shapes: Vec<(usize, usize)>| -> Vec<LayerParams> {
        shapes
            .into_iter()
            .map(|(n_out, n_in)| {
                let bound = 1.0 / (n_in as f64).sqrt();
                LayerParams {
                    weight: Matrix::from_fn(n_out, n_in, |_, _| rng.uniform(-bound, bound)).unwrap(),
                    bias: vec![0.0; n_out],
                }
            })
            .collect()
    };
    PredictorParams {
        enc_g: mk(cfg.encoder_shapes()),
        enc_l: mk(cfg.encoder_shapes()),
        dec: mk(cfg.decoder_shapes()),
    }
}

fn relu_inplace(m: &mut Matrix) {
    for x in m.data_mut() {
        if *x < 0.0 {
            *x = 0.0;
        }
    }
}

/// Post-activation stacks from one batched pass; index 0 is the input.
struct ForwardTrace {
    enc_g: Vec<Matrix>,
    enc_l: Vec<Matrix>,
    dec: Vec<Matrix>,
    output: Matrix,
}

fn forward_batch(p: &PredictorParams, xg: &Matrix, xl: &Matrix) -> ForwardTrace {
    let run_encoder = |layers: &[LayerParams], x: &Matrix| -> Vec<Matrix> {
        let mut acts = vec![x.clone()];
        for layer in layers {
            let mut z = batch_linear(acts.last().unwrap(), &layer.weight, &layer.bias);
            relu_inplace(&mut z);
            acts.push(z);
        }
        acts
    };
    let enc_g = run_encoder(&p.enc_g, xg);
    let enc_l = run_encoder(&p.enc_l, xl);

    let hg = enc_g.last().unwrap();
    let hl = enc_l.last().unwrap();
    let batch = hg.rows();
    let h = hg.cols();
    let concat = Matrix::from_fn(batch, 2 * h, |b, j| {
        if j < h {
            hg.get(b, j)
        } else {
            hl.get(b, j - h)
        }
    })
    .unwrap();

    let mut dec = vec![concat];
    let n_dec = p.dec.len();
    for (l, layer) in p.dec.iter().enumerate() {
        let mut z = batch_linear(dec.last().unwrap(), &layer.weight, &layer.bias);
        if l + 1 != n_dec {
            relu_inplace(&mut z);
        }
        dec.push(z);
    }
    let output = dec.last().unwrap().clone();
    ForwardTrace { enc_g, enc_l, dec, output }
}

fn check_dims(p: &PredictorParams, s_g: &[f64], s_l: &[f64]) -> Result<(), PredictorError> {
    let expected = p.enc_g[0].weight.cols();
    if s_g.len() != expected {
        return Err(PredictorError::DimensionMismatch { expected, got: s_g.len() });
    }
    let expected_l = p.enc_l[0].weight.cols();
    if s_l.len() != expected_l {
        return Err(PredictorError::DimensionMismatch { expected: expected_l, got: s_l.len() });
    }
    Ok(())
}

/// Single-example forward pass: encode both inputs, concatenate, decode.
pub fn forward(p: &PredictorParams, s_g: &[f64], s_l: &[f64]) -> Result<Vec<f64>, PredictorError> {
    check_dims(p, s_g, s_l)?;
    let xg = Matrix::new(1, s_g.len(), s_g.to_vec()).expect("finite inputs");
    let xl = Matrix::new(1, s_l.len(), s_l.to_vec()).expect("finite inputs");
    Ok(forward_batch(p, &xg, &xl).output.data().to_vec())
}

/// Sum of absolute residuals over one vector.
pub fn l1_loss(pred: &[f64], target: &[f64]) -> Result<f64, PredictorError> {
    if pred.len() != target.len() {
        return Err(PredictorError::DimensionMismatch { expected: target.len(), got: pred.len() });
    }
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t).abs()).sum())
}

fn sign0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Backpropagate through a forward trace. `dout` holds dLoss/dOutput rows;
/// returns gradients and (optionally) accumulates into `grads`.
fn backward_batch(p: &PredictorParams, trace: &ForwardTrace, dout: &Matrix) -> PredictorParams {
    let mut grads = p.zeros_like();

    // decoder, last layer first
    let mut grad = dout.clone();
    for l in (0..p.dec.len()).rev() {
        let input = &trace.dec[l];
        grads.dec[l].weight = batch_grad_weights(&grad, input);
        for j in 0..grad.cols() {
            grads.dec[l].bias[j] = (0..grad.rows()).map(|b| grad.get(b, j)).sum();
        }
        grad = batch_grad_inputs(&grad, &p.dec[l].weight);
        if l > 0 {
            // through the rectifier of the previous decoder layer
            let post = &trace.dec[l];
            mask_relu(&mut grad, post);
        }
    }

    // split the concat gradient back into the two encoder heads
    let h = trace.enc_g.last().unwrap().cols();
    let batch = grad.rows();
    let mut dhg = Matrix::from_fn(batch, h, |b, j| grad.get(b, j)).unwrap();
    let mut dhl = Matrix::from_fn(batch, h, |b, j| grad.get(b, j + h)).unwrap();

    backprop_encoder(&p.enc_g, &trace.enc_g, &mut dhg, &mut grads.enc_g);
    backprop_encoder(&p.enc_l, &trace.enc_l, &mut dhl, &mut grads.enc_l);
    grads
}

fn mask_relu(grad: &mut Matrix, post: &Matrix) {
    debug_assert_eq!(grad.shape(), post.shape());
    let post_data = post.data().to_vec();
    for (g, a) in grad.data_mut().iter_mut().zip(post_data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

fn backprop_encoder(
    layers: &[LayerParams],
    acts: &[Matrix],
    grad_out: &mut Matrix,
    grads: &mut [LayerParams],
) {
    // every encoder layer ends in a rectifier, including the last
    mask_relu(grad_out, acts.last().unwrap());
    let mut grad = grad_out.clone();
    for l in (0..layers.len()).rev() {
        let input = &acts[l];
        grads[l].weight = batch_grad_weights(&grad, input);
        for j in 0..grad.cols() {
            grads[l].bias[j] = (0..grad.rows()).map(|b| grad.get(b, j)).sum();
        }
        if l > 0 {
            grad = batch_grad_inputs(&grad, &layers[l].weight);
            mask_relu(&mut grad, &acts[l]);
        }
    }
}

/// Exact subgradients of l1_loss(forward(s_g, s_l), target) for one example.
pub fn backward(
    p: &PredictorParams,
    s_g: &[f64],
    s_l: &[f64],
    target: &[f64],
) -> Result<PredictorParams, PredictorError> {
    check_dims(p, s_g, s_l)?;
    let xg = Matrix::new(1, s_g.len(), s_g.to_vec()).expect("finite inputs");
    let xl = Matrix::new(1, s_l.len(), s_l.to_vec()).expect("finite inputs");
    let trace = forward_batch(p, &xg, &xl);
    if target.len() != trace.output.cols() {
        return Err(PredictorError::DimensionMismatch {
            expected: trace.output.cols(),
            got: target.len(),
        });
    }
    let dout = Matrix::from_fn(1, target.len(), |_, j| sign0(trace.output.get(0, j) - target[j]))
        .unwrap();
    Ok(backward_batch(p, &trace, &dout))
}

// ---- Adam ------------------------------------------------------------------

struct AdamSlot {
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
}

struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    slots: Vec<AdamSlot>,
}

impl Adam {
    fn new(params: &PredictorParams, lr: f64) -> Self {
        let slots = params
            .layers()
            .map(|l| AdamSlot {
                m_w: vec![0.0; l.weight.data().len()],
                v_w: vec![0.0; l.weight.data().len()],
                m_b: vec![0.0; l.bias.len()],
                v_b: vec![0.0; l.bias.len()],
            })
            .collect();
        Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, slots }
    }

    fn step(&mut self, params: &mut PredictorParams, grads: &PredictorParams) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for ((layer, grad), slot) in params.layers_mut().zip(grads.layers()).zip(&mut self.slots) {
            update(
                layer.weight.data_mut(),
                grad.weight.data(),
                &mut slot.m_w,
                &mut slot.v_w,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
            update(
                &mut layer.bias,
                &grad.bias,
                &mut slot.m_b,
                &mut slot.v_b,
                self.lr,
                self.beta1,
                self.beta2,
                self.eps,
                bc1,
                bc2,
            );
        }

        #[allow(clippy::too_many_arguments)]
        fn update(
            theta: &mut [f64],
            grad: &[f64],
            m: &mut [f64],
            v: &mut [f64],
            lr: f64,
            beta1: f64,
            beta2: f64,
            eps: f64,
            bc1: f64,
            bc2: f64,
        ) {
            for i in 0..theta.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                theta[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

// ---- training --------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainOptions {
    pub hidden_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub holdout_fraction: f64,
    pub batch_size: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            hidden_dim: 256,
            encoder_layers: 2,
            decoder_layers: 2,
            seed: 17,
            epochs: 200,
            lr: 1e-3,
            holdout_fraction: 0.1,
            batch_size: 32,
        }
    }
}

/// Loss curves of one trained group; index 0 is the pre-training value.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupStats {
    pub field: Field,
    pub dimension: usize,
    pub n_train: usize,
    pub n_holdout: usize,
    pub train_l1: Vec<f64>,
    pub holdout_l1: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BundleMeta {
    pub k: usize,
    pub seed: u64,
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub holdout_fraction: f64,
    pub sigma_transform: SigmaTransform,
    pub groups: Vec<GroupStats>,
}

/// One trained predictor per (field, dimension), plus training metadata.
#[derive(Debug, Clone)]
pub struct PredictorBundle {
    pub entries: BTreeMap<(Field, usize), (PredictorConfig, PredictorParams)>,
    pub meta: BundleMeta,
}

impl PredictorBundle {
    pub fn get(&self, field: Field, dim: usize) -> Option<&(PredictorConfig, PredictorParams)> {
        self.entries.get(&(field, dim))
    }

    /// Content id over all parameters, for report provenance.
    pub fn id(&self) -> String {
        let mut h = 0xcbf29ce484222325u64;
        for ((_, dim), (_, params)) in &self.entries {
            h ^= *dim as u64;
            h = h.wrapping_mul(0x100000001b3);
            h ^= params.content_hash();
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }
}

/// Train one predictor per dataset group. The holdout split removes whole
/// parameters (all their checkpoints) from training, deterministically from
/// the seed; a group whose training half would be empty keeps everything.
pub fn train(ds: &Dataset, opts: &TrainOptions) -> Result<PredictorBundle, PredictorError> {
    for g in &ds.groups {
        if g.examples.is_empty() {
            return Err(PredictorError::EmptyGroup { field: g.field, dim: g.dimension });
        }
    }

    // global holdout set of parameter names
    let mut names: Vec<&str> = ds
        .groups
        .iter()
        .flat_map(|g| g.examples.iter().map(|e| e.param_name.as_str()))
        .collect();
    names.sort_unstable();
    names.dedup();
    let n_holdout = if opts.holdout_fraction > 0.0 {
        (((names.len() as f64) * opts.holdout_fraction).ceil() as usize).min(names.len() - 1)
    } else {
        0
    };
    Stream::keyed(opts.seed, "holdout", &[]).shuffle(&mut names);
    let holdout_names: std::collections::BTreeSet<&str> =
        names[..n_holdout].iter().copied().collect();

    let mut entries = BTreeMap::new();
    let mut group_stats = Vec::new();
    for group in &ds.groups {
        let (cfg, params, stats) = train_group(group, &holdout_names, opts)?;
        entries.insert((group.field, group.dimension), (cfg, params));
        group_stats.push(stats);
    }

    Ok(PredictorBundle {
        entries,
        meta: BundleMeta {
            k: ds.meta.k,
            seed: opts.seed,
            epochs: opts.epochs,
            lr: opts.lr,
            batch_size: opts.batch_size,
            holdout_fraction: opts.holdout_fraction,
            sigma_transform: ds.meta.sigma_transform,
            groups: group_stats,
        },
    })
}

fn train_group(
    group: &DatasetGroup,
    holdout_names: &std::collections::BTreeSet<&str>,
    opts: &TrainOptions,
) -> Result<(PredictorConfig, PredictorParams, GroupStats), PredictorError> {
    let d = group.dimension;
    let cfg = PredictorConfig {
        input_dim: d,
        hidden_dim: opts.hidden_dim,
        encoder_layers: opts.encoder_layers,
        decoder_layers: opts.decoder_layers,
        field: group.field,
    };

    let mut train_idx: Vec<usize> = Vec::new();
    let mut holdout_idx: Vec<usize> = Vec::new();
    for (i, ex) in group.examples.iter().enumerate() {
        if holdout_names.contains(ex.param_name.as_str()) {
            holdout_idx.push(i);
        } else {
            train_idx.push(i);
        }
    }
    if train_idx.is_empty() {
        // every parameter of this dimension fell into the holdout; train on
        // everything rather than fail
        train_idx = (0..group.examples.len()).collect();
        holdout_idx.clear();
    }

    let field_tag = group.field as u64;
    let init_seed = Stream::keyed(opts.seed, "group-init", &[field_tag, d as u64]).next_u64();
    let mut params = init_uniform(&cfg, init_seed);
    let mut adam = Adam::new(&params, opts.lr);
    let mut shuffle_rng = Stream::keyed(opts.seed, "batch-order", &[field_tag, d as u64]);

    let stack = |indices: &[usize]| -> (Matrix, Matrix, Matrix) {
        let rows = indices.len();
        let xg = Matrix::from_fn(rows, d, |b, j| group.examples[indices[b]].s_g[j]).unwrap();
        let xl = Matrix::from_fn(rows, d, |b, j| group.examples[indices[b]].s_l[j]).unwrap();
        let xt = Matrix::from_fn(rows, d, |b, j| group.examples[indices[b]].s_t[j]).unwrap();
        (xg, xl, xt)
    };

    let eval = |params: &PredictorParams, indices: &[usize]| -> f64 {
        debug_assert!(!indices.is_empty());
        let (xg, xl, xt) = stack(indices);
        let trace = forward_batch(params, &xg, &xl);
        let mut total = 0.0;
        for b in 0..indices.len() {
            let mut row = 0.0;
            for j in 0..d {
                row += (trace.output.get(b, j) - xt.get(b, j)).abs();
            }
            total += row;
        }
        total / indices.len() as f64
    };

    let mut train_l1 = vec![eval(&params, &train_idx)];
    let mut holdout_l1 = Vec::new();
    if !holdout_idx.is_empty() {
        holdout_l1.push(eval(&params, &holdout_idx));
    }

    let mut order = train_idx.clone();
    for epoch in 1..=opts.epochs {
        shuffle_rng.shuffle(&mut order);
        for chunk in order.chunks(opts.batch_size.max(1)) {
            let (xg, xl, xt) = stack(chunk);
            let trace = forward_batch(&params, &xg, &xl);
            let scale = 1.0 / chunk.len() as f64;
            let dout = Matrix::from_fn(chunk.len(), d, |b, j| {
                sign0(trace.output.get(b, j) - xt.get(b, j)) * scale
            })
            .unwrap();
            let grads = backward_batch(&params, &trace, &dout);
            adam.step(&mut params, &grads);
        }
        let tl = eval(&params, &train_idx);
        if !tl.is_finite() {
            return Err(PredictorError::DivergedTraining { field: group.field, dim: d, epoch });
        }
        train_l1.push(tl);
        if !holdout_idx.is_empty() {
            holdout_l1.push(eval(&params, &holdout_idx));
        }
    }

    let stats = GroupStats {
        field: group.field,
        dimension: d,
        n_train: train_idx.len(),
        n_holdout: holdout_idx.len(),
        train_l1,
        holdout_l1,
    };
    Ok((cfg, params, stats))
}

// ---- bundle persistence ------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct BundleSidecar {
    meta: BundleMeta,
    configs: Vec<PredictorConfig>,
}

fn sidecar_path(path: &Path) -> PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    PathBuf::from(os)
}

/// Container keys are "<field>/<d>/<part>.<layer>.{w,b}"; the config and
/// training metadata live in the "<path>.json" sidecar.
pub fn save_bundle(bundle: &PredictorBundle, path: impl AsRef<Path>) -> Result<(), PredictorError> {
    let path = path.as_ref();
    let mut entries = BTreeMap::new();
    for ((field, dim), (_, params)) in &bundle.entries {
        let prefix = format!("{}/{dim}", field.name());
        for (part, layers) in [("enc_g", &params.enc_g), ("enc_l", &params.enc_l), ("dec", &params.dec)] {
            for (l, layer) in layers.iter().enumerate() {
                entries.insert(
                    format!("{prefix}/{part}.{l}.w"),
                    store::Payload::Mat(layer.weight.clone()),
                );
                entries.insert(format!("{prefix}/{part}.{l}.b"), store::Payload::Vec1(layer.bias.clone()));
            }
        }
    }
    store::write_container(path, &entries, &BTreeMap::new(), store::Dtype::F64)?;

    let sidecar = BundleSidecar {
        meta: bundle.meta.clone(),
        configs: bundle.entries.values().map(|(cfg, _)| cfg.clone()).collect(),
    };
    let sidecar_file = sidecar_path(path);
    let body = serde_json::to_string_pretty(&sidecar).expect("serializable sidecar");
    std::fs::write(&sidecar_file, body)
        .map_err(|e| StoreError::Io { path: sidecar_file.clone(), source: e })?;
    Ok(())
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<PredictorBundle, PredictorError> {
    let path = path.as_ref();
    let (raw, _) = store::read_container(path)?;
    let sidecar_file = sidecar_path(path);
    let body = std::fs::read_to_string(&sidecar_file)
        .map_err(|e| StoreError::Io { path: sidecar_file.clone(), source: e })?;
    let sidecar: BundleSidecar = serde_json::from_str(&body).map_err(|e| StoreError::Format {
        path: sidecar_file.clone(),
        message: format!("malformed bundle sidecar: {e}"),
    })?;

    let bad = |message: String| -> PredictorError {
        StoreError::Format { path: path.to_path_buf(), message }.into()
    };

    let mut entries = BTreeMap::new();
    for cfg in sidecar.configs {
        let prefix = format!("{}/{}", cfg.field.name(), cfg.input_dim);
        let fetch = |part: &str, l: usize, shapes: (usize, usize)| -> Result<LayerParams, PredictorError> {
            let wkey = format!("{prefix}/{part}.{l}.w");
            let bkey = format!("{prefix}/{part}.{l}.b");
            let weight = match raw.get(&wkey) {
                Some(store::Payload::Mat(m)) if m.shape() == shapes => m.clone(),
                Some(store::Payload::Mat(m)) => {
                    return Err(bad(format!(
                        "'{wkey}' has shape {:?}, expected {shapes:?}",
                        m.shape()
                    )))
                }
                _ => return Err(bad(format!("missing weight entry '{wkey}'"))),
            };
            let bias = match raw.get(&bkey) {
                Some(store::Payload::Vec1(v)) if v.len() == shapes.0 => v.clone(),
                _ => return Err(bad(format!("missing or misshapen bias entry '{bkey}'"))),
            };
            Ok(LayerParams { weight, bias })
        };

        let enc_shapes = cfg.encoder_shapes();
        let dec_shapes = cfg.decoder_shapes();
        let mut enc_g = Vec::new();
        let mut enc_l = Vec::new();
        let mut dec = Vec::new();
        for (l, &s) in enc_shapes.iter().enumerate() {
            enc_g.push(fetch("enc_g", l, s)?);
        }
        for (l, &s) in enc_shapes.iter().enumerate() {
            enc_l.push(fetch("enc_l", l, s)?);
        }
        for (l, &s) in dec_shapes.iter().enumerate() {
            dec.push(fetch("dec", l, s)?);
        }
        entries.insert(
            (cfg.field, cfg.input_dim),
            (cfg, PredictorParams { enc_g, enc_l, dec }),
        );
    }
    Ok(PredictorBundle { entries, meta: sidecar.meta })
}
