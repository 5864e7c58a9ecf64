//! Acceptance suite: one test per criterion, each printing a pass line.
//! Run with `cargo test --test acceptance -- --nocapture` to see them.

use std::collections::BTreeSet;
use std::time::Instant;

use next_core::dataset::{extract_dataset, ExtractOptions};
use next_core::extrapolate::{
    comparison_csv, extrapolate_checkpoint, frobenius_errors, linear_extrapolate, ComparisonRow,
    LinearVariant,
};
use next_core::lab::{
    analytic_ground_truth, gen_analytic_trajectory, gen_toy_training_trajectory,
    load_analytic_run, DynamicsKind, DynamicsSpec, ToyTrainSpec, TrainMode,
};
use next_core::linalg::{
    energy_ratio, full_svd, normalize, top_singular_triplet, Matrix,
};
use next_core::predictor::{backward, forward, init_uniform, l1_loss, train, PredictorConfig, TrainOptions};
use next_core::rng::Stream;
use next_core::store::{
    load_checkpoint, save_checkpoint, save_checkpoint_f64, Checkpoint, StoreError, Trajectory,
};
use next_core::{dataset, predictor, Field};

fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = Stream::keyed(seed, "acceptance-matrix", &[rows as u64, cols as u64]);
    Matrix::from_fn(rows, cols, |_, _| rng.normal()).unwrap()
}

/// Test-local Jacobi eigendecomposition with eigenvector accumulation,
/// independent of the library's spectrum-only path. Returns the top
/// eigenpair of a symmetric matrix.
fn top_eigenpair(n: usize, mut a: Vec<f64>) -> (f64, Vec<f64>) {
    let mut vecs = vec![0.0; n * n];
    for i in 0..n {
        vecs[i * n + i] = 1.0;
    }
    for _ in 0..80 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off.sqrt() < 1e-13 {
            break;
        }
        for p in 0..(n - 1) {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = 0.5 * (2.0 * apq).atan2(a[q * n + q] - a[p * n + p]);
                let (s, c) = theta.sin_cos();
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = vecs[k * n + p];
                    let vkq = vecs[k * n + q];
                    vecs[k * n + p] = c * vkp - s * vkq;
                    vecs[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..n {
        if a[i * n + i] > a[best * n + best] {
            best = i;
        }
    }
    let vec: Vec<f64> = (0..n).map(|k| vecs[k * n + best]).collect();
    (a[best * n + best], vec)
}

/// 100 random matrices up to 64x48 whose spectral gap exceeds 1e-3 * sigma1.
fn gapped_corpus() -> Vec<Matrix> {
    let mut corpus = Vec::new();
    let mut seed = 0u64;
    while corpus.len() < 100 {
        let mut rng = Stream::keyed(seed, "corpus-shape", &[]);
        let rows = 2 + rng.below(63);
        let cols = 2 + rng.below(47);
        let m = seeded_matrix(rows, cols, seed);
        let s = full_svd(&m).unwrap().singular_values;
        if s.len() >= 2 && s[0] - s[1] > 1e-3 * s[0] {
            corpus.push(m);
        }
        seed += 1;
    }
    corpus
}

#[test]
fn criterion_01_svd_oracle_equivalence() {
    let started = Instant::now();
    for m in gapped_corpus() {
        let spectrum = full_svd(&m).unwrap().singular_values;
        let sigma1 = spectrum[0];
        // a gap barely above 1e-3 needs a few thousand iterations to pin
        // the direction to 1e-8; the defaults stop at sigma convergence
        let triplet = top_singular_triplet(&m, 1e-13, 20_000).unwrap();
        assert!(
            (triplet.sigma - sigma1).abs() <= 1e-8 * sigma1,
            "sigma {} vs {} on {}x{}",
            triplet.sigma,
            sigma1,
            m.rows(),
            m.cols()
        );

        // direction oracle: top eigenvector of M^T M, pushed through M
        let n = m.cols();
        let mut gram = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for r in 0..m.rows() {
                    acc += m.get(r, i) * m.get(r, j);
                }
                gram[i * n + j] = acc;
            }
        }
        let (_, v1) = top_eigenpair(n, gram);
        let mut u1 = m.matvec(&v1);
        normalize(&mut u1);
        let cos: f64 = triplet.u.iter().zip(&u1).map(|(a, b)| a * b).sum();
        assert!(
            cos.abs() >= 1.0 - 1e-8,
            "direction cosine {} on {}x{}",
            cos.abs(),
            m.rows(),
            m.cols()
        );
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 5.0, "took {elapsed:?}");
    println!("[PASS] criterion 1: top-triplet/full-SVD equivalence on 100 gapped matrices in {elapsed:.2?}");
}

#[test]
fn criterion_02_energy_identities() {
    for m in gapped_corpus() {
        let spectrum = full_svd(&m).unwrap();
        let fro_sq = m.frobenius_norm().powi(2);
        let energy: f64 = spectrum.singular_values.iter().map(|s| s * s).sum();
        assert!((fro_sq - energy).abs() <= 1e-9 * fro_sq);
    }

    for seed in 0..20u64 {
        let mut rng = Stream::keyed(seed, "rank1-energy", &[]);
        let rows = 2 + rng.below(30);
        let cols = 2 + rng.below(30);
        let mut u: Vec<f64> = (0..rows).map(|_| rng.normal()).collect();
        let mut v: Vec<f64> = (0..cols).map(|_| rng.normal()).collect();
        normalize(&mut u);
        normalize(&mut v);
        let m = Matrix::outer(rng.uniform(0.5, 5.0), &u, &v);
        let e = energy_ratio(&m).unwrap();
        assert!((e - 1.0).abs() <= 1e-12, "rank-1 energy {e}");
    }

    let diag = Matrix::new(2, 2, vec![3.0, 0.0, 0.0, 4.0]).unwrap();
    let e = energy_ratio(&diag).unwrap();
    assert!((e - 4.0 / 7.0).abs() <= 1e-12);
    println!("[PASS] criterion 2: Frobenius identity, rank-1 energy 1.0, diagonal 4/7");
}

#[test]
fn criterion_03_delta_algebra() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DynamicsSpec {
        kind: DynamicsKind::Saturating,
        amplitude: 1.0,
        timescale: 6.0,
        noise_std: 0.02,
        seed: 77,
    };
    let man = gen_analytic_trajectory(&spec, &[(8, 6), (6, 8), (5, 9), (7, 7)], 15, dir.path()).unwrap();
    let traj = Trajectory::load(&man).unwrap();

    // telescoping: global delta equals the sum of local deltas
    for name in ["param_0000.weight", "param_0002.weight"] {
        for i in [1usize, 7, 15] {
            let deltas = dataset::compute_deltas(&traj, i, 1).unwrap();
            let g = &deltas[name].g;
            let mut acc = Matrix::zeros(g.rows(), g.cols());
            for j in 1..=i {
                let dj = dataset::compute_deltas(&traj, j, 1).unwrap();
                acc = acc.add_scaled(&dj[name].l, 1.0).unwrap();
            }
            assert!(acc.max_abs_diff(g) <= 1e-12, "telescoping at i = {i}");
        }
    }

    // cardinality in the 15-checkpoint, k = 5 regime
    let ds = extract_dataset(&traj, 5, &ExtractOptions::default()).unwrap();
    assert_eq!(ds.n_examples() + ds.meta.skipped_examples, 3 * 4 * (15 - 5));
    assert_eq!(ds.meta.skipped_examples, 0);

    // and with a frozen parameter the identity still balances
    let mut base = Checkpoint::new(0);
    base.insert_tensor("a", Matrix::zeros(4, 4)).unwrap();
    base.insert_tensor("frozen", Matrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64).unwrap()).unwrap();
    let checkpoints: Vec<Checkpoint> = (1..=15u64)
        .map(|i| {
            let mut c = Checkpoint::new(i * 10);
            c.insert_tensor("a", Matrix::from_fn(4, 4, |r, col| (i as f64) * ((r + 2 * col) as f64 + 1.0)).unwrap())
                .unwrap();
            c.insert_tensor("frozen", Matrix::from_fn(3, 3, |r, col| (r * 3 + col) as f64).unwrap())
                .unwrap();
            c
        })
        .collect();
    let frozen_traj = Trajectory { base, checkpoints };
    let ds = extract_dataset(&frozen_traj, 5, &ExtractOptions::default()).unwrap();
    assert_eq!(ds.n_examples(), 30);
    assert_eq!(ds.meta.skipped_examples, 30);
    assert_eq!(ds.n_examples() + ds.meta.skipped_examples, 3 * 2 * 10);
    println!("[PASS] criterion 3: delta telescoping <= 1e-12 and exact dataset cardinality");
}

#[test]
fn criterion_04_lora_rank_structure() {
    let base_spec = |mode, seed| ToyTrainSpec {
        layer_shapes: vec![(12, 10), (8, 12)],
        task_seed: seed,
        steps: 60,
        save_interval: 10,
        learning_rate: 0.05,
        mode,
    };

    // rank-1 adapters leave rank-1 global deltas
    let dir = tempfile::tempdir().unwrap();
    let man = gen_toy_training_trajectory(&base_spec(TrainMode::Lora(1), 3), dir.path()).unwrap();
    let traj = Trajectory::load(&man).unwrap();
    for ck in &traj.checkpoints {
        for (name, m) in ck.tensors() {
            let delta = m.sub(traj.base.tensor(name).unwrap()).unwrap();
            if delta.frobenius_norm() == 0.0 {
                continue;
            }
            let e = energy_ratio(&delta).unwrap();
            assert!((e - 1.0).abs() <= 1e-6, "{name}: energy {e}");
        }
    }

    // rank-4 adapters bound the tail spectrum
    let dir = tempfile::tempdir().unwrap();
    let man = gen_toy_training_trajectory(&base_spec(TrainMode::Lora(4), 3), dir.path()).unwrap();
    let traj = Trajectory::load(&man).unwrap();
    for ck in &traj.checkpoints {
        for (name, m) in ck.tensors() {
            let delta = m.sub(traj.base.tensor(name).unwrap()).unwrap();
            if delta.frobenius_norm() == 0.0 {
                continue;
            }
            let s = full_svd(&delta).unwrap().singular_values;
            for tail in &s[4..] {
                assert!(*tail <= 1e-6 * s[0], "{name}: tail {tail} vs {}", s[0]);
            }
        }
    }

    // lora(r = 4) dominates full fine-tuning on mean energy ratio, 5/5 seeds
    for seed in 1..=5u64 {
        let mean_energy = |mode| {
            let dir = tempfile::tempdir().unwrap();
            let man = gen_toy_training_trajectory(&base_spec(mode, seed), dir.path()).unwrap();
            let traj = Trajectory::load(&man).unwrap();
            let series = next_core::energy_ratio_series(&traj).unwrap();
            let (mut sum, mut n) = (0.0, 0usize);
            for s in &series {
                for (_, e) in &s.points {
                    sum += e;
                    n += 1;
                }
            }
            sum / n as f64
        };
        let full = mean_energy(TrainMode::Full);
        let lora = mean_energy(TrainMode::Lora(4));
        assert!(lora > full, "seed {seed}: lora {lora} vs full {full}");
    }
    println!("[PASS] criterion 4: lora rank bounds and lora > full energy dominance on 5/5 seeds");
}

#[test]
fn criterion_05_r2_diagnostic() {
    // analytic linear truth scores exactly 1
    let dir = tempfile::tempdir().unwrap();
    let spec = DynamicsSpec {
        kind: DynamicsKind::Linear,
        amplitude: 1.0,
        timescale: 5.0,
        noise_std: 0.0,
        seed: 15,
    };
    let man = gen_analytic_trajectory(&spec, &[(8, 6), (5, 5), (6, 9)], 15, dir.path()).unwrap();
    let traj = Trajectory::load(&man).unwrap();
    let report = next_core::linear_r2(&traj, 10, 5).unwrap();
    for (name, r2) in &report.per_param {
        assert!((r2 - 1.0).abs() <= 1e-9, "{name}: {r2}");
    }

    // quadratic planted dynamics against the closed-form normal equations:
    // y = t^2, fit 1..10, predict 11..15 -> slope 11, intercept -22,
    // SS_res 14764, SS_tot 6774
    let mut base = Checkpoint::new(0);
    base.insert_tensor("w", Matrix::new(1, 1, vec![0.0]).unwrap()).unwrap();
    let checkpoints: Vec<Checkpoint> = (1..=15u64)
        .map(|i| {
            let mut c = Checkpoint::new(i);
            c.insert_tensor("w", Matrix::new(1, 1, vec![(i * i) as f64]).unwrap()).unwrap();
            c
        })
        .collect();
    let quad = Trajectory { base, checkpoints };
    let report = next_core::linear_r2(&quad, 10, 5).unwrap();
    let got = report.per_param[0].1;
    let oracle = 1.0 - 14764.0 / 6774.0;
    assert!((got - oracle).abs() <= 1e-9, "got {got}, oracle {oracle}");
    assert!(got < 1.0);
    println!("[PASS] criterion 5: linear R^2 = 1 and quadratic R^2 matches closed form ({oracle:.6})");
}

#[test]
fn criterion_06_predictor_gradients() {
    let mut checked = 0;
    let mut seed = 0u64;
    while checked < 20 && seed < 400 {
        seed += 1;
        let cfg = PredictorConfig {
            input_dim: 3,
            hidden_dim: 4,
            encoder_layers: 2,
            decoder_layers: 2,
            field: Field::U,
        };
        let params = init_uniform(&cfg, seed);
        let mut rng = Stream::keyed(seed, "acc-fd", &[]);
        let s_g: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let s_l: Vec<f64> = (0..3).map(|_| rng.normal()).collect();
        let out = forward(&params, &s_g, &s_l).unwrap();
        let target: Vec<f64> = out
            .iter()
            .enumerate()
            .map(|(i, o)| if i % 2 == 0 { o + 0.6 } else { o - 0.8 })
            .collect();

        // keep clear of rectifier kinks: perturbing one weight by 1e-5
        // moves pre-activations far less than this margin
        if !preactivations_clear(&params, &s_g, &s_l, 1e-3) {
            continue;
        }
        let analytic = backward(&params, &s_g, &s_l, &target).unwrap();
        let loss =
            |p: &next_core::PredictorParams| l1_loss(&forward(p, &s_g, &s_l).unwrap(), &target).unwrap();

        let h = 1e-5;
        let mut max_rel = 0.0f64;
        let mut probe = params.clone();
        for li in 0..6 {
            let (w_len, b_len) = {
                let layer = layer_at(&probe, li);
                (layer.weight.data().len(), layer.bias.len())
            };
            for e in 0..w_len + b_len {
                let orig = read_entry(&probe, li, e);
                write_entry(&mut probe, li, e, orig + h);
                let up = loss(&probe);
                write_entry(&mut probe, li, e, orig - h);
                let down = loss(&probe);
                write_entry(&mut probe, li, e, orig);
                let fd = (up - down) / (2.0 * h);
                let an = read_entry(&analytic, li, e);
                let denom = fd.abs().max(an.abs());
                if denom > 1e-7 {
                    max_rel = max_rel.max((fd - an).abs() / denom);
                }
            }
        }
        assert!(max_rel < 1e-4, "seed {seed}: max relative error {max_rel}");
        checked += 1;
    }
    assert_eq!(checked, 20);
    println!("[PASS] criterion 6: finite-difference gradient agreement on 20 seeded configs");
}

fn layer_at(p: &next_core::PredictorParams, li: usize) -> &next_core::predictor::LayerParams {
    p.enc_g.iter().chain(p.enc_l.iter()).chain(p.dec.iter()).nth(li).unwrap()
}

fn read_entry(p: &next_core::PredictorParams, li: usize, e: usize) -> f64 {
    let layer = layer_at(p, li);
    if e < layer.weight.data().len() {
        layer.weight.data()[e]
    } else {
        layer.bias[e - layer.weight.data().len()]
    }
}

fn write_entry(p: &mut next_core::PredictorParams, li: usize, e: usize, value: f64) {
    let layer = p
        .enc_g
        .iter_mut()
        .chain(p.enc_l.iter_mut())
        .chain(p.dec.iter_mut())
        .nth(li)
        .unwrap();
    let w_len = layer.weight.data().len();
    if e < w_len {
        let rows = layer.weight.rows();
        let cols = layer.weight.cols();
        let mut data = layer.weight.data().to_vec();
        data[e] = value;
        layer.weight = Matrix::new(rows, cols, data).unwrap();
    } else {
        layer.bias[e - w_len] = value;
    }
}

fn preactivations_clear(
    p: &next_core::PredictorParams,
    s_g: &[f64],
    s_l: &[f64],
    margin: f64,
) -> bool {
    let dense = |layer: &next_core::predictor::LayerParams, x: &[f64]| -> Vec<f64> {
        (0..layer.weight.rows())
            .map(|j| {
                layer.bias[j]
                    + x.iter().enumerate().map(|(k, xv)| layer.weight.get(j, k) * xv).sum::<f64>()
            })
            .collect()
    };
    let mut ok = true;
    let mut run_enc = |layers: &[next_core::predictor::LayerParams], x: &[f64]| -> Vec<f64> {
        let mut h = x.to_vec();
        for layer in layers {
            let z = dense(layer, &h);
            if z.iter().any(|v| v.abs() < margin) {
                ok = false;
            }
            h = z.into_iter().map(|v| v.max(0.0)).collect();
        }
        h
    };
    let mut h = run_enc(&p.enc_g, s_g);
    h.extend(run_enc(&p.enc_l, s_l));
    for (l, layer) in p.dec.iter().enumerate() {
        let z = dense(layer, &h);
        if l + 1 != p.dec.len() {
            if z.iter().any(|v| v.abs() < margin) {
                ok = false;
            }
            h = z.into_iter().map(|v| v.max(0.0)).collect();
        }
    }
    ok
}

/// The saturating desk benchmark: 200 parameters of mixed shapes, 15
/// checkpoints, k = 5, noise 0.01.
fn saturating_benchmark(dir: &std::path::Path) -> (Trajectory, next_core::lab::AnalyticRun) {
    let shapes: Vec<(usize, usize)> = (0..200)
        .map(|i| match i % 8 {
            0 => (16, 12),
            1 => (12, 16),
            2 => (24, 16),
            3 => (8, 10),
            4 => (20, 20),
            5 => (6, 12),
            6 => (12, 6),
            _ => (10, 8),
        })
        .collect();
    let spec = DynamicsSpec {
        kind: DynamicsKind::Saturating,
        amplitude: 1.0,
        timescale: 6.0,
        noise_std: 0.01,
        seed: 4242,
    };
    let man = gen_analytic_trajectory(&spec, &shapes, 15, dir).unwrap();
    let traj = Trajectory::load(&man).unwrap();
    let run = load_analytic_run(dir).unwrap().unwrap();
    (traj, run)
}

#[test]
fn criterion_07_end_to_end_extrapolation_quality() {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    pool.install(|| {
        let started = Instant::now();
        let dir = tempfile::tempdir().unwrap();
        let (traj, run) = saturating_benchmark(dir.path());
        let k = 5;

        let ds = extract_dataset(&traj, k, &ExtractOptions::default()).unwrap();
        let opts = TrainOptions {
            hidden_dim: 48,
            batch_size: 32,
            ..Default::default()
        };
        let bundle = train(&ds, &opts).unwrap();
        let (mut hold_init, mut hold_final, mut hold_n) = (0.0, 0.0, 0usize);
        for g in &bundle.meta.groups {
            let initial_train = g.train_l1[0];
            let final_train = *g.train_l1.last().unwrap();
            assert!(final_train < initial_train, "({:?}, {}) train loss did not drop", g.field, g.dimension);
            if let (Some(first), Some(last)) = (g.holdout_l1.first(), g.holdout_l1.last()) {
                hold_init += first * g.n_holdout as f64;
                hold_final += last * g.n_holdout as f64;
                hold_n += g.n_holdout;
            }
        }
        // overall held-out L1 (the training objective's own reduction,
        // examples-weighted across groups) must at least halve
        assert!(hold_n > 0);
        assert!(
            hold_final < 0.5 * hold_init,
            "holdout L1 {} vs initial {}",
            hold_final / hold_n as f64,
            hold_init / hold_n as f64
        );

        let truth = analytic_ground_truth(&run, run.n_checkpoints + k);
        let (ours, report) = extrapolate_checkpoint(&traj, &bundle, 1.0, k).unwrap();
        assert!(report.records.iter().all(|r| !r.skipped));
        let baseline = linear_extrapolate(&traj, 1.0, k, LinearVariant::Full).unwrap();

        let ours_err = frobenius_errors(&ours, &truth).unwrap();
        let base_err = frobenius_errors(&baseline, &truth).unwrap();
        assert_eq!(ours_err.len(), 200);
        let wins = ours_err
            .iter()
            .zip(&base_err)
            .filter(|((_, a), (_, b))| a < b)
            .count();
        let mean_ours: f64 = ours_err.iter().map(|(_, e)| e).sum::<f64>() / 200.0;
        let mean_base: f64 = base_err.iter().map(|(_, e)| e).sum::<f64>() / 200.0;
        let elapsed = started.elapsed();

        assert!(wins >= 160, "beat the linear baseline on only {wins}/200 parameters");
        assert!(mean_ours < mean_base, "mean error {mean_ours} vs baseline {mean_base}");
        assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?} single-threaded");
        println!(
            "[PASS] criterion 7: beat linear baseline on {wins}/200 parameters, mean {mean_ours:.4} vs {mean_base:.4}, in {elapsed:.1?}"
        );
    });
}

#[test]
fn criterion_08_identity_affine_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DynamicsSpec {
        kind: DynamicsKind::Saturating,
        amplitude: 1.0,
        timescale: 5.0,
        noise_std: 0.005,
        seed: 55,
    };
    let shapes = [(8, 6), (6, 8), (7, 7), (9, 5)];
    let man = gen_analytic_trajectory(&spec, &shapes, 10, dir.path()).unwrap();
    let traj = Trajectory::load(&man).unwrap();
    let k = 3;
    let ds = extract_dataset(&traj, k, &ExtractOptions::default()).unwrap();
    let opts = TrainOptions { hidden_dim: 16, epochs: 40, batch_size: 16, ..Default::default() };
    let bundle = train(&ds, &opts).unwrap();

    // alpha = 0 reproduces the last checkpoint payload bit-exactly
    let (at_zero, _) = extrapolate_checkpoint(&traj, &bundle, 0.0, k).unwrap();
    assert!(at_zero.payload_eq(traj.checkpoints.last().unwrap()));

    // affine in alpha: W(a2) - W(a1) = (a2 - a1) * delta
    let name = "param_0000.weight";
    let w = traj.checkpoints.last().unwrap().tensor(name).unwrap();
    let (a1, a2) = (0.7, 2.9);
    let (ck1, _) = extrapolate_checkpoint(&traj, &bundle, a1, k).unwrap();
    let (ck2, _) = extrapolate_checkpoint(&traj, &bundle, a2, k).unwrap();
    let dw = ck2.tensor(name).unwrap().sub(ck1.tensor(name).unwrap()).unwrap();
    // recover delta from the a1 output: (W(a1) - W) / a1
    let delta = ck1.tensor(name).unwrap().sub(w).unwrap();
    for (d, e) in dw.data().iter().zip(delta.data()) {
        assert!((d - e * (a2 - a1) / a1).abs() <= 1e-12);
    }

    // the alpha sweep emits one checkpoint per coefficient plus a CSV
    let sweep_dir = dir.path().join("sweep");
    std::fs::create_dir_all(&sweep_dir).unwrap();
    let alphas = [0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5, 4.0];
    let run = load_analytic_run(dir.path()).unwrap().unwrap();
    let truth = analytic_ground_truth(&run, run.n_checkpoints + k);
    let mut rows = Vec::new();
    for alpha in alphas {
        let (ck, _) = extrapolate_checkpoint(&traj, &bundle, alpha, k).unwrap();
        save_checkpoint_f64(&ck, sweep_dir.join(format!("alpha_{alpha:.2}.safetensors"))).unwrap();
        for (param, err) in frobenius_errors(&ck, &truth).unwrap() {
            rows.push(ComparisonRow { method: "next".into(), alpha, param, frobenius_error: err });
        }
    }
    std::fs::write(sweep_dir.join("sweep.csv"), comparison_csv(&rows)).unwrap();

    let mut files: Vec<String> = std::fs::read_dir(&sweep_dir)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .filter(|n| n.starts_with("alpha_"))
        .collect();
    files.sort();
    let expected: Vec<String> =
        alphas.iter().map(|a| format!("alpha_{a:.2}.safetensors")).collect();
    assert_eq!(files, expected, "sweep file set is not the monotone alpha grid");
    assert_eq!(rows.len(), alphas.len() * 4);
    println!("[PASS] criterion 8: alpha = 0 identity, affine-in-alpha, monotone 8-point sweep");
}

#[test]
fn criterion_09_icer_reference_values() {
    let a = next_core::icer(250, 19.1, 24.2).unwrap();
    assert!((a - 49.0).abs() <= 0.1, "{a}");
    let b = next_core::icer(250, 19.1, 23.1).unwrap();
    assert!((b - 62.5).abs() <= 0.1, "{b}");
    let c = next_core::icer(250, 20.8, 28.3).unwrap();
    assert!((c - 33.3).abs() <= 0.1, "{c}");
    println!("[PASS] criterion 9: ICER 49.0 / 62.5 / 33.3 reproduced");
}

#[test]
fn criterion_10_format_round_trips() {
    let dir = tempfile::tempdir().unwrap();

    // checkpoint: save -> load -> save is byte identical, both dtypes
    let mut ck = Checkpoint::new(42);
    let mut rng = Stream::keyed(7, "roundtrip", &[]);
    ck.insert_tensor("a.weight", Matrix::from_fn(5, 4, |_, _| rng.normal() as f32 as f64).unwrap())
        .unwrap();
    ck.insert_passthrough("a.bias", (0..5).map(|_| rng.normal() as f32 as f64).collect())
        .unwrap();
    type SaveFn = fn(&Checkpoint, &std::path::Path) -> Result<(), StoreError>;
    let savers: [(SaveFn, &str); 2] = [
        (|c, p| save_checkpoint(c, p), "f32"),
        (|c, p| save_checkpoint_f64(c, p), "f64"),
    ];
    for (save, tag) in savers {
        let p1 = dir.path().join(format!("ck_{tag}_1.safetensors"));
        let p2 = dir.path().join(format!("ck_{tag}_2.safetensors"));
        save(&ck, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert!(loaded.payload_eq(&ck));
        save(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    // dataset and bundle round trips
    let traj_dir = tempfile::tempdir().unwrap();
    let spec = DynamicsSpec {
        kind: DynamicsKind::Saturating,
        amplitude: 1.0,
        timescale: 4.0,
        noise_std: 0.01,
        seed: 13,
    };
    let man = gen_analytic_trajectory(&spec, &[(6, 5), (5, 6)], 8, traj_dir.path()).unwrap();
    let traj = Trajectory::load(&man).unwrap();
    let ds = extract_dataset(&traj, 2, &ExtractOptions::default()).unwrap();
    let d1 = dir.path().join("ds1.safetensors");
    let d2 = dir.path().join("ds2.safetensors");
    dataset::save_dataset(&ds, &d1).unwrap();
    let ds_loaded = dataset::load_dataset(&d1).unwrap();
    dataset::save_dataset(&ds_loaded, &d2).unwrap();
    assert_eq!(std::fs::read(&d1).unwrap(), std::fs::read(&d2).unwrap());

    let opts = TrainOptions { hidden_dim: 8, epochs: 5, ..Default::default() };
    let bundle = train(&ds, &opts).unwrap();
    let b1 = dir.path().join("b1.safetensors");
    let b2 = dir.path().join("b2.safetensors");
    predictor::save_bundle(&bundle, &b1).unwrap();
    let bundle_loaded = predictor::load_bundle(&b1).unwrap();
    assert_eq!(bundle_loaded.id(), bundle.id());
    predictor::save_bundle(&bundle_loaded, &b2).unwrap();
    assert_eq!(std::fs::read(&b1).unwrap(), std::fs::read(&b2).unwrap());

    // malformed headers are format errors, never panics
    let bad_specimens: Vec<(&str, Vec<u8>)> = vec![
        ("trunc", vec![1, 2, 3]),
        ("huge-n", {
            let mut v = (u64::MAX).to_le_bytes().to_vec();
            v.extend_from_slice(b"{}");
            v
        }),
        ("not-json", {
            let hdr = b"][ nonsense";
            let mut v = (hdr.len() as u64).to_le_bytes().to_vec();
            v.extend_from_slice(hdr);
            v
        }),
        ("bad-offsets", {
            let hdr = br#"{"w":{"dtype":"F32","shape":[2,2],"data_offsets":[0,99]}}"#;
            let mut v = (hdr.len() as u64).to_le_bytes().to_vec();
            v.extend_from_slice(hdr);
            v.extend_from_slice(&[0u8; 16]);
            v
        }),
        ("bad-dtype", {
            let hdr = br#"{"w":{"dtype":"I8","shape":[1,2],"data_offsets":[0,2]}}"#;
            let mut v = (hdr.len() as u64).to_le_bytes().to_vec();
            v.extend_from_slice(hdr);
            v.extend_from_slice(&[0u8; 2]);
            v
        }),
        ("overlap", {
            let hdr = br#"{"a":{"dtype":"F32","shape":[1,2],"data_offsets":[0,8]},"b":{"dtype":"F32","shape":[1,2],"data_offsets":[4,12]}}"#;
            let mut v = (hdr.len() as u64).to_le_bytes().to_vec();
            v.extend_from_slice(hdr);
            v.extend_from_slice(&[0u8; 12]);
            v
        }),
    ];
    for (tag, bytes) in bad_specimens {
        let p = dir.path().join(format!("bad_{tag}.safetensors"));
        std::fs::write(&p, bytes).unwrap();
        match load_checkpoint(&p) {
            Err(StoreError::Format { .. }) => {}
            other => panic!("{tag}: expected FormatError, got {other:?}"),
        }
    }
    println!("[PASS] criterion 10: byte-identical round trips and graceful format errors");
}

#[test]
fn criterion_03b_schema_and_counts_seen_through_files() {
    // the c = 15 / k = 5 regime again, but through on-disk manifests to
    // cover the load path the other criteria bypass
    let dir = tempfile::tempdir().unwrap();
    let spec = DynamicsSpec {
        kind: DynamicsKind::Linear,
        amplitude: 1.0,
        timescale: 5.0,
        noise_std: 0.0,
        seed: 2,
    };
    let man = gen_analytic_trajectory(&spec, &[(6, 5), (5, 6), (4, 4), (7, 3)], 15, dir.path()).unwrap();
    assert_eq!(man.steps(), (1..=15).map(|i| i * 10).collect::<Vec<u64>>());
    let traj = Trajectory::load(&man).unwrap();
    let ds = extract_dataset(&traj, 5, &ExtractOptions::default()).unwrap();
    assert_eq!(ds.n_examples(), 120);
    let dims: BTreeSet<(Field, usize)> =
        ds.groups.iter().map(|g| (g.field, g.dimension)).collect();
    assert!(dims.contains(&(Field::Sigma, 1)));
    println!("[PASS] criterion 3 (file path): 15-checkpoint regime counts hold through manifests");
}
