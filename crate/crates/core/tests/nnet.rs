use fillerkit_core::nnet::gradcheck::{check_model, Objective};
use fillerkit_core::nnet::*;
use fillerkit_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-4;

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_grads(model: &Model, x: &Tensor, label: &str) {
    let report = check_model(model, x, &Objective::Projection, 40, 7).unwrap();
    assert!(report.worst() < TOL, "{label}: {report:?}");
}

#[test]
fn dense_identity_passes_input_through() {
    let mut m = Model::new(vec![LayerSpec::Dense { input_size: 3, output_size: 3 }], 0).unwrap();
    m.layers[0].params[0].value = vec![1., 0., 0., 0., 1., 0., 0., 0., 1.];
    let x = Tensor::new(vec![1, 3], vec![0.5, -2.0, 3.0]).unwrap();
    assert_eq!(m.predict(&x).unwrap().data(), x.data());
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let m = Model::new(vec![LayerSpec::Softmax], 0).unwrap();
    let y = m.predict(&Tensor::new(vec![1, 3], vec![2.0; 3]).unwrap()).unwrap();
    for v in y.data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-12);
    }
}

#[test]
fn conv1d_identity_kernel() {
    let mut m = Model::new(
        vec![LayerSpec::Conv1dTemporal { in_channels: 1, out_channels: 1, kernel: 3, stride: 1 }],
        0,
    )
    .unwrap();
    m.layers[0].params[0].value = vec![0.0, 1.0, 0.0];
    let x = Tensor::new(vec![1, 1, 5], vec![1., 2., 3., 4., 5.]).unwrap();
    assert_eq!(m.predict(&x).unwrap().data(), x.data());
}

#[test]
fn lstm_with_zero_weights_outputs_constant() {
    let mut m = Model::new(vec![LayerSpec::Lstm { input_size: 2, hidden_size: 3 }], 0).unwrap();
    for p in m.params_mut() {
        p.fill(0.0);
    }
    let y = m.predict(&random(&[2, 2, 4], 1)).unwrap();
    // Gates are all 0.5 and g = 0: c stays 0, so h = 0.5 * tanh(0) = 0.
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn conv2d_matches_direct_loop() {
    let m = Model::new(vec![LayerSpec::Conv2d { in_channels: 2, out_channels: 3, kernel: [3, 5] }], 4).unwrap();
    let x = random(&[2, 2, 4, 6], 2);
    let y = m.predict(&x).unwrap();
    let w = &m.layers[0].params[0].value;
    let b = &m.layers[0].params[1].value;
    let (h, wd) = (4i64, 6i64);
    for n in 0..2 {
        for o in 0..3 {
            for r in 0..h {
                for c in 0..wd {
                    let mut acc = b[o];
                    for i in 0..2 {
                        for dh in 0..3i64 {
                            for dw in 0..5i64 {
                                let (ir, ic) = (r + dh - 1, c + dw - 2);
                                if ir < 0 || ir >= h || ic < 0 || ic >= wd {
                                    continue;
                                }
                                acc += w[((o * 2 + i) * 3 + dh as usize) * 5 + dw as usize]
                                    * x.data()[((n * 2 + i) * 4 + ir as usize) * 6 + ic as usize];
                            }
                        }
                    }
                    let got = y.data()[((n * 3 + o) * 4 + r as usize) * 6 + c as usize];
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn strided_conv1d_matches_direct_loop() {
    let m = Model::new(
        vec![LayerSpec::Conv1dTemporal { in_channels: 2, out_channels: 2, kernel: 4, stride: 3 }],
        9,
    )
    .unwrap();
    let x = random(&[1, 2, 10], 3);
    let y = m.predict(&x).unwrap();
    let w = &m.layers[0].params[0].value;
    let b = &m.layers[0].params[1].value;
    let t_out = y.dim(2);
    assert_eq!(t_out, (10 + 2 * 2 - 4) / 3 + 1);
    for o in 0..2 {
        for s in 0..t_out {
            let mut acc = b[o];
            for i in 0..2 {
                for k in 0..4 {
                    let ti = (s * 3 + k) as i64 - 2;
                    if (0..10).contains(&ti) {
                        acc += w[(o * 2 + i) * 4 + k] * x.data()[i * 10 + ti as usize];
                    }
                }
            }
            assert!((y.data()[o * t_out + s] - acc).abs() < 1e-12);
        }
    }
}

#[test]
fn adaptive_pool_bins_cover_input() {
    let m = Model::new(vec![LayerSpec::AvgPoolTime { output_frames: Some(3) }], 0).unwrap();
    let x = Tensor::new(vec![1, 1, 7], vec![1., 2., 3., 4., 5., 6., 7.]).unwrap();
    // Bins [0,3), [2,5), [4,7).
    assert_eq!(m.predict(&x).unwrap().data(), &[2.0, 4.0, 6.0]);
    let g = Model::new(vec![LayerSpec::AvgPoolTime { output_frames: None }], 0).unwrap();
    let y = g.predict(&x).unwrap();
    assert_eq!(y.shape(), &[1, 1]);
    assert_eq!(y.data(), &[4.0]);
}

#[test]
fn gradients_dense() {
    for (i, &(n, cin, cout, t)) in [(1, 3, 2, 1), (2, 4, 5, 3), (3, 1, 1, 7), (2, 6, 3, 2)].iter().enumerate() {
        let m = Model::new(vec![LayerSpec::Dense { input_size: cin, output_size: cout }], i as u64).unwrap();
        assert_grads(&m, &random(&[n, cin, t], i as u64 + 10), "dense");
    }
}

#[test]
fn gradients_conv2d() {
    for (i, &(n, cin, cout, h, w, kh, kw)) in
        [(1, 1, 2, 4, 5, 3, 3), (2, 2, 3, 3, 6, 3, 1), (1, 3, 1, 5, 4, 1, 5), (2, 1, 1, 2, 2, 5, 5)]
            .iter()
            .enumerate()
    {
        let m = Model::new(vec![LayerSpec::Conv2d { in_channels: cin, out_channels: cout, kernel: [kh, kw] }], i as u64)
            .unwrap();
        assert_grads(&m, &random(&[n, cin, h, w], i as u64), "conv2d");
    }
}

#[test]
fn gradients_conv1d() {
    for (i, &(n, cin, cout, t, k, s)) in
        [(1, 2, 3, 8, 3, 1), (2, 3, 2, 9, 9, 2), (1, 1, 1, 5, 4, 3), (3, 2, 2, 6, 1, 1)].iter().enumerate()
    {
        let m = Model::new(
            vec![LayerSpec::Conv1dTemporal { in_channels: cin, out_channels: cout, kernel: k, stride: s }],
            i as u64,
        )
        .unwrap();
        assert_grads(&m, &random(&[n, cin, t], i as u64), "conv1d");
    }
}

#[test]
fn gradients_batchnorm() {
    for (i, shape) in [vec![4, 3], vec![2, 2, 5], vec![3, 1, 2, 3]].iter().enumerate() {
        let m = Model::new(vec![LayerSpec::BatchNorm { channels: shape[1] }], i as u64).unwrap();
        assert_grads(&m, &random(shape, i as u64), "batchnorm");
    }
}

#[test]
fn gradients_activations_and_pooling() {
    let x = random(&[2, 3, 8, 5], 5);
    for spec in [
        LayerSpec::Relu,
        LayerSpec::Sigmoid,
        LayerSpec::Softmax,
        LayerSpec::MaxPoolFreq { pool: 4 },
        LayerSpec::MaxPoolFreq { pool: 3 },
    ] {
        let m = Model::new(vec![spec.clone()], 0).unwrap();
        assert_grads(&m, &x, &format!("{spec:?}"));
    }
    for spec in [
        LayerSpec::AvgPoolTime { output_frames: None },
        LayerSpec::AvgPoolTime { output_frames: Some(4) },
        LayerSpec::AvgPoolTime { output_frames: Some(13) },
    ] {
        let m = Model::new(vec![spec.clone()], 0).unwrap();
        assert_grads(&m, &random(&[2, 3, 9], 6), &format!("{spec:?}"));
    }
}

#[test]
fn gradients_lstm() {
    for (i, &(n, inp, h, t)) in [(1, 2, 3, 4), (2, 3, 2, 6), (1, 1, 4, 3)].iter().enumerate() {
        let m = Model::new(vec![LayerSpec::Lstm { input_size: inp, hidden_size: h }], i as u64).unwrap();
        assert_grads(&m, &random(&[n, inp, t], i as u64), "lstm");
    }
}

#[test]
fn gradients_residual_block() {
    for (i, &(cin, cout, k, s, t)) in [(2, 2, 3, 1, 6), (2, 3, 3, 2, 7), (3, 2, 5, 2, 8)].iter().enumerate() {
        let m = Model::new(
            vec![LayerSpec::ResidualBlock { in_channels: cin, out_channels: cout, kernel: k, stride: s }],
            i as u64,
        )
        .unwrap();
        assert_grads(&m, &random(&[3, cin, t], i as u64 + 40), "residual");
    }
}

#[test]
fn fused_and_generic_loss_gradients_agree_with_finite_differences() {
    let m = Model::new(
        vec![
            LayerSpec::Dense { input_size: 4, output_size: 3 },
            LayerSpec::Softmax,
        ],
        1,
    )
    .unwrap();
    let x = random(&[5, 4], 2);
    let y = one_hot(&[0, 1, 2, 1, 0], 5, 3, &[]).unwrap();
    let r = check_model(&m, &x, &Objective::Loss(Loss::CrossEntropy, y), 50, 3).unwrap();
    assert!(r.worst() < TOL, "{r:?}");

    let m = Model::new(
        vec![
            LayerSpec::Dense { input_size: 4, output_size: 1 },
            LayerSpec::Sigmoid,
        ],
        1,
    )
    .unwrap();
    let y = Tensor::new(vec![5, 1], vec![1., 0., 1., 1., 0.]).unwrap();
    let r = check_model(&m, &x, &Objective::Loss(Loss::BinaryCrossEntropy, y.clone()), 50, 3).unwrap();
    assert!(r.worst() < TOL, "{r:?}");
    // No matching activation: generic path.
    let m = Model::new(vec![LayerSpec::Dense { input_size: 4, output_size: 1 }, LayerSpec::Sigmoid, LayerSpec::Relu], 1)
        .unwrap();
    let r = check_model(&m, &x, &Objective::Loss(Loss::BinaryCrossEntropy, y), 50, 3).unwrap();
    assert!(r.worst() < TOL, "{r:?}");
}

fn blobs(n: usize, seed: u64) -> TensorDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = [[2.0, 2.0], [-2.0, 2.0], [0.0, -2.5]];
    let mut inputs = Vec::new();
    let mut targets = Vec::new();
    for i in 0..n {
        let c = i % 3;
        let x = Tensor::new(
            vec![2],
            vec![centers[c][0] + rng.gen_range(-0.8..0.8), centers[c][1] + rng.gen_range(-0.8..0.8)],
        )
        .unwrap();
        let mut y = vec![0.0; 3];
        y[c] = 1.0;
        inputs.push(x);
        targets.push(Tensor::new(vec![3], y).unwrap());
    }
    TensorDataset { inputs, targets }
}

fn mlp(seed: u64) -> Model {
    Model::new(
        vec![
            LayerSpec::Dense { input_size: 2, output_size: 16 },
            LayerSpec::Relu,
            LayerSpec::Dense { input_size: 16, output_size: 3 },
            LayerSpec::Softmax,
        ],
        seed,
    )
    .unwrap()
}

fn accuracy(m: &Model, d: &TensorDataset) -> f64 {
    let x = Tensor::stack(&d.inputs).unwrap();
    let p = m.predict(&x).unwrap();
    let mut ok = 0;
    for (b, t) in d.targets.iter().enumerate() {
        let row = &p.data()[b * 3..b * 3 + 3];
        let arg = (0..3).max_by(|&i, &j| row[i].total_cmp(&row[j])).unwrap();
        if t.data()[arg] == 1.0 {
            ok += 1;
        }
    }
    ok as f64 / d.targets.len() as f64
}

#[test]
fn mlp_separates_blobs() {
    let train_set = blobs(300, 1);
    let test_set = blobs(150, 2);
    let mut m = mlp(0);
    let cfg = TrainConfig { epochs: 30, batch_size: 16, learning_rate: 0.01, ..Default::default() };
    let report = train(&mut m, &train_set, None, &cfg).unwrap();
    assert!(report.epochs.last().unwrap().train_loss < report.epochs[0].train_loss);
    assert!(accuracy(&m, &test_set) >= 0.99);
}

#[test]
fn zero_learning_rate_leaves_weights_unchanged() {
    let data = blobs(30, 3);
    let mut m = mlp(5);
    let before = m.clone();
    let cfg = TrainConfig { epochs: 2, batch_size: 8, learning_rate: 0.0, ..Default::default() };
    train(&mut m, &data, None, &cfg).unwrap();
    assert_eq!(m, before);
}

#[test]
fn training_is_deterministic() {
    let data = blobs(60, 4);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 7,
        learning_rate: 0.05,
        optimizer: OptimizerKind::Sgd { momentum: 0.9 },
        ..Default::default()
    };
    let mut a = mlp(1);
    let mut b = mlp(1);
    train(&mut a, &data, None, &cfg).unwrap();
    train(&mut b, &data, None, &cfg).unwrap();
    assert_eq!(model_to_bytes(&a).unwrap(), model_to_bytes(&b).unwrap());
}

#[test]
fn early_stopping_keeps_best_epoch() {
    let data = blobs(60, 5);
    let val = blobs(30, 6);
    let mut m = mlp(2);
    let cfg = TrainConfig { epochs: 8, batch_size: 10, learning_rate: 0.02, patience: Some(2), ..Default::default() };
    let report = train(&mut m, &data, Some(&val), &cfg).unwrap();
    let best = report.epochs[report.best_epoch].val_loss.unwrap();
    assert!(report.epochs.iter().all(|e| e.val_loss.unwrap() >= best));
    let reloaded = evaluate_loss(&m, &val, &cfg).unwrap();
    assert!((reloaded - best).abs() < 1e-12);
}

#[test]
fn diverging_training_reports_numeric_error() {
    let data = blobs(30, 7);
    let mut m = mlp(3);
    let cfg = TrainConfig {
        epochs: 50,
        batch_size: 30,
        learning_rate: 1e300,
        optimizer: OptimizerKind::Sgd { momentum: 0.0 },
        ..Default::default()
    };
    let err = train(&mut m, &data, None, &cfg).unwrap_err();
    assert!(err.is_numeric(), "{err}");
}

fn vad_like() -> Model {
    let mut m = Model::new(
        vec![
            LayerSpec::Conv2d { in_channels: 1, out_channels: 4, kernel: [3, 3] },
            LayerSpec::BatchNorm { channels: 4 },
            LayerSpec::Relu,
            LayerSpec::MaxPoolFreq { pool: 4 },
            LayerSpec::Dense { input_size: 4, output_size: 1 },
            LayerSpec::Sigmoid,
        ],
        11,
    )
    .unwrap();
    m.metadata.insert("labels".into(), serde_json::json!(["speech"]));
    m
}

#[test]
fn model_file_round_trip() {
    let m = vad_like();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    save_model(&path, &m).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(back.specs(), m.specs());
    assert_eq!(back.metadata, m.metadata);
    for (a, b) in back.params().zip(m.params()) {
        for (x, y) in a.iter().zip(b) {
            assert_eq!(*x, *y as f32 as f64);
        }
    }
    let x = random(&[1, 1, 4, 6], 1);
    let (pa, pb) = (m.predict(&x).unwrap(), back.predict(&x).unwrap());
    for (a, b) in pa.data().iter().zip(pb.data()) {
        assert!((a - b).abs() < 1e-5);
    }
    // Saving the reloaded model reproduces the file.
    assert_eq!(model_to_bytes(&back).unwrap(), std::fs::read(&path).unwrap());
}

#[test]
fn corrupted_model_file_is_rejected() {
    let mut bytes = model_to_bytes(&vad_like()).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    assert!(matches!(model_from_bytes(&bytes), Err(Error::Checksum { .. })));
    assert!(model_from_bytes(&bytes[..3]).is_err());
}

#[test]
fn newer_format_version_is_rejected() {
    let bytes = model_to_bytes(&vad_like()).unwrap();
    let text = String::from_utf8_lossy(&bytes).into_owned();
    assert!(text.starts_with("{\"format_version\":1"));
    let mut edited = bytes.clone();
    edited[18] = b'9';
    let body = edited.len() - 4;
    let crc = crc32fast::hash(&edited[..body]);
    edited[body..].copy_from_slice(&crc.to_le_bytes());
    assert!(matches!(model_from_bytes(&edited), Err(Error::Version { found: 9, expected: 1 })));
}

#[test]
fn mismatched_channels_are_rejected() {
    let err = Model::new(
        vec![
            LayerSpec::Dense { input_size: 2, output_size: 3 },
            LayerSpec::Dense { input_size: 4, output_size: 1 },
        ],
        0,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Shape(_)));
}

#[test]
fn batchnorm_running_stats_track_data() {
    let mut m = Model::new(vec![LayerSpec::BatchNorm { channels: 1 }], 0).unwrap();
    let x = Tensor::new(vec![4, 1], vec![3.0, 5.0, 3.0, 5.0]).unwrap();
    for _ in 0..200 {
        let tape = m.forward_train(&x).unwrap();
        m.update_running_stats(&tape);
    }
    let rm = &m.layers[0].buffers[0].value[0];
    let rv = &m.layers[0].buffers[1].value[0];
    assert!((rm - 4.0).abs() < 1e-6);
    // Unbiased variance of {3,5,3,5}.
    assert!((rv - 4.0 / 3.0).abs() < 1e-6);
    let y = m.predict(&x).unwrap();
    assert!((y.data()[0] + (1.0 / (4.0f64 / 3.0 + BN_EPS).sqrt())).abs() < 1e-6);
}
