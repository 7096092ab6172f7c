mod common;

use common::seeded_tensor;
use mfdp::autodiff::gradcheck;
use mfdp::cfa::{demosaic_nn, mosaic, pack_rggb, BayerMosaic, RgbImage, Task};
use mfdp::loss::{mixed_loss, LossConfig};
use mfdp::model::{decode, encode, Checkpoint, MfdpModel, ModelConfig, OptimizerSnapshot};
use mfdp::params::{check_params, Session};
use mfdp::{Error, Precision, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig::preset("tiny").unwrap()
}

fn bayer(seed: u64, h: usize, w: usize) -> BayerMosaic {
    BayerMosaic::new(seeded_tensor(seed, &[1, h, w]).map(|v| 0.5 + 0.5 * v)).unwrap()
}

fn within(count: usize, target: f64) -> bool {
    (count as f64 - target).abs() <= 0.1 * target
}

#[test]
fn parameter_counts_match_published_sizes() {
    for (preset, target) in [("default", 5.91e6), ("mfdp1", 5.91e6), ("mfdp2", 5.95e6), ("mfdp3", 5.98e6)] {
        let m = MfdpModel::build(ModelConfig::preset(preset).unwrap(), 0).unwrap();
        let count = m.param_count();
        assert!(within(count, target), "{preset}: {count} vs {target}");
        let rows: usize = m.param_table().iter().map(|r| r.count).sum();
        assert_eq!(rows, count);
    }
}

#[test]
fn tiny_feature_generator_count_has_closed_form() {
    let m = MfdpModel::build(tiny(), 0).unwrap();
    let (c, k, g, cin, r, heads, win) = (16, 3, 4, 4, 4, 4, 4);
    let deform = c * (cin / g) * k * k + c + (g * 2 * k * k) * (cin / g) * k * k + g * 2 * k * k;
    let norm = 2 * c;
    let inter_conv = c * c * 9 + c;
    let ltu = 2 * c + 3 * c * c + heads * (2 * win - 1) * (2 * win - 1) + c * c + 2 * c + 2 * r * c * c;
    let table = m.param_table();
    let count = |name: &str| table.iter().find(|row| row.module == name).unwrap().count;
    assert_eq!(count("intra"), deform + norm);
    assert_eq!(count("inter"), inter_conv + ltu);
}

#[test]
fn widening_the_base_width_adds_parameters() {
    let base = MfdpModel::build(tiny(), 0).unwrap().param_count();
    let wide = ModelConfig { channels: vec![32, 32, 64, 32, 32], ..tiny() };
    assert!(MfdpModel::build(wide, 0).unwrap().param_count() > base);
}

#[test]
fn initialisation_is_deterministic_in_the_seed() {
    let a = MfdpModel::build(tiny(), 7).unwrap();
    let b = MfdpModel::build(tiny(), 7).unwrap();
    let c = MfdpModel::build(tiny(), 8).unwrap();
    assert_eq!(a.params(), b.params());
    assert_ne!(a.params(), c.params());
}

#[test]
fn forward_preserves_the_sensor_extents() {
    let m = MfdpModel::build(tiny(), 1).unwrap();
    let out = m.demosaic(&bayer(1, 128, 128), None, Precision::Standard).unwrap();
    assert_eq!(out.tensor().shape(), &[3, 128, 128]);
    // Extents that need internal padding are cropped back.
    let out = m.demosaic(&bayer(2, 36, 44), None, Precision::Standard).unwrap();
    assert_eq!(out.tensor().shape(), &[3, 36, 44]);
}

#[test]
fn forward_is_pure() {
    let m = MfdpModel::build(tiny(), 3).unwrap();
    let x = bayer(3, 32, 32);
    let a = m.demosaic(&x, None, Precision::Standard).unwrap();
    let b = m.demosaic(&x, None, Precision::Standard).unwrap();
    assert_eq!(a.tensor(), b.tensor());
}

#[test]
fn zero_residual_reproduces_nearest_neighbour_for_every_preset() {
    for preset in ["tiny", "default", "mfdp1", "mfdp2", "mfdp3"] {
        let mut m = MfdpModel::build(ModelConfig::preset(preset).unwrap(), 4).unwrap();
        m.zero_residual();
        let y = RgbImage::new(seeded_tensor(5, &[3, 64, 64]).map(|v| 0.5 + 0.5 * v)).unwrap();
        let x = mosaic(&y);
        let out = m.demosaic(&x, None, Precision::High).unwrap();
        assert_eq!(out.tensor(), demosaic_nn(&x).tensor(), "{preset}");
        // Captured samples pass through unchanged.
        assert_eq!(mosaic(&out).tensor(), x.tensor(), "{preset}");
    }
}

#[test]
fn noise_level_must_match_the_task() {
    let m = MfdpModel::build(tiny(), 5).unwrap();
    let x = bayer(6, 32, 32);
    assert!(matches!(m.demosaic(&x, Some(0.02), Precision::High), Err(Error::Contract { .. })));
    let jdd = MfdpModel::build(ModelConfig { task: Task::JointDenoise, ..tiny() }, 5).unwrap();
    assert!(matches!(jdd.demosaic(&x, None, Precision::High), Err(Error::Contract { .. })));
    let out = jdd.demosaic(&x, Some(0.02), Precision::High).unwrap();
    assert_eq!(out.tensor().shape(), &[3, 32, 32]);
}

#[test]
fn joint_denoise_zero_residual_is_still_nearest_neighbour() {
    let mut m = MfdpModel::build(ModelConfig { task: Task::JointDenoise, ..tiny() }, 6).unwrap();
    m.zero_residual();
    let x = bayer(7, 32, 32);
    let out = m.demosaic(&x, Some(10.0 / 255.0), Precision::High).unwrap();
    assert_eq!(out.tensor(), demosaic_nn(&x).tensor());
}

#[test]
fn full_model_loss_gradient_spot_check() {
    let mut m = MfdpModel::build(tiny(), 9).unwrap();
    // Move the deformable offsets off the sampling lattice, where bilinear
    // interpolation is not differentiable.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let id = m.params().id("intra.conv.offset.bias").unwrap();
    for v in m.params_mut().leaf_mut(id).value.data_mut() {
        *v = rng.random_range(0.1..0.4);
    }
    let store = m.params().clone();
    let target = RgbImage::new(seeded_tensor(11, &[3, 32, 32]).map(|v| 0.5 + 0.4 * v)).unwrap();
    let stack = pack_rggb(&mosaic(&target)).into_tensor().reshape(&[1, 4, 16, 16]).unwrap();
    let target = target.into_tensor().reshape(&[1, 3, 32, 32]).unwrap();
    let cfg = LossConfig::default();

    let sizes: Vec<usize> = store.leaves().iter().map(|l| l.value.numel()).collect();
    let total: usize = sizes.iter().sum();
    let points: Vec<(usize, usize)> = (0..20)
        .map(|_| {
            let mut k = rng.random_range(0..total);
            let mut leaf = 0;
            while k >= sizes[leaf] {
                k -= sizes[leaf];
                leaf += 1;
            }
            (leaf, k)
        })
        .collect();
    let f = |s: &mut Session<'_>| {
        let y = m.forward(s, &stack, None)?;
        let t = s.g.constant(target.clone());
        mixed_loss(&mut s.g, y, t, &cfg)
    };
    let probes = check_params(&store, f, &points, 1e-5).unwrap();
    let worst = gradcheck::worst(&probes);
    assert!(worst <= 1e-3, "worst relative error {worst:e}: {probes:?}");
}

fn snapshot(model: &MfdpModel, seed: u64) -> OptimizerSnapshot {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut moment = || {
        model.params().leaves().iter().map(|l| Tensor::from_fn(l.value.shape(), |_| rng.random_range(0.0..1.0))).collect()
    };
    let m = moment();
    OptimizerSnapshot { step: 17, m, v: moment() }
}

#[test]
fn checkpoint_round_trip_is_byte_identical() {
    let model = MfdpModel::build(tiny(), 12).unwrap();
    let ckpt = Checkpoint {
        optimizer: Some(snapshot(&model, 13)),
        model,
        meta: serde_json::json!({ "note": "x" }),
    };
    let bytes = encode(&ckpt).unwrap();
    let back = decode(&bytes, Some(&tiny())).unwrap();
    assert_eq!(encode(&back).unwrap(), bytes);
    assert_eq!(back.optimizer, ckpt.optimizer);
    assert_eq!(back.model.params(), ckpt.model.params());

    let x = bayer(14, 32, 32);
    let a = ckpt.model.demosaic(&x, None, Precision::Standard).unwrap();
    let b = back.model.demosaic(&x, None, Precision::Standard).unwrap();
    assert_eq!(a.tensor(), b.tensor());
}

#[test]
fn checkpoint_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let model = MfdpModel::build(tiny(), 15).unwrap();
    model.save(&path).unwrap();
    let back = MfdpModel::load(&path, None).unwrap();
    assert_eq!(back.params(), model.params());
    assert_eq!(back.config(), model.config());
    assert!(matches!(MfdpModel::load(&dir.path().join("missing"), None), Err(Error::Io { .. })));
}

#[test]
fn corrupted_checkpoints_are_rejected_with_distinct_errors() {
    let model = MfdpModel::build(tiny(), 16).unwrap();
    let bytes = encode(&Checkpoint { model, optimizer: None, meta: serde_json::Value::Null }).unwrap();

    let truncated = &bytes[..bytes.len() - 100];
    assert!(matches!(decode(truncated, None), Err(Error::CheckpointChecksum { .. })));
    let header_only = &bytes[..30];
    assert!(matches!(decode(header_only, None), Err(Error::CheckpointChecksum { .. })));

    let mut flipped = bytes.clone();
    let last = flipped.len() - 1;
    flipped[last] ^= 1;
    assert!(matches!(decode(&flipped, None), Err(Error::CheckpointChecksum { .. })));

    let mut v2 = bytes.clone();
    v2[10] = b'2';
    assert!(matches!(decode(&v2, None), Err(Error::CheckpointVersion { found: 2, expected: 1 })));

    let denoise = ModelConfig { task: Task::JointDenoise, ..tiny() };
    let err = decode(&bytes, Some(&denoise)).unwrap_err();
    assert!(matches!(err, Error::ConfigMismatch(_)));
    assert!(err.to_string().contains("task"), "{err}");

    assert!(matches!(decode(b"PNG\n", None), Err(Error::Format { .. })));
}
