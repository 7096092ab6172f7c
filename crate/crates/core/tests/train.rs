use mfdp::cfa::{mosaic, unpack_rggb, RggbStack, RgbImage, Task};
use mfdp::loss::LossConfig;
use mfdp::model::{decode, encode, MfdpModel, ModelConfig};
use mfdp::params::ParamStore;
use mfdp::synth;
use mfdp::train::{sample_patches, AdamW, AdamWParams, Batch, TrainConfig, Trainer, VARIANTS};
use mfdp::{Error, Precision, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny() -> ModelConfig {
    ModelConfig::preset("tiny").unwrap()
}

fn images(seed: u64, n: usize) -> Vec<RgbImage> {
    synth::dataset(seed, n, 80, 96).unwrap()
}

fn hyper(wd: f64) -> AdamWParams {
    AdamWParams { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: wd }
}

fn scalar_store(w: f64) -> ParamStore {
    let mut store = ParamStore::new();
    store.insert("w".into(), Tensor::new(&[1], vec![w]).unwrap()).unwrap();
    store
}

#[test]
fn zero_gradients_without_decay_leave_parameters_unchanged() {
    let mut store = scalar_store(0.7);
    let before = store.clone();
    let mut opt = AdamW::new(&store, hyper(0.0));
    for _ in 0..5 {
        opt.step(&mut store, 1e-2).unwrap();
    }
    assert_eq!(store, before);
}

#[test]
fn scalar_quadratic_converges_monotonically() {
    let mut store = scalar_store(1.0);
    let mut opt = AdamW::new(&store, hyper(0.0));
    let mut prev = 1.0;
    for step in 0..100 {
        let w = store.leaves()[0].value.data()[0];
        store.leaves_mut()[0].grad = Tensor::new(&[1], vec![2.0 * w]).unwrap();
        opt.step(&mut store, 0.015).unwrap();
        let w = store.leaves()[0].value.data()[0];
        assert!(w * w < prev, "loss rose at step {step}: {} ≥ {prev}", w * w);
        prev = w * w;
    }
    assert!(prev.sqrt() < 0.1, "|w| = {}", prev.sqrt());
}

#[test]
fn decoupled_decay_is_geometric() {
    let (lr, wd) = (0.1, 0.05);
    let mut store = scalar_store(2.0);
    let mut opt = AdamW::new(&store, hyper(wd));
    for k in 1..=20 {
        opt.step(&mut store, lr).unwrap();
        let want = 2.0 * (1.0 - lr * wd).powi(k);
        let got = store.leaves()[0].value.data()[0];
        assert!((got - want).abs() <= 1e-12 * want, "step {k}: {got} vs {want}");
    }
}

#[test]
fn optimizer_rejects_mismatched_state() {
    let store = scalar_store(1.0);
    let mut other = ParamStore::new();
    other.insert("w".into(), Tensor::zeros(&[2])).unwrap();
    let mut opt = AdamW::new(&other, hyper(0.0));
    let mut store = store;
    assert!(matches!(opt.step(&mut store, 0.1), Err(Error::Contract { .. })));
}

#[test]
fn every_patch_is_the_mosaic_of_its_target() {
    let data = images(1, 3);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let b = sample_patches(&data, 16, 64, Task::Demosaic, 0.0, &mut rng).unwrap();
    assert_eq!(b.stacks.shape(), &[16, 4, 32, 32]);
    assert_eq!(b.targets.shape(), &[16, 3, 64, 64]);
    assert!(b.sigmas.is_none());
    let (sp, tp) = (4 * 32 * 32, 3 * 64 * 64);
    for i in 0..16 {
        let target = RgbImage::new(Tensor::new(&[3, 64, 64], b.targets.data()[i * tp..][..tp].to_vec()).unwrap()).unwrap();
        let stack = RggbStack::new(Tensor::new(&[4, 32, 32], b.stacks.data()[i * sp..][..sp].to_vec()).unwrap()).unwrap();
        assert_eq!(mosaic(&target), b.mosaics[i]);
        assert_eq!(unpack_rggb(&stack), b.mosaics[i]);
    }
}

#[test]
fn batches_are_reproducible_from_the_seed() {
    let data = images(3, 2);
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_patches(&data, 4, 64, Task::JointDenoise, 15.0 / 255.0, &mut rng).unwrap()
    };
    assert_eq!(draw(5), draw(5));
    assert_ne!(draw(5), draw(6));
    let sigmas = draw(5).sigmas.unwrap();
    assert_eq!(sigmas.len(), 4);
    assert!(sigmas.iter().all(|s| (0.0..=15.0 / 255.0).contains(s)));
}

#[test]
fn augmentation_variants_are_uniform() {
    let data = images(4, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut counts = [0usize; VARIANTS];
    for _ in 0..125 {
        let b = sample_patches(&data, 8, 16, Task::Demosaic, 0.0, &mut rng).unwrap();
        b.variants.iter().for_each(|&v| counts[v] += 1);
    }
    let total: usize = counts.iter().sum();
    assert_eq!(total, 1000);
    for (v, &c) in counts.iter().enumerate() {
        let f = c as f64 / total as f64;
        assert!((f - 0.125).abs() <= 0.04, "variant {v}: frequency {f}");
    }
}

#[test]
fn undersized_sources_are_listed() {
    let data = vec![synth::texture(1, 80, 80).unwrap(), synth::texture(2, 40, 96).unwrap()];
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let err = sample_patches(&data, 1, 64, Task::Demosaic, 0.0, &mut rng).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("#1 (40×96)") && !msg.contains("#0"), "{msg}");
}

#[test]
fn patch_must_fit_the_model_multiple() {
    let model = MfdpModel::build(tiny(), 0).unwrap();
    let cfg = TrainConfig { patch: 48, ..TrainConfig::default() };
    let err = Trainer::new(model, cfg, LossConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Config { field: "patch", .. }), "{err}");
}

fn small_run() -> TrainConfig {
    TrainConfig { batch: 2, steps: 15, val_every: 0, seed: 11, ..TrainConfig::default() }
}

#[test]
fn zero_learning_rate_leaves_parameters_bit_identical() {
    let data = images(5, 2);
    let model = MfdpModel::build(tiny(), 1).unwrap();
    let before = model.params().clone();
    let cfg = TrainConfig { base_lr: 0.0, ..small_run() };
    let mut t = Trainer::new(model, cfg, LossConfig::default()).unwrap();
    for _ in 0..3 {
        t.step(&data).unwrap();
    }
    for (a, b) in t.model().params().leaves().iter().zip(before.leaves()) {
        let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
        assert!(same, "{} changed", a.name);
    }
}

#[test]
fn resumed_training_matches_the_uninterrupted_run_bit_exactly() {
    let data = images(6, 2);
    let model = MfdpModel::build(tiny(), 2).unwrap();
    let mut a = Trainer::new(model, small_run(), LossConfig::default()).unwrap();
    for _ in 0..5 {
        a.step(&data).unwrap();
    }
    let bytes = encode(&a.checkpoint().unwrap()).unwrap();
    let mut b = Trainer::resume(decode(&bytes, Some(&tiny())).unwrap()).unwrap();
    assert_eq!(b.step_count(), 5);
    for _ in 0..10 {
        let la = a.step(&data).unwrap();
        let lb = b.step(&data).unwrap();
        assert_eq!(la.to_bits(), lb.to_bits());
    }
    assert_eq!(a.model().params(), b.model().params());
    assert_eq!(a.history(), b.history());
    assert_eq!(encode(&a.checkpoint().unwrap()).unwrap(), encode(&b.checkpoint().unwrap()).unwrap());
}

#[test]
fn run_writes_checkpoints_and_history() {
    let data = images(7, 2);
    let dir = tempfile::tempdir().unwrap();
    let model = MfdpModel::build(tiny(), 3).unwrap();
    let cfg = TrainConfig { steps: 4, val_every: 2, val_patches: 2, checkpoint_every: 2, ..small_run() };
    let mut t = Trainer::new(model, cfg, LossConfig::default()).unwrap();
    t.run(&data, &data, Some(dir.path())).unwrap();
    for name in ["step-00000002.ckpt", "step-00000004.ckpt", "final.ckpt", "history.csv"] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    let csv = std::fs::read_to_string(dir.path().join("history.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,lr,loss,val_psnr");
    assert_eq!(lines.len(), 5);
    assert!(lines[1].ends_with(','), "{}", lines[1]);
    assert!(!lines[2].ends_with(','), "{}", lines[2]);
    let resumed = Trainer::resume(mfdp::model::load_checkpoint(&dir.path().join("final.ckpt"), None).unwrap()).unwrap();
    assert_eq!(resumed.step_count(), 4);
    assert_eq!(resumed.history(), t.history());
}

#[test]
fn non_finite_parameters_abort_with_their_path() {
    let data = images(8, 1);
    let mut model = MfdpModel::build(tiny(), 4).unwrap();
    let id = model.params().id("cell3.ltu.qkv.weight").unwrap();
    model.params_mut().leaf_mut(id).value.data_mut()[0] = f64::NAN;
    let mut t = Trainer::new(model, small_run(), LossConfig::default()).unwrap();
    let err = t.step(&data).unwrap_err();
    assert!(matches!(err, Error::Diverged { step: 0, .. }), "{err}");
    assert!(err.to_string().contains("cell3.ltu.qkv.weight"), "{err}");
}

/// Overfits the tiny model to one 64×64 patch at the default learning rate.
#[test]
fn tiny_model_overfits_a_single_patch() {
    let patch = synth::texture(42, 64, 64).unwrap();
    let batch = Batch::from_targets(&[patch]).unwrap();
    let model = MfdpModel::build(tiny(), 0).unwrap();
    let cfg = TrainConfig { batch: 1, precision: Precision::Standard, ..TrainConfig::default() };
    let mut t = Trainer::new(model, cfg, LossConfig::default()).unwrap();

    let initial = t.step_on(&batch).unwrap();
    assert!(initial.is_finite() && initial > 0.0);
    let mut losses = vec![initial];
    for _ in 1..50 {
        losses.push(t.step_on(&batch).unwrap());
    }
    assert!(losses[49] < initial, "loss after 50 steps {} vs initial {initial}", losses[49]);

    let mut reached = None;
    while t.step_count() < 2000 {
        losses.push(t.step_on(&batch).unwrap());
        if t.step_count() % 25 == 0 {
            let p = t.evaluate(&batch).unwrap();
            if p >= 35.0 {
                reached = Some((t.step_count(), p));
                break;
            }
        }
    }
    let (steps, p) = reached.expect("35 dB not reached within 2000 steps");
    eprintln!("overfit: {p:.3} dB after {steps} steps");
    // 50-step block means of the loss fall monotonically.
    let means: Vec<f64> = losses.chunks_exact(50).map(|c| c.iter().sum::<f64>() / 50.0).collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");
}
