//! Desk-scale training: AdamW, a step-halving learning rate, random
//! augmented Bayer patches, periodic validation and checkpoints.
//!
//! An epoch is `steps_per_epoch` optimizer steps. Every step draws its batch
//! from a ChaCha8 stream keyed by `(seed, step)`, so a run resumed from a
//! checkpoint continues bit-identically.

mod adamw;
mod data;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adamw::{AdamW, AdamWParams};
pub use data::{augment, sample_patches, Batch, VARIANTS};

use crate::cfa::RgbImage;
use crate::error::{Error, Result};
use crate::loss::{mixed_loss, LossConfig};
use crate::metrics::psnr;
use crate::model::{save_checkpoint, Checkpoint, MfdpModel};
use crate::params::{ParamStore, Session};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Patches per step.
    pub batch: usize,
    /// Bayer patch side in sensor pixels.
    pub patch: usize,
    pub base_lr: f64,
    /// The learning rate halves every this many epochs.
    pub halving_period: u64,
    pub steps_per_epoch: u64,
    /// Total optimizer steps of a run.
    pub steps: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Upper end of the joint-denoise noise range, in [0,1] units.
    pub noise_max: f64,
    pub precision: Precision,
    /// Steps between validation passes; 0 disables validation.
    pub val_every: u64,
    pub val_patches: usize,
    /// Steps between checkpoints; 0 writes only the final one.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch: 4,
            patch: 64,
            base_lr: 2e-4,
            halving_period: 800,
            steps_per_epoch: 1,
            steps: 2000,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.05,
            seed: 0,
            noise_max: 15.0 / 255.0,
            precision: Precision::Standard,
            val_every: 100,
            val_patches: 8,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive: [(&'static str, bool); 5] = [
            ("batch", self.batch > 0),
            ("patch", self.patch > 0 && self.patch % 2 == 0),
            ("halving_period", self.halving_period > 0),
            ("steps_per_epoch", self.steps_per_epoch > 0),
            ("val_patches", self.val_patches > 0),
        ];
        if let Some((field, _)) = positive.iter().find(|(_, ok)| !ok) {
            let detail = if *field == "patch" { "must be even and positive" } else { "must be positive" };
            return Err(Error::config(field, detail));
        }
        let reals: [(&'static str, f64, bool); 6] = [
            ("base_lr", self.base_lr, self.base_lr >= 0.0),
            ("beta1", self.beta1, (0.0..1.0).contains(&self.beta1)),
            ("beta2", self.beta2, (0.0..1.0).contains(&self.beta2)),
            ("eps", self.eps, self.eps > 0.0),
            ("weight_decay", self.weight_decay, self.weight_decay >= 0.0),
            ("noise_max", self.noise_max, self.noise_max >= 0.0),
        ];
        if let Some((field, v, _)) = reals.iter().find(|(_, v, ok)| !ok || !v.is_finite()) {
            return Err(Error::config(field, format!("out of range: {v}")));
        }
        Ok(())
    }

    /// `base_lr · 2^−⌊epoch / halving_period⌋`.
    pub fn lr_at_epoch(&self, epoch: u64) -> f64 {
        let halvings = (epoch / self.halving_period).min(1074) as i32;
        self.base_lr * 2f64.powi(-halvings)
    }

    /// Learning rate of the update made at `step` (0-based).
    pub fn lr_at(&self, step: u64) -> f64 {
        self.lr_at_epoch(step / self.steps_per_epoch)
    }

    fn adamw(&self) -> AdamWParams {
        AdamWParams { beta1: self.beta1, beta2: self.beta2, eps: self.eps, weight_decay: self.weight_decay }
    }
}

/// One line of the training history.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistoryRow {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
    pub val_psnr: Option<f64>,
}

pub const HISTORY_HEADER: &str = "step,lr,loss,val_psnr";

pub fn history_csv(rows: &[HistoryRow]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in rows {
        let val = r.val_psnr.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(s, "{},{},{},{val}", r.step, r.lr, r.loss);
    }
    s
}

/// Stream of the validation draw; training steps use streams `0..`.
const VALIDATION_STREAM: u64 = u64::MAX;

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// First parameter whose value or gradient is not finite.
fn first_non_finite(store: &ParamStore) -> Option<String> {
    store.leaves().iter().find_map(|l| {
        if !l.value.is_finite() {
            Some(format!("parameter `{}` is non-finite", l.name))
        } else if !l.grad.is_finite() {
            Some(format!("gradient of `{}` is non-finite", l.name))
        } else {
            None
        }
    })
}

#[derive(Clone, Debug)]
pub struct Trainer {
    model: MfdpModel,
    cfg: TrainConfig,
    loss: LossConfig,
    opt: AdamW,
    history: Vec<HistoryRow>,
}

impl Trainer {
    pub fn new(model: MfdpModel, cfg: TrainConfig, loss: LossConfig) -> Result<Self> {
        cfg.validate()?;
        loss.validate()?;
        let multiple = model.config().spatial_multiple();
        if (cfg.patch / 2) % multiple != 0 {
            return Err(Error::config(
                "patch",
                format!("{} packs to {}, not a multiple of the model's {multiple}", cfg.patch, cfg.patch / 2),
            ));
        }
        let opt = AdamW::new(model.params(), cfg.adamw());
        Ok(Trainer { model, cfg, loss, opt, history: Vec::new() })
    }

    /// Continues a run saved by [`Trainer::checkpoint`].
    pub fn resume(ckpt: Checkpoint) -> Result<Self> {
        let cfg: TrainConfig = meta_field(&ckpt.meta, "train")?;
        let loss: LossConfig = meta_field(&ckpt.meta, "loss")?;
        let history: Vec<HistoryRow> = meta_field(&ckpt.meta, "history")?;
        let snap = ckpt.optimizer.ok_or_else(|| Error::format("checkpoint", "no optimizer state to resume from"))?;
        let mut t = Trainer::new(ckpt.model, cfg, loss)?;
        t.opt = AdamW::restore(t.model.params(), t.cfg.adamw(), snap)?;
        t.history = history;
        Ok(t)
    }

    pub fn model(&self) -> &MfdpModel {
        &self.model
    }

    pub fn into_model(self) -> MfdpModel {
        self.model
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    /// Changes the step count at which [`Trainer::run`] stops.
    pub fn set_total_steps(&mut self, steps: u64) {
        self.cfg.steps = steps;
    }

    pub fn loss_config(&self) -> &LossConfig {
        &self.loss
    }

    /// Completed optimizer steps.
    pub fn step_count(&self) -> u64 {
        self.opt.steps()
    }

    pub fn history(&self) -> &[HistoryRow] {
        &self.history
    }

    pub fn checkpoint(&self) -> Result<Checkpoint> {
        let meta = serde_json::json!({
            "train": self.cfg,
            "loss": self.loss,
            "step": self.opt.steps(),
            "history": self.history,
        });
        Ok(Checkpoint { model: self.model.clone(), optimizer: Some(self.opt.snapshot()), meta })
    }

    /// The batch of the next step.
    pub fn next_batch(&self, data: &[RgbImage]) -> Result<Batch> {
        let mut rng = step_rng(self.cfg.seed, self.opt.steps());
        let task = self.model.config().task;
        sample_patches(data, self.cfg.batch, self.cfg.patch, task, self.cfg.noise_max, &mut rng)
    }

    /// Fixed held-out patches drawn from `val`.
    pub fn validation_batch(&self, val: &[RgbImage]) -> Result<Batch> {
        let mut rng = step_rng(self.cfg.seed, VALIDATION_STREAM);
        let task = self.model.config().task;
        sample_patches(val, self.cfg.val_patches, self.cfg.patch, task, self.cfg.noise_max, &mut rng)
    }

    /// Loss and parameter gradients of one batch, accumulated into the store.
    fn gradients(&mut self, batch: &Batch, step: u64) -> Result<f64> {
        let diverged = |detail: String| Error::Diverged { step, detail };
        let store = self.model.params();
        let mut s = Session::training(store, self.cfg.precision);
        let pass = self.model.forward(&mut s, &batch.stacks, batch.sigmas.as_deref()).and_then(|y| {
            let t = s.g.constant(batch.targets.clone());
            mixed_loss(&mut s.g, y, t, &self.loss)
        });
        let loss = match pass {
            Ok(l) => l,
            Err(Error::NonFinite { op }) => {
                let culprit = first_non_finite(store).unwrap_or_else(|| "all parameters are finite".into());
                return Err(diverged(format!("`{op}` produced a non-finite value; {culprit}")));
            }
            Err(e) => return Err(e),
        };
        let value = s.g.value(loss).data()[0];
        let grads = s.g.backward(loss)?;
        let (_, bindings) = s.into_parts();
        let store = self.model.params_mut();
        store.zero_grads();
        store.accumulate(&bindings, &grads);
        if !value.is_finite() {
            return Err(diverged(format!("loss is {value}")));
        }
        if let Some(culprit) = first_non_finite(store) {
            return Err(diverged(culprit));
        }
        Ok(value)
    }

    /// Runs one optimizer step on a batch drawn from `data` and returns the
    /// batch loss before the update.
    pub fn step(&mut self, data: &[RgbImage]) -> Result<f64> {
        let batch = self.next_batch(data)?;
        self.step_on(&batch)
    }

    /// Runs one optimizer step on a given batch.
    pub fn step_on(&mut self, batch: &Batch) -> Result<f64> {
        let step = self.opt.steps();
        let loss = self.gradients(batch, step)?;
        let lr = self.cfg.lr_at(step);
        self.opt.step(self.model.params_mut(), lr)?;
        if let Some(culprit) = first_non_finite(self.model.params()) {
            return Err(Error::Diverged { step, detail: culprit });
        }
        self.history.push(HistoryRow { step, lr, loss, val_psnr: None });
        Ok(loss)
    }

    /// Mean PSNR of the model on a batch, in dB.
    pub fn evaluate(&self, batch: &Batch) -> Result<f64> {
        let mut s = Session::inference(self.model.params(), self.cfg.precision);
        let y = self.model.forward(&mut s, &batch.stacks, batch.sigmas.as_deref())?;
        let pred = s.g.value(y);
        let n = batch.targets.shape()[0];
        let per = batch.targets.numel() / n;
        let mut total = 0.0;
        for i in 0..n {
            let slice = |t: &Tensor| Tensor::new(&[per], t.data()[i * per..(i + 1) * per].to_vec());
            total += psnr(&slice(pred)?, &slice(&batch.targets)?)?;
        }
        Ok(total / n as f64)
    }

    /// Trains until `cfg.steps` steps are complete, validating on `val`
    /// every `val_every` steps and writing checkpoints into `out` when given.
    pub fn run(&mut self, data: &[RgbImage], val: &[RgbImage], out: Option<&Path>) -> Result<()> {
        let val_batch = if self.cfg.val_every > 0 && !val.is_empty() { Some(self.validation_batch(val)?) } else { None };
        while self.opt.steps() < self.cfg.steps {
            let loss = self.step(data)?;
            let done = self.opt.steps();
            if let Some(vb) = &val_batch {
                if done % self.cfg.val_every == 0 || done == self.cfg.steps {
                    let v = self.evaluate(vb)?;
                    self.history.last_mut().expect("step recorded").val_psnr = Some(v);
                    log::info!("step {done}: loss {loss:.6}, validation PSNR {v:.3} dB");
                }
            }
            if let Some(dir) = out {
                if self.cfg.checkpoint_every > 0 && done % self.cfg.checkpoint_every == 0 {
                    save_checkpoint(&self.checkpoint()?, &checkpoint_path(dir, done))?;
                }
            }
        }
        if let Some(dir) = out {
            save_checkpoint(&self.checkpoint()?, &dir.join("final.ckpt"))?;
            let path = dir.join("history.csv");
            std::fs::write(&path, history_csv(&self.history)).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

fn meta_field<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, key: &str) -> Result<T> {
    let v = meta.get(key).ok_or_else(|| Error::format("checkpoint", format!("metadata lacks `{key}`")))?;
    T::deserialize(v).map_err(|e| Error::format("checkpoint", format!("metadata `{key}`: {e}")))
}

pub fn checkpoint_path(dir: &Path, step: u64) -> PathBuf {
    dir.join(format!("step-{step:08}.ckpt"))
}
