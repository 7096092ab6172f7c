//! The full network: feature generator, U-shaped cell pyramid and warm-start
//! predictor.
//!
//! ```text
//! X_rggb ─ intra (grouped deformable conv, LN, GELU) ─ inter (conv, GELU, +LTU) ─ F_inter
//! F_inter ─ cell1 ─ down ─ cell2 ─ … ─ cellS ─ up+skip ─ … ─ cell(2S−1)
//! F_d = F_inter + F_{2S−1}
//! F_p = conv3×3(F_d + LTU(F_d)) + F_init ;  RGB = PixelShuffle(F_p)
//! ```

mod checkpoint;
mod config;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, Checkpoint, OptimizerSnapshot, CHECKPOINT_VERSION};
pub use config::{ModelConfig, PRESETS};

use std::collections::BTreeMap;

use crate::autodiff::Var;
use crate::blocks::{Cell, CellOptions, Conv, DeformableConv, DownSampler, LayerNorm, SpatialUnit, UpSampler};
use crate::cfa::{pack_rggb, BayerMosaic, RgbImage, Task, WARM_START_SOURCE};
use crate::error::{Error, Result};
use crate::params::{build_store, Builder, ParamStore, Session};
use crate::tensor::{Precision, Tensor};

#[derive(Clone, Debug)]
enum InputConv {
    Deformable(DeformableConv),
    Plain(Conv),
}

#[derive(Clone, Debug)]
struct Layers {
    intra: InputConv,
    intra_norm: LayerNorm,
    inter: Conv,
    inter_spatial: SpatialUnit,
    cells: Vec<Cell>,
    downs: Vec<DownSampler>,
    ups: Vec<UpSampler>,
    pred_spatial: SpatialUnit,
    pred: Conv,
}

impl Layers {
    fn build(b: &mut Builder<'_>, cfg: &ModelConfig) -> Result<Self> {
        let c = cfg.base_channels();
        let cin = cfg.input_channels();
        let ltu = cfg.use_ltu.then_some((cfg.heads, cfg.window, cfg.expansion));
        let intra = if cfg.use_deformable_input {
            InputConv::Deformable(DeformableConv::build(b, "intra.conv", cin, c, cfg.deform_kernel, 4)?)
        } else {
            InputConv::Plain(Conv::same(b, "intra.conv", cin, c, 3, 1)?)
        };
        let intra_norm = LayerNorm::build(b, "intra.norm", c)?;
        let inter = Conv::same(b, "inter.conv", c, c, 3, 1)?;
        let inter_spatial = SpatialUnit::build(b, "inter.ltu", c, ltu)?;

        let opt = CellOptions {
            expansion: cfg.expansion,
            kappa: cfg.se_reduction,
            mix_kernel: cfg.mix_kernel,
            use_scem: cfg.use_scem,
            ltu: cfg.use_ltu.then_some((cfg.heads, cfg.window)),
        };
        let (s_count, cells_n) = (cfg.scales, cfg.cells());
        let mut cells = Vec::with_capacity(cells_n);
        let mut downs = Vec::new();
        let mut ups = Vec::new();
        for s in 0..cells_n {
            let width = cfg.channels[s];
            if s > 0 && s < s_count {
                downs.push(DownSampler::build(b, &format!("down{}", s + 1), cfg.channels[s - 1], width)?);
            } else if s >= s_count {
                let skip = cfg.channels[cells_n - 1 - s];
                ups.push(UpSampler::build(b, &format!("up{}", s + 1), cfg.channels[s - 1], width, skip)?);
            }
            cells.push(Cell::build(b, &format!("cell{}", s + 1), width, cfg.scems[s], opt)?);
        }
        let pred_spatial = SpatialUnit::build(b, "pred.ltu", c, ltu)?;
        let pred = Conv::same(b, "pred.conv", c, 12, 3, 1)?;
        Ok(Layers { intra, intra_norm, inter, inter_spatial, cells, downs, ups, pred_spatial, pred })
    }
}

/// Parameters of one top-level component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamRow {
    pub module: String,
    pub tensors: usize,
    pub count: usize,
}

#[derive(Clone, Debug)]
pub struct MfdpModel {
    config: ModelConfig,
    store: ParamStore,
    layers: Layers,
}

/// Reflect-pads the last two axes of an N×C×H×W tensor at the bottom and right.
fn reflect_pad(t: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let &[n, c, h, w] = t.shape() else { unreachable!("packed stacks are 4-D") };
    if ph == 0 && pw == 0 {
        return Ok(t.clone());
    }
    if ph >= h.max(2) || pw >= w.max(2) {
        return Err(Error::contract(
            "forward",
            format!("input {h}×{w} too small to reflect-pad by {ph}×{pw}; use a larger image"),
        ));
    }
    let reflect = |i: usize, len: usize| if i < len { i } else { 2 * (len - 1) - i };
    Ok(Tensor::from_fn(&[n, c, h + ph, w + pw], |i| {
        t.at(&[i[0], i[1], reflect(i[2], h), reflect(i[3], w)])
    }))
}

impl MfdpModel {
    /// Builds and initialises a model deterministically from `seed`.
    pub fn build(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let (store, layers) = build_store(seed, |b| Layers::build(b, &config))?;
        Ok(MfdpModel { config, store, layers })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn param_count(&self) -> usize {
        self.store.count()
    }

    /// Per-component breakdown keyed by the first segment of each parameter
    /// name, in build order.
    pub fn param_table(&self) -> Vec<ParamRow> {
        let mut rows: Vec<ParamRow> = Vec::new();
        for leaf in self.store.leaves() {
            let module = leaf.name.split('.').next().unwrap_or("").to_string();
            match rows.last_mut() {
                Some(r) if r.module == module => {
                    r.tensors += 1;
                    r.count += leaf.value.numel();
                }
                _ => rows.push(ParamRow { module, tensors: 1, count: leaf.value.numel() }),
            }
        }
        rows
    }

    /// Parameter counts grouped by every name prefix up to `depth` segments.
    pub fn param_breakdown(&self, depth: usize) -> BTreeMap<String, usize> {
        let mut out = BTreeMap::new();
        for leaf in self.store.leaves() {
            let key: Vec<&str> = leaf.name.split('.').take(depth).collect();
            *out.entry(key.join(".")).or_insert(0) += leaf.value.numel();
        }
        out
    }

    /// Zeroes the predictor's final convolution, which makes the output the
    /// warm start alone.
    pub fn zero_residual(&mut self) {
        for id in [Some(self.layers.pred.weight), self.layers.pred.bias].into_iter().flatten() {
            self.store.leaf_mut(id).value.fill(0.0);
        }
    }

    /// Runs the network on packed N×4×H×W stacks, returning N×3×2H×2W RGB.
    /// `sigmas` (one per batch item) is required exactly in joint-denoise mode.
    pub fn forward(&self, s: &mut Session<'_>, stacks: &Tensor, sigmas: Option<&[f64]>) -> Result<Var> {
        const OP: &str = "forward";
        let &[n, four, h, w] = stacks.shape() else {
            return Err(Error::contract(OP, format!("expected N×4×H×W stacks, got {:?}", stacks.shape())));
        };
        if four != 4 {
            return Err(Error::contract(OP, format!("expected 4 subbands, got {four}")));
        }
        match (self.config.task, sigmas) {
            (Task::Demosaic, Some(_)) => {
                return Err(Error::contract(OP, "noise level given but the model is not in joint-denoise mode"))
            }
            (Task::JointDenoise, None) => {
                return Err(Error::contract(OP, "joint-denoise model requires a noise level"))
            }
            (Task::JointDenoise, Some(sg)) if sg.len() != n => {
                return Err(Error::contract(OP, format!("{} noise levels for a batch of {n}", sg.len())))
            }
            _ => {}
        }
        let mult = self.config.spatial_multiple();
        let (ph, pw) = ((mult - h % mult) % mult, (mult - w % mult) % mult);
        let padded = reflect_pad(stacks, ph, pw)?;
        let (hp, wp) = (h + ph, w + pw);

        let input = match sigmas {
            None => padded.clone(),
            Some(sg) => Tensor::from_fn(&[n, 8, hp, wp], |i| {
                if i[1] % 2 == 1 {
                    sg[i[0]]
                } else {
                    padded.at(&[i[0], i[1] / 2, i[2], i[3]])
                }
            }),
        };
        let warm = Tensor::from_fn(&[n, 12, hp, wp], |i| padded.at(&[i[0], WARM_START_SOURCE[i[1]], i[2], i[3]]));

        let x = s.g.constant(input);
        let f_init = s.g.constant(warm);
        let f_p = self.residual_head(s, x, f_init)?;
        let rgb = s.g.pixel_shuffle(f_p, 2)?;
        if ph == 0 && pw == 0 {
            return Ok(rgb);
        }
        let rgb = s.g.slice(rgb, 2, 0, 2 * h)?;
        s.g.slice(rgb, 3, 0, 2 * w)
    }

    /// `F_p = F_r + F_init` on divisible extents.
    fn residual_head(&self, s: &mut Session<'_>, x: Var, f_init: Var) -> Result<Var> {
        let l = &self.layers;
        let f = match &l.intra {
            InputConv::Deformable(d) => d.forward(s, x)?,
            InputConv::Plain(c) => c.forward(s, x)?,
        };
        let f = l.intra_norm.forward(s, f)?;
        let f_intra = s.g.gelu(f)?;
        let f = l.inter.forward(s, f_intra)?;
        let f = s.g.gelu(f)?;
        let f_inter = l.inter_spatial.forward(s, f)?;

        let scales = self.config.scales;
        let mut outs: Vec<Var> = Vec::with_capacity(l.cells.len());
        let mut f = f_inter;
        for (i, cell) in l.cells.iter().enumerate() {
            let input = if i == 0 {
                f_inter
            } else if i < scales {
                l.downs[i - 1].forward(s, f)?
            } else {
                let skip = outs[l.cells.len() - 1 - i];
                l.ups[i - scales].forward(s, f, skip)?
            };
            f = cell.forward(s, input)?;
            outs.push(f);
        }
        let f_d = s.g.add(f_inter, f)?;
        let t = l.pred_spatial.forward(s, f_d)?;
        let f_r = l.pred.forward(s, t)?;
        s.g.add(f_r, f_init)
    }

    /// Demosaics one mosaic (noise level in [0,1] units for joint denoising).
    /// The result is not clamped.
    pub fn demosaic(&self, bayer: &BayerMosaic, sigma: Option<f64>, precision: Precision) -> Result<RgbImage> {
        let stack = pack_rggb(bayer).into_tensor();
        let shape = stack.shape().to_vec();
        let stacks = stack.reshape(&[1, shape[0], shape[1], shape[2]])?;
        let mut s = Session::inference(&self.store, precision);
        let sig = sigma.map(|v| [v]);
        let y = self.forward(&mut s, &stacks, sig.as_ref().map(|a| &a[..]))?;
        let out = s.g.value(y).clone();
        let (h, w) = (out.shape()[2], out.shape()[3]);
        RgbImage::new(out.reshape(&[3, h, w])?)
    }

    /// Replaces parameter values from `(name, tensor)` pairs; every model
    /// parameter must be provided with a matching shape.
    pub(crate) fn load_values(&mut self, values: Vec<(String, Tensor)>) -> Result<()> {
        if values.len() != self.store.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint has {} tensors, model expects {}",
                values.len(),
                self.store.len()
            )));
        }
        for (name, t) in values {
            let id = self
                .store
                .id(&name)
                .ok_or_else(|| Error::ConfigMismatch(format!("unknown parameter `{name}`")))?;
            let leaf = self.store.leaf_mut(id);
            if leaf.value.shape() != t.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "parameter `{name}` has shape {:?}, checkpoint has {:?}",
                    leaf.value.shape(),
                    t.shape()
                )));
            }
            leaf.value = t;
        }
        Ok(())
    }
}
