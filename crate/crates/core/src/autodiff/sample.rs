//! Bilinear sampling at fractional coordinates.

use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Interpolation stencil for one coordinate pair.
struct Stencil {
    y0: usize,
    y1: usize,
    x0: usize,
    x1: usize,
    wy: f64,
    wx: f64,
    /// False where the coordinate was clamped; its derivative is then zero.
    live_y: bool,
    live_x: bool,
}

fn axis(v: f64, len: usize) -> (usize, usize, f64, bool) {
    let hi = (len - 1) as f64;
    let live = (0.0..=hi).contains(&v);
    let c = v.clamp(0.0, hi);
    let i0 = (c.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, c - i0 as f64, live)
}

fn stencil(y: f64, x: f64, h: usize, w: usize) -> Stencil {
    let (y0, y1, wy, live_y) = axis(y, h);
    let (x0, x1, wx, live_x) = axis(x, w);
    Stencil { y0, y1, x0, x1, wy, wx, live_y, live_x }
}

impl Graph {
    /// Samples an N×C×H×W input at N×G×P×2 coordinates `(y, x)` in pixel
    /// units, producing N×C×P. Channel group `g` (of `C/G` channels) uses
    /// coordinate set `g`. Coordinates outside the image are clamped to the
    /// border.
    pub fn bilinear_sample(&mut self, input: Var, coords: Var) -> Result<Var> {
        const OP: &str = "bilinear_sample";
        let (iv, cv) = (self.value(input), self.value(coords));
        let [n, c, h, w] = <[usize; 4]>::try_from(iv.shape())
            .map_err(|_| Error::contract(OP, format!("input must be 4-D, got {:?}", iv.shape())))?;
        let [cn, groups, p, two] = <[usize; 4]>::try_from(cv.shape())
            .map_err(|_| Error::contract(OP, format!("coords must be N×G×P×2, got {:?}", cv.shape())))?;
        if cn != n || two != 2 {
            return Err(Error::contract(OP, format!("coords {:?} do not match input {:?}", cv.shape(), iv.shape())));
        }
        if c % groups != 0 {
            return Err(Error::contract(OP, format!("channels {c} not divisible by {groups} coordinate groups")));
        }
        let cg = c / groups;
        let (id, cd) = (iv.data(), cv.data());
        let mut out = vec![0.0; n * c * p];
        for b in 0..n {
            for g in 0..groups {
                let coords = &cd[(b * groups + g) * p * 2..][..p * 2];
                for (q, yx) in coords.chunks_exact(2).enumerate() {
                    let s = stencil(yx[0], yx[1], h, w);
                    for ch in g * cg..(g + 1) * cg {
                        let plane = &id[(b * c + ch) * h * w..][..h * w];
                        let top = plane[s.y0 * w + s.x0] * (1.0 - s.wx) + plane[s.y0 * w + s.x1] * s.wx;
                        let bot = plane[s.y1 * w + s.x0] * (1.0 - s.wx) + plane[s.y1 * w + s.x1] * s.wx;
                        out[(b * c + ch) * p + q] = top * (1.0 - s.wy) + bot * s.wy;
                    }
                }
            }
        }
        let out = Tensor::from_parts(vec![n, c, p], out);
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let (id, cd, gd) = (ctx.inputs[0].data(), ctx.inputs[1].data(), ctx.grad.data());
            let mut gin = ctx.needs[0].then(|| vec![0.0; id.len()]);
            let mut gco = ctx.needs[1].then(|| vec![0.0; cd.len()]);
            for b in 0..n {
                for g in 0..groups {
                    let cbase = (b * groups + g) * p * 2;
                    for q in 0..p {
                        let s = stencil(cd[cbase + 2 * q], cd[cbase + 2 * q + 1], h, w);
                        let (mut dy, mut dx) = (0.0, 0.0);
                        for ch in g * cg..(g + 1) * cg {
                            let go = gd[(b * c + ch) * p + q];
                            let pb = (b * c + ch) * h * w;
                            if let Some(gi) = gin.as_mut() {
                                gi[pb + s.y0 * w + s.x0] += go * (1.0 - s.wy) * (1.0 - s.wx);
                                gi[pb + s.y0 * w + s.x1] += go * (1.0 - s.wy) * s.wx;
                                gi[pb + s.y1 * w + s.x0] += go * s.wy * (1.0 - s.wx);
                                gi[pb + s.y1 * w + s.x1] += go * s.wy * s.wx;
                            }
                            if gco.is_some() {
                                let v00 = id[pb + s.y0 * w + s.x0];
                                let v01 = id[pb + s.y0 * w + s.x1];
                                let v10 = id[pb + s.y1 * w + s.x0];
                                let v11 = id[pb + s.y1 * w + s.x1];
                                dy += go * ((v10 - v00) * (1.0 - s.wx) + (v11 - v01) * s.wx);
                                dx += go * ((v01 - v00) * (1.0 - s.wy) + (v11 - v10) * s.wy);
                            }
                        }
                        if let Some(gc) = gco.as_mut() {
                            gc[cbase + 2 * q] = if s.live_y { dy } else { 0.0 };
                            gc[cbase + 2 * q + 1] = if s.live_x { dx } else { 0.0 };
                        }
                    }
                }
            }
            vec![
                gin.map(|d| Tensor::from_parts(ctx.inputs[0].shape().to_vec(), d)),
                gco.map(|d| Tensor::from_parts(ctx.inputs[1].shape().to_vec(), d)),
            ]
        });
        self.push(OP, out, &[input, coords], backward)
    }
}
