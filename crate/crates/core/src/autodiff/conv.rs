//! 2-D convolution and transposed convolution.
//!
//! Both ops relate a *strided* feature map `S` (positions `q`) to a *dense*
//! map `D` (positions `q·s + k − p`) through a weight laid out
//! `[S-channel][D-channel within group][kh][kw]`:
//!
//! * conv2d: `S` is the output, `D` the input;
//! * conv_transpose2d: `S` is the input, `D` the output.
//!
//! Three kernels then cover every forward and backward pass. Each output
//! element is accumulated serially in a fixed order (dense-side channel,
//! then kernel row-major), so results are bit-reproducible.

use super::{BackwardCtx, Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize, groups: usize) -> Self {
        ConvSpec { stride: (stride, stride), padding: (padding, padding), groups }
    }

    /// Stride 1, `k/2` padding: a same-size convolution for odd `k`.
    pub fn same(k: usize, groups: usize) -> Self {
        Self::new(1, k / 2, groups)
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec::new(1, 0, 1)
    }
}

pub fn conv2d_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|v| v / stride + 1)
}

#[derive(Clone, Copy)]
struct Geometry {
    n: usize,
    /// Strided-side channels.
    a: usize,
    /// Dense-side channels.
    b: usize,
    groups: usize,
    hs: usize,
    ws: usize,
    hd: usize,
    wd: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Geometry {
    fn a_per_group(&self) -> usize {
        self.a / self.groups
    }
    fn b_per_group(&self) -> usize {
        self.b / self.groups
    }
    fn pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.sh == 1 && self.sw == 1 && self.ph == 0 && self.pw == 0
    }
    fn w_index(&self, a: usize, bl: usize, ky: usize, kx: usize) -> usize {
        ((a * self.b_per_group() + bl) * self.kh + ky) * self.kw + kx
    }
}

/// Strided positions `q < len_s` whose dense position `q·s + k − p` lies in `[0, len_d)`.
fn valid_range(len_s: usize, len_d: usize, s: usize, k: usize, p: usize) -> (usize, usize) {
    let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
    let hi = if len_d + p > k { ((len_d - 1 + p - k) / s + 1).min(len_s) } else { 0 };
    (lo, hi.max(lo))
}

/// `out += Σ_i coef[i] · planes[i]`, four planes per pass over `out`.
fn mix_planes(out: &mut [f64], coef: &[f64], planes: &[&[f64]]) {
    let mut i = 0;
    while i + 4 <= planes.len() {
        let (c0, c1, c2, c3) = (coef[i], coef[i + 1], coef[i + 2], coef[i + 3]);
        let (p0, p1, p2, p3) = (planes[i], planes[i + 1], planes[i + 2], planes[i + 3]);
        for (q, o) in out.iter_mut().enumerate() {
            *o += c0 * p0[q] + c1 * p1[q] + c2 * p2[q] + c3 * p3[q];
        }
        i += 4;
    }
    for (&c, p) in coef[i..].iter().zip(&planes[i..]) {
        out.iter_mut().zip(p.iter()).for_each(|(o, x)| *o += c * x);
    }
}

/// Pointwise case of both directions: `dst[n,o] += Σ_i W(o,i) · src[n,i]`
/// within each group, where `src` has `ci` and `dst` has `co` channels.
#[allow(clippy::too_many_arguments)]
fn pointwise_mix(
    src: &[f64],
    ci: usize,
    dst: &mut [f64],
    co: usize,
    n: usize,
    groups: usize,
    plane: usize,
    weight: impl Fn(usize, usize) -> f64,
) {
    let (cig, cog) = (ci / groups, co / groups);
    let mut coef = vec![0.0; cig];
    for b in 0..n {
        for o in 0..co {
            let g = o / cog;
            let planes: Vec<&[f64]> = (0..cig).map(|il| &src[((b * ci) + g * cig + il) * plane..][..plane]).collect();
            coef.iter_mut().enumerate().for_each(|(il, c)| *c = weight(o, il));
            mix_planes(&mut dst[(b * co + o) * plane..][..plane], &coef, &planes);
        }
    }
}

/// `S[n,a,q] += Σ_{b,k} W[a,b,k] · D[n,b,q·s+k−p]`
fn gather_to_strided(geo: &Geometry, d: &[f64], w: &[f64], s: &mut [f64]) {
    let (sp, dp) = (geo.hs * geo.ws, geo.hd * geo.wd);
    let bpg = geo.b_per_group();
    if geo.pointwise() {
        pointwise_mix(d, geo.b, s, geo.a, geo.n, geo.groups, sp, |a, bl| w[a * bpg + bl]);
        return;
    }
    for n in 0..geo.n {
        for a in 0..geo.a {
            let g = a / geo.a_per_group();
            let out = &mut s[(n * geo.a + a) * sp..][..sp];
            for bl in 0..bpg {
                let b = g * bpg + bl;
                let src = &d[(n * geo.b + b) * dp..][..dp];
                for ky in 0..geo.kh {
                    let (ylo, yhi) = valid_range(geo.hs, geo.hd, geo.sh, ky, geo.ph);
                    for kx in 0..geo.kw {
                        let wv = w[geo.w_index(a, bl, ky, kx)];
                        let (xlo, xhi) = valid_range(geo.ws, geo.wd, geo.sw, kx, geo.pw);
                        for qy in ylo..yhi {
                            let dy = qy * geo.sh + ky - geo.ph;
                            let orow = &mut out[qy * geo.ws..][..geo.ws];
                            let irow = &src[dy * geo.wd..][..geo.wd];
                            if geo.sw == 1 && xhi > xlo {
                                let off = xlo + kx - geo.pw;
                                orow[xlo..xhi]
                                    .iter_mut()
                                    .zip(&irow[off..off + (xhi - xlo)])
                                    .for_each(|(o, x)| *o += wv * x);
                            } else {
                                for qx in xlo..xhi {
                                    orow[qx] += wv * irow[qx * geo.sw + kx - geo.pw];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `D[n,b,q·s+k−p] += Σ_a W[a,b,k] · S[n,a,q]`
fn scatter_to_dense(geo: &Geometry, s: &[f64], w: &[f64], d: &mut [f64]) {
    let (sp, dp) = (geo.hs * geo.ws, geo.hd * geo.wd);
    let bpg = geo.b_per_group();
    if geo.pointwise() {
        let apg = geo.a_per_group();
        pointwise_mix(s, geo.a, d, geo.b, geo.n, geo.groups, sp, |b, al| {
            w[((b / bpg) * apg + al) * bpg + b % bpg]
        });
        return;
    }
    for n in 0..geo.n {
        for a in 0..geo.a {
            let g = a / geo.a_per_group();
            let src = &s[(n * geo.a + a) * sp..][..sp];
            for bl in 0..bpg {
                let b = g * bpg + bl;
                let out = &mut d[(n * geo.b + b) * dp..][..dp];
                for ky in 0..geo.kh {
                    let (ylo, yhi) = valid_range(geo.hs, geo.hd, geo.sh, ky, geo.ph);
                    for kx in 0..geo.kw {
                        let wv = w[geo.w_index(a, bl, ky, kx)];
                        let (xlo, xhi) = valid_range(geo.ws, geo.wd, geo.sw, kx, geo.pw);
                        for qy in ylo..yhi {
                            let dy = qy * geo.sh + ky - geo.ph;
                            let srow = &src[qy * geo.ws..][..geo.ws];
                            let drow = &mut out[dy * geo.wd..][..geo.wd];
                            if geo.sw == 1 && xhi > xlo {
                                let off = xlo + kx - geo.pw;
                                drow[off..off + (xhi - xlo)]
                                    .iter_mut()
                                    .zip(&srow[xlo..xhi])
                                    .for_each(|(o, x)| *o += wv * x);
                            } else {
                                for qx in xlo..xhi {
                                    drow[qx * geo.sw + kx - geo.pw] += wv * srow[qx];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Dot product with independent partial sums so the reduction pipelines.
fn dot(x: &[f64], y: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (xc, yc) = (x.chunks_exact(4), y.chunks_exact(4));
    let (xr, yr) = (xc.remainder(), yc.remainder());
    for (a, b) in xc.zip(yc) {
        for l in 0..4 {
            acc[l] += a[l] * b[l];
        }
    }
    let tail: f64 = xr.iter().zip(yr).map(|(a, b)| a * b).sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `G[a,b,k] = Σ_n Σ_q S[n,a,q] · D[n,b,q·s+k−p]`
fn weight_correlation(geo: &Geometry, s: &[f64], d: &[f64]) -> Vec<f64> {
    let (sp, dp) = (geo.hs * geo.ws, geo.hd * geo.wd);
    let bpg = geo.b_per_group();
    let mut gw = vec![0.0; geo.a * bpg * geo.kh * geo.kw];
    for a in 0..geo.a {
        let g = a / geo.a_per_group();
        for bl in 0..bpg {
            let b = g * bpg + bl;
            for ky in 0..geo.kh {
                let (ylo, yhi) = valid_range(geo.hs, geo.hd, geo.sh, ky, geo.ph);
                for kx in 0..geo.kw {
                    let (xlo, xhi) = valid_range(geo.ws, geo.wd, geo.sw, kx, geo.pw);
                    let mut acc = 0.0;
                    for n in 0..geo.n {
                        let sp_ = &s[(n * geo.a + a) * sp..][..sp];
                        let dp_ = &d[(n * geo.b + b) * dp..][..dp];
                        if geo.pointwise() {
                            acc += dot(sp_, dp_);
                            continue;
                        }
                        for qy in ylo..yhi {
                            let dy = qy * geo.sh + ky - geo.ph;
                            let srow = &sp_[qy * geo.ws..][..geo.ws];
                            let drow = &dp_[dy * geo.wd..][..geo.wd];
                            if geo.sw == 1 && xhi > xlo {
                                let off = xlo + kx - geo.pw;
                                acc += dot(&srow[xlo..xhi], &drow[off..off + (xhi - xlo)]);
                            } else {
                                for qx in xlo..xhi {
                                    acc += srow[qx] * drow[qx * geo.sw + kx - geo.pw];
                                }
                            }
                        }
                    }
                    gw[geo.w_index(a, bl, ky, kx)] = acc;
                }
            }
        }
    }
    gw
}

fn add_bias(out: &mut [f64], bias: &[f64], n: usize, plane: usize) {
    let c = bias.len();
    for i in 0..n {
        for (ch, &b) in bias.iter().enumerate() {
            out[(i * c + ch) * plane..][..plane].iter_mut().for_each(|v| *v += b);
        }
    }
}

fn bias_grad(g: &Tensor) -> Tensor {
    let s = g.shape();
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let mut out = vec![0.0; c];
    for i in 0..n {
        for (ch, o) in out.iter_mut().enumerate() {
            *o += g.data()[(i * c + ch) * plane..][..plane].iter().sum::<f64>();
        }
    }
    Tensor::from_parts(vec![c], out)
}

fn dims4(op: &'static str, what: &str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [a, b, c, d] => Ok([a, b, c, d]),
        ref s => Err(Error::contract(op, format!("{what} must be 4-D, got {s:?}"))),
    }
}

fn check_bias(op: &'static str, bias: Option<&Tensor>, channels: usize) -> Result<()> {
    match bias {
        Some(b) if b.shape() != [channels] => Err(Error::contract(
            op,
            format!("bias shape {:?} does not match {channels} output channels", b.shape()),
        )),
        _ => Ok(()),
    }
}

impl Graph {
    /// Cross-correlation of an N×Cin×H×W input with a Cout×(Cin/g)×kh×kw
    /// weight, zero padding.
    pub fn conv2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        const OP: &str = "conv2d";
        let (xv, wv) = (self.value(x), self.value(w));
        let [n, cin, h, wd] = dims4(OP, "input", xv)?;
        let [cout, cin_g, kh, kw] = dims4(OP, "weight", wv)?;
        let g = spec.groups;
        if g == 0 || cin % g != 0 {
            return Err(Error::contract(OP, format!("input channels {cin} not divisible by groups {g}")));
        }
        if cout % g != 0 {
            return Err(Error::contract(OP, format!("output channels {cout} not divisible by groups {g}")));
        }
        if cin_g != cin / g {
            return Err(Error::contract(OP, format!("weight input-channel extent {cin_g} != {cin}/{g}")));
        }
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        if sh == 0 || sw == 0 {
            return Err(Error::contract(OP, "zero stride"));
        }
        let oh = conv2d_output_extent(h, kh, sh, ph)
            .ok_or_else(|| Error::contract(OP, format!("height {h} + padding too small for kernel {kh}")))?;
        let ow = conv2d_output_extent(wd, kw, sw, pw)
            .ok_or_else(|| Error::contract(OP, format!("width {wd} + padding too small for kernel {kw}")))?;
        check_bias(OP, bias.map(|b| self.value(b)), cout)?;
        let geo = Geometry {
            n, a: cout, b: cin, groups: g, hs: oh, ws: ow, hd: h, wd, kh, kw, sh, sw, ph, pw,
        };
        let mut out = vec![0.0; n * cout * oh * ow];
        if let Some(b) = bias {
            add_bias(&mut out, self.value(b).data(), n, oh * ow);
        }
        gather_to_strided(&geo, xv.data(), wv.data(), &mut out);
        let out = Tensor::from_parts(vec![n, cout, oh, ow], out);
        let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let (x, w, gout) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let gx = ctx.needs[0].then(|| {
                let mut d = vec![0.0; x.numel()];
                scatter_to_dense(&geo, gout.data(), w.data(), &mut d);
                Tensor::from_parts(xs.clone(), d)
            });
            let gw = ctx.needs[1]
                .then(|| Tensor::from_parts(ws.clone(), weight_correlation(&geo, gout.data(), x.data())));
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| bias_grad(gout)));
            }
            grads
        });
        let parents: Vec<Var> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        self.push(OP, out, &parents, backward)
    }

    /// Transposed convolution, the adjoint of [`Graph::conv2d`] with the same
    /// weight. Weight layout is Cin×(Cout/g)×kh×kw; output extent
    /// `(H−1)·s + k − 2p`.
    pub fn conv_transpose2d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: ConvSpec) -> Result<Var> {
        const OP: &str = "conv_transpose2d";
        let (xv, wv) = (self.value(x), self.value(w));
        let [n, cin, h, wd] = dims4(OP, "input", xv)?;
        let [wcin, cout_g, kh, kw] = dims4(OP, "weight", wv)?;
        let g = spec.groups;
        if g == 0 || cin % g != 0 {
            return Err(Error::contract(OP, format!("input channels {cin} not divisible by groups {g}")));
        }
        if wcin != cin {
            return Err(Error::contract(OP, format!("weight leading extent {wcin} != input channels {cin}")));
        }
        let cout = cout_g * g;
        let (sh, sw) = spec.stride;
        let (ph, pw) = spec.padding;
        if sh == 0 || sw == 0 {
            return Err(Error::contract(OP, "zero stride"));
        }
        let oh = ((h - 1) * sh + kh)
            .checked_sub(2 * ph)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::contract(OP, format!("padding {ph} leaves no output rows")))?;
        let ow = ((wd - 1) * sw + kw)
            .checked_sub(2 * pw)
            .filter(|&v| v > 0)
            .ok_or_else(|| Error::contract(OP, format!("padding {pw} leaves no output columns")))?;
        check_bias(OP, bias.map(|b| self.value(b)), cout)?;
        let geo = Geometry {
            n, a: cin, b: cout, groups: g, hs: h, ws: wd, hd: oh, wd: ow, kh, kw, sh, sw, ph, pw,
        };
        let mut out = vec![0.0; n * cout * oh * ow];
        if let Some(b) = bias {
            add_bias(&mut out, self.value(b).data(), n, oh * ow);
        }
        scatter_to_dense(&geo, xv.data(), wv.data(), &mut out);
        let out = Tensor::from_parts(vec![n, cout, oh, ow], out);
        let (xs, ws) = (xv.shape().to_vec(), wv.shape().to_vec());
        let backward = Box::new(move |ctx: &BackwardCtx<'_>| {
            let (x, w, gout) = (ctx.inputs[0], ctx.inputs[1], ctx.grad);
            let gx = ctx.needs[0].then(|| {
                let mut s = vec![0.0; x.numel()];
                gather_to_strided(&geo, gout.data(), w.data(), &mut s);
                Tensor::from_parts(xs.clone(), s)
            });
            let gw = ctx.needs[1]
                .then(|| Tensor::from_parts(ws.clone(), weight_correlation(&geo, x.data(), gout.data())));
            let mut grads = vec![gx, gw];
            if ctx.inputs.len() == 3 {
                grads.push(ctx.needs[2].then(|| bias_grad(gout)));
            }
            grads
        });
        let parents: Vec<Var> = [Some(x), Some(w), bias].into_iter().flatten().collect();
        self.push(OP, out, &parents, backward)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Precision;

    /// Direct six-loop convolution, independent of the strided/dense kernels.
    fn naive_conv(x: &Tensor, w: &Tensor, spec: ConvSpec) -> Tensor {
        let [n, cin, h, wd] = *x.shape() else { unreachable!() };
        let [cout, cin_g, kh, kw] = *w.shape() else { unreachable!() };
        let oh = conv2d_output_extent(h, kh, spec.stride.0, spec.padding.0).unwrap();
        let ow = conv2d_output_extent(wd, kw, spec.stride.1, spec.padding.1).unwrap();
        let cout_g = cout / spec.groups;
        Tensor::from_fn(&[n, cout, oh, ow], |i| {
            let (b, co, oy, ox) = (i[0], i[1], i[2], i[3]);
            let g = co / cout_g;
            let mut acc = 0.0;
            for cil in 0..cin_g {
                for ky in 0..kh {
                    for kx in 0..kw {
                        let iy = (oy * spec.stride.0 + ky) as isize - spec.padding.0 as isize;
                        let ix = (ox * spec.stride.1 + kx) as isize - spec.padding.1 as isize;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        acc += w.at(&[co, cil, ky, kx]) * x.at(&[b, g * cin_g + cil, iy as usize, ix as usize]);
                    }
                }
            }
            let _ = cin;
            acc
        })
    }

    fn ramp(shape: &[usize], seed: f64) -> Tensor {
        let mut k = seed;
        Tensor::from_fn(shape, |_| {
            k = (k * 1.7 + 0.31).fract();
            k - 0.5
        })
    }

    #[test]
    fn pointwise_scaling() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(Tensor::new(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
        let w = g.leaf(Tensor::new(&[1, 1, 1, 1], vec![2.0]).unwrap());
        let y = g.conv2d(x, w, None, ConvSpec::default()).unwrap();
        assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn constant_input_without_padding() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(Tensor::full(&[1, 2, 6, 5], 0.75));
        let wt = ramp(&[3, 2, 3, 2], 0.2);
        let per_out: Vec<f64> = (0..3)
            .map(|co| (0..2).flat_map(|c| (0..3).flat_map(move |y| (0..2).map(move |x| (c, y, x))))
                .map(|(c, y, x)| wt.at(&[co, c, y, x]))
                .sum())
            .collect();
        let w = g.leaf(wt);
        let y = g.conv2d(x, w, None, ConvSpec::default()).unwrap();
        let yv = g.value(y);
        for co in 0..3 {
            for v in &yv.data()[co * 16..(co + 1) * 16] {
                assert!((v - 0.75 * per_out[co]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn matches_naive_loops_for_various_geometries() {
        for (spec, kshape, cin) in [
            (ConvSpec::new(1, 1, 1), [4, 3, 3, 3], 3),
            (ConvSpec::new(2, 0, 1), [2, 3, 2, 2], 3),
            (ConvSpec::new(1, 2, 4), [4, 1, 5, 5], 4),
            (ConvSpec { stride: (2, 1), padding: (1, 0), groups: 2 }, [4, 2, 3, 2], 4),
        ] {
            let x = ramp(&[2, cin, 7, 6], 0.13);
            let w = ramp(&kshape, 0.77);
            let mut g = Graph::new(Precision::High);
            let (xv, wv) = (g.leaf(x.clone()), g.leaf(w.clone()));
            let y = g.conv2d(xv, wv, None, spec).unwrap();
            let expect = naive_conv(&x, &w, spec);
            assert_eq!(g.shape(y), expect.shape());
            assert!(g.value(y).max_abs_diff(&expect) < 1e-13, "{spec:?}");
        }
    }

    #[test]
    fn transpose_single_tap_broadcast() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(Tensor::new(&[1, 1, 1, 1], vec![5.0]).unwrap());
        let w = g.leaf(Tensor::full(&[1, 1, 2, 2], 1.0));
        let y = g.conv_transpose2d(x, w, None, ConvSpec::new(2, 0, 1)).unwrap();
        assert_eq!(g.shape(y), &[1, 1, 2, 2]);
        assert_eq!(g.value(y).data(), &[5.0; 4]);
    }

    #[test]
    fn divisibility_errors_name_dimension() {
        let mut g = Graph::new(Precision::High);
        let x = g.leaf(Tensor::zeros(&[1, 3, 4, 4]));
        let w = g.leaf(Tensor::zeros(&[4, 1, 3, 3]));
        let err = g.conv2d(x, w, None, ConvSpec::same(3, 2)).unwrap_err().to_string();
        assert!(err.contains("input channels 3"), "{err}");
        let w2 = g.leaf(Tensor::zeros(&[2, 2, 3, 3]));
        let err = g.conv2d(x, w2, None, ConvSpec::same(3, 1)).unwrap_err().to_string();
        assert!(err.contains("weight input-channel extent"), "{err}");
        let w3 = g.leaf(Tensor::zeros(&[2, 3, 7, 7]));
        assert!(g.conv2d(x, w3, None, ConvSpec::default()).is_err());
    }
}
