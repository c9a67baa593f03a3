//! The estimator network: extractor `f` (Haar front end, strided
//! convolutions, mean/std pooling), projector `g` and prediction head.
//!
//! All trainable values live in one flat `f64` vector; [`TensorSpec`]s name
//! the slices. Gradients use the same layout, so reductions and optimizer
//! updates are plain element-wise loops.

use std::ops::Range;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;

use super::config::{Activation, EstimatorConfig};
use crate::error::{shape, Result};
use crate::features::{haar_forward, BANDS, PLANES};
use crate::noise::RawPatch;
use crate::rng::{derive_seed, stream_rng};

const POOL_EPS: f64 = 1e-8;
const INIT_TAG: u64 = 0x1417;

/// A named slice of the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone)]
struct ConvLayer {
    in_ch: usize,
    out_ch: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    in_h: usize,
    in_w: usize,
    out_h: usize,
    out_w: usize,
    act: Activation,
    w_off: usize,
    b_off: usize,
}

impl ConvLayer {
    fn patch_len(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

#[derive(Debug, Clone)]
struct DenseLayer {
    inputs: usize,
    outputs: usize,
    act: Activation,
    w_off: usize,
    b_off: usize,
}

/// Which parameters belong to which sub-network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamGroups {
    pub extractor: Range<usize>,
    pub projector: Range<usize>,
    pub head: Range<usize>,
}

#[derive(Debug, Clone)]
pub struct Network {
    convs: Vec<ConvLayer>,
    projector: Vec<DenseLayer>,
    head: Vec<DenseLayer>,
    specs: Vec<TensorSpec>,
    groups: ParamGroups,
    n_params: usize,
    patch_h: usize,
    patch_w: usize,
    input_scale: f64,
    band_weights: [f64; 4],
    feature_dim: usize,
}

struct LayoutBuilder {
    specs: Vec<TensorSpec>,
    next: usize,
}

impl LayoutBuilder {
    fn add(&mut self, name: String, shape: Vec<usize>) -> usize {
        let off = self.next;
        self.next += shape.iter().product::<usize>();
        self.specs.push(TensorSpec { name, shape, offset: off });
        off
    }

    fn dense_stack(&mut self, prefix: &str, inputs: usize, widths: &[usize], act: Activation) -> Vec<DenseLayer> {
        let mut layers = Vec::with_capacity(widths.len());
        let mut fan_in = inputs;
        for (i, &width) in widths.iter().enumerate() {
            let w_off = self.add(format!("{prefix}.fc{i}.weight"), vec![width, fan_in]);
            let b_off = self.add(format!("{prefix}.fc{i}.bias"), vec![width]);
            let act = if i + 1 == widths.len() { Activation::Identity } else { act };
            layers.push(DenseLayer { inputs: fan_in, outputs: width, act, w_off, b_off });
            fan_in = width;
        }
        layers
    }
}

/// Cached intermediates of one forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub h: Array1<f64>,
    pub z: Array1<f64>,
    /// Head output in the weighted regression space; absent when the head was skipped.
    pub r_hat: Option<Array1<f64>>,
    conv_cols: Vec<Array2<f64>>,
    conv_pre: Vec<Array2<f64>>,
    last_act: Array2<f64>,
    pool_mean: Array1<f64>,
    pool_std: Array1<f64>,
    proj_cache: Vec<(Array1<f64>, Array1<f64>)>,
    head_cache: Vec<(Array1<f64>, Array1<f64>)>,
}

fn im2col(x: &[f64], layer: &ConvLayer) -> Array2<f64> {
    let (c, h, w, k, s, p) = (layer.in_ch, layer.in_h, layer.in_w, layer.kernel, layer.stride, layer.pad);
    let (oh, ow) = (layer.out_h, layer.out_w);
    let npos = oh * ow;
    let mut cols = Array2::zeros((c * k * k, npos));
    let cs = cols.as_slice_mut().unwrap();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst = &mut cs[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[(ci * h + iy as usize) * w..(ci * h + iy as usize + 1) * w];
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            dst[oy * ow + ox] = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, layer: &ConvLayer) -> Vec<f64> {
    let (c, h, w, k, s, p) = (layer.in_ch, layer.in_h, layer.in_w, layer.kernel, layer.stride, layer.pad);
    let (oh, ow) = (layer.out_h, layer.out_w);
    let npos = oh * ow;
    let mut x = vec![0.0; c * h * w];
    let cs = cols.as_slice().unwrap();
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src = &cs[row * npos..(row + 1) * npos];
                for oy in 0..oh {
                    let iy = (oy * s + ky) as isize - p as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let base = (ci * h + iy as usize) * w;
                    for ox in 0..ow {
                        let ix = (ox * s + kx) as isize - p as isize;
                        if ix >= 0 && ix < w as isize {
                            x[base + ix as usize] += src[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

fn dense_forward(layers: &[DenseLayer], params: &[f64], input: &Array1<f64>) -> (Array1<f64>, Vec<(Array1<f64>, Array1<f64>)>) {
    let mut cache = Vec::with_capacity(layers.len());
    let mut x = input.clone();
    for l in layers {
        let w = ArrayView2::from_shape((l.outputs, l.inputs), &params[l.w_off..l.w_off + l.outputs * l.inputs]).unwrap();
        let b = ArrayView1::from(&params[l.b_off..l.b_off + l.outputs]);
        let pre = w.dot(&x) + b;
        let out = pre.mapv(|v| l.act.apply(v));
        cache.push((x, pre));
        x = out;
    }
    (x, cache)
}

fn dense_backward(
    layers: &[DenseLayer],
    params: &[f64],
    cache: &[(Array1<f64>, Array1<f64>)],
    d_out: &Array1<f64>,
    grads: &mut [f64],
) -> Array1<f64> {
    let mut dy = d_out.clone();
    for (l, (x, pre)) in layers.iter().zip(cache).rev() {
        let dpre = if l.act == Activation::Identity {
            dy
        } else {
            &dy * &pre.mapv(|v| l.act.derivative(v))
        };
        let gw = &mut grads[l.w_off..l.w_off + l.outputs * l.inputs];
        for (o, &d) in dpre.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            for (g, &xi) in gw[o * l.inputs..(o + 1) * l.inputs].iter_mut().zip(x.iter()) {
                *g += d * xi;
            }
        }
        for (g, &d) in grads[l.b_off..l.b_off + l.outputs].iter_mut().zip(dpre.iter()) {
            *g += d;
        }
        let w = ArrayView2::from_shape((l.outputs, l.inputs), &params[l.w_off..l.w_off + l.outputs * l.inputs]).unwrap();
        dy = w.t().dot(&dpre);
    }
    dy
}

impl Network {
    pub fn new(config: &EstimatorConfig) -> Result<Self> {
        config.validate()?;
        let mut lb = LayoutBuilder { specs: Vec::new(), next: 0 };
        let (mut c, mut h, mut w) = (PLANES, config.patch_height / 2, config.patch_width / 2);
        let mut convs = Vec::with_capacity(config.extractor.len());
        for (i, st) in config.extractor.iter().enumerate() {
            let pad = st.kernel / 2;
            if h + 2 * pad < st.kernel || w + 2 * pad < st.kernel {
                return Err(shape(format!("extractor stage {i} kernel does not fit a {h}x{w} input")));
            }
            let out_h = (h + 2 * pad - st.kernel) / st.stride + 1;
            let out_w = (w + 2 * pad - st.kernel) / st.stride + 1;
            let w_off = lb.add(format!("extractor.conv{i}.weight"), vec![st.width, c, st.kernel, st.kernel]);
            let b_off = lb.add(format!("extractor.conv{i}.bias"), vec![st.width]);
            convs.push(ConvLayer {
                in_ch: c,
                out_ch: st.width,
                kernel: st.kernel,
                stride: st.stride,
                pad,
                in_h: h,
                in_w: w,
                out_h,
                out_w,
                act: st.activation,
                w_off,
                b_off,
            });
            (c, h, w) = (st.width, out_h, out_w);
        }
        let extractor = 0..lb.next;
        let projector = lb.dense_stack("projector", config.feature_dim, &config.projector, config.mlp_activation);
        let proj_range = extractor.end..lb.next;
        let head = lb.dense_stack("head", config.feature_dim, &config.head, config.mlp_activation);
        let head_range = proj_range.end..lb.next;
        Ok(Self {
            convs,
            projector,
            head,
            n_params: lb.next,
            specs: lb.specs,
            groups: ParamGroups { extractor, projector: proj_range, head: head_range },
            patch_h: config.patch_height,
            patch_w: config.patch_width,
            input_scale: config.input_scale,
            band_weights: config.band_weights,
            feature_dim: config.feature_dim,
        })
    }

    pub fn n_params(&self) -> usize {
        self.n_params
    }

    pub fn specs(&self) -> &[TensorSpec] {
        &self.specs
    }

    pub fn groups(&self) -> &ParamGroups {
        &self.groups
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn projection_dim(&self) -> usize {
        self.projector.last().map_or(0, |l| l.outputs)
    }

    /// Fan-in scaled uniform initialization.
    ///
    /// Weights of a layer with fan-in `n` and activation gain `g` are drawn
    /// from `U(−g·√(3/n), g·√(3/n))` (variance `g²/n`); biases start at zero.
    /// Tensor `i` draws from stream `i` of `derive_seed(seed, 0x1417)`.
    pub fn init_params(&self, seed: u64) -> Vec<f64> {
        let mut params = vec![0.0; self.n_params];
        let base = derive_seed(seed, INIT_TAG);
        let mut fill = |idx: usize, off: usize, len: usize, fan_in: usize, gain: f64| {
            let bound = gain * (3.0 / fan_in as f64).sqrt();
            let mut rng = stream_rng(base, idx as u64);
            for v in &mut params[off..off + len] {
                *v = rng.random_range(-bound..bound);
            }
        };
        let mut idx = 0;
        for l in &self.convs {
            fill(idx, l.w_off, l.out_ch * l.patch_len(), l.patch_len(), l.act.init_gain());
            idx += 2;
        }
        for stack in [&self.projector, &self.head] {
            for (i, l) in stack.iter().enumerate() {
                // the following activation sets the gain; the output layer is linear
                let next_act = if i + 1 < stack.len() { l.act } else { Activation::Identity };
                fill(idx, l.w_off, l.outputs * l.inputs, l.inputs, next_act.init_gain());
                idx += 2;
            }
        }
        params
    }

    pub fn check_patch(&self, patch: &RawPatch) -> Result<()> {
        if patch.height() != self.patch_h || patch.width() != self.patch_w {
            return Err(shape(format!(
                "estimator expects {}x{} patches, got {}x{}",
                self.patch_h,
                self.patch_w,
                patch.height(),
                patch.width()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], patch: &RawPatch, with_head: bool) -> Result<ForwardPass> {
        assert_eq!(params.len(), self.n_params);
        self.check_patch(patch)?;
        let mut input = haar_forward(patch.data().view())?;
        for (plane, mut band) in input.outer_iter_mut().enumerate() {
            let scale = self.input_scale * self.band_weights[plane % BANDS];
            band.mapv_inplace(|v| v * scale);
        }
        let mut x: Vec<f64> = input.into_raw_vec_and_offset().0;
        let mut conv_cols = Vec::with_capacity(self.convs.len());
        let mut conv_pre = Vec::with_capacity(self.convs.len());
        let mut act = Array2::zeros((0, 0));
        for l in &self.convs {
            let cols = im2col(&x, l);
            let wmat = ArrayView2::from_shape((l.out_ch, l.patch_len()), &params[l.w_off..l.w_off + l.out_ch * l.patch_len()]).unwrap();
            let mut pre = wmat.dot(&cols);
            for (mut row, &b) in pre.axis_iter_mut(Axis(0)).zip(&params[l.b_off..l.b_off + l.out_ch]) {
                row.mapv_inplace(|v| v + b);
            }
            act = pre.mapv(|v| l.act.apply(v));
            x = act.as_standard_layout().iter().copied().collect();
            conv_cols.push(cols);
            conv_pre.push(pre);
        }
        let npos = act.ncols() as f64;
        let pool_mean = act.sum_axis(Axis(1)) / npos;
        let pool_std = Array1::from_iter(act.axis_iter(Axis(0)).zip(pool_mean.iter()).map(|(row, &m)| {
            let var = row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / npos;
            (var + POOL_EPS).sqrt()
        }));
        let mut h = Array1::zeros(self.feature_dim);
        let c = pool_mean.len();
        h.slice_mut(ndarray::s![..c]).assign(&pool_mean);
        // shifted so an all-constant map pools to exactly zero
        h.slice_mut(ndarray::s![c..]).assign(&pool_std.mapv(|s| s - POOL_EPS.sqrt()));
        let (z, proj_cache) = dense_forward(&self.projector, params, &h);
        let (r_hat, head_cache) = if with_head {
            let (r, cache) = dense_forward(&self.head, params, &h);
            (Some(r), cache)
        } else {
            (None, Vec::new())
        };
        Ok(ForwardPass { h, z, r_hat, conv_cols, conv_pre, last_act: act, pool_mean, pool_std, proj_cache, head_cache })
    }

    /// Accumulate parameter gradients of one sample into `grads`, given the
    /// loss gradients with respect to its projection and head output.
    pub fn backward(
        &self,
        params: &[f64],
        pass: &ForwardPass,
        d_z: Option<&Array1<f64>>,
        d_r: Option<&Array1<f64>>,
        grads: &mut [f64],
    ) {
        assert_eq!(grads.len(), self.n_params);
        let mut d_h = Array1::zeros(self.feature_dim);
        if let Some(dz) = d_z {
            d_h += &dense_backward(&self.projector, params, &pass.proj_cache, dz, grads);
        }
        if let Some(dr) = d_r {
            assert!(pass.r_hat.is_some(), "head gradient requires a forward pass with the head");
            d_h += &dense_backward(&self.head, params, &pass.head_cache, dr, grads);
        }
        if d_h.iter().all(|&v| v == 0.0) {
            return;
        }
        let c = pass.pool_mean.len();
        let npos = pass.last_act.ncols() as f64;
        let mut d_act = Array2::zeros(pass.last_act.raw_dim());
        for ch in 0..c {
            let (m, s) = (pass.pool_mean[ch], pass.pool_std[ch]);
            let (dm, ds) = (d_h[ch], d_h[c + ch]);
            for (d, &a) in d_act.row_mut(ch).iter_mut().zip(pass.last_act.row(ch).iter()) {
                *d = dm / npos + ds * (a - m) / (npos * s);
            }
        }
        for (li, l) in self.convs.iter().enumerate().rev() {
            let pre = &pass.conv_pre[li];
            let mut d_pre = d_act;
            if l.act != Activation::Identity {
                ndarray::Zip::from(&mut d_pre).and(pre).for_each(|d, &p| *d *= l.act.derivative(p));
            }
            let gw = d_pre.dot(&pass.conv_cols[li].t());
            for (g, &v) in grads[l.w_off..l.w_off + l.out_ch * l.patch_len()].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            for (g, row) in grads[l.b_off..l.b_off + l.out_ch].iter_mut().zip(d_pre.axis_iter(Axis(0))) {
                *g += row.sum();
            }
            if li == 0 {
                break;
            }
            let wmat = ArrayView2::from_shape((l.out_ch, l.patch_len()), &params[l.w_off..l.w_off + l.out_ch * l.patch_len()]).unwrap();
            let d_cols = wmat.t().dot(&d_pre);
            let dx = col2im(&d_cols, l);
            d_act = Array2::from_shape_vec((l.in_ch, l.in_h * l.in_w), dx).unwrap();
        }
    }
}
