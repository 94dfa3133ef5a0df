//! Network layers with explicit forward and backward passes.
//!
//! Feature maps are `[H, W, theta, F]` tensors. Both convolutions reduce to
//! one matrix product per sample: patches are unfolded once (columns indexed
//! by spatial tap, input slice, input channel), and the group structure
//! lives entirely in an expanded filter matrix gathered from the raw
//! parameters, so the backward pass is a transposed product plus an index
//! scatter.

use crate::group::Group;
use crate::{GcnnError, Result};
use ndarray::{Array1, Array2, Array4, Array5, ArrayView1};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub type Map4 = Array4<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pad {
    /// Zero fill keeps the spatial size.
    Same,
    /// No fill; output shrinks by `k - 1`.
    Valid,
}

impl Pad {
    fn out_side(self, side: usize, k: usize) -> Result<usize> {
        match self {
            Pad::Same => Ok(side),
            Pad::Valid => {
                if side < k {
                    Err(GcnnError::ShapeMismatch {
                        got: vec![side],
                        want: format!("side >= filter size {k} for valid padding"),
                    })
                } else {
                    Ok(side - k + 1)
                }
            }
        }
    }
}

fn xavier_init(rng: &mut ChaCha20Rng, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Unfold 3x3-style neighborhoods of every output position into a matrix
/// row; column order is (tap, theta, channel), channel fastest.
fn unfold(x: &Map4, k: usize, pad: Pad) -> Result<Array2<f64>> {
    let (h, w, t_len, f_len) = x.dim();
    let oh = pad.out_side(h, k)?;
    let ow = pad.out_side(w, k)?;
    let cols = k * k * t_len * f_len;
    let mut out = Array2::zeros((oh * ow, cols));
    let c = (k / 2) as isize;
    for ot in 0..oh {
        for os in 0..ow {
            let row = ot * ow + os;
            let mut col = 0;
            for dy in 0..k {
                for dx in 0..k {
                    let (src_t, src_s) = match pad {
                        Pad::Same => (ot as isize + dy as isize - c, os as isize + dx as isize - c),
                        Pad::Valid => ((ot + dy) as isize, (os + dx) as isize),
                    };
                    if src_t >= 0 && src_t < h as isize && src_s >= 0 && src_s < w as isize {
                        for th in 0..t_len {
                            for f in 0..f_len {
                                out[[row, col + th * f_len + f]] =
                                    x[[src_t as usize, src_s as usize, th, f]];
                            }
                        }
                    }
                    col += t_len * f_len;
                }
            }
        }
    }
    Ok(out)
}

/// Adjoint of [`unfold`]: scatter patch-gradient rows back onto the map.
fn fold_grad(
    grad_patches: &Array2<f64>,
    dims: (usize, usize, usize, usize),
    k: usize,
    pad: Pad,
) -> Map4 {
    let (h, w, t_len, f_len) = dims;
    let oh = pad.out_side(h, k).expect("checked in forward");
    let ow = pad.out_side(w, k).expect("checked in forward");
    let mut out = Map4::zeros(dims);
    let c = (k / 2) as isize;
    for ot in 0..oh {
        for os in 0..ow {
            let row = ot * ow + os;
            let mut col = 0;
            for dy in 0..k {
                for dx in 0..k {
                    let (src_t, src_s) = match pad {
                        Pad::Same => (ot as isize + dy as isize - c, os as isize + dx as isize - c),
                        Pad::Valid => ((ot + dy) as isize, (os + dx) as isize),
                    };
                    if src_t >= 0 && src_t < h as isize && src_s >= 0 && src_s < w as isize {
                        for th in 0..t_len {
                            for f in 0..f_len {
                                out[[src_t as usize, src_s as usize, th, f]] +=
                                    grad_patches[[row, col + th * f_len + f]];
                            }
                        }
                    }
                    col += t_len * f_len;
                }
            }
        }
    }
    out
}

/// Gather map from expanded filter entries to raw parameter indices; the
/// expansion is value-preserving, so its adjoint is index-wise accumulation.
#[derive(Debug, Clone)]
struct FilterExpansion {
    /// `exp_to_raw[row * cols_out + col]` = flat index into the raw filter.
    exp_to_raw: Vec<usize>,
    rows: usize,
    cols: usize,
}

impl FilterExpansion {
    fn expand(&self, raw: &[f64]) -> Array2<f64> {
        let data: Vec<f64> = self.exp_to_raw.iter().map(|&i| raw[i]).collect();
        Array2::from_shape_vec((self.rows, self.cols), data).expect("map length")
    }

    fn accumulate(&self, grad_exp: &Array2<f64>, grad_raw: &mut [f64]) {
        let flat = grad_exp.as_slice().expect("contiguous");
        for (g, &i) in flat.iter().zip(&self.exp_to_raw) {
            grad_raw[i] += g;
        }
    }
}

/// Tap index after acting on the centered offset with a group element;
/// taps use index coordinates (row down), offsets use y-up.
fn transformed_tap(group: &Group, elem: usize, k: usize, dy: usize, dx: usize) -> (usize, usize) {
    let c = k as i32 / 2;
    let offset = (dx as i32 - c, c - dy as i32);
    let (ox, oy) = group.act_offset(elem, offset);
    ((c - oy) as usize, (ox + c) as usize)
}

/// First layer: correlate a planar image against each group-transformed
/// copy of the filters, producing a function on the group.
#[derive(Debug, Clone)]
pub struct LiftConv {
    group: Group,
    k: usize,
    c_in: usize,
    c_out: usize,
    pad: Pad,
    /// `[k, k, c_in, c_out]`.
    pub filters: Array4<f64>,
    expansion: FilterExpansion,
}

pub struct LiftCache {
    patches: Array2<f64>,
    in_dims: (usize, usize, usize, usize),
}

impl LiftConv {
    pub fn new(
        group: Group,
        k: usize,
        c_in: usize,
        c_out: usize,
        pad: Pad,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        assert!(k % 2 == 1, "odd filters only");
        let fan_in = k * k * c_in;
        let fan_out = k * k * c_out * group.order();
        let filters = Array4::from_shape_vec(
            (k, k, c_in, c_out),
            xavier_init(rng, fan_in, fan_out, k * k * c_in * c_out),
        )
        .unwrap();
        let expansion = Self::build_expansion(&group, k, c_in, c_out);
        LiftConv {
            group,
            k,
            c_in,
            c_out,
            pad,
            filters,
            expansion,
        }
    }

    /// Expanded matrix: entry `[(tap, ci), (u, co)]` is the raw filter at
    /// the tap moved by `u^-1` (the filter transformed by `u`).
    fn build_expansion(group: &Group, k: usize, c_in: usize, c_out: usize) -> FilterExpansion {
        let t_out = group.order();
        let rows = k * k * c_in;
        let cols = t_out * c_out;
        let mut exp_to_raw = Vec::with_capacity(rows * cols);
        for dy in 0..k {
            for dx in 0..k {
                for ci in 0..c_in {
                    for u in 0..t_out {
                        let (sy, sx) = transformed_tap(group, group.inverse(u), k, dy, dx);
                        for co in 0..c_out {
                            exp_to_raw.push(((sy * k + sx) * c_in + ci) * c_out + co);
                        }
                    }
                }
            }
        }
        FilterExpansion {
            exp_to_raw,
            rows,
            cols,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.c_out
    }

    pub fn forward(&self, x: &Map4) -> Result<(Map4, LiftCache)> {
        let (h, w, t_len, f_len) = x.dim();
        if t_len != 1 || f_len != self.c_in {
            return Err(GcnnError::ShapeMismatch {
                got: vec![h, w, t_len, f_len],
                want: format!("planar input with {} channels", self.c_in),
            });
        }
        let patches = unfold(x, self.k, self.pad)?;
        let w_exp = self.expansion.expand(self.filters.as_slice().unwrap());
        let out2 = patches.dot(&w_exp);
        let oh = self.pad.out_side(h, self.k)?;
        let ow = self.pad.out_side(w, self.k)?;
        let out = out2
            .into_shape_with_order((oh, ow, self.group.order(), self.c_out))
            .expect("row count");
        Ok((
            out,
            LiftCache {
                patches,
                in_dims: (h, w, 1, self.c_in),
            },
        ))
    }

    pub fn backward(&self, cache: &LiftCache, grad_out: &Map4) -> (Map4, Array4<f64>) {
        let (oh, ow, t_out, co) = grad_out.dim();
        let g2 = grad_out
            .to_owned()
            .into_shape_with_order((oh * ow, t_out * co))
            .expect("contiguous");
        let w_exp = self.expansion.expand(self.filters.as_slice().unwrap());
        let grad_patches = g2.dot(&w_exp.t());
        let grad_w_exp = cache.patches.t().dot(&g2);
        let mut grad_raw = vec![0.0; self.filters.len()];
        self.expansion.accumulate(&grad_w_exp, &mut grad_raw);
        let grad_filters =
            Array4::from_shape_vec(self.filters.raw_dim(), grad_raw).expect("same size");
        let grad_in = fold_grad(&grad_patches, cache.in_dims, self.k, self.pad);
        (grad_in, grad_filters)
    }
}

/// Convolution of functions on the group: filters carry a theta axis and
/// the output stays a function on the group.
#[derive(Debug, Clone)]
pub struct GroupConv {
    group: Group,
    k: usize,
    c_in: usize,
    c_out: usize,
    pad: Pad,
    /// `[k, k, theta_in, c_in, c_out]`.
    pub filters: Array5<f64>,
    expansion: FilterExpansion,
}

pub struct GroupConvCache {
    patches: Array2<f64>,
    in_dims: (usize, usize, usize, usize),
}

impl GroupConv {
    pub fn new(
        group: Group,
        k: usize,
        c_in: usize,
        c_out: usize,
        pad: Pad,
        rng: &mut ChaCha20Rng,
    ) -> Self {
        assert!(k % 2 == 1, "odd filters only");
        let t = group.order();
        let fan_in = k * k * t * c_in;
        let fan_out = k * k * t * c_out;
        let filters = Array5::from_shape_vec(
            (k, k, t, c_in, c_out),
            xavier_init(rng, fan_in, fan_out, k * k * t * c_in * c_out),
        )
        .unwrap();
        let expansion = Self::build_expansion(&group, k, c_in, c_out);
        GroupConv {
            group,
            k,
            c_in,
            c_out,
            pad,
            filters,
            expansion,
        }
    }

    /// Entry `[(tap, h, ci), (u, co)]` reads the raw filter at the
    /// `u^-1`-moved tap and the theta slice `u^-1 h`.
    fn build_expansion(group: &Group, k: usize, c_in: usize, c_out: usize) -> FilterExpansion {
        let t = group.order();
        let rows = k * k * t * c_in;
        let cols = t * c_out;
        let mut exp_to_raw = Vec::with_capacity(rows * cols);
        for dy in 0..k {
            for dx in 0..k {
                for h in 0..t {
                    for ci in 0..c_in {
                        for u in 0..t {
                            let inv = group.inverse(u);
                            let (sy, sx) = transformed_tap(group, inv, k, dy, dx);
                            let sh = group.compose(inv, h);
                            for co in 0..c_out {
                                exp_to_raw.push(
                                    (((sy * k + sx) * t + sh) * c_in + ci) * c_out + co,
                                );
                            }
                        }
                    }
                }
            }
        }
        FilterExpansion {
            exp_to_raw,
            rows,
            cols,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.c_out
    }

    pub fn forward(&self, x: &Map4) -> Result<(Map4, GroupConvCache)> {
        let (h, w, t_len, f_len) = x.dim();
        if t_len != self.group.order() || f_len != self.c_in {
            return Err(GcnnError::ShapeMismatch {
                got: vec![h, w, t_len, f_len],
                want: format!(
                    "group map with |theta| {} and {} channels",
                    self.group.order(),
                    self.c_in
                ),
            });
        }
        let patches = unfold(x, self.k, self.pad)?;
        let w_exp = self.expansion.expand(self.filters.as_slice().unwrap());
        let out2 = patches.dot(&w_exp);
        let oh = self.pad.out_side(h, self.k)?;
        let ow = self.pad.out_side(w, self.k)?;
        let out = out2
            .into_shape_with_order((oh, ow, t_len, self.c_out))
            .expect("row count");
        Ok((
            out,
            GroupConvCache {
                patches,
                in_dims: (h, w, t_len, f_len),
            },
        ))
    }

    pub fn backward(&self, cache: &GroupConvCache, grad_out: &Map4) -> (Map4, Array5<f64>) {
        let (oh, ow, t_out, co) = grad_out.dim();
        let g2 = grad_out
            .to_owned()
            .into_shape_with_order((oh * ow, t_out * co))
            .expect("contiguous");
        let w_exp = self.expansion.expand(self.filters.as_slice().unwrap());
        let grad_patches = g2.dot(&w_exp.t());
        let grad_w_exp = cache.patches.t().dot(&g2);
        let mut grad_raw = vec![0.0; self.filters.len()];
        self.expansion.accumulate(&grad_w_exp, &mut grad_raw);
        let grad_filters =
            Array5::from_shape_vec(self.filters.raw_dim(), grad_raw).expect("same size");
        let grad_in = fold_grad(&grad_patches, cache.in_dims, self.k, self.pad);
        (grad_in, grad_filters)
    }
}

/// Per-channel scale and shift, shared across space and theta, so the layer
/// commutes with every group action.
#[derive(Debug, Clone)]
pub struct ChannelAffine {
    pub scale: Array1<f64>,
    pub shift: Array1<f64>,
}

pub struct AffineCache {
    input: Map4,
}

impl ChannelAffine {
    pub fn new(channels: usize) -> Self {
        ChannelAffine {
            scale: Array1::ones(channels),
            shift: Array1::zeros(channels),
        }
    }

    pub fn forward(&self, x: &Map4) -> Result<(Map4, AffineCache)> {
        let f_len = x.dim().3;
        if f_len != self.scale.len() {
            return Err(GcnnError::ShapeMismatch {
                got: vec![f_len],
                want: format!("{} channels", self.scale.len()),
            });
        }
        let mut out = x.clone();
        for ((_, _, _, f), v) in out.indexed_iter_mut() {
            *v = *v * self.scale[f] + self.shift[f];
        }
        Ok((out, AffineCache { input: x.clone() }))
    }

    pub fn backward(
        &self,
        cache: &AffineCache,
        grad_out: &Map4,
    ) -> (Map4, Array1<f64>, Array1<f64>) {
        let mut grad_in = grad_out.clone();
        let mut grad_scale = Array1::zeros(self.scale.len());
        let mut grad_shift = Array1::zeros(self.shift.len());
        for ((t, s, th, f), g) in grad_out.indexed_iter() {
            grad_scale[f] += g * cache.input[[t, s, th, f]];
            grad_shift[f] += g;
            grad_in[[t, s, th, f]] = g * self.scale[f];
        }
        (grad_in, grad_scale, grad_shift)
    }
}

/// Elementwise rectifier; the subgradient at zero is zero.
#[derive(Debug, Clone)]
pub struct Relu;

pub struct ReluCache {
    positive: Vec<bool>,
}

impl Relu {
    pub fn forward(&self, x: &Map4) -> (Map4, ReluCache) {
        let positive = x.iter().map(|&v| v > 0.0).collect();
        (x.mapv(|v| v.max(0.0)), ReluCache { positive })
    }

    pub fn backward(&self, cache: &ReluCache, grad_out: &Map4) -> Map4 {
        let mut grad = grad_out.clone();
        for (g, &p) in grad.iter_mut().zip(&cache.positive) {
            if !p {
                *g = 0.0;
            }
        }
        grad
    }

    /// Same rectifier on a flat feature vector (used between dense layers).
    pub fn forward_flat(&self, x: ArrayView1<'_, f64>) -> (Array1<f64>, ReluCache) {
        let positive = x.iter().map(|&v| v > 0.0).collect();
        (x.mapv(|v| v.max(0.0)), ReluCache { positive })
    }

    pub fn backward_flat(&self, cache: &ReluCache, grad_out: ArrayView1<'_, f64>) -> Array1<f64> {
        let mut grad = grad_out.to_owned();
        for (g, &p) in grad.iter_mut().zip(&cache.positive) {
            if !p {
                *g = 0.0;
            }
        }
        grad
    }
}

/// 2x2 spatial max-pool applied independently to every theta slice and
/// channel; ties go to the lowest window index for reproducible gradients.
#[derive(Debug, Clone)]
pub struct MaxPool2;

pub struct PoolCache {
    /// Winner window index (0..4) per output element, flattened row-major.
    argmax: Vec<u8>,
    in_dims: (usize, usize, usize, usize),
}

impl MaxPool2 {
    pub fn forward(&self, x: &Map4) -> Result<(Map4, PoolCache)> {
        let (h, w, t_len, f_len) = x.dim();
        if h % 2 != 0 || w % 2 != 0 {
            return Err(GcnnError::ShapeMismatch {
                got: vec![h, w],
                want: "even spatial dims for 2x2 pooling".to_string(),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Map4::zeros((oh, ow, t_len, f_len));
        let mut argmax = vec![0u8; oh * ow * t_len * f_len];
        for ot in 0..oh {
            for os in 0..ow {
                for th in 0..t_len {
                    for f in 0..f_len {
                        let mut best = f64::NEG_INFINITY;
                        let mut best_i = 0u8;
                        for wi in 0..4u8 {
                            let (dy, dx) = ((wi / 2) as usize, (wi % 2) as usize);
                            let v = x[[2 * ot + dy, 2 * os + dx, th, f]];
                            if v > best {
                                best = v;
                                best_i = wi;
                            }
                        }
                        out[[ot, os, th, f]] = best;
                        argmax[((ot * ow + os) * t_len + th) * f_len + f] = best_i;
                    }
                }
            }
        }
        Ok((
            out,
            PoolCache {
                argmax,
                in_dims: (h, w, t_len, f_len),
            },
        ))
    }

    pub fn backward(&self, cache: &PoolCache, grad_out: &Map4) -> Map4 {
        let (oh, ow, t_len, f_len) = grad_out.dim();
        let mut grad = Map4::zeros(cache.in_dims);
        for ot in 0..oh {
            for os in 0..ow {
                for th in 0..t_len {
                    for f in 0..f_len {
                        let wi = cache.argmax[((ot * ow + os) * t_len + th) * f_len + f];
                        let (dy, dx) = ((wi / 2) as usize, (wi % 2) as usize);
                        grad[[2 * ot + dy, 2 * os + dx, th, f]] += grad_out[[ot, os, th, f]];
                    }
                }
            }
        }
        grad
    }
}

/// Fully connected head layer.
#[derive(Debug, Clone)]
pub struct Dense {
    /// `[out, in]`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub struct DenseCache {
    input: Array1<f64>,
}

impl Dense {
    pub fn new(n_in: usize, n_out: usize, rng: &mut ChaCha20Rng) -> Self {
        let weight =
            Array2::from_shape_vec((n_out, n_in), xavier_init(rng, n_in, n_out, n_in * n_out))
                .unwrap();
        Dense {
            weight,
            bias: Array1::zeros(n_out),
        }
    }

    pub fn forward(&self, x: ArrayView1<'_, f64>) -> Result<(Array1<f64>, DenseCache)> {
        if x.len() != self.weight.dim().1 {
            return Err(GcnnError::ShapeMismatch {
                got: vec![x.len()],
                want: format!("{} inputs", self.weight.dim().1),
            });
        }
        let out = self.weight.dot(&x) + &self.bias;
        Ok((
            out,
            DenseCache {
                input: x.to_owned(),
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &DenseCache,
        grad_out: ArrayView1<'_, f64>,
    ) -> (Array1<f64>, Array2<f64>, Array1<f64>) {
        let grad_in = self.weight.t().dot(&grad_out);
        let grad_w =
            Array2::from_shape_fn(self.weight.raw_dim(), |(o, i)| grad_out[o] * cache.input[i]);
        (grad_in, grad_w, grad_out.to_owned())
    }
}

/// Numerically stable softmax cross-entropy against an integer label.
/// Returns the loss and the logit gradient (softmax minus one-hot).
pub fn softmax_cross_entropy(logits: ArrayView1<'_, f64>, label: usize) -> (f64, Array1<f64>) {
    assert!(label < logits.len(), "label {label} out of range");
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Array1<f64> = logits.mapv(|v| (v - max).exp());
    let z: f64 = exps.sum();
    let loss = z.ln() - (logits[label] - max);
    let mut grad = exps / z;
    grad[label] -= 1.0;
    (loss, grad)
}
