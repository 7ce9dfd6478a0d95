//! Reverse-mode differentiation over a closed set of sequence layers.
//!
//! Every forward op appends a node holding its output value plus whatever it
//! needs for the backward pass. [`Tape::backward`] walks the nodes in reverse
//! and accumulates parameter gradients into the [`ParamStore`] that was used
//! for the forward pass.

use super::params::{ParamId, ParamStore};
use super::tensor::{gemm_acc, gemm_nt_acc, gemm_tn_acc, SeqTensor};
use super::NnError;

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId(usize);

/// Convolution hyper-parameters. Weights are `[kernel, in/groups, out]`,
/// bias is `[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn dense(kernel: usize, dilation: usize) -> Self {
        Self {
            kernel,
            dilation,
            groups: 1,
        }
    }

    pub fn pointwise() -> Self {
        Self::dense(1, 1)
    }

    pub fn depthwise(kernel: usize, dilation: usize, channels: usize) -> Self {
        Self {
            kernel,
            dilation,
            groups: channels,
        }
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Conv {
        x: NodeId,
        w: ParamId,
        b: ParamId,
        spec: ConvSpec,
        in_ch: usize,
        // im2col buffer for dense convs with kernel > 1
        cols: Option<Vec<f64>>,
    },
    LayerNorm {
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Relu {
        x: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    MaskRows {
        x: NodeId,
        keep: Vec<bool>,
    },
    AttentionPool {
        x: NodeId,
        w: ParamId,
        b: ParamId,
        alpha: Vec<f64>,
    },
    Sigmoid {
        x: NodeId,
    },
    BceWithLogits {
        x: NodeId,
        target: f64,
    },
    WeightedCe {
        x: NodeId,
        labels: Vec<usize>,
        class_weights: Vec<f64>,
        probs: Vec<f64>,
        weight_sum: f64,
    },
    Dot {
        x: NodeId,
        coeffs: Vec<f64>,
    },
}

struct Node {
    value: SeqTensor,
    op: Op,
}

/// A recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Time offset of kernel tap `k` for "same" padding.
#[inline]
fn tap_offset(k: usize, kernel: usize, dilation: usize) -> isize {
    (k as isize - (kernel / 2) as isize) * dilation as isize
}

/// Row range `t` for which `t + off` is a valid input row.
#[inline]
fn valid_rows(t_len: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = (t_len as isize - off.max(0)).max(0) as usize;
    (lo.min(t_len), hi.max(lo.min(t_len)))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &SeqTensor {
        &self.nodes[id.0].value
    }

    /// Scalar value of a `1 x 1` node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        let v = self.value(id);
        debug_assert_eq!(v.shape(), (1, 1));
        v.data()[0]
    }

    fn push(&mut self, value: SeqTensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    /// Fingerprint of which ReLU inputs are positive. Two passes with equal
    /// patterns lie on the same linear piece of every ReLU.
    pub fn activation_pattern(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for node in &self.nodes {
            if let Op::Relu { x } = node.op {
                for v in self.nodes[x.0].value.data() {
                    h = (h ^ u64::from(*v > 0.0)).wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }

    pub fn input(&mut self, x: SeqTensor) -> NodeId {
        self.push(x, Op::Input)
    }

    /// 1-D cross-correlation along time with "same" zero padding.
    pub fn conv1d(
        &mut self,
        params: &ParamStore,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        spec: ConvSpec,
    ) -> Result<NodeId, NnError> {
        let xin = &self.nodes[x.0].value;
        let (t_len, in_ch) = xin.shape();
        let wp = params.get(w);
        let bp = params.get(b);
        if spec.kernel.is_multiple_of(2) {
            return Err(NnError::ShapeMismatch(format!(
                "conv kernel size must be odd, got {}",
                spec.kernel
            )));
        }
        if spec.dilation == 0 || spec.groups == 0 {
            return Err(NnError::ShapeMismatch("dilation and groups must be >= 1".into()));
        }
        if wp.shape.len() != 3 || wp.shape[0] != spec.kernel {
            return Err(NnError::ShapeMismatch(format!(
                "conv weight shape {:?} does not match kernel {}",
                wp.shape, spec.kernel
            )));
        }
        let out_ch = wp.shape[2];
        if in_ch % spec.groups != 0
            || !out_ch.is_multiple_of(spec.groups)
            || wp.shape[1] != in_ch / spec.groups
            || bp.shape != [out_ch]
        {
            return Err(NnError::ShapeMismatch(format!(
                "conv weight {:?} / bias {:?} incompatible with {in_ch} input channels and {} groups",
                wp.shape, bp.shape, spec.groups
            )));
        }

        let mut out = SeqTensor::zeros(t_len, out_ch);
        for t in 0..t_len {
            out.row_mut(t).copy_from_slice(&bp.value);
        }

        let mut cols = None;
        if spec.groups == 1 {
            if spec.kernel == 1 {
                gemm_acc(t_len, in_ch, out_ch, xin.data(), &wp.value, out.data_mut());
            } else {
                let width = spec.kernel * in_ch;
                let mut buf = vec![0.0; t_len * width];
                for k in 0..spec.kernel {
                    let off = tap_offset(k, spec.kernel, spec.dilation);
                    let (lo, hi) = valid_rows(t_len, off);
                    for t in lo..hi {
                        let src = xin.row((t as isize + off) as usize);
                        buf[t * width + k * in_ch..t * width + (k + 1) * in_ch].copy_from_slice(src);
                    }
                }
                gemm_acc(t_len, width, out_ch, &buf, &wp.value, out.data_mut());
                cols = Some(buf);
            }
        } else {
            let in_g = in_ch / spec.groups;
            let out_g = out_ch / spec.groups;
            for k in 0..spec.kernel {
                let off = tap_offset(k, spec.kernel, spec.dilation);
                let (lo, hi) = valid_rows(t_len, off);
                for t in lo..hi {
                    let src = xin.row((t as isize + off) as usize);
                    let dst = out.row_mut(t);
                    for (co, d) in dst.iter_mut().enumerate() {
                        let g = co / out_g;
                        let mut acc = 0.0;
                        for j in 0..in_g {
                            acc += wp.value[(k * in_g + j) * out_ch + co] * src[g * in_g + j];
                        }
                        *d += acc;
                    }
                }
            }
        }

        Ok(self.push(
            out,
            Op::Conv {
                x,
                w,
                b,
                spec,
                in_ch,
                cols,
            },
        ))
    }

    /// Per-frame normalization over channels followed by a channel-wise affine map.
    pub fn layer_norm(
        &mut self,
        params: &ParamStore,
        x: NodeId,
        gamma: ParamId,
        beta: ParamId,
    ) -> Result<NodeId, NnError> {
        let xin = &self.nodes[x.0].value;
        let (t_len, c) = xin.shape();
        let g = params.value(gamma);
        let bt = params.value(beta);
        if g.len() != c || bt.len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "layer norm affine of width {} on {c} channels",
                g.len()
            )));
        }
        let mut out = SeqTensor::zeros(t_len, c);
        let mut xhat = vec![0.0; t_len * c];
        let mut inv_std = vec![0.0; t_len];
        for t in 0..t_len {
            let row = xin.row(t);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[t] = inv;
            let xh = &mut xhat[t * c..(t + 1) * c];
            let o = out.row_mut(t);
            for j in 0..c {
                xh[j] = (row[j] - mean) * inv;
                o[j] = g[j] * xh[j] + bt[j];
            }
        }
        Ok(self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        ))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        self.push(out, Op::Relu { x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId, NnError> {
        let va = &self.nodes[a.0].value;
        let vb = &self.nodes[b.0].value;
        if va.shape() != vb.shape() {
            return Err(NnError::ShapeMismatch(format!(
                "residual add {:?} + {:?}",
                va.shape(),
                vb.shape()
            )));
        }
        let mut out = va.clone();
        out.data_mut()
            .iter_mut()
            .zip(vb.data())
            .for_each(|(o, v)| *o += v);
        Ok(self.push(out, Op::Add { a, b }))
    }

    /// Zeroes rows where `keep` is false.
    pub fn mask_rows(&mut self, x: NodeId, keep: &[bool]) -> Result<NodeId, NnError> {
        let mut out = self.nodes[x.0].value.clone();
        if keep.len() != out.rows() {
            return Err(NnError::ShapeMismatch(format!(
                "mask of length {} on {} frames",
                keep.len(),
                out.rows()
            )));
        }
        for (t, &k) in keep.iter().enumerate() {
            if !k {
                out.row_mut(t).iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(self.push(
            out,
            Op::MaskRows {
                x,
                keep: keep.to_vec(),
            },
        ))
    }

    /// Softmax-weighted sum over time. `w: [C]`, `b: [1]` score each frame;
    /// frames with `mask[t] == false` receive zero weight. Output is `1 x C`.
    pub fn attention_pool(
        &mut self,
        params: &ParamStore,
        x: NodeId,
        w: ParamId,
        b: ParamId,
        mask: Option<&[bool]>,
    ) -> Result<NodeId, NnError> {
        let xin = &self.nodes[x.0].value;
        let (t_len, c) = xin.shape();
        let wv = params.value(w);
        let bv = params.value(b);
        if wv.len() != c || bv.len() != 1 {
            return Err(NnError::ShapeMismatch("attention pool weight shape".into()));
        }
        if let Some(m) = mask {
            if m.len() != t_len || !m.iter().any(|&k| k) {
                return Err(NnError::ShapeMismatch(
                    "attention mask must match frames and keep at least one".into(),
                ));
            }
        }
        let keep = |t: usize| mask.is_none_or(|m| m[t]);
        let scores: Vec<f64> = (0..t_len)
            .map(|t| {
                let row = xin.row(t);
                row.iter().zip(wv).map(|(a, b)| a * b).sum::<f64>() + bv[0]
            })
            .collect();
        let max = (0..t_len)
            .filter(|&t| keep(t))
            .map(|t| scores[t])
            .fold(f64::NEG_INFINITY, f64::max);
        let mut alpha: Vec<f64> = (0..t_len)
            .map(|t| if keep(t) { (scores[t] - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = alpha.iter().sum();
        alpha.iter_mut().for_each(|a| *a /= z);

        let mut out = SeqTensor::zeros(1, c);
        for (t, &a) in alpha.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            let row = xin.row(t);
            for (o, v) in out.data_mut().iter_mut().zip(row) {
                *o += a * v;
            }
        }
        Ok(self.push(out, Op::AttentionPool { x, w, b, alpha }))
    }

    /// Attention weights recorded by an attention-pool node.
    pub fn attention_weights(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::AttentionPool { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    pub fn sigmoid(&mut self, x: NodeId) -> NodeId {
        let mut out = self.nodes[x.0].value.clone();
        out.data_mut().iter_mut().for_each(|v| *v = sigmoid(*v));
        self.push(out, Op::Sigmoid { x })
    }

    /// Binary cross-entropy on a `1 x 1` logit; `target` may be soft.
    pub fn bce_with_logits(&mut self, x: NodeId, target: f64) -> Result<NodeId, NnError> {
        let v = &self.nodes[x.0].value;
        if v.shape() != (1, 1) {
            return Err(NnError::ShapeMismatch(format!("bce expects 1x1 logit, got {:?}", v.shape())));
        }
        let z = v.data()[0];
        let loss = z.max(0.0) - z * target + (-z.abs()).exp().ln_1p();
        Ok(self.push(SeqTensor::from_vec(1, 1, vec![loss]), Op::BceWithLogits { x, target }))
    }

    /// Class-weighted softmax cross-entropy over frames, normalized by the
    /// sum of applied weights.
    pub fn weighted_cross_entropy(
        &mut self,
        x: NodeId,
        labels: &[usize],
        class_weights: &[f64],
    ) -> Result<NodeId, NnError> {
        let v = &self.nodes[x.0].value;
        let (t_len, c) = v.shape();
        if labels.len() != t_len || class_weights.len() != c {
            return Err(NnError::ShapeMismatch(format!(
                "cross entropy: {} labels / {} weights for {t_len}x{c} logits",
                labels.len(),
                class_weights.len()
            )));
        }
        if labels.iter().any(|&l| l >= c) {
            return Err(NnError::ShapeMismatch("label out of range".into()));
        }
        let mut probs = vec![0.0; t_len * c];
        let mut loss = 0.0;
        let mut weight_sum = 0.0;
        for t in 0..t_len {
            let row = v.row(t);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let p = &mut probs[t * c..(t + 1) * c];
            let mut z = 0.0;
            for j in 0..c {
                p[j] = (row[j] - max).exp();
                z += p[j];
            }
            p.iter_mut().for_each(|q| *q /= z);
            let y = labels[t];
            let w = class_weights[y];
            loss += w * (z.ln() + max - row[y]);
            weight_sum += w;
        }
        if weight_sum <= 0.0 {
            return Err(NnError::ShapeMismatch("applied class weights sum to zero".into()));
        }
        Ok(self.push(
            SeqTensor::from_vec(1, 1, vec![loss / weight_sum]),
            Op::WeightedCe {
                x,
                labels: labels.to_vec(),
                class_weights: class_weights.to_vec(),
                probs,
                weight_sum,
            },
        ))
    }

    /// `sum(coeffs * x)`; handy for probing gradients of arbitrary nodes.
    pub fn dot(&mut self, x: NodeId, coeffs: &[f64]) -> Result<NodeId, NnError> {
        let v = &self.nodes[x.0].value;
        if coeffs.len() != v.data().len() {
            return Err(NnError::ShapeMismatch("dot coefficient length".into()));
        }
        let s = v.data().iter().zip(coeffs).map(|(a, b)| a * b).sum();
        Ok(self.push(
            SeqTensor::from_vec(1, 1, vec![s]),
            Op::Dot {
                x,
                coeffs: coeffs.to_vec(),
            },
        ))
    }

    /// Zeroes every gradient in `params`, then backpropagates from `loss`.
    pub fn backward(&self, loss: NodeId, params: &mut ParamStore) -> Result<(), NnError> {
        params.zero_grads();
        self.backward_accumulate(loss, params, 1.0)
    }

    /// Adds `seed * d(loss)/d(param)` into the existing gradients. Repeated
    /// calls in a fixed order give a deterministic batch reduction.
    pub fn backward_accumulate(
        &self,
        loss: NodeId,
        params: &mut ParamStore,
        seed: f64,
    ) -> Result<(), NnError> {
        if self.nodes.is_empty() || loss.0 >= self.nodes.len() {
            return Err(NnError::NoTape);
        }
        if self.nodes[loss.0].value.shape() != (1, 1) {
            return Err(NnError::ShapeMismatch("backward requires a scalar loss".into()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![seed]);

        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Conv {
                    x,
                    w,
                    b,
                    spec,
                    in_ch,
                    cols,
                } => {
                    let t_len = node.value.rows();
                    let out_ch = node.value.cols();
                    let in_ch = *in_ch;
                    {
                        let bp = params.get_mut(*b);
                        for t in 0..t_len {
                            for (g, d) in bp.grad.iter_mut().zip(&gy[t * out_ch..(t + 1) * out_ch]) {
                                *g += d;
                            }
                        }
                    }
                    let xin = &self.nodes[x.0].value;
                    let mut gx = vec![0.0; t_len * in_ch];
                    let wp = params.get_mut(*w);
                    if spec.groups == 1 {
                        if spec.kernel == 1 {
                            gemm_tn_acc(in_ch, t_len, out_ch, xin.data(), &gy, &mut wp.grad);
                            gemm_nt_acc(t_len, out_ch, in_ch, &gy, &wp.value, &mut gx);
                        } else {
                            let cols = cols.as_ref().expect("dense conv keeps im2col");
                            let width = spec.kernel * in_ch;
                            gemm_tn_acc(width, t_len, out_ch, cols, &gy, &mut wp.grad);
                            let mut gcols = vec![0.0; t_len * width];
                            gemm_nt_acc(t_len, out_ch, width, &gy, &wp.value, &mut gcols);
                            for k in 0..spec.kernel {
                                let off = tap_offset(k, spec.kernel, spec.dilation);
                                let (lo, hi) = valid_rows(t_len, off);
                                for t in lo..hi {
                                    let src = (t as isize + off) as usize;
                                    let gc = &gcols[t * width + k * in_ch..t * width + (k + 1) * in_ch];
                                    for (g, v) in gx[src * in_ch..(src + 1) * in_ch].iter_mut().zip(gc) {
                                        *g += v;
                                    }
                                }
                            }
                        }
                    } else {
                        let in_g = in_ch / spec.groups;
                        let out_g = out_ch / spec.groups;
                        for k in 0..spec.kernel {
                            let off = tap_offset(k, spec.kernel, spec.dilation);
                            let (lo, hi) = valid_rows(t_len, off);
                            for t in lo..hi {
                                let src = (t as isize + off) as usize;
                                let xr = xin.row(src);
                                let gyr = &gy[t * out_ch..(t + 1) * out_ch];
                                for (co, &d) in gyr.iter().enumerate() {
                                    let g = co / out_g;
                                    for j in 0..in_g {
                                        let wi = (k * in_g + j) * out_ch + co;
                                        let ci = g * in_g + j;
                                        wp.grad[wi] += d * xr[ci];
                                        gx[src * in_ch + ci] += d * wp.value[wi];
                                    }
                                }
                            }
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (t_len, c) = node.value.shape();
                    {
                        let bp = params.get_mut(*beta);
                        for t in 0..t_len {
                            for (g, d) in bp.grad.iter_mut().zip(&gy[t * c..(t + 1) * c]) {
                                *g += d;
                            }
                        }
                    }
                    let gp = params.get_mut(*gamma);
                    let mut gx = vec![0.0; t_len * c];
                    let mut dxh = vec![0.0; c];
                    for t in 0..t_len {
                        let gyr = &gy[t * c..(t + 1) * c];
                        let xh = &xhat[t * c..(t + 1) * c];
                        let mut mean_d = 0.0;
                        let mut mean_dx = 0.0;
                        for j in 0..c {
                            gp.grad[j] += gyr[j] * xh[j];
                            dxh[j] = gyr[j] * gp.value[j];
                            mean_d += dxh[j];
                            mean_dx += dxh[j] * xh[j];
                        }
                        mean_d /= c as f64;
                        mean_dx /= c as f64;
                        let inv = inv_std[t];
                        for j in 0..c {
                            gx[t * c + j] = inv * (dxh[j] - mean_d - xh[j] * mean_dx);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Relu { x } => {
                    let gx = gy
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| if *y > 0.0 { *g } else { 0.0 })
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Add { a, b } => {
                    accumulate(&mut grads, *b, gy.clone());
                    accumulate(&mut grads, *a, gy);
                }
                Op::MaskRows { x, keep } => {
                    let c = node.value.cols();
                    let mut gx = gy;
                    for (t, &k) in keep.iter().enumerate() {
                        if !k {
                            gx[t * c..(t + 1) * c].iter_mut().for_each(|v| *v = 0.0);
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::AttentionPool { x, w, b, alpha } => {
                    let xin = &self.nodes[x.0].value;
                    let (t_len, c) = xin.shape();
                    let dalpha: Vec<f64> = (0..t_len)
                        .map(|t| xin.row(t).iter().zip(&gy).map(|(a, b)| a * b).sum())
                        .collect();
                    let inner: f64 = alpha.iter().zip(&dalpha).map(|(a, d)| a * d).sum();
                    let ds: Vec<f64> = alpha
                        .iter()
                        .zip(&dalpha)
                        .map(|(a, d)| a * (d - inner))
                        .collect();
                    let wv = params.value(*w).to_vec();
                    let mut gx = vec![0.0; t_len * c];
                    {
                        let wp = params.get_mut(*w);
                        for t in 0..t_len {
                            let row = xin.row(t);
                            let g = &mut gx[t * c..(t + 1) * c];
                            for j in 0..c {
                                g[j] = alpha[t] * gy[j] + ds[t] * wv[j];
                                wp.grad[j] += ds[t] * row[j];
                            }
                        }
                    }
                    params.get_mut(*b).grad[0] += ds.iter().sum::<f64>();
                    accumulate(&mut grads, *x, gx);
                }
                Op::Sigmoid { x } => {
                    let gx = gy
                        .iter()
                        .zip(node.value.data())
                        .map(|(g, y)| g * y * (1.0 - y))
                        .collect();
                    accumulate(&mut grads, *x, gx);
                }
                Op::BceWithLogits { x, target } => {
                    let z = self.nodes[x.0].value.data()[0];
                    accumulate(&mut grads, *x, vec![gy[0] * (sigmoid(z) - target)]);
                }
                Op::WeightedCe {
                    x,
                    labels,
                    class_weights,
                    probs,
                    weight_sum,
                } => {
                    let c = class_weights.len();
                    let mut gx = probs.clone();
                    for (t, &y) in labels.iter().enumerate() {
                        let k = gy[0] * class_weights[y] / weight_sum;
                        let row = &mut gx[t * c..(t + 1) * c];
                        row[y] -= 1.0;
                        row.iter_mut().for_each(|v| *v *= k);
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::Dot { x, coeffs } => {
                    let gx = coeffs.iter().map(|c| c * gy[0]).collect();
                    accumulate(&mut grads, *x, gx);
                }
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: Vec<f64>) {
    match &mut grads[id.0] {
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, v)| *a += v),
        slot @ None => *slot = Some(g),
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax.
pub fn softmax_rows(x: &SeqTensor) -> SeqTensor {
    let mut out = x.clone();
    for t in 0..out.rows() {
        softmax_in_place(out.row_mut(t));
    }
    out
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut z = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        z += *x;
    }
    v.iter_mut().for_each(|x| *x /= z);
}
