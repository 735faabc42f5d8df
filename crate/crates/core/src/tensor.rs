//! Minimal dense-tensor engine with tape-based reverse-mode gradients.
//!
//! Just enough machinery to train the grasp network and the concept layer:
//! row-major f64 tensors, cross-correlation and its transpose, a few
//! elementwise ops, masked MSE, plain SGD, and a central-difference
//! gradient checker. Every operation is deterministic; the `parallel`
//! feature switches the convolution kernels to rayon without changing a
//! single output bit (parallel units own disjoint output slices and keep
//! the sequential accumulation order within each slice).

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },
    #[error("invalid convolution geometry: {0}")]
    BadGeometry(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("checkpoint format error: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn shape_str(shape: &[usize]) -> String {
    let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
    format!("[{}]", dims.join("x"))
}

/// Dense row-major tensor of 64-bit reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self, TensorError> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(TensorError::ShapeMismatch {
                expected: format!("{} elements for {}", len, shape_str(shape)),
                got: format!("{} elements", data.len()),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// The single element of a length-1 tensor.
    pub fn item(&self) -> Result<f64, TensorError> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(TensorError::ShapeMismatch {
                expected: "[1]".into(),
                got: shape_str(&self.shape),
            })
        }
    }

    pub fn same_shape(&self, other: &Tensor) -> bool {
        self.shape == other.shape
    }

    pub fn check_all_finite(&self, context: &str) -> Result<(), TensorError> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(TensorError::NonFinite(context.to_string()))
        }
    }

    fn add_assign(&mut self, other: &Tensor) {
        debug_assert!(self.same_shape(other));
        for (a, b) in self.data.iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    /// Global average pool of a [C,H,W] tensor down to [C,1,1].
    pub fn global_avg_pool(&self) -> Result<Tensor, TensorError> {
        if self.shape.len() != 3 {
            return Err(TensorError::ShapeMismatch {
                expected: "[C x H x W]".into(),
                got: shape_str(&self.shape),
            });
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let plane = h * w;
        let mut out = Tensor::zeros(&[c, 1, 1]);
        for ch in 0..c {
            let s: f64 = self.data[ch * plane..(ch + 1) * plane].iter().sum();
            out.data[ch] = s / plane as f64;
        }
        Ok(out)
    }
}

/// A named trainable tensor paired with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

impl Param {
    pub fn new(name: impl Into<String>, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.data.fill(0.0);
    }
}

/// He-uniform initialization: uniform on ±sqrt(6 / fan_in).
pub fn he_uniform(shape: &[usize], fan_in: usize, rng: &mut impl rand::Rng) -> Tensor {
    let limit = (6.0 / fan_in.max(1) as f64).sqrt();
    let len: usize = shape.iter().product();
    let data = (0..len).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(shape, data).expect("shape/data length agree by construction")
}

/// Plain SGD: value ← value − lr·grad, then grads are zeroed.
///
/// lr = 0 is accepted (a no-op step), so callers can express "evaluate
/// without updating" through the same path.
pub fn sgd_step(params: &mut [Param], lr: f64) -> Result<(), TensorError> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(TensorError::Domain(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    for p in params.iter_mut() {
        for (v, g) in p.value.data.iter_mut().zip(p.grad.data.iter()) {
            *v -= lr * g;
        }
        p.zero_grad();
    }
    Ok(())
}

// ── Convolution geometry ────────────────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    ci: usize,
    h: usize,
    w: usize,
    co: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

fn conv_out_dim(n: usize, k: usize, s: usize, p: usize) -> Option<usize> {
    let span = n + 2 * p;
    if span < k {
        return None;
    }
    Some((span - k) / s + 1)
}

fn conv_geom(
    x_shape: &[usize],
    k_shape: &[usize],
    stride: usize,
    pad: usize,
) -> Result<ConvGeom, TensorError> {
    if x_shape.len() != 3 || k_shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            expected: "input [Ci x H x W] and kernel [Co x Ci x kH x kW]".into(),
            got: format!("input {}, kernel {}", shape_str(x_shape), shape_str(k_shape)),
        });
    }
    let (ci, h, w) = (x_shape[0], x_shape[1], x_shape[2]);
    let (co, kci, kh, kw) = (k_shape[0], k_shape[1], k_shape[2], k_shape[3]);
    if x_shape.iter().chain(k_shape.iter()).any(|&d| d == 0) {
        return Err(TensorError::BadGeometry("zero-sized dimension".into()));
    }
    if ci != kci {
        return Err(TensorError::ShapeMismatch {
            expected: format!(
                "kernel with {ci} input channels for input {}",
                shape_str(x_shape)
            ),
            got: shape_str(k_shape),
        });
    }
    if kh % 2 == 0 || kw % 2 == 0 {
        return Err(TensorError::BadGeometry(format!(
            "kernel dims must be odd, got {kh}x{kw}"
        )));
    }
    if stride < 1 {
        return Err(TensorError::BadGeometry("stride must be >= 1".into()));
    }
    let ho = conv_out_dim(h, kh, stride, pad).ok_or_else(|| {
        TensorError::BadGeometry(format!("output height < 1 for H={h} k={kh} s={stride} p={pad}"))
    })?;
    let wo = conv_out_dim(w, kw, stride, pad).ok_or_else(|| {
        TensorError::BadGeometry(format!("output width < 1 for W={w} k={kw} s={stride} p={pad}"))
    })?;
    Ok(ConvGeom {
        ci,
        h,
        w,
        co,
        kh,
        kw,
        stride,
        pad,
        ho,
        wo,
    })
}

/// Geometry for a transposed conv: its input plays the conv-output role.
fn convt_geom(
    x_shape: &[usize],
    k_shape: &[usize],
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Result<ConvGeom, TensorError> {
    if x_shape.len() != 3 || k_shape.len() != 4 {
        return Err(TensorError::ShapeMismatch {
            expected: "input [Co x H' x W'] and kernel [Co x Ci x kH x kW]".into(),
            got: format!("input {}, kernel {}", shape_str(x_shape), shape_str(k_shape)),
        });
    }
    if output_padding >= stride {
        return Err(TensorError::BadGeometry(format!(
            "output_padding {output_padding} must be < stride {stride}"
        )));
    }
    let (co, hu, wu) = (x_shape[0], x_shape[1], x_shape[2]);
    if co != k_shape[0] {
        return Err(TensorError::ShapeMismatch {
            expected: format!("kernel leading dim {co} to match input channels"),
            got: shape_str(k_shape),
        });
    }
    let (kh, kw) = (k_shape[2], k_shape[3]);
    let span_h = (hu - 1) * stride + kh + output_padding;
    let span_w = (wu - 1) * stride + kw + output_padding;
    if span_h < 2 * pad + 1 || span_w < 2 * pad + 1 {
        return Err(TensorError::BadGeometry(
            "transposed output collapses under padding".into(),
        ));
    }
    let g = conv_geom(
        &[k_shape[1], span_h - 2 * pad, span_w - 2 * pad],
        k_shape,
        stride,
        pad,
    )?;
    if g.ho != hu || g.wo != wu {
        return Err(TensorError::BadGeometry(format!(
            "inconsistent transpose geometry: paired conv gives {}x{}, input is {hu}x{wu}",
            g.ho, g.wo
        )));
    }
    Ok(g)
}

/// Strategy-explicit convolution kernels. The public ops dispatch on the
/// `parallel` feature; the `_seq`/`_par` entry points stay visible so the
/// bench suite can compare both in one build.
pub mod kernels {
    use super::*;

    /// Valid output-column range [lo, hi) such that b·s + j − p ∈ [0, w).
    #[inline]
    fn col_range(wo: usize, w: usize, j: usize, s: usize, p: usize) -> (usize, usize) {
        if j > w - 1 + p {
            return (0, 0);
        }
        let lo = if p > j { (p - j).div_ceil(s) } else { 0 };
        let hi = ((w - 1 + p - j) / s + 1).min(wo);
        (lo.min(hi), hi)
    }

    fn forward_one_out_channel(y_o: &mut [f64], x: &[f64], k: &[f64], o: usize, g: &ConvGeom) {
        let plane_in = g.h * g.w;
        for c in 0..g.ci {
            let x_c = &x[c * plane_in..(c + 1) * plane_in];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wgt = k[((o * g.ci + c) * g.kh + i) * g.kw + j];
                    let (b_lo, b_hi) = col_range(g.wo, g.w, j, g.stride, g.pad);
                    if b_lo >= b_hi {
                        continue;
                    }
                    for a in 0..g.ho {
                        let ih = (a * g.stride + i) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let xrow = &x_c[ih as usize * g.w..(ih as usize + 1) * g.w];
                        let yrow = &mut y_o[a * g.wo..(a + 1) * g.wo];
                        let mut iw = (b_lo * g.stride + j) - g.pad;
                        for yv in &mut yrow[b_lo..b_hi] {
                            *yv += wgt * xrow[iw];
                            iw += g.stride;
                        }
                    }
                }
            }
        }
    }

    pub(super) fn forward_seq(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        let mut y = Tensor::zeros(&[g.co, g.ho, g.wo]);
        let plane_out = g.ho * g.wo;
        for (o, y_o) in y.data.chunks_mut(plane_out).enumerate() {
            forward_one_out_channel(y_o, &x.data, &k.data, o, g);
        }
        y
    }

    #[cfg(feature = "parallel")]
    pub(super) fn forward_par(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        use rayon::prelude::*;
        let mut y = Tensor::zeros(&[g.co, g.ho, g.wo]);
        let plane_out = g.ho * g.wo;
        y.data
            .par_chunks_mut(plane_out)
            .enumerate()
            .for_each(|(o, y_o)| forward_one_out_channel(y_o, &x.data, &k.data, o, g));
        y
    }

    fn input_grad_one_channel(gx_c: &mut [f64], gy: &[f64], k: &[f64], c: usize, g: &ConvGeom) {
        let plane_out = g.ho * g.wo;
        for o in 0..g.co {
            let gy_o = &gy[o * plane_out..(o + 1) * plane_out];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let wgt = k[((o * g.ci + c) * g.kh + i) * g.kw + j];
                    let (b_lo, b_hi) = col_range(g.wo, g.w, j, g.stride, g.pad);
                    if b_lo >= b_hi {
                        continue;
                    }
                    for a in 0..g.ho {
                        let ih = (a * g.stride + i) as isize - g.pad as isize;
                        if ih < 0 || ih >= g.h as isize {
                            continue;
                        }
                        let xrow = &mut gx_c[ih as usize * g.w..(ih as usize + 1) * g.w];
                        let grow = &gy_o[a * g.wo..(a + 1) * g.wo];
                        let mut iw = (b_lo * g.stride + j) - g.pad;
                        for gv in &grow[b_lo..b_hi] {
                            xrow[iw] += wgt * gv;
                            iw += g.stride;
                        }
                    }
                }
            }
        }
    }

    pub(super) fn input_grad_seq(gy: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        let mut gx = Tensor::zeros(&[g.ci, g.h, g.w]);
        let plane_in = g.h * g.w;
        for (c, gx_c) in gx.data.chunks_mut(plane_in).enumerate() {
            input_grad_one_channel(gx_c, &gy.data, &k.data, c, g);
        }
        gx
    }

    #[cfg(feature = "parallel")]
    pub(super) fn input_grad_par(gy: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        use rayon::prelude::*;
        let mut gx = Tensor::zeros(&[g.ci, g.h, g.w]);
        let plane_in = g.h * g.w;
        gx.data
            .par_chunks_mut(plane_in)
            .enumerate()
            .for_each(|(c, gx_c)| input_grad_one_channel(gx_c, &gy.data, &k.data, c, g));
        gx
    }

    fn kernel_grad_one_out_channel(gk_o: &mut [f64], gy: &[f64], x: &[f64], o: usize, g: &ConvGeom) {
        let plane_out = g.ho * g.wo;
        let plane_in = g.h * g.w;
        let gy_o = &gy[o * plane_out..(o + 1) * plane_out];
        for c in 0..g.ci {
            let x_c = &x[c * plane_in..(c + 1) * plane_in];
            for i in 0..g.kh {
                for j in 0..g.kw {
                    let (b_lo, b_hi) = col_range(g.wo, g.w, j, g.stride, g.pad);
                    let mut acc = 0.0;
                    if b_lo < b_hi {
                        for a in 0..g.ho {
                            let ih = (a * g.stride + i) as isize - g.pad as isize;
                            if ih < 0 || ih >= g.h as isize {
                                continue;
                            }
                            let xrow = &x_c[ih as usize * g.w..(ih as usize + 1) * g.w];
                            let grow = &gy_o[a * g.wo..(a + 1) * g.wo];
                            let mut iw = (b_lo * g.stride + j) - g.pad;
                            for gv in &grow[b_lo..b_hi] {
                                acc += gv * xrow[iw];
                                iw += g.stride;
                            }
                        }
                    }
                    gk_o[(c * g.kh + i) * g.kw + j] = acc;
                }
            }
        }
    }

    pub(super) fn kernel_grad_seq(gy: &Tensor, x: &Tensor, g: &ConvGeom) -> Tensor {
        let mut gk = Tensor::zeros(&[g.co, g.ci, g.kh, g.kw]);
        let per_out = g.ci * g.kh * g.kw;
        for (o, gk_o) in gk.data.chunks_mut(per_out).enumerate() {
            kernel_grad_one_out_channel(gk_o, &gy.data, &x.data, o, g);
        }
        gk
    }

    #[cfg(feature = "parallel")]
    pub(super) fn kernel_grad_par(gy: &Tensor, x: &Tensor, g: &ConvGeom) -> Tensor {
        use rayon::prelude::*;
        let mut gk = Tensor::zeros(&[g.co, g.ci, g.kh, g.kw]);
        let per_out = g.ci * g.kh * g.kw;
        gk.data
            .par_chunks_mut(per_out)
            .enumerate()
            .for_each(|(o, gk_o)| kernel_grad_one_out_channel(gk_o, &gy.data, &x.data, o, g));
        gk
    }

    pub fn conv2d_seq(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor, TensorError> {
        let g = conv_geom(x.shape(), k.shape(), stride, pad)?;
        Ok(forward_seq(x, k, &g))
    }

    #[cfg(feature = "parallel")]
    pub fn conv2d_par(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor, TensorError> {
        let g = conv_geom(x.shape(), k.shape(), stride, pad)?;
        Ok(forward_par(x, k, &g))
    }

    pub fn conv2d_transpose_seq(
        x: &Tensor,
        k: &Tensor,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Tensor, TensorError> {
        let g = convt_geom(x.shape(), k.shape(), stride, pad, output_padding)?;
        Ok(input_grad_seq(x, k, &g))
    }

    /// Kernel-gradient of [`super::conv2d`]: dL/dkernel given the output
    /// gradient and the forward input.
    pub fn conv2d_kernel_grad_seq(
        gy: &Tensor,
        x: &Tensor,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor, TensorError> {
        let k_shape = [gy.shape()[0], x.shape()[0], kh, kw];
        let g = conv_geom(x.shape(), &k_shape, stride, pad)?;
        Ok(kernel_grad_seq(gy, x, &g))
    }

    #[cfg(feature = "parallel")]
    pub fn conv2d_kernel_grad_par(
        gy: &Tensor,
        x: &Tensor,
        kh: usize,
        kw: usize,
        stride: usize,
        pad: usize,
    ) -> Result<Tensor, TensorError> {
        let k_shape = [gy.shape()[0], x.shape()[0], kh, kw];
        let g = conv_geom(x.shape(), &k_shape, stride, pad)?;
        Ok(kernel_grad_par(gy, x, &g))
    }

    #[cfg(feature = "parallel")]
    pub fn conv2d_transpose_par(
        x: &Tensor,
        k: &Tensor,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Tensor, TensorError> {
        let g = convt_geom(x.shape(), k.shape(), stride, pad, output_padding)?;
        Ok(input_grad_par(x, k, &g))
    }

    pub(super) fn dispatch_forward(x: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        #[cfg(feature = "parallel")]
        {
            forward_par(x, k, g)
        }
        #[cfg(not(feature = "parallel"))]
        {
            forward_seq(x, k, g)
        }
    }

    pub(super) fn dispatch_input_grad(gy: &Tensor, k: &Tensor, g: &ConvGeom) -> Tensor {
        #[cfg(feature = "parallel")]
        {
            input_grad_par(gy, k, g)
        }
        #[cfg(not(feature = "parallel"))]
        {
            input_grad_seq(gy, k, g)
        }
    }

    pub(super) fn dispatch_kernel_grad(gy: &Tensor, x: &Tensor, g: &ConvGeom) -> Tensor {
        #[cfg(feature = "parallel")]
        {
            kernel_grad_par(gy, x, g)
        }
        #[cfg(not(feature = "parallel"))]
        {
            kernel_grad_seq(gy, x, g)
        }
    }
}

/// Standalone cross-correlation (no tape).
pub fn conv2d(x: &Tensor, k: &Tensor, stride: usize, pad: usize) -> Result<Tensor, TensorError> {
    let g = conv_geom(x.shape(), k.shape(), stride, pad)?;
    Ok(kernels::dispatch_forward(x, k, &g))
}

/// Standalone transposed convolution: the exact adjoint of [`conv2d`] with
/// the same kernel, stride and padding. `output_padding` (< stride) extends
/// the output so strided encoders can be mirrored to even sizes.
pub fn conv2d_transpose(
    x: &Tensor,
    k: &Tensor,
    stride: usize,
    pad: usize,
    output_padding: usize,
) -> Result<Tensor, TensorError> {
    let g = convt_geom(x.shape(), k.shape(), stride, pad, output_padding)?;
    Ok(kernels::dispatch_input_grad(x, k, &g))
}

// ── Tape ────────────────────────────────────────────────────────────────────

/// Handle to a tensor slot on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Copy)]
enum OpRecord {
    Conv2d { x: usize, k: usize, out: usize, geom: ConvGeom },
    ConvT2d { x: usize, k: usize, out: usize, geom: ConvGeom },
    Relu { x: usize, out: usize },
    LeakyRelu { x: usize, out: usize, slope: f64 },
    Sigmoid { x: usize, out: usize },
    Tanh { x: usize, out: usize },
    Add { a: usize, b: usize, out: usize },
    AddChannelBias { x: usize, b: usize, out: usize },
    Scale { x: usize, factor: f64, out: usize },
    MaskedMse { pred: usize, target: usize, mask: Option<usize>, out: usize },
}

impl OpRecord {
    fn out_slot(&self) -> usize {
        match *self {
            OpRecord::Conv2d { out, .. }
            | OpRecord::ConvT2d { out, .. }
            | OpRecord::Relu { out, .. }
            | OpRecord::LeakyRelu { out, .. }
            | OpRecord::Sigmoid { out, .. }
            | OpRecord::Tanh { out, .. }
            | OpRecord::Add { out, .. }
            | OpRecord::AddChannelBias { out, .. }
            | OpRecord::Scale { out, .. }
            | OpRecord::MaskedMse { out, .. } => out,
        }
    }
}

/// Records forward operations and replays them in reverse for gradients.
/// One tape per training step; confined to a single thread.
#[derive(Default)]
pub struct Tape {
    vals: Vec<Tensor>,
    needs_grad: Vec<bool>,
    grads: Vec<Option<Tensor>>,
    ops: Vec<OpRecord>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, t: Tensor, needs_grad: bool) -> Var {
        self.vals.push(t);
        self.needs_grad.push(needs_grad);
        self.grads.push(None);
        Var(self.vals.len() - 1)
    }

    /// Leaf holding a constant; no gradient is produced for it.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, false)
    }

    /// Leaf holding a parameter value; its gradient is available after
    /// [`Tape::backward`].
    pub fn param(&mut self, p: &Param) -> Var {
        self.push(p.value.clone(), true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.vals[v.0]
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads[v.0].as_ref()
    }

    fn record_unary(&mut self, x: Var, y: Tensor, make: impl Fn(usize, usize) -> OpRecord) -> Var {
        let needs = self.needs_grad[x.0];
        let out = self.push(y, needs);
        self.ops.push(make(x.0, out.0));
        out
    }

    pub fn conv2d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var, TensorError> {
        let geom = conv_geom(self.vals[x.0].shape(), self.vals[k.0].shape(), stride, pad)?;
        let y = kernels::dispatch_forward(&self.vals[x.0], &self.vals[k.0], &geom);
        let needs = self.needs_grad[x.0] || self.needs_grad[k.0];
        let out = self.push(y, needs);
        self.ops.push(OpRecord::Conv2d {
            x: x.0,
            k: k.0,
            out: out.0,
            geom,
        });
        Ok(out)
    }

    pub fn conv2d_transpose(
        &mut self,
        x: Var,
        k: Var,
        stride: usize,
        pad: usize,
        output_padding: usize,
    ) -> Result<Var, TensorError> {
        let geom = convt_geom(
            self.vals[x.0].shape(),
            self.vals[k.0].shape(),
            stride,
            pad,
            output_padding,
        )?;
        let y = kernels::dispatch_input_grad(&self.vals[x.0], &self.vals[k.0], &geom);
        let needs = self.needs_grad[x.0] || self.needs_grad[k.0];
        let out = self.push(y, needs);
        self.ops.push(OpRecord::ConvT2d {
            x: x.0,
            k: k.0,
            out: out.0,
            geom,
        });
        Ok(out)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in y.data.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        self.record_unary(x, y, |x, out| OpRecord::Relu { x, out })
    }

    /// Leaky rectifier: x for x > 0, slope·x otherwise. The nonzero
    /// negative slope keeps small no-bias trunks from dying wholesale.
    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in y.data.iter_mut() {
            if *v < 0.0 {
                *v *= slope;
            }
        }
        self.record_unary(x, y, |x, out| OpRecord::LeakyRelu { x, out, slope })
    }

    /// Adds a per-channel bias `[C]` to a `[C,H,W]` activation.
    pub fn add_channel_bias(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let xs = self.vals[x.0].shape().to_vec();
        let bs = self.vals[b.0].shape().to_vec();
        if xs.len() != 3 || bs != [xs[0]] {
            return Err(TensorError::ShapeMismatch {
                expected: format!("bias [{}] for activation {}", xs.first().unwrap_or(&0), shape_str(&xs)),
                got: shape_str(&bs),
            });
        }
        let plane = xs[1] * xs[2];
        let mut y = self.vals[x.0].clone();
        for (c, chunk) in y.data.chunks_mut(plane).enumerate() {
            let bias = self.vals[b.0].data[c];
            for v in chunk {
                *v += bias;
            }
        }
        let needs = self.needs_grad[x.0] || self.needs_grad[b.0];
        let out = self.push(y, needs);
        self.ops.push(OpRecord::AddChannelBias {
            x: x.0,
            b: b.0,
            out: out.0,
        });
        Ok(out)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in y.data.iter_mut() {
            *v = 1.0 / (1.0 + (-*v).exp());
        }
        self.record_unary(x, y, |x, out| OpRecord::Sigmoid { x, out })
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in y.data.iter_mut() {
            *v = v.tanh();
        }
        self.record_unary(x, y, |x, out| OpRecord::Tanh { x, out })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let mut y = self.vals[x.0].clone();
        for v in y.data.iter_mut() {
            *v *= factor;
        }
        self.record_unary(x, y, |x, out| OpRecord::Scale { x, factor, out })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        if !self.vals[a.0].same_shape(&self.vals[b.0]) {
            return Err(TensorError::ShapeMismatch {
                expected: shape_str(self.vals[a.0].shape()),
                got: shape_str(self.vals[b.0].shape()),
            });
        }
        let mut y = self.vals[a.0].clone();
        y.add_assign(&self.vals[b.0]);
        let needs = self.needs_grad[a.0] || self.needs_grad[b.0];
        let out = self.push(y, needs);
        self.ops.push(OpRecord::Add {
            a: a.0,
            b: b.0,
            out: out.0,
        });
        Ok(out)
    }

    /// Mean of squared residuals over all elements.
    pub fn mse_loss(&mut self, pred: Var, target: &Tensor) -> Result<Var, TensorError> {
        self.masked_mse_loss(pred, target, None)
    }

    /// Masked MSE: sum(mask·(pred−target)²) / sum(mask). A zero mask yields
    /// loss 0; `None` means all-ones (plain MSE).
    pub fn masked_mse_loss(
        &mut self,
        pred: Var,
        target: &Tensor,
        mask: Option<&Tensor>,
    ) -> Result<Var, TensorError> {
        let p = &self.vals[pred.0];
        if !p.same_shape(target) {
            return Err(TensorError::ShapeMismatch {
                expected: shape_str(p.shape()),
                got: shape_str(target.shape()),
            });
        }
        if let Some(m) = mask {
            if !p.same_shape(m) {
                return Err(TensorError::ShapeMismatch {
                    expected: shape_str(p.shape()),
                    got: shape_str(m.shape()),
                });
            }
        }
        let denom = match mask {
            Some(m) => m.data.iter().sum::<f64>(),
            None => p.len() as f64,
        };
        let loss = if denom == 0.0 {
            0.0
        } else {
            let mut acc = 0.0;
            for idx in 0..p.len() {
                let m = mask.map_or(1.0, |m| m.data[idx]);
                let r = p.data[idx] - target.data[idx];
                acc += m * r * r;
            }
            acc / denom
        };
        let needs = self.needs_grad[pred.0];
        let pred_slot = pred.0;
        let target_slot = self.constant(target.clone()).0;
        let mask_slot = mask.map(|m| self.constant(m.clone()).0);
        let out = self.push(Tensor::scalar(loss), needs);
        self.ops.push(OpRecord::MaskedMse {
            pred: pred_slot,
            target: target_slot,
            mask: mask_slot,
            out: out.0,
        });
        Ok(out)
    }

    fn accumulate(&mut self, slot: usize, delta: Tensor) {
        if !self.needs_grad[slot] {
            return;
        }
        match &mut self.grads[slot] {
            Some(g) => g.add_assign(&delta),
            none => *none = Some(delta),
        }
    }

    /// Reverse pass from a scalar loss. Gradients land on every grad-tracked
    /// slot that transitively feeds the loss.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        let loss_val = self.vals[loss.0].item()?;
        if !loss_val.is_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }
        self.grads[loss.0] = Some(Tensor::scalar(1.0));
        for idx in (0..self.ops.len()).rev() {
            let op = self.ops[idx];
            let gout = match &self.grads[op.out_slot()] {
                Some(g) => g.clone(),
                None => continue,
            };
            match op {
                OpRecord::Conv2d { x, k, geom, .. } => {
                    if self.needs_grad[x] {
                        let gx = kernels::dispatch_input_grad(&gout, &self.vals[k], &geom);
                        self.accumulate(x, gx);
                    }
                    if self.needs_grad[k] {
                        let gk = kernels::dispatch_kernel_grad(&gout, &self.vals[x], &geom);
                        self.accumulate(k, gk);
                    }
                }
                OpRecord::ConvT2d { x, k, geom, .. } => {
                    if self.needs_grad[x] {
                        let gx = kernels::dispatch_forward(&gout, &self.vals[k], &geom);
                        self.accumulate(x, gx);
                    }
                    if self.needs_grad[k] {
                        // roles swap: the tape input acts as the paired conv's output
                        let gk = kernels::dispatch_kernel_grad(&self.vals[x], &gout, &geom);
                        self.accumulate(k, gk);
                    }
                }
                OpRecord::Relu { x, .. } => {
                    if self.needs_grad[x] {
                        let mut gx = gout;
                        for (g, v) in gx.data.iter_mut().zip(self.vals[x].data.iter()) {
                            if *v <= 0.0 {
                                *g = 0.0;
                            }
                        }
                        self.accumulate(x, gx);
                    }
                }
                OpRecord::LeakyRelu { x, slope, .. } => {
                    if self.needs_grad[x] {
                        let mut gx = gout;
                        for (g, v) in gx.data.iter_mut().zip(self.vals[x].data.iter()) {
                            if *v <= 0.0 {
                                *g *= slope;
                            }
                        }
                        self.accumulate(x, gx);
                    }
                }
                OpRecord::AddChannelBias { x, b, .. } => {
                    if self.needs_grad[x] {
                        self.accumulate(x, gout.clone());
                    }
                    if self.needs_grad[b] {
                        let channels = self.vals[b].len();
                        let plane = gout.len() / channels;
                        let mut gb = Tensor::zeros(&[channels]);
                        for (c, chunk) in gout.data.chunks(plane).enumerate() {
                            gb.data[c] = chunk.iter().sum();
                        }
                        self.accumulate(b, gb);
                    }
                }
                OpRecord::Sigmoid { x, out } => {
                    if self.needs_grad[x] {
                        let mut gx = gout;
                        for (g, y) in gx.data.iter_mut().zip(self.vals[out].data.iter()) {
                            *g *= y * (1.0 - y);
                        }
                        self.accumulate(x, gx);
                    }
                }
                OpRecord::Tanh { x, out } => {
                    if self.needs_grad[x] {
                        let mut gx = gout;
                        for (g, y) in gx.data.iter_mut().zip(self.vals[out].data.iter()) {
                            *g *= 1.0 - y * y;
                        }
                        self.accumulate(x, gx);
                    }
                }
                OpRecord::Add { a, b, .. } => {
                    if self.needs_grad[a] {
                        self.accumulate(a, gout.clone());
                    }
                    if self.needs_grad[b] {
                        self.accumulate(b, gout);
                    }
                }
                OpRecord::Scale { x, factor, .. } => {
                    if self.needs_grad[x] {
                        let mut gx = gout;
                        for g in gx.data.iter_mut() {
                            *g *= factor;
                        }
                        self.accumulate(x, gx);
                    }
                }
                OpRecord::MaskedMse {
                    pred, target, mask, ..
                } => {
                    if self.needs_grad[pred] {
                        let gscalar = gout.data[0];
                        let denom = match mask {
                            Some(m) => self.vals[m].data.iter().sum::<f64>(),
                            None => self.vals[target].len() as f64,
                        };
                        let mut gx = Tensor::zeros(self.vals[pred].shape());
                        if denom != 0.0 {
                            for idx in 0..gx.len() {
                                let m = mask.map_or(1.0, |m| self.vals[m].data[idx]);
                                gx.data[idx] = gscalar
                                    * 2.0
                                    * m
                                    * (self.vals[pred].data[idx] - self.vals[target].data[idx])
                                    / denom;
                            }
                        }
                        self.accumulate(pred, gx);
                    }
                }
            }
        }
        Ok(())
    }
}

// ── Gradient checking ───────────────────────────────────────────────────────

/// Compares tape gradients against central differences, coordinate by
/// coordinate, over every parameter. Returns the max relative error
/// |analytic − numeric| / max(1, |numeric|).
///
/// The builder closure must construct the loss from the supplied params on
/// the given tape and return the loss var plus one var per param, in order.
pub fn finite_diff_check<F>(
    params: &mut [Param],
    epsilon: f64,
    mut build: F,
) -> Result<f64, TensorError>
where
    F: FnMut(&mut Tape, &[Param]) -> Result<(Var, Vec<Var>), TensorError>,
{
    if !(epsilon > 0.0 && epsilon <= 1e-3) {
        return Err(TensorError::Domain(format!(
            "epsilon must be in (0, 1e-3], got {epsilon}"
        )));
    }
    fn eval<F>(params: &[Param], build: &mut F) -> Result<f64, TensorError>
    where
        F: FnMut(&mut Tape, &[Param]) -> Result<(Var, Vec<Var>), TensorError>,
    {
        let mut tape = Tape::new();
        let (loss, _) = build(&mut tape, params)?;
        let v = tape.value(loss).item()?;
        if !v.is_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }
        Ok(v)
    }

    let analytic: Vec<Tensor> = {
        let mut tape = Tape::new();
        let (loss, pvars) = build(&mut tape, params)?;
        if !tape.value(loss).item()?.is_finite() {
            return Err(TensorError::NonFinite("loss".into()));
        }
        tape.backward(loss)?;
        pvars
            .iter()
            .zip(params.iter())
            .map(|(v, p)| {
                tape.grad(*v)
                    .cloned()
                    .unwrap_or_else(|| Tensor::zeros(p.value.shape()))
            })
            .collect()
    };

    let mut max_rel = 0.0f64;
    for pi in 0..params.len() {
        for ci in 0..params[pi].value.len() {
            let orig = params[pi].value.data[ci];
            params[pi].value.data[ci] = orig + epsilon;
            let plus = eval(params, &mut build)?;
            params[pi].value.data[ci] = orig - epsilon;
            let minus = eval(params, &mut build)?;
            params[pi].value.data[ci] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let rel = (analytic[pi].data[ci] - numeric).abs() / numeric.abs().max(1.0);
            if rel > max_rel {
                max_rel = rel;
            }
        }
    }
    Ok(max_rel)
}

// ── Checkpoint I/O ──────────────────────────────────────────────────────────

const CHECKPOINT_MAGIC: &[u8; 4] = b"GLT1";

/// Writes params as: magic "GLT1", then per param — u32 LE name length,
/// UTF-8 name bytes, u32 LE rank, u32 LE dims, raw f64 LE values.
pub fn save_checkpoint(path: &Path, params: &[Param]) -> Result<(), TensorError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    f.write_all(CHECKPOINT_MAGIC)?;
    for p in params {
        let name = p.name.as_bytes();
        f.write_all(&(name.len() as u32).to_le_bytes())?;
        f.write_all(name)?;
        f.write_all(&(p.value.shape().len() as u32).to_le_bytes())?;
        for d in p.value.shape() {
            f.write_all(&(*d as u32).to_le_bytes())?;
        }
        for v in p.value.data() {
            f.write_all(&v.to_le_bytes())?;
        }
    }
    f.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<Param>, TensorError> {
    let mut f = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    f.read_exact(&mut magic)?;
    if &magic != CHECKPOINT_MAGIC {
        return Err(TensorError::BadCheckpoint(format!(
            "bad magic {magic:?}, expected {CHECKPOINT_MAGIC:?}"
        )));
    }
    let mut params = Vec::new();
    loop {
        let mut lenbuf = [0u8; 4];
        match f.read_exact(&mut lenbuf) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => break,
            Err(e) => return Err(e.into()),
        }
        let name_len = u32::from_le_bytes(lenbuf) as usize;
        if name_len > 4096 {
            return Err(TensorError::BadCheckpoint(format!(
                "implausible name length {name_len}"
            )));
        }
        let mut name = vec![0u8; name_len];
        f.read_exact(&mut name)?;
        let name = String::from_utf8(name)
            .map_err(|_| TensorError::BadCheckpoint("param name is not UTF-8".into()))?;
        f.read_exact(&mut lenbuf)?;
        let rank = u32::from_le_bytes(lenbuf) as usize;
        if rank > 8 {
            return Err(TensorError::BadCheckpoint(format!("implausible rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            f.read_exact(&mut lenbuf)?;
            shape.push(u32::from_le_bytes(lenbuf) as usize);
        }
        let count: usize = shape.iter().product();
        let mut data = Vec::with_capacity(count);
        let mut vbuf = [0u8; 8];
        for _ in 0..count {
            f.read_exact(&mut vbuf)?;
            data.push(f64::from_le_bytes(vbuf));
        }
        params.push(Param::new(name, Tensor::from_vec(&shape, data)?));
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut impl Rng) -> Tensor {
        let len: usize = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn conv_hand_case_ones() {
        // 3x3 ones input, 3x3 ones kernel, stride 1, pad 1:
        // center sees all 9, corners see 4, edges 6
        let x = Tensor::filled(&[1, 3, 3], 1.0);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 3, 3]);
        assert_eq!(y.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_identity_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_tensor(&[1, 5, 7], &mut rng);
        let k = Tensor::from_vec(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_zero_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = random_tensor(&[2, 4, 4], &mut rng);
        let k = Tensor::zeros(&[3, 2, 3, 3]);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_shape_errors_name_both_shapes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[3, 5, 3, 3]);
        let err = conv2d(&x, &k, 1, 1).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2x4x4]") && msg.contains("[3x5x3x3]"), "got: {msg}");
    }

    #[test]
    fn conv_narrow_input_wide_padding() {
        // width 1 with pad 1 exercises kernel columns that never overlap
        let x = Tensor::filled(&[1, 4, 1], 2.0);
        let k = Tensor::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[1, 4, 1]);
        // interior rows see 3 input cells through the center kernel column
        assert_eq!(y.data()[1], 6.0);
        assert_eq!(y.data()[0], 4.0);
    }

    #[test]
    fn conv_transpose_adjoint_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(ci, h, w, co, k, s, p) in &[
            (1usize, 6usize, 6usize, 2usize, 3usize, 1usize, 1usize),
            (2, 7, 5, 3, 3, 2, 1),
            (3, 9, 9, 2, 5, 2, 2),
            (1, 5, 5, 1, 3, 3, 0),
        ] {
            let x = random_tensor(&[ci, h, w], &mut rng);
            let kern = random_tensor(&[co, ci, k, k], &mut rng);
            let y = conv2d(&x, &kern, s, p).unwrap();
            let yr = random_tensor(y.shape(), &mut rng);
            let (ho, wo) = (y.shape()[1], y.shape()[2]);
            let op_h = h + 2 * p - ((ho - 1) * s + k);
            let op_w = w + 2 * p - ((wo - 1) * s + k);
            assert_eq!(op_h, op_w, "test geometries are symmetric");
            let xt = conv2d_transpose(&yr, &kern, s, p, op_h).unwrap();
            assert_eq!(xt.shape(), x.shape());
            let lhs: f64 = y.data().iter().zip(yr.data()).map(|(a, b)| a * b).sum();
            let rhs: f64 = x.data().iter().zip(xt.data()).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-9 * lhs.abs().max(1.0),
                "adjoint identity violated: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn conv_transpose_impulse_paints_kernel() {
        // the adjoint of cross-correlation scatters the kernel, unflipped,
        // around the impulse position
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let k = random_tensor(&[1, 1, 3, 3], &mut rng);
        let mut delta = Tensor::zeros(&[1, 3, 3]);
        delta.data_mut()[4] = 1.0; // center
        let out = conv2d_transpose(&delta, &k, 1, 0, 0).unwrap();
        assert_eq!(out.shape(), &[1, 5, 5]);
        for i in 0..3 {
            for j in 0..3 {
                let got = out.data()[(i + 1) * 5 + (j + 1)];
                let expect = k.data()[i * 3 + j];
                assert!((got - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn conv_transpose_zero_input() {
        let k = Tensor::filled(&[2, 3, 3, 3], 0.5);
        let x = Tensor::zeros(&[2, 4, 4]);
        let y = conv2d_transpose(&x, &k, 2, 1, 1).unwrap();
        assert_eq!(y.shape(), &[3, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn elementwise_ops() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::from_vec(&[3], vec![-1.0, 0.0, 2.0]).unwrap());
        let r = tape.relu(x);
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        let s = tape.sigmoid(x);
        assert!((tape.value(s).data()[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn mse_identity_is_zero() {
        let mut tape = Tape::new();
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let x = tape.constant(t.clone());
        let l = tape.mse_loss(x, &t).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn sgd_scalar_case() {
        let mut p = Param::new("p", Tensor::scalar(1.0));
        p.grad = Tensor::scalar(0.5);
        sgd_step(std::slice::from_mut(&mut p), 0.1).unwrap();
        assert!((p.value.item().unwrap() - 0.95).abs() < 1e-15);
        assert_eq!(p.grad.item().unwrap(), 0.0);
    }

    #[test]
    fn sgd_rejects_negative_lr() {
        let mut p = Param::new("p", Tensor::scalar(1.0));
        assert!(sgd_step(std::slice::from_mut(&mut p), -0.1).is_err());
    }

    #[test]
    fn finite_diff_quadratic() {
        // f(p) = p² on a scalar: analytic 2p = 6 at p = 3, exact under
        // central differences
        let mut params = vec![Param::new("p", Tensor::scalar(3.0))];
        let err = finite_diff_check(&mut params, 1e-5, |tape, ps| {
            let v = tape.param(&ps[0]);
            let sq = tape.mse_loss(v, &Tensor::scalar(0.0))?;
            Ok((sq, vec![v]))
        })
        .unwrap();
        assert!(err < 1e-9, "quadratic check error {err}");
    }

    #[test]
    fn finite_diff_constant_function() {
        let mut params = vec![Param::new("p", Tensor::scalar(2.0))];
        let err = finite_diff_check(&mut params, 1e-5, |tape, ps| {
            let v = tape.param(&ps[0]);
            let c = tape.constant(Tensor::scalar(7.0));
            let l = tape.mse_loss(c, &Tensor::scalar(7.0))?;
            let _ = v;
            Ok((l, vec![v]))
        })
        .unwrap();
        assert_eq!(err, 0.0);
    }

    #[test]
    fn finite_diff_two_layer_conv_net() {
        for seed in 0..5u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
            let x = random_tensor(&[1, 8, 8], &mut rng);
            let target = random_tensor(&[2, 4, 4], &mut rng);
            let mut params = vec![
                Param::new("k1", he_uniform(&[3, 1, 3, 3], 9, &mut rng)),
                Param::new("k2", he_uniform(&[2, 3, 3, 3], 27, &mut rng)),
            ];
            let err = finite_diff_check(&mut params, 1e-5, |tape, ps| {
                let xin = tape.constant(x.clone());
                let k1 = tape.param(&ps[0]);
                let k2 = tape.param(&ps[1]);
                let h1 = tape.conv2d(xin, k1, 1, 1)?;
                let h1 = tape.relu(h1);
                let h2 = tape.conv2d(h1, k2, 2, 1)?;
                let h2 = tape.sigmoid(h2);
                let l = tape.mse_loss(h2, &target)?;
                Ok((l, vec![k1, k2]))
            })
            .unwrap();
            assert!(err < 1e-4, "seed {seed}: gradient error {err}");
        }
    }

    #[test]
    fn finite_diff_conv_transpose_net() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = random_tensor(&[2, 4, 4], &mut rng);
        let target = random_tensor(&[1, 8, 8], &mut rng);
        let mut params = vec![Param::new("kt", he_uniform(&[2, 1, 3, 3], 18, &mut rng))];
        let err = finite_diff_check(&mut params, 1e-5, |tape, ps| {
            let xin = tape.constant(x.clone());
            let kt = tape.param(&ps[0]);
            let h = tape.conv2d_transpose(xin, kt, 2, 1, 1)?;
            let h = tape.tanh(h);
            let l = tape.mse_loss(h, &target)?;
            Ok((l, vec![kt]))
        })
        .unwrap();
        assert!(err < 1e-4, "transpose gradient error {err}");
    }

    #[test]
    fn finite_diff_rejects_bad_epsilon() {
        let mut params = vec![Param::new("p", Tensor::scalar(1.0))];
        let r = finite_diff_check(&mut params, 1e-2, |tape, ps| {
            let v = tape.param(&ps[0]);
            let l = tape.mse_loss(v, &Tensor::scalar(0.0))?;
            Ok((l, vec![v]))
        });
        assert!(r.is_err());
    }

    #[test]
    fn masked_mse_ignores_unmasked_residuals() {
        let mut tape = Tape::new();
        let p = tape.constant(Tensor::from_vec(&[4], vec![1.0, 9.0, 3.0, 9.0]).unwrap());
        let t = Tensor::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = Tensor::from_vec(&[4], vec![1.0, 0.0, 1.0, 0.0]).unwrap();
        let l = tape.masked_mse_loss(p, &t, Some(&m)).unwrap();
        assert_eq!(tape.value(l).item().unwrap(), 0.0);
    }

    #[test]
    fn tape_determinism() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = random_tensor(&[2, 6, 6], &mut rng);
        let k = random_tensor(&[3, 2, 3, 3], &mut rng);
        let run = || {
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let kv = tape.constant(k.clone());
            let y = tape.conv2d(xv, kv, 2, 1).unwrap();
            tape.value(y).data().to_vec()
        };
        assert_eq!(run(), run());
    }

    #[cfg(feature = "parallel")]
    #[test]
    fn parallel_matches_sequential_bitwise() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for _ in 0..10 {
            let ci = rng.gen_range(1..4);
            let co = rng.gen_range(1..5);
            let h = rng.gen_range(5..14);
            let w = rng.gen_range(5..14);
            let x = random_tensor(&[ci, h, w], &mut rng);
            let k = random_tensor(&[co, ci, 3, 3], &mut rng);
            let a = kernels::conv2d_seq(&x, &k, 2, 1).unwrap();
            let b = kernels::conv2d_par(&x, &k, 2, 1).unwrap();
            assert_eq!(a.data(), b.data());
            let u = random_tensor(&[co, 4, 4], &mut rng);
            let ta = kernels::conv2d_transpose_seq(&u, &k, 2, 1, 1).unwrap();
            let tb = kernels::conv2d_transpose_par(&u, &k, 2, 1, 1).unwrap();
            assert_eq!(ta.data(), tb.data());
        }
    }

    #[test]
    fn checkpoint_roundtrip_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let params = vec![
            Param::new("enc.0", random_tensor(&[3, 1, 3, 3], &mut rng)),
            Param::new("head.quality", random_tensor(&[1, 3, 1, 1], &mut rng)),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.glt");
        save_checkpoint(&path, &params).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(loaded.len(), params.len());
        for (a, b) in params.iter().zip(loaded.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.shape(), b.value.shape());
            let bits_a: Vec<u64> = a.value.data().iter().map(|v| v.to_bits()).collect();
            let bits_b: Vec<u64> = b.value.data().iter().map(|v| v.to_bits()).collect();
            assert_eq!(bits_a, bits_b);
        }
    }

    #[test]
    fn checkpoint_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.glt");
        std::fs::write(&path, b"NOPE____").unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(TensorError::BadCheckpoint(_))
        ));
    }
}
