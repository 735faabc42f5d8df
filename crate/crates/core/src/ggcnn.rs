//! Generative grasp network: depth crop in, dense per-pixel grasp maps out.
//!
//! The network is fully convolutional: a strided encoder, a transposed-conv
//! decoder restoring the input resolution exactly, and four 1×1 heads
//! emitting grasp quality, the (cos 2θ, sin 2θ) angle encoding and the
//! normalized gripper width for every pixel. Angle is regressed doubled so
//! the π-periodic wrap at ±π/2 stays continuous.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::geom::{GeomError, GraspRect};
use crate::tensor::{he_uniform, sgd_step, Param, Tape, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum GgcnnError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Geom(#[from] GeomError),
    #[error("bad config: {0}")]
    BadConfig(String),
    #[error("training aborted: non-finite loss at epoch {epoch}, sample {sample}")]
    NonFiniteLoss { epoch: usize, sample: usize },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint does not match config: {0}")]
    CheckpointMismatch(String),
}

/// Per-pixel grasp maps. `quality` ∈ [0,1], `cos2t`/`sin2t` ∈ [-1,1],
/// `width` in pixels ∈ [0, width_max]. All planes are rows×cols row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GraspMaps {
    pub rows: usize,
    pub cols: usize,
    pub quality: Vec<f64>,
    pub cos2t: Vec<f64>,
    pub sin2t: Vec<f64>,
    pub width: Vec<f64>,
}

impl GraspMaps {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        let n = rows * cols;
        Self {
            rows,
            cols,
            quality: vec![0.0; n],
            cos2t: vec![0.0; n],
            sin2t: vec![0.0; n],
            width: vec![0.0; n],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GgcnnConfig {
    /// Output channels of each stride-`stride` encoder layer.
    pub encoder_channels: Vec<usize>,
    pub kernel_size: usize,
    pub stride: usize,
    /// Decoded widths are clamped to this many pixels; the width head
    /// regresses width/width_max.
    pub width_max: f64,
    /// Default quality-smoothing sigma for decoding, in pixels.
    pub smoothing_sigma: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for GgcnnConfig {
    fn default() -> Self {
        Self {
            encoder_channels: vec![8, 16, 32],
            kernel_size: 5,
            stride: 2,
            width_max: 50.0,
            smoothing_sigma: 2.0,
            learning_rate: 0.1,
            epochs: 30,
            seed: 0,
        }
    }
}

impl GgcnnConfig {
    pub fn total_stride(&self) -> usize {
        self.stride.pow(self.encoder_channels.len() as u32)
    }

    fn validate(&self) -> Result<(), GgcnnError> {
        if self.encoder_channels.is_empty() || self.encoder_channels.contains(&0) {
            return Err(GgcnnError::BadConfig("encoder_channels must be nonempty and positive".into()));
        }
        if self.kernel_size % 2 == 0 || self.kernel_size < 1 {
            return Err(GgcnnError::BadConfig("kernel_size must be odd".into()));
        }
        if self.stride < 2 {
            return Err(GgcnnError::BadConfig("stride must be >= 2".into()));
        }
        if !(self.width_max > 0.0) {
            return Err(GgcnnError::BadConfig("width_max must be positive".into()));
        }
        if self.smoothing_sigma < 0.0 {
            return Err(GgcnnError::BadConfig("smoothing_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Serializes to the plain-text key=value sidecar format.
    pub fn to_key_values(&self) -> String {
        let chans: Vec<String> = self.encoder_channels.iter().map(|c| c.to_string()).collect();
        format!(
            "encoder_channels={}\nkernel_size={}\nstride={}\nwidth_max={}\nsmoothing_sigma={}\nlearning_rate={}\nepochs={}\nseed={}\n",
            chans.join(","),
            self.kernel_size,
            self.stride,
            self.width_max,
            self.smoothing_sigma,
            self.learning_rate,
            self.epochs,
            self.seed
        )
    }

    /// Parses the sidecar format; absent keys keep their defaults, unknown
    /// keys are rejected.
    pub fn from_key_values(text: &str) -> Result<Self, GgcnnError> {
        let mut cfg = Self::default();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| GgcnnError::BadConfig(format!("line {}: expected key=value", lineno + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            let bad = |what: &str| GgcnnError::BadConfig(format!("line {}: bad {what}: {value}", lineno + 1));
            match key {
                "encoder_channels" => {
                    cfg.encoder_channels = value
                        .split(',')
                        .map(|t| t.trim().parse::<usize>())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("channel list"))?;
                }
                "kernel_size" => cfg.kernel_size = value.parse().map_err(|_| bad("kernel_size"))?,
                "stride" => cfg.stride = value.parse().map_err(|_| bad("stride"))?,
                "width_max" => cfg.width_max = value.parse().map_err(|_| bad("width_max"))?,
                "smoothing_sigma" => cfg.smoothing_sigma = value.parse().map_err(|_| bad("smoothing_sigma"))?,
                "learning_rate" => cfg.learning_rate = value.parse().map_err(|_| bad("learning_rate"))?,
                "epochs" => cfg.epochs = value.parse().map_err(|_| bad("epochs"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("seed"))?,
                other => {
                    return Err(GgcnnError::BadConfig(format!(
                        "line {}: unknown key {other}",
                        lineno + 1
                    )))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Normalizes a raw depth plane for network input: subtract the per-image
/// median, clamp to ±0.15 scene units, scale to [-1, 1].
pub fn normalize_depth(depth: &Tensor) -> Result<Tensor, TensorError> {
    depth.check_all_finite("depth image")?;
    let mut sorted: Vec<f64> = depth.data().to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let median = if sorted.is_empty() {
        0.0
    } else {
        sorted[sorted.len() / 2]
    };
    let mut out = depth.clone();
    for v in out.data_mut() {
        *v = (*v - median).clamp(-0.15, 0.15) / 0.15;
    }
    Ok(out)
}

const HEAD_NAMES: [&str; 4] = ["quality", "cos2t", "sin2t", "width"];

/// Negative slope of the trunk's leaky rectifier.
const TRUNK_LEAK: f64 = 0.1;

/// The trained (or in-training) grasp network.
#[derive(Debug, Clone)]
pub struct GgcnnModel {
    cfg: GgcnnConfig,
    params: Vec<Param>,
}

struct HeadVars {
    quality: Var,
    cos2t: Var,
    sin2t: Var,
    width: Var,
}

impl GgcnnModel {
    /// Fresh model with seeded He-uniform kernels and zero biases.
    pub fn new(cfg: GgcnnConfig) -> Result<Self, GgcnnError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let k = cfg.kernel_size;
        let mut params = Vec::new();
        let mut c_in = 1;
        for (i, &c_out) in cfg.encoder_channels.iter().enumerate() {
            params.push(Param::new(
                format!("ggcnn.enc{i}.kernel"),
                he_uniform(&[c_out, c_in, k, k], c_in * k * k, &mut rng),
            ));
            params.push(Param::new(format!("ggcnn.enc{i}.bias"), Tensor::zeros(&[c_out])));
            c_in = c_out;
        }
        for (i, c_out) in Self::decoder_out_channels(&cfg).into_iter().enumerate() {
            // transposed-conv kernel layout: [src_channels, dst_channels, k, k]
            params.push(Param::new(
                format!("ggcnn.dec{i}.kernel"),
                he_uniform(&[c_in, c_out, k, k], c_in * k * k, &mut rng),
            ));
            params.push(Param::new(format!("ggcnn.dec{i}.bias"), Tensor::zeros(&[c_out])));
            c_in = c_out;
        }
        for name in HEAD_NAMES {
            params.push(Param::new(
                format!("ggcnn.head.{name}.kernel"),
                he_uniform(&[1, c_in, 1, 1], c_in, &mut rng),
            ));
            params.push(Param::new(format!("ggcnn.head.{name}.bias"), Tensor::zeros(&[1])));
        }
        Ok(Self { cfg, params })
    }

    fn decoder_out_channels(cfg: &GgcnnConfig) -> Vec<usize> {
        let enc = &cfg.encoder_channels;
        let n = enc.len();
        (0..n)
            .map(|i| if i + 1 < n { enc[n - 2 - i] } else { enc[0] })
            .collect()
    }

    pub fn config(&self) -> &GgcnnConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    /// Rebuilds a model from checkpointed params, verifying names/shapes
    /// against the config-derived plan.
    pub fn from_params(cfg: GgcnnConfig, params: Vec<Param>) -> Result<Self, GgcnnError> {
        let fresh = Self::new(cfg)?;
        if params.len() != fresh.params.len() {
            return Err(GgcnnError::CheckpointMismatch(format!(
                "expected {} params, got {}",
                fresh.params.len(),
                params.len()
            )));
        }
        for (expect, got) in fresh.params.iter().zip(params.iter()) {
            if expect.name != got.name || expect.value.shape() != got.value.shape() {
                return Err(GgcnnError::CheckpointMismatch(format!(
                    "param {} {:?} vs checkpoint {} {:?}",
                    expect.name,
                    expect.value.shape(),
                    got.name,
                    got.value.shape()
                )));
            }
        }
        Ok(Self {
            cfg: fresh.cfg,
            params,
        })
    }

    fn check_input(&self, depth: &Tensor) -> Result<(usize, usize), GgcnnError> {
        let shape = depth.shape();
        if shape.len() != 3 || shape[0] != 1 {
            return Err(GgcnnError::Tensor(TensorError::ShapeMismatch {
                expected: "[1 x H x W]".into(),
                got: format!("{shape:?}"),
            }));
        }
        let (h, w) = (shape[1], shape[2]);
        let ts = self.cfg.total_stride();
        if h % ts != 0 || w % ts != 0 || h == 0 || w == 0 {
            return Err(GgcnnError::BadConfig(format!(
                "input {h}x{w} must be a positive multiple of the total encoder stride {ts}"
            )));
        }
        depth.check_all_finite("depth input")?;
        Ok((h, w))
    }

    /// Runs encoder + decoder + heads on a tape. `param_vars` must follow
    /// the model's param order (kernel, bias per layer).
    fn heads_on_tape(
        &self,
        tape: &mut Tape,
        input: Var,
        param_vars: &[Var],
    ) -> Result<(HeadVars, Var), GgcnnError> {
        let n_enc = self.cfg.encoder_channels.len();
        let k = self.cfg.kernel_size;
        let s = self.cfg.stride;
        let pad = k / 2;

        let mut sizes = vec![tape.value(input).shape()[1]];
        let mut sizes_w = vec![tape.value(input).shape()[2]];
        let mut cur = input;
        for i in 0..n_enc {
            cur = tape.conv2d(cur, param_vars[2 * i], s, pad)?;
            cur = tape.add_channel_bias(cur, param_vars[2 * i + 1])?;
            cur = tape.leaky_relu(cur, TRUNK_LEAK);
            sizes.push(tape.value(cur).shape()[1]);
            sizes_w.push(tape.value(cur).shape()[2]);
        }
        let deepest = cur;
        for i in 0..n_enc {
            let target_h = sizes[n_enc - 1 - i];
            let target_w = sizes_w[n_enc - 1 - i];
            let (cur_h, cur_w) = {
                let sh = tape.value(cur).shape();
                (sh[1], sh[2])
            };
            let natural_h = (cur_h - 1) * s + k;
            let natural_w = (cur_w - 1) * s + k;
            let op_h = (target_h + 2 * pad).checked_sub(natural_h);
            let op_w = (target_w + 2 * pad).checked_sub(natural_w);
            let (op_h, op_w) = match (op_h, op_w) {
                (Some(a), Some(b)) if a == b && a < s => (a, b),
                _ => {
                    return Err(GgcnnError::BadConfig(format!(
                        "decoder layer {i} cannot restore {target_h}x{target_w} from {cur_h}x{cur_w}"
                    )))
                }
            };
            debug_assert_eq!(op_h, op_w);
            let base = 2 * n_enc + 2 * i;
            cur = tape.conv2d_transpose(cur, param_vars[base], s, pad, op_h)?;
            cur = tape.add_channel_bias(cur, param_vars[base + 1])?;
            cur = tape.leaky_relu(cur, TRUNK_LEAK);
        }
        let trunk = cur;
        let mut head = |tape: &mut Tape, idx: usize| -> Result<Var, GgcnnError> {
            let base = 4 * n_enc + 2 * idx;
            let raw = tape.conv2d(trunk, param_vars[base], 1, 0)?;
            Ok(tape.add_channel_bias(raw, param_vars[base + 1])?)
        };
        let q_raw = head(tape, 0)?;
        let c_raw = head(tape, 1)?;
        let s_raw = head(tape, 2)?;
        let w_raw = head(tape, 3)?;
        Ok((
            HeadVars {
                quality: tape.sigmoid(q_raw),
                cos2t: tape.tanh(c_raw),
                sin2t: tape.tanh(s_raw),
                width: tape.sigmoid(w_raw),
            },
            deepest,
        ))
    }

    /// Single-pass dense grasp-map inference on a normalized depth crop.
    pub fn forward(&self, depth: &Tensor) -> Result<GraspMaps, GgcnnError> {
        Ok(self.forward_with_features(depth)?.0)
    }

    /// Like [`GgcnnModel::forward`] but also returns the deepest encoder
    /// activation (the concept layer taps it).
    pub fn forward_with_features(&self, depth: &Tensor) -> Result<(GraspMaps, Tensor), GgcnnError> {
        let (h, w) = self.check_input(depth)?;
        let mut tape = Tape::new();
        let input = tape.constant(depth.clone());
        let pvars: Vec<Var> = self.params.iter().map(|p| tape.constant(p.value.clone())).collect();
        let (heads, deepest) = self.heads_on_tape(&mut tape, input, &pvars)?;
        let plane = |t: &Tensor| t.data().to_vec();
        let maps = GraspMaps {
            rows: h,
            cols: w,
            quality: plane(tape.value(heads.quality)),
            cos2t: plane(tape.value(heads.cos2t)),
            sin2t: plane(tape.value(heads.sin2t)),
            width: tape
                .value(heads.width)
                .data()
                .iter()
                .map(|v| v * self.cfg.width_max)
                .collect(),
        };
        debug_assert_eq!(maps.quality.len(), h * w);
        Ok((maps, tape.value(deepest).clone()))
    }

    /// Deepest encoder activation only (cheaper than a full forward when
    /// the decoder is not needed, but identical in value).
    pub fn encoder_features(&self, depth: &Tensor) -> Result<Tensor, GgcnnError> {
        self.check_input(depth)?;
        let mut tape = Tape::new();
        let mut cur = tape.constant(depth.clone());
        let k = self.cfg.kernel_size;
        let pad = k / 2;
        for i in 0..self.cfg.encoder_channels.len() {
            let kv = tape.constant(self.params[2 * i].value.clone());
            let bv = tape.constant(self.params[2 * i + 1].value.clone());
            cur = tape.conv2d(cur, kv, self.cfg.stride, pad)?;
            cur = tape.add_channel_bias(cur, bv)?;
            cur = tape.leaky_relu(cur, TRUNK_LEAK);
        }
        Ok(tape.value(cur).clone())
    }

    /// Builds the four-head masked MSE training loss for one sample.
    /// Returns (loss var, param vars).
    fn sample_loss(
        &self,
        tape: &mut Tape,
        depth_norm: &Tensor,
        target: &GraspMaps,
    ) -> Result<(Var, Vec<Var>), GgcnnError> {
        let input = tape.constant(depth_norm.clone());
        let pvars: Vec<Var> = self.params.iter().map(|p| tape.param(p)).collect();
        let (heads, _) = self.heads_on_tape(tape, input, &pvars)?;
        let shape = [1, target.rows, target.cols];
        let q_t = Tensor::from_vec(&shape, target.quality.clone())?;
        let c_t = Tensor::from_vec(&shape, target.cos2t.clone())?;
        let s_t = Tensor::from_vec(&shape, target.sin2t.clone())?;
        let w_t = Tensor::from_vec(
            &shape,
            target
                .width
                .iter()
                .map(|w| (w / self.cfg.width_max).clamp(0.0, 1.0))
                .collect(),
        )?;
        // angle and width are supervised only where some grasp wrote quality
        let mask = Tensor::from_vec(&shape, target.quality.clone())?;
        // balance the rare positive pixels in the quality term; a plain MSE
        // lets the squashed head saturate at the all-background solution
        let n = target.quality.len() as f64;
        let n_pos: f64 = target.quality.iter().sum();
        let pos_weight = if n_pos > 0.0 {
            ((n - n_pos) / n_pos).clamp(1.0, 100.0)
        } else {
            1.0
        };
        let q_weights = Tensor::from_vec(
            &shape,
            target
                .quality
                .iter()
                .map(|&q| if q > 0.0 { pos_weight } else { 1.0 })
                .collect(),
        )?;
        let l_q = tape.masked_mse_loss(heads.quality, &q_t, Some(&q_weights))?;
        let l_c = tape.masked_mse_loss(heads.cos2t, &c_t, Some(&mask))?;
        let l_s = tape.masked_mse_loss(heads.sin2t, &s_t, Some(&mask))?;
        let l_w = tape.masked_mse_loss(heads.width, &w_t, Some(&mask))?;
        let l = tape.add(l_q, l_c)?;
        let l = tape.add(l, l_s)?;
        let loss = tape.add(l, l_w)?;
        Ok((loss, pvars))
    }

    /// One SGD pass over the dataset per epoch, samples in dataset order.
    /// Depth inputs are normalized internally. Returns per-epoch mean loss.
    pub fn train(
        &mut self,
        dataset: &[(Tensor, Vec<GraspRect>)],
        epochs: usize,
        lr: f64,
    ) -> Result<Vec<f64>, GgcnnError> {
        if dataset.is_empty() {
            return Err(GgcnnError::EmptyDataset);
        }
        let prepared: Vec<(Tensor, GraspMaps)> = dataset
            .iter()
            .map(|(depth, gts)| {
                let (h, w) = self.check_input(depth)?;
                let norm = normalize_depth(depth)?;
                let target = encode_targets(gts, h, w, self.cfg.width_max);
                Ok((norm, target))
            })
            .collect::<Result<_, GgcnnError>>()?;

        let mut history = Vec::with_capacity(epochs);
        for epoch in 0..epochs {
            let mut total = 0.0;
            for (sample, (norm, target)) in prepared.iter().enumerate() {
                let mut tape = Tape::new();
                let (loss, pvars) = self.sample_loss(&mut tape, norm, target)?;
                let loss_val = tape.value(loss).item()?;
                if !loss_val.is_finite() {
                    return Err(GgcnnError::NonFiniteLoss { epoch, sample });
                }
                total += loss_val;
                tape.backward(loss)?;
                for (p, v) in self.params.iter_mut().zip(&pvars) {
                    if let Some(g) = tape.grad(*v) {
                        for (pg, g) in p.grad.data_mut().iter_mut().zip(g.data()) {
                            *pg += g;
                        }
                    }
                }
                sgd_step(&mut self.params, lr)?;
            }
            history.push(total / prepared.len() as f64);
        }
        Ok(history)
    }
}

/// Trains a fresh model per the config (seeded init, cfg.epochs epochs at
/// cfg.learning_rate). Returns the model and its loss history.
pub fn train(
    dataset: &[(Tensor, Vec<GraspRect>)],
    cfg: &GgcnnConfig,
) -> Result<(GgcnnModel, Vec<f64>), GgcnnError> {
    let mut model = GgcnnModel::new(cfg.clone())?;
    let history = model.train(dataset, cfg.epochs, cfg.learning_rate)?;
    Ok((model, history))
}

/// Rasterizes ground-truth grasps into supervision maps.
///
/// Pixels inside the center third of each grasp rectangle (full jaw extent,
/// middle third of the opening width) get quality 1, the doubled-angle
/// encoding and the clamped width; everywhere else quality is 0 and the
/// other planes are zero (masked out of the loss). Grasps are written in
/// list order, so on overlap the later grasp wins.
pub fn encode_targets(gts: &[GraspRect], rows: usize, cols: usize, width_max: f64) -> GraspMaps {
    let mut maps = GraspMaps::zeros(rows, cols);
    for g in gts {
        let (s, c) = g.theta.sin_cos();
        let (cos2, sin2) = ((2.0 * g.theta).cos(), (2.0 * g.theta).sin());
        let w_clamped = g.w.min(width_max);
        // bounding box of the supervision region, clipped to the image
        let half_u = g.w / 6.0;
        let half_v = g.h / 2.0;
        let reach = half_u.hypot(half_v);
        let r0 = ((g.y - reach).floor().max(0.0)) as usize;
        let r1 = ((g.y + reach).ceil().min(rows as f64 - 1.0)) as usize;
        let c0 = ((g.x - reach).floor().max(0.0)) as usize;
        let c1 = ((g.x + reach).ceil().min(cols as f64 - 1.0)) as usize;
        for r in r0..=r1.min(rows.saturating_sub(1)) {
            for col in c0..=c1.min(cols.saturating_sub(1)) {
                let dx = col as f64 - g.x;
                let dy = r as f64 - g.y;
                let u = dx * c + dy * s;
                let v = -dx * s + dy * c;
                if u.abs() <= half_u && v.abs() <= half_v {
                    let idx = r * cols + col;
                    maps.quality[idx] = 1.0;
                    maps.cos2t[idx] = cos2;
                    maps.sin2t[idx] = sin2;
                    maps.width[idx] = w_clamped;
                }
            }
        }
    }
    maps
}

/// Separable Gaussian smoothing with kernel truncated at 3σ and
/// renormalized at the borders. σ = 0 returns the plane unchanged.
pub fn gaussian_smooth(plane: &[f64], rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return plane.to_vec();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let weights: Vec<f64> = (-radius..=radius)
        .map(|d| (-((d * d) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let pass = |src: &[f64], n_outer: usize, n_inner: usize, stride_outer: usize, stride_inner: usize| {
        let mut dst = vec![0.0; src.len()];
        for o in 0..n_outer {
            for i in 0..n_inner {
                let mut acc = 0.0;
                let mut norm = 0.0;
                for (wi, d) in (-radius..=radius).enumerate() {
                    let s = i as isize + d;
                    if s < 0 || s >= n_inner as isize {
                        continue;
                    }
                    let wgt = weights[wi];
                    acc += wgt * src[o * stride_outer + s as usize * stride_inner];
                    norm += wgt;
                }
                dst[o * stride_outer + i * stride_inner] = acc / norm;
            }
        }
        dst
    };
    // horizontal then vertical
    let tmp = pass(plane, rows, cols, cols, 1);
    pass(&tmp, cols, rows, 1, cols)
}

/// Decodes the k best grasps from grasp maps.
///
/// The quality plane is Gaussian-smoothed (σ in pixels; 0 disables), local
/// maxima (≥ all 8 neighbours) are ranked by smoothed score with row-major
/// tie-break, and each peak becomes a grasp: θ = ½·atan2(sin2t, cos2t),
/// w from the width plane (floored at 1 px to keep rectangles valid),
/// h = w/2, score = smoothed quality.
pub fn decode_grasps(maps: &GraspMaps, k: usize, smoothing_sigma: f64) -> Vec<(GraspRect, f64)> {
    let (rows, cols) = (maps.rows, maps.cols);
    if rows == 0 || cols == 0 || k == 0 {
        return Vec::new();
    }
    let q = gaussian_smooth(&maps.quality, rows, cols, smoothing_sigma);
    let mut peaks: Vec<(usize, usize, f64)> = Vec::new();
    for r in 0..rows {
        for c in 0..cols {
            let v = q[r * cols + c];
            let mut is_peak = true;
            'nb: for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= rows as i64 || nc >= cols as i64 {
                        continue;
                    }
                    if q[nr as usize * cols + nc as usize] > v {
                        is_peak = false;
                        break 'nb;
                    }
                }
            }
            if is_peak {
                peaks.push((r, c, v));
            }
        }
    }
    peaks.sort_by(|a, b| {
        b.2.partial_cmp(&a.2)
            .expect("quality values are finite")
            .then_with(|| (a.0, a.1).cmp(&(b.0, b.1)))
    });
    peaks
        .into_iter()
        .take(k)
        .map(|(r, c, score)| {
            let idx = r * cols + c;
            let theta = 0.5 * maps.sin2t[idx].atan2(maps.cos2t[idx]);
            let w = maps.width[idx].max(1.0);
            let rect = GraspRect::new(c as f64, r as f64, w, w / 2.0, theta)
                .expect("decoded grasp parameters are finite and positive");
            (rect, score)
        })
        .collect()
}
