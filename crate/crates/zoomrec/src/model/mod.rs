//! Attention recognizer: conv stack → prior-weighted spatial attention →
//! LSTM → per-frame letter logits, with hand-derived exact gradients.
//!
//! The three submodules split the lifecycle: [`forward`] runs the network
//! and keeps a cache, [`backward`] consumes the cache for reverse-mode
//! gradients, [`gradcheck`] compares the two against finite differences.

pub mod backward;
pub mod forward;
pub mod gradcheck;

pub use backward::backward_sequence;
pub use forward::{forward_sequence, forward_train, DropoutPlan, ForwardCache, ForwardOutput};
pub use gradcheck::{finite_diff_check, finite_diff_check_corrupted};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fsutil::atomic_write;
use crate::linalg::Mat;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ModelConfig {
    /// Frames are input_side x input_side grayscale.
    pub input_side: usize,
    /// Output channels per conv layer; length sets the stack depth.
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    /// LSTM hidden size; the attention scorer uses the same width.
    pub hidden: usize,
    /// Letters in the alphabet; logits get one extra row for blank.
    pub alphabet_len: usize,
    /// Motion-prior exponent. Zero disables the prior bitwise.
    pub alpha: f64,
    /// Channel-dropout rate after each conv layer but the last; 0 disables.
    pub dropout: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_side: 112,
            conv_channels: vec![8, 16, 32],
            kernel: 3,
            stride: 2,
            pad: 1,
            hidden: 64,
            alphabet_len: 8,
            alpha: 1.0,
            dropout: 0.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.is_empty()
            || self.kernel == 0
            || self.stride == 0
            || self.hidden == 0
            || self.alphabet_len == 0
        {
            return Err(Error::ShapeMismatch(format!("degenerate model config {self:?}")));
        }
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::ShapeMismatch(format!("prior exponent {}", self.alpha)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::ShapeMismatch(format!("dropout rate {}", self.dropout)));
        }
        self.conv_sides()?;
        Ok(())
    }

    /// Spatial side after each conv layer.
    pub fn conv_sides(&self) -> Result<Vec<usize>> {
        let mut side = self.input_side;
        let mut sides = Vec::with_capacity(self.conv_channels.len());
        for l in 0..self.conv_channels.len() {
            let padded = side + 2 * self.pad;
            if padded < self.kernel {
                return Err(Error::ShapeMismatch(format!(
                    "conv layer {l} input {side} smaller than its {}x{} kernel",
                    self.kernel, self.kernel
                )));
            }
            side = (padded - self.kernel) / self.stride + 1;
            sides.push(side);
        }
        Ok(sides)
    }

    /// Side of the attention grid (the last conv layer's output).
    pub fn grid_side(&self) -> usize {
        *self.conv_sides().expect("validated config").last().unwrap()
    }

    pub fn feature_channels(&self) -> usize {
        *self.conv_channels.last().unwrap()
    }

    /// Letter classes plus blank.
    pub fn classes(&self) -> usize {
        self.alphabet_len + 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// (out_ch, in_ch, k, k) row-major.
    pub kernel: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Every learnable tensor, used both for parameters and for gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSet {
    pub conv: Vec<ConvLayer>,
    /// State-to-attention projection, hidden x hidden.
    pub w_d: Mat,
    /// Feature-to-attention projection, hidden x feature channels.
    pub w_f: Mat,
    /// Attention scoring vector, hidden.
    pub u_f: Vec<f64>,
    /// LSTM input weights, 4*hidden x feature channels. Gate order i,f,g,o.
    pub w_ih: Mat,
    /// LSTM recurrent weights, 4*hidden x hidden.
    pub w_hh: Mat,
    pub b_lstm: Vec<f64>,
    /// Classifier, classes x hidden.
    pub w_e: Mat,
    pub b_e: Vec<f64>,
}

impl TensorSet {
    pub fn zeros(config: &ModelConfig) -> Self {
        let c = config.feature_channels();
        let h = config.hidden;
        let k = config.kernel;
        let mut conv = Vec::new();
        let mut in_ch = 1;
        for &out_ch in &config.conv_channels {
            conv.push(ConvLayer {
                kernel: vec![0.0; out_ch * in_ch * k * k],
                bias: vec![0.0; out_ch],
            });
            in_ch = out_ch;
        }
        TensorSet {
            conv,
            w_d: Mat::zeros(h, h),
            w_f: Mat::zeros(h, c),
            u_f: vec![0.0; h],
            w_ih: Mat::zeros(4 * h, c),
            w_hh: Mat::zeros(4 * h, h),
            b_lstm: vec![0.0; 4 * h],
            w_e: Mat::zeros(config.classes(), h),
            b_e: vec![0.0; config.classes()],
        }
    }

    /// Name, shape, and data of each tensor, in checkpoint order.
    pub fn views(&self, config: &ModelConfig) -> Vec<(String, Vec<usize>, &[f64])> {
        let k = config.kernel;
        let mut out = Vec::new();
        let mut in_ch = 1;
        for (l, layer) in self.conv.iter().enumerate() {
            let oc = config.conv_channels[l];
            out.push((format!("conv{l}.kernel"), vec![oc, in_ch, k, k], &layer.kernel[..]));
            out.push((format!("conv{l}.bias"), vec![oc], &layer.bias[..]));
            in_ch = oc;
        }
        out.push(("w_d".into(), vec![self.w_d.rows, self.w_d.cols], &self.w_d.data[..]));
        out.push(("w_f".into(), vec![self.w_f.rows, self.w_f.cols], &self.w_f.data[..]));
        out.push(("u_f".into(), vec![self.u_f.len()], &self.u_f[..]));
        out.push(("lstm.w_ih".into(), vec![self.w_ih.rows, self.w_ih.cols], &self.w_ih.data[..]));
        out.push(("lstm.w_hh".into(), vec![self.w_hh.rows, self.w_hh.cols], &self.w_hh.data[..]));
        out.push(("lstm.b".into(), vec![self.b_lstm.len()], &self.b_lstm[..]));
        out.push(("w_e".into(), vec![self.w_e.rows, self.w_e.cols], &self.w_e.data[..]));
        out.push(("b_e".into(), vec![self.b_e.len()], &self.b_e[..]));
        out
    }

    fn parts_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for layer in &mut self.conv {
            out.push(&mut layer.kernel[..]);
            out.push(&mut layer.bias[..]);
        }
        out.push(&mut self.w_d.data[..]);
        out.push(&mut self.w_f.data[..]);
        out.push(&mut self.u_f[..]);
        out.push(&mut self.w_ih.data[..]);
        out.push(&mut self.w_hh.data[..]);
        out.push(&mut self.b_lstm[..]);
        out.push(&mut self.w_e.data[..]);
        out.push(&mut self.b_e[..]);
        out
    }

    pub fn flatten(&self, config: &ModelConfig) -> Vec<f64> {
        self.views(config).into_iter().flat_map(|(_, _, d)| d.iter().copied()).collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) -> Result<()> {
        let total: usize = self.parts_mut().iter().map(|p| p.len()).sum();
        if flat.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "{} values for {} parameters",
                flat.len(),
                total
            )));
        }
        let mut offset = 0;
        for part in self.parts_mut() {
            part.copy_from_slice(&flat[offset..offset + part.len()]);
            offset += part.len();
        }
        Ok(())
    }

    /// self += a * other, elementwise across every tensor.
    pub fn add_scaled(&mut self, a: f64, other: &TensorSet) {
        for (layer, o) in self.conv.iter_mut().zip(&other.conv) {
            crate::linalg::axpy(&mut layer.kernel, a, &o.kernel);
            crate::linalg::axpy(&mut layer.bias, a, &o.bias);
        }
        self.w_d.add_scaled(a, &other.w_d);
        self.w_f.add_scaled(a, &other.w_f);
        crate::linalg::axpy(&mut self.u_f, a, &other.u_f);
        self.w_ih.add_scaled(a, &other.w_ih);
        self.w_hh.add_scaled(a, &other.w_hh);
        crate::linalg::axpy(&mut self.b_lstm, a, &other.b_lstm);
        self.w_e.add_scaled(a, &other.w_e);
        crate::linalg::axpy(&mut self.b_e, a, &other.b_e);
    }

    pub fn param_count(&self, config: &ModelConfig) -> usize {
        self.views(config).iter().map(|(_, _, d)| d.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub t: TensorSet,
}

/// Deterministic initialization: scaled-uniform fan-in for weights, zero
/// biases except the LSTM forget gate, which starts at 1.0 so memory is
/// open early in training, and the blank logit bias, which starts negative
/// so early training does not collapse onto all-blank output before letter
/// gradients have a chance to grow.
pub fn init_params(config: &ModelConfig, seed: u64) -> Result<ModelParams> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = TensorSet::zeros(config);
    let k = config.kernel;
    let fill = |data: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng| {
        let bound = (1.0 / fan_in as f64).sqrt();
        for v in data {
            *v = rng.gen_range(-bound..bound);
        }
    };
    let mut in_ch = 1;
    for (l, layer) in t.conv.iter_mut().enumerate() {
        // Biases drawn like the kernels. A zero bias would make units with
        // an all-dead receptive field sit exactly on the ReLU kink, where
        // the loss is not differentiable and gradient checks break down.
        fill(&mut layer.kernel, in_ch * k * k, &mut rng);
        fill(&mut layer.bias, in_ch * k * k, &mut rng);
        in_ch = config.conv_channels[l];
    }
    let c = config.feature_channels();
    let h = config.hidden;
    fill(&mut t.w_d.data, h, &mut rng);
    fill(&mut t.w_f.data, c, &mut rng);
    fill(&mut t.u_f, h, &mut rng);
    fill(&mut t.w_ih.data, c, &mut rng);
    fill(&mut t.w_hh.data, h, &mut rng);
    fill(&mut t.w_e.data, h, &mut rng);
    t.b_lstm[h..2 * h].fill(1.0);
    t.b_e[crate::ctc::BLANK] = -2.0;
    Ok(ModelParams { config: config.clone(), t })
}

/// p ← p − lr·g elementwise.
pub fn sgd_step(params: &mut ModelParams, grads: &TensorSet, lr: f64) {
    params.t.add_scaled(-lr, grads);
}

const CHECKPOINT_MAGIC: &[u8; 5] = b"FSIA1";

#[derive(serde::Serialize, serde::Deserialize)]
struct CheckpointHeader {
    config: ModelConfig,
    tensors: Vec<TensorInfo>,
}

#[derive(serde::Serialize, serde::Deserialize, PartialEq)]
struct TensorInfo {
    name: String,
    shape: Vec<usize>,
}

/// Serialized form: magic, little-endian u32 header length, JSON header
/// (config + tensor shapes), then each tensor as little-endian f32 in
/// declaration order. Loading then saving reproduces the bytes exactly.
pub fn checkpoint_bytes(params: &ModelParams) -> Vec<u8> {
    let views = params.t.views(&params.config);
    let header = CheckpointHeader {
        config: params.config.clone(),
        tensors: views
            .iter()
            .map(|(name, shape, _)| TensorInfo { name: name.clone(), shape: shape.clone() })
            .collect(),
    };
    let header_json = serde_json::to_vec(&header).unwrap();
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for (_, _, data) in views {
        for &v in data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    out
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<ModelParams> {
    let fail = |msg: &str| Error::CheckpointFormat(msg.to_string());
    if bytes.len() < 9 || &bytes[..5] != CHECKPOINT_MAGIC {
        return Err(fail("missing FSIA1 magic"));
    }
    let header_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    let body_start = 9 + header_len;
    if bytes.len() < body_start {
        return Err(fail("truncated header"));
    }
    let header: CheckpointHeader = serde_json::from_slice(&bytes[9..body_start])
        .map_err(|e| Error::CheckpointFormat(format!("bad header: {e}")))?;
    header.config.validate().map_err(|e| Error::CheckpointFormat(format!("bad config: {e}")))?;
    let mut params =
        ModelParams { config: header.config.clone(), t: TensorSet::zeros(&header.config) };
    let expected: Vec<TensorInfo> = params
        .t
        .views(&params.config)
        .iter()
        .map(|(name, shape, _)| TensorInfo { name: name.clone(), shape: shape.clone() })
        .collect();
    if expected != header.tensors {
        return Err(fail("tensor list does not match config"));
    }
    let total: usize = expected.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if bytes.len() != body_start + 4 * total {
        return Err(fail("tensor data length does not match shapes"));
    }
    let mut flat = Vec::with_capacity(total);
    for i in 0..total {
        let at = body_start + 4 * i;
        flat.push(f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64);
    }
    params.t.assign_flat(&flat)?;
    Ok(params)
}

pub fn save_checkpoint(path: &std::path::Path, params: &ModelParams) -> Result<()> {
    atomic_write(path, &checkpoint_bytes(params))
}

pub fn load_checkpoint(path: &std::path::Path) -> Result<ModelParams> {
    let bytes =
        std::fs::read(path).map_err(Error::io(format!("read checkpoint {}", path.display())))?;
    params_from_bytes(&bytes)
}

#[inline]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Smallest config the test suite exercises everywhere: one conv layer,
/// 10x10 frames, a 4x4 attention grid, three hidden units.
#[cfg(test)]
pub(crate) fn tiny_config() -> ModelConfig {
    ModelConfig {
        input_side: 10,
        conv_channels: vec![3],
        kernel: 3,
        stride: 2,
        pad: 0,
        hidden: 3,
        alphabet_len: 2,
        alpha: 1.0,
        dropout: 0.0,
    }
}
