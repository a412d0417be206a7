//! Forward pass. Every intermediate the backward pass needs is kept in a
//! cache, so gradients never recompute activations.

use rand::Rng;

use crate::ctc::softmax_rows;
use crate::error::{Error, Result};
use crate::imaging::{FrameSequence, PriorMap};
use crate::linalg::{dot, Mat};
use crate::model::{sigmoid, ModelConfig, ModelParams};

/// Channel-dropout masks for one sequence: `masks[t][l][ch]` is 0.0 for a
/// dropped channel or 1/(1-rate) for a kept one (inverted scaling, so
/// inference needs no correction). The last conv layer is never masked.
#[derive(Debug, Clone)]
pub struct DropoutPlan {
    pub rate: f64,
    pub masks: Vec<Vec<Vec<f64>>>,
}

impl DropoutPlan {
    /// Samples masks for `t_len` frames, or None when dropout is off or the
    /// stack has no layer to mask.
    pub fn sample(config: &ModelConfig, t_len: usize, rng: &mut impl Rng) -> Option<DropoutPlan> {
        let layers = config.conv_channels.len();
        if config.dropout == 0.0 || layers < 2 {
            return None;
        }
        let keep_scale = 1.0 / (1.0 - config.dropout);
        let masks = (0..t_len)
            .map(|_| {
                config.conv_channels[..layers - 1]
                    .iter()
                    .map(|&ch| {
                        (0..ch)
                            .map(|_| {
                                if rng.gen::<f64>() < config.dropout {
                                    0.0
                                } else {
                                    keep_scale
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        Some(DropoutPlan { rate: config.dropout, masks })
    }
}

/// Per-layer geometry, shared by forward and backward.
#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerDims {
    pub in_ch: usize,
    pub out_ch: usize,
    pub in_side: usize,
    pub out_side: usize,
}

pub(crate) fn layer_dims(config: &ModelConfig) -> Result<Vec<LayerDims>> {
    let sides = config.conv_sides()?;
    let mut dims = Vec::with_capacity(sides.len());
    let mut in_ch = 1;
    let mut in_side = config.input_side;
    for (l, &out_side) in sides.iter().enumerate() {
        dims.push(LayerDims { in_ch, out_ch: config.conv_channels[l], in_side, out_side });
        in_ch = config.conv_channels[l];
        in_side = out_side;
    }
    Ok(dims)
}

#[derive(Debug, Clone)]
pub(crate) struct StepTrace {
    /// Post-ReLU output of each conv layer.
    pub outs: Vec<Vec<f64>>,
    /// What the next layer consumed: outs with dropout applied.
    pub fed: Vec<Vec<f64>>,
    /// Channel masks actually used, per maskable layer.
    pub masks: Vec<Option<Vec<f64>>>,
    /// tanh(W_d e_prev + W_f f_ij), hw x hidden row-major.
    pub tanh_z: Vec<f64>,
    pub beta: Vec<f64>,
    pub attn: Vec<f64>,
    /// Prior raised to alpha, per cell (all ones when alpha is 0).
    pub m_pow: Vec<f64>,
    /// Sum of beta * m_pow.
    pub s_norm: f64,
    pub context: Vec<f64>,
    /// Post-activation gates, 4*hidden, order i,f,g,o.
    pub gates: Vec<f64>,
    pub tanh_cell: Vec<f64>,
    pub hidden: Vec<f64>,
    pub prev_hidden: Vec<f64>,
    pub prev_cell: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub(crate) config: ModelConfig,
    pub(crate) frames: Vec<Vec<f64>>,
    pub(crate) steps: Vec<StepTrace>,
}

impl ForwardCache {
    /// Raw attention map for frame `t`: the feature-driven distribution
    /// before the motion prior is blended in. Useful for diagnostics and for
    /// checking prior-strength behavior from outside the crate.
    pub fn raw_attention(&self, t: usize) -> &[f64] {
        &self.steps[t].beta
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// T x classes, rows softmax-normalized.
    pub posteriors: Mat,
    /// Posterior attention map A per frame, grid_side^2 each.
    pub attention: Vec<Vec<f64>>,
    pub cache: ForwardCache,
}

fn conv_relu(input: &[f64], kernel: &[f64], bias: &[f64], d: LayerDims, config: &ModelConfig) -> Vec<f64> {
    let k = config.kernel;
    let (s, p) = (config.stride as isize, config.pad as isize);
    let n_in = d.in_side as isize;
    let mut out = vec![0.0; d.out_ch * d.out_side * d.out_side];
    for oc in 0..d.out_ch {
        for oy in 0..d.out_side {
            for ox in 0..d.out_side {
                let mut acc = bias[oc];
                for ic in 0..d.in_ch {
                    for ky in 0..k {
                        let iy = oy as isize * s + ky as isize - p;
                        if iy < 0 || iy >= n_in {
                            continue;
                        }
                        let in_row = (ic * d.in_side + iy as usize) * d.in_side;
                        let k_row = (((oc * d.in_ch + ic) * k) + ky) * k;
                        for kx in 0..k {
                            let ix = ox as isize * s + kx as isize - p;
                            if ix < 0 || ix >= n_in {
                                continue;
                            }
                            acc += kernel[k_row + kx] * input[in_row + ix as usize];
                        }
                    }
                }
                out[(oc * d.out_side + oy) * d.out_side + ox] = acc.max(0.0);
            }
        }
    }
    out
}

/// Runs the network over a frame sequence. `dropout` masks are applied when
/// given (training); inference passes None and is fully deterministic.
pub fn forward_train(
    params: &ModelParams,
    frames: &FrameSequence,
    priors: &[PriorMap],
    dropout: Option<&DropoutPlan>,
) -> Result<ForwardOutput> {
    let config = &params.config;
    config.validate()?;
    if frames.is_empty() {
        return Err(Error::InvalidFrame("empty frame sequence".into()));
    }
    for (t, f) in frames.iter().enumerate() {
        if f.width != config.input_side || f.height != config.input_side {
            return Err(Error::ShapeMismatch(format!(
                "frame {t} is {}x{}, model wants {}x{}",
                f.width, f.height, config.input_side, config.input_side
            )));
        }
    }
    let g = config.grid_side();
    let hw = g * g;
    if priors.len() != frames.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} priors for {} frames",
            priors.len(),
            frames.len()
        )));
    }
    for (t, m) in priors.iter().enumerate() {
        if m.grid_h != g || m.grid_w != g {
            return Err(Error::ShapeMismatch(format!(
                "prior {t} grid {}x{}, model wants {g}x{g}",
                m.grid_h, m.grid_w
            )));
        }
    }
    if let Some(plan) = dropout {
        let want_layers = config.conv_channels.len().saturating_sub(1);
        let ok = plan.masks.len() == frames.len()
            && plan.masks.iter().enumerate().all(|(t, per_layer)| {
                per_layer.len() == want_layers
                    && per_layer
                        .iter()
                        .zip(&config.conv_channels[..want_layers])
                        .all(|(m, &ch)| m.len() == ch)
                    && plan.masks[t].len() == want_layers
            });
        if !ok {
            return Err(Error::ShapeMismatch("dropout plan does not fit model/frames".into()));
        }
    }
    let dims = layer_dims(config)?;
    let layers = dims.len();
    let ch = config.feature_channels();
    let h_size = config.hidden;

    let mut e_prev = vec![0.0; h_size];
    let mut c_prev = vec![0.0; h_size];
    let mut steps = Vec::with_capacity(frames.len());
    let mut logit_rows = Vec::with_capacity(frames.len());
    let mut attention = Vec::with_capacity(frames.len());

    for (t, frame) in frames.iter().enumerate() {
        let mut outs: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut fed: Vec<Vec<f64>> = Vec::with_capacity(layers);
        let mut masks: Vec<Option<Vec<f64>>> = Vec::with_capacity(layers);
        let mut input: &[f64] = &frame.data;
        for (l, d) in dims.iter().enumerate() {
            let out = conv_relu(input, &params.t.conv[l].kernel, &params.t.conv[l].bias, *d, config);
            let mask = dropout
                .filter(|_| l + 1 < layers)
                .map(|plan| plan.masks[t][l].clone());
            let fed_l = match &mask {
                Some(m) => {
                    let area = d.out_side * d.out_side;
                    let mut v = out.clone();
                    for (c, &scale) in m.iter().enumerate() {
                        for x in &mut v[c * area..(c + 1) * area] {
                            *x *= scale;
                        }
                    }
                    v
                }
                None => out.clone(),
            };
            outs.push(out);
            masks.push(mask);
            fed.push(fed_l);
            input = fed.last().unwrap();
        }
        let feat = fed.last().unwrap();

        // Attention scores: v_ij = u_f . tanh(W_d e_prev + W_f f_ij).
        let z_state = params.t.w_d.matvec(&e_prev);
        let mut tanh_z = vec![0.0; hw * h_size];
        let mut scores = vec![0.0; hw];
        let mut f_cell = vec![0.0; ch];
        for idx in 0..hw {
            for c in 0..ch {
                f_cell[c] = feat[c * hw + idx];
            }
            let z_feat = params.t.w_f.matvec(&f_cell);
            let row = &mut tanh_z[idx * h_size..(idx + 1) * h_size];
            for k in 0..h_size {
                row[k] = (z_state[k] + z_feat[k]).tanh();
            }
            scores[idx] = dot(&params.t.u_f, row);
        }
        let max_score = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut beta: Vec<f64> = scores.iter().map(|&v| (v - max_score).exp()).collect();
        let z: f64 = beta.iter().sum();
        for b in &mut beta {
            *b /= z;
        }

        // Posterior attention: prior-reweighted beta. Alpha zero bypasses
        // the prior bitwise rather than through powf round trips.
        let (attn, m_pow, s_norm) = if config.alpha == 0.0 {
            (beta.clone(), vec![1.0; hw], 1.0)
        } else {
            let m_pow: Vec<f64> =
                priors[t].data.iter().map(|&m| m.powf(config.alpha)).collect();
            let s: f64 = beta.iter().zip(&m_pow).map(|(b, p)| b * p).sum();
            let attn: Vec<f64> =
                beta.iter().zip(&m_pow).map(|(b, p)| b * p / s).collect();
            (attn, m_pow, s)
        };

        let mut context = vec![0.0; ch];
        for c in 0..ch {
            context[c] = dot(&feat[c * hw..(c + 1) * hw], &attn);
        }

        // LSTM step, gate order i,f,g,o.
        let mut z4 = params.t.w_ih.matvec(&context);
        let rec = params.t.w_hh.matvec(&e_prev);
        for (zv, (rv, bv)) in z4.iter_mut().zip(rec.iter().zip(&params.t.b_lstm)) {
            *zv += rv + bv;
        }
        let mut gates = vec![0.0; 4 * h_size];
        for k in 0..h_size {
            gates[k] = sigmoid(z4[k]);
            gates[h_size + k] = sigmoid(z4[h_size + k]);
            gates[2 * h_size + k] = z4[2 * h_size + k].tanh();
            gates[3 * h_size + k] = sigmoid(z4[3 * h_size + k]);
        }
        let mut cell = vec![0.0; h_size];
        let mut tanh_cell = vec![0.0; h_size];
        let mut hidden = vec![0.0; h_size];
        for k in 0..h_size {
            cell[k] = gates[h_size + k] * c_prev[k] + gates[k] * gates[2 * h_size + k];
            tanh_cell[k] = cell[k].tanh();
            hidden[k] = gates[3 * h_size + k] * tanh_cell[k];
        }

        let mut logits = params.t.w_e.matvec(&hidden);
        for (lv, bv) in logits.iter_mut().zip(&params.t.b_e) {
            *lv += bv;
        }
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { frame: t });
        }

        attention.push(attn.clone());
        steps.push(StepTrace {
            outs,
            fed,
            masks,
            tanh_z,
            beta,
            attn,
            m_pow,
            s_norm,
            context,
            gates,
            tanh_cell,
            hidden: hidden.clone(),
            prev_hidden: e_prev.clone(),
            prev_cell: c_prev.clone(),
        });
        logit_rows.push(logits);
        e_prev = hidden;
        c_prev = cell;
    }

    let posteriors = softmax_rows(&Mat::from_rows(logit_rows));
    let cache = ForwardCache {
        config: config.clone(),
        frames: frames.iter().map(|f| f.data.clone()).collect(),
        steps,
    };
    Ok(ForwardOutput { posteriors, attention, cache })
}

/// Inference-mode forward: no dropout, deterministic.
pub fn forward_sequence(
    params: &ModelParams,
    frames: &FrameSequence,
    priors: &[PriorMap],
) -> Result<ForwardOutput> {
    forward_train(params, frames, priors, None)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::Frame;
    use crate::model::{init_params, tiny_config, TensorSet};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_frames(side: usize, t_len: usize, seed: u64) -> FrameSequence {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t_len)
            .map(|_| {
                Frame::new(side, side, (0..side * side).map(|_| rng.gen()).collect()).unwrap()
            })
            .collect()
    }

    fn uniform_priors(g: usize, t_len: usize) -> Vec<PriorMap> {
        (0..t_len).map(|_| PriorMap::uniform(g, g)).collect()
    }

    fn bumpy_priors(g: usize, t_len: usize, seed: u64) -> Vec<PriorMap> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..t_len)
            .map(|_| PriorMap {
                grid_h: g,
                grid_w: g,
                data: (0..g * g).map(|_| rng.gen_range(0.01..1.0)).collect(),
            })
            .collect()
    }

    #[test]
    fn posterior_rows_sum_to_one() {
        let config = tiny_config();
        let params = init_params(&config, 21).unwrap();
        let frames = random_frames(config.input_side, 4, 22);
        let priors = bumpy_priors(config.grid_side(), 4, 23);
        let out = forward_sequence(&params, &frames, &priors).unwrap();
        for t in 0..4 {
            let s: f64 = out.posteriors.row(t).iter().sum();
            assert!((s - 1.0).abs() < 1e-9);
            assert!(out.posteriors.row(t).iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn attention_maps_are_distributions() {
        let config = tiny_config();
        let params = init_params(&config, 25).unwrap();
        let frames = random_frames(config.input_side, 3, 26);
        let priors = bumpy_priors(config.grid_side(), 3, 27);
        let out = forward_sequence(&params, &frames, &priors).unwrap();
        for a in &out.attention {
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(a.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn zero_attention_weights_give_exactly_uniform_beta() {
        let config = tiny_config();
        let mut params = init_params(&config, 29).unwrap();
        params.t.w_d = crate::linalg::Mat::zeros(config.hidden, config.hidden);
        params.t.w_f = crate::linalg::Mat::zeros(config.hidden, config.feature_channels());
        params.t.u_f = vec![0.0; config.hidden];
        let frames = random_frames(config.input_side, 2, 30);
        let g = config.grid_side();
        let out = forward_sequence(&params, &frames, &uniform_priors(g, 2)).unwrap();
        let uniform = 1.0 / (g * g) as f64;
        for step in &out.cache.steps {
            assert!(step.beta.iter().all(|&b| b == uniform));
        }
    }

    #[test]
    fn alpha_zero_copies_beta_bitwise() {
        let config = ModelConfig { alpha: 0.0, ..tiny_config() };
        let params = init_params(&config, 31).unwrap();
        let frames = random_frames(config.input_side, 3, 32);
        let priors = bumpy_priors(config.grid_side(), 3, 33);
        let out = forward_sequence(&params, &frames, &priors).unwrap();
        for step in &out.cache.steps {
            assert_eq!(step.attn, step.beta);
        }
    }

    #[test]
    fn uniform_prior_cancels_out_of_the_attention() {
        let config = tiny_config();
        let params = init_params(&config, 35).unwrap();
        let frames = random_frames(config.input_side, 3, 36);
        let g = config.grid_side();
        let out = forward_sequence(&params, &frames, &uniform_priors(g, 3)).unwrap();
        for step in &out.cache.steps {
            for (a, b) in step.attn.iter().zip(&step.beta) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_values_name_the_first_frame() {
        let config = tiny_config();
        let mut params = init_params(&config, 37).unwrap();
        params.t.b_e[0] = f64::INFINITY;
        let frames = random_frames(config.input_side, 3, 38);
        let priors = uniform_priors(config.grid_side(), 3);
        match forward_sequence(&params, &frames, &priors) {
            Err(Error::NonFinite { frame }) => assert_eq!(frame, 0),
            other => panic!("expected a non-finite error, got {other:?}"),
        }
    }

    #[test]
    fn prior_grid_mismatch_is_rejected() {
        let config = tiny_config();
        let params = init_params(&config, 39).unwrap();
        let frames = random_frames(config.input_side, 2, 40);
        let bad = vec![PriorMap::uniform(2, 2); 2];
        assert!(forward_sequence(&params, &frames, &bad).is_err());
    }

    #[test]
    fn dropout_masks_scale_or_zero_whole_channels() {
        let config = ModelConfig {
            input_side: 12,
            conv_channels: vec![4, 3],
            pad: 0,
            dropout: 0.5,
            ..tiny_config()
        };
        let params = init_params(&config, 41).unwrap();
        let frames = random_frames(config.input_side, 3, 42);
        let priors = uniform_priors(config.grid_side(), 3);
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let plan = DropoutPlan::sample(&config, 3, &mut rng).unwrap();
        let with = forward_train(&params, &frames, &priors, Some(&plan)).unwrap();
        let without = forward_sequence(&params, &frames, &priors).unwrap();
        let mut saw_drop = false;
        let mut saw_keep = false;
        for (t, step) in with.cache.steps.iter().enumerate() {
            let mask = step.masks[0].as_ref().unwrap();
            let area = step.outs[0].len() / mask.len();
            for (c, &m) in mask.iter().enumerate() {
                for i in c * area..(c + 1) * area {
                    assert_eq!(step.fed[0][i], step.outs[0][i] * m);
                }
                if m == 0.0 {
                    saw_drop = true;
                } else {
                    assert_eq!(m, 2.0);
                    saw_keep = true;
                }
            }
            // The unmasked run must agree on the raw layer output.
            assert_eq!(step.outs[0], without.cache.steps[t].outs[0]);
        }
        assert!(saw_drop && saw_keep, "rate 0.5 over 12 channel draws");
    }

    #[test]
    fn dropout_off_means_train_equals_inference() {
        let config = tiny_config();
        let params = init_params(&config, 45).unwrap();
        let frames = random_frames(config.input_side, 2, 46);
        let priors = uniform_priors(config.grid_side(), 2);
        let a = forward_train(&params, &frames, &priors, None).unwrap();
        let b = forward_sequence(&params, &frames, &priors).unwrap();
        assert_eq!(a.posteriors.data, b.posteriors.data);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        assert!(DropoutPlan::sample(&config, 2, &mut rng).is_none());
    }

    #[test]
    fn backward_is_linear_in_the_logit_gradient() {
        let config = tiny_config();
        let params = init_params(&config, 49).unwrap();
        let frames = random_frames(config.input_side, 3, 50);
        let priors = bumpy_priors(config.grid_side(), 3, 51);
        let out = forward_sequence(&params, &frames, &priors).unwrap();
        let zero = Mat::zeros(3, config.classes());
        let zgrads = crate::model::backward_sequence(&params, &out.cache, &zero).unwrap();
        assert_eq!(zgrads, TensorSet::zeros(&config));

        let mut rng = ChaCha8Rng::seed_from_u64(52);
        let mut dl = Mat::zeros(3, config.classes());
        for v in &mut dl.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let g1 = crate::model::backward_sequence(&params, &out.cache, &dl).unwrap();
        let mut dl2 = dl.clone();
        for v in &mut dl2.data {
            *v *= 2.0;
        }
        let g2 = crate::model::backward_sequence(&params, &out.cache, &dl2).unwrap();
        let f1 = g1.flatten(&config);
        let f2 = g2.flatten(&config);
        for (a, b) in f1.iter().zip(&f2) {
            assert!((2.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn cache_from_another_config_is_rejected() {
        let config = tiny_config();
        let params = init_params(&config, 53).unwrap();
        let frames = random_frames(config.input_side, 2, 54);
        let priors = uniform_priors(config.grid_side(), 2);
        let out = forward_sequence(&params, &frames, &priors).unwrap();
        let other = init_params(&ModelConfig { hidden: 4, ..config }, 55).unwrap();
        let dl = Mat::zeros(2, other.config.classes());
        assert!(crate::model::backward_sequence(&other, &out.cache, &dl).is_err());
    }
}
