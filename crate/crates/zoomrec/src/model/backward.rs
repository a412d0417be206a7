//! Reverse-mode gradients for the whole network, derived by hand from the
//! forward equations and checked against finite differences in gradcheck.

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Mat};
use crate::model::forward::{layer_dims, ForwardCache, LayerDims};
use crate::model::{ModelParams, TensorSet};

/// Propagates `d_logits` (T x classes, the loss gradient at the classifier
/// output) back through classifier, LSTM, attention, and conv stack,
/// returning gradients for every parameter tensor.
pub fn backward_sequence(
    params: &ModelParams,
    cache: &ForwardCache,
    d_logits: &Mat,
) -> Result<TensorSet> {
    if cache.config != params.config {
        return Err(Error::ShapeMismatch(
            "forward cache was built with a different model config".into(),
        ));
    }
    let config = &params.config;
    let t_len = cache.steps.len();
    if d_logits.rows != t_len || d_logits.cols != config.classes() {
        return Err(Error::ShapeMismatch(format!(
            "logit gradient is {}x{}, cache has {t_len} frames and {} classes",
            d_logits.rows,
            d_logits.cols,
            config.classes()
        )));
    }
    let dims = layer_dims(config)?;
    let g = config.grid_side();
    let hw = g * g;
    let ch = config.feature_channels();
    let h_size = config.hidden;

    let mut grads = TensorSet::zeros(config);
    let mut de_carry = vec![0.0; h_size];
    let mut dc_carry = vec![0.0; h_size];

    for t in (0..t_len).rev() {
        let step = &cache.steps[t];
        let dlog = d_logits.row(t);

        grads.w_e.add_outer(1.0, dlog, &step.hidden);
        axpy(&mut grads.b_e, 1.0, dlog);
        let mut de = params.t.w_e.matvec_t(dlog);
        axpy(&mut de, 1.0, &de_carry);

        // LSTM backward. Gate order i,f,g,o; cell = f*c_prev + i*g.
        let (gi, gf, gg, go) = (
            &step.gates[..h_size],
            &step.gates[h_size..2 * h_size],
            &step.gates[2 * h_size..3 * h_size],
            &step.gates[3 * h_size..],
        );
        let mut dz4 = vec![0.0; 4 * h_size];
        let mut dc_prev = vec![0.0; h_size];
        for k in 0..h_size {
            let d_o = de[k] * step.tanh_cell[k];
            let dc = de[k] * go[k] * (1.0 - step.tanh_cell[k] * step.tanh_cell[k]) + dc_carry[k];
            let d_i = dc * gg[k];
            let d_g = dc * gi[k];
            let d_f = dc * step.prev_cell[k];
            dc_prev[k] = dc * gf[k];
            dz4[k] = d_i * gi[k] * (1.0 - gi[k]);
            dz4[h_size + k] = d_f * gf[k] * (1.0 - gf[k]);
            dz4[2 * h_size + k] = d_g * (1.0 - gg[k] * gg[k]);
            dz4[3 * h_size + k] = d_o * go[k] * (1.0 - go[k]);
        }
        grads.w_ih.add_outer(1.0, &dz4, &step.context);
        grads.w_hh.add_outer(1.0, &dz4, &step.prev_hidden);
        axpy(&mut grads.b_lstm, 1.0, &dz4);
        let dcontext = params.t.w_ih.matvec_t(&dz4);
        let mut de_prev = params.t.w_hh.matvec_t(&dz4);

        // Attention backward. context[c] = sum_idx feat[c,idx] * A[idx].
        let feat = step.fed.last().unwrap();
        let mut dfeat = vec![0.0; ch * hw];
        let mut dattn = vec![0.0; hw];
        for c in 0..ch {
            let dcx = dcontext[c];
            for idx in 0..hw {
                dattn[idx] += feat[c * hw + idx] * dcx;
                dfeat[c * hw + idx] += step.attn[idx] * dcx;
            }
        }
        // A = beta .* m^alpha / s with s = sum(beta .* m^alpha); its
        // Jacobian contracts to dbeta = (m^alpha/s) .* (dA - sum(dA .* A)).
        // With alpha 0 the forward copied beta, so dbeta = dA; both forms
        // lead to the same dv because softmax backward kills constant
        // shifts.
        let dbeta: Vec<f64> = if config.alpha == 0.0 {
            dattn.clone()
        } else {
            let gsum = dot(&dattn, &step.attn);
            (0..hw)
                .map(|idx| step.m_pow[idx] / step.s_norm * (dattn[idx] - gsum))
                .collect()
        };
        let bsum = dot(&step.beta, &dbeta);
        let mut sum_dz = vec![0.0; h_size];
        let mut f_cell = vec![0.0; ch];
        for idx in 0..hw {
            let dv = step.beta[idx] * (dbeta[idx] - bsum);
            let trow = &step.tanh_z[idx * h_size..(idx + 1) * h_size];
            axpy(&mut grads.u_f, dv, trow);
            let mut dz_cell = vec![0.0; h_size];
            for k in 0..h_size {
                dz_cell[k] = dv * params.t.u_f[k] * (1.0 - trow[k] * trow[k]);
            }
            for c in 0..ch {
                f_cell[c] = feat[c * hw + idx];
            }
            grads.w_f.add_outer(1.0, &dz_cell, &f_cell);
            let dfc = params.t.w_f.matvec_t(&dz_cell);
            for c in 0..ch {
                dfeat[c * hw + idx] += dfc[c];
            }
            axpy(&mut sum_dz, 1.0, &dz_cell);
        }
        grads.w_d.add_outer(1.0, &sum_dz, &step.prev_hidden);
        axpy(&mut de_prev, 1.0, &params.t.w_d.matvec_t(&sum_dz));

        // Conv backward, last layer to first. `dout` arrives as the
        // gradient w.r.t. what downstream consumed (fed), so dropout masks
        // apply before the ReLU mask.
        let mut dout = dfeat;
        for (l, d) in dims.iter().enumerate().rev() {
            if let Some(mask) = &step.masks[l] {
                let area = d.out_side * d.out_side;
                for (c, &scale) in mask.iter().enumerate() {
                    for v in &mut dout[c * area..(c + 1) * area] {
                        *v *= scale;
                    }
                }
            }
            let input: &[f64] = if l == 0 { &cache.frames[t] } else { &step.fed[l - 1] };
            dout = conv_backward_layer(
                &mut grads.conv[l],
                &params.t.conv[l].kernel,
                &step.outs[l],
                input,
                &dout,
                *d,
                config,
                l > 0,
            );
        }

        de_carry = de_prev;
        dc_carry = dc_prev;
    }
    Ok(grads)
}

/// Accumulates kernel/bias gradients for one layer and returns the gradient
/// w.r.t. its input (empty when `want_din` is false, at the stack bottom).
#[allow(clippy::too_many_arguments)]
fn conv_backward_layer(
    layer_grads: &mut crate::model::ConvLayer,
    kernel: &[f64],
    out_post_relu: &[f64],
    input: &[f64],
    dout: &[f64],
    d: LayerDims,
    config: &crate::model::ModelConfig,
    want_din: bool,
) -> Vec<f64> {
    let k = config.kernel;
    let (s, p) = (config.stride as isize, config.pad as isize);
    let n_in = d.in_side as isize;
    let mut din = if want_din { vec![0.0; d.in_ch * d.in_side * d.in_side] } else { Vec::new() };
    for oc in 0..d.out_ch {
        for oy in 0..d.out_side {
            for ox in 0..d.out_side {
                let o_idx = (oc * d.out_side + oy) * d.out_side + ox;
                if out_post_relu[o_idx] <= 0.0 {
                    continue;
                }
                let dpre = dout[o_idx];
                if dpre == 0.0 {
                    continue;
                }
                layer_grads.bias[oc] += dpre;
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
                            layer_grads.kernel[k_row + kx] += dpre * input[in_row + ix as usize];
                            if want_din {
                                din[in_row + ix as usize] += dpre * kernel[k_row + kx];
                            }
                        }
                    }
                }
            }
        }
    }
    din
}
