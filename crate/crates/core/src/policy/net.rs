//! Forward/backward passes for the toy policy network.
//!
//! Architecture: prompt features and the previous-token embedding (plus three
//! scalar position features) feed a single tanh hidden layer with a linear
//! readout over the vocabulary. Sampling and scoring share the exact same
//! forward path, so re-scoring a completion reproduces its stored
//! log-probabilities bit for bit.

use super::{PolicyConfig, PolicyError, PolicyParams};

/// Cap for the normalized position features.
const POS_SCALE: f64 = 32.0;

/// Per-position forward results kept for the backward pass.
pub(crate) struct ForwardTrace {
    /// Input vector per position.
    pub inputs: Vec<Vec<f64>>,
    /// Hidden activations per position.
    pub hiddens: Vec<Vec<f64>>,
    /// Tempered log-softmax over the vocabulary per position.
    pub logprobs: Vec<Vec<f64>>,
    /// Previous token fed at each position (BOS for position 0).
    pub prev_tokens: Vec<usize>,
    pub temperature: f64,
}

impl ForwardTrace {
    /// Log-probability of the realized token at each position.
    pub fn token_logprobs(&self, tokens: &[usize]) -> Vec<f64> {
        tokens
            .iter()
            .enumerate()
            .map(|(t, &tok)| self.logprobs[t][tok])
            .collect()
    }
}

/// Build the input vector for one position.
pub(crate) fn input_vector(
    cfg: &PolicyConfig,
    features: &[f64],
    prev_token: usize,
    position: usize,
    tokens_after_sep: Option<usize>,
    params: &PolicyParams,
) -> Vec<f64> {
    let mut z = Vec::with_capacity(cfg.input_dim());
    z.extend_from_slice(features);
    let embed = params.embedding_row(prev_token);
    z.extend_from_slice(embed);
    z.push((position as f64).min(POS_SCALE) / POS_SCALE);
    match tokens_after_sep {
        None => {
            z.push(0.0);
            z.push(0.0);
        }
        Some(count) => {
            z.push(1.0);
            z.push((count as f64).min(POS_SCALE) / POS_SCALE);
        }
    }
    z
}

/// Tempered log-softmax of `w2 * tanh(w1 z + b1) + b2`.
pub(crate) fn forward_position(
    params: &PolicyParams,
    z: &[f64],
    temperature: f64,
) -> Result<(Vec<f64>, Vec<f64>), PolicyError> {
    let cfg = &params.config;
    let hidden_dim = cfg.hidden_dim;
    let vocab = cfg.vocab_size;
    let input_dim = cfg.input_dim();
    debug_assert_eq!(z.len(), input_dim);

    let w1 = params.w1();
    let b1 = params.b1();
    let mut hidden = vec![0.0; hidden_dim];
    for (h, hval) in hidden.iter_mut().enumerate() {
        let row = &w1[h * input_dim..(h + 1) * input_dim];
        let mut acc = b1[h];
        for (w, x) in row.iter().zip(z.iter()) {
            acc += w * x;
        }
        *hval = acc.tanh();
    }

    let w2 = params.w2();
    let b2 = params.b2();
    let mut scaled = vec![0.0; vocab];
    for (v, sval) in scaled.iter_mut().enumerate() {
        let row = &w2[v * hidden_dim..(v + 1) * hidden_dim];
        let mut acc = b2[v];
        for (w, h) in row.iter().zip(hidden.iter()) {
            acc += w * h;
        }
        if !acc.is_finite() {
            return Err(PolicyError::NonFiniteLogits);
        }
        *sval = acc / temperature;
    }

    // stable log-softmax
    let max = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = scaled.iter().map(|s| (s - max).exp()).sum();
    let log_z = max + sum_exp.ln();
    let logprobs: Vec<f64> = scaled.iter().map(|s| s - log_z).collect();
    Ok((logprobs, hidden))
}

/// Count of tokens emitted after the first separator, if any, looking at the
/// prefix `tokens[..t]`.
fn sep_state(cfg: &PolicyConfig, tokens: &[usize], t: usize) -> Option<usize> {
    let sep = cfg.sep_token();
    let mut seen = None;
    for (i, &tok) in tokens.iter().take(t).enumerate() {
        if tok == sep {
            seen = Some(i);
            break;
        }
    }
    seen.map(|i| t - i - 1)
}

/// Teacher-forced forward pass over a full token sequence.
pub(crate) fn forward_tokens(
    params: &PolicyParams,
    features: &[f64],
    tokens: &[usize],
    temperature: f64,
) -> Result<ForwardTrace, PolicyError> {
    let cfg = &params.config;
    if features.len() != cfg.feature_dim {
        return Err(PolicyError::FeatureDimMismatch {
            expected: cfg.feature_dim,
            found: features.len(),
        });
    }
    for &tok in tokens {
        if tok >= cfg.vocab_size {
            return Err(PolicyError::UnknownToken { token: tok });
        }
    }
    let mut trace = ForwardTrace {
        inputs: Vec::with_capacity(tokens.len()),
        hiddens: Vec::with_capacity(tokens.len()),
        logprobs: Vec::with_capacity(tokens.len()),
        prev_tokens: Vec::with_capacity(tokens.len()),
        temperature,
    };
    for (t, _) in tokens.iter().enumerate() {
        let prev = if t == 0 {
            cfg.bos_token()
        } else {
            tokens[t - 1]
        };
        let after_sep = sep_state(cfg, tokens, t);
        let z = input_vector(cfg, features, prev, t, after_sep, params);
        let (logprobs, hidden) = forward_position(params, &z, temperature)?;
        trace.inputs.push(z);
        trace.hiddens.push(hidden);
        trace.logprobs.push(logprobs);
        trace.prev_tokens.push(prev);
    }
    Ok(trace)
}

/// Accumulate `dL/dtheta` given `dL/d(scaled logits)` at every position.
/// `scaled` means logits already divided by the temperature.
pub(crate) fn backward(
    params: &PolicyParams,
    trace: &ForwardTrace,
    grad_scaled: &[Vec<f64>],
    grad_theta: &mut [f64],
) {
    let cfg = &params.config;
    let hidden_dim = cfg.hidden_dim;
    let vocab = cfg.vocab_size;
    let input_dim = cfg.input_dim();
    let feature_dim = cfg.feature_dim;
    let embed_dim = cfg.embed_dim;
    let inv_temp = 1.0 / trace.temperature;

    let (embed_range, w1_range, b1_range, w2_range, b2_range) = params.config.slice_ranges();
    let w1 = params.w1();
    let w2 = params.w2();

    for (t, g_scaled) in grad_scaled.iter().enumerate() {
        let z = &trace.inputs[t];
        let hidden = &trace.hiddens[t];
        let prev = trace.prev_tokens[t];

        // through the temperature division
        let g_logits: Vec<f64> = g_scaled.iter().map(|g| g * inv_temp).collect();

        // output layer
        let mut g_hidden = vec![0.0; hidden_dim];
        for v in 0..vocab {
            let g = g_logits[v];
            if g == 0.0 {
                continue;
            }
            let w2_row = &w2[v * hidden_dim..(v + 1) * hidden_dim];
            let gw2 = &mut grad_theta[w2_range.clone()];
            for h in 0..hidden_dim {
                gw2[v * hidden_dim + h] += g * hidden[h];
                g_hidden[h] += w2_row[h] * g;
            }
            grad_theta[b2_range.clone()][v] += g;
        }

        // tanh hidden layer
        for h in 0..hidden_dim {
            let g_pre = g_hidden[h] * (1.0 - hidden[h] * hidden[h]);
            if g_pre == 0.0 {
                continue;
            }
            let gw1 = &mut grad_theta[w1_range.clone()];
            for i in 0..input_dim {
                gw1[h * input_dim + i] += g_pre * z[i];
            }
            grad_theta[b1_range.clone()][h] += g_pre;
            // input gradient only matters for the embedding slice
            let w1_row = &w1[h * input_dim..(h + 1) * input_dim];
            let gembed = &mut grad_theta[embed_range.clone()];
            for e in 0..embed_dim {
                gembed[prev * embed_dim + e] += g_pre * w1_row[feature_dim + e];
            }
        }
    }
}

/// Convenience: gradient of a single realized-token log-probability in the
/// scaled-logit space, `d logp(y) / d scaled_j = onehot(y) - p_j`, times a
/// scalar weight.
pub(crate) fn logprob_grad_scaled(logprobs: &[f64], token: usize, weight: f64) -> Vec<f64> {
    let mut grad: Vec<f64> = logprobs.iter().map(|lp| -weight * lp.exp()).collect();
    grad[token] += weight;
    grad
}
