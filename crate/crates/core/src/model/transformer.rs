//! Temporal model over the beat sequence: sinusoidal positions plus a
//! pre-norm transformer whose attention ignores padding positions exactly.

use crate::error::{Error, Result};
use crate::model::{Binding, TransformerConfig};
use crate::tensor::{Scalar, Tape, TensorData, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub(crate) const LN_EPS: f64 = 1e-5;

/// Additive score for keys at padding positions. Large enough that the
/// softmax exponent underflows to exactly zero whenever at least one real
/// key is present.
const KEY_MASK_BIAS: f64 = -1e9;

/// Fixed sinusoidal position table, `[T, d]` with
/// `PE[t, 2k] = sin(t / 10000^(2k/d))` and `PE[t, 2k+1] = cos` of the same
/// angle. `d` must be even.
pub fn positional_encoding<S: Scalar>(t_steps: usize, d: usize) -> Result<TensorData<S>> {
    if d == 0 || d % 2 != 0 {
        return Err(Error::InvalidConfig(format!(
            "sinusoidal encoding needs an even dimension, got {d}"
        )));
    }
    let mut data = vec![S::ZERO; t_steps * d];
    for t in 0..t_steps {
        for k in 0..d / 2 {
            let angle = t as f64 / 10_000f64.powf(2.0 * k as f64 / d as f64);
            data[t * d + 2 * k] = S::c(angle.sin());
            data[t * d + 2 * k + 1] = S::c(angle.cos());
        }
    }
    TensorData::new(vec![t_steps, d], data)
}

/// Inverted-scale dropout mask: each entry is `0` with probability `p`,
/// otherwise `1/(1-p)`.
fn dropout_mask<S: Scalar>(rng: &mut ChaCha8Rng, len: usize, p: f64) -> Vec<S> {
    let keep = S::c(1.0 / (1.0 - p));
    (0..len)
        .map(|_| if rng.gen::<f64>() < p { S::ZERO } else { keep })
        .collect()
}

fn maybe_dropout<S: Scalar>(
    tape: &mut Tape<S>,
    x: Var,
    p: f64,
    rng: &mut Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    match rng {
        Some(r) if p > 0.0 => {
            let mask = dropout_mask(r, tape.value(x).numel(), p);
            tape.dropout(x, mask)
        }
        _ => Ok(x),
    }
}

/// Run the pre-norm transformer stack over `x` (`[T, d]`).
///
/// `mask[t]` marks real positions; padding positions are excluded from
/// attention in both directions — their keys receive a large negative score
/// bias (softmax weight exactly zero) and their query rows are zeroed after
/// the softmax. Pass a dropout RNG only during training; without one the
/// pass is deterministic.
pub fn transformer_forward<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &Binding,
    cfg: &TransformerConfig,
    x: Var,
    mask: &[bool],
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    let shape = tape.value(x).shape().to_vec();
    let (t_steps, d) = match shape[..] {
        [t, d] => (t, d),
        _ => return Err(Error::Shape(format!("expected [T, d] input, got {shape:?}"))),
    };
    if d != cfg.model_dim {
        return Err(Error::Shape(format!(
            "input dim {d} does not match model_dim {}",
            cfg.model_dim
        )));
    }
    if mask.len() != t_steps {
        return Err(Error::Shape(format!(
            "mask length {} does not match {t_steps} positions",
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidConfig(
            "sequence mask marks every position as padding".into(),
        ));
    }
    let dh = cfg.model_dim / cfg.num_heads;
    let scale = 1.0 / (dh as f64).sqrt();

    // Shared [T, T] masking constants: one biases key columns, the other
    // zeroes query rows.
    let mut key_bias = vec![S::ZERO; t_steps * t_steps];
    let mut row_mask = vec![S::ZERO; t_steps * t_steps];
    for i in 0..t_steps {
        for j in 0..t_steps {
            if !mask[j] {
                key_bias[i * t_steps + j] = S::c(KEY_MASK_BIAS);
            }
            if mask[i] {
                row_mask[i * t_steps + j] = S::ONE;
            }
        }
    }
    let key_bias = tape.constant(TensorData::new(vec![t_steps, t_steps], key_bias)?)?;
    let row_mask = tape.constant(TensorData::new(vec![t_steps, t_steps], row_mask)?)?;

    let mut h = x;
    for l in 0..cfg.num_layers {
        let name = |part: &str| format!("trf.l{l}.{part}");

        let g = binding.var(&name("ln1.g"))?;
        let b = binding.var(&name("ln1.b"))?;
        let normed = tape.layer_norm(h, g, b, LN_EPS)?;

        let wq = binding.var(&name("attn.wq"))?;
        let bq = binding.var(&name("attn.bq"))?;
        let wk = binding.var(&name("attn.wk"))?;
        let bk = binding.var(&name("attn.bk"))?;
        let wv = binding.var(&name("attn.wv"))?;
        let bv = binding.var(&name("attn.bv"))?;
        let q = tape.dense(normed, wq, bq)?;
        let k = tape.dense(normed, wk, bk)?;
        let v = tape.dense(normed, wv, bv)?;

        let mut heads = Vec::with_capacity(cfg.num_heads);
        for hd in 0..cfg.num_heads {
            let qh = tape.slice_cols(q, hd * dh, dh)?;
            let kh = tape.slice_cols(k, hd * dh, dh)?;
            let vh = tape.slice_cols(v, hd * dh, dh)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let scores = tape.add(scores, key_bias)?;
            let weights = tape.softmax(scores)?;
            let weights = tape.mul(weights, row_mask)?;
            heads.push(tape.matmul(weights, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let wo = binding.var(&name("attn.wo"))?;
        let bo = binding.var(&name("attn.bo"))?;
        let attn_out = tape.dense(merged, wo, bo)?;
        let attn_out = maybe_dropout(tape, attn_out, cfg.dropout, &mut dropout_rng)?;
        h = tape.add(h, attn_out)?;

        let g = binding.var(&name("ln2.g"))?;
        let b = binding.var(&name("ln2.b"))?;
        let normed = tape.layer_norm(h, g, b, LN_EPS)?;
        let w1 = binding.var(&name("ffn.w1"))?;
        let b1 = binding.var(&name("ffn.b1"))?;
        let w2 = binding.var(&name("ffn.w2"))?;
        let b2 = binding.var(&name("ffn.b2"))?;
        let ff = tape.dense(normed, w1, b1)?;
        let ff = tape.relu(ff)?;
        let ff = tape.dense(ff, w2, b2)?;
        let ff = maybe_dropout(tape, ff, cfg.dropout, &mut dropout_rng)?;
        h = tape.add(h, ff)?;
    }

    let g = binding.var("trf.final.g")?;
    let b = binding.var("trf.final.b")?;
    tape.layer_norm(h, g, b, LN_EPS)
}
