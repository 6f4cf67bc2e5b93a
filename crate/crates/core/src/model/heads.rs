//! Output heads: attention pooling over the beat sequence and the class
//! logits MLP. Segment reconstruction goes through the structural decoder
//! so the masked stage inherits the autoencoder's output mapping.

use crate::error::{Error, Result};
use crate::model::Binding;
use crate::tensor::{Scalar, Tape, TensorData, Var};

/// Collapse a hidden sequence `[T, d]` to one vector `[1, d]` with learned
/// attention weights. Padding positions get exactly zero weight. Returns
/// `(pooled, weights)` where `weights` is `[1, T]`.
pub fn attention_pool<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &Binding,
    hidden: Var,
    mask: &[bool],
) -> Result<(Var, Var)> {
    let shape = tape.value(hidden).shape().to_vec();
    let (t_steps, _d) = match shape[..] {
        [t, d] => (t, d),
        _ => return Err(Error::Shape(format!("expected [T, d] input, got {shape:?}"))),
    };
    if mask.len() != t_steps {
        return Err(Error::Shape(format!(
            "mask length {} does not match {t_steps} positions",
            mask.len()
        )));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::InvalidConfig(
            "cannot pool a sequence that is all padding".into(),
        ));
    }
    let w = binding.var("pool.w")?;
    let v = binding.var("pool.v")?;
    let proj = tape.matmul(hidden, w)?;
    let proj = tape.tanh(proj)?;
    let scores = tape.matmul(proj, v)?; // [T, 1]
    let scores = tape.transpose(scores)?; // [1, T]

    let bias: Vec<S> = mask
        .iter()
        .map(|&m| if m { S::ZERO } else { S::c(-1e9) })
        .collect();
    let bias = tape.constant(TensorData::new(vec![1, t_steps], bias)?)?;
    let scores = tape.add(scores, bias)?;
    let weights = tape.softmax(scores)?;
    let pooled = tape.matmul(weights, hidden)?;
    Ok((pooled, weights))
}

/// Class logits from pooled vectors: `[B, d] -> [B, classes]` through one
/// hidden ReLU layer.
pub fn classify<S: Scalar>(tape: &mut Tape<S>, binding: &Binding, pooled: Var) -> Result<Var> {
    let w1 = binding.var("cls.w1")?;
    let b1 = binding.var("cls.b1")?;
    let w2 = binding.var("cls.w2")?;
    let b2 = binding.var("cls.b2")?;
    let h = tape.dense(pooled, w1, b1)?;
    let h = tape.relu(h)?;
    tape.dense(h, w2, b2)
}
