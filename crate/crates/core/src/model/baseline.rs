//! Reference classifier that skips segmentation entirely: a plain CNN over
//! the raw preprocessed signal, used to compare against the
//! segment-sequence model.

use crate::error::{Error, Result};
use crate::model::params::{init_uniform, ParamSet};
use crate::model::Binding;
use crate::tensor::{Scalar, Tape, TensorData, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const CHANNELS: [usize; 6] = [32, 32, 64, 64, 128, 256];
const KERNEL: usize = 5;
/// Each of the six max-pool layers halves the length, so inputs must be at
/// least 2^6 samples for the final feature map to be non-empty.
pub const MIN_INPUT_LEN: usize = 64;

/// Weights for the flat CNN: six conv+pool blocks and a dense output.
#[derive(Clone, Debug)]
pub struct BaselineCnn {
    pub classes: usize,
    pub params: ParamSet,
}

impl BaselineCnn {
    pub fn init(classes: usize, seed: u64) -> Result<Self> {
        if classes < 1 {
            return Err(Error::InvalidConfig("need at least 1 class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ParamSet::new();
        let mut cin = 1;
        for (i, &cout) in CHANNELS.iter().enumerate() {
            p.insert(
                format!("cnn.conv{i}.w"),
                init_uniform(&mut rng, vec![cout, cin, KERNEL], cin * KERNEL),
            )?;
            // small positive bias so no ReLU filter is born dead
            p.insert(format!("cnn.conv{i}.b"), TensorData::filled(vec![cout], 0.01))?;
            cin = cout;
        }
        p.insert(
            "cnn.out.w",
            init_uniform(&mut rng, vec![CHANNELS[5], classes], CHANNELS[5]),
        )?;
        p.insert("cnn.out.b", TensorData::zeros(vec![classes]))?;
        Ok(Self { classes, params: p })
    }
}

/// Forward pass: `[B, L]` raw signals to `[B, classes]` logits.
///
/// Six blocks of same-length conv (stride 1, kernel 5) + ReLU + width-2
/// max pooling, then global average pooling and a dense layer.
pub fn baseline_cnn_forward<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &Binding,
    signals: Var,
) -> Result<Var> {
    let shape = tape.value(signals).shape().to_vec();
    let (b, l) = match shape[..] {
        [b, l] => (b, l),
        _ => return Err(Error::Shape(format!("expected [B, L] input, got {shape:?}"))),
    };
    if l < MIN_INPUT_LEN {
        return Err(Error::Shape(format!(
            "input length {l} below minimum {MIN_INPUT_LEN} for six pooling stages"
        )));
    }
    let mut h = tape.reshape(signals, vec![b, 1, l])?;
    for i in 0..6 {
        let w = binding.var(&format!("cnn.conv{i}.w"))?;
        let bias = binding.var(&format!("cnn.conv{i}.b"))?;
        h = tape.conv1d(h, w, Some(bias), 1, KERNEL / 2)?;
        h = tape.relu(h)?;
        h = tape.maxpool1d(h, 2, 2)?;
    }
    let pooled = tape.avgpool_full(h)?; // [B, 256]
    let w = binding.var("cnn.out.w")?;
    let bias = binding.var("cnn.out.b")?;
    tape.dense(pooled, w, bias)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::bind;
    use rand::Rng;

    fn random_signals(b: usize, l: usize, seed: u64) -> TensorData<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..b * l).map(|_| rng.gen_range(-1.0..1.0)).collect();
        TensorData::new(vec![b, l], data).unwrap()
    }

    #[test]
    fn forward_produces_logits_per_class() {
        let model = BaselineCnn::init(3, 51).unwrap();
        let mut tape = Tape::<f64>::new();
        let binding = bind(&mut tape, &model.params, false).unwrap();
        let x = tape.constant(random_signals(4, 600, 1)).unwrap();
        let logits = baseline_cnn_forward(&mut tape, &binding, x).unwrap();
        assert_eq!(tape.value(logits).shape(), [4, 3], "one logit row per signal");
        assert!(tape.value(logits).all_finite(), "logits must be finite");
    }

    #[test]
    fn initialization_is_seed_deterministic() {
        let a = BaselineCnn::init(2, 9).unwrap();
        let b = BaselineCnn::init(2, 9).unwrap();
        for (name, t) in a.params.iter() {
            assert_eq!(
                t.data(),
                b.params.get(name).unwrap().data(),
                "tensor {name} differs between same-seed inits"
            );
        }
    }

    #[test]
    fn short_input_is_rejected() {
        let model = BaselineCnn::init(2, 52).unwrap();
        let mut tape = Tape::<f64>::new();
        let binding = bind(&mut tape, &model.params, false).unwrap();
        let x = tape.constant(random_signals(1, 32, 2)).unwrap();
        assert!(
            baseline_cnn_forward(&mut tape, &binding, x).is_err(),
            "32 samples cannot survive six halvings"
        );
    }
}
