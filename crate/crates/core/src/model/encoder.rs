//! Per-segment structural embedding: a strided conv stack maps each
//! heartbeat segment to a fixed-size vector, and a mirrored transposed
//! stack maps it back for reconstruction objectives.

use crate::error::{Error, Result};
use crate::model::{Binding, ModelConfig};
use crate::tensor::{Scalar, Tape, Var};

/// Encode a batch of segments `[N, S]` into embeddings `[N, d]`.
///
/// Each row runs through six stride-2 convolutions with ReLU, the result is
/// flattened, and a dense projection produces the embedding. The whole batch
/// goes through as one `[N, 1, S]` tensor.
pub fn encode_segments<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &Binding,
    cfg: &ModelConfig,
    segments: Var,
) -> Result<Var> {
    let shape = tape.value(segments).shape().to_vec();
    let (n, s) = match shape[..] {
        [n, s] => (n, s),
        _ => return Err(Error::Shape(format!("segments must be [N, S], got {shape:?}"))),
    };
    if s != cfg.seg_len {
        return Err(Error::Shape(format!(
            "segment length {s} does not match configured {}",
            cfg.seg_len
        )));
    }
    let stride = cfg.encoder.stride;
    let pad = cfg.conv_padding();
    let mut h = tape.reshape(segments, vec![n, 1, s])?;
    for i in 0..6 {
        let w = binding.var(&format!("enc.conv{i}.w"))?;
        let b = binding.var(&format!("enc.conv{i}.b"))?;
        h = tape.conv1d(h, w, Some(b), stride, pad)?;
        h = tape.relu(h)?;
    }
    let h = tape.reshape(h, vec![n, cfg.flatten_len()])?;
    let w = binding.var("enc.proj.w")?;
    let b = binding.var("enc.proj.b")?;
    tape.dense(h, w, b)
}

/// Decode embeddings `[N, d]` back to segments `[N, S]` in `[0, 1]`.
///
/// Dense projection up to the flattened conv shape, ReLU, then six
/// transposed convolutions mirroring the encoder; output padding per layer
/// is chosen so the length chain retraces the encoder's exactly. Sigmoid
/// keeps outputs in the normalized segment range.
pub fn decode_embeddings<S: Scalar>(
    tape: &mut Tape<S>,
    binding: &Binding,
    cfg: &ModelConfig,
    embeddings: Var,
) -> Result<Var> {
    let shape = tape.value(embeddings).shape().to_vec();
    let (n, d) = match shape[..] {
        [n, d] => (n, d),
        _ => {
            return Err(Error::Shape(format!(
                "embeddings must be [N, d], got {shape:?}"
            )))
        }
    };
    if d != cfg.encoder.embed_dim {
        return Err(Error::Shape(format!(
            "embedding dim {d} does not match configured {}",
            cfg.encoder.embed_dim
        )));
    }
    let stride = cfg.encoder.stride;
    let pad = cfg.conv_padding();
    let ops = cfg.decoder_output_paddings();
    let deep_len = cfg.encoder_lengths()[6];

    let w = binding.var("dec.proj.w")?;
    let b = binding.var("dec.proj.b")?;
    let h = tape.dense(embeddings, w, b)?;
    let h = tape.relu(h)?;
    let mut h = tape.reshape(h, vec![n, cfg.encoder.channels[5], deep_len])?;
    for i in 0..6 {
        let w = binding.var(&format!("dec.tconv{i}.w"))?;
        let b = binding.var(&format!("dec.tconv{i}.b"))?;
        h = tape.conv1d_transpose(h, w, Some(b), stride, pad, ops[i])?;
        if i < 5 {
            h = tape.relu(h)?;
        }
    }
    let h = tape.reshape(h, vec![n, cfg.seg_len])?;
    tape.sigmoid(h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bind, ModelConfig, ModelState};
    use crate::tensor::{Tape, TensorData};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_segments(n: usize, s: usize, seed: u64) -> TensorData<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..n * s).map(|_| rng.gen_range(0.0..1.0)).collect();
        TensorData::new(vec![n, s], data).unwrap()
    }

    #[test]
    fn encoder_maps_fifty_segments_to_embeddings() {
        let state = ModelState::init(ModelConfig::default(), 11).unwrap();
        let mut tape = Tape::<f64>::new();
        let binding = bind(&mut tape, &state.params, false).unwrap();
        let x = tape.constant(random_segments(50, 100, 1)).unwrap();
        let e = encode_segments(&mut tape, &binding, &state.config, x).unwrap();
        assert_eq!(
            tape.value(e).shape(),
            [50, 64],
            "embedding batch shape should be [N, embed_dim]"
        );
        assert!(tape.value(e).all_finite(), "embeddings must be finite");
    }

    #[test]
    fn decoder_restores_segment_length_and_range() {
        let state = ModelState::init(ModelConfig::default(), 12).unwrap();
        let mut tape = Tape::<f64>::new();
        let binding = bind(&mut tape, &state.params, false).unwrap();
        let x = tape.constant(random_segments(7, 100, 2)).unwrap();
        let e = encode_segments(&mut tape, &binding, &state.config, x).unwrap();
        let r = decode_embeddings(&mut tape, &binding, &state.config, e).unwrap();
        assert_eq!(
            tape.value(r).shape(),
            [7, 100],
            "reconstruction should match the input segment shape"
        );
        for &v in tape.value(r).data() {
            assert!(
                (0.0..=1.0).contains(&v),
                "sigmoid output {v} escaped [0, 1]"
            );
        }
    }

    #[test]
    fn batch_encoding_matches_single_segment_encoding() {
        let state = ModelState::init(ModelConfig::default(), 13).unwrap();
        let batch = random_segments(6, 100, 3);
        let mut tape = Tape::<f64>::new();
        let binding = bind(&mut tape, &state.params, false).unwrap();
        let x = tape.constant(batch.clone()).unwrap();
        let e = encode_segments(&mut tape, &binding, &state.config, x).unwrap();
        let batched = tape.value(e).data().to_vec();

        for row in 0..6 {
            let mut tape = Tape::<f64>::new();
            let binding = bind(&mut tape, &state.params, false).unwrap();
            let one = TensorData::new(
                vec![1, 100],
                batch.data()[row * 100..(row + 1) * 100].to_vec(),
            )
            .unwrap();
            let x = tape.constant(one).unwrap();
            let e = encode_segments(&mut tape, &binding, &state.config, x).unwrap();
            let single = tape.value(e).data();
            for (j, (&a, &b)) in batched[row * 64..(row + 1) * 64]
                .iter()
                .zip(single)
                .enumerate()
            {
                assert!(
                    (a - b).abs() < 1e-6,
                    "row {row} col {j}: batched {a} vs single {b}"
                );
            }
        }
    }

    #[test]
    fn small_segment_length_still_round_trips() {
        let mut cfg = ModelConfig::default();
        cfg.seg_len = 16;
        cfg.encoder.channels = [4, 4, 4, 8, 8, 8];
        let state = ModelState::init(cfg, 5).unwrap();
        let mut tape = Tape::<f64>::new();
        let binding = bind(&mut tape, &state.params, false).unwrap();
        let x = tape.constant(random_segments(3, 16, 9)).unwrap();
        let e = encode_segments(&mut tape, &binding, &state.config, x).unwrap();
        let r = decode_embeddings(&mut tape, &binding, &state.config, e).unwrap();
        assert_eq!(tape.value(r).shape(), [3, 16], "short segments round trip");
    }

    #[test]
    fn wrong_segment_length_is_rejected() {
        let state = ModelState::init(ModelConfig::default(), 7).unwrap();
        let mut tape = Tape::<f64>::new();
        let binding = bind(&mut tape, &state.params, false).unwrap();
        let x = tape.constant(random_segments(2, 64, 4)).unwrap();
        let err = encode_segments(&mut tape, &binding, &state.config, x);
        assert!(err.is_err(), "length-64 segments must not pass a 100-config");
    }
}
