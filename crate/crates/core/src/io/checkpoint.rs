//! Versioned binary model checkpoints.
//!
//! Layout (integers and floats little-endian):
//!
//! ```text
//! "ECGSL"  magic
//! u16      format version (currently 1)
//! u8       stage tag (0 ae, 1 masked, 2 finetuned)
//! u64      training seed
//! config:  u32 seg_len, u32 classes, 6×u32 channels, u32 kernel,
//!          u32 stride, u32 embed_dim, u32 layers, u32 heads,
//!          u32 model_dim, u32 ffn_dim, f64 dropout
//! u32      parameter count, then per parameter:
//!          u32+bytes name, u32 ndim, ndim×u32 dims, u32 n, n×f32 data
//! u8       optimizer flag; 1 is followed by u64 step, u32 count, then per
//!          entry: u32+bytes name, u32 n, n×f32 m, n×f32 v
//! ```
//!
//! Reads validate magic, version, config, and the full parameter name and
//! shape table against a freshly initialized model before materializing
//! anything, so a loaded checkpoint is always structurally sound.

use super::atomic_write;
use crate::error::{Error, Result};
use crate::model::{
    ModelConfig, ModelState, ParamSet, Stage, StructuralEncoderConfig, TransformerConfig,
};
use crate::tensor::TensorData;
use std::path::Path;

pub const CHECKPOINT_VERSION: u16 = 1;
const MAGIC: &[u8; 5] = b"ECGSL";

/// A model plus the metadata needed to continue or audit a run.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub state: ModelState,
    pub stage: Stage,
    pub seed: u64,
    /// Adam step counter and moment buffers, when the writer chose to make
    /// the run resumable.
    pub moments: Option<(u64, Vec<(String, Vec<f32>, Vec<f32>)>)>,
}

fn push_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn push_str(out: &mut Vec<u8>, s: &str) {
    push_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

fn push_f32s(out: &mut Vec<u8>, data: &[f32]) {
    for &v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialize and atomically write a checkpoint.
pub fn write_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    let cfg = &ckpt.state.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(ckpt.stage.tag());
    out.extend_from_slice(&ckpt.seed.to_le_bytes());

    push_u32(&mut out, cfg.seg_len);
    push_u32(&mut out, cfg.classes);
    for &c in &cfg.encoder.channels {
        push_u32(&mut out, c);
    }
    push_u32(&mut out, cfg.encoder.kernel_size);
    push_u32(&mut out, cfg.encoder.stride);
    push_u32(&mut out, cfg.encoder.embed_dim);
    push_u32(&mut out, cfg.transformer.num_layers);
    push_u32(&mut out, cfg.transformer.num_heads);
    push_u32(&mut out, cfg.transformer.model_dim);
    push_u32(&mut out, cfg.transformer.ffn_dim);
    out.extend_from_slice(&cfg.transformer.dropout.to_le_bytes());

    push_u32(&mut out, ckpt.state.params.len());
    for (name, tensor) in ckpt.state.params.iter() {
        push_str(&mut out, name);
        push_u32(&mut out, tensor.shape().len());
        for &d in tensor.shape() {
            push_u32(&mut out, d);
        }
        push_u32(&mut out, tensor.data().len());
        push_f32s(&mut out, tensor.data());
    }

    match &ckpt.moments {
        None => out.push(0),
        Some((step, entries)) => {
            out.push(1);
            out.extend_from_slice(&step.to_le_bytes());
            push_u32(&mut out, entries.len());
            for (name, m, v) in entries {
                if m.len() != v.len() {
                    return Err(Error::CheckpointShape(format!(
                        "moment buffers for '{name}' disagree: {} vs {}",
                        m.len(),
                        v.len()
                    )));
                }
                push_str(&mut out, name);
                push_u32(&mut out, m.len());
                push_f32s(&mut out, m);
                push_f32s(&mut out, v);
            }
        }
    }
    atomic_write(path, &out)
}

struct Reader<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.data.len() {
            return Err(Error::CheckpointTruncated);
        }
        let out = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().expect("8 bytes")))
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let b = self.take(n * 4)?;
        Ok(b.chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()?;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::CheckpointShape("parameter name is not UTF-8".into()))
    }
}

/// Read and validate a checkpoint.
pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    let mut r = Reader {
        data: &bytes,
        pos: 0,
    };
    if r.take(5)? != MAGIC {
        return Err(Error::CheckpointMagic);
    }
    let version = r.u16()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion(version));
    }
    let stage = Stage::from_tag(r.u8()?)?;
    let seed = r.u64()?;

    let seg_len = r.u32()?;
    let classes = r.u32()?;
    let mut channels = [0usize; 6];
    for c in &mut channels {
        *c = r.u32()?;
    }
    let config = ModelConfig {
        seg_len,
        classes,
        encoder: StructuralEncoderConfig {
            channels,
            kernel_size: r.u32()?,
            stride: r.u32()?,
            embed_dim: r.u32()?,
        },
        transformer: TransformerConfig {
            num_layers: r.u32()?,
            num_heads: r.u32()?,
            model_dim: r.u32()?,
            ffn_dim: r.u32()?,
            dropout: r.f64()?,
        },
    };
    config.validate()?;

    let count = r.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let name = r.string()?;
        let ndim = r.u32()?;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(r.u32()?);
        }
        let n = r.u32()?;
        if shape.iter().product::<usize>() != n {
            return Err(Error::CheckpointShape(format!(
                "'{name}': {n} elements do not fill shape {shape:?}"
            )));
        }
        let data = r.f32s(n)?;
        params.insert(name, TensorData::new(shape, data)?)?;
    }

    // Any structurally valid model for this config has exactly the name
    // and shape table of a fresh init; anything else is corruption.
    let expected = ModelState::init(config.clone(), 0)?;
    if params.len() != expected.params.len() {
        return Err(Error::CheckpointShape(format!(
            "{} parameters stored, model needs {}",
            params.len(),
            expected.params.len()
        )));
    }
    for ((got_name, got), (want_name, want)) in params.iter().zip(expected.params.iter()) {
        if got_name != want_name || got.shape() != want.shape() {
            return Err(Error::CheckpointShape(format!(
                "parameter {got_name} {:?} where {want_name} {:?} belongs",
                got.shape(),
                want.shape()
            )));
        }
    }

    let moments = match r.u8()? {
        0 => None,
        1 => {
            let step = r.u64()?;
            let n = r.u32()?;
            let mut entries = Vec::with_capacity(n);
            for _ in 0..n {
                let name = r.string()?;
                let len = r.u32()?;
                let expected_len = params.get(&name)?.data().len();
                if len != expected_len {
                    return Err(Error::CheckpointShape(format!(
                        "moments for '{name}' hold {len} values, parameter has {expected_len}"
                    )));
                }
                let m = r.f32s(len)?;
                let v = r.f32s(len)?;
                entries.push((name, m, v));
            }
            Some((step, entries))
        }
        f => {
            return Err(Error::CheckpointShape(format!(
                "bad optimizer flag {f}"
            )))
        }
    };
    if r.pos != bytes.len() {
        return Err(Error::CheckpointShape(format!(
            "{} trailing bytes",
            bytes.len() - r.pos
        )));
    }

    Ok(Checkpoint {
        state: ModelState { config, params },
        stage,
        seed,
        moments,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::{Adam, AdamConfig};

    fn small_state(seed: u64) -> ModelState {
        let cfg = ModelConfig {
            seg_len: 16,
            classes: 3,
            encoder: StructuralEncoderConfig {
                channels: [2, 2, 2, 2, 2, 4],
                kernel_size: 5,
                stride: 2,
                embed_dim: 8,
            },
            transformer: TransformerConfig {
                num_layers: 1,
                num_heads: 2,
                model_dim: 8,
                ffn_dim: 16,
                dropout: 0.1,
            },
        };
        ModelState::init(cfg, seed).unwrap()
    }

    fn ckpt(seed: u64) -> Checkpoint {
        Checkpoint {
            state: small_state(seed),
            stage: Stage::Masked,
            seed,
            moments: None,
        }
    }

    #[test]
    fn round_trip_is_bitwise_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let original = ckpt(11);
        write_checkpoint(&original, &path).unwrap();
        let back = read_checkpoint(&path).unwrap();
        assert_eq!(back.stage, Stage::Masked, "stage tag survives");
        assert_eq!(back.seed, 11, "seed survives");
        assert_eq!(back.state.config, original.state.config, "config survives");
        assert!(back.moments.is_none(), "no optimizer state was stored");
        for ((an, a), (bn, b)) in original.state.params.iter().zip(back.state.params.iter()) {
            assert_eq!(an, bn, "parameter order survives");
            assert_eq!(a.shape(), b.shape(), "{an} shape survives");
            assert_eq!(a.data(), b.data(), "{an} values are bit-exact");
        }
    }

    #[test]
    fn optimizer_state_round_trips_exactly_and_resumes() {
        // Run Adam a few steps, pass its moments through a checkpoint file,
        // restore, and confirm the next step is bitwise identical to an
        // uninterrupted run.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("resume.ckpt");
        let state = small_state(1);
        let name = state.params.names().next().unwrap().to_string();
        let n = state.params.get(&name).unwrap().data().len();

        let mut probe = ParamSet::new();
        probe
            .insert(&name, TensorData::new(vec![n], vec![0.3f32; n]).unwrap())
            .unwrap();
        let grads = |p: &ParamSet| {
            let data = p.get(&name).unwrap().data();
            vec![(name.clone(), data.iter().map(|&x| 2.0 * x).collect::<Vec<f32>>())]
        };
        let mut opt = Adam::new(AdamConfig::with_lr(0.05)).unwrap();
        for _ in 0..4 {
            let g = grads(&probe);
            opt.step(&mut probe, &g).unwrap();
        }

        let moments: Vec<_> = opt
            .moments(&probe)
            .map(|(n, m, v)| (n.to_string(), m.to_vec(), v.to_vec()))
            .collect();
        let saved = Checkpoint {
            state,
            stage: Stage::Autoencoder,
            seed: 9,
            moments: Some((opt.step_count(), moments.clone())),
        };
        write_checkpoint(&saved, &path).unwrap();
        let (step, got) = read_checkpoint(&path).unwrap().moments.unwrap();
        assert_eq!(step, 4, "step counter survives");
        assert_eq!(got, moments, "moment buffers are bit-exact");

        let mut resumed = Adam::new(AdamConfig::with_lr(0.05)).unwrap();
        resumed.restore(step, got);
        let mut probe2 = probe.clone();
        let g = grads(&probe);
        opt.step(&mut probe, &g).unwrap();
        let g2 = grads(&probe2);
        resumed.step(&mut probe2, &g2).unwrap();
        assert_eq!(
            probe.get(&name).unwrap().data(),
            probe2.get(&name).unwrap().data(),
            "restored optimizer continues bitwise identically"
        );
    }

    #[test]
    fn corrupted_magic_is_a_magic_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        write_checkpoint(&ckpt(2), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap_err().code(), "ckpt-magic");
    }

    #[test]
    fn bumped_version_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("v.ckpt");
        write_checkpoint(&ckpt(3), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes[5] = 0x63; // version 99
        std::fs::write(&path, &bytes).unwrap();
        match read_checkpoint(&path).unwrap_err() {
            Error::CheckpointVersion(99) => {}
            other => panic!("expected version error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_file_is_a_truncation_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.ckpt");
        write_checkpoint(&ckpt(4), &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        for cut in [4, 20, bytes.len() / 2, bytes.len() - 1] {
            std::fs::write(&path, &bytes[..cut]).unwrap();
            assert_eq!(
                read_checkpoint(&path).unwrap_err().code(),
                "ckpt-truncated",
                "cut at {cut} bytes"
            );
        }
    }

    #[test]
    fn renamed_parameter_is_a_shape_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.ckpt");
        write_checkpoint(&ckpt(5), &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        // first parameter name starts right after the fixed header; flip a
        // letter inside it
        let name_at = bytes.windows(4).position(|w| w == b"enc.").unwrap();
        bytes[name_at] = b'x';
        std::fs::write(&path, &bytes).unwrap();
        assert_eq!(read_checkpoint(&path).unwrap_err().code(), "ckpt-shape");
    }
}
