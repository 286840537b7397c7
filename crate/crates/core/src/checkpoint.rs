//! Binary checkpoints (`DANN` files).
//!
//! Layout: magic `DANN`, version u32, tensor count u32, then per tensor the
//! name length u32, UTF-8 name, rank u32, dims u32 each and the values as
//! f64, all little-endian. Besides the model parameters a checkpoint holds
//! the architecture (`meta.arch`), the framing (`meta.framing`) and the
//! normalisation statistics (`norm.mean`, `norm.std`) as plain tensors.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::binio::{len_u32, put_u32, read_file, write_file, Reader};
use crate::data::{FrameConfig, NormStats};
use crate::error::{Error, Result};
use crate::model::{ArchConfig, ConvSpec, DannModel};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"DANN";
pub const CHECKPOINT_VERSION: u32 = 1;

pub fn encode_tensors(tensors: &[(String, Tensor)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    put_u32(&mut out, CHECKPOINT_VERSION);
    put_u32(&mut out, len_u32(tensors.len(), "tensor count")?);
    for (name, t) in tensors {
        put_u32(&mut out, len_u32(name.len(), "name length")?);
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, len_u32(t.rank(), "rank")?);
        for &d in t.shape() {
            put_u32(&mut out, len_u32(d, "dimension")?);
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode_tensors(bytes: &[u8], path: &Path) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader::new(bytes, path);
    r.magic(CHECKPOINT_MAGIC)?;
    r.version(CHECKPOINT_VERSION)?;
    let count = r.u32()?;
    let mut out = Vec::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.bytes(len)?)
            .map_err(|_| r.error("tensor name is not UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let shape = (0..rank)
            .map(|_| r.u32().map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| r.error(format!("{name}: element count overflows")))?;
        if n.checked_mul(8).is_none_or(|b| b > bytes.len()) {
            return Err(r.error(format!("{name}: shape {shape:?} exceeds file size")));
        }
        let data = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        let t = Tensor::new(&shape, data).map_err(|e| r.error(format!("{name}: {e}")))?;
        out.push((name, t));
    }
    r.finish()?;
    Ok(out)
}

/// A trained model plus everything needed to feed it raw signals.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: DannModel,
    pub framing: FrameConfig,
    pub stats: NormStats,
}

fn arch_tensor(arch: &ArchConfig) -> Tensor {
    let mut v = vec![
        arch.input_len,
        arch.pool,
        arch.head_depth,
        arch.head_width,
        arch.num_classes,
        arch.convs.len(),
    ];
    for c in &arch.convs {
        v.extend([c.width, c.maps, c.stride]);
    }
    let data: Vec<f64> = v.into_iter().map(|x| x as f64).collect();
    Tensor::new(&[data.len()], data).expect("non-empty")
}

fn as_counts(t: &Tensor, what: &str, path: &Path) -> Result<Vec<usize>> {
    t.data()
        .iter()
        .map(|&x| {
            if x >= 0.0 && x.fract() == 0.0 && x <= u32::MAX as f64 {
                Ok(x as usize)
            } else {
                Err(Error::format(path, format!("{what}: {x} is not a count")))
            }
        })
        .collect()
}

fn arch_from(t: &Tensor, path: &Path) -> Result<ArchConfig> {
    let v = as_counts(t, "meta.arch", path)?;
    let bad = || Error::format(path, "malformed meta.arch");
    if v.len() < 6 || v.len() != 6 + 3 * v[5] {
        return Err(bad());
    }
    Ok(ArchConfig {
        input_len: v[0],
        pool: v[1],
        head_depth: v[2],
        head_width: v[3],
        num_classes: v[4],
        convs: v[6..]
            .chunks_exact(3)
            .map(|c| ConvSpec { width: c[0], maps: c[1], stride: c[2] })
            .collect(),
    })
}

impl Checkpoint {
    pub fn tensors(&self) -> Vec<(String, Tensor)> {
        let f = &self.framing;
        let framing = [f.window_ms, f.shift_ms, f.context_frames].map(f64::from);
        let vec1 = |v: &[f64]| Tensor::new(&[v.len()], v.to_vec()).expect("non-empty");
        let mut out = vec![
            ("meta.arch".to_string(), arch_tensor(self.model.arch())),
            ("meta.framing".to_string(), vec1(&framing)),
            ("norm.mean".to_string(), vec1(&self.stats.mean)),
            ("norm.std".to_string(), vec1(&self.stats.std)),
        ];
        out.extend(
            self.model
                .named_params()
                .into_iter()
                .map(|(name, _, t)| (name, t.clone())),
        );
        out
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        encode_tensors(&self.tensors())
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Checkpoint> {
        let tensors = decode_tensors(bytes, path)?;
        let find = |name: &str| {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::format(path, format!("missing tensor {name}")))
        };
        let arch = arch_from(find("meta.arch")?, path)?;
        let fr = as_counts(find("meta.framing")?, "meta.framing", path)?;
        let [window_ms, shift_ms, context_frames] = fr[..] else {
            return Err(Error::format(path, "malformed meta.framing"));
        };
        let framing = FrameConfig {
            window_ms: window_ms as u32,
            shift_ms: shift_ms as u32,
            context_frames: context_frames as u32,
        };
        let stats = NormStats {
            mean: find("norm.mean")?.data().to_vec(),
            std: find("norm.std")?.data().to_vec(),
        };
        if stats.mean.len() != stats.std.len() {
            return Err(Error::format(path, "norm.mean and norm.std differ in length"));
        }

        let mut model = DannModel::new(arch, &mut ChaCha8Rng::seed_from_u64(0))
            .map_err(|e| Error::format(path, e.to_string()))?;
        let expected: Vec<String> = model.named_params().into_iter().map(|(n, _, _)| n).collect();
        let params = tensors
            .iter()
            .filter(|(n, _)| !n.starts_with("meta.") && !n.starts_with("norm."));
        let mut loaded = 0;
        for (name, t) in params {
            model
                .set_param(name, t.clone())
                .map_err(|e| Error::format(path, e.to_string()))?;
            loaded += 1;
        }
        if loaded != expected.len() {
            return Err(Error::format(
                path,
                format!("expected {} parameter tensors, found {loaded}", expected.len()),
            ));
        }
        Ok(Checkpoint {
            model,
            framing,
            stats,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.encode()?)
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::decode(&read_file(path)?, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> Checkpoint {
        let arch = ArchConfig {
            input_len: 30,
            convs: vec![ConvSpec { width: 4, maps: 2, stride: 2 }],
            pool: 2,
            head_depth: 2,
            head_width: 3,
            num_classes: 3,
        };
        Checkpoint {
            model: DannModel::new(arch, &mut ChaCha8Rng::seed_from_u64(4)).unwrap(),
            framing: FrameConfig { window_ms: 10, shift_ms: 10, context_frames: 3 },
            stats: NormStats { mean: vec![0.5; 30], std: vec![2.0; 30] },
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let ck = sample();
        let bytes = ck.encode().unwrap();
        assert_eq!(&bytes[..4], b"DANN");
        let back = Checkpoint::decode(&bytes, Path::new("ck")).unwrap();
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.framing, ck.framing);
        assert_eq!(back.model.arch(), ck.model.arch());
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut bytes = sample().encode().unwrap();
        bytes[4..8].copy_from_slice(&7u32.to_le_bytes());
        let err = Checkpoint::decode(&bytes, Path::new("ck")).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn missing_parameter_is_rejected() {
        let mut tensors = sample().tensors();
        tensors.pop();
        let bytes = encode_tensors(&tensors).unwrap();
        assert!(matches!(
            Checkpoint::decode(&bytes, Path::new("ck")),
            Err(Error::Format { .. })
        ));
    }

    proptest! {
        #[test]
        fn tensor_records_round_trip(
            entries in prop::collection::vec(
                ("[a-z.0-9]{1,12}", prop::collection::vec(1usize..4, 1..4), -1e9f64..1e9),
                0..5,
            )
        ) {
            let tensors: Vec<(String, Tensor)> = entries
                .into_iter()
                .map(|(name, shape, v)| {
                    let n: usize = shape.iter().product();
                    let data = (0..n).map(|i| v + i as f64).collect();
                    (name, Tensor::new(&shape, data).unwrap())
                })
                .collect();
            let bytes = encode_tensors(&tensors).unwrap();
            let back = decode_tensors(&bytes, Path::new("p")).unwrap();
            prop_assert_eq!(&back, &tensors);
            prop_assert_eq!(encode_tensors(&back).unwrap(), bytes);
        }
    }
}
