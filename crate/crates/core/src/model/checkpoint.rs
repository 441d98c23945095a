//! Flat binary checkpoint format.
//!
//! Layout: 10 magic bytes `COBRACKPT1`, then a u32 tensor count, then each
//! tensor in lexicographic path order as
//! `path_len: u32, path_bytes, rank: u32, dims: u32 each, values: f64 each`.
//! All integers and floats are little-endian; values are raw IEEE-754 bits,
//! so a save/load round trip is bit-exact.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{param_shapes, ModelParams, SnakeConfig};
use crate::tensor::NdArray;

pub const CHECKPOINT_MAGIC: &[u8; 10] = b"COBRACKPT1";

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let mut buf = Vec::with_capacity(10 + 4 + params.total_values() * 8);
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    let count = u32::try_from(params.len())
        .map_err(|_| Error::invalid("too many tensors for checkpoint format"))?;
    buf.extend_from_slice(&count.to_le_bytes());
    for (name, tensor) in params.iter() {
        let name_bytes = name.as_bytes();
        let name_len = u32::try_from(name_bytes.len())
            .map_err(|_| Error::invalid(format!("tensor path too long: `{name}`")))?;
        buf.extend_from_slice(&name_len.to_le_bytes());
        buf.extend_from_slice(name_bytes);
        let rank = u32::try_from(tensor.rank()).expect("rank fits u32");
        buf.extend_from_slice(&rank.to_le_bytes());
        for &d in tensor.shape() {
            let dim = u32::try_from(d)
                .map_err(|_| Error::invalid(format!("dimension too large in `{name}`")))?;
            buf.extend_from_slice(&dim.to_le_bytes());
        }
        for &v in tensor.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, buf)?;
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::parse("checkpoint", "unexpected end of file")),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        let b = self.take(8)?;
        Ok(f64::from_le_bytes(b.try_into().unwrap()))
    }
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let bytes = fs::read(path.as_ref())?;
    let mut r = Reader { bytes: &bytes, pos: 0 };
    let magic = r.take(CHECKPOINT_MAGIC.len())?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::parse("checkpoint", "bad magic bytes"));
    }
    let count = r.u32()? as usize;
    let mut params = ModelParams::new();
    for _ in 0..count {
        let name_len = r.u32()? as usize;
        let name_bytes = r.take(name_len)?;
        let name = std::str::from_utf8(name_bytes)
            .map_err(|_| Error::parse("checkpoint", "tensor path is not valid UTF-8"))?
            .to_string();
        let rank = r.u32()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        let len: usize = shape.iter().product();
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(r.f64()?);
        }
        if params.get(&name).is_some() {
            return Err(Error::parse(
                "checkpoint",
                format!("duplicate tensor path `{name}`"),
            ));
        }
        params.insert(name, NdArray::from_vec(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(Error::parse("checkpoint", "trailing bytes after last tensor"));
    }
    Ok(params)
}

/// Verifies that a parameter set has exactly the tensors and shapes the
/// config demands, reporting the lexicographically first offender.
pub fn check_shapes(params: &ModelParams, cfg: &SnakeConfig) -> Result<()> {
    let expected = param_shapes(cfg)?;
    for (path, want) in &expected {
        match params.get(path) {
            None => {
                return Err(Error::CheckpointMismatch {
                    path: path.clone(),
                    expected: want.clone(),
                    found: vec![],
                })
            }
            Some(t) if t.shape() != &want[..] => {
                return Err(Error::CheckpointMismatch {
                    path: path.clone(),
                    expected: want.clone(),
                    found: t.shape().to_vec(),
                })
            }
            Some(_) => {}
        }
    }
    for (path, _) in params.iter() {
        if !expected.contains_key(path) {
            return Err(Error::invalid(format!(
                "checkpoint holds unexpected tensor `{path}`"
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_params() -> ModelParams {
        let mut p = ModelParams::new();
        p.insert("b.weight", NdArray::from_vec(&[2, 2], vec![1.0, -0.5, 0.25, 1e-300]).unwrap());
        p.insert("a.bias", NdArray::from_vec(&[3], vec![0.1, 0.2, 0.3]).unwrap());
        p
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.ckpt");
        let p = sample_params();
        save_checkpoint(&p, &file).unwrap();
        let q = load_checkpoint(&file).unwrap();
        assert_eq!(p, q);
        for ((_, a), (_, b)) in p.iter().zip(q.iter()) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn layout_is_lexicographic_with_exact_header() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.ckpt");
        save_checkpoint(&sample_params(), &file).unwrap();
        let bytes = std::fs::read(&file).unwrap();
        assert_eq!(&bytes[..10], b"COBRACKPT1");
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
        // First tensor is `a.bias` (lexicographically before `b.weight`).
        assert_eq!(u32::from_le_bytes(bytes[14..18].try_into().unwrap()), 6);
        assert_eq!(&bytes[18..24], b"a.bias");
        assert_eq!(u32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[28..32].try_into().unwrap()), 3);
        assert_eq!(f64::from_le_bytes(bytes[32..40].try_into().unwrap()), 0.1);
        let total = 10 + 4 + (4 + 6 + 4 + 4 + 3 * 8) + (4 + 8 + 4 + 2 * 4 + 4 * 8);
        assert_eq!(bytes.len(), total);
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("m.ckpt");
        save_checkpoint(&sample_params(), &file).unwrap();
        let good = std::fs::read(&file).unwrap();

        let bad_magic = {
            let mut b = good.clone();
            b[0] = b'X';
            b
        };
        let truncated = good[..good.len() - 3].to_vec();
        let mut trailing = good.clone();
        trailing.push(0);
        for (name, bytes) in [
            ("magic", bad_magic),
            ("truncated", truncated),
            ("trailing", trailing),
        ] {
            let f = dir.path().join(name);
            std::fs::write(&f, bytes).unwrap();
            assert!(load_checkpoint(&f).is_err(), "{name}");
        }
    }

    #[test]
    fn shape_check_flags_first_lexicographic_mismatch() {
        let cfg = crate::model::SnakeConfig::default();
        let mut params = init_params(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        check_shapes(&params, &cfg).unwrap();

        let mut broken = params.clone();
        broken.insert("head.layer2.bias", NdArray::zeros(&[7]));
        broken.insert("backbone.same0.bias", NdArray::zeros(&[9]));
        match check_shapes(&broken, &cfg) {
            Err(Error::CheckpointMismatch { path, expected, found }) => {
                assert_eq!(path, "backbone.same0.bias");
                assert_eq!(expected, vec![64]);
                assert_eq!(found, vec![9]);
            }
            other => panic!("expected mismatch, got {other:?}"),
        }

        params.insert("stray.weight", NdArray::zeros(&[1]));
        assert!(check_shapes(&params, &cfg).is_err());
    }
}
