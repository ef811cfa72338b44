//! Versioned checkpoint container: model config as JSON plus every named
//! parameter tensor, 32-bit little-endian on disk, CRC-protected.

use crate::error::{Error, Result};
use crate::model::{EaSwin, HeadConfig};
use crate::scalar::Scalar;
use std::io::{Read, Write};
use std::path::Path;

pub const MAGIC: &[u8; 6] = b"EACKPT";
pub const FORMAT_VERSION: u16 = 1;

/// Serialize config + parameters. Values are stored as f32 regardless of the
/// compute precision.
pub fn encode_model<T: Scalar>(model: &EaSwin<T>) -> Result<Vec<u8>> {
    let config_json = serde_json::to_vec(&model.cfg)?;
    let mut body = Vec::new();
    body.extend_from_slice(&(config_json.len() as u32).to_le_bytes());
    body.extend_from_slice(&config_json);
    let params = model.params();
    body.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for p in params {
        let name = p.name.as_bytes();
        body.extend_from_slice(&(name.len() as u16).to_le_bytes());
        body.extend_from_slice(name);
        body.push(p.value.rank() as u8);
        for &d in p.value.shape() {
            body.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in p.value.data() {
            body.extend_from_slice(&(v.to_f64() as f32).to_le_bytes());
        }
    }
    let mut out = Vec::with_capacity(MAGIC.len() + 2 + body.len() + 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&body);
    out.extend_from_slice(&crc32fast::hash(&body).to_le_bytes());
    Ok(out)
}

pub fn save<T: Scalar>(path: &Path, model: &EaSwin<T>) -> Result<()> {
    let bytes = encode_model(model)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated {
                offset: self.pos,
                needed: n,
                available: self.bytes.len() - self.pos,
            });
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Parse a checkpoint and rebuild the model at precision `T`.
pub fn decode_model<T: Scalar>(bytes: &[u8]) -> Result<EaSwin<T>> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(MAGIC.len())?;
    if magic != MAGIC {
        return Err(Error::BadMagic { expected: MAGIC.to_vec(), found: magic.to_vec() });
    }
    let version = cur.u16()?;
    if version != FORMAT_VERSION {
        return Err(Error::BadVersion { found: version, supported: FORMAT_VERSION });
    }
    let body_start = cur.pos;
    if bytes.len() < body_start + 4 {
        return Err(Error::Truncated { offset: body_start, needed: 4, available: bytes.len() - body_start });
    }
    let body = &bytes[body_start..bytes.len() - 4];
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"));
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(Error::CrcMismatch {
            start: body_start,
            end: bytes.len() - 4,
            stored,
            computed,
        });
    }

    let cfg_len = cur.u32()? as usize;
    let cfg: HeadConfig = serde_json::from_slice(cur.take(cfg_len)?)?;
    let mut model = EaSwin::<T>::new(cfg, 0)?;
    let n_params = cur.u32()? as usize;
    let mut loaded: std::collections::HashMap<String, (Vec<usize>, Vec<T>)> =
        std::collections::HashMap::new();
    for _ in 0..n_params {
        let name_len = cur.u16()? as usize;
        let name = String::from_utf8(cur.take(name_len)?.to_vec())
            .map_err(|_| Error::data("parameter name is not UTF-8".to_string()))?;
        let rank = cur.take(1)?[0] as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(cur.u32()? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = cur.take(numel * 4)?;
        let data: Vec<T> = raw
            .chunks_exact(4)
            .map(|c| T::from_f64(f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64))
            .collect();
        loaded.insert(name, (shape, data));
    }

    for p in model.params_mut() {
        let (shape, data) = loaded.remove(&p.name).ok_or_else(|| {
            Error::data(format!("checkpoint is missing parameter '{}'", p.name))
        })?;
        if shape != p.value.shape() {
            return Err(Error::data(format!(
                "parameter '{}' has shape {:?} in checkpoint, model wants {:?}",
                p.name,
                shape,
                p.value.shape()
            )));
        }
        p.value = crate::tensor::Tensor::new(shape, data)?;
    }
    if let Some(extra) = loaded.keys().next() {
        return Err(Error::data(format!("checkpoint has unknown parameter '{extra}'")));
    }
    Ok(model)
}

pub fn load<T: Scalar>(path: &Path) -> Result<EaSwin<T>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_model(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{HeadConfig, HeadKind, PoolMode};

    fn cfg() -> HeadConfig {
        HeadConfig {
            d_in: 6,
            d_model: 8,
            heads: 2,
            w_t: 2,
            w_s: 2,
            depth_t: 1,
            depth_s: 1,
            tubelet: 1,
            pool: PoolMode::Attention,
            head_kind: HeadKind::Swin,
            use_shift: true,
            joint_attention: false,
            frames: 4,
        }
    }

    #[test]
    fn roundtrip_preserves_all_parameters() {
        let model = EaSwin::<f32>::new(cfg(), 77).unwrap();
        let bytes = encode_model(&model).unwrap();
        let back = decode_model::<f32>(&bytes).unwrap();
        let (a, b) = (model.params(), back.params());
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.name, y.name);
            assert_eq!(x.value.data(), y.value.data());
        }
    }

    #[test]
    fn f64_model_loads_from_f32_storage() {
        let model = EaSwin::<f64>::new(cfg(), 3).unwrap();
        let bytes = encode_model(&model).unwrap();
        let back = decode_model::<f64>(&bytes).unwrap();
        for (x, y) in model.params().iter().zip(back.params()) {
            for (a, b) in x.value.data().iter().zip(y.value.data()) {
                assert!((a - b).abs() < 1e-7, "f32 storage rounding only");
            }
        }
    }

    #[test]
    fn corruption_errors_are_distinct() {
        let model = EaSwin::<f32>::new(cfg(), 1).unwrap();
        let good = encode_model(&model).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'Z';
        assert!(matches!(decode_model::<f32>(&bad_magic), Err(Error::BadMagic { .. })));

        let mut bad_version = good.clone();
        bad_version[6] = 7;
        assert!(matches!(decode_model::<f32>(&bad_version), Err(Error::BadVersion { .. })));

        let mut flipped = good.clone();
        let mid = good.len() / 2;
        flipped[mid] ^= 0x55;
        assert!(matches!(decode_model::<f32>(&flipped), Err(Error::CrcMismatch { .. })));

        assert!(matches!(
            decode_model::<f32>(&good[..good.len() - 9]),
            Err(Error::Truncated { .. }) | Err(Error::CrcMismatch { .. })
        ));
    }
}
