//! Checkpoint serialization.
//!
//! Layout (all integers unsigned 32-bit little-endian, values 32-bit
//! little-endian reals):
//!
//! ```text
//! "RCEDv1" | count | record*
//! record = name_len | name (UTF-8) | rank | dims[rank] | values[prod(dims)]
//! ```
//!
//! Save -> load -> save is byte-identical.

use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 6] = b"RCEDv1";

const MAX_TENSORS: u32 = 4096;
const MAX_NAME_LEN: u32 = 256;
const MAX_RANK: u32 = 8;
const MAX_ELEMS: u64 = 1 << 26;

pub fn encode(tensors: &[(String, &Tensor)]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, tensor) in tensors {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(tensor.rank() as u32).to_le_bytes());
        for &d in tensor.shape() {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in tensor.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode(bytes: &[u8]) -> Result<Vec<(String, Tensor)>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(6)? != MAGIC {
        return Err(Error::arg("bad checkpoint magic (expected RCEDv1)"));
    }
    let count = r.read_u32()?;
    if count > MAX_TENSORS {
        return Err(Error::arg(format!("unreasonable tensor count {count}")));
    }
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let name_len = r.read_u32()?;
        if name_len == 0 || name_len > MAX_NAME_LEN {
            return Err(Error::arg(format!("unreasonable name length {name_len}")));
        }
        let name = std::str::from_utf8(r.take(name_len as usize)?)
            .map_err(|_| Error::arg("tensor name is not valid UTF-8"))?
            .to_string();
        let rank = r.read_u32()?;
        if rank == 0 || rank > MAX_RANK {
            return Err(Error::arg(format!("unreasonable rank {rank}")));
        }
        let mut dims = Vec::with_capacity(rank as usize);
        let mut elems: u64 = 1;
        for _ in 0..rank {
            let d = r.read_u32()?;
            if d == 0 {
                return Err(Error::arg("zero dimension in tensor record"));
            }
            elems = elems.saturating_mul(d as u64);
            if elems > MAX_ELEMS {
                return Err(Error::arg("tensor record too large"));
            }
            dims.push(d as usize);
        }
        // check available length before allocating
        let byte_len = (elems as usize).checked_mul(4).ok_or_else(|| Error::arg("overflow"))?;
        let raw = r.take(byte_len)?;
        let mut data = Vec::with_capacity(elems as usize);
        for chunk in raw.chunks_exact(4) {
            let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
            if !v.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite value in checkpoint tensor {name:?}"
                )));
            }
            data.push(v);
        }
        out.push((name, Tensor::from_vec(&dims, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::arg(format!(
            "{} trailing bytes after last tensor record",
            bytes.len() - r.pos
        )));
    }
    Ok(out)
}

pub fn save(path: &Path, tensors: &[(String, &Tensor)]) -> Result<()> {
    std::fs::write(path, encode(tensors)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::arg("truncated checkpoint"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn read_u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Tensor)> {
        vec![
            (
                "a.weight".into(),
                Tensor::from_vec(&[2, 3], vec![1.5, -2.25, 0.0, -0.0, 1e-20, 3.75]).unwrap(),
            ),
            ("b.bias".into(), Tensor::from_vec(&[1], vec![0.125]).unwrap()),
        ]
    }

    #[test]
    fn encode_decode_save_is_byte_identical() {
        let tensors = sample();
        let refs: Vec<(String, &Tensor)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        let bytes = encode(&refs);
        let decoded = decode(&bytes).unwrap();
        let refs2: Vec<(String, &Tensor)> = decoded.iter().map(|(n, t)| (n.clone(), t)).collect();
        let bytes2 = encode(&refs2);
        assert_eq!(bytes, bytes2);
        assert_eq!(tensors, decoded);
    }

    #[test]
    fn header_layout_is_as_documented() {
        let t = Tensor::from_vec(&[2], vec![1.0, 2.0]).unwrap();
        let bytes = encode(&[("ab".into(), &t)]);
        assert_eq!(&bytes[..6], b"RCEDv1");
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 1); // count
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2); // name len
        assert_eq!(&bytes[14..16], b"ab");
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 1); // rank
        assert_eq!(u32::from_le_bytes(bytes[20..24].try_into().unwrap()), 2); // dim
        assert_eq!(f32::from_le_bytes(bytes[24..28].try_into().unwrap()), 1.0);
    }

    #[test]
    fn rejects_malformed_inputs() {
        assert!(decode(b"").is_err());
        assert!(decode(b"NOTCKPT").is_err());
        // huge declared count with no records
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        assert!(decode(&bytes).is_err());
        // truncated record
        let t = Tensor::from_vec(&[4], vec![1.0; 4]).unwrap();
        let good = encode(&[("x".into(), &t)]);
        assert!(decode(&good[..good.len() - 3]).is_err());
        // trailing garbage
        let mut padded = good.clone();
        padded.push(0);
        assert!(decode(&padded).is_err());
        // NaN payload
        let mut nan = good;
        let n = nan.len();
        nan[n - 16..n - 12].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(decode(&nan).is_err());
    }
}
