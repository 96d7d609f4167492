//! Binary parameter checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "ESEG"  u32 version  u32 count
//! count x { u16 name_len, name (UTF-8), u8 rank, rank x u32 extent, f32 values... }
//! ```

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"ESEG";
pub const VERSION: u32 = 1;

/// One named array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

pub fn encode(arrays: &[NamedArray]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(arrays.len()).map_err(|_| ck("too many arrays"))?.to_le_bytes());
    for a in arrays {
        let name = a.name.as_bytes();
        let len = u16::try_from(name.len()).map_err(|_| ck(format!("name too long: {}", a.name)))?;
        out.extend_from_slice(&len.to_le_bytes());
        out.extend_from_slice(name);
        out.push(u8::try_from(a.shape.len()).map_err(|_| ck("rank exceeds 255"))?);
        for &d in &a.shape {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| ck("extent exceeds u32"))?.to_le_bytes());
        }
        if a.shape.iter().product::<usize>() != a.values.len() {
            return Err(ck(format!("`{}`: shape {:?} vs {} values", a.name, a.shape, a.values.len())));
        }
        for v in &a.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| ck("truncated"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<NamedArray>> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(ck("bad magic"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(ck(format!("unsupported version {version}")));
    }
    let count = c.u32()? as usize;
    let mut arrays = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = u16::from_le_bytes(c.take(2)?.try_into().unwrap()) as usize;
        let name = std::str::from_utf8(c.take(len)?).map_err(|_| ck("name is not UTF-8"))?.to_owned();
        let rank = c.take(1)?[0] as usize;
        let shape = (0..rank).map(|_| c.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel: usize = shape.iter().product();
        let raw = c.take(numel.checked_mul(4).ok_or_else(|| ck("array too large"))?)?;
        let values = raw.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        arrays.push(NamedArray { name, shape, values });
    }
    if c.pos != bytes.len() {
        return Err(ck(format!("{} trailing bytes", bytes.len() - c.pos)));
    }
    Ok(arrays)
}

fn ck(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn from_store<T: Scalar>(store: &ParamStore<T>) -> Vec<NamedArray> {
    store
        .iter()
        .map(|(_, p)| NamedArray {
            name: p.name.clone(),
            shape: p.value.shape().to_vec(),
            values: p.value.data().iter().map(|v| v.to_f32().unwrap()).collect(),
        })
        .collect()
}

/// Load every parameter of `store` by name. Extra arrays are an error too,
/// since they indicate a config/checkpoint mismatch.
pub fn into_store<T: Scalar>(arrays: &[NamedArray], store: &mut ParamStore<T>) -> Result<()> {
    if arrays.len() != store.len() {
        return Err(ck(format!("checkpoint has {} arrays, model has {}", arrays.len(), store.len())));
    }
    for a in arrays {
        let id = store.id(&a.name)?;
        let p = store.get_mut(id);
        if p.value.shape() != a.shape.as_slice() {
            return Err(ck(format!("`{}`: shape {:?} vs model {:?}", a.name, a.shape, p.value.shape())));
        }
        p.value = Tensor::new(&a.shape, a.values.iter().map(|&v| T::from_f32(v).unwrap()).collect())?;
    }
    Ok(())
}

pub fn save<T: Scalar>(store: &ParamStore<T>, path: &Path) -> Result<()> {
    let bytes = encode(&from_store(store))?;
    std::fs::File::create(path)?.write_all(&bytes)?;
    Ok(())
}

pub fn load<T: Scalar>(store: &mut ParamStore<T>, path: &Path) -> Result<()> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    into_store(&decode(&bytes)?, store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let bytes = encode(&[NamedArray { name: "a.w".into(), shape: vec![2], values: vec![1.0, -2.5] }]).unwrap();
        assert_eq!(&bytes[..4], b"ESEG");
        assert_eq!(&bytes[4..8], &1u32.to_le_bytes());
        assert_eq!(&bytes[8..12], &1u32.to_le_bytes());
        assert_eq!(&bytes[12..14], &3u16.to_le_bytes());
        assert_eq!(&bytes[14..17], b"a.w");
        assert_eq!(bytes[17], 1);
        assert_eq!(&bytes[18..22], &2u32.to_le_bytes());
        assert_eq!(&bytes[22..26], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 30);
    }

    #[test]
    fn rejects_corruption() {
        let good = encode(&[NamedArray { name: "x".into(), shape: vec![1], values: vec![3.0] }]).unwrap();
        assert!(decode(&good[..good.len() - 1]).is_err());
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(decode(&bad).is_err());
        let mut extra = good;
        extra.push(0);
        assert!(decode(&extra).is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            arrays in prop::collection::vec(
                ("[a-z.]{1,12}", prop::collection::vec(1usize..4, 1..4), any::<u32>()),
                0..5,
            )
        ) {
            let arrays: Vec<NamedArray> = arrays
                .into_iter()
                .map(|(name, shape, seed)| {
                    let n: usize = shape.iter().product();
                    // Arbitrary bit patterns, NaN payloads included.
                    let values = (0..n as u32).map(|i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i))).collect();
                    NamedArray { name, shape, values }
                })
                .collect();
            let back = decode(&encode(&arrays).unwrap()).unwrap();
            prop_assert_eq!(back.len(), arrays.len());
            for (a, b) in arrays.iter().zip(&back) {
                prop_assert_eq!(&a.name, &b.name);
                prop_assert_eq!(&a.shape, &b.shape);
                let abits: Vec<u32> = a.values.iter().map(|v| v.to_bits()).collect();
                let bbits: Vec<u32> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(abits, bbits);
            }
        }
    }
}
