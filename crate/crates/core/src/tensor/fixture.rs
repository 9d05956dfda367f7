//! Binary tensor fixtures: `u64` extent count, `u64` extents, then the
//! row-major `f32` payload, all little-endian. Decoded tensors are F32.

use std::path::Path;

use super::Tensor;
use crate::error::{Error, Result};

pub fn encode_fixture(tensor: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 * (1 + tensor.rank()) + 4 * tensor.len());
    out.extend_from_slice(&(tensor.rank() as u64).to_le_bytes());
    for &d in tensor.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &v in tensor.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn parse_err(offset: usize, detail: impl Into<String>) -> Error {
    Error::Parse { location: format!("byte {offset}"), detail: detail.into() }
}

fn read_u64(bytes: &[u8], offset: usize) -> Result<u64> {
    bytes
        .get(offset..offset + 8)
        .map(|b| u64::from_le_bytes(b.try_into().expect("8-byte slice")))
        .ok_or_else(|| parse_err(offset, "truncated header"))
}

/// Decodes a fixture. Rejects truncated input, trailing bytes, and extent
/// products that overflow or disagree with the payload length.
pub fn decode_fixture(bytes: &[u8]) -> Result<Tensor> {
    let rank = read_u64(bytes, 0)?;
    // Each extent needs 8 header bytes; bound the rank before allocating.
    let max_rank = (bytes.len().saturating_sub(8) / 8) as u64;
    if rank > max_rank {
        return Err(parse_err(0, format!("extent count {rank} exceeds header space")));
    }
    let rank = rank as usize;
    let mut shape = Vec::with_capacity(rank);
    let mut numel: usize = 1;
    for i in 0..rank {
        let off = 8 + 8 * i;
        let d = usize::try_from(read_u64(bytes, off)?).map_err(|_| parse_err(off, "extent does not fit in usize"))?;
        numel = numel.checked_mul(d).ok_or_else(|| parse_err(off, "element count overflows"))?;
        shape.push(d);
    }
    let start = 8 + 8 * rank;
    let payload = &bytes[start..];
    let expected = numel.checked_mul(4).ok_or_else(|| parse_err(start, "payload size overflows"))?;
    if payload.len() != expected {
        return Err(parse_err(start, format!("payload has {} bytes, shape {shape:?} needs {expected}", payload.len())));
    }
    let data = payload.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4-byte chunk"))).collect();
    Tensor::new(shape, data)
}

pub fn write_fixture(path: &Path, tensor: &Tensor) -> std::io::Result<()> {
    std::fs::write(path, encode_fixture(tensor))
}

pub fn read_fixture(path: &Path) -> std::result::Result<Tensor, Box<dyn std::error::Error + Send + Sync>> {
    let bytes = std::fs::read(path)?;
    Ok(decode_fixture(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn layout_is_little_endian() {
        let t = Tensor::new(vec![2], vec![1.0, -2.0]).unwrap();
        let b = encode_fixture(&t);
        assert_eq!(&b[..8], &1u64.to_le_bytes());
        assert_eq!(&b[8..16], &2u64.to_le_bytes());
        assert_eq!(&b[16..20], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 24);
    }

    #[test]
    fn rejects_malformed() {
        assert!(decode_fixture(&[]).is_err());
        assert!(decode_fixture(&[1, 0, 0]).is_err());
        let mut huge = u64::MAX.to_le_bytes().to_vec();
        huge.extend_from_slice(&[0; 16]);
        assert!(decode_fixture(&huge).is_err());
        let mut overflow = 2u64.to_le_bytes().to_vec();
        overflow.extend_from_slice(&u64::MAX.to_le_bytes());
        overflow.extend_from_slice(&u64::MAX.to_le_bytes());
        assert!(decode_fixture(&overflow).is_err());
        let mut trailing = encode_fixture(&Tensor::zeros(&[1]));
        trailing.push(0);
        assert!(decode_fixture(&trailing).is_err());
    }

    #[test]
    fn scalar_and_empty() {
        let scalar = Tensor::new(vec![], vec![3.5]).unwrap();
        assert_eq!(decode_fixture(&encode_fixture(&scalar)).unwrap(), scalar);
        let empty = Tensor::zeros(&[3, 0]);
        assert_eq!(decode_fixture(&encode_fixture(&empty)).unwrap(), empty);
    }

    proptest! {
        #[test]
        fn roundtrip(shape in prop::collection::vec(0usize..5, 0..4), seed in any::<u32>()) {
            let t = Tensor::from_fn(&shape, |i| f32::from_bits(seed.wrapping_mul(2654435761).wrapping_add(i as u32)));
            let back = decode_fixture(&encode_fixture(&t)).unwrap();
            prop_assert!(back.bitwise_eq(&t));
        }

        #[test]
        fn never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
            let _ = decode_fixture(&bytes);
        }
    }
}
