//! Typed views over uninterpreted cell bytes. All integers and floats are
//! little-endian.

use alloc::vec::Vec;

use crate::error::{Error, Result};

pub fn from_i64(v: i64) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

pub fn from_u64(v: u64) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

pub fn from_f64(v: f64) -> Vec<u8> {
    v.to_le_bytes().to_vec()
}

pub fn from_f64s(vs: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(vs.len() * 8);
    for v in vs {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn word(bytes: &[u8], what: &str) -> Result<[u8; 8]> {
    bytes
        .try_into()
        .map_err(|_| Error::TypeMismatch(what.into()))
}

pub fn to_i64(bytes: &[u8]) -> Result<i64> {
    Ok(i64::from_le_bytes(word(bytes, "i64")?))
}

pub fn to_u64(bytes: &[u8]) -> Result<u64> {
    Ok(u64::from_le_bytes(word(bytes, "u64")?))
}

pub fn to_f64(bytes: &[u8]) -> Result<f64> {
    Ok(f64::from_le_bytes(word(bytes, "f64")?))
}

pub fn to_f64s(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::TypeMismatch("f64 array".into()));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Registers hold raw words; floats travel as their bit patterns.
pub fn f64_word(v: f64) -> u64 {
    v.to_bits()
}

pub fn word_f64(w: u64) -> f64 {
    f64::from_bits(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn float_arrays_round_trip() {
        let xs = [0.0, -1.5, f64::MAX, 1e-300];
        assert_eq!(to_f64s(&from_f64s(&xs)).unwrap(), xs);
        assert!(to_f64s(&[1, 2, 3]).is_err());
    }

    #[test]
    fn scalar_width_is_checked() {
        assert_eq!(to_i64(&from_i64(-7)).unwrap(), -7);
        assert!(matches!(to_i64(&[0; 4]), Err(Error::TypeMismatch(_))));
    }
}
