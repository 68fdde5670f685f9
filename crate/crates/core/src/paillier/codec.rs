use num_bigint::{BigInt, BigUint, Sign};
use num_traits::{FromPrimitive, ToPrimitive, Zero};

use super::PaillierError;

/// Signed fixed-point encoding of reals into `Z_n`.
///
/// `v` maps to `round(v·2^s) mod n`; residues above `n/2` decode as
/// negative numbers, so adding encodings of mixed sign stays homomorphic.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FixedPointCodec {
    pub scale_bits: u32,
    n: BigUint,
    half_n: BigUint,
    quarter_n: BigUint,
}

impl FixedPointCodec {
    pub const DEFAULT_SCALE_BITS: u32 = 32;

    pub fn new(n: &BigUint, scale_bits: u32) -> Self {
        Self {
            scale_bits,
            n: n.clone(),
            half_n: n >> 1u32,
            quarter_n: n >> 2u32,
        }
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    fn scale(&self) -> f64 {
        2f64.powi(self.scale_bits as i32)
    }

    /// Maps a signed integer into `Z_n`.
    pub fn wrap(&self, v: &BigInt) -> BigUint {
        let n = BigInt::from_biguint(Sign::Plus, self.n.clone());
        let r = ((v % &n) + &n) % &n;
        r.to_biguint().expect("non-negative after reduction")
    }

    /// Inverse of [`FixedPointCodec::wrap`] on the centred range.
    pub fn unwrap(&self, w: &BigUint) -> BigInt {
        let w = w % &self.n;
        if w > self.half_n {
            BigInt::from_biguint(Sign::Plus, w) - BigInt::from_biguint(Sign::Plus, self.n.clone())
        } else {
            BigInt::from_biguint(Sign::Plus, w)
        }
    }

    pub fn encode(&self, v: f64) -> Result<BigUint, PaillierError> {
        let scaled = (v * self.scale()).round();
        let as_int = BigInt::from_f64(scaled).ok_or(PaillierError::CodecOverflow { value: v })?;
        if as_int.magnitude() >= &self.quarter_n {
            return Err(PaillierError::CodecOverflow { value: v });
        }
        Ok(self.wrap(&as_int))
    }

    pub fn decode(&self, w: &BigUint) -> f64 {
        self.decode_scaled(w, 1.0)
    }

    /// Decodes and divides by an extra plaintext scale factor.
    pub fn decode_scaled(&self, w: &BigUint, divisor: f64) -> f64 {
        let signed = self.unwrap(w);
        if signed.is_zero() {
            return 0.0;
        }
        signed.to_f64().unwrap_or(f64::NAN) / self.scale() / divisor
    }

    pub fn encode_vec(&self, v: &[f64]) -> Result<Vec<BigUint>, PaillierError> {
        v.iter().map(|&x| self.encode(x)).collect()
    }

    pub fn decode_vec(&self, w: &[BigUint]) -> Vec<f64> {
        w.iter().map(|x| self.decode(x)).collect()
    }
}
