//! Paillier cryptosystem with `g = n + 1`, plus a signed fixed-point codec
//! for getting real-valued gradients into `Z_n`.
//!
//! 512-bit keys are used throughout the tests. They are not secure; use
//! 2048 bits or more for anything real.

mod codec;
mod prime;

pub use codec::FixedPointCodec;
pub use prime::{is_probable_prime, MR_ROUNDS};

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_traits::{One, Zero};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PaillierError {
    #[error("key size {0} bits is too small or odd (need an even size of at least 64)")]
    KeyTooSmall(u64),
    #[error("no prime found after {0} candidates")]
    PrimeSearchExhausted(usize),
    #[error("plaintext is outside [0, n)")]
    PlaintextOutOfRange,
    #[error("ciphertext value is outside [0, n²)")]
    CiphertextOutOfRange,
    #[error("ciphertext was produced under a different key")]
    KeyMismatch,
    #[error("value {value} exceeds the fixed-point headroom")]
    CodecOverflow { value: f64 },
    #[error("malformed ciphertext bytes: {0}")]
    Decode(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierPublicKey {
    pub n: BigUint,
    pub n_sq: BigUint,
    pub g: BigUint,
    pub bits: u64,
    key_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PaillierSecretKey {
    pub lambda: BigUint,
    pub mu: BigUint,
    key_id: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key_id: u64,
}

fn fingerprint(n: &BigUint) -> u64 {
    let digest = Sha256::digest(n.to_bytes_be());
    u64::from_be_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Search budget per prime; a 256-bit search needs ~180 candidates on average.
const MAX_CANDIDATES: usize = 100_000;

fn random_prime(bits: u64, rng: &mut Rng) -> Result<BigUint, PaillierError> {
    for _ in 0..MAX_CANDIDATES {
        let mut candidate = rng.gen_biguint(bits);
        // top two bits set so that p·q has exactly 2·bits bits
        candidate.set_bit(bits - 1, true);
        candidate.set_bit(bits - 2, true);
        candidate.set_bit(0, true);
        if is_probable_prime(&candidate, MR_ROUNDS, rng) {
            return Ok(candidate);
        }
    }
    Err(PaillierError::PrimeSearchExhausted(MAX_CANDIDATES))
}

/// L(u) = (u − 1) / n.
fn l_function(u: &BigUint, n: &BigUint) -> BigUint {
    (u - 1u32) / n
}

pub fn keygen(
    bits: u64,
    rng: &mut Rng,
) -> Result<(PaillierPublicKey, PaillierSecretKey), PaillierError> {
    if bits < 64 || !bits.is_multiple_of(2) {
        return Err(PaillierError::KeyTooSmall(bits));
    }
    let half = bits / 2;
    loop {
        let p = random_prime(half, rng)?;
        let q = random_prime(half, rng)?;
        if p == q {
            continue;
        }
        let n = &p * &q;
        debug_assert_eq!(n.bits(), bits);
        let n_sq = &n * &n;
        let g = &n + 1u32;
        let lambda = (&p - 1u32).lcm(&(&q - 1u32));
        let u = g.modpow(&lambda, &n_sq);
        let Some(mu) = l_function(&u, &n).modinv(&n) else {
            continue;
        };
        let key_id = fingerprint(&n);
        return Ok((
            PaillierPublicKey {
                n,
                n_sq,
                g,
                bits,
                key_id,
            },
            PaillierSecretKey { lambda, mu, key_id },
        ));
    }
}

impl PaillierPublicKey {
    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    fn check(&self, c: &Ciphertext) -> Result<(), PaillierError> {
        if c.key_id != self.key_id {
            return Err(PaillierError::KeyMismatch);
        }
        Ok(())
    }

    fn random_unit(&self, rng: &mut Rng) -> BigUint {
        loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                return r;
            }
        }
    }

    /// `c = (1 + m·n) · rⁿ mod n²` with fresh `r`.
    pub fn encrypt(&self, m: &BigUint, rng: &mut Rng) -> Result<Ciphertext, PaillierError> {
        if m >= &self.n {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        let r = self.random_unit(rng);
        let gm = (BigUint::one() + m * &self.n) % &self.n_sq;
        let value = gm * r.modpow(&self.n, &self.n_sq) % &self.n_sq;
        Ok(Ciphertext {
            value,
            key_id: self.key_id,
        })
    }

    pub fn encrypt_u64(&self, m: u64, rng: &mut Rng) -> Result<Ciphertext, PaillierError> {
        self.encrypt(&BigUint::from(m), rng)
    }

    /// Enc(a) ⊕ Enc(b) = Enc(a + b mod n).
    pub fn add_cipher(&self, a: &Ciphertext, b: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        self.check(a)?;
        self.check(b)?;
        Ok(Ciphertext {
            value: &a.value * &b.value % &self.n_sq,
            key_id: self.key_id,
        })
    }

    /// Enc(a) ⊕ m = Enc(a + m mod n), without fresh randomness.
    pub fn add_plain(&self, c: &Ciphertext, m: &BigUint) -> Result<Ciphertext, PaillierError> {
        self.check(c)?;
        if m >= &self.n {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        let gm = (BigUint::one() + m * &self.n) % &self.n_sq;
        Ok(Ciphertext {
            value: &c.value * gm % &self.n_sq,
            key_id: self.key_id,
        })
    }

    /// Enc(a)ᵏ = Enc(a·k mod n).
    pub fn mul_plain(&self, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext, PaillierError> {
        self.check(c)?;
        if k >= &self.n {
            return Err(PaillierError::PlaintextOutOfRange);
        }
        Ok(Ciphertext {
            value: c.value.modpow(k, &self.n_sq),
            key_id: self.key_id,
        })
    }

    /// Encryption of zero with `r = 1`; the identity for `add_cipher`.
    pub fn zero(&self) -> Ciphertext {
        Ciphertext {
            value: BigUint::one(),
            key_id: self.key_id,
        }
    }

    /// Attach this key to a raw ciphertext value received off the wire.
    pub fn adopt(&self, value: BigUint) -> Result<Ciphertext, PaillierError> {
        if value >= self.n_sq || value.is_zero() {
            return Err(PaillierError::CiphertextOutOfRange);
        }
        Ok(Ciphertext {
            value,
            key_id: self.key_id,
        })
    }
}

impl PaillierSecretKey {
    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    pub fn decrypt(
        &self,
        pk: &PaillierPublicKey,
        c: &Ciphertext,
    ) -> Result<BigUint, PaillierError> {
        if c.key_id != self.key_id || pk.key_id != self.key_id {
            return Err(PaillierError::KeyMismatch);
        }
        if c.value >= pk.n_sq {
            return Err(PaillierError::CiphertextOutOfRange);
        }
        let u = c.value.modpow(&self.lambda, &pk.n_sq);
        Ok(l_function(&u, &pk.n) * &self.mu % &pk.n)
    }
}

impl Ciphertext {
    pub fn value(&self) -> &BigUint {
        &self.value
    }

    pub fn key_id(&self) -> u64 {
        self.key_id
    }

    /// 32-bit big-endian byte length, then the magnitude big-endian.
    pub fn to_wire(&self) -> Vec<u8> {
        encode_magnitude(&self.value)
    }
}

pub(crate) fn encode_magnitude(v: &BigUint) -> Vec<u8> {
    let mag = v.to_bytes_be();
    let mut out = Vec::with_capacity(4 + mag.len());
    out.extend_from_slice(&(mag.len() as u32).to_be_bytes());
    out.extend_from_slice(&mag);
    out
}

/// Returns the integer and bytes consumed. Magnitudes must be minimal
/// (no leading zero byte unless the value is zero), so decoding a valid
/// encoding and re-encoding it gives back the same bytes.
pub(crate) fn decode_magnitude(bytes: &[u8]) -> Result<(BigUint, usize), PaillierError> {
    let head: [u8; 4] = bytes
        .get(..4)
        .and_then(|b| b.try_into().ok())
        .ok_or_else(|| PaillierError::Decode("missing length".into()))?;
    let len = u32::from_be_bytes(head) as usize;
    let body = bytes
        .get(4..4 + len)
        .ok_or_else(|| PaillierError::Decode(format!("need {len} magnitude bytes")))?;
    let canonical = match body {
        [] => false,
        [0] => true,
        [first, ..] => *first != 0,
    };
    if !canonical {
        return Err(PaillierError::Decode("non-canonical magnitude".into()));
    }
    Ok((BigUint::from_bytes_be(body), 4 + len))
}

pub fn ciphertext_from_wire(
    pk: &PaillierPublicKey,
    bytes: &[u8],
) -> Result<Ciphertext, PaillierError> {
    let (value, used) = decode_magnitude(bytes)?;
    if used != bytes.len() {
        return Err(PaillierError::Decode("trailing bytes".into()));
    }
    pk.adopt(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use std::sync::OnceLock;

    fn keys() -> &'static (PaillierPublicKey, PaillierSecretKey) {
        static KEYS: OnceLock<(PaillierPublicKey, PaillierSecretKey)> = OnceLock::new();
        KEYS.get_or_init(|| keygen(512, &mut seeded(5)).unwrap())
    }

    #[test]
    fn key_has_requested_size() {
        let (pk, _) = keys();
        assert_eq!(pk.n.bits(), 512);
        assert_eq!(pk.g, &pk.n + 1u32);
        assert_eq!(pk.n_sq, &pk.n * &pk.n);
    }

    #[test]
    fn keygen_is_deterministic_for_a_seed() {
        let a = keygen(128, &mut seeded(11)).unwrap();
        let b = keygen(128, &mut seeded(11)).unwrap();
        assert_eq!(a, b);
        let c = keygen(128, &mut seeded(12)).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn rejects_small_or_odd_keys() {
        assert_eq!(
            keygen(32, &mut seeded(0)).unwrap_err(),
            PaillierError::KeyTooSmall(32)
        );
        assert_eq!(
            keygen(127, &mut seeded(0)).unwrap_err(),
            PaillierError::KeyTooSmall(127)
        );
    }

    #[test]
    fn zero_and_probabilistic_encryption() {
        let (pk, sk) = keys();
        let mut rng = seeded(1);
        let c0 = pk.encrypt_u64(0, &mut rng).unwrap();
        assert!(sk.decrypt(pk, &c0).unwrap().is_zero());
        let a = pk.encrypt_u64(5, &mut rng).unwrap();
        let b = pk.encrypt_u64(5, &mut rng).unwrap();
        assert_ne!(a, b);
        assert_eq!(sk.decrypt(pk, &a).unwrap(), BigUint::from(5u32));
        assert_eq!(sk.decrypt(pk, &b).unwrap(), BigUint::from(5u32));
    }

    #[test]
    fn homomorphic_examples() {
        let (pk, sk) = keys();
        let mut rng = seeded(2);
        let s = pk
            .add_cipher(
                &pk.encrypt_u64(5, &mut rng).unwrap(),
                &pk.encrypt_u64(7, &mut rng).unwrap(),
            )
            .unwrap();
        assert_eq!(sk.decrypt(pk, &s).unwrap(), BigUint::from(12u32));
        let m = pk
            .mul_plain(&pk.encrypt_u64(3, &mut rng).unwrap(), &BigUint::from(2u32))
            .unwrap();
        assert_eq!(sk.decrypt(pk, &m).unwrap(), BigUint::from(6u32));
        let p = pk
            .add_plain(&pk.encrypt_u64(3, &mut rng).unwrap(), &BigUint::from(4u32))
            .unwrap();
        assert_eq!(sk.decrypt(pk, &p).unwrap(), BigUint::from(7u32));
        let z = pk
            .add_cipher(&pk.zero(), &pk.encrypt_u64(9, &mut rng).unwrap())
            .unwrap();
        assert_eq!(sk.decrypt(pk, &z).unwrap(), BigUint::from(9u32));
    }

    #[test]
    fn out_of_range_plaintext() {
        let (pk, _) = keys();
        assert_eq!(
            pk.encrypt(&pk.n, &mut seeded(0)).unwrap_err(),
            PaillierError::PlaintextOutOfRange
        );
    }

    #[test]
    fn foreign_ciphertexts_are_rejected() {
        let (pk, sk) = keys();
        let (pk2, sk2) = keygen(128, &mut seeded(77)).unwrap();
        let c2 = pk2.encrypt_u64(1, &mut seeded(0)).unwrap();
        assert_eq!(sk.decrypt(pk, &c2).unwrap_err(), PaillierError::KeyMismatch);
        assert_eq!(
            sk2.decrypt(pk, &c2).unwrap_err(),
            PaillierError::KeyMismatch
        );
        let c = pk.encrypt_u64(1, &mut seeded(0)).unwrap();
        assert_eq!(
            pk.add_cipher(&c, &c2).unwrap_err(),
            PaillierError::KeyMismatch
        );
    }

    #[test]
    fn random_u64_roundtrip() {
        let (pk, sk) = keys();
        let mut rng = seeded(3);
        for _ in 0..20 {
            let m: u64 = rand::Rng::gen(&mut rng);
            let c = pk.encrypt_u64(m, &mut rng).unwrap();
            assert_eq!(sk.decrypt(pk, &c).unwrap(), BigUint::from(m));
        }
    }

    #[test]
    fn wire_form_roundtrip() {
        let (pk, _) = keys();
        let c = pk.encrypt_u64(42, &mut seeded(4)).unwrap();
        let bytes = c.to_wire();
        let len = u32::from_be_bytes(bytes[..4].try_into().unwrap()) as usize;
        assert_eq!(len, bytes.len() - 4);
        assert_eq!(ciphertext_from_wire(pk, &bytes).unwrap(), c);
        let mut padded = vec![0, 0, 0, (len + 1) as u8];
        padded.push(0);
        padded.extend_from_slice(&bytes[4..]);
        assert!(ciphertext_from_wire(pk, &padded).is_err());
    }
}
