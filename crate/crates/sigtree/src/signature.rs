//! Binary image signatures and their bit-level algebra.
//!
//! A signature is `n` blocks of `m` bits, one block per palette bin. An
//! image signature encodes each bin's pixel percentage as a single set bit
//! (bit `ceil(h_j * m)` of block `j`, or an empty block for a zero bin).
//! Index nodes union signatures together, so their blocks may carry several
//! set bits; the weight of a block is always the sum over its set bits of
//! `i / m * 100`, which collapses to the plain percentage for one-hot
//! blocks.
//!
//! Bit layout is fixed for index-file portability: bit positions run least
//! significant bit first within the packed little-endian byte array, block
//! `j` occupying bits `j*m .. (j+1)*m`.

use thiserror::Error;

use crate::palette::Histogram;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SignatureError {
    #[error("signature dimensions differ: {0}x{1} vs {2}x{3} (bins x bits)")]
    DimensionMismatch(u16, u16, u16, u16),
    #[error("malformed image signature: block {0} has {1} set bits")]
    MalformedSignature(usize, u32),
    #[error("signature payload has {got} bytes, expected {expected}")]
    PayloadSize { got: usize, expected: usize },
    #[error("truncated signature: {0} bytes")]
    Truncated(usize),
}

/// Fixed-width binary signature: `n` blocks of `m` bits, packed LSB-first.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Signature {
    n: u16,
    m: u16,
    bits: Vec<u8>,
}

/// Per-bin weights decoded from a signature; percentages for image
/// signatures, summed percentages for union signatures.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<f64>,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

impl Signature {
    /// All-zero signature of the given dimensions.
    pub fn zero(n: u16, m: u16) -> Self {
        assert!(n >= 1 && m >= 1, "signature dimensions must be positive");
        let bytes = byte_len(n, m);
        Self { n, m, bits: vec![0u8; bytes] }
    }

    /// Encodes a histogram: bin `j` with fraction `h > 0` sets bit
    /// `ceil(h * m)` (clamped to `[1, m]`) of block `j`; zero bins stay
    /// empty.
    pub fn encode(h: &Histogram, m: u16) -> Self {
        assert!(m >= 1, "bits per block must be >= 1");
        let n = u16::try_from(h.len()).expect("histogram bin count fits in u16");
        let mut sig = Self::zero(n, m);
        for (j, &v) in h.values().iter().enumerate() {
            if v > 0.0 {
                let bit = ((v * m as f64).ceil() as u32).clamp(1, m as u32);
                sig.set_block_bit(j, bit as u16);
            }
        }
        sig
    }

    pub fn bins(&self) -> u16 {
        self.n
    }

    pub fn bits_per_block(&self) -> u16 {
        self.m
    }

    /// Packed size in bytes: exactly `ceil(n*m/8)`.
    pub fn byte_len(&self) -> usize {
        self.bits.len()
    }

    pub fn packed_bits(&self) -> &[u8] {
        &self.bits
    }

    /// Sets bit `i` (1-based) of block `j` (0-based).
    pub fn set_block_bit(&mut self, block: usize, bit: u16) {
        assert!(block < self.n as usize && (1..=self.m).contains(&bit));
        let pos = block * self.m as usize + (bit as usize - 1);
        self.bits[pos / 8] |= 1 << (pos % 8);
    }

    fn block_bit(&self, block: usize, bit: u16) -> bool {
        let pos = block * self.m as usize + (bit as usize - 1);
        self.bits[pos / 8] & (1 << (pos % 8)) != 0
    }

    /// 1-based positions of the set bits in one block.
    pub fn block_set_bits(&self, block: usize) -> Vec<u16> {
        (1..=self.m).filter(|&b| self.block_bit(block, b)).collect()
    }

    /// Decodes the weight vector: weight `j` is the sum over set bits `i`
    /// of block `j` of `i / m * 100`. Empty blocks weigh 0; one-hot blocks
    /// yield their encoded percentage; union blocks sum their members.
    pub fn weight_vector(&self) -> WeightVector {
        let m = self.m as f64;
        let weights = (0..self.n as usize)
            .map(|j| {
                self.block_set_bits(j)
                    .iter()
                    .map(|&i| i as f64 / m * 100.0)
                    .sum()
            })
            .collect();
        WeightVector { weights }
    }

    /// Checks the one-hot-or-empty block invariant that every image
    /// signature must satisfy (unions are exempt).
    pub fn validate_image_signature(&self) -> Result<(), SignatureError> {
        for j in 0..self.n as usize {
            let set = self.block_set_bits(j).len() as u32;
            if set > 1 {
                return Err(SignatureError::MalformedSignature(j, set));
            }
        }
        Ok(())
    }

    /// Bitwise OR. The result is a valid internal-node signature but not
    /// necessarily a valid image signature.
    pub fn union(&self, other: &Self) -> Result<Self, SignatureError> {
        self.check_dims(other)?;
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(a, b)| a | b)
            .collect();
        Ok(Self { n: self.n, m: self.m, bits })
    }

    /// Folds `self |= other` in place.
    pub fn union_in_place(&mut self, other: &Self) -> Result<(), SignatureError> {
        self.check_dims(other)?;
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Containment filter: true iff every set bit of `query` is also set in
    /// `self` (`query AND self == query`).
    pub fn covers(&self, query: &Self) -> Result<bool, SignatureError> {
        self.check_dims(query)?;
        Ok(self
            .bits
            .iter()
            .zip(&query.bits)
            .all(|(c, q)| c & q == *q))
    }

    fn check_dims(&self, other: &Self) -> Result<(), SignatureError> {
        if self.n != other.n || self.m != other.m {
            return Err(SignatureError::DimensionMismatch(self.n, self.m, other.n, other.m));
        }
        Ok(())
    }

    /// Wire format: n (u16 LE), m (u16 LE), then the packed bit bytes.
    pub fn serialized_len(&self) -> usize {
        4 + self.bits.len()
    }

    pub fn serialize_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.n.to_le_bytes());
        out.extend_from_slice(&self.m.to_le_bytes());
        out.extend_from_slice(&self.bits);
    }

    /// Parses one signature from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn deserialize_from(bytes: &[u8]) -> Result<(Self, usize), SignatureError> {
        if bytes.len() < 4 {
            return Err(SignatureError::Truncated(bytes.len()));
        }
        let n = u16::from_le_bytes([bytes[0], bytes[1]]);
        let m = u16::from_le_bytes([bytes[2], bytes[3]]);
        if n == 0 || m == 0 {
            return Err(SignatureError::PayloadSize { got: 0, expected: 1 });
        }
        let len = byte_len(n, m);
        if bytes.len() < 4 + len {
            return Err(SignatureError::Truncated(bytes.len()));
        }
        let bits = bytes[4..4 + len].to_vec();
        Ok((Self { n, m, bits }, 4 + len))
    }

    /// Lowercase hex dump of the packed bytes, for debug output.
    pub fn to_hex(&self) -> String {
        self.bits.iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn byte_len(n: u16, m: u16) -> usize {
    (n as usize * m as usize).div_ceil(8)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::palette::Histogram;
    use proptest::prelude::*;

    fn hist(values: Vec<f64>) -> Histogram {
        Histogram::new(values).unwrap()
    }

    /// Signature with the given 1-based set bit per block (0 = empty).
    fn sig_from_bits(m: u16, bits: &[u16]) -> Signature {
        let mut s = Signature::zero(bits.len() as u16, m);
        for (j, &b) in bits.iter().enumerate() {
            if b > 0 {
                s.set_block_bit(j, b);
            }
        }
        s
    }

    #[test]
    fn encode_full_mass_sets_top_bit() {
        let mut values = vec![0.0; 16];
        values[0] = 1.0;
        let s = Signature::encode(&hist(values), 10);
        assert_eq!(s.block_set_bits(0), vec![10]);
        for j in 1..16 {
            assert!(s.block_set_bits(j).is_empty());
        }
    }

    #[test]
    fn encode_uses_ceiling() {
        // 0.37 * 10 = 3.7 -> bit 4; 0.001 * 10 = 0.01 -> bit 1.
        let s = Signature::encode(&hist(vec![0.37, 0.629, 0.001]), 10);
        assert_eq!(s.block_set_bits(0), vec![4]);
        assert_eq!(s.block_set_bits(1), vec![7]);
        assert_eq!(s.block_set_bits(2), vec![1]);
    }

    #[test]
    fn weight_vector_decodes_percentages() {
        let s = sig_from_bits(10, &[4, 0]);
        assert_eq!(s.weight_vector().weights(), &[40.0, 0.0]);
        let z = Signature::zero(3, 10);
        assert_eq!(z.weight_vector().weights(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn encode_then_decode_half_split() {
        let s = Signature::encode(&hist(vec![0.5, 0.5]), 10);
        assert_eq!(s.weight_vector().weights(), &[50.0, 50.0]);
    }

    #[test]
    fn union_is_bitwise_or() {
        // n=1, m=4: 0100 = bit 2, 0010 = bit 3, union = 0110.
        let a = sig_from_bits(4, &[2]);
        let b = sig_from_bits(4, &[3]);
        let u = a.union(&b).unwrap();
        assert_eq!(u.block_set_bits(0), vec![2, 3]);
        assert_eq!(a.union(&a).unwrap(), a);
        let zero = Signature::zero(1, 4);
        assert_eq!(a.union(&zero).unwrap(), a);
    }

    #[test]
    fn union_weight_uses_summation_form() {
        let a = sig_from_bits(4, &[2]);
        let b = sig_from_bits(4, &[3]);
        let u = a.union(&b).unwrap();
        assert!(u.validate_image_signature().is_err());
        assert_eq!(u.weight_vector().weights(), &[125.0]);
    }

    #[test]
    fn covers_containment_cases() {
        let a = sig_from_bits(4, &[2]);
        let b = sig_from_bits(4, &[3]);
        let zero = Signature::zero(1, 4);
        assert!(a.covers(&a).unwrap());
        assert!(a.covers(&zero).unwrap());
        assert!(!a.covers(&b).unwrap());
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let a = Signature::zero(2, 4);
        let b = Signature::zero(2, 8);
        assert!(matches!(a.union(&b), Err(SignatureError::DimensionMismatch(..))));
        assert!(matches!(a.covers(&b), Err(SignatureError::DimensionMismatch(..))));
    }

    #[test]
    fn malformed_signature_detected() {
        let mut s = Signature::zero(2, 8);
        s.set_block_bit(1, 2);
        s.set_block_bit(1, 5);
        assert_eq!(
            s.validate_image_signature(),
            Err(SignatureError::MalformedSignature(1, 2))
        );
    }

    #[test]
    fn serialization_round_trip_and_size() {
        let s = Signature::encode(&hist(vec![0.25, 0.25, 0.5]), 10);
        assert_eq!(s.byte_len(), 4); // ceil(3*10/8)
        let mut buf = Vec::new();
        s.serialize_into(&mut buf);
        assert_eq!(buf.len(), s.serialized_len());
        let (back, used) = Signature::deserialize_from(&buf).unwrap();
        assert_eq!(used, buf.len());
        assert_eq!(back, s);
        assert!(Signature::deserialize_from(&buf[..3]).is_err());
    }

    #[test]
    fn hex_dump_is_lowercase_packed_bytes() {
        let s = sig_from_bits(8, &[1, 8]);
        assert_eq!(s.to_hex(), "0180");
    }

    proptest! {
        /// Encoded weights sit within one quantization step of the source
        /// fractions, and exactly on them when the fraction is a multiple
        /// of 1/m.
        #[test]
        fn encode_weight_round_trip(raw in proptest::collection::vec(0.0f64..1.0, 2..16), m in 1u16..32) {
            let sum: f64 = raw.iter().sum();
            prop_assume!(sum > 0.0);
            let h = Histogram::from_weights(&raw).unwrap();
            let s = Signature::encode(&h, m);
            s.validate_image_signature().unwrap();
            let w = s.weight_vector();
            for (j, &hv) in h.values().iter().enumerate() {
                let err = (w.weights()[j] - 100.0 * hv).abs();
                prop_assert!(err <= 100.0 / m as f64 + 1e-9, "bin {} err {}", j, err);
            }
        }

        /// Union soundness: the union covers both operands.
        #[test]
        fn union_covers_both_operands(
            a in proptest::collection::vec(0u16..9, 4),
            b in proptest::collection::vec(0u16..9, 4),
        ) {
            let sa = sig_from_bits(8, &a);
            let sb = sig_from_bits(8, &b);
            let u = sa.union(&sb).unwrap();
            prop_assert!(u.covers(&sa).unwrap());
            prop_assert!(u.covers(&sb).unwrap());
        }

        /// Exact round trip on the quantization grid: histograms whose bins
        /// are multiples of 1/m decode back to the same percentages.
        #[test]
        fn grid_histograms_decode_exactly(
            picks in proptest::collection::vec(0usize..6, 8),
            n in 6usize..10,
        ) {
            let m = 8u16;
            let mut levels = vec![0u32; n];
            for &p in &picks {
                levels[p] += 1;
            }
            let h = Histogram::from_weights(
                &levels.iter().map(|&l| l as f64).collect::<Vec<_>>(),
            ).unwrap();
            let s = Signature::encode(&h, m);
            let w = s.weight_vector();
            for (j, &hv) in h.values().iter().enumerate() {
                prop_assert!((w.weights()[j] - 100.0 * hv).abs() < 1e-9);
            }
        }
    }
}
