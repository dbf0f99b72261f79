//! The 64-bit involutive SPN: eight involutive 8-bit S-boxes, an 8x8
//! bit-matrix transpose as diffusion, `R` rounds with no diffusion after
//! the last substitution. Encryption and decryption are the same map.
//!
//! Byte `i` of a block feeds S-box `i`. Bit `j` of byte `i` (LSB = 0) has
//! global position `8i + j`; the diffusion layer moves it to `8j + i`.

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::entropy::EntropySource;
use crate::error::{EntropyError, ParamError};
use crate::sbox4::SBoxPool;
use crate::sbox8::{feistel8, free_count, FeistelSpec, SBox8};

pub const DEFAULT_ROUNDS: u32 = 15;
pub const DEFAULT_FEISTEL_ROUNDS: u32 = 3;
pub const TABLE_BYTES: usize = 8 * 256;

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Block64(pub [u8; 8]);

impl Block64 {
    pub const ZERO: Block64 = Block64([0; 8]);

    /// Little-endian word: bit `p` of the word is global bit position `p`.
    #[inline]
    pub fn to_word(self) -> u64 {
        u64::from_le_bytes(self.0)
    }

    #[inline]
    pub fn from_word(w: u64) -> Self {
        Block64(w.to_le_bytes())
    }

    pub fn bit(self, p: usize) -> bool {
        self.0[p / 8] >> (p % 8) & 1 == 1
    }

    pub fn with_bit_flipped(self, p: usize) -> Self {
        let mut b = self;
        b.0[p / 8] ^= 1 << (p % 8);
        b
    }

    pub fn hamming_distance(self, other: Block64) -> u32 {
        (self.to_word() ^ other.to_word()).count_ones()
    }
}

impl fmt::Debug for Block64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block64({self})")
    }
}

/// 16 uppercase hex characters, B0 first.
impl fmt::Display for Block64 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode_upper(self.0))
    }
}

impl FromStr for Block64 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let s = s.strip_prefix("0x").unwrap_or(s);
        let bytes = hex::decode(s).map_err(|e| e.to_string())?;
        let arr: [u8; 8] = bytes
            .try_into()
            .map_err(|b: Vec<u8>| format!("expected 8 bytes, got {}", b.len()))?;
        Ok(Block64(arr))
    }
}

/// Transposes the 8x8 bit matrix: bit `8i+j` moves to `8j+i`.
#[inline]
pub fn p_layer(b: Block64) -> Block64 {
    let mut x = b.to_word();
    let t = (x ^ (x >> 7)) & 0x00AA_00AA_00AA_00AA;
    x ^= t ^ (t << 7);
    let t = (x ^ (x >> 14)) & 0x0000_CCCC_0000_CCCC;
    x ^= t ^ (t << 14);
    let t = (x ^ (x >> 28)) & 0x0000_0000_F0F0_F0F0;
    x ^= t ^ (t << 28);
    Block64::from_word(x)
}

#[inline]
pub fn s_layer(b: Block64, sboxes: &[SBox8; 8]) -> Block64 {
    let mut out = [0u8; 8];
    for (i, o) in out.iter_mut().enumerate() {
        *o = sboxes[i].apply(b.0[i]);
    }
    Block64(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SucParams {
    pub rounds: u32,
    pub feistel_r: u32,
    pub pool_digest: [u8; 32],
}

impl SucParams {
    pub fn new(rounds: u32, feistel_r: u32, pool_digest: [u8; 32]) -> Result<Self, ParamError> {
        let p = SucParams {
            rounds,
            feistel_r,
            pool_digest,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn for_pool(pool: &SBoxPool) -> Self {
        SucParams {
            rounds: DEFAULT_ROUNDS,
            feistel_r: DEFAULT_FEISTEL_ROUNDS,
            pool_digest: pool.digest(),
        }
    }

    pub fn validate(&self) -> Result<(), ParamError> {
        if self.rounds == 0 {
            return Err(ParamError::ZeroRounds);
        }
        free_count(self.feistel_r)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SucInstance {
    sboxes: [SBox8; 8],
    params: SucParams,
}

impl SucInstance {
    /// Fails with the index of the first table that is not an involution.
    pub fn new(sboxes: [SBox8; 8], params: SucParams) -> Result<Self, SucBuildError> {
        params.validate()?;
        if let Some(i) = sboxes.iter().position(|s| !s.is_involution()) {
            return Err(SucBuildError::NotInvolutive(i));
        }
        Ok(SucInstance { sboxes, params })
    }

    /// Same table in every position.
    pub fn replicated(sbox: SBox8, params: SucParams) -> Result<Self, SucBuildError> {
        Self::new(std::array::from_fn(|_| sbox.clone()), params)
    }

    /// Builds an instance without the involution check, for fault-injection
    /// test doubles.
    #[doc(hidden)]
    pub fn new_unchecked(sboxes: [SBox8; 8], params: SucParams) -> Self {
        SucInstance { sboxes, params }
    }

    pub fn sboxes(&self) -> &[SBox8; 8] {
        &self.sboxes
    }

    pub fn params(&self) -> &SucParams {
        &self.params
    }

    /// Concatenated tables, S-box 0 first.
    pub fn table_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(TABLE_BYTES);
        for s in &self.sboxes {
            out.extend_from_slice(s.table());
        }
        out
    }

    pub fn from_table_bytes(bytes: &[u8], params: SucParams) -> Result<Self, SucBuildError> {
        if bytes.len() != TABLE_BYTES {
            return Err(SucBuildError::TableLength(bytes.len()));
        }
        let sboxes = std::array::from_fn(|i| {
            SBox8::from_table(bytes[i * 256..(i + 1) * 256].try_into().unwrap())
        });
        Self::new(sboxes, params)
    }

    pub fn table_digest(&self) -> [u8; 32] {
        Sha256::digest(self.table_bytes()).into()
    }

    /// `S (P S)^(R-1)`.
    pub fn apply(&self, x: Block64) -> Block64 {
        let mut b = s_layer(x, &self.sboxes);
        for _ in 1..self.params.rounds {
            b = s_layer(p_layer(b), &self.sboxes);
        }
        b
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SucBuildError {
    #[error("S-box {0} is not an involution")]
    NotInvolutive(usize),
    #[error("expected {TABLE_BYTES} table bytes, got {0}")]
    TableLength(usize),
    #[error(transparent)]
    Params(#[from] ParamError),
}

/// log2 of the number of distinct instances: `8 * ((r+1)/2) * log2(set_size)`.
pub fn suc_log2_cardinality(r: u32, set_size: u64) -> Result<f64, ParamError> {
    Ok(8.0 * crate::sbox8::class_log2_cardinality(r, set_size)?)
}

/// Pool indices chosen for one instance, grouped by S-box position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub indices: [Vec<usize>; 8],
    /// Index draws including rejected ones.
    pub draws: u32,
    /// Entropy bytes spent on index draws.
    pub bytes: u64,
}

/// Draws `4(r+1)` pool indices with replacement, each by rejection sampling
/// over `ceil(log2 |pool|)`-bit values, and builds the eight Feistel
/// S-boxes. Positions are filled in order, free round function 0 first.
pub fn select_instance(
    pool: &SBoxPool,
    params: SucParams,
    entropy: &mut EntropySource,
) -> Result<(SucInstance, Selection), SelectError> {
    params.validate()?;
    if params.pool_digest != pool.digest() {
        return Err(SelectError::PoolMismatch);
    }
    let per_box = free_count(params.feistel_r)?;
    let start = entropy.consumed();
    let mut draws = 0;
    let mut indices: [Vec<usize>; 8] = Default::default();
    for slot in indices.iter_mut() {
        for _ in 0..per_box {
            let (idx, n) = entropy.uniform_below(pool.len() as u64)?;
            draws += n;
            slot.push(idx as usize);
        }
    }
    let bytes = entropy.consumed() - start;
    let sboxes = std::array::from_fn(|i| {
        let free = indices[i].iter().map(|&k| pool.entries()[k]).collect();
        feistel8(&FeistelSpec::new(params.feistel_r, free).expect("validated r"))
    });
    let instance = SucInstance::new(sboxes, params).expect("Feistel tables are involutions");
    Ok((
        instance,
        Selection {
            indices,
            draws,
            bytes,
        },
    ))
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SelectError {
    #[error("params reference a different pool")]
    PoolMismatch,
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Entropy(#[from] EntropyError),
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbox4::IDENTITY4;

    fn params(rounds: u32) -> SucParams {
        SucParams::new(rounds, 3, [0; 32]).unwrap()
    }

    #[test]
    fn p_layer_moves_single_bit() {
        let b = Block64::ZERO.with_bit_flipped(1);
        let out = p_layer(b);
        assert!(out.bit(8));
        assert_eq!(out.to_word().count_ones(), 1);
        assert_eq!(p_layer(Block64::ZERO), Block64::ZERO);
    }

    #[test]
    fn p_layer_matches_bitwise_definition() {
        let b: Block64 = "0123456789ABCDEF".parse().unwrap();
        let out = p_layer(b);
        for i in 0..8 {
            for j in 0..8 {
                assert_eq!(out.bit(8 * j + i), b.bit(8 * i + j));
            }
        }
    }

    #[test]
    fn nibble_swap_s_layer() {
        let swap = feistel8(&FeistelSpec::new(3, vec![IDENTITY4, IDENTITY4]).unwrap());
        let tables: [SBox8; 8] = std::array::from_fn(|_| swap.clone());
        let x: Block64 = "0123456789ABCDEF".parse().unwrap();
        assert_eq!(s_layer(x, &tables).to_string(), "1032547698BADCFE");
        assert_eq!(s_layer(s_layer(x, &tables), &tables), x);
    }

    #[test]
    fn identity_tables_odd_rounds_are_identity() {
        let suc = SucInstance::replicated(SBox8::identity(), params(15)).unwrap();
        let x: Block64 = "0123456789ABCDEF".parse().unwrap();
        assert_eq!(suc.apply(x), x);
        // even R leaves one transpose uncancelled
        let suc = SucInstance::replicated(SBox8::identity(), params(2)).unwrap();
        assert_eq!(suc.apply(x), p_layer(x));
    }

    #[test]
    fn rejects_non_involutive_tables() {
        let mut t = *SBox8::identity().table();
        t.swap(1, 2);
        t.swap(2, 3); // 3-cycle
        let mut boxes: [SBox8; 8] = std::array::from_fn(|_| SBox8::identity());
        boxes[5] = SBox8::from_table(t);
        assert_eq!(
            SucInstance::new(boxes, params(15)),
            Err(SucBuildError::NotInvolutive(5))
        );
        assert!(SucParams::new(0, 3, [0; 32]).is_err());
        assert!(SucParams::new(15, 4, [0; 32]).is_err());
    }

    #[test]
    fn cardinalities() {
        assert_eq!(suc_log2_cardinality(13, 1 << 21).unwrap(), 1176.0);
        assert_eq!(suc_log2_cardinality(3, 1 << 21).unwrap(), 336.0);
        assert_eq!(suc_log2_cardinality(3, 256).unwrap(), 128.0);
        for r in (1..=15).step_by(2) {
            assert_eq!(
                suc_log2_cardinality(r, 1 << 21).unwrap(),
                84.0 * r as f64 + 84.0
            );
        }
        assert!(suc_log2_cardinality(2, 256).is_err());
    }

    #[test]
    fn block_hex() {
        let b: Block64 = "0x00000000000000FF".parse().unwrap();
        assert_eq!(b.0[7], 0xff);
        assert!("00".parse::<Block64>().is_err());
    }
}
