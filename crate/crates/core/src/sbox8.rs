//! Involutive 8-bit S-boxes built from 4-bit S-boxes with a symmetric,
//! odd-round, swapless balanced Feistel network.
//!
//! A byte splits into `L` (bits 7..4) and `R` (bits 3..0). Round `k` uses
//! the round function at position `min(k, r-1-k)` of the free list, so the
//! full sequence is the palindrome `S0, S1, .., S(r-1)/2, .., S1, S0`.
//! Even rounds update `L ^= S(R)`, odd rounds update `R ^= S(L)`. Every round
//! is self-inverse and round `k` equals round `r-1-k`, hence the whole
//! network is an involution.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::ParamError;
use crate::profile::{profile_table, SBoxProfile};
use crate::sbox4::SBox4;

/// Number of freely selectable round functions for `r` Feistel rounds.
pub fn free_count(r: u32) -> Result<usize, ParamError> {
    if r == 0 || r.is_multiple_of(2) {
        return Err(ParamError::InvalidFeistelRounds(r));
    }
    Ok(r.div_ceil(2) as usize)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeistelSpec {
    r: u32,
    free: Vec<SBox4>,
}

impl FeistelSpec {
    pub fn new(r: u32, free: Vec<SBox4>) -> Result<Self, ParamError> {
        let expected = free_count(r)?;
        if free.len() != expected {
            return Err(ParamError::FreeListLength {
                r,
                expected,
                got: free.len(),
            });
        }
        Ok(FeistelSpec { r, free })
    }

    pub fn rounds(&self) -> u32 {
        self.r
    }

    pub fn free(&self) -> &[SBox4] {
        &self.free
    }

    /// Round function used in round `k`.
    pub fn round_function(&self, k: u32) -> &SBox4 {
        let mirrored = k.min(self.r - 1 - k);
        &self.free[mirrored as usize]
    }

    /// Runs the `r` Feistel rounds on a single byte.
    pub fn evaluate(&self, x: u8) -> u8 {
        let (mut l, mut r) = (x >> 4, x & 0x0f);
        for k in 0..self.r {
            let f = self.round_function(k);
            if k % 2 == 0 {
                l ^= f.apply(r);
            } else {
                r ^= f.apply(l);
            }
        }
        (l << 4) | r
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SBox8 {
    table: [u8; 256],
    provenance: Option<FeistelSpec>,
}

impl SBox8 {
    /// Wraps an arbitrary 256-entry table.
    pub fn from_table(table: [u8; 256]) -> Self {
        SBox8 {
            table,
            provenance: None,
        }
    }

    pub fn identity() -> Self {
        let mut t = [0u8; 256];
        for (i, v) in t.iter_mut().enumerate() {
            *v = i as u8;
        }
        Self::from_table(t)
    }

    pub fn table(&self) -> &[u8; 256] {
        &self.table
    }

    pub fn provenance(&self) -> Option<&FeistelSpec> {
        self.provenance.as_ref()
    }

    #[inline]
    pub fn apply(&self, x: u8) -> u8 {
        self.table[x as usize]
    }

    pub fn is_permutation(&self) -> bool {
        crate::profile::is_bijective(&self.table)
    }

    /// `table[table[x]] == x` for every byte.
    pub fn is_involution(&self) -> bool {
        (0..=255u8).all(|x| self.apply(self.apply(x)) == x)
    }
}

impl fmt::Debug for SBox8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SBox8")
            .field("table", &hex::encode(self.table))
            .field("provenance", &self.provenance)
            .finish()
    }
}

/// 512 lowercase hex characters, entry 0 first.
impl fmt::Display for SBox8 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.table))
    }
}

impl FromStr for SBox8 {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bytes = hex::decode(s.trim()).map_err(|e| e.to_string())?;
        let table: [u8; 256] = bytes
            .try_into()
            .map_err(|b: Vec<u8>| format!("expected 256 bytes, got {}", b.len()))?;
        Ok(SBox8::from_table(table))
    }
}

pub fn feistel8(spec: &FeistelSpec) -> SBox8 {
    let mut table = [0u8; 256];
    for (x, out) in table.iter_mut().enumerate() {
        *out = spec.evaluate(x as u8);
    }
    SBox8 {
        table,
        provenance: Some(spec.clone()),
    }
}

/// Upper bound on max differential / linear probability implied by 4-bit
/// round functions with probability 2^-2.
pub const THEOREM_BOUND: f64 = 1.0 / 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Profile8 {
    pub profile: SBoxProfile,
    /// `diff / 256`
    pub max_differential_probability: f64,
    /// `(lin / 256)^2`
    pub max_linear_probability: f64,
    pub exceeds_differential_bound: bool,
    pub exceeds_linear_bound: bool,
}

pub fn profile8(s: &SBox8) -> Profile8 {
    let profile = profile_table(&s.table);
    let dp = profile.diff as f64 / 256.0;
    let lp = (profile.lin as f64 / 256.0).powi(2);
    Profile8 {
        profile,
        max_differential_probability: dp,
        max_linear_probability: lp,
        exceeds_differential_bound: dp > THEOREM_BOUND,
        exceeds_linear_bound: lp > THEOREM_BOUND,
    }
}

/// log2 of the number of 8-bit S-boxes reachable with `r` rounds from a set
/// of `set_size` 4-bit S-boxes: `((r+1)/2) * log2(set_size)`.
pub fn class_log2_cardinality(r: u32, set_size: u64) -> Result<f64, ParamError> {
    let free = free_count(r)?;
    if set_size == 0 {
        return Err(ParamError::EmptySet);
    }
    Ok(free as f64 * (set_size as f64).log2())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sbox4::{IDENTITY4, SERPENT_S0};

    #[test]
    fn identity_rounds_swap_nibbles() {
        let spec = FeistelSpec::new(3, vec![IDENTITY4, IDENTITY4]).unwrap();
        let s = feistel8(&spec);
        assert_eq!(s.apply(0x12), 0x21);
        for x in 0..=255u8 {
            assert_eq!(s.apply(x), x.rotate_left(4));
        }
        assert!(s.is_involution());
    }

    #[test]
    fn single_round_only_touches_left() {
        let spec = FeistelSpec::new(1, vec![SERPENT_S0]).unwrap();
        let s = feistel8(&spec);
        for x in 0..=255u8 {
            let expected = (((x >> 4) ^ SERPENT_S0.apply(x & 0x0f)) << 4) | (x & 0x0f);
            assert_eq!(s.apply(x), expected);
        }
        assert!(s.is_involution());
    }

    #[test]
    fn palindromic_round_order() {
        let spec = FeistelSpec::new(5, vec![SERPENT_S0, IDENTITY4, SERPENT_S0]).unwrap();
        let order: Vec<_> = (0..5).map(|k| *spec.round_function(k)).collect();
        assert_eq!(
            order,
            vec![SERPENT_S0, IDENTITY4, SERPENT_S0, IDENTITY4, SERPENT_S0]
        );
    }

    #[test]
    fn malformed_specs() {
        assert_eq!(
            FeistelSpec::new(2, vec![SERPENT_S0]),
            Err(ParamError::InvalidFeistelRounds(2))
        );
        assert_eq!(
            FeistelSpec::new(0, vec![]),
            Err(ParamError::InvalidFeistelRounds(0))
        );
        assert_eq!(
            FeistelSpec::new(3, vec![SERPENT_S0]),
            Err(ParamError::FreeListLength {
                r: 3,
                expected: 2,
                got: 1
            })
        );
    }

    #[test]
    fn linear_tables_have_trivial_profile() {
        let p = profile8(&SBox8::identity());
        assert_eq!((p.profile.diff, p.profile.lin), (256, 256));
        assert!(p.profile.bijective);
        let swap = feistel8(&FeistelSpec::new(3, vec![IDENTITY4, IDENTITY4]).unwrap());
        let p = profile8(&swap);
        assert_eq!((p.profile.diff, p.profile.lin), (256, 256));
        assert!(p.exceeds_differential_bound && p.exceeds_linear_bound);
    }

    #[test]
    fn cardinality() {
        assert_eq!(class_log2_cardinality(3, 1 << 21).unwrap(), 42.0);
        assert_eq!(class_log2_cardinality(1, 1 << 21).unwrap(), 21.0);
        assert_eq!(class_log2_cardinality(13, 1 << 21).unwrap(), 147.0);
        assert!(class_log2_cardinality(4, 16).is_err());
        assert!(class_log2_cardinality(3, 0).is_err());
    }

    #[test]
    fn hex_roundtrip() {
        let s = feistel8(&FeistelSpec::new(3, vec![SERPENT_S0, SERPENT_S0]).unwrap());
        let text = s.to_string();
        assert_eq!(text.len(), 512);
        let back: SBox8 = text.parse().unwrap();
        assert_eq!(back.table(), s.table());
        assert!("00".parse::<SBox8>().is_err());
    }
}
