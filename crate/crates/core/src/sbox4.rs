//! 4-bit S-boxes: Serpent-type verification, randomized generation and
//! pool files.

use std::collections::HashSet;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::entropy::EntropySource;
use crate::error::SboxError;
use crate::profile::{profile_table, SBoxProfile};

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SBox4([u8; 16]);

/// The first S-box published with Serpent.
pub const SERPENT_S0: SBox4 = SBox4([3, 8, 15, 1, 10, 6, 5, 11, 14, 13, 4, 2, 7, 0, 9, 12]);

pub const IDENTITY4: SBox4 = SBox4([0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15]);

impl SBox4 {
    pub fn new(table: [u8; 16]) -> Result<Self, SboxError> {
        if let Some(v) = table.iter().find(|&&v| v > 15) {
            return Err(SboxError::InvalidTable(format!(
                "value {v} is not a nibble"
            )));
        }
        Ok(SBox4(table))
    }

    pub fn table(&self) -> &[u8; 16] {
        &self.0
    }

    #[inline]
    pub fn apply(&self, x: u8) -> u8 {
        self.0[(x & 0x0f) as usize]
    }
}

impl fmt::Debug for SBox4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SBox4({self})")
    }
}

/// One hex digit per entry, entry 0 first.
impl fmt::Display for SBox4 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for v in self.0 {
            write!(f, "{v:X}")?;
        }
        Ok(())
    }
}

impl FromStr for SBox4 {
    type Err = SboxError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        if s.len() != 16 {
            return Err(SboxError::InvalidTable(format!(
                "expected 16 hex digits, got {}",
                s.len()
            )));
        }
        let mut table = [0u8; 16];
        for (slot, c) in table.iter_mut().zip(s.chars()) {
            *slot = c
                .to_digit(16)
                .ok_or_else(|| SboxError::InvalidTable(format!("bad hex digit {c:?}")))?
                as u8;
        }
        Ok(SBox4(table))
    }
}

pub fn profile4(s: &SBox4) -> SBoxProfile {
    profile_table(&s.0)
}

pub fn is_serpent_type(s: &SBox4) -> bool {
    let p = profile4(s);
    p.bijective && p.lin == 8 && p.diff == 4 && p.branch_min >= 2
}

/// Limits for [`sample_serpent_type`]. A single attempt is a randomized
/// depth-first search that gives up after `nodes_per_attempt` partial
/// assignments; the sampler restarts with fresh randomness up to
/// `max_attempts` times.
#[derive(Debug, Clone, Copy)]
pub struct SearchBudget {
    pub nodes_per_attempt: u32,
    pub max_attempts: u32,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            nodes_per_attempt: 4096,
            max_attempts: 10_000,
        }
    }
}

struct Search<'a> {
    entropy: &'a mut EntropySource,
    table: [u8; 16],
    used: u16,
    ddt: [[u8; 16]; 16],
    nodes: u32,
    node_cap: u32,
}

enum Step {
    Found,
    DeadEnd,
    OutOfBudget,
}

impl Search<'_> {
    fn fits(&self, x: usize, v: u8) -> bool {
        for y in 0..x {
            let a = x ^ y;
            let b = (v ^ self.table[y]) as usize;
            if a.count_ones() == 1 && b.count_ones() < 2 {
                return false;
            }
            // (x, y) and (y, x) land in the same cell
            if self.ddt[a][b] + 2 > 4 {
                return false;
            }
        }
        true
    }

    fn place(&mut self, x: usize, v: u8, sign: bool) {
        for y in 0..x {
            let cell = &mut self.ddt[x ^ y][(v ^ self.table[y]) as usize];
            if sign {
                *cell += 2;
            } else {
                *cell -= 2;
            }
        }
    }

    fn descend(&mut self, x: usize) -> Result<Step, SboxError> {
        if x == 16 {
            return Ok(if is_serpent_type(&SBox4(self.table)) {
                Step::Found
            } else {
                Step::DeadEnd
            });
        }
        let mut candidates: Vec<u8> = (0..16u8).filter(|v| self.used & (1 << v) == 0).collect();
        self.entropy.shuffle(&mut candidates)?;
        for v in candidates {
            self.nodes += 1;
            if self.nodes > self.node_cap {
                return Ok(Step::OutOfBudget);
            }
            if !self.fits(x, v) {
                continue;
            }
            self.table[x] = v;
            self.used |= 1 << v;
            self.place(x, v, true);
            match self.descend(x + 1)? {
                Step::DeadEnd => {}
                other => return Ok(other),
            }
            self.place(x, v, false);
            self.used &= !(1 << v);
        }
        Ok(Step::DeadEnd)
    }
}

/// Draws a random Serpent-type S-box. The partial permutation is pruned as
/// soon as a one-bit input difference maps to a one-bit output difference or
/// a DDT cell exceeds 4; linearity is checked on complete tables only.
pub fn sample_serpent_type(
    entropy: &mut EntropySource,
    budget: SearchBudget,
) -> Result<SBox4, SboxError> {
    for _ in 0..budget.max_attempts {
        let mut search = Search {
            entropy: &mut *entropy,
            table: [0; 16],
            used: 0,
            ddt: [[0; 16]; 16],
            nodes: 0,
            node_cap: budget.nodes_per_attempt,
        };
        if let Step::Found = search.descend(0)? {
            return Ok(SBox4(search.table));
        }
    }
    Err(SboxError::SearchBudgetExceeded {
        attempts: budget.max_attempts,
    })
}

const POOL_MAGIC: &[u8; 8] = b"SUCPOOL\0";
const POOL_VERSION: u16 = 1;
const POOL_HEADER_LEN: usize = 16;
const DIGEST_LEN: usize = 32;

/// An ordered set of distinct Serpent-type S-boxes with a SHA-256 digest
/// over the concatenated 16-byte records.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SBoxPool {
    entries: Vec<SBox4>,
    digest: [u8; 32],
}

impl SBoxPool {
    pub fn from_entries(entries: Vec<SBox4>) -> Result<Self, SboxError> {
        if entries.is_empty() {
            return Err(SboxError::InvalidPool("pool is empty".into()));
        }
        if entries.len() > u32::MAX as usize {
            return Err(SboxError::InvalidPool("pool too large".into()));
        }
        let mut seen = HashSet::with_capacity(entries.len());
        for (i, s) in entries.iter().enumerate() {
            if !is_serpent_type(s) {
                return Err(SboxError::InvalidPool(format!(
                    "entry {i} ({s}) is not Serpent-type"
                )));
            }
            if !seen.insert(*s) {
                return Err(SboxError::InvalidPool(format!(
                    "entry {i} ({s}) is a duplicate"
                )));
            }
        }
        let digest = content_digest(&entries);
        Ok(SBoxPool { entries, digest })
    }

    pub fn entries(&self) -> &[SBox4] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> Option<&SBox4> {
        self.entries.get(index)
    }

    pub fn digest(&self) -> [u8; 32] {
        self.digest
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out =
            Vec::with_capacity(POOL_HEADER_LEN + 4 + 16 * self.entries.len() + DIGEST_LEN);
        out.extend_from_slice(POOL_MAGIC);
        out.extend_from_slice(&POOL_VERSION.to_be_bytes());
        out.extend_from_slice(&[0u8; 6]);
        out.extend_from_slice(&(self.entries.len() as u32).to_be_bytes());
        for s in &self.entries {
            out.extend_from_slice(&s.0);
        }
        out.extend_from_slice(&self.digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SboxError> {
        let bad = |m: &str| SboxError::InvalidPool(m.to_string());
        if bytes.len() < POOL_HEADER_LEN + 4 + DIGEST_LEN {
            return Err(bad("file too short"));
        }
        if &bytes[..8] != POOL_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_be_bytes([bytes[8], bytes[9]]);
        if version != POOL_VERSION {
            return Err(SboxError::InvalidPool(format!(
                "unsupported version {version}"
            )));
        }
        let count = u32::from_be_bytes(bytes[16..20].try_into().unwrap()) as usize;
        let expected = POOL_HEADER_LEN + 4 + 16 * count + DIGEST_LEN;
        if bytes.len() != expected {
            return Err(SboxError::InvalidPool(format!(
                "length {} does not match count {count} (expected {expected})",
                bytes.len()
            )));
        }
        let records = &bytes[20..20 + 16 * count];
        let entries = records
            .chunks_exact(16)
            .map(|c| SBox4::new(c.try_into().unwrap()))
            .collect::<Result<Vec<_>, _>>()?;
        let pool = SBoxPool::from_entries(entries)?;
        if pool.digest[..] != bytes[expected - DIGEST_LEN..] {
            return Err(bad("content digest mismatch"));
        }
        Ok(pool)
    }

    pub fn write_to(&self, path: &Path) -> Result<(), SboxError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        f.sync_all()?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self, SboxError> {
        let mut buf = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut buf)?;
        Self::from_bytes(&buf)
    }
}

fn content_digest(entries: &[SBox4]) -> [u8; 32] {
    let mut h = Sha256::new();
    for s in entries {
        h.update(s.0);
    }
    h.finalize().into()
}

/// Samples `count` pairwise-distinct Serpent-type S-boxes.
pub fn build_pool(
    count: usize,
    entropy: &mut EntropySource,
    budget: SearchBudget,
) -> Result<SBoxPool, SboxError> {
    if count == 0 {
        return Err(SboxError::InvalidPool("count must be >= 1".into()));
    }
    let mut seen = HashSet::with_capacity(count);
    let mut entries = Vec::with_capacity(count);
    let mut duplicates = 0u32;
    while entries.len() < count {
        let s = sample_serpent_type(entropy, budget)?;
        if seen.insert(s) {
            entries.push(s);
        } else {
            duplicates += 1;
            if duplicates > budget.max_attempts {
                return Err(SboxError::SearchBudgetExceeded {
                    attempts: duplicates,
                });
            }
        }
    }
    SBoxPool::from_entries(entries)
}
