//! Byte-oriented randomness sources used by S-box search, personalization
//! and the experiments.
//!
//! Three modes exist: a seeded ChaCha20 stream for reproducible runs, a
//! bounded recorded buffer for tests that need to control (or exhaust) the
//! exact bytes handed out, and the operating system RNG for production
//! personalization. Every mode counts the bytes it has delivered.

use rand::rngs::OsRng;
use rand::RngCore;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::error::EntropyError;

enum Mode {
    Seeded(Box<ChaCha20Rng>),
    Recorded { bytes: Vec<u8>, pos: usize },
    Os,
}

pub struct EntropySource {
    mode: Mode,
    consumed: u64,
}

impl std::fmt::Debug for EntropySource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mode = match &self.mode {
            Mode::Seeded(_) => "seeded",
            Mode::Recorded { .. } => "recorded",
            Mode::Os => "os",
        };
        f.debug_struct("EntropySource")
            .field("mode", &mode)
            .field("consumed", &self.consumed)
            .finish()
    }
}

impl EntropySource {
    /// Deterministic stream derived from a 64-bit seed.
    pub fn seeded(seed: u64) -> Self {
        Self::from_rng(ChaCha20Rng::seed_from_u64(seed))
    }

    /// Deterministic stream for worker `stream` of a run seeded with `seed`.
    /// Streams with different ids never overlap.
    pub fn seeded_stream(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self::from_rng(rng)
    }

    fn from_rng(rng: ChaCha20Rng) -> Self {
        EntropySource {
            mode: Mode::Seeded(Box::new(rng)),
            consumed: 0,
        }
    }

    /// Replays exactly `bytes`, then reports exhaustion.
    pub fn recorded(bytes: impl Into<Vec<u8>>) -> Self {
        EntropySource {
            mode: Mode::Recorded {
                bytes: bytes.into(),
                pos: 0,
            },
            consumed: 0,
        }
    }

    pub fn os() -> Self {
        EntropySource {
            mode: Mode::Os,
            consumed: 0,
        }
    }

    /// Total bytes delivered so far.
    pub fn consumed(&self) -> u64 {
        self.consumed
    }

    pub fn fill(&mut self, out: &mut [u8]) -> Result<(), EntropyError> {
        match &mut self.mode {
            Mode::Seeded(rng) => rng.fill_bytes(out),
            Mode::Os => OsRng
                .try_fill_bytes(out)
                .map_err(|e| EntropyError::Unavailable(e.to_string()))?,
            Mode::Recorded { bytes, pos } => {
                let remaining = bytes.len() - *pos;
                if remaining < out.len() {
                    return Err(EntropyError::Exhausted {
                        requested: out.len(),
                        remaining,
                    });
                }
                out.copy_from_slice(&bytes[*pos..*pos + out.len()]);
                *pos += out.len();
            }
        }
        self.consumed += out.len() as u64;
        Ok(())
    }

    pub fn next_u8(&mut self) -> Result<u8, EntropyError> {
        let mut b = [0u8; 1];
        self.fill(&mut b)?;
        Ok(b[0])
    }

    pub fn next_u64(&mut self) -> Result<u64, EntropyError> {
        let mut b = [0u8; 8];
        self.fill(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    /// Draws `bits` random bits (at most 64) using ceil(bits/8) bytes.
    pub fn next_bits(&mut self, bits: u32) -> Result<u64, EntropyError> {
        debug_assert!(bits <= 64);
        if bits == 0 {
            return Ok(0);
        }
        let nbytes = bits.div_ceil(8) as usize;
        let mut buf = [0u8; 8];
        self.fill(&mut buf[..nbytes])?;
        let v = u64::from_le_bytes(buf);
        Ok(if bits == 64 {
            v
        } else {
            v & ((1u64 << bits) - 1)
        })
    }

    /// Uniform value in `0..bound` by rejection sampling over the smallest
    /// bit width that covers `bound`. Returns the value and the number of
    /// draws taken (1 when nothing was rejected).
    pub fn uniform_below(&mut self, bound: u64) -> Result<(u64, u32), EntropyError> {
        assert!(bound > 0, "empty range");
        let bits = ceil_log2(bound);
        let mut draws = 0;
        loop {
            draws += 1;
            let v = self.next_bits(bits)?;
            if v < bound {
                return Ok((v, draws));
            }
        }
    }

    /// Fisher-Yates shuffle driven by this source.
    pub fn shuffle<T>(&mut self, items: &mut [T]) -> Result<(), EntropyError> {
        for i in (1..items.len()).rev() {
            let (j, _) = self.uniform_below(i as u64 + 1)?;
            items.swap(i, j as usize);
        }
        Ok(())
    }
}

/// ceil(log2(n)) for n >= 1; 0 for n == 1.
pub fn ceil_log2(n: u64) -> u32 {
    assert!(n > 0);
    if n == 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}
