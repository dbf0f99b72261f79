//! Naive reference implementations shared by the integration tests. None of
//! this goes through the library's fast paths.

#![allow(dead_code)]

use rand::seq::SliceRandom;
use rand::Rng;

pub fn parity(x: usize) -> i64 {
    if x.count_ones().is_multiple_of(2) {
        1
    } else {
        -1
    }
}

/// Max DDT entry over nonzero input differences, by explicit pair counting.
pub fn naive_diff(table: &[u8]) -> u32 {
    let n = table.len();
    let mut best = 0;
    for a in 1..n {
        for b in 0..n {
            let mut count = 0;
            for x in 0..n {
                if (table[x] ^ table[x ^ a]) as usize == b {
                    count += 1;
                }
            }
            best = best.max(count);
        }
    }
    best
}

/// Max DDT entry using a per-difference histogram (cheaper for 8-bit).
pub fn naive_diff_hist(table: &[u8]) -> u32 {
    let n = table.len();
    let mut best = 0;
    for a in 1..n {
        let mut h = vec![0u32; n];
        for x in 0..n {
            h[(table[x] ^ table[x ^ a]) as usize] += 1;
        }
        best = best.max(*h.iter().max().unwrap());
    }
    best
}

/// Max |Walsh coefficient| by direct summation over every (a, b != 0).
pub fn naive_lin(table: &[u8]) -> u32 {
    let n = table.len();
    let mut best = 0i64;
    for a in 0..n {
        for b in 1..n {
            let s: i64 = (0..n)
                .map(|x| parity((b & table[x] as usize) ^ (a & x)))
                .sum();
            best = best.max(s.abs());
        }
    }
    best as u32
}

pub fn naive_branch(table: &[u8]) -> u32 {
    let n = table.len();
    let bits = n.trailing_zeros();
    (0..n)
        .flat_map(|x| (0..bits).map(move |k| (x, 1usize << k)))
        .map(|(x, a)| (table[x] ^ table[x ^ a]).count_ones())
        .min()
        .unwrap()
}

pub fn random_perm<R: Rng>(n: usize, rng: &mut R) -> Vec<u8> {
    let mut v: Vec<u8> = (0..n).map(|i| i as u8).collect();
    v.shuffle(rng);
    v
}

/// Bit-level interpreter of the SPN: unpack to 64 bits, substitute byte by
/// byte, move bit 8i+j to 8j+i, repeat; no diffusion after the last round.
pub fn interpret(tables: &[[u8; 256]; 8], rounds: u32, input: [u8; 8]) -> [u8; 8] {
    let mut state = input;
    for round in 0..rounds {
        for i in 0..8 {
            state[i] = tables[i][state[i] as usize];
        }
        if round + 1 < rounds {
            let mut bits = [0u8; 64];
            for i in 0..8 {
                for j in 0..8 {
                    bits[8 * j + i] = (state[i] >> j) & 1;
                }
            }
            let mut next = [0u8; 8];
            for (p, bit) in bits.iter().enumerate() {
                next[p / 8] |= bit << (p % 8);
            }
            state = next;
        }
    }
    state
}
