//! Exhaustive differential/linear profiling of n-bit S-box tables.

use serde::Serialize;

/// Cryptographic property profile of an n-bit S-box.
///
/// `lin` is the largest absolute Walsh coefficient
/// `|sum_x (-1)^(b.S(x) ^ a.x)|` over all input masks `a` and nonzero output
/// masks `b`; `diff` is the largest DDT entry over nonzero input differences;
/// `branch_min` is the smallest output-difference weight over all one-bit
/// input differences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SBoxProfile {
    pub bijective: bool,
    pub lin: u32,
    pub diff: u32,
    pub branch_min: u32,
}

/// Width in bits of a table with `len` entries. Panics if `len` is not a
/// power of two between 2 and 256.
pub(crate) fn table_bits(len: usize) -> u32 {
    assert!(
        len.is_power_of_two() && (2..=256).contains(&len),
        "table length {len} is not a supported S-box size"
    );
    len.trailing_zeros()
}

pub fn is_bijective(table: &[u8]) -> bool {
    let mut seen = [false; 256];
    for &v in table {
        if (v as usize) >= table.len() || seen[v as usize] {
            return false;
        }
        seen[v as usize] = true;
    }
    true
}

pub fn max_ddt(table: &[u8]) -> u32 {
    let n = table.len();
    let mut best = 0u32;
    let mut row = vec![0u32; n];
    for a in 1..n {
        row.iter_mut().for_each(|c| *c = 0);
        for x in 0..n {
            row[(table[x] ^ table[x ^ a]) as usize] += 1;
        }
        best = best.max(*row.iter().max().unwrap());
    }
    best
}

/// In-place fast Walsh-Hadamard transform.
fn fwht(v: &mut [i32]) {
    let mut h = 1;
    while h < v.len() {
        for i in (0..v.len()).step_by(h * 2) {
            for j in i..i + h {
                let (x, y) = (v[j], v[j + h]);
                v[j] = x + y;
                v[j + h] = x - y;
            }
        }
        h *= 2;
    }
}

pub fn max_walsh(table: &[u8]) -> u32 {
    let n = table.len();
    let mut best = 0u32;
    let mut spectrum = vec![0i32; n];
    for b in 1..n {
        for (x, s) in spectrum.iter_mut().enumerate() {
            *s = if (table[x] as usize & b).count_ones() & 1 == 0 {
                1
            } else {
                -1
            };
        }
        fwht(&mut spectrum);
        best = best.max(spectrum.iter().map(|w| w.unsigned_abs()).max().unwrap());
    }
    best
}

pub fn branch_min(table: &[u8]) -> u32 {
    let n = table.len();
    let bits = table_bits(n);
    let mut best = u32::MAX;
    for x in 0..n {
        for k in 0..bits {
            let d = table[x] ^ table[x ^ (1 << k)];
            best = best.min(d.count_ones());
        }
    }
    best
}

pub fn profile_table(table: &[u8]) -> SBoxProfile {
    table_bits(table.len());
    SBoxProfile {
        bijective: is_bijective(table),
        lin: max_walsh(table),
        diff: max_ddt(table),
        branch_min: branch_min(table),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fwht_matches_direct_sum() {
        let table: Vec<u8> = (0..16u8).map(|x| (x * 7 + 3) & 15).collect();
        let b = 0b1011usize;
        let mut v: Vec<i32> = table
            .iter()
            .map(|&y| {
                if (y as usize & b).count_ones().is_multiple_of(2) {
                    1
                } else {
                    -1
                }
            })
            .collect();
        fwht(&mut v);
        for (a, &got) in v.iter().enumerate() {
            let direct: i32 = (0..16usize)
                .map(|x| {
                    let parity = (table[x] as usize & b).count_ones() + (x & a).count_ones();
                    if parity.is_multiple_of(2) {
                        1
                    } else {
                        -1
                    }
                })
                .sum();
            assert_eq!(got, direct, "a={a}");
        }
    }

    #[test]
    #[should_panic]
    fn rejects_odd_sizes() {
        profile_table(&[0u8; 15]);
    }
}
