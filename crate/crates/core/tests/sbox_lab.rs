mod common;

use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{naive_branch, naive_diff, naive_lin, random_perm};
use sram_suc::entropy::EntropySource;
use sram_suc::profile::{profile_table, SBoxProfile};
use sram_suc::sbox4::{
    build_pool, is_serpent_type, profile4, sample_serpent_type, SBox4, SBoxPool, SearchBudget,
    IDENTITY4, SERPENT_S0,
};

#[test]
fn fast_profile_matches_naive_counting_on_random_permutations() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..1000 {
        let t = random_perm(16, &mut rng);
        let p = profile_table(&t);
        assert!(p.bijective);
        assert_eq!(p.diff, naive_diff(&t), "{t:?}");
        assert_eq!(p.lin, naive_lin(&t), "{t:?}");
        assert_eq!(p.branch_min, naive_branch(&t), "{t:?}");
    }
}

#[test]
fn serpent_s0_profile() {
    let expected = SBoxProfile {
        bijective: true,
        lin: 8,
        diff: 4,
        branch_min: 2,
    };
    assert_eq!(profile4(&SERPENT_S0), expected);
    assert!(is_serpent_type(&SERPENT_S0));
    assert_eq!(SERPENT_S0.to_string(), "38F1A65BED42709C");
}

#[test]
fn identity_and_constant_tables() {
    let id = profile4(&IDENTITY4);
    assert_eq!(
        (id.bijective, id.lin, id.diff, id.branch_min),
        (true, 16, 16, 1)
    );
    assert!(!is_serpent_type(&IDENTITY4));

    let constant = profile_table(&[5u8; 16]);
    assert!(!constant.bijective);
    assert_eq!(
        (constant.lin, constant.diff, constant.branch_min),
        (16, 16, 0)
    );
    let c = SBox4::new([5; 16]).unwrap();
    assert!(!profile4(&c).bijective);
    assert!(!is_serpent_type(&c));
    assert!(SBox4::new([16; 16]).is_err());
}

#[test]
fn hex_parsing() {
    let s: SBox4 = "38f1a65bed42709c".parse().unwrap();
    assert_eq!(s, SERPENT_S0);
    assert!("38F1A65BED42709".parse::<SBox4>().is_err());
    assert!("38F1A65BED42709CC".parse::<SBox4>().is_err());
    assert!("38F1A65BED42709G".parse::<SBox4>().is_err());
    let dup: SBox4 = "0123456789ABCDEE".parse().unwrap();
    assert!(!profile4(&dup).bijective);
}

#[test]
fn sampler_golden_value_for_seed_zero() {
    let s = sample_serpent_type(&mut EntropySource::seeded(0), SearchBudget::default()).unwrap();
    assert_eq!(s.to_string(), "F2C1A50B847D639E");
}

#[test]
fn sampler_output_is_serpent_type_and_varied() {
    let mut seen = HashSet::new();
    for seed in 0..100 {
        let s =
            sample_serpent_type(&mut EntropySource::seeded(seed), SearchBudget::default()).unwrap();
        let p = profile4(&s);
        assert!(p.bijective && p.lin == 8 && p.diff == 4 && p.branch_min >= 2);
        assert_eq!(naive_diff(s.table()), 4);
        assert_eq!(naive_lin(s.table()), 8);
        seen.insert(s);
    }
    assert!(seen.len() >= 99, "only {} distinct tables", seen.len());
}

#[test]
fn sampler_fails_cleanly_on_exhausted_entropy() {
    let err = sample_serpent_type(
        &mut EntropySource::recorded(vec![0u8; 3]),
        SearchBudget::default(),
    );
    assert!(err.is_err());
}

#[test]
fn pool_of_256_roundtrips_and_detects_corruption() {
    let pool = build_pool(256, &mut EntropySource::seeded(0), SearchBudget::default()).unwrap();
    assert_eq!(pool.len(), 256);
    assert_eq!(pool.entries()[0].to_string(), "F2C1A50B847D639E");
    assert_eq!(
        hex::encode(pool.digest()),
        "b4714030fac3c67d00abfcc2dd3ff00c2be6a0916922aa62be6122a0c908eb8c"
    );
    let distinct: HashSet<_> = pool.entries().iter().collect();
    assert_eq!(distinct.len(), 256);
    assert!(pool.entries().iter().all(is_serpent_type));

    let bytes = pool.to_bytes();
    assert_eq!(bytes.len(), 16 + 4 + 16 * 256 + 32);
    assert_eq!(&bytes[..8], b"SUCPOOL\0");
    assert_eq!(SBoxPool::from_bytes(&bytes).unwrap(), pool);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.bin");
    pool.write_to(&path).unwrap();
    assert_eq!(SBoxPool::read_from(&path).unwrap(), pool);

    let mut bad = bytes.clone();
    bad[20] ^= 1;
    assert!(SBoxPool::from_bytes(&bad).is_err());
    let mut bad = bytes.clone();
    *bad.last_mut().unwrap() ^= 1;
    assert!(SBoxPool::from_bytes(&bad).is_err());
    assert!(SBoxPool::from_bytes(&bytes[..bytes.len() - 1]).is_err());

    let mut swapped = pool.entries().to_vec();
    swapped.swap(0, 1);
    assert_ne!(
        SBoxPool::from_entries(swapped).unwrap().digest(),
        pool.digest()
    );
}

#[test]
fn pool_rejects_duplicates_and_weak_entries() {
    assert!(SBoxPool::from_entries(vec![SERPENT_S0, SERPENT_S0]).is_err());
    assert!(SBoxPool::from_entries(vec![SERPENT_S0, IDENTITY4]).is_err());
    assert!(SBoxPool::from_entries(vec![]).is_err());
    assert!(build_pool(0, &mut EntropySource::seeded(0), SearchBudget::default()).is_err());
}

fn shifted(s: &SBox4, c: u8, d: u8) -> SBox4 {
    let t: [u8; 16] = std::array::from_fn(|x| s.apply(x as u8 ^ c) ^ d);
    SBox4::new(t).unwrap()
}

proptest! {
    #[test]
    fn serpent_type_closed_under_xor_shifts(seed in any::<u64>(), c in 0u8..16, d in 0u8..16) {
        let s = sample_serpent_type(&mut EntropySource::seeded(seed), SearchBudget::default()).unwrap();
        let t = shifted(&s, c, d);
        prop_assert!(is_serpent_type(&t));
        prop_assert_eq!(profile4(&t), profile4(&s));
    }

    #[test]
    fn inverse_preserves_lin_and_diff(seed in any::<u64>()) {
        let s = sample_serpent_type(&mut EntropySource::seeded(seed), SearchBudget::default()).unwrap();
        let mut inv = [0u8; 16];
        for x in 0..16u8 {
            inv[s.apply(x) as usize] = x;
        }
        let p = profile_table(&inv);
        prop_assert_eq!((p.lin, p.diff), (8, 4));
    }
}
