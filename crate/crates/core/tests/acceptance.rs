//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any
//! failure. `cargo test -p sram-suc --test acceptance`

mod common;

use std::collections::HashSet;
use std::fs;
use std::panic;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{naive_branch, naive_diff, naive_lin};
use sram_suc::analysis::{
    avalanche_histogram, avalanche_vs_rounds, hardware_latency_anchor, reinit_time, tau_otpp,
    tau_trng, AvalancheConfig, CostConstants, SboxMode,
};
use sram_suc::authority::{AuthResult, Authority, LocalChannel, UirStore, CRP_BYTES};
use sram_suc::entropy::EntropySource;
use sram_suc::error::GenieError;
use sram_suc::genie::{Device, EnvmRecord, SealedBlob};
use sram_suc::netlink::{decode, serve_ta, spawn_agent, FrameDecoder, TaConfig, MAGIC};
use sram_suc::sbox4::{build_pool, SBoxPool, SearchBudget};
use sram_suc::sbox8::{feistel8, profile8, FeistelSpec};
use sram_suc::suc::{select_instance, suc_log2_cardinality, Block64, SucInstance, SucParams};

struct Outcome {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn pool256() -> SBoxPool {
    build_pool(256, &mut EntropySource::seeded(0), SearchBudget::default()).unwrap()
}

fn instance(pool: &SBoxPool, params: SucParams, seed: u64) -> Arc<SucInstance> {
    Arc::new(
        select_instance(pool, params, &mut EntropySource::seeded(seed))
            .unwrap()
            .0,
    )
}

fn criterion_1() -> Outcome {
    let started = Instant::now();
    let pool = pool256();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut entropy = EntropySource::seeded(1);
    let mut failures = 0u64;
    let mut tables_checked = 0u64;
    let mut bad_tables = 0u64;
    for k in 0..1000 {
        let r = [1, 3, 5, 7][k % 4];
        let rounds = 1 + (k as u32 % 32);
        let params = SucParams::new(rounds, r, pool.digest()).unwrap();
        let (inst, _) = select_instance(&pool, params, &mut entropy).unwrap();
        for s in inst.sboxes() {
            tables_checked += 1;
            if (0..=255u8).any(|x| s.apply(s.apply(x)) != x) {
                bad_tables += 1;
            }
        }
        for _ in 0..100 {
            let x = Block64(rng.gen());
            if inst.apply(inst.apply(x)) != x {
                failures += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    check(
        failures == 0 && bad_tables == 0 && elapsed < Duration::from_secs(60),
        format!(
            "100000 pairs, {failures} failures; {tables_checked} tables, {bad_tables} not involutive; {:.2}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_2() -> Outcome {
    let started = Instant::now();
    let pool = pool256();
    let build = started.elapsed();
    let ok = pool
        .entries()
        .iter()
        .filter(|s| {
            let t = s.table();
            let bijective = t.iter().collect::<HashSet<_>>().len() == 16;
            bijective && naive_lin(t) == 8 && naive_diff(t) == 4 && naive_branch(t) >= 2
        })
        .count();
    check(
        pool.len() == 256 && ok == 256 && build < Duration::from_secs(300),
        format!("{ok}/256 verified, built in {:.3}s", build.as_secs_f64()),
    )
}

fn criterion_3() -> Outcome {
    let v = suc_log2_cardinality(13, 1 << 21).unwrap();
    let closed_form = (1..=15)
        .step_by(2)
        .all(|r| suc_log2_cardinality(r, 1 << 21).unwrap() == 84.0 * r as f64 + 84.0);
    check(
        v == 1176.0 && closed_form,
        format!("log2 |SUC| (r=13, |S|=2^21) = {v}; 84r+84 closed form holds: {closed_form}"),
    )
}

fn criterion_4() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for mode in [SboxMode::SingleReplicated, SboxMode::EightDistinct] {
        let cfg = AvalancheConfig {
            sbox_mode: mode,
            ..AvalancheConfig::default()
        };
        let r = avalanche_histogram(&cfg).unwrap();
        let ok = (r.mean - 32.0).abs() <= 0.5
            && (r.stddev - 4.0).abs() <= 0.5
            && r.chi_square.p_value >= 0.01
            && r.total == 1000 * 100 * 64;
        pass &= ok;
        parts.push(format!(
            "{mode:?}: mean {:.4}, sd {:.4}, chi2 {:.1} (df {}) p={:.3}",
            r.mean,
            r.stddev,
            r.chi_square.statistic,
            r.chi_square.degrees_of_freedom,
            r.chi_square.p_value
        ));
    }
    check(
        pass,
        format!(
            "1000 SUCs x 100 inputs x 64 flips, R=15; {}",
            parts.join("; ")
        ),
    )
}

fn criterion_5() -> Outcome {
    let cfg = AvalancheConfig {
        suc_count: 100,
        ..AvalancheConfig::default()
    };
    let rows = avalanche_vs_rounds(1, 32, &cfg).unwrap();
    let first = rows[0].mean;
    let tail: Vec<f64> = rows
        .iter()
        .filter(|r| r.rounds >= 5)
        .map(|r| r.mean)
        .collect();
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    check(
        rows.len() == 32 && first < 9.0 && lo >= 31.5 && hi <= 32.5,
        format!(
            "R=1..32 over 100 SUCs: mean(1)={first:.3}, mean(2)={:.3}, mean(3)={:.3}, R>=5 in [{lo:.3}, {hi:.3}]",
            rows[1].mean, rows[2].mean
        ),
    )
}

fn criterion_6() -> Outcome {
    let c = CostConstants::default();
    let otpp = tau_otpp(3, 256, &c).unwrap().closed_form_ms;
    let trng = tau_trng(16, &c);
    let reinit = reinit_time(&c).total_ms;
    let a50 = hardware_latency_anchor(50.0, &c).unwrap();
    let a200 = hardware_latency_anchor(200.0, &c).unwrap();
    let pass = (otpp - 647.679).abs() <= 0.1
        && (trng - 0.464).abs() <= 0.001
        && (reinit - 51.0).abs() <= 0.2
        && (a50 - 2.88).abs() < 1e-9
        && (a200 - 0.72).abs() < 1e-9
        && c.identities_hold(1e-9);
    check(
        pass,
        format!(
            "tau_otpp(3,256)={otpp:.5} ms, tau_trng(16)={trng:.4} ms, reinit={reinit:.2} ms, 50MHz={a50} us, 200MHz={a200} us"
        ),
    )
}

fn criterion_7() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pool = pool256();
    let prefix = dir.path().join("ACC7");
    let mut dev = Device::manufacture(&prefix, &mut EntropySource::seeded(70)).unwrap();
    let mut entropy = EntropySource::seeded(71);
    let report = dev
        .otpp(&pool, SucParams::for_pool(&pool), &mut entropy)
        .unwrap();
    let one_time = matches!(
        dev.otpp(
            &pool,
            SucParams::for_pool(&pool),
            &mut EntropySource::seeded(72)
        ),
        Err(GenieError::AlreadyPersonalized)
    );
    let accounting = report.selection.draws == 16 && report.selection.bytes == 16;

    let mut digests_equal = true;
    for _ in 0..3 {
        dev.power_cycle();
        digests_equal &= dev.reinit().unwrap().table_digest() == report.table_digest;
    }

    let good = fs::read_to_string(dev.envm_path()).unwrap();
    let record = EnvmRecord::parse(&good).unwrap();
    let blob = record.sealed.clone().unwrap().to_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let mut detected = 0;
    for _ in 0..1000 {
        let mut bytes = blob.clone();
        let i = rng.gen_range(0..bytes.len());
        bytes[i] ^= rng.gen_range(1..=255u8);
        let mut bad = record.clone();
        bad.sealed = Some(SealedBlob::from_bytes(&bytes).unwrap());
        fs::write(dev.envm_path(), bad.to_text()).unwrap();
        if matches!(dev.reinit(), Err(GenieError::Integrity)) && dev.loaded().is_none() {
            detected += 1;
        }
    }
    fs::write(dev.envm_path(), &good).unwrap();
    let restored = dev.reinit().is_ok();

    check(
        one_time && accounting && digests_equal && detected == 1000 && restored,
        format!(
            "one-time enforced: {one_time}; draws {}/bytes {} (r=3, |S|=256); digest stable across power cycles: {digests_equal}; tamper detected {detected}/1000",
            report.selection.draws, report.selection.bytes
        ),
    )
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let pool = pool256();
    let params = SucParams::for_pool(&pool);
    let authority = Authority::new(
        UirStore::open(&dir.path().join("uir")).unwrap(),
        EntropySource::seeded(80),
    );
    let ta = serve_ta("127.0.0.1:0", Arc::new(authority), TaConfig::default()).unwrap();
    let addr = ta.local_addr();

    let _genuine = spawn_agent("ACC8", Some(instance(&pool, params, 81)), addr);
    assert!(ta.wait_for_agent("ACC8", Duration::from_secs(5)));
    let enrolled = ta.enroll("ACC8", 1024).unwrap();
    let accepted = (0..1024)
        .filter(|_| ta.authenticate("ACC8").unwrap() == AuthResult::Accepted)
        .count();
    let exhausted = ta.authenticate("ACC8").unwrap() == AuthResult::Exhausted;
    let log = ta.authority().audit_log();
    let used: HashSet<_> = log
        .iter()
        .filter(|e| e.serial == "ACC8")
        .map(|e| e.pair_index)
        .collect();
    let rec = ta
        .authority()
        .store()
        .get("ACC8")
        .unwrap()
        .lock()
        .unwrap()
        .clone();
    let consumed_once = used.len() == 1024 && rec.unused() == 0 && rec.pairs.iter().all(|p| p.used);
    let timings = ta.auth_timings();
    let mean_us =
        timings.iter().map(Duration::as_micros).sum::<u128>() / timings.len().max(1) as u128;

    let genuine_imp = spawn_agent("IMP", Some(instance(&pool, params, 82)), addr);
    assert!(ta.wait_for_agent("IMP", Duration::from_secs(5)));
    ta.enroll("IMP", 1000).unwrap();
    let _impostor = spawn_agent("IMP", Some(instance(&pool, params, 83)), addr);
    let _ = genuine_imp.join();
    let rejected = (0..1000)
        .filter(|_| ta.authenticate("IMP").unwrap() == AuthResult::Rejected)
        .count();

    let mut rng = ChaCha8Rng::seed_from_u64(84);
    let mut crashes = 0;
    for i in 0..100_000 {
        let len = rng.gen_range(0..48);
        let mut bytes: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
        if i % 2 == 0 {
            bytes.splice(0..0, MAGIC);
        }
        let r = panic::catch_unwind(|| {
            let _ = decode(&bytes);
            let mut d = FrameDecoder::default();
            d.push(&bytes);
            let _ = d.next_frame();
        });
        if r.is_err() {
            crashes += 1;
        }
    }

    let local = Authority::new(
        UirStore::open(&dir.path().join("local")).unwrap(),
        EntropySource::seeded(85),
    );
    let mut ch = LocalChannel::new(instance(&pool, params, 86));
    let b16 = local
        .enroll(&mut ch, "T16", params, 16)
        .unwrap()
        .payload_bytes;
    let b2048 = local
        .enroll(&mut ch, "T2048", params, 2048)
        .unwrap()
        .payload_bytes;

    ta.shutdown();
    check(
        enrolled.payload_bytes == 1024 * CRP_BYTES
            && accepted == 1024
            && consumed_once
            && exhausted
            && rejected == 1000
            && crashes == 0
            && b16 == 256
            && b2048 == 32768,
        format!(
            "t=1024 over TCP: {accepted}/1024 accepted, each pair once: {consumed_once}, 1025th exhausted: {exhausted}, mean auth {mean_us} us; impostor rejected {rejected}/1000; fuzz 100000 frames, {crashes} crashes; payload t=16 -> {b16} B, t=2048 -> {b2048} B"
        ),
    )
}

fn criterion_9() -> Outcome {
    let pool = pool256();
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let mut diff_hist = std::collections::BTreeMap::new();
    let mut lin_hist = std::collections::BTreeMap::new();
    let (mut over_dp, mut over_lp) = (0, 0);
    let n = 1000;
    for _ in 0..n {
        let free = (0..2)
            .map(|_| pool.entries()[rng.gen_range(0..pool.len())])
            .collect();
        let p = profile8(&feistel8(&FeistelSpec::new(3, free).unwrap()));
        *diff_hist.entry(p.profile.diff).or_insert(0) += 1;
        *lin_hist.entry(p.profile.lin).or_insert(0) += 1;
        over_dp += p.exceeds_differential_bound as u32;
        over_lp += p.exceeds_linear_bound as u32;
    }
    let fmt = |h: &std::collections::BTreeMap<u32, u32>| {
        h.iter()
            .map(|(v, c)| format!("{}/256:{c}", v))
            .collect::<Vec<_>>()
            .join(" ")
    };
    check(
        diff_hist.values().sum::<u32>() == n,
        format!(
            "{n} r=3 S-boxes; max DDT {{{}}}; max |Walsh| {{{}}}; exceeding 2^-4: DP {:.3}, LP {:.3} (reported, no threshold)",
            fmt(&diff_hist),
            fmt(&lin_hist),
            over_dp as f64 / n as f64,
            over_lp as f64 / n as f64
        ),
    )
}

fn main() {
    let criteria: [(u32, fn() -> Outcome); 9] = [
        (1, criterion_1),
        (2, criterion_2),
        (3, criterion_3),
        (4, criterion_4),
        (5, criterion_5),
        (6, criterion_6),
        (7, criterion_7),
        (8, criterion_8),
        (9, criterion_9),
    ];
    let mut failed = 0;
    for (n, run) in criteria {
        let started = Instant::now();
        let outcome = panic::catch_unwind(run).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        if !outcome.pass {
            failed += 1;
        }
        println!(
            "[criterion {n}] {} {} ({:.1}s)",
            if outcome.pass { "PASS" } else { "FAIL" },
            outcome.detail,
            started.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
