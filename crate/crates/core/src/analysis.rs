//! Avalanche experiments and the analytic personalization/boot cost model.

use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::entropy::{ceil_log2, EntropySource};
use crate::error::{ParamError, SboxError};
use crate::sbox4::{build_pool, SBoxPool, SearchBudget};
use crate::sbox8::{feistel8, free_count, FeistelSpec, SBox8};
use crate::suc::{Block64, SucInstance, SucParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SboxMode {
    /// One 8-bit S-box per instance, used in all eight positions.
    SingleReplicated,
    /// Eight independently drawn 8-bit S-boxes per instance.
    EightDistinct,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AvalancheConfig {
    pub suc_count: usize,
    pub trials_per_suc: usize,
    pub rounds: u32,
    pub feistel_r: u32,
    pub sbox_mode: SboxMode,
    pub seed: u64,
}

impl Default for AvalancheConfig {
    fn default() -> Self {
        AvalancheConfig {
            suc_count: 1000,
            trials_per_suc: 100,
            rounds: 15,
            feistel_r: 3,
            sbox_mode: SboxMode::SingleReplicated,
            seed: 0,
        }
    }
}

impl AvalancheConfig {
    fn validate(&self) -> Result<(), ParamError> {
        if self.rounds == 0 {
            return Err(ParamError::ZeroRounds);
        }
        if self.suc_count == 0 || self.trials_per_suc == 0 {
            return Err(ParamError::EmptySet);
        }
        free_count(self.feistel_r)?;
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AnalysisError {
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error(transparent)]
    Sbox(#[from] SboxError),
}

/// Chi-square goodness of fit of a Hamming-distance histogram against
/// Binomial(64, 1/2). Tail bins are merged until every bin expects at
/// least five observations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChiSquareFit {
    pub statistic: f64,
    pub degrees_of_freedom: usize,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvalancheResult {
    pub config: AvalancheConfig,
    /// `counts[d]` = number of single-bit flips whose outputs differ in `d` bits.
    pub counts: Vec<u64>,
    pub total: u64,
    pub mean: f64,
    pub stddev: f64,
    pub min: u32,
    pub max: u32,
    pub chi_square: ChiSquareFit,
}

impl AvalancheResult {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("hamming_distance,count\n");
        for (d, c) in self.counts.iter().enumerate() {
            s += &format!("{d},{c}\n");
        }
        s
    }

    /// Summary without the histogram, for the JSON sidecar.
    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "config": self.config,
            "total": self.total,
            "mean": self.mean,
            "stddev": self.stddev,
            "min": self.min,
            "max": self.max,
            "chi_square": self.chi_square,
        })
    }
}

/// Experiment S-box tables: a pool of `suc_count` distinct 4-bit S-boxes,
/// then per instance `k` its own entropy stream. In single mode the 8-bit
/// S-box takes pool entry `k` as its first round function and draws the
/// rest; in eight-distinct mode every free slot is drawn from the pool.
pub fn experiment_tables(cfg: &AvalancheConfig) -> Result<Vec<[SBox8; 8]>, AnalysisError> {
    cfg.validate()?;
    let mut entropy = EntropySource::seeded(cfg.seed);
    let pool = build_pool(cfg.suc_count, &mut entropy, SearchBudget::default())?;
    let per_box = free_count(cfg.feistel_r)?;
    (0..cfg.suc_count)
        .into_par_iter()
        .map(|k| {
            let mut e = EntropySource::seeded_stream(cfg.seed, k as u64 + 1);
            let draw = |e: &mut EntropySource| -> Result<_, AnalysisError> {
                let (i, _) = e
                    .uniform_below(pool.len() as u64)
                    .map_err(SboxError::from)?;
                Ok(pool.entries()[i as usize])
            };
            let tables = match cfg.sbox_mode {
                SboxMode::SingleReplicated => {
                    let mut free = vec![pool.entries()[k]];
                    for _ in 1..per_box {
                        free.push(draw(&mut e)?);
                    }
                    let s = feistel8(&FeistelSpec::new(cfg.feistel_r, free)?);
                    std::array::from_fn(|_| s.clone())
                }
                SboxMode::EightDistinct => {
                    let mut boxes = Vec::with_capacity(8);
                    for _ in 0..8 {
                        let free = (0..per_box)
                            .map(|_| draw(&mut e))
                            .collect::<Result<Vec<_>, _>>()?;
                        boxes.push(feistel8(&FeistelSpec::new(cfg.feistel_r, free)?));
                    }
                    boxes.try_into().unwrap()
                }
            };
            Ok(tables)
        })
        .collect()
}

fn instances_for(
    tables: &[[SBox8; 8]],
    rounds: u32,
    feistel_r: u32,
) -> Result<Vec<SucInstance>, ParamError> {
    let params = SucParams::new(rounds, feistel_r, [0; 32])?;
    Ok(tables
        .iter()
        .map(|t| SucInstance::new_unchecked(t.clone(), params))
        .collect())
}

#[derive(Debug, Clone)]
struct Tally {
    counts: [u64; 65],
}

impl Tally {
    fn new() -> Self {
        Tally { counts: [0; 65] }
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self
    }
}

fn tally_instance(suc: &SucInstance, trials: usize, seed: u64, k: usize) -> Tally {
    // disjoint from the table-drawing streams
    let mut e = EntropySource::seeded_stream(seed ^ 0xA5A5_5A5A_0F0F_F0F0, k as u64);
    let mut t = Tally::new();
    for _ in 0..trials {
        let x = Block64::from_word(e.next_u64().expect("seeded streams never run dry"));
        let y = suc.apply(x);
        for p in 0..64 {
            let d = suc.apply(x.with_bit_flipped(p)).hamming_distance(y);
            t.counts[d as usize] += 1;
        }
    }
    t
}

/// Flips each of the 64 input bits of `trials` random inputs per instance
/// and tallies output Hamming distances.
pub fn avalanche_over(instances: &[SucInstance], trials: usize, seed: u64) -> ([u64; 65], u64) {
    let tally = instances
        .par_iter()
        .enumerate()
        .map(|(k, suc)| tally_instance(suc, trials, seed, k))
        .reduce(Tally::new, Tally::merge);
    let total = tally.counts.iter().sum();
    (tally.counts, total)
}

fn binomial64_pmf() -> [f64; 65] {
    // C(64, d) / 2^64 via log-gamma-free recurrence
    let mut pmf = [0f64; 65];
    let mut c = 1f64;
    for (d, slot) in pmf.iter_mut().enumerate() {
        *slot = c / 2f64.powi(64);
        c = c * (64 - d) as f64 / (d + 1) as f64;
    }
    pmf
}

pub fn chi_square_binomial64(counts: &[u64; 65]) -> ChiSquareFit {
    let total: u64 = counts.iter().sum();
    let pmf = binomial64_pmf();
    let n = total as f64;
    // lower and upper merge boundaries
    let mut lo = 0;
    let mut acc = 0.0;
    while lo < 64 {
        acc += n * pmf[lo];
        if acc >= 5.0 {
            break;
        }
        lo += 1;
    }
    let mut hi = 64;
    let mut acc_hi = 0.0;
    while hi > lo {
        acc_hi += n * pmf[hi];
        if acc_hi >= 5.0 {
            break;
        }
        hi -= 1;
    }
    let mut bins: Vec<(f64, f64)> = Vec::new();
    let sum = |r: std::ops::RangeInclusive<usize>| {
        let obs: u64 = counts[r.clone()].iter().sum();
        let exp: f64 = r.map(|d| n * pmf[d]).sum();
        (obs as f64, exp)
    };
    bins.push(sum(0..=lo));
    for d in lo + 1..hi {
        bins.push(sum(d..=d));
    }
    if hi > lo {
        bins.push(sum(hi..=64));
    }
    let statistic: f64 = bins.iter().map(|(o, e)| (o - e) * (o - e) / e).sum();
    let df = bins.len().saturating_sub(1).max(1);
    let p_value = ChiSquared::new(df as f64)
        .map(|c| c.sf(statistic))
        .unwrap_or(f64::NAN);
    ChiSquareFit {
        statistic,
        degrees_of_freedom: df,
        p_value,
    }
}

fn summarize(config: AvalancheConfig, counts: [u64; 65], total: u64) -> AvalancheResult {
    let n = total as f64;
    let mean = counts
        .iter()
        .enumerate()
        .map(|(d, &c)| d as f64 * c as f64)
        .sum::<f64>()
        / n;
    let var = counts
        .iter()
        .enumerate()
        .map(|(d, &c)| (d as f64 - mean).powi(2) * c as f64)
        .sum::<f64>()
        / n;
    let min = counts.iter().position(|&c| c > 0).unwrap_or(0) as u32;
    let max = counts.iter().rposition(|&c| c > 0).unwrap_or(0) as u32;
    AvalancheResult {
        config,
        counts: counts.to_vec(),
        total,
        mean,
        stddev: var.sqrt(),
        min,
        max,
        chi_square: chi_square_binomial64(&counts),
    }
}

pub fn avalanche_histogram(cfg: &AvalancheConfig) -> Result<AvalancheResult, AnalysisError> {
    let tables = experiment_tables(cfg)?;
    let instances = instances_for(&tables, cfg.rounds, cfg.feistel_r)?;
    let (counts, total) = avalanche_over(&instances, cfg.trials_per_suc, cfg.seed);
    Ok(summarize(*cfg, counts, total))
}

/// Histogram over caller-supplied instances (test doubles included).
pub fn avalanche_histogram_for(
    instances: &[SucInstance],
    cfg: &AvalancheConfig,
) -> AvalancheResult {
    let (counts, total) = avalanche_over(instances, cfg.trials_per_suc, cfg.seed);
    summarize(*cfg, counts, total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RoundStats {
    pub rounds: u32,
    pub min: u32,
    pub mean: f64,
    pub max: u32,
}

/// Same instances, one avalanche run per round count in `from..=to`.
pub fn avalanche_vs_rounds(
    from: u32,
    to: u32,
    cfg: &AvalancheConfig,
) -> Result<Vec<RoundStats>, AnalysisError> {
    if from == 0 || to < from {
        return Err(ParamError::ZeroRounds.into());
    }
    let tables = experiment_tables(cfg)?;
    (from..=to)
        .map(|rounds| {
            let instances = instances_for(&tables, rounds, cfg.feistel_r)?;
            let (counts, total) = avalanche_over(&instances, cfg.trials_per_suc, cfg.seed);
            let r = summarize(AvalancheConfig { rounds, ..*cfg }, counts, total);
            Ok(RoundStats {
                rounds,
                min: r.min,
                mean: r.mean,
                max: r.max,
            })
        })
        .collect()
}

pub fn rounds_csv(rows: &[RoundStats]) -> String {
    let mut s = String::from("rounds,min,mean,max\n");
    for r in rows {
        s += &format!("{},{},{:.6},{}\n", r.rounds, r.min, r.mean, r.max);
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaInterpretation {
    /// `4 * ceil(log2 |S|) * (r+1)`, taken as a byte count.
    Literal,
    /// The same quantity read as bits and converted to bytes.
    ReconciledBytes,
}

pub fn kappa_trng(
    r: u32,
    set_size: u64,
    interpretation: KappaInterpretation,
) -> Result<u64, ParamError> {
    free_count(r)?;
    if set_size == 0 {
        return Err(ParamError::EmptySet);
    }
    let literal = 4 * ceil_log2(set_size) as u64 * (r as u64 + 1);
    Ok(match interpretation {
        KappaInterpretation::Literal => literal,
        KappaInterpretation::ReconciledBytes => literal / 8,
    })
}

/// Timing constants measured on the reference SoC. Times ending in `_us`
/// are microseconds, `_ms` milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CostConstants {
    /// TRNG time per unit of kappa.
    pub tau1_us: f64,
    /// TRNG fixed overhead.
    pub tau2_us: f64,
    /// Feistel S-box generation, per round.
    pub tau3_us: f64,
    /// Feistel S-box generation, fixed.
    pub tau4_us: f64,
    pub tau_puf_ms: f64,
    /// Encryption share per 8-bit S-box.
    pub tau_e_ms: f64,
    pub tau_envm_ms: f64,
    pub k1_us: f64,
    pub k2_us: f64,
    /// Cycles for one 15-round encryption in fabric.
    pub cycles_per_block: f64,
    pub reinit_read_envm_ms: f64,
    pub reinit_decrypt_ms: f64,
    pub reinit_write_lsram_ms: f64,
}

impl Default for CostConstants {
    fn default() -> Self {
        CostConstants {
            tau1_us: 4.78125,
            tau2_us: 388.0,
            tau3_us: 1.63,
            tau4_us: 0.07,
            tau_puf_ms: 30.0,
            tau_e_ms: 2.58,
            tau_envm_ms: 596.0,
            k1_us: 19.125,
            k2_us: 13.04,
            cycles_per_block: 144.0,
            reinit_read_envm_ms: 1.33,
            reinit_decrypt_ms: 18.0,
            reinit_write_lsram_ms: 1.77,
        }
    }
}

impl CostConstants {
    /// `tau2 + tau_puf + 8 (tau4 + tau_e) + tau_envm`, in ms.
    pub fn k3_ms(&self) -> f64 {
        self.tau2_us / 1e3
            + self.tau_puf_ms
            + 8.0 * (self.tau4_us / 1e3 + self.tau_e_ms)
            + self.tau_envm_ms
    }

    /// Checks `k1 = 4 tau1` and `k2 = 8 tau3` and non-negativity.
    pub fn identities_hold(&self, tol: f64) -> bool {
        let fields = [
            self.tau1_us,
            self.tau2_us,
            self.tau3_us,
            self.tau4_us,
            self.tau_puf_ms,
            self.tau_e_ms,
            self.tau_envm_ms,
            self.k1_us,
            self.k2_us,
            self.cycles_per_block,
            self.reinit_read_envm_ms,
            self.reinit_decrypt_ms,
            self.reinit_write_lsram_ms,
        ];
        fields.iter().all(|&v| v >= 0.0)
            && (self.k1_us - 4.0 * self.tau1_us).abs() <= tol
            && (self.k2_us - 8.0 * self.tau3_us).abs() <= tol
    }
}

/// TRNG time in ms for `kappa` units.
pub fn tau_trng(kappa: u64, c: &CostConstants) -> f64 {
    (c.tau1_us * kappa as f64 + c.tau2_us) / 1e3
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OtppCost {
    pub r: u32,
    pub set_size: u64,
    pub tau_trng_ms: f64,
    /// `8 * tau_r`
    pub sbox_generation_ms: f64,
    pub tau_puf_ms: f64,
    /// `8 * tau_e`
    pub encryption_ms: f64,
    pub tau_envm_ms: f64,
    /// Sum of the components.
    pub total_ms: f64,
    /// `k1 ceil(log2|S|) (r+1) + k2 r + k3`
    pub closed_form_ms: f64,
}

pub fn tau_otpp(r: u32, set_size: u64, c: &CostConstants) -> Result<OtppCost, ParamError> {
    let kappa = kappa_trng(r, set_size, KappaInterpretation::Literal)?;
    let tau_trng_ms = tau_trng(kappa, c);
    let tau_r_ms = (c.tau3_us * r as f64 + c.tau4_us) / 1e3;
    let sbox_generation_ms = 8.0 * tau_r_ms;
    let encryption_ms = 8.0 * c.tau_e_ms;
    let total_ms = tau_trng_ms + c.tau_puf_ms + sbox_generation_ms + encryption_ms + c.tau_envm_ms;
    let closed_form_ms =
        (c.k1_us * ceil_log2(set_size) as f64 * (r as f64 + 1.0) + c.k2_us * r as f64) / 1e3
            + c.k3_ms();
    Ok(OtppCost {
        r,
        set_size,
        tau_trng_ms,
        sbox_generation_ms,
        tau_puf_ms: c.tau_puf_ms,
        encryption_ms,
        tau_envm_ms: c.tau_envm_ms,
        total_ms,
        closed_form_ms,
    })
}

/// `r in {3,5,..,15}` by `|S| in {2^8,..,2^21}`.
pub fn otpp_grid(c: &CostConstants) -> Vec<OtppCost> {
    let mut rows = Vec::new();
    for r in (3..=15).step_by(2) {
        for bits in 8..=21 {
            rows.push(tau_otpp(r, 1u64 << bits, c).expect("grid inputs are valid"));
        }
    }
    rows
}

pub fn otpp_grid_csv(rows: &[OtppCost]) -> String {
    let mut s = String::from("r,set_size,log2_set_size,tau_otpp_ms\n");
    for row in rows {
        s += &format!(
            "{},{},{},{:.6}\n",
            row.r,
            row.set_size,
            ceil_log2(row.set_size),
            row.closed_form_ms
        );
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ReinitCost {
    pub read_envm_ms: f64,
    pub retrieve_puf_key_ms: f64,
    pub decrypt_ms: f64,
    pub write_lsram_ms: f64,
    pub total_ms: f64,
}

pub fn reinit_time(c: &CostConstants) -> ReinitCost {
    ReinitCost {
        read_envm_ms: c.reinit_read_envm_ms,
        retrieve_puf_key_ms: c.tau_puf_ms,
        decrypt_ms: c.reinit_decrypt_ms,
        write_lsram_ms: c.reinit_write_lsram_ms,
        total_ms: c.reinit_read_envm_ms
            + c.tau_puf_ms
            + c.reinit_decrypt_ms
            + c.reinit_write_lsram_ms,
    }
}

/// Fabric latency in microseconds of one block at `freq_mhz`.
pub fn hardware_latency_anchor(freq_mhz: f64, c: &CostConstants) -> Result<f64, ParamError> {
    if freq_mhz.is_nan() || freq_mhz <= 0.0 {
        return Err(ParamError::NonPositiveFrequency(freq_mhz));
    }
    Ok(c.cycles_per_block / freq_mhz)
}

/// The 4-bit pool [`experiment_tables`] draws from.
pub fn experiment_pool(cfg: &AvalancheConfig) -> Result<SBoxPool, AnalysisError> {
    let mut entropy = EntropySource::seeded(cfg.seed);
    Ok(build_pool(
        cfg.suc_count,
        &mut entropy,
        SearchBudget::default(),
    )?)
}
