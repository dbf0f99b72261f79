use std::fs;
use std::io::Write;
use std::net::ToSocketAddrs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use sram_suc::analysis::{
    avalanche_histogram, avalanche_vs_rounds, hardware_latency_anchor, kappa_trng, otpp_grid,
    otpp_grid_csv, reinit_time, rounds_csv, tau_otpp, AvalancheConfig, CostConstants,
    KappaInterpretation, SboxMode,
};
use sram_suc::authority::{AuthResult, Authority, SelectionPolicy, UirStore};
use sram_suc::entropy::EntropySource;
use sram_suc::error::ParamError;
use sram_suc::genie::Device;
use sram_suc::netlink::{request_authenticate, request_enroll, run_agent, serve_ta, TaConfig};
use sram_suc::profile::SBoxProfile;
use sram_suc::sbox4::{build_pool, profile4, SBox4, SBoxPool, SearchBudget};
use sram_suc::sbox8::{class_log2_cardinality, feistel8, profile8, FeistelSpec, SBox8};
use sram_suc::suc::{
    suc_log2_cardinality, Block64, SucParams, DEFAULT_FEISTEL_ROUNDS, DEFAULT_ROUNDS,
};

#[derive(Debug, Parser)]
#[command(name = "sram-suc", version, about = "SRAM-SUC emulation toolkit")]
struct Cli {
    /// Seed for deterministic entropy; OS randomness when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Repeat for more log output (RUST_LOG overrides).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Eight,
}

impl From<Mode> for SboxMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Single => SboxMode::SingleReplicated,
            Mode::Eight => SboxMode::EightDistinct,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Policy {
    Sequential,
    Random,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a pool of distinct Serpent-type 4-bit S-boxes.
    GenPool {
        #[arg(long, default_value_t = 256)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Profile a 4-bit S-box given as 16 hex digits.
    Profile {
        #[arg(long)]
        sbox: SBox4,
    },
    /// Build an involutive 8-bit S-box from pool entries.
    BuildSbox8 {
        #[arg(long, default_value_t = DEFAULT_FEISTEL_ROUNDS)]
        r: u32,
        /// Comma-separated pool indices, (r+1)/2 of them.
        #[arg(long, value_delimiter = ',')]
        free: Vec<usize>,
        #[arg(long)]
        pool: PathBuf,
        /// Output file for the 512-hex-digit table; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Profile an 8-bit S-box table file (512 hex digits).
    Profile8 {
        #[arg(long)]
        table: PathBuf,
    },
    /// Create a blank device (PREFIX.silicon, PREFIX.envm).
    NewDevice {
        #[arg(long)]
        device: PathBuf,
    },
    /// One-time personalization of a blank device.
    Personalize {
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        pool: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ROUNDS)]
        rounds: u32,
        #[arg(long, default_value_t = DEFAULT_FEISTEL_ROUNDS)]
        r: u32,
    },
    /// Reinitialize a device and report the loaded tables' digest.
    Boot {
        #[arg(long)]
        device: PathBuf,
    },
    /// Corrupt one byte of the sealed payload (test helper).
    Tamper {
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        byte: usize,
    },
    /// Boot a device and answer one challenge.
    Respond {
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        challenge: Block64,
    },
    /// Run the Trusted Authority service.
    ServeTa {
        #[arg(long, default_value = "127.0.0.1:7700")]
        listen: String,
        #[arg(long)]
        uir: PathBuf,
        #[arg(long, value_enum, default_value_t = Policy::Sequential)]
        policy: Policy,
        /// Per-session read timeout in seconds.
        #[arg(long, default_value_t = 10)]
        timeout: u64,
    },
    /// Boot a device and serve challenges for the TA.
    Agent {
        #[arg(long)]
        device: PathBuf,
        #[arg(long)]
        connect: String,
    },
    /// Ask the TA to enroll a connected device.
    Enroll {
        #[arg(long)]
        sn: String,
        #[arg(long, default_value_t = 16)]
        pairs: u32,
        #[arg(long, default_value = "127.0.0.1:7700")]
        ta: String,
    },
    /// Ask the TA to authenticate a connected device once.
    Authenticate {
        #[arg(long)]
        sn: String,
        #[arg(long, default_value = "127.0.0.1:7700")]
        ta: String,
        /// Send the stored response and expect the challenge back.
        #[arg(long)]
        inverse: bool,
    },
    /// Pair usage per enrolled serial.
    UirStats {
        #[arg(long)]
        uir: PathBuf,
    },
    /// Avalanche histogram over output Hamming distance.
    Avalanche {
        #[arg(long, default_value_t = 1000)]
        sucs: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_ROUNDS)]
        rounds: u32,
        #[arg(long, default_value_t = DEFAULT_FEISTEL_ROUNDS)]
        r: u32,
        #[arg(long, value_enum, default_value_t = Mode::Single)]
        mode: Mode,
        /// Histogram CSV; a .json summary is written next to it.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Avalanche min/mean/max per round count.
    AvalancheRounds {
        #[arg(long, default_value_t = 1)]
        from: u32,
        #[arg(long, default_value_t = 32)]
        to: u32,
        #[arg(long, default_value_t = 100)]
        sucs: usize,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = DEFAULT_FEISTEL_ROUNDS)]
        r: u32,
        #[arg(long, value_enum, default_value_t = Mode::Single)]
        mode: Mode,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Analytic personalization and boot cost.
    CostModel {
        #[arg(long, default_value_t = DEFAULT_FEISTEL_ROUNDS)]
        r: u32,
        #[arg(long, default_value_t = 256)]
        set_size: u64,
        /// Full r x |S| grid as CSV.
        #[arg(long)]
        grid: bool,
    },
    /// log2 of the number of distinct cipher instances.
    Cardinality {
        #[arg(long)]
        r: u32,
        #[arg(long)]
        set_size: u64,
    },
}

fn entropy(seed: Option<u64>) -> EntropySource {
    match seed {
        Some(s) => EntropySource::seeded(s),
        None => EntropySource::os(),
    }
}

/// Prints one record either as a header+row CSV or as a JSON object.
fn emit(format: Format, value: serde_json::Value) {
    match format {
        Format::Json => println!("{value}"),
        Format::Csv => {
            let obj = value.as_object().expect("records are objects");
            let keys: Vec<_> = obj.keys().cloned().collect();
            let vals: Vec<_> = obj
                .values()
                .map(|v| match v {
                    serde_json::Value::String(s) => s.clone(),
                    other => other.to_string(),
                })
                .collect();
            println!("{}\n{}", keys.join(","), vals.join(","));
        }
    }
}

fn profile_json(p: &SBoxProfile) -> serde_json::Value {
    json!({
        "bijective": p.bijective,
        "lin": p.lin,
        "diff": p.diff,
        "branch_min": p.branch_min,
    })
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn resolve(addr: &str) -> Result<std::net::SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| anyhow!("cannot resolve {addr}"))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let fmt = cli.format;
    match cli.command {
        Command::GenPool { count, out } => {
            let pool = build_pool(count, &mut entropy(cli.seed), SearchBudget::default())?;
            pool.write_to(&out)?;
            emit(
                fmt,
                json!({"count": pool.len(), "digest": hex::encode(pool.digest()), "file": out.display().to_string()}),
            );
        }
        Command::Profile { sbox } => {
            let p = profile4(&sbox);
            let mut v = profile_json(&p);
            v["serpent_type"] = json!(sram_suc::sbox4::is_serpent_type(&sbox));
            emit(fmt, v);
        }
        Command::BuildSbox8 { r, free, pool, out } => {
            let pool = SBoxPool::read_from(&pool)?;
            let free = free
                .iter()
                .map(|&i| {
                    pool.get(i).copied().ok_or_else(|| {
                        anyhow!("pool index {i} out of range ({} entries)", pool.len())
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let s = feistel8(&FeistelSpec::new(r, free)?);
            write_or_print(out.as_deref(), &format!("{s}\n"))?;
        }
        Command::Profile8 { table } => {
            let text = fs::read_to_string(&table)?;
            let s: SBox8 = text
                .parse()
                .map_err(|e: String| anyhow!("{}: {e}", table.display()))?;
            let p = profile8(&s);
            let mut v = profile_json(&p.profile);
            v["involution"] = json!(s.is_involution());
            v["max_differential_probability"] = json!(p.max_differential_probability);
            v["max_linear_probability"] = json!(p.max_linear_probability);
            v["exceeds_bound"] = json!(p.exceeds_differential_bound || p.exceeds_linear_bound);
            emit(fmt, v);
        }
        Command::NewDevice { device } => {
            let dev = Device::manufacture(&device, &mut entropy(cli.seed))?;
            emit(fmt, json!({"serial": dev.serial(), "lifecycle": "blank"}));
        }
        Command::Personalize {
            device,
            pool,
            rounds,
            r,
        } => {
            let pool = SBoxPool::read_from(&pool)?;
            let params = SucParams::new(rounds, r, pool.digest())?;
            let mut dev = Device::open(&device)?;
            let mut src = entropy(cli.seed);
            let report = dev.otpp(&pool, params, &mut src)?;
            emit(
                fmt,
                json!({
                    "serial": dev.serial(),
                    "index_draws": report.selection.draws,
                    "entropy_bytes": src.consumed(),
                    "table_digest": hex::encode(report.table_digest),
                }),
            );
        }
        Command::Boot { device } => {
            let mut dev = Device::open(&device)?;
            let suc = dev.reinit()?;
            emit(
                fmt,
                json!({"serial": dev.serial(), "table_digest": hex::encode(suc.table_digest())}),
            );
        }
        Command::Tamper { device, byte } => {
            let mut dev = Device::open(&device)?;
            dev.tamper_byte(byte)?;
            emit(fmt, json!({"serial": dev.serial(), "tampered_byte": byte}));
        }
        Command::Respond { device, challenge } => {
            let mut dev = Device::open(&device)?;
            let suc = dev.reinit()?;
            println!("{}", suc.apply(challenge));
        }
        Command::ServeTa {
            listen,
            uir,
            policy,
            timeout,
        } => {
            let policy = match policy {
                Policy::Sequential => SelectionPolicy::Sequential,
                Policy::Random => SelectionPolicy::Random,
            };
            let authority =
                Authority::new(UirStore::open(&uir)?, entropy(cli.seed)).with_policy(policy);
            let config = TaConfig {
                session_timeout: std::time::Duration::from_secs(timeout),
            };
            let handle = serve_ta(listen.as_str(), Arc::new(authority), config)?;
            println!("listening {}", handle.local_addr());
            std::io::stdout().flush()?;
            handle.join();
        }
        Command::Agent { device, connect } => {
            let mut dev = Device::open(&device)?;
            let suc = match dev.reinit() {
                Ok(s) => Some(s),
                Err(e) => {
                    log::warn!(
                        "{}: boot failed ({e}); answering as uninitialized",
                        dev.serial()
                    );
                    None
                }
            };
            let summary = run_agent(dev.serial(), suc, resolve(&connect)?)?;
            emit(
                fmt,
                json!({
                    "serial": dev.serial(),
                    "challenges_answered": summary.challenges_answered,
                    "enrollments": summary.enrollments,
                    "authentications": summary.results.len(),
                }),
            );
        }
        Command::Enroll { sn, pairs, ta } => {
            let r = request_enroll(resolve(&ta)?, &sn, pairs)?;
            emit(
                fmt,
                json!({
                    "serial": sn,
                    "pairs": r.pairs,
                    "payload_bytes": r.payload_bytes,
                    "elapsed_us": r.elapsed.as_micros() as u64,
                }),
            );
        }
        Command::Authenticate { sn, ta, inverse } => {
            let (result, elapsed) = request_authenticate(resolve(&ta)?, &sn, inverse)?;
            log::info!("{sn}: {result} in {elapsed:?}");
            println!("{result}");
            if result != AuthResult::Accepted {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::UirStats { uir } => {
            if !uir.is_dir() {
                bail!("{} is not a directory", uir.display());
            }
            let stats = UirStore::open(&uir)?.stats();
            match fmt {
                Format::Json => {
                    let rows: Vec<_> = stats
                        .iter()
                        .map(|s| json!({"serial": s.serial, "total": s.total, "unused": s.unused}))
                        .collect();
                    println!("{}", serde_json::Value::Array(rows));
                }
                Format::Csv => {
                    println!("serial,total,unused");
                    for s in stats {
                        println!("{},{},{}", s.serial, s.total, s.unused);
                    }
                }
            }
        }
        Command::Avalanche {
            sucs,
            trials,
            rounds,
            r,
            mode,
            out,
        } => {
            let cfg = AvalancheConfig {
                suc_count: sucs,
                trials_per_suc: trials,
                rounds,
                feistel_r: r,
                sbox_mode: mode.into(),
                seed: cli.seed.unwrap_or(0),
            };
            let result = avalanche_histogram(&cfg)?;
            match out {
                Some(path) => {
                    fs::write(&path, result.to_csv())?;
                    let sidecar = path.with_extension("json");
                    fs::write(
                        &sidecar,
                        serde_json::to_string_pretty(&result.summary_json())?,
                    )?;
                    emit(fmt, result.summary_json());
                }
                None if fmt == Format::Json => println!("{}", result.summary_json()),
                None => print!("{}", result.to_csv()),
            }
        }
        Command::AvalancheRounds {
            from,
            to,
            sucs,
            trials,
            r,
            mode,
            out,
        } => {
            let cfg = AvalancheConfig {
                suc_count: sucs,
                trials_per_suc: trials,
                feistel_r: r,
                sbox_mode: mode.into(),
                seed: cli.seed.unwrap_or(0),
                ..AvalancheConfig::default()
            };
            let rows = avalanche_vs_rounds(from, to, &cfg)?;
            let text = match fmt {
                Format::Csv => rounds_csv(&rows),
                Format::Json => serde_json::to_string(&rows)? + "\n",
            };
            write_or_print(out.as_deref(), &text)?;
        }
        Command::CostModel { r, set_size, grid } => {
            let c = CostConstants::default();
            if grid {
                let rows = otpp_grid(&c);
                match fmt {
                    Format::Csv => print!("{}", otpp_grid_csv(&rows)),
                    Format::Json => println!("{}", serde_json::to_string(&rows)?),
                }
            } else {
                let otpp = tau_otpp(r, set_size, &c)?;
                emit(
                    fmt,
                    json!({
                        "r": r,
                        "set_size": set_size,
                        "kappa_literal": kappa_trng(r, set_size, KappaInterpretation::Literal)?,
                        "kappa_bytes": kappa_trng(r, set_size, KappaInterpretation::ReconciledBytes)?,
                        "tau_trng_ms": otpp.tau_trng_ms,
                        "sbox_generation_ms": otpp.sbox_generation_ms,
                        "tau_puf_ms": otpp.tau_puf_ms,
                        "encryption_ms": otpp.encryption_ms,
                        "tau_envm_ms": otpp.tau_envm_ms,
                        "tau_otpp_ms": otpp.closed_form_ms,
                        "reinit_ms": reinit_time(&c).total_ms,
                        "latency_50mhz_us": hardware_latency_anchor(50.0, &c)?,
                        "latency_200mhz_us": hardware_latency_anchor(200.0, &c)?,
                    }),
                );
            }
        }
        Command::Cardinality { r, set_size } => {
            let total = suc_log2_cardinality(r, set_size)?;
            let per_box = class_log2_cardinality(r, set_size)?;
            match fmt {
                Format::Csv => println!("{total}"),
                Format::Json => println!(
                    "{}",
                    json!({"r": r, "set_size": set_size, "log2_sbox8_class": per_box, "log2_suc": total})
                ),
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<ParamError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
