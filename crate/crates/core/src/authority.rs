//! Trusted Authority: enrollment into per-device records of secret
//! challenge/response pairs and single-use challenge-response
//! authentication.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use crate::entropy::EntropySource;
use crate::error::AuthorityError;
use crate::suc::{Block64, SucInstance, SucParams};

/// Bytes of challenge plus response per enrolled pair.
pub const CRP_BYTES: usize = 16;

/// Whatever answers challenges on behalf of a device.
pub trait DeviceChannel {
    fn challenge(&mut self, x: Block64) -> Result<Block64, AuthorityError>;

    /// Brackets an enrollment batch of `t` challenges.
    fn begin_enrollment(&mut self, _t: u32) -> Result<(), AuthorityError> {
        Ok(())
    }

    fn end_enrollment(&mut self) -> Result<(), AuthorityError> {
        Ok(())
    }

    /// Tells the device how an authentication ended.
    fn report(&mut self, _result: AuthResult) -> Result<(), AuthorityError> {
        Ok(())
    }
}

/// In-process channel to a loaded cipher. `None` models a device whose
/// reinitialization failed.
#[derive(Debug, Clone)]
pub struct LocalChannel {
    pub instance: Option<Arc<SucInstance>>,
}

impl LocalChannel {
    pub fn new(instance: Arc<SucInstance>) -> Self {
        LocalChannel {
            instance: Some(instance),
        }
    }
}

impl DeviceChannel for LocalChannel {
    fn challenge(&mut self, x: Block64) -> Result<Block64, AuthorityError> {
        match &self.instance {
            Some(suc) => Ok(suc.apply(x)),
            None => Err(AuthorityError::DeviceNotInitialized(
                "no cipher loaded".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrPair {
    pub x: Block64,
    pub y: Block64,
    pub used: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UirRecord {
    pub serial: String,
    pub params: SucParams,
    pub pairs: Vec<CrPair>,
    /// Seconds since the Unix epoch.
    pub created_at: u64,
}

impl UirRecord {
    pub fn unused(&self) -> usize {
        self.pairs.iter().filter(|p| !p.used).count()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "serial={}\ncreated_at={}\nrounds={}\nfeistel_r={}\npool_digest={}\n",
            self.serial,
            self.created_at,
            self.params.rounds,
            self.params.feistel_r,
            hex::encode(self.params.pool_digest)
        );
        for p in &self.pairs {
            s += &format!("pair={} {} {}\n", p.x, p.y, u8::from(p.used));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, AuthorityError> {
        let bad = |m: String| AuthorityError::MalformedRecord(m);
        let mut header = HashMap::new();
        let mut pairs = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line without '=': {line:?}")))?;
            if k == "pair" {
                let parts: Vec<&str> = v.split_whitespace().collect();
                let [x, y, used] = parts[..] else {
                    return Err(bad(format!("bad pair line {line:?}")));
                };
                pairs.push(CrPair {
                    x: x.parse().map_err(bad)?,
                    y: y.parse().map_err(bad)?,
                    used: match used {
                        "0" => false,
                        "1" => true,
                        _ => return Err(bad(format!("bad used flag {used:?}"))),
                    },
                });
            } else if header.insert(k, v).is_some() {
                return Err(bad(format!("duplicate field {k}")));
            }
        }
        let need = |k: &str| {
            header
                .get(k)
                .copied()
                .ok_or_else(|| bad(format!("missing field {k}")))
        };
        let num = |k: &str| -> Result<u64, AuthorityError> {
            need(k)?.parse().map_err(|e| bad(format!("{k}: {e}")))
        };
        let digest: [u8; 32] = hex::decode(need("pool_digest")?)
            .ok()
            .and_then(|d| d.try_into().ok())
            .ok_or_else(|| bad("pool_digest must be 32 hex bytes".into()))?;
        let params = SucParams::new(num("rounds")? as u32, num("feistel_r")? as u32, digest)
            .map_err(|e| bad(e.to_string()))?;
        let mut seen = HashSet::new();
        if !pairs.iter().all(|p| seen.insert(p.x)) {
            return Err(bad("duplicate challenge".into()));
        }
        Ok(UirRecord {
            serial: need("serial")?.to_string(),
            params,
            pairs,
            created_at: num("created_at")?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthResult {
    Accepted,
    Rejected,
    /// No unused pair is left; the device needs re-enrollment.
    Exhausted,
}

impl fmt::Display for AuthResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AuthResult::Accepted => "accepted",
            AuthResult::Rejected => "rejected",
            AuthResult::Exhausted => "exhausted",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Send `x`, expect `y`.
    Forward,
    /// Send `y`, expect `x`.
    Inverse,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEntry {
    pub serial: String,
    pub pair_index: usize,
    pub direction: Direction,
    pub result: Option<AuthResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SelectionPolicy {
    /// Lowest unused index first.
    #[default]
    Sequential,
    /// Uniform among unused pairs.
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnrollReport {
    pub pairs: usize,
    /// `16 * pairs`
    pub payload_bytes: usize,
    pub elapsed: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordStats {
    pub serial: String,
    pub total: usize,
    pub unused: usize,
}

/// Directory of `<serial>.uir` files with an in-memory index. Each record
/// sits behind its own mutex so different serials proceed concurrently.
#[derive(Debug)]
pub struct UirStore {
    dir: PathBuf,
    records: Mutex<HashMap<String, Arc<Mutex<UirRecord>>>>,
}

impl UirStore {
    pub fn open(dir: &Path) -> Result<Self, AuthorityError> {
        fs::create_dir_all(dir)?;
        let mut records = HashMap::new();
        for entry in fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("uir") {
                continue;
            }
            let rec = UirRecord::parse(&fs::read_to_string(&path)?)?;
            records.insert(rec.serial.clone(), Arc::new(Mutex::new(rec)));
        }
        Ok(UirStore {
            dir: dir.to_path_buf(),
            records: Mutex::new(records),
        })
    }

    fn path_for(&self, serial: &str) -> PathBuf {
        self.dir.join(format!("{serial}.uir"))
    }

    pub fn contains(&self, serial: &str) -> bool {
        self.records.lock().unwrap().contains_key(serial)
    }

    pub fn get(&self, serial: &str) -> Option<Arc<Mutex<UirRecord>>> {
        self.records.lock().unwrap().get(serial).cloned()
    }

    pub fn insert_new(&self, record: UirRecord) -> Result<(), AuthorityError> {
        let mut map = self.records.lock().unwrap();
        if map.contains_key(&record.serial) {
            return Err(AuthorityError::DuplicateSerial(record.serial));
        }
        self.persist(&record)?;
        map.insert(record.serial.clone(), Arc::new(Mutex::new(record)));
        Ok(())
    }

    pub fn persist(&self, record: &UirRecord) -> Result<(), AuthorityError> {
        let path = self.path_for(&record.serial);
        let mut tmp = path.as_os_str().to_owned();
        tmp.push(".tmp");
        fs::write(&tmp, record.to_text())?;
        fs::rename(&tmp, &path)?;
        Ok(())
    }

    pub fn stats(&self) -> Vec<RecordStats> {
        let map = self.records.lock().unwrap();
        let mut out: Vec<_> = map
            .values()
            .map(|r| {
                let r = r.lock().unwrap();
                RecordStats {
                    serial: r.serial.clone(),
                    total: r.pairs.len(),
                    unused: r.unused(),
                }
            })
            .collect();
        out.sort_by(|a, b| a.serial.cmp(&b.serial));
        out
    }
}

/// Generates `t` pairwise-distinct random challenges.
pub fn distinct_challenges(
    t: usize,
    entropy: &mut EntropySource,
) -> Result<Vec<Block64>, AuthorityError> {
    let mut seen = HashSet::with_capacity(t);
    let mut out = Vec::with_capacity(t);
    while out.len() < t {
        let x = Block64::from_word(entropy.next_u64()?);
        if seen.insert(x) {
            out.push(x);
        }
    }
    Ok(out)
}

pub struct Authority {
    store: UirStore,
    policy: SelectionPolicy,
    entropy: Mutex<EntropySource>,
    audit: Mutex<Vec<AuditEntry>>,
}

impl fmt::Debug for Authority {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Authority")
            .field("store", &self.store)
            .field("policy", &self.policy)
            .finish()
    }
}

impl Authority {
    pub fn new(store: UirStore, entropy: EntropySource) -> Self {
        Authority {
            store,
            policy: SelectionPolicy::Sequential,
            entropy: Mutex::new(entropy),
            audit: Mutex::new(Vec::new()),
        }
    }

    pub fn with_policy(mut self, policy: SelectionPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn store(&self) -> &UirStore {
        &self.store
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.audit.lock().unwrap().clone()
    }

    pub fn enroll(
        &self,
        channel: &mut dyn DeviceChannel,
        serial: &str,
        params: SucParams,
        t: usize,
    ) -> Result<EnrollReport, AuthorityError> {
        if t == 0 {
            return Err(AuthorityError::NoPairs);
        }
        if self.store.contains(serial) {
            return Err(AuthorityError::DuplicateSerial(serial.to_string()));
        }
        let started = Instant::now();
        let challenges = distinct_challenges(t, &mut self.entropy.lock().unwrap())?;
        channel.begin_enrollment(t as u32)?;
        let mut pairs = Vec::with_capacity(t);
        for x in challenges {
            let y = channel.challenge(x)?;
            pairs.push(CrPair { x, y, used: false });
        }
        channel.end_enrollment()?;
        let record = UirRecord {
            serial: serial.to_string(),
            params,
            pairs,
            created_at: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        };
        self.store.insert_new(record)?;
        let elapsed = started.elapsed();
        log::info!("enrolled {serial}: {t} pairs in {elapsed:?}");
        Ok(EnrollReport {
            pairs: t,
            payload_bytes: CRP_BYTES * t,
            elapsed,
        })
    }

    pub fn authenticate(
        &self,
        channel: &mut dyn DeviceChannel,
        serial: &str,
    ) -> Result<AuthResult, AuthorityError> {
        self.run(channel, serial, Direction::Forward)
    }

    /// Sends the stored response and expects the stored challenge back.
    pub fn inverse_authenticate(
        &self,
        channel: &mut dyn DeviceChannel,
        serial: &str,
    ) -> Result<AuthResult, AuthorityError> {
        self.run(channel, serial, Direction::Inverse)
    }

    fn pick_unused(&self, record: &UirRecord) -> Result<Option<usize>, AuthorityError> {
        let unused: Vec<usize> = record
            .pairs
            .iter()
            .enumerate()
            .filter(|(_, p)| !p.used)
            .map(|(i, _)| i)
            .collect();
        if unused.is_empty() {
            return Ok(None);
        }
        Ok(Some(match self.policy {
            SelectionPolicy::Sequential => unused[0],
            SelectionPolicy::Random => {
                let (k, _) = self
                    .entropy
                    .lock()
                    .unwrap()
                    .uniform_below(unused.len() as u64)?;
                unused[k as usize]
            }
        }))
    }

    fn run(
        &self,
        channel: &mut dyn DeviceChannel,
        serial: &str,
        direction: Direction,
    ) -> Result<AuthResult, AuthorityError> {
        let handle = self
            .store
            .get(serial)
            .ok_or_else(|| AuthorityError::UnknownSerial(serial.to_string()))?;
        // held for the whole exchange: one authentication per serial at a time
        let mut record = handle.lock().unwrap();
        let Some(index) = self.pick_unused(&record)? else {
            let _ = channel.report(AuthResult::Exhausted);
            return Ok(AuthResult::Exhausted);
        };
        // consumed before transmission, whatever the outcome
        record.pairs[index].used = true;
        self.store.persist(&record)?;
        let pair = record.pairs[index];
        let (sent, expected) = match direction {
            Direction::Forward => (pair.x, pair.y),
            Direction::Inverse => (pair.y, pair.x),
        };
        let mut entry = AuditEntry {
            serial: serial.to_string(),
            pair_index: index,
            direction,
            result: None,
        };
        let outcome = match channel.challenge(sent) {
            Ok(answer) if answer == expected => AuthResult::Accepted,
            Ok(_) => AuthResult::Rejected,
            Err(AuthorityError::DeviceNotInitialized(why)) => {
                log::warn!("{serial}: device reported not initialized: {why}");
                AuthResult::Rejected
            }
            Err(e) => {
                self.audit.lock().unwrap().push(entry);
                return Err(e);
            }
        };
        entry.result = Some(outcome);
        self.audit.lock().unwrap().push(entry);
        let _ = channel.report(outcome);
        Ok(outcome)
    }
}
