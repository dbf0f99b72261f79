//! Simulated device lifecycle.
//!
//! A device is two files: `<sn>.silicon` holds 32 read-only bytes standing
//! in for a memoryless PUF, and `<sn>.envm` is the persistent store. The
//! device key is never written anywhere; it is re-derived from the silicon
//! bytes whenever it is needed.
//!
//! One-time personalization picks S-boxes from the pool, seals the 2048
//! table bytes under the device key and flips the lifecycle flag. After
//! that the personalization path refuses to run again. Every boot unseals
//! and validates the tables and loads the cipher into memory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use aes_gcm::aead::{Aead, KeyInit, Payload};
use aes_gcm::{Aes256Gcm, Nonce};
use hkdf::Hkdf;
use sha2::Sha256;

use crate::entropy::EntropySource;
use crate::error::GenieError;
use crate::sbox4::SBoxPool;
use crate::suc::{
    select_instance, SelectError, Selection, SucBuildError, SucInstance, SucParams, TABLE_BYTES,
};

pub const SILICON_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

const KDF_SALT: &[u8] = b"sram-suc/pseudo-puf/v1";
const AAD_LABEL: &[u8] = b"sram-suc/envm/v1";

/// AES-256 key derived from the silicon fingerprint.
#[derive(Clone, PartialEq, Eq)]
pub struct DeviceKey([u8; 32]);

impl DeviceKey {
    pub fn from_fingerprint(silicon_seed: &[u8; SILICON_LEN], serial: &str) -> Self {
        let hk = Hkdf::<Sha256>::new(Some(KDF_SALT), silicon_seed);
        let mut okm = [0u8; 32];
        hk.expand(serial.as_bytes(), &mut okm)
            .expect("32 bytes is a valid HKDF-SHA256 output length");
        DeviceKey(okm)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for DeviceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("DeviceKey(..)")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub nonce: [u8; NONCE_LEN],
    pub ciphertext: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl SealedBlob {
    /// `nonce || ciphertext || tag`
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(NONCE_LEN + self.ciphertext.len() + TAG_LEN);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ciphertext);
        out.extend_from_slice(&self.tag);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, GenieError> {
        if bytes.len() < NONCE_LEN + TAG_LEN {
            return Err(GenieError::MalformedBlob(format!(
                "{} bytes is shorter than nonce and tag",
                bytes.len()
            )));
        }
        let (nonce, rest) = bytes.split_at(NONCE_LEN);
        let (ct, tag) = rest.split_at(rest.len() - TAG_LEN);
        Ok(SealedBlob {
            nonce: nonce.try_into().unwrap(),
            ciphertext: ct.to_vec(),
            tag: tag.try_into().unwrap(),
        })
    }
}

/// AES-256-GCM over the table bytes; `aad` binds the blob to its context.
pub fn seal(
    key: &DeviceKey,
    tables: &[u8],
    aad: &[u8],
    entropy: &mut EntropySource,
) -> Result<SealedBlob, GenieError> {
    let mut nonce = [0u8; NONCE_LEN];
    entropy.fill(&mut nonce)?;
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    let mut out = cipher
        .encrypt(Nonce::from_slice(&nonce), Payload { msg: tables, aad })
        .map_err(|_| GenieError::MalformedBlob("encryption failed".into()))?;
    let tag = out.split_off(out.len() - TAG_LEN);
    Ok(SealedBlob {
        nonce,
        ciphertext: out,
        tag: tag.try_into().unwrap(),
    })
}

pub fn unseal(key: &DeviceKey, blob: &SealedBlob, aad: &[u8]) -> Result<Vec<u8>, GenieError> {
    let cipher = Aes256Gcm::new_from_slice(&key.0).expect("32-byte key");
    let mut msg = blob.ciphertext.clone();
    msg.extend_from_slice(&blob.tag);
    cipher
        .decrypt(Nonce::from_slice(&blob.nonce), Payload { msg: &msg, aad })
        .map_err(|_| GenieError::Integrity)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Lifecycle {
    Blank,
    Personalized,
}

impl Lifecycle {
    fn as_str(self) -> &'static str {
        match self {
            Lifecycle::Blank => "blank",
            Lifecycle::Personalized => "personalized",
        }
    }
}

/// Contents of the `.envm` file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvmRecord {
    pub serial: String,
    pub lifecycle: Lifecycle,
    pub params: Option<SucParams>,
    pub sealed: Option<SealedBlob>,
}

impl EnvmRecord {
    pub fn blank(serial: &str) -> Self {
        EnvmRecord {
            serial: serial.to_string(),
            lifecycle: Lifecycle::Blank,
            params: None,
            sealed: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "serial={}\nlifecycle={}\n",
            self.serial,
            self.lifecycle.as_str()
        );
        if let Some(p) = &self.params {
            s += &format!(
                "rounds={}\nfeistel_r={}\npool_digest={}\n",
                p.rounds,
                p.feistel_r,
                hex::encode(p.pool_digest)
            );
        }
        if let Some(b) = &self.sealed {
            s += &format!(
                "nonce={}\nciphertext={}\ntag={}\n",
                hex::encode(b.nonce),
                hex::encode(&b.ciphertext),
                hex::encode(b.tag)
            );
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, GenieError> {
        let bad = |m: String| GenieError::MalformedEnvm(m);
        let mut fields = std::collections::HashMap::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("line without '=': {line:?}")))?;
            if fields.insert(k, v).is_some() {
                return Err(bad(format!("duplicate field {k}")));
            }
        }
        let get = |k: &str| fields.get(k).copied();
        let need = |k: &str| get(k).ok_or_else(|| bad(format!("missing field {k}")));
        let hex_field = |k: &str| -> Result<Vec<u8>, GenieError> {
            hex::decode(need(k)?).map_err(|e| bad(format!("{k}: {e}")))
        };
        let serial = need("serial")?.to_string();
        let lifecycle = match need("lifecycle")? {
            "blank" => Lifecycle::Blank,
            "personalized" => Lifecycle::Personalized,
            other => return Err(bad(format!("unknown lifecycle {other:?}"))),
        };
        if lifecycle == Lifecycle::Blank {
            return Ok(EnvmRecord::blank(&serial));
        }
        let num = |k: &str| -> Result<u32, GenieError> {
            need(k)?.parse().map_err(|e| bad(format!("{k}: {e}")))
        };
        let digest: [u8; 32] = hex_field("pool_digest")?
            .try_into()
            .map_err(|_| bad("pool_digest must be 32 bytes".into()))?;
        let params = SucParams::new(num("rounds")?, num("feistel_r")?, digest)?;
        let nonce = hex_field("nonce")?
            .try_into()
            .map_err(|_| GenieError::MalformedBlob("nonce must be 12 bytes".into()))?;
        let tag = hex_field("tag")?
            .try_into()
            .map_err(|_| GenieError::MalformedBlob("tag must be 16 bytes".into()))?;
        Ok(EnvmRecord {
            serial,
            lifecycle,
            params: Some(params),
            sealed: Some(SealedBlob {
                nonce,
                ciphertext: hex_field("ciphertext")?,
                tag,
            }),
        })
    }
}

/// Associated data binding a sealed blob to its serial and parameters.
pub fn sealing_aad(serial: &str, params: &SucParams) -> Vec<u8> {
    let mut aad = AAD_LABEL.to_vec();
    aad.extend_from_slice(&(serial.len() as u32).to_be_bytes());
    aad.extend_from_slice(serial.as_bytes());
    aad.extend_from_slice(&params.rounds.to_be_bytes());
    aad.extend_from_slice(&params.feistel_r.to_be_bytes());
    aad.extend_from_slice(&params.pool_digest);
    aad
}

/// What one-time personalization did.
#[derive(Debug, Clone)]
pub struct OtppReport {
    pub selection: Selection,
    pub table_digest: [u8; 32],
}

pub struct Device {
    serial: String,
    silicon_path: PathBuf,
    envm_path: PathBuf,
    envm: EnvmRecord,
    loaded: Option<Arc<SucInstance>>,
}

impl fmt::Debug for Device {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Device")
            .field("serial", &self.serial)
            .field("lifecycle", &self.envm.lifecycle)
            .field("loaded", &self.loaded.is_some())
            .finish()
    }
}

fn paths_for(prefix: &Path) -> (PathBuf, PathBuf) {
    let mut silicon = prefix.as_os_str().to_owned();
    silicon.push(".silicon");
    let mut envm = prefix.as_os_str().to_owned();
    envm.push(".envm");
    (silicon.into(), envm.into())
}

fn write_atomic(path: &Path, contents: &[u8]) -> std::io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

impl Device {
    /// Creates a blank device at `prefix` (`<prefix>.silicon`,
    /// `<prefix>.envm`). The serial is the last path component.
    pub fn manufacture(prefix: &Path, entropy: &mut EntropySource) -> Result<Self, GenieError> {
        let serial = serial_from_prefix(prefix)?;
        let (silicon_path, envm_path) = paths_for(prefix);
        if silicon_path.exists() || envm_path.exists() {
            return Err(GenieError::Io(std::io::Error::new(
                std::io::ErrorKind::AlreadyExists,
                format!("device files for {serial} already exist"),
            )));
        }
        let mut seed = [0u8; SILICON_LEN];
        entropy.fill(&mut seed)?;
        fs::write(&silicon_path, seed)?;
        let mut perms = fs::metadata(&silicon_path)?.permissions();
        perms.set_readonly(true);
        fs::set_permissions(&silicon_path, perms)?;
        let envm = EnvmRecord::blank(&serial);
        write_atomic(&envm_path, envm.to_text().as_bytes())?;
        Ok(Device {
            serial,
            silicon_path,
            envm_path,
            envm,
            loaded: None,
        })
    }

    /// Opens an existing device. Nothing is loaded until [`Device::reinit`].
    pub fn open(prefix: &Path) -> Result<Self, GenieError> {
        let serial = serial_from_prefix(prefix)?;
        let (silicon_path, envm_path) = paths_for(prefix);
        let envm = EnvmRecord::parse(&fs::read_to_string(&envm_path)?)?;
        if envm.serial != serial {
            return Err(GenieError::MalformedEnvm(format!(
                "record serial {:?} does not match {serial:?}",
                envm.serial
            )));
        }
        Ok(Device {
            serial,
            silicon_path,
            envm_path,
            envm,
            loaded: None,
        })
    }

    pub fn serial(&self) -> &str {
        &self.serial
    }

    pub fn lifecycle(&self) -> Lifecycle {
        self.envm.lifecycle
    }

    pub fn envm(&self) -> &EnvmRecord {
        &self.envm
    }

    pub fn envm_path(&self) -> &Path {
        &self.envm_path
    }

    pub fn loaded(&self) -> Option<Arc<SucInstance>> {
        self.loaded.clone()
    }

    /// Drops the in-memory cipher, as a power-off clears fabric SRAM.
    pub fn power_cycle(&mut self) {
        self.loaded = None;
    }

    pub fn derive_device_key(&self) -> Result<DeviceKey, GenieError> {
        let bytes = fs::read(&self.silicon_path)
            .map_err(|e| GenieError::FingerprintUnavailable(e.to_string()))?;
        let seed: [u8; SILICON_LEN] = bytes.try_into().map_err(|b: Vec<u8>| {
            GenieError::FingerprintUnavailable(format!(
                "silicon file holds {} bytes, expected {SILICON_LEN}",
                b.len()
            ))
        })?;
        Ok(DeviceKey::from_fingerprint(&seed, &self.serial))
    }

    /// One-time personalization. Draws the S-box selection from `entropy`
    /// first and the sealing nonce afterwards.
    pub fn otpp(
        &mut self,
        pool: &SBoxPool,
        params: SucParams,
        entropy: &mut EntropySource,
    ) -> Result<OtppReport, GenieError> {
        if self.envm.lifecycle != Lifecycle::Blank {
            return Err(GenieError::AlreadyPersonalized);
        }
        let key = self.derive_device_key()?;
        let (instance, selection) =
            select_instance(pool, params, entropy).map_err(|e| match e {
                SelectError::PoolMismatch => GenieError::PoolMismatch(format!(
                    "params digest {} != pool digest {}",
                    hex::encode(params.pool_digest),
                    hex::encode(pool.digest())
                )),
                SelectError::Params(p) => GenieError::Params(p),
                SelectError::Entropy(e) => GenieError::Entropy(e),
            })?;
        let sealed = seal(
            &key,
            &instance.table_bytes(),
            &sealing_aad(&self.serial, &params),
            entropy,
        )?;
        let record = EnvmRecord {
            serial: self.serial.clone(),
            lifecycle: Lifecycle::Personalized,
            params: Some(params),
            sealed: Some(sealed),
        };
        write_atomic(&self.envm_path, record.to_text().as_bytes())?;
        self.envm = record;
        log::info!("device {} personalized", self.serial);
        Ok(OtppReport {
            selection,
            table_digest: instance.table_digest(),
        })
    }

    /// Reinitialization: re-reads eNVM, unseals, validates and loads the
    /// tables. On failure nothing stays loaded.
    pub fn reinit(&mut self) -> Result<Arc<SucInstance>, GenieError> {
        self.loaded = None;
        self.envm = EnvmRecord::parse(&fs::read_to_string(&self.envm_path)?)?;
        let (params, sealed) = match (&self.envm.lifecycle, &self.envm.params, &self.envm.sealed) {
            (Lifecycle::Personalized, Some(p), Some(b)) => (*p, b),
            _ => return Err(GenieError::NotPersonalized),
        };
        let key = self.derive_device_key()?;
        let tables = unseal(&key, sealed, &sealing_aad(&self.serial, &params))?;
        if tables.len() != TABLE_BYTES {
            return Err(GenieError::MalformedBlob(format!(
                "unsealed {} bytes, expected {TABLE_BYTES}",
                tables.len()
            )));
        }
        let instance = SucInstance::from_table_bytes(&tables, params).map_err(|e| match e {
            SucBuildError::NotInvolutive(i) => GenieError::TableValidation(i),
            SucBuildError::Params(p) => GenieError::Params(p),
            SucBuildError::TableLength(n) => {
                GenieError::MalformedBlob(format!("unsealed {n} bytes"))
            }
        })?;
        let instance = Arc::new(instance);
        self.loaded = Some(instance.clone());
        Ok(instance)
    }

    /// Test helper: flips every bit of byte `index` of the sealed payload
    /// (`nonce || ciphertext || tag`) on disk.
    pub fn tamper_byte(&mut self, index: usize) -> Result<(), GenieError> {
        let sealed = self
            .envm
            .sealed
            .as_ref()
            .ok_or(GenieError::NotPersonalized)?;
        let mut bytes = sealed.to_bytes();
        let len = bytes.len();
        let b = bytes.get_mut(index).ok_or_else(|| {
            GenieError::MalformedBlob(format!("byte {index} out of range for {len}-byte blob"))
        })?;
        *b ^= 0xff;
        self.envm.sealed = Some(SealedBlob::from_bytes(&bytes)?);
        write_atomic(&self.envm_path, self.envm.to_text().as_bytes())?;
        self.loaded = None;
        Ok(())
    }
}

fn serial_from_prefix(prefix: &Path) -> Result<String, GenieError> {
    prefix
        .file_name()
        .and_then(|s| s.to_str())
        .filter(|s| !s.is_empty() && !s.contains('='))
        .map(str::to_string)
        .ok_or_else(|| {
            GenieError::MalformedEnvm(format!("cannot derive a serial from {}", prefix.display()))
        })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(b: u8) -> DeviceKey {
        DeviceKey::from_fingerprint(&[b; 32], "SN-1")
    }

    #[test]
    fn seal_roundtrip_and_tamper() {
        let tables: Vec<u8> = (0..TABLE_BYTES).map(|i| (i * 31) as u8).collect();
        let mut e = EntropySource::seeded(3);
        let blob = seal(&key(1), &tables, b"ctx", &mut e).unwrap();
        assert_eq!(blob.ciphertext.len(), TABLE_BYTES);
        assert_eq!(unseal(&key(1), &blob, b"ctx").unwrap(), tables);
        assert!(matches!(
            unseal(&key(2), &blob, b"ctx"),
            Err(GenieError::Integrity)
        ));
        assert!(matches!(
            unseal(&key(1), &blob, b"other"),
            Err(GenieError::Integrity)
        ));
        let mut bad = blob.clone();
        bad.ciphertext[100] ^= 1;
        assert!(matches!(
            unseal(&key(1), &bad, b"ctx"),
            Err(GenieError::Integrity)
        ));
    }

    #[test]
    fn kdf_depends_on_serial_and_seed() {
        let a = DeviceKey::from_fingerprint(&[1; 32], "A");
        assert_eq!(a, DeviceKey::from_fingerprint(&[1; 32], "A"));
        assert_ne!(a, DeviceKey::from_fingerprint(&[1; 32], "B"));
        assert_ne!(a, DeviceKey::from_fingerprint(&[2; 32], "A"));
        assert_eq!(format!("{a:?}"), "DeviceKey(..)");
    }

    #[test]
    fn blank_record_text() {
        let r = EnvmRecord::blank("SN-7");
        assert_eq!(r.to_text(), "serial=SN-7\nlifecycle=blank\n");
        assert_eq!(EnvmRecord::parse(&r.to_text()).unwrap(), r);
        assert!(EnvmRecord::parse("serial=x\nlifecycle=weird\n").is_err());
        assert!(EnvmRecord::parse("lifecycle=blank\n").is_err());
        assert!(EnvmRecord::parse("serial=x\nserial=y\nlifecycle=blank\n").is_err());
    }

    #[test]
    fn short_blob_is_malformed() {
        assert!(matches!(
            SealedBlob::from_bytes(&[0u8; 20]),
            Err(GenieError::MalformedBlob(_))
        ));
    }
}
