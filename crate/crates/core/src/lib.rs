//! Software emulation of SRAM-based secret unknown ciphers: random
//! involutive 64-bit ciphers assembled from Serpent-type 4-bit S-boxes,
//! a simulated device personalization and boot lifecycle, and a Trusted
//! Authority that enrolls devices and authenticates them with single-use
//! challenge/response pairs.
//!
//! Module map:
//!
//! - [`sbox4`]: Serpent-type 4-bit S-boxes, random generation, pool files
//! - [`sbox8`]: involutive 8-bit S-boxes from a symmetric Feistel network
//! - [`suc`]: the 64-bit involutive SPN
//! - [`genie`]: device files, sealing, personalization and boot
//! - [`authority`]: enrollment records and authentication
//! - [`netlink`]: TCP framing, TA service and device agent
//! - [`analysis`]: avalanche experiments and the cost model

pub mod analysis;
pub mod authority;
pub mod entropy;
pub mod error;
pub mod genie;
pub mod netlink;
pub mod profile;
pub mod sbox4;
pub mod sbox8;
pub mod suc;

pub use entropy::EntropySource;
pub use sbox4::{SBox4, SBoxPool};
pub use sbox8::SBox8;
pub use suc::{Block64, SucInstance, SucParams};
