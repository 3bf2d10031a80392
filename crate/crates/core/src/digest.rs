//! Stable content hashing over a length-prefixed canonical encoding.

use alloc::string::String;
use core::fmt::Write;

use sha2::{Digest, Sha256};

/// Incremental SHA-256 over typed fields. Every field is tagged and
/// length-prefixed, so distinct field sequences never share an encoding.
#[derive(Clone, Default)]
pub struct ContentHasher(Sha256);

impl ContentHasher {
    pub fn new() -> Self {
        Self(Sha256::new())
    }

    pub fn str(&mut self, value: &str) -> &mut Self {
        self.0.update(b"s");
        self.0.update((value.len() as u64).to_le_bytes());
        self.0.update(value.as_bytes());
        self
    }

    pub fn u64(&mut self, value: u64) -> &mut Self {
        self.0.update(b"u");
        self.0.update(value.to_le_bytes());
        self
    }

    /// Hashes the IEEE-754 bit pattern; `-0.0` is folded into `0.0`.
    pub fn f64(&mut self, value: f64) -> &mut Self {
        let value = if value == 0.0 { 0.0 } else { value };
        self.0.update(b"f");
        self.0.update(value.to_bits().to_le_bytes());
        self
    }

    pub fn finish(&self) -> [u8; 32] {
        self.0.clone().finalize().into()
    }

    /// Lower-case hex of the first `bytes` bytes of the digest.
    pub fn finish_hex(&self, bytes: usize) -> String {
        let digest = self.finish();
        let mut out = String::with_capacity(bytes * 2);
        for b in &digest[..bytes.min(32)] {
            let _ = write!(out, "{b:02x}");
        }
        out
    }
}
