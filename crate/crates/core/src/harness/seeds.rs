//! Per-cell seed derivation.
//!
//! The seed of a cell is the first eight bytes (little endian) of
//! `SHA-256("{master}/{stream}/{feature}/{sigma bits as 16 hex digits}/{size}/{replicate}")`.
//! Every axis value enters the hash, so changing one axis of one cell never
//! moves the random draws of another.

use sha2::{Digest, Sha256};

/// Independent random streams used by the harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Split,
    Subsample,
    Noise,
}

impl Stream {
    fn as_str(self) -> &'static str {
        match self {
            Stream::Split => "split",
            Stream::Subsample => "subsample",
            Stream::Noise => "noise",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeedKey<'a> {
    pub stream: Stream,
    pub feature: &'a str,
    pub sigma: f64,
    pub size: usize,
    pub replicate: u64,
}

pub fn derive_seed(master: u64, key: &SeedKey<'_>) -> u64 {
    let text = format!(
        "{master}/{}/{}/{:016x}/{}/{}",
        key.stream.as_str(),
        key.feature,
        key.sigma.to_bits(),
        key.size,
        key.replicate
    );
    let digest = Sha256::digest(text.as_bytes());
    let mut bytes = [0u8; 8];
    bytes.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(bytes)
}

pub(crate) fn split_seed(master: u64, replicate: u64) -> u64 {
    derive_seed(
        master,
        &SeedKey {
            stream: Stream::Split,
            feature: "",
            sigma: 0.0,
            size: 0,
            replicate,
        },
    )
}

pub(crate) fn subsample_seed(master: u64, replicate: u64) -> u64 {
    derive_seed(
        master,
        &SeedKey {
            stream: Stream::Subsample,
            feature: "",
            sigma: 0.0,
            size: 0,
            replicate,
        },
    )
}

pub(crate) fn noise_seed(
    master: u64,
    feature: &str,
    sigma: f64,
    size: usize,
    replicate: u64,
) -> u64 {
    derive_seed(
        master,
        &SeedKey {
            stream: Stream::Noise,
            feature,
            sigma,
            size,
            replicate,
        },
    )
}
