//! The bundled 8x8 handwritten-digits corpus (1797 images, pixel values
//! 0..=16), verified against its SHA-256 manifest before use.

use std::path::Path;

use cdu_core::streams::Dataset;
use sha2::{Digest, Sha256};

use crate::csvio;
use crate::error::{Error, Result};

const DIGITS_CSV: &str = include_str!("../assets/digits.csv");
const DIGITS_SHA256: &str = include_str!("../assets/digits.csv.sha256");

/// Classes used by the experiments.
pub const DIGIT_CLASSES: [i64; 5] = [0, 1, 2, 3, 4];

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn verify(bytes: &[u8]) -> Result<()> {
    let got = sha256_hex(bytes);
    if got != DIGITS_SHA256.trim() {
        return Err(Error::Data(format!(
            "digits data checksum mismatch: expected {}, got {got}",
            DIGITS_SHA256.trim()
        )));
    }
    Ok(())
}

/// All ten classes from the embedded asset.
pub fn load_all_digits() -> Result<Dataset> {
    verify(DIGITS_CSV.as_bytes())?;
    csvio::parse_csv(DIGITS_CSV.as_bytes(), true)
}

/// Digits 0-4, 64 features each.
pub fn load_digits() -> Result<Dataset> {
    Ok(load_all_digits()?.filter_classes(&DIGIT_CLASSES)?)
}

/// Same as [`load_digits`] but reads a copy of the asset from disk.
pub fn load_digits_from(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    verify(&bytes)?;
    Ok(csvio::parse_csv(bytes.as_slice(), true)?.filter_classes(&DIGIT_CLASSES)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_digits() {
        let d = load_digits().unwrap();
        assert_eq!(d.dim(), 64);
        let labels = d.labels.as_ref().unwrap();
        assert!(labels.iter().all(|l| DIGIT_CLASSES.contains(l)));
        for c in DIGIT_CLASSES {
            assert!(labels.iter().filter(|l| **l == c).count() >= 150);
        }
        assert!(d.features.as_slice().iter().all(|v| (0.0..=16.0).contains(v)));
    }

    #[test]
    fn corrupt_copy_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("digits.csv");
        std::fs::write(&p, DIGITS_CSV.replacen("0,0,5", "0,0,6", 1)).unwrap();
        assert!(matches!(load_digits_from(&p), Err(Error::Data(_))));
        std::fs::write(&p, DIGITS_CSV).unwrap();
        assert_eq!(load_digits_from(&p).unwrap(), load_digits().unwrap());
        assert!(matches!(
            load_digits_from(&dir.path().join("missing.csv")),
            Err(Error::Io { .. })
        ));
    }
}
