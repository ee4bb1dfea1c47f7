//! Binary PGM (P5) reading and writing, 8-bit or 16-bit.
//!
//! 16-bit samples are big-endian per the netpbm format. Write-then-read
//! round-trips sample values exactly.

use std::fs;
use std::path::Path;

use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PgmImage {
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl PgmImage {
    pub fn new(height: usize, width: usize, maxval: u16, samples: Vec<u16>) -> Result<Self> {
        if maxval == 0 {
            return Err(CoreError::InvalidConfig("PGM maxval must be positive".into()));
        }
        if samples.len() != height * width {
            return Err(CoreError::ShapeMismatch(format!(
                "{} samples for {height}x{width} PGM",
                samples.len()
            )));
        }
        if let Some(&bad) = samples.iter().find(|&&s| s > maxval) {
            return Err(CoreError::InvalidConfig(format!(
                "sample {bad} exceeds maxval {maxval}"
            )));
        }
        Ok(PgmImage {
            height,
            width,
            maxval,
            samples,
        })
    }

    /// Intensities in [0, 1] quantized to 16-bit samples.
    pub fn from_intensities(height: usize, width: usize, values: &[f64]) -> Result<Self> {
        let samples = values
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 65535.0).round() as u16)
            .collect();
        PgmImage::new(height, width, 65535, samples)
    }

    pub fn to_intensities(&self) -> Vec<f64> {
        let m = self.maxval as f64;
        self.samples.iter().map(|&s| s as f64 / m).collect()
    }
}

pub fn write_pgm(path: &Path, image: &PgmImage) -> Result<()> {
    let mut bytes = format!("P5\n{} {}\n{}\n", image.width, image.height, image.maxval).into_bytes();
    if image.maxval > 255 {
        for &s in &image.samples {
            bytes.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        bytes.extend(image.samples.iter().map(|&s| s as u8));
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<PgmImage> {
    let bytes = fs::read(path)?;
    parse_pgm(&bytes)
}

pub fn parse_pgm(bytes: &[u8]) -> Result<PgmImage> {
    let err = |offset: usize, msg: &str| CoreError::PgmParse {
        offset,
        msg: msg.to_string(),
    };

    if bytes.len() < 2 || &bytes[0..2] != b"P5" {
        return Err(err(0, "expected magic 'P5'"));
    }
    let mut pos = 2usize;

    let next_token = |pos: &mut usize| -> Result<usize> {
        // skip whitespace and '#' comment lines
        loop {
            while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
                *pos += 1;
            }
            if *pos < bytes.len() && bytes[*pos] == b'#' {
                while *pos < bytes.len() && bytes[*pos] != b'\n' {
                    *pos += 1;
                }
            } else {
                break;
            }
        }
        let start = *pos;
        while *pos < bytes.len() && bytes[*pos].is_ascii_digit() {
            *pos += 1;
        }
        if *pos == start {
            return Err(err(start, "expected decimal integer"));
        }
        std::str::from_utf8(&bytes[start..*pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "integer out of range"))
    };

    let width = next_token(&mut pos)?;
    let height = next_token(&mut pos)?;
    let maxval = next_token(&mut pos)?;
    if maxval == 0 || maxval > 65535 {
        return Err(err(pos, "maxval must be in 1..=65535"));
    }
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(err(pos, "expected single whitespace before raster"));
    }
    pos += 1;

    let n = width * height;
    let samples = if maxval > 255 {
        if bytes.len() - pos != 2 * n {
            return Err(err(pos, "raster size does not match header"));
        }
        bytes[pos..]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    } else {
        if bytes.len() - pos != n {
            return Err(err(pos, "raster size does not match header"));
        }
        bytes[pos..].iter().map(|&b| b as u16).collect()
    };
    PgmImage::new(height, width, maxval as u16, samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn malformed_header_reports_offset() {
        match parse_pgm(b"P6\n2 2\n255\n....") {
            Err(CoreError::PgmParse { offset, .. }) => assert_eq!(offset, 0),
            other => panic!("expected parse error, got {other:?}"),
        }
        match parse_pgm(b"P5\nx 2\n255\n....") {
            Err(CoreError::PgmParse { offset, .. }) => assert_eq!(offset, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn truncated_raster_rejected() {
        assert!(parse_pgm(b"P5\n2 2\n255\nab").is_err());
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            w in 1usize..9,
            h in 1usize..9,
            wide in proptest::bool::ANY,
            seed in proptest::num::u64::ANY,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let maxval: u16 = if wide { 65535 } else { 255 };
            let samples: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..=maxval)).collect();
            let img = PgmImage::new(h, w, maxval, samples).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.pgm");
            write_pgm(&path, &img).unwrap();
            prop_assert_eq!(read_pgm(&path).unwrap(), img);
        }
    }
}
