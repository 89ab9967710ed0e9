//! Sampled complex-baseband traces and the CVQT binary container.
//!
//! Sample amplitudes are normalised so that white noise of per-sample
//! quadrature variance `s2` comes out of a unit-energy matched filter with
//! the same variance `s2`. Shot-noise units therefore carry over between the
//! sample domain and the symbol domain without rate-dependent factors.
//!
//! File layout (all little-endian):
//!
//! ```text
//! "CVQT" | version: u32 = 1 | role: u8 | sample_rate: f64 | count: u64 | count x (re: f32, im: f32)
//! ```

use std::io::{Read, Write};
use std::path::Path;

use num_complex::Complex64;

use crate::error::{Error, Result, TraceFormatError};

pub const MAGIC: [u8; 4] = *b"CVQT";
pub const VERSION: u32 = 1;
const HEADER_LEN: u64 = 4 + 4 + 1 + 8 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Signal,
    Vacuum,
    Electronic,
    /// Demodulated symbol frames (symbol-rate samples).
    Symbols,
}

impl Role {
    pub fn as_byte(self) -> u8 {
        match self {
            Role::Signal => 0,
            Role::Vacuum => 1,
            Role::Electronic => 2,
            Role::Symbols => 3,
        }
    }

    pub fn from_byte(b: u8) -> Result<Self, TraceFormatError> {
        Ok(match b {
            0 => Role::Signal,
            1 => Role::Vacuum,
            2 => Role::Electronic,
            3 => Role::Symbols,
            other => return Err(TraceFormatError::UnknownRole(other)),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Role::Signal => "signal",
            Role::Vacuum => "vacuum",
            Role::Electronic => "electronic",
            Role::Symbols => "symbols",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WaveformTrace {
    pub samples: Vec<Complex64>,
    sample_rate: f64,
    role: Role,
    pub origin: String,
}

impl WaveformTrace {
    pub fn new(samples: Vec<Complex64>, sample_rate: f64, role: Role, origin: impl Into<String>) -> Result<Self> {
        if !(sample_rate > 0.0 && sample_rate.is_finite()) {
            return Err(Error::param("sample_rate", format!("{sample_rate} must be positive")));
        }
        if let Some(i) = samples.iter().position(|s| !(s.re.is_finite() && s.im.is_finite())) {
            return Err(Error::param("samples", format!("non-finite value at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
            role,
            origin: origin.into(),
        })
    }

    pub fn sample_rate(&self) -> f64 {
        self.sample_rate
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate
    }

    pub(crate) fn expect_role(&self, roles: &[Role], expected: &'static str) -> Result<()> {
        if roles.contains(&self.role) {
            Ok(())
        } else {
            Err(Error::RoleMismatch {
                expected,
                got: self.role.name(),
            })
        }
    }

    /// Same metadata, new samples.
    pub(crate) fn with_samples(&self, samples: Vec<Complex64>, origin: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate: self.sample_rate,
            role: self.role,
            origin: origin.into(),
        }
    }

    pub(crate) fn with_rate(mut self, rate: f64) -> Self {
        self.sample_rate = rate;
        self
    }

    pub fn write_to<W: Write>(&self, w: W) -> Result<()> {
        write_cvqt(w, self.role, self.sample_rate, &self.samples)
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        let (role, sample_rate, samples) = read_cvqt(r)?;
        Self::new(samples, sample_rate, role, "cvqt file")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

pub fn write_cvqt<W: Write>(mut w: W, role: Role, sample_rate: f64, samples: &[Complex64]) -> Result<()> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&[role.as_byte()])?;
    w.write_all(&sample_rate.to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    for s in samples {
        w.write_all(&(s.re as f32).to_le_bytes())?;
        w.write_all(&(s.im as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_cvqt<R: Read>(mut r: R) -> Result<(Role, f64, Vec<Complex64>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    let found = bytes.len() as u64;
    if found < HEADER_LEN {
        if found >= 4 && bytes[..4] != MAGIC {
            return Err(TraceFormatError::BadMagic(bytes[..4].try_into().unwrap()).into());
        }
        return Err(TraceFormatError::Truncated {
            expected: HEADER_LEN,
            found,
        }
        .into());
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(TraceFormatError::BadMagic(magic).into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(TraceFormatError::UnsupportedVersion(version).into());
    }
    let role = Role::from_byte(bytes[8])?;
    let sample_rate = f64::from_le_bytes(bytes[9..17].try_into().unwrap());
    let count = u64::from_le_bytes(bytes[17..25].try_into().unwrap());
    let expected = count
        .checked_mul(8)
        .and_then(|p| p.checked_add(HEADER_LEN))
        .ok_or(TraceFormatError::Truncated { expected: u64::MAX, found })?;
    if found < expected {
        return Err(TraceFormatError::Truncated { expected, found }.into());
    }
    let samples = bytes[HEADER_LEN as usize..expected as usize]
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes(c[0..4].try_into().unwrap());
            let im = f32::from_le_bytes(c[4..8].try_into().unwrap());
            Complex64::new(re as f64, im as f64)
        })
        .collect();
    Ok((role, sample_rate, samples))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout() {
        let t = WaveformTrace::new(vec![Complex64::new(1.0, -2.0)], 80e9, Role::Vacuum, "").unwrap();
        let mut buf = Vec::new();
        t.write_to(&mut buf).unwrap();
        assert_eq!(&buf[0..4], b"CVQT");
        assert_eq!(u32::from_le_bytes(buf[4..8].try_into().unwrap()), 1);
        assert_eq!(buf[8], 1);
        assert_eq!(f64::from_le_bytes(buf[9..17].try_into().unwrap()), 80e9);
        assert_eq!(u64::from_le_bytes(buf[17..25].try_into().unwrap()), 1);
        assert_eq!(f32::from_le_bytes(buf[25..29].try_into().unwrap()), 1.0);
        assert_eq!(f32::from_le_bytes(buf[29..33].try_into().unwrap()), -2.0);
        assert_eq!(buf.len(), 33);
    }

    #[test]
    fn rejects_nonpositive_rate_and_nan() {
        assert!(WaveformTrace::new(vec![], 0.0, Role::Signal, "").is_err());
        assert!(WaveformTrace::new(vec![Complex64::new(f64::NAN, 0.0)], 1.0, Role::Signal, "").is_err());
    }

    #[test]
    fn distinct_format_errors() {
        let t = WaveformTrace::new(vec![Complex64::new(0.5, 0.25); 4], 1e9, Role::Signal, "").unwrap();
        let mut good = Vec::new();
        t.write_to(&mut good).unwrap();

        let mut bad_magic = good.clone();
        bad_magic[0] = b'X';
        let mut bad_version = good.clone();
        bad_version[4] = 9;
        let mut bad_role = good.clone();
        bad_role[8] = 7;
        let truncated = &good[..good.len() - 3];

        let kind = |bytes: &[u8]| match WaveformTrace::read_from(bytes) {
            Err(Error::Trace(e)) => e,
            other => panic!("expected format error, got {other:?}"),
        };
        assert!(matches!(kind(&bad_magic), TraceFormatError::BadMagic(_)));
        assert_eq!(kind(&bad_version), TraceFormatError::UnsupportedVersion(9));
        assert_eq!(kind(&bad_role), TraceFormatError::UnknownRole(7));
        assert!(matches!(kind(truncated), TraceFormatError::Truncated { .. }));
    }
}
