//! Binary weights file.
//!
//! All integers are little-endian.
//!
//! ```text
//! magic        4 bytes   "AQSW"
//! version      u32       1
//! spec_len     u32       byte length of the spec text
//! spec         UTF-8     canonical network spec (NetworkSpec::to_canonical_text)
//! count        u32       number of parameter records
//! record*      name_len u32, name UTF-8, ndim u32, dims u32 * ndim,
//!              values f64 * product(dims)
//! checksum     u64       CRC-64/XZ of every preceding byte
//! ```
//!
//! Records appear in the network's parameter order.

use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use thiserror::Error;

use super::{ModelError, Network, NetworkSpec};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"AQSW";
pub const FORMAT_VERSION: u32 = 1;

const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

pub fn checksum(bytes: &[u8]) -> u64 {
    CRC64.checksum(bytes)
}

#[derive(Debug, Error)]
pub enum WeightsError {
    #[error("not a weights file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported weights format version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("weights file is truncated")]
    Truncated,
    #[error("checksum mismatch: stored {stored:016x}, computed {computed:016x}")]
    ChecksumMismatch { stored: u64, computed: u64 },
    #[error("malformed weights file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Decoded contents of a weights file.
#[derive(Debug, Clone)]
pub struct WeightsFile {
    pub spec: NetworkSpec,
    pub parameters: Vec<(String, Tensor<f64>)>,
    pub checksum: u64,
}

impl WeightsFile {
    pub fn from_network<T: Scalar>(net: &Network<T>) -> Self {
        let mut file = Self {
            spec: net.spec().clone(),
            parameters: net.parameters().map(|(n, t)| (n.to_string(), t.cast())).collect(),
            checksum: 0,
        };
        file.checksum = checksum(&file.body());
        file
    }

    fn body(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let spec = self.spec.to_canonical_text();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(spec.len() as u32).to_le_bytes());
        out.extend_from_slice(spec.as_bytes());
        out.extend_from_slice(&(self.parameters.len() as u32).to_le_bytes());
        for (name, t) in &self.parameters {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.ndim() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = self.body();
        let sum = checksum(&out);
        out.extend_from_slice(&sum.to_le_bytes());
        out
    }

    /// Parses and verifies a weights file.
    ///
    /// Structure is parsed before the checksum is compared, so a short file
    /// reports [`WeightsError::Truncated`] rather than a checksum failure.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, WeightsError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4).map_err(|_| WeightsError::BadMagic)? != MAGIC {
            return Err(WeightsError::BadMagic);
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(WeightsError::UnsupportedVersion(version));
        }
        let spec_len = r.u32()? as usize;
        let spec_text = std::str::from_utf8(r.take(spec_len)?)
            .map_err(|_| WeightsError::Malformed("spec text is not UTF-8".into()))?;
        let count = r.u32()? as usize;
        let mut raw = Vec::new();
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| WeightsError::Malformed("parameter name is not UTF-8".into()))?
                .to_string();
            let ndim = r.u32()? as usize;
            let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| WeightsError::Malformed(format!("{name}: shape {shape:?} overflows")))?;
            let values = r.take(n.checked_mul(8).ok_or(WeightsError::Truncated)?)?;
            let data = values
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            raw.push((name, shape, data));
        }
        let body_end = r.pos;
        let stored = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if r.pos != bytes.len() {
            return Err(WeightsError::Malformed(format!(
                "{} trailing bytes after checksum",
                bytes.len() - r.pos
            )));
        }
        let computed = checksum(&bytes[..body_end]);
        if stored != computed {
            return Err(WeightsError::ChecksumMismatch { stored, computed });
        }

        let spec: NetworkSpec = spec_text.parse()?;
        let parameters = raw
            .into_iter()
            .map(|(name, shape, data)| {
                Tensor::new(shape, data)
                    .map(|t| (name.clone(), t))
                    .map_err(|e| WeightsError::Malformed(format!("{name}: {e}")))
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            spec,
            parameters,
            checksum: computed,
        })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self, WeightsError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<(), WeightsError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Short identifier of these weights: the first 8 hex digits of the checksum.
    pub fn version_tag(&self) -> String {
        format!("{:016x}", self.checksum)[..8].to_string()
    }

    /// Rebuilds the network in eval mode.
    pub fn into_network<T: Scalar>(self) -> Result<Network<T>, WeightsError> {
        let named = self.parameters.into_iter().map(|(n, t)| (n, t.cast())).collect();
        Ok(Network::from_parameters(self.spec, named)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], WeightsError> {
        let end = self.pos.checked_add(n).ok_or(WeightsError::Truncated)?;
        let slice = self.bytes.get(self.pos..end).ok_or(WeightsError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, WeightsError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}

/// Writes `net` to `path` and returns the file checksum.
pub fn save<T: Scalar>(net: &Network<T>, path: impl AsRef<Path>) -> Result<u64, WeightsError> {
    let file = WeightsFile::from_network(net);
    file.write(path)?;
    Ok(file.checksum)
}

pub fn load(path: impl AsRef<Path>) -> Result<Network<f64>, WeightsError> {
    WeightsFile::read(path)?.into_network()
}
