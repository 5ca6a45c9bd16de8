//! Checkpoint file: JSON header line, then the parameters as little-endian
//! `f32` in declaration order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::net::{ArchConfig, ModelParams};
use crate::error::{Error, Result};

pub const MAGIC: &str = "DFCK1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    magic: String,
    arch: ArchConfig,
    step: u64,
    seed: u64,
    num_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub step: u64,
    pub seed: u64,
}

impl Checkpoint {
    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let header = Header {
            magic: MAGIC.into(),
            arch: self.params.arch(),
            step: self.step,
            seed: self.seed,
            num_params: self.params.len(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        let mut buf = Vec::with_capacity(self.params.len() * 4);
        for &v in self.params.values() {
            let narrowed = v as f32;
            if narrowed as f64 != v {
                return Err(Error::Format(format!(
                    "parameter {v} is not representable as f32"
                )));
            }
            buf.extend_from_slice(&narrowed.to_le_bytes());
        }
        out.write_all(&buf)?;
        out.flush()?;
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self> {
        let mut reader = BufReader::new(input);
        let mut line = Vec::new();
        reader.read_until(b'\n', &mut line)?;
        if line.pop() != Some(b'\n') {
            return Err(Error::Format("missing checkpoint header terminator".into()));
        }
        let header: Header = serde_json::from_slice(&line)
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        if header.magic != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", header.magic)));
        }
        if header.num_params != ModelParams::num_params(header.arch) {
            return Err(Error::Format(format!(
                "header declares {} parameters but {:?} has {}",
                header.num_params,
                header.arch,
                ModelParams::num_params(header.arch)
            )));
        }
        let expected = header.num_params * 4;
        let mut payload = Vec::with_capacity(expected);
        reader.read_to_end(&mut payload)?;
        if payload.len() != expected {
            return Err(Error::Truncated {
                expected,
                found: payload.len(),
            });
        }
        let values = payload
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        Ok(Self {
            params: ModelParams::from_values(header.arch, values)?,
            step: header.step,
            seed: header.seed,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_to(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(File::open(path)?)
    }
}
