//! DFV container: one JSON header line, then little-endian `f32` payload in
//! `((j * d + i) * h + r) * w + c` order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Volume4D;
use crate::error::{Error, Result};

pub const MAGIC: &str = "DFV1";
const DTYPE: &str = "f32le";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Header {
    pub magic: String,
    pub w: usize,
    pub h: usize,
    pub d: usize,
    pub l: usize,
    pub dtype: String,
    pub normalized: bool,
}

impl Header {
    fn payload_bytes(&self) -> Result<usize> {
        self.w
            .checked_mul(self.h)
            .and_then(|n| n.checked_mul(self.d))
            .and_then(|n| n.checked_mul(self.l))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Format("dimensions overflow".into()))
    }
}

pub fn write_to(vol: &Volume4D, mut out: impl Write) -> Result<()> {
    let (w, h, d, l) = vol.dims();
    let header = Header {
        magic: MAGIC.into(),
        w,
        h,
        d,
        l,
        dtype: DTYPE.into(),
        normalized: vol.is_normalized(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    let mut buf = Vec::with_capacity(vol.values().len() * 4);
    for v in vol.values() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    out.write_all(&buf)?;
    out.flush()?;
    Ok(())
}

pub fn read_from(input: impl Read) -> Result<Volume4D> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader.read_until(b'\n', &mut line)?;
    if line.last() != Some(&b'\n') {
        return Err(Error::Format("missing header line terminator".into()));
    }
    line.pop();
    let header: Header = serde_json::from_slice(&line)
        .map_err(|e| Error::Format(format!("bad DFV header: {e}")))?;
    if header.magic != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", header.magic)));
    }
    if header.dtype != DTYPE {
        return Err(Error::Format(format!("unsupported dtype {:?}", header.dtype)));
    }
    if header.w == 0 || header.h == 0 || header.d == 0 || header.l == 0 {
        return Err(Error::Format("zero dimension in header".into()));
    }
    let expected = header.payload_bytes()?;
    let mut payload = Vec::with_capacity(expected);
    reader.read_to_end(&mut payload)?;
    if payload.len() < expected {
        return Err(Error::Truncated {
            expected,
            found: payload.len(),
        });
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "{} trailing bytes after payload of {expected}",
            payload.len() - expected
        )));
    }
    let values = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Volume4D::new(
        header.w,
        header.h,
        header.d,
        header.l,
        values,
        header.normalized,
    )
}

pub fn save(vol: &Volume4D, path: impl AsRef<Path>) -> Result<()> {
    write_to(vol, BufWriter::new(File::create(path)?))
}

pub fn load(path: impl AsRef<Path>) -> Result<Volume4D> {
    read_from(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encode(vol: &Volume4D) -> Vec<u8> {
        let mut buf = Vec::new();
        write_to(vol, &mut buf).unwrap();
        buf
    }

    #[test]
    fn zeros_round_trip() {
        let v = Volume4D::zeros(4, 4, 2, 3).unwrap();
        assert_eq!(read_from(encode(&v).as_slice()).unwrap(), v);
    }

    #[test]
    fn header_is_single_json_line() {
        let v = Volume4D::zeros(2, 3, 1, 2).unwrap().with_normalized_flag(true);
        let bytes = encode(&v);
        let nl = bytes.iter().position(|&b| b == b'\n').unwrap();
        assert_eq!(
            std::str::from_utf8(&bytes[..nl]).unwrap(),
            r#"{"magic":"DFV1","w":2,"h":3,"d":1,"l":2,"dtype":"f32le","normalized":true}"#
        );
        assert_eq!(bytes.len(), nl + 1 + 2 * 3 * 2 * 4);
    }

    #[test]
    fn accepts_full_size_header() {
        let header = br#"{"magic":"DFV1","w":106,"h":81,"d":76,"l":150,"dtype":"f32le","normalized":false}"#;
        let parsed: Header = serde_json::from_slice(header).unwrap();
        assert_eq!((parsed.w, parsed.h, parsed.d, parsed.l), (106, 81, 76, 150));
        assert_eq!(parsed.payload_bytes().unwrap(), 106 * 81 * 76 * 150 * 4);
    }

    #[test]
    fn truncated_payload_reports_byte_counts() {
        let v = Volume4D::zeros(4, 4, 2, 3).unwrap();
        let mut bytes = encode(&v);
        bytes.truncate(bytes.len() - 10);
        match read_from(bytes.as_slice()) {
            Err(Error::Truncated { expected, found }) => {
                assert_eq!(expected, 4 * 4 * 2 * 3 * 4);
                assert_eq!(found, expected - 10);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn rejects_malformed_headers() {
        for bad in [
            &b"not json\n"[..],
            &br#"{"magic":"DFV2","w":1,"h":1,"d":1,"l":1,"dtype":"f32le","normalized":false}"#[..],
            &br#"{"magic":"DFV1","w":1,"h":1,"d":1,"l":1,"dtype":"f64le","normalized":false}"#[..],
            &br#"{"magic":"DFV1","w":0,"h":1,"d":1,"l":1,"dtype":"f32le","normalized":false}"#[..],
        ] {
            let mut bytes = bad.to_vec();
            if !bytes.ends_with(b"\n") {
                bytes.push(b'\n');
            }
            bytes.extend_from_slice(&[0u8; 4]);
            assert!(read_from(bytes.as_slice()).is_err());
        }
        assert!(read_from(&b"{\"magic\":\"DFV1\""[..]).is_err());
    }

    #[test]
    fn rejects_non_finite_payload() {
        let v = Volume4D::zeros(1, 1, 1, 2).unwrap();
        let mut bytes = encode(&v);
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(read_from(bytes.as_slice()), Err(Error::NonFinite(_))));
    }

    #[test]
    fn rejects_trailing_bytes() {
        let v = Volume4D::zeros(2, 2, 1, 2).unwrap();
        let mut bytes = encode(&v);
        bytes.push(0);
        assert!(read_from(bytes.as_slice()).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_is_bit_exact(
                dims in (1usize..5, 1usize..5, 1usize..3, 1usize..3),
                seed in any::<u64>(),
                normalized in any::<bool>(),
            ) {
                let (w, h, d, l) = dims;
                let mut s = seed;
                let values = (0..w * h * d * l)
                    .map(|_| {
                        s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                        f32::from_bits((s >> 32) as u32 & 0x7F7F_FFFF) * if s & 1 == 0 { 1.0 } else { -1.0 }
                    })
                    .collect();
                let v = Volume4D::new(w, h, d, l, values, normalized).unwrap();
                let back = read_from(encode(&v).as_slice()).unwrap();
                prop_assert_eq!(
                    back.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
                    v.values().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
                );
                prop_assert_eq!(back, v);
            }
        }
    }
}
