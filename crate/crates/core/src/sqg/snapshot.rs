//! `SQGSNAP v1` state files: one ASCII header line
//! `SQGSNAP v1 <nx> <ny> <nz> <time>` followed by the `[nz][ny][nx]` field as
//! little-endian f64.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};

use super::PhysicalField;

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub time: f64,
    pub field: PhysicalField,
}

pub fn write_snapshot<W: Write>(mut w: W, field: &PhysicalField, time: f64) -> Result<()> {
    writeln!(w, "SQGSNAP v1 {} {} {} {}", field.nx, field.ny, field.nz, time)?;
    let mut buf = Vec::with_capacity(field.data.len() * 8);
    for v in &field.data {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_snapshot<R: BufRead>(mut r: R) -> Result<Snapshot> {
    let mut header = String::new();
    r.read_line(&mut header)?;
    if header.is_empty() {
        return Err(Error::Snapshot("missing header".into()));
    }
    let parts: Vec<&str> = header.split_whitespace().collect();
    if parts.len() != 6 || parts[0] != "SQGSNAP" || parts[1] != "v1" {
        return Err(Error::Snapshot(format!("bad header {:?}", header.trim_end())));
    }
    let dim = |s: &str| s.parse::<usize>().map_err(|_| Error::Snapshot(format!("bad dimension {s:?}")));
    let (nx, ny, nz) = (dim(parts[2])?, dim(parts[3])?, dim(parts[4])?);
    let time: f64 = parts[5].parse().map_err(|_| Error::Snapshot(format!("bad time {:?}", parts[5])))?;
    let n = nx * ny * nz;
    let mut bytes = vec![0u8; n * 8];
    r.read_exact(&mut bytes).map_err(|e| Error::Snapshot(format!("truncated payload: {e}")))?;
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    Ok(Snapshot { time, field: PhysicalField { nz, ny, nx, data } })
}
