//! State snapshots on disk.
//!
//! The binary format is little-endian and versioned:
//!
//!   magic "EFLD" | u32 version | u32 dim | u32 n | u32 fields | f64 t
//!   | fields * n^dim little-endian f64 values, row-major per field
//!
//! Reads reproduce the written state bit for bit, including non-finite
//! values, so a snapshot of a broken state (written by failure reporting)
//! survives the round trip for post-mortems. The CSV export is for plotting
//! and outside tooling; it is not read back.

use crate::functionals::FlowState;
use crate::torusfield::{FieldError, Grid, ScalarField};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 4] = b"EFLD";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a state snapshot (bad magic)")]
    BadMagic,
    #[error("unsupported snapshot version {0}")]
    UnsupportedVersion(u32),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

pub fn write_binary(path: &Path, state: &FlowState) -> Result<(), SnapshotError> {
    let grid = state.grid();
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&(grid.dim() as u32).to_le_bytes())?;
    w.write_all(&(grid.n() as u32).to_le_bytes())?;
    w.write_all(&(state.n() as u32).to_le_bytes())?;
    w.write_all(&state.t.to_le_bytes())?;
    for field in state.u() {
        for v in field.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn take_u32(buf: &[u8], off: &mut usize) -> Result<u32, SnapshotError> {
    let bytes: [u8; 4] = buf
        .get(*off..*off + 4)
        .ok_or_else(|| SnapshotError::Malformed("truncated header".into()))?
        .try_into()
        .unwrap();
    *off += 4;
    Ok(u32::from_le_bytes(bytes))
}

pub fn read_binary(path: &Path) -> Result<FlowState, SnapshotError> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() < 4 || &buf[..4] != MAGIC {
        return Err(SnapshotError::BadMagic);
    }
    let mut off = 4;
    let version = take_u32(&buf, &mut off)?;
    if version != VERSION {
        return Err(SnapshotError::UnsupportedVersion(version));
    }
    let dim = take_u32(&buf, &mut off)? as usize;
    let n = take_u32(&buf, &mut off)? as usize;
    let fields = take_u32(&buf, &mut off)? as usize;
    let t_bytes: [u8; 8] = buf
        .get(off..off + 8)
        .ok_or_else(|| SnapshotError::Malformed("truncated header".into()))?
        .try_into()
        .unwrap();
    let t = f64::from_le_bytes(t_bytes);
    off += 8;

    let grid = Grid::new(dim, n)?;
    if fields == 0 {
        return Err(SnapshotError::Malformed("zero fields".into()));
    }
    let expected = off + fields * grid.len() * 8;
    if buf.len() != expected {
        return Err(SnapshotError::Malformed(format!(
            "payload is {} bytes, expected {}",
            buf.len() - off,
            expected - off
        )));
    }
    let mut u = Vec::with_capacity(fields);
    for _ in 0..fields {
        let values: Vec<f64> = buf[off..off + grid.len() * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        off += grid.len() * 8;
        u.push(ScalarField::from_values(grid, values)?);
    }
    Ok(FlowState::new_unchecked(t, u))
}

/// Plain-text export: one commented header line, then one row per grid
/// point with its coordinates and every component's value.
pub fn write_csv(path: &Path, state: &FlowState) -> Result<(), SnapshotError> {
    let grid = state.grid();
    let mut w = BufWriter::new(File::create(path)?);
    write!(w, "# t = {:.16e}; columns: x", state.t)?;
    if grid.dim() == 2 {
        write!(w, ",y")?;
    }
    for j in 1..=state.n() {
        write!(w, ",u_{j}")?;
    }
    writeln!(w)?;
    for idx in 0..grid.len() {
        let (x, y) = grid.coords(idx);
        write!(w, "{x:.16e}")?;
        if grid.dim() == 2 {
            write!(w, ",{y:.16e}")?;
        }
        for field in state.u() {
            write!(w, ",{:.16e}", field.values()[idx])?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}
