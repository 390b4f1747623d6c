//! `EHF1` binary field container (little-endian throughout).
//!
//! ```text
//! b"EHF1" | u32 version=1 | u32 d | u32 N | f64 h
//! N^d cells x d(d+1)/2 f64 upper-triangular entries (row-major cells)
//! N^d f64 lambda | N^d f64 Lambda
//! ```

use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use super::field::{tri_len, CoefficientField};
use crate::error::{Error, Result};
use crate::grid::Grid;

pub const FIELD_MAGIC: &[u8; 4] = b"EHF1";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Header {
    pub grid: Grid,
    pub spacing: f64,
}

pub(crate) fn write_header<W: Write>(
    w: &mut W,
    magic: &[u8; 4],
    grid: &Grid,
    h: f64,
) -> Result<()> {
    w.write_all(magic)?;
    w.write_u32::<LittleEndian>(FORMAT_VERSION)?;
    w.write_u32::<LittleEndian>(grid.dim() as u32)?;
    w.write_u32::<LittleEndian>(grid.n() as u32)?;
    w.write_f64::<LittleEndian>(h)?;
    Ok(())
}

pub(crate) fn read_header<R: Read>(r: &mut R, magic: &[u8; 4]) -> Result<Header> {
    let mut found = [0u8; 4];
    r.read_exact(&mut found)?;
    if &found != magic {
        return Err(Error::Format(format!(
            "bad magic {:?}, expected {:?}",
            String::from_utf8_lossy(&found),
            String::from_utf8_lossy(magic)
        )));
    }
    let version = r.read_u32::<LittleEndian>()?;
    if version != FORMAT_VERSION {
        return Err(Error::Version {
            found: version,
            expected: FORMAT_VERSION,
        });
    }
    let d = r.read_u32::<LittleEndian>()? as usize;
    let n = r.read_u32::<LittleEndian>()? as usize;
    let spacing = r.read_f64::<LittleEndian>()?;
    let grid = Grid::new(d, n).map_err(|e| Error::Format(e.to_string()))?;
    Ok(Header { grid, spacing })
}

pub(crate) fn write_f64s<W: Write>(w: &mut W, values: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(values.len() * 8);
    for v in values {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R, count: usize) -> Result<Vec<f64>> {
    let mut buf = vec![0u8; count * 8];
    r.read_exact(&mut buf)?;
    Ok(buf
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub fn write_field<W: Write>(w: &mut W, field: &CoefficientField) -> Result<()> {
    write_header(w, FIELD_MAGIC, field.grid(), field.spacing())?;
    write_f64s(w, field.entries())?;
    write_f64s(w, field.lambda())?;
    write_f64s(w, field.lambda_max())?;
    Ok(())
}

pub fn read_field<R: Read>(r: &mut R) -> Result<CoefficientField> {
    let Header { grid, spacing } = read_header(r, FIELD_MAGIC)?;
    let cells = grid.len();
    let entries = read_f64s(r, cells * tri_len(grid.dim()))?;
    let lambda = read_f64s(r, cells)?;
    let lambda_max = read_f64s(r, cells)?;
    CoefficientField::from_parts(grid, spacing, entries, lambda, lambda_max)
}

pub fn field_to_bytes(field: &CoefficientField) -> Vec<u8> {
    let mut out = Vec::new();
    write_field(&mut out, field).expect("writing to a Vec cannot fail");
    out
}
