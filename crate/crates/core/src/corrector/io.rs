//! `CHI1` corrector container: the `EHF1` header under its own magic, then the `d`
//! corrector components, each `N^d` little-endian f64 in row-major cell order.

use std::io::{Read, Write};

use super::field::CorrectorField;
use crate::environment::io::{read_f64s, read_header, write_f64s, write_header, Header};
use crate::error::Result;

pub const CORRECTOR_MAGIC: &[u8; 4] = b"CHI1";

pub fn write_correctors<W: Write>(w: &mut W, chi: &CorrectorField) -> Result<()> {
    write_header(w, CORRECTOR_MAGIC, chi.grid(), chi.spacing())?;
    for c in chi.components() {
        write_f64s(w, c)?;
    }
    Ok(())
}

/// Reads correctors back; the field hash is supplied by the caller because the
/// container does not store it.
pub fn read_correctors<R: Read>(r: &mut R, field_hash: &str) -> Result<CorrectorField> {
    let Header { grid, spacing } = read_header(r, CORRECTOR_MAGIC)?;
    let chi = (0..grid.dim())
        .map(|_| read_f64s(r, grid.len()))
        .collect::<Result<Vec<_>>>()?;
    CorrectorField::from_values(grid, spacing, chi, field_hash.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::assemble;
    use crate::environment::{generate_field, EnvironmentSpec, Model};
    use crate::error::Error;
    use crate::solver::SolverConfig;

    #[test]
    fn round_trip_is_bit_identical() {
        let spec = EnvironmentSpec::new(
            Model::Checkerboard {
                a_low: 1.0,
                a_high: 4.0,
                tile_cells: 2,
            },
            2,
            0,
        );
        let f = generate_field(&spec, 8, 0.125).unwrap();
        let chi =
            crate::corrector::solve_correctors(&assemble(&f), &SolverConfig::default()).unwrap();
        let mut bytes = Vec::new();
        write_correctors(&mut bytes, &chi).unwrap();
        assert_eq!(&bytes[..4], b"CHI1");
        assert_eq!(bytes.len(), 24 + 2 * 64 * 8);
        let back = read_correctors(&mut bytes.as_slice(), chi.field_hash()).unwrap();
        assert_eq!(back.components(), chi.components());
        let mut again = Vec::new();
        write_correctors(&mut again, &back).unwrap();
        assert_eq!(bytes, again);
        assert!(matches!(
            crate::environment::io::read_field(&mut bytes.as_slice()),
            Err(Error::Format(_))
        ));
    }
}
