//! DGM, the little-endian binary grid container.
//!
//! ```text
//! "DEMG" | version: u16 = 1 | rows: u32 | cols: u32
//!        | resolution_x: f64 | resolution_y: f64 | rows*cols f32, row-major
//! ```
//!
//! Missing cells are written as the canonical quiet NaN `0x7FC00000`; any NaN
//! is accepted on read.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{ElevationGrid, GridGeometry, MISSING_BITS};

pub const MAGIC: [u8; 4] = *b"DEMG";
pub const VERSION: u16 = 1;
pub const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8 + 8;

pub fn encode(grid: &ElevationGrid) -> Result<Vec<u8>> {
    let g = grid.geometry();
    let rows = u32::try_from(g.rows).map_err(|_| Error::InvalidGeometry("rows exceed u32".into()))?;
    let cols = u32::try_from(g.cols).map_err(|_| Error::InvalidGeometry("cols exceed u32".into()))?;
    let mut buf = Vec::with_capacity(HEADER_LEN + 4 * g.len());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&rows.to_le_bytes());
    buf.extend_from_slice(&cols.to_le_bytes());
    buf.extend_from_slice(&g.resolution_x.to_le_bytes());
    buf.extend_from_slice(&g.resolution_y.to_le_bytes());
    for &v in grid.cells() {
        let bits = if v.is_nan() { MISSING_BITS } else { v.to_bits() };
        buf.extend_from_slice(&bits.to_le_bytes());
    }
    Ok(buf)
}

pub fn decode(bytes: &[u8]) -> Result<ElevationGrid> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated { expected: HEADER_LEN as u64, actual: bytes.len() as u64 });
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let rows = u32::from_le_bytes(bytes[6..10].try_into().unwrap());
    let cols = u32::from_le_bytes(bytes[10..14].try_into().unwrap());
    let resolution_x = f64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let resolution_y = f64::from_le_bytes(bytes[22..30].try_into().unwrap());

    let payload_len = (rows as u64)
        .checked_mul(cols as u64)
        .and_then(|n| n.checked_mul(4))
        .filter(|&n| usize::try_from(n).is_ok())
        .ok_or(Error::DimensionOverflow { rows, cols })?;
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if actual < payload_len {
        return Err(Error::Truncated { expected: payload_len, actual });
    }
    if actual > payload_len {
        return Err(Error::TrailingBytes(actual - payload_len));
    }

    let geometry = GridGeometry::new(rows as usize, cols as usize, resolution_x, resolution_y)?;
    let cells = bytes[HEADER_LEN..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ElevationGrid::new(geometry, cells)
}

pub fn read_grid(path: impl AsRef<Path>) -> Result<ElevationGrid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

/// Writes through a temporary sibling and renames it into place.
pub fn write_grid(grid: &ElevationGrid, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode(grid)?;
    let tmp = path.with_extension("dgm.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::MISSING;
    use proptest::prelude::*;

    fn sample_grid() -> ElevationGrid {
        let g = GridGeometry::new(3, 2, 0.04, 0.05).unwrap();
        ElevationGrid::new(g, vec![0.0, -1.5, f32::NAN, 2.25, 1e-7, 3.0]).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&sample_grid()).unwrap();
        assert_eq!(&bytes[0..4], b"DEMG");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[10..14].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[22..30].try_into().unwrap()), 0.05);
        assert_eq!(bytes.len(), HEADER_LEN + 6 * 4);
        let nan_cell = &bytes[HEADER_LEN + 8..HEADER_LEN + 12];
        assert_eq!(u32::from_le_bytes(nan_cell.try_into().unwrap()), MISSING_BITS);
    }

    #[test]
    fn wrong_magic() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode(&bytes), Err(Error::BadMagic(_))));
    }

    #[test]
    fn wrong_version() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes[4] = 2;
        assert!(matches!(decode(&bytes), Err(Error::UnsupportedVersion(2))));
    }

    #[test]
    fn truncated_payload() {
        let bytes = encode(&sample_grid()).unwrap();
        let err = decode(&bytes[..bytes.len() - 3]).unwrap_err();
        assert!(matches!(err, Error::Truncated { expected: 24, actual: 21 }));
        assert!(matches!(decode(&bytes[..10]), Err(Error::Truncated { .. })));
    }

    #[test]
    fn trailing_bytes() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes.push(0);
        assert!(matches!(decode(&bytes), Err(Error::TrailingBytes(1))));
    }

    #[test]
    fn dimension_overflow() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes[6..10].copy_from_slice(&u32::MAX.to_le_bytes());
        bytes[10..14].copy_from_slice(&u32::MAX.to_le_bytes());
        let err = decode(&bytes).unwrap_err();
        // 64-bit hosts can address the product, so this surfaces as truncation there.
        assert!(matches!(err, Error::DimensionOverflow { .. } | Error::Truncated { .. }));
    }

    #[test]
    fn foreign_nan_payload_is_accepted() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&0xFF80_0001u32.to_le_bytes());
        let g = decode(&bytes).unwrap();
        assert!(g.is_missing(0, 0));
        assert_eq!(g.get(0, 0).to_bits(), MISSING.to_bits());
    }

    #[test]
    fn infinite_cell_is_rejected() {
        let mut bytes = encode(&sample_grid()).unwrap();
        bytes[HEADER_LEN..HEADER_LEN + 4].copy_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(decode(&bytes), Err(Error::NonFiniteCell { .. })));
    }

    #[test]
    fn file_round_trip_64() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.dgm");
        let geometry = GridGeometry::default();
        let grid = ElevationGrid::from_fn(geometry, |r, c| {
            if (r * 7 + c * 3) % 11 == 0 {
                f32::NAN
            } else {
                ((r * 31 + c * 17) % 101) as f32 * 0.013 - 0.6
            }
        });
        write_grid(&grid, &path).unwrap();
        let back = read_grid(&path).unwrap();
        let a: Vec<u32> = grid.cells().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u32> = back.cells().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.geometry(), grid.geometry());
    }

    proptest! {
        #[test]
        fn encode_decode_is_bitwise(
            rows in 1usize..12,
            cols in 1usize..12,
            seed in proptest::collection::vec(any::<u32>(), 144),
        ) {
            let geometry = GridGeometry::new(rows, cols, 0.04, 0.07).unwrap();
            let cells: Vec<f32> = seed[..rows * cols]
                .iter()
                .map(|&b| {
                    let v = f32::from_bits(b);
                    if v.is_infinite() { 0.0 } else { v }
                })
                .collect();
            let grid = ElevationGrid::new(geometry, cells).unwrap();
            let back = decode(&encode(&grid).unwrap()).unwrap();
            let a: Vec<u32> = grid.cells().iter().map(|v| v.to_bits()).collect();
            let b: Vec<u32> = back.cells().iter().map(|v| v.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }
}
