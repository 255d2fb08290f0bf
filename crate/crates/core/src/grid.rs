//! Elevation grids, occlusion masks and the cellwise operations shared by
//! every stage of the pipeline.
//!
//! Grids are row-major. The first (row) index runs along the metric `x` axis
//! and the second (column) index along `y`, with the grid centre at the
//! origin: row `u` sits at `x = (u - rows/2) * resolution_x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Bit pattern written for every missing cell.
pub const MISSING_BITS: u32 = 0x7FC0_0000;

/// Canonical quiet NaN marking a missing cell.
pub const MISSING: f32 = f32::from_bits(MISSING_BITS);

/// Default cell size of the synthetic datasets, in meters.
pub const DEFAULT_RESOLUTION: f64 = 0.04;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub rows: usize,
    pub cols: usize,
    pub resolution_x: f64,
    pub resolution_y: f64,
}

impl GridGeometry {
    pub fn new(rows: usize, cols: usize, resolution_x: f64, resolution_y: f64) -> Result<Self> {
        let geometry = Self { rows, cols, resolution_x, resolution_y };
        geometry.validate()?;
        Ok(geometry)
    }

    /// Square cells of `resolution` meters.
    pub fn square(rows: usize, cols: usize, resolution: f64) -> Result<Self> {
        Self::new(rows, cols, resolution, resolution)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 {
            return Err(Error::InvalidGeometry(format!(
                "{}x{} grid has no cells",
                self.rows, self.cols
            )));
        }
        if self.rows.checked_mul(self.cols).is_none() {
            return Err(Error::InvalidGeometry("cell count overflows".into()));
        }
        for r in [self.resolution_x, self.resolution_y] {
            if !(r.is_finite() && r > 0.0) {
                return Err(Error::InvalidGeometry(format!("resolution {r} must be positive and finite")));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize) -> usize {
        debug_assert!(row < self.rows && col < self.cols);
        row * self.cols + col
    }

    pub fn min_resolution(&self) -> f64 {
        self.resolution_x.min(self.resolution_y)
    }

    /// Metric `x` of the point representing row `row`.
    #[inline]
    pub fn cell_x(&self, row: usize) -> f64 {
        (row as f64 - self.rows as f64 / 2.0) * self.resolution_x
    }

    /// Metric `y` of the point representing column `col`.
    #[inline]
    pub fn cell_y(&self, col: usize) -> f64 {
        (col as f64 - self.cols as f64 / 2.0) * self.resolution_y
    }

    /// Pixel indices under a metric position, rounding half away from zero.
    /// The result may lie outside the grid.
    #[inline]
    pub fn pixel_of(&self, x: f64, y: f64) -> (i64, i64) {
        let u = (self.rows as f64 / 2.0 + x / self.resolution_x).round();
        let v = (self.cols as f64 / 2.0 + y / self.resolution_y).round();
        (u as i64, v as i64)
    }

    #[inline]
    pub fn checked_pixel(&self, pixel: (i64, i64)) -> Option<(usize, usize)> {
        let (u, v) = pixel;
        if u >= 0 && v >= 0 && (u as usize) < self.rows && (v as usize) < self.cols {
            Some((u as usize, v as usize))
        } else {
            None
        }
    }

    /// Half the metric extent along x and y.
    pub fn half_extent(&self) -> (f64, f64) {
        (
            self.rows as f64 * self.resolution_x / 2.0,
            self.cols as f64 * self.resolution_y / 2.0,
        )
    }

    pub fn ensure_same(&self, other: &GridGeometry) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::GeometryMismatch(format!(
                "{}x{} @ ({}, {}) vs {}x{} @ ({}, {})",
                self.rows,
                self.cols,
                self.resolution_x,
                self.resolution_y,
                other.rows,
                other.cols,
                other.resolution_x,
                other.resolution_y
            )))
        }
    }
}

impl Default for GridGeometry {
    /// 64x64 cells of 4 cm.
    fn default() -> Self {
        Self { rows: 64, cols: 64, resolution_x: DEFAULT_RESOLUTION, resolution_y: DEFAULT_RESOLUTION }
    }
}

/// Elevations in meters; NaN marks a missing (occluded) cell.
///
/// Equality is bitwise, so two grids with the same missing cells compare equal.
#[derive(Debug, Clone)]
pub struct ElevationGrid {
    geometry: GridGeometry,
    cells: Vec<f32>,
}

impl PartialEq for ElevationGrid {
    fn eq(&self, other: &Self) -> bool {
        self.geometry == other.geometry
            && self.cells.len() == other.cells.len()
            && self.cells.iter().zip(&other.cells).all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl ElevationGrid {
    /// Builds a grid, canonicalising every NaN to [`MISSING`].
    pub fn new(geometry: GridGeometry, mut cells: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if cells.len() != geometry.len() {
            return Err(Error::CellCount { expected: geometry.len(), actual: cells.len() });
        }
        for (i, c) in cells.iter_mut().enumerate() {
            if c.is_nan() {
                *c = MISSING;
            } else if c.is_infinite() {
                return Err(Error::NonFiniteCell { row: i / geometry.cols, col: i % geometry.cols });
            }
        }
        Ok(Self { geometry, cells })
    }

    pub fn filled(geometry: GridGeometry, value: f32) -> Self {
        Self::new(geometry, vec![value; geometry.len()]).expect("fill value must be finite or NaN")
    }

    pub fn zeros(geometry: GridGeometry) -> Self {
        Self::filled(geometry, 0.0)
    }

    /// # Panics
    /// If `f` returns an infinite value.
    pub fn from_fn(geometry: GridGeometry, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut cells = Vec::with_capacity(geometry.len());
        for r in 0..geometry.rows {
            for c in 0..geometry.cols {
                cells.push(f(r, c));
            }
        }
        Self::new(geometry, cells).expect("generated elevations must be finite or NaN")
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn rows(&self) -> usize {
        self.geometry.rows
    }

    pub fn cols(&self) -> usize {
        self.geometry.cols
    }

    pub fn cells(&self) -> &[f32] {
        &self.cells
    }

    pub fn into_cells(self) -> Vec<f32> {
        self.cells
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.cells[self.geometry.index(row, col)]
    }

    #[inline]
    pub fn is_missing(&self, row: usize, col: usize) -> bool {
        self.get(row, col).is_nan()
    }

    pub fn missing_count(&self) -> usize {
        self.cells.iter().filter(|c| c.is_nan()).count()
    }

    pub fn observed_count(&self) -> usize {
        self.cells.len() - self.missing_count()
    }

    pub fn missing_ratio(&self) -> f64 {
        self.missing_count() as f64 / self.cells.len() as f64
    }

    pub fn has_missing(&self) -> bool {
        self.cells.iter().any(|c| c.is_nan())
    }

    /// Minimum and maximum over observed cells, `None` when every cell is missing.
    pub fn observed_range(&self) -> Option<(f32, f32)> {
        self.cells.iter().filter(|c| !c.is_nan()).fold(None, |acc, &v| match acc {
            None => Some((v, v)),
            Some((lo, hi)) => Some((lo.min(v), hi.max(v))),
        })
    }

    /// Applies `f` to every observed cell; missing cells stay missing.
    pub fn map_observed(&self, mut f: impl FnMut(usize, f32) -> f32) -> Self {
        let cells = self
            .cells
            .iter()
            .enumerate()
            .map(|(i, &v)| if v.is_nan() { MISSING } else { f(i, v) })
            .collect();
        Self::new(self.geometry, cells).expect("mapped elevations must stay finite")
    }

    /// Copy with every cell set in `mask` marked missing.
    pub fn with_missing(&self, mask: &OcclusionMask) -> Result<Self> {
        self.geometry.ensure_same(mask.geometry())?;
        let cells = self
            .cells
            .iter()
            .zip(mask.bits())
            .map(|(&v, &occluded)| if occluded { MISSING } else { v })
            .collect();
        Ok(Self { geometry: self.geometry, cells })
    }
}

/// `true` marks an occluded cell.
#[derive(Debug, Clone, PartialEq)]
pub struct OcclusionMask {
    geometry: GridGeometry,
    bits: Vec<bool>,
}

impl OcclusionMask {
    pub fn new(geometry: GridGeometry, bits: Vec<bool>) -> Result<Self> {
        geometry.validate()?;
        if bits.len() != geometry.len() {
            return Err(Error::CellCount { expected: geometry.len(), actual: bits.len() });
        }
        Ok(Self { geometry, bits })
    }

    pub fn empty(geometry: GridGeometry) -> Self {
        Self { geometry, bits: vec![false; geometry.len()] }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[self.geometry.index(row, col)]
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn ratio(&self) -> f64 {
        self.count() as f64 / self.bits.len() as f64
    }

    pub fn is_subset_of(&self, other: &OcclusionMask) -> bool {
        self.geometry == other.geometry && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !a || b)
    }

    pub fn is_disjoint(&self, other: &OcclusionMask) -> bool {
        self.geometry == other.geometry && self.bits.iter().zip(&other.bits).all(|(&a, &b)| !(a && b))
    }

    /// Mask rendered as a grid of `1.0` (occluded) and `0.0` (visible), the
    /// on-disk form of masks.
    pub fn to_grid(&self) -> ElevationGrid {
        let cells = self.bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        ElevationGrid { geometry: self.geometry, cells }
    }

    /// Inverse of [`OcclusionMask::to_grid`]; any nonzero observed value counts as occluded.
    pub fn from_grid(grid: &ElevationGrid) -> Result<Self> {
        if grid.has_missing() {
            return Err(Error::MissingCells("mask grids must be complete"));
        }
        Ok(Self { geometry: grid.geometry, bits: grid.cells.iter().map(|&v| v != 0.0).collect() })
    }
}

/// Mean elevation removed by [`normalize`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationState {
    pub mean_elevation: f64,
}

/// Occlusion mask with a bit set exactly where the grid is missing.
pub fn mask_from_grid(grid: &ElevationGrid) -> OcclusionMask {
    OcclusionMask { geometry: grid.geometry, bits: grid.cells.iter().map(|c| c.is_nan()).collect() }
}

/// Patches `occluded` with `reconstruction` wherever `mask` is set.
pub fn compose(
    occluded: &ElevationGrid,
    reconstruction: &ElevationGrid,
    mask: &OcclusionMask,
) -> Result<ElevationGrid> {
    occluded.geometry.ensure_same(&reconstruction.geometry)?;
    occluded.geometry.ensure_same(&mask.geometry)?;
    if reconstruction.has_missing() {
        return Err(Error::MissingCells("reconstruction must be complete"));
    }
    let cells = occluded
        .cells
        .iter()
        .zip(&reconstruction.cells)
        .zip(&mask.bits)
        .map(|((&occ, &rec), &m)| if m { rec } else { occ })
        .collect();
    Ok(ElevationGrid { geometry: occluded.geometry, cells })
}

/// Subtracts the mean of the observed cells.
pub fn normalize(grid: &ElevationGrid) -> Result<(ElevationGrid, NormalizationState)> {
    let (sum, n) = grid
        .cells
        .iter()
        .filter(|c| !c.is_nan())
        .fold((0.0f64, 0usize), |(s, n), &v| (s + v as f64, n + 1));
    if n == 0 {
        return Err(Error::FullyMissing);
    }
    let mean = sum / n as f64;
    let shifted = grid.map_observed(|_, v| (v as f64 - mean) as f32);
    Ok((shifted, NormalizationState { mean_elevation: mean }))
}

pub fn denormalize(grid: &ElevationGrid, state: NormalizationState) -> ElevationGrid {
    grid.map_observed(|_, v| (v as f64 + state.mean_elevation) as f32)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(rows: usize, cols: usize) -> GridGeometry {
        GridGeometry::square(rows, cols, 0.04).unwrap()
    }

    #[test]
    fn mask_of_complete_grid_is_empty() {
        let g = ElevationGrid::filled(geom(3, 3), 1.5);
        assert_eq!(mask_from_grid(&g).count(), 0);
    }

    #[test]
    fn mask_of_missing_grid_is_full() {
        let g = ElevationGrid::filled(geom(2, 2), f32::NAN);
        assert_eq!(mask_from_grid(&g).count(), 4);
    }

    #[test]
    fn mask_marks_single_missing_cell() {
        let g = ElevationGrid::new(geom(2, 2), vec![0.0, f32::NAN, 2.0, 3.0]).unwrap();
        let m = mask_from_grid(&g);
        assert_eq!(m.bits(), &[false, true, false, false]);
        assert!(m.get(0, 1));
    }

    #[test]
    fn nan_payloads_are_canonicalised() {
        let odd_nan = f32::from_bits(0xFFC0_1234);
        let g = ElevationGrid::new(geom(1, 1), vec![odd_nan]).unwrap();
        assert_eq!(g.get(0, 0).to_bits(), MISSING_BITS);
    }

    #[test]
    fn infinite_cells_are_rejected() {
        let err = ElevationGrid::new(geom(1, 2), vec![0.0, f32::INFINITY]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteCell { row: 0, col: 1 }));
    }

    #[test]
    fn invalid_geometry_is_rejected() {
        assert!(GridGeometry::square(0, 3, 0.04).is_err());
        assert!(GridGeometry::new(3, 3, 0.04, 0.0).is_err());
        assert!(GridGeometry::new(3, 3, f64::NAN, 0.04).is_err());
    }

    #[test]
    fn compose_with_empty_mask_is_occluded_input() {
        let occ = ElevationGrid::new(geom(1, 3), vec![1.0, 2.0, 3.0]).unwrap();
        let rec = ElevationGrid::filled(geom(1, 3), 9.0);
        let out = compose(&occ, &rec, &OcclusionMask::empty(geom(1, 3))).unwrap();
        assert_eq!(out, occ);
    }

    #[test]
    fn compose_with_full_mask_is_reconstruction() {
        let occ = ElevationGrid::filled(geom(2, 2), f32::NAN);
        let rec = ElevationGrid::new(geom(2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = compose(&occ, &rec, &mask_from_grid(&occ)).unwrap();
        assert_eq!(out, rec);
    }

    #[test]
    fn compose_cellwise() {
        let g = geom(1, 2);
        let occ = ElevationGrid::new(g, vec![1.0, f32::NAN]).unwrap();
        let rec = ElevationGrid::new(g, vec![5.0, 7.0]).unwrap();
        let mask = OcclusionMask::new(g, vec![false, true]).unwrap();
        assert_eq!(compose(&occ, &rec, &mask).unwrap().cells(), &[1.0, 7.0]);
    }

    #[test]
    fn compose_rejects_bad_inputs() {
        let occ = ElevationGrid::zeros(geom(2, 2));
        let rec = ElevationGrid::zeros(geom(2, 3));
        let mask = OcclusionMask::empty(geom(2, 2));
        assert!(matches!(compose(&occ, &rec, &mask), Err(Error::GeometryMismatch(_))));
        let rec = ElevationGrid::filled(geom(2, 2), f32::NAN);
        assert!(matches!(compose(&occ, &rec, &mask), Err(Error::MissingCells(_))));
    }

    #[test]
    fn normalize_constant_grid() {
        let (n, s) = normalize(&ElevationGrid::filled(geom(3, 3), 4.2)).unwrap();
        assert!(n.cells().iter().all(|&v| v.abs() < 1e-6));
        assert!((s.mean_elevation - 4.2).abs() < 1e-6);
    }

    #[test]
    fn normalize_zero_grid_is_identity() {
        let g = ElevationGrid::zeros(geom(2, 2));
        let (n, s) = normalize(&g).unwrap();
        assert_eq!(n, g);
        assert_eq!(s.mean_elevation, 0.0);
    }

    #[test]
    fn normalize_skips_missing() {
        let g = ElevationGrid::new(geom(1, 3), vec![1.0, 3.0, f32::NAN]).unwrap();
        let (n, s) = normalize(&g).unwrap();
        assert_eq!(s.mean_elevation, 2.0);
        assert_eq!(&n.cells()[..2], &[-1.0, 1.0]);
        assert!(n.is_missing(0, 2));
    }

    #[test]
    fn normalize_rejects_fully_missing() {
        let g = ElevationGrid::filled(geom(2, 2), f32::NAN);
        assert!(matches!(normalize(&g), Err(Error::FullyMissing)));
    }

    #[test]
    fn denormalize_adds_mean() {
        let g = ElevationGrid::new(geom(1, 2), vec![-1.0, 1.0]).unwrap();
        let out = denormalize(&g, NormalizationState { mean_elevation: 2.0 });
        assert_eq!(out.cells(), &[1.0, 3.0]);
        assert_eq!(denormalize(&g, NormalizationState { mean_elevation: 0.0 }), g);
    }

    #[test]
    fn pixel_lookup_rounds_half_away_from_zero() {
        let g = geom(4, 4);
        // row 0 sits at x = -2 cells; half a cell further out rounds to -1.
        assert_eq!(g.pixel_of(-0.10, 0.0), (-1, 2));
        assert_eq!(g.pixel_of(g.cell_x(3), g.cell_y(1)), (3, 1));
        assert_eq!(g.checked_pixel((-1, 2)), None);
    }

    #[test]
    fn mask_grid_round_trip() {
        let m = OcclusionMask::new(geom(1, 3), vec![true, false, true]).unwrap();
        assert_eq!(OcclusionMask::from_grid(&m.to_grid()).unwrap(), m);
    }
}
