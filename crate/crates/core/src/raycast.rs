//! Per-cell line-of-sight from a vantage point over an elevation grid.
//!
//! Every cell is tested by stepping a ray from the vantage point towards the
//! cell's representative point, advancing half the smaller cell size in the
//! grid plane per step. At each step the pixel under the ray is looked up; an
//! observed elevation strictly above the ray occludes the target. Stepping
//! ends on reaching the target pixel or on overshooting the target distance.
//! Missing cells are reported as occluded and never block other rays, and
//! the pixel under the vantage point never blocks its own rays.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{mask_from_grid, ElevationGrid, OcclusionMask};

/// Sensor position: `x`, `y` relative to the grid centre, `z` absolute, all in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VantagePoint {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl VantagePoint {
    pub fn new(x: f64, y: f64, z: f64) -> Result<Self> {
        let vp = Self { x, y, z };
        vp.validate()?;
        Ok(vp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.is_finite() && self.y.is_finite() && self.z.is_finite() {
            Ok(())
        } else {
            Err(Error::NonFiniteVantage)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RayCastResult {
    /// All cells not visible from the vantage, including cells missing in the input.
    pub occlusion: OcclusionMask,
    /// Input grid with every occluded cell set missing.
    pub occluded_grid: ElevationGrid,
}

/// Ray-casts every cell of `grid` from `vp`.
pub fn cast(grid: &ElevationGrid, vp: VantagePoint) -> Result<RayCastResult> {
    vp.validate()?;
    let g = grid.geometry();
    let step = 0.5 * g.min_resolution();
    let vantage_pixel = g.pixel_of(vp.x, vp.y);

    let mut bits = vec![false; g.len()];
    for u in 0..g.rows {
        for v in 0..g.cols {
            let target_z = grid.get(u, v);
            bits[g.index(u, v)] = target_z.is_nan()
                || ray_blocked(grid, vp, vantage_pixel, (u, v), target_z as f64, step);
        }
    }
    let occlusion = OcclusionMask::new(*g, bits)?;
    let occluded_grid = grid.with_missing(&occlusion)?;
    Ok(RayCastResult { occlusion, occluded_grid })
}

fn ray_blocked(
    grid: &ElevationGrid,
    vp: VantagePoint,
    vantage_pixel: (i64, i64),
    target: (usize, usize),
    target_z: f64,
    step: f64,
) -> bool {
    let g = grid.geometry();
    let (u, v) = target;
    let target_pixel = (u as i64, v as i64);
    let (tx, ty) = (g.cell_x(u), g.cell_y(v));
    let (dx, dy) = (tx - vp.x, ty - vp.y);
    let planar = dx.hypot(dy);
    if planar == 0.0 || target_pixel == vantage_pixel {
        return false;
    }

    let mut k = 1u64;
    loop {
        let traveled = k as f64 * step;
        k += 1;
        let t = traveled / planar;
        let pixel = g.pixel_of(vp.x + dx * t, vp.y + dy * t);
        if pixel == target_pixel || traveled > planar {
            return false;
        }
        if pixel == vantage_pixel {
            continue;
        }
        if let Some((pu, pv)) = g.checked_pixel(pixel) {
            let h = grid.get(pu, pv);
            // Convex combination keeps the ray height monotone in the vantage height.
            let z = vp.z * (1.0 - t) + target_z * t;
            if !h.is_nan() && h as f64 > z {
                return true;
            }
        }
    }
}

/// Dense-sampling reference for [`cast`]: walks the planar vantage-to-cell
/// segment with `step_divisor` samples per smaller cell size, using the same
/// pixel rounding, target and vantage-pixel rules. Intended for verification.
pub fn cast_oracle(grid: &ElevationGrid, vp: VantagePoint, step_divisor: u32) -> Result<OcclusionMask> {
    vp.validate()?;
    if step_divisor < 2 {
        return Err(Error::InvalidConfig(format!("step divisor {step_divisor} must be at least 2")));
    }
    let g = grid.geometry();
    let step = g.min_resolution() / step_divisor as f64;
    let missing = mask_from_grid(grid);
    let home = g.pixel_of(vp.x, vp.y);

    let bits = (0..g.len())
        .map(|idx| {
            if missing.bits()[idx] {
                return true;
            }
            let cell = ((idx / g.cols) as i64, (idx % g.cols) as i64);
            if cell == home {
                return false;
            }
            let end = [g.cell_x(cell.0 as usize), g.cell_y(cell.1 as usize)];
            let end_z = grid.cells()[idx] as f64;
            let length = (end[0] - vp.x).hypot(end[1] - vp.y);
            let samples = (length / step).floor() as u64;
            for i in 1..=samples {
                let t = (i as f64 * step) / length;
                let p = g.pixel_of(vp.x + (end[0] - vp.x) * t, vp.y + (end[1] - vp.y) * t);
                if p == cell {
                    break;
                }
                if p == home {
                    continue;
                }
                let Some((pu, pv)) = g.checked_pixel(p) else { continue };
                let h = grid.get(pu, pv);
                if !h.is_nan() && h as f64 > vp.z * (1.0 - t) + end_z * t {
                    return true;
                }
            }
            false
        })
        .collect();
    OcclusionMask::new(*g, bits)
}

/// Vantage above the pixel containing `(x, y)`, raised by `z_offset`.
pub fn vantage_from_grid(grid: &ElevationGrid, x: f64, y: f64, z_offset: f64) -> Result<VantagePoint> {
    if !(x.is_finite() && y.is_finite() && z_offset.is_finite()) {
        return Err(Error::NonFiniteVantage);
    }
    let (row, col) = grid
        .geometry()
        .checked_pixel(grid.geometry().pixel_of(x, y))
        .ok_or(Error::OutOfBounds { x, y })?;
    let anchor = grid.get(row, col);
    if anchor.is_nan() {
        return Err(Error::MissingAnchor { row, col });
    }
    VantagePoint::new(x, y, anchor as f64 + z_offset)
}
