//! Classical hole filling for elevation grids.
//!
//! * [`InpaintMethod::Diffusion`]: discrete harmonic extension of the known
//!   cells, solved by red-black successive over-relaxation until the largest
//!   update falls below `tol`. Grid borders are reflecting (only in-bounds
//!   neighbours enter the average).
//! * [`InpaintMethod::FastMarching`]: Telea-style filling in order of
//!   increasing distance from the hole boundary, each cell estimated from the
//!   known cells within `radius_px` by a first-order extrapolation weighted
//!   by direction, distance and level-set proximity.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ElevationGrid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InpaintMethod {
    Diffusion,
    FastMarching,
}

impl std::str::FromStr for InpaintMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(InpaintMethod::Diffusion),
            "fast_marching" => Ok(InpaintMethod::FastMarching),
            other => Err(Error::InvalidConfig(format!("unknown inpainting method {other:?}"))),
        }
    }
}

impl std::fmt::Display for InpaintMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            InpaintMethod::Diffusion => "diffusion",
            InpaintMethod::FastMarching => "fast_marching",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InpaintConfig {
    pub method: InpaintMethod,
    pub radius_px: usize,
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for InpaintConfig {
    fn default() -> Self {
        Self { method: InpaintMethod::Diffusion, radius_px: 3, tol: 1e-6, max_iters: 10_000 }
    }
}

impl InpaintConfig {
    pub fn with_method(method: InpaintMethod) -> Self {
        Self { method, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius_px < 1 {
            return Err(Error::InvalidConfig("inpaint radius must be at least 1 px".into()));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::InvalidConfig(format!("tolerance {} must be positive", self.tol)));
        }
        Ok(())
    }
}

/// Solver bookkeeping returned alongside a filled grid.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct InpaintStats {
    pub filled_cells: usize,
    /// Relaxation sweeps (diffusion only).
    pub iterations: usize,
    pub converged: bool,
}

pub fn inpaint(grid: &ElevationGrid, cfg: &InpaintConfig) -> Result<ElevationGrid> {
    inpaint_with_stats(grid, cfg).map(|(g, _)| g)
}

pub fn inpaint_with_stats(grid: &ElevationGrid, cfg: &InpaintConfig) -> Result<(ElevationGrid, InpaintStats)> {
    cfg.validate()?;
    let unknown: Vec<usize> = (0..grid.cells().len()).filter(|&i| grid.cells()[i].is_nan()).collect();
    if unknown.is_empty() {
        return Ok((grid.clone(), InpaintStats { filled_cells: 0, iterations: 0, converged: true }));
    }
    if unknown.len() == grid.cells().len() {
        return Err(Error::FullyMissing);
    }
    let (values, iterations, converged) = match cfg.method {
        InpaintMethod::Diffusion => {
            let (v, it, ok) = diffuse(grid, &unknown, cfg.tol, cfg.max_iters);
            (v, it, ok)
        }
        InpaintMethod::FastMarching => (fast_march(grid, cfg.radius_px), 0, true),
    };
    let cells = grid
        .cells()
        .iter()
        .zip(values)
        .map(|(&orig, filled)| if orig.is_nan() { filled as f32 } else { orig })
        .collect();
    let out = ElevationGrid::new(*grid.geometry(), cells)?;
    Ok((out, InpaintStats { filled_cells: unknown.len(), iterations, converged }))
}

fn neighbours(idx: usize, rows: usize, cols: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (idx / cols, idx % cols);
    let up = (r > 0).then(|| idx - cols);
    let down = (r + 1 < rows).then(|| idx + cols);
    let left = (c > 0).then(|| idx - 1);
    let right = (c + 1 < cols).then(|| idx + 1);
    [up, down, left, right].into_iter().flatten()
}

/// Onion-peel initial guess: each ring of unknown cells takes the mean of
/// its already-valued neighbours.
fn peel_fill(grid: &ElevationGrid, values: &mut [f64], unknown: &[usize]) {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut has_value: Vec<bool> = grid.cells().iter().map(|v| !v.is_nan()).collect();
    let mut pending: Vec<usize> = unknown.to_vec();
    while !pending.is_empty() {
        let mut ring = Vec::new();
        let mut rest = Vec::new();
        for &i in &pending {
            let (sum, n) = neighbours(i, rows, cols)
                .filter(|&j| has_value[j])
                .fold((0.0, 0usize), |(s, n), j| (s + values[j], n + 1));
            if n > 0 {
                ring.push((i, sum / n as f64));
            } else {
                rest.push(i);
            }
        }
        debug_assert!(!ring.is_empty(), "a partially known grid always has a fillable ring");
        for (i, v) in ring {
            values[i] = v;
            has_value[i] = true;
        }
        pending = rest;
    }
}

fn diffuse(grid: &ElevationGrid, unknown: &[usize], tol: f64, max_iters: usize) -> (Vec<f64>, usize, bool) {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut values: Vec<f64> = grid.cells().iter().map(|&v| v as f64).collect();
    peel_fill(grid, &mut values, unknown);

    // Over-relaxation tuned to the extent of the hole region.
    let (mut r0, mut r1, mut c0, mut c1) = (rows, 0, cols, 0);
    for &i in unknown {
        let (r, c) = (i / cols, i % cols);
        r0 = r0.min(r);
        r1 = r1.max(r);
        c0 = c0.min(c);
        c1 = c1.max(c);
    }
    let extent = (r1 - r0).max(c1 - c0) as f64 + 2.0;
    let omega = 2.0 / (1.0 + (std::f64::consts::PI / extent).sin());

    let colors: [Vec<(usize, u8)>; 2] = {
        let mut red = Vec::new();
        let mut black = Vec::new();
        for &i in unknown {
            let n = neighbours(i, rows, cols).count() as u8;
            if ((i / cols) + (i % cols)) % 2 == 0 {
                red.push((i, n));
            } else {
                black.push((i, n));
            }
        }
        [red, black]
    };

    for sweep in 1..=max_iters {
        let mut max_delta = 0.0f64;
        for color in &colors {
            for &(i, n) in color {
                let avg = neighbours(i, rows, cols).map(|j| values[j]).sum::<f64>() / n as f64;
                let delta = omega * (avg - values[i]);
                values[i] += delta;
                max_delta = max_delta.max(delta.abs());
            }
        }
        if max_delta < tol {
            return (values, sweep, true);
        }
    }
    log::warn!("diffusion inpainting stopped after {max_iters} sweeps without reaching tolerance {tol}");
    (values, max_iters, false)
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Flag {
    Known,
    Band,
    Inside,
}

#[derive(PartialEq)]
struct Front {
    t: f64,
    idx: usize,
}

impl Eq for Front {}

impl Ord for Front {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on arrival time, ties broken by index for determinism.
        other.t.total_cmp(&self.t).then_with(|| other.idx.cmp(&self.idx))
    }
}

impl PartialOrd for Front {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

const FAR: f64 = 1.0e6;

fn fast_march(grid: &ElevationGrid, radius: usize) -> Vec<f64> {
    let (rows, cols) = (grid.rows(), grid.cols());
    let mut values: Vec<f64> = grid.cells().iter().map(|&v| v as f64).collect();
    let mut flag: Vec<Flag> = grid.cells().iter().map(|v| if v.is_nan() { Flag::Inside } else { Flag::Known }).collect();
    let mut time = vec![0.0f64; values.len()];
    let mut heap = BinaryHeap::new();

    for i in 0..values.len() {
        if flag[i] == Flag::Inside {
            time[i] = FAR;
        } else if neighbours(i, rows, cols).any(|j| flag[j] == Flag::Inside) {
            flag[i] = Flag::Band;
            heap.push(Front { t: 0.0, idx: i });
        }
    }

    while let Some(Front { idx, .. }) = heap.pop() {
        if flag[idx] == Flag::Known {
            continue;
        }
        flag[idx] = Flag::Known;
        for nb in neighbours(idx, rows, cols).collect::<Vec<_>>() {
            if flag[nb] == Flag::Known {
                continue;
            }
            let (r, c) = ((nb / cols) as isize, (nb % cols) as isize);
            let t = [(-1, -1), (1, -1), (-1, 1), (1, 1)]
                .iter()
                .map(|&(dr, dc)| solve_eikonal(&flag, &time, rows, cols, (r + dr, c), (r, c + dc)))
                .fold(FAR, f64::min);
            time[nb] = t;
            if flag[nb] == Flag::Inside {
                values[nb] = telea_estimate(&values, &flag, &time, rows, cols, nb, radius);
                flag[nb] = Flag::Band;
            }
            heap.push(Front { t, idx: nb });
        }
    }
    values
}

fn at(rows: usize, cols: usize, (r, c): (isize, isize)) -> Option<usize> {
    (r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols).then(|| r as usize * cols + c as usize)
}

fn solve_eikonal(flag: &[Flag], time: &[f64], rows: usize, cols: usize, a: (isize, isize), b: (isize, isize)) -> f64 {
    let known = |p| at(rows, cols, p).filter(|&i| flag[i] == Flag::Known);
    match (known(a), known(b)) {
        (Some(i), Some(j)) => {
            let (t1, t2) = (time[i], time[j]);
            let d = t1 - t2;
            if d.abs() >= 2f64.sqrt() {
                return 1.0 + t1.min(t2);
            }
            let r = (2.0 - d * d).sqrt();
            let s = (t1 + t2 - r) / 2.0;
            if s >= t1 && s >= t2 {
                s
            } else {
                s + r
            }
        }
        (Some(i), None) => 1.0 + time[i],
        (None, Some(j)) => 1.0 + time[j],
        (None, None) => FAR,
    }
}

fn telea_estimate(
    values: &[f64],
    flag: &[Flag],
    time: &[f64],
    rows: usize,
    cols: usize,
    idx: usize,
    radius: usize,
) -> f64 {
    let (r, c) = ((idx / cols) as isize, (idx % cols) as isize);
    let usable = |p: (isize, isize)| at(rows, cols, p).filter(|&i| flag[i] != Flag::Inside);
    let diff = |lo: Option<usize>, mid: usize, hi: Option<usize>, field: &[f64]| match (lo, hi) {
        (Some(l), Some(h)) => (field[h] - field[l]) / 2.0,
        (None, Some(h)) => field[h] - field[mid],
        (Some(l), None) => field[mid] - field[l],
        (None, None) => 0.0,
    };

    let gt_r = diff(usable((r - 1, c)), idx, usable((r + 1, c)), time);
    let gt_c = diff(usable((r, c - 1)), idx, usable((r, c + 1)), time);
    let norm = gt_r.hypot(gt_c);
    let (nr, nc) = if norm > 0.0 { (gt_r / norm, gt_c / norm) } else { (0.0, 0.0) };

    let rad = radius as isize;
    let mut weighted = 0.0;
    let mut total = 0.0;
    for dr in -rad..=rad {
        for dc in -rad..=rad {
            if dr * dr + dc * dc > rad * rad || (dr == 0 && dc == 0) {
                continue;
            }
            let q = (r + dr, c + dc);
            let Some(qi) = usable(q) else { continue };
            // Vector from the known cell to the cell being filled.
            let (vr, vc) = (-dr as f64, -dc as f64);
            let len2 = vr * vr + vc * vc;
            let len = len2.sqrt();
            let mut dir = (vr * nr + vc * nc) / len;
            if dir.abs() <= 0.01 {
                dir = 1e-6;
            }
            let dst = 1.0 / len2;
            let lev = 1.0 / (1.0 + (time[qi] - time[idx]).abs());
            let w = (dir * dst * lev).abs();

            let gi_r = diff(usable((q.0 - 1, q.1)), qi, usable((q.0 + 1, q.1)), values);
            let gi_c = diff(usable((q.0, q.1 - 1)), qi, usable((q.0, q.1 + 1)), values);
            weighted += w * (values[qi] + gi_r * vr + gi_c * vc);
            total += w;
        }
    }
    if total > 0.0 {
        weighted / total
    } else {
        // Nothing usable within the radius: fall back to the 4-neighbourhood mean.
        let known: Vec<f64> = neighbours(idx, rows, cols).filter(|&j| flag[j] != Flag::Inside).map(|j| values[j]).collect();
        known.iter().sum::<f64>() / known.len().max(1) as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{mask_from_grid, GridGeometry};

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::square(n, n, 0.04).unwrap()
    }

    fn with_hole(g: &ElevationGrid, hole: impl Fn(usize, usize) -> bool) -> ElevationGrid {
        ElevationGrid::from_fn(*g.geometry(), |r, c| if hole(r, c) { f32::NAN } else { g.get(r, c) })
    }

    #[test]
    fn constant_is_preserved_by_both_methods() {
        let full = ElevationGrid::filled(geom(24), 1.7);
        let holed = with_hole(&full, |r, c| (5..15).contains(&r) && (3..9).contains(&c) || (r + c) % 7 == 0);
        for method in [InpaintMethod::Diffusion, InpaintMethod::FastMarching] {
            let out = inpaint(&holed, &InpaintConfig::with_method(method)).unwrap();
            for &v in out.cells() {
                assert!((v - 1.7).abs() <= 1e-6, "{method}: {v}");
            }
        }
    }

    #[test]
    fn diffusion_recovers_linear_ramp() {
        let geometry = geom(64);
        let ramp = ElevationGrid::from_fn(geometry, |r, _| (0.1 * geometry.cell_x(r)) as f32);
        let holed = with_hole(&ramp, |r, c| (28..36).contains(&r) && (28..36).contains(&c));
        let out = inpaint(&holed, &InpaintConfig::default()).unwrap();
        for (a, b) in out.cells().iter().zip(ramp.cells()) {
            assert!((a - b).abs() <= 1e-3);
        }
    }

    #[test]
    fn complete_grid_is_returned_unchanged() {
        let g = ElevationGrid::from_fn(geom(8), |r, c| (r * c) as f32 * 0.01);
        for method in [InpaintMethod::Diffusion, InpaintMethod::FastMarching] {
            assert_eq!(inpaint(&g, &InpaintConfig::with_method(method)).unwrap(), g);
        }
    }

    #[test]
    fn fully_missing_grid_is_an_error() {
        let g = ElevationGrid::filled(geom(4), f32::NAN);
        assert!(matches!(inpaint(&g, &InpaintConfig::default()), Err(Error::FullyMissing)));
    }

    #[test]
    fn bad_config_is_rejected() {
        let g = ElevationGrid::zeros(geom(4));
        let cfg = InpaintConfig { radius_px: 0, ..Default::default() };
        assert!(inpaint(&g, &cfg).is_err());
        let cfg = InpaintConfig { tol: 0.0, ..Default::default() };
        assert!(inpaint(&g, &cfg).is_err());
    }

    #[test]
    fn known_cells_are_bitwise_preserved() {
        let g = ElevationGrid::from_fn(geom(32), |r, c| {
            if (r / 4 + c / 5) % 3 == 0 {
                f32::NAN
            } else {
                ((r * 7 + c * 3) % 13) as f32 * 0.037
            }
        });
        for method in [InpaintMethod::Diffusion, InpaintMethod::FastMarching] {
            let out = inpaint(&g, &InpaintConfig::with_method(method)).unwrap();
            assert!(!out.has_missing());
            let mask = mask_from_grid(&g);
            for (i, (&a, &b)) in g.cells().iter().zip(out.cells()).enumerate() {
                if !mask.bits()[i] {
                    assert_eq!(a.to_bits(), b.to_bits());
                }
            }
        }
    }

    #[test]
    fn fast_marching_fills_every_hole() {
        let geometry = geom(64);
        let ramp = ElevationGrid::from_fn(geometry, |r, c| (0.1 * geometry.cell_x(r) + 0.05 * geometry.cell_y(c)) as f32);
        let holed = with_hole(&ramp, |r, c| (20..40).contains(&r) && (10..30).contains(&c));
        let out = inpaint(&holed, &InpaintConfig::with_method(InpaintMethod::FastMarching)).unwrap();
        let worst = out.cells().iter().zip(ramp.cells()).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max);
        // First-order extrapolation is exact for planes away from the grid border.
        assert!(worst < 1e-3, "{worst}");
    }
}
