//! Artificial occlusion for self-supervised pairs: ray cast from a random
//! vantage point and bracket its elevation offset until the occlusion ratio
//! lands in the requested window.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ElevationGrid, OcclusionMask};
use crate::raycast::{cast, vantage_from_grid, VantagePoint};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub r_occ_min: f64,
    pub r_occ_max: f64,
    /// Initial offset bracket, meters above the anchor cell.
    pub o_min_init: f64,
    pub o_max_init: f64,
    pub min_bracket: f64,
    pub max_iters: u32,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self { r_occ_min: 0.001, r_occ_max: 0.5, o_min_init: 0.1, o_max_init: 2.0, min_bracket: 0.05, max_iters: 15 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        let ratios_ok = 0.0 <= self.r_occ_min && self.r_occ_min < self.r_occ_max && self.r_occ_max <= 1.0;
        if !ratios_ok {
            return Err(Error::InvalidConfig(format!(
                "occlusion ratio window [{}, {}] must satisfy 0 <= min < max <= 1",
                self.r_occ_min, self.r_occ_max
            )));
        }
        if !(self.o_min_init.is_finite() && self.o_max_init.is_finite() && self.o_min_init < self.o_max_init) {
            return Err(Error::InvalidConfig(format!(
                "offset bracket [{}, {}] must be finite and non-empty",
                self.o_min_init, self.o_max_init
            )));
        }
        if !(self.min_bracket > 0.0 && self.min_bracket.is_finite()) {
            return Err(Error::InvalidConfig("minimum bracket must be positive".into()));
        }
        if self.max_iters < 1 {
            return Err(Error::InvalidConfig("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

/// One draw of the bracketing loop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerStep {
    pub o_min: f64,
    pub o_max: f64,
    pub offset: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOutcome {
    pub success: bool,
    /// Newly occluded cells only; never overlaps the target's missing cells.
    pub mask: OcclusionMask,
    /// Target with `mask` applied.
    pub input_grid: ElevationGrid,
    pub achieved_ratio: f64,
    pub iterations_used: u32,
    pub vantage: VantagePoint,
    pub trace: Vec<SamplerStep>,
}

/// Runs the bracketing loop on `target`. The ratio counts every cell the
/// cast reports occluded, pre-existing holes included, over all cells. A
/// draw that adds no new occlusion is never accepted.
pub fn sample_occlusion(target: &ElevationGrid, cfg: &SamplerConfig, seed: u64) -> Result<SamplerOutcome> {
    cfg.validate()?;
    let observed: Vec<usize> = (0..target.cells().len()).filter(|&i| !target.cells()[i].is_nan()).collect();
    if observed.is_empty() {
        return Err(Error::FullyMissing);
    }
    let g = *target.geometry();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Uniform over the observed area: a random observed cell, jittered inside it.
    let cell = observed[rng.random_range(0..observed.len())];
    let (row, col) = (cell / g.cols, cell % g.cols);
    let x = g.cell_x(row) + rng.random_range(-0.49..0.49) * g.resolution_x;
    let y = g.cell_y(col) + rng.random_range(-0.49..0.49) * g.resolution_y;

    let (mut o_min, mut o_max) = (cfg.o_min_init, cfg.o_max_init);
    let mut trace = Vec::with_capacity(cfg.max_iters as usize);
    let mut last = None;
    for _ in 0..cfg.max_iters {
        let offset = rng.random_range(o_min..=o_max);
        let vantage = vantage_from_grid(target, x, y, offset)?;
        let cast = cast(target, vantage)?;
        let ratio = cast.occlusion.ratio();
        trace.push(SamplerStep { o_min, o_max, offset, ratio });

        let mask = artificial_mask(target, &cast.occlusion)?;
        let adds_cells = mask.count() > 0;
        let in_window = ratio >= cfg.r_occ_min && ratio <= cfg.r_occ_max;
        last = Some((mask, cast.occluded_grid, ratio, vantage));
        if in_window && adds_cells {
            break;
        }

        if ratio > cfg.r_occ_max {
            o_min = offset;
            if o_max - o_min < cfg.min_bracket {
                o_min -= cfg.min_bracket;
            }
        } else {
            // Too little occlusion, or none of it new.
            o_max = offset;
            if o_max - o_min < cfg.min_bracket {
                o_max += cfg.min_bracket;
            }
        }
    }

    let (mask, input_grid, achieved_ratio, vantage) = last.expect("max_iters >= 1");
    let success = achieved_ratio >= cfg.r_occ_min && achieved_ratio <= cfg.r_occ_max && mask.count() > 0;
    Ok(SamplerOutcome { success, mask, input_grid, achieved_ratio, iterations_used: trace.len() as u32, vantage, trace })
}

fn artificial_mask(target: &ElevationGrid, occlusion: &OcclusionMask) -> Result<OcclusionMask> {
    let bits = occlusion.bits().iter().zip(target.cells()).map(|(&o, v)| o && !v.is_nan()).collect();
    OcclusionMask::new(*target.geometry(), bits)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{mask_from_grid, GridGeometry};
    use crate::terrain::{TerrainKind, TerrainSpec};

    #[test]
    fn flat_grid_always_fails() {
        let g = ElevationGrid::zeros(GridGeometry::default());
        let out = sample_occlusion(&g, &SamplerConfig::default(), 3).unwrap();
        assert!(!out.success);
        assert_eq!(out.iterations_used, 15);
        assert_eq!(out.mask.count(), 0);
    }

    #[test]
    fn fully_missing_target_is_an_error() {
        let g = ElevationGrid::filled(GridGeometry::square(4, 4, 0.04).unwrap(), f32::NAN);
        assert!(matches!(sample_occlusion(&g, &SamplerConfig::default(), 0), Err(Error::FullyMissing)));
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let g = ElevationGrid::zeros(GridGeometry::square(4, 4, 0.04).unwrap());
        let bad = [
            SamplerConfig { r_occ_min: 0.6, ..Default::default() },
            SamplerConfig { r_occ_max: 1.5, ..Default::default() },
            SamplerConfig { o_min_init: 3.0, ..Default::default() },
            SamplerConfig { max_iters: 0, ..Default::default() },
            SamplerConfig { min_bracket: 0.0, ..Default::default() },
        ];
        for cfg in bad {
            assert!(sample_occlusion(&g, &cfg, 0).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn too_high_ratio_raises_the_lower_bound() {
        // A window no cast can hit forces the too-high branch on every draw.
        let g = TerrainSpec::new(TerrainKind::Boxes, 4).generate();
        let cfg = SamplerConfig { r_occ_min: 0.0, r_occ_max: 1e-9, ..Default::default() };
        let out = sample_occlusion(&g, &cfg, 8).unwrap();
        let first = out.trace[0];
        assert!(first.ratio > cfg.r_occ_max);
        let second = out.trace[1];
        assert!(second.offset >= first.offset);
        assert_eq!(second.o_min, first.offset);
    }

    #[test]
    fn mask_never_overlaps_existing_holes() {
        let base = TerrainSpec::new(TerrainKind::Boxes, 21).generate();
        let target = ElevationGrid::from_fn(*base.geometry(), |r, c| if (r + 2 * c) % 9 == 0 { f32::NAN } else { base.get(r, c) });
        let existing = mask_from_grid(&target);
        for seed in 0..20 {
            let out = sample_occlusion(&target, &SamplerConfig::default(), seed).unwrap();
            assert!(out.mask.is_disjoint(&existing));
            assert_eq!(out.input_grid.missing_count(), existing.count() + out.mask.count());
        }
    }

    #[test]
    fn same_seed_same_outcome() {
        let g = TerrainSpec::new(TerrainKind::Hills, 5).generate();
        let a = sample_occlusion(&g, &SamplerConfig::default(), 77).unwrap();
        let b = sample_occlusion(&g, &SamplerConfig::default(), 77).unwrap();
        assert_eq!(a, b);
    }
}
