//! Timing of the map-scale inpainting pipeline: tile and downsample a large
//! occluded map, drop mostly occluded tiles, inpaint the rest, stitch back.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dataset::{occlusion_filter, stitch, tile_and_downsample, TilingSpec};
use crate::error::{Error, Result};
use crate::grid::{compose, mask_from_grid, ElevationGrid, GridGeometry, DEFAULT_RESOLUTION};
use crate::inpaint::{inpaint, InpaintConfig, InpaintMethod};
use crate::raycast::{cast, vantage_from_grid};
use crate::terrain::{TerrainKind, TerrainSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub size: usize,
    pub tiling: TilingSpec,
    pub method: InpaintMethod,
    pub repeat: usize,
    pub max_tile_occlusion: f64,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            size: 300,
            tiling: TilingSpec::SYNTHETIC,
            method: InpaintMethod::Diffusion,
            repeat: 20,
            max_tile_occlusion: 0.85,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub tile_ms: f64,
    pub filter_ms: f64,
    pub inpaint_ms: f64,
    pub stitch_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub map_occlusion: f64,
    pub tiles_total: usize,
    pub tiles_inpainted: usize,
    /// Full-map rate from the mean run time.
    pub hz_mean: f64,
    /// Full-map rate at the 95th-percentile run time.
    pub hz_p95: f64,
    pub mean_stage_ms: StageTimes,
    pub runs: Vec<StageTimes>,
}

/// Hills map of `size`×`size` cells seen from a sensor 0.4 m above its centre.
pub fn bench_map(size: usize, seed: u64) -> Result<ElevationGrid> {
    let geometry = GridGeometry::square(size, size, DEFAULT_RESOLUTION)?;
    let gt = TerrainSpec::new(TerrainKind::Hills, seed).with_geometry(geometry).generate();
    let vp = vantage_from_grid(&gt, 0.0, 0.0, 0.4)?;
    Ok(cast(&gt, vp)?.occluded_grid)
}

/// One pass of the pipeline. Dropped tiles keep their (downsampled) input.
pub fn run_pipeline(map: &ElevationGrid, cfg: &BenchConfig) -> Result<(ElevationGrid, StageTimes, usize)> {
    let icfg = InpaintConfig::with_method(cfg.method);
    let ms = |t: Instant| t.elapsed().as_secs_f64() * 1e3;
    let start = Instant::now();

    let t = Instant::now();
    let mut tiles = tile_and_downsample(map, &cfg.tiling)?;
    let tile_ms = ms(t);

    let t = Instant::now();
    let keep = occlusion_filter(&tiles, cfg.max_tile_occlusion);
    let filter_ms = ms(t);

    let t = Instant::now();
    for &i in &keep {
        if tiles[i].has_missing() {
            let rec = inpaint(&tiles[i], &icfg)?;
            tiles[i] = compose(&tiles[i], &rec, &mask_from_grid(&tiles[i]))?;
        }
    }
    let inpaint_ms = ms(t);

    let t = Instant::now();
    let out = stitch(&tiles, &cfg.tiling, *map.geometry())?;
    let stitch_ms = ms(t);

    let times = StageTimes { tile_ms, filter_ms, inpaint_ms, stitch_ms, total_ms: ms(start) };
    Ok((out, times, keep.len()))
}

pub fn run_bench(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeat == 0 {
        return Err(Error::InvalidConfig("repeat must be at least 1".into()));
    }
    let map = bench_map(cfg.size, cfg.seed)?;
    let mut runs = Vec::with_capacity(cfg.repeat);
    let mut kept = 0;
    for _ in 0..cfg.repeat {
        let (_, times, k) = run_pipeline(&map, cfg)?;
        runs.push(times);
        kept = k;
    }
    let n = runs.len() as f64;
    let mean = |f: fn(&StageTimes) -> f64| runs.iter().map(f).sum::<f64>() / n;
    let mean_stage_ms = StageTimes {
        tile_ms: mean(|s| s.tile_ms),
        filter_ms: mean(|s| s.filter_ms),
        inpaint_ms: mean(|s| s.inpaint_ms),
        stitch_ms: mean(|s| s.stitch_ms),
        total_ms: mean(|s| s.total_ms),
    };
    let mut totals: Vec<f64> = runs.iter().map(|s| s.total_ms).collect();
    totals.sort_by(f64::total_cmp);
    let p95 = totals[((0.95 * n).ceil() as usize).clamp(1, totals.len()) - 1];
    Ok(BenchReport {
        config: *cfg,
        map_occlusion: map.missing_ratio(),
        tiles_total: cfg.tiling.tiles_per_side * cfg.tiling.tiles_per_side,
        tiles_inpainted: kept,
        hz_mean: 1e3 / mean_stage_ms.total_ms,
        hz_p95: 1e3 / p95,
        mean_stage_ms,
        runs,
    })
}
