//! Procedural ground-truth terrains: Perlin hills, regular stairs and
//! randomly placed boxes.
//!
//! All generators are pure functions of their parameters and seed.

use std::f64::consts::PI;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ElevationGrid, GridGeometry};
use crate::raycast::{vantage_from_grid, VantagePoint};
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TerrainKind {
    Hills,
    Stairs,
    Boxes,
}

impl TerrainKind {
    pub const ALL: [TerrainKind; 3] = [TerrainKind::Hills, TerrainKind::Stairs, TerrainKind::Boxes];

    pub fn name(self) -> &'static str {
        match self {
            TerrainKind::Hills => "hills",
            TerrainKind::Stairs => "stairs",
            TerrainKind::Boxes => "boxes",
        }
    }

    /// Range of the vantage height above the robot's anchor pixel.
    pub fn vantage_offset_range(self) -> (f64, f64) {
        match self {
            TerrainKind::Hills => (0.2, 0.5),
            TerrainKind::Stairs | TerrainKind::Boxes => (0.2, 0.3),
        }
    }
}

impl std::str::FromStr for TerrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hills" => Ok(TerrainKind::Hills),
            "stairs" => Ok(TerrainKind::Stairs),
            "boxes" => Ok(TerrainKind::Boxes),
            other => Err(Error::InvalidConfig(format!("unknown terrain kind {other:?}"))),
        }
    }
}

impl std::fmt::Display for TerrainKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HillsParams {
    pub octaves: u32,
    /// Wavelength of the lowest octave as a fraction of the grid width.
    pub base_wavelength_fraction: f64,
    pub persistence: f64,
    /// Scale applied to the octave sum, in meters; maps span about 0.9 m on average.
    pub amplitude: f64,
}

impl Default for HillsParams {
    fn default() -> Self {
        Self { octaves: 4, base_wavelength_fraction: 1.75, persistence: 0.5, amplitude: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StairsParams {
    pub rise: f64,
    pub tread: f64,
}

impl Default for StairsParams {
    fn default() -> Self {
        Self { rise: 0.15, tread: 0.30 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxesParams {
    pub min_count: u32,
    pub max_count: u32,
    pub side_range: (f64, f64),
    pub height_range: (f64, f64),
}

impl Default for BoxesParams {
    fn default() -> Self {
        Self { min_count: 5, max_count: 15, side_range: (0.2, 1.0), height_range: (0.05, 0.4) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TerrainParams {
    pub hills: HillsParams,
    pub stairs: StairsParams,
    pub boxes: BoxesParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerrainSpec {
    pub kind: TerrainKind,
    pub geometry: GridGeometry,
    pub seed: u64,
    #[serde(default)]
    pub params: TerrainParams,
}

impl TerrainSpec {
    pub fn new(kind: TerrainKind, seed: u64) -> Self {
        Self { kind, geometry: GridGeometry::default(), seed, params: TerrainParams::default() }
    }

    pub fn with_geometry(mut self, geometry: GridGeometry) -> Self {
        self.geometry = geometry;
        self
    }

    pub fn generate(&self) -> ElevationGrid {
        match self.kind {
            TerrainKind::Hills => gen_hills(self.geometry, &self.params.hills, self.seed),
            TerrainKind::Stairs => gen_stairs(self.geometry, &self.params.stairs, self.seed),
            TerrainKind::Boxes => gen_boxes(self.geometry, &self.params.boxes, self.seed),
        }
    }
}

/// Half-extent of the square the robot position is drawn from.
pub const ROBOT_RANGE: f64 = 1.25;

/// Generates the terrain and a random vantage point above it.
pub fn sample_scene(spec: &TerrainSpec) -> (ElevationGrid, VantagePoint) {
    let grid = spec.generate();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, 0x5CE4E));
    let g = spec.geometry;
    // Keep the robot inside the grid on maps smaller than the default.
    let (hx, hy) = g.half_extent();
    let rx = ROBOT_RANGE.min(hx - g.resolution_x);
    let ry = ROBOT_RANGE.min(hy - g.resolution_y);
    let x = if rx > 0.0 { rng.random_range(-rx..rx) } else { 0.0 };
    let y = if ry > 0.0 { rng.random_range(-ry..ry) } else { 0.0 };
    let (lo, hi) = spec.kind.vantage_offset_range();
    let offset = rng.random_range(lo..hi);
    let vp = vantage_from_grid(&grid, x, y, offset).expect("synthetic terrains are complete");
    (grid, vp)
}

/// Fractal Perlin terrain. The octave sum is scaled by `amplitude` without
/// per-sample normalisation, so relief varies from map to map.
pub fn gen_hills(geometry: GridGeometry, params: &HillsParams, seed: u64) -> ElevationGrid {
    if params.amplitude == 0.0 || params.octaves == 0 {
        return ElevationGrid::zeros(geometry);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perlin = Perlin::new(&mut rng);
    let ox: f64 = rng.random_range(0.0..256.0);
    let oy: f64 = rng.random_range(0.0..256.0);
    let width = (geometry.rows as f64 * geometry.resolution_x).max(geometry.cols as f64 * geometry.resolution_y);
    let base_frequency = 1.0 / (width * params.base_wavelength_fraction);

    let mut raw = Vec::with_capacity(geometry.len());
    for r in 0..geometry.rows {
        for c in 0..geometry.cols {
            let x = geometry.cell_x(r) * base_frequency + ox;
            let y = geometry.cell_y(c) * base_frequency + oy;
            let mut sum = 0.0;
            let mut amp = 1.0;
            let mut freq = 1.0;
            for _ in 0..params.octaves {
                sum += amp * perlin.noise(x * freq, y * freq);
                amp *= params.persistence;
                freq *= 2.0;
            }
            raw.push(sum);
        }
    }
    let cells = raw.into_iter().map(|v| (v * params.amplitude) as f32).collect();
    ElevationGrid::new(geometry, cells).expect("hills are finite")
}

/// Stairs climbing along one of the eight compass directions.
pub fn gen_stairs(geometry: GridGeometry, params: &StairsParams, seed: u64) -> ElevationGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heading = rng.random_range(0..8) as f64 * PI / 4.0;
    let phase = rng.random_range(0.0..params.tread);
    let (dx, dy) = (heading.cos(), heading.sin());
    let step_of = |r: usize, c: usize| {
        let along = geometry.cell_x(r) * dx + geometry.cell_y(c) * dy;
        ((along + phase) / params.tread).floor() as i64
    };
    let mut lowest = i64::MAX;
    for r in 0..geometry.rows {
        for c in 0..geometry.cols {
            lowest = lowest.min(step_of(r, c));
        }
    }
    ElevationGrid::from_fn(geometry, |r, c| ((step_of(r, c) - lowest) as f64 * params.rise) as f32)
}

/// Cellwise maximum of randomly sized, rotated rectangular prisms.
pub fn gen_boxes(geometry: GridGeometry, params: &BoxesParams, seed: u64) -> ElevationGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = if params.max_count == 0 { 0 } else { rng.random_range(params.min_count..=params.max_count) };
    let (hx, hy) = geometry.half_extent();
    let boxes: Vec<Prism> = (0..count)
        .map(|_| Prism {
            cx: rng.random_range(-hx..hx),
            cy: rng.random_range(-hy..hy),
            length: sample(&mut rng, params.side_range),
            width: sample(&mut rng, params.side_range),
            height: sample(&mut rng, params.height_range),
            yaw: rng.random_range(0.0..PI),
        })
        .collect();
    rasterize_prisms(geometry, &boxes)
}

fn sample(rng: &mut impl Rng, (lo, hi): (f64, f64)) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Upright box with its footprint centred at `(cx, cy)` and rotated by `yaw`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prism {
    pub cx: f64,
    pub cy: f64,
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub yaw: f64,
}

impl Prism {
    fn covers(&self, x: f64, y: f64) -> bool {
        let (s, c) = self.yaw.sin_cos();
        let (px, py) = (x - self.cx, y - self.cy);
        let along = px * c + py * s;
        let across = -px * s + py * c;
        along.abs() <= self.length / 2.0 && across.abs() <= self.width / 2.0
    }
}

pub fn rasterize_prisms(geometry: GridGeometry, prisms: &[Prism]) -> ElevationGrid {
    ElevationGrid::from_fn(geometry, |r, c| {
        let (x, y) = (geometry.cell_x(r), geometry.cell_y(c));
        prisms
            .iter()
            .filter(|p| p.covers(x, y))
            .fold(0.0f64, |h, p| h.max(p.height)) as f32
    })
}

/// Classic gradient noise over a seeded permutation table.
struct Perlin {
    perm: [u8; 512],
}

impl Perlin {
    fn new(rng: &mut impl Rng) -> Self {
        let mut table: Vec<u8> = (0..=255).collect();
        table.shuffle(rng);
        let mut perm = [0u8; 512];
        for i in 0..512 {
            perm[i] = table[i & 255];
        }
        Self { perm }
    }

    fn noise(&self, x: f64, y: f64) -> f64 {
        let (xf, yf) = (x.floor(), y.floor());
        let xi = (xf as i64 & 255) as usize;
        let yi = (yf as i64 & 255) as usize;
        let (fx, fy) = (x - xf, y - yf);
        let (u, v) = (fade(fx), fade(fy));
        let p = &self.perm;
        let aa = p[p[xi] as usize + yi];
        let ab = p[p[xi] as usize + yi + 1];
        let ba = p[p[xi + 1] as usize + yi];
        let bb = p[p[xi + 1] as usize + yi + 1];
        let x1 = lerp(u, grad(aa, fx, fy), grad(ba, fx - 1.0, fy));
        let x2 = lerp(u, grad(ab, fx, fy - 1.0), grad(bb, fx - 1.0, fy - 1.0));
        lerp(v, x1, x2)
    }
}

fn fade(t: f64) -> f64 {
    t * t * t * (t * (t * 6.0 - 15.0) + 10.0)
}

fn lerp(t: f64, a: f64, b: f64) -> f64 {
    a + t * (b - a)
}

fn grad(hash: u8, x: f64, y: f64) -> f64 {
    match hash & 7 {
        0 => x + y,
        1 => -x + y,
        2 => x - y,
        3 => -x - y,
        4 => x,
        5 => -x,
        6 => y,
        _ => -y,
    }
}
