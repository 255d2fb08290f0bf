//! Dataset construction and manifests.
//!
//! A dataset directory holds `manifest.jsonl` and a `grids/` folder of DGM
//! files. The manifest's first line is a [`ManifestHeader`]; every further
//! line is a [`SampleRecord`] whose paths are relative to the manifest's
//! directory.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::augment::{augment_pair, AugmentProfile};
use crate::dgm::{read_grid, write_grid};
use crate::error::{Error, Result};
use crate::grid::{mask_from_grid, ElevationGrid, GridGeometry, OcclusionMask};
use crate::metrics::{psnr_occ, DynamicRange};
use crate::raycast::{cast, VantagePoint};
use crate::sampler::{sample_occlusion, SamplerConfig};
use crate::seed::derive_seed;
use crate::terrain::{sample_scene, TerrainKind, TerrainParams, TerrainSpec};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.jsonl";
pub const GRID_DIR: &str = "grids";

pub const ROLE_GT: &str = "gt";
pub const ROLE_OCCLUDED: &str = "occluded";
pub const ROLE_MASK: &str = "mask";
pub const ROLE_INPUT: &str = "input";
pub const ROLE_ARTIFICIAL_MASK: &str = "artificial_mask";

const AUGMENT_STREAM: u64 = 0xA6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::InvalidConfig(format!("unknown split {other:?}"))),
        }
    }
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Synthetic,
    Selfsup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub schema_version: u32,
    pub kind: DatasetKind,
    pub split: Split,
    pub count: usize,
    /// Samples that could not be generated and were skipped.
    pub failed: usize,
    /// Echo of the generation settings.
    pub config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vantage: Option<VantagePoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentProfile>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sampler: Option<SamplerConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub achieved_ratio: Option<f64>,
}

impl Provenance {
    fn source(source: impl Into<String>) -> Self {
        Self { source: source.into(), source_id: None, vantage: None, augment: None, sampler: None, achieved_ratio: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub seed: u64,
    /// Role name to grid path, relative to the manifest directory.
    pub paths: BTreeMap<String, String>,
    pub provenance: Provenance,
}

impl SampleRecord {
    pub fn path(&self, role: &str) -> Option<&str> {
        self.paths.get(role).map(String::as_str)
    }

    /// The grid a model sees: `occluded` for synthetic samples, `input` for self-supervised ones.
    pub fn input_role(&self) -> Option<&'static str> {
        [ROLE_INPUT, ROLE_OCCLUDED].into_iter().find(|r| self.paths.contains_key(*r))
    }

    /// The evaluated region: `artificial_mask` or `mask`.
    pub fn mask_role(&self) -> Option<&'static str> {
        [ROLE_ARTIFICIAL_MASK, ROLE_MASK].into_iter().find(|r| self.paths.contains_key(*r))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn validate_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate sample id {:?}", r.id)));
            }
        }
        if self.header.count != self.records.len() {
            return Err(Error::Manifest(format!(
                "header count {} but {} records",
                self.header.count,
                self.records.len()
            )));
        }
        Ok(())
    }

    /// Checks that every referenced grid exists below `base`.
    pub fn validate_files(&self, base: &Path) -> Result<()> {
        for r in &self.records {
            for p in r.paths.values() {
                let full = base.join(p);
                if !full.is_file() {
                    return Err(Error::Manifest(format!("sample {}: missing file {}", r.id, full.display())));
                }
            }
        }
        Ok(())
    }
}

pub fn write_manifest(path: impl AsRef<Path>, manifest: &DatasetManifest) -> Result<()> {
    let path = path.as_ref();
    let mut buf = serde_json::to_vec(&manifest.header)?;
    buf.push(b'\n');
    for r in &manifest.records {
        serde_json::to_writer(&mut buf, r)?;
        buf.push(b'\n');
    }
    let tmp = path.with_extension("jsonl.tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(f).lines();
    let first = lines
        .next()
        .ok_or_else(|| Error::Manifest(format!("{} is empty", path.display())))?
        .map_err(|e| Error::io(path, e))?;
    let header: ManifestHeader = serde_json::from_str(&first)?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(Error::Manifest(format!("unsupported schema version {}", header.schema_version)));
    }
    let mut records = Vec::new();
    for line in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        records.push(serde_json::from_str(&line)?);
    }
    let manifest = DatasetManifest { header, records };
    manifest.validate_ids()?;
    Ok(manifest)
}

/// Directory that relative record paths resolve against.
pub fn manifest_base(manifest_path: &Path) -> PathBuf {
    manifest_path.parent().map(Path::to_path_buf).unwrap_or_default()
}

pub fn load_role(base: &Path, record: &SampleRecord, role: &str) -> Result<ElevationGrid> {
    let rel = record
        .path(role)
        .ok_or_else(|| Error::Manifest(format!("sample {} has no {role:?} grid", record.id)))?;
    read_grid(base.join(rel))
}

pub fn load_mask(base: &Path, record: &SampleRecord, role: &str) -> Result<OcclusionMask> {
    OcclusionMask::from_grid(&load_role(base, record, role)?)
}

/// `<dir>/<id>.rec.dgm` and `<dir>/<id>.comp.dgm`.
pub fn prediction_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.rec.dgm")), dir.join(format!("{id}.comp.dgm")))
}

fn sample_id(split: Split, index: usize) -> String {
    format!("{split}-{index:06}")
}

fn grid_rel(id: &str, role: &str) -> String {
    format!("{GRID_DIR}/{id}.{role}.dgm")
}

fn prepare_out_dir(out: &Path) -> Result<()> {
    let grids = out.join(GRID_DIR);
    fs::create_dir_all(&grids).map_err(|e| Error::io(&grids, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub kind: TerrainKind,
    pub count: usize,
    pub split: Split,
    pub seed: u64,
    pub geometry: GridGeometry,
    pub params: TerrainParams,
    pub augment: Option<AugmentProfile>,
}

impl SyntheticConfig {
    pub fn new(kind: TerrainKind, count: usize, split: Split, seed: u64) -> Self {
        Self {
            kind,
            count,
            split,
            seed,
            geometry: GridGeometry::default(),
            params: TerrainParams::default(),
            augment: None,
        }
    }
}

/// One generated synthetic sample, before it is written.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub gt: ElevationGrid,
    pub occluded: ElevationGrid,
    pub mask: OcclusionMask,
    pub vantage: VantagePoint,
}

pub fn synthesize_sample(cfg: &SyntheticConfig, sample_seed: u64) -> Result<SyntheticSample> {
    let spec = TerrainSpec { kind: cfg.kind, geometry: cfg.geometry, seed: sample_seed, params: cfg.params };
    let (gt, vantage) = sample_scene(&spec);
    let occluded = cast(&gt, vantage)?.occluded_grid;
    let (gt, occluded) = match &cfg.augment {
        Some(profile) => augment_pair(
            &gt,
            &occluded,
            (vantage.x, vantage.y),
            profile,
            derive_seed(sample_seed, AUGMENT_STREAM),
        )?,
        None => (gt, occluded),
    };
    let mask = mask_from_grid(&occluded);
    Ok(SyntheticSample { gt, occluded, mask, vantage })
}

/// Generates, writes and indexes a synthetic split under `out`. Samples are
/// produced in parallel on the current rayon pool; the result does not
/// depend on the pool size.
pub fn build_synthetic_split(cfg: &SyntheticConfig, out: &Path) -> Result<DatasetManifest> {
    if cfg.count == 0 {
        return Err(Error::InvalidConfig("sample count must be at least 1".into()));
    }
    cfg.geometry.validate()?;
    if let Some(p) = &cfg.augment {
        p.validate()?;
    }
    prepare_out_dir(out)?;
    let records = (0..cfg.count)
        .into_par_iter()
        .map(|i| {
            let id = sample_id(cfg.split, i);
            let seed = derive_seed(cfg.seed, i as u64);
            let s = synthesize_sample(cfg, seed)?;
            let mut paths = BTreeMap::new();
            for (role, grid) in [(ROLE_GT, &s.gt), (ROLE_OCCLUDED, &s.occluded), (ROLE_MASK, &s.mask.to_grid())] {
                let rel = grid_rel(&id, role);
                write_grid(grid, out.join(&rel))?;
                paths.insert(role.to_string(), rel);
            }
            let provenance =
                Provenance { vantage: Some(s.vantage), augment: cfg.augment, ..Provenance::source(cfg.kind.to_string()) };
            Ok(SampleRecord { id, seed, paths, provenance })
        })
        .collect::<Result<Vec<_>>>()?;
    let header = ManifestHeader {
        schema_version: SCHEMA_VERSION,
        kind: DatasetKind::Synthetic,
        split: cfg.split,
        count: records.len(),
        failed: 0,
        config: serde_json::to_value(cfg)?,
    };
    let manifest = DatasetManifest { header, records };
    write_manifest(out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

/// Which source grid becomes the self-supervised target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetRole {
    /// The source's ground-truth grid; for recorded maps this is the partially occluded map itself.
    Gt,
    /// The source's occluded input grid, falling back to its ground truth.
    Input,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelfsupConfig {
    pub sampler: SamplerConfig,
    pub seed: u64,
    pub target: TargetRole,
    pub split: Option<Split>,
}

impl SelfsupConfig {
    pub fn new(sampler: SamplerConfig, seed: u64) -> Self {
        Self { sampler, seed, target: TargetRole::Gt, split: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelfsupSummary {
    pub manifest: DatasetManifest,
    pub succeeded: usize,
    pub failed: usize,
}

/// Builds (target, input, artificial mask) triples from a source manifest.
/// Samples whose sampler run fails are skipped and counted.
pub fn build_selfsup_split(source_manifest: &Path, cfg: &SelfsupConfig, out: &Path) -> Result<SelfsupSummary> {
    cfg.sampler.validate()?;
    let source = read_manifest(source_manifest)?;
    let base = manifest_base(source_manifest);
    source.validate_files(&base)?;
    let split = cfg.split.unwrap_or(source.header.split);
    prepare_out_dir(out)?;

    let outcomes = source
        .records
        .par_iter()
        .enumerate()
        .map(|(i, src)| {
            let role = match cfg.target {
                TargetRole::Input => src.input_role().unwrap_or(ROLE_GT),
                TargetRole::Gt => ROLE_GT,
            };
            let target = load_role(&base, src, role)?;
            let seed = derive_seed(cfg.seed, i as u64);
            let outcome = match sample_occlusion(&target, &cfg.sampler, seed) {
                Ok(o) => o,
                Err(Error::FullyMissing) => return Ok(None),
                Err(e) => return Err(e),
            };
            if !outcome.success {
                log::debug!("sample {}: no usable occlusion after {} draws", src.id, outcome.iterations_used);
                return Ok(None);
            }
            let id = sample_id(split, i);
            let mut paths = BTreeMap::new();
            let mask_grid = outcome.mask.to_grid();
            for (r, grid) in [(ROLE_GT, &target), (ROLE_INPUT, &outcome.input_grid), (ROLE_ARTIFICIAL_MASK, &mask_grid)] {
                let rel = grid_rel(&id, r);
                write_grid(grid, out.join(&rel))?;
                paths.insert(r.to_string(), rel);
            }
            let provenance = Provenance {
                source_id: Some(src.id.clone()),
                vantage: Some(outcome.vantage),
                sampler: Some(cfg.sampler),
                achieved_ratio: Some(outcome.achieved_ratio),
                ..Provenance::source(format!("{}:{role}", src.provenance.source))
            };
            Ok(Some(SampleRecord { id, seed, paths, provenance }))
        })
        .collect::<Result<Vec<_>>>()?;

    let failed = outcomes.iter().filter(|o| o.is_none()).count();
    let records: Vec<SampleRecord> = outcomes.into_iter().flatten().collect();
    if records.is_empty() {
        return Err(Error::AllSamplesFailed(failed));
    }
    let header = ManifestHeader {
        schema_version: SCHEMA_VERSION,
        kind: DatasetKind::Selfsup,
        split,
        count: records.len(),
        failed,
        config: serde_json::json!({
            "source": source_manifest.file_name().map(|f| f.to_string_lossy().into_owned()),
            "source_count": source.records.len(),
            "selfsup": cfg,
        }),
    };
    let manifest = DatasetManifest { header, records };
    write_manifest(out.join(MANIFEST_FILE), &manifest)?;
    let succeeded = manifest.records.len();
    Ok(SelfsupSummary { manifest, succeeded, failed })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilingSpec {
    pub tiles_per_side: usize,
    pub tile_px: usize,
    pub out_px: usize,
}

impl TilingSpec {
    /// 300×300 map into 4×4 tiles of 75 px, downsampled to 64 px.
    pub const SYNTHETIC: TilingSpec = TilingSpec { tiles_per_side: 4, tile_px: 75, out_px: 64 };
    /// 600×600 map into 8×8 tiles of 75 px, downsampled to 64 px.
    pub const LARGE: TilingSpec = TilingSpec { tiles_per_side: 8, tile_px: 75, out_px: 64 };

    pub fn validate_for(&self, g: &GridGeometry) -> Result<()> {
        if self.tiles_per_side == 0 || self.tile_px == 0 || self.out_px == 0 || self.out_px > self.tile_px {
            return Err(Error::InvalidConfig(format!(
                "tiling {}x{} px -> {} px is not a valid downsampling",
                self.tiles_per_side, self.tile_px, self.out_px
            )));
        }
        let side = self.tiles_per_side * self.tile_px;
        if g.rows != side || g.cols != side {
            return Err(Error::Divisibility {
                size: format!("{}x{}", g.rows, g.cols),
                tiles: self.tiles_per_side,
                tile_px: self.tile_px,
            });
        }
        Ok(())
    }
}

/// Nearest source index for output index `i` when resampling `from` to `to` samples.
fn nearest(i: usize, from: usize, to: usize) -> usize {
    (((2 * i + 1) * from) / (2 * to)).min(from - 1)
}

/// Splits `g` into row-major tiles and downsamples each to `out_px` by
/// nearest neighbour. Missing cells travel with their values.
pub fn tile_and_downsample(g: &ElevationGrid, spec: &TilingSpec) -> Result<Vec<ElevationGrid>> {
    let geo = g.geometry();
    spec.validate_for(geo)?;
    let tile_geo = GridGeometry::new(
        spec.out_px,
        spec.out_px,
        geo.resolution_x * spec.tile_px as f64 / spec.out_px as f64,
        geo.resolution_y * spec.tile_px as f64 / spec.out_px as f64,
    )?;
    let mut tiles = Vec::with_capacity(spec.tiles_per_side * spec.tiles_per_side);
    for tr in 0..spec.tiles_per_side {
        for tc in 0..spec.tiles_per_side {
            let tile = ElevationGrid::from_fn(tile_geo, |r, c| {
                g.get(tr * spec.tile_px + nearest(r, spec.tile_px, spec.out_px), tc * spec.tile_px + nearest(c, spec.tile_px, spec.out_px))
            });
            tiles.push(tile);
        }
    }
    Ok(tiles)
}

/// Inverse of [`tile_and_downsample`]: upsamples each tile back to
/// `tile_px` by nearest neighbour and places it. Lossless when
/// `out_px == tile_px`.
pub fn stitch(tiles: &[ElevationGrid], spec: &TilingSpec, geometry: GridGeometry) -> Result<ElevationGrid> {
    spec.validate_for(&geometry)?;
    let expected = spec.tiles_per_side * spec.tiles_per_side;
    if tiles.len() != expected {
        return Err(Error::InvalidConfig(format!("expected {expected} tiles, got {}", tiles.len())));
    }
    for t in tiles {
        if t.rows() != spec.out_px || t.cols() != spec.out_px {
            return Err(Error::GeometryMismatch(format!(
                "tile is {}x{}, expected {}x{}",
                t.rows(),
                t.cols(),
                spec.out_px,
                spec.out_px
            )));
        }
    }
    Ok(ElevationGrid::from_fn(geometry, |r, c| {
        let (tr, tc) = (r / spec.tile_px, c / spec.tile_px);
        let tile = &tiles[tr * spec.tiles_per_side + tc];
        tile.get(nearest(r % spec.tile_px, spec.out_px, spec.tile_px), nearest(c % spec.tile_px, spec.out_px, spec.tile_px))
    }))
}

/// Indices of tiles whose missing-cell ratio does not exceed `max_ratio`.
pub fn occlusion_filter(tiles: &[ElevationGrid], max_ratio: f64) -> Vec<usize> {
    (0..tiles.len()).filter(|&i| tiles[i].missing_ratio() <= max_ratio).collect()
}

pub const KEYFRAME_THRESHOLD_DB: f64 = 50.0;

/// Indices of accepted keyframes. The first grid is always accepted; later
/// grids are accepted when their PSNR against the last accepted grid, over
/// cells observed in both and with the running elevation range of the
/// stream so far, is below `threshold_db`. No common cells means accept.
pub fn keyframe_filter(stream: &[ElevationGrid], threshold_db: f64) -> Result<Vec<usize>> {
    let first = stream.first().ok_or(Error::EmptyEvaluation("keyframe stream is empty"))?;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let widen = |g: &ElevationGrid, lo: &mut f64, hi: &mut f64| {
        if let Some((a, b)) = g.observed_range() {
            *lo = lo.min(a as f64);
            *hi = hi.max(b as f64);
        }
    };
    widen(first, &mut lo, &mut hi);
    let mut accepted = vec![0];
    for (i, g) in stream.iter().enumerate().skip(1) {
        first.geometry().ensure_same(g.geometry())?;
        widen(g, &mut lo, &mut hi);
        let last = &stream[*accepted.last().unwrap()];
        let mut sum = 0.0;
        let mut n = 0usize;
        for (&a, &b) in last.cells().iter().zip(g.cells()) {
            if !a.is_nan() && !b.is_nan() {
                let d = a as f64 - b as f64;
                sum += d * d;
                n += 1;
            }
        }
        if n == 0 {
            accepted.push(i);
            continue;
        }
        let mse = sum / n as f64;
        let psnr = if mse == 0.0 { f64::INFINITY } else { psnr_occ(mse, DynamicRange(hi - lo))? };
        if psnr < threshold_db {
            accepted.push(i);
        }
    }
    Ok(accepted)
}
