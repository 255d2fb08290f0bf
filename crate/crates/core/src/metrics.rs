//! Reconstruction quality: errors over occluded cells, PSNR against a
//! dataset-wide dynamic range, and Gaussian-windowed SSIM over whole grids.

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::grid::{compose, ElevationGrid, OcclusionMask};

pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;

/// Max minus min ground-truth elevation over a dataset split, in meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicRange(pub f64);

impl DynamicRange {
    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_degenerate(self) -> bool {
        self.0.is_nan() || self.0 <= 0.0
    }
}

pub fn dynamic_range<'a>(grids: impl IntoIterator<Item = &'a ElevationGrid>) -> Result<DynamicRange> {
    let mut seen = false;
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for g in grids {
        seen = true;
        if let Some((a, b)) = g.observed_range() {
            lo = lo.min(a as f64);
            hi = hi.max(b as f64);
        }
    }
    if !seen {
        return Err(Error::EmptyEvaluation("dynamic range of an empty split"));
    }
    if lo > hi {
        return Err(Error::FullyMissing);
    }
    let range = DynamicRange(hi - lo);
    if range.is_degenerate() {
        log::warn!("degenerate dynamic range: every ground-truth cell has the same elevation");
    }
    Ok(range)
}

/// Mean absolute and mean squared error over cells that are occluded in
/// `mask` and observed in `gt`.
pub fn occluded_errors(gt: &ElevationGrid, rec: &ElevationGrid, mask: &OcclusionMask) -> Result<(f64, f64)> {
    let (l1, mse, _) = occluded_error_sums(gt, rec, mask)?;
    Ok((l1, mse))
}

fn occluded_error_sums(gt: &ElevationGrid, rec: &ElevationGrid, mask: &OcclusionMask) -> Result<(f64, f64, usize)> {
    gt.geometry().ensure_same(rec.geometry())?;
    gt.geometry().ensure_same(mask.geometry())?;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut n = 0usize;
    for ((&g, &r), &m) in gt.cells().iter().zip(rec.cells()).zip(mask.bits()) {
        if !m || g.is_nan() {
            continue;
        }
        if r.is_nan() {
            return Err(Error::MissingCells("reconstruction is missing an evaluated cell"));
        }
        let d = g as f64 - r as f64;
        abs_sum += d.abs();
        sq_sum += d * d;
        n += 1;
    }
    if n == 0 {
        return Err(Error::EmptyEvaluation("no occluded cells with ground truth"));
    }
    Ok((abs_sum / n as f64, sq_sum / n as f64, n))
}

/// `10 log10(L² / mse)` in dB; `+inf` for a perfect reconstruction.
pub fn psnr_occ(mse_occ: f64, range: DynamicRange) -> Result<f64> {
    if range.is_degenerate() {
        return Err(Error::DegenerateRange(range.0));
    }
    if mse_occ < 0.0 || mse_occ.is_nan() {
        return Err(Error::InvalidConfig(format!("mse {mse_occ} must be non-negative")));
    }
    if mse_occ == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (range.0 * range.0 / mse_occ).log10())
}

/// Normalised 1D Gaussian taps of the SSIM window.
pub fn gaussian_taps(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size).map(|i| (-(i as f64 - half).powi(2) / (2.0 * sigma * sigma)).exp()).collect();
    let sum: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / sum).collect()
}

/// Separable filtering with the window cut at the grid border and
/// renormalised over the in-bounds taps.
fn filter_renormalized(data: &[f64], rows: usize, cols: usize, taps: &[f64]) -> Vec<f64> {
    let half = (taps.len() / 2) as isize;
    let pass = |src: &[f64], along_rows: bool| {
        let mut out = vec![0.0; src.len()];
        for r in 0..rows {
            for c in 0..cols {
                let (pos, len) = if along_rows { (r as isize, rows as isize) } else { (c as isize, cols as isize) };
                let mut acc = 0.0;
                let mut wsum = 0.0;
                for (k, &w) in taps.iter().enumerate() {
                    let p = pos + k as isize - half;
                    if p < 0 || p >= len {
                        continue;
                    }
                    let idx = if along_rows { p as usize * cols + c } else { r * cols + p as usize };
                    acc += w * src[idx];
                    wsum += w;
                }
                out[r * cols + c] = acc / wsum;
            }
        }
        out
    };
    let tmp = pass(data, false);
    pass(&tmp, true)
}

/// Mean luminance, contrast and structure terms of SSIM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimComponents {
    pub ssim: f64,
    pub luminance: f64,
    pub contrast: f64,
    pub structure: f64,
}

pub fn ssim(a: &ElevationGrid, b: &ElevationGrid, range: DynamicRange) -> Result<f64> {
    ssim_components(a, b, range).map(|s| s.ssim)
}

pub fn ssim_components(a: &ElevationGrid, b: &ElevationGrid, range: DynamicRange) -> Result<SsimComponents> {
    a.geometry().ensure_same(b.geometry())?;
    if a.has_missing() || b.has_missing() {
        return Err(Error::MissingCells("SSIM needs complete grids"));
    }
    if range.is_degenerate() {
        return Err(Error::DegenerateRange(range.0));
    }
    let (rows, cols) = (a.rows(), a.cols());
    let c1 = (SSIM_K1 * range.0).powi(2);
    let c2 = (SSIM_K2 * range.0).powi(2);
    let c3 = c2 / 2.0;

    let x: Vec<f64> = a.cells().iter().map(|&v| v as f64).collect();
    let y: Vec<f64> = b.cells().iter().map(|&v| v as f64).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

    let taps = gaussian_taps(SSIM_WINDOW, SSIM_SIGMA);
    let [mx, my, sxx, syy, sxy] = [&x, &y, &xx, &yy, &xy].map(|d| filter_renormalized(d, rows, cols, &taps));

    let n = (rows * cols) as f64;
    let mut acc = SsimComponents { ssim: 0.0, luminance: 0.0, contrast: 0.0, structure: 0.0 };
    for i in 0..rows * cols {
        let var_x = (sxx[i] - mx[i] * mx[i]).max(0.0);
        let var_y = (syy[i] - my[i] * my[i]).max(0.0);
        let cov = sxy[i] - mx[i] * my[i];
        let (sx, sy) = (var_x.sqrt(), var_y.sqrt());
        let l = (2.0 * mx[i] * my[i] + c1) / (mx[i] * mx[i] + my[i] * my[i] + c1);
        let c = (2.0 * sx * sy + c2) / (var_x + var_y + c2);
        let s = (cov + c3) / (sx * sy + c3);
        acc.luminance += l;
        acc.contrast += c;
        acc.structure += s;
        acc.ssim += l * c * s;
    }
    Ok(SsimComponents {
        ssim: acc.ssim / n,
        luminance: acc.luminance / n,
        contrast: acc.contrast / n,
        structure: acc.structure / n,
    })
}

/// PSNR that serialises `+inf` as `{"db": null, "infinite": true}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Psnr(pub f64);

#[derive(Serialize, Deserialize)]
struct PsnrRepr {
    db: Option<f64>,
    infinite: bool,
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let infinite = self.0.is_infinite();
        PsnrRepr { db: (!infinite).then_some(self.0), infinite }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = PsnrRepr::deserialize(d)?;
        match (repr.infinite, repr.db) {
            (true, _) => Ok(Psnr(f64::INFINITY)),
            (false, Some(v)) => Ok(Psnr(v)),
            (false, None) => Err(serde::de::Error::custom("finite PSNR without a value")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub l1_occ: f64,
    pub mse_occ: f64,
    pub psnr_occ: Psnr,
    /// `None` when the ground truth itself has missing cells.
    pub ssim_rec: Option<f64>,
    pub ssim_comp: Option<f64>,
    pub n_occluded_cells: usize,
}

/// Scores one reconstruction. `occluded` is the model input and `mask` the
/// evaluated region; the composed grid patches `occluded` with `rec` under `mask`.
pub fn evaluate(
    gt: &ElevationGrid,
    occluded: &ElevationGrid,
    rec: &ElevationGrid,
    mask: &OcclusionMask,
    range: DynamicRange,
) -> Result<MetricsReport> {
    let comp = compose(occluded, rec, mask)?;
    evaluate_with_composed(gt, rec, &comp, mask, range)
}

pub fn evaluate_with_composed(
    gt: &ElevationGrid,
    rec: &ElevationGrid,
    comp: &ElevationGrid,
    mask: &OcclusionMask,
    range: DynamicRange,
) -> Result<MetricsReport> {
    let (l1_occ, mse_occ, n) = occluded_error_sums(gt, rec, mask)?;
    let psnr = psnr_occ(mse_occ, range)?;
    let (ssim_rec, ssim_comp) = if gt.has_missing() || comp.has_missing() {
        (None, None)
    } else {
        (Some(ssim(gt, rec, range)?), Some(ssim(gt, comp, range)?))
    };
    Ok(MetricsReport { l1_occ, mse_occ, psnr_occ: Psnr(psnr), ssim_rec, ssim_comp, n_occluded_cells: n })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl MeanStd {
    /// Population mean and standard deviation using pairwise summation.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = pairwise_sum(values) / n;
        let dev: Vec<f64> = values.iter().map(|v| (v - mean) * (v - mean)).collect();
        Some(Self { mean, std: (pairwise_sum(&dev) / n).sqrt(), count: values.len() })
    }
}

pub fn pairwise_sum(values: &[f64]) -> f64 {
    if values.len() <= 16 {
        values.iter().sum()
    } else {
        let (a, b) = values.split_at(values.len() / 2);
        pairwise_sum(a) + pairwise_sum(b)
    }
}

/// Split-level summary of per-sample reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateMetrics {
    pub samples: usize,
    pub l1_occ: Option<MeanStd>,
    pub mse_occ: Option<MeanStd>,
    /// Over samples with finite PSNR.
    pub psnr_occ: Option<MeanStd>,
    pub psnr_infinite_samples: usize,
    pub ssim_rec: Option<MeanStd>,
    pub ssim_comp: Option<MeanStd>,
}

pub fn aggregate(reports: &[MetricsReport]) -> AggregateMetrics {
    let collect = |f: &dyn Fn(&MetricsReport) -> Option<f64>| -> Vec<f64> { reports.iter().filter_map(f).collect() };
    let psnr_finite = collect(&|r| r.psnr_occ.0.is_finite().then_some(r.psnr_occ.0));
    AggregateMetrics {
        samples: reports.len(),
        l1_occ: MeanStd::of(&collect(&|r| Some(r.l1_occ))),
        mse_occ: MeanStd::of(&collect(&|r| Some(r.mse_occ))),
        psnr_infinite_samples: reports.len() - psnr_finite.len(),
        psnr_occ: MeanStd::of(&psnr_finite),
        ssim_rec: MeanStd::of(&collect(&|r| r.ssim_rec)),
        ssim_comp: MeanStd::of(&collect(&|r| r.ssim_comp)),
    }
}
