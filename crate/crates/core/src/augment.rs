//! Six-stage augmentation of (ground truth, occluded) pairs, applied in order:
//! vertical scale, vertical offset, white noise, range-dependent noise,
//! Gaussian-blurred cluster noise, random occlusion.
//!
//! Draws for stages 1 to 5 are shared by both grids. Stage 6 only touches
//! the occluded grid. Missing cells stay missing throughout.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{ElevationGrid, GridGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentProfile {
    pub scale_enabled: bool,
    pub scale_range: (f64, f64),
    pub offset_enabled: bool,
    pub offset_range: (f64, f64),
    pub white_enabled: bool,
    pub white_sigma: f64,
    pub range_noise_enabled: bool,
    pub range_noise_factor: f64,
    pub range_norm: f64,
    pub cluster_enabled: bool,
    pub cluster_prob: f64,
    pub cluster_sigma_elev: f64,
    pub cluster_blur_sigma: f64,
    pub random_occl_enabled: bool,
    pub random_occl_prob: f64,
}

impl Default for AugmentProfile {
    fn default() -> Self {
        Self {
            scale_enabled: true,
            scale_range: (0.8, 10.0),
            offset_enabled: true,
            offset_range: (-1.0, 1.0),
            white_enabled: true,
            white_sigma: 0.001,
            range_noise_enabled: true,
            range_noise_factor: 0.01,
            range_norm: 10.0,
            cluster_enabled: true,
            cluster_prob: 0.05,
            cluster_sigma_elev: 0.03,
            cluster_blur_sigma: 1.0,
            random_occl_enabled: true,
            random_occl_prob: 0.02,
        }
    }
}

impl AugmentProfile {
    /// Default parameters with every stage switched off.
    pub fn disabled() -> Self {
        Self {
            scale_enabled: false,
            offset_enabled: false,
            white_enabled: false,
            range_noise_enabled: false,
            cluster_enabled: false,
            random_occl_enabled: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(format!("augment profile: {msg}")));
        let finite_range = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !finite_range(self.scale_range) {
            return bad("scale_range must be finite with low <= high");
        }
        if !finite_range(self.offset_range) {
            return bad("offset_range must be finite with low <= high");
        }
        for (name, p) in [("cluster_prob", self.cluster_prob), ("random_occl_prob", self.random_occl_prob)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(&format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, s) in [
            ("white_sigma", self.white_sigma),
            ("range_noise_factor", self.range_noise_factor),
            ("cluster_sigma_elev", self.cluster_sigma_elev),
            ("cluster_blur_sigma", self.cluster_blur_sigma),
        ] {
            if !(s >= 0.0 && s.is_finite()) {
                return bad(&format!("{name} must be a non-negative number"));
            }
        }
        if !(self.range_norm > 0.0 && self.range_norm.is_finite()) {
            return bad("range_norm must be positive");
        }
        Ok(())
    }
}

/// Augments a pair. `robot_xy` is the sensor position relative to the grid
/// centre, used for the range-dependent noise.
pub fn augment_pair(
    gt: &ElevationGrid,
    occ: &ElevationGrid,
    robot_xy: (f64, f64),
    profile: &AugmentProfile,
    seed: u64,
) -> Result<(ElevationGrid, ElevationGrid)> {
    profile.validate()?;
    let g = *gt.geometry();
    g.ensure_same(occ.geometry())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = g.len();

    let mut scale = 1.0;
    if profile.scale_enabled {
        scale = uniform(&mut rng, profile.scale_range);
    }
    let mut offset = 0.0;
    if profile.offset_enabled {
        offset = uniform(&mut rng, profile.offset_range);
    }
    let mut noise = vec![0.0f64; n];
    if profile.white_enabled {
        for v in noise.iter_mut() {
            *v += profile.white_sigma * normal(&mut rng);
        }
    }
    if profile.range_noise_enabled {
        for (i, v) in noise.iter_mut().enumerate() {
            let d = (g.cell_x(i / g.cols) - robot_xy.0).hypot(g.cell_y(i % g.cols) - robot_xy.1);
            let sigma = profile.range_noise_factor * (d / profile.range_norm).powi(2);
            *v += sigma * normal(&mut rng);
        }
    }
    if profile.cluster_enabled {
        let mut centres = vec![0.0f64; n];
        for c in centres.iter_mut() {
            if rng.random_bool(profile.cluster_prob) {
                *c = profile.cluster_sigma_elev * normal(&mut rng);
            }
        }
        for (v, b) in noise.iter_mut().zip(gaussian_blur(&centres, g, profile.cluster_blur_sigma)) {
            *v += b;
        }
    }
    let mut dropped = vec![false; n];
    if profile.random_occl_enabled {
        for d in dropped.iter_mut() {
            *d = rng.random_bool(profile.random_occl_prob);
        }
    }

    let apply = |grid: &ElevationGrid| grid.map_observed(|i, v| ((v as f64) * scale + offset + noise[i]) as f32);
    let gt_out = apply(gt);
    let occ_cells = apply(occ)
        .into_cells()
        .into_iter()
        .zip(&dropped)
        .map(|(v, &d)| if d { f32::NAN } else { v })
        .collect();
    let occ_out = ElevationGrid::new(g, occ_cells)?;
    Ok((gt_out, occ_out))
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Gaussian kernel `exp(-(x²+y²)/2σ²) / 2πσ²`, truncated at radius `ceil(3σ)`.
/// Not renormalised after truncation.
pub fn blur_kernel(sigma: f64) -> (usize, Vec<f64>) {
    if sigma == 0.0 {
        return (0, vec![1.0]);
    }
    let radius = (3.0 * sigma).ceil() as usize;
    let side = 2 * radius + 1;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let mut k = Vec::with_capacity(side * side);
    for dy in 0..side {
        for dx in 0..side {
            let (x, y) = (dx as f64 - radius as f64, dy as f64 - radius as f64);
            k.push(norm * (-(x * x + y * y) / (2.0 * sigma * sigma)).exp());
        }
    }
    (radius, k)
}

/// 2D convolution with zero padding outside the grid.
fn gaussian_blur(field: &[f64], g: GridGeometry, sigma: f64) -> Vec<f64> {
    let (radius, kernel) = blur_kernel(sigma);
    let side = 2 * radius + 1;
    let r = radius as isize;
    let mut out = vec![0.0; field.len()];
    for (i, &v) in field.iter().enumerate() {
        if v == 0.0 {
            continue;
        }
        let (row, col) = ((i / g.cols) as isize, (i % g.cols) as isize);
        for dr in -r..=r {
            for dc in -r..=r {
                let (rr, cc) = (row + dr, col + dc);
                if rr < 0 || cc < 0 || rr >= g.rows as isize || cc >= g.cols as isize {
                    continue;
                }
                let w = kernel[(dr + r) as usize * side + (dc + r) as usize];
                out[rr as usize * g.cols + cc as usize] += w * v;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geom(n: usize) -> GridGeometry {
        GridGeometry::square(n, n, 0.04).unwrap()
    }

    fn pair(n: usize) -> (ElevationGrid, ElevationGrid) {
        let gt = ElevationGrid::from_fn(geom(n), |r, c| (r as f32 - c as f32) * 0.01);
        let occ = ElevationGrid::from_fn(geom(n), |r, c| if (r + c) % 4 == 0 { f32::NAN } else { gt.get(r, c) });
        (gt, occ)
    }

    #[test]
    fn disabled_profile_is_identity() {
        let (gt, occ) = pair(16);
        let (a, b) = augment_pair(&gt, &occ, (0.0, 0.0), &AugmentProfile::disabled(), 1).unwrap();
        assert_eq!(a, gt);
        assert_eq!(b, occ);
    }

    #[test]
    fn deterministic_per_seed() {
        let (gt, occ) = pair(16);
        let p = AugmentProfile::default();
        let x = augment_pair(&gt, &occ, (0.1, 0.2), &p, 9).unwrap();
        let y = augment_pair(&gt, &occ, (0.1, 0.2), &p, 9).unwrap();
        let z = augment_pair(&gt, &occ, (0.1, 0.2), &p, 10).unwrap();
        assert_eq!(x, y);
        assert_ne!(x, z);
    }

    #[test]
    fn noise_is_shared_and_holes_are_kept() {
        let (gt, occ) = pair(32);
        let p = AugmentProfile { random_occl_enabled: false, ..Default::default() };
        let (a, b) = augment_pair(&gt, &occ, (0.0, 0.0), &p, 4).unwrap();
        for i in 0..a.cells().len() {
            if occ.cells()[i].is_nan() {
                assert!(b.cells()[i].is_nan());
            } else {
                assert_eq!(a.cells()[i].to_bits(), b.cells()[i].to_bits());
            }
        }
        assert!(!a.has_missing());
    }

    #[test]
    fn random_occlusion_only_hits_the_occluded_grid() {
        let (gt, occ) = pair(64);
        let p = AugmentProfile { random_occl_enabled: true, ..AugmentProfile::disabled() };
        let (a, b) = augment_pair(&gt, &occ, (0.0, 0.0), &p, 5).unwrap();
        assert_eq!(a, gt);
        assert!(b.missing_count() > occ.missing_count());
        for i in 0..b.cells().len() {
            if !b.cells()[i].is_nan() {
                assert_eq!(b.cells()[i].to_bits(), occ.cells()[i].to_bits());
            }
        }
    }

    #[test]
    fn scale_and_offset_are_affine() {
        let (gt, occ) = pair(8);
        let p = AugmentProfile { scale_enabled: true, offset_enabled: true, ..AugmentProfile::disabled() };
        let (a, _) = augment_pair(&gt, &occ, (0.0, 0.0), &p, 2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = rng.random_range(0.8..10.0);
        let o = rng.random_range(-1.0..1.0);
        for (x, y) in gt.cells().iter().zip(a.cells()) {
            assert_eq!(*y, ((*x as f64) * s + o) as f32);
        }
    }

    #[test]
    fn range_noise_grows_with_distance() {
        let g = ElevationGrid::zeros(GridGeometry::square(64, 64, 0.5).unwrap());
        let p = AugmentProfile { range_noise_enabled: true, ..AugmentProfile::disabled() };
        let (a, _) = augment_pair(&g, &g, (0.0, 0.0), &p, 3).unwrap();
        let geo = *g.geometry();
        let (mut near, mut far) = (Vec::new(), Vec::new());
        for r in 0..64 {
            for c in 0..64 {
                let d = geo.cell_x(r).hypot(geo.cell_y(c));
                let v = a.get(r, c) as f64;
                if d < 4.0 {
                    near.push(v * v);
                } else if d > 12.0 {
                    far.push(v * v);
                }
            }
        }
        let rms = |v: &[f64]| (v.iter().sum::<f64>() / v.len() as f64).sqrt();
        assert!(rms(&far) > 5.0 * rms(&near));
    }

    #[test]
    fn kernel_matches_formula() {
        let (radius, k) = blur_kernel(1.0);
        assert_eq!(radius, 3);
        assert_eq!(k.len(), 49);
        let centre = k[3 * 7 + 3];
        assert!((centre - 1.0 / (2.0 * std::f64::consts::PI)).abs() < 1e-15);
        assert!((k[3 * 7 + 4] / centre - (-0.5f64).exp()).abs() < 1e-15);
        // Truncation at 3 sigma loses a little mass.
        let sum: f64 = k.iter().sum();
        assert!(sum < 1.0 && sum > 0.99);
    }

    #[test]
    fn single_cluster_spreads_as_the_kernel() {
        let field: Vec<f64> = (0..81).map(|i| if i == 40 { 2.0 } else { 0.0 }).collect();
        let out = gaussian_blur(&field, geom(9), 1.0);
        let (_, k) = blur_kernel(1.0);
        assert!((out[40] - 2.0 * k[24]).abs() < 1e-15);
        assert_eq!(out[0], 0.0);
        assert!((out[41] - 2.0 * k[25]).abs() < 1e-15);
    }

    #[test]
    fn invalid_profiles_are_rejected() {
        let (gt, occ) = pair(4);
        for p in [
            AugmentProfile { scale_range: (10.0, 0.8), ..Default::default() },
            AugmentProfile { cluster_prob: 1.5, ..Default::default() },
            AugmentProfile { white_sigma: -1.0, ..Default::default() },
            AugmentProfile { range_norm: 0.0, ..Default::default() },
        ] {
            assert!(augment_pair(&gt, &occ, (0.0, 0.0), &p, 0).is_err());
        }
        let other = ElevationGrid::zeros(geom(5));
        assert!(augment_pair(&gt, &other, (0.0, 0.0), &AugmentProfile::default(), 0).is_err());
    }

    #[test]
    fn partial_profile_json_fills_defaults() {
        let p: AugmentProfile = serde_json::from_str(r#"{"cluster_enabled": false}"#).unwrap();
        assert!(!p.cluster_enabled);
        assert!(p.scale_enabled);
        assert_eq!(p.random_occl_prob, 0.02);
    }
}
