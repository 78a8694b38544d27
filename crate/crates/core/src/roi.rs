//! Left-ventricle localization on a cine stack.
//!
//! Every pixel's intensity series is reduced to the magnitude of its first
//! temporal harmonic, which lights up tissue that moves at the heart rate.
//! Canny edges of that image show the myocardial boundaries as near-concentric
//! circles; a circular Hough transform keeps the best few circles per slice and
//! each casts a Gaussian vote for the LV center into a shared likelihood
//! surface. The surface maximum is the ROI center.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{canny, CannyParams, Image2, Mask2};
use crate::volume::{crop_patch, Patch, ScalarVolume};

/// Two returned circles may share a center only if their radii differ by more
/// than this many pixels.
const RADIUS_SEPARATION: usize = 2;

const ROUNDING_FLOOR: f64 = 1e-12;

/// Per-voxel magnitude of the first temporal DFT bin.
#[derive(Clone, Debug, PartialEq)]
pub struct H1Volume {
    dims: [usize; 3],
    magnitudes: Vec<f64>,
}

impl H1Volume {
    pub fn new(dims: [usize; 3], magnitudes: Vec<f64>) -> Result<Self> {
        if magnitudes.len() != dims.iter().product::<usize>() {
            return Err(Error::arg("H1 magnitudes do not match dims"));
        }
        if magnitudes.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::arg("H1 magnitudes must be non-negative"));
        }
        Ok(Self { dims, magnitudes })
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn slice(&self, z: usize) -> Image2<f64> {
        let n = self.dims[0] * self.dims[1];
        Image2::new(self.dims[0], self.dims[1], self.magnitudes[z * n..(z + 1) * n].to_vec())
            .expect("dims are positive")
    }

    pub fn max(&self) -> f64 {
        self.magnitudes.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiConfig {
    pub radius_min: usize,
    pub radius_max: usize,
    pub top_p: usize,
    pub vote_sigma: f64,
    pub h1_noise_frac: f64,
    pub canny_sigma: f64,
    pub canny_low: f64,
    pub canny_high: f64,
    pub patch_size: (usize, usize),
}

impl Default for RoiConfig {
    fn default() -> Self {
        Self {
            radius_min: 10,
            radius_max: 40,
            top_p: 5,
            vote_sigma: 8.0,
            h1_noise_frac: 0.01,
            canny_sigma: 1.0,
            canny_low: 0.1,
            canny_high: 0.2,
            patch_size: (128, 128),
        }
    }
}

impl RoiConfig {
    pub fn validate(&self) -> Result<()> {
        if self.radius_min == 0 || self.radius_min >= self.radius_max {
            return Err(Error::arg(format!(
                "need 0 < radius_min < radius_max, got {} / {}",
                self.radius_min, self.radius_max
            )));
        }
        if self.top_p == 0 {
            return Err(Error::arg("top_p must be at least 1"));
        }
        if !(self.vote_sigma > 0.0) {
            return Err(Error::arg("vote_sigma must be > 0"));
        }
        if !(0.0..1.0).contains(&self.h1_noise_frac) {
            return Err(Error::arg("h1_noise_frac must lie in [0, 1)"));
        }
        if self.patch_size.0 == 0 || self.patch_size.1 == 0 {
            return Err(Error::arg("patch_size must be positive"));
        }
        Ok(())
    }

    pub fn canny(&self) -> CannyParams {
        CannyParams {
            sigma: self.canny_sigma,
            low: self.canny_low,
            high: self.canny_high,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Circle {
    pub center: (usize, usize),
    pub radius: usize,
    /// Fraction of the circle's perimeter supported by edge pixels.
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HoughResult {
    pub circles: Vec<Vec<Circle>>,
    pub likelihood: Image2<f64>,
    pub roi_center: (usize, usize),
}

/// Magnitude of DFT bin 1 along `t` for every `(x, y, z)`; phase discarded.
pub fn temporal_h1(v: &ScalarVolume) -> Result<H1Volume> {
    let [nx, ny, nz, nt] = v.dims();
    if nt < 2 {
        return Err(Error::arg(format!("temporal_h1 needs at least 2 frames, got {nt}")));
    }
    let (cos, sin): (Vec<f64>, Vec<f64>) = (0..nt)
        .map(|t| {
            let a = 2.0 * PI * t as f64 / nt as f64;
            (a.cos(), a.sin())
        })
        .unzip();
    let frame = nx * ny * nz;
    let data = v.data();
    let magnitudes = (0..frame)
        .into_par_iter()
        .map(|i| {
            let (mut re, mut im, mut peak) = (0.0, 0.0, 0.0_f64);
            for t in 0..nt {
                let x = data[t * frame + i];
                re += x * cos[t];
                im -= x * sin[t];
                peak = peak.max(x.abs());
            }
            let m = re.hypot(im);
            // Rounding residue of a flat series is not signal.
            if m <= ROUNDING_FLOOR * nt as f64 * peak {
                0.0
            } else {
                m
            }
        })
        .collect();
    Ok(H1Volume {
        dims: [nx, ny, nz],
        magnitudes,
    })
}

/// Zero every value strictly below `frac` times the volume maximum.
pub fn denoise_h1(h: &H1Volume, frac: f64) -> Result<H1Volume> {
    if !(0.0..1.0).contains(&frac) {
        return Err(Error::arg(format!("noise fraction must lie in [0, 1), got {frac}")));
    }
    let threshold = frac * h.max();
    Ok(H1Volume {
        dims: h.dims,
        magnitudes: h
            .magnitudes
            .iter()
            .map(|&m| if m < threshold { 0.0 } else { m })
            .collect(),
    })
}

/// Canny edges of one in-plane image.
pub fn canny_edges(slice: &Image2<f64>, sigma: f64, low: f64, high: f64) -> Result<Mask2> {
    canny(slice, CannyParams { sigma, low, high })
}

/// Integer pixel offsets on a circle of radius `r`, without duplicates.
fn circle_offsets(r: usize) -> Vec<(isize, isize)> {
    let steps = ((2.0 * PI * r as f64) * 4.0).ceil() as usize;
    let mut pts: Vec<(isize, isize)> = (0..steps)
        .map(|i| {
            let a = 2.0 * PI * i as f64 / steps as f64;
            (
                (r as f64 * a.cos()).round() as isize,
                (r as f64 * a.sin()).round() as isize,
            )
        })
        .collect();
    pts.sort_unstable();
    pts.dedup();
    pts
}

/// Circular Hough transform over integer radii in `[radius_min, radius_max]`.
///
/// Returns at most `top_p` circles by decreasing score. A candidate is
/// suppressed when a better circle has its center closer than `radius_min`
/// and a radius within two pixels, so concentric boundaries survive while
/// near-duplicates of one boundary do not.
pub fn hough_circles(edges: &Mask2, cfg: &RoiConfig) -> Result<Vec<Circle>> {
    cfg.validate()?;
    let pts = edges.points();
    if pts.is_empty() {
        return Ok(Vec::new());
    }
    let (w, h) = (edges.width(), edges.height());
    let radii: Vec<usize> = (cfg.radius_min..=cfg.radius_max).collect();
    let plane = w * h;

    let planes: Vec<(Vec<u32>, f64)> = radii
        .par_iter()
        .map(|&r| {
            let offs = circle_offsets(r);
            let mut acc = vec![0u32; plane];
            for &(px, py) in &pts {
                for &(dx, dy) in &offs {
                    let cx = px as isize - dx;
                    let cy = py as isize - dy;
                    if cx >= 0 && cy >= 0 && (cx as usize) < w && (cy as usize) < h {
                        acc[cy as usize * w + cx as usize] += 1;
                    }
                }
            }
            (acc, offs.len() as f64)
        })
        .collect();

    let min_sep2 = (cfg.radius_min * cfg.radius_min) as isize;
    let suppressed = |kept: &[Circle], x: usize, y: usize, r: usize| {
        kept.iter().any(|c| {
            let dx = c.center.0 as isize - x as isize;
            let dy = c.center.1 as isize - y as isize;
            dx * dx + dy * dy < min_sep2 && c.radius.abs_diff(r) <= RADIUS_SEPARATION
        })
    };

    let mut kept: Vec<Circle> = Vec::with_capacity(cfg.top_p);
    while kept.len() < cfg.top_p {
        let mut best: Option<Circle> = None;
        for (ri, (acc, n)) in planes.iter().enumerate() {
            let r = radii[ri];
            for (i, &votes) in acc.iter().enumerate() {
                if votes == 0 {
                    continue;
                }
                let score = votes as f64 / n;
                if best.is_some_and(|b| score <= b.score) {
                    continue;
                }
                let (x, y) = (i % w, i / w);
                if suppressed(&kept, x, y, r) {
                    continue;
                }
                best = Some(Circle {
                    center: (x, y),
                    radius: r,
                    score,
                });
            }
        }
        match best {
            Some(c) => kept.push(c),
            None => break,
        }
    }
    Ok(kept)
}

/// Add a truncated (3 sigma) isotropic Gaussian density of mass `weight`
/// centred at `center`.
fn cast_vote(surface: &mut Image2<f64>, center: (usize, usize), weight: f64, sigma: f64) {
    let reach = (3.0 * sigma).ceil() as isize;
    let norm = weight / (2.0 * PI * sigma * sigma);
    let denom = 2.0 * sigma * sigma;
    let (w, h) = (surface.width() as isize, surface.height() as isize);
    for dy in -reach..=reach {
        let y = center.1 as isize + dy;
        if y < 0 || y >= h {
            continue;
        }
        for dx in -reach..=reach {
            let x = center.0 as isize + dx;
            if x < 0 || x >= w {
                continue;
            }
            let g = norm * (-((dx * dx + dy * dy) as f64) / denom).exp();
            let i = y as usize * w as usize + x as usize;
            surface.data_mut()[i] += g;
        }
    }
}

/// Full localization: H1, denoising, per-slice Canny and Hough, Gaussian
/// center votes and the surface argmax (lowest `(y, x)` on ties).
pub fn locate_roi(v: &ScalarVolume, cfg: &RoiConfig) -> Result<HoughResult> {
    cfg.validate()?;
    let h1 = denoise_h1(&temporal_h1(v)?, cfg.h1_noise_frac)?;
    let [nx, ny, nz] = h1.dims();
    let canny_params = cfg.canny();

    let circles: Vec<Vec<Circle>> = (0..nz)
        .into_par_iter()
        .map(|z| {
            let edges = canny(&h1.slice(z), canny_params)?;
            hough_circles(&edges, cfg)
        })
        .collect::<Result<_>>()?;

    if circles.iter().all(|c| c.is_empty()) {
        return Err(Error::Locate(
            "no Hough circles found on any slice (no temporal variation?)".into(),
        ));
    }

    let mut likelihood = Image2::filled(nx, ny, 0.0);
    for c in circles.iter().flatten() {
        cast_vote(&mut likelihood, c.center, c.score, cfg.vote_sigma);
    }

    let mut best = (0usize, 0usize);
    let mut best_v = f64::NEG_INFINITY;
    for y in 0..ny {
        for x in 0..nx {
            let val = likelihood.get(x, y);
            if val > best_v {
                best_v = val;
                best = (x, y);
            }
        }
    }
    Ok(HoughResult {
        circles,
        likelihood,
        roi_center: best,
    })
}

/// Locate the ROI and cut the configured patch from every slice and frame.
pub fn extract_roi(v: &ScalarVolume, cfg: &RoiConfig) -> Result<(HoughResult, Patch<f64>)> {
    let res = locate_roi(v, cfg)?;
    let patch = crop_patch(v, res.roi_center, cfg.patch_size)?;
    Ok((res, patch))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series_volume(series: &[f64]) -> ScalarVolume {
        ScalarVolume::new([1, 1, 1, series.len()], [1.0; 4], series.to_vec()).unwrap()
    }

    fn cos_series(n: usize, harmonic: f64) -> Vec<f64> {
        (0..n)
            .map(|t| (2.0 * PI * harmonic * t as f64 / n as f64).cos())
            .collect()
    }

    #[test]
    fn h1_of_constant_is_zero() {
        let h = temporal_h1(&series_volume(&[3.0; 30])).unwrap();
        assert!(h.magnitudes()[0] < 1e-12);
    }

    #[test]
    fn h1_of_fundamental_is_half_length() {
        let h = temporal_h1(&series_volume(&cos_series(30, 1.0))).unwrap();
        assert!((h.magnitudes()[0] - 15.0).abs() / 15.0 < 1e-9);
    }

    #[test]
    fn h1_ignores_second_harmonic() {
        let h = temporal_h1(&series_volume(&cos_series(30, 2.0))).unwrap();
        assert!(h.magnitudes()[0] < 1e-9);
    }

    #[test]
    fn h1_needs_two_frames() {
        assert!(temporal_h1(&series_volume(&[1.0])).is_err());
    }

    #[test]
    fn h1_invariant_to_dc_shift_and_circular_shift() {
        let base: Vec<f64> = (0..24).map(|t| ((t * 37) % 11) as f64 * 0.3).collect();
        let h0 = temporal_h1(&series_volume(&base)).unwrap().magnitudes()[0];
        let shifted: Vec<f64> = base.iter().map(|v| v + 17.0).collect();
        let h1 = temporal_h1(&series_volume(&shifted)).unwrap().magnitudes()[0];
        let mut rotated = base.clone();
        rotated.rotate_left(5);
        let h2 = temporal_h1(&series_volume(&rotated)).unwrap().magnitudes()[0];
        assert!((h0 - h1).abs() < 1e-9 * h0.max(1.0));
        assert!((h0 - h2).abs() < 1e-9 * h0.max(1.0));
    }

    #[test]
    fn denoise_threshold_is_strict() {
        let h = H1Volume::new([4, 1, 1], vec![100.0, 0.5, 1.0, 2.0]).unwrap();
        let d = denoise_h1(&h, 0.01).unwrap();
        assert_eq!(d.magnitudes(), &[100.0, 0.0, 1.0, 2.0]);
        let z = H1Volume::new([2, 1, 1], vec![0.0, 0.0]).unwrap();
        assert_eq!(denoise_h1(&z, 0.01).unwrap().magnitudes(), &[0.0, 0.0]);
        assert!(denoise_h1(&h, 1.0).is_err());
    }

    fn ring(w: usize, h: usize, cx: f64, cy: f64, radii: &[f64]) -> Mask2 {
        let mut m = Image2::filled(w, h, false);
        for &r in radii {
            for (dx, dy) in circle_offsets(r as usize) {
                let x = (cx as isize + dx) as usize;
                let y = (cy as isize + dy) as usize;
                m.set(x, y, true);
            }
        }
        m
    }

    #[test]
    fn hough_finds_single_ring() {
        let edges = ring(80, 80, 40.0, 40.0, &[12.0]);
        let cfg = RoiConfig::default();
        let circles = hough_circles(&edges, &cfg).unwrap();
        let top = circles[0];
        assert!(top.center.0.abs_diff(40) <= 1 && top.center.1.abs_diff(40) <= 1);
        assert!(top.radius.abs_diff(12) <= 1);
        assert!(circles.len() <= cfg.top_p);
        assert!(circles.windows(2).all(|p| p[0].score >= p[1].score));
    }

    #[test]
    fn hough_empty_edges() {
        let edges = Image2::filled(32, 32, false);
        assert!(hough_circles(&edges, &RoiConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn hough_concentric_rings_share_center() {
        let edges = ring(80, 80, 40.0, 40.0, &[10.0, 14.0]);
        let circles = hough_circles(&edges, &RoiConfig::default()).unwrap();
        let (a, b) = (circles[0], circles[1]);
        assert!(a.center.0.abs_diff(b.center.0) <= 1 && a.center.1.abs_diff(b.center.1) <= 1);
        let mut radii = [a.radius, b.radius];
        radii.sort();
        assert!(radii[0].abs_diff(10) <= 1 && radii[1].abs_diff(14) <= 1);
    }

    #[test]
    fn hough_scores_translation_invariant() {
        let a = hough_circles(&ring(100, 100, 40.0, 40.0, &[12.0]), &RoiConfig::default()).unwrap();
        let b = hough_circles(&ring(100, 100, 55.0, 47.0, &[12.0]), &RoiConfig::default()).unwrap();
        assert_eq!(a[0].score, b[0].score);
        assert_eq!(a[0].radius, b[0].radius);
        assert_eq!((a[0].center.0 + 15, a[0].center.1 + 7), b[0].center);
    }

    #[test]
    fn vote_mass_matches_score_for_interior_center() {
        let mut s = Image2::filled(100, 100, 0.0);
        cast_vote(&mut s, (50, 50), 2.5, 8.0);
        cast_vote(&mut s, (45, 52), 0.5, 8.0);
        let total: f64 = s.data().iter().sum();
        assert!(s.data().iter().all(|&v| v >= 0.0));
        assert!((total - 3.0).abs() / 3.0 < 0.01, "total {total}");
    }

    #[test]
    fn config_validation() {
        let mut c = RoiConfig::default();
        assert!(c.validate().is_ok());
        c.radius_min = 40;
        assert!(c.validate().is_err());
        let c = RoiConfig {
            top_p: 0,
            ..RoiConfig::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn static_video_fails_to_locate() {
        let data: Vec<f64> = (0..64 * 64 * 10).map(|i| ((i % 64) as f64 / 7.0).sin()).collect();
        let frame: Vec<f64> = data[..64 * 64].to_vec();
        let cine: Vec<f64> = (0..10).flat_map(|_| frame.iter().copied()).collect();
        let v = ScalarVolume::new([64, 64, 1, 10], [1.0; 4], cine).unwrap();
        assert!(matches!(locate_roi(&v, &RoiConfig::default()), Err(Error::Locate(_))));
    }
}
