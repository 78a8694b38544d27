//! Data augmentation for 2D slices: rotation, translation, zoom and a
//! B-spline elastic field composed into one backward map, plus additive
//! Gaussian noise and optional flips.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::Image2;
use crate::volume::BG;

/// Displacement vectors (mm) of a 2x2 control grid, indexed `[row][col]`.
pub type ElasticGrid = [[(f64, f64); 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    /// Counter-clockwise rotation about the image centre.
    pub angle_deg: f64,
    pub shift_mm: (f64, f64),
    pub zoom: f64,
    pub noise_sigma: f64,
    pub elastic_grid: ElasticGrid,
    #[serde(default)]
    pub noise_seed: u64,
    #[serde(default)]
    pub flip_h: bool,
    #[serde(default)]
    pub flip_v: bool,
}

impl AugmentParams {
    pub fn identity() -> Self {
        Self {
            angle_deg: 0.0,
            shift_mm: (0.0, 0.0),
            zoom: 1.0,
            noise_sigma: 0.0,
            elastic_grid: [[(0.0, 0.0); 2]; 2],
            noise_seed: 0,
            flip_h: false,
            flip_v: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.zoom > 0.0 && self.zoom.is_finite()) {
            return Err(Error::arg(format!("zoom must be > 0, got {}", self.zoom)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg(format!(
                "noise_sigma must be >= 0, got {}",
                self.noise_sigma
            )));
        }
        let finite = self.angle_deg.is_finite()
            && self.shift_mm.0.is_finite()
            && self.shift_mm.1.is_finite()
            && self
                .elastic_grid
                .iter()
                .flatten()
                .all(|d| d.0.is_finite() && d.1.is_finite());
        if !finite {
            return Err(Error::arg("augmentation parameters must be finite"));
        }
        Ok(())
    }
}

/// Sampling ranges for [`sample_params_with`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentRanges {
    pub max_angle_deg: f64,
    pub max_shift_mm: f64,
    pub zoom: (f64, f64),
    pub noise_sigma: f64,
    pub max_elastic_mm: f64,
    pub flips: bool,
}

impl Default for AugmentRanges {
    fn default() -> Self {
        Self {
            max_angle_deg: 5.0,
            max_shift_mm: 5.0,
            zoom: (0.8, 1.2),
            noise_sigma: 0.01,
            max_elastic_mm: 3.0,
            flips: false,
        }
    }
}

pub fn sample_params(seed: u64) -> AugmentParams {
    sample_params_with(seed, &AugmentRanges::default())
}

pub fn sample_params_with(seed: u64, r: &AugmentRanges) -> AugmentParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut sym = |m: f64| if m > 0.0 { rng.random_range(-m..=m) } else { 0.0 };
    let angle_deg = sym(r.max_angle_deg);
    let shift_mm = (sym(r.max_shift_mm), sym(r.max_shift_mm));
    let mut grid = [[(0.0, 0.0); 2]; 2];
    for d in grid.iter_mut().flatten() {
        *d = (sym(r.max_elastic_mm), sym(r.max_elastic_mm));
    }
    let zoom = if r.zoom.1 > r.zoom.0 {
        rng.random_range(r.zoom.0..=r.zoom.1)
    } else {
        r.zoom.0
    };
    let noise_seed = rng.next_u64();
    let (flip_h, flip_v) = if r.flips {
        (rng.random_bool(0.5), rng.random_bool(0.5))
    } else {
        (false, false)
    };
    AugmentParams {
        angle_deg,
        shift_mm,
        zoom,
        noise_sigma: r.noise_sigma,
        elastic_grid: grid,
        noise_seed,
        flip_h,
        flip_v,
    }
}

/// Weights of the two control points along one axis at `u` in `[0, 1]`,
/// using a uniform cubic B-spline over the edge-replicated lattice
/// `[p0, p0, p1, p1]`.
fn bspline_pair(u: f64) -> (f64, f64) {
    let u2 = u * u;
    let u3 = u2 * u;
    let b0 = (1.0 - u).powi(3) / 6.0;
    let b1 = (3.0 * u3 - 6.0 * u2 + 4.0) / 6.0;
    let b2 = (-3.0 * u3 + 3.0 * u2 + 3.0 * u + 1.0) / 6.0;
    let b3 = u3 / 6.0;
    (b0 + b1, b2 + b3)
}

/// Dense displacement field (mm) on the `w x h` pixel lattice.
pub fn elastic_field(grid: &ElasticGrid, w: usize, h: usize) -> Image2<(f64, f64)> {
    let frac = |i: usize, n: usize| if n > 1 { i as f64 / (n - 1) as f64 } else { 0.0 };
    let wx: Vec<(f64, f64)> = (0..w).map(|x| bspline_pair(frac(x, w))).collect();
    let wy: Vec<(f64, f64)> = (0..h).map(|y| bspline_pair(frac(y, h))).collect();
    Image2::from_fn(w, h, |x, y| {
        let (ax0, ax1) = wx[x];
        let (ay0, ay1) = wy[y];
        let terms = [
            (ay0 * ax0, grid[0][0]),
            (ay0 * ax1, grid[0][1]),
            (ay1 * ax0, grid[1][0]),
            (ay1 * ax1, grid[1][1]),
        ];
        terms
            .iter()
            .fold((0.0, 0.0), |acc, &(wt, d)| (acc.0 + wt * d.0, acc.1 + wt * d.1))
    })
}

fn sample_bilinear(img: &Image2<f64>, sx: f64, sy: f64) -> f64 {
    let (w, h) = (img.width() as f64, img.height() as f64);
    if !(sx >= 0.0 && sy >= 0.0 && sx <= w - 1.0 && sy <= h - 1.0) {
        return 0.0;
    }
    let (x0, y0) = (sx.floor(), sy.floor());
    let (fx, fy) = (sx - x0, sy - y0);
    let (x0, y0) = (x0 as usize, y0 as usize);
    if fx == 0.0 && fy == 0.0 {
        return img.get(x0, y0);
    }
    let x1 = (x0 + 1).min(img.width() - 1);
    let y1 = (y0 + 1).min(img.height() - 1);
    let top = img.get(x0, y0) * (1.0 - fx) + img.get(x1, y0) * fx;
    let bottom = img.get(x0, y1) * (1.0 - fx) + img.get(x1, y1) * fx;
    top * (1.0 - fy) + bottom * fy
}

fn sample_nearest(lbl: &Image2<u8>, sx: f64, sy: f64) -> u8 {
    let (x, y) = ((sx + 0.5).floor(), (sy + 0.5).floor());
    if x < 0.0 || y < 0.0 || x >= lbl.width() as f64 || y >= lbl.height() as f64 {
        return BG;
    }
    lbl.get(x as usize, y as usize)
}

/// Source coordinates (pixels) for every output pixel.
fn backward_map(w: usize, h: usize, p: &AugmentParams, spacing: (f64, f64)) -> Image2<(f64, f64)> {
    let (sx, sy) = spacing;
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let theta = p.angle_deg.to_radians();
    let (sin, cos) = theta.sin_cos();
    // Inverse rotation and zoom in physical space, expressed on pixel indices.
    let m00 = cos / p.zoom;
    let m01 = sin * sy / (sx * p.zoom);
    let m10 = -sin * sx / (sy * p.zoom);
    let m11 = cos / p.zoom;
    let (tx, ty) = (p.shift_mm.0 / sx, p.shift_mm.1 / sy);
    let has_elastic = p.elastic_grid.iter().flatten().any(|d| *d != (0.0, 0.0));
    let field = has_elastic.then(|| elastic_field(&p.elastic_grid, w, h));
    Image2::from_fn(w, h, |x, y| {
        let dx = x as f64 - cx - tx;
        let dy = y as f64 - cy - ty;
        let mut s = (m00 * dx + m01 * dy + cx, m10 * dx + m11 * dy + cy);
        if let Some(f) = &field {
            let (ex, ey) = f.get(x, y);
            s.0 += ex / sx;
            s.1 += ey / sy;
        }
        s
    })
}

fn flip<T: Copy>(img: &Image2<T>, h: bool, v: bool) -> Image2<T> {
    let (w, ht) = (img.width(), img.height());
    Image2::from_fn(w, ht, |x, y| {
        let sx = if h { w - 1 - x } else { x };
        let sy = if v { ht - 1 - y } else { y };
        img.get(sx, sy)
    })
}

/// Applies `p` to an image and optional label map with one resampling pass.
/// Samples falling outside the grid read as 0 (image) and background (labels).
pub fn apply_augment(
    img: &Image2<f64>,
    lbl: Option<&Image2<u8>>,
    p: &AugmentParams,
    spacing: (f64, f64),
) -> Result<(Image2<f64>, Option<Image2<u8>>)> {
    p.validate()?;
    if !(spacing.0 > 0.0 && spacing.1 > 0.0) {
        return Err(Error::arg(format!("spacing must be > 0, got {spacing:?}")));
    }
    let (w, h) = (img.width(), img.height());
    if let Some(l) = lbl {
        if (l.width(), l.height()) != (w, h) {
            return Err(Error::Size {
                expected: w * h,
                actual: l.width() * l.height(),
            });
        }
    }
    let map = backward_map(w, h, p, spacing);
    let mut out = Image2::from_fn(w, h, |x, y| {
        let (sx, sy) = map.get(x, y);
        sample_bilinear(img, sx, sy)
    });
    let mut out_lbl = lbl.map(|l| {
        Image2::from_fn(w, h, |x, y| {
            let (sx, sy) = map.get(x, y);
            sample_nearest(l, sx, sy)
        })
    });
    if p.flip_h || p.flip_v {
        out = flip(&out, p.flip_h, p.flip_v);
        out_lbl = out_lbl.map(|l| flip(&l, p.flip_h, p.flip_v));
    }
    if p.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, p.noise_sigma).map_err(|e| Error::arg(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(p.noise_seed);
        for v in out.data_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    Ok((out, out_lbl))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn disk(w: usize, h: usize, r: f64) -> Image2<u8> {
        let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
        Image2::from_fn(w, h, |x, y| u8::from((x as f64 - cx).hypot(y as f64 - cy) <= r))
    }

    fn ramp(w: usize, h: usize) -> Image2<f64> {
        Image2::from_fn(w, h, |x, y| ((x * 7 + y * 13) % 17) as f64 / 17.0)
    }

    #[test]
    fn identity_is_exact() {
        let img = ramp(33, 20);
        let lbl = Image2::from_fn(33, 20, |x, y| ((x + y) % 4) as u8);
        for spacing in [(1.0, 1.0), (0.7, 1.3), (1.5625, 1.5625)] {
            let (o, l) = apply_augment(&img, Some(&lbl), &AugmentParams::identity(), spacing).unwrap();
            assert_eq!(o, img);
            assert_eq!(l.unwrap(), lbl);
        }
    }

    #[test]
    fn integer_shift_moves_content() {
        let img = ramp(40, 30);
        let lbl = disk(40, 30, 6.0);
        let p = AugmentParams {
            shift_mm: (5.0, 0.0),
            ..AugmentParams::identity()
        };
        let (o, l) = apply_augment(&img, Some(&lbl), &p, (1.0, 1.0)).unwrap();
        let l = l.unwrap();
        for y in 0..30 {
            for x in 0..40 {
                if x >= 5 {
                    assert_eq!(o.get(x, y), img.get(x - 5, y));
                    assert_eq!(l.get(x, y), lbl.get(x - 5, y));
                } else {
                    assert_eq!(o.get(x, y), 0.0);
                }
            }
        }
        let count = |m: &Image2<u8>| m.data().iter().filter(|&&v| v == 1).count();
        assert_eq!(count(&l), count(&lbl));
    }

    #[test]
    fn zoom_doubles_a_disk() {
        let lbl = disk(64, 64, 10.0);
        let p = AugmentParams {
            zoom: 2.0,
            ..AugmentParams::identity()
        };
        let (_, l) = apply_augment(&Image2::filled(64, 64, 0.0), Some(&lbl), &p, (1.0, 1.0)).unwrap();
        let l = l.unwrap();
        let row: Vec<usize> = (0..64).filter(|&x| l.get(x, 32) == 1).collect();
        let radius = (row.last().unwrap() - row.first().unwrap() + 1) as f64 / 2.0;
        assert!((radius - 20.0).abs() <= 1.0, "radius {radius}");
        let area = l.data().iter().filter(|&&v| v == 1).count() as f64;
        let r_area = (area / std::f64::consts::PI).sqrt();
        assert!((r_area - 20.0).abs() <= 1.0, "area radius {r_area}");
    }

    #[test]
    fn zero_elastic_plus_rotation_equals_rotation() {
        let img = ramp(31, 31);
        let rot = AugmentParams {
            angle_deg: 4.0,
            ..AugmentParams::identity()
        };
        let a = apply_augment(&img, None, &rot, (1.2, 1.2)).unwrap().0;
        let with_grid = AugmentParams {
            elastic_grid: [[(0.0, -0.0); 2]; 2],
            ..rot.clone()
        };
        let b = apply_augment(&img, None, &with_grid, (1.2, 1.2)).unwrap().0;
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn rotation_by_ninety_degrees_permutes_pixels() {
        let img = ramp(21, 21);
        let p = AugmentParams {
            angle_deg: 90.0,
            ..AugmentParams::identity()
        };
        let o = apply_augment(&img, None, &p, (1.0, 1.0)).unwrap().0;
        for y in 0..21 {
            for x in 0..21 {
                // Counter-clockwise in (x, y): output (x, y) reads source (y, 20 - x).
                assert!((o.get(x, y) - img.get(y, 20 - x)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn elastic_field_is_bounded_and_smooth() {
        let grid = [[(3.0, -3.0), (-3.0, 3.0)], [(2.0, 1.0), (-1.0, -2.0)]];
        let f = elastic_field(&grid, 50, 40);
        for &(dx, dy) in f.data() {
            assert!(dx.abs() <= 3.0 + 1e-12 && dy.abs() <= 3.0 + 1e-12);
        }
        let uniform = elastic_field(&[[(1.5, -2.0); 2]; 2], 9, 9);
        for &(dx, dy) in uniform.data() {
            assert!((dx - 1.5).abs() < 1e-12 && (dy + 2.0).abs() < 1e-12);
        }
        // Neighbouring displacements differ by a small fraction of the grid range.
        for y in 0..40 {
            for x in 1..50 {
                assert!((f.get(x, y).0 - f.get(x - 1, y).0).abs() < 0.2);
            }
        }
    }

    #[test]
    fn noise_is_seeded_and_image_only() {
        let img = Image2::filled(16, 16, 0.5);
        let lbl = disk(16, 16, 4.0);
        let p = AugmentParams {
            noise_sigma: 0.01,
            noise_seed: 9,
            ..AugmentParams::identity()
        };
        let (a, la) = apply_augment(&img, Some(&lbl), &p, (1.0, 1.0)).unwrap();
        let (b, _) = apply_augment(&img, Some(&lbl), &p, (1.0, 1.0)).unwrap();
        assert_eq!(a, b);
        assert_eq!(la.unwrap(), lbl);
        let resid: Vec<f64> = a.data().iter().map(|v| v - 0.5).collect();
        let sd = crate::stats::std_pop(&resid).unwrap();
        assert!((sd - 0.01).abs() < 0.002, "sd {sd}");
    }

    #[test]
    fn flips_mirror_both_channels() {
        let img = ramp(5, 4);
        let lbl = Image2::from_fn(5, 4, |x, _| x as u8);
        let p = AugmentParams {
            flip_h: true,
            ..AugmentParams::identity()
        };
        let (o, l) = apply_augment(&img, Some(&lbl), &p, (1.0, 1.0)).unwrap();
        assert_eq!(o.get(0, 2), img.get(4, 2));
        assert_eq!(l.unwrap().get(0, 0), 4);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let img = ramp(8, 8);
        let bad_zoom = AugmentParams {
            zoom: 0.0,
            ..AugmentParams::identity()
        };
        assert!(apply_augment(&img, None, &bad_zoom, (1.0, 1.0)).is_err());
        assert!(apply_augment(&img, None, &AugmentParams::identity(), (0.0, 1.0)).is_err());
        let lbl = Image2::filled(7, 8, 0u8);
        assert!(apply_augment(&img, Some(&lbl), &AugmentParams::identity(), (1.0, 1.0)).is_err());
    }

    #[test]
    fn sampling_is_reproducible_and_bounded() {
        assert_eq!(sample_params(17), sample_params(17));
        assert_ne!(sample_params(17), sample_params(18));
        for seed in 0..10_000 {
            let p = sample_params(seed);
            assert!(p.angle_deg.abs() <= 5.0);
            assert!(p.shift_mm.0.abs() <= 5.0 && p.shift_mm.1.abs() <= 5.0);
            assert!((0.8..=1.2).contains(&p.zoom));
            assert_eq!(p.noise_sigma, 0.01);
            assert!(p
                .elastic_grid
                .iter()
                .flatten()
                .all(|d| d.0.abs() <= 3.0 && d.1.abs() <= 3.0));
            assert!(!p.flip_h && !p.flip_v);
        }
        let flips = AugmentRanges {
            flips: true,
            ..AugmentRanges::default()
        };
        let n = (0..200).filter(|&s| sample_params_with(s, &flips).flip_h).count();
        assert!((60..140).contains(&n));
    }

    #[test]
    fn params_round_trip_through_json() {
        let p = sample_params(3);
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<AugmentParams>(&s).unwrap(), p);
    }

    proptest! {
        #[test]
        fn labels_never_invent_classes(seed in 0u64..1000, present in proptest::collection::vec(0u8..4, 1..4)) {
            let lbl = Image2::from_fn(24, 24, |x, y| present[(x / 6 + y / 6) % present.len()]);
            let p = sample_params(seed);
            let (_, l) = apply_augment(&Image2::filled(24, 24, 0.0), Some(&lbl), &p, (1.3, 1.3)).unwrap();
            for &v in l.unwrap().data() {
                prop_assert!(v == BG || present.contains(&v));
            }
        }
    }
}
