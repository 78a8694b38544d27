//! Synthetic cine volumes and label maps for demos and tests.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diagnosis::DiseaseLabel;
use crate::error::Result;
use crate::volume::{LabelVolume, ScalarVolume, BG, LV, MYO, RV};

/// Deterministic texture value in `[0, 1)` for a pixel.
fn texture(x: usize, y: usize, seed: u64) -> f64 {
    let mut h = (x as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ (y as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
        ^ seed.wrapping_mul(0x1656_67B1_9E37_79F9);
    h ^= h >> 29;
    h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    h ^= h >> 32;
    (h >> 11) as f64 / (1u64 << 53) as f64
}

/// Relative phase of frame `t`: 0 at end-diastole (frame 0), 1 at
/// end-systole (frame `nt / 2`).
pub fn cardiac_phase(t: usize, nt: usize) -> f64 {
    0.5 - 0.5 * (2.0 * PI * t as f64 / nt as f64).cos()
}

/// A bright disk whose radius oscillates between `radius.0` (frame 0) and
/// `radius.1` over `nt` frames, on a static textured background.
pub fn pulsating_disk(
    size: (usize, usize, usize),
    nt: usize,
    center: (f64, f64),
    radius: (f64, f64),
    seed: u64,
) -> Result<ScalarVolume> {
    let (nx, ny, nz) = size;
    let mut data = Vec::with_capacity(nx * ny * nz * nt);
    for t in 0..nt {
        let r = radius.0 + (radius.1 - radius.0) * cardiac_phase(t, nt);
        for _ in 0..nz {
            for y in 0..ny {
                for x in 0..nx {
                    let d = (x as f64 - center.0).hypot(y as f64 - center.1);
                    let bg = 0.1 + 0.3 * texture(x, y, seed);
                    data.push(if d <= r { 1.0 } else { bg });
                }
            }
        }
    }
    ScalarVolume::new([nx, ny, nz, nt], [1.5, 1.5, 8.0, 1.0], data)
}

/// Ventricular geometry in pixels at end-diastole and end-systole.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeartGeometry {
    pub lv_radius: (f64, f64),
    pub wall: (f64, f64),
    pub rv_radius: (f64, f64),
    /// Angular width (radians) of a thinned wall sector; 0 for none.
    pub scar_width: f64,
    /// Wall thickness multiplier inside the thinned sector.
    pub scar_factor: f64,
}

impl HeartGeometry {
    pub fn normal() -> Self {
        Self {
            lv_radius: (16.0, 10.0),
            wall: (5.0, 7.0),
            rv_radius: (12.0, 8.0),
            scar_width: 0.0,
            scar_factor: 1.0,
        }
    }

    /// Typical geometry of a diagnostic class with up to `jitter` relative
    /// variation in every dimension.
    pub fn sample(label: DiseaseLabel, jitter: f64, rng: &mut impl Rng) -> Self {
        let base = match label {
            DiseaseLabel::Nor => Self::normal(),
            DiseaseLabel::Dcm => Self {
                lv_radius: (22.0, 19.0),
                wall: (3.0, 3.5),
                ..Self::normal()
            },
            DiseaseLabel::Hcm => Self {
                lv_radius: (13.0, 6.0),
                wall: (9.0, 11.0),
                rv_radius: (11.0, 7.0),
                ..Self::normal()
            },
            DiseaseLabel::Minf => Self {
                lv_radius: (19.0, 15.0),
                wall: (5.0, 6.0),
                scar_width: 2.0 * PI / 3.0,
                scar_factor: 0.4,
                ..Self::normal()
            },
            DiseaseLabel::Arv => Self {
                lv_radius: (15.0, 10.0),
                rv_radius: (20.0, 17.0),
                ..Self::normal()
            },
        };
        let mut j = |v: f64| v * (1.0 + rng.random_range(-jitter..=jitter));
        let (es_lv, es_wall, es_rv) = (j(base.lv_radius.1), j(base.wall.1), j(base.rv_radius.1));
        Self {
            lv_radius: (j(base.lv_radius.0), es_lv),
            wall: (j(base.wall.0), es_wall),
            rv_radius: (j(base.rv_radius.0), es_rv),
            ..base
        }
    }

    fn at(&self, phase: f64) -> (f64, f64, f64) {
        let lerp = |p: (f64, f64)| p.0 + (p.1 - p.0) * phase;
        (lerp(self.lv_radius), lerp(self.wall), lerp(self.rv_radius))
    }
}

/// Label of pixel offset `(dx, dy)` from the LV centre on a slice scaled by
/// `scale` towards the apex.
fn classify(g: &HeartGeometry, phase: f64, scale: f64, dx: f64, dy: f64) -> u8 {
    let (lv, wall, rv) = g.at(phase);
    let (lv, rv) = (lv * scale, rv * scale);
    let r = dx.hypot(dy);
    if r <= lv {
        return LV;
    }
    let angle = dy.atan2(dx);
    let in_scar = g.scar_width > 0.0 && (angle - PI / 2.0).abs() <= g.scar_width / 2.0;
    let w = if in_scar { wall * g.scar_factor } else { wall };
    if r <= lv + w {
        return MYO;
    }
    let rv_cx = -(lv + wall + 0.6 * rv);
    if (dx - rv_cx).hypot(dy) <= rv {
        return RV;
    }
    BG
}

pub const PHANTOM_SPACING: [f64; 3] = [1.5, 1.5, 8.0];

/// Label volume of a heart at `phase` centred at `center`.
pub fn heart_labels(
    g: &HeartGeometry,
    phase: f64,
    size: (usize, usize, usize),
    center: (f64, f64),
) -> Result<LabelVolume> {
    let (nx, ny, nz) = size;
    let mut labels = Vec::with_capacity(nx * ny * nz);
    for z in 0..nz {
        let scale = 1.0 - 0.25 * z as f64 / nz.max(1) as f64;
        for y in 0..ny {
            for x in 0..nx {
                labels.push(classify(g, phase, scale, x as f64 - center.0, y as f64 - center.1));
            }
        }
    }
    LabelVolume::new_3d([nx, ny, nz], PHANTOM_SPACING, labels)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhantomCase {
    pub cine: ScalarVolume,
    /// Labels of frame 0.
    pub ed: LabelVolume,
    /// Labels of frame `nt / 2`.
    pub es: LabelVolume,
    pub center: (f64, f64),
}

/// Cine of a beating heart with matching end-diastolic and end-systolic
/// label maps.
pub fn heart_case(
    g: &HeartGeometry,
    size: (usize, usize, usize),
    nt: usize,
    center: (f64, f64),
    seed: u64,
) -> Result<PhantomCase> {
    let (nx, ny, nz) = size;
    let mut data = Vec::with_capacity(nx * ny * nz * nt);
    for t in 0..nt {
        let frame = heart_labels(g, cardiac_phase(t, nt), size, center)?;
        for (i, &l) in frame.labels().iter().enumerate() {
            let (x, y) = (i % nx, (i / nx) % ny);
            data.push(match l {
                LV | RV => 0.9,
                MYO => 0.35,
                _ => 0.1 + 0.2 * texture(x, y, seed),
            });
        }
    }
    let [sx, sy, sz] = PHANTOM_SPACING;
    Ok(PhantomCase {
        cine: ScalarVolume::new([nx, ny, nz, nt], [sx, sy, sz, 1.0], data)?,
        ed: heart_labels(g, 0.0, size, center)?,
        es: heart_labels(g, 1.0, size, center)?,
        center,
    })
}

/// The default demo case: a normal heart in a 128x128x3 cine of 20 frames.
pub fn demo_case(seed: u64) -> Result<PhantomCase> {
    heart_case(&HeartGeometry::normal(), (128, 128, 3), 20, (60.0, 66.0), seed)
}

/// Labelled end-diastolic and end-systolic maps for `per_class` cases of every
/// diagnostic class.
pub fn cohort(per_class: usize, seed: u64) -> Result<Vec<(String, DiseaseLabel, LabelVolume, LabelVolume)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(per_class * DiseaseLabel::ALL.len());
    for label in DiseaseLabel::ALL {
        for i in 0..per_class {
            let g = HeartGeometry::sample(label, 0.1, &mut rng);
            let size = (96, 96, 3);
            let c = (48.0 + rng.random_range(-2.0..2.0), 48.0 + rng.random_range(-2.0..2.0));
            out.push((
                format!("{}_{i:03}", label.as_str().to_ascii_lowercase()),
                label,
                heart_labels(&g, 0.0, size, c)?,
                heart_labels(&g, 1.0, size, c)?,
            ));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phases_hit_diastole_and_systole() {
        assert_eq!(cardiac_phase(0, 20), 0.0);
        assert!((cardiac_phase(10, 20) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn heart_has_every_class_and_shrinks_at_systole() {
        let case = demo_case(1).unwrap();
        for c in [RV, MYO, LV] {
            assert!(case.ed.count(c) > 0 && case.es.count(c) > 0);
        }
        assert!(case.es.count(LV) < case.ed.count(LV));
        assert_eq!(case.cine.dims(), [128, 128, 3, 20]);
    }

    #[test]
    fn disk_radius_follows_phase() {
        let v = pulsating_disk((40, 40, 1), 30, (20.0, 20.0), (10.0, 14.0), 3).unwrap();
        let bright = |t: usize| v.slice(0, t).data().iter().filter(|&&p| p == 1.0).count();
        assert!(bright(15) > bright(0));
    }

    #[test]
    fn cohort_is_balanced_and_deterministic() {
        let a = cohort(2, 5).unwrap();
        assert_eq!(a.len(), 10);
        assert_eq!(a, cohort(2, 5).unwrap());
    }
}
