//! Reference loss kernels: the spatial weight map, spatially weighted
//! cross-entropy, soft Dice with mini-batch class weights, the combined loss
//! and its analytic gradient with respect to the logits.
//!
//! Fields are stored voxel-major: `data[v * classes + c]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{canny, dilate_cross, CannyParams, Image2};
use crate::stats;
use crate::volume::{LabelSchema, LabelVolume, ScalarVolume};

/// Floor applied to target-class probabilities inside the logarithm.
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    /// Cross-entropy weight.
    pub lambda: f64,
    /// Dice weight.
    pub gamma: f64,
    /// L2 weight-decay factor.
    pub eta: f64,
    /// Dice smoothing added to numerator and denominator.
    pub epsilon: f64,
    /// Use `2 * sum(p g)` in the Dice numerator.
    pub dice_two_factor: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda: 1.0,
            gamma: 1.0,
            eta: 5e-4,
            epsilon: 1e-5,
            dice_two_factor: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0) {
            return Err(Error::arg("epsilon must be > 0"));
        }
        if !(self.lambda >= 0.0 && self.gamma >= 0.0 && self.eta >= 0.0) {
            return Err(Error::arg("lambda, gamma and eta must be >= 0"));
        }
        Ok(())
    }
}

/// Per-voxel, per-class scores, voxel-major.
#[derive(Clone, Debug, PartialEq)]
pub struct ClassField {
    classes: usize,
    data: Vec<f64>,
}

/// Pre-softmax scores.
pub type LogitsField = ClassField;
/// Per-voxel class posteriors; each voxel lies on the simplex.
pub type ProbVolume = ClassField;

impl ClassField {
    pub fn new(classes: usize, data: Vec<f64>) -> Result<Self> {
        if classes == 0 || !data.len().is_multiple_of(classes) {
            return Err(Error::arg(format!(
                "field length {} is not a multiple of {classes} classes",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::arg("field values must be finite"));
        }
        Ok(Self { classes, data })
    }

    /// Channel-last view of a scalar volume whose `t` axis indexes classes.
    pub fn from_channel_volume(v: &ScalarVolume) -> Result<Self> {
        let [nx, ny, nz, nc] = v.dims();
        let n = nx * ny * nz;
        let src = v.data();
        let mut data = vec![0.0; n * nc];
        for c in 0..nc {
            for i in 0..n {
                data[i * nc + c] = src[c * n + i];
            }
        }
        Self::new(nc, data)
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn voxels(&self) -> usize {
        self.data.len() / self.classes
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn voxel(&self, v: usize) -> &[f64] {
        &self.data[v * self.classes..(v + 1) * self.classes]
    }

    /// Scores of one class across all voxels.
    pub fn channel(&self, c: usize) -> Vec<f64> {
        self.data.iter().skip(c).step_by(self.classes).copied().collect()
    }
}

/// Non-negative per-voxel weights.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightMap {
    data: Vec<f64>,
}

impl WeightMap {
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::arg("weights must be finite and non-negative"));
        }
        Ok(Self { data })
    }

    pub fn uniform(n: usize) -> Self {
        Self { data: vec![1.0; n] }
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

/// Split of a weight map into its class-frequency and contour terms.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightTerms {
    pub class_term: Vec<f64>,
    pub contour_term: Vec<f64>,
    /// Contour voxels per class id (after dilation, restricted to the class).
    pub contours: Vec<(u8, Vec<bool>)>,
}

/// Weight terms for one label slice.
///
/// Class term: `|N| / |T_l|` on every voxel of class `l`. Contour term:
/// `|N| / |C_l|` on `C_l`, the Canny (sigma 1) contour of the class mask,
/// dilated `dilate_iters` times with the 3x3 cross and clipped to the class.
/// Classes without contour voxels get no contour term.
pub fn weight_terms(slice: &Image2<u8>, schema: &LabelSchema, dilate_iters: usize) -> Result<WeightTerms> {
    let n = slice.len();
    let total = n as f64;
    let mut class_term = vec![0.0; n];
    let mut contour_term = vec![0.0; n];
    let mut contours = Vec::new();
    for id in schema.ids() {
        let count = slice.data().iter().filter(|&&l| l == id).count();
        if count == 0 {
            continue;
        }
        let share = total / count as f64;
        for (w, &l) in class_term.iter_mut().zip(slice.data()) {
            if l == id {
                *w = share;
            }
        }
        let mask = slice.map(|l| if l == id { 1.0 } else { 0.0 });
        let edges = canny(&mask, CannyParams::default())?;
        let grown = dilate_cross(&edges, dilate_iters);
        let contour: Vec<bool> = grown
            .data()
            .iter()
            .zip(slice.data())
            .map(|(&e, &l)| e && l == id)
            .collect();
        let c_count = contour.iter().filter(|&&b| b).count();
        if c_count > 0 {
            let c_share = total / c_count as f64;
            for (w, &c) in contour_term.iter_mut().zip(&contour) {
                if c {
                    *w = c_share;
                }
            }
        }
        contours.push((id, contour));
    }
    if let Some(bad) = slice.data().iter().find(|&&l| !schema.contains(l)) {
        return Err(Error::arg(format!("label {bad} is not in the schema")));
    }
    Ok(WeightTerms {
        class_term,
        contour_term,
        contours,
    })
}

/// Spatial weight map of one label slice (class term + contour term).
pub fn build_weight_map(slice: &Image2<u8>, schema: &LabelSchema, dilate_iters: usize) -> Result<WeightMap> {
    let terms = weight_terms(slice, schema, dilate_iters)?;
    WeightMap::new(
        terms
            .class_term
            .iter()
            .zip(&terms.contour_term)
            .map(|(a, b)| a + b)
            .collect(),
    )
}

/// Weight map of every in-plane slice of a label volume, as a scalar volume
/// on the same grid.
pub fn weight_map_volume(lbl: &LabelVolume, dilate_iters: usize) -> Result<ScalarVolume> {
    let [nx, ny, nz, nt] = lbl.dims();
    let mut data = Vec::with_capacity(nx * ny * nz * nt);
    for t in 0..nt {
        for z in 0..nz {
            let wm = build_weight_map(&lbl.slice(z, t), lbl.schema(), dilate_iters)?;
            data.extend_from_slice(wm.data());
        }
    }
    ScalarVolume::new(lbl.dims(), lbl.spacing(), data)
}

/// Max-subtracted softmax per voxel.
pub fn softmax(z: &LogitsField) -> ProbVolume {
    let c = z.classes;
    let mut out = Vec::with_capacity(z.data.len());
    for v in z.data.chunks_exact(c) {
        let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|x| x / s));
    }
    ClassField { classes: c, data: out }
}

fn check_targets(classes: usize, voxels: usize, t: &[u8]) -> Result<()> {
    if t.len() != voxels {
        return Err(Error::arg(format!("target has {} voxels, field has {voxels}", t.len())));
    }
    if let Some(bad) = t.iter().find(|&&l| l as usize >= classes) {
        return Err(Error::arg(format!("target label {bad} >= class count {classes}")));
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropy {
    pub value: f64,
    /// Voxels whose target probability fell below [`LOG_FLOOR`].
    pub clamped: usize,
}

/// `-sum_x w(x) log p(t(x) | x)`.
pub fn weighted_ce(p: &ProbVolume, t: &[u8], w: &WeightMap) -> Result<CrossEntropy> {
    check_targets(p.classes, p.voxels(), t)?;
    if w.len() != t.len() {
        return Err(Error::arg("weight map and target sizes differ"));
    }
    let mut clamped = 0;
    let value = stats::sum(t.iter().zip(w.data()).enumerate().map(|(v, (&l, &wv))| {
        let pt = p.voxel(v)[l as usize];
        let pt = if pt < LOG_FLOOR {
            clamped += 1;
            LOG_FLOOR
        } else {
            pt
        };
        -wv * pt.ln()
    }));
    Ok(CrossEntropy { value, clamped })
}

/// Soft Dice of one class: `(a sum(p g) + eps) / (sum(p^2 + g^2) + eps)` with
/// `a = 2` when `two_factor` is set and `a = 1` otherwise.
pub fn soft_dice_class(p: &[f64], g: &[bool], eps: f64, two_factor: bool) -> f64 {
    let (num, den) = dice_parts(p, g, two_factor);
    (num + eps) / (den + eps)
}

fn dice_parts(p: &[f64], g: &[bool], two_factor: bool) -> (f64, f64) {
    let a = if two_factor { 2.0 } else { 1.0 };
    let pg = stats::sum(p.iter().zip(g).map(|(&pv, &gv)| if gv { pv } else { 0.0 }));
    let den = stats::sum(p.iter().zip(g).map(|(&pv, &gv)| pv * pv + if gv { 1.0 } else { 0.0 }));
    (a * pg, den)
}

/// `|M| / |M_l|` per class index; `None` for classes absent from the batch.
pub fn minibatch_class_weights(t: &[u8], classes: usize) -> Vec<Option<f64>> {
    let mut counts = vec![0usize; classes];
    for &l in t {
        if (l as usize) < classes {
            counts[l as usize] += 1;
        }
    }
    let total = t.len() as f64;
    counts.into_iter().map(|c| (c > 0).then(|| total / c as f64)).collect()
}

/// `1 - sum_l w_l dice_l / sum_l w_l` over classes present in `t`.
pub fn dice_loss(p: &ProbVolume, t: &[u8], cfg: &LossConfig) -> Result<f64> {
    check_targets(p.classes, p.voxels(), t)?;
    let weights = minibatch_class_weights(t, p.classes);
    let (mut num, mut den) = (0.0, 0.0);
    for (c, w) in weights.iter().enumerate() {
        let Some(w) = w else { continue };
        let g: Vec<bool> = t.iter().map(|&l| l as usize == c).collect();
        num += w * soft_dice_class(&p.channel(c), &g, cfg.epsilon, cfg.dice_two_factor);
        den += w;
    }
    if den == 0.0 {
        return Err(Error::arg("empty batch"));
    }
    Ok(1.0 - num / den)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce: f64,
    pub dice_loss: f64,
    pub l2: f64,
    pub total: f64,
    pub clamped: usize,
}

/// `lambda * CE + gamma * (1 - Dice) + eta * ||W||^2`.
pub fn total_loss(
    z: &LogitsField,
    t: &[u8],
    w: &WeightMap,
    cfg: &LossConfig,
    l2_of_weights: f64,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let p = softmax(z);
    loss_from_probs(&p, t, w, cfg, l2_of_weights)
}

/// [`total_loss`] evaluated on probabilities directly.
pub fn loss_from_probs(
    p: &ProbVolume,
    t: &[u8],
    w: &WeightMap,
    cfg: &LossConfig,
    l2_of_weights: f64,
) -> Result<LossBreakdown> {
    let ce = weighted_ce(p, t, w)?;
    let dl = dice_loss(p, t, cfg)?;
    let l2 = cfg.eta * l2_of_weights;
    Ok(LossBreakdown {
        ce: ce.value,
        dice_loss: dl,
        l2,
        total: cfg.lambda * ce.value + cfg.gamma * dl + l2,
        clamped: ce.clamped,
    })
}

/// Analytic gradient of [`total_loss`] with respect to the logits, excluding
/// the weight-decay term.
pub fn total_loss_grad(z: &LogitsField, t: &[u8], w: &WeightMap, cfg: &LossConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let c = z.classes;
    let n = z.voxels();
    check_targets(c, n, t)?;
    if w.len() != n {
        return Err(Error::arg("weight map and target sizes differ"));
    }
    let p = softmax(z);

    // dL/dp for the Dice term, per voxel and class.
    let mut dl_dp = vec![0.0; n * c];
    if cfg.gamma != 0.0 {
        let weights = minibatch_class_weights(t, c);
        let wsum: f64 = weights.iter().flatten().sum();
        let a = if cfg.dice_two_factor { 2.0 } else { 1.0 };
        for (cls, wl) in weights.iter().enumerate() {
            let Some(wl) = wl else { continue };
            let pc = p.channel(cls);
            let g: Vec<bool> = t.iter().map(|&l| l as usize == cls).collect();
            let (num, den) = dice_parts(&pc, &g, cfg.dice_two_factor);
            let (num, den) = (num + cfg.epsilon, den + cfg.epsilon);
            let scale = -cfg.gamma * wl / wsum;
            for v in 0..n {
                let gv = if g[v] { 1.0 } else { 0.0 };
                let d = a * gv / den - num * 2.0 * pc[v] / (den * den);
                dl_dp[v * c + cls] = scale * d;
            }
        }
    }

    let mut grad = vec![0.0; n * c];
    for v in 0..n {
        let pv = p.voxel(v);
        let up = &dl_dp[v * c..(v + 1) * c];
        let dot: f64 = pv.iter().zip(up).map(|(a, b)| a * b).sum();
        let tv = t[v] as usize;
        let wv = w.data()[v];
        for k in 0..c {
            let onehot = if k == tv { 1.0 } else { 0.0 };
            let ce = cfg.lambda * wv * (pv[k] - onehot);
            grad[v * c + k] = ce + pv[k] * (up[k] - dot);
        }
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn field(classes: usize, data: Vec<f64>) -> ClassField {
        ClassField::new(classes, data).unwrap()
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&field(4, vec![0.0; 4]));
        assert_eq!(p.data(), &[0.25; 4]);
        let p = softmax(&field(2, vec![1000.0, 0.0]));
        assert_eq!(p.data()[0], 1.0);
        assert!(p.data()[1] >= 0.0 && p.data()[1] < 1e-300);
        let p = softmax(&field(4, (1..=4).map(|i| (i as f64).ln()).collect()));
        for (a, b) in p.data().iter().zip([0.1, 0.2, 0.3, 0.4]) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_ce_examples() {
        let ce = weighted_ce(&field(2, vec![1.0, 0.0]), &[0], &WeightMap::uniform(1)).unwrap();
        assert_eq!(ce.value, 0.0);
        let ce = weighted_ce(&field(2, vec![0.5, 0.5]), &[1], &WeightMap::new(vec![2.0]).unwrap()).unwrap();
        assert!((ce.value - 2.0 * 2f64.ln()).abs() < 1e-12);
        let e = (-1.0f64).exp();
        let ce = weighted_ce(&field(2, vec![e, 1.0 - e, 1.0 - e, e]), &[0, 1], &WeightMap::uniform(2)).unwrap();
        assert!((ce.value - 2.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_ce_counts_clamps() {
        let ce = weighted_ce(&field(2, vec![1.0, 0.0, 0.0, 1.0]), &[1, 1], &WeightMap::uniform(2)).unwrap();
        assert_eq!(ce.clamped, 1);
        assert!((ce.value - (-LOG_FLOOR.ln())).abs() < 1e-9);
    }

    #[test]
    fn soft_dice_examples() {
        let g = [true, false, true, false];
        let p = [1.0, 0.0, 1.0, 0.0];
        assert!((soft_dice_class(&p, &g, 1e-5, true) - 1.0).abs() < 1e-9);
        let half = [0.5; 4];
        let d = soft_dice_class(&half, &[true, true, false, false], 1e-12, true);
        assert!((d - 2.0 / 3.0).abs() < 1e-9);
        assert_eq!(soft_dice_class(&[0.0; 3], &[false; 3], 1e-5, true), 1.0);
        assert_eq!(soft_dice_class(&[0.0; 3], &[false; 3], 0.3, false), 1.0);
        // Literal form without the factor 2.
        let d = soft_dice_class(&p, &g, 1e-12, false);
        assert!((d - 0.5).abs() < 1e-9);
    }

    #[test]
    fn minibatch_weights_examples() {
        let mut t = vec![0u8; 90];
        t.extend(std::iter::repeat_n(3u8, 10));
        let w = minibatch_class_weights(&t, 4);
        assert!((w[0].unwrap() - 10.0 / 9.0).abs() < 1e-12);
        assert_eq!(w[3], Some(10.0));
        assert_eq!(w[1], None);
        assert_eq!(w[2], None);
        let w = minibatch_class_weights(&[0, 1, 2, 3, 3, 2, 1, 0], 4);
        assert!(w.iter().all(|x| *x == Some(4.0)));
    }

    #[test]
    fn dice_loss_examples() {
        let cfg = LossConfig::default();
        let t = [0u8, 1, 1, 0, 2];
        let mut onehot = vec![0.0; 15];
        for (v, &l) in t.iter().enumerate() {
            onehot[v * 3 + l as usize] = 1.0;
        }
        assert!(dice_loss(&field(3, onehot), &t, &cfg).unwrap().abs() < 1e-6);

        // Only class 1 present, p_1 = q on 4 voxels: 8q / (4q^2 + 4) = 2/3
        // at q = (3 - sqrt 5) / 2.
        let cfg0 = LossConfig {
            epsilon: 1e-12,
            ..LossConfig::default()
        };
        let q = (3.0 - 5f64.sqrt()) / 2.0;
        let p = field(2, [1.0 - q, q].repeat(4));
        let t = [1u8; 4];
        assert!((dice_loss(&p, &t, &cfg0).unwrap() - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn dice_loss_weighted_mean() {
        // Class 0: 3 of 4 voxels (w = 4/3), class 1: 1 voxel (w = 4).
        let cfg = LossConfig {
            epsilon: 1e-12,
            ..LossConfig::default()
        };
        let t = [0u8, 0, 0, 1];
        let p = field(2, vec![1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 0.5, 0.5]);
        let d0 = soft_dice_class(&[1.0, 1.0, 1.0, 0.5], &[true, true, true, false], 1e-12, true);
        let d1 = soft_dice_class(&[0.0, 0.0, 0.0, 0.5], &[false, false, false, true], 1e-12, true);
        let expect = 1.0 - (4.0 / 3.0 * d0 + 4.0 * d1) / (4.0 / 3.0 + 4.0);
        assert!((dice_loss(&p, &t, &cfg).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn total_loss_examples() {
        let t = [0u8, 1, 1, 0];
        let mut z = vec![0.0; 8];
        for (v, &l) in t.iter().enumerate() {
            z[v * 2 + l as usize] = 60.0;
        }
        let z = field(2, z);
        let w = WeightMap::uniform(4);
        let b = total_loss(&z, &t, &w, &LossConfig::default(), 0.0).unwrap();
        assert!(b.total.abs() < 1e-6);

        let z = field(2, vec![0.3, -0.2, 1.0, 0.1, -0.5, 0.4, 0.0, 0.7]);
        let ce_only = LossConfig {
            gamma: 0.0,
            eta: 0.0,
            ..LossConfig::default()
        };
        let b = total_loss(&z, &t, &w, &ce_only, 0.0).unwrap();
        let ce = weighted_ce(&softmax(&z), &t, &w).unwrap().value;
        assert_eq!(b.total, ce);

        let dice_only = LossConfig {
            lambda: 0.0,
            gamma: 1.0,
            eta: 5e-4,
            ..LossConfig::default()
        };
        let b = total_loss(&z, &t, &w, &dice_only, 100.0).unwrap();
        assert!((b.total - (b.dice_loss + 0.05)).abs() < 1e-12);
    }

    #[test]
    fn grad_ce_only_is_closed_form() {
        let t = [0u8, 1, 2, 1];
        let z = field(3, (0..12).map(|i| ((i * 7) % 5) as f64 * 0.3 - 0.6).collect());
        let w = WeightMap::new(vec![1.0, 2.0, 0.5, 3.0]).unwrap();
        let cfg = LossConfig {
            gamma: 0.0,
            ..LossConfig::default()
        };
        let g = total_loss_grad(&z, &t, &w, &cfg).unwrap();
        let p = softmax(&z);
        for v in 0..4 {
            for k in 0..3 {
                let onehot = if k == t[v] as usize { 1.0 } else { 0.0 };
                let expect = w.data()[v] * (p.voxel(v)[k] - onehot);
                assert!((g[v * 3 + k] - expect).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn grad_vanishes_at_saturated_prediction() {
        let t = [0u8, 1, 1, 0, 2, 2];
        let mut z = vec![0.0; 18];
        for (v, &l) in t.iter().enumerate() {
            z[v * 3 + l as usize] = 40.0;
        }
        let g = total_loss_grad(&field(3, z), &t, &WeightMap::uniform(6), &LossConfig::default()).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-6), "{g:?}");
    }

    #[test]
    fn weight_map_two_by_two_block() {
        // 4x4, FG block in the corner.
        let slice = Image2::from_fn(4, 4, |x, y| if x < 2 && y < 2 { 3u8 } else { 0 });
        let schema = LabelSchema::default();
        let terms = weight_terms(&slice, &schema, 1).unwrap();
        let wm = build_weight_map(&slice, &schema, 1).unwrap();
        let fg_contour = &terms.contours.iter().find(|(id, _)| *id == 3).unwrap().1;
        assert_eq!(fg_contour.iter().filter(|&&b| b).count(), 4);
        for i in 0..16 {
            if slice.data()[i] == 3 {
                assert_eq!(wm.data()[i], 8.0);
            }
        }
        let bg_contour = &terms.contours.iter().find(|(id, _)| *id == 0).unwrap().1;
        let bg_c = bg_contour.iter().filter(|&&b| b).count();
        assert!(bg_c < 12, "some background voxel must be off the contour");
        for i in 0..16 {
            if slice.data()[i] == 0 {
                let expect = if bg_contour[i] {
                    16.0 / 12.0 + 16.0 / bg_c as f64
                } else {
                    16.0 / 12.0
                };
                assert!((wm.data()[i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn weight_map_single_class_is_one() {
        let slice = Image2::filled(6, 5, 0u8);
        let wm = build_weight_map(&slice, &LabelSchema::default(), 1).unwrap();
        assert!(wm.data().iter().all(|&w| w == 1.0));
    }

    #[test]
    fn weight_map_equal_frequencies_equal_class_term() {
        let slice = Image2::from_fn(8, 8, |x, y| ((x / 4) + 2 * (y / 4)) as u8);
        let terms = weight_terms(&slice, &LabelSchema::default(), 1).unwrap();
        assert!(terms.class_term.iter().all(|&w| w == 4.0));
    }

    proptest! {
        #[test]
        fn softmax_simplex_and_shift_invariance(
            logits in proptest::collection::vec(-30.0f64..30.0, 8), shift in -100.0f64..100.0,
        ) {
            let z = field(4, logits.clone());
            let p = softmax(&z);
            for v in 0..2 {
                let s: f64 = p.voxel(v).iter().sum();
                prop_assert!((s - 1.0).abs() < 1e-6);
                prop_assert!(p.voxel(v).iter().all(|&x| x >= 0.0));
            }
            let q = softmax(&field(4, logits.iter().map(|x| x + shift).collect()));
            for (a, b) in p.data().iter().zip(q.data()) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn dice_symmetric_for_binary_p(bits in proptest::collection::vec((any::<bool>(), any::<bool>()), 1..40)) {
            let p: Vec<f64> = bits.iter().map(|b| if b.0 { 1.0 } else { 0.0 }).collect();
            let g: Vec<bool> = bits.iter().map(|b| b.1).collect();
            let pb: Vec<bool> = bits.iter().map(|b| b.0).collect();
            let gf: Vec<f64> = bits.iter().map(|b| if b.1 { 1.0 } else { 0.0 }).collect();
            prop_assert_eq!(soft_dice_class(&p, &g, 1e-5, true), soft_dice_class(&gf, &pb, 1e-5, true));
        }

        #[test]
        fn losses_are_non_negative(
            logits in proptest::collection::vec(-5.0f64..5.0, 24),
            labels in proptest::collection::vec(0u8..3, 8),
        ) {
            let z = field(3, logits);
            let w = WeightMap::uniform(8);
            let b = total_loss(&z, &labels, &w, &LossConfig::default(), 3.0).unwrap();
            prop_assert!(b.ce >= 0.0);
            prop_assert!((0.0..1.0).contains(&b.dice_loss));
            prop_assert!(b.total >= 0.0);
        }
    }
}
