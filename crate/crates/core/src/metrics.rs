//! Overlap, rate and distance metrics for binary and multi-class label
//! volumes.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::postprocess::BinaryMask;
use crate::stats;
use crate::volume::LabelVolume;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(pred: &[bool], gt: &[bool]) -> Result<ConfusionCounts> {
    if pred.len() != gt.len() {
        return Err(Error::arg(format!(
            "prediction has {} voxels, reference has {}",
            pred.len(),
            gt.len()
        )));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.iter().zip(gt) {
        match (p, g) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Overlap score; `both_empty` marks the vacuous 1.0 of two empty masks.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Overlap {
    pub value: f64,
    pub both_empty: bool,
}

impl Overlap {
    fn from_ratio(num: u64, den: u64) -> Self {
        if den == 0 {
            Self {
                value: 1.0,
                both_empty: true,
            }
        } else {
            Self {
                value: num as f64 / den as f64,
                both_empty: false,
            }
        }
    }
}

pub fn dice_counts(c: &ConfusionCounts) -> Overlap {
    Overlap::from_ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_)
}

pub fn jaccard_counts(c: &ConfusionCounts) -> Overlap {
    Overlap::from_ratio(c.tp, c.tp + c.fp + c.fn_)
}

pub fn dice(pred: &[bool], gt: &[bool]) -> Result<Overlap> {
    Ok(dice_counts(&confusion(pred, gt)?))
}

pub fn jaccard(pred: &[bool], gt: &[bool]) -> Result<Overlap> {
    Ok(jaccard_counts(&confusion(pred, gt)?))
}

/// Sensitivity, specificity and predictive values; `None` where the
/// denominator is zero.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub tpr: Option<f64>,
    pub spc: Option<f64>,
    pub ppv: Option<f64>,
    pub npv: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn rates(c: &ConfusionCounts) -> Rates {
    Rates {
        tpr: ratio(c.tp, c.tp + c.fn_),
        spc: ratio(c.tn, c.tn + c.fp),
        ppv: ratio(c.tp, c.tp + c.fp),
        npv: ratio(c.tn, c.tn + c.fn_),
    }
}

fn physical_points(mask: &BinaryMask, spacing: [f64; 3]) -> Vec<[f64; 3]> {
    let [nx, ny, _] = mask.dims;
    mask.data
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| {
            [
                (i % nx) as f64 * spacing[0],
                ((i / nx) % ny) as f64 * spacing[1],
                (i / (nx * ny)) as f64 * spacing[2],
            ]
        })
        .collect()
}

#[inline]
fn dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    let dz = a[2] - b[2];
    dx * dx + dy * dy + dz * dz
}

fn check_pair(pred: &BinaryMask, gt: &BinaryMask, spacing: [f64; 3]) -> Result<()> {
    if pred.dims != gt.dims {
        return Err(Error::arg(format!(
            "mask dims differ: {:?} vs {:?}",
            pred.dims, gt.dims
        )));
    }
    if spacing.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(Error::arg("spacing must be finite and positive"));
    }
    if pred.count() == 0 || gt.count() == 0 {
        return Err(Error::UndefinedDistance(
            "Hausdorff distance needs two non-empty masks".into(),
        ));
    }
    Ok(())
}

fn directed_brute(from: &[[f64; 3]], to: &[[f64; 3]]) -> f64 {
    from.iter()
        .map(|p| to.iter().map(|g| dist2(p, g)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

/// Exact symmetric Hausdorff distance in mm over all mask voxels, by
/// exhaustive pairwise search.
pub fn hausdorff_mm(pred: &BinaryMask, gt: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    check_pair(pred, gt, spacing)?;
    let p = physical_points(pred, spacing);
    let g = physical_points(gt, spacing);
    Ok(directed_brute(&p, &g).max(directed_brute(&g, &p)).sqrt())
}

/// Voxels with at least one 6-neighbour outside the mask or on the grid edge.
fn boundary(mask: &BinaryMask) -> BinaryMask {
    let [nx, ny, nz] = mask.dims;
    let at = |x: isize, y: isize, z: isize| -> bool {
        if x < 0 || y < 0 || z < 0 || x >= nx as isize || y >= ny as isize || z >= nz as isize {
            return false;
        }
        mask.data[x as usize + nx * (y as usize + ny * z as usize)]
    };
    let mut data = vec![false; mask.data.len()];
    for z in 0..nz as isize {
        for y in 0..ny as isize {
            for x in 0..nx as isize {
                if !at(x, y, z) {
                    continue;
                }
                let interior = at(x - 1, y, z)
                    && at(x + 1, y, z)
                    && at(x, y - 1, z)
                    && at(x, y + 1, z)
                    && (nz == 1 || (at(x, y, z - 1) && at(x, y, z + 1)));
                data[x as usize + nx * (y as usize + ny * z as usize)] = !interior;
            }
        }
    }
    BinaryMask { dims: mask.dims, data }
}

fn directed_fast(from: &BinaryMask, to: &BinaryMask, spacing: [f64; 3]) -> f64 {
    let sources: Vec<[f64; 3]> = {
        let outside = BinaryMask {
            dims: from.dims,
            data: from.data.iter().zip(&to.data).map(|(&a, &b)| a && !b).collect(),
        };
        physical_points(&outside, spacing)
    };
    let targets = physical_points(&boundary(to), spacing);
    let mut cmax = 0.0f64;
    for p in &sources {
        let mut cmin = f64::INFINITY;
        for g in &targets {
            let d = dist2(p, g);
            if d < cmin {
                cmin = d;
                if cmin <= cmax {
                    break;
                }
            }
        }
        if cmin > cmax {
            cmax = cmin;
        }
    }
    cmax
}

/// Same value as [`hausdorff_mm`]. Nearest targets are searched among
/// boundary voxels only, sources inside the other mask are skipped, and the
/// inner search stops once it cannot raise the running maximum.
pub fn hausdorff_mm_fast(pred: &BinaryMask, gt: &BinaryMask, spacing: [f64; 3]) -> Result<f64> {
    check_pair(pred, gt, spacing)?;
    let (a, b) = rayon::join(|| directed_fast(pred, gt, spacing), || directed_fast(gt, pred, spacing));
    Ok(a.max(b).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: u8,
    pub name: String,
    pub counts: ConfusionCounts,
    pub dice: Overlap,
    pub jaccard: Overlap,
    pub rates: Rates,
    /// `None` when either mask is empty.
    pub hd_mm: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseMetrics {
    pub case_id: String,
    pub classes: Vec<ClassMetrics>,
}

/// Per foreground class metrics of one 3D case. Physical spacing comes from
/// the reference volume.
pub fn evaluate_case(case_id: &str, pred: &LabelVolume, gt: &LabelVolume) -> Result<CaseMetrics> {
    if pred.schema() != gt.schema() {
        return Err(Error::arg("label schemas differ"));
    }
    if pred.dims() != gt.dims() {
        return Err(Error::arg(format!(
            "volume dims differ: {:?} vs {:?}",
            pred.dims(),
            gt.dims()
        )));
    }
    let [nx, ny, nz, nt] = gt.dims();
    if nt != 1 {
        return Err(Error::arg("evaluate one time frame at a time"));
    }
    let sp = gt.spacing();
    let spacing = [sp[0], sp[1], sp[2]];
    let classes: Vec<u8> = gt.schema().foreground().collect();
    let classes = classes
        .par_iter()
        .map(|&class| {
            let p = BinaryMask::new([nx, ny, nz], pred.labels().iter().map(|&l| l == class).collect())?;
            let g = BinaryMask::new([nx, ny, nz], gt.labels().iter().map(|&l| l == class).collect())?;
            let counts = confusion(&p.data, &g.data)?;
            let hd_mm = match hausdorff_mm_fast(&p, &g, spacing) {
                Ok(d) => Some(d),
                Err(Error::UndefinedDistance(_)) => None,
                Err(e) => return Err(e),
            };
            Ok(ClassMetrics {
                class,
                name: gt.schema().name(class).unwrap_or_default().to_string(),
                counts,
                dice: dice_counts(&counts),
                jaccard: jaccard_counts(&counts),
                rates: rates(&counts),
                hd_mm,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CaseMetrics {
        case_id: case_id.to_string(),
        classes,
    })
}

pub const METRIC_NAMES: [&str; 7] = ["dice", "jaccard", "tpr", "spc", "ppv", "npv", "hd_mm"];

impl ClassMetrics {
    /// Metric values in [`METRIC_NAMES`] order; vacuous or undefined values
    /// are `None`.
    pub fn values(&self) -> [Option<f64>; 7] {
        let overlap = |o: Overlap| (!o.both_empty).then_some(o.value);
        [
            overlap(self.dice),
            overlap(self.jaccard),
            self.rates.tpr,
            self.rates.spc,
            self.rates.ppv,
            self.rates.npv,
            self.hd_mm,
        ]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSummary {
    pub class: u8,
    pub name: String,
    /// Mean per metric over defined values.
    pub mean: [Option<f64>; 7],
    /// Population standard deviation per metric over defined values.
    pub std: [Option<f64>; 7],
}

/// Mean and standard deviation per class across cases.
pub fn summarize(cases: &[CaseMetrics]) -> Vec<ClassSummary> {
    let mut order: Vec<(u8, String)> = Vec::new();
    for c in cases.iter().flat_map(|c| &c.classes) {
        if !order.iter().any(|(id, _)| *id == c.class) {
            order.push((c.class, c.name.clone()));
        }
    }
    order
        .into_iter()
        .map(|(class, name)| {
            let rows: Vec<[Option<f64>; 7]> = cases
                .iter()
                .flat_map(|c| &c.classes)
                .filter(|m| m.class == class)
                .map(|m| m.values())
                .collect();
            let mut mean = [None; 7];
            let mut std = [None; 7];
            for k in 0..7 {
                let vals: Vec<f64> = rows.iter().filter_map(|r| r[k]).collect();
                mean[k] = stats::mean(&vals);
                std[k] = stats::std_pop(&vals);
            }
            ClassSummary { class, name, mean, std }
        })
        .collect()
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

/// CSV with one row per case and class, followed by `mean` and `std` rows per
/// class. Undefined values are empty cells.
pub fn write_csv<W: Write>(out: W, cases: &[CaseMetrics]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["case_id", "class"];
    header.extend(METRIC_NAMES);
    w.write_record(&header)?;
    for case in cases {
        for m in &case.classes {
            let mut row = vec![case.case_id.clone(), m.name.clone()];
            row.extend(m.values().iter().map(|v| cell(*v)));
            w.write_record(&row)?;
        }
    }
    for s in summarize(cases) {
        for (label, vals) in [("mean", &s.mean), ("std", &s.std)] {
            let mut row = vec![label.to_string(), s.name.clone()];
            row.extend(vals.iter().map(|v| cell(*v)));
            w.write_record(&row)?;
        }
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
