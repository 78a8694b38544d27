//! Clinical features from ED/ES segmentations: volumes, mass, ejection
//! fractions, ratios and myocardial wall-thickness (MWT) profile statistics.

use std::io::{Read, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imgproc::{canny, thin, CannyParams, Image2, Mask2};
use crate::postprocess::fill_holes;
use crate::stats;
use crate::volume::{LabelVolume, LV, MYO, RV};

pub const DEFAULT_MYO_DENSITY: f64 = 1.05;

pub const FEATURE_COUNT: usize = 20;

pub const FEATURE_NAMES: [&str; FEATURE_COUNT] = [
    "ed_lv_vol_ml",
    "ed_rv_vol_ml",
    "es_lv_vol_ml",
    "es_rv_vol_ml",
    "es_myo_vol_ml",
    "ed_myo_mass_g",
    "lv_ef",
    "rv_ef",
    "ed_lv_rv_ratio",
    "es_lv_rv_ratio",
    "es_myo_lv_ratio",
    "ed_myo_mass_lv_ratio",
    "ed_mwt_max_mean",
    "ed_mwt_std_mean",
    "ed_mwt_mean_std",
    "ed_mwt_std_std",
    "es_mwt_max_mean",
    "es_mwt_std_mean",
    "es_mwt_mean_std",
    "es_mwt_std_std",
];

/// Positions of the four ES wall-thickness features.
pub const ES_MWT_INDICES: [usize; 4] = [16, 17, 18, 19];

/// ED and ES segmentations of one subject.
#[derive(Clone, Debug)]
pub struct PhaseLabels {
    pub ed: LabelVolume,
    pub es: LabelVolume,
    /// Stored for completeness; no feature uses them.
    pub height_cm: Option<f64>,
    pub weight_kg: Option<f64>,
}

impl PhaseLabels {
    pub fn new(ed: LabelVolume, es: LabelVolume) -> Result<Self> {
        if ed.dims() != es.dims() || ed.spacing() != es.spacing() {
            return Err(Error::arg("ED and ES volumes must share dims and spacing"));
        }
        if ed.dims()[3] != 1 {
            return Err(Error::arg("phase volumes must be single-frame"));
        }
        Ok(Self {
            ed,
            es,
            height_cm: None,
            weight_kg: None,
        })
    }
}

fn voxel_ml(lbl: &LabelVolume) -> f64 {
    let s = lbl.spacing();
    s[0] * s[1] * s[2] / 1000.0
}

pub fn class_volume_ml(lbl: &LabelVolume, class: u8) -> f64 {
    lbl.count(class) as f64 * voxel_ml(lbl)
}

pub fn myo_mass_g(ed: &LabelVolume, density: f64) -> f64 {
    class_volume_ml(ed, MYO) * density
}

/// `(edv - esv) / edv`, undefined for an empty end-diastolic volume.
pub fn ejection_fraction(edv: f64, esv: f64) -> Option<f64> {
    (edv > 0.0).then(|| (edv - esv) / edv)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exclusion {
    NoMyocardium,
    /// Myocardium without an enclosed cavity.
    NoCavity,
    NoContour,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SliceMwt {
    pub z: usize,
    /// Thickness in mm for every interior contour pixel.
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub interior: Vec<(usize, usize)>,
    pub exterior: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MwtResult {
    pub slices: Vec<SliceMwt>,
    pub excluded: Vec<(usize, Exclusion)>,
}

/// Canny contour of a region, clipped to the region and thinned.
fn contour(region: &Mask2) -> Result<Mask2> {
    let img = region.map(|b| if b { 1.0 } else { 0.0 });
    let edges = canny(&img, CannyParams::default())?;
    let clipped = Mask2::from_fn(region.width(), region.height(), |x, y| {
        edges.get(x, y) && region.get(x, y)
    });
    Ok(thin(&clipped))
}

/// Wall thickness of one short-axis slice: for each pixel of the thinned
/// cavity contour, the distance in mm to the nearest pixel of the thinned
/// epicardial contour.
pub fn mwt_per_slice(slice: &Image2<u8>, spacing: (f64, f64)) -> Result<std::result::Result<SliceMwt, Exclusion>> {
    if !(spacing.0 > 0.0 && spacing.1 > 0.0) {
        return Err(Error::arg("spacing must be positive"));
    }
    let myo = slice.map(|l| l == MYO);
    if myo.count() == 0 {
        return Ok(Err(Exclusion::NoMyocardium));
    }
    let epi = fill_holes(&myo);
    let cavity = Mask2::from_fn(slice.width(), slice.height(), |x, y| epi.get(x, y) && !myo.get(x, y));
    if cavity.count() == 0 {
        return Ok(Err(Exclusion::NoCavity));
    }
    let exterior = contour(&epi)?.points();
    let interior = contour(&cavity)?.points();
    if exterior.is_empty() || interior.is_empty() {
        return Ok(Err(Exclusion::NoContour));
    }
    let (sx, sy) = spacing;
    let values: Vec<f64> = interior
        .iter()
        .map(|&(ix, iy)| {
            exterior
                .iter()
                .map(|&(ex, ey)| {
                    let dx = (ix as f64 - ex as f64) * sx;
                    let dy = (iy as f64 - ey as f64) * sy;
                    dx * dx + dy * dy
                })
                .fold(f64::INFINITY, f64::min)
                .sqrt()
        })
        .collect();
    let mean = stats::mean(&values).unwrap_or(0.0);
    let std = stats::std_pop(&values).unwrap_or(0.0);
    Ok(Ok(SliceMwt {
        z: 0,
        values,
        mean,
        std,
        interior,
        exterior,
    }))
}

/// Wall thickness of every slice of a single-frame volume.
pub fn mwt_volume(lbl: &LabelVolume) -> Result<MwtResult> {
    let [_, _, nz, _] = lbl.dims();
    let sp = lbl.spacing();
    let per: Vec<_> = (0..nz)
        .into_par_iter()
        .map(|z| mwt_per_slice(&lbl.slice(z, 0), (sp[0], sp[1])).map(|r| (z, r)))
        .collect::<Result<_>>()?;
    let mut out = MwtResult::default();
    for (z, r) in per {
        match r {
            Ok(mut s) => {
                s.z = z;
                out.slices.push(s);
            }
            Err(e) => out.excluded.push((z, e)),
        }
    }
    Ok(out)
}

/// Max and spread of per-slice means, and mean and spread of per-slice
/// standard deviations. All `None` without a valid slice.
pub fn mwt_profile_features(mwt: &MwtResult) -> [Option<f64>; 4] {
    if mwt.slices.is_empty() {
        return [None; 4];
    }
    let means: Vec<f64> = mwt.slices.iter().map(|s| s.mean).collect();
    let stds: Vec<f64> = mwt.slices.iter().map(|s| s.std).collect();
    [
        means.iter().copied().reduce(f64::max),
        stats::std_pop(&means),
        stats::mean(&stds),
        stats::std_pop(&stds),
    ]
}

/// The 20 features in fixed order; `None` marks a missing value.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureRecord {
    pub values: [Option<f64>; FEATURE_COUNT],
}

impl FeatureRecord {
    pub fn get(&self, name: &str) -> Option<f64> {
        let i = FEATURE_NAMES.iter().position(|n| *n == name)?;
        self.values[i]
    }

    pub fn es_mwt(&self) -> [Option<f64>; 4] {
        ES_MWT_INDICES.map(|i| self.values[i])
    }
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

pub fn extract_features(phases: &PhaseLabels, density: f64) -> Result<FeatureRecord> {
    if !(density > 0.0) {
        return Err(Error::arg("myocardial density must be > 0"));
    }
    let (ed, es) = (&phases.ed, &phases.es);
    let ed_lv = class_volume_ml(ed, LV);
    let ed_rv = class_volume_ml(ed, RV);
    let es_lv = class_volume_ml(es, LV);
    let es_rv = class_volume_ml(es, RV);
    let es_myo = class_volume_ml(es, MYO);
    let mass = myo_mass_g(ed, density);
    let (ed_mwt, es_mwt) = rayon::join(|| mwt_volume(ed), || mwt_volume(es));
    let ed_p = mwt_profile_features(&ed_mwt?);
    let es_p = mwt_profile_features(&es_mwt?);
    let head = [
        Some(ed_lv),
        Some(ed_rv),
        Some(es_lv),
        Some(es_rv),
        Some(es_myo),
        Some(mass),
        ejection_fraction(ed_lv, es_lv),
        ejection_fraction(ed_rv, es_rv),
        ratio(ed_lv, ed_rv),
        ratio(es_lv, es_rv),
        ratio(es_myo, es_lv),
        ratio(mass, ed_lv),
    ];
    let mut values = [None; FEATURE_COUNT];
    values[..12].copy_from_slice(&head);
    values[12..16].copy_from_slice(&ed_p);
    values[16..].copy_from_slice(&es_p);
    Ok(FeatureRecord { values })
}

/// `case_id` followed by the 20 feature columns; missing values are empty.
pub fn write_features_csv<W: Write>(out: W, rows: &[(String, FeatureRecord)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["case_id"];
    header.extend(FEATURE_NAMES);
    w.write_record(&header)?;
    for (id, rec) in rows {
        let mut row = vec![id.clone()];
        row.extend(rec.values.iter().map(|v| v.map(|x| format!("{x}")).unwrap_or_default()));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_features_csv<R: Read>(input: R) -> Result<Vec<(String, FeatureRecord)>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let col = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Format {
            key: name.to_string(),
            message: "missing feature column".into(),
        })
    };
    let id_col = col("case_id")?;
    let cols: Vec<usize> = FEATURE_NAMES.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let mut values = [None; FEATURE_COUNT];
        for (k, &c) in cols.iter().enumerate() {
            let cell = rec.get(c).unwrap_or("").trim();
            if !cell.is_empty() {
                let v: f64 = cell.parse().map_err(|_| Error::Format {
                    key: FEATURE_NAMES[k].to_string(),
                    message: format!("not a number: {cell:?}"),
                })?;
                values[k] = Some(v);
            }
        }
        out.push((rec.get(id_col).unwrap_or("").to_string(), FeatureRecord { values }));
    }
    Ok(out)
}
