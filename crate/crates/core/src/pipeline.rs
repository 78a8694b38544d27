//! End-to-end case processing around an externally produced segmentation:
//! ROI, ingestion, post-processing, metrics, features and diagnosis.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PipelineConfig;
use crate::diagnosis::{EnsembleModel, Prediction};
use crate::error::{Error, Result};
use crate::features::{extract_features, write_features_csv, FeatureRecord, PhaseLabels, FEATURE_NAMES};
use crate::metrics::{evaluate_case, write_csv, CaseMetrics};
use crate::postprocess::postprocess_labels_with;
use crate::roi::locate_roi;
use crate::volume::{crop_patch, embed_patch, LabelVolume, Patch, ScalarVolume};
use crate::volume::{load_labels, load_scalar, save_labels, save_scalar};

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SegSource {
    /// UINT8 label volume.
    Labels(PathBuf),
    /// FLOAT32 volume whose fourth axis holds per-class probabilities.
    Probabilities(PathBuf),
}

impl SegSource {
    fn kind(&self) -> &'static str {
        match self {
            SegSource::Labels(_) => "labels",
            SegSource::Probabilities(_) => "probabilities",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseInputs {
    pub case_id: String,
    pub cine: PathBuf,
    pub ed: Option<SegSource>,
    pub es: Option<SegSource>,
    pub gt_ed: Option<PathBuf>,
    pub gt_es: Option<PathBuf>,
    /// Overrides `clf.model` from the configuration.
    pub model: Option<PathBuf>,
    pub out_dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoiSummary {
    pub center: [usize; 2],
    pub patch_size: [usize; 2],
    pub circles_per_slice: Vec<usize>,
    /// Localization failed and the image centre was used.
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSummary {
    pub phase: String,
    pub source: String,
    /// `image` or `patch`.
    pub space: String,
    pub voxels_changed_by_postproc: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseMetrics {
    pub phase: String,
    pub metrics: CaseMetrics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureValue {
    pub name: String,
    pub value: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub name: String,
    /// Relative to the report's directory.
    pub path: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseReport {
    pub schema: u32,
    pub case_id: String,
    pub config: PipelineConfig,
    pub roi: RoiSummary,
    pub segmentation: Vec<PhaseSummary>,
    pub metrics: Vec<PhaseMetrics>,
    pub features: Vec<FeatureValue>,
    pub prediction: Option<Prediction>,
    pub artifacts: Vec<Artifact>,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

fn argmax_labels(p: &ScalarVolume) -> Result<LabelVolume> {
    let [nx, ny, nz, nc] = p.dims();
    if nc < 2 || nc > u8::MAX as usize {
        return Err(Error::arg(format!(
            "probability volume needs 2..255 channels, got {nc}"
        )));
    }
    let n = nx * ny * nz;
    let d = p.data();
    let labels = (0..n)
        .map(|i| {
            let mut best = 0;
            for c in 1..nc {
                if d[c * n + i] > d[best * n + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    let s = p.spacing();
    LabelVolume::new_3d([nx, ny, nz], [s[0], s[1], s[2]], labels)
}

/// Loads a segmentation and brings it to the cine's image grid. Returns the
/// volume and whether it arrived in patch space.
fn ingest(
    src: &SegSource,
    cine: &ScalarVolume,
    roi_center: (usize, usize),
    patch: (usize, usize),
) -> Result<(LabelVolume, bool)> {
    let seg = match src {
        SegSource::Labels(p) => load_labels(p)?,
        SegSource::Probabilities(p) => argmax_labels(&load_scalar(p)?)?,
    };
    let [nx, ny, nz, _] = cine.dims();
    let [sx, sy, sz, st] = seg.dims();
    if st != 1 {
        return Err(Error::arg(format!("segmentation must be a single frame, got {st}")));
    }
    if sz != nz {
        return Err(Error::arg(format!("segmentation has {sz} slices, the cine has {nz}")));
    }
    if (sx, sy) == (nx, ny) {
        return Ok((seg, false));
    }
    if (sx, sy) != patch {
        return Err(Error::arg(format!(
            "segmentation is {sx}x{sy}; expected the image size {nx}x{ny} or the patch size {}x{}",
            patch.0, patch.1
        )));
    }
    let cs = cine.spacing();
    let blank = LabelVolume::new_3d([nx, ny, nz], [cs[0], cs[1], cs[2]], vec![0; nx * ny * nz])?;
    let frame = crop_patch(&blank, roi_center, patch)?;
    let placed = Patch {
        data: seg.labels().to_vec(),
        ..frame
    };
    Ok((embed_patch(&blank, &placed)?, true))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Runs every stage for one case and writes `report.json` plus intermediate
/// artifacts into `inputs.out_dir`. Artifacts written before a failing stage
/// are kept.
pub fn run_pipeline(inputs: &CaseInputs, cfg: &PipelineConfig) -> Result<CaseReport> {
    let out = &inputs.out_dir;
    stage("setup", || {
        cfg.validate()?;
        std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
    })?;
    let mut artifacts = Vec::new();
    let mut artifact = |name: &str, file: &str| {
        artifacts.push(Artifact {
            name: name.into(),
            path: file.into(),
        });
        out.join(file)
    };

    let cine = stage("load", || load_scalar(&inputs.cine))?;
    let patch_size = cfg.roi.patch_size;

    let roi = stage("roi", || {
        let [nx, ny, ..] = cine.dims();
        let (center, circles, fallback) = match locate_roi(&cine, &cfg.roi) {
            Ok(r) => (r.roi_center, r.circles.iter().map(Vec::len).collect(), false),
            Err(Error::Locate(_)) => ((nx / 2, ny / 2), vec![0; cine.dims()[2]], true),
            Err(e) => return Err(e),
        };
        let patch = crop_patch(&cine, center, patch_size)?;
        let summary = RoiSummary {
            center: [center.0, center.1],
            patch_size: [patch_size.0, patch_size.1],
            circles_per_slice: circles,
            fallback,
        };
        write_json(
            &artifact("roi", "roi.json"),
            &serde_json::json!({ "center": summary.center, "patch_size": summary.patch_size }),
        )?;
        save_scalar(artifact("roi_patch", "roi_patch.vol"), &patch.to_volume(&cine))?;
        Ok(summary)
    })?;
    let center = (roi.center[0], roi.center[1]);

    let mut segmentation = Vec::new();
    let mut phases: [Option<LabelVolume>; 2] = [None, None];
    for (i, (name, src)) in [("ed", &inputs.ed), ("es", &inputs.es)].into_iter().enumerate() {
        let Some(src) = src else { continue };
        let (raw, in_patch) = stage("segmentation", || ingest(src, &cine, center, patch_size))?;
        let clean = stage("postproc", || {
            let clean = postprocess_labels_with(&raw, cfg.postproc)?;
            save_labels(
                artifact(&format!("{name}_labels"), &format!("{name}_labels.vol")),
                &clean,
            )?;
            Ok(clean)
        })?;
        let changed = raw.labels().iter().zip(clean.labels()).filter(|(a, b)| a != b).count();
        segmentation.push(PhaseSummary {
            phase: name.into(),
            source: src.kind().into(),
            space: if in_patch { "patch" } else { "image" }.into(),
            voxels_changed_by_postproc: changed,
        });
        phases[i] = Some(clean);
    }

    let metrics = stage("metrics", || {
        let mut rows = Vec::new();
        for (i, (name, gt)) in [("ed", &inputs.gt_ed), ("es", &inputs.gt_es)].into_iter().enumerate() {
            let Some(gt) = gt else { continue };
            let pred = phases[i]
                .as_ref()
                .ok_or_else(|| Error::arg(format!("ground truth given for {name} but no {name} segmentation")))?;
            let gt = load_labels(gt)?;
            rows.push(PhaseMetrics {
                phase: name.into(),
                metrics: evaluate_case(&format!("{}_{name}", inputs.case_id), pred, &gt)?,
            });
        }
        if !rows.is_empty() {
            let path = artifact("metrics", "metrics.csv");
            let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            let cases: Vec<CaseMetrics> = rows.iter().map(|r| r.metrics.clone()).collect();
            write_csv(file, &cases)?;
        }
        Ok(rows)
    })?;

    let record: FeatureRecord = stage("features", || {
        let [ed, es] = &phases;
        let ed = ed.clone().ok_or_else(|| Error::arg("missing ED segmentation"))?;
        let es = es.clone().ok_or_else(|| Error::arg("missing ES segmentation"))?;
        let rec = extract_features(&PhaseLabels::new(ed, es)?, cfg.myo_density)?;
        let path = artifact("features", "features.csv");
        let file = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
        write_features_csv(file, &[(inputs.case_id.clone(), rec)])?;
        Ok(rec)
    })?;

    let prediction = stage("predict", || {
        let Some(model_path) = inputs.model.as_ref().or(cfg.model.as_ref()) else {
            return Ok(None);
        };
        let model = EnsembleModel::load(model_path)?;
        let pred = model.predict_two_stage(&record);
        write_json(&artifact("prediction", "prediction.json"), &pred)?;
        Ok(Some(pred))
    })?;

    artifact("report", "report.json");
    let report = CaseReport {
        schema: REPORT_SCHEMA,
        case_id: inputs.case_id.clone(),
        config: cfg.clone(),
        roi,
        segmentation,
        metrics,
        features: FEATURE_NAMES
            .iter()
            .zip(record.values)
            .map(|(n, v)| FeatureValue {
                name: n.to_string(),
                value: v,
            })
            .collect(),
        prediction,
        artifacts,
    };
    stage("report", || write_json(&out.join("report.json"), &report))?;
    Ok(report)
}

/// Runs independent cases concurrently; results keep the input order.
pub fn run_batch(cases: &[CaseInputs], cfg: &PipelineConfig) -> Vec<Result<CaseReport>> {
    cases.par_iter().map(|c| run_pipeline(c, cfg)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::demo_case;
    use crate::volume::LV;

    fn write_case(dir: &Path) -> CaseInputs {
        let case = demo_case(4).unwrap();
        save_scalar(dir.join("cine.vol"), &case.cine).unwrap();
        save_labels(dir.join("ed.vol"), &case.ed).unwrap();
        save_labels(dir.join("es.vol"), &case.es).unwrap();
        CaseInputs {
            case_id: "phantom".into(),
            cine: dir.join("cine.vol"),
            ed: Some(SegSource::Labels(dir.join("ed.vol"))),
            es: Some(SegSource::Labels(dir.join("es.vol"))),
            gt_ed: Some(dir.join("ed.vol")),
            gt_es: Some(dir.join("es.vol")),
            model: None,
            out_dir: dir.join("out"),
        }
    }

    #[test]
    fn phantom_case_scores_perfectly() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = write_case(dir.path());
        let report = run_pipeline(&inputs, &PipelineConfig::default()).unwrap();
        assert_eq!(report.schema, 1);
        assert!(!report.roi.fallback);
        let [cx, cy] = report.roi.center;
        assert!(
            (cx as f64 - 60.0).abs() <= 3.0 && (cy as f64 - 66.0).abs() <= 3.0,
            "{cx},{cy}"
        );
        assert_eq!(report.metrics.len(), 2);
        for m in report.metrics.iter().flat_map(|p| &p.metrics.classes) {
            assert_eq!(m.dice.value, 1.0);
            assert_eq!(m.hd_mm, Some(0.0));
        }
        assert!(report.features.iter().all(|f| f.value.is_some()));
        for a in &report.artifacts {
            assert!(inputs.out_dir.join(&a.path).exists(), "{}", a.path);
        }
    }

    #[test]
    fn missing_es_aborts_at_features() {
        let dir = tempfile::tempdir().unwrap();
        let mut inputs = write_case(dir.path());
        inputs.es = None;
        inputs.gt_es = None;
        match run_pipeline(&inputs, &PipelineConfig::default()) {
            Err(Error::Stage { stage, source }) => {
                assert_eq!(stage, "features");
                assert!(source.to_string().contains("missing ES"));
            }
            other => panic!("expected a features-stage error, got {other:?}"),
        }
        assert!(inputs.out_dir.join("ed_labels.vol").exists());
    }

    #[test]
    fn patch_size_override_reaches_the_roi_output() {
        let dir = tempfile::tempdir().unwrap();
        let inputs = write_case(dir.path());
        let cfg = PipelineConfig::parse_str("roi.patch_size = 64x48").unwrap();
        let report = run_pipeline(&inputs, &cfg).unwrap();
        assert_eq!(report.roi.patch_size, [64, 48]);
        let patch = load_scalar(inputs.out_dir.join("roi_patch.vol")).unwrap();
        assert_eq!(&patch.dims()[..2], &[64, 48]);
    }

    #[test]
    fn patch_space_segmentation_is_embedded() {
        let dir = tempfile::tempdir().unwrap();
        let mut inputs = write_case(dir.path());
        let case = demo_case(4).unwrap();
        let cfg = PipelineConfig::parse_str("roi.patch_size = 64x64").unwrap();
        let center = locate_roi(&case.cine, &cfg.roi).unwrap().roi_center;
        for (name, lbl) in [("ed_patch.vol", &case.ed), ("es_patch.vol", &case.es)] {
            let p = crop_patch(lbl, center, (64, 64)).unwrap();
            save_labels(dir.path().join(name), &p.to_volume(lbl)).unwrap();
        }
        inputs.ed = Some(SegSource::Labels(dir.path().join("ed_patch.vol")));
        inputs.es = Some(SegSource::Labels(dir.path().join("es_patch.vol")));
        let report = run_pipeline(&inputs, &cfg).unwrap();
        assert!(report.segmentation.iter().all(|s| s.space == "patch"));
        let lv = report.metrics[0]
            .metrics
            .classes
            .iter()
            .find(|c| c.class == LV)
            .unwrap();
        assert_eq!(lv.dice.value, 1.0);
    }

    #[test]
    fn probabilities_are_reduced_by_argmax() {
        let lbl = LabelVolume::new_3d([2, 1, 1], [1.0; 3], vec![0, 0]).unwrap();
        let p = ScalarVolume::new([2, 1, 1, 4], [1.0; 4], vec![0.1, 0.2, 0.7, 0.1, 0.1, 0.6, 0.1, 0.1]).unwrap();
        let out = argmax_labels(&p).unwrap();
        assert_eq!(out.labels(), &[1, 2]);
        assert_eq!(out.dims(), lbl.dims());
    }

    #[test]
    fn reports_are_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let mut inputs = write_case(dir.path());
        run_pipeline(&inputs, &PipelineConfig::default()).unwrap();
        let first = std::fs::read(inputs.out_dir.join("report.json")).unwrap();
        inputs.out_dir = dir.path().join("again");
        run_pipeline(&inputs, &PipelineConfig::default()).unwrap();
        assert_eq!(first, std::fs::read(inputs.out_dir.join("report.json")).unwrap());
    }
}
