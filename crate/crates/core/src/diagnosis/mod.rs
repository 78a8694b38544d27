//! Disease classification: base classifiers, stratified cross-validation,
//! classifier selection and the two-stage ensemble with a MINF/DCM expert.

mod forest;
mod gnb;
mod linear;
mod mlp;
mod svm;

use std::collections::HashMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use forest::{train_rf, ForestParams, Node, RandomForest, Tree};
pub use gnb::{train_gnb, GaussianNb, VAR_SMOOTHING};
pub use linear::{train_knn, train_lr, Knn, Logistic};
pub use mlp::{train_mlp, Mlp, MlpParams, TrainTrace};
pub use svm::{scale_gamma, train_svm_rbf, BinarySvm, Svm, SvmParams};

use crate::error::{Error, Result};
use crate::features::{FeatureRecord, ES_MWT_INDICES, FEATURE_COUNT};
use crate::stats;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DiseaseLabel {
    Nor,
    Minf,
    Dcm,
    Hcm,
    Arv,
}

impl DiseaseLabel {
    pub const ALL: [DiseaseLabel; 5] = [Self::Nor, Self::Minf, Self::Dcm, Self::Hcm, Self::Arv];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Nor => "NOR",
            Self::Minf => "MINF",
            Self::Dcm => "DCM",
            Self::Hcm => "HCM",
            Self::Arv => "ARV",
        }
    }
}

impl fmt::Display for DiseaseLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DiseaseLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::arg(format!("unknown disease label {s:?}")))
    }
}

/// First index of the maximum; NaN never wins.
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] || v[best].is_nan() {
            best = i;
        }
    }
    best
}

pub(crate) fn class_counts(y: &[usize], n_classes: usize) -> Vec<usize> {
    let mut c = vec![0; n_classes];
    for &l in y {
        c[l] += 1;
    }
    c
}

/// Shared precondition of every trainer; returns the feature count.
pub(crate) fn check_training(x: &[Vec<f64>], y: &[usize], n_classes: usize) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::Training(format!("{} rows but {} labels", x.len(), y.len())));
    }
    if x.is_empty() {
        return Err(Error::Training("empty training set".into()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::Training("rows must share a non-zero feature count".into()));
    }
    if x.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Training("features must be finite".into()));
    }
    if let Some(bad) = y.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Training(format!("label {bad} >= class count {n_classes}")));
    }
    let present = class_counts(y, n_classes).iter().filter(|&&c| c > 0).count();
    if present < 2 {
        return Err(Error::Training(format!("need at least 2 classes, found {present}")));
    }
    Ok(d)
}

/// Labelled rows with possibly missing feature values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub x: Vec<Vec<Option<f64>>>,
    pub y: Vec<usize>,
    pub n_classes: usize,
}

impl Dataset {
    pub fn new(x: Vec<Vec<Option<f64>>>, y: Vec<usize>, n_classes: usize) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::arg("row and label counts differ"));
        }
        let ids = (0..x.len()).map(|i| i.to_string()).collect();
        Ok(Self { ids, x, y, n_classes })
    }

    pub fn from_dense(x: Vec<Vec<f64>>, y: Vec<usize>, n_classes: usize) -> Result<Self> {
        Self::new(
            x.into_iter().map(|r| r.into_iter().map(Some).collect()).collect(),
            y,
            n_classes,
        )
    }

    /// Joins feature rows with disease labels by case id.
    pub fn from_records(features: &[(String, FeatureRecord)], labels: &[(String, DiseaseLabel)]) -> Result<Self> {
        let map: HashMap<&str, DiseaseLabel> = labels.iter().map(|(id, l)| (id.as_str(), *l)).collect();
        let mut ds = Self {
            ids: Vec::new(),
            x: Vec::new(),
            y: Vec::new(),
            n_classes: DiseaseLabel::ALL.len(),
        };
        for (id, rec) in features {
            let label = map
                .get(id.as_str())
                .ok_or_else(|| Error::arg(format!("no label for case {id:?}")))?;
            ds.ids.push(id.clone());
            ds.x.push(rec.values.to_vec());
            ds.y.push(label.index());
        }
        Ok(ds)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

/// Median imputation followed by z-scoring, both fitted on training rows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub median: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Scaler {
    pub fn fit(rows: &[&[Option<f64>]]) -> Result<Self> {
        let d = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::arg("rows must share a feature count"));
        }
        let mut median = vec![0.0; d];
        let mut mean = vec![0.0; d];
        let mut std = vec![1.0; d];
        for f in 0..d {
            let present: Vec<f64> = rows.iter().filter_map(|r| r[f]).collect();
            median[f] = stats::median(&present).unwrap_or(0.0);
            let filled: Vec<f64> = rows.iter().map(|r| r[f].unwrap_or(median[f])).collect();
            mean[f] = stats::mean(&filled).unwrap_or(0.0);
            let s = stats::std_pop(&filled).unwrap_or(0.0);
            std[f] = if s > 0.0 { s } else { 1.0 };
        }
        Ok(Self { median, mean, std })
    }

    pub fn transform(&self, row: &[Option<f64>]) -> Vec<f64> {
        row.iter()
            .enumerate()
            .map(|(f, v)| (v.unwrap_or(self.median[f]) - self.mean[f]) / self.std[f])
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClassifierKind {
    Svm,
    Mlp,
    Gnb,
    Rf,
    Lr,
    Knn,
}

impl ClassifierKind {
    /// Stage-1 members in ensemble order.
    pub const ENSEMBLE: [ClassifierKind; 4] = [Self::Svm, Self::Mlp, Self::Gnb, Self::Rf];
    /// Cross-validated for comparison only.
    pub const BASELINES: [ClassifierKind; 2] = [Self::Lr, Self::Knn];

    pub fn name(self) -> &'static str {
        match self {
            Self::Svm => "SVM",
            Self::Mlp => "MLP",
            Self::Gnb => "GNB",
            Self::Rf => "RF",
            Self::Lr => "LR",
            Self::Knn => "KNN",
        }
    }
}

impl FromStr for ClassifierKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [Self::Svm, Self::Mlp, Self::Gnb, Self::Rf, Self::Lr, Self::Knn]
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::arg(format!("unknown classifier {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainParams {
    pub seed: u64,
    pub rf_trees: usize,
    pub mlp: MlpParams,
    pub svm: SvmParams,
    pub knn_k: usize,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            seed: 0,
            rf_trees: 1000,
            mlp: MlpParams::default(),
            svm: SvmParams::default(),
            knn_k: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Model {
    Svm(Svm),
    Mlp(Mlp),
    Gnb(GaussianNb),
    Rf(RandomForest),
    Lr(Logistic),
    Knn(Knn),
}

impl Model {
    pub fn predict(&self, x: &[f64]) -> usize {
        match self {
            Model::Svm(m) => m.predict(x),
            Model::Mlp(m) => m.predict(x),
            Model::Gnb(m) => m.predict(x),
            Model::Rf(m) => m.predict(x),
            Model::Lr(m) => m.predict(x),
            Model::Knn(m) => m.predict(x),
        }
    }
}

pub fn train_model(
    kind: ClassifierKind,
    x: &[Vec<f64>],
    y: &[usize],
    n_classes: usize,
    p: &TrainParams,
) -> Result<Model> {
    Ok(match kind {
        ClassifierKind::Svm => Model::Svm(train_svm_rbf(x, y, n_classes, p.svm)?),
        ClassifierKind::Mlp => {
            let params = MlpParams {
                seed: p.seed,
                ..p.mlp.clone()
            };
            Model::Mlp(train_mlp(x, y, n_classes, &params)?.0)
        }
        ClassifierKind::Gnb => Model::Gnb(train_gnb(x, y, n_classes)?),
        ClassifierKind::Rf => Model::Rf(train_rf(
            x,
            y,
            n_classes,
            ForestParams {
                n_trees: p.rf_trees,
                seed: p.seed,
            },
        )?),
        ClassifierKind::Lr => Model::Lr(train_lr(x, y, n_classes)?),
        ClassifierKind::Knn => Model::Knn(train_knn(x, y, n_classes, p.knn_k)?),
    })
}

/// Column selection, scaler and classifier fitted together.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub kind: ClassifierKind,
    pub columns: Vec<usize>,
    pub scaler: Scaler,
    pub model: Model,
}

impl Pipeline {
    pub fn fit(ds: &Dataset, rows: &[usize], columns: &[usize], kind: ClassifierKind, p: &TrainParams) -> Result<Self> {
        let picked: Vec<Vec<Option<f64>>> = rows
            .iter()
            .map(|&i| columns.iter().map(|&c| ds.x[i][c]).collect())
            .collect();
        let refs: Vec<&[Option<f64>]> = picked.iter().map(|r| r.as_slice()).collect();
        let scaler = Scaler::fit(&refs)?;
        let x: Vec<Vec<f64>> = picked.iter().map(|r| scaler.transform(r)).collect();
        let y: Vec<usize> = rows.iter().map(|&i| ds.y[i]).collect();
        let model = train_model(kind, &x, &y, ds.n_classes, p)?;
        Ok(Self {
            kind,
            columns: columns.to_vec(),
            scaler,
            model,
        })
    }

    pub fn predict(&self, row: &[Option<f64>]) -> usize {
        let picked: Vec<Option<f64>> = self.columns.iter().map(|&c| row[c]).collect();
        self.model.predict(&self.scaler.transform(&picked))
    }
}

/// Fold index per row. Each class is shuffled with the seed and dealt
/// round-robin, so every fold holds `floor` or `ceil` of `n_c / k` rows of
/// class `c`.
pub fn stratified_folds(y: &[usize], n_classes: usize, k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::arg("need at least 2 folds"));
    }
    let counts = class_counts(y, n_classes);
    for (class, &count) in counts.iter().enumerate() {
        if count > 0 && count < k {
            return Err(Error::Stratification { class, count, folds: k });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; y.len()];
    for c in 0..n_classes {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == c).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            fold[i] = pos % k;
        }
    }
    Ok(fold)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CvResult {
    pub fold_accuracy: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation over folds.
    pub std: f64,
}

pub fn cross_validate(
    ds: &Dataset,
    columns: &[usize],
    kind: ClassifierKind,
    params: &TrainParams,
    k: usize,
    seed: u64,
) -> Result<CvResult> {
    let fold = stratified_folds(&ds.y, ds.n_classes, k, seed)?;
    let fold_accuracy = (0..k)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..ds.len()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..ds.len()).filter(|&i| fold[i] == f).collect();
            let pipe = Pipeline::fit(ds, &train, columns, kind, params)?;
            let hits = test.iter().filter(|&&i| pipe.predict(&ds.x[i]) == ds.y[i]).count();
            Ok(hits as f64 / test.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(CvResult {
        mean: stats::mean(&fold_accuracy).unwrap_or(0.0),
        std: stats::std_pop(&fold_accuracy).unwrap_or(0.0),
        fold_accuracy,
    })
}

/// Names whose score is strictly above `threshold`, in input order.
pub fn select_classifiers(scores: &[(String, f64)], threshold: f64) -> Result<Vec<String>> {
    let kept: Vec<String> = scores
        .iter()
        .filter(|(_, s)| *s > threshold)
        .map(|(n, _)| n.clone())
        .collect();
    if kept.is_empty() {
        let listing = scores
            .iter()
            .map(|(n, s)| format!("{n}={s}"))
            .collect::<Vec<_>>()
            .join(", ");
        return Err(Error::Selection {
            threshold,
            scores: listing,
        });
    }
    Ok(kept)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VoteMode {
    /// All four stage-1 classifiers vote.
    All,
    /// Only classifiers passing the CV selection threshold vote.
    Selected,
}

impl FromStr for VoteMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => Ok(Self::All),
            "selected" => Ok(Self::Selected),
            other => Err(Error::arg(format!(
                "unknown vote mode {other:?}; expected all or selected"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleConfig {
    pub params: TrainParams,
    pub folds: usize,
    pub threshold: f64,
    pub mode: VoteMode,
    /// Also cross-validate the comparison-only classifiers.
    pub baselines: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            params: TrainParams::default(),
            folds: 5,
            threshold: 0.95,
            mode: VoteMode::All,
            baselines: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub cv: CvResult,
    pub pipeline: Pipeline,
}

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleModel {
    pub schema_version: u32,
    pub seed: u64,
    pub mode: VoteMode,
    pub members: Vec<Member>,
    /// Two-class MLP on the ES wall-thickness features: 0 = MINF, 1 = DCM.
    pub expert: Pipeline,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub seed: u64,
    pub cv: Vec<(String, CvResult)>,
    /// Classifiers passing the threshold; empty if none did.
    pub selected: Vec<String>,
    pub threshold: f64,
    pub expert_cv: Option<CvResult>,
    pub rf_importance: Vec<f64>,
    pub rf_importance_std: Vec<f64>,
}

fn expert_dataset(ds: &Dataset) -> Result<Dataset> {
    let mut out = Dataset {
        ids: Vec::new(),
        x: Vec::new(),
        y: Vec::new(),
        n_classes: 2,
    };
    for i in 0..ds.len() {
        let cls = match DiseaseLabel::from_index(ds.y[i]) {
            Some(DiseaseLabel::Minf) => 0,
            Some(DiseaseLabel::Dcm) => 1,
            _ => continue,
        };
        out.ids.push(ds.ids[i].clone());
        out.x.push(ds.x[i].clone());
        out.y.push(cls);
    }
    if !out.y.contains(&0) || !out.y.contains(&1) {
        return Err(Error::Training("the expert needs both MINF and DCM cases".into()));
    }
    Ok(out)
}

/// Fits the stage-2 expert on MINF/DCM rows using only the ES wall-thickness
/// features.
pub fn train_expert(ds: &Dataset, params: &TrainParams) -> Result<Pipeline> {
    let sub = expert_dataset(ds)?;
    let rows: Vec<usize> = (0..sub.len()).collect();
    Pipeline::fit(&sub, &rows, &ES_MWT_INDICES, ClassifierKind::Mlp, params)
}

pub fn train_ensemble(ds: &Dataset, cfg: &EnsembleConfig) -> Result<(EnsembleModel, TrainingReport)> {
    if ds.n_classes != DiseaseLabel::ALL.len() {
        return Err(Error::arg("the ensemble expects the five disease classes"));
    }
    if ds.x.iter().any(|r| r.len() != FEATURE_COUNT) {
        return Err(Error::arg(format!("every row needs {FEATURE_COUNT} features")));
    }
    let all: Vec<usize> = (0..FEATURE_COUNT).collect();
    let rows: Vec<usize> = (0..ds.len()).collect();
    let seed = cfg.params.seed;

    let mut kinds = ClassifierKind::ENSEMBLE.to_vec();
    if cfg.baselines {
        kinds.extend(ClassifierKind::BASELINES);
    }
    let cv: Vec<(ClassifierKind, CvResult)> = kinds
        .iter()
        .map(|&k| Ok((k, cross_validate(ds, &all, k, &cfg.params, cfg.folds, seed)?)))
        .collect::<Result<_>>()?;
    let ensemble_scores: Vec<(String, f64)> = cv
        .iter()
        .filter(|(k, _)| ClassifierKind::ENSEMBLE.contains(k))
        .map(|(k, r)| (k.name().to_string(), r.mean))
        .collect();
    let selected = match select_classifiers(&ensemble_scores, cfg.threshold) {
        Ok(s) => s,
        Err(e) if cfg.mode == VoteMode::Selected => return Err(e),
        Err(_) => Vec::new(),
    };

    let members: Vec<Member> = cv
        .iter()
        .filter(|(k, _)| ClassifierKind::ENSEMBLE.contains(k))
        .filter(|(k, _)| cfg.mode == VoteMode::All || selected.iter().any(|s| s == k.name()))
        .map(|(k, r)| {
            Ok(Member {
                cv: r.clone(),
                pipeline: Pipeline::fit(ds, &rows, &all, *k, &cfg.params)?,
            })
        })
        .collect::<Result<_>>()?;

    let expert = train_expert(ds, &cfg.params)?;
    let sub = expert_dataset(ds)?;
    let expert_cv = cross_validate(&sub, &ES_MWT_INDICES, ClassifierKind::Mlp, &cfg.params, cfg.folds, seed).ok();

    let (rf_importance, rf_importance_std) = members
        .iter()
        .find_map(|m| match &m.pipeline.model {
            Model::Rf(rf) => Some((rf.importance.clone(), rf.importance_std.clone())),
            _ => None,
        })
        .unwrap_or_default();

    let report = TrainingReport {
        seed,
        cv: cv.iter().map(|(k, r)| (k.name().to_string(), r.clone())).collect(),
        selected,
        threshold: cfg.threshold,
        expert_cv,
        rf_importance,
        rf_importance_std,
    };
    let model = EnsembleModel {
        schema_version: MODEL_SCHEMA_VERSION,
        seed,
        mode: cfg.mode,
        members,
        expert,
    };
    Ok((model, report))
}

/// Majority label; among tied labels the one backed by the voter with the
/// highest CV accuracy wins, then the lowest label index. Returns the label
/// and whether a tie occurred.
pub fn combine_votes(votes: &[(DiseaseLabel, f64)]) -> Option<(DiseaseLabel, bool)> {
    let mut count = [0usize; 5];
    let mut best_cv = [f64::NEG_INFINITY; 5];
    for &(l, acc) in votes {
        count[l.index()] += 1;
        best_cv[l.index()] = best_cv[l.index()].max(acc);
    }
    let top = *count.iter().max()?;
    if top == 0 {
        return None;
    }
    let tied: Vec<usize> = (0..5).filter(|&i| count[i] == top).collect();
    let mut win = tied[0];
    for &i in &tied[1..] {
        if best_cv[i] > best_cv[win] {
            win = i;
        }
    }
    Some((DiseaseLabel::ALL[win], tied.len() > 1))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vote {
    pub classifier: String,
    pub label: DiseaseLabel,
    pub cv_accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub votes: Vec<Vote>,
    pub stage1: DiseaseLabel,
    pub stage1_tie: bool,
    pub stage2_fired: bool,
    pub stage2: Option<DiseaseLabel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: DiseaseLabel,
    pub audit: Audit,
}

/// Stage-2 decision given a stage-1 label: MINF and DCM go to the expert.
pub fn gate(stage1: DiseaseLabel, expert: impl FnOnce() -> DiseaseLabel) -> (DiseaseLabel, Option<DiseaseLabel>) {
    match stage1 {
        DiseaseLabel::Minf | DiseaseLabel::Dcm => {
            let e = expert();
            (e, Some(e))
        }
        other => (other, None),
    }
}

impl EnsembleModel {
    pub fn expert_predict(&self, row: &[Option<f64>]) -> DiseaseLabel {
        if self.expert.predict(row) == 0 {
            DiseaseLabel::Minf
        } else {
            DiseaseLabel::Dcm
        }
    }

    pub fn predict_two_stage(&self, rec: &FeatureRecord) -> Prediction {
        let row = rec.values;
        let votes: Vec<Vote> = self
            .members
            .iter()
            .map(|m| Vote {
                classifier: m.pipeline.kind.name().to_string(),
                label: DiseaseLabel::from_index(m.pipeline.predict(&row)).unwrap_or(DiseaseLabel::Nor),
                cv_accuracy: m.cv.mean,
            })
            .collect();
        let pairs: Vec<(DiseaseLabel, f64)> = votes.iter().map(|v| (v.label, v.cv_accuracy)).collect();
        let (stage1, stage1_tie) = combine_votes(&pairs).unwrap_or((DiseaseLabel::Nor, false));
        let (label, stage2) = gate(stage1, || self.expert_predict(&row));
        Prediction {
            label,
            audit: Audit {
                votes,
                stage1,
                stage1_tie,
                stage2_fired: stage2.is_some(),
                stage2,
            },
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = MODEL_MAGIC.to_vec();
        out.extend(MODEL_SCHEMA_VERSION.to_le_bytes());
        ciborium::into_writer(self, &mut out).map_err(|e| Error::Model(e.to_string()))?;
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 || &bytes[..4] != MODEL_MAGIC {
            return Err(Error::Model("not a cardiokit model file".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != MODEL_SCHEMA_VERSION {
            return Err(Error::Model(format!(
                "unsupported model version {version}, expected {MODEL_SCHEMA_VERSION}"
            )));
        }
        ciborium::from_reader(&bytes[8..]).map_err(|e| Error::Model(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

pub const MODEL_MAGIC: &[u8; 4] = b"CKEM";

/// `case_id,label` rows.
pub fn read_labels_csv<R: Read>(input: R) -> Result<Vec<(String, DiseaseLabel)>> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let pos = |name: &str| {
        header.iter().position(|h| h == name).ok_or_else(|| Error::Format {
            key: name.to_string(),
            message: "missing column".into(),
        })
    };
    let (id_col, label_col) = (pos("case_id")?, pos("label")?);
    r.records()
        .map(|rec| {
            let rec = rec?;
            Ok((
                rec.get(id_col).unwrap_or("").to_string(),
                rec.get(label_col).unwrap_or("").parse()?,
            ))
        })
        .collect()
}

pub fn write_labels_csv<W: Write>(out: W, rows: &[(String, DiseaseLabel)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["case_id", "label"])?;
    for (id, l) in rows {
        w.write_record([id.as_str(), l.as_str()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
