use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use cardiokit::augment::{apply_augment, sample_params_with, AugmentParams};
use cardiokit::config::{env_name, parse_size, PipelineConfig, KEYS};
use cardiokit::diagnosis::{read_labels_csv, train_ensemble, Dataset, EnsembleModel};
use cardiokit::features::{extract_features, read_features_csv, write_features_csv, PhaseLabels};
use cardiokit::imgproc::Image2;
use cardiokit::loss::{loss_from_probs, weight_map_volume, ClassField, WeightMap};
use cardiokit::metrics::{evaluate_case, write_csv};
use cardiokit::netgraph::{
    build_graph, calibration_report, format_calibration, param_count, report, to_dot, NetConfig, Variant,
};
use cardiokit::pipeline::{run_pipeline, CaseInputs, SegSource};
use cardiokit::postprocess::postprocess_labels_with;
use cardiokit::roi::extract_roi;
use cardiokit::volume::{load_labels, load_scalar, save_labels, save_scalar, LabelVolume, ScalarVolume};
use cardiokit::{Error, Result};

#[derive(Parser, Debug)]
#[command(
    name = "cardiokit",
    version,
    about = "Cardiac cine-MR segmentation support and disease diagnosis"
)]
struct Cli {
    /// Configuration file of `key = value` lines.
    #[arg(long, global = true, env = "CARDIOKIT_CONFIG")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Locate the left ventricle and cut the ROI patch from a cine volume.
    Roi(RoiArgs),
    /// Write randomly augmented copies of a volume and its labels.
    Augment(AugmentArgs),
    /// Compute the spatial weight map of a label volume.
    Weights(WeightsArgs),
    /// Evaluate the combined loss of a probability volume against labels.
    Loss(LossArgs),
    /// Clean a label volume with connected-component and hole-filling stages.
    Postproc(PostprocArgs),
    /// Per-class overlap and distance metrics against ground truth.
    Eval(EvalArgs),
    /// Extract the 20 cardiac features from ED and ES labels.
    Features(FeaturesArgs),
    /// Train the diagnosis ensemble.
    TrainClf(TrainArgs),
    /// Predict diagnoses with a trained ensemble.
    Predict(PredictArgs),
    /// Report shapes and parameter counts of a network variant.
    Netinfo(NetinfoArgs),
    /// Run every stage for one case.
    Pipeline(PipelineArgs),
    /// List the configuration keys and their environment variables.
    ConfigKeys,
}

#[derive(Args, Debug)]
struct RoiArgs {
    #[arg(long)]
    input: PathBuf,
    /// JSON with the centre and patch size; `-` for stdout.
    #[arg(long)]
    out_center: String,
    #[arg(long)]
    out_patch: Option<PathBuf>,
    #[arg(long)]
    radius_min: Option<usize>,
    #[arg(long)]
    radius_max: Option<usize>,
    #[arg(long)]
    top_p: Option<usize>,
    #[arg(long)]
    vote_sigma: Option<f64>,
    #[arg(long)]
    h1_noise_frac: Option<f64>,
    #[arg(long)]
    canny_sigma: Option<f64>,
    #[arg(long)]
    canny_low: Option<f64>,
    #[arg(long)]
    canny_high: Option<f64>,
    /// WxH.
    #[arg(long, value_parser = parse_size)]
    patch_size: Option<(usize, usize)>,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    count: usize,
    #[arg(long)]
    out_dir: PathBuf,
    /// Also sample random horizontal and vertical flips.
    #[arg(long)]
    flips: bool,
}

#[derive(Args, Debug)]
struct WeightsArgs {
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    dilate_iters: Option<usize>,
}

#[derive(Args, Debug)]
struct LossArgs {
    /// FLOAT32 volume with one class per entry of the fourth axis.
    #[arg(long)]
    probs: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Weight map volume; computed from the labels when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long)]
    out: String,
}

#[derive(Args, Debug)]
struct PostprocArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    skip_3d: bool,
    #[arg(long)]
    skip_2d: bool,
    #[arg(long)]
    skip_fill: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Label volume or a directory of `.vol` files.
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long)]
    csv: String,
}

#[derive(Args, Debug)]
struct FeaturesArgs {
    #[arg(long)]
    ed: PathBuf,
    #[arg(long)]
    es: PathBuf,
    #[arg(long)]
    out: String,
    /// Defaults to the ED file stem.
    #[arg(long)]
    case_id: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Training report (cross-validation scores, selection, importances).
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    out: String,
}

#[derive(Args, Debug)]
struct NetinfoArgs {
    #[arg(long, default_value = "C")]
    variant: Variant,
    #[arg(long, default_value_t = 12)]
    k: usize,
    #[arg(long, default_value_t = 36)]
    f: usize,
    #[arg(long, default_value_t = 3)]
    p: usize,
    /// Layers in every dense block.
    #[arg(long, default_value_t = 4)]
    layers: usize,
    #[arg(long, default_value_t = 4)]
    classes: usize,
    /// CxHxW.
    #[arg(long, default_value = "1x128x128")]
    input: String,
    /// JSON report; `-` for stdout.
    #[arg(long)]
    json: Option<String>,
    #[arg(long)]
    dot: Option<PathBuf>,
    /// Compare totals against the published reference counts.
    #[arg(long)]
    calibrate: bool,
}

#[derive(Args, Debug)]
struct PipelineArgs {
    #[arg(long)]
    cine: PathBuf,
    #[arg(long, conflicts_with = "ed_probs")]
    ed: Option<PathBuf>,
    #[arg(long, conflicts_with = "es_probs")]
    es: Option<PathBuf>,
    #[arg(long)]
    ed_probs: Option<PathBuf>,
    #[arg(long)]
    es_probs: Option<PathBuf>,
    #[arg(long)]
    gt_ed: Option<PathBuf>,
    #[arg(long)]
    gt_es: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    out_dir: PathBuf,
    /// Defaults to the cine file stem.
    #[arg(long)]
    case_id: Option<String>,
    /// Also print the report; `-` for stdout.
    #[arg(long)]
    out: Option<String>,
}

fn output(target: &str) -> Result<Box<dyn Write>> {
    if target == "-" {
        Ok(Box::new(std::io::stdout().lock()))
    } else {
        let f = std::fs::File::create(target).map_err(|e| io_err(target, e))?;
        Ok(Box::new(std::io::BufWriter::new(f)))
    }
}

fn io_err(path: impl AsRef<Path>, e: std::io::Error) -> Error {
    Error::Io {
        path: path.as_ref().to_path_buf(),
        source: e,
    }
}

fn write_json(target: &str, value: &impl serde::Serialize) -> Result<()> {
    let mut w = output(target)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| io_err(target, e))
}

fn stem(p: &Path) -> String {
    p.file_stem()
        .map_or_else(|| "case".into(), |s| s.to_string_lossy().into_owned())
}

fn cmd_roi(a: RoiArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut rc = cfg.roi.clone();
    macro_rules! over {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { rc.$f = v; })* };
    }
    over!(
        radius_min,
        radius_max,
        top_p,
        vote_sigma,
        h1_noise_frac,
        canny_sigma,
        canny_low,
        canny_high,
        patch_size
    );
    let vol = load_scalar(&a.input)?;
    let (res, patch) = extract_roi(&vol, &rc)?;
    if let Some(p) = &a.out_patch {
        save_scalar(p, &patch.to_volume(&vol))?;
    }
    let center = res.roi_center;
    eprintln!("roi centre ({}, {})", center.0, center.1);
    write_json(
        &a.out_center,
        &serde_json::json!({ "center": [center.0, center.1], "patch_size": [rc.patch_size.0, rc.patch_size.1] }),
    )
}

fn augment_volume(
    img: &ScalarVolume,
    lbl: Option<&LabelVolume>,
    p: &AugmentParams,
) -> Result<(ScalarVolume, Option<LabelVolume>)> {
    let [nx, ny, nz, nt] = img.dims();
    let sp = img.spacing();
    let slices: Vec<(Image2<f64>, Option<Image2<u8>>)> = (0..nz * nt)
        .into_par_iter()
        .map(|s| {
            let (z, t) = (s % nz, s / nz);
            let ps = AugmentParams {
                noise_seed: p.noise_seed.wrapping_add(s as u64),
                ..p.clone()
            };
            let l = lbl.map(|l| l.slice(z, t));
            apply_augment(&img.slice(z, t), l.as_ref(), &ps, (sp[0], sp[1]))
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(nx * ny * nz * nt);
    let mut labels = Vec::with_capacity(if lbl.is_some() { nx * ny * nz * nt } else { 0 });
    for (i, l) in slices {
        data.extend_from_slice(i.data());
        if let Some(l) = l {
            labels.extend_from_slice(l.data());
        }
    }
    let out = if img.ndims() == 3 {
        ScalarVolume::new_3d([nx, ny, nz], [sp[0], sp[1], sp[2]], data)?
    } else {
        ScalarVolume::new(img.dims(), sp, data)?
    };
    let out_lbl = match lbl {
        Some(l) => Some(l.with_labels(labels)?),
        None => None,
    };
    Ok((out, out_lbl))
}

fn cmd_augment(a: AugmentArgs, cfg: &PipelineConfig) -> Result<()> {
    let img = load_scalar(&a.input)?;
    let lbl = a.labels.as_ref().map(load_labels).transpose()?;
    if let Some(l) = &lbl {
        if l.dims() != img.dims() {
            return Err(Error::Argument(format!(
                "labels {:?} do not match image {:?}",
                l.dims(),
                img.dims()
            )));
        }
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| io_err(&a.out_dir, e))?;
    let mut ranges = cfg.augment;
    ranges.flips |= a.flips;
    for i in 0..a.count {
        let p = sample_params_with(a.seed.wrapping_add(i as u64), &ranges);
        let (o, ol) = augment_volume(&img, lbl.as_ref(), &p)?;
        save_scalar(a.out_dir.join(format!("image_{i:04}.vol")), &o)?;
        if let Some(ol) = ol {
            save_labels(a.out_dir.join(format!("labels_{i:04}.vol")), &ol)?;
        }
        write_json(&a.out_dir.join(format!("params_{i:04}.json")).to_string_lossy(), &p)?;
    }
    eprintln!("wrote {} augmented pairs to {}", a.count, a.out_dir.display());
    Ok(())
}

fn cmd_weights(a: WeightsArgs, cfg: &PipelineConfig) -> Result<()> {
    let lbl = load_labels(&a.labels)?;
    let w = weight_map_volume(&lbl, a.dilate_iters.unwrap_or(cfg.weight_dilate_iters))?;
    save_scalar(&a.out, &w)
}

fn cmd_loss(a: LossArgs, cfg: &PipelineConfig) -> Result<()> {
    let probs = load_scalar(&a.probs)?;
    let lbl = load_labels(&a.labels)?;
    let [nx, ny, nz, _] = probs.dims();
    let [lx, ly, lz, lt] = lbl.dims();
    if (lx, ly, lz, lt) != (nx, ny, nz, 1) {
        return Err(Error::Argument(format!(
            "labels are {lx}x{ly}x{lz}x{lt}, probabilities cover {nx}x{ny}x{nz}"
        )));
    }
    let p = ClassField::from_channel_volume(&probs)?;
    let w = match &a.weights {
        Some(path) => {
            let wv = load_scalar(path)?;
            if wv.data().len() != lbl.labels().len() {
                return Err(Error::Argument("weight map does not match the labels".into()));
            }
            WeightMap::new(wv.data().to_vec())?
        }
        None => WeightMap::new(weight_map_volume(&lbl, cfg.weight_dilate_iters)?.data().to_vec())?,
    };
    let b = loss_from_probs(&p, lbl.labels(), &w, &cfg.loss, 0.0)?;
    write_json(
        &a.out,
        &serde_json::json!({ "ce": b.ce, "dice_loss": b.dice_loss, "total": b.total, "clamped": b.clamped }),
    )
}

fn cmd_postproc(a: PostprocArgs, cfg: &PipelineConfig) -> Result<()> {
    let mut opts = cfg.postproc;
    opts.keep_3d &= !a.skip_3d;
    opts.keep_2d &= !a.skip_2d;
    opts.fill &= !a.skip_fill;
    let lbl = load_labels(&a.input)?;
    let out = postprocess_labels_with(&lbl, opts)?;
    let changed = lbl.labels().iter().zip(out.labels()).filter(|(x, y)| x != y).count();
    eprintln!("{changed} voxels relabelled");
    save_labels(&a.output, &out)
}

fn vol_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "vol"))
        .collect();
    files.sort();
    Ok(files)
}

fn cmd_eval(a: EvalArgs) -> Result<()> {
    let pairs: Vec<(String, PathBuf, PathBuf)> = if a.pred.is_dir() {
        if !a.gt.is_dir() {
            return Err(Error::Argument("--pred is a directory, so --gt must be one too".into()));
        }
        vol_files(&a.pred)?
            .into_iter()
            .map(|p| {
                let gt = a.gt.join(p.file_name().expect("listed file"));
                if !gt.exists() {
                    return Err(Error::Argument(format!("no ground truth for {}", p.display())));
                }
                Ok((stem(&p), p, gt))
            })
            .collect::<Result<_>>()?
    } else {
        vec![(stem(&a.pred), a.pred.clone(), a.gt.clone())]
    };
    if pairs.is_empty() {
        return Err(Error::Argument(format!("no .vol files in {}", a.pred.display())));
    }
    let cases = pairs
        .par_iter()
        .map(|(id, p, g)| evaluate_case(id, &load_labels(p)?, &load_labels(g)?))
        .collect::<Result<Vec<_>>>()?;
    let w = output(&a.csv)?;
    write_csv(w, &cases)
}

fn cmd_features(a: FeaturesArgs, cfg: &PipelineConfig) -> Result<()> {
    let phases = PhaseLabels::new(load_labels(&a.ed)?, load_labels(&a.es)?)?;
    let rec = extract_features(&phases, cfg.myo_density)?;
    let id = a.case_id.unwrap_or_else(|| stem(&a.ed));
    write_features_csv(output(&a.out)?, &[(id, rec)])
}

fn read_file(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| io_err(path, e))
}

fn cmd_train(a: TrainArgs, cfg: &PipelineConfig) -> Result<()> {
    let feats = read_features_csv(read_file(&a.features)?)?;
    let labels = read_labels_csv(read_file(&a.labels)?)?;
    let ds = Dataset::from_records(&feats, &labels)?;
    let mut ec = cfg.ensemble.clone();
    if let Some(s) = a.seed {
        ec.params.seed = s;
    }
    let (model, rep) = train_ensemble(&ds, &ec)?;
    model.save(&a.model)?;
    for (name, cv) in &rep.cv {
        eprintln!("{name:<4} cv accuracy {:.3} ({:.3})", cv.mean, cv.std);
    }
    eprintln!("selected above {}: {}", rep.threshold, rep.selected.join(", "));
    if let Some(r) = &a.report {
        write_json(&r.to_string_lossy(), &rep)?;
    }
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let model = EnsembleModel::load(&a.model)?;
    let feats = read_features_csv(read_file(&a.features)?)?;
    let out: Vec<serde_json::Value> = feats
        .iter()
        .map(|(id, rec)| {
            let p = model.predict_two_stage(rec);
            serde_json::json!({ "case_id": id, "label": p.label, "audit": p.audit })
        })
        .collect();
    write_json(&a.out, &out)
}

fn parse_chw(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<&str> = s.split(['x', 'X']).collect();
    let bad = || Error::Argument(format!("expected CxHxW, got {s:?}"));
    if parts.len() != 3 {
        return Err(bad());
    }
    let n: Vec<usize> = parts
        .iter()
        .map(|p| p.trim().parse().map_err(|_| bad()))
        .collect::<Result<_>>()?;
    Ok((n[0], n[1], n[2]))
}

fn cmd_netinfo(a: NetinfoArgs) -> Result<()> {
    let cfg = NetConfig {
        variant: a.variant,
        k: a.k,
        f: a.f,
        classes: a.classes,
        input: parse_chw(&a.input)?,
        ..NetConfig::default()
    }
    .with_depth(a.p, a.layers);
    let g = build_graph(&cfg)?;
    let counts = param_count(&g);
    let out = g.nodes.last().map(|n| n.shape).unwrap_or_default();
    eprintln!(
        "variant {:?} k={} f={} p={}: {} nodes, {} parameters, output {}x{}x{}",
        cfg.variant,
        cfg.k,
        cfg.f,
        cfg.p,
        g.nodes.len(),
        counts.total,
        out.0,
        out.1,
        out.2
    );
    if a.calibrate {
        eprint!("{}", format_calibration(&calibration_report(&cfg)?));
    }
    if let Some(j) = &a.json {
        write_json(j, &report(&g))?;
    }
    if let Some(d) = &a.dot {
        std::fs::write(d, to_dot(&g)).map_err(|e| io_err(d, e))?;
    }
    Ok(())
}

fn cmd_pipeline(a: PipelineArgs, cfg: &PipelineConfig) -> Result<()> {
    let seg = |labels: Option<PathBuf>, probs: Option<PathBuf>| {
        labels.map(SegSource::Labels).or(probs.map(SegSource::Probabilities))
    };
    let inputs = CaseInputs {
        case_id: a.case_id.unwrap_or_else(|| stem(&a.cine)),
        cine: a.cine,
        ed: seg(a.ed, a.ed_probs),
        es: seg(a.es, a.es_probs),
        gt_ed: a.gt_ed,
        gt_es: a.gt_es,
        model: a.model,
        out_dir: a.out_dir,
    };
    let rep = run_pipeline(&inputs, cfg)?;
    eprintln!("report written to {}", inputs.out_dir.join("report.json").display());
    if let Some(o) = &a.out {
        write_json(o, &rep)?;
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = PipelineConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Roi(a) => cmd_roi(a, &cfg),
        Command::Augment(a) => cmd_augment(a, &cfg),
        Command::Weights(a) => cmd_weights(a, &cfg),
        Command::Loss(a) => cmd_loss(a, &cfg),
        Command::Postproc(a) => cmd_postproc(a, &cfg),
        Command::Eval(a) => cmd_eval(a),
        Command::Features(a) => cmd_features(a, &cfg),
        Command::TrainClf(a) => cmd_train(a, &cfg),
        Command::Predict(a) => cmd_predict(a),
        Command::Netinfo(a) => cmd_netinfo(a),
        Command::Pipeline(a) => cmd_pipeline(a, &cfg),
        Command::ConfigKeys => {
            for (k, doc) in KEYS {
                println!("{k:<24} {:<32} {doc}", env_name(k));
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
