use std::ffi::{CStr, CString};
use std::process::Command;
use std::ptr;

use cardiokit::diagnosis::{train_ensemble, Dataset, DiseaseLabel, EnsembleConfig, MlpParams, TrainParams};
use cardiokit::features::{extract_features, PhaseLabels, FEATURE_COUNT};
use cardiokit::phantom::{cohort, demo_case};
use cardiokit::volume::{save_labels, save_scalar, LV, MYO};
use cardiokit_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(ck_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn cpath(p: &std::path::Path) -> CString {
    CString::new(p.to_str().unwrap()).unwrap()
}

#[test]
fn null_arguments_are_reported() {
    unsafe {
        let mut h: *mut CkLabelVolume = ptr::null_mut();
        assert_eq!(ck_labels_load(ptr::null(), &mut h), CkStatus::NullPointer);
        assert!(last_error().contains("null"));
        assert_eq!(ck_labels_dims(ptr::null(), ptr::null_mut()), CkStatus::NullPointer);
        ck_labels_free(ptr::null_mut());
        ck_scalar_free(ptr::null_mut());
        ck_model_free(ptr::null_mut());
    }
}

#[test]
fn missing_file_is_an_io_error_and_success_clears_the_message() {
    let dir = tempfile::tempdir().unwrap();
    let missing = cpath(&dir.path().join("none.vol"));
    unsafe {
        let mut h: *mut CkLabelVolume = ptr::null_mut();
        assert_eq!(ck_labels_load(missing.as_ptr(), &mut h), CkStatus::Io);
        assert!(h.is_null());
        assert!(last_error().contains("none.vol"));
        let mut n = 0u64;
        assert_eq!(ck_net_param_count(b'C' as _, 12, 36, 3, 4, 128, &mut n), CkStatus::Ok);
        assert_eq!(last_error(), "");
    }
}

#[test]
fn volumes_round_trip_and_postprocess() {
    let dir = tempfile::tempdir().unwrap();
    let case = demo_case(2).unwrap();
    save_labels(dir.path().join("ed.vol"), &case.ed).unwrap();
    save_scalar(dir.path().join("cine.vol"), &case.cine).unwrap();
    unsafe {
        let mut ed: *mut CkLabelVolume = ptr::null_mut();
        assert_eq!(
            ck_labels_load(cpath(&dir.path().join("ed.vol")).as_ptr(), &mut ed),
            CkStatus::Ok
        );
        let mut dims = [0usize; 4];
        assert_eq!(ck_labels_dims(ed, dims.as_mut_ptr()), CkStatus::Ok);
        assert_eq!(dims, [128, 128, 3, 1]);
        let mut lv = 0usize;
        assert_eq!(ck_labels_count(ed, LV, &mut lv), CkStatus::Ok);
        assert_eq!(lv, case.ed.count(LV));

        let mut clean: *mut CkLabelVolume = ptr::null_mut();
        assert_eq!(ck_labels_postprocess(ed, &mut clean), CkStatus::Ok);
        let mut m = CkClassMetrics::default();
        assert_eq!(ck_eval_class(clean, ed, MYO, &mut m), CkStatus::Ok);
        assert_eq!((m.dice, m.jaccard, m.hd_defined), (1.0, 1.0, 1));
        assert_eq!(m.hd_mm, 0.0);
        assert_eq!(ck_eval_class(clean, ed, 0, &mut m), CkStatus::InvalidArgument);

        let out = cpath(&dir.path().join("copy.vol"));
        assert_eq!(ck_labels_save(clean, out.as_ptr()), CkStatus::Ok);
        ck_labels_free(clean);
        ck_labels_free(ed);

        let mut cine: *mut CkScalarVolume = ptr::null_mut();
        assert_eq!(
            ck_scalar_load(cpath(&dir.path().join("cine.vol")).as_ptr(), &mut cine),
            CkStatus::Ok
        );
        let (mut x, mut y) = (0usize, 0usize);
        assert_eq!(ck_roi_locate(cine, &mut x, &mut y), CkStatus::Ok);
        assert!((x as f64 - case.center.0).abs() <= 3.0 && (y as f64 - case.center.1).abs() <= 3.0);
        ck_scalar_free(cine);
    }
}

#[test]
fn buffers_features_and_prediction() {
    let cases = cohort(6, 11).unwrap();
    let records: Vec<_> = cases
        .iter()
        .map(|(id, _, ed, es)| {
            (
                id.clone(),
                extract_features(&PhaseLabels::new(ed.clone(), es.clone()).unwrap(), 1.05).unwrap(),
            )
        })
        .collect();
    let labels: Vec<(String, DiseaseLabel)> = cases.iter().map(|(id, l, ..)| (id.clone(), *l)).collect();
    let ds = Dataset::from_records(&records, &labels).unwrap();
    let cfg = EnsembleConfig {
        params: TrainParams {
            rf_trees: 20,
            mlp: MlpParams {
                max_epochs: 200,
                ..MlpParams::default()
            },
            ..TrainParams::default()
        },
        folds: 3,
        baselines: false,
        ..EnsembleConfig::default()
    };
    let (model, _) = train_ensemble(&ds, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let model_path = dir.path().join("model.bin");
    model.save(&model_path).unwrap();

    let (_, _, ed, es) = &cases[0];
    unsafe {
        let mut h_ed: *mut CkLabelVolume = ptr::null_mut();
        let mut h_es: *mut CkLabelVolume = ptr::null_mut();
        let sp = [ed.spacing()[0], ed.spacing()[1], ed.spacing()[2]];
        let [nx, ny, nz, _] = ed.dims();
        assert_eq!(
            ck_labels_from_buffer(ed.labels().as_ptr(), nx, ny, nz, sp.as_ptr(), &mut h_ed),
            CkStatus::Ok
        );
        assert_eq!(
            ck_labels_from_buffer(es.labels().as_ptr(), nx, ny, nz, sp.as_ptr(), &mut h_es),
            CkStatus::Ok
        );
        let mut values = [0.0f64; FEATURE_COUNT];
        let mut present = [0u8; FEATURE_COUNT];
        assert_eq!(
            ck_features_extract(h_ed, h_es, 1.05, values.as_mut_ptr(), present.as_mut_ptr()),
            CkStatus::Ok
        );
        for (i, v) in records[0].1.values.iter().enumerate() {
            assert_eq!(present[i] != 0, v.is_some());
            if let Some(v) = v {
                assert_eq!(values[i], *v);
            }
        }

        let mut m: *mut CkModel = ptr::null_mut();
        assert_eq!(ck_model_load(cpath(&model_path).as_ptr(), &mut m), CkStatus::Ok);
        let (mut label, mut fired) = (99u32, 9u8);
        assert_eq!(
            ck_model_predict(m, values.as_ptr(), present.as_ptr(), &mut label, &mut fired),
            CkStatus::Ok
        );
        let expected = model.predict_two_stage(&records[0].1);
        assert_eq!(label as usize, expected.label.index());
        assert_eq!(fired != 0, expected.audit.stage2_fired);
        ck_model_free(m);
        ck_labels_free(h_ed);
        ck_labels_free(h_es);

        let bad = cpath(&dir.path().join("bad.bin"));
        std::fs::write(dir.path().join("bad.bin"), b"nonsense").unwrap();
        assert_eq!(ck_model_load(bad.as_ptr(), &mut m), CkStatus::Model);
    }
}

#[test]
fn net_param_counts_match_the_library() {
    unsafe {
        let mut a = 0u64;
        let mut c = 0u64;
        assert_eq!(ck_net_param_count(b'A' as _, 12, 36, 3, 4, 128, &mut a), CkStatus::Ok);
        assert_eq!(ck_net_param_count(b'C' as _, 12, 36, 3, 4, 128, &mut c), CkStatus::Ok);
        assert!(c < a);
        assert_eq!(
            ck_net_param_count(b'Z' as _, 12, 36, 3, 4, 128, &mut a),
            CkStatus::InvalidArgument
        );
        assert_eq!(ck_net_param_count(b'C' as _, 12, 36, 3, 4, 20, &mut a), CkStatus::Build);
        assert!(last_error().contains("maxpool"));
    }
}

#[test]
fn version_is_the_crate_version() {
    let v = unsafe { CStr::from_ptr(ck_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api_and_compiles() {
    let header = concat!(env!("CARGO_MANIFEST_DIR"), "/include/cardiokit.h");
    let text = std::fs::read_to_string(header).unwrap();
    for sym in [
        "ck_last_error_message",
        "ck_labels_load",
        "ck_labels_postprocess",
        "ck_eval_class",
        "ck_features_extract",
        "ck_model_predict",
        "ck_net_param_count",
        "typedef struct CkModel CkModel",
        "CK_STATUS_PANIC",
    ] {
        assert!(text.contains(sym), "header lacks {sym}");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("use.c");
    std::fs::write(
        &src,
        "#include \"cardiokit.h\"\nint main(void) { CkLabelVolume *v = 0; return ck_labels_load(\"x\", &v) == CK_STATUS_OK; }\n",
    )
    .unwrap();
    match Command::new("cc")
        .args([
            "-fsyntax-only",
            "-Wall",
            "-Werror",
            "-I",
            concat!(env!("CARGO_MANIFEST_DIR"), "/include"),
        ])
        .arg(&src)
        .status()
    {
        Ok(s) => assert!(s.success(), "header does not compile as C"),
        Err(e) => eprintln!("skipping C compile check: {e}"),
    }
}
