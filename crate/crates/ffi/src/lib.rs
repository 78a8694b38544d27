//! C ABI over the cardiokit library.
//!
//! Every function returns a [`CkStatus`]. On failure the message is available
//! from [`ck_last_error_message`] on the same thread until the next call.
//! Handles are opaque; each `*_load` or producing call has a matching `*_free`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use cardiokit::diagnosis::EnsembleModel;
use cardiokit::features::{extract_features, FeatureRecord, PhaseLabels, FEATURE_COUNT};
use cardiokit::metrics::evaluate_case;
use cardiokit::netgraph::{build_graph, param_count, NetConfig, Variant};
use cardiokit::postprocess::postprocess_labels;
use cardiokit::roi::{locate_roi, RoiConfig};
use cardiokit::volume::{load_labels, load_scalar, save_labels, LabelVolume, ScalarVolume};
use cardiokit::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CkStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Locate = 5,
    Model = 6,
    Build = 7,
    Failed = 8,
    Panic = 9,
}

/// Scalar (FLOAT32) volume.
pub struct CkScalarVolume {
    inner: ScalarVolume,
}

/// Label (UINT8) volume.
pub struct CkLabelVolume {
    inner: LabelVolume,
}

/// Trained diagnosis ensemble.
pub struct CkModel {
    inner: EnsembleModel,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CkClassMetrics {
    pub dice: f64,
    pub jaccard: f64,
    /// Valid only when `hd_defined` is nonzero.
    pub hd_mm: f64,
    pub hd_defined: u8,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> CkStatus {
    match e {
        Error::Io { .. } => CkStatus::Io,
        Error::Format { .. } | Error::Size { .. } | Error::Csv(_) | Error::Json(_) => CkStatus::Format,
        Error::Argument(_) | Error::Config(_) => CkStatus::InvalidArgument,
        Error::Locate(_) => CkStatus::Locate,
        Error::Model(_) => CkStatus::Model,
        Error::Build { .. } | Error::Trace(_) => CkStatus::Build,
        Error::Stage { source, .. } => status_of(source),
        _ => CkStatus::Failed,
    }
}

struct Fail(CkStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(CkStatus::NullPointer, format!("{what} is null"))
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CkStatus {
    set_error("");
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CkStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {msg}"));
            CkStatus::Panic
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(CkStatus::InvalidArgument, "path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread; empty after success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ck_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ck_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub unsafe extern "C" fn ck_scalar_load(path: *const c_char, out: *mut *mut CkScalarVolume) -> CkStatus {
    guard(|| {
        let inner = load_scalar(path_arg(path)?)?;
        store(out, CkScalarVolume { inner })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ck_scalar_free(v: *mut CkScalarVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

/// Writes `(nx, ny, nz, nt)` into `dims[0..4]`.
#[no_mangle]
pub unsafe extern "C" fn ck_scalar_dims(v: *const CkScalarVolume, dims: *mut usize) -> CkStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 4).copy_from_slice(&v.inner.dims());
        Ok(())
    })
}

/// Locates the left-ventricle centre of a cine volume with default settings.
#[no_mangle]
pub unsafe extern "C" fn ck_roi_locate(v: *const CkScalarVolume, x: *mut usize, y: *mut usize) -> CkStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        if x.is_null() || y.is_null() {
            return Err(null("output coordinate"));
        }
        let c = locate_roi(&v.inner, &RoiConfig::default())?.roi_center;
        *x = c.0;
        *y = c.1;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ck_labels_load(path: *const c_char, out: *mut *mut CkLabelVolume) -> CkStatus {
    guard(|| {
        let inner = load_labels(path_arg(path)?)?;
        store(out, CkLabelVolume { inner })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ck_labels_save(v: *const CkLabelVolume, path: *const c_char) -> CkStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        save_labels(path_arg(path)?, &v.inner)?;
        Ok(())
    })
}

/// Wraps a caller-owned buffer of `nx * ny * nz` labels (x fastest) in a
/// new single-frame volume. The buffer is copied.
#[no_mangle]
pub unsafe extern "C" fn ck_labels_from_buffer(
    data: *const u8,
    nx: usize,
    ny: usize,
    nz: usize,
    spacing: *const f64,
    out: *mut *mut CkLabelVolume,
) -> CkStatus {
    guard(|| {
        if data.is_null() || spacing.is_null() {
            return Err(null("data or spacing"));
        }
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| Fail(CkStatus::InvalidArgument, "volume size overflows".into()))?;
        let labels = std::slice::from_raw_parts(data, n).to_vec();
        let s = std::slice::from_raw_parts(spacing, 3);
        let inner = LabelVolume::new_3d([nx, ny, nz], [s[0], s[1], s[2]], labels)?;
        store(out, CkLabelVolume { inner })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ck_labels_free(v: *mut CkLabelVolume) {
    if !v.is_null() {
        drop(Box::from_raw(v));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ck_labels_dims(v: *const CkLabelVolume, dims: *mut usize) -> CkStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        std::slice::from_raw_parts_mut(dims, 4).copy_from_slice(&v.inner.dims());
        Ok(())
    })
}

/// Number of voxels carrying `class`.
#[no_mangle]
pub unsafe extern "C" fn ck_labels_count(v: *const CkLabelVolume, class: u8, out: *mut usize) -> CkStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = v.inner.count(class);
        Ok(())
    })
}

/// Post-processes `v` with every stage enabled into a new volume.
#[no_mangle]
pub unsafe extern "C" fn ck_labels_postprocess(v: *const CkLabelVolume, out: *mut *mut CkLabelVolume) -> CkStatus {
    guard(|| {
        let v = deref(v, "volume")?;
        let inner = postprocess_labels(&v.inner)?;
        store(out, CkLabelVolume { inner })
    })
}

/// Metrics of one foreground class of single-frame volumes.
#[no_mangle]
pub unsafe extern "C" fn ck_eval_class(
    pred: *const CkLabelVolume,
    gt: *const CkLabelVolume,
    class: u8,
    out: *mut CkClassMetrics,
) -> CkStatus {
    guard(|| {
        let (p, g) = (deref(pred, "pred")?, deref(gt, "gt")?);
        if out.is_null() {
            return Err(null("out"));
        }
        let m = evaluate_case("ffi", &p.inner, &g.inner)?;
        let c = m.classes.iter().find(|c| c.class == class).ok_or_else(|| {
            Fail(
                CkStatus::InvalidArgument,
                format!("class {class} is not a foreground class"),
            )
        })?;
        *out = CkClassMetrics {
            dice: c.dice.value,
            jaccard: c.jaccard.value,
            hd_mm: c.hd_mm.unwrap_or(f64::NAN),
            hd_defined: u8::from(c.hd_mm.is_some()),
        };
        Ok(())
    })
}

/// Writes the 20 features into `values`; `present[i]` is 0 where a feature
/// is undefined.
#[no_mangle]
pub unsafe extern "C" fn ck_features_extract(
    ed: *const CkLabelVolume,
    es: *const CkLabelVolume,
    myo_density: f64,
    values: *mut f64,
    present: *mut u8,
) -> CkStatus {
    guard(|| {
        let (ed, es) = (deref(ed, "ed")?, deref(es, "es")?);
        if values.is_null() || present.is_null() {
            return Err(null("values or present"));
        }
        let phases = PhaseLabels::new(ed.inner.clone(), es.inner.clone())?;
        let rec = extract_features(&phases, myo_density)?;
        let vals = std::slice::from_raw_parts_mut(values, FEATURE_COUNT);
        let pres = std::slice::from_raw_parts_mut(present, FEATURE_COUNT);
        for (i, v) in rec.values.iter().enumerate() {
            vals[i] = v.unwrap_or(f64::NAN);
            pres[i] = u8::from(v.is_some());
        }
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ck_model_load(path: *const c_char, out: *mut *mut CkModel) -> CkStatus {
    guard(|| {
        let inner = EnsembleModel::load(&path_arg(path)?)?;
        store(out, CkModel { inner })
    })
}

#[no_mangle]
pub unsafe extern "C" fn ck_model_free(m: *mut CkModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Two-stage prediction from 20 feature values. `present` may be null when
/// every value is defined. The label index follows NOR, MINF, DCM, HCM, ARV.
#[no_mangle]
pub unsafe extern "C" fn ck_model_predict(
    m: *const CkModel,
    values: *const f64,
    present: *const u8,
    label: *mut u32,
    expert_fired: *mut u8,
) -> CkStatus {
    guard(|| {
        let m = deref(m, "model")?;
        if values.is_null() || label.is_null() {
            return Err(null("values or label"));
        }
        let vals = std::slice::from_raw_parts(values, FEATURE_COUNT);
        let pres = (!present.is_null()).then(|| std::slice::from_raw_parts(present, FEATURE_COUNT));
        let mut rec = FeatureRecord {
            values: [None; FEATURE_COUNT],
        };
        for i in 0..FEATURE_COUNT {
            let ok = pres.is_none_or(|p| p[i] != 0);
            rec.values[i] = (ok && vals[i].is_finite()).then_some(vals[i]);
        }
        let p = m.inner.predict_two_stage(&rec);
        *label = p.label.index() as u32;
        if !expert_fired.is_null() {
            *expert_fired = u8::from(p.audit.stage2_fired);
        }
        Ok(())
    })
}

/// Trainable parameters of a network variant (`'A'`, `'B'` or `'C'`) with
/// uniform dense-block depth.
#[no_mangle]
pub unsafe extern "C" fn ck_net_param_count(
    variant: c_char,
    k: usize,
    f: usize,
    p: usize,
    layers: usize,
    input_hw: usize,
    out: *mut u64,
) -> CkStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let variant = match variant as u8 {
            b'A' | b'a' => Variant::A,
            b'B' | b'b' => Variant::B,
            b'C' | b'c' => Variant::C,
            other => {
                return Err(Fail(
                    CkStatus::InvalidArgument,
                    format!("unknown variant {:?}", other as char),
                ))
            }
        };
        let cfg = NetConfig {
            variant,
            k,
            f,
            input: (1, input_hw, input_hw),
            ..NetConfig::default()
        }
        .with_depth(p, layers);
        *out = param_count(&build_graph(&cfg)?).total;
        Ok(())
    })
}
