//! C ABI over the paddydoc predictor.
//!
//! Handles are opaque; every fallible call returns a [`PdStatus`] and leaves
//! a message retrievable with [`pd_last_error_message`] on the calling
//! thread. Strings returned through out-parameters belong to the caller and
//! must be released with [`pd_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use paddydoc::classes::{DiseaseClass, NUM_CLASSES};
use paddydoc::predictor::{default_catalog, load_artifact, recommend, PredictError, Prediction, Predictor};

pub const PD_ABI_VERSION: u32 = 1;
pub const PD_NUM_CLASSES: usize = 3;

/// Result codes. Zero is success.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PdStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    NotFound = 3,
    Integrity = 4,
    Version = 5,
    Validation = 6,
    Decode = 7,
    Catalog = 8,
    Io = 9,
    Panic = 10,
    Other = 11,
}

/// A loaded model artifact. Safe to share across threads for prediction.
pub struct PdPredictor {
    inner: Predictor,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PdPrediction {
    /// 0 bacteria, 1 brown, 2 smut.
    pub class_index: u32,
    pub probabilities: [f64; PD_NUM_CLASSES],
    pub top1_confidence: f64,
    pub latency_ms: f64,
    /// Top-1 confidence is below the artifact's confidence floor.
    pub uncertain: bool,
}

impl From<&Prediction> for PdPrediction {
    fn from(p: &Prediction) -> Self {
        let mut probabilities = [0.0; PD_NUM_CLASSES];
        probabilities.copy_from_slice(&p.probabilities);
        Self {
            class_index: p.class_index as u32,
            probabilities,
            top1_confidence: p.top1_confidence,
            latency_ms: p.latency_ms,
            uncertain: p.uncertain,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(e: &PredictError) -> PdStatus {
    match e {
        PredictError::NotFound(_) => PdStatus::NotFound,
        PredictError::Integrity(_) => PdStatus::Integrity,
        PredictError::Version { .. } => PdStatus::Version,
        PredictError::Validation(_) => PdStatus::Validation,
        PredictError::Decode(_) => PdStatus::Decode,
        PredictError::Catalog(_) => PdStatus::Catalog,
        PredictError::Io(_) => PdStatus::Io,
        _ => PdStatus::Other,
    }
}

/// Runs `f`, converting errors and panics into a status plus last-error message.
fn guard(f: impl FnOnce() -> Result<(), (PdStatus, String)>) -> PdStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PdStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PdStatus::Panic
        }
    }
}

fn predict_err(e: PredictError) -> (PdStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PdStatus, String)> {
    if p.is_null() {
        return Err((PdStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PdStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

fn into_c_string(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("nul bytes removed").into_raw()
}

#[no_mangle]
pub extern "C" fn pd_abi_version() -> u32 {
    PD_ABI_VERSION
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call into this library from the same thread.
#[no_mangle]
pub extern "C" fn pd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Class name for an index (static storage), or null when out of range.
#[no_mangle]
pub extern "C" fn pd_class_name(index: u32) -> *const c_char {
    const NAMES: [&CStr; NUM_CLASSES] = [c"bacteria", c"brown", c"smut"];
    NAMES.get(index as usize).map_or(ptr::null(), |s| s.as_ptr())
}

/// Loads and verifies the artifact directory at `artifact_dir`.
///
/// # Safety
/// `artifact_dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_predictor_load(artifact_dir: *const c_char, out: *mut *mut PdPredictor) -> PdStatus {
    guard(|| {
        if out.is_null() {
            return Err((PdStatus::NullArgument, "out is null".into()));
        }
        *out = ptr::null_mut();
        let dir = c_str(artifact_dir, "artifact_dir")?;
        let inner = load_artifact(Path::new(dir)).map_err(predict_err)?;
        *out = Box::into_raw(Box::new(PdPredictor { inner }));
        Ok(())
    })
}

/// Releases a predictor. Null is ignored.
///
/// # Safety
/// `predictor` must come from [`pd_predictor_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_predictor_free(predictor: *mut PdPredictor) {
    if !predictor.is_null() {
        drop(Box::from_raw(predictor));
    }
}

unsafe fn run_predict(
    predictor: *const PdPredictor,
    bytes: *const u8,
    len: usize,
    out: *mut PdPrediction,
    frame: bool,
) -> PdStatus {
    guard(|| {
        if predictor.is_null() || out.is_null() || (bytes.is_null() && len > 0) {
            return Err((PdStatus::NullArgument, "predictor, bytes or out is null".into()));
        }
        let data = if len == 0 { &[][..] } else { std::slice::from_raw_parts(bytes, len) };
        let p = &(*predictor).inner;
        let prediction = if frame { p.predict_frame(data) } else { p.predict(data) }.map_err(predict_err)?;
        *out = PdPrediction::from(&prediction);
        Ok(())
    })
}

/// Classifies an encoded image (JPEG or PNG).
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pd_predict(
    predictor: *const PdPredictor,
    bytes: *const u8,
    len: usize,
    out: *mut PdPrediction,
) -> PdStatus {
    run_predict(predictor, bytes, len, out, false)
}

/// Same pipeline as [`pd_predict`], for frames from a video source.
///
/// # Safety
/// As for [`pd_predict`].
#[no_mangle]
pub unsafe extern "C" fn pd_predict_frame(
    predictor: *const PdPredictor,
    bytes: *const u8,
    len: usize,
    out: *mut PdPrediction,
) -> PdStatus {
    run_predict(predictor, bytes, len, out, true)
}

/// The artifact's `metadata.json` contents, re-serialized.
///
/// # Safety
/// `out_json` must be writable; free the result with [`pd_string_free`].
#[no_mangle]
pub unsafe extern "C" fn pd_predictor_metadata_json(predictor: *const PdPredictor, out_json: *mut *mut c_char) -> PdStatus {
    guard(|| {
        if predictor.is_null() || out_json.is_null() {
            return Err((PdStatus::NullArgument, "predictor or out_json is null".into()));
        }
        let json = serde_json::to_string(&(*predictor).inner.metadata()).expect("metadata serializes");
        *out_json = into_c_string(json);
        Ok(())
    })
}

/// Bundled advice for `class_name` as JSON.
///
/// # Safety
/// `class_name` must be NUL-terminated; free the result with [`pd_string_free`].
#[no_mangle]
pub unsafe extern "C" fn pd_recommendation_json(class_name: *const c_char, out_json: *mut *mut c_char) -> PdStatus {
    guard(|| {
        if out_json.is_null() {
            return Err((PdStatus::NullArgument, "out_json is null".into()));
        }
        *out_json = ptr::null_mut();
        let name = c_str(class_name, "class_name")?;
        let catalog = default_catalog();
        let advice = recommend(name, &catalog).map_err(predict_err)?;
        *out_json = into_c_string(serde_json::to_string(advice).expect("advice serializes"));
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pd_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

const _: () = assert!(DiseaseClass::ALL.len() == PD_NUM_CLASSES && NUM_CLASSES == PD_NUM_CLASSES);
