//! C ABI over `phonecls`.
//!
//! Every fallible entry point returns a [`PcStatus`]. On failure the message
//! is kept per thread and read back with [`pc_last_error`]. Objects cross the
//! boundary as opaque handles that the caller releases with the matching
//! `*_free` function. Panics never unwind into the caller.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use ndarray::Array2;
use phonecls::evaluation::{
    balanced_accuracy, bootstrap_balanced_accuracy, confusion_matrix, micro_accuracy, present_phones,
    BootstrapConfig, PredictionRecord, PredictionSet, ResampleUnit,
};
use phonecls::experiments::{run_experiment, ExperimentConfig};
use phonecls::features::{context_window, resample, utterance_features, MelConfig, MelFilterbank};
use phonecls::inventory::NUM_CLASSES;
use phonecls::models::{load_checkpoint, PhoneClassifier};
use phonecls::perceptual::{correlate, pearson};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Invalid configuration or inputs that contradict it.
    Config = 3,
    /// Malformed or inconsistent data.
    Data = 4,
    Runtime = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PcInterval {
    pub point: f64,
    pub low: f64,
    pub high: f64,
    pub half_width: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct PcCorrelation {
    pub r: f64,
    pub slope: f64,
    pub intercept: f64,
}

/// Scored frames: true and predicted class per frame, optional speaker.
pub struct PcPredictions {
    set: PredictionSet,
}

/// Utterance feature matrix (frames × 120).
pub struct PcFeatures {
    feats: Array2<f64>,
    context_frames: usize,
}

/// Trained classifier loaded from a checkpoint.
pub struct PcModel {
    model: PhoneClassifier,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PcStatus, String);

fn fail<E: Into<phonecls::Error>>(e: E) -> Failure {
    let e = e.into();
    let status = match e.exit_code() {
        phonecls::error::EXIT_CONFIG => PcStatus::Config,
        phonecls::error::EXIT_DATA => PcStatus::Data,
        _ => PcStatus::Runtime,
    };
    Failure(status, e.to_string())
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(PcStatus::InvalidArgument, msg.into())
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PcStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PcStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(PcStatus::NullPointer, format!("{name} is null")))
}

unsafe fn out<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| Failure(PcStatus::NullPointer, format!("{name} is null")))
}

/// Null is accepted only for an empty slice.
unsafe fn slice<'a, T>(p: *const T, n: usize, name: &str) -> Result<&'a [T], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure(PcStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, need: usize, name: &str) -> Result<&'a mut [T], Failure> {
    if p.is_null() {
        return Err(Failure(PcStatus::NullPointer, format!("{name} is null")));
    }
    if len < need {
        return Err(Failure(
            PcStatus::BufferTooSmall,
            format!("{name} holds {len} values, {need} needed"),
        ));
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

unsafe fn path(p: *const c_char, name: &str) -> Result<PathBuf, Failure> {
    let s = handle(p, name)?;
    let s = CStr::from_ptr(s)
        .to_str()
        .map_err(|_| invalid(format!("{name} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn excluded(exclude_label: i64) -> Option<usize> {
    usize::try_from(exclude_label).ok()
}

/// Message of the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pc_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Size of the phone inventory, silence included.
#[no_mangle]
pub extern "C" fn pc_num_classes() -> usize {
    NUM_CLASSES
}

/// Builds a prediction set from parallel arrays. `speaker_ids` may be null;
/// otherwise it holds `n` NUL-terminated strings.
///
/// # Safety
/// Array arguments must point to `n` readable elements.
#[no_mangle]
pub unsafe extern "C" fn pc_predictions_new(
    true_labels: *const usize,
    predicted_labels: *const usize,
    speaker_ids: *const *const c_char,
    n: usize,
    num_classes: usize,
    out_handle: *mut *mut PcPredictions,
) -> PcStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let t = slice(true_labels, n, "true_labels")?;
        let p = slice(predicted_labels, n, "predicted_labels")?;
        let speakers = if speaker_ids.is_null() {
            None
        } else {
            Some(slice(speaker_ids, n, "speaker_ids")?)
        };
        let records = (0..n)
            .map(|i| {
                let speaker_id = match speakers {
                    Some(s) => {
                        let ptr = handle(s[i], "speaker id")?;
                        CStr::from_ptr(ptr).to_string_lossy().into_owned()
                    }
                    None => String::new(),
                };
                Ok(PredictionRecord {
                    true_label: t[i],
                    predicted_label: p[i],
                    speaker_id,
                    utterance_id: format!("f{i}"),
                })
            })
            .collect::<Result<Vec<_>, Failure>>()?;
        let set = PredictionSet::new(records, num_classes).map_err(fail)?;
        *slot = Box::into_raw(Box::new(PcPredictions { set }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `pc_predictions_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_predictions_free(handle: *mut PcPredictions) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Mean per-phone accuracy in percent over the phones present. A negative
/// `exclude_label` keeps every phone.
///
/// # Safety
/// `preds` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_balanced_accuracy(
    preds: *const PcPredictions,
    exclude_label: i64,
    out_value: *mut f64,
) -> PcStatus {
    guard(|| {
        let set = &handle(preds, "preds")?.set;
        let slot = out(out_value, "out_value")?;
        let phones = present_phones(set, excluded(exclude_label));
        *slot = balanced_accuracy(set, &phones).map_err(fail)?.value;
        Ok(())
    })
}

/// Frame accuracy in percent.
///
/// # Safety
/// `preds` must be a live handle and `out_value` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_micro_accuracy(preds: *const PcPredictions, out_value: *mut f64) -> PcStatus {
    guard(|| {
        let set = &handle(preds, "preds")?.set;
        *out(out_value, "out_value")? = micro_accuracy(set).map_err(fail)?;
        Ok(())
    })
}

/// Percentile bootstrap interval of balanced accuracy. Resamples frames
/// within each phone, or whole speakers when `by_speaker` is set.
///
/// # Safety
/// `preds` must be a live handle and `out_interval` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_bootstrap_balanced_accuracy(
    preds: *const PcPredictions,
    exclude_label: i64,
    n_resamples: usize,
    alpha: f64,
    seed: u64,
    by_speaker: bool,
    out_interval: *mut PcInterval,
) -> PcStatus {
    guard(|| {
        let set = &handle(preds, "preds")?.set;
        let slot = out(out_interval, "out_interval")?;
        let config = BootstrapConfig {
            n_resamples,
            alpha,
            seed,
            unit: if by_speaker {
                ResampleUnit::Speakers
            } else {
                ResampleUnit::Frames
            },
            ..Default::default()
        };
        let phones = present_phones(set, excluded(exclude_label));
        let ci = bootstrap_balanced_accuracy(set, &phones, &config).map_err(fail)?;
        *slot = PcInterval {
            point: ci.point,
            low: ci.low,
            high: ci.high,
            half_width: ci.half_width,
        };
        Ok(())
    })
}

/// Row-normalised confusion percentages, row-major `k × k` with `k` the
/// set's class count. Rows of absent phones are zero.
///
/// # Safety
/// `out_values` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_confusion_matrix(
    preds: *const PcPredictions,
    out_values: *mut f64,
    len: usize,
) -> PcStatus {
    guard(|| {
        let set = &handle(preds, "preds")?.set;
        let k = set.num_classes();
        let dst = slice_mut(out_values, len, k * k, "out_values")?;
        let labels: Vec<String> = (0..k).map(|c| c.to_string()).collect();
        let m = confusion_matrix(set, &labels).map_err(fail)?;
        for (d, v) in dst.iter_mut().zip(m.values.iter().flatten()) {
            *d = *v;
        }
        Ok(())
    })
}

/// # Safety
/// `x` and `y` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_pearson(x: *const f64, y: *const f64, n: usize, out_r: *mut f64) -> PcStatus {
    guard(|| {
        let slot = out(out_r, "out_r")?;
        *slot = pearson(slice(x, n, "x")?, slice(y, n, "y")?).map_err(fail)?;
        Ok(())
    })
}

/// Pearson r plus the least-squares line `y = slope·x + intercept`.
///
/// # Safety
/// `x` and `y` must point to `n` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_correlate(
    x: *const f64,
    y: *const f64,
    n: usize,
    out_fit: *mut PcCorrelation,
) -> PcStatus {
    guard(|| {
        let slot = out(out_fit, "out_fit")?;
        let fit = correlate(slice(x, n, "x")?, slice(y, n, "y")?).map_err(fail)?;
        *slot = PcCorrelation {
            r: fit.r,
            slope: fit.slope,
            intercept: fit.intercept,
        };
        Ok(())
    })
}

/// Log-mel statics, deltas and delta-deltas with default settings.
/// Audio at other rates is resampled to 16 kHz first.
///
/// # Safety
/// `samples` must point to `n` readable floats.
#[no_mangle]
pub unsafe extern "C" fn pc_features_new(
    samples: *const f32,
    n: usize,
    sample_rate_hz: u32,
    out_handle: *mut *mut PcFeatures,
) -> PcStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let audio = slice(samples, n, "samples")?;
        if sample_rate_hz == 0 {
            return Err(invalid("sample_rate_hz is 0"));
        }
        let config = MelConfig::default();
        let audio = if sample_rate_hz == config.sample_rate_hz {
            audio.to_vec()
        } else {
            resample(audio, sample_rate_hz, config.sample_rate_hz).map_err(fail)?
        };
        let bank = MelFilterbank::new(&config).map_err(fail)?;
        let feats = utterance_features(&audio, &bank).map_err(fail)?;
        *slot = Box::into_raw(Box::new(PcFeatures {
            feats,
            context_frames: config.context_frames,
        }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `pc_features_new` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_features_free(handle: *mut PcFeatures) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// # Safety
/// `feats` must be a live handle; `rows` and `cols` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_features_shape(feats: *const PcFeatures, rows: *mut usize, cols: *mut usize) -> PcStatus {
    guard(|| {
        let f = &handle(feats, "feats")?.feats;
        *out(rows, "rows")? = f.nrows();
        *out(cols, "cols")? = f.ncols();
        Ok(())
    })
}

/// Copies the matrix row-major.
///
/// # Safety
/// `out_values` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_features_copy(feats: *const PcFeatures, out_values: *mut f64, len: usize) -> PcStatus {
    guard(|| {
        let f = &handle(feats, "feats")?.feats;
        let dst = slice_mut(out_values, len, f.len(), "out_values")?;
        for (d, v) in dst.iter_mut().zip(f.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Flattened context window centred on `center_frame`, zero-padded at the
/// utterance edges. This is the CNN model input row.
///
/// # Safety
/// `out_values` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn pc_features_context_window(
    feats: *const PcFeatures,
    center_frame: usize,
    out_values: *mut f64,
    len: usize,
) -> PcStatus {
    guard(|| {
        let h = handle(feats, "feats")?;
        if center_frame >= h.feats.nrows() {
            return Err(invalid(format!(
                "center frame {center_frame} outside {} frames",
                h.feats.nrows()
            )));
        }
        let w = context_window(&h.feats, center_frame, h.context_frames).flatten();
        let dst = slice_mut(out_values, len, w.len(), "out_values")?;
        dst.copy_from_slice(&w);
        Ok(())
    })
}

/// # Safety
/// `checkpoint_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pc_model_load(checkpoint_path: *const c_char, out_handle: *mut *mut PcModel) -> PcStatus {
    guard(|| {
        let slot = out(out_handle, "out_handle")?;
        let (model, _) = load_checkpoint(&path(checkpoint_path, "checkpoint_path")?).map_err(fail)?;
        *slot = Box::into_raw(Box::new(PcModel { model }));
        Ok(())
    })
}

/// # Safety
/// `handle` must come from `pc_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pc_model_free(handle: *mut PcModel) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Values per input row: a flattened feature context or a waveform window.
///
/// # Safety
/// `model` must be a live handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_model_input_len(model: *const PcModel, out_len: *mut usize) -> PcStatus {
    guard(|| {
        *out(out_len, "out_len")? = handle(model, "model")?.model.input_len();
        Ok(())
    })
}

unsafe fn batch(model: &PhoneClassifier, inputs: *const f64, n_rows: usize, row_len: usize) -> Result<Array2<f64>, Failure> {
    if row_len != model.input_len() {
        return Err(invalid(format!("row_len {row_len}, model expects {}", model.input_len())));
    }
    let x = slice(inputs, n_rows * row_len, "inputs")?;
    Ok(Array2::from_shape_vec((n_rows, row_len), x.to_vec()).expect("length checked"))
}

/// Arg-max class per row.
///
/// # Safety
/// `inputs` must hold `n_rows · row_len` doubles and `out_labels` `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn pc_model_predict(
    model: *const PcModel,
    inputs: *const f64,
    n_rows: usize,
    row_len: usize,
    out_labels: *mut usize,
) -> PcStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        let x = batch(m, inputs, n_rows, row_len)?;
        let dst = slice_mut(out_labels, n_rows, n_rows, "out_labels")?;
        dst.copy_from_slice(&m.predict(&x).map_err(fail)?);
        Ok(())
    })
}

/// Raw class scores, row-major `n_rows × num_classes`.
///
/// # Safety
/// `inputs` must hold `n_rows · row_len` doubles and `out_logits` `len`.
#[no_mangle]
pub unsafe extern "C" fn pc_model_logits(
    model: *const PcModel,
    inputs: *const f64,
    n_rows: usize,
    row_len: usize,
    out_logits: *mut f64,
    len: usize,
) -> PcStatus {
    guard(|| {
        let m = &handle(model, "model")?.model;
        let x = batch(m, inputs, n_rows, row_len)?;
        let logits = m.logits(&x).map_err(fail)?;
        let dst = slice_mut(out_logits, len, logits.len(), "out_logits")?;
        for (d, v) in dst.iter_mut().zip(logits.iter()) {
            *d = *v;
        }
        Ok(())
    })
}

/// Runs every stage of the experiment in `config_path` under `out_dir`.
///
/// # Safety
/// Both paths must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn pc_run_experiment(
    config_path: *const c_char,
    out_dir: *const c_char,
    force: bool,
) -> PcStatus {
    guard(|| {
        let config = ExperimentConfig::load(&path(config_path, "config_path")?).map_err(fail)?;
        run_experiment(&config, &path(out_dir, "out_dir")?, force).map_err(fail)?;
        Ok(())
    })
}
