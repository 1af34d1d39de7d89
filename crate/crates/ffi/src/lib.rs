//! C ABI over `engagement-core`: model loading and inference, image
//! normalization, label combination, learning-rate schedule, metrics and
//! Fleiss' kappa.
//!
//! Every function returns an [`EngStatus`]; results go through out-pointers.
//! On failure [`eng_last_error`] describes the problem. Panics never cross
//! the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use engagement_core::annotation::{combine_dimensions, fleiss_kappa, BehavioralLabel, CombinedLabel, EmotionalLabel};
use engagement_core::dataset::{FaceGrid, PIXELS};
use engagement_core::evaluation;
use engagement_core::models::{Checkpoint, Network};
use engagement_core::preprocess::{normalize_image, prepare_input, PixelStats};
use engagement_core::training::lr_at_step;
use engagement_core::Error;
use ndarray::Axis;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EngStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Checkpoint = 4,
    Shape = 5,
    Normalization = 6,
    Metric = 7,
    Panic = 8,
    Internal = 9,
}

pub const ENG_BEHAVIORAL_ON_TASK: i32 = 0;
pub const ENG_BEHAVIORAL_OFF_TASK: i32 = 1;
pub const ENG_BEHAVIORAL_CANT_DECIDE: i32 = 2;

pub const ENG_EMOTIONAL_SATISFIED: i32 = 0;
pub const ENG_EMOTIONAL_CONFUSED: i32 = 1;
pub const ENG_EMOTIONAL_BORED: i32 = 2;
pub const ENG_EMOTIONAL_CANT_DECIDE: i32 = 3;

pub const ENG_COMBINED_ENGAGED: i32 = 0;
pub const ENG_COMBINED_DISENGAGED: i32 = 1;
pub const ENG_COMBINED_UNDECIDABLE: i32 = 2;

/// Pixels in one 48×48 face image.
pub const ENG_IMAGE_PIXELS: usize = 2304;

const _: () = assert!(ENG_IMAGE_PIXELS == PIXELS);

/// A loaded checkpoint ready for inference. Opaque to C.
pub struct EngModel {
    net: Network<f32>,
    stats: PixelStats,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(EngStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io { .. } => EngStatus::Io,
            Error::Checkpoint(_) | Error::Architecture(_) => EngStatus::Checkpoint,
            Error::Shape(_) => EngStatus::Shape,
            Error::Normalization(_) => EngStatus::Normalization,
            Error::Metric(_) => EngStatus::Metric,
            Error::Validation(_) => EngStatus::InvalidArgument,
            _ => EngStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(EngStatus::InvalidArgument, msg.into())
}

fn set_last_error(msg: String) {
    // interior NULs would truncate the message; replace them
    let msg = CString::new(msg.replace('\0', "?")).expect("no NUL left");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> EngStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => EngStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            EngStatus::Panic
        }
    }
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(EngStatus::NullPointer, format!("{what} is NULL")))
    } else {
        Ok(())
    }
}

/// # Safety
/// `p` must be NULL or point to `len` readable elements.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    non_null(p, what)?;
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failed call on this thread, or NULL after a
/// success. Valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn eng_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |s| s.as_ptr()))
}

/// Static, NUL-terminated crate version.
#[no_mangle]
pub extern "C" fn eng_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a checkpoint. It must carry pixel statistics.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eng_model_load(path: *const c_char, out: *mut *mut EngModel) -> EngStatus {
    guard(|| {
        non_null(path, "path")?;
        non_null(out, "out")?;
        *out = std::ptr::null_mut();
        let path = CStr::from_ptr(path).to_str().map_err(|_| invalid("path is not UTF-8"))?;
        let ckpt = Checkpoint::load(Path::new(path))?;
        let stats = ckpt.pixel_stats.clone().ok_or_else(|| {
            Failure(EngStatus::Checkpoint, format!("{path}: checkpoint has no pixel statistics"))
        })?;
        let net = ckpt.network()?;
        *out = Box::into_raw(Box::new(EngModel { net, stats }));
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle from [`eng_model_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn eng_model_free(model: *mut EngModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eng_model_num_classes(model: *const EngModel, out: *mut usize) -> EngStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(out, "out")?;
        *out = (*model).net.spec().num_classes;
        Ok(())
    })
}

/// Class probabilities for one row-major 48×48 grayscale face. Writes
/// `num_classes` values to `probs` and the arg-max to `class_out` (which
/// may be NULL).
///
/// # Safety
/// `pixels` must hold `pixels_len` bytes, `probs` room for `probs_len`
/// floats.
#[no_mangle]
pub unsafe extern "C" fn eng_model_predict(
    model: *const EngModel,
    pixels: *const u8,
    pixels_len: usize,
    probs: *mut f32,
    probs_len: usize,
    class_out: *mut usize,
) -> EngStatus {
    guard(|| {
        non_null(model, "model")?;
        non_null(probs, "probs")?;
        let model = &*model;
        let classes = model.net.spec().num_classes;
        if probs_len < classes {
            return Err(invalid(format!("probs holds {probs_len} values, model has {classes} classes")));
        }
        let grid = FaceGrid::new(slice(pixels, pixels_len, "pixels")?.to_vec())?;
        let input = prepare_input(&grid, &model.stats)?.insert_axis(Axis(0)).insert_axis(Axis(0));
        let p = model.net.forward(&input)?;
        let row = p.row(0);
        let out = std::slice::from_raw_parts_mut(probs, classes);
        for (o, &v) in out.iter_mut().zip(row.iter()) {
            *o = v;
        }
        if !class_out.is_null() {
            // first maximum wins, as in evaluation
            let best = row.iter().enumerate().fold(0, |b, (i, &v)| if v > row[b] { i } else { b });
            *class_out = best;
        }
        Ok(())
    })
}

/// Per-image normalization: subtract the mean, scale to norm 100.
///
/// # Safety
/// `pixels` must hold `len` bytes and `out` room for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn eng_normalize_image(pixels: *const u8, len: usize, out: *mut f64) -> EngStatus {
    guard(|| {
        non_null(out, "out")?;
        let grid = FaceGrid::new(slice(pixels, len, "pixels")?.to_vec())?;
        let normed = normalize_image(&grid)?;
        let dst = std::slice::from_raw_parts_mut(out, len);
        for (d, &v) in dst.iter_mut().zip(normed.iter()) {
            *d = v;
        }
        Ok(())
    })
}

fn behavioral(v: i32) -> Result<BehavioralLabel, Failure> {
    match v {
        ENG_BEHAVIORAL_ON_TASK => Ok(BehavioralLabel::OnTask),
        ENG_BEHAVIORAL_OFF_TASK => Ok(BehavioralLabel::OffTask),
        ENG_BEHAVIORAL_CANT_DECIDE => Ok(BehavioralLabel::CantDecide),
        _ => Err(invalid(format!("unknown behavioral label {v}"))),
    }
}

fn emotional(v: i32) -> Result<EmotionalLabel, Failure> {
    match v {
        ENG_EMOTIONAL_SATISFIED => Ok(EmotionalLabel::Satisfied),
        ENG_EMOTIONAL_CONFUSED => Ok(EmotionalLabel::Confused),
        ENG_EMOTIONAL_BORED => Ok(EmotionalLabel::Bored),
        ENG_EMOTIONAL_CANT_DECIDE => Ok(EmotionalLabel::CantDecide),
        _ => Err(invalid(format!("unknown emotional label {v}"))),
    }
}

/// Combines one behavioral and one emotional judgment into an
/// `ENG_COMBINED_*` value.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eng_combine_dimensions(behavioral_label: i32, emotional_label: i32, out: *mut i32) -> EngStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = match combine_dimensions(behavioral(behavioral_label)?, emotional(emotional_label)?) {
            CombinedLabel::Engaged => ENG_COMBINED_ENGAGED,
            CombinedLabel::Disengaged => ENG_COMBINED_DISENGAGED,
            CombinedLabel::Undecidable => ENG_COMBINED_UNDECIDABLE,
        };
        Ok(())
    })
}

/// Learning rate `a0 · r^(g/s)` at global step `g`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eng_lr_at_step(a0: f64, r: f64, s: u64, g: u64, out: *mut f64) -> EngStatus {
    guard(|| {
        non_null(out, "out")?;
        if s == 0 {
            return Err(invalid("decay step must be at least 1"));
        }
        if !(r > 0.0 && r <= 1.0) || !(a0 > 0.0 && a0.is_finite()) {
            return Err(invalid(format!("need a0 > 0 and r in (0, 1], got a0 {a0}, r {r}")));
        }
        *out = lr_at_step(a0, r, s, g);
        Ok(())
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eng_accuracy(tp: u64, tn: u64, fp: u64, fn_: u64, out: *mut f64) -> EngStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = evaluation::accuracy(tp, tn, fp, fn_)?;
        Ok(())
    })
}

/// F1 of the positive class; 0 when precision or recall is undefined.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn eng_f1(tp: u64, fp: u64, fn_: u64, out: *mut f64) -> EngStatus {
    guard(|| {
        non_null(out, "out")?;
        *out = evaluation::f1(tp, fp, fn_);
        Ok(())
    })
}

/// ROC AUC of `scores` against `positives` (nonzero = positive class).
///
/// # Safety
/// `scores` and `positives` must each hold `n` elements.
#[no_mangle]
pub unsafe extern "C" fn eng_auc(scores: *const f64, positives: *const u8, n: usize, out: *mut f64) -> EngStatus {
    guard(|| {
        non_null(out, "out")?;
        let scores = slice(scores, n, "scores")?;
        let pos: Vec<bool> = slice(positives, n, "positives")?.iter().map(|&p| p != 0).collect();
        *out = evaluation::auc(scores, &pos)?;
        Ok(())
    })
}

/// Fleiss' kappa over a row-major `items × categories` count matrix.
///
/// # Safety
/// `counts` must hold `items * categories` elements.
#[no_mangle]
pub unsafe extern "C" fn eng_fleiss_kappa(counts: *const u32, items: usize, categories: usize, out: *mut f64) -> EngStatus {
    guard(|| {
        non_null(out, "out")?;
        if categories == 0 {
            return Err(invalid("need at least one category"));
        }
        let len = items.checked_mul(categories).ok_or_else(|| invalid("count matrix too large"))?;
        let rows: Vec<Vec<u32>> = slice(counts, len, "counts")?.chunks(categories).map(<[u32]>::to_vec).collect();
        *out = fleiss_kappa(&rows)?;
        Ok(())
    })
}
