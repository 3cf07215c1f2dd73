//! C ABI over `pvad-core`.
//!
//! Every fallible function returns a [`PvadStatus`]; on failure the message
//! is available from [`pvad_last_error_message`] on the same thread. Models
//! are opaque handles released with [`pvad_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use pvad_core::dsp::{frame_count, log_mel_features, LogMelFrames, PcmSignal, N_MELS};
use pvad_core::metrics::{eer, wilcoxon_signed_rank};
use pvad_core::models::{dsc_combine, PvadModel as CoreModel, VadPosterior, VariantKind};
use pvad_core::speaker::{SpeakerEmbedding, EMBEDDING_DIM};
use pvad_core::training::load_checkpoint;
use pvad_core::Error;

pub const PVAD_N_MELS: usize = 40;
pub const PVAD_EMBEDDING_DIM: usize = 256;
pub const PVAD_N_CLASSES: usize = 3;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PvadStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Shape = 3,
    Io = 4,
    Checkpoint = 5,
    Numeric = 6,
    Degenerate = 7,
    BufferTooSmall = 8,
    Internal = 9,
}

/// Opaque model handle.
pub struct PvadModel {
    inner: CoreModel,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PvadWilcoxon {
    pub w_plus: f64,
    pub w_minus: f64,
    pub statistic: f64,
    pub n: usize,
    pub p_greater: f64,
    pub p_less: f64,
    pub p_two_sided: f64,
    pub exact: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> PvadStatus {
    match e {
        Error::Shape { .. } => PvadStatus::Shape,
        Error::Io { .. } | Error::Wav { .. } => PvadStatus::Io,
        Error::Checkpoint { .. } => PvadStatus::Checkpoint,
        Error::Numeric(_) => PvadStatus::Numeric,
        Error::Degenerate(_) => PvadStatus::Degenerate,
        _ => PvadStatus::InvalidArgument,
    }
}

/// Runs `f`, recording any error or panic.
fn guard(f: impl FnOnce() -> Result<(), (PvadStatus, String)>) -> PvadStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            PvadStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            PvadStatus::Internal
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (PvadStatus, String)>;
}

impl<T> IntoFfi<T> for pvad_core::Result<T> {
    fn ffi(self) -> Result<T, (PvadStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(what: &str) -> (PvadStatus, String) {
    (PvadStatus::NullPointer, format!("{what} is null"))
}

unsafe fn slice<'a, T>(p: *const T, n: usize, what: &str) -> Result<&'a [T], (PvadStatus, String)> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (PvadStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (PvadStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Toolkit version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pvad_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on this thread.
#[no_mangle]
pub extern "C" fn pvad_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Loads a checkpoint file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pvad_model_load(path: *const c_char, out: *mut *mut PvadModel) -> PvadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = str_arg(path, "path")?;
        let inner = load_checkpoint(path).ffi()?;
        *out = Box::into_raw(Box::new(PvadModel { inner }));
        Ok(())
    })
}

/// Builds a freshly initialized model: "DSC", "EF", "LF", "CLF" or "DCLF".
///
/// # Safety
/// `variant` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pvad_model_build(
    variant: *const c_char,
    seed: u64,
    out: *mut *mut PvadModel,
) -> PvadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let kind: VariantKind = str_arg(variant, "variant")?.parse().ffi()?;
        let inner = CoreModel::build(kind, seed).ffi()?;
        *out = Box::into_raw(Box::new(PvadModel { inner }));
        Ok(())
    })
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn pvad_model_free(model: *mut PvadModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn pvad_model_parameter_count(model: *const PvadModel, out: *mut usize) -> PvadStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        *out = m.inner.parameter_count();
        Ok(())
    })
}

/// Per-frame posteriors `(p_ts, p_nts, p_ns)` written row-major to `out`
/// (`n_frames * 3` values). `features` holds `n_frames * PVAD_N_MELS`
/// log-mel values as produced by [`pvad_log_mel_features`]. A null or
/// all-zero `enrollment` means no enrollment; otherwise it holds
/// `PVAD_EMBEDDING_DIM` values and is normalized.
///
/// # Safety
/// All pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pvad_model_forward(
    model: *const PvadModel,
    features: *const f64,
    n_frames: usize,
    enrollment: *const f64,
    out: *mut f64,
) -> PvadStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        let feats = slice(features, n_frames * N_MELS, "features")?;
        let feats = LogMelFrames::from_rows(feats.to_vec(), n_frames).ffi()?;
        let emb = if enrollment.is_null() {
            SpeakerEmbedding::zero()
        } else {
            let v = slice(enrollment, EMBEDDING_DIM, "enrollment")?.to_vec();
            if v.iter().all(|&x| x == 0.0) {
                SpeakerEmbedding::zero()
            } else {
                SpeakerEmbedding::normalized(v).ffi()?
            }
        };
        let post = m.inner.posteriors(&feats, &emb).ffi()?;
        if out.is_null() {
            return Err(null("out"));
        }
        let out = std::slice::from_raw_parts_mut(out, post.len() * PVAD_N_CLASSES);
        for (o, p) in out.chunks_exact_mut(PVAD_N_CLASSES).zip(&post) {
            o.copy_from_slice(&[p.p_ts, p.p_nts, p.p_ns]);
        }
        Ok(())
    })
}

/// Number of feature frames for a signal of `n_samples` at 16 kHz.
#[no_mangle]
pub extern "C" fn pvad_frame_count(n_samples: usize) -> usize {
    frame_count(n_samples)
}

/// Log-mel features of 16 kHz mono samples in [-1, 1]. Writes
/// `pvad_frame_count(n_samples) * PVAD_N_MELS` values to `out`, whose
/// capacity in values is `out_len`, and the frame count to `n_frames`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn pvad_log_mel_features(
    samples: *const f32,
    n_samples: usize,
    out: *mut f64,
    out_len: usize,
    n_frames: *mut usize,
) -> PvadStatus {
    guard(|| {
        let n_out = n_frames.as_mut().ok_or_else(|| null("n_frames"))?;
        let s = slice(samples, n_samples, "samples")?;
        let f = log_mel_features(&PcmSignal::new(s.to_vec()).ffi()?).ffi()?;
        *n_out = f.n_frames();
        let need = f.as_slice().len();
        if out_len < need {
            return Err((
                PvadStatus::BufferTooSmall,
                format!("output holds {out_len} values, need {need}"),
            ));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        std::slice::from_raw_parts_mut(out, need).copy_from_slice(f.as_slice());
        Ok(())
    })
}

/// Equal error rate of `scores` against 0/1 `labels`.
///
/// # Safety
/// Pointers must be valid for `n` elements; outputs may not be null.
#[no_mangle]
pub unsafe extern "C" fn pvad_eer(
    scores: *const f64,
    labels: *const u8,
    n: usize,
    eer_out: *mut f64,
    threshold_out: *mut f64,
) -> PvadStatus {
    guard(|| {
        let s = slice(scores, n, "scores")?;
        let l: Vec<bool> = slice(labels, n, "labels")?.iter().map(|&x| x != 0).collect();
        let r = eer(s, &l).ffi()?;
        *eer_out.as_mut().ok_or_else(|| null("eer_out"))? = r.eer;
        *threshold_out.as_mut().ok_or_else(|| null("threshold_out"))? = r.operating_threshold;
        Ok(())
    })
}

/// Wilcoxon signed-rank test on paired differences.
///
/// # Safety
/// `diffs` must be valid for `n` elements and `out` non-null.
#[no_mangle]
pub unsafe extern "C" fn pvad_wilcoxon(diffs: *const f64, n: usize, out: *mut PvadWilcoxon) -> PvadStatus {
    guard(|| {
        let d = slice(diffs, n, "diffs")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        let r = wilcoxon_signed_rank(d).ffi()?;
        *out = PvadWilcoxon {
            w_plus: r.w_plus,
            w_minus: r.w_minus,
            statistic: r.statistic,
            n: r.n,
            p_greater: r.p_greater,
            p_less: r.p_less,
            p_two_sided: r.p_two_sided,
            exact: r.exact,
        };
        Ok(())
    })
}

/// Score-combination posterior from a VAD posterior and a speaker cosine.
/// With `has_cosine == false` the cosine is ignored (no enrollment).
///
/// # Safety
/// `out` must be valid for 3 values.
#[no_mangle]
pub unsafe extern "C" fn pvad_dsc_combine(
    p_s: f64,
    p_ns: f64,
    cosine: f64,
    has_cosine: bool,
    out: *mut f64,
) -> PvadStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let p = dsc_combine(VadPosterior { p_s, p_ns }, has_cosine.then_some(cosine)).ffi()?;
        std::slice::from_raw_parts_mut(out, 3).copy_from_slice(&[p.p_ts, p.p_nts, p.p_ns]);
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_constants_match_core() {
        assert_eq!(PVAD_N_MELS, N_MELS);
        assert_eq!(PVAD_EMBEDDING_DIM, EMBEDDING_DIM);
    }
}
