//! C interface to `kernsurv`.
//!
//! Objects cross the boundary as opaque handles created by `ks_*_new`/`load`
//! style calls and released with the matching `ks_*_free`. Fallible calls
//! return a [`KsStatus`] and write results through out-pointers; the message
//! of the most recent failure on the calling thread is available from
//! [`ks_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use kernsurv::conformal::{marginal_quantile, CalibrationScores};
use kernsurv::data::{generate_synthetic, load_csv, CsvSchema, HazardModel, SurvivalDataset, SyntheticSpec};
use kernsurv::estimator::{FittedConditionalKM, SurvivalCurve, TimeStatistic};
use kernsurv::neural::{train, Architecture, EmbeddingNet, ModelFile, TrainConfig};
use kernsurv::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    DimensionMismatch = 5,
    Model = 6,
    Panic = 7,
}

/// Survival dataset handle.
pub struct KsDataset {
    inner: SurvivalDataset,
}

/// Fitted model handle: learned embedding plus its conditional Kaplan-Meier predictor.
pub struct KsModel {
    file: ModelFile,
    predictor: FittedConditionalKM,
}

/// Survival curve handle.
pub struct KsCurve {
    inner: SurvivalCurve,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> KsStatus {
    match err {
        Error::Io { .. } => KsStatus::Io,
        Error::Csv { .. }
        | Error::MissingColumn(_)
        | Error::UnparseableCell { .. }
        | Error::NegativeTime { .. }
        | Error::InvalidEvent { .. } => KsStatus::Parse,
        Error::DimensionMismatch { .. } => KsStatus::DimensionMismatch,
        Error::Model(_) | Error::Json(_) => KsStatus::Model,
        _ => KsStatus::InvalidArgument,
    }
}

enum Failure {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> KsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => KsStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            KsStatus::NullPointer
        }
        Ok(Err(Failure::Invalid(msg))) => {
            set_error(msg);
            KsStatus::InvalidArgument
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            KsStatus::Panic
        }
    }
}

unsafe fn reference<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write<T>(out: *mut T, value: T, what: &'static str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::Null(what));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ks_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ks_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a headered CSV. `features` is a comma-separated list of columns, or
/// NULL for every column other than time and event.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_dataset_load_csv(
    path: *const c_char,
    time_col: *const c_char,
    event_col: *const c_char,
    features: *const c_char,
    out: *mut *mut KsDataset,
) -> KsStatus {
    guard(|| {
        let mut schema = CsvSchema::new(string(time_col, "time_col")?, string(event_col, "event_col")?);
        if !features.is_null() {
            let list = string(features, "features")?;
            schema = schema.with_features(list.split(',').map(|s| s.trim().to_string()).collect());
        }
        let inner = load_csv(string(path, "path")?, &schema)?;
        write(out, Box::into_raw(Box::new(KsDataset { inner })), "out")
    })
}

/// Builds a dataset from row-major features (`n * d` values), times and
/// event flags (nonzero means the event was observed).
///
/// # Safety
/// Arrays must hold the stated number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_dataset_from_arrays(
    features: *const f64,
    n: usize,
    d: usize,
    times: *const f64,
    events: *const u8,
    out: *mut *mut KsDataset,
) -> KsStatus {
    guard(|| {
        let total = n.checked_mul(d).ok_or_else(|| Failure::Invalid("n * d overflows".into()))?;
        let x = slice(features, total, "features")?;
        let t = slice(times, n, "times")?;
        let e: Vec<bool> = slice(events, n, "events")?.iter().map(|&v| v != 0).collect();
        let rows: Vec<Vec<f64>> = if d == 0 {
            vec![Vec::new(); n]
        } else {
            x.chunks(d).map(<[f64]>::to_vec).collect()
        };
        let inner = SurvivalDataset::from_parts(rows, t, &e)?;
        write(out, Box::into_raw(Box::new(KsDataset { inner })), "out")
    })
}

/// Synthetic dataset with exponential times of log-rate `beta . x` and
/// exponential censoring tuned to `censor`.
///
/// # Safety
/// `beta` must hold `beta_len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_dataset_synthetic_exponential(
    n: usize,
    d: usize,
    beta: *const f64,
    beta_len: usize,
    censor: f64,
    seed: u64,
    out: *mut *mut KsDataset,
) -> KsStatus {
    guard(|| {
        let spec = SyntheticSpec {
            n,
            d,
            hazard_model: HazardModel::Exponential {
                beta: slice(beta, beta_len, "beta")?.to_vec(),
            },
            censoring_rate_target: censor,
            seed,
        };
        let (inner, _) = generate_synthetic(&spec)?;
        write(out, Box::into_raw(Box::new(KsDataset { inner })), "out")
    })
}

/// Number of subjects; 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_dataset_len(dataset: *const KsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.len())
}

/// Number of features; 0 for NULL.
///
/// # Safety
/// `dataset` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_dataset_feature_dim(dataset: *const KsDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.inner.feature_dim())
}

/// Fraction of censored subjects.
///
/// # Safety
/// `dataset` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_dataset_censored_fraction(dataset: *const KsDataset, out: *mut f64) -> KsStatus {
    guard(|| {
        let d = reference(dataset, "dataset")?;
        write(out, d.inner.censored_fraction(), "out")
    })
}

/// # Safety
/// `dataset` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_dataset_free(dataset: *mut KsDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

fn model_from_file(file: ModelFile) -> Result<KsModel, Failure> {
    let predictor = file.predictor()?;
    Ok(KsModel { file, predictor })
}

/// Trains an embedding kernel without cross-validation. `arch` is one of
/// basic, diag, res-basic, res-diag, mlp; `hidden_layers`/`hidden_width` are
/// ignored for basic and diag. `grid_points` 0 uses the unique observed times.
///
/// # Safety
/// `train_data` must be a live handle, `arch` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ks_model_fit(
    train_data: *const KsDataset,
    arch: *const c_char,
    hidden_layers: usize,
    hidden_width: usize,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    grid_points: usize,
    seed: u64,
    out: *mut *mut KsModel,
) -> KsStatus {
    guard(|| {
        let data = &reference(train_data, "train_data")?.inner;
        let arch: Architecture = string(arch, "arch")?.parse()?;
        let config = TrainConfig {
            epochs,
            batch_size,
            learning_rate,
            seed,
            grid_points: (grid_points > 0).then_some(grid_points),
            ..TrainConfig::default()
        };
        let net = EmbeddingNet::build(arch, data.feature_dim(), hidden_layers, hidden_width, 0.1, seed);
        let trained = train(net, data, &config)?;
        let file = ModelFile::new(&trained.net, trained.grid, data.clone(), Some(config));
        write(out, Box::into_raw(Box::new(model_from_file(file)?)), "out")
    })
}

/// # Safety
/// `path` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_model_load(path: *const c_char, out: *mut *mut KsModel) -> KsStatus {
    guard(|| {
        let file = ModelFile::load(string(path, "path")?)?;
        write(out, Box::into_raw(Box::new(model_from_file(file)?)), "out")
    })
}

/// # Safety
/// `model` must be a live handle; `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn ks_model_save(model: *const KsModel, path: *const c_char) -> KsStatus {
    guard(|| {
        let m = reference(model, "model")?;
        m.file.save(string(path, "path")?)?;
        Ok(())
    })
}

/// Number of input features the model expects; 0 for NULL.
///
/// # Safety
/// `model` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_model_input_dim(model: *const KsModel) -> usize {
    model.as_ref().map_or(0, |m| m.file.input_dim)
}

/// Trainable parameters copied into `buf` (up to `cap`); `len_out` receives
/// the full count.
///
/// # Safety
/// `buf` must hold `cap` values (may be NULL when `cap` is 0).
#[no_mangle]
pub unsafe extern "C" fn ks_model_params(model: *const KsModel, buf: *mut f64, cap: usize, len_out: *mut usize) -> KsStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let p = &m.file.params;
        if cap > 0 {
            if buf.is_null() {
                return Err(Failure::Null("buf"));
            }
            let k = cap.min(p.len());
            ptr::copy_nonoverlapping(p.as_ptr(), buf, k);
        }
        write(len_out, p.len(), "len_out")
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_model_free(model: *mut KsModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Conditional Kaplan-Meier curve at feature vector `x`.
///
/// # Safety
/// `x` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_model_predict_curve(model: *const KsModel, x: *const f64, len: usize, out: *mut *mut KsCurve) -> KsStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let inner = m.predictor.conditional_km(slice(x, len, "x")?)?;
        write(out, Box::into_raw(Box::new(KsCurve { inner })), "out")
    })
}

/// Survival-time estimate at `x`: the median when `use_mean` is 0, otherwise
/// the mean up to `horizon` (NaN selects the last grid time). A median that
/// never occurs is reported as +infinity.
///
/// # Safety
/// `x` must hold `len` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_model_predict_time(
    model: *const KsModel,
    x: *const f64,
    len: usize,
    use_mean: i32,
    horizon: f64,
    out: *mut f64,
) -> KsStatus {
    guard(|| {
        let m = reference(model, "model")?;
        let curve = m.predictor.conditional_km(slice(x, len, "x")?)?;
        let stat = if use_mean == 0 {
            TimeStatistic::Median
        } else {
            TimeStatistic::Mean {
                horizon: (!horizon.is_nan()).then_some(horizon),
            }
        };
        write(out, stat.apply(&curve)?, "out")
    })
}

/// Number of grid points of the curve; 0 for NULL.
///
/// # Safety
/// `curve` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_curve_len(curve: *const KsCurve) -> usize {
    curve.as_ref().map_or(0, |c| c.inner.times.len())
}

/// Copies grid times and survival values into two buffers of `cap` entries.
///
/// # Safety
/// Both buffers must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn ks_curve_copy(curve: *const KsCurve, times: *mut f64, survival: *mut f64, cap: usize) -> KsStatus {
    guard(|| {
        let c = &reference(curve, "curve")?.inner;
        if cap < c.times.len() {
            return Err(Failure::Invalid(format!("buffer of {cap} entries for {} grid points", c.times.len())));
        }
        if times.is_null() {
            return Err(Failure::Null("times"));
        }
        if survival.is_null() {
            return Err(Failure::Null("survival"));
        }
        ptr::copy_nonoverlapping(c.times.as_ptr(), times, c.times.len());
        ptr::copy_nonoverlapping(c.survival.as_ptr(), survival, c.survival.len());
        Ok(())
    })
}

/// Survival probability at time `t`; NaN for NULL.
///
/// # Safety
/// `curve` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_curve_at(curve: *const KsCurve, t: f64) -> f64 {
    curve.as_ref().map_or(f64::NAN, |c| c.inner.at(t))
}

/// Median survival time (+infinity if the curve never reaches 1/2); NaN for NULL.
///
/// # Safety
/// `curve` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ks_curve_median(curve: *const KsCurve) -> f64 {
    curve.as_ref().map_or(f64::NAN, |c| c.inner.median())
}

/// # Safety
/// `curve` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ks_curve_free(curve: *mut KsCurve) {
    if !curve.is_null() {
        drop(Box::from_raw(curve));
    }
}

/// Split-conformal quantile of `n` nonnegative scores at level `alpha`;
/// +infinity when the calibration set is too small.
///
/// # Safety
/// `scores` must hold `n` values; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ks_marginal_quantile(scores: *const f64, n: usize, alpha: f64, out: *mut f64) -> KsStatus {
    guard(|| {
        let s = CalibrationScores::from_scores(slice(scores, n, "scores")?.to_vec())?;
        write(out, marginal_quantile(&s, alpha)?, "out")
    })
}
