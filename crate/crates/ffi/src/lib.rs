//! C ABI over the ensemble learners.
//!
//! Models are opaque `GpModel` handles owned by the caller and released with
//! `gp_model_free`. Every fallible call returns a status code; on failure the
//! message is kept per thread and read with `gp_last_error`. Matrices are
//! row-major `n_rows × n_cols` arrays of doubles.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use greedyprune::data::{Dataset, Features, Matrix};
use greedyprune::ensemble::{
    apply_override, ensemble_fit, make_recipe, BaseLearner, EnsembleModel, EnsembleSpec, RECIPES,
};
use greedyprune::error::{Error, ErrorClass};
use greedyprune::rng::SeedSpec;

pub const GP_OK: i32 = 0;
/// A required pointer argument was null.
pub const GP_ERR_NULL: i32 = 1;
pub const GP_ERR_CONFIG: i32 = 2;
pub const GP_ERR_DATA: i32 = 3;
pub const GP_ERR_LEARNER: i32 = 4;
/// The library panicked; the handle arguments are left untouched.
pub const GP_ERR_PANIC: i32 = 5;
/// The caller's buffer is smaller than the reported size.
pub const GP_ERR_BUFFER: i32 = 6;

/// Opaque fitted ensemble.
pub struct GpModel {
    inner: EnsembleModel,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: impl Into<String>) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
}

fn status_of(e: &Error) -> i32 {
    match e.class() {
        ErrorClass::Config => GP_ERR_CONFIG,
        ErrorClass::Data => GP_ERR_DATA,
        ErrorClass::Learner => GP_ERR_LEARNER,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (i32, String)>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            GP_OK
        }
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("internal panic");
            GP_ERR_PANIC
        }
    }
}

fn lib(e: Error) -> (i32, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (i32, String) {
    (GP_ERR_NULL, format!("{name} is null"))
}

unsafe fn c_str<'a>(p: *const c_char, name: &str) -> Result<&'a str, (i32, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (GP_ERR_CONFIG, format!("{name} is not valid UTF-8")))
}

unsafe fn matrix(x: *const f64, n_rows: usize, n_cols: usize) -> Result<Matrix, (i32, String)> {
    if x.is_null() {
        return Err(null("x"));
    }
    let len = n_rows
        .checked_mul(n_cols)
        .ok_or_else(|| (GP_ERR_DATA, "matrix size overflows".to_string()))?;
    Matrix::from_row_major(n_rows, n_cols, std::slice::from_raw_parts(x, len)).map_err(lib)
}

/// Copies `text` plus a terminating NUL into `buf` when it fits; always
/// stores the required size (including the NUL) in `needed` if non-null.
unsafe fn copy_out(
    text: &str,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> Result<(), (i32, String)> {
    let size = text.len() + 1;
    if !needed.is_null() {
        *needed = size;
    }
    if buf.is_null() || cap < size {
        return Err((
            GP_ERR_BUFFER,
            format!("buffer holds {cap} bytes, {size} needed"),
        ));
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buf as *mut u8, text.len());
    *buf.add(text.len()) = 0;
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copies the calling thread's last error message into `buf`. Returns
/// `GP_ERR_BUFFER` (with `needed` set) when `cap` is too small.
///
/// # Safety
/// `buf` must be valid for `cap` bytes or null; `needed` must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn gp_last_error(buf: *mut c_char, cap: usize, needed: *mut usize) -> i32 {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    match copy_out(&msg, buf, cap, needed) {
        Ok(()) => GP_OK,
        Err((code, _)) => code,
    }
}

/// Fits a recipe (`rf`, `bp_boost`, `booging`, `bp_mars`, `marsquake`) or a
/// single base learner (`tree`, `boosting`, `mars`, `greedy_ls`, `ols`).
/// `settings` is null or a `;`-separated list of `key=value` overrides.
///
/// # Safety
/// `x` must hold `n_rows * n_cols` doubles and `y` `n_rows`; strings must be
/// NUL-terminated; `out` must be valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn gp_fit(
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    y: *const f64,
    recipe: *const c_char,
    settings: *const c_char,
    seed: u64,
    out: *mut *mut GpModel,
) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if y.is_null() {
            return Err(null("y"));
        }
        let x = matrix(x, n_rows, n_cols)?;
        let y = std::slice::from_raw_parts(y, n_rows).to_vec();
        let recipe = c_str(recipe, "recipe")?;
        let overrides: Vec<(String, String)> = if settings.is_null() {
            Vec::new()
        } else {
            c_str(settings, "settings")?
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.split_once('=')
                        .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                        .ok_or_else(|| (GP_ERR_CONFIG, format!("expected key=value, got '{s}'")))
                })
                .collect::<Result<_, _>>()?
        };
        let mut spec = if RECIPES.contains(&recipe) {
            make_recipe(recipe, &overrides).map_err(lib)?
        } else {
            let mut spec = EnsembleSpec::single(BaseLearner::from_name(recipe).map_err(lib)?, seed);
            for (k, v) in &overrides {
                apply_override(&mut spec, k, v).map_err(lib)?;
            }
            spec
        };
        spec.seed = SeedSpec::new(seed);
        let data = Dataset::from_matrix(&x, y).map_err(lib)?;
        let model = ensemble_fit(&data, &spec).map_err(lib)?;
        *out = Box::into_raw(Box::new(GpModel { inner: model }));
        Ok(())
    })
}

/// Writes one prediction per row of `x` into `out`.
///
/// # Safety
/// `model` must come from this library; `x` must hold `n_rows * n_cols`
/// doubles and `out` room for `n_rows`.
#[no_mangle]
pub unsafe extern "C" fn gp_predict(
    model: *const GpModel,
    x: *const f64,
    n_rows: usize,
    n_cols: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let x = matrix(x, n_rows, n_cols)?;
        let pred = model
            .inner
            .predict(&Features::from_matrix(&x))
            .map_err(lib)?;
        ptr::copy_nonoverlapping(pred.as_ptr(), out, pred.len());
        Ok(())
    })
}

/// Number of feature columns the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or come from this library.
#[no_mangle]
pub unsafe extern "C" fn gp_model_n_features(model: *const GpModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.schema().columns.len())
}

/// Serialises the model as JSON into `buf` (see `gp_last_error` for the
/// buffer protocol).
///
/// # Safety
/// `model` must come from this library; `buf` valid for `cap` bytes or null;
/// `needed` null or valid.
#[no_mangle]
pub unsafe extern "C" fn gp_model_to_json(
    model: *const GpModel,
    buf: *mut c_char,
    cap: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let text = model.inner.to_json().map_err(lib)?;
        copy_out(&text, buf, cap, needed)
    })
}

/// Restores a model written by `gp_model_to_json` or the command line.
///
/// # Safety
/// `json` must be NUL-terminated; `out` valid for one pointer write.
#[no_mangle]
pub unsafe extern "C" fn gp_model_from_json(json: *const c_char, out: *mut *mut GpModel) -> i32 {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let model = EnsembleModel::from_json(c_str(json, "json")?).map_err(lib)?;
        *out = Box::into_raw(Box::new(GpModel { inner: model }));
        Ok(())
    })
}

/// Releases a model; null is ignored.
///
/// # Safety
/// `model` must be null or an unfreed handle from this library.
#[no_mangle]
pub unsafe extern "C" fn gp_model_free(model: *mut GpModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
