//! C ABI for the CTR model, keyword map and ad server.
//!
//! Conventions:
//!
//! - every fallible function returns a [`CtrfStatus`] and writes results
//!   through out-pointers, which are left untouched on failure;
//! - the message for the last failure on the calling thread is available from
//!   [`ctrf_last_error_message`];
//! - handles are opaque; each `*_load`/`*_open` has a matching `*_free`;
//! - strings are NUL-terminated UTF-8.
//!
//! Panics never cross the boundary; they surface as `CTRF_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use ctrf::catalog::{keyword_set, Placement, RequestContext};
use ctrf::evaluation;
use ctrf::features::encode_size;
use ctrf::keywords::{resolve_page_value, KeywordMap, ResolveMode};
use ctrf::regression::{load_model, predict, RegressionModel};
use ctrf::server::{serve, ServeMode, ServeOutcome, ServingPaths, Snapshot};
use ctrf::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    BufferTooSmall = 3,
    Io = 10,
    Parse = 11,
    Validation = 12,
    Domain = 13,
    Mapping = 14,
    Encoding = 15,
    Contract = 16,
    Singular = 17,
    Divergence = 18,
    NoFill = 19,
    Load = 20,
    Panic = 99,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtrfServeMode {
    Bid = 0,
    Ctr = 1,
}

pub struct CtrfModel(RegressionModel);

pub struct CtrfKeywordMap(KeywordMap);

pub struct CtrfServer {
    paths: ServingPaths,
    snapshot: Snapshot,
}

struct Failure(CtrfStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => CtrfStatus::Io,
            Error::Parse { .. } | Error::Json(_) => CtrfStatus::Parse,
            Error::Validation(_) | Error::DuplicateAd(_) => CtrfStatus::Validation,
            Error::Domain(_) | Error::DegenerateFeature { .. } | Error::NoTrace => CtrfStatus::Domain,
            Error::Mapping { .. } | Error::UnknownKeyword(_) => CtrfStatus::Mapping,
            Error::Encoding { .. } => CtrfStatus::Encoding,
            Error::Contract(_) => CtrfStatus::Contract,
            Error::Singular { .. } => CtrfStatus::Singular,
            Error::Divergence { .. } => CtrfStatus::Divergence,
            Error::NoFill => CtrfStatus::NoFill,
            Error::Load(_) => CtrfStatus::Load,
        };
        Failure(status, e.to_string())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard<F>(f: F) -> CtrfStatus
where
    F: FnOnce() -> Result<(), Failure>,
{
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtrfStatus::Ok,
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(_) => {
            set_last_error("panic inside ctrf");
            CtrfStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(CtrfStatus::NullPointer, format!("`{what}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(CtrfStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

unsafe fn str_list<'a>(p: *const *const c_char, n: usize, what: &str) -> Result<Vec<&'a str>, Failure> {
    if n == 0 {
        return Ok(Vec::new());
    }
    if p.is_null() {
        return Err(null(what));
    }
    slice::from_raw_parts(p, n).iter().map(|&s| str_arg(s, what)).collect()
}

unsafe fn f64_list<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Failure> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(slice::from_raw_parts(p, n))
}

fn placement(code: u8) -> Result<Placement, Failure> {
    Placement::from_code(code).ok_or_else(|| Failure(CtrfStatus::Encoding, format!("placement code {code}")))
}

fn open_file(path: &str) -> Result<std::fs::File, Failure> {
    std::fs::File::open(path).map_err(|e| Failure::from(Error::Io(e)))
}

/// Message for the last failed call on this thread, or null. Valid until the next failing call.
#[no_mangle]
pub extern "C" fn ctrf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn ctrf_status_name(status: CtrfStatus) -> *const c_char {
    let s: &'static CStr = match status {
        CtrfStatus::Ok => c"ok",
        CtrfStatus::NullPointer => c"null_pointer",
        CtrfStatus::InvalidUtf8 => c"invalid_utf8",
        CtrfStatus::BufferTooSmall => c"buffer_too_small",
        CtrfStatus::Io => c"io",
        CtrfStatus::Parse => c"parse",
        CtrfStatus::Validation => c"validation",
        CtrfStatus::Domain => c"domain",
        CtrfStatus::Mapping => c"mapping",
        CtrfStatus::Encoding => c"encoding",
        CtrfStatus::Contract => c"contract",
        CtrfStatus::Singular => c"singular",
        CtrfStatus::Divergence => c"divergence",
        CtrfStatus::NoFill => c"no_fill",
        CtrfStatus::Load => c"load",
        CtrfStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn ctrf_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => c"unknown",
    };
    VERSION.as_ptr()
}

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctrf_model_load(path: *const c_char, out: *mut *mut CtrfModel) -> CtrfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = load_model(open_file(path)?)?;
        *out = Box::into_raw(Box::new(CtrfModel(model)));
        Ok(())
    })
}

/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctrf_model_from_json(json: *const c_char, out: *mut *mut CtrfModel) -> CtrfStatus {
    guard(|| {
        let json = str_arg(json, "json")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = load_model(json.as_bytes())?;
        *out = Box::into_raw(Box::new(CtrfModel(model)));
        Ok(())
    })
}

/// Predicted CTR, unclamped. `placement` is 1 for above the fold, 0 below.
///
/// # Safety
/// `model` must come from `ctrf_model_load`/`ctrf_model_from_json`; `size` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn ctrf_model_predict(
    model: *const CtrfModel,
    placement: u8,
    size: *const c_char,
    bid: f64,
    keyword_value: f64,
    out: *mut f64,
) -> CtrfStatus {
    guard(|| {
        let model = model.as_ref().ok_or_else(|| null("model"))?;
        let size = str_arg(size, "size")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = self::placement(placement)?;
        let size = encode_size(size, &model.0.schema.size_registry)?;
        *out = predict(&model.0, &[f64::from(p.code()), f64::from(size), bid, keyword_value])?;
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctrf_model_free(model: *mut CtrfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `path` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctrf_keyword_map_load(path: *const c_char, out: *mut *mut CtrfKeywordMap) -> CtrfStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let map = KeywordMap::load(open_file(path)?)?;
        *out = Box::into_raw(Box::new(CtrfKeywordMap(map)));
        Ok(())
    })
}

/// Value of the best-supported mapped keyword among `keywords`. With `strict`
/// false an unmapped page falls back to the first cluster's base value.
///
/// # Safety
/// `keywords` must point to `n` valid C strings.
#[no_mangle]
pub unsafe extern "C" fn ctrf_keyword_map_resolve(
    map: *const CtrfKeywordMap,
    keywords: *const *const c_char,
    n: usize,
    strict: bool,
    out: *mut f64,
) -> CtrfStatus {
    guard(|| {
        let map = map.as_ref().ok_or_else(|| null("map"))?;
        let words = str_list(keywords, n, "keywords")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let mode = if strict { ResolveMode::Strict } else { ResolveMode::Fallback };
        *out = resolve_page_value(&map.0, &keyword_set(words), mode)?;
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctrf_keyword_map_free(map: *mut CtrfKeywordMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Loads a serving snapshot from an ad catalog, model and keyword map.
///
/// # Safety
/// Paths must be valid C strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctrf_server_open(
    ads_path: *const c_char,
    model_path: *const c_char,
    map_path: *const c_char,
    out: *mut *mut CtrfServer,
) -> CtrfStatus {
    guard(|| {
        let paths = ServingPaths {
            ads: PathBuf::from(str_arg(ads_path, "ads_path")?),
            model: PathBuf::from(str_arg(model_path, "model_path")?),
            map: PathBuf::from(str_arg(map_path, "map_path")?),
        };
        if out.is_null() {
            return Err(null("out"));
        }
        let snapshot = Snapshot::new(paths.load()?);
        *out = Box::into_raw(Box::new(CtrfServer { paths, snapshot }));
        Ok(())
    })
}

/// Rereads the files given to `ctrf_server_open` and swaps them in atomically.
/// On failure the previous snapshot stays active.
///
/// # Safety
/// `server` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn ctrf_server_reload(server: *const CtrfServer) -> CtrfStatus {
    guard(|| {
        let server = server.as_ref().ok_or_else(|| null("server"))?;
        server.snapshot.replace(server.paths.load()?);
        Ok(())
    })
}

/// Chooses an ad. On success writes the NUL-terminated `ad_id` into
/// `ad_id_buf` and the score (bid or predicted CTR) into `score_out`.
/// Returns `CTRF_STATUS_NO_FILL` when no ad is eligible.
///
/// `country` may be null.
///
/// # Safety
/// `server` must be a live handle; `keywords` must point to `n_keywords` C
/// strings; `ad_id_buf` must hold `ad_id_buf_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn ctrf_server_serve(
    server: *const CtrfServer,
    placement: u8,
    size: *const c_char,
    category: *const c_char,
    keywords: *const *const c_char,
    n_keywords: usize,
    country: *const c_char,
    mode: CtrfServeMode,
    ad_id_buf: *mut c_char,
    ad_id_buf_len: usize,
    score_out: *mut f64,
) -> CtrfStatus {
    guard(|| {
        let server = server.as_ref().ok_or_else(|| null("server"))?;
        let size = str_arg(size, "size")?;
        let category = str_arg(category, "category")?;
        let words = str_list(keywords, n_keywords, "keywords")?;
        let country = if country.is_null() { "" } else { str_arg(country, "country")? };
        if ad_id_buf.is_null() {
            return Err(null("ad_id_buf"));
        }
        if score_out.is_null() {
            return Err(null("score_out"));
        }
        let request = RequestContext::new(self::placement(placement)?, size, category, words).with_country(country);
        let mode = match mode {
            CtrfServeMode::Bid => ServeMode::Bid,
            CtrfServeMode::Ctr => ServeMode::Ctr,
        };
        let state = server.snapshot.load();
        match serve(&request, mode, &state)? {
            ServeOutcome::Filled(ad) => {
                let id = ad.ad_id.as_bytes();
                if id.len() + 1 > ad_id_buf_len {
                    return Err(Failure(
                        CtrfStatus::BufferTooSmall,
                        format!("ad_id needs {} bytes", id.len() + 1),
                    ));
                }
                ptr::copy_nonoverlapping(id.as_ptr(), ad_id_buf.cast::<u8>(), id.len());
                *ad_id_buf.add(id.len()) = 0;
                *score_out = ad.score;
                Ok(())
            }
            ServeOutcome::NoFill { .. } => Err(Error::NoFill.into()),
        }
    })
}

/// # Safety
/// `server` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ctrf_server_free(server: *mut CtrfServer) {
    if !server.is_null() {
        drop(Box::from_raw(server));
    }
}

/// sqrt(Σ(y − y_pred)² / n).
///
/// # Safety
/// `y` and `y_pred` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctrf_standard_error(y: *const f64, y_pred: *const f64, n: usize, out: *mut f64) -> CtrfStatus {
    guard(|| {
        let y = f64_list(y, n, "y")?;
        let yp = f64_list(y_pred, n, "y_pred")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = evaluation::standard_error(y, yp)?;
        Ok(())
    })
}

/// 1 − SSE/SSTO. Fails with `CTRF_STATUS_DOMAIN` when `y` is constant.
///
/// # Safety
/// `y` and `y_pred` must each point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctrf_r_squared(y: *const f64, y_pred: *const f64, n: usize, out: *mut f64) -> CtrfStatus {
    guard(|| {
        let y = f64_list(y, n, "y")?;
        let yp = f64_list(y_pred, n, "y_pred")?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = evaluation::r_squared(y, yp)?;
        Ok(())
    })
}
