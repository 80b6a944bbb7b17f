//! C ABI for the `hytn` normalizer.
//!
//! Every function returns a [`HytnStatus`]; on failure a message is kept
//! per thread and can be read with [`hytn_last_error`]. Strings handed out by
//! the library must be released with [`hytn_string_free`], normalizers with
//! [`hytn_normalizer_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use hytn::{Classifier, Error, HybridSystem, PatternReader, Taxonomy};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HytnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Config = 4,
    Model = 5,
    UnknownLabel = 6,
    Render = 7,
    Invalid = 8,
    Panic = 9,
}

/// Opaque normalizer handle.
pub struct HytnNormalizer {
    system: HybridSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> HytnStatus {
    match e {
        Error::Io { .. } => HytnStatus::Io,
        Error::Parse { .. } | Error::Config(_) | Error::Regex { .. } => HytnStatus::Config,
        Error::Checkpoint(_) | Error::Classifier(_) | Error::NonFiniteLoss { .. } => {
            HytnStatus::Model
        }
        Error::UnknownLabel(_) => HytnStatus::UnknownLabel,
        Error::Render { .. } => HytnStatus::Render,
        _ => HytnStatus::Invalid,
    }
}

/// Runs `f`, turning errors and panics into a status plus message.
fn guard(f: impl FnOnce() -> Result<(), (HytnStatus, String)>) -> HytnStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HytnStatus::Ok,
        Ok(Err((status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            HytnStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (HytnStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, (HytnStatus, String)> {
    if p.is_null() {
        return Err((HytnStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        (
            HytnStatus::InvalidUtf8,
            format!("{what} is not valid UTF-8"),
        )
    })
}

fn check_out<T>(out: *mut T) -> Result<(), (HytnStatus, String)> {
    if out.is_null() {
        Err((HytnStatus::NullPointer, "output pointer is null".into()))
    } else {
        Ok(())
    }
}

fn into_c_string(s: String) -> Result<*mut c_char, (HytnStatus, String)> {
    CString::new(s)
        .map(CString::into_raw)
        .map_err(|_| (HytnStatus::Invalid, "result contains a nul byte".into()))
}

/// Creates a rules-only normalizer with the built-in registry, rules and
/// priority list.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn hytn_normalizer_new(out: *mut *mut HytnNormalizer) -> HytnStatus {
    guard(|| {
        check_out(out)?;
        let system = HybridSystem::builtin().map_err(lib_err)?;
        *out = Box::into_raw(Box::new(HytnNormalizer { system }));
        Ok(())
    })
}

/// Creates a hybrid normalizer with the built-in rules and the classifier
/// checkpoint at `model_path`.
///
/// # Safety
/// `model_path` must be a nul-terminated string; `out` as for
/// [`hytn_normalizer_new`].
#[no_mangle]
pub unsafe extern "C" fn hytn_normalizer_load(
    model_path: *const c_char,
    out: *mut *mut HytnNormalizer,
) -> HytnStatus {
    guard(|| {
        check_out(out)?;
        let path = read_str(model_path, "model_path")?;
        let classifier = Classifier::load(path).map_err(lib_err)?;
        let system = HybridSystem::builtin()
            .and_then(|s| s.with_classifier(classifier))
            .map_err(lib_err)?;
        *out = Box::into_raw(Box::new(HytnNormalizer { system }));
        Ok(())
    })
}

/// Releases a normalizer. Null is ignored.
///
/// # Safety
/// `handle` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hytn_normalizer_free(handle: *mut HytnNormalizer) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Normalizes `text`. With `rules_only` nonzero the classifier is skipped.
/// The result goes to `*out` and must be released with [`hytn_string_free`].
///
/// # Safety
/// `handle` must be a live normalizer, `text` a nul-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hytn_normalize(
    handle: *const HytnNormalizer,
    text: *const c_char,
    rules_only: i32,
    out: *mut *mut c_char,
) -> HytnStatus {
    guard(|| {
        check_out(out)?;
        let Some(h) = handle.as_ref() else {
            return Err((HytnStatus::NullPointer, "handle is null".into()));
        };
        let text = read_str(text, "text")?;
        let normalized: String = h
            .system
            .normalize_document(text, rules_only != 0)
            .into_iter()
            .map(|(s, _)| s)
            .collect();
        *out = into_c_string(normalized)?;
        Ok(())
    })
}

/// Renders one NSW `surface` with the built-in label `label`, e.g.
/// `("10:30", "B_Time")`.
///
/// # Safety
/// `surface` and `label` must be nul-terminated strings; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn hytn_render(
    surface: *const c_char,
    label: *const c_char,
    out: *mut *mut c_char,
) -> HytnStatus {
    guard(|| {
        check_out(out)?;
        let surface = read_str(surface, "surface")?;
        let label = read_str(label, "label")?;
        let tax = Taxonomy::builtin();
        let id = tax.id(label).map_err(lib_err)?;
        let reader = PatternReader::new(&tax).map_err(lib_err)?;
        let sfw = reader.render(surface, id).map_err(lib_err)?;
        *out = into_c_string(sfw.text)?;
        Ok(())
    })
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn hytn_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn hytn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Static description of a status code; takes a plain integer so any value
/// is safe to pass.
#[no_mangle]
pub extern "C" fn hytn_status_str(status: i32) -> *const c_char {
    let s: &'static CStr = match status {
        0 => c"ok",
        1 => c"null pointer",
        2 => c"invalid UTF-8",
        3 => c"I/O error",
        4 => c"configuration error",
        5 => c"model error",
        6 => c"unknown label",
        7 => c"render error",
        8 => c"invalid input",
        9 => c"internal panic",
        _ => c"unknown status",
    };
    s.as_ptr()
}
