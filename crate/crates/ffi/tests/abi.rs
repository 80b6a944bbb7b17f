use std::ffi::{c_char, CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use hytn_ffi::*;

fn owned(p: *mut c_char) -> String {
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { hytn_string_free(p) };
    s
}

fn last_error() -> Option<String> {
    let p = hytn_last_error();
    (!p.is_null()).then(|| unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned())
}

#[test]
fn rules_only_round_trip() {
    let mut h = ptr::null_mut();
    assert_eq!(unsafe { hytn_normalizer_new(&mut h) }, HytnStatus::Ok);
    let text = CString::new("请拨打911。没有数字").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { hytn_normalize(h, text.as_ptr(), 0, &mut out) },
        HytnStatus::Ok
    );
    assert_eq!(owned(out), "请拨打九幺幺。没有数字");
    unsafe { hytn_normalizer_free(h) };
}

#[test]
fn render_and_errors() {
    let mut out = ptr::null_mut();
    let surface = CString::new("10:30").unwrap();
    let label = CString::new("B_Time").unwrap();
    assert_eq!(
        unsafe { hytn_render(surface.as_ptr(), label.as_ptr(), &mut out) },
        HytnStatus::Ok
    );
    assert_eq!(owned(out), "十点三十分");
    assert!(last_error().is_none());

    let bad = CString::new("No_Such_Label").unwrap();
    assert_eq!(
        unsafe { hytn_render(surface.as_ptr(), bad.as_ptr(), &mut out) },
        HytnStatus::UnknownLabel
    );
    assert!(last_error().unwrap().contains("No_Such_Label"));

    let pct = CString::new("B_Percent").unwrap();
    assert_eq!(
        unsafe { hytn_render(surface.as_ptr(), pct.as_ptr(), &mut out) },
        HytnStatus::Render
    );
    assert_eq!(
        unsafe { hytn_render(ptr::null(), label.as_ptr(), &mut out) },
        HytnStatus::NullPointer
    );
    assert_eq!(
        unsafe { hytn_render(surface.as_ptr(), label.as_ptr(), ptr::null_mut()) },
        HytnStatus::NullPointer
    );
    let invalid = [0xffu8, 0xfe, 0];
    assert_eq!(
        unsafe { hytn_render(invalid.as_ptr().cast(), label.as_ptr(), &mut out) },
        HytnStatus::InvalidUtf8
    );
}

#[test]
fn null_handle_and_missing_model() {
    let text = CString::new("1").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { hytn_normalize(ptr::null(), text.as_ptr(), 1, &mut out) },
        HytnStatus::NullPointer
    );
    let mut h = ptr::null_mut();
    let path = CString::new("/nonexistent/model.ckpt").unwrap();
    assert_eq!(
        unsafe { hytn_normalizer_load(path.as_ptr(), &mut h) },
        HytnStatus::Io
    );
    assert!(h.is_null());
    unsafe {
        hytn_normalizer_free(ptr::null_mut());
        hytn_string_free(ptr::null_mut());
    }
}

#[test]
fn status_strings() {
    for code in 0..10 {
        let s = unsafe { CStr::from_ptr(hytn_status_str(code)) };
        assert!(!s.to_bytes().is_empty());
    }
    assert_eq!(
        unsafe { CStr::from_ptr(hytn_status_str(77)) }
            .to_str()
            .unwrap(),
        "unknown status"
    );
}

#[test]
fn loads_a_trained_checkpoint() {
    use hytn::corpus::{generate_synthetic_corpus, CorpusDistribution};
    use hytn::{Classifier, ClassifierConfig, FormatRegistry, Taxonomy};
    let tax = Taxonomy::builtin();
    let formats = FormatRegistry::new(&tax).unwrap();
    let corpus =
        generate_synthetic_corpus(&tax, &CorpusDistribution::builtin(&tax), 100, 1).unwrap();
    let cfg = ClassifierConfig {
        epochs: 1,
        model_dim: 8,
        ff_dim: 16,
        heads: 2,
        ..Default::default()
    };
    let (clf, _) = Classifier::fit(&corpus, &cfg, &tax, &formats, |_| {}).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    clf.save(&path).unwrap();

    let mut h = ptr::null_mut();
    let c_path = CString::new(path.to_str().unwrap()).unwrap();
    assert_eq!(
        unsafe { hytn_normalizer_load(c_path.as_ptr(), &mut h) },
        HytnStatus::Ok
    );
    let text = CString::new("共有3人").unwrap();
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { hytn_normalize(h, text.as_ptr(), 0, &mut out) },
        HytnStatus::Ok
    );
    let s = owned(out);
    assert!(
        s.starts_with("共有") && s.ends_with('人') && !s.contains('3'),
        "{s}"
    );
    unsafe { hytn_normalizer_free(h) };
}

/// Compiles a small C program against the generated header and the static
/// library. Skipped when no C compiler is around.
#[test]
fn c_program_links_against_header() {
    let Ok(exe) = std::env::current_exe() else {
        return;
    };
    let target = exe.parent().and_then(|d| d.parent()).unwrap().to_path_buf();
    let lib = target.join("libhytn_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipping: no static library or C compiler");
        return;
    }
    let include = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let bin = dir.path().join("main");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include <string.h>
#include "hytn.h"
int main(void) {
    HytnNormalizer *h = NULL;
    char *out = NULL;
    if (hytn_normalizer_new(&h) != HYTN_STATUS_OK) return 1;
    if (hytn_normalize(h, "比分是30-10", 1, &out) != HYTN_STATUS_OK) return 2;
    printf("%s\n", out);
    hytn_string_free(out);
    if (hytn_render("1,000", "No_Such_Label", &out) != HYTN_STATUS_UNKNOWN_LABEL) return 3;
    if (hytn_last_error() == NULL) return 4;
    hytn_normalizer_free(h);
    return 0;
}
"#,
    )
    .unwrap();
    let status = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&include)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success());
    let run = Command::new(&bin).output().unwrap();
    assert!(run.status.success(), "{:?}", run.status);
    assert_eq!(String::from_utf8(run.stdout).unwrap(), "比分是三十比十\n");
}
