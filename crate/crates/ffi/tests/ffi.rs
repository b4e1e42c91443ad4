use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use har_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn take_string(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string();
    unsafe { har_string_free(p) };
    s
}

fn last_error() -> String {
    take_string(har_last_error_message())
}

fn synth_dataset(dir: &Path, days: usize) -> *mut HarDataset {
    let log = dir.join("home.txt");
    let path = cstr(log.to_str().unwrap());
    let seed = 5u64;
    unsafe {
        assert_eq!(har_synth_generate(cstr("aruba_like").as_ptr(), days, &seed, path.as_ptr()), HarStatus::Ok);
        let mut d = ptr::null_mut();
        assert_eq!(har_dataset_from_log(path.as_ptr(), ptr::null(), 2000, &mut d), HarStatus::Ok);
        d
    }
}

#[test]
fn dataset_and_vocabulary_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = synth_dataset(dir.path(), 2);
    unsafe {
        let (mut n, mut classes) = (0usize, 0usize);
        assert_eq!(har_dataset_len(d, &mut n), HarStatus::Ok);
        assert_eq!(har_dataset_class_count(d, &mut classes), HarStatus::Ok);
        assert!(n > 0 && classes >= 2);
        let mut name = ptr::null_mut();
        assert_eq!(har_dataset_class_name(d, 0, &mut name), HarStatus::Ok);
        assert!(!take_string(name).is_empty());
        let mut label = usize::MAX;
        assert_eq!(har_dataset_label(d, 0, &mut label), HarStatus::Ok);
        assert!(label < classes);

        let mut v = ptr::null_mut();
        assert_eq!(har_dataset_vocabulary(d, &mut v), HarStatus::Ok);
        let mut tok = ptr::null_mut();
        assert_eq!(har_vocabulary_token(v, 1, &mut tok), HarStatus::Ok);
        let tok = take_string(tok);
        let mut ix = 0u32;
        assert_eq!(har_vocabulary_index(v, cstr(&tok).as_ptr(), &mut ix), HarStatus::Ok);
        assert_eq!(ix, 1);

        let toks = [cstr(&tok), cstr("NOPEON")];
        let ptrs: Vec<*const _> = toks.iter().map(|t| t.as_ptr()).collect();
        let (mut idx, mut mask) = ([9u32; 4], [9u8; 4]);
        assert_eq!(har_vocabulary_encode(v, ptrs.as_ptr(), 2, 4, idx.as_mut_ptr(), mask.as_mut_ptr()), HarStatus::Ok);
        let mut size = 0;
        har_vocabulary_size(v, &mut size);
        assert_eq!(idx, [0, 0, 1, size as u32 - 1]);
        assert_eq!(mask, [0, 0, 1, 1]);
        har_vocabulary_free(v);
        har_dataset_free(d);
    }
}

#[test]
fn errors_carry_status_and_message() {
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(har_dataset_from_log(ptr::null(), ptr::null(), 10, &mut d), HarStatus::NullPointer);
        assert!(last_error().contains("path"));
        let text = cstr("2010-11-04 00:03:50.209589 M003 ON\nnot a line\n");
        assert_eq!(har_dataset_from_log_text(cstr("x").as_ptr(), text.as_ptr(), ptr::null(), 10, &mut d), HarStatus::Parse);
        assert!(last_error().starts_with("line 2"));
        assert_eq!(har_dataset_from_log(cstr("/nonexistent/x.txt").as_ptr(), ptr::null(), 10, &mut d), HarStatus::Io);
        assert_eq!(har_synth_generate(cstr("nowhere").as_ptr(), 1, ptr::null(), cstr("/tmp/x").as_ptr()), HarStatus::InvalidArgument);
        let mut n = 0;
        assert_eq!(har_dataset_len(ptr::null(), &mut n), HarStatus::NullPointer);
        assert!(d.is_null());
        // A successful call clears the message.
        assert_eq!(har_bilm_default_options(&mut std::mem::zeroed()), HarStatus::Ok);
        assert!(har_last_error_message().is_null());
        har_dataset_free(ptr::null_mut());
        har_string_free(ptr::null_mut());
    }
}

#[test]
fn bilm_train_embed_save_load() {
    let dir = tempfile::tempdir().unwrap();
    let d = synth_dataset(dir.path(), 2);
    unsafe {
        let mut o: HarBiLmOptions = std::mem::zeroed();
        har_bilm_default_options(&mut o);
        assert_eq!((o.embedding_size, o.window, o.max_epochs, o.batch_size), (64, 60, 400, 512));
        o.embedding_size = 8;
        o.hidden_size = 8;
        o.max_epochs = 2;
        let mut m = ptr::null_mut();
        assert_eq!(har_bilm_train(d, &o, &mut m), HarStatus::Ok);
        let mut h = 0;
        har_bilm_hidden_size(m, &mut h);
        assert_eq!(h, 8);
        let mut ppl = 0.0;
        assert_eq!(har_bilm_perplexity(m, d, &mut ppl), HarStatus::Ok);
        assert!(ppl.is_finite() && ppl > 1.0);

        let seq = [1u32, 2, 3];
        let mut buf = vec![0.0; 3 * 6 * 8];
        let mut width = 0;
        assert_eq!(har_bilm_embed(m, seq.as_ptr(), 3, HarElmoMode::Concat, buf.as_mut_ptr(), buf.len(), &mut width), HarStatus::Ok);
        assert_eq!(width, 48);
        assert!(buf.iter().any(|v| *v != 0.0));
        assert_eq!(har_bilm_embed(m, seq.as_ptr(), 3, HarElmoMode::Concat, buf.as_mut_ptr(), 10, &mut width), HarStatus::InvalidArgument);
        let bad = [999u32];
        assert_eq!(har_bilm_embed(m, bad.as_ptr(), 1, HarElmoMode::Sum, buf.as_mut_ptr(), buf.len(), &mut width), HarStatus::InvalidArgument);

        let path = cstr(dir.path().join("m.ckpt").to_str().unwrap());
        assert_eq!(har_bilm_save(m, path.as_ptr()), HarStatus::Ok);
        let mut m2 = ptr::null_mut();
        assert_eq!(har_bilm_load(path.as_ptr(), &mut m2), HarStatus::Ok);
        let mut buf2 = vec![0.0; buf.len()];
        har_bilm_embed(m2, seq.as_ptr(), 3, HarElmoMode::Concat, buf2.as_mut_ptr(), buf2.len(), &mut width);
        har_bilm_embed(m, seq.as_ptr(), 3, HarElmoMode::Concat, buf.as_mut_ptr(), buf.len(), &mut width);
        assert_eq!(buf, buf2);
        har_bilm_free(m);
        har_bilm_free(m2);
        har_dataset_free(d);
    }
}

#[test]
fn word2vec_and_experiment() {
    let dir = tempfile::tempdir().unwrap();
    let d = synth_dataset(dir.path(), 3);
    unsafe {
        let o = HarWord2VecOptions { embedding_size: 8, window: 5, epochs: 3, negatives: 5, learning_rate: 0.025, seed: 1 };
        let mut w = ptr::null_mut();
        assert_eq!(har_word2vec_train(d, &o, &mut w), HarStatus::Ok);
        let mut dim = 0;
        har_word2vec_dim(w, &mut dim);
        assert_eq!(dim, 8);
        let mut row = [0.0; 8];
        assert_eq!(har_word2vec_row(w, 0, row.as_mut_ptr(), 8), HarStatus::Ok);
        assert_eq!(row, [0.0; 8]);
        let mut v = ptr::null_mut();
        har_dataset_vocabulary(d, &mut v);
        let mut t = ptr::null_mut();
        har_vocabulary_token(v, 1, &mut t);
        let t = cstr(&take_string(t));
        let mut sim = 0.0;
        assert_eq!(har_word2vec_cosine(w, t.as_ptr(), t.as_ptr(), &mut sim), HarStatus::Ok);
        assert!((sim - 1.0).abs() < 1e-12);
        assert_eq!(har_word2vec_cosine(w, t.as_ptr(), cstr("NOPEON").as_ptr(), &mut sim), HarStatus::Model);

        let ckpt = cstr(dir.path().join("w.ckpt").to_str().unwrap());
        assert_eq!(har_word2vec_save(w, ckpt.as_ptr()), HarStatus::Ok);
        let mut w2 = ptr::null_mut();
        assert_eq!(har_word2vec_load(ckpt.as_ptr(), &mut w2), HarStatus::Ok);
        let csv = dir.path().join("w.csv");
        assert_eq!(har_word2vec_export_csv(w2, cstr(csv.to_str().unwrap()).as_ptr()), HarStatus::Ok);
        let mut size = 0;
        har_vocabulary_size(v, &mut size);
        assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 1 + size - 2);

        let cfg = cstr(r#"{"classifier": {"encoder": "none", "max_epochs": 2}, "seed": 3}"#);
        let mut report = ptr::null_mut();
        assert_eq!(har_experiment_run(d, cfg.as_ptr(), &mut report), HarStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(&take_string(report)).unwrap();
        assert_eq!(json["folds"].as_array().unwrap().len(), 3);
        assert!(json["paper_view"].is_object());
        assert_eq!(har_experiment_run(d, cstr("{\"folds\": \"x\"}").as_ptr(), &mut report), HarStatus::Config);

        har_vocabulary_free(v);
        har_word2vec_free(w);
        har_word2vec_free(w2);
        har_dataset_free(d);
    }
}

fn artifact_dir() -> PathBuf {
    // target/<profile>/deps/<test binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let manifest = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    let header = manifest.join("include/har.h");
    assert!(std::fs::read_to_string(&header).unwrap().contains("har_bilm_embed"));
    let lib_dir = artifact_dir();
    if !lib_dir.join("libhar_ffi.so").exists() {
        eprintln!("skipping C link test: no shared library in {}", lib_dir.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "har.h"
int main(void) {
    HarDataset *d = NULL;
    if (har_dataset_from_log(NULL, NULL, 10, &d) != HAR_STATUS_NULL_POINTER) return 1;
    char *msg = har_last_error_message();
    if (msg == NULL) return 2;
    har_string_free(msg);
    HarBiLmOptions o;
    if (har_bilm_default_options(&o) != HAR_STATUS_OK || o.window != 60) return 3;
    const char *text = "2010-11-04 08:00:00.000000 M001 ON Sleep begin\n"
                       "2010-11-04 08:00:01.000000 M002 ON\n"
                       "2010-11-04 08:00:02.000000 M001 OFF Sleep end\n"
                       "2010-11-04 08:00:03.000000 M009 ON\n";
    if (har_dataset_from_log_text("t", text, NULL, 8, &d) != HAR_STATUS_OK) return 4;
    size_t n = 0;
    har_dataset_len(d, &n);
    har_dataset_free(d);
    printf("%s %zu\n", har_version(), n);
    return n == 2 ? 0 : 5;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("smoke");
    let status = Command::new("cc")
        .arg(&src)
        .arg("-std=c99")
        .arg("-Wall")
        .arg("-Werror")
        .arg(format!("-I{}", manifest.join("include").display()))
        .arg(format!("-L{}", lib_dir.display()))
        .arg("-lhar_ffi")
        .arg(format!("-Wl,-rpath,{}", lib_dir.display()))
        .arg("-o")
        .arg(&exe)
        .status();
    let Ok(status) = status else {
        eprintln!("skipping C link test: no C compiler");
        return;
    };
    assert!(status.success(), "C smoke test failed to compile");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "C smoke test exited with {:?}", out.status);
    assert!(String::from_utf8_lossy(&out.stdout).ends_with(" 2\n"));
}
