use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use semcluster_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(smc_last_error_message()) }.to_string_lossy().into_owned()
}

#[test]
fn metrics_through_the_abi() {
    let mut v = f64::NAN;
    let counts = [7u64, 7, 7];
    assert_eq!(unsafe { smc_bias_intensity(counts.as_ptr(), 3, &mut v) }, SmcStatus::Ok);
    assert!(v.abs() < 1e-12);

    let product = [2u64, 4, 3, 6];
    assert_eq!(unsafe { smc_spurious_correlation(product.as_ptr(), 2, 2, &mut v) }, SmcStatus::Ok);
    assert!(v.abs() < 1e-9);

    let pred: Vec<CString> = ["a", "a", "b"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let gt: Vec<CString> = ["x", "x", "x"].iter().map(|s| CString::new(*s).unwrap()).collect();
    let pp: Vec<_> = pred.iter().map(|s| s.as_ptr()).collect();
    let gp: Vec<_> = gt.iter().map(|s| s.as_ptr()).collect();
    assert_eq!(unsafe { smc_clustering_accuracy(pp.as_ptr(), gp.as_ptr(), 3, &mut v) }, SmcStatus::Ok);
    assert!((v - 2.0 / 3.0).abs() < 1e-15);

    assert_eq!(smc_harmonic_mean(0.5, 1.0), 2.0 / 3.0);
    assert_eq!(smc_harmonic_mean(0.0, 0.0), 0.0);
}

#[test]
fn errors_set_codes_and_messages() {
    let mut v = 0.0;
    assert_eq!(unsafe { smc_bias_intensity(ptr::null(), 1, &mut v) }, SmcStatus::NullArgument);
    let zeros = [0u64, 0];
    assert_eq!(unsafe { smc_bias_intensity(zeros.as_ptr(), 2, &mut v) }, SmcStatus::InvalidArgument);
    assert!(!last_error().is_empty());
    let bad = [0xffu8, 0];
    let mut list = ptr::null_mut();
    assert_eq!(unsafe { smc_parse_bullets(bad.as_ptr().cast(), &mut list) }, SmcStatus::InvalidUtf8);
    assert!(list.is_null());
}

#[test]
fn string_list_handle() {
    let text = CString::new("1. Activity\n2) Mood\nthanks").unwrap();
    let mut list = ptr::null_mut();
    assert_eq!(unsafe { smc_parse_bullets(text.as_ptr(), &mut list) }, SmcStatus::Ok);
    unsafe {
        assert_eq!(smc_string_list_len(list), 2);
        assert_eq!(CStr::from_ptr(smc_string_list_get(list, 0)).to_str().unwrap(), "Activity");
        assert!(smc_string_list_get(list, 2).is_null());
        smc_string_list_free(list);
        smc_string_list_free(ptr::null_mut());
        assert_eq!(smc_string_list_len(ptr::null()), 0);
    }
}

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/toy60/config.toml")
}

#[test]
fn pipeline_handle_runs_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = std::fs::read_to_string(fixture_config()).unwrap();
    let fixture = fixture_config().parent().unwrap().to_path_buf();
    for rel in ["collection.jsonl", "gt.json", "script.json"] {
        cfg = cfg.replace(&format!("\"{rel}\""), &format!("{:?}", fixture.join(rel).to_string_lossy()));
    }
    cfg = cfg.replace("output_dir = \"runs\"", "output_dir = \"out\"");
    let path = tmp.path().join("config.toml");
    std::fs::write(&path, cfg).unwrap();

    let cpath = CString::new(path.to_string_lossy().into_owned()).unwrap();
    let id = CString::new("ffi").unwrap();
    let mut p = ptr::null_mut();
    assert_eq!(unsafe { smc_pipeline_open(cpath.as_ptr(), id.as_ptr(), false, &mut p) }, SmcStatus::Ok, "{}", last_error());
    let all = CString::new("all").unwrap();
    assert_eq!(unsafe { smc_pipeline_run_stage(p, all.as_ptr()) }, SmcStatus::Ok, "{}", last_error());
    let dir = unsafe { CStr::from_ptr(smc_pipeline_run_dir(p)) }.to_str().unwrap().to_string();
    assert!(Path::new(&dir).join("evaluate/metric_report.json").exists());
    let nope = CString::new("dance").unwrap();
    assert_eq!(unsafe { smc_pipeline_run_stage(p, nope.as_ptr()) }, SmcStatus::InvalidArgument);
    unsafe { smc_pipeline_free(p) };

    let missing = CString::new(tmp.path().join("absent.toml").to_string_lossy().into_owned()).unwrap();
    assert_eq!(unsafe { smc_pipeline_open(missing.as_ptr(), ptr::null(), false, &mut p) }, SmcStatus::Config);
    assert!(p.is_null());
}

#[test]
fn header_declares_the_abi() {
    let header = std::fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("include/semcluster.h")).unwrap();
    for sym in [
        "smc_last_error_message",
        "smc_bias_intensity",
        "smc_spurious_correlation",
        "smc_clustering_accuracy",
        "smc_harmonic_mean",
        "smc_parse_bullets",
        "smc_string_list_free",
        "smc_pipeline_open",
        "smc_pipeline_run_stage",
        "smc_pipeline_free",
        "SMC_STATUS_NULL_ARGUMENT = 1",
        "typedef struct SmcPipeline SmcPipeline",
    ] {
        assert!(header.contains(sym), "header lacks {sym}");
    }
}

/// Compiles and runs a C program against the header and static library
/// when a C compiler and the archive are available.
#[test]
fn c_program_links_and_runs() {
    let Some(cc) = ["cc", "gcc", "clang"].into_iter().find(|c| Command::new(c).arg("--version").output().is_ok()) else {
        eprintln!("no C compiler; skipped");
        return;
    };
    let exe = std::env::current_exe().unwrap();
    let Some(archive) = exe.ancestors().skip(1).take(3).map(|d| d.join("libsemcluster_ffi.a")).find(|p| p.exists())
    else {
        eprintln!("static library not built; skipped");
        return;
    };
    let root = Path::new(env!("CARGO_MANIFEST_DIR"));
    let tmp = tempfile::tempdir().unwrap();
    let bin = tmp.path().join("smoke");
    let status = Command::new(cc)
        .arg(root.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(root.join("include"))
        .arg(&archive)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&bin)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let out = Command::new(&bin).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
