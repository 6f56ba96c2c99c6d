use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use msgen_ffi::*;

fn last_error() -> String {
    let p = msgen_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn small_config(out: &Path) -> CString {
    cstr(&format!(
        r#"{{
        "seed": 5, "out": {:?},
        "scm": {{"preset": "table4-d1", "n_traj": 60, "T": 20}},
        "propensity": {{"model": {{"train": {{"epochs": 2, "batch_size": 128, "lr": 0.001}}}}}},
        "methods": [{{"method": "mscvae", "train": {{"epochs": 2, "batch_size": 128, "lr": 0.001}}}}, "kde"],
        "eval": {{"oracle_samples": 500, "generated_samples": 200}}
        }}"#,
        out.to_str().unwrap()
    ))
}

#[test]
fn wasserstein_through_the_abi() {
    let a = [0.0, 0.0];
    let b = [1.0, 1.0];
    let mut out = -1.0;
    let st = unsafe { msgen_wasserstein1(a.as_ptr(), 2, b.as_ptr(), 2, &mut out) };
    assert_eq!(st, MsgenStatus::Ok);
    assert_eq!(out, 1.0);

    let st = unsafe { msgen_wasserstein1(a.as_ptr(), 0, b.as_ptr(), 2, &mut out) };
    assert_eq!(st, MsgenStatus::InvalidArgument);
    assert!(last_error().contains("empty"));

    let st = unsafe { msgen_wasserstein1(ptr::null(), 3, b.as_ptr(), 2, &mut out) };
    assert_eq!(st, MsgenStatus::NullPointer);
    assert!(last_error().contains("a is null"));
}

#[test]
fn bad_config_reports_config_status() {
    let mut exp = ptr::null_mut();
    let json = cstr(r#"{"scm": {"preset": "table4-d1"}, "methods": []}"#);
    let st = unsafe { msgen_experiment_from_json(json.as_ptr(), &mut exp) };
    assert_eq!(st, MsgenStatus::Config);
    assert!(exp.is_null());
    assert!(last_error().contains("at least one method"));

    let junk = cstr("{not json");
    assert_eq!(
        unsafe { msgen_experiment_from_json(junk.as_ptr(), &mut exp) },
        MsgenStatus::Io
    );
}

#[test]
fn missing_artifact_names_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = ptr::null_mut();
    let json = small_config(dir.path());
    assert_eq!(
        unsafe { msgen_experiment_from_json(json.as_ptr(), &mut exp) },
        MsgenStatus::Ok
    );
    let st = unsafe { msgen_experiment_run_stage(exp, MsgenStage::Train) };
    assert_eq!(st, MsgenStatus::MissingArtifact);
    let msg = last_error();
    assert!(msg.starts_with("train stage failed"), "{msg}");
    assert!(msg.contains("dataset.jsonl"), "{msg}");
    unsafe { msgen_experiment_free(exp) };
}

#[test]
fn full_run_then_sample_a_saved_model() {
    let dir = tempfile::tempdir().unwrap();
    let mut exp = ptr::null_mut();
    let json = small_config(dir.path());
    unsafe {
        assert_eq!(
            msgen_experiment_from_json(json.as_ptr(), &mut exp),
            MsgenStatus::Ok
        );
        let mut combos = 0usize;
        assert_eq!(
            msgen_experiment_combo_count(exp, &mut combos),
            MsgenStatus::Ok
        );
        assert_eq!(combos, 2);

        let mut report = ptr::null_mut();
        assert_eq!(
            msgen_experiment_run(exp, &mut report),
            MsgenStatus::Ok,
            "{}",
            last_error()
        );
        let (mut avg, mut worst) = (0.0, 0.0);
        let (method, metric) = (cstr("kde"), cstr("w1"));
        assert_eq!(
            msgen_report_aggregate(
                report,
                method.as_ptr(),
                metric.as_ptr(),
                &mut avg,
                &mut worst
            ),
            MsgenStatus::Ok
        );
        assert!(avg > 0.0 && worst >= avg);
        let nope = cstr("fid_star");
        assert_eq!(
            msgen_report_aggregate(report, method.as_ptr(), nope.as_ptr(), &mut avg, &mut worst),
            MsgenStatus::InvalidArgument
        );

        let mut text = ptr::null_mut();
        assert_eq!(msgen_report_to_json(report, &mut text), MsgenStatus::Ok);
        let parsed: serde_json::Value =
            serde_json::from_str(CStr::from_ptr(text).to_str().unwrap()).unwrap();
        assert_eq!(parsed["records"].as_array().unwrap().len(), 4);
        msgen_string_free(text);
        msgen_report_free(report);

        let path = cstr(dir.path().join("models/mscvae.json").to_str().unwrap());
        let mut model = ptr::null_mut();
        assert_eq!(msgen_model_load(path.as_ptr(), &mut model), MsgenStatus::Ok);
        assert_eq!(msgen_model_history_len(model), 1);
        assert_eq!(msgen_model_outcome_dim(model), 1);
        let a_bar = [1u8];
        let mut out = vec![f64::NAN; 50];
        assert_eq!(
            msgen_model_sample(model, a_bar.as_ptr(), 1, 50, 9, out.as_mut_ptr(), out.len()),
            MsgenStatus::Ok
        );
        assert!(out.iter().all(|v| v.is_finite()));
        let mut again = vec![0.0; 50];
        msgen_model_sample(
            model,
            a_bar.as_ptr(),
            1,
            50,
            9,
            again.as_mut_ptr(),
            again.len(),
        );
        assert_eq!(out, again);
        assert_eq!(
            msgen_model_sample(model, a_bar.as_ptr(), 1, 50, 9, out.as_mut_ptr(), 10),
            MsgenStatus::InvalidArgument
        );
        let wrong = [1u8, 0];
        assert_eq!(
            msgen_model_sample(model, wrong.as_ptr(), 2, 5, 9, out.as_mut_ptr(), out.len()),
            MsgenStatus::InvalidArgument
        );
        msgen_model_free(model);
        msgen_experiment_free(exp);
    }
}

#[test]
fn null_handles_are_tolerated() {
    unsafe {
        msgen_experiment_free(ptr::null_mut());
        msgen_report_free(ptr::null_mut());
        msgen_model_free(ptr::null_mut());
        msgen_string_free(ptr::null_mut());
        assert_eq!(msgen_model_outcome_dim(ptr::null()), 0);
        assert_eq!(
            msgen_experiment_set_seed(ptr::null_mut(), 1),
            MsgenStatus::NullPointer
        );
    }
    let v = unsafe { CStr::from_ptr(msgen_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/msgen.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in [
        "msgen_experiment_run",
        "msgen_model_sample",
        "msgen_wasserstein1",
        "msgen_last_error",
    ] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(
        &src,
        "#include \"msgen.h\"\nint main(void) { double w; double a = 0, b = 1; return msgen_wasserstein1(&a, 1, &b, 1, &w); }\n",
    )
    .unwrap();
    let status = Command::new("cc")
        .arg("-fsyntax-only")
        .arg("-I")
        .arg(header.parent().unwrap())
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header failed to compile"),
        Err(e) => eprintln!("no C compiler available ({e}); header syntax not checked"),
    }
}
