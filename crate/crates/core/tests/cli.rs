use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn homoguard(args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_homoguard"));
    cmd.args(args).env_remove("HOMOGUARD_SEED");
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn generate(dir: &Path, seed: &str, env: &[(&str, &str)]) -> Output {
    homoguard(
        &[
            "generate",
            "--seed",
            seed,
            "--count",
            "12",
            "--map-size",
            "2048",
            "--manifest-only",
            "--out",
            dir.to_str().unwrap(),
        ],
        env,
    )
}

#[test]
fn generate_evaluate_roc_hist() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let out = tmp.path().join("out");
    let g = generate(&data, "3", &[]);
    assert_eq!(code(&g), 0, "{}", String::from_utf8_lossy(&g.stderr));

    let manifest = data.join("manifest.json");
    let e = homoguard(
        &[
            "evaluate",
            "--manifest",
            manifest.to_str().unwrap(),
            "--in-memory",
            "--estimator",
            "classical",
            "--threads",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&e), 0, "{}", String::from_utf8_lossy(&e.stderr));
    for f in [
        "records.json",
        "outcomes.json",
        "failures.json",
        "table.json",
        "table.csv",
    ] {
        assert!(out.join(f).exists(), "{f}");
    }

    let records = out.join("records.json");
    let roc_out = tmp.path().join("roc.json");
    let r = homoguard(
        &[
            "roc",
            "--records",
            records.to_str().unwrap(),
            "--out",
            roc_out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stdout).contains("AUC="));
    let curve: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(&roc_out).unwrap()).unwrap();
    assert!(curve["points"].as_array().unwrap().len() >= 2);

    let h = homoguard(
        &[
            "hist",
            "--records",
            records.to_str().unwrap(),
            "--bin-width",
            "10",
        ],
        &[],
    );
    assert_eq!(code(&h), 0);
    // ten regular bins up to 100 m plus the overflow bin
    assert_eq!(String::from_utf8_lossy(&h.stdout).lines().count(), 11);
}

#[test]
fn seed_variable_overrides_flag() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (
        tmp.path().join("a"),
        tmp.path().join("b"),
        tmp.path().join("c"),
    );
    assert_eq!(code(&generate(&a, "1", &[("HOMOGUARD_SEED", "9")])), 0);
    assert_eq!(code(&generate(&b, "2", &[("HOMOGUARD_SEED", "9")])), 0);
    assert_eq!(code(&generate(&c, "9", &[])), 0);
    let read = |d: &Path| fs::read_to_string(d.join("manifest.json")).unwrap();
    assert_eq!(read(&a), read(&b));
    assert_eq!(read(&a), read(&c));
}

#[test]
fn configuration_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&generate(&data, "1", &[])), 0);
    let manifest = data.join("manifest.json");
    let m = manifest.to_str().unwrap();
    let out = tmp.path().join("out");
    let o = out.to_str().unwrap();
    let base = ["evaluate", "--manifest", m, "--in-memory", "--out", o];
    for extra in [
        &["--method", "bogus"][..],
        &["--sampling", "grid", "--nc", "4"],
        &["--oc", "600"],
        &["--estimator", "nope"],
        &["--early-stop-k", "9"],
    ] {
        let args: Vec<&str> = base.iter().chain(extra).copied().collect();
        let r = homoguard(&args, &[]);
        assert_eq!(
            code(&r),
            2,
            "{extra:?}: {}",
            String::from_utf8_lossy(&r.stderr)
        );
    }
    let r = generate(&tmp.path().join("x"), "1", &[("HOMOGUARD_SEED", "abc")]);
    assert_eq!(code(&r), 2);
    let r = homoguard(&["roc", "--records", "/nonexistent/records.json"], &[]);
    assert_eq!(code(&r), 2);
    // without --in-memory the PGM files must exist
    let r = homoguard(&["evaluate", "--manifest", m, "--out", o], &[]);
    assert_eq!(code(&r), 2);
}

#[test]
fn estimator_failures_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&generate(&data, "1", &[])), 0);
    let out = tmp.path().join("out");
    let r = homoguard(
        &[
            "evaluate",
            "--manifest",
            data.join("manifest.json").to_str().unwrap(),
            "--in-memory",
            "--estimator",
            "external:echo not-json",
            "--threads",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
    // outputs are still written, with every sample listed as failed
    let failures: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("failures.json")).unwrap()).unwrap();
    assert_eq!(failures.as_array().unwrap().len(), 12);
}

#[test]
fn ablate_writes_sweep() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert_eq!(code(&generate(&data, "5", &[])), 0);
    let out = tmp.path().join("out");
    let r = homoguard(
        &[
            "ablate",
            "--axis",
            "early-stopping",
            "--values",
            "none,2",
            "--manifest",
            data.join("manifest.json").to_str().unwrap(),
            "--in-memory",
            "--estimator",
            "oracle:2",
            "--out",
            out.to_str().unwrap(),
        ],
        &[],
    );
    assert_eq!(code(&r), 0, "{}", String::from_utf8_lossy(&r.stderr));
    let v: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(out.join("ablation_early_stopping.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(v["entries"].as_array().unwrap().len(), 2);
}
