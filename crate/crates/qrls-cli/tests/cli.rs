//! End-to-end checks of the `qrls` binary: determinism of seeded runs
//! (acceptance criterion 7), exit codes, file formats, and the fit -> asd
//! round trip.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn qrls(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qrls"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn write_gen_a(dir: &Path) -> PathBuf {
    let p = dir.join("gen_a.json");
    std::fs::write(
        &p,
        r#"{"phi0":0.04,"phi1":0.2,"psi1":0.1,"gamma11":0.5,"gamma21":1.25,"beta1":0.7,"omega":0.2,"family":"normal"}"#,
    )
    .unwrap();
    p
}

fn read(p: &Path) -> Vec<u8> {
    std::fs::read(p).unwrap()
}

#[test]
fn acceptance_7_reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_gen_a(d);

    let mut pass = true;

    // simulate twice
    for out in ["s1.csv", "s2.csv"] {
        let o = qrls(
            &["simulate", "--params", "gen_a.json", "--n", "300", "--seed", "7", "--out", out],
            d,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    pass &= read(&d.join("s1.csv")) == read(&d.join("s2.csv"));

    // fit twice on the simulated data
    for out in ["f1.json", "f2.json"] {
        let o = qrls(
            &["fit", "--input", "s1.csv", "--tau", "0.1", "--orders", "1,1,1,1", "--with-se", "--out", out],
            d,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    pass &= read(&d.join("f1.json")) == read(&d.join("f2.json"));

    // mc-study twice from a TOML config
    std::fs::write(
        d.join("study.toml"),
        "design = \"a\"\ntaus = [0.1]\nn = 250\nreps = 2\nseed = 5\nburnin = 100\nasd_path_len = 2000\n",
    )
    .unwrap();
    for out in ["m1.csv", "m2.csv"] {
        let o = qrls(&["mc-study", "--config", "study.toml", "--out", out], d);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    pass &= read(&d.join("m1.csv")) == read(&d.join("m2.csv"));
    pass &= read(&d.join("m1.csv.meta.json")) == read(&d.join("m2.csv.meta.json"));

    // asd twice
    for out in ["a1.json", "a2.json"] {
        let o = qrls(
            &["asd", "--tau", "0.1", "--gen", "gen_a.json", "--path-len", "5000", "--seed", "3", "--out", out],
            d,
        );
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    pass &= read(&d.join("a1.json")) == read(&d.join("a2.json"));

    println!(
        "ACCEPTANCE 7 (determinism: reruns byte-identical): {}",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass);
}

#[test]
fn manifests_are_written_alongside_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_gen_a(d);
    let o = qrls(
        &["simulate", "--params", "gen_a.json", "--n", "50", "--seed", "1", "--out", "sim.csv"],
        d,
    );
    assert!(o.status.success());
    let manifest: serde_json::Value =
        serde_json::from_slice(&read(&d.join("sim.csv.manifest.json"))).unwrap();
    assert_eq!(manifest["schema"], 1);
    assert_eq!(manifest["subcommand"], "simulate");
    assert_eq!(manifest["seed"], 1);
    assert!(manifest["wall_time_s"].is_number());
    assert_eq!(manifest["outputs"][0], "sim.csv");

    let csv = String::from_utf8(read(&d.join("sim.csv"))).unwrap();
    assert!(csv.starts_with("t,Y,eps,h2\n"));
    assert_eq!(csv.lines().count(), 51);
}

#[test]
fn bad_tau_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_gen_a(d);
    qrls(&["simulate", "--params", "gen_a.json", "--n", "300", "--seed", "2", "--out", "s.csv"], d);
    let o = qrls(
        &["fit", "--input", "s.csv", "--tau", "1.5", "--orders", "1,1,1,1", "--out", "f.json"],
        d,
    );
    assert_eq!(o.status.code(), Some(1));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("domain error"), "stderr: {err}");
}

#[test]
fn exit_codes_for_flags_and_numerical_failures() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // unknown flag -> 1; help -> 0
    assert_eq!(qrls(&["fit", "--definitely-not-a-flag"], d).status.code(), Some(1));
    assert_eq!(qrls(&["--help"], d).status.code(), Some(0));
    // missing input file -> 1
    assert_eq!(
        qrls(&["fit", "--input", "nope.csv", "--tau", "0.5", "--orders", "0,0,1,1", "--out", "f.json"], d)
            .status
            .code(),
        Some(1)
    );
    // explosive generative design -> numerical failure 2
    std::fs::write(
        d.join("boom.json"),
        r#"{"phi0":0.0,"gamma11":500.0,"gamma21":500.0,"beta1":0.9,"omega":10.0,"family":"normal"}"#,
    )
    .unwrap();
    let o = qrls(
        &["simulate", "--params", "boom.json", "--n", "5000", "--seed", "4", "--burnin", "0", "--out", "b.csv"],
        d,
    );
    assert_eq!(o.status.code(), Some(2), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("explosive"));
}

#[test]
fn fit_then_asd_round_trip_without_orders() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_gen_a(d);
    qrls(&["simulate", "--params", "gen_a.json", "--n", "2000", "--seed", "9", "--out", "s.csv"], d);
    let o = qrls(
        &["fit", "--input", "s.csv", "--tau", "0.1", "--orders", "1,1,1,1", "--out", "f.json"],
        d,
    );
    assert!(o.status.success());
    // no --orders, no --tau: both come from the fit file
    let o = qrls(
        &["asd", "--fit", "f.json", "--family", "normal", "--omega", "0.2", "--path-len", "5000", "--out", "a.json"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let asd: serde_json::Value = serde_json::from_slice(&read(&d.join("a.json"))).unwrap();
    assert_eq!(asd["tau"], 0.1);
    assert_eq!(asd["J"].as_array().unwrap().len(), 7);
    for (_, v) in asd["asd"].as_object().unwrap() {
        assert!(v.as_f64().unwrap() > 0.0);
    }
}

#[test]
fn tau_grid_emits_plot_ready_csv() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_gen_a(d);
    qrls(&["simulate", "--params", "gen_a.json", "--n", "500", "--seed", "11", "--out", "s.csv"], d);
    let o = qrls(
        &["tau-grid", "--input", "s.csv", "--orders", "1,1,1,1", "--taus", "0.2,0.8", "--out", "g.csv"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(read(&d.join("g.csv"))).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "tau,param,estimate,se,lo90,hi90,warning");
    assert_eq!(csv.lines().count(), 1 + 2 * 7);
    let meta: serde_json::Value = serde_json::from_slice(&read(&d.join("g.csv.meta.json"))).unwrap();
    assert!(meta["stationarity_diagnostic"]["mean"].as_f64().unwrap() > 0.0);

    // price-level input (headerless single column) with the log-return
    // transform
    let mut price = 100.0f64;
    let mut body = format!("{price}\n");
    let returns = String::from_utf8(read(&d.join("s.csv"))).unwrap();
    for line in returns.lines().skip(1).take(200) {
        let y: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
        price *= (y / 100.0).exp();
        body.push_str(&format!("{price}\n"));
    }
    std::fs::write(d.join("prices.csv"), body).unwrap();
    let o = qrls(
        &["fit", "--input", "prices.csv", "--tau", "0.5", "--orders", "0,0,1,1", "--log-returns-x100", "--out", "p.json"],
        d,
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}
