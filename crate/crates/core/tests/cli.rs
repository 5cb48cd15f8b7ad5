use std::path::Path;
use std::process::{Command, Output};

fn atomlink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atomlink"))
        .args(args)
        .env_remove("ATOMLINK_CONFIG_DIR")
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout.clone()).unwrap()
}

/// Header plus data rows with the `#` echo stripped.
fn table(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let idx = rows[0].iter().position(|h| h == name).unwrap();
    rows[1..].iter().map(|r| r[idx].parse().unwrap()).collect()
}

#[test]
fn rate_single_zero_length_row() {
    let out = stdout(&atomlink(&["--preset", "paper-101km", "rate", "--lengths", "0:0:1"]));
    assert!(out.starts_with("# atomlink"));
    assert!(out.contains("# [link]"), "config echo missing");
    let rows = table(&out);
    assert_eq!(
        rows[0],
        [
            "length_km",
            "attempt_period_us",
            "repetition_rate_hz",
            "eta",
            "rate_per_s"
        ]
    );
    assert_eq!(rows.len(), 2);
    assert!((column(&rows, "attempt_period_us")[0] - 602.109).abs() < 1e-3);
}

#[test]
fn rate_matches_table_row() {
    let rows = table(&stdout(&atomlink(&[
        "--preset",
        "paper-101km",
        "rate",
        "--lengths",
        "101",
    ])));
    let hz = column(&rows, "repetition_rate_hz")[0];
    assert!((hz / 910.0 - 1.0).abs() < 0.03, "{hz}");
    let rate = column(&rows, "rate_per_s")[0];
    assert!((rate * 262.0 - 1.0).abs() < 0.4, "{rate}");
}

#[test]
fn descending_range_is_a_config_error() {
    let out = atomlink(&["rate", "--lengths", "100:0:1"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("descending"));
}

#[test]
fn snr_and_dark_count_projection() {
    let rows = table(&stdout(&atomlink(&[
        "--preset",
        "paper-101km",
        "snr",
        "--lengths",
        "0:101:1",
    ])));
    let snr = column(&rows, "snr");
    assert_eq!(snr.len(), 102);
    assert!(snr.windows(2).all(|w| w[1] <= w[0]));
    assert!((snr[101] / 11.8 - 1.0).abs() < 0.15, "{}", snr[101]);

    let rows = table(&stdout(&atomlink(&[
        "--preset",
        "paper-101km",
        "snr",
        "--lengths",
        "101",
        "--dark-counts",
        "1",
    ])));
    let projected = column(&rows, "snr")[0];
    assert!((projected / 46.7 - 1.0).abs() < 0.1, "{projected}");
}

#[test]
fn raman_minimal_grid_and_dips() {
    let rows = table(&stdout(&atomlink(&["raman", "--points", "2"])));
    assert_eq!(rows.len(), 3);

    let rows = table(&stdout(&atomlink(&["raman", "--points", "241"])));
    let delta = column(&rows, "delta_mhz");
    let argmax = |v: &[f64]| v.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
    let target = delta[argmax(&column(&rows, "p_target"))];
    let blocked = delta[argmax(&column(&rows, "p_blocked"))];
    assert!(target > 0.2 && blocked < -0.2, "{target} {blocked}");

    let rows = table(&stdout(&atomlink(&["raman", "--points", "241", "--field-gauss", "0"])));
    let target = argmax(&column(&rows, "p_target"));
    let blocked = argmax(&column(&rows, "p_blocked"));
    assert!(target.abs_diff(blocked) <= 1);
}

#[test]
fn simulate_is_reproducible_and_analyzable() {
    let dir = tempfile::tempdir().unwrap();
    let run = |sub: &str| {
        let out = dir.path().join(sub);
        stdout(&atomlink(&[
            "--preset",
            "paper-101km",
            "--seed",
            "9",
            "--out",
            out.to_str().unwrap(),
            "simulate",
            "--events",
            "60",
        ]));
        out
    };
    let a = run("a");
    let b = run("b");
    for file in ["records.csv", "report.json"] {
        assert_eq!(
            std::fs::read(a.join(file)).unwrap(),
            std::fs::read(b.join(file)).unwrap(),
            "{file}"
        );
    }
    let records = std::fs::read_to_string(a.join("records.csv")).unwrap();
    let rows = table(&records);
    assert_eq!(
        rows[0],
        [
            "time_us",
            "attempt_idx",
            "setting",
            "photon_port",
            "atom_outcome",
            "truth_tag"
        ]
    );
    assert_eq!(rows.len(), 61);

    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["config"]["sequence"]["seed"], 9);
    assert_eq!(report["summary"]["events"], 60);

    let analysis = stdout(&atomlink(&[
        "--preset",
        "paper-101km",
        "analyze",
        a.join("records.csv").to_str().unwrap(),
    ]));
    let rows = table(&analysis);
    let total: f64 = [
        "plus_plus",
        "plus_minus",
        "plus_leak",
        "minus_plus",
        "minus_minus",
        "minus_leak",
    ]
    .iter()
    .map(|c| column(&rows, c).iter().sum::<f64>())
    .sum();
    assert_eq!(total, 60.0);
    assert!(analysis.contains("# fidelity_bound = "));
}

#[test]
fn simulate_zero_events_writes_empty_log() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    stdout(&atomlink(&[
        "--preset",
        "paper-50km",
        "--out",
        out.to_str().unwrap(),
        "simulate",
        "--events",
        "0",
    ]));
    let rows = table(&std::fs::read_to_string(out.join("records.csv")).unwrap());
    assert_eq!(rows.len(), 1);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["summary"]["events"], 0);
    assert!(report["report"]["fidelity_bound"].is_null());
}

#[test]
fn coherence_fit_and_single_delay_failure() {
    let out = stdout(&atomlink(&["coherence", "--basis", "initial"]));
    let t2: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("# t2_us = "))
        .unwrap()
        .parse()
        .unwrap();
    assert!((t2 / 322.5 - 1.0).abs() < 0.05, "{t2}");

    let out = atomlink(&["coherence", "--delays-us", "100"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fit failed"));
}

#[test]
fn json_format_embeds_config() {
    let out = stdout(&atomlink(&[
        "--preset",
        "paper-5km",
        "--format",
        "json",
        "rate",
        "--lengths",
        "5",
    ]));
    let doc: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(doc["config"]["name"], "paper-5km");
    assert_eq!(doc["rows"].as_array().unwrap().len(), 1);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "[link]\nlength_km = 5.0\nwindow_width = 3.0\n").unwrap();
    let out = atomlink(&["--config", bad.to_str().unwrap(), "rate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("link.window_width"));

    std::fs::write(&bad, "[sequence]\nreadout_fidelity = 1.5\n").unwrap();
    let out = atomlink(&["--config", bad.to_str().unwrap(), "rate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sequence.readout_fidelity"));

    assert_eq!(atomlink(&["--preset", "missing", "rate"]).status.code(), Some(2));
}

#[test]
fn config_dir_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(
        dir.path().join("short.toml"),
        "name = \"short\"\n[link]\nlength_km = 1.0\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_atomlink"))
        .args(["--preset", "short", "rate", "--lengths", "1"])
        .env("ATOMLINK_CONFIG_DIR", dir.path())
        .output()
        .unwrap();
    assert!(stdout(&out).contains("# name = \"short\""));
    assert!(Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("presets/paper-101km.toml")
        .is_file());
}
