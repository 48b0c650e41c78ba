use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phonon_cli::{load_device_config, Config};

fn default_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/default.toml")
}

fn phonon(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_phonon"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read_dir(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

#[test]
fn shipped_config_is_the_reference() {
    let text = std::fs::read_to_string(default_config()).unwrap();
    assert_eq!(Config::from_toml(&text, &[]).unwrap(), Config::reference());
    let (device, saw) = load_device_config(&default_config()).unwrap();
    assert_eq!(device.a.g_ge, 5.9e6);
    assert_eq!(device.b.g_ge, 7.1e6);
    assert_eq!(saw[0].cavity_length, Config::reference().saw.a.cavity_length);
}

#[test]
fn missing_key_is_named() {
    let text = std::fs::read_to_string(default_config()).unwrap();
    let without: String = text
        .lines()
        .filter(|l| !l.starts_with("g_q"))
        .map(|l| format!("{l}\n"))
        .collect();
    let err = Config::from_toml(&without, &[]).unwrap_err().to_string();
    assert!(err.contains("g_q"), "{err}");
}

#[test]
fn parse_errors_carry_line_numbers() {
    let err = Config::from_toml("[device]\ng_q = = 1\n", &[]).unwrap_err().to_string();
    assert!(err.contains("line 2"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let text = Config::reference().to_toml() + "\n[extra]\nfoo = 1\n";
    assert!(Config::from_toml(&text, &[]).is_err());
    let text = Config::reference().to_toml().replace("[device.a]\n", "[device.a]\ncolour = 1\n");
    let err = Config::from_toml(&text, &[]).unwrap_err().to_string();
    assert!(err.contains("colour"), "{err}");
}

#[test]
fn invalid_values_exit_with_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_config();
    let o = phonon(&[
        "run",
        "saw-curves",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--set",
        "device.a.resonator_t1=-3.8e-7",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("T1"), "{}", stderr(&o));

    let o = phonon(&[
        "run",
        "saw-curves",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--seed",
        "0",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));

    let o = phonon(&["run", "not-a-scenario", "--config", cfg.to_str().unwrap(), "--out", "x"]);
    assert!(!o.status.success());
}

#[test]
fn check_flag_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = default_config();
    let base = [
        "run",
        "parallel-swap",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
        "--no-plots",
        "--check",
    ];
    let o = phonon(&base);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("PASS swap_time_a_ns"), "{stdout}");

    let mut weak = base.to_vec();
    weak.extend(["--set", "device.a.g_ge=4.0e6"]);
    let o = phonon(&weak);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("FAIL swap_time_a_ns"));

    // without --check a failing threshold is only reported
    let lenient: Vec<&str> = weak.iter().copied().filter(|a| *a != "--check").collect();
    let o = phonon(&lenient);
    assert_eq!(o.status.code(), Some(0));
}

#[test]
fn identical_runs_are_byte_identical() {
    let cfg = default_config();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        let o = phonon(&[
            "run",
            "chevron",
            "--config",
            cfg.to_str().unwrap(),
            "--out",
            d.path().to_str().unwrap(),
            "--seed",
            "7",
            "--shots",
            "500",
            "--set",
            "scenarios.chevron.detuning_span=4e6",
            "--set",
            "scenarios.chevron.detuning_step=2e6",
            "--set",
            "scenarios.chevron.time_max=100e-9",
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let a = read_dir(dirs[0].path());
    let b = read_dir(dirs[1].path());
    assert_eq!(a.keys().collect::<Vec<_>>(), b.keys().collect::<Vec<_>>());
    assert!(a.contains_key("chevron_a.csv") && a.contains_key("chevron_a.svg"));
    for (name, bytes) in &a {
        assert!(bytes == &b[name], "{name} differs between runs");
    }
    let report: serde_json::Value = serde_json::from_slice(&a["report.json"]).unwrap();
    assert_eq!(report["seed"], 7);
    assert_eq!(report["config"]["scenarios"]["chevron"]["detuning_span"], 4e6);
    // one heatmap row per detuning
    let csv = String::from_utf8(a["chevron_a.csv"].clone()).unwrap();
    assert_eq!(csv.lines().count(), 1 + 5);
}

#[test]
fn default_config_command_round_trips() {
    let o = phonon(&["default-config"]);
    assert!(o.status.success());
    let text = String::from_utf8(o.stdout).unwrap();
    assert_eq!(Config::from_toml(&text, &[]).unwrap(), Config::reference());
}
