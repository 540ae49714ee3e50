use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn photonlab(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_photonlab"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn json(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).unwrap()
}

const SCENARIO: &str = r#"{
  "emitter": { "states": [{ "emission_probability": 1.0, "lifetime_ns": 5.0 }] },
  "apparatus": {
    "sync_period_ps": 100000, "resolution_ps": 16, "dead_time_ps": 25000,
    "delay_line_ps": 300000, "detection_efficiency": 0.05, "duration_s": 0.05, "seed": 3
  }
}"#;

fn simulated(dir: &Path) {
    std::fs::write(dir.join("sc.json"), SCENARIO).unwrap();
    let out = photonlab(dir, &["simulate", "--scenario", "sc.json", "--out", "run"]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn simulate_then_correlate_shows_antibunching() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let info = json(&photonlab(dir.path(), &["info", "run.pts"]));
    assert!(info.to_string().contains("100000"));
    let g = json(&photonlab(
        dir.path(),
        &[
            "correlate",
            "run.pts",
            "--delay-line-ps",
            "300000",
            "--dead-time-ps",
            "25000",
            "--background",
        ],
    ));
    assert_eq!(g["state"], "Normalized");
    assert!(g["g2_zero"]["value"].as_f64().unwrap() < 0.05, "{g}");
    assert_eq!(g["single_photon"], true);
}

#[test]
fn usage_errors_exit_two_and_analysis_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        photonlab(dir.path(), &["correlate", "--no-such-flag", "x.pts"])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        photonlab(dir.path(), &["simulate", "--scenario", "x.json"])
            .status
            .code(),
        Some(2)
    );
    std::fs::write(
        dir.path().join("junk.pts"),
        b"not a photon stream at all, just text",
    )
    .unwrap();
    let out = photonlab(dir.path(), &["validate", "junk.pts"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

#[test]
fn existing_outputs_need_force() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let again = photonlab(
        dir.path(),
        &["simulate", "--scenario", "sc.json", "--out", "run"],
    );
    assert_eq!(again.status.code(), Some(2));
    let forced = photonlab(
        dir.path(),
        &[
            "simulate",
            "--scenario",
            "sc.json",
            "--out",
            "run",
            "--force",
        ],
    );
    assert!(forced.status.success());
}

#[test]
fn manifest_replays_to_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let manifest: Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("run.manifest.json")).unwrap())
            .unwrap();
    let argv: Vec<String> = manifest["argv"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap().to_string())
        .collect();
    let first = &manifest["outputs"][0];
    assert_eq!(first["path"], "run.pts");

    // rerun the recorded arguments into a second directory
    let other = tempfile::tempdir().unwrap();
    std::fs::copy(dir.path().join("sc.json"), other.path().join("sc.json")).unwrap();
    let args: Vec<&str> = argv.iter().map(String::as_str).collect();
    assert!(photonlab(other.path(), &args).status.success());
    let a = std::fs::read(dir.path().join("run.pts")).unwrap();
    let b = std::fs::read(other.path().join("run.pts")).unwrap();
    assert_eq!(a, b);
    assert_eq!(first["bytes"].as_u64().unwrap(), a.len() as u64);
}

#[test]
fn command_line_overrides_config() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    std::fs::write(
        dir.path().join("cfg.json"),
        r#"{"bins_per_pulse": 7, "max_delay_pulses": 5}"#,
    )
    .unwrap();
    let from_config = json(&photonlab(
        dir.path(),
        &["--config", "cfg.json", "correlate", "run.pts", "--raw"],
    ));
    assert_eq!(from_config["config"]["bins_per_pulse"], 7);
    let overridden = json(&photonlab(
        dir.path(),
        &[
            "--config",
            "cfg.json",
            "correlate",
            "run.pts",
            "--raw",
            "--bins-per-pulse",
            "13",
        ],
    ));
    assert_eq!(overridden["config"]["bins_per_pulse"], 13);
    assert_eq!(overridden["config"]["max_delay_pulses"], 5);
}

#[test]
fn stdout_output_streams_the_table() {
    let dir = tempfile::tempdir().unwrap();
    simulated(dir.path());
    let out = photonlab(dir.path(), &["correlate", "run.pts", "--raw", "--out", "-"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("delay_s,g2,raw_counts"));
    assert_eq!(text.lines().count(), 1 + 2 * 20 * 11 + 1);
}

#[test]
fn fiber_and_taper_commands_run() {
    let dir = tempfile::tempdir().unwrap();
    let modes = json(&photonlab(
        dir.path(),
        &[
            "fiber",
            "modes",
            "--radius-m",
            "125e-9",
            "--wavelength-m",
            "500e-9",
        ],
    ));
    assert_eq!(modes["single_mode"], true, "{modes}");
    assert_eq!(modes["modes"][0]["label"], "LP01");
    let design = photonlab(
        dir.path(),
        &[
            "taper",
            "design",
            "--r0-m",
            "62.5e-6",
            "--hot-zone-m",
            "0.005",
            "--elongation-m",
            "0.03",
            "--out",
            "t",
        ],
    );
    assert!(
        design.status.success(),
        "{}",
        String::from_utf8_lossy(&design.stderr)
    );
    for ext in ["csv", "json", "profile.csv", "stages.txt", "manifest.json"] {
        assert!(dir.path().join(format!("t.{ext}")).exists(), "t.{ext}");
    }
}
