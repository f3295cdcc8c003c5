use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
version = 1
seeds = [7, 8]
metrics_cadence = 4

[model]
kind = "logistic_binary"
l2 = 0.01

[shift]
kind = "strategic_response"
alpha = 0.2

[optimizer]
method = "sprint"
iterations = 60

[data]
source = "synthetic"
classes = 2
samples = 40
features = 3

[theory]
trials = 20
variance_pairs = 2
"#;

fn perfopt() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_perfopt"));
    c.env_remove("PERFOPT_SEED_OVERRIDE").env_remove("PERFOPT_NO_SVG");
    c
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p
}

fn run(cfg: &Path, out: &Path) -> std::process::Output {
    perfopt()
        .args(["run", "--config"])
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

#[test]
fn run_writes_one_csv_svg_per_seed_and_a_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for s in [7, 8] {
        let csv = std::fs::read_to_string(out.join(format!("seed-{s}.csv"))).unwrap();
        // T rows plus the header
        assert_eq!(csv.lines().count(), 61);
        assert!(out.join(format!("seed-{s}.svg")).is_file());
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seeds"].as_array().unwrap().len(), 2);
    assert_eq!(manifest["config"]["workers"], 1);
    assert_eq!(manifest["config"]["theory"]["probe_radius"], 1.0);
}

#[test]
fn reruns_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("seeds = [7, 8]", "seeds = [7, 8]\nworkers = 2"));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&cfg, &a).status.success());
    assert!(run(&cfg, &b).status.success());
    for name in ["seed-7.csv", "seed-8.csv", "seed-7.svg", "manifest.json"] {
        assert_eq!(std::fs::read(a.join(name)).unwrap(), std::fs::read(b.join(name)).unwrap(), "{name}");
    }
}

#[test]
fn seed_outputs_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert!(run(&write_config(dir.path(), CONFIG), &a).status.success());
    assert!(run(&write_config(dir.path(), &CONFIG.replace("[7, 8]", "[7, 9]")), &b).status.success());
    assert_eq!(std::fs::read(a.join("seed-7.csv")).unwrap(), std::fs::read(b.join("seed-7.csv")).unwrap());
}

#[test]
fn environment_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    let o = perfopt()
        .args(["run", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("PERFOPT_SEED_OVERRIDE", "11")
        .env("PERFOPT_NO_SVG", "1")
        .output()
        .unwrap();
    assert!(o.status.success());
    let mut names: Vec<String> = std::fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert_eq!(names, vec!["manifest.json", "seed-11.csv"]);
}

#[test]
fn config_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &CONFIG.replace("seeds = [7, 8]", "seeds = []"));
    let o = run(&cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seeds"));

    let cfg = write_config(dir.path(), &CONFIG.replace("iterations = 60", "iterations = 60\nepoch_length = 0"));
    let o = run(&cfg, &dir.path().join("out"));
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("epoch_length"));

    let cfg = write_config(dir.path(), &CONFIG.replace("alpha = 0.2", "alpah = 0.2"));
    assert_eq!(run(&cfg, &dir.path().join("out")).status.code(), Some(1));
}

#[test]
fn runtime_failures_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    // a huge constant step on a ridge-dominated objective diverges
    let text = CONFIG
        .replace("l2 = 0.01", "l2 = 1.0")
        .replace("method = \"sprint\"", "method = \"sgd_gd\"\nstep = \"constant\"\ngamma = 1e200");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let o = run(&cfg, &out);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert!(manifest["seeds"][0]["error"].is_string());
    assert!(manifest["seeds"][0]["csv"].is_null());
}

#[test]
fn sweep_check_oracle_version() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("sweep");
    let o = perfopt()
        .args(["sweep", "--config"])
        .arg(&cfg)
        .args(["--over", "shift.alpha=0.0,0.4", "--workers", "2", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 1 + 2 * 2);

    let o = perfopt().args(["check", "--config"]).arg(&cfg).output().unwrap();
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("smoothness") && text.contains("audit"), "{text}");

    let o = perfopt()
        .args(["oracle", "--gradient-trials", "20", "--bias-trials", "5", "--config"])
        .arg(&cfg)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("PASS"));

    let o = perfopt().arg("version").output().unwrap();
    assert_eq!(String::from_utf8_lossy(&o.stdout).trim(), format!("perfopt {}", env!("CARGO_PKG_VERSION")));
}
