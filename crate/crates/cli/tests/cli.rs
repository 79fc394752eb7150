use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn levymut(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_levymut"))
        .args(args)
        .arg("--out-dir")
        .arg(out)
        .env_remove("LEVYMUT_SCENARIO")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_scenario(dir: &Path, text: &str) -> PathBuf {
    let file = dir.join("scenario.toml");
    fs::write(&file, text).unwrap();
    file
}

const SMALL: &str = r#"
[model]
r1 = 0.5
r2 = 0.5
b1 = 1.0
b2 = 1.0
K1 = 2.0
K2 = 2.0
eps1 = 0.5
eps2 = 0.5
alpha1 = 0.2
alpha2 = 0.2
x0 = 1.0
y0 = 1.0

[run]
dt = 0.01
horizon = 2.0
n_paths = 3
base_seed = 5
"#;

#[test]
fn classify_reports_joint_persistence() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("persistent.toml");
    let o = levymut(&["classify", "--scenario", s.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("BothPersistent"));
    let o = levymut(
        &["classify", "--format", "csv", "--scenario", s.to_str().unwrap()],
        dir.path(),
    );
    assert!(stdout(&o).starts_with("species,class,"));
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn verify_extinction_scenario_passes() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("extinction.toml");
    let o = levymut(
        &[
            "verify",
            "--scenario",
            s.to_str().unwrap(),
            "--paths",
            "20",
            "--dt",
            "0.01",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    let checks = report["checks"].as_array().unwrap();
    let ext = checks.iter().find(|c| c["name"] == "extinction").unwrap();
    assert_eq!(ext["verdict"], "pass");
    assert_eq!(report["scenario"]["run"]["n_paths"], 20);
}

#[test]
fn seasonal_scenario_passes_its_checks() {
    let dir = tempfile::tempdir().unwrap();
    let s = scenario("seasonal.toml");
    let o = levymut(
        &["verify", "--scenario", s.to_str().unwrap(), "--paths", "100"],
        dir.path(),
    );
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
}

#[test]
fn invalid_coefficient_exits_2_with_line() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(
        dir.path(),
        &SMALL.replace(
            "[run]",
            "[[model.marks]]\nweight = 1.0\ngamma1 = -1.5\ngamma2 = 0.1\n\n[run]",
        ),
    );
    let o = levymut(&["verify", "--scenario", file.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 18"), "{}", stderr(&o));
}

#[test]
fn missing_scenario_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = levymut(&["simulate", "--scenario", "does/not/exist.toml"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    let o = levymut(&["simulate"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no scenario"));
}

#[test]
fn ensemble_writes_one_file_per_path() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(
        dir.path(),
        &format!("{SMALL}\n[output]\nwrite_paths = true\npath_stride = 10\n"),
    );
    let out = dir.path().join("out");
    let o = levymut(
        &["ensemble", "--scenario", file.to_str().unwrap(), "--format", "csv"],
        &out,
    );
    assert!(o.status.success(), "{}", stderr(&o));
    for i in 0..3 {
        let text = fs::read_to_string(out.join(format!("path_{i:03}.csv"))).unwrap();
        // 201 grid points at stride 10: rows 0, 10, ..., 200
        assert_eq!(text.lines().count(), 1 + 21);
    }
    assert!(!out.join("path_003.csv").exists());
    let summary = fs::read_to_string(out.join("summary.csv")).unwrap();
    assert!(summary.starts_with("t,x_mean,"));
}

#[test]
fn simulate_adds_bound_columns_with_sandwich() {
    let dir = tempfile::tempdir().unwrap();
    let plain = write_scenario(dir.path(), SMALL);
    let o = levymut(&["simulate", "--scenario", plain.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap().split(',').count(), 9);
    assert_eq!(text.lines().count(), 1 + 201);

    let with = write_scenario(dir.path(), &format!("{SMALL}\n[checks]\nsandwich = true\n"));
    let o = levymut(&["simulate", "--scenario", with.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(dir.path().join("path.csv")).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "t,x,y,lnx,lny,M1,M2,Q1,Q2,Lambda,lambda,Theta,theta"
    );
    for row in text.lines().skip(1) {
        let v: Vec<f64> = row.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(v[10] <= v[1] && v[1] <= v[9] && v[12] <= v[2] && v[2] <= v[11]);
    }
}

#[test]
fn empty_check_list_reports_only_the_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), SMALL);
    let o = levymut(&["verify", "--scenario", file.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value = serde_json::from_slice(&fs::read(dir.path().join("report.json")).unwrap()).unwrap();
    assert!(report["checks"].as_array().unwrap().is_empty());
    assert!(report["ensemble"].is_null());
    assert!(report["scenario"]["model"].is_object());
}

#[test]
fn environment_supplies_scenario_and_seed() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), SMALL);
    let run = |seed: &str, out: &str| {
        let o = Command::new(env!("CARGO_BIN_EXE_levymut"))
            .arg("simulate")
            .env("LEVYMUT_SCENARIO", &file)
            .env("LEVYMUT_SEED", seed)
            .env("LEVYMUT_OUT_DIR", dir.path().join(out))
            .output()
            .unwrap();
        assert!(o.status.success(), "{}", stderr(&o));
        fs::read_to_string(dir.path().join(out).join("path.csv")).unwrap()
    };
    let a = run("7", "a");
    assert_eq!(a, run("7", "b"));
    assert_ne!(a, run("8", "c"));
}

#[test]
fn csv_report_has_one_row_per_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(
        dir.path(),
        &format!("{SMALL}\n[checks]\nregime = true\nsandwich = true\n"),
    );
    let o = levymut(
        &["verify", "--scenario", file.to_str().unwrap(), "--format", "csv"],
        dir.path(),
    );
    assert!(o.status.success(), "{}{}", stdout(&o), stderr(&o));
    let text = fs::read_to_string(dir.path().join("report.csv")).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 11);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.starts_with("sandwich,") || l.starts_with("regime,")));
    assert!(!dir.path().join("report.json").exists());
}

#[test]
fn convergence_writes_ratios() {
    let dir = tempfile::tempdir().unwrap();
    let file = write_scenario(dir.path(), SMALL);
    let o = levymut(
        &[
            "convergence",
            "--scenario",
            file.to_str().unwrap(),
            "--paths",
            "50",
            "--dt",
            "0.001",
        ],
        dir.path(),
    );
    assert!(matches!(o.status.code(), Some(0 | 1)), "{}", stderr(&o));
    let study: serde_json::Value =
        serde_json::from_slice(&fs::read(dir.path().join("convergence.json")).unwrap()).unwrap();
    assert_eq!(study["dts"].as_array().unwrap().len(), 3);
    assert_eq!(study["ratios"].as_array().unwrap().len(), 1);
}
