use std::path::Path;
use std::process::Command;

fn driftflow(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_driftflow"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn read_posterior(dir: &Path) -> Vec<f64> {
    let mut rdr = csv::Reader::from_path(dir.join("posterior.csv")).unwrap();
    rdr.records().map(|r| r.unwrap()[1].parse().unwrap()).collect()
}

#[test]
fn linear_writes_all_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let out = driftflow(&["linear"], tmp.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for f in [
        "prior.csv",
        "posterior.csv",
        "map.json",
        "map_curve.csv",
        "report.json",
        "summary.json",
        "grid_posterior.csv",
        "plot_particles.svg",
        "plot_cdf.svg",
        "plot_map.svg",
    ] {
        assert!(tmp.path().join(f).is_file(), "{f} missing");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["passed"], true);
    assert_eq!(summary["config"]["L"], 30);
    let posterior = read_posterior(tmp.path());
    assert_eq!(posterior.len(), 30);
}

#[test]
fn custom_gaussian_expression_matches_linear() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(
        driftflow(&["linear", "--y-hat", "1", "--noise-std", "1"], a.path())
            .status
            .code(),
        Some(0)
    );
    assert_eq!(
        driftflow(&["custom", "--expr", "-(x-1)^2/2"], b.path())
            .status
            .code(),
        Some(0)
    );
    for (x, y) in read_posterior(a.path()).iter().zip(read_posterior(b.path())) {
        assert!((x - y).abs() <= 1e-9);
    }
}

#[test]
fn flat_custom_expression_keeps_prior() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        driftflow(&["custom", "--expr", "0"], tmp.path()).status.code(),
        Some(0)
    );
    let prior = std::fs::read_to_string(tmp.path().join("prior.csv")).unwrap();
    let post = std::fs::read_to_string(tmp.path().join("posterior.csv")).unwrap();
    assert_eq!(prior, post);
}

#[test]
fn parse_error_reports_offset_and_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = driftflow(&["custom", "--expr", "(x+"], tmp.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("offset 3"));
}

#[test]
fn threshold_failure_exits_2() {
    // the sharp cubic posterior misses the 0.1 map tolerance
    let tmp = tempfile::tempdir().unwrap();
    let out = driftflow(&["cubic", "--noise-std", "0.3"], tmp.path());
    assert_eq!(out.status.code(), Some(2));
    let summary = std::fs::read_to_string(tmp.path().join("summary.json")).unwrap();
    assert!(summary.contains("\"passed\": false"));
}

#[test]
fn config_file_is_read_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("run.toml");
    std::fs::write(&cfg, "L = 12\nnoise_std = 0.6\n").unwrap();
    let out_dir = tmp.path().join("out");
    let out = driftflow(
        &["linear", "--config", cfg.to_str().unwrap(), "--noise-std", "0.3"],
        &out_dir,
    );
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["config"]["L"], 12);
    assert_eq!(summary["config"]["noise_std"], 0.3);
}

#[test]
fn invalid_config_exits_1() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        driftflow(&["linear", "--L", "1"], tmp.path()).status.code(),
        Some(1)
    );
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "particles = 3\n").unwrap();
    let out = driftflow(&["linear", "--config", cfg.to_str().unwrap()], tmp.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn cubic_writes_trajectory_and_quartic_writes_sir_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let c = tmp.path().join("c");
    assert_eq!(driftflow(&["cubic"], &c).status.code(), Some(0));
    let traj = std::fs::read_to_string(c.join("trajectory.csv")).unwrap();
    assert!(traj.starts_with("step,particle,x\n"));
    assert!(c.join("plot_flow.svg").is_file());

    let q = tmp.path().join("q");
    assert_eq!(driftflow(&["quartic-compare"], &q).status.code(), Some(0));
    let runs = std::fs::read_to_string(q.join("sir_runs.csv")).unwrap();
    let rows: Vec<&str> = runs.lines().skip(1).collect();
    assert_eq!(rows.len(), 40);
    assert!(rows[0].starts_with("50,1,"));
    assert!(rows[39].starts_with("500,10,"));
    assert!(q.join("plot_sir.svg").is_file());
}

#[test]
fn symmetric_cubic_measurement() {
    let tmp = tempfile::tempdir().unwrap();
    let out = driftflow(&["cubic", "--y-hat", "0"], tmp.path());
    assert_eq!(
        out.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&out.stdout)
    );
}

#[test]
fn uninformative_linear_measurement_keeps_prior_shape() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(
        driftflow(&["linear", "--noise-std", "1e6"], tmp.path())
            .status
            .code(),
        Some(0)
    );
}
