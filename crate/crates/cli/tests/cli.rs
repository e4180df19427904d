use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn gensyn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gensyn")).args(args).output().unwrap()
}

fn demo(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../demo").join(name)
}

fn small_truth(dir: &Path) -> PathBuf {
    std::fs::copy(demo("harness_schema.toml"), dir.join("harness_schema.toml")).unwrap();
    let spec = std::fs::read_to_string(demo("truth.toml")).unwrap().replace("population = 5000", "population = 1500");
    let path = dir.join("truth.toml");
    std::fs::write(&path, spec).unwrap();
    path
}

#[test]
fn truth_run_plot() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_truth(dir.path());
    let out = dir.path().join("truth");
    let o = gensyn(&["truth", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["schema.toml", "d1.csv", "d2.csv", "d3.csv", "reference.csv", "run.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }

    let config = out.join("run.toml");
    let results = dir.path().join("results");
    let o = gensyn(&[
        "run",
        "--config",
        config.to_str().unwrap(),
        "--method",
        "gensyn,sync",
        "--tau-sweep",
        "--output",
        results.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("gensyn") && stdout.contains("sync"));
    for f in ["report.json", "summary.csv", "tau_sweep.csv", "gensyn/population.csv", "sync/metrics.json"] {
        assert!(results.join(f).exists(), "{f}");
    }
    let rows = std::fs::read_to_string(results.join("gensyn/population.csv")).unwrap().lines().count();
    assert_eq!(rows, 1 + 1500);

    let o = gensyn(&["plot", "--report", results.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["metrics.svg", "tau_sweep.svg"] {
        let svg = std::fs::read_to_string(results.join(f)).unwrap();
        assert!(svg.starts_with("<svg"), "{f}");
    }
}

#[test]
fn graph_prints_dot() {
    let dir = tempfile::tempdir().unwrap();
    let spec = small_truth(dir.path());
    let out = dir.path().join("truth");
    assert!(gensyn(&["truth", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let o = gensyn(&["graph", "--config", out.join("run.toml").to_str().unwrap()]);
    assert!(o.status.success());
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.starts_with("digraph"));
    assert!(text.contains("// order:"));
    for v in ["age", "gender", "employment", "marital", "poverty"] {
        assert!(text.contains(v), "{v}");
    }
}

#[test]
fn input_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    let o = gensyn(&["run", "--config", missing.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "schema = 3\n").unwrap();
    assert_eq!(gensyn(&["run", "--config", bad.to_str().unwrap()]).status.code(), Some(2));

    let spec = small_truth(dir.path());
    let out = dir.path().join("truth");
    assert!(gensyn(&["truth", "--spec", spec.to_str().unwrap(), "--out", out.to_str().unwrap()]).status.success());
    let o = gensyn(&["run", "--config", out.join("run.toml").to_str().unwrap(), "--method", "ipf"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ipf"));
}

#[test]
fn plot_without_report_fails() {
    let dir = tempfile::tempdir().unwrap();
    let o = gensyn(&["plot", "--report", dir.path().to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
