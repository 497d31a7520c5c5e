use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[grid]
nlat = 16
nlon = 8
nlev = 8

[model]
n_steps = 480

[output]
dot_days = [60.0, 110.0]
"#;

fn volcpath(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_volcpath"))
        .args(args)
        .env("VOLCPATH_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("exp.toml");
    std::fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn missing_config_exits_2_naming_the_path() {
    let o = volcpath(&["simulate", "--config", "/no/such/exp.toml", "--out", "/tmp/unused"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("/no/such/exp.toml"), "{}", stderr(&o));
}

#[test]
fn bad_key_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[model]\ntau_chem = 30.0\nbogus = 1\n");
    let out = dir.path().join("out");
    let o = volcpath(&["simulate", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let err = stderr(&o);
    assert!(err.contains("bogus") && err.contains("line 3"), "{err}");
    assert!(!out.exists());
}

#[test]
fn simulate_writes_three_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("sim");
    let o = volcpath(&["simulate", "-c", &cfg, "-o", out.to_str().unwrap(), "--experiment", "Ex3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["series.csv", "pathway.json", "manifest.json"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let series = read(&out.join("series.csv"));
    assert_eq!(series.lines().count(), 1 + 481);
    assert!(series.starts_with("step,time_days,SO2(e),SO2(s)"));
    let doc: serde_json::Value = serde_json::from_str(&read(&out.join("pathway.json"))).unwrap();
    assert_eq!(doc["experiment"], "Ex3");
    let manifest: serde_json::Value = serde_json::from_str(&read(&out.join("manifest.json"))).unwrap();
    assert_eq!(manifest["config_digest"], doc["config_digest"]);
    assert_eq!(manifest["conventions"]["never_active_day"], 120.0);

    let dot = volcpath(&["export-dot", out.join("pathway.json").to_str().unwrap(), "--day", "100"]);
    assert!(dot.status.success());
    let text = String::from_utf8(dot.stdout).unwrap();
    assert!(text.starts_with("digraph pathway {"));
    assert!(text.contains("\"SO2(e)\" [fillcolor=orange];"));
    let late = volcpath(&["export-dot", out.join("pathway.json").to_str().unwrap(), "--day", "500"]);
    assert_eq!(late.status.code(), Some(1));
}

#[test]
fn zero_mass_has_no_tracer_activity() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("zero");
    let o = volcpath(&["simulate", "-c", &cfg, "-o", out.to_str().unwrap(), "--mass", "0", "--seed", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&read(&out.join("pathway.json"))).unwrap();
    let rows = doc["activation"].as_array().unwrap();
    assert_eq!(rows.len(), 481);
    for row in rows {
        assert!(row.as_str().unwrap()[..12].chars().all(|c| c == '0'));
    }
}

#[test]
fn experiment_rows_determinism_and_filter() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = volcpath(&["experiment", "-c", &cfg, "-o", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    let summary = read(&a.join("summary.csv"));
    assert_eq!(summary.lines().count(), 1 + 3 * 4 * 16);
    assert_eq!(summary, read(&b.join("summary.csv")));
    let p = "pathways/mass10_member03_Ex2.json";
    assert_eq!(read(&a.join(p)), read(&b.join(p)));
    assert!(a.join("dot/mass20_member00_Ex4_day110.dot").exists());
    assert!(a.join("series/mass5_member09.csv").exists());

    let bl = a.join("baselines.json");
    let c = dir.path().join("c");
    let o = volcpath(&[
        "experiment",
        "-c",
        &cfg,
        "-o",
        c.to_str().unwrap(),
        "--experiments",
        "Ex2",
        "--baselines",
        bl.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let filtered = read(&c.join("summary.csv"));
    assert_eq!(filtered.lines().count(), 1 + 48);
    let ex2: Vec<&str> = summary.lines().filter(|l| l.contains(",Ex2,")).collect();
    assert_eq!(filtered.lines().skip(1).collect::<Vec<_>>(), ex2);

    let o = volcpath(&["experiment", "-c", &cfg, "-o", c.to_str().unwrap(), "--experiments", "Ex9"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn baseline_subcommand() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("bl");
    let o = volcpath(&["baseline", "-c", &cfg, "-o", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let doc: serde_json::Value = serde_json::from_str(&read(&out.join("baselines.json"))).unwrap();
    let bls = doc["baselines"].as_array().unwrap();
    assert_eq!(bls.len(), 16);
    assert_eq!(bls[0]["members"], 10);
}

#[test]
fn bench_single_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("bench");
    let o = volcpath(&["bench", "-c", &cfg, "-o", out.to_str().unwrap(), "--counts", "1", "--steps", "40", "--repetitions", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = read(&out.join("bench.csv"));
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "qoi_count,baseline_s_per_step,tracked_s_per_step,ratio");
    assert_eq!(lines.len(), 2);
    let ratio: f64 = lines[1].rsplit(',').next().unwrap().parse().unwrap();
    assert!(ratio >= 1.0);
}
