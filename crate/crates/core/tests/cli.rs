use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_softmax-warp")).args(args).output().unwrap()
}

fn run_ok(args: &[&str]) -> Output {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn small_train(warp1: &str, warp2: &str, steps: usize) -> String {
    format!(
        r#"
seed = 3

[data]
source = "blobs"
classes = 4
per_class = 30
dim = 2
center_scale = 3.0
noise_std = 0.4
test_per_class = 20

[embedder]
widths = [2, 8, 2]
activation = "tanh"

[train]
batch_size = 8
samples_per_class = 2
lr_model = 0.01
lr_proxies = 0.01
max_avg_dtp = 10.0

[train.phase1]
steps = {steps}
loss = {{ warp = "{warp1}", temperature = 1.0 }}

[train.phase2]
steps = {steps}
loss = {{ warp = "{warp2}", temperature = 1.0 }}

[eval]
ks = [1, 2]
"#
    )
}

fn write(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

const LANDSCAPE: &str = r#"
[proxies]
p_c = [0.0, 0.0]
p_cprime = [4.0, 0.0]

[loss]
warp = "pwl(3.0, 0.65, 1.5) - t"
temperature = 1.0

[grid]
x_range = [-8.0, 8.0]
y_range = [-8.0, 8.0]
resolution = 65
"#;

#[test]
fn landscape_writes_grid_and_extrema() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "l.toml", LANDSCAPE);
    let out = dir.path().join("out");
    run_ok(&["landscape", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let csv = fs::read_to_string(out.join("landscape.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 65 * 65);
    let ext = json(&out.join("extrema.json"));
    assert_eq!(ext["extrema_on_line"], Value::Bool(true));
    let min = &ext["minima"][0];
    assert!((min["x"].as_f64().unwrap() + 3.0).abs() < 0.26, "{min}");
    assert!(min["y"].as_f64().unwrap().abs() < 1e-12);
}

#[test]
fn missing_warp_is_a_config_error_with_no_output() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "l.toml", &LANDSCAPE.replace("warp = \"pwl(3.0, 0.65, 1.5) - t\"\n", ""));
    let out = dir.path().join("out");
    let o = run(&["landscape", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("warp"));
    assert!(!out.exists());
}

#[test]
fn verify_passes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "v.toml", "[suite]\nresolution = 128\nlemma_pairs = 4\nprop_random = 10\n");
    let out = dir.path().join("out");
    let o = run_ok(&["verify", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(!stdout.contains("FAIL"), "{stdout}");
    assert_eq!(json(&out.join("verify.json"))["all_pass"], Value::Bool(true));
}

#[test]
fn train_is_reproducible_and_eval_matches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", &small_train("pwl(2, 0.2, 2) - t", "pwl(2, 0.2, 2) - t", 40));
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    run_ok(&["train", "--config", &cfg, "--out", a.to_str().unwrap()]);
    run_ok(&["train", "--config", &cfg, "--out", b.to_str().unwrap()]);
    for f in ["trace_steps.csv", "trace_epochs.csv", "checkpoint.json", "metrics.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let m = json(&a.join("metrics.json"));
    assert_eq!(m["diverged"], Value::Bool(false));
    assert_eq!(m["steps_completed"], 80);

    let ecfg = "seed = 3\ncheckpoint = \"a/checkpoint.json\"\n[data]\nsource = \"blobs\"\nclasses = 4\nper_class = 30\ndim = 2\ncenter_scale = 3.0\nnoise_std = 0.4\ntest_per_class = 20\n[eval]\nks = [1, 2]\n".to_string();
    let ecfg = write(dir.path(), "e.toml", &ecfg);
    let e = dir.path().join("e");
    run_ok(&["eval", "--config", &ecfg, "--out", e.to_str().unwrap()]);
    let em = json(&e.join("metrics.json"));
    for k in ["r_at_1", "r_at_2", "nmi", "map_at_r", "avg_dtp"] {
        assert_eq!(em[k], m[k], "{k}");
    }

    let c = dir.path().join("c");
    run_ok(&["train", "--config", &cfg, "--out", c.to_str().unwrap(), "--seed", "4"]);
    assert_ne!(fs::read(a.join("checkpoint.json")).unwrap(), fs::read(c.join("checkpoint.json")).unwrap());
}

#[test]
fn sweep_rows_follow_input_order() {
    let dir = tempfile::tempdir().unwrap();
    let body = small_train("pwl(2, 0.2, 2) - t", "pwl(2, 0.2, 2) - t", 20)
        + "\n[sweep]\nparameter = \"alpha\"\nvalues = [3.0, 0.0, 3.0]\n";
    let cfg = write(dir.path(), "s.toml", &body);
    let out = dir.path().join("out");
    run_ok(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let mut rdr = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(&rdr.headers().unwrap()[0], "alpha");
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    let params: Vec<&str> = rows.iter().map(|r| &r[0]).collect();
    assert_eq!(params, ["3", "0", "3"]);
    assert_eq!(rows[0], rows[2]);
}

#[test]
fn unknown_sweep_parameter_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let body = small_train("t - t", "t - t", 5) + "\n[sweep]\nparameter = \"beta\"\nvalues = [1.0]\n";
    let cfg = write(dir.path(), "s.toml", &body);
    let out = dir.path().join("out");
    let o = run(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!out.exists());
}

#[test]
fn half_warp_is_flagged_diverged() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "t.toml", &small_train("0.5*t - t", "0.5*t - t", 300));
    let out = dir.path().join("out");
    run_ok(&["train", "--config", &cfg, "--out", out.to_str().unwrap()]);
    let m = json(&out.join("metrics.json"));
    assert_eq!(m["diverged"], Value::Bool(true), "{m}");
    assert!(m["steps_completed"].as_u64().unwrap() < 600);
}
