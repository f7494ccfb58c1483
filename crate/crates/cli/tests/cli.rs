use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use converse_core::generator::{export_fixture, import_fixture};
use converse_core::sim::read_trajectory;

const BIN: &str = env!("CARGO_BIN_EXE_converse-bench");

fn run(args: &[&str]) -> Output {
    Command::new(BIN)
        .args(args)
        .env_remove("CONVERSE_BENCH_OUT")
        .output()
        .expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn fixtures(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "yaml"))
        .collect();
    v.sort();
    v
}

fn generate(dir: &Path, family: &str, n: usize, seed: u64) -> Vec<PathBuf> {
    let out = run(&[
        "generate",
        "--family",
        family,
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    fixtures(dir)
}

#[test]
fn generate_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let fa = generate(a.path(), "arm", 3, 11);
    let fb = generate(b.path(), "arm", 3, 11);
    assert_eq!(fa.len(), 3);
    for (x, y) in fa.iter().zip(&fb) {
        assert_eq!(x.file_name(), y.file_name());
        assert_eq!(fs::read(x).unwrap(), fs::read(y).unwrap());
    }
    assert_eq!(
        fs::read(a.path().join("summary.json")).unwrap(),
        fs::read(b.path().join("summary.json")).unwrap()
    );
}

#[test]
fn out_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let out = Command::new(BIN)
        .args(["generate", "--family", "nvdex", "--n", "1"])
        .env("CONVERSE_BENCH_OUT", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&out), 0);
    assert_eq!(fixtures(dir.path()).len(), 1);
}

#[test]
fn usage_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&["generate", "--family", "pendulum", "--out", d])), 2);
    assert_eq!(code(&run(&["validate", "/definitely/not/here.yaml"])), 2);
    assert_eq!(code(&run(&["eval"])), 2);

    let f = generate(dir.path(), "arm", 1, 3);
    let f = f[0].to_str().unwrap();
    assert_eq!(code(&run(&["rollout", f, "--horizon", "0"])), 2);
    assert_eq!(code(&run(&["eval", f, "--policy", "bogus", "--out", d])), 2);
}

#[test]
fn validate_passes_then_fails_on_perturbed_drift() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate(dir.path(), "arm", 2, 5);
    let args: Vec<&str> = std::iter::once("validate")
        .chain(files.iter().map(|p| p.to_str().unwrap()))
        .collect();
    let out = run(&args);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stdout));

    let mut fixture = import_fixture(&files[0]).unwrap();
    fixture.instance.drift_gain = 1.05;
    let bad = dir.path().join("perturbed.yaml");
    export_fixture(&fixture, &bad).unwrap();
    let out = run(&["validate", bad.to_str().unwrap()]);
    assert_eq!(code(&out), 1);
    assert!(String::from_utf8_lossy(&out.stdout).starts_with("FAIL"));
}

#[test]
fn tampered_fixture_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let f = &generate(dir.path(), "arm", 1, 9)[0];
    let text = fs::read_to_string(f).unwrap().replace("horizon: 200", "horizon: 201");
    fs::write(f, text).unwrap();
    assert_eq!(code(&run(&["validate", f.to_str().unwrap()])), 2);
}

fn report(dir: &Path, fixture: &Path, policy: &str, slug: &str) -> serde_json::Value {
    let out = run(&[
        "eval",
        fixture.to_str().unwrap(),
        "--policy",
        policy,
        "--trials",
        "16",
        "--horizon",
        "60",
        "--resamples",
        "500",
        "--out",
        dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let stem = fixture.file_stem().unwrap().to_str().unwrap();
    let path = dir.join(format!("{stem}.{slug}.report.json"));
    assert!(dir.join(format!("{stem}.{slug}.report.csv")).exists());
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn eval_oracle_and_scaled() {
    let dir = tempfile::tempdir().unwrap();
    let f = &generate(dir.path(), "arm", 1, 21)[0];
    let out = dir.path().join("reports");

    let oracle = report(&out, f, "oracle", "oracle");
    assert!(oracle["regret"]["mean"].as_f64().unwrap().abs() <= 1e-12);

    let scaled = report(&out, f, "scaled:0.5", "scaled_0.5");
    assert!(scaled["regret"]["mean"].as_f64().unwrap() > 0.0);
    assert!(scaled["regret"]["ci_low"].as_f64().unwrap() > 0.0);
}

#[test]
fn eval_report_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let f = &generate(dir.path(), "nvdex", 1, 2)[0];
    let a = report(&dir.path().join("a"), f, "scaled:0.8", "scaled_0.8");
    let b = report(&dir.path().join("b"), f, "scaled:0.8", "scaled_0.8");
    assert_eq!(a, b);
}

#[test]
fn linear_policy_from_file() {
    let dir = tempfile::tempdir().unwrap();
    let f = &generate(dir.path(), "arm", 1, 4)[0];
    let fixture = import_fixture(f).unwrap();
    let n = fixture.instance.value_form.dim();
    let m = fixture.build_instance().unwrap().m();
    let gain: Vec<Vec<f64>> = vec![vec![0.0; n]; m];
    let gain_file = dir.path().join("gain.yaml");
    fs::write(&gain_file, serde_yaml::to_string(&gain).unwrap()).unwrap();
    let policy = format!("linear:{}", gain_file.display());

    // a zero gain is the zero policy
    let lin = report(&dir.path().join("r"), f, &policy, &format!("linear_{m}x{n}"));
    let zero = report(&dir.path().join("r"), f, "zero", "zero");
    assert_eq!(lin["trials"], zero["trials"]);
}

#[test]
fn external_policy_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let f = &generate(dir.path(), "arm", 1, 8)[0];
    let exec = format!("exec:'{BIN}' serve '{}' --policy scaled:0.7", f.display());
    let external = report(&dir.path().join("r"), f, &exec, "exec");
    let builtin = report(&dir.path().join("r"), f, "scaled:0.7", "scaled_0.7");
    assert_eq!(external["trials"], builtin["trials"]);
    assert_eq!(external["regret"], builtin["regret"]);
}

#[test]
fn broken_external_policy_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let f = &generate(dir.path(), "arm", 1, 8)[0];
    let out = run(&[
        "eval",
        f.to_str().unwrap(),
        "--policy",
        "exec:echo nonsense",
        "--trials",
        "2",
        "--horizon",
        "5",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn rollout_dump_resums_and_is_stable() {
    let dir = tempfile::tempdir().unwrap();
    let f = &generate(dir.path(), "nvdex", 1, 13)[0];
    let dump = |name: &str| {
        let path = dir.path().join(name);
        let out = run(&[
            "rollout",
            f.to_str().unwrap(),
            "--policy",
            "scaled:0.9",
            "--horizon",
            "50",
            "--trial",
            "3",
            "--out",
            path.to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
        path
    };
    let a = dump("a.jsonl");
    let b = dump("b.jsonl");
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());

    let t = read_trajectory(std::io::BufReader::new(fs::File::open(&a).unwrap())).unwrap();
    assert_eq!(t.steps.len(), 50);
    assert!((t.resum() - t.last.discounted_return).abs() <= 1e-12 * (1.0 + t.last.discounted_return.abs()));
}

#[test]
fn serve_speaks_the_protocol() {
    use std::io::Write;
    use std::process::Stdio;

    let dir = tempfile::tempdir().unwrap();
    let f = &generate(dir.path(), "arm", 1, 1)[0];
    let n = import_fixture(f).unwrap().instance.value_form.dim();
    let state: Vec<f64> = vec![0.25; n];
    let mut child = Command::new(BIN)
        .args(["serve", f.to_str().unwrap()])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    {
        let mut stdin = child.stdin.take().unwrap();
        writeln!(stdin, r#"{{"v":1,"type":"reset","trial":0}}"#).unwrap();
        writeln!(stdin, "{}", serde_json::json!({"v": 1, "type": "act", "state": state})).unwrap();
    }
    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 1);
    let msg: serde_json::Value = serde_json::from_str(lines[0]).unwrap();
    assert_eq!(msg["type"], "action");
    assert_eq!(msg["v"], 1);
}

#[test]
fn heatmap_and_noise_dump() {
    let dir = tempfile::tempdir().unwrap();
    let files = generate(dir.path(), "nvdex", 2, 17);
    let out_dir = dir.path().join("hm");
    let mut args = vec!["heatmap"];
    args.extend(files.iter().map(|p| p.to_str().unwrap()));
    args.extend([
        "--strengths",
        "0.5,1.0",
        "--trials",
        "4",
        "--horizon",
        "20",
        "--resamples",
        "200",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert_eq!(code(&run(&args)), 0);
    let csv = fs::read_to_string(out_dir.join("heatmap_regret.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().collect();
    assert!(rows[0].starts_with("p,n="));
    assert_eq!(rows.len(), 3);

    let out = run(&[
        "noise-dump",
        files[0].to_str().unwrap(),
        "--trials",
        "2",
        "--horizon",
        "3",
    ]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
}
