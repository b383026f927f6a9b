use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::Instant;

fn cmtomo(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cmtomo"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = cmtomo(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn error_class(out: &Output) -> String {
    let line = String::from_utf8_lossy(&out.stderr);
    let v: serde_json::Value = serde_json::from_str(line.trim()).expect("JSON error line");
    v["error"].as_str().unwrap().to_string()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn record_values(path: &Path) -> Vec<f64> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect()
}

#[test]
fn gen_waveforms_counts_steps_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    ok(&[
        "gen-waveforms",
        "--T-ms",
        "3",
        "--seed",
        "7",
        "--out",
        s(&a),
    ]);
    ok(&[
        "gen-waveforms",
        "--T-ms",
        "3",
        "--seed",
        "7",
        "--out",
        s(&b),
    ]);
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let v: serde_json::Value = serde_json::from_slice(&fs::read(&a).unwrap()).unwrap();
    assert_eq!(v["phi_x"].as_array().unwrap().len(), 200);
    assert_eq!(v["phi_y"].as_array().unwrap().len(), 200);
    assert_eq!(v["phi_uw"].as_array().unwrap().len(), 300);
    assert_eq!(v["T_us"].as_f64(), Some(3000.0));

    let zero = cmtomo(&[
        "gen-waveforms",
        "--T-ms",
        "0",
        "--seed",
        "7",
        "--out",
        s(&a),
    ]);
    assert_eq!(zero.status.code(), Some(2));
    assert_eq!(error_class(&zero), "usage");
}

#[test]
fn simulate_reconstruct_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |n: &str| dir.path().join(n);
    ok(&[
        "gen-waveforms",
        "--T-ms",
        "3",
        "--seed",
        "7",
        "--out",
        s(&p("w.json")),
    ]);

    let sim = |state: &str, out: &str, extra: &[&str]| {
        let mut args = vec![
            "simulate",
            "--waveforms",
            s(&p("w.json")).to_owned().leak(),
            "--state",
            state,
            "--out",
            s(&p(out)).to_owned().leak(),
        ];
        args.extend_from_slice(extra);
        ok(&args);
    };

    sim("mixed", "mixed.csv", &["--sigma", "0"]);
    assert!(record_values(&p("mixed.csv"))
        .iter()
        .all(|m| m.abs() < 1e-12));

    sim(
        "basis:3,3",
        "stretched.csv",
        &["--sigma", "0", "--K", "1.5"],
    );
    assert!((record_values(&p("stretched.csv"))[0] - 4.5).abs() < 1e-12);

    sim("haar:5", "noisy_a.csv", &["--noise-seed", "3"]);
    sim("haar:5", "noisy_b.csv", &["--noise-seed", "3"]);
    assert_eq!(
        fs::read(p("noisy_a.csv")).unwrap(),
        fs::read(p("noisy_b.csv")).unwrap()
    );
    assert!(p("noisy_a.csv.meta.json").exists());

    let truth = s(&p("truth.json")).to_owned();
    sim(
        "haar:21",
        "clean.csv",
        &["--sigma", "0", "--state-out", truth.clone().leak()],
    );
    let out = ok(&[
        "reconstruct",
        "--record",
        s(&p("clean.csv")),
        "--waveforms",
        s(&p("w.json")),
        "--estimator",
        "ls",
        "--truth",
        &truth,
        "--out",
        s(&p("est.json")),
    ]);
    let f: f64 = out
        .lines()
        .find_map(|l| l.strip_prefix("fidelity "))
        .expect("fidelity printed")
        .parse()
        .unwrap();
    assert!(f >= 0.999, "{out}");
    let est: serde_json::Value = serde_json::from_slice(&fs::read(p("est.json")).unwrap()).unwrap();
    assert_eq!(est["diagnostics"]["estimator"], "ls");
    assert_eq!(est["state"]["dim"], 16);

    let cs_no_eps = cmtomo(&[
        "reconstruct",
        "--record",
        s(&p("clean.csv")),
        "--waveforms",
        s(&p("w.json")),
        "--estimator",
        "cs",
        "--out",
        s(&p("cs.json")),
    ]);
    assert_eq!(cs_no_eps.status.code(), Some(2));
    assert_eq!(error_class(&cs_no_eps), "usage");

    let zero = cmtomo(&[
        "reconstruct",
        "--record",
        s(&p("clean.csv")),
        "--waveforms",
        s(&p("w.json")),
        "--estimator",
        "cs",
        "--epsilon",
        "1e12",
        "--out",
        s(&p("cs.json")),
    ]);
    assert_eq!(zero.status.code(), Some(1));
    assert_eq!(error_class(&zero), "zero-state");

    let missing = cmtomo(&[
        "reconstruct",
        "--record",
        s(&p("absent.csv")),
        "--waveforms",
        s(&p("w.json")),
        "--estimator",
        "ls",
        "--out",
        s(&p("x.json")),
    ]);
    assert_eq!(missing.status.code(), Some(1));
    assert_eq!(error_class(&missing), "io");
}

const SMOKE: &[&str] = &[
    "--n-states",
    "3",
    "--T-total-ms",
    "0.3",
    "--grid-ms",
    "0.1,0.2,0.3",
    "--calibration-grid-ms",
    "0.3",
];

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn smoke_suite_is_fast_and_thread_independent() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one");
    let many = dir.path().join("many");

    let start = Instant::now();
    let mut args = vec!["--threads", "1", "suite", "--out", s(&one)];
    args.extend_from_slice(SMOKE);
    ok(&args);
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "{elapsed:?}");

    let mut args = vec!["suite", "--out", s(&many)];
    args.extend_from_slice(SMOKE);
    ok(&args);

    let a = csv_files(&one);
    assert_eq!(
        a.iter().map(|f| f.0.as_str()).collect::<Vec<_>>(),
        ["curves.csv", "fits.csv", "per_state.csv"]
    );
    assert_eq!(a, csv_files(&many));

    let curves = fs::read_to_string(one.join("curves.csv")).unwrap();
    assert!(curves.starts_with("T_ms,F_CS,sd_CS,F_LS,sd_LS,n_states\n"));
    assert_eq!(curves.lines().count(), 4);
    let manifest: serde_json::Value =
        serde_json::from_slice(&fs::read(one.join("manifest.json")).unwrap()).unwrap();
    let digest = manifest["config_digest"].as_str().unwrap();
    for f in ["rule.json", "waveforms.json"] {
        let v: serde_json::Value = serde_json::from_slice(&fs::read(one.join(f)).unwrap()).unwrap();
        assert_eq!(v["config_digest"].as_str(), Some(digest));
    }
    assert_eq!(manifest["files"].as_object().unwrap().len(), 5);

    let fits = dir.path().join("refit.csv");
    ok(&[
        "fit",
        "--curves",
        s(&one.join("curves.csv")),
        "--out",
        s(&fits),
    ]);
    assert_eq!(
        fs::read(&fits).unwrap(),
        fs::read(one.join("fits.csv")).unwrap()
    );
}

#[test]
fn config_file_is_read_and_flags_override_it() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "n_states = 1\n").unwrap();
    let out = cmtomo(&[
        "--config",
        s(&cfg),
        "suite",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert_eq!(error_class(&out), "invalid-argument");

    fs::write(&cfg, "n_states = [\n").unwrap();
    let out = cmtomo(&[
        "--config",
        s(&cfg),
        "suite",
        "--out",
        s(&dir.path().join("o")),
    ]);
    assert_eq!(error_class(&out), "format");

    fs::write(&cfg, "n_states = 1\nls_only = true\n").unwrap();
    let mut args = vec!["--config", s(&cfg), "suite", "--out"];
    let o = dir.path().join("o");
    args.push(s(&o));
    args.extend_from_slice(SMOKE);
    ok(&args);
    assert!(!o.join("rule.json").exists());
}
