use std::f64::consts::{FRAC_PI_2, PI};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::{json, Value};
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_fluorsqueeze"));
    c.env_remove("FLUORSQUEEZE_THREADS");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn config(overrides: Value) -> Value {
    let mut base = json!({
        "gamma": 1.0, "k_d": 0.0, "n_bar": 0.0, "omega_rabi": 0.0, "delta_omega": 0.0,
        "alpha0_sq": 0.1, "alpha1_sq": 0.45, "alpha2_sq": 0.45,
        "theta1": 0.0, "theta2": 0.0, "c": 0.0, "phi": 0.0
    });
    for (k, v) in overrides.as_object().unwrap() {
        base[k] = v.clone();
    }
    base
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, serde_json::to_string_pretty(v).unwrap()).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn as_config() -> Value {
    config(json!({
        "omega_rabi": 4.0, "delta_omega": 3.0, "alpha0_sq": 0.0, "alpha1_sq": 1.0, "alpha2_sq": 0.0,
        "theta1": "pi*0.5", "c": 1.3372, "phi": "pi*-0.025"
    }))
}

fn line1() -> Value {
    config(json!({"omega_rabi": 0.2976, "theta1": "pi*-0.5", "theta2": "pi*-0.5"}))
}

fn read_csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_string();
    let rows = lines
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    (header, rows)
}

#[test]
fn steady_state_trivial() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "cfg.json", &config(json!({})));
    let out = run(&["steady-state", s(&cfg)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["x_eq"], json!({"x": 0.0, "y": 0.0, "z": -1.0}));
    assert_eq!(v["atomic_squeezing"], 0.0);
    assert_eq!(v["exceptional"], false);
}

#[test]
fn steady_state_atomic_squeezing_optimum() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "cfg.json", &as_config());
    let result = dir.path().join("ss.json");
    let out = run(&["steady-state", s(&cfg), "--out", s(&result)]);
    assert!(out.status.success());
    let v: Value = serde_json::from_slice(&fs::read(&result).unwrap()).unwrap();
    assert!((v["atomic_squeezing"].as_f64().unwrap() + 0.2414).abs() < 5e-4);
    for key in ["sigma2", "pi1", "pi2"] {
        assert!(v[key].is_f64());
    }
    assert!(dir.path().join("ss.json.manifest.json").exists());
}

#[test]
fn exceptional_config_exits_3_and_lists_conditions() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(
        dir.path(),
        "cfg.json",
        &config(
            json!({"alpha0_sq": 0.0, "alpha1_sq": 1.0, "alpha2_sq": 0.0, "theta1": "pi*0.5", "c": 0.5}),
        ),
    );
    let out = run(&["steady-state", s(&cfg)]);
    assert_eq!(out.status.code(), Some(3));
    let err = String::from_utf8(out.stderr).unwrap();
    assert_eq!(
        err.lines()
            .filter(|l| l.trim_start().starts_with("[x]"))
            .count(),
        6
    );
}

#[test]
fn invalid_config_exits_2() {
    let dir = TempDir::new().unwrap();
    for bad in [
        config(json!({"alpha0_sq": 0.5})),
        config(json!({"gamma": -1.0})),
        config(json!({"theta1": "tau"})),
    ] {
        let cfg = write_json(dir.path(), "cfg.json", &bad);
        assert_eq!(run(&["steady-state", s(&cfg)]).status.code(), Some(2));
    }
    let mut extra = config(json!({}));
    extra["unknown"] = json!(1);
    let cfg = write_json(dir.path(), "cfg.json", &extra);
    assert_eq!(run(&["steady-state", s(&cfg)]).status.code(), Some(2));
}

fn spectrum_rows(cfg: &Value, channel: &str) -> Vec<Vec<f64>> {
    let dir = TempDir::new().unwrap();
    let path = write_json(dir.path(), "cfg.json", cfg);
    let csv = dir.path().join("s.csv");
    let out = run(&[
        "spectrum",
        s(&path),
        "--channel",
        channel,
        "--mu-min",
        "-5",
        "--mu-max",
        "5",
        "--points",
        "1001",
        "--out",
        s(&csv),
    ]);
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let (header, rows) = read_csv(&csv);
    assert_eq!(header, "mu,S");
    assert_eq!(rows.len(), 1001);
    rows
}

fn argmin(rows: &[Vec<f64>]) -> f64 {
    rows.iter().min_by(|a, b| a[1].total_cmp(&b[1])).unwrap()[0]
}

#[test]
fn spectrum_line1_minimum_at_zero() {
    let rows = spectrum_rows(&line1(), "1");
    assert!(argmin(&rows).abs() < 1e-9);
    // single minimum: decreasing towards mu = 0 from both sides
    for w in rows.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b[0] <= 0.0 {
            assert!(b[1] <= a[1] + 1e-15);
        } else {
            assert!(b[1] >= a[1] - 1e-15);
        }
    }
}

#[test]
fn spectrum_line4_minima_at_two_and_a_half() {
    let cfg =
        config(json!({"delta_omega": 2.5499, "c": 0.3772, "theta1": -1.3354, "phi": -0.0646}));
    let rows = spectrum_rows(&cfg, "1");
    let (neg, pos): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| r[0] < 0.0);
    assert!((argmin(&neg) + 2.5).abs() <= 0.05);
    assert!((argmin(&pos) - 2.5).abs() <= 0.05);
}

#[test]
fn spectrum_of_dark_channel_is_flat() {
    let cfg = config(json!({"alpha0_sq": 0.55, "alpha2_sq": 0.0, "omega_rabi": 1.0}));
    for r in spectrum_rows(&cfg, "2") {
        assert_eq!(r[1], 1.0);
    }
}

fn simulate(cfg: &Value, out_dir: &Path, extra: &[&str]) -> Output {
    let dir = out_dir.parent().unwrap();
    let path = write_json(dir, "sim_cfg.json", cfg);
    let mut args = vec!["simulate", s(&path), "--out-dir", s(out_dir)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn simulate_trivial_spectrum_is_shot_noise() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("sim");
    let out = simulate(
        &config(json!({})),
        &out_dir,
        &[
            "--trajectories",
            "100",
            "--t-final",
            "20",
            "--transient-cut",
            "2",
            "--estimate-spectrum",
            "--points",
            "5",
        ],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    for k in [1, 2] {
        let (header, rows) = read_csv(&out_dir.join(format!("spectrum_ch{k}.csv")));
        assert_eq!(header, "mu,S,stderr");
        for r in rows {
            assert!((r[1] - 1.0).abs() <= 3.0 * r[2], "{r:?}");
        }
    }
    let summary: Value =
        serde_json::from_slice(&fs::read(out_dir.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["plan"]["n_trajectories"], 100);
}

#[test]
fn simulate_line1_matches_analytic_curve() {
    let dir = TempDir::new().unwrap();
    let out_dir = dir.path().join("sim");
    let out = simulate(
        &line1(),
        &out_dir,
        &[
            "--trajectories",
            "100",
            "--t-final",
            "100",
            "--transient-cut",
            "10",
            "--estimate-spectrum",
            "--mu-min",
            "0",
            "--mu-max",
            "4",
            "--points",
            "5",
        ],
    );
    assert!(out.status.success());
    let (_, estimate) = read_csv(&out_dir.join("spectrum_ch1.csv"));

    let cfg = write_json(dir.path(), "line1.json", &line1());
    let csv = dir.path().join("analytic.csv");
    let out = run(&[
        "spectrum",
        s(&cfg),
        "--mu-min",
        "0",
        "--mu-max",
        "4",
        "--points",
        "5",
        "--out",
        s(&csv),
    ]);
    assert!(out.status.success());
    let (_, analytic) = read_csv(&csv);
    for (e, a) in estimate.iter().zip(&analytic) {
        assert_eq!(e[0], a[0]);
        assert!(
            (e[1] - a[1]).abs() <= 3.0 * e[2],
            "mu = {}: {} vs {} (se {})",
            e[0],
            e[1],
            a[1],
            e[2]
        );
    }
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !e.file_name().to_string_lossy().ends_with(".manifest.json"))
        .map(|e| {
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    v.sort();
    v
}

#[test]
fn fixed_seed_runs_are_identical_across_thread_counts() {
    let dir = TempDir::new().unwrap();
    let cfg = config(json!({"omega_rabi": 1.0, "c": 0.2, "phi": 0.5}));
    let args = [
        "--trajectories",
        "6",
        "--t-final",
        "2",
        "--transient-cut",
        "0.5",
        "--estimate-spectrum",
        "--points",
        "3",
        "--seed",
        "9",
        "--checkpoints",
        "0.5,1",
        "--dump-trajectories",
        "2",
    ];
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(simulate(&cfg, &a, &args).status.success());
    let path = dir.path().join("sim_cfg.json");
    let out = bin()
        .env("FLUORSQUEEZE_THREADS", "3")
        .args(["simulate", s(&path), "--out-dir", s(&b)])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success());
    let files = dir_contents(&a);
    assert_eq!(files.len(), 5);
    assert_eq!(files, dir_contents(&b));
    let (header, rows) = read_csv(&a.join("trajectory_1.csv"));
    assert_eq!(header, "t,x,y,z,dY1,dY2");
    assert_eq!(rows.len(), 2000);
}

#[test]
fn replay_reproduces_outputs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(dir.path(), "cfg.json", &as_config());
    let csv = dir.path().join("out/sp.csv");
    let json_out = dir.path().join("out/sp.json");
    assert!(run(&[
        "spectrum",
        s(&cfg),
        "--points",
        "11",
        "--out",
        s(&csv),
        "--json",
        s(&json_out)
    ])
    .status
    .success());
    // the manifest carries the resolved config, so the source file is no longer needed
    fs::remove_file(&cfg).unwrap();
    let manifest = dir.path().join("out/sp.csv.manifest.json");
    let m: Value = serde_json::from_slice(&fs::read(&manifest).unwrap()).unwrap();
    assert_eq!(m["subcommand"], "spectrum");
    assert!(m["version"].is_string() && m["timestamp"].is_u64());
    let replay = dir.path().join("replay");
    assert!(run(&["replay", s(&manifest), "--out-dir", s(&replay)])
        .status
        .success());
    assert_eq!(
        fs::read(&csv).unwrap(),
        fs::read(replay.join("sp.csv")).unwrap()
    );
    assert_eq!(
        fs::read(&json_out).unwrap(),
        fs::read(replay.join("sp.json")).unwrap()
    );

    let sim = dir.path().join("sim");
    let cfg = config(json!({"omega_rabi": 1.0}));
    assert!(simulate(
        &cfg,
        &sim,
        &[
            "--trajectories",
            "3",
            "--t-final",
            "1",
            "--transient-cut",
            "0.2",
            "--estimate-spectrum",
            "--points",
            "3"
        ]
    )
    .status
    .success());
    let again = dir.path().join("again");
    assert!(run(&[
        "replay",
        s(&sim.join("summary.json.manifest.json")),
        "--out-dir",
        s(&again)
    ])
    .status
    .success());
    assert_eq!(dir_contents(&sim), dir_contents(&again));
}

#[test]
fn optimize_line3_not_worse_than_published_point() {
    let dir = TempDir::new().unwrap();
    let spec = json!({
        "objective": {"kind": "spectrum_at_mu", "channel": 1, "mu": 0.0},
        "free": [{"parameter": "c", "lower": 0.0, "upper": 1.0},
                 {"parameter": "phi_rel", "lower": -PI, "upper": PI}],
        "template": config(json!({})),
        "multistart": 8,
        "start_points": [[0.2936, FRAC_PI_2]]
    });
    let path = write_json(dir.path(), "spec.json", &spec);
    let out_path = dir.path().join("opt.json");
    let out = run(&["optimize", s(&path), "--out", s(&out_path)]);
    assert!(out.status.success());
    let r: Value = serde_json::from_slice(&fs::read(&out_path).unwrap()).unwrap();
    let seeded = r["starts"][0]["initial_value"].as_f64().unwrap();
    assert!(r["best_value"].as_f64().unwrap() <= seeded);
    assert!(!r["trace"].as_array().unwrap().is_empty());
}

#[test]
fn optimize_atomic_squeezing() {
    let dir = TempDir::new().unwrap();
    let spec = json!({
        "objective": {"kind": "atomic_squeezing_eq"},
        "free": [{"parameter": "omega_rabi", "lower": 0.0, "upper": 6.0},
                 {"parameter": "delta_omega", "lower": -5.0, "upper": 5.0},
                 {"parameter": "theta1", "lower": -PI, "upper": PI},
                 {"parameter": "c", "lower": 0.0, "upper": 3.0},
                 {"parameter": "phi", "lower": -PI, "upper": PI}],
        "template": config(json!({"alpha0_sq": 0.0, "alpha1_sq": 1.0, "alpha2_sq": 0.0})),
        "multistart": 16
    });
    let path = write_json(dir.path(), "spec.json", &spec);
    let out_path = dir.path().join("opt.json");
    assert!(run(&["optimize", s(&path), "--out", s(&out_path)])
        .status
        .success());
    let r: Value = serde_json::from_slice(&fs::read(&out_path).unwrap()).unwrap();
    assert!(r["best_value"].as_f64().unwrap() <= -0.24);
}

#[test]
fn optimize_infeasible_exits_4() {
    let dir = TempDir::new().unwrap();
    let spec = json!({
        "objective": {"kind": "sigma2"},
        "free": [{"parameter": "c", "lower": 0.5, "upper": 1.0}],
        "template": config(json!({"alpha0_sq": 0.55, "alpha1_sq": 0.0}))
    });
    let path = write_json(dir.path(), "spec.json", &spec);
    let out = run(&["optimize", s(&path), "--out", s(&dir.path().join("o.json"))]);
    assert_eq!(out.status.code(), Some(4));
}
