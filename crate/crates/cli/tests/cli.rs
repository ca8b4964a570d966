use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use coupled_fuse::experiments::{gen_synthetic_coupled, SynthSpec};
use coupled_fuse::io::{read_factors, read_tnsr, write_factors, write_tnsr};
use coupled_fuse::{kruskal_reconstruct, DenseTensor, KruskalFactors};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_coupled-fuse"));
    c.env_remove("COUPLED_FUSE_LOG");
    c
}

fn exec(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn coupled-fuse")
}

fn ok(args: &[&str]) {
    let out = exec(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_config(dir: &Path, json: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, json).unwrap();
    path
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL: &str = r#"{
    "problem": {"synthetic": {"dims_y": [6, 7, 8], "dims_y_prime": [8, 5, 4], "rank": 2}},
    "solver": {"max_iters": 15}
}"#;

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn synth_default_shapes() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("data");
    ok(&["synth", "--out", s(&out)]);
    assert_eq!(read_tnsr(out.join("Y.tnsr")).unwrap().shape(), &[30, 40, 50]);
    assert_eq!(read_tnsr(out.join("Yprime.tnsr")).unwrap().shape(), &[50, 60, 70]);
    let a = read_factors(out.join("truth"), "A", 3).unwrap();
    let b = read_factors(out.join("truth"), "B", 3).unwrap();
    assert_eq!(a.rank(), 5);
    assert_eq!(b.shape(), vec![50, 60, 70]);
    assert_eq!(read_json(&out.join("manifest.json"))["command"], "synth");
}

#[test]
fn noiseless_synth_matches_truth_reconstruction() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"problem": {"synthetic": {"dims_y": [4, 5, 6], "dims_y_prime": [6, 3, 2], "rank": 2, "snr_db": "infinity"}}}"#,
    );
    let out = tmp.path().join("data");
    ok(&["synth", "--config", s(&cfg), "--seed", "3", "--out", s(&out)]);
    let a = read_factors(out.join("truth"), "A", 3).unwrap();
    let y = read_tnsr(out.join("Y.tnsr")).unwrap();
    assert_eq!(y, kruskal_reconstruct(&a));

    // The binary agrees with the library for the same seed.
    let spec = SynthSpec {
        dims_y: vec![4, 5, 6],
        dims_y_prime: vec![6, 3, 2],
        rank: 2,
        snr_db: f64::INFINITY,
        seed: 3,
        ..SynthSpec::default()
    };
    let (p, _) = gen_synthetic_coupled(&spec, 0.01).unwrap();
    assert_eq!(read_tnsr(out.join("Yprime.tnsr")).unwrap(), p.y_prime);
}

#[test]
fn zero_iterations_report_initial_objective() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"problem": {"synthetic": {"dims_y": [4, 5, 6], "dims_y_prime": [6, 3, 2], "rank": 2}}, "solver": {"max_iters": 0}}"#,
    );
    let out = tmp.path().join("run");
    ok(&["run", "--config", s(&cfg), "--out", s(&out)]);
    let summary = read_json(&out.join("summary.json"));
    assert_eq!(summary["iterations"], 0);
    assert_eq!(summary["final_objective"], summary["initial_objective"]);
    let trace = std::fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 2);
    assert_eq!(trace.lines().next().unwrap(), "k,J,step_norm,stat_err,relerr,fms,wall_ms");
}

#[test]
fn run_writes_outputs_and_algorithms_differ() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let easap = tmp.path().join("easap");
    ok(&["run", "--config", s(&cfg), "--out", s(&easap)]);

    let asap_cfg = tmp.path().join("asap.json");
    std::fs::write(
        &asap_cfg,
        SMALL.replace(r#""max_iters": 15"#, r#""max_iters": 15, "algorithm": "asap""#),
    )
    .unwrap();
    let asap = tmp.path().join("asap");
    ok(&["run", "--config", s(&asap_cfg), "--out", s(&asap)]);

    for dir in [&easap, &asap] {
        for f in ["A1", "A2", "A3", "B1", "B2", "B3"] {
            assert!(dir.join("est").join(format!("{f}.tnsr")).is_file());
        }
        let summary = read_json(&dir.join("summary.json"));
        assert_eq!(summary["iterations"], 15);
        assert_eq!(summary["descent_violations"], 0);
        assert!(summary.get("wall_time_ms").is_none());
        let fms = summary["final_fms"].as_f64().unwrap();
        assert!((-1.0..=1.0).contains(&fms));
    }
    assert_eq!(read_json(&easap.join("summary.json"))["algorithm"], "easap");
    assert_eq!(read_json(&asap.join("summary.json"))["algorithm"], "asap");
    let te = std::fs::read_to_string(easap.join("trace.csv")).unwrap();
    let ta = std::fs::read_to_string(asap.join("trace.csv")).unwrap();
    assert_ne!(te, ta);
    // Same data and initialization: at k = 0 only the stationarity column,
    // which depends on the stepsize rule, may differ.
    let row0 = |t: &str| -> Vec<String> {
        let mut f: Vec<String> = t.lines().nth(1).unwrap().split(',').map(String::from).collect();
        f.remove(3);
        f
    };
    assert_eq!(row0(&te), row0(&ta));
}

#[test]
fn metrics_on_truth_and_on_zero_factors() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"problem": {"synthetic": {"dims_y": [4, 5, 6], "dims_y_prime": [6, 3, 2], "rank": 2}}}"#,
    );
    let data = tmp.path().join("data");
    ok(&["synth", "--config", s(&cfg), "--out", s(&data)]);
    let truth = data.join("truth");

    let out = tmp.path().join("m1");
    let res = exec(&["metrics", "--est", s(&truth), "--truth", s(&truth), "--out", s(&out)]);
    assert!(res.status.success());
    let m: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!(m["relerr"].as_f64().unwrap() < 1e-14);
    assert!((m["fms"].as_f64().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(read_json(&out.join("metrics.json")), m);

    let zero = tmp.path().join("zero");
    std::fs::create_dir(&zero).unwrap();
    for (prefix, shape) in [("A", [4, 5, 6]), ("B", [6, 3, 2])] {
        let f = KruskalFactors::zeros(&shape, 2);
        write_factors(&zero, prefix, &f).unwrap();
    }
    let res = exec(&["metrics", "--est", s(&zero), "--truth", s(&truth), "--data", s(&data)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let m: Value = serde_json::from_slice(&res.stdout).unwrap();
    assert!((m["relerr"].as_f64().unwrap() - 1.0).abs() < 1e-14);
}

#[test]
fn usage_and_config_errors_exit_one() {
    let tmp = TempDir::new().unwrap();
    assert_eq!(exec(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(exec(&["run", "--jobs", "many"]).status.code(), Some(1));
    let missing = tmp.path().join("nope.json");
    assert_eq!(exec(&["run", "--config", s(&missing)]).status.code(), Some(1));
    let bad = write_config(tmp.path(), r#"{"solver": {"gamma_a": [0.5]}}"#);
    assert_eq!(exec(&["run", "--config", s(&bad)]).status.code(), Some(1));
    let typo = write_config(tmp.path(), r#"{"solvr": {}}"#);
    assert_eq!(exec(&["run", "--config", s(&typo)]).status.code(), Some(1));
    assert_eq!(exec(&["--help"]).status.code(), Some(0));
}

#[test]
fn overflowing_data_exits_two() {
    let tmp = TempDir::new().unwrap();
    let y = DenseTensor::from_fn(&[3, 3, 3], |_| 1e200).unwrap();
    let z = DenseTensor::from_fn(&[3, 2, 2], |_| 1e200).unwrap();
    write_tnsr(tmp.path().join("y.tnsr"), &y).unwrap();
    write_tnsr(tmp.path().join("z.tnsr"), &z).unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{"problem": {"files": {"y": "y.tnsr", "y_prime": "z.tnsr", "rank": 2}}}"#,
    );
    let res = exec(&["run", "--config", s(&cfg), "--out", s(&tmp.path().join("out"))]);
    assert_eq!(res.status.code(), Some(2), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn hsr_degrade_and_image_run() {
    let tmp = TempDir::new().unwrap();
    let sri = DenseTensor::from_fn(&[12, 12, 8], |i| {
        let (x, y, b) = (i[0] as f64, i[1] as f64, i[2] as f64);
        (1.0 + (0.3 * x).sin()) * (1.0 + 0.1 * y) * (1.0 + 0.05 * b * b)
    })
    .unwrap();
    write_tnsr(tmp.path().join("sri.tnsr"), &sri).unwrap();
    let cfg = write_config(
        tmp.path(),
        r#"{
            "problem": {"hsr": {"sri_file": "sri.tnsr", "rank": 3,
                "degradation": {"blur_kernel_size": 3, "blur_sigma": 1.0, "downsample_stride": 2, "msi_bands": 4}}},
            "model": {"joint_gauss": {}},
            "solver": {"max_iters": 10}
        }"#,
    );
    let deg = tmp.path().join("deg");
    ok(&["hsr-degrade", "--config", s(&cfg), "--out", s(&deg)]);
    assert_eq!(read_tnsr(deg.join("hsi.tnsr")).unwrap().shape(), &[6, 6, 8]);
    assert_eq!(read_tnsr(deg.join("msi.tnsr")).unwrap().shape(), &[12, 12, 4]);
    let p1 = std::fs::read_to_string(deg.join("P1.csv")).unwrap();
    assert_eq!(p1.lines().count(), 6);
    assert_eq!(p1.lines().next().unwrap().split(',').count(), 12);

    let run = tmp.path().join("run");
    ok(&["run", "--config", s(&cfg), "--out", s(&run)]);
    assert_eq!(read_tnsr(run.join("est").join("sri.tnsr")).unwrap().shape(), &[12, 12, 8]);
    let summary = read_json(&run.join("summary.json"));
    let im = &summary["image_metrics"];
    for key in ["rsnr", "ssim", "cc", "rmse", "sam"] {
        assert!(im[key].is_number(), "missing {key}");
    }
}

#[test]
fn seed_sweep_is_independent_of_jobs() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let one = tmp.path().join("one");
    let two = tmp.path().join("two");
    ok(&["run", "--config", s(&cfg), "--seeds", "0..3", "--jobs", "1", "--out", s(&one)]);
    ok(&["run", "--config", s(&cfg), "--seeds", "0,1,2", "--jobs", "2", "--out", s(&two)]);
    let mut traces = Vec::new();
    for seed in 0..3 {
        let a = std::fs::read(one.join(format!("seed-{seed}/trace.csv"))).unwrap();
        let b = std::fs::read(two.join(format!("seed-{seed}/trace.csv"))).unwrap();
        assert_eq!(a, b);
        assert_eq!(read_json(&one.join(format!("seed-{seed}/manifest.json")))["seed"], seed);
        traces.push(a);
    }
    assert_ne!(traces[0], traces[1]);
}
