//! End-to-end use of the public API: generate, store, reload, solve, score.

use coupled_fuse::experiments::{
    build_hsr_problem, gen_synthetic_coupled, metric_fms, metric_hsr, metric_relerr, perturb_factors, random_init,
    rng_stream, DegradationSpec, HsrSettings, SynthSpec,
};
use coupled_fuse::io::{read_factors, read_tnsr, write_factors, write_tnsr};
use coupled_fuse::solver::Algorithm;
use coupled_fuse::{
    kruskal_reconstruct, run, CoupledProblem, Coupling, DenseTensor, SolverConfig, StopReason,
};

fn small_spec(seed: u64) -> SynthSpec {
    SynthSpec {
        dims_y: vec![8, 9, 10],
        dims_y_prime: vec![10, 7, 6],
        rank: 3,
        seed,
        ..SynthSpec::default()
    }
}

#[test]
fn reloaded_problem_solves_identically() {
    let dir = tempfile::tempdir().unwrap();
    let (p, truth) = gen_synthetic_coupled(&small_spec(4), 0.01).unwrap();
    write_tnsr(dir.path().join("y.tnsr"), &p.y).unwrap();
    write_tnsr(dir.path().join("yp.tnsr"), &p.y_prime).unwrap();
    write_factors(dir.path(), "A", &truth.a).unwrap();

    let q = CoupledProblem::new(
        read_tnsr(dir.path().join("y.tnsr")).unwrap(),
        read_tnsr(dir.path().join("yp.tnsr")).unwrap(),
        3,
        3,
        Coupling::LaplacianL1 { mu: 0.01, pair: (2, 0) },
        1.0,
    )
    .unwrap();
    assert_eq!(read_factors(dir.path(), "A", 3).unwrap(), truth.a);

    let cfg = SolverConfig {
        max_iters: 25,
        ..SolverConfig::default()
    };
    let init = random_init(&[8, 9, 10], &[10, 7, 6], 3, 3, 4).unwrap();
    let x = run(&p, init.clone(), &cfg).unwrap();
    let y = run(&q, init, &cfg).unwrap();
    assert_eq!(x.trace.to_csv(), y.trace.to_csv());
    assert_eq!(x.state.a, y.state.a);
}

#[test]
fn every_algorithm_improves_a_random_start() {
    let (p, truth) = gen_synthetic_coupled(&small_spec(5), 0.01).unwrap();
    let init = random_init(&[8, 9, 10], &[10, 7, 6], 3, 3, 5).unwrap();
    let j0 = p.objective(&init.0, &init.1).unwrap();
    let fms0 = metric_fms(&init.0, &init.1, &truth.a, &truth.b).unwrap();
    for alg in [Algorithm::Easap, Algorithm::Asap, Algorithm::AccelAsap] {
        let cfg = SolverConfig {
            algorithm: alg,
            max_iters: 150,
            ..SolverConfig::default()
        };
        let out = run(&p, init.clone(), &cfg).unwrap();
        assert_eq!(out.stop, StopReason::MaxIters);
        let j = out.state.objective;
        assert!(j < 0.5 * j0, "{alg}: {j} vs {j0}");
        let fms = metric_fms(&out.state.a, &out.state.b, &truth.a, &truth.b).unwrap();
        assert!(fms > fms0, "{alg}: fms {fms} vs {fms0}");
    }
}

#[test]
fn noiseless_start_near_truth_recovers_it() {
    let spec = SynthSpec {
        snr_db: f64::INFINITY,
        laplace_scale: 0.0,
        ..small_spec(6)
    };
    let (p, truth) = gen_synthetic_coupled(&spec, 1e-3).unwrap();
    let mut rng = rng_stream(6, 11);
    let a = perturb_factors(&truth.a, 0.01, &mut rng).unwrap();
    let b = perturb_factors(&truth.b, 0.01, &mut rng).unwrap();
    let cfg = SolverConfig {
        max_iters: 300,
        epsilon: 0.0,
        ..SolverConfig::default()
    };
    let out = run(&p, (a, b), &cfg).unwrap();
    assert!(metric_relerr(&p, &out.state.a, &out.state.b).unwrap() < 1e-6);
    assert!(metric_fms(&out.state.a, &out.state.b, &truth.a, &truth.b).unwrap() > 0.999);
}

#[test]
fn image_fusion_beats_the_start() {
    // Low-rank image: exactly representable by the fused model.
    let (_, t) = gen_synthetic_coupled(
        &SynthSpec {
            dims_y: vec![16, 16, 12],
            dims_y_prime: vec![12, 3, 3],
            rank: 3,
            snr_db: f64::INFINITY,
            seed: 9,
            ..SynthSpec::default()
        },
        0.0,
    )
    .unwrap();
    let sri: DenseTensor = kruskal_reconstruct(&t.a);
    let spec = DegradationSpec {
        blur_kernel_size: 5,
        blur_sigma: 1.0,
        downsample_stride: 2,
        msi_bands: 4,
        spectral_response: None,
    };
    let settings = HsrSettings {
        rank: 3,
        ..HsrSettings::default()
    };
    let (p, _) = build_hsr_problem(&sri, &spec, &settings).unwrap();
    let init = random_init(p.y.shape(), p.y_prime.shape(), 3, 3, 9).unwrap();
    let start = coupled_fuse::experiments::estimate_sri(&init.0, &init.1).unwrap();
    let cfg = SolverConfig {
        max_iters: 200,
        ..SolverConfig::default()
    };
    let out = run(&p, init, &cfg).unwrap();
    let est = coupled_fuse::experiments::estimate_sri(&out.state.a, &out.state.b).unwrap();
    let before = metric_hsr(&start, &sri).unwrap();
    let after = metric_hsr(&est, &sri).unwrap();
    assert!(after.rmse < 0.5 * before.rmse, "{after:?} vs {before:?}");
    assert!(after.rsnr > before.rsnr);
}
