use super::*;
use crate::experiments::{gen_synthetic_coupled, random_init, SynthSpec};
use crate::model::Coupling;
use crate::tensor::{kruskal_reconstruct, DenseTensor, Matrix};

fn factors(shape: &[usize], r: usize, seed: u64) -> KruskalFactors {
    let mut s = seed.wrapping_mul(0x9E3779B97F4A7C15).wrapping_add(7);
    KruskalFactors::new(
        shape
            .iter()
            .map(|&d| {
                Matrix::from_fn(d, r, |_, _| {
                    s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                    (s >> 11) as f64 / (1u64 << 53) as f64
                })
            })
            .collect(),
    )
    .unwrap()
}

fn small_instance(seed: u64) -> (CoupledProblem, (KruskalFactors, KruskalFactors)) {
    let spec = SynthSpec {
        dims_y: vec![6, 7, 8],
        dims_y_prime: vec![8, 5, 4],
        rank: 3,
        seed,
        ..SynthSpec::default()
    };
    let (p, _) = gen_synthetic_coupled(&spec, 0.01).unwrap();
    let init = random_init(&spec.dims_y, &spec.dims_y_prime, 3, 3, seed).unwrap();
    (p, init)
}

/// Exact fit on both sides with the coupled factors equal.
fn exact_problem(mu: f64) -> (CoupledProblem, KruskalFactors, KruskalFactors) {
    let a = factors(&[3, 4, 5], 2, 1);
    let mut b = factors(&[5, 3, 2], 2, 2);
    b.set_factor(0, a.factor(2).clone()).unwrap();
    let p = CoupledProblem::laplacian(kruskal_reconstruct(&a), kruskal_reconstruct(&b), 2, mu).unwrap();
    (p, a, b)
}

#[test]
fn exact_fit_is_a_fixed_point() {
    for mu in [0.0, 0.5] {
        let (p, a, b) = exact_problem(mu);
        for cfg in [SolverConfig::easap(), SolverConfig::asap(), SolverConfig::accel_asap()] {
            let out = run(&p, (a.clone(), b.clone()), &cfg).unwrap();
            assert_eq!(out.stop, StopReason::Converged, "{}", cfg.algorithm);
            assert_eq!(out.state.k, 1);
            assert!(out.state.a.distance_sq(&a).unwrap() < 1e-24);
            assert!(out.trace.records[0].stationarity.unwrap() < 1e-12);
        }
    }
}

#[test]
fn a3_update_matches_hand_computation() {
    let a = factors(&[2, 2, 2], 1, 3);
    let b = factors(&[2, 2, 2], 1, 4);
    let y = DenseTensor::from_fn(&[2, 2, 2], |ix| (ix[0] + 2 * ix[1] + 3 * ix[2]) as f64 * 0.1).unwrap();
    let yp = DenseTensor::from_fn(&[2, 2, 2], |ix| 1.0 - (ix[0] * ix[1] + ix[2]) as f64 * 0.2).unwrap();
    let mu = 0.05;
    let p = CoupledProblem::laplacian(y.clone(), yp, 1, mu).unwrap();
    let cfg = SolverConfig::easap();
    let s0 = SolverState::new(&p, a.clone(), b.clone()).unwrap();
    let s1 = easap_sweep(&p, &s0, &cfg).unwrap();

    // A1 and A2 are already updated when A3 is visited; B is not.
    let (a1, a2, a3) = (s1.a.factor(0), s1.a.factor(1), a.factor(2));
    let lip = (a1[(0, 0)].powi(2) + a1[(1, 0)].powi(2)) * (a2[(0, 0)].powi(2) + a2[(1, 0)].powi(2));
    let tau = 1.01 * lip;
    for k in 0..2 {
        let mut g = 0.0;
        for i in 0..2 {
            for j in 0..2 {
                let x = a1[(i, 0)] * a2[(j, 0)] * a3[(k, 0)];
                g += (x - y.get(&[i, j, k])) * a1[(i, 0)] * a2[(j, 0)];
            }
        }
        let v = a3[(k, 0)] - g / tau;
        let anchor = b.factor(0)[(k, 0)];
        let thr = mu / tau;
        let want = if v > anchor + thr {
            v - thr
        } else if v < anchor - thr {
            v + thr
        } else {
            anchor
        };
        assert!((s1.a.factor(2)[(k, 0)] - want).abs() < 1e-14);
    }
    let stats = s1.last.unwrap();
    assert!((stats.stepsizes[2] - tau).abs() < 1e-14 * tau);
}

#[test]
fn iteration_term_enters_stepsize() {
    let (p, init) = small_instance(0);
    let mut s = SolverState::new(&p, init.0, init.1).unwrap();
    let cfg = SolverConfig::easap();
    for _ in 0..3 {
        s = easap_sweep(&p, &s, &cfg).unwrap();
    }
    let s4 = easap_sweep(&p, &s, &cfg).unwrap();
    let st = s4.last.unwrap();
    for (t, l) in st.stepsizes.iter().zip(&st.lipschitz) {
        assert!((t - (1.01 * l + 3.0)).abs() <= 1e-12 * t);
    }
}

#[test]
fn infinite_epsilon_stops_after_one_sweep() {
    let (p, init) = small_instance(1);
    let cfg = SolverConfig {
        epsilon: f64::INFINITY,
        ..SolverConfig::easap()
    };
    let out = run(&p, init, &cfg).unwrap();
    assert_eq!(out.stop, StopReason::Converged);
    assert_eq!(out.state.k, 1);
    assert_eq!(out.trace.len(), 2);
}

#[test]
fn zero_iterations_reports_initial_objective() {
    let (p, init) = small_instance(2);
    let j0 = p.objective(&init.0, &init.1).unwrap();
    let cfg = SolverConfig {
        max_iters: 0,
        ..SolverConfig::easap()
    };
    let out = run(&p, init, &cfg).unwrap();
    assert_eq!(out.stop, StopReason::MaxIters);
    assert_eq!(out.state.k, 0);
    assert_eq!(out.trace.len(), 1);
    assert_eq!(out.trace.records[0].objective, j0);
}

#[test]
fn invalid_gamma_rejected() {
    let (p, init) = small_instance(3);
    for g in [vec![1.0], vec![0.5], vec![], vec![f64::NAN]] {
        let cfg = SolverConfig {
            gamma_a: g,
            ..SolverConfig::easap()
        };
        assert!(run(&p, init.clone(), &cfg).is_err());
    }
    let cfg = SolverConfig {
        gamma_b: vec![1.1, 1.2],
        ..SolverConfig::easap()
    };
    assert!(run(&p, init, &cfg).is_err());
}

#[test]
fn per_block_gamma() {
    let (p, init) = small_instance(4);
    let cfg = SolverConfig {
        gamma_a: vec![1.1, 1.2, 1.3],
        gamma_b: vec![2.0, 3.0, 4.0],
        add_iteration_to_step: false,
        ..SolverConfig::easap()
    };
    let s = SolverState::new(&p, init.0, init.1).unwrap();
    let st = easap_sweep(&p, &s, &cfg).unwrap().last.unwrap();
    let ratios: Vec<f64> = st.stepsizes.iter().zip(&st.lipschitz).map(|(t, l)| t / l).collect();
    for (r, g) in ratios.iter().zip([1.1, 1.2, 1.3, 2.0, 3.0, 4.0]) {
        assert!((r - g).abs() < 1e-12);
    }
}

#[test]
fn extrapolation_sequence() {
    let t1 = next_extrapolation_t(1.0);
    assert!((t1 - 1.618_033_988_749_895).abs() < 1e-12);
    let t2 = next_extrapolation_t(t1);
    assert!((t2 - 2.193_527_085_331_054).abs() < 1e-12);
}

#[test]
fn first_accelerated_sweep_equals_asap() {
    let (p, init) = small_instance(5);
    let s = SolverState::new(&p, init.0, init.1).unwrap();
    let x = asap_sweep(&p, &s, &SolverConfig::asap()).unwrap();
    let y = accel_asap_sweep(&p, &s, &SolverConfig::accel_asap()).unwrap();
    assert_eq!(x.a, y.a);
    assert_eq!(x.b, y.b);
    assert!((y.t_cur - 1.618_033_988_749_895).abs() < 1e-12);
}

#[test]
fn single_block_easap_reduces_to_asap() {
    let (p, init) = small_instance(6);
    let reduced = SolverConfig {
        layout: BlockLayout::SingleBlock,
        add_iteration_to_step: false,
        max_iters: 50,
        epsilon: 0.0,
        ..SolverConfig::easap()
    };
    let two_block = SolverConfig {
        max_iters: 50,
        epsilon: 0.0,
        ..SolverConfig::asap()
    };
    let x = run(&p, init.clone(), &reduced).unwrap();
    let y = run(&p, init, &two_block).unwrap();
    assert_eq!(x.trace.len(), y.trace.len());
    for (r, s) in x.trace.records.iter().zip(&y.trace.records) {
        assert!((r.objective - s.objective).abs() <= 1e-12 * (1.0 + s.objective.abs()));
    }
    assert!(x.state.a.distance_sq(&y.state.a).unwrap().sqrt() <= 1e-12);
    assert!(x.state.b.distance_sq(&y.state.b).unwrap().sqrt() <= 1e-12);
}

#[test]
fn descent_holds_on_small_runs() {
    for seed in 0..3 {
        let (p, init) = small_instance(10 + seed);
        for cfg in [SolverConfig::easap(), SolverConfig::asap()] {
            let cfg = SolverConfig { max_iters: 60, ..cfg };
            let out = run(&p, init.clone(), &cfg).unwrap();
            assert!(out.trace.descent_violations().is_empty(), "{} seed {seed}", cfg.algorithm);
            assert!(out.trace.records.iter().skip(1).all(|r| r.descent_ok == Some(true)));
        }
    }
}

#[test]
fn accelerated_run_makes_progress() {
    let (p, init) = small_instance(20);
    let j0 = p.objective(&init.0, &init.1).unwrap();
    let cfg = SolverConfig {
        max_iters: 40,
        ..SolverConfig::accel_asap()
    };
    let out = run(&p, init, &cfg).unwrap();
    assert!(out.state.objective < j0);
}

#[test]
fn stationarity_error_cases() {
    let (p, a, b) = exact_problem(0.0);
    let cfg = SolverConfig::easap();
    let taus = stepsizes_at(&p, &a, &b, &cfg, 0).unwrap();
    assert_eq!(taus.len(), 6);
    assert!(stationarity_error(&p, &a, &b, &taus).unwrap() < 1e-12);
    assert!(stationarity_error(&p, &a, &b, &taus[..5]).is_err());
    let mut bad = taus.clone();
    bad[3] = 0.0;
    assert!(stationarity_error(&p, &a, &b, &bad).is_err());

    // Away from a critical point the map moves.
    let z = factors(&[3, 4, 5], 2, 30);
    let taus = stepsizes_at(&p, &z, &b, &cfg, 0).unwrap();
    assert!(stationarity_error(&p, &z, &b, &taus).unwrap() > 1e-6);
}

#[test]
fn stationarity_with_prox_only_residual() {
    // Exact fit but B1 != A3 and mu > 0: the fit gradient is zero, so the
    // residual is exactly the prox displacement of each coupled block.
    let a = factors(&[2, 3, 2], 1, 40);
    let b = factors(&[2, 2, 3], 1, 41);
    let mu = 0.3;
    let p = CoupledProblem::laplacian(kruskal_reconstruct(&a), kruskal_reconstruct(&b), 1, mu).unwrap();
    let taus = vec![2.0; 6];
    let mut want = 0.0;
    for k in 0..2 {
        let (x, anchor) = (a.factor(2)[(k, 0)], b.factor(0)[(k, 0)]);
        let d = (x - anchor).abs().min(mu / 2.0);
        want += 2.0 * d * d;
    }
    let got = stationarity_error(&p, &a, &b, &taus).unwrap();
    assert!((got - want.sqrt()).abs() < 1e-14);
}

#[test]
fn descent_check_cases() {
    assert!(descent_check(10.0, 9.0, 1.0, &[3.0, 4.0], &[1.0, 2.0]));
    // c = 1, needs J_next <= 10 - 1 * 4.
    assert!(!descent_check(10.0, 7.0, 2.0, &[3.0, 4.0], &[1.0, 2.0]));
    assert!(descent_check(10.0, 6.0, 2.0, &[3.0, 4.0], &[1.0, 2.0]));
    // Increase within the slack is tolerated, beyond it is not.
    assert!(descent_check(1.0, 1.0 + 1e-9, 0.0, &[2.0], &[1.0]));
    assert!(!descent_check(1.0, 1.0 + 1e-6, 0.0, &[2.0], &[1.0]));
}

#[test]
fn descent_check_flags_corrupted_trace() {
    let (p, init) = small_instance(7);
    let cfg = SolverConfig {
        max_iters: 10,
        ..SolverConfig::easap()
    };
    let mut out = run(&p, init, &cfg).unwrap();
    assert!(out.trace.descent_violations().is_empty());
    out.trace.records[5].objective = out.trace.records[4].objective * 1.5;
    assert_eq!(out.trace.descent_violations(), vec![5]);
}

#[test]
fn lyapunov_cases() {
    assert_eq!(lyapunov_value(3.0, &[0.0, 0.0], &[5.0, 5.0], &[1.0, 1.0]), 3.0);
    assert_eq!(lyapunov_value(3.0, &[1.0, 2.0], &[5.0, 4.0], &[1.0, 2.0]), 3.0 + 0.5 * (4.0 + 4.0));
}

#[test]
fn lyapunov_is_nonincreasing_along_run() {
    let (p, init) = small_instance(8);
    let cfg = SolverConfig {
        max_iters: 40,
        diagnostics: Diagnostics {
            lyapunov: true,
            ..Diagnostics::default()
        },
        ..SolverConfig::easap()
    };
    let out = run(&p, init, &cfg).unwrap();
    for r in &out.trace.records {
        let l = r.lyapunov.unwrap();
        assert!(l >= r.objective);
    }
    for w in out.trace.records.windows(2).skip(1) {
        // R^{k+1} <= J^k holds by the descent inequality; J^k <= R^k.
        assert!(w[1].lyapunov.unwrap() <= w[0].objective * (1.0 + 1e-10) + 1e-8);
    }
}

#[test]
fn runs_are_deterministic() {
    let (p, init) = small_instance(9);
    let cfg = SolverConfig {
        max_iters: 20,
        ..SolverConfig::easap()
    };
    let x = run(&p, init.clone(), &cfg).unwrap().trace.to_csv();
    let y = run(&p, init, &cfg).unwrap().trace.to_csv();
    assert_eq!(x, y);
}

#[test]
fn trace_csv_format() {
    let (p, init) = small_instance(11);
    let cfg = SolverConfig {
        max_iters: 3,
        ..SolverConfig::easap()
    };
    let out = run_with_observer(&p, init, &cfg, |s| MetricSample {
        relerr: (s.k % 2 == 0).then_some(0.25),
        fms: None,
    })
    .unwrap();
    let csv = out.trace.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], TRACE_HEADER);
    assert_eq!(lines.len(), 5);
    for (k, line) in lines[1..].iter().enumerate() {
        let fields: Vec<&str> = line.split(',').collect();
        assert_eq!(fields.len(), 7);
        assert_eq!(fields[0], k.to_string());
        let mantissa = fields[1].split('e').next().unwrap().replace(['.', '-'], "");
        assert_eq!(mantissa.len(), 17, "{}", fields[1]);
        assert_eq!(fields[1].parse::<f64>().unwrap(), out.trace.records[k].objective);
        assert!(!fields[3].is_empty());
        assert_eq!(fields[4].is_empty(), k % 2 == 1);
        assert!(fields[5].is_empty());
        assert!(fields[6].is_empty());
    }
}

#[test]
fn wall_time_is_opt_in() {
    let (p, init) = small_instance(12);
    let cfg = SolverConfig {
        max_iters: 2,
        diagnostics: Diagnostics {
            wall_time: true,
            ..Diagnostics::default()
        },
        ..SolverConfig::easap()
    };
    let out = run(&p, init, &cfg).unwrap();
    assert!(out.trace.records.iter().all(|r| r.wall_ms.is_some()));
}

#[test]
fn divergence_is_reported() {
    let (p, init) = small_instance(13);
    let mut a = init.0.clone();
    let mut m = a.factor(0).clone();
    m[(0, 0)] = 1e200;
    a.set_factor(0, m).unwrap();
    let err = SolverState::new(&p, a, init.1).err().unwrap();
    assert!(matches!(err, Error::NonFinite(_)));
}

#[test]
fn joint_gauss_sweeps_descend() {
    let a = factors(&[2, 3, 6], 2, 50);
    let b = factors(&[4, 6, 3], 2, 51);
    let p1 = Matrix::from_fn(2, 4, |i, j| if j / 2 == i { 0.5 } else { 0.0 });
    let p2 = Matrix::from_fn(3, 6, |i, j| if j / 2 == i { 0.5 } else { 0.0 });
    let pm = Matrix::from_fn(3, 6, |i, j| if j / 2 == i { 0.5 } else { 0.0 });
    let y = kruskal_reconstruct(&factors(&[2, 3, 6], 2, 52));
    let yp = kruskal_reconstruct(&factors(&[4, 6, 3], 2, 53));
    let coupling = Coupling::JointGauss {
        w1: 1.0,
        w2: 0.1,
        p1,
        p2,
        pm,
    };
    let p = CoupledProblem::new(y, yp, 2, 2, coupling, 3.0).unwrap();
    for cfg in [SolverConfig::easap(), SolverConfig::asap()] {
        let cfg = SolverConfig { max_iters: 50, ..cfg };
        let out = run(&p, (a.clone(), b.clone()), &cfg).unwrap();
        assert!(out.trace.descent_violations().is_empty(), "{}", cfg.algorithm);
    }
}
