use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use log::info;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use coupled_fuse::experiments::{
    build_hsr_problem, degrade_sri, estimate_sri, gen_synthetic_coupled, metric_fms, metric_hsr, random_init,
    relerr_pair, GroundTruth, HsrMetrics, HsrSettings,
};
use coupled_fuse::io::{read_csv_matrix, read_factors, read_tnsr, write_csv_matrix, write_factors, write_tnsr};
use coupled_fuse::kruskal_reconstruct;
use coupled_fuse::solver::{run_with_observer, MetricSample, RunOutcome};
use coupled_fuse::{Coupling, CoupledProblem, DenseTensor, Error, KruskalFactors};

use crate::config::{ModelConfig, ProblemSource, RunConfig};

pub struct GlobalOpts {
    pub config: Option<PathBuf>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub jobs: usize,
}

pub struct MetricsArgs {
    pub est: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub est_sri: Option<PathBuf>,
    pub truth_sri: Option<PathBuf>,
}

/// 2 for numerical failures, 1 for everything else.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    let numerical = e.chain().any(|c| {
        matches!(
            c.downcast_ref::<Error>(),
            Some(Error::Divergence { .. } | Error::NonFinite(_) | Error::NotPositiveDefinite)
        )
    });
    if numerical {
        2
    } else {
        1
    }
}

fn load_config(opts: &GlobalOpts) -> Result<RunConfig> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = opts.seed {
        cfg.apply_seed(seed);
    }
    if let Some(out) = &opts.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn manifest(command: &str, cfg: &RunConfig) -> Value {
    json!({
        "tool": "coupled-fuse",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": cfg.solver.seed,
        "config": cfg,
    })
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn synth(opts: &GlobalOpts) -> Result<()> {
    let cfg = load_config(opts)?;
    let (spec, mu) = match (&cfg.problem, &cfg.model) {
        (ProblemSource::Synthetic(s), ModelConfig::LaplacianL1 { mu, .. }) => (s, *mu),
        _ => bail!("synth needs a synthetic problem"),
    };
    let (p, truth) = gen_synthetic_coupled(spec, mu)?;
    let out = &cfg.output_dir;
    create_dir(&out.join("truth"))?;
    write_tnsr(out.join("Y.tnsr"), &p.y)?;
    write_tnsr(out.join("Yprime.tnsr"), &p.y_prime)?;
    write_factors(out.join("truth"), "A", &truth.a)?;
    write_factors(out.join("truth"), "B", &truth.b)?;
    write_json(&out.join("manifest.json"), &manifest("synth", &cfg))?;
    info!("wrote synthetic instance to {}", out.display());
    Ok(())
}

enum Truth {
    Factors(GroundTruth),
    Image(DenseTensor),
    None,
}

fn build_problem(cfg: &RunConfig) -> Result<(CoupledProblem, Truth)> {
    match (&cfg.problem, &cfg.model) {
        (ProblemSource::Synthetic(spec), ModelConfig::LaplacianL1 { mu, .. }) => {
            let (p, truth) = gen_synthetic_coupled(spec, *mu)?;
            Ok((p, Truth::Factors(truth)))
        }
        (ProblemSource::Hsr(h), ModelConfig::JointGauss { lambda, w1, w2, pm, .. }) => {
            let sri = read_tnsr(&h.sri_file)?;
            let mut spec = h.degradation.clone();
            if let Some(path) = pm {
                spec.spectral_response = Some(read_csv_matrix(path)?);
            }
            let settings = HsrSettings {
                rank: h.rank,
                lambda: *lambda,
                w1: *w1,
                w2: *w2,
                snr_hsi_db: h.snr_hsi_db,
                snr_msi_db: h.snr_msi_db,
                seed: cfg.solver.seed,
            };
            let (p, _) = build_hsr_problem(&sri, &spec, &settings)?;
            Ok((p, Truth::Image(sri)))
        }
        (ProblemSource::Files(f), model) => {
            let y = read_tnsr(&f.y)?;
            let y_prime = read_tnsr(&f.y_prime)?;
            let p = match model {
                ModelConfig::LaplacianL1 { mu, coupled_pair } => CoupledProblem::new(
                    y,
                    y_prime,
                    f.rank,
                    f.rank,
                    Coupling::LaplacianL1 {
                        mu: *mu,
                        pair: *coupled_pair,
                    },
                    1.0,
                )?,
                ModelConfig::JointGauss {
                    lambda,
                    w1,
                    w2,
                    p1,
                    p2,
                    pm,
                } => {
                    let load = |p: &Option<PathBuf>| -> Result<_> {
                        Ok(read_csv_matrix(p.as_ref().ok_or_else(|| anyhow!("missing operator file"))?)?)
                    };
                    let coupling = Coupling::JointGauss {
                        w1: *w1,
                        w2: *w2,
                        p1: load(p1)?,
                        p2: load(p2)?,
                        pm: load(pm)?,
                    };
                    CoupledProblem::new(y, y_prime, f.rank, f.rank, coupling, *lambda)?
                }
            };
            Ok((p, Truth::None))
        }
        _ => bail!("problem and model do not fit together"),
    }
}

#[derive(Serialize)]
struct Summary {
    algorithm: String,
    iterations: usize,
    stop_reason: String,
    final_objective: f64,
    initial_objective: f64,
    final_step_norm: f64,
    final_stationarity: Option<f64>,
    final_relerr: Option<f64>,
    final_fms: Option<f64>,
    descent_violations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    image_metrics: Option<HsrMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    wall_time_ms: Option<f64>,
}

fn parse_seeds(list: &str) -> Result<Vec<u64>> {
    if let Some((lo, hi)) = list.split_once("..") {
        let lo: u64 = lo.trim().parse().context("seed range start")?;
        let hi: u64 = hi.trim().parse().context("seed range end")?;
        if lo >= hi {
            bail!("empty seed range {list}");
        }
        return Ok((lo..hi).collect());
    }
    list.split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed {s:?}")))
        .collect()
}

pub fn run(opts: &GlobalOpts, seeds: Option<&str>) -> Result<()> {
    let cfg = load_config(opts)?;
    let Some(list) = seeds else {
        return run_one(&cfg);
    };
    let seeds = parse_seeds(list)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs.max(1))
        .build()
        .context("building thread pool")?;
    let results: Vec<(u64, Result<()>)> = pool.install(|| {
        seeds
            .par_iter()
            .map(|&s| {
                let mut c = cfg.clone();
                c.apply_seed(s);
                c.output_dir = cfg.output_dir.join(format!("seed-{s}"));
                (s, run_one(&c))
            })
            .collect()
    });
    // Report every failure; surface a numerical one first so the exit code reflects it.
    let mut failures: Vec<(u64, anyhow::Error)> =
        results.into_iter().filter_map(|(s, r)| r.err().map(|e| (s, e))).collect();
    for (s, e) in &failures {
        eprintln!("seed {s}: {e:#}");
    }
    failures.sort_by_key(|(_, e)| std::cmp::Reverse(exit_code(e)));
    match failures.into_iter().next() {
        Some((s, e)) => Err(e.context(format!("seed {s} failed"))),
        None => Ok(()),
    }
}

fn run_one(cfg: &RunConfig) -> Result<()> {
    let out = &cfg.output_dir;
    create_dir(out)?;
    write_json(&out.join("manifest.json"), &manifest("run", cfg))?;
    let (p, truth) = build_problem(cfg)?;
    let init = random_init(
        p.y.shape(),
        p.y_prime.shape(),
        p.rank_a,
        p.rank_b,
        cfg.solver.seed,
    )?;
    let initial_objective = p.objective(&init.0, &init.1)?;
    let start = std::time::Instant::now();
    let observer = |s: &coupled_fuse::SolverState| {
        let relerr = relerr_pair(&p.y, &s.a, &p.y_prime, &s.b)
            .ok()
            .map(|(x, y)| 0.5 * (x + y));
        let fms = match &truth {
            Truth::Factors(t) => metric_fms(&s.a, &s.b, &t.a, &t.b).ok(),
            _ => None,
        };
        MetricSample { relerr, fms }
    };
    let outcome = match run_with_observer(&p, init, &cfg.solver, observer) {
        Ok(o) => o,
        Err(e @ Error::Divergence { .. }) => {
            let Error::Divergence { k, .. } = e else { unreachable!() };
            write_json(
                &out.join("summary.json"),
                &json!({"algorithm": cfg.solver.algorithm.to_string(), "iterations": k, "stop_reason": "diverged"}),
            )?;
            return Err(e.into());
        }
        Err(e) => return Err(e.into()),
    };
    let wall_ms = start.elapsed().as_secs_f64() * 1e3;
    write_outputs(cfg, &outcome, &truth, initial_objective, wall_ms)
}

fn write_outputs(
    cfg: &RunConfig,
    outcome: &RunOutcome,
    truth: &Truth,
    initial_objective: f64,
    wall_ms: f64,
) -> Result<()> {
    let out = &cfg.output_dir;
    outcome.trace.write_csv(out.join("trace.csv"))?;
    create_dir(&out.join("est"))?;
    write_factors(out.join("est"), "A", &outcome.state.a)?;
    write_factors(out.join("est"), "B", &outcome.state.b)?;
    let image_metrics = match truth {
        Truth::Image(sri) => {
            let est = estimate_sri(&outcome.state.a, &outcome.state.b)?;
            write_tnsr(out.join("est").join("sri.tnsr"), &est)?;
            Some(metric_hsr(&est, sri)?)
        }
        _ => None,
    };
    let last = outcome.trace.records.last().expect("trace holds the initial record");
    let summary = Summary {
        algorithm: cfg.solver.algorithm.to_string(),
        iterations: outcome.state.k,
        stop_reason: outcome.stop.to_string(),
        final_objective: outcome.state.objective,
        initial_objective,
        final_step_norm: last.step_norm,
        final_stationarity: last.stationarity,
        final_relerr: last.relerr,
        final_fms: last.fms,
        descent_violations: outcome.trace.descent_violations().len(),
        image_metrics,
        wall_time_ms: cfg.solver.diagnostics.wall_time.then_some(wall_ms),
    };
    write_json(&out.join("summary.json"), &summary)?;
    info!(
        "{} finished after {} sweeps ({}), J = {:.6e}",
        summary.algorithm, summary.iterations, summary.stop_reason, summary.final_objective
    );
    Ok(())
}

/// Reads `<prefix>1.tnsr`, `<prefix>2.tnsr`, ... until the first gap.
fn read_factor_dir(dir: &Path, prefix: &str) -> Result<KruskalFactors> {
    let order = (1..)
        .take_while(|n| dir.join(format!("{prefix}{n}.tnsr")).is_file())
        .count();
    if order == 0 {
        bail!("no {prefix}1.tnsr in {}", dir.display());
    }
    Ok(read_factors(dir, prefix, order)?)
}

pub fn metrics(opts: &GlobalOpts, args: MetricsArgs) -> Result<()> {
    let mut report = serde_json::Map::new();
    if let (Some(est), Some(truth)) = (&args.est, &args.truth) {
        let ea = read_factor_dir(est, "A")?;
        let eb = read_factor_dir(est, "B")?;
        let ta = read_factor_dir(truth, "A")?;
        let tb = read_factor_dir(truth, "B")?;
        let (y, y_prime) = match &args.data {
            Some(d) => (read_tnsr(d.join("Y.tnsr"))?, read_tnsr(d.join("Yprime.tnsr"))?),
            None => (kruskal_reconstruct(&ta), kruskal_reconstruct(&tb)),
        };
        let (ra, rb) = relerr_pair(&y, &ea, &y_prime, &eb)?;
        report.insert("relerr".into(), json!(0.5 * (ra + rb)));
        report.insert("relerr_a".into(), json!(ra));
        report.insert("relerr_b".into(), json!(rb));
        report.insert("fms".into(), json!(metric_fms(&ea, &eb, &ta, &tb)?));
    }
    if let (Some(est), Some(truth)) = (&args.est_sri, &args.truth_sri) {
        let m = metric_hsr(&read_tnsr(est)?, &read_tnsr(truth)?)?;
        report.insert("image".into(), serde_json::to_value(m)?);
    }
    if report.is_empty() {
        bail!("nothing to score: pass --est/--truth or --est-sri/--truth-sri");
    }
    let value = Value::Object(report);
    println!("{}", serde_json::to_string_pretty(&value)?);
    if let Some(out) = &opts.out {
        create_dir(out)?;
        write_json(&out.join("metrics.json"), &value)?;
    }
    Ok(())
}

pub fn hsr_degrade(opts: &GlobalOpts, sri: Option<PathBuf>) -> Result<()> {
    let cfg = match &opts.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    let out = opts.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    let (mut spec, cfg_sri) = match &cfg.problem {
        ProblemSource::Hsr(h) => (h.degradation.clone(), Some(h.sri_file.clone())),
        _ => (Default::default(), None),
    };
    if let ModelConfig::JointGauss { pm: Some(path), .. } = &cfg.model {
        spec.spectral_response = Some(read_csv_matrix(path)?);
    }
    let sri_path = sri
        .or(cfg_sri)
        .ok_or_else(|| anyhow!("no image given: pass --sri or configure problem.hsr.sri_file"))?;
    let image = read_tnsr(&sri_path)?;
    let d = degrade_sri(&image, &spec)?;
    create_dir(&out)?;
    write_tnsr(out.join("hsi.tnsr"), &d.hsi)?;
    write_tnsr(out.join("msi.tnsr"), &d.msi)?;
    write_csv_matrix(out.join("P1.csv"), &d.p1)?;
    write_csv_matrix(out.join("P2.csv"), &d.p2)?;
    write_csv_matrix(out.join("Pm.csv"), &d.pm)?;
    write_json(
        &out.join("manifest.json"),
        &json!({
            "tool": "coupled-fuse",
            "version": env!("CARGO_PKG_VERSION"),
            "command": "hsr-degrade",
            "sri_file": sri_path,
            "degradation": spec,
            "hsi_shape": d.hsi.shape(),
            "msi_shape": d.msi.shape(),
        }),
    )?;
    Ok(())
}
