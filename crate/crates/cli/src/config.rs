use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use coupled_fuse::experiments::synth::snr_serde;
use coupled_fuse::experiments::{DegradationSpec, SynthSpec};
use coupled_fuse::solver::SolverConfig;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_problem")]
    pub problem: ProblemSource,
    #[serde(default = "default_model")]
    pub model: ModelConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            problem: default_problem(),
            model: default_model(),
            solver: SolverConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

fn default_problem() -> ProblemSource {
    ProblemSource::Synthetic(SynthSpec::default())
}

fn default_model() -> ModelConfig {
    ModelConfig::LaplacianL1 {
        mu: default_mu(),
        coupled_pair: (2, 0),
    }
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_mu() -> f64 {
    0.01
}

fn default_pair() -> (usize, usize) {
    (2, 0)
}

fn one() -> f64 {
    1.0
}

fn infinity() -> f64 {
    f64::INFINITY
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSource {
    Synthetic(SynthSpec),
    Hsr(HsrSource),
    Files(FileSource),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HsrSource {
    pub sri_file: PathBuf,
    #[serde(default)]
    pub degradation: DegradationSpec,
    pub rank: usize,
    #[serde(default = "infinity", with = "snr_serde")]
    pub snr_hsi_db: f64,
    #[serde(default = "infinity", with = "snr_serde")]
    pub snr_msi_db: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileSource {
    pub y: PathBuf,
    pub y_prime: PathBuf,
    pub rank: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    LaplacianL1 {
        #[serde(default = "default_mu")]
        mu: f64,
        /// 0-based `(A index, B index)`.
        #[serde(default = "default_pair")]
        coupled_pair: (usize, usize),
    },
    JointGauss {
        #[serde(default = "one")]
        lambda: f64,
        #[serde(default = "one")]
        w1: f64,
        #[serde(default = "one")]
        w2: f64,
        /// CSV operators. File problems need all three. Image problems
        /// build P1 and P2 from the degradation and accept an optional Pm.
        #[serde(default)]
        p1: Option<PathBuf>,
        #[serde(default)]
        p2: Option<PathBuf>,
        #[serde(default)]
        pm: Option<PathBuf>,
    },
}

impl RunConfig {
    /// Reads a config file; relative paths inside it are resolved against
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut self.problem {
            ProblemSource::Synthetic(_) => {}
            ProblemSource::Hsr(h) => fix(&mut h.sri_file),
            ProblemSource::Files(f) => {
                fix(&mut f.y);
                fix(&mut f.y_prime);
            }
        }
        if let ModelConfig::JointGauss { p1, p2, pm, .. } = &mut self.model {
            for p in [p1, p2, pm].into_iter().flatten() {
                fix(p);
            }
        }
        fix(&mut self.output_dir);
    }

    /// Applies `--seed` to both the data generator and the solver.
    pub fn apply_seed(&mut self, seed: u64) {
        if let ProblemSource::Synthetic(s) = &mut self.problem {
            s.seed = seed;
        }
        self.solver.seed = seed;
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        match (&self.problem, &self.model) {
            (ProblemSource::Synthetic(s), ModelConfig::LaplacianL1 { coupled_pair, .. }) => {
                s.validate()?;
                if *coupled_pair != s.coupled_pair {
                    bail!(
                        "model coupled_pair {:?} differs from the synthetic coupled_pair {:?}",
                        coupled_pair,
                        s.coupled_pair
                    );
                }
            }
            (ProblemSource::Synthetic(_), ModelConfig::JointGauss { .. }) => {
                bail!("synthetic problems use the laplacian_l1 model")
            }
            (ProblemSource::Hsr(h), ModelConfig::JointGauss { p1, p2, .. }) => {
                h.degradation.validate()?;
                if p1.is_some() || p2.is_some() {
                    bail!("image problems derive P1 and P2 from the degradation; remove model.p1/p2");
                }
                if h.rank == 0 {
                    bail!("rank must be positive");
                }
            }
            (ProblemSource::Hsr(_), ModelConfig::LaplacianL1 { .. }) => {
                bail!("image problems use the joint_gauss model")
            }
            (ProblemSource::Files(f), model) => {
                if f.rank == 0 {
                    bail!("rank must be positive");
                }
                if let ModelConfig::JointGauss { p1, p2, pm, .. } = model {
                    if p1.is_none() || p2.is_none() || pm.is_none() {
                        bail!("joint_gauss on file problems needs p1, p2 and pm");
                    }
                }
            }
        }
        self.check_files()
    }

    fn check_files(&self) -> Result<()> {
        let mut files: Vec<&PathBuf> = Vec::new();
        match &self.problem {
            ProblemSource::Synthetic(_) => {}
            ProblemSource::Hsr(h) => files.push(&h.sri_file),
            ProblemSource::Files(f) => files.extend([&f.y, &f.y_prime]),
        }
        if let ModelConfig::JointGauss { p1, p2, pm, .. } = &self.model {
            files.extend([p1, p2, pm].into_iter().flatten());
        }
        for f in files {
            if !f.is_file() {
                bail!("referenced file {} does not exist", f.display());
            }
        }
        Ok(())
    }
}
