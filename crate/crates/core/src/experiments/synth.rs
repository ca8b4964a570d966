//! Synthetic coupled instances and random initial points.
//!
//! Randomness comes from ChaCha20 (`rand_chacha`), a counter-based stream
//! cipher generator. Each purpose draws from its own stream of the same seed:
//!
//! | stream | use                          |
//! |--------|------------------------------|
//! | 0      | ground-truth factors         |
//! | 1      | Laplace coupling noise Γ     |
//! | 2      | observation noise on `Y`     |
//! | 3      | observation noise on `Y'`    |
//! | 4      | initial points               |

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Coupling, CoupledProblem};
use crate::tensor::{kruskal_reconstruct, DenseTensor, KruskalFactors, Matrix};

pub const STREAM_FACTORS: u64 = 0;
pub const STREAM_COUPLING: u64 = 1;
pub const STREAM_NOISE_Y: u64 = 2;
pub const STREAM_NOISE_Y_PRIME: u64 = 3;
pub const STREAM_INIT: u64 = 4;

pub fn rng_stream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub dims_y: Vec<usize>,
    pub dims_y_prime: Vec<usize>,
    pub rank: usize,
    /// Target SNR in dB; `infinity` disables observation noise.
    #[serde(with = "snr_serde")]
    pub snr_db: f64,
    /// Scale of the Laplace perturbation between the coupled factors; 0 makes them identical.
    pub laplace_scale: f64,
    /// 0-based `(A index, B index)` of the coupled factor pair.
    pub coupled_pair: (usize, usize),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            dims_y: vec![30, 40, 50],
            dims_y_prime: vec![50, 60, 70],
            rank: 5,
            snr_db: 14.0,
            laplace_scale: 0.1,
            coupled_pair: (2, 0),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.dims_y.is_empty() || self.dims_y_prime.is_empty() {
            return bad("tensor dimensions must be non-empty".into());
        }
        if self.dims_y.contains(&0) || self.dims_y_prime.contains(&0) {
            return bad("tensor dimensions must be positive".into());
        }
        if self.rank == 0 {
            return bad("rank must be positive".into());
        }
        if !(self.laplace_scale >= 0.0) || !self.laplace_scale.is_finite() {
            return bad(format!("laplace_scale must be >= 0, got {}", self.laplace_scale));
        }
        if self.snr_db.is_nan() {
            return bad("snr_db is NaN".into());
        }
        let (pa, pb) = self.coupled_pair;
        if pa >= self.dims_y.len() || pb >= self.dims_y_prime.len() {
            return bad(format!("coupled pair ({pa}, {pb}) out of range"));
        }
        if self.dims_y[pa] != self.dims_y_prime[pb] {
            return bad(format!(
                "coupled dimensions differ: {} vs {}",
                self.dims_y[pa], self.dims_y_prime[pb]
            ));
        }
        Ok(())
    }
}

/// SNR values in dB where the string `"infinity"` stands for `+∞`.
pub mod snr_serde {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() && *v > 0.0 {
            s.serialize_str("infinity")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Snr {
            Num(f64),
            Text(String),
        }
        match Snr::deserialize(d)? {
            Snr::Num(v) => Ok(v),
            Snr::Text(s) if matches!(s.to_ascii_lowercase().as_str(), "inf" | "infinity" | "+inf") => {
                Ok(f64::INFINITY)
            }
            Snr::Text(s) => Err(serde::de::Error::custom(format!("invalid snr_db {s:?}"))),
        }
    }
}

/// Ground truth of a synthetic instance.
#[derive(Clone, Debug)]
pub struct GroundTruth {
    pub a: KruskalFactors,
    pub b: KruskalFactors,
    /// Noiseless tensors `⟦A⟧`, `⟦B⟧`.
    pub x: DenseTensor,
    pub x_prime: DenseTensor,
}

/// Inverse-CDF Laplace(0, b) sample from `u ∈ (−½, ½)`.
pub fn laplace_from_uniform(u: f64, b: f64) -> f64 {
    if u == 0.0 {
        return 0.0;
    }
    -b * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}

pub fn sample_laplace(b: f64, rng: &mut impl Rng) -> f64 {
    loop {
        let u: f64 = rng.random::<f64>() - 0.5;
        // u = −½ maps to an infinite tail
        if u > -0.5 {
            return laplace_from_uniform(u, b);
        }
    }
}

fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random::<f64>())
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

/// `X + 10^{−snr/20} (‖X‖/‖N‖) N` with `N` standard normal; identity for infinite SNR.
pub fn add_noise_snr(x: &DenseTensor, snr_db: f64, rng: &mut impl Rng) -> Result<DenseTensor> {
    if snr_db.is_infinite() && snr_db > 0.0 {
        return Ok(x.clone());
    }
    let noise: Vec<f64> = (0..x.len()).map(|_| rng.sample(StandardNormal)).collect();
    let noise_norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt();
    if noise_norm == 0.0 {
        return Ok(x.clone());
    }
    let scale = 10f64.powf(-snr_db / 20.0) * x.frobenius_norm() / noise_norm;
    let data = x.data().iter().zip(&noise).map(|(a, n)| a + scale * n).collect();
    DenseTensor::new(x.shape().to_vec(), data)
}

/// Draws ground-truth factors (uniform on [0, 1)), couples `B_pb = A_pa + Γ`
/// with Laplace noise `Γ`, and injects observation noise at the requested SNR.
/// The returned problem uses the Laplacian ℓ1 coupling with weight `mu`.
pub fn gen_synthetic_coupled(spec: &SynthSpec, mu: f64) -> Result<(CoupledProblem, GroundTruth)> {
    spec.validate()?;
    let r = spec.rank;
    let (pa, pb) = spec.coupled_pair;
    let mut rng = rng_stream(spec.seed, STREAM_FACTORS);
    let a_factors: Vec<Matrix> = spec.dims_y.iter().map(|&d| uniform_matrix(d, r, &mut rng)).collect();
    let mut b_factors: Vec<Matrix> = spec
        .dims_y_prime
        .iter()
        .enumerate()
        .map(|(n, &d)| {
            if n == pb {
                Matrix::zeros(d, r)
            } else {
                uniform_matrix(d, r, &mut rng)
            }
        })
        .collect();
    let mut grng = rng_stream(spec.seed, STREAM_COUPLING);
    b_factors[pb] = if spec.laplace_scale > 0.0 {
        a_factors[pa].map(|v| v + sample_laplace(spec.laplace_scale, &mut grng))
    } else {
        a_factors[pa].clone()
    };
    let a = KruskalFactors::new(a_factors)?;
    let b = KruskalFactors::new(b_factors)?;
    let x = kruskal_reconstruct(&a);
    let x_prime = kruskal_reconstruct(&b);
    let y = add_noise_snr(&x, spec.snr_db, &mut rng_stream(spec.seed, STREAM_NOISE_Y))?;
    let y_prime = add_noise_snr(&x_prime, spec.snr_db, &mut rng_stream(spec.seed, STREAM_NOISE_Y_PRIME))?;
    let problem = CoupledProblem::new(
        y,
        y_prime,
        r,
        r,
        Coupling::LaplacianL1 {
            mu,
            pair: spec.coupled_pair,
        },
        1.0,
    )?;
    Ok((problem, GroundTruth { a, b, x, x_prime }))
}

/// Random starting point in the style of the synthetic study: on side `A` the
/// first two factors are standard normal and the rest uniform; on side `B`
/// the first factor is standard normal and the rest uniform.
pub fn random_init(
    dims_a: &[usize],
    dims_b: &[usize],
    rank_a: usize,
    rank_b: usize,
    seed: u64,
) -> Result<(KruskalFactors, KruskalFactors)> {
    let mut rng = rng_stream(seed, STREAM_INIT);
    let mut side = |dims: &[usize], rank: usize, normals: usize| {
        KruskalFactors::new(
            dims.iter()
                .enumerate()
                .map(|(n, &d)| {
                    if n < normals {
                        normal_matrix(d, rank, &mut rng)
                    } else {
                        uniform_matrix(d, rank, &mut rng)
                    }
                })
                .collect(),
        )
    };
    let a = side(dims_a, rank_a, 2)?;
    let b = side(dims_b, rank_b, 1)?;
    Ok((a, b))
}

/// Adds Gaussian noise of relative size `rel` (in Frobenius norm) to every factor.
pub fn perturb_factors(f: &KruskalFactors, rel: f64, rng: &mut impl Rng) -> Result<KruskalFactors> {
    let factors = f
        .factors()
        .iter()
        .map(|m| {
            let n = normal_matrix(m.rows(), m.cols(), rng);
            let nn = n.frobenius_norm();
            if nn == 0.0 {
                return Ok(m.clone());
            }
            m.add_scaled(rel * m.frobenius_norm() / nn, &n)
        })
        .collect::<Result<Vec<_>>>()?;
    KruskalFactors::new(factors)
}
