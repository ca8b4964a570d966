//! Spatial blur/downsampling and spectral aggregation of a super-resolution
//! image, plus assembly of the joint-Gauss fusion problem.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::{Coupling, CoupledProblem};
use crate::tensor::{mode_product, DenseTensor, Matrix};

use super::synth::{add_noise_snr, rng_stream, STREAM_NOISE_Y, STREAM_NOISE_Y_PRIME};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSpec {
    pub blur_kernel_size: usize,
    pub blur_sigma: f64,
    pub downsample_stride: usize,
    /// Band count of the multispectral image when `spectral_response` is unset.
    pub msi_bands: usize,
    /// Explicit `K_m × K` spectral response; loaded from CSV by callers.
    #[serde(skip)]
    pub spectral_response: Option<Matrix>,
}

impl Default for DegradationSpec {
    fn default() -> Self {
        Self {
            blur_kernel_size: 9,
            blur_sigma: 4.0,
            downsample_stride: 4,
            msi_bands: 6,
            spectral_response: None,
        }
    }
}

impl DegradationSpec {
    pub fn validate(&self) -> Result<()> {
        if self.blur_kernel_size.is_multiple_of(2) {
            return Err(Error::InvalidArgument(format!(
                "blur kernel size must be odd, got {}",
                self.blur_kernel_size
            )));
        }
        if self.downsample_stride == 0 {
            return Err(Error::InvalidArgument("downsample stride must be at least 1".into()));
        }
        if !(self.blur_sigma > 0.0) || !self.blur_sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("blur sigma must be positive, got {}", self.blur_sigma)));
        }
        if self.spectral_response.is_none() && self.msi_bands == 0 {
            return Err(Error::InvalidArgument("msi_bands must be at least 1".into()));
        }
        Ok(())
    }
}

/// Normalized 1-D Gaussian taps of odd length `size`.
pub fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size / 2) as f64;
    let taps: Vec<f64> = (0..size)
        .map(|t| {
            let x = t as f64 - half;
            (-x * x / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|v| v / total).collect()
}

/// `⌈n/stride⌉ × n` operator that blurs with a Gaussian and keeps every
/// `stride`-th sample starting at 0. Taps falling outside `[0, n)` are dropped
/// and the remaining ones renormalized, so every row sums to 1.
pub fn blur_downsample_matrix(n: usize, size: usize, sigma: f64, stride: usize) -> Result<Matrix> {
    if n == 0 || stride == 0 || size.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!(
            "blur operator needs n >= 1, stride >= 1 and odd size (n={n}, stride={stride}, size={size})"
        )));
    }
    let kernel = gaussian_kernel(size, sigma);
    let half = (size / 2) as isize;
    let rows = n.div_ceil(stride);
    let mut m = Matrix::zeros(rows, n);
    for r in 0..rows {
        let center = (r * stride) as isize;
        let mut total = 0.0;
        for (t, &w) in kernel.iter().enumerate() {
            let col = center + t as isize - half;
            if (0..n as isize).contains(&col) {
                m[(r, col as usize)] += w;
                total += w;
            }
        }
        for c in 0..n {
            m[(r, c)] /= total;
        }
    }
    Ok(m)
}

/// `k_m × k` operator whose row `m` averages the contiguous band block
/// `[⌊m k / k_m⌋, ⌊(m+1) k / k_m⌋)`.
pub fn band_aggregation(k: usize, k_m: usize) -> Result<Matrix> {
    if k_m == 0 || k_m > k {
        return Err(Error::InvalidArgument(format!("cannot aggregate {k} bands into {k_m}")));
    }
    let mut m = Matrix::zeros(k_m, k);
    for r in 0..k_m {
        let (lo, hi) = (r * k / k_m, (r + 1) * k / k_m);
        for c in lo..hi {
            m[(r, c)] = 1.0 / (hi - lo) as f64;
        }
    }
    Ok(m)
}

/// Degraded observations of a super-resolution image and the operators that
/// produced them.
#[derive(Clone, Debug)]
pub struct Degraded {
    /// `sri ×₁ P1 ×₂ P2`
    pub hsi: DenseTensor,
    /// `sri ×₃ Pm`
    pub msi: DenseTensor,
    pub p1: Matrix,
    pub p2: Matrix,
    pub pm: Matrix,
}

pub fn degrade_sri(sri: &DenseTensor, spec: &DegradationSpec) -> Result<Degraded> {
    spec.validate()?;
    if sri.order() != 3 {
        return shape_err(format!("image must be order 3, got shape {:?}", sri.shape()));
    }
    let (i, j, k) = (sri.shape()[0], sri.shape()[1], sri.shape()[2]);
    let op = |n| blur_downsample_matrix(n, spec.blur_kernel_size, spec.blur_sigma, spec.downsample_stride);
    let p1 = op(i)?;
    let p2 = op(j)?;
    let pm = match &spec.spectral_response {
        Some(pm) if pm.cols() != k => {
            return shape_err(format!("spectral response has {} columns for {k} bands", pm.cols()))
        }
        Some(pm) => pm.clone(),
        None => band_aggregation(k, spec.msi_bands)?,
    };
    let hsi = mode_product(&mode_product(sri, &p1, 0)?, &p2, 1)?;
    let msi = mode_product(sri, &pm, 2)?;
    Ok(Degraded { hsi, msi, p1, p2, pm })
}

/// Weights and noise levels of a fusion instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HsrSettings {
    pub rank: usize,
    pub lambda: f64,
    pub w1: f64,
    pub w2: f64,
    #[serde(with = "super::synth::snr_serde")]
    pub snr_hsi_db: f64,
    #[serde(with = "super::synth::snr_serde")]
    pub snr_msi_db: f64,
    pub seed: u64,
}

impl Default for HsrSettings {
    fn default() -> Self {
        Self {
            rank: 10,
            lambda: 1.0,
            w1: 1.0,
            w2: 1.0,
            snr_hsi_db: f64::INFINITY,
            snr_msi_db: f64::INFINITY,
            seed: 0,
        }
    }
}

/// Degrades `sri`, adds observation noise and builds the joint-Gauss problem
/// with the hyperspectral image on side `A` and the multispectral one on `B`.
pub fn build_hsr_problem(
    sri: &DenseTensor,
    spec: &DegradationSpec,
    settings: &HsrSettings,
) -> Result<(CoupledProblem, Degraded)> {
    let d = degrade_sri(sri, spec)?;
    let y = add_noise_snr(&d.hsi, settings.snr_hsi_db, &mut rng_stream(settings.seed, STREAM_NOISE_Y))?;
    let y_prime = add_noise_snr(
        &d.msi,
        settings.snr_msi_db,
        &mut rng_stream(settings.seed, STREAM_NOISE_Y_PRIME),
    )?;
    let coupling = Coupling::JointGauss {
        w1: settings.w1,
        w2: settings.w2,
        p1: d.p1.clone(),
        p2: d.p2.clone(),
        pm: d.pm.clone(),
    };
    let p = CoupledProblem::new(y, y_prime, settings.rank, settings.rank, coupling, settings.lambda)?;
    Ok((p, d))
}
