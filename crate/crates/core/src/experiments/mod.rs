//! Synthetic instances, image degradation and evaluation metrics.

pub mod degrade;
pub mod metrics;
pub mod synth;

pub use degrade::{
    band_aggregation, blur_downsample_matrix, build_hsr_problem, degrade_sri, gaussian_kernel, Degraded,
    DegradationSpec, HsrSettings,
};
pub use metrics::{
    align_columns, estimate_sri, fms_side, metric_fms, metric_hsr, metric_relerr, relerr_pair, HsrMetrics,
    RSNR_CAP_DB,
};
pub use synth::{
    add_noise_snr, gen_synthetic_coupled, laplace_from_uniform, perturb_factors, random_init, rng_stream,
    sample_laplace, GroundTruth, SynthSpec,
};
