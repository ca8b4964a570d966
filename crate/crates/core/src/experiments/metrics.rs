//! Evaluation metrics for coupled decompositions and fused images.

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::model::CoupledProblem;
use crate::tensor::{kruskal_reconstruct, DenseTensor, KruskalFactors, Matrix};

/// Reported R-SNR when the estimate is exact.
pub const RSNR_CAP_DB: f64 = 300.0;

/// `½ (‖Y − ⟦A⟧‖² / ‖Y‖² + ‖Y' − ⟦B⟧‖² / ‖Y'‖²)`
pub fn metric_relerr(p: &CoupledProblem, a: &KruskalFactors, b: &KruskalFactors) -> Result<f64> {
    p.check_iterate(a, b)?;
    let (ra, rb) = relerr_pair(&p.y, a, &p.y_prime, b)?;
    Ok(0.5 * (ra + rb))
}

/// Per-side relative squared errors.
pub fn relerr_pair(
    y: &DenseTensor,
    a: &KruskalFactors,
    y_prime: &DenseTensor,
    b: &KruskalFactors,
) -> Result<(f64, f64)> {
    Ok((relative_sq_error(y, a)?, relative_sq_error(y_prime, b)?))
}

fn relative_sq_error(t: &DenseTensor, f: &KruskalFactors) -> Result<f64> {
    if t.shape() != f.shape().as_slice() {
        return shape_err(format!("factors of shape {:?} for tensor {:?}", f.shape(), t.shape()));
    }
    let denom = t.frobenius_norm_sq();
    if denom == 0.0 {
        return Err(Error::InvalidArgument("relative error against a zero tensor".into()));
    }
    Ok(t.distance_sq(&kruskal_reconstruct(f))? / denom)
}

fn cosine(u: &[f64], v: &[f64]) -> f64 {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return 0.0;
    }
    u.iter().zip(v).map(|(x, y)| x * y).sum::<f64>() / (nu * nv)
}

fn check_pair(est: &KruskalFactors, truth: &KruskalFactors) -> Result<()> {
    if est.shape() != truth.shape() || est.rank() != truth.rank() {
        return shape_err(format!(
            "estimate {:?} rank {} vs truth {:?} rank {}",
            est.shape(),
            est.rank(),
            truth.shape(),
            truth.rank()
        ));
    }
    Ok(())
}

/// Greedy column matching: returns `perm` with `est` column `perm[j]` paired
/// to `truth` column `j`. Pairs are taken in decreasing order of the product
/// of absolute cosines over all factors; ties go to the lowest indices.
pub fn align_columns(est: &KruskalFactors, truth: &KruskalFactors) -> Result<Vec<usize>> {
    check_pair(est, truth)?;
    let r = est.rank();
    let est_cols: Vec<Vec<Vec<f64>>> = est.factors().iter().map(columns).collect();
    let true_cols: Vec<Vec<Vec<f64>>> = truth.factors().iter().map(columns).collect();
    let mut scores = Vec::with_capacity(r * r);
    for i in 0..r {
        for j in 0..r {
            let s: f64 = est_cols
                .iter()
                .zip(&true_cols)
                .map(|(e, t)| cosine(&e[i], &t[j]).abs())
                .product();
            scores.push((s, i, j));
        }
    }
    // Stable sort keeps (i, j) index order among equal scores.
    scores.sort_by(|x, y| y.0.total_cmp(&x.0));
    let mut perm = vec![usize::MAX; r];
    let mut est_used = vec![false; r];
    for (_, i, j) in scores {
        if !est_used[i] && perm[j] == usize::MAX {
            est_used[i] = true;
            perm[j] = i;
        }
    }
    Ok(perm)
}

fn columns(m: &Matrix) -> Vec<Vec<f64>> {
    (0..m.cols()).map(|c| m.column(c)).collect()
}

/// Factor match score of one side after alignment:
/// `(1/r) Σ_c Π_n ⟨â_{n,c}, a_{n,c}⟩ / (‖â_{n,c}‖ ‖a_{n,c}‖)`.
pub fn fms_side(est: &KruskalFactors, truth: &KruskalFactors) -> Result<f64> {
    let perm = align_columns(est, truth)?;
    let r = truth.rank();
    let mut total = 0.0;
    for (j, &i) in perm.iter().enumerate() {
        let mut prod = 1.0;
        for (e, t) in est.factors().iter().zip(truth.factors()) {
            let (u, v) = (e.column(i), t.column(j));
            if u.iter().all(|&x| x == 0.0) || v.iter().all(|&x| x == 0.0) {
                warn!("zero column in FMS comparison (component {j}); scoring it 0");
            }
            prod *= cosine(&u, &v);
        }
        total += prod;
    }
    Ok(total / r as f64)
}

/// Average of the two per-side factor match scores.
pub fn metric_fms(
    est_a: &KruskalFactors,
    est_b: &KruskalFactors,
    true_a: &KruskalFactors,
    true_b: &KruskalFactors,
) -> Result<f64> {
    Ok(0.5 * (fms_side(est_a, true_a)? + fms_side(est_b, true_b)?))
}

/// Quality scores of a recovered super-resolution image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsrMetrics {
    pub rsnr: f64,
    pub ssim: f64,
    pub cc: f64,
    pub rmse: f64,
    pub sam: f64,
}

/// Image tensor `I × J × K` with bands along the last mode.
fn band(t: &DenseTensor, k: usize) -> Vec<f64> {
    let nk = t.shape()[2];
    t.data().iter().skip(k).step_by(nk).copied().collect()
}

/// Computes R-SNR, SSIM, CC, RMSE and SAM of `est` against `truth`.
pub fn metric_hsr(est: &DenseTensor, truth: &DenseTensor) -> Result<HsrMetrics> {
    if est.shape() != truth.shape() {
        return shape_err(format!("estimate {:?} vs truth {:?}", est.shape(), truth.shape()));
    }
    if truth.order() != 3 {
        return shape_err("image metrics need order-3 tensors");
    }
    let err_sq = truth.distance_sq(est)?;
    let rsnr = if err_sq == 0.0 {
        RSNR_CAP_DB
    } else {
        (10.0 * (truth.frobenius_norm_sq() / err_sq).log10()).min(RSNR_CAP_DB)
    };
    let rmse = (err_sq / truth.len() as f64).sqrt();
    let (h, w, nb) = (truth.shape()[0], truth.shape()[1], truth.shape()[2]);

    let mut cc_sum = 0.0;
    let mut cc_n = 0usize;
    let mut ssim_sum = 0.0;
    for k in 0..nb {
        let (x, y) = (band(truth, k), band(est, k));
        match pearson(&x, &y) {
            Some(c) => {
                cc_sum += c;
                cc_n += 1;
            }
            None => warn!("band {k} has zero variance; skipped in CC"),
        }
        ssim_sum += band_ssim(&x, &y, h, w);
    }
    let cc = if cc_n > 0 { cc_sum / cc_n as f64 } else { f64::NAN };
    let ssim = ssim_sum / nb as f64;

    let mut sam_sum = 0.0;
    let mut sam_n = 0usize;
    for (u, v) in truth.data().chunks(nb).zip(est.data().chunks(nb)) {
        if let Some(a) = spectral_angle(u, v) {
            sam_sum += a;
            sam_n += 1;
        }
    }
    let sam = if sam_n > 0 { sam_sum / sam_n as f64 } else { f64::NAN };
    Ok(HsrMetrics {
        rsnr,
        ssim,
        cc,
        rmse,
        sam,
    })
}

fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

/// Angle between two fibers via `2 atan2(‖û − v̂‖, ‖û + v̂‖)` on unit vectors,
/// which stays accurate near zero. `None` when either fiber is zero.
fn spectral_angle(u: &[f64], v: &[f64]) -> Option<f64> {
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return None;
    }
    let (mut dsq, mut ssq) = (0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (a, b) = (a / nu, b / nv);
        dsq += (a - b) * (a - b);
        ssq += (a + b) * (a + b);
    }
    Some(2.0 * dsq.sqrt().atan2(ssq.sqrt()))
}

const SSIM_WINDOW: usize = 8;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean SSIM over all 8×8 uniform windows (clipped to the image size) of one
/// band, with dynamic range taken from the true band.
fn band_ssim(x: &[f64], y: &[f64], h: usize, w: usize) -> f64 {
    let (lo, hi) = x
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = if hi > lo { hi - lo } else { 1.0 };
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let (wh, ww) = (SSIM_WINDOW.min(h), SSIM_WINDOW.min(w));
    let n = (wh * ww) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i0 in 0..=h - wh {
        for j0 in 0..=w - ww {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in i0..i0 + wh {
                for j in j0..j0 + ww {
                    let (a, b) = (x[i * w + j], y[i * w + j]);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let (mx, my) = (sx / n, sy / n);
            let vx = (sxx / n - mx * mx).max(0.0);
            let vy = (syy / n - my * my).max(0.0);
            let cxy = sxy / n - mx * my;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

/// Super-resolution image `⟦B1, B2, A3⟧` from a joint-Gauss solution.
pub fn estimate_sri(a: &KruskalFactors, b: &KruskalFactors) -> Result<DenseTensor> {
    if a.order() != 3 || b.order() != 3 {
        return shape_err("image estimate needs order-3 factor sets");
    }
    let f = KruskalFactors::new(vec![b.factor(0).clone(), b.factor(1).clone(), a.factor(2).clone()])?;
    Ok(kruskal_reconstruct(&f))
}
