//! Proximal operators for the block subproblems.
//!
//! Solver code passes the quadratic weight `tau`; a block update solves
//! `argmin_x f(x) + (tau/2)‖x − v‖²`. For `f = μ‖x − b‖₁` this is the
//! componentwise soft threshold around `b` with threshold `μ/tau`.

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::tensor::Matrix;

/// Componentwise `argmin_x t|x − b| + ½(x − v)²`.
///
/// Ties (`|v − b| == t`) fall in the middle case and return `b`.
pub fn prox_l1_offset(v: &[f64], b: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(format!("threshold must be positive, got {t}")));
    }
    if v.len() != b.len() {
        return shape_err(format!("prox_l1_offset: {} vs {}", v.len(), b.len()));
    }
    Ok(v.iter().zip(b).map(|(&x, &c)| soft_offset(x, c, t)).collect())
}

#[inline]
fn soft_offset(x: f64, b: f64, t: f64) -> f64 {
    if x < b - t {
        x + t
    } else if x <= b + t {
        b
    } else {
        x - t
    }
}

/// One quadratic piece of a block's coupling restriction.
#[derive(Clone, Debug, PartialEq)]
pub enum QuadraticTerm {
    /// `weight · ‖C X − D‖_F²`; a missing coefficient means `C = I`.
    Tether {
        weight: f64,
        coefficient: Option<Matrix>,
        target: Matrix,
    },
    /// `weight · ‖X‖_F²`
    Ridge { weight: f64 },
}

impl QuadraticTerm {
    pub fn tether(weight: f64, coefficient: Option<Matrix>, target: Matrix) -> Self {
        QuadraticTerm::Tether {
            weight,
            coefficient,
            target,
        }
    }

    pub fn ridge(weight: f64) -> Self {
        QuadraticTerm::Ridge { weight }
    }

    pub fn weight(&self) -> f64 {
        match self {
            QuadraticTerm::Tether { weight, .. } | QuadraticTerm::Ridge { weight } => *weight,
        }
    }

    pub fn value(&self, x: &Matrix) -> Result<f64> {
        match self {
            QuadraticTerm::Tether {
                weight,
                coefficient,
                target,
            } => {
                let cx = match coefficient {
                    Some(c) => c.matmul(x)?,
                    None => x.clone(),
                };
                Ok(weight * cx.sub(target)?.frobenius_norm_sq())
            }
            QuadraticTerm::Ridge { weight } => Ok(weight * x.frobenius_norm_sq()),
        }
    }
}

/// The coupling term restricted to one block.
#[derive(Clone, Debug, PartialEq)]
pub enum ProxFunction {
    Zero,
    /// `weight · ‖vec(X − offset)‖₁`
    L1Offset { offset: Matrix, weight: f64 },
    /// Sum of quadratic tethers and ridges.
    Quadratic(Vec<QuadraticTerm>),
}

impl ProxFunction {
    pub fn value(&self, x: &Matrix) -> Result<f64> {
        prox_value(self, x)
    }

    /// `argmin_X f(X) + (tau/2)‖X − v‖²`
    pub fn prox(&self, v: &Matrix, tau: f64) -> Result<Matrix> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::InvalidArgument(format!("prox weight must be positive, got {tau}")));
        }
        match self {
            ProxFunction::Zero => Ok(v.clone()),
            ProxFunction::L1Offset { offset, weight } => {
                check_weight(*weight)?;
                if offset.rows() != v.rows() || offset.cols() != v.cols() {
                    return shape_err("l1 offset does not match block shape");
                }
                if *weight == 0.0 {
                    return Ok(v.clone());
                }
                let data = prox_l1_offset(v.data(), offset.data(), weight / tau)?;
                Matrix::new(v.rows(), v.cols(), data)
            }
            ProxFunction::Quadratic(terms) => prox_quadratic_block(v, terms, tau),
        }
    }
}

fn check_weight(w: f64) -> Result<()> {
    if w >= 0.0 && w.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("weights must be finite and nonnegative, got {w}")))
    }
}

pub fn prox_value(p: &ProxFunction, x: &Matrix) -> Result<f64> {
    match p {
        ProxFunction::Zero => Ok(0.0),
        ProxFunction::L1Offset { offset, weight } => {
            if offset.rows() != x.rows() || offset.cols() != x.cols() {
                return shape_err("l1 offset does not match block shape");
            }
            let s: f64 = x
                .data()
                .iter()
                .zip(offset.data())
                .map(|(a, b)| (a - b).abs())
                .sum();
            Ok(weight * s)
        }
        ProxFunction::Quadratic(terms) => terms.iter().map(|t| t.value(x)).sum(),
    }
}

/// Assembles `S = tau·I + Σ 2w CᵀC` and `R = tau·v + Σ 2w CᵀD`.
fn normal_equations(v: &Matrix, terms: &[QuadraticTerm], tau: f64) -> Result<(Matrix, Matrix)> {
    let n = v.rows();
    let mut system = Matrix::identity(n).scale(tau);
    let mut rhs = v.scale(tau);
    for term in terms {
        check_weight(term.weight())?;
        match term {
            QuadraticTerm::Tether {
                weight,
                coefficient,
                target,
            } => {
                let w2 = 2.0 * weight;
                match coefficient {
                    Some(c) => {
                        if c.cols() != n || target.rows() != c.rows() || target.cols() != v.cols() {
                            return shape_err(format!(
                                "tether C {}x{}, D {}x{} against block {}x{}",
                                c.rows(),
                                c.cols(),
                                target.rows(),
                                target.cols(),
                                n,
                                v.cols()
                            ));
                        }
                        system = system.add_scaled(w2, &c.gram())?;
                        rhs = rhs.add_scaled(w2, &c.tmatmul(target)?)?;
                    }
                    None => {
                        if target.rows() != n || target.cols() != v.cols() {
                            return shape_err("tether target does not match block shape");
                        }
                        system = system.add_scaled(w2, &Matrix::identity(n))?;
                        rhs = rhs.add_scaled(w2, target)?;
                    }
                }
            }
            QuadraticTerm::Ridge { weight } => {
                system = system.add_scaled(2.0 * weight, &Matrix::identity(n))?;
            }
        }
    }
    Ok((system, rhs))
}

/// Solves `min_X Σ w_i‖C_i X − D_i‖² + (tau/2)‖X − v‖²` through its SPD
/// normal equations with a Cholesky factorization.
pub fn prox_quadratic_block(v: &Matrix, terms: &[QuadraticTerm], tau: f64) -> Result<Matrix> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::InvalidArgument(format!("prox weight must be positive, got {tau}")));
    }
    if !v.is_finite() {
        return Err(Error::NonFinite("prox input".into()));
    }
    if terms.is_empty() {
        return Ok(v.clone());
    }
    let (system, rhs) = normal_equations(v, terms, tau)?;
    if !system.is_finite() || !rhs.is_finite() {
        return Err(Error::NonFinite("quadratic prox data".into()));
    }
    let n = v.rows();
    let s = DMatrix::from_row_slice(n, n, system.data());
    let r = DMatrix::from_row_slice(n, v.cols(), rhs.data());
    let chol = s.cholesky().ok_or(Error::NotPositiveDefinite)?;
    let x = chol.solve(&r);
    Ok(Matrix::from_fn(n, v.cols(), |i, j| x[(i, j)]))
}

/// `‖S X − R‖_F` for the normal equations of [`prox_quadratic_block`].
pub fn prox_quadratic_residual(
    v: &Matrix,
    terms: &[QuadraticTerm],
    tau: f64,
    x: &Matrix,
) -> Result<f64> {
    let (system, rhs) = normal_equations(v, terms, tau)?;
    Ok(system.matmul(x)?.sub(&rhs)?.frobenius_norm())
}
