//! Coupled CP objectives `J(A, B) = F(A) + λ·G(B) + H(A, B)`.
//!
//! `F` and `G` are CP fit terms `½‖T − ⟦factors⟧‖²` on the two data tensors.
//! `H` couples the two factor sets, either through an ℓ1 difference between
//! one pair of factors (Laplacian coupling) or through the joint-Gauss
//! quadratic form used for hyperspectral super-resolution.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::prox::{ProxFunction, QuadraticTerm};
use crate::tensor::{kruskal_reconstruct, mttkrp, DenseTensor, KruskalFactors, Matrix};

/// Smallest Lipschitz estimate handed to the stepsize rules.
pub const LIPSCHITZ_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

/// One factor block: `side` plus a 0-based factor index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BlockId {
    pub side: Side,
    pub index: usize,
}

impl BlockId {
    pub const fn a(index: usize) -> Self {
        Self { side: Side::A, index }
    }

    pub const fn b(index: usize) -> Self {
        Self { side: Side::B, index }
    }
}

impl std::fmt::Display for BlockId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self.side {
            Side::A => "A",
            Side::B => "B",
        };
        write!(f, "{s}{}", self.index + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Coupling {
    /// `mu · ‖vec(A_pair.0 − B_pair.1)‖₁`
    LaplacianL1 { mu: f64, pair: (usize, usize) },
    /// `w1(‖A1 − P1B1‖² + ‖A2 − P2B2‖² + ‖B3 − PmA3‖²) + w2(‖B1‖² + ‖B2‖² + ‖A3‖²)`
    JointGauss {
        w1: f64,
        w2: f64,
        p1: Matrix,
        p2: Matrix,
        pm: Matrix,
    },
}

/// One instance of the coupled decomposition problem.
#[derive(Clone, Debug)]
pub struct CoupledProblem {
    pub y: DenseTensor,
    pub y_prime: DenseTensor,
    pub rank_a: usize,
    pub rank_b: usize,
    pub coupling: Coupling,
    /// Weight of the `G` fit term.
    pub lambda: f64,
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if v >= 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{name} must be finite and nonnegative, got {v}")))
    }
}

impl CoupledProblem {
    pub fn new(
        y: DenseTensor,
        y_prime: DenseTensor,
        rank_a: usize,
        rank_b: usize,
        coupling: Coupling,
        lambda: f64,
    ) -> Result<Self> {
        if rank_a == 0 || rank_b == 0 {
            return Err(Error::InvalidArgument("ranks must be positive".into()));
        }
        nonneg("lambda", lambda)?;
        match &coupling {
            Coupling::LaplacianL1 { mu, pair: (pa, pb) } => {
                nonneg("mu", *mu)?;
                if *pa >= y.order() || *pb >= y_prime.order() {
                    return Err(Error::InvalidArgument(format!(
                        "coupled pair ({pa}, {pb}) out of range"
                    )));
                }
                if y.shape()[*pa] != y_prime.shape()[*pb] || rank_a != rank_b {
                    return shape_err(format!(
                        "coupled factors A{} ({}x{rank_a}) and B{} ({}x{rank_b}) differ in shape",
                        pa + 1,
                        y.shape()[*pa],
                        pb + 1,
                        y_prime.shape()[*pb]
                    ));
                }
            }
            Coupling::JointGauss { w1, w2, p1, p2, pm } => {
                nonneg("w1", *w1)?;
                nonneg("w2", *w2)?;
                if y.order() != 3 || y_prime.order() != 3 {
                    return shape_err("joint-Gauss coupling needs two order-3 tensors");
                }
                if rank_a != rank_b {
                    return shape_err("joint-Gauss coupling needs equal ranks");
                }
                let (h, m) = (y.shape(), y_prime.shape());
                let expect = [
                    ("P1", p1, h[0], m[0]),
                    ("P2", p2, h[1], m[1]),
                    ("Pm", pm, m[2], h[2]),
                ];
                for (name, p, rows, cols) in expect {
                    if p.rows() != rows || p.cols() != cols {
                        return shape_err(format!(
                            "{name} is {}x{}, expected {rows}x{cols}",
                            p.rows(),
                            p.cols()
                        ));
                    }
                }
            }
        }
        Ok(Self {
            y,
            y_prime,
            rank_a,
            rank_b,
            coupling,
            lambda,
        })
    }

    /// Laplacian coupling between `A3` and `B1`, with `λ = 1`.
    pub fn laplacian(y: DenseTensor, y_prime: DenseTensor, rank: usize, mu: f64) -> Result<Self> {
        Self::new(y, y_prime, rank, rank, Coupling::LaplacianL1 { mu, pair: (2, 0) }, 1.0)
    }

    pub fn data(&self, side: Side) -> &DenseTensor {
        match side {
            Side::A => &self.y,
            Side::B => &self.y_prime,
        }
    }

    pub fn rank(&self, side: Side) -> usize {
        match side {
            Side::A => self.rank_a,
            Side::B => self.rank_b,
        }
    }

    /// Multiplier of the fit term on `side`: 1 for `F`, `λ` for `G`.
    pub fn fit_weight(&self, side: Side) -> f64 {
        match side {
            Side::A => 1.0,
            Side::B => self.lambda,
        }
    }

    pub fn check_iterate(&self, a: &KruskalFactors, b: &KruskalFactors) -> Result<()> {
        for (side, f) in [(Side::A, a), (Side::B, b)] {
            if f.shape() != self.data(side).shape() || f.rank() != self.rank(side) {
                return shape_err(format!(
                    "side {side:?} factors {:?} rank {} do not match data {:?} rank {}",
                    f.shape(),
                    f.rank(),
                    self.data(side).shape(),
                    self.rank(side)
                ));
            }
        }
        Ok(())
    }

    /// `J(A, B)`
    pub fn objective(&self, a: &KruskalFactors, b: &KruskalFactors) -> Result<f64> {
        Ok(cp_fit_value(&self.y, a)?
            + self.lambda * cp_fit_value(&self.y_prime, b)?
            + coupling_value(self, a, b)?)
    }

    /// Gradient of the weighted fit term on `side` with respect to factor `mode`.
    pub fn fit_gradient(&self, side: Side, f: &KruskalFactors, mode: usize) -> Result<Matrix> {
        Ok(cp_fit_gradient_block(self.data(side), f, mode)?.scale(self.fit_weight(side)))
    }

    /// Lipschitz estimate of [`Self::fit_gradient`], floored at [`LIPSCHITZ_FLOOR`].
    pub fn fit_lipschitz(&self, side: Side, f: &KruskalFactors, mode: usize) -> f64 {
        (self.fit_weight(side) * block_lipschitz_estimate(f, mode)).max(LIPSCHITZ_FLOOR)
    }
}

/// `½‖T − ⟦f⟧‖_F²`
pub fn cp_fit_value(t: &DenseTensor, f: &KruskalFactors) -> Result<f64> {
    if f.shape() != t.shape() {
        return shape_err(format!("factors {:?} vs tensor {:?}", f.shape(), t.shape()));
    }
    Ok(0.5 * t.distance_sq(&kruskal_reconstruct(f))?)
}

/// `A_n (H_nᵀH_n) − T_(n) H_n`, with `H_nᵀH_n` taken as a Hadamard product of Grams.
pub fn cp_fit_gradient_block(t: &DenseTensor, f: &KruskalFactors, mode: usize) -> Result<Matrix> {
    let m = mttkrp(t, f, mode)?;
    f.factor(mode).matmul(&f.hadamard_gram(mode))?.sub(&m)
}

/// `‖H_n‖_F² = trace(H_nᵀH_n)`, an upper bound on the spectral norm that
/// governs the block gradient's Lipschitz constant. Floored at
/// [`LIPSCHITZ_FLOOR`].
pub fn block_lipschitz_estimate(f: &KruskalFactors, mode: usize) -> f64 {
    let norms: Vec<Vec<f64>> = f
        .factors()
        .iter()
        .map(|a| (0..a.cols()).map(|c| a.column(c).iter().map(|v| v * v).sum()).collect())
        .collect();
    let trace: f64 = (0..f.rank())
        .map(|c| {
            norms
                .iter()
                .enumerate()
                .filter(|&(k, _)| k != mode)
                .map(|(_, n)| n[c])
                .product::<f64>()
        })
        .sum();
    trace.max(LIPSCHITZ_FLOOR)
}

pub fn coupling_value(p: &CoupledProblem, a: &KruskalFactors, b: &KruskalFactors) -> Result<f64> {
    p.check_iterate(a, b)?;
    match &p.coupling {
        Coupling::LaplacianL1 { mu, pair: (pa, pb) } => {
            let d = a.factor(*pa).sub(b.factor(*pb))?;
            Ok(mu * d.data().iter().map(|v| v.abs()).sum::<f64>())
        }
        Coupling::JointGauss { w1, w2, p1, p2, pm } => {
            let t1 = a.factor(0).sub(&p1.matmul(b.factor(0))?)?.frobenius_norm_sq();
            let t2 = a.factor(1).sub(&p2.matmul(b.factor(1))?)?.frobenius_norm_sq();
            let t3 = b.factor(2).sub(&pm.matmul(a.factor(2))?)?.frobenius_norm_sq();
            let r = b.factor(0).frobenius_norm_sq()
                + b.factor(1).frobenius_norm_sq()
                + a.factor(2).frobenius_norm_sq();
            Ok(w1 * (t1 + t2 + t3) + w2 * r)
        }
    }
}

/// `H` restricted to block `blk`, with every other block fixed at its value in `(a, b)`.
pub fn block_prox(
    p: &CoupledProblem,
    blk: BlockId,
    a: &KruskalFactors,
    b: &KruskalFactors,
) -> Result<ProxFunction> {
    let order = p.data(blk.side).order();
    if blk.index >= order {
        return Err(Error::InvalidArgument(format!("block {blk} out of range")));
    }
    Ok(match &p.coupling {
        Coupling::LaplacianL1 { mu, pair: (pa, pb) } => match blk.side {
            Side::A if blk.index == *pa => ProxFunction::L1Offset {
                offset: b.factor(*pb).clone(),
                weight: *mu,
            },
            Side::B if blk.index == *pb => ProxFunction::L1Offset {
                offset: a.factor(*pa).clone(),
                weight: *mu,
            },
            _ => ProxFunction::Zero,
        },
        Coupling::JointGauss { w1, w2, p1, p2, pm } => {
            let (w1, w2) = (*w1, *w2);
            let terms = match (blk.side, blk.index) {
                (Side::A, 0) => vec![QuadraticTerm::tether(w1, None, p1.matmul(b.factor(0))?)],
                (Side::A, 1) => vec![QuadraticTerm::tether(w1, None, p2.matmul(b.factor(1))?)],
                (Side::A, _) => vec![
                    QuadraticTerm::tether(w1, Some(pm.clone()), b.factor(2).clone()),
                    QuadraticTerm::ridge(w2),
                ],
                (Side::B, 0) => vec![
                    QuadraticTerm::tether(w1, Some(p1.clone()), a.factor(0).clone()),
                    QuadraticTerm::ridge(w2),
                ],
                (Side::B, 1) => vec![
                    QuadraticTerm::tether(w1, Some(p2.clone()), a.factor(1).clone()),
                    QuadraticTerm::ridge(w2),
                ],
                (Side::B, _) => vec![QuadraticTerm::tether(w1, None, pm.matmul(a.factor(2))?)],
            };
            ProxFunction::Quadratic(terms)
        }
    })
}

/// Smooth-term gradient and coupling restriction for block `blk` at `(a, b)`.
pub fn block_partials(
    p: &CoupledProblem,
    blk: BlockId,
    a: &KruskalFactors,
    b: &KruskalFactors,
) -> Result<(Matrix, ProxFunction)> {
    p.check_iterate(a, b)?;
    let f = match blk.side {
        Side::A => a,
        Side::B => b,
    };
    let prox = block_prox(p, blk, a, b)?;
    let grad = p.fit_gradient(blk.side, f, blk.index)?;
    Ok((grad, prox))
}
