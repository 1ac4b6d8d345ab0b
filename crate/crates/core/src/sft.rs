//! Affinity graphs over a batch and the spectral feature transformation.
//!
//! For a batch `X` (rows `x_i`) and temperature `σ`:
//!
//! ```text
//! w_ij = exp(cos(x_i, x_j) / σ)          affinity
//! T    = D⁻¹ W,  d_i = Σ_j w_ij           row-stochastic transition matrix
//! Y    = T X                              transformed features
//! ```
//!
//! `T` is computed as a row-wise softmax of `cos / σ` with the row maximum
//! subtracted, so small temperatures never overflow. The backward pass is
//! the closed-form chain rule through the matmul, the row normalization, the
//! exponential and the cosine.

use serde::{Deserialize, Serialize};

use crate::error::{Result, SftError};
use crate::features::FeatureMatrix;
use crate::matrix::{dot, Matrix};

/// Symmetric non-negative `n × n` edge weights, usually `exp(cos/σ)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffinityMatrix {
    weights: Matrix,
    sigma: Option<f64>,
}

impl AffinityMatrix {
    /// Wraps arbitrary graph weights. They must be square, symmetric to
    /// 1e-12, non-negative and finite, and every row must have positive mass.
    pub fn from_weights(weights: Matrix) -> Result<Self> {
        let (n, m) = weights.shape();
        if n != m || n == 0 {
            return Err(SftError::Shape(format!(
                "affinity must be square and non-empty, got {n}x{m}"
            )));
        }
        for i in 0..n {
            for j in 0..n {
                let w = weights[(i, j)];
                if !w.is_finite() || w < 0.0 {
                    return Err(SftError::Shape(format!(
                        "weight ({i},{j}) = {w} is not a finite non-negative number"
                    )));
                }
                let tol = 1e-12 * w.abs().max(weights[(j, i)].abs()).max(1.0);
                if (w - weights[(j, i)]).abs() > tol {
                    return Err(SftError::Shape(format!("weights not symmetric at ({i},{j})")));
                }
            }
            if weights.row(i).iter().sum::<f64>() <= 0.0 {
                return Err(SftError::Shape(format!("row {i} has no mass")));
            }
        }
        Ok(AffinityMatrix { weights, sigma: None })
    }

    pub fn n(&self) -> usize {
        self.weights.rows()
    }

    pub fn weights(&self) -> &Matrix {
        &self.weights
    }

    /// Temperature the matrix was built with, if it came from [`affinity`].
    pub fn sigma(&self) -> Option<f64> {
        self.sigma
    }

    /// Row sums `d_i`.
    pub fn degrees(&self) -> Vec<f64> {
        self.weights.row_sums()
    }

    /// `vol(X)`, the sum of all weights.
    pub fn total_volume(&self) -> f64 {
        self.weights.sum()
    }
}

/// Row-stochastic transition matrix of the random walk on an affinity graph.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix(Matrix);

impl StochasticMatrix {
    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn matrix(&self) -> &Matrix {
        &self.0
    }

    pub fn into_matrix(self) -> Matrix {
        self.0
    }
}

pub(crate) fn check_sigma(sigma: f64) -> Result<()> {
    if sigma > 0.0 && sigma.is_finite() {
        Ok(())
    } else {
        Err(SftError::InvalidSigma(sigma))
    }
}

/// Unit-norm rows and the original norms. Zero rows are an error.
pub(crate) fn normalize_rows(x: &Matrix) -> Result<(Matrix, Vec<f64>)> {
    let mut u = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..x.rows() {
        let row = u.row_mut(i);
        let r = dot(row, row).sqrt();
        if r == 0.0 {
            return Err(SftError::ZeroNormRow { row: i });
        }
        row.iter_mut().for_each(|v| *v /= r);
        norms.push(r);
    }
    Ok((u, norms))
}

/// `U Uᵀ` with the upper triangle mirrored, so the result is exactly symmetric.
pub(crate) fn gram_symmetric(u: &Matrix) -> Matrix {
    let n = u.rows();
    let mut c = Matrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot(u.row(i), u.row(j));
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
    c
}

/// Gradient with respect to `X` of a loss on the cosine matrix `C = U Uᵀ`,
/// where `u_i = x_i / r_i`.
pub(crate) fn cosine_backward(unit: &Matrix, norms: &[f64], grad_c: &Matrix) -> Matrix {
    // dU = (dC + dCᵀ) U
    let mut sym = grad_c.transpose();
    sym.add_assign(grad_c);
    unit_backward(unit, norms, sym.matmul(unit))
}

/// Pulls a gradient on `u_i = x_i / r_i` back to `x_i`.
pub(crate) fn unit_backward(unit: &Matrix, norms: &[f64], mut grad_unit: Matrix) -> Matrix {
    for (i, &r) in norms.iter().enumerate() {
        let u = unit.row(i);
        let g = grad_unit.row_mut(i);
        let proj = dot(u, g);
        for (gk, &uk) in g.iter_mut().zip(u) {
            *gk = (*gk - uk * proj) / r;
        }
    }
    grad_unit
}

/// Cosine similarity matrix of the rows of `x`.
pub fn cosine_matrix(x: &FeatureMatrix) -> Result<Matrix> {
    let (u, _) = normalize_rows(x.matrix())?;
    Ok(gram_symmetric(&u))
}

/// Row-wise softmax of `scores / sigma` with the row maximum subtracted.
pub(crate) fn softmax_rows(scores: &Matrix, sigma: f64) -> Matrix {
    let mut t = scores.clone();
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = ((*v - max) / sigma).exp();
            total += *v;
        }
        row.iter_mut().for_each(|v| *v /= total);
    }
    t
}

/// `w_ij = exp(cos(x_i, x_j) / σ)`.
pub fn affinity(x: &FeatureMatrix, sigma: f64) -> Result<AffinityMatrix> {
    check_sigma(sigma)?;
    let mut w = cosine_matrix(x)?;
    for v in w.as_mut_slice() {
        *v = (*v / sigma).exp();
    }
    if !w.is_finite() {
        // exp(1/σ) overflows below σ ≈ 1/709
        return Err(SftError::InvalidSigma(sigma));
    }
    Ok(AffinityMatrix {
        weights: w,
        sigma: Some(sigma),
    })
}

/// `T = D⁻¹ W`.
pub fn transition(w: &AffinityMatrix) -> StochasticMatrix {
    let mut t = w.weights.clone();
    for i in 0..t.rows() {
        let row = t.row_mut(i);
        let d: f64 = row.iter().sum();
        row.iter_mut().for_each(|v| *v /= d);
    }
    StochasticMatrix(t)
}

/// Transition matrix of `affinity(x, σ)` built directly as a row softmax.
pub fn transition_from_features(x: &FeatureMatrix, sigma: f64) -> Result<StochasticMatrix> {
    check_sigma(sigma)?;
    Ok(StochasticMatrix(softmax_rows(&cosine_matrix(x)?, sigma)))
}

/// Which factors of `Y = T(X)·X` the backward pass differentiates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SftGradient {
    /// Through both `T` (affinity path) and the `X` factor.
    #[default]
    Full,
    /// `T` is treated as a constant: `dX = Tᵀ G`.
    FeaturesOnly,
}

/// Forward state of one transform, reused by the backward pass.
#[derive(Clone, Debug)]
pub struct SftForward {
    x: Matrix,
    unit: Matrix,
    norms: Vec<f64>,
    transition: Matrix,
    sigma: f64,
    output: Matrix,
}

impl SftForward {
    pub fn new(x: &Matrix, sigma: f64) -> Result<Self> {
        check_sigma(sigma)?;
        let (unit, norms) = normalize_rows(x)?;
        let transition = softmax_rows(&gram_symmetric(&unit), sigma);
        let output = transition.matmul(x);
        Ok(SftForward {
            x: x.clone(),
            unit,
            norms,
            transition,
            sigma,
            output,
        })
    }

    pub fn output(&self) -> &Matrix {
        &self.output
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    /// `dL/dX` given `dL/dY`.
    pub fn backward(&self, grad_out: &Matrix, mode: SftGradient) -> Matrix {
        assert_eq!(grad_out.shape(), self.x.shape(), "grad_out shape mismatch");
        let t = &self.transition;
        let mut grad_x = t.t_matmul(grad_out);
        if mode == SftGradient::FeaturesOnly {
            return grad_x;
        }

        let n = t.rows();
        // dT = G Xᵀ, then through the row softmax: dS_ij = T_ij (dT_ij - Σ_k T_ik dT_ik)
        let grad_t = grad_out.matmul_t(&self.x);
        let mut grad_c = Matrix::zeros(n, n);
        for i in 0..n {
            let t_row = t.row(i);
            let g_row = grad_t.row(i);
            let inner = dot(t_row, g_row);
            for j in 0..n {
                grad_c[(i, j)] = t_row[j] * (g_row[j] - inner) / self.sigma;
            }
        }
        grad_x.add_assign(&cosine_backward(&self.unit, &self.norms, &grad_c));
        grad_x
    }
}

/// `Y = T X`: each row moves to the affinity-weighted mean of the batch.
pub fn sft_transform(x: &FeatureMatrix, sigma: f64) -> Result<FeatureMatrix> {
    let fwd = SftForward::new(x.matrix(), sigma)?;
    FeatureMatrix::from_matrix(fwd.output)
}

/// Gradient of a scalar loss with respect to `X`, given its gradient with
/// respect to `sft_transform(X, σ)`. Differentiates through `T` as well.
pub fn sft_backward(x: &FeatureMatrix, sigma: f64, grad_out: &FeatureMatrix) -> Result<FeatureMatrix> {
    sft_backward_with(x, sigma, grad_out, SftGradient::Full)
}

pub fn sft_backward_with(
    x: &FeatureMatrix,
    sigma: f64,
    grad_out: &FeatureMatrix,
    mode: SftGradient,
) -> Result<FeatureMatrix> {
    if grad_out.shape() != x.shape() {
        return Err(SftError::Shape(format!(
            "grad_out is {:?}, features are {:?}",
            grad_out.shape(),
            x.shape()
        )));
    }
    let fwd = SftForward::new(x.matrix(), sigma)?;
    FeatureMatrix::from_matrix(fwd.backward(grad_out.matrix(), mode))
}
