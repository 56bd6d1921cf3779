//! Linear dimensionality reduction onto the top principal directions.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::Matrix;

/// Default reduced dimension.
pub const DEFAULT_REDUCED_DIM: usize = 10;

#[derive(Debug, Error, PartialEq)]
pub enum ReducerError {
    #[error("zero variance: all rows are identical")]
    ZeroVariance,
    #[error("need more rows than output dimensions (rows {rows}, output_dim {output_dim})")]
    TooFewRows { rows: usize, output_dim: usize },
    #[error("output_dim {output_dim} must be in 1..={input_dim}")]
    BadOutputDim { output_dim: usize, input_dim: usize },
    #[error("input has {got} columns, reducer expects {expected}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("non-finite embedding values")]
    NonFinite,
}

/// Anything mapping a `d`-vector to a `d'`-vector. The clustering pipeline only
/// needs this surface, so nonlinear reducers can be substituted.
pub trait Reduce {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    fn reduce(&self, x: &[f64]) -> Result<Vec<f64>, ReducerError>;

    fn reduce_all(&self, x: &Matrix) -> Result<Matrix, ReducerError> {
        let mut out = Matrix::zeros(x.rows(), self.output_dim());
        for (i, row) in x.iter_rows().enumerate() {
            out.row_mut(i).copy_from_slice(&self.reduce(row)?);
        }
        Ok(out)
    }
}

/// Centered orthonormal projection: `reduce(x) = basis · (x - center)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reducer {
    pub input_dim: usize,
    pub output_dim: usize,
    /// `output_dim × input_dim`, row-major, orthonormal rows.
    pub basis: Vec<f64>,
    pub center: Vec<f64>,
}

impl Reducer {
    pub fn basis_row(&self, k: usize) -> &[f64] {
        &self.basis[k * self.input_dim..(k + 1) * self.input_dim]
    }

    /// `max |B·Bᵀ − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.output_dim {
            for j in 0..self.output_dim {
                let d: f64 = self
                    .basis_row(i)
                    .iter()
                    .zip(self.basis_row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((d - target).abs());
            }
        }
        worst
    }
}

impl Reduce for Reducer {
    fn input_dim(&self) -> usize {
        self.input_dim
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }

    fn reduce(&self, x: &[f64]) -> Result<Vec<f64>, ReducerError> {
        if x.len() != self.input_dim {
            return Err(ReducerError::WidthMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        let centered: Vec<f64> = x.iter().zip(&self.center).map(|(a, c)| a - c).collect();
        Ok((0..self.output_dim)
            .map(|k| {
                self.basis_row(k)
                    .iter()
                    .zip(&centered)
                    .map(|(b, v)| b * v)
                    .sum()
            })
            .collect())
    }
}

/// A fitted reducer plus the variance captured by each kept direction.
#[derive(Debug, Clone)]
pub struct PcaFit {
    pub reducer: Reducer,
    /// Sample variance along each kept direction, descending.
    pub component_variance: Vec<f64>,
    /// Total sample variance (trace of the covariance).
    pub total_variance: f64,
}

impl PcaFit {
    pub fn captured_fraction(&self) -> f64 {
        self.component_variance.iter().sum::<f64>() / self.total_variance
    }
}

/// Fit the projection onto the top `output_dim` principal directions. Each
/// basis vector is signed so that its largest-magnitude entry is positive
/// (first such entry on ties).
pub fn fit_pca(embeddings: &Matrix, output_dim: usize) -> Result<PcaFit, ReducerError> {
    let (n, d) = (embeddings.rows(), embeddings.cols());
    if output_dim == 0 || output_dim > d {
        return Err(ReducerError::BadOutputDim {
            output_dim,
            input_dim: d,
        });
    }
    if n <= output_dim {
        return Err(ReducerError::TooFewRows {
            rows: n,
            output_dim,
        });
    }
    if !embeddings.all_finite() {
        return Err(ReducerError::NonFinite);
    }

    let mut center = vec![0.0; d];
    for row in embeddings.iter_rows() {
        for (c, v) in center.iter_mut().zip(row) {
            *c += v;
        }
    }
    center.iter_mut().for_each(|c| *c /= n as f64);

    let mut centered = embeddings.clone();
    let mut any_spread = false;
    for i in 0..n {
        for (v, c) in centered.row_mut(i).iter_mut().zip(&center) {
            *v -= c;
            any_spread |= *v != 0.0;
        }
    }
    if !any_spread {
        return Err(ReducerError::ZeroVariance);
    }

    let xc = centered.to_nalgebra();
    let cov: DMatrix<f64> = (xc.transpose() * &xc) / (n as f64 - 1.0);
    let total_variance = cov.trace();
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    let mut basis = Vec::with_capacity(output_dim * d);
    let mut component_variance = Vec::with_capacity(output_dim);
    for &k in order.iter().take(output_dim) {
        let col = eig.eigenvectors.column(k);
        let mut pivot = 0;
        for j in 1..d {
            if col[j].abs() > col[pivot].abs() {
                pivot = j;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        basis.extend(col.iter().map(|v| v * sign));
        component_variance.push(eig.eigenvalues[k].max(0.0));
    }

    Ok(PcaFit {
        reducer: Reducer {
            input_dim: d,
            output_dim,
            basis,
            center,
        },
        component_variance,
        total_variance,
    })
}

pub fn fit_reducer(embeddings: &Matrix, output_dim: usize) -> Result<Reducer, ReducerError> {
    fit_pca(embeddings, output_dim).map(|f| f.reducer)
}
