//! Ridge (closed form) and lasso (coordinate descent) on column-centered data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

use super::ProbeError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// `‖(XᶜᵀXᶜ + λI)w − Xᶜᵀyᶜ‖∞` after solving; `None` for lasso.
    pub normal_residual: Option<f64>,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn predict(&self, x: &Matrix) -> Vec<f64> {
        x.iter_rows().map(|r| self.predict_row(r)).collect()
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

pub fn mse(predicted: &[f64], truth: &[f64]) -> f64 {
    let s: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    s / truth.len() as f64
}

struct Centered {
    xc: DMatrix<f64>,
    yc: DVector<f64>,
    x_mean: DVector<f64>,
    y_mean: f64,
}

fn center(x: &Matrix, y: &[f64]) -> Result<Centered, ProbeError> {
    if x.rows() == 0 || x.cols() == 0 {
        return Err(ProbeError::Empty);
    }
    if x.rows() != y.len() {
        return Err(ProbeError::ShapeMismatch(format!(
            "{} rows but {} targets",
            x.rows(),
            y.len()
        )));
    }
    if !x.all_finite() || !y.iter().all(|v| v.is_finite()) {
        return Err(ProbeError::NonFinite);
    }
    let n = x.rows() as f64;
    let mut xc = x.to_nalgebra();
    let x_mean = DVector::from_iterator(xc.ncols(), xc.column_iter().map(|c| c.sum() / n));
    for (j, mut col) in xc.column_iter_mut().enumerate() {
        col.add_scalar_mut(-x_mean[j]);
    }
    let y_mean = y.iter().sum::<f64>() / n;
    let yc = DVector::from_iterator(y.len(), y.iter().map(|v| v - y_mean));
    Ok(Centered {
        xc,
        yc,
        x_mean,
        y_mean,
    })
}

fn finish(c: &Centered, w: DVector<f64>, normal_residual: Option<f64>) -> LinearModel {
    let intercept = c.y_mean - c.x_mean.dot(&w);
    LinearModel {
        weights: w.iter().copied().collect(),
        intercept,
        normal_residual,
    }
}

/// Solves `(XᶜᵀXᶜ + λI)w = Xᶜᵀyᶜ`. Cholesky when the system is positive
/// definite, SVD pseudo-inverse otherwise (λ = 0 with collinear columns gives
/// the minimum-norm least-squares solution). Two rounds of iterative
/// refinement follow.
pub fn fit_ridge(x: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel, ProbeError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ProbeError::BadLambda(lambda));
    }
    let c = center(x, y)?;
    let p = c.xc.ncols();
    let mut g = c.xc.tr_mul(&c.xc);
    for i in 0..p {
        g[(i, i)] += lambda;
    }
    let rhs = c.xc.tr_mul(&c.yc);

    let solve: Box<dyn Fn(&DVector<f64>) -> DVector<f64>> = match (lambda > 0.0)
        .then(|| g.clone().cholesky())
        .flatten()
    {
        Some(chol) => Box::new(move |b: &DVector<f64>| chol.solve(b)),
        None => {
            let svd = g.clone().svd(true, true);
            let smax = svd.singular_values.max();
            let eps = smax * 1e-12 * p as f64;
            let pinv = svd
                .pseudo_inverse(eps)
                .unwrap_or_else(|_| DMatrix::zeros(p, p));
            Box::new(move |b: &DVector<f64>| &pinv * b)
        }
    };

    let mut w = solve(&rhs);
    for _ in 0..2 {
        let r = &rhs - &g * &w;
        w += solve(&r);
    }
    let residual = (&g * &w - &rhs).amax();
    Ok(finish(&c, w, Some(residual)))
}

/// Minimizes `(1/2n)‖yᶜ − Xᶜw‖² + λ‖w‖₁` by cyclic coordinate descent.
pub fn fit_lasso(x: &Matrix, y: &[f64], lambda: f64) -> Result<LinearModel, ProbeError> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(ProbeError::BadLambda(lambda));
    }
    let c = center(x, y)?;
    let n = c.xc.nrows() as f64;
    let p = c.xc.ncols();
    let col_sq: Vec<f64> = c.xc.column_iter().map(|col| col.norm_squared() / n).collect();
    let mut w = DVector::<f64>::zeros(p);
    let mut resid = c.yc.clone();
    for _ in 0..10_000 {
        let mut max_step = 0.0_f64;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let col = c.xc.column(j);
            let rho = col.dot(&resid) / n + col_sq[j] * w[j];
            let new = rho.signum() * (rho.abs() - lambda).max(0.0) / col_sq[j];
            let step = new - w[j];
            if step != 0.0 {
                resid.axpy(-step, &col, 1.0);
                w[j] = new;
                max_step = max_step.max(step.abs() * col_sq[j].sqrt());
            }
        }
        if max_step <= 1e-10 {
            break;
        }
    }
    Ok(finish(&c, w, None))
}
