//! Multinomial logistic regression.
//!
//! Minimizes mean softmax cross-entropy plus `λ·‖W‖²` (L2) or `λ·‖W‖₁` (L1)
//! over the weights; intercepts are never penalized. The solver is FISTA:
//! accelerated proximal gradient on the cross-entropy, with both penalties
//! applied through their prox (shrinkage for L2, soft-thresholding for L1).
//! Step size: backtracking on the Lipschitz estimate, tentatively shrunk by
//! 0.8 each iteration and doubled until the sufficient-decrease condition
//! holds. Momentum restarts when the step turns against the direction of
//! travel. Iteration stops when the norm of the gradient mapping drops to
//! `tol` or after `max_iters`. Features are centered internally, which leaves
//! the optimum unchanged. Starts from zero unless warm-started; no randomness.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

use super::ProbeError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Penalty {
    None,
    L2,
    L1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRegConfig {
    pub penalty: Penalty,
    pub lambda: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        LogRegConfig {
            penalty: Penalty::None,
            lambda: 0.0,
            max_iters: 500,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegModel {
    /// `features × classes`, column-major as stored by nalgebra.
    pub weights: DMatrix<f64>,
    pub intercepts: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogRegModel {
    pub fn zeros(features: usize, classes: usize) -> Self {
        LogRegModel {
            weights: DMatrix::zeros(features, classes),
            intercepts: DVector::zeros(classes),
            iterations: 0,
            converged: false,
        }
    }

    pub fn n_features(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.weights.ncols()
    }
}

/// Design matrix split for the solver's two hot loops: columns that are
/// mostly nonzero are packed into a dense row-major block, the rest (one-hot
/// indicators) are kept as per-row nonzero lists.
struct Design {
    n: usize,
    p: usize,
    /// Original column index of each dense column.
    dense_cols: Vec<usize>,
    dense: Vec<f64>,
    sp_ptr: Vec<usize>,
    sp_col: Vec<usize>,
    sp_val: Vec<f64>,
}

impl Design {
    fn new(x: &Matrix) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let mut nnz = vec![0usize; p];
        for row in x.iter_rows() {
            for (c, v) in nnz.iter_mut().zip(row) {
                *c += usize::from(*v != 0.0);
            }
        }
        // Below a quarter nonzero, list traversal beats the dense loop.
        let is_dense: Vec<bool> = nnz.iter().map(|&c| 4 * c >= n).collect();
        let dense_cols: Vec<usize> = (0..p).filter(|&j| is_dense[j]).collect();
        let mut dense = Vec::with_capacity(n * dense_cols.len());
        let mut sp_ptr = Vec::with_capacity(n + 1);
        let (mut sp_col, mut sp_val) = (Vec::new(), Vec::new());
        sp_ptr.push(0);
        for row in x.iter_rows() {
            dense.extend(dense_cols.iter().map(|&j| row[j]));
            for (j, &v) in row.iter().enumerate() {
                if !is_dense[j] && v != 0.0 {
                    sp_col.push(j);
                    sp_val.push(v);
                }
            }
            sp_ptr.push(sp_col.len());
        }
        Design {
            n,
            p,
            dense_cols,
            dense,
            sp_ptr,
            sp_col,
            sp_val,
        }
    }

    fn sparse_row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.sp_ptr[i]..self.sp_ptr[i + 1];
        self.sp_col[r.clone()].iter().copied().zip(self.sp_val[r].iter().copied())
    }

    /// `out[i, :] = offset + x_i·W` for `W` stored `p × K` row-major.
    fn logits<const K: usize>(&self, w: &[f64], offset: &[f64], out: &mut [f64]) {
        let pd = self.dense_cols.len();
        let mut wd = Vec::with_capacity(pd * K);
        for &j in &self.dense_cols {
            wd.extend_from_slice(&w[j * K..(j + 1) * K]);
        }
        let mut off = [0.0; K];
        off.copy_from_slice(offset);
        let full = self.n / 4 * 4;
        // Four rows at a time so each weight row is loaded once per block.
        for i in (0..full).step_by(4) {
            let mut acc = [off; 4];
            let xs = &self.dense[i * pd..(i + 4) * pd];
            for (j, wj) in wd.chunks_exact(K).enumerate() {
                for r in 0..4 {
                    let xv = xs[r * pd + j];
                    for c in 0..K {
                        acc[r][c] += xv * wj[c];
                    }
                }
            }
            for (r, a) in acc.iter().enumerate() {
                out[(i + r) * K..(i + r + 1) * K].copy_from_slice(a);
            }
        }
        for i in full..self.n {
            let mut acc = off;
            let xi = &self.dense[i * pd..(i + 1) * pd];
            for (xv, wj) in xi.iter().zip(wd.chunks_exact(K)) {
                for c in 0..K {
                    acc[c] += xv * wj[c];
                }
            }
            out[i * K..(i + 1) * K].copy_from_slice(&acc);
        }
        for i in 0..self.n {
            let zi = &mut out[i * K..(i + 1) * K];
            for (j, v) in self.sparse_row(i) {
                for c in 0..K {
                    zi[c] += v * w[j * K + c];
                }
            }
        }
    }

    /// `g = Xᵀ·R`, `p × K` row-major.
    fn xtr<const K: usize>(&self, r: &[f64], g: &mut [f64]) {
        let pd = self.dense_cols.len();
        let mut gd = vec![0.0; pd * K];
        let full = self.n / 4 * 4;
        for i in (0..full).step_by(4) {
            let mut rv = [[0.0; K]; 4];
            for (b, row) in rv.iter_mut().enumerate() {
                row.copy_from_slice(&r[(i + b) * K..(i + b + 1) * K]);
            }
            let xs = &self.dense[i * pd..(i + 4) * pd];
            for (j, gj) in gd.chunks_exact_mut(K).enumerate() {
                for b in 0..4 {
                    let xv = xs[b * pd + j];
                    for c in 0..K {
                        gj[c] += xv * rv[b][c];
                    }
                }
            }
        }
        for i in full..self.n {
            let ri = &r[i * K..(i + 1) * K];
            let xi = &self.dense[i * pd..(i + 1) * pd];
            for (xv, gj) in xi.iter().zip(gd.chunks_exact_mut(K)) {
                for c in 0..K {
                    gj[c] += xv * ri[c];
                }
            }
        }
        g.fill(0.0);
        for (&j, gj) in self.dense_cols.iter().zip(gd.chunks_exact(K)) {
            g[j * K..(j + 1) * K].copy_from_slice(gj);
        }
        for i in 0..self.n {
            let ri = &r[i * K..(i + 1) * K];
            for (j, v) in self.sparse_row(i) {
                for c in 0..K {
                    g[j * K + c] += v * ri[c];
                }
            }
        }
    }

    fn logits_dyn(&self, k: usize, w: &[f64], offset: &[f64], out: &mut [f64]) {
        let pd = self.dense_cols.len();
        for i in 0..self.n {
            let zi = &mut out[i * k..(i + 1) * k];
            zi.copy_from_slice(offset);
            let xi = &self.dense[i * pd..(i + 1) * pd];
            for (xv, &j) in xi.iter().zip(&self.dense_cols) {
                for c in 0..k {
                    zi[c] += xv * w[j * k + c];
                }
            }
            for (j, v) in self.sparse_row(i) {
                for c in 0..k {
                    zi[c] += v * w[j * k + c];
                }
            }
        }
    }

    fn xtr_dyn(&self, k: usize, r: &[f64], g: &mut [f64]) {
        let pd = self.dense_cols.len();
        g.fill(0.0);
        for i in 0..self.n {
            let ri = &r[i * k..(i + 1) * k];
            let xi = &self.dense[i * pd..(i + 1) * pd];
            for (xv, &j) in xi.iter().zip(&self.dense_cols) {
                for c in 0..k {
                    g[j * k + c] += xv * ri[c];
                }
            }
            for (j, v) in self.sparse_row(i) {
                for c in 0..k {
                    g[j * k + c] += v * ri[c];
                }
            }
        }
    }
}

/// Design, labels and the column means used for implicit centering.
/// Parameters are flat: weights `p × k` row-major, intercepts `k`.
///
/// Centering is never materialized: `X_c·W + b' = X·W + (b' − Wᵀμ)` and
/// `X_cᵀR = XᵀR − μ·1ᵀR`, so one-hot columns stay sparse.
struct Problem<'a> {
    x: Design,
    y: &'a [usize],
    n: usize,
    k: usize,
    mu: Vec<f64>,
}

impl<'a> Problem<'a> {
    fn new(x: &Matrix, y: &'a [usize], k: usize, centered: bool) -> Self {
        let (n, p) = (x.rows(), x.cols());
        let mut mu = vec![0.0; p];
        if centered && n > 0 {
            for row in x.iter_rows() {
                for (m, v) in mu.iter_mut().zip(row) {
                    *m += v;
                }
            }
            mu.iter_mut().for_each(|m| *m /= n as f64);
        }
        Problem {
            x: Design::new(x),
            y,
            n,
            k,
            mu,
        }
    }

    /// `Wᵀμ`.
    fn wt_mu(&self, w: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (m, wj) in self.mu.iter().zip(w.chunks_exact(self.k)) {
            for c in 0..self.k {
                out[c] += m * wj[c];
            }
        }
        out
    }

    /// Centered logits `X_c·W + b`.
    fn logits(&self, w: &[f64], b: &[f64], out: &mut [f64]) {
        let shift = self.wt_mu(w);
        let offset: Vec<f64> = b.iter().zip(&shift).map(|(b, s)| b - s).collect();
        match self.k {
            2 => self.x.logits::<2>(w, &offset, out),
            3 => self.x.logits::<3>(w, &offset, out),
            4 => self.x.logits::<4>(w, &offset, out),
            5 => self.x.logits::<5>(w, &offset, out),
            k => self.x.logits_dyn(k, w, &offset, out),
        }
    }

    /// Mean cross-entropy from logits.
    fn loss(&self, z: &[f64]) -> f64 {
        let mut total = 0.0;
        for (zi, &yi) in z.chunks_exact(self.k).zip(self.y) {
            let m = zi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + zi.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            total += lse - zi[yi];
        }
        total / self.n as f64
    }

    /// Gradient of the mean cross-entropy at logits `z` with respect to the
    /// (centered) weights and the intercepts.
    fn gradient(&self, z: &[f64], gw: &mut [f64], gb: &mut [f64]) {
        let k = self.k;
        let inv_n = 1.0 / self.n as f64;
        let mut r = z.to_vec();
        gb.fill(0.0);
        for (ri, &yi) in r.chunks_exact_mut(k).zip(self.y) {
            let m = ri.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in ri.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            for v in ri.iter_mut() {
                *v /= s;
            }
            ri[yi] -= 1.0;
            for (c, v) in ri.iter_mut().enumerate() {
                *v *= inv_n;
                gb[c] += *v;
            }
        }
        match k {
            2 => self.x.xtr::<2>(&r, gw),
            3 => self.x.xtr::<3>(&r, gw),
            4 => self.x.xtr::<4>(&r, gw),
            5 => self.x.xtr::<5>(&r, gw),
            _ => self.x.xtr_dyn(k, &r, gw),
        }
        for (m, gj) in self.mu.iter().zip(gw.chunks_exact_mut(k)) {
            for c in 0..k {
                gj[c] -= m * gb[c];
            }
        }
    }
}

fn flat_weights(w: &DMatrix<f64>) -> Vec<f64> {
    // nalgebra is column-major; the transpose's storage is W row-major.
    w.transpose().as_slice().to_vec()
}

fn penalty_value(w: &DMatrix<f64>, cfg: &LogRegConfig) -> f64 {
    match cfg.penalty {
        Penalty::None => 0.0,
        Penalty::L2 => cfg.lambda * w.norm_squared(),
        Penalty::L1 => cfg.lambda * w.iter().map(|v| v.abs()).sum::<f64>(),
    }
}

/// Objective `mean CE + penalty` at a parameter point.
pub fn objective(x: &Matrix, y: &[usize], model: &LogRegModel, cfg: &LogRegConfig) -> f64 {
    let prob = Problem::new(x, y, model.n_classes(), false);
    let mut z = vec![0.0; prob.n * prob.k];
    prob.logits(&flat_weights(&model.weights), model.intercepts.as_slice(), &mut z);
    prob.loss(&z) + penalty_value(&model.weights, cfg)
}

/// Gradient of the smooth part (`mean CE`, plus `λ‖W‖²` under L2).
pub fn smooth_gradient(
    x: &Matrix,
    y: &[usize],
    model: &LogRegModel,
    cfg: &LogRegConfig,
) -> (DMatrix<f64>, DVector<f64>) {
    let (p, k) = (model.n_features(), model.n_classes());
    let prob = Problem::new(x, y, k, false);
    let mut z = vec![0.0; prob.n * k];
    prob.logits(&flat_weights(&model.weights), model.intercepts.as_slice(), &mut z);
    let mut gw = vec![0.0; p * k];
    let mut gb = vec![0.0; k];
    prob.gradient(&z, &mut gw, &mut gb);
    let mut gw = DMatrix::from_row_slice(p, k, &gw);
    if cfg.penalty == Penalty::L2 {
        gw += &model.weights * (2.0 * cfg.lambda);
    }
    (gw, DVector::from_vec(gb))
}

fn validate(x: &Matrix, y: &[usize], n_classes: usize, cfg: &LogRegConfig) -> Result<(), ProbeError> {
    if x.rows() != y.len() {
        return Err(ProbeError::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.rows(),
            y.len()
        )));
    }
    if !x.all_finite() {
        return Err(ProbeError::NonFinite);
    }
    if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
        return Err(ProbeError::BadLambda(cfg.lambda));
    }
    if let Some(&bad) = y.iter().find(|&&c| c >= n_classes) {
        return Err(ProbeError::ShapeMismatch(format!(
            "label {bad} out of range for {n_classes} classes"
        )));
    }
    let mut seen = vec![false; n_classes];
    y.iter().for_each(|&c| seen[c] = true);
    if seen.iter().filter(|&&s| s).count() < 2 {
        return Err(ProbeError::SingleClass);
    }
    Ok(())
}

pub fn fit_multinomial_logreg(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    cfg: &LogRegConfig,
) -> Result<LogRegModel, ProbeError> {
    fit_multinomial_logreg_from(x, y, n_classes, cfg, None)
}

/// As [`fit_multinomial_logreg`], starting from `init` when given.
pub fn fit_multinomial_logreg_from(
    x: &Matrix,
    y: &[usize],
    n_classes: usize,
    cfg: &LogRegConfig,
    init: Option<&LogRegModel>,
) -> Result<LogRegModel, ProbeError> {
    validate(x, y, n_classes, cfg)?;
    // Solve on column-centered features with intercept b' = b + Wᵀμ. Same
    // optimum, but weights and intercepts decouple and the solver needs far
    // fewer iterations.
    let k = n_classes;
    let p = x.cols();
    let prob = Problem::new(x, y, k, true);
    debug_assert_eq!(prob.x.p, p);
    let (mut w, mut b) = match init {
        Some(m) if m.n_features() == p && m.n_classes() == k => {
            let w = flat_weights(&m.weights);
            let shift = prob.wt_mu(&w);
            let b: Vec<f64> = m.intercepts.iter().zip(&shift).map(|(b, s)| b + s).collect();
            (w, b)
        }
        _ => (vec![0.0; p * k], vec![0.0; k]),
    };
    let l2 = if cfg.penalty == Penalty::L2 { cfg.lambda } else { 0.0 };
    let l1 = if cfg.penalty == Penalty::L1 { cfg.lambda } else { 0.0 };
    let nk = prob.n * k;

    // Smooth part is the cross-entropy alone; both penalties go through their
    // prox so the step size is set by the data, not by λ.
    let mut z = vec![0.0; nk];
    prob.logits(&w, &b, &mut z);
    // Extrapolated point (yw, yb) and its logits.
    let (mut yw, mut yb, mut yz) = (w.clone(), b.clone(), z.clone());
    let mut gw = vec![0.0; p * k];
    let mut gb = vec![0.0; k];
    // X_c·∇W; without L1 every trial point's logits are affine in the step,
    // so backtracking needs no further passes over X.
    let mut u = vec![0.0; nk];
    let zero_b = vec![0.0; k];
    let (mut nw, mut nb, mut nz) = (vec![0.0; p * k], vec![0.0; k], vec![0.0; nk]);
    let mut t = 1.0_f64;
    let mut lip = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        iterations += 1;
        prob.gradient(&yz, &mut gw, &mut gb);
        let g_y = prob.loss(&yz);
        if l1 == 0.0 {
            prob.logits(&gw, &zero_b, &mut u);
        }

        lip = (lip * 0.8).max(1e-12);
        loop {
            let step = 1.0 / lip;
            let shrink = 1.0 / (1.0 + 2.0 * l2 * step);
            let thr = l1 * step;
            for ((n, yv), g) in nw.iter_mut().zip(&yw).zip(&gw) {
                let v = yv - step * g;
                *n = if l1 > 0.0 {
                    v.signum() * (v.abs() - thr).max(0.0)
                } else {
                    v * shrink
                };
            }
            for ((n, yv), g) in nb.iter_mut().zip(&yb).zip(&gb) {
                *n = yv - step * g;
            }
            if l1 > 0.0 {
                prob.logits(&nw, &nb, &mut nz);
            } else {
                for ((nzi, yzi), ui) in nz.chunks_exact_mut(k).zip(yz.chunks_exact(k)).zip(u.chunks_exact(k)) {
                    for c in 0..k {
                        nzi[c] = (yzi[c] - yb[c] - step * ui[c]) * shrink + nb[c];
                    }
                }
            }
            let f_new = prob.loss(&nz);
            let mut lin = 0.0;
            let mut quad = 0.0;
            for ((n, yv), g) in nw.iter().zip(&yw).zip(&gw).chain(nb.iter().zip(&yb).zip(&gb)) {
                let d = n - yv;
                lin += g * d;
                quad += d * d;
            }
            let model_bound = g_y + lin + 0.5 * lip * quad;
            if f_new <= model_bound + 1e-12 * model_bound.abs() || lip > 1e12 {
                break;
            }
            lip *= 2.0;
        }

        let diff_sq = nw.iter().zip(&yw).chain(nb.iter().zip(&yb)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mapping_norm = lip * diff_sq.sqrt();

        // Gradient-based restart: drop momentum when the step points back
        // against the direction of travel. Objective values are too noisy to
        // compare once the decrease approaches rounding level.
        let against = nw
            .iter()
            .zip(&yw)
            .zip(&w)
            .chain(nb.iter().zip(&yb).zip(&b))
            .map(|((n, yv), o)| (yv - n) * (n - o))
            .sum::<f64>()
            > 0.0;
        let t_next = if against {
            1.0
        } else {
            (1.0 + (1.0 + 4.0 * t * t).sqrt()) / 2.0
        };
        let beta = if against { 0.0 } else { (t - 1.0) / t_next };
        for ((yv, n), o) in yw.iter_mut().zip(&nw).zip(&w) {
            *yv = n + (n - o) * beta;
        }
        for ((yv, n), o) in yb.iter_mut().zip(&nb).zip(&b) {
            *yv = n + (n - o) * beta;
        }
        for ((yv, n), o) in yz.iter_mut().zip(&nz).zip(&z) {
            *yv = n * (1.0 + beta) - o * beta;
        }
        std::mem::swap(&mut w, &mut nw);
        std::mem::swap(&mut b, &mut nb);
        std::mem::swap(&mut z, &mut nz);
        t = t_next;

        if mapping_norm <= cfg.tol {
            converged = true;
            break;
        }
    }

    let shift = prob.wt_mu(&w);
    let intercepts = DVector::from_iterator(k, b.iter().zip(&shift).map(|(b, s)| b - s));
    Ok(LogRegModel {
        weights: DMatrix::from_row_slice(p, k, &w),
        intercepts,
        iterations,
        converged,
    })
}

/// Predicted class (lowest index on ties) and class probabilities per row.
pub fn predict_logreg(model: &LogRegModel, x: &Matrix) -> Result<(Vec<usize>, Matrix), ProbeError> {
    if x.cols() != model.n_features() {
        return Err(ProbeError::ShapeMismatch(format!(
            "model expects {} features, got {}",
            model.n_features(),
            x.cols()
        )));
    }
    let c = model.n_classes();
    let mut labels = Vec::with_capacity(x.rows());
    let mut probs = Matrix::zeros(x.rows(), c);
    for (i, row) in x.iter_rows().enumerate() {
        let z: Vec<f64> = (0..c)
            .map(|k| {
                model.intercepts[k]
                    + row
                        .iter()
                        .zip(model.weights.column(k).iter())
                        .map(|(a, w)| a * w)
                        .sum::<f64>()
            })
            .collect();
        let mut best = 0;
        for k in 1..c {
            if z[k] > z[best] {
                best = k;
            }
        }
        labels.push(best);
        let m = z[best];
        let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (dst, v) in probs.row_mut(i).iter_mut().zip(&e) {
            *dst = v / s;
        }
    }
    Ok((labels, probs))
}

pub fn accuracy(predicted: &[usize], truth: &[usize]) -> f64 {
    let hits = predicted.iter().zip(truth).filter(|(a, b)| a == b).count();
    hits as f64 / truth.len() as f64
}
