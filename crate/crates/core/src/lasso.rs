//! L1-penalized least squares by cyclic coordinate descent.
//!
//! Predictors are standardized to unit (population) variance and the response
//! is centered, so the solver works on the Gram matrix of the standardized
//! design. Every returned solution passes a KKT check on that scale.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Standardized coefficients below this magnitude count as zero.
pub const SUPPORT_EPS: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum LassoError {
    #[error("column {column} has zero variance")]
    ZeroVariance { column: usize },
    #[error("no convergence at lambda index {lambda_index} after {sweeps} sweeps")]
    NoConvergence { lambda_index: usize, sweeps: usize },
    #[error("fold {fold} has {size} observations, need at least 2")]
    FoldSize { fold: usize, size: usize },
    #[error("lambda grids differ between path and cross-validation curve")]
    GridMismatch,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("non-finite value in lasso input")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LassoOptions {
    /// Stop when the largest standardized coefficient change in a sweep is
    /// below this.
    pub tol: f64,
    pub max_sweeps: usize,
    /// Slack allowed in the KKT check before the solver tightens `tol`.
    pub kkt_tol: f64,
    /// Per-column penalty weights; `None` means all ones. A weight of zero
    /// leaves the column unpenalized.
    pub penalty_factors: Option<Vec<f64>>,
}

impl Default for LassoOptions {
    fn default() -> Self {
        Self {
            tol: 1e-7,
            max_sweeps: 100_000,
            kkt_tol: 1e-7,
            penalty_factors: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridSpec {
    pub len: usize,
    /// `lambda_min / lambda_max`.
    pub min_ratio: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            len: 100,
            min_ratio: 1e-3,
        }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// Standardized problem: Gram matrix and correlations of the centered,
/// unit-variance design with the centered response.
#[derive(Debug, Clone)]
struct Standardized {
    x_mean: Vec<f64>,
    x_sd: Vec<f64>,
    y_mean: f64,
    /// `X'X / n`, row-major p×p.
    gram: Vec<f64>,
    /// `X'y / n`.
    xty: Vec<f64>,
    /// `y'y / n` (centered).
    yy: f64,
    weights: Vec<f64>,
}

impl Standardized {
    fn new(y: &[f64], x: &DMatrix<f64>, rows: Option<&[usize]>, weights: &[f64]) -> Result<Self, LassoError> {
        let p = x.ncols();
        let idx: Vec<usize> = match rows {
            Some(r) => r.to_vec(),
            None => (0..y.len()).collect(),
        };
        let n = idx.len();
        let nf = n as f64;
        let y_mean = idx.iter().map(|&i| y[i]).sum::<f64>() / nf;
        let yc: Vec<f64> = idx.iter().map(|&i| y[i] - y_mean).collect();
        let mut xs = vec![0.0; n * p];
        let mut x_mean = vec![0.0; p];
        let mut x_sd = vec![0.0; p];
        for j in 0..p {
            let col = x.column(j);
            let mean = idx.iter().map(|&i| col[i]).sum::<f64>() / nf;
            let var = idx.iter().map(|&i| (col[i] - mean).powi(2)).sum::<f64>() / nf;
            let sd = var.sqrt();
            if !(sd > 1e-12 * mean.abs().max(1e-300)) || sd == 0.0 {
                return Err(LassoError::ZeroVariance { column: j });
            }
            x_mean[j] = mean;
            x_sd[j] = sd;
            for (r, &i) in idx.iter().enumerate() {
                xs[j * n + r] = (col[i] - mean) / sd;
            }
        }
        let mut gram = vec![0.0; p * p];
        for a in 0..p {
            let ca = &xs[a * n..(a + 1) * n];
            for b in a..p {
                let cb = &xs[b * n..(b + 1) * n];
                let v = ca.iter().zip(cb).map(|(u, w)| u * w).sum::<f64>() / nf;
                gram[a * p + b] = v;
                gram[b * p + a] = v;
            }
        }
        let xty = (0..p)
            .map(|j| xs[j * n..(j + 1) * n].iter().zip(&yc).map(|(u, w)| u * w).sum::<f64>() / nf)
            .collect();
        let yy = yc.iter().map(|v| v * v).sum::<f64>() / nf;
        Ok(Self {
            x_mean,
            x_sd,
            y_mean,
            gram,
            xty,
            yy,
            weights: weights.to_vec(),
        })
    }

    fn p(&self) -> usize {
        self.x_sd.len()
    }

    /// Gradient `X'(y - X beta)/n` on the standardized scale.
    fn gradient(&self, beta: &[f64]) -> Vec<f64> {
        let p = self.p();
        (0..p)
            .map(|j| {
                let row = &self.gram[j * p..(j + 1) * p];
                self.xty[j] - row.iter().zip(beta).map(|(g, b)| g * b).sum::<f64>()
            })
            .collect()
    }

    /// `(1/2n)||y - X beta||^2 + lambda * sum w|beta|`, standardized scale.
    fn objective(&self, beta: &[f64], lambda: f64) -> f64 {
        let p = self.p();
        let mut quad = 0.0;
        for a in 0..p {
            if beta[a] == 0.0 {
                continue;
            }
            let row = &self.gram[a * p..(a + 1) * p];
            quad += beta[a] * row.iter().zip(beta).map(|(g, b)| g * b).sum::<f64>();
        }
        let lin: f64 = self.xty.iter().zip(beta).map(|(c, b)| c * b).sum();
        let pen: f64 = beta
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(b, w)| w * b.abs())
            .sum();
        0.5 * (self.yy - 2.0 * lin + quad) + lambda * pen
    }

    fn threshold(&self, j: usize, lambda: f64) -> f64 {
        let w = self.weights[j];
        if w == 0.0 {
            0.0
        } else {
            lambda * w
        }
    }

    fn kkt_violation(&self, beta: &[f64], lambda: f64) -> f64 {
        let g = self.gradient(beta);
        let mut worst = 0.0f64;
        for j in 0..self.p() {
            let t = self.threshold(j, lambda);
            let v = if beta[j] == 0.0 {
                (g[j].abs() - t).max(0.0)
            } else {
                (g[j] - t * beta[j].signum()).abs()
            };
            worst = worst.max(v);
        }
        worst
    }

    /// One coordinate update; returns the absolute change.
    fn update(&self, j: usize, beta: &mut [f64], grad: &mut [f64], lambda: f64) -> f64 {
        let p = self.p();
        let gjj = self.gram[j * p + j];
        let old = beta[j];
        let z = grad[j] + gjj * old;
        let new = soft_threshold(z, self.threshold(j, lambda)) / gjj;
        let delta = new - old;
        if delta != 0.0 {
            beta[j] = new;
            let row = &self.gram[j * p..(j + 1) * p];
            for (g, &gk) in grad.iter_mut().zip(row) {
                *g -= gk * delta;
            }
        }
        delta.abs()
    }

    /// Coordinate descent from a warm start. Returns the number of sweeps.
    fn solve(
        &self,
        beta: &mut [f64],
        lambda: f64,
        opts: &LassoOptions,
        lambda_index: usize,
        mut trace: Option<&mut Vec<f64>>,
    ) -> Result<usize, LassoError> {
        let p = self.p();
        let mut tol = opts.tol;
        let mut sweeps = 0usize;
        let mut grad = self.gradient(beta);
        loop {
            // Full sweep, then iterate on the active set until it settles.
            loop {
                if sweeps >= opts.max_sweeps {
                    return Err(LassoError::NoConvergence {
                        lambda_index,
                        sweeps,
                    });
                }
                sweeps += 1;
                let mut max_delta = 0.0f64;
                for j in 0..p {
                    max_delta = max_delta.max(self.update(j, beta, &mut grad, lambda));
                }
                if let Some(t) = trace.as_deref_mut() {
                    t.push(self.objective(beta, lambda));
                }
                if max_delta < tol {
                    break;
                }
                let active: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0).collect();
                loop {
                    if sweeps >= opts.max_sweeps {
                        return Err(LassoError::NoConvergence {
                            lambda_index,
                            sweeps,
                        });
                    }
                    sweeps += 1;
                    let mut d = 0.0f64;
                    for &j in &active {
                        d = d.max(self.update(j, beta, &mut grad, lambda));
                    }
                    if let Some(t) = trace.as_deref_mut() {
                        t.push(self.objective(beta, lambda));
                    }
                    if d < tol {
                        break;
                    }
                }
            }
            // Refresh the gradient to shed accumulated rounding, then certify.
            grad = self.gradient(beta);
            if self.kkt_violation(beta, lambda) <= opts.kkt_tol {
                return Ok(sweeps);
            }
            tol *= 0.1;
            if tol < 1e-15 {
                return Err(LassoError::NoConvergence {
                    lambda_index,
                    sweeps,
                });
            }
        }
    }

    /// Smallest lambda at which every penalized coefficient is zero.
    fn lambda_max(&self, opts: &LassoOptions) -> Result<(f64, Vec<f64>), LassoError> {
        let mut beta = vec![0.0; self.p()];
        if self.weights.contains(&0.0) {
            self.solve(&mut beta, f64::INFINITY, opts, 0, None)?;
        }
        let g = self.gradient(&beta);
        let lmax = g
            .iter()
            .zip(&self.weights)
            .filter(|(_, &w)| w > 0.0)
            .map(|(g, w)| g.abs() / w)
            .fold(0.0, f64::max);
        Ok((lmax, beta))
    }

    fn to_original(&self, std_beta: &[f64]) -> (Vec<f64>, f64) {
        let coefs: Vec<f64> = std_beta.iter().zip(&self.x_sd).map(|(b, s)| b / s).collect();
        let intercept = self.y_mean - coefs.iter().zip(&self.x_mean).map(|(b, m)| b * m).sum::<f64>();
        (coefs, intercept)
    }
}

fn check_inputs(y: &[f64], x: &DMatrix<f64>, opts: &LassoOptions) -> Result<Vec<f64>, LassoError> {
    if x.nrows() != y.len() {
        return Err(LassoError::Dimension(format!("y has {} rows, X has {}", y.len(), x.nrows())));
    }
    if x.ncols() == 0 {
        return Err(LassoError::Dimension("X has no columns".into()));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(LassoError::NonFinite);
    }
    let w = opts.penalty_factors.clone().unwrap_or_else(|| vec![1.0; x.ncols()]);
    if w.len() != x.ncols() || w.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(LassoError::Dimension("penalty factors must be finite, non-negative, one per column".into()));
    }
    Ok(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoFit {
    pub lambda: f64,
    pub intercept: f64,
    /// Original-scale coefficients.
    pub coefs: Vec<f64>,
    pub std_coefs: Vec<f64>,
    pub sweeps: usize,
    /// Objective after each sweep, when requested.
    pub objective_trace: Vec<f64>,
    /// Final objective on the standardized scale.
    pub objective: f64,
}

/// Single-lambda fit from a cold start.
pub fn lasso_fit(y: &[f64], x: &DMatrix<f64>, lambda: f64, opts: &LassoOptions) -> Result<LassoFit, LassoError> {
    lasso_fit_impl(y, x, lambda, opts, false)
}

/// Like [`lasso_fit`] but records the objective after every sweep.
pub fn lasso_fit_traced(y: &[f64], x: &DMatrix<f64>, lambda: f64, opts: &LassoOptions) -> Result<LassoFit, LassoError> {
    lasso_fit_impl(y, x, lambda, opts, true)
}

fn lasso_fit_impl(
    y: &[f64],
    x: &DMatrix<f64>,
    lambda: f64,
    opts: &LassoOptions,
    traced: bool,
) -> Result<LassoFit, LassoError> {
    if !(lambda >= 0.0) {
        return Err(LassoError::Dimension(format!("lambda {lambda} must be non-negative")));
    }
    let w = check_inputs(y, x, opts)?;
    let s = Standardized::new(y, x, None, &w)?;
    let mut beta = vec![0.0; s.p()];
    let mut trace = Vec::new();
    let sweeps = s.solve(&mut beta, lambda, opts, 0, traced.then_some(&mut trace))?;
    let (coefs, intercept) = s.to_original(&beta);
    Ok(LassoFit {
        lambda,
        intercept,
        coefs,
        objective: s.objective(&beta, lambda),
        std_coefs: beta,
        sweeps,
        objective_trace: trace,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LassoPath {
    /// Descending grid.
    pub lambdas: Vec<f64>,
    /// Original-scale coefficients, `coefs[l][j]`.
    pub coefs: Vec<Vec<f64>>,
    /// Standardized coefficients, `std_coefs[l][j]`.
    pub std_coefs: Vec<Vec<f64>>,
    pub intercepts: Vec<f64>,
    pub penalty_factors: Vec<f64>,
}

impl LassoPath {
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    /// Columns with a nonzero coefficient at grid point `l`.
    pub fn support(&self, l: usize) -> Vec<usize> {
        self.std_coefs[l]
            .iter()
            .enumerate()
            .filter(|(_, b)| b.abs() > SUPPORT_EPS)
            .map(|(j, _)| j)
            .collect()
    }

    /// Support size restricted to penalized columns.
    pub fn penalized_support_size(&self, l: usize) -> usize {
        self.support(l)
            .into_iter()
            .filter(|&j| self.penalty_factors[j] > 0.0)
            .count()
    }

    /// Grid points where the support shrinks as lambda decreases.
    pub fn monotonicity_violations(&self) -> Vec<usize> {
        (1..self.len())
            .filter(|&l| self.support(l).len() < self.support(l - 1).len())
            .collect()
    }
}

fn grid(lmax: f64, spec: &GridSpec) -> Vec<f64> {
    let lmax = if lmax > 0.0 { lmax } else { f64::MIN_POSITIVE };
    if spec.len <= 1 {
        return vec![lmax; spec.len];
    }
    let step = spec.min_ratio.ln() / (spec.len - 1) as f64;
    (0..spec.len).map(|l| lmax * (step * l as f64).exp()).collect()
}

fn run_path(s: &Standardized, lambdas: &[f64], opts: &LassoOptions, start: Vec<f64>) -> Result<Vec<Vec<f64>>, LassoError> {
    let mut beta = start;
    let mut out = Vec::with_capacity(lambdas.len());
    for (l, &lambda) in lambdas.iter().enumerate() {
        s.solve(&mut beta, lambda, opts, l, None)?;
        out.push(beta.clone());
    }
    Ok(out)
}

/// Warm-started path over a log-spaced grid from `lambda_max` down.
pub fn lasso_path(y: &[f64], x: &DMatrix<f64>, grid_spec: &GridSpec, opts: &LassoOptions) -> Result<LassoPath, LassoError> {
    let w = check_inputs(y, x, opts)?;
    let s = Standardized::new(y, x, None, &w)?;
    let (lmax, start) = s.lambda_max(opts)?;
    let lambdas = grid(lmax, grid_spec);
    let std_coefs = run_path(&s, &lambdas, opts, start)?;
    let (coefs, intercepts) = std_coefs.iter().map(|b| s.to_original(b)).unzip();
    Ok(LassoPath {
        lambdas,
        coefs,
        std_coefs,
        intercepts,
        penalty_factors: w,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvCurve {
    pub lambdas: Vec<f64>,
    pub mean_cv_error: Vec<f64>,
    pub se_cv_error: Vec<f64>,
    pub index_min: usize,
    pub index_1se: usize,
    pub lambda_min: f64,
    pub lambda_1se: f64,
}

/// Seeded random K-fold cross-validation along the path's grid.
pub fn cross_validate(
    y: &[f64],
    x: &DMatrix<f64>,
    path: &LassoPath,
    folds: usize,
    seed: u64,
    opts: &LassoOptions,
) -> Result<CvCurve, LassoError> {
    let n = y.len();
    if folds < 2 {
        return Err(LassoError::Dimension("need at least 2 folds".into()));
    }
    if n < 2 * folds {
        return Err(LassoError::FoldSize {
            fold: 0,
            size: n / folds,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assign = vec![0usize; n];
    for (pos, &i) in order.iter().enumerate() {
        assign[i] = pos % folds;
    }
    let opts = LassoOptions {
        penalty_factors: Some(path.penalty_factors.clone()),
        ..opts.clone()
    };
    let l = path.len();
    let mut errs = vec![vec![0.0; l]; folds];
    for (k, fold_err) in errs.iter_mut().enumerate() {
        let train: Vec<usize> = (0..n).filter(|&i| assign[i] != k).collect();
        let test: Vec<usize> = (0..n).filter(|&i| assign[i] == k).collect();
        if test.len() < 2 {
            return Err(LassoError::FoldSize {
                fold: k,
                size: test.len(),
            });
        }
        let s = Standardized::new(y, x, Some(&train), &path.penalty_factors)?;
        let start = s.lambda_max(&opts)?.1;
        let betas = run_path(&s, &path.lambdas, &opts, start)?;
        for (li, b) in betas.iter().enumerate() {
            let (coefs, intercept) = s.to_original(b);
            let sse: f64 = test
                .iter()
                .map(|&i| {
                    let pred = intercept + (0..x.ncols()).map(|j| coefs[j] * x[(i, j)]).sum::<f64>();
                    (y[i] - pred).powi(2)
                })
                .sum();
            fold_err[li] = sse / test.len() as f64;
        }
    }
    let kf = folds as f64;
    let mean: Vec<f64> = (0..l).map(|li| errs.iter().map(|e| e[li]).sum::<f64>() / kf).collect();
    let se: Vec<f64> = (0..l)
        .map(|li| {
            let m = mean[li];
            let var = errs.iter().map(|e| (e[li] - m).powi(2)).sum::<f64>() / (kf - 1.0);
            (var / kf).sqrt()
        })
        .collect();
    let index_min = (0..l).fold(0, |best, i| if mean[i] < mean[best] { i } else { best });
    let bound = mean[index_min] + se[index_min];
    let index_1se = (0..l).find(|&i| mean[i] <= bound).unwrap_or(index_min);
    Ok(CvCurve {
        lambdas: path.lambdas.clone(),
        lambda_min: path.lambdas[index_min],
        lambda_1se: path.lambdas[index_1se],
        mean_cv_error: mean,
        se_cv_error: se,
        index_min,
        index_1se,
    })
}

/// Capped lambda rule: the larger of the 1se lambda and the smallest grid
/// lambda whose penalized support stays within `cap`. The cap boundary is the
/// last grid point before the penalized support first exceeds `cap`, so the
/// chosen solution never exceeds the cap even on a non-monotone path.
/// Returns `(lambda, grid index)`.
pub fn gibs_lambda(path: &LassoPath, cv: &CvCurve, cap: usize) -> Result<(f64, usize), LassoError> {
    if path.lambdas != cv.lambdas || path.is_empty() {
        return Err(LassoError::GridMismatch);
    }
    let first_over = (0..path.len()).find(|&l| path.penalized_support_size(l) > cap);
    let cap_index = match first_over {
        Some(0) => 0,
        Some(l) => l - 1,
        None => path.len() - 1,
    };
    let idx = cap_index.min(cv.index_1se);
    Ok((path.lambdas[idx], idx))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linreg::ols;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn problem(seed: u64, n: usize, p: usize, signal: &[(usize, f64)]) -> (Vec<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| -> f64 { StandardNormal.sample(&mut rng) });
        let y = (0..n)
            .map(|i| {
                signal.iter().map(|&(j, b)| b * x[(i, j)]).sum::<f64>()
                    + <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            })
            .collect();
        (y, x)
    }

    /// Independent KKT checker on the standardized scale.
    fn kkt_ok(y: &[f64], x: &DMatrix<f64>, std_beta: &[f64], lambda: f64) -> bool {
        let n = y.len() as f64;
        let p = x.ncols();
        let ym = y.iter().sum::<f64>() / n;
        let cols: Vec<Vec<f64>> = (0..p)
            .map(|j| {
                let c = x.column(j);
                let m = c.mean();
                let sd = (c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt();
                c.iter().map(|v| (v - m) / sd).collect()
            })
            .collect();
        let r: Vec<f64> = (0..y.len())
            .map(|i| y[i] - ym - (0..p).map(|j| cols[j][i] * std_beta[j]).sum::<f64>())
            .collect();
        (0..p).all(|j| {
            let g = cols[j].iter().zip(&r).map(|(a, b)| a * b).sum::<f64>() / n;
            if std_beta[j] == 0.0 {
                g.abs() <= lambda + 1e-6
            } else {
                (g.abs() - lambda).abs() <= 1e-4 && g.signum() == std_beta[j].signum()
            }
        })
    }

    #[test]
    fn zero_lambda_matches_ols() {
        let (y, x) = problem(1, 80, 4, &[(0, 1.0), (2, -0.5)]);
        let f = lasso_fit(&y, &x, 0.0, &LassoOptions::default()).unwrap();
        let o = ols(&y, &x, true).unwrap();
        for j in 0..4 {
            assert!((f.coefs[j] - o.betas[j].estimate).abs() < 1e-6);
        }
        assert!((f.intercept - o.alpha()).abs() < 1e-6);
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let (y, x) = problem(2, 60, 5, &[(1, 2.0)]);
        let path = lasso_path(&y, &x, &GridSpec { len: 1, min_ratio: 1e-3 }, &LassoOptions::default()).unwrap();
        assert!(path.support(0).is_empty());
        let f = lasso_fit(&y, &x, path.lambdas[0] * 1.0001, &LassoOptions::default()).unwrap();
        assert!(f.coefs.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn orthonormal_soft_threshold() {
        // Columns: centered, unit population variance, mutually orthogonal.
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 1.0, -1.0, 1.0, 1.0, -1.0, -1.0, -1.0]);
        let y = [3.0, 1.0, 0.5, -0.5];
        let lambda = 0.3;
        let f = lasso_fit(&y, &x, lambda, &LassoOptions::default()).unwrap();
        let ym = y.iter().sum::<f64>() / 4.0;
        for j in 0..2 {
            let c: f64 = (0..4).map(|i| x[(i, j)] * (y[i] - ym)).sum::<f64>() / 4.0;
            assert!((f.std_coefs[j] - soft_threshold(c, lambda)).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_variance_named() {
        let x = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        assert_eq!(
            lasso_fit(&[1.0, 2.0, 3.0], &x, 0.1, &LassoOptions::default()).unwrap_err(),
            LassoError::ZeroVariance { column: 1 }
        );
    }

    #[test]
    fn toy_path_certified() {
        let (y, x) = problem(3, 50, 3, &[(0, 1.0), (1, 0.3)]);
        let path = lasso_path(&y, &x, &GridSpec::default(), &LassoOptions::default()).unwrap();
        for l in 0..path.len() {
            assert!(kkt_ok(&y, &x, &path.std_coefs[l], path.lambdas[l]), "grid point {l}");
        }
        let first: Vec<usize> = path.support(0);
        let last = path.support(path.len() - 1);
        assert!(first.iter().all(|j| last.contains(j)));
    }

    #[test]
    fn unpenalized_column_always_in() {
        let (y, x) = problem(4, 60, 4, &[(1, 1.0)]);
        let opts = LassoOptions {
            penalty_factors: Some(vec![0.0, 1.0, 1.0, 1.0]),
            ..Default::default()
        };
        let path = lasso_path(&y, &x, &GridSpec::default(), &opts).unwrap();
        assert_eq!(path.penalized_support_size(0), 0);
        assert!(path.support(0).contains(&0) || path.std_coefs[0][0] == 0.0);
        // At lambda_max the unpenalized coefficient is the OLS slope on that column alone.
        let o = ols(&y, &x.columns(0, 1).into_owned(), true).unwrap();
        assert!((path.coefs[0][0] - o.betas[0].estimate).abs() < 1e-6);
    }

    #[test]
    fn cv_deterministic_and_ordered() {
        let (y, x) = problem(5, 156, 8, &[(0, 0.8), (3, -0.6)]);
        let opts = LassoOptions::default();
        let path = lasso_path(&y, &x, &GridSpec::default(), &opts).unwrap();
        let a = cross_validate(&y, &x, &path, 10, 77, &opts).unwrap();
        let b = cross_validate(&y, &x, &path, 10, 77, &opts).unwrap();
        assert_eq!(a, b);
        assert!(a.lambda_1se >= a.lambda_min);
        let s = path.support(a.index_1se);
        assert!(s.contains(&0) && s.contains(&3));
    }

    #[test]
    fn fold_size_error() {
        let (y, x) = problem(6, 15, 2, &[]);
        let path = lasso_path(&y, &x, &GridSpec::default(), &LassoOptions::default()).unwrap();
        assert!(matches!(
            cross_validate(&y, &x, &path, 10, 1, &LassoOptions::default()),
            Err(LassoError::FoldSize { .. })
        ));
    }

    #[test]
    fn cap_binds_on_dense_signal() {
        let signal: Vec<(usize, f64)> = (0..30).map(|j| (j, 1.0)).collect();
        let (y, x) = problem(7, 200, 40, &signal);
        let opts = LassoOptions::default();
        let path = lasso_path(&y, &x, &GridSpec::default(), &opts).unwrap();
        let cv = cross_validate(&y, &x, &path, 10, 3, &opts).unwrap();
        assert!(path.support(cv.index_1se).len() > 20);
        let (lambda, idx) = gibs_lambda(&path, &cv, 20).unwrap();
        assert!(lambda > cv.lambda_1se);
        assert!(path.penalized_support_size(idx) <= 20);
        // Cap 0 picks the smallest lambda with an empty support.
        let (_, i0) = gibs_lambda(&path, &cv, 0).unwrap();
        assert_eq!(path.support(i0).len(), 0);
        assert!(!path.support(i0 + 1).is_empty());
    }

    #[test]
    fn cap_inactive_returns_1se() {
        let (y, x) = problem(8, 156, 10, &[(2, 1.0)]);
        let opts = LassoOptions::default();
        let path = lasso_path(&y, &x, &GridSpec::default(), &opts).unwrap();
        let cv = cross_validate(&y, &x, &path, 10, 3, &opts).unwrap();
        assert_eq!(gibs_lambda(&path, &cv, 20).unwrap().0, cv.lambda_1se);
        let mut other = cv.clone();
        other.lambdas[0] *= 2.0;
        assert_eq!(gibs_lambda(&path, &other, 20), Err(LassoError::GridMismatch));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn objective_decreases(seed in any::<u64>(), frac in 0.01f64..0.9) {
            let (y, x) = problem(seed, 40, 6, &[(0, 1.0), (4, -1.0)]);
            let path = lasso_path(&y, &x, &GridSpec { len: 1, min_ratio: 1e-3 }, &LassoOptions::default()).unwrap();
            let f = lasso_fit_traced(&y, &x, path.lambdas[0] * frac, &LassoOptions::default()).unwrap();
            for w in f.objective_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0));
            }
        }

        #[test]
        fn duplicate_column_never_worse(seed in any::<u64>(), dup in 0usize..5, lam in 0.01f64..0.5) {
            let (y, x) = problem(seed, 40, 5, &[(1, 1.0)]);
            let xd = x.clone().insert_column(5, 0.0);
            let mut xd = xd;
            let c = x.column(dup).into_owned();
            xd.set_column(5, &c);
            let opts = LassoOptions::default();
            let a = lasso_fit(&y, &x, lam, &opts).unwrap();
            let b = lasso_fit(&y, &xd, lam, &opts).unwrap();
            prop_assert!(b.objective <= a.objective + 1e-9);
        }

        #[test]
        fn path_kkt(seed in any::<u64>(), p in 1usize..12) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = rng.random_range(30..80);
            let (y, x) = problem(seed, n, p, &[(0, 0.7)]);
            let path = lasso_path(&y, &x, &GridSpec { len: 20, min_ratio: 1e-3 }, &LassoOptions::default()).unwrap();
            for l in 0..path.len() {
                prop_assert!(kkt_ok(&y, &x, &path.std_coefs[l], path.lambdas[l]));
            }
        }
    }
}
