//! Dense least squares with coefficient inference, market projection and
//! nested-model F tests.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, FisherSnedecor, StudentsT};
use thiserror::Error;

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-10;

#[derive(Debug, Error, PartialEq)]
pub enum RegressionError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("{n} observations cannot identify {params} parameters")]
    TooFewObservations { n: usize, params: usize },
    #[error("design is rank deficient at column {column}")]
    SingularDesign { column: usize },
    #[error("non-finite value in regression input")]
    NonFinite,
    #[error("market column has zero norm")]
    ZeroMarket,
    #[error("models are not nested: {0}")]
    NotNested(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub estimate: f64,
    pub std_err: f64,
    pub t_stat: f64,
    /// Two-sided p-value.
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsFit {
    pub intercept: Option<Coefficient>,
    pub betas: Vec<Coefficient>,
    pub residuals: Vec<f64>,
    pub fitted: Vec<f64>,
    /// Residual variance `rss / df_resid`.
    pub sigma2: f64,
    pub rss: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub n: usize,
    /// Number of slope coefficients (intercept excluded).
    pub k: usize,
    pub df_resid: usize,
}

impl OlsFit {
    /// Intercept estimate, zero for fits without one.
    pub fn alpha(&self) -> f64 {
        self.intercept.map_or(0.0, |c| c.estimate)
    }

    pub fn estimates(&self) -> Vec<f64> {
        self.betas.iter().map(|c| c.estimate).collect()
    }

    pub fn p_values(&self) -> Vec<f64> {
        self.betas.iter().map(|c| c.p_value).collect()
    }

    /// Prediction for one row of regressors.
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.alpha()
            + self
                .betas
                .iter()
                .zip(x)
                .map(|(b, v)| b.estimate * v)
                .sum::<f64>()
    }
}

fn design(x: &DMatrix<f64>, with_intercept: bool) -> DMatrix<f64> {
    if with_intercept {
        x.clone().insert_column(0, 1.0)
    } else {
        x.clone()
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.ncols() == 0 {
        return 0;
    }
    let sv = m.singular_values();
    let max = sv.max();
    if max == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count()
}

/// First column whose addition does not raise the rank of the design.
fn offending_column(d: &DMatrix<f64>) -> usize {
    let mut rank = 0;
    for j in 0..d.ncols() {
        let r = numerical_rank(&d.columns(0, j + 1).into_owned());
        if r <= rank {
            return j;
        }
        rank = r;
    }
    d.ncols().saturating_sub(1)
}

pub(crate) fn two_sided_t(t: f64, df: f64) -> f64 {
    if t.is_nan() {
        return 1.0;
    }
    if t.is_infinite() {
        return 0.0;
    }
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    (2.0 * dist.sf(t.abs())).min(1.0)
}

/// Ordinary least squares of `y` on the columns of `x`, optionally with an
/// intercept. Solved through a singular value decomposition.
pub fn ols(y: &[f64], x: &DMatrix<f64>, with_intercept: bool) -> Result<OlsFit, RegressionError> {
    let n = y.len();
    if x.nrows() != n {
        return Err(RegressionError::Dimension(format!(
            "y has {n} rows, X has {}",
            x.nrows()
        )));
    }
    if y.iter().chain(x.iter()).any(|v| !v.is_finite()) {
        return Err(RegressionError::NonFinite);
    }
    let k = x.ncols();
    let params = k + usize::from(with_intercept);
    if n <= params {
        return Err(RegressionError::TooFewObservations { n, params });
    }
    let d = design(x, with_intercept);
    let svd = d.clone().svd(true, true);
    let sv = &svd.singular_values;
    let smax = sv.max();
    if params > 0 && sv.iter().any(|&s| s <= RANK_TOL * smax) {
        let j = offending_column(&d);
        return Err(RegressionError::SingularDesign {
            column: j - usize::from(with_intercept).min(j),
        });
    }
    let u = svd.u.as_ref().expect("u computed");
    let v_t = svd.v_t.as_ref().expect("v_t computed");
    let yv = DVector::from_column_slice(y);
    let uty = u.transpose() * &yv;
    let scaled = DVector::from_iterator(params, (0..params).map(|i| uty[i] / sv[i]));
    let coef = v_t.transpose() * scaled;
    let fitted = &d * &coef;
    let resid = &yv - &fitted;
    let rss = resid.norm_squared();
    let df_resid = n - params;
    let sigma2 = rss / df_resid as f64;

    // diag((D'D)^-1) = sum_i V[j,i]^2 / s_i^2
    let inv_diag: Vec<f64> = (0..params)
        .map(|j| (0..params).map(|i| (v_t[(i, j)] / sv[i]).powi(2)).sum())
        .collect();
    let coefs: Vec<Coefficient> = (0..params)
        .map(|j| {
            let estimate = coef[j];
            let std_err = (sigma2 * inv_diag[j]).sqrt();
            let t_stat = estimate / std_err;
            Coefficient {
                estimate,
                std_err,
                t_stat,
                p_value: two_sided_t(t_stat, df_resid as f64),
            }
        })
        .collect();

    let tss = if with_intercept {
        let mean = y.iter().sum::<f64>() / n as f64;
        y.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
    } else {
        y.iter().map(|v| v * v).sum::<f64>()
    };
    let r2 = if tss > 0.0 { 1.0 - rss / tss } else { 1.0 };
    let base_df = if with_intercept { n - 1 } else { n } as f64;
    let adj_r2 = 1.0 - (1.0 - r2) * base_df / df_resid as f64;

    let (intercept, betas) = if with_intercept {
        (Some(coefs[0]), coefs[1..].to_vec())
    } else {
        (None, coefs)
    };
    Ok(OlsFit {
        intercept,
        betas,
        residuals: resid.iter().copied().collect(),
        fitted: fitted.iter().copied().collect(),
        sigma2,
        rss,
        r2,
        adj_r2,
        n,
        k,
        df_resid,
    })
}

/// Indices of slope coefficients with p-value below `level`.
pub fn significant_set(fit: &OlsFit, level: f64) -> Vec<usize> {
    fit.betas
        .iter()
        .enumerate()
        .filter(|(_, c)| c.p_value < level)
        .map(|(j, _)| j)
        .collect()
}

/// Replaces every non-market column by its residual after projecting on the
/// market column (no intercept). The market column is kept as is.
pub fn project_out_market(x: &DMatrix<f64>, market: usize) -> Result<DMatrix<f64>, RegressionError> {
    if market >= x.ncols() {
        return Err(RegressionError::Dimension(format!(
            "market column {market} out of {}",
            x.ncols()
        )));
    }
    let m = x.column(market).into_owned();
    let mm = m.norm_squared();
    if mm == 0.0 || !mm.is_finite() {
        return Err(RegressionError::ZeroMarket);
    }
    let mut out = x.clone();
    for j in 0..x.ncols() {
        if j == market {
            continue;
        }
        let coef = m.dot(&x.column(j)) / mm;
        out.column_mut(j).axpy(-coef, &m, 1.0);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub res_df_1: usize,
    pub res_df_2: usize,
    pub rss_1: f64,
    pub rss_2: f64,
    pub df_diff: usize,
    pub sum_sq_diff: f64,
    pub f_stat: f64,
    pub p_value: f64,
}

/// F test of a restricted model against a full model whose columns include
/// every restricted column.
pub fn anova_nested(
    y: &[f64],
    x_restricted: &DMatrix<f64>,
    x_full: &DMatrix<f64>,
    with_intercept: bool,
) -> Result<AnovaResult, RegressionError> {
    if x_restricted.nrows() != x_full.nrows() {
        return Err(RegressionError::Dimension("designs differ in rows".into()));
    }
    for j in 0..x_restricted.ncols() {
        let c = x_restricted.column(j);
        if !(0..x_full.ncols()).any(|i| x_full.column(i) == c) {
            return Err(RegressionError::NotNested(format!(
                "restricted column {j} is absent from the full design"
            )));
        }
    }
    if x_full.ncols() <= x_restricted.ncols() {
        return Err(RegressionError::NotNested("full model adds no columns".into()));
    }
    let f1 = ols(y, x_restricted, with_intercept)?;
    let f2 = ols(y, x_full, with_intercept)?;
    let df_diff = f1.df_resid - f2.df_resid;
    let sum_sq_diff = (f1.rss - f2.rss).max(0.0);
    let f_stat = (sum_sq_diff / df_diff as f64) / (f2.rss / f2.df_resid as f64);
    let p_value = if f_stat.is_nan() {
        1.0
    } else if f_stat.is_infinite() {
        0.0
    } else {
        FisherSnedecor::new(df_diff as f64, f2.df_resid as f64)
            .expect("positive degrees of freedom")
            .sf(f_stat)
    };
    Ok(AnovaResult {
        res_df_1: f1.df_resid,
        res_df_2: f2.df_resid,
        rss_1: f1.rss,
        rss_2: f2.rss,
        df_diff,
        sum_sq_diff,
        f_stat,
        p_value,
    })
}

/// Stacks two portfolios' regressors and builds the interaction design: the
/// restricted model is `[W_low; W_high]`, the full model appends the same
/// columns multiplied by an indicator of the high-portfolio rows.
pub fn stacked_interaction_designs(
    w_low: &DMatrix<f64>,
    w_high: &DMatrix<f64>,
) -> Result<(DMatrix<f64>, DMatrix<f64>), RegressionError> {
    if w_low.ncols() != w_high.ncols() {
        return Err(RegressionError::Dimension("portfolio designs differ in columns".into()));
    }
    let (n1, n2, s) = (w_low.nrows(), w_high.nrows(), w_low.ncols());
    let mut restricted = DMatrix::zeros(n1 + n2, s);
    restricted.rows_mut(0, n1).copy_from(w_low);
    restricted.rows_mut(n1, n2).copy_from(w_high);
    let mut full = DMatrix::zeros(n1 + n2, 2 * s);
    full.columns_mut(0, s).copy_from(&restricted);
    full.view_mut((n1, s), (n2, s)).copy_from(w_high);
    Ok((restricted, full))
}
