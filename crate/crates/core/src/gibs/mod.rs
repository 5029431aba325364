//! Groupwise interpretable basis selection.
//!
//! For one estimation window the selection runs in six steps: project every
//! non-market basis column onto the orthogonal complement of the market,
//! split the ETFs by class, keep minimax prototypes within each class, keep
//! prototypes of the union, run a capped LASSO over the survivors (plus the
//! five-factor columns), and refit the selected raw columns by OLS.

mod dimension;
mod model;
mod rolling;

pub use dimension::{gibs_dimension, pca_dimension, DimensionEstimator, GibsDimension, PcaDimension};
pub use model::{Ff5Model, GibsModel, FactorModel, Registry, ModelRegistry, DimensionRegistry, WindowContext};
pub use rolling::{run_rolling, LedgerWeek, RollingConfig, Side, SidePair, WeekFailure, WeekFit, WindowLedger};

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::{eligible_etfs, AssetKind, ReturnsPanel, UniverseRules};
use crate::lasso::{cross_validate, gibs_lambda, lasso_path, GridSpec, LassoOptions, SUPPORT_EPS};
use crate::linreg::{ols, project_out_market, OlsFit, RegressionError};
use crate::protoclust::{corr_distance_columns, cut_prototypes, minimax_cluster};
use crate::{Error, Result, FF5_IDS};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BasisRole {
    Market,
    /// A five-factor column other than the market.
    Factor,
    Etf { class: String, subclass: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisColumn {
    pub id: String,
    pub role: BasisRole,
}

impl BasisColumn {
    pub fn is_etf(&self) -> bool {
        matches!(self.role, BasisRole::Etf { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibsConfig {
    /// Minimax cut height within each ETF class.
    pub category_threshold: f64,
    /// Minimax cut height for the union of class prototypes.
    pub union_threshold: f64,
    /// Largest number of penalized columns the LASSO may keep.
    pub lasso_cap: usize,
    pub cv_folds: usize,
    pub grid: GridSpec,
    pub lasso: LassoOptions,
    pub significance: f64,
    /// Leave the market column unpenalized.
    pub force_market: bool,
}

impl Default for GibsConfig {
    fn default() -> Self {
        Self {
            category_threshold: 0.5,
            union_threshold: 0.5,
            lasso_cap: 20,
            cv_folds: 10,
            grid: GridSpec::default(),
            lasso: LassoOptions::default(),
            significance: 0.05,
            force_market: true,
        }
    }
}

/// Basis returns for one estimation window.
#[derive(Debug, Clone)]
pub struct WindowBasis {
    /// Row the window feeds (predictions are for this row).
    pub eval_row: usize,
    pub rows: Range<usize>,
    pub columns: Vec<BasisColumn>,
    pub panel_cols: Vec<usize>,
    /// Excess returns, window rows × basis columns.
    pub x: DMatrix<f64>,
    /// Excess returns at `eval_row`, NaN where unavailable.
    pub next: Vec<f64>,
}

impl WindowBasis {
    /// Five-factor columns followed by the ETFs fully observed over the
    /// `rules.etf_window` rows before `eval_row`. With `require_factors`
    /// unset, a panel without factor columns yields an ETF-only basis.
    pub fn build(
        panel: &ReturnsPanel,
        eval_row: usize,
        rules: &UniverseRules,
        require_factors: bool,
    ) -> Result<Self> {
        let etfs = eligible_etfs(panel, eval_row, rules)?;
        let rows = eval_row - rules.etf_window..eval_row;
        let mut columns = Vec::new();
        let mut panel_cols = Vec::new();
        match panel.ff5_columns() {
            Some(ff5) => {
                for (k, &c) in ff5.iter().enumerate() {
                    if panel.observed_count(c, rows.clone()) != rows.len() {
                        return Err(Error::Config(format!(
                            "factor `{}` is incomplete over rows {}..{}",
                            FF5_IDS[k], rows.start, rows.end
                        )));
                    }
                    columns.push(BasisColumn {
                        id: FF5_IDS[k].to_string(),
                        role: if k == 0 { BasisRole::Market } else { BasisRole::Factor },
                    });
                    panel_cols.push(c);
                }
            }
            None if require_factors => {
                return Err(Error::Config("panel has no five-factor columns".into()));
            }
            None => {}
        }
        for c in etfs {
            let a = panel.asset(c);
            debug_assert_eq!(a.kind, AssetKind::Etf);
            columns.push(BasisColumn {
                id: a.asset_id.clone(),
                role: BasisRole::Etf {
                    class: a.etf_class.clone().unwrap_or_default(),
                    subclass: a.etf_subclass.clone().unwrap_or_default(),
                },
            });
            panel_cols.push(c);
        }
        let x = panel.excess_matrix(&panel_cols, rows.clone())?;
        let next = if eval_row < panel.n_dates() {
            panel
                .excess_matrix(&panel_cols, eval_row..eval_row + 1)?
                .iter()
                .copied()
                .collect()
        } else {
            vec![f64::NAN; panel_cols.len()]
        };
        Ok(Self {
            eval_row,
            rows,
            columns,
            panel_cols,
            x,
            next,
        })
    }

    pub fn market_index(&self) -> Option<usize> {
        self.columns.iter().position(|c| c.role == BasisRole::Market)
    }

    pub fn etf_indices(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&j| self.columns[j].is_etf()).collect()
    }

    pub fn factor_indices(&self) -> Vec<usize> {
        (0..self.columns.len()).filter(|&j| !self.columns[j].is_etf()).collect()
    }

    pub fn ids(&self, idx: &[usize]) -> Vec<String> {
        idx.iter().map(|&j| self.columns[j].id.clone()).collect()
    }

    /// Raw columns `idx` of the window matrix.
    pub fn select(&self, idx: &[usize]) -> DMatrix<f64> {
        self.x.select_columns(idx)
    }

    /// Basis with every non-market column projected off the market.
    pub fn projected(&self) -> Result<DMatrix<f64>> {
        let m = self
            .market_index()
            .ok_or_else(|| Error::Config("basis has no market column to project on".into()))?;
        Ok(project_out_market(&self.x, m)?)
    }
}

/// Intermediate sets of the selection, as basis column indices.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BasisSetStages {
    pub categories: BTreeMap<String, Vec<usize>>,
    pub per_category_prototypes: BTreeMap<String, Vec<usize>>,
    pub union_prototypes: Vec<usize>,
    /// ETFs whose projected returns have no variance left.
    pub dropped: Vec<usize>,
}

fn centered_norm(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let (s, n) = v.clone().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    let m = s / n.max(1) as f64;
    v.map(|x| (x - m).powi(2)).sum::<f64>().sqrt()
}

/// Prototype stages over the ETF columns of a projected basis.
pub fn basis_stages(basis: &WindowBasis, projected: &DMatrix<f64>, cfg: &GibsConfig) -> Result<BasisSetStages> {
    let mut stages = BasisSetStages::default();
    for j in basis.etf_indices() {
        let raw = centered_norm(basis.x.column(j).iter().copied());
        let proj = centered_norm(projected.column(j).iter().copied());
        if !(proj > 1e-10 * raw) {
            stages.dropped.push(j);
            continue;
        }
        if let BasisRole::Etf { class, .. } = &basis.columns[j].role {
            stages.categories.entry(class.clone()).or_default().push(j);
        }
    }
    if !stages.dropped.is_empty() {
        log::debug!("{} ETFs carry no variance beyond the market", stages.dropped.len());
    }
    let prototypes_of = |idx: &[usize], threshold: f64| -> Result<Vec<usize>> {
        if idx.len() <= 1 {
            return Ok(idx.to_vec());
        }
        let dist = corr_distance_columns(&projected.select_columns(idx))?;
        let tree = minimax_cluster(&dist);
        Ok(cut_prototypes(&tree, threshold).into_iter().map(|k| idx[k]).collect())
    };
    let mut union = Vec::new();
    for (class, idx) in &stages.categories {
        let protos = prototypes_of(idx, cfg.category_threshold)?;
        union.extend(&protos);
        stages.per_category_prototypes.insert(class.clone(), protos);
    }
    union.sort_unstable();
    stages.union_prototypes = prototypes_of(&union, cfg.union_threshold)?;
    Ok(stages)
}

/// Outcome of one factor-model fit on one window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorFit {
    /// LASSO candidates (empty for models without a selection step).
    pub candidates: Vec<usize>,
    /// Selected set, basis indices ascending.
    pub selected: Vec<usize>,
    /// Columns the final OLS used; equals `selected` unless a collinear
    /// column had to be dropped.
    pub regressors: Vec<usize>,
    /// Regressors with p-value below the significance level.
    pub significant: Vec<usize>,
    /// OLS with intercept on the raw regressors.
    pub ols: OlsFit,
    pub lambda: Option<f64>,
    pub lambda_1se: Option<f64>,
    /// Nothing was selected and the fit is intercept-only.
    pub degenerate: bool,
}

/// The GIBS outcome is a [`FactorFit`] with a LASSO step.
pub type GibsFit = FactorFit;

impl FactorFit {
    /// `significant ⊆ supp(ols betas) ⊆ selected`.
    pub fn chain_holds(&self) -> bool {
        let support: Vec<usize> = self
            .regressors
            .iter()
            .zip(&self.ols.betas)
            .filter(|(_, b)| b.estimate != 0.0)
            .map(|(&j, _)| j)
            .collect();
        self.significant.iter().all(|j| support.contains(j))
            && support.iter().all(|j| self.selected.contains(j))
    }

    /// One-step prediction from basis returns at the evaluation row.
    pub fn predict(&self, next: &[f64]) -> f64 {
        let x: Vec<f64> = self.regressors.iter().map(|&j| next[j]).collect();
        self.ols.predict(&x)
    }
}

/// OLS with intercept on `columns`, dropping columns that make the design
/// singular. Returns the fit and the columns kept.
pub(crate) fn refit(y: &[f64], basis: &WindowBasis, columns: &[usize]) -> Result<(OlsFit, Vec<usize>)> {
    let mut cols = columns.to_vec();
    loop {
        match ols(y, &basis.select(&cols), true) {
            Ok(fit) => return Ok((fit, cols)),
            Err(RegressionError::SingularDesign { column }) if column < cols.len() => {
                log::warn!("dropping collinear regressor `{}`", basis.columns[cols[column]].id);
                cols.remove(column);
            }
            Err(e) => return Err(e.into()),
        }
    }
}

pub(crate) fn finish_fit(
    y: &[f64],
    basis: &WindowBasis,
    candidates: Vec<usize>,
    selected: Vec<usize>,
    lambdas: Option<(f64, f64)>,
    level: f64,
) -> Result<FactorFit> {
    let (ols, regressors) = refit(y, basis, &selected)?;
    let significant = regressors
        .iter()
        .zip(&ols.betas)
        .filter(|(_, b)| b.p_value < level)
        .map(|(&j, _)| j)
        .collect();
    Ok(FactorFit {
        candidates,
        degenerate: selected.is_empty(),
        selected,
        regressors,
        significant,
        ols,
        lambda: lambdas.map(|l| l.0),
        lambda_1se: lambdas.map(|l| l.1),
    })
}

/// Steps five and six given precomputed stages: capped LASSO over the
/// market, the other factors and the union prototypes on the projected
/// basis, then OLS on the raw selected columns.
pub fn gibs_select_with(
    y: &[f64],
    basis: &WindowBasis,
    projected: &DMatrix<f64>,
    stages: &BasisSetStages,
    cfg: &GibsConfig,
    seed: u64,
) -> Result<GibsFit> {
    if y.len() != basis.x.nrows() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Config(format!(
            "response must hold {} finite values",
            basis.x.nrows()
        )));
    }
    let mut candidates = basis.factor_indices();
    candidates.extend(&stages.union_prototypes);
    candidates.sort_unstable();
    if candidates.is_empty() {
        return finish_fit(y, basis, candidates, Vec::new(), None, cfg.significance);
    }
    let weights: Vec<f64> = candidates
        .iter()
        .map(|&j| {
            if cfg.force_market && basis.columns[j].role == BasisRole::Market {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    let opts = LassoOptions {
        penalty_factors: Some(weights),
        ..cfg.lasso.clone()
    };
    let xc = projected.select_columns(&candidates);
    let path = lasso_path(y, &xc, &cfg.grid, &opts)?;
    let cv = cross_validate(y, &xc, &path, cfg.cv_folds, seed, &opts)?;
    let (lambda, idx) = gibs_lambda(&path, &cv, cfg.lasso_cap)?;
    let selected: Vec<usize> = path.std_coefs[idx]
        .iter()
        .zip(&candidates)
        .filter(|(b, _)| b.abs() > SUPPORT_EPS)
        .map(|(_, &j)| j)
        .collect();
    finish_fit(y, basis, candidates, selected, Some((lambda, cv.lambda_1se)), cfg.significance)
}

/// All six steps on one window.
pub fn gibs_select(y: &[f64], basis: &WindowBasis, cfg: &GibsConfig, seed: u64) -> Result<(GibsFit, BasisSetStages)> {
    let projected = basis.projected()?;
    let stages = basis_stages(basis, &projected, cfg)?;
    let fit = gibs_select_with(y, basis, &projected, &stages, cfg, seed)?;
    Ok((fit, stages))
}
