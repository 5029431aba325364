use std::collections::BTreeMap;
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FactorFit, FactorModel, GibsConfig, ModelRegistry, WindowBasis, WindowContext};
use crate::data::{ReturnsPanel, UniverseRules};
use crate::linreg::anova_nested;
use crate::portfolio::PortfolioSeries;
use crate::{mix_seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Low,
    High,
}

impl Side {
    pub const BOTH: [Side; 2] = [Side::Low, Side::High];

    pub fn as_str(self) -> &'static str {
        match self {
            Side::Low => "low",
            Side::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidePair<T> {
    pub low: T,
    pub high: T,
}

impl<T> SidePair<T> {
    pub fn get(&self, side: Side) -> &T {
        match side {
            Side::Low => &self.low,
            Side::High => &self.high,
        }
    }
}

/// Per-week, per-portfolio record of one model fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekFit {
    pub n_candidates: usize,
    pub selected: Vec<String>,
    pub regressors: Vec<String>,
    pub significant: Vec<String>,
    /// Slopes aligned with `regressors`.
    pub coefficients: Vec<f64>,
    pub p_values: Vec<f64>,
    pub alpha: f64,
    pub alpha_p: f64,
    pub r2: f64,
    pub adj_r2: f64,
    pub lambda: Option<f64>,
    pub degenerate: bool,
    /// One-week-ahead prediction with window-frozen coefficients.
    pub prediction: f64,
    pub realized: f64,
    pub residual: f64,
}

impl WeekFit {
    fn from_fit(fit: &FactorFit, basis: &WindowBasis, realized: f64) -> Result<Self> {
        let prediction = fit.predict(&basis.next);
        if !prediction.is_finite() {
            return Err(Error::Config("a selected basis asset has no return in the evaluation week".into()));
        }
        let alpha = fit.ols.intercept.expect("fits carry an intercept");
        Ok(Self {
            n_candidates: fit.candidates.len(),
            selected: basis.ids(&fit.selected),
            regressors: basis.ids(&fit.regressors),
            significant: basis.ids(&fit.significant),
            coefficients: fit.ols.estimates(),
            p_values: fit.ols.p_values(),
            alpha: alpha.estimate,
            alpha_p: alpha.p_value,
            r2: fit.ols.r2,
            adj_r2: fit.ols.adj_r2,
            lambda: fit.lambda,
            degenerate: fit.degenerate,
            prediction,
            realized,
            residual: realized - prediction,
        })
    }
}

/// One evaluation week of the rolling estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerWeek {
    pub date: NaiveDate,
    pub row: usize,
    pub window_start: NaiveDate,
    pub window_end: NaiveDate,
    pub n_etfs: usize,
    /// Size of the union prototype set, when a model computed it.
    pub union_size: Option<usize>,
    pub fits: BTreeMap<String, SidePair<WeekFit>>,
    /// p-value of the F test of the five-factor model against the five
    /// factors plus the AMF selection, when both models ran and the AMF
    /// selection adds a column.
    pub gof_anova_p: Option<SidePair<Option<f64>>>,
}

impl LedgerWeek {
    pub fn fit(&self, model: &str, side: Side) -> Option<&WeekFit> {
        self.fits.get(model).map(|p| p.get(side))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekFailure {
    pub date: NaiveDate,
    pub row: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct WindowLedger {
    pub weeks: Vec<LedgerWeek>,
    pub failures: Vec<WeekFailure>,
}

impl WindowLedger {
    pub fn len(&self) -> usize {
        self.weeks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weeks.is_empty()
    }

    /// Fits of one model and side in week order. Panics if a week lacks it.
    pub fn fits(&self, model: &str, side: Side) -> Vec<&WeekFit> {
        self.weeks
            .iter()
            .map(|w| w.fit(model, side).unwrap_or_else(|| panic!("week {} has no `{model}` fit", w.date)))
            .collect()
    }

    pub fn has_model(&self, model: &str) -> bool {
        self.weeks.first().is_some_and(|w| w.fits.contains_key(model))
    }

    /// One JSON object per week.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for week in &self.weeks {
            serde_json::to_writer(&mut w, week)?;
            w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut weeks = Vec::new();
        for line in std::io::BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                weeks.push(serde_json::from_str(&line)?);
            }
        }
        Ok(Self {
            weeks,
            failures: Vec::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RollingConfig {
    pub gibs: GibsConfig,
    pub rules: UniverseRules,
    /// Registry names of the models to fit each week.
    pub models: Vec<String>,
    pub seed: u64,
}

impl Default for RollingConfig {
    fn default() -> Self {
        Self {
            gibs: GibsConfig::default(),
            rules: UniverseRules::default(),
            models: vec!["amf".into(), "ff5".into()],
            seed: 42,
        }
    }
}

fn side_code(side: Side) -> u64 {
    match side {
        Side::Low => 0,
        Side::High => 1,
    }
}

fn fit_week(
    panel: &ReturnsPanel,
    series: &PortfolioSeries,
    row: usize,
    cfg: &RollingConfig,
    models: &[(String, Arc<dyn FactorModel>)],
) -> Result<LedgerWeek> {
    let basis = WindowBasis::build(panel, row, &cfg.rules, true)?;
    let missing = || Error::Config(format!("portfolio series does not cover rows {}..={row}", basis.rows.start));
    let pos = series.position_of_row(row).ok_or_else(missing)?;
    let ys = SidePair {
        low: series.window(false, basis.rows.clone()).ok_or_else(missing)?,
        high: series.window(true, basis.rows.clone()).ok_or_else(missing)?,
    };
    let realized = SidePair {
        low: series.low_excess[pos],
        high: series.high_excess[pos],
    };
    let ctx = WindowContext::new(&basis, &cfg.gibs);
    let mut fits = BTreeMap::new();
    let mut raw: BTreeMap<&str, SidePair<FactorFit>> = BTreeMap::new();
    for (name, model) in models {
        let mut pair = Vec::with_capacity(2);
        for side in Side::BOTH {
            let seed = mix_seed(cfg.seed, &[row as u64, side_code(side)]);
            pair.push(model.fit(&ctx, ys.get(side), seed)?);
        }
        let high = pair.pop().expect("two fits");
        let low = pair.pop().expect("two fits");
        fits.insert(
            name.clone(),
            SidePair {
                low: WeekFit::from_fit(&low, &basis, realized.low)?,
                high: WeekFit::from_fit(&high, &basis, realized.high)?,
            },
        );
        raw.insert(name.as_str(), SidePair { low, high });
    }
    let gof_anova_p = match (raw.get("ff5"), raw.get("amf")) {
        (Some(ff5), Some(amf)) => {
            let p = |side: Side| -> Option<f64> {
                let restricted = &ff5.get(side).regressors;
                let mut full = restricted.clone();
                full.extend(amf.get(side).selected.iter().filter(|j| !restricted.contains(j)));
                if full.len() == restricted.len() {
                    return None;
                }
                match anova_nested(ys.get(side), &basis.select(restricted), &basis.select(&full), true) {
                    Ok(a) => Some(a.p_value),
                    Err(e) => {
                        log::warn!("{}: goodness-of-fit F test skipped: {e}", panel.calendar().date(row));
                        None
                    }
                }
            };
            Some(SidePair {
                low: p(Side::Low),
                high: p(Side::High),
            })
        }
        _ => None,
    };
    let cal = panel.calendar();
    Ok(LedgerWeek {
        date: cal.date(row),
        row,
        window_start: cal.date(basis.rows.start),
        window_end: cal.date(basis.rows.end - 1),
        n_etfs: basis.etf_indices().len(),
        union_size: ctx.computed_stages().map(|s| s.union_prototypes.len()),
        fits,
        gof_anova_p,
    })
}

/// Fits every configured model to both portfolios for each evaluation row,
/// in parallel over weeks on the current rayon pool. Weeks that fail are
/// recorded in `failures` and skipped.
pub fn run_rolling(
    panel: &ReturnsPanel,
    series: &PortfolioSeries,
    eval_rows: &[usize],
    cfg: &RollingConfig,
    registry: &ModelRegistry,
) -> Result<WindowLedger> {
    let models = cfg
        .models
        .iter()
        .map(|m| Ok((m.clone(), registry.get(m)?)))
        .collect::<Result<Vec<_>>>()?;
    let results: Vec<(usize, Result<LedgerWeek>)> = eval_rows
        .par_iter()
        .map(|&row| (row, fit_week(panel, series, row, cfg, &models)))
        .collect();
    let mut ledger = WindowLedger::default();
    for (row, r) in results {
        match r {
            Ok(w) => ledger.weeks.push(w),
            Err(e) => {
                let date = panel.calendar().date(row.min(panel.n_dates() - 1));
                let e = Error::Window {
                    date,
                    source: Box::new(e),
                };
                log::error!("{e}");
                ledger.failures.push(WeekFailure {
                    date,
                    row,
                    message: e.to_string(),
                });
            }
        }
    }
    Ok(ledger)
}
