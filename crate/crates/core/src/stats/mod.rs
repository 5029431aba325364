//! Hypothesis tests and report tables over a rolling-estimation ledger.

mod report;
mod tables;

use std::collections::BTreeMap;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::gibs::{Side, SidePair, WindowLedger};
use crate::linreg::{anova_nested, stacked_interaction_designs, AnovaResult, RegressionError};
use crate::portfolio::PortfolioSeries;

pub use report::{build_report, write_dimensions, write_report, Report, ReportOptions};
pub use tables::{
    counts_table, factor_difference_over_period, gof_table, half_year_label, heatmap, heatmap_labels, oos_r2,
    risk_premia, CountsRow, CountsTable, CumcapRow, DimensionRow, GofRow, HeatmapMatrix, HeatmapMode,
    PeriodAnova, PremiumRow,
};

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 observations per series, got {0}")]
    TooShort(usize),
    #[error("non-finite input")]
    NonFinite,
    #[error("degenerate test: {0}")]
    Degenerate(String),
    #[error("p-value {0} outside [0, 1]")]
    Domain(f64),
    #[error("missing input: {0}")]
    Missing(String),
    #[error(transparent)]
    Regression(#[from] RegressionError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelchResult {
    pub mean_low: f64,
    pub mean_high: f64,
    pub t_stat: f64,
    /// Welch–Satterthwaite degrees of freedom.
    pub df: f64,
    /// One-sided, for the alternative that the low mean exceeds the high mean.
    pub p_value: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (n - 1.0);
    (m, v)
}

/// Unequal-variance two-sample t test of `mean(low) > mean(high)`.
pub fn welch_test(low: &[f64], high: &[f64]) -> Result<WelchResult, StatsError> {
    let n = low.len().min(high.len());
    if n < 2 {
        return Err(StatsError::TooShort(n));
    }
    if low.iter().chain(high).any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let (ml, vl) = mean_var(low);
    let (mh, vh) = mean_var(high);
    let (nl, nh) = (low.len() as f64, high.len() as f64);
    let (al, ah) = (vl / nl, vh / nh);
    let se2 = al + ah;
    if se2 <= 0.0 {
        return Err(StatsError::Degenerate("both series are constant".into()));
    }
    let t = (ml - mh) / se2.sqrt();
    let df = se2 * se2 / (al * al / (nl - 1.0) + ah * ah / (nh - 1.0));
    let p = StudentsT::new(0.0, 1.0, df)
        .map_err(|e| StatsError::Degenerate(e.to_string()))?
        .sf(t)
        .clamp(0.0, 1.0);
    Ok(WelchResult {
        mean_low: ml,
        mean_high: mh,
        t_stat: t,
        df,
        p_value: p,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Accumulation {
    /// Capital compounds: `Π(1 + r)`.
    #[default]
    Compound,
    /// Capital adds up: `1 + Σ r`.
    Sum,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestLevel {
    /// Test the cumulative-capital curves.
    #[default]
    Capital,
    /// Test the weekly series themselves.
    Returns,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ResidualTestOptions {
    pub accumulation: Accumulation,
    pub level: TestLevel,
}

/// Capital path starting from 1 before the first week.
pub fn accumulate(r: &[f64], how: Accumulation) -> Result<Vec<f64>, StatsError> {
    let mut cap = 1.0;
    let mut out = Vec::with_capacity(r.len());
    for &v in r {
        if !v.is_finite() {
            return Err(StatsError::NonFinite);
        }
        match how {
            Accumulation::Compound => {
                if v <= -1.0 {
                    return Err(StatsError::Degenerate(format!("return {v} wipes out capital")));
                }
                cap *= 1.0 + v;
            }
            Accumulation::Sum => cap += v,
        }
        out.push(cap);
    }
    Ok(out)
}

/// One row of the low-minus-high comparison: total return of each side over
/// the period and the Welch test between them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualTestRow {
    pub series: String,
    pub low: f64,
    pub high: f64,
    pub diff: f64,
    pub welch: WelchResult,
}

/// Weekly series compared by the anomaly tests: realized excess returns and
/// each model's out-of-sample residuals, in ledger week order.
pub fn anomaly_series(
    ledger: &WindowLedger,
    series: &PortfolioSeries,
) -> Result<Vec<(String, SidePair<Vec<f64>>)>, StatsError> {
    let mut excess = SidePair {
        low: Vec::with_capacity(ledger.len()),
        high: Vec::with_capacity(ledger.len()),
    };
    for w in &ledger.weeks {
        let pos = series
            .position_of_row(w.row)
            .ok_or_else(|| StatsError::Missing(format!("portfolio return for {}", w.date)))?;
        excess.low.push(series.low_excess[pos]);
        excess.high.push(series.high_excess[pos]);
    }
    let mut out = vec![("excess".to_string(), excess)];
    for model in ["ff5", "amf"] {
        if ledger.has_model(model) {
            let res = |side| ledger.fits(model, side).iter().map(|f| f.residual).collect();
            out.push((
                format!("{model}_residual"),
                SidePair {
                    low: res(Side::Low),
                    high: res(Side::High),
                },
            ));
        }
    }
    Ok(out)
}

/// Welch tests of low against high on excess returns and on each model's
/// residuals present in the ledger.
pub fn residual_anomaly_tests(
    ledger: &WindowLedger,
    series: &PortfolioSeries,
    opts: ResidualTestOptions,
) -> Result<Vec<ResidualTestRow>, StatsError> {
    anomaly_series(ledger, series)?
        .into_iter()
        .map(|(name, s)| {
            let cl = accumulate(&s.low, opts.accumulation)?;
            let ch = accumulate(&s.high, opts.accumulation)?;
            let total = |c: &[f64]| c.last().map_or(0.0, |v| v - 1.0);
            let welch = match opts.level {
                TestLevel::Capital => welch_test(&cl, &ch)?,
                TestLevel::Returns => welch_test(&s.low, &s.high)?,
            };
            Ok(ResidualTestRow {
                series: name,
                low: total(&cl),
                high: total(&ch),
                diff: total(&cl) - total(&ch),
                welch,
            })
        })
        .collect()
}

/// Per-week intercept p-values, keyed by model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterceptPvalues {
    pub dates: Vec<NaiveDate>,
    pub by_model: BTreeMap<String, SidePair<Vec<f64>>>,
}

pub fn intercept_pvalues(ledger: &WindowLedger) -> InterceptPvalues {
    let models: Vec<String> = ledger.weeks.first().map(|w| w.fits.keys().cloned().collect()).unwrap_or_default();
    let by_model = models
        .into_iter()
        .map(|m| {
            let p = |side| ledger.fits(&m, side).iter().map(|f| f.alpha_p).collect();
            let pair = SidePair {
                low: p(Side::Low),
                high: p(Side::High),
            };
            (m, pair)
        })
        .collect();
    InterceptPvalues {
        dates: ledger.weeks.iter().map(|w| w.date).collect(),
        by_model,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FdrResult {
    pub p_values: Vec<f64>,
    pub bh_q: Vec<f64>,
    pub bhy_q: Vec<f64>,
    /// Benjamini–Hochberg values before clamping to 1.
    pub bh_raw: Vec<f64>,
    /// Harmonic sum `c(m) = Σ 1/k`.
    pub c_m: f64,
}

/// Benjamini–Hochberg and Benjamini–Hochberg–Yekutieli adjusted values, in
/// input order.
pub fn fdr_adjust(p: &[f64]) -> Result<FdrResult, StatsError> {
    if let Some(&bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(StatsError::Domain(bad));
    }
    let m = p.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut bh_raw = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank0, &i) in order.iter().enumerate().rev() {
        running = running.min(m as f64 * p[i] / (rank0 + 1) as f64);
        // `m p / m` can round one ulp below `p`.
        bh_raw[i] = running.max(p[i]);
    }
    let c_m: f64 = (1..=m).map(|k| 1.0 / k as f64).sum();
    Ok(FdrResult {
        p_values: p.to_vec(),
        bh_q: bh_raw.iter().map(|q| q.min(1.0)).collect(),
        bhy_q: bh_raw.iter().map(|q| (q * c_m).min(1.0)).collect(),
        bh_raw,
        c_m,
    })
}

/// Share of weeks with a significant intercept, before and after
/// false-discovery control, in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterceptRow {
    pub side: Side,
    pub model: String,
    pub weeks: usize,
    pub pct_p: f64,
    pub pct_bh: f64,
    pub pct_bhy: f64,
}

pub fn intercept_report(pvals: &InterceptPvalues, level: f64) -> Result<Vec<InterceptRow>, StatsError> {
    let pct = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            100.0 * v.iter().filter(|&&x| x < level).count() as f64 / v.len() as f64
        }
    };
    let mut out = Vec::new();
    for side in Side::BOTH {
        for (model, pair) in &pvals.by_model {
            let p = pair.get(side);
            let fdr = fdr_adjust(p)?;
            out.push(InterceptRow {
                side,
                model: model.clone(),
                weeks: p.len(),
                pct_p: pct(p),
                pct_bh: pct(&fdr.bh_q),
                pct_bhy: pct(&fdr.bhy_q),
            });
        }
    }
    Ok(out)
}

/// F test of whether the two portfolios load differently on the union of
/// their factor sets: both responses are stacked over a shared design, and the
/// full model adds the design interacted with a high-portfolio indicator.
pub fn factor_difference_test(
    y_low: &[f64],
    y_high: &[f64],
    x: &DMatrix<f64>,
    s_low: &[usize],
    s_high: &[usize],
) -> Result<AnovaResult, StatsError> {
    if y_low.len() != x.nrows() || y_high.len() != x.nrows() {
        return Err(RegressionError::Dimension("responses and design differ in rows".into()).into());
    }
    let mut s: Vec<usize> = s_low.iter().chain(s_high).copied().collect();
    s.sort_unstable();
    s.dedup();
    if s.is_empty() {
        return Err(StatsError::Missing("both factor sets are empty".into()));
    }
    let w = x.select_columns(&s);
    let (restricted, full) = stacked_interaction_designs(&w, &w)?;
    let z: Vec<f64> = y_low.iter().chain(y_high).copied().collect();
    Ok(anova_nested(&z, &restricted, &full, true)?)
}
