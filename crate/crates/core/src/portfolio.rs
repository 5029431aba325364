//! Trailing-volatility rankings, quartile portfolios, equal-weighted portfolio
//! returns and cumulative-capital curves.

use std::ops::Range;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{eligible_stocks, DataError, ReturnsPanel, UniverseRules};

#[derive(Debug, Error)]
pub enum PortfolioError {
    #[error("{date}: {n} ranked stocks, need at least 8 to form quartiles")]
    TooFewStocks { date: NaiveDate, n: usize },
    #[error("return {value} at position {index} wipes out capital")]
    Wipeout { index: usize, value: f64 },
    #[error("missing return at position {0}")]
    MissingReturn(usize),
    #[error("{date}: every {side} constituent is missing")]
    EmptyWeek { date: NaiveDate, side: &'static str },
    #[error(transparent)]
    Data(#[from] DataError),
}

/// Per-stock trailing volatility of weekly excess returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolRanking {
    pub date: NaiveDate,
    pub row: usize,
    pub stock_ids: Vec<String>,
    pub vols: Vec<f64>,
}

/// Low- and high-volatility quartiles formed for the week at `row`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VolPortfolios {
    pub date: NaiveDate,
    pub row: usize,
    pub low_ids: Vec<String>,
    pub high_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSeries {
    pub dates: Vec<NaiveDate>,
    pub rows: Vec<usize>,
    pub low_excess: Vec<f64>,
    pub high_excess: Vec<f64>,
}

impl PortfolioSeries {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Position of a panel row in the series.
    pub fn position_of_row(&self, row: usize) -> Option<usize> {
        self.rows.binary_search(&row).ok()
    }

    /// Slice `[start, end)` of the low or high series by panel rows.
    pub fn window(&self, high: bool, rows: Range<usize>) -> Option<&[f64]> {
        let a = self.position_of_row(rows.start)?;
        let b = a + rows.len();
        if b > self.len() || self.rows[b - 1] != rows.end - 1 {
            return None;
        }
        let s = if high { &self.high_excess } else { &self.low_excess };
        Some(&s[a..b])
    }
}

/// Sample standard deviation (n-1 denominator); `None` below two points.
pub fn sample_std(x: &[f64]) -> Option<f64> {
    if x.len() < 2 {
        return None;
    }
    if x.iter().all(|&v| v == x[0]) {
        return Some(0.0);
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let ss: f64 = x.iter().map(|v| (v - mean).powi(2)).sum();
    Some((ss / (n - 1.0)).sqrt())
}

/// Trailing volatility at `date` using the 52 weeks before it. Stocks with
/// fewer than 42 observed weeks are dropped with a warning.
pub fn trailing_vol<S: AsRef<str>>(
    panel: &ReturnsPanel,
    date: NaiveDate,
    stock_ids: &[S],
) -> Result<VolRanking, PortfolioError> {
    let row = panel
        .calendar()
        .index_of(date)
        .ok_or_else(|| DataError::Window(format!("{date} is not in the calendar")))?;
    let cols = stock_ids
        .iter()
        .map(|s| {
            panel
                .column_of(s.as_ref())
                .ok_or_else(|| DataError::Invalid(format!("unknown asset `{}`", s.as_ref())))
        })
        .collect::<Result<Vec<_>, _>>()?;
    trailing_vol_at(panel, row, &cols, &UniverseRules::default())
}

/// Column-index form of [`trailing_vol`] with explicit rules.
pub fn trailing_vol_at(
    panel: &ReturnsPanel,
    row: usize,
    cols: &[usize],
    rules: &UniverseRules,
) -> Result<VolRanking, PortfolioError> {
    let lo = row.saturating_sub(rules.stock_lookback);
    let min_obs = rules.min_stock_observations().max(2);
    let mut stock_ids = Vec::with_capacity(cols.len());
    let mut vols = Vec::with_capacity(cols.len());
    let mut dropped = 0usize;
    for &c in cols {
        let obs: Vec<f64> = panel
            .excess_series(c, lo..row)?
            .into_iter()
            .filter(|v| !v.is_nan())
            .collect();
        if obs.len() < min_obs {
            dropped += 1;
            continue;
        }
        stock_ids.push(panel.asset(c).asset_id.clone());
        vols.push(sample_std(&obs).expect("at least two observations"));
    }
    if dropped > 0 {
        log::warn!(
            "{}: {dropped} stocks below the {min_obs}-observation floor",
            panel.calendar().date(row)
        );
    }
    Ok(VolRanking {
        date: panel.calendar().date(row),
        row,
        stock_ids,
        vols,
    })
}

/// Bottom and top `floor(n/4)` stocks by volatility, ties by ascending id.
pub fn form_portfolios(ranking: &VolRanking) -> Result<VolPortfolios, PortfolioError> {
    form_portfolios_with(ranking, 0.25)
}

/// Bottom and top `floor(fraction * n)` stocks, for `fraction` in (0, 0.5].
pub fn form_portfolios_with(ranking: &VolRanking, fraction: f64) -> Result<VolPortfolios, PortfolioError> {
    let n = ranking.stock_ids.len();
    if n < 8 {
        return Err(PortfolioError::TooFewStocks {
            date: ranking.date,
            n,
        });
    }
    let q = (fraction * n as f64 + 1e-9).floor() as usize;
    if q == 0 {
        return Err(PortfolioError::TooFewStocks {
            date: ranking.date,
            n,
        });
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        ranking.vols[a]
            .total_cmp(&ranking.vols[b])
            .then_with(|| ranking.stock_ids[a].cmp(&ranking.stock_ids[b]))
    });
    let low_ids = order[..q].iter().map(|&i| ranking.stock_ids[i].clone()).collect();
    let high_ids = order[n - q..].iter().map(|&i| ranking.stock_ids[i].clone()).collect();
    Ok(VolPortfolios {
        date: ranking.date,
        row: ranking.row,
        low_ids,
        high_ids,
    })
}

/// Rankings and quartiles for every row in `rows`, formed in parallel.
pub fn build_portfolios(
    panel: &ReturnsPanel,
    rows: Range<usize>,
    rules: &UniverseRules,
) -> Result<Vec<VolPortfolios>, PortfolioError> {
    rows.into_par_iter()
        .map(|row| {
            let cols = eligible_stocks(panel, row, rules);
            form_portfolios_with(&trailing_vol_at(panel, row, &cols, rules)?, rules.portfolio_fraction)
        })
        .collect()
}

fn side_mean(
    panel: &ReturnsPanel,
    row: usize,
    ids: &[String],
    side: &'static str,
) -> Result<f64, PortfolioError> {
    let mut sum = 0.0;
    let mut count = 0usize;
    for id in ids {
        let col = panel
            .column_of(id)
            .ok_or_else(|| DataError::Invalid(format!("unknown asset `{id}`")))?;
        if let Some(v) = panel.get(row, col) {
            sum += v;
            count += 1;
        }
    }
    let date = panel.calendar().date(row);
    if count == 0 {
        return Err(PortfolioError::EmptyWeek { date, side });
    }
    if count < ids.len() {
        log::warn!(
            "{date}: {} of {} {side} constituents missing, dropped from the mean",
            ids.len() - count,
            ids.len()
        );
    }
    Ok(sum / count as f64)
}

/// Equal-weighted excess returns of both quartiles, one entry per membership.
pub fn portfolio_returns(
    panel: &ReturnsPanel,
    memberships: &[VolPortfolios],
) -> Result<PortfolioSeries, PortfolioError> {
    let mut out = PortfolioSeries {
        dates: Vec::with_capacity(memberships.len()),
        rows: Vec::with_capacity(memberships.len()),
        low_excess: Vec::with_capacity(memberships.len()),
        high_excess: Vec::with_capacity(memberships.len()),
    };
    for m in memberships {
        let rf = panel.risk_free_at(m.row)?;
        out.dates.push(m.date);
        out.rows.push(m.row);
        out.low_excess.push(side_mean(panel, m.row, &m.low_ids, "low")? - rf);
        out.high_excess.push(side_mean(panel, m.row, &m.high_ids, "high")? - rf);
    }
    Ok(out)
}

/// Compounded capital starting from 1 before the first return.
pub fn cumulative_capital(returns: &[f64]) -> Result<Vec<f64>, PortfolioError> {
    let mut cap = 1.0;
    returns
        .iter()
        .enumerate()
        .map(|(i, &r)| {
            if r.is_nan() {
                return Err(PortfolioError::MissingReturn(i));
            }
            if r <= -1.0 {
                return Err(PortfolioError::Wipeout { index: i, value: r });
            }
            cap *= 1.0 + r;
            Ok(cap)
        })
        .collect()
}
