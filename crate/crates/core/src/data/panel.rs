use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use chrono::NaiveDate;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::DataError;
use crate::{FF5_IDS, RISK_FREE_ID};

/// Strictly increasing weekly period-end dates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Calendar {
    dates: Vec<NaiveDate>,
}

impl Calendar {
    pub fn new(dates: Vec<NaiveDate>) -> Result<Self, DataError> {
        if let Some(w) = dates.windows(2).find(|w| w[0] >= w[1]) {
            return Err(DataError::Invalid(format!(
                "calendar not strictly increasing at {} -> {}",
                w[0], w[1]
            )));
        }
        Ok(Self { dates })
    }

    /// Weekly calendar of `len` dates starting at `start`.
    pub fn weekly(start: NaiveDate, len: usize) -> Self {
        let dates = (0..len)
            .map(|i| start + chrono::Duration::weeks(i as i64))
            .collect();
        Self { dates }
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    pub fn dates(&self) -> &[NaiveDate] {
        &self.dates
    }

    pub fn date(&self, row: usize) -> NaiveDate {
        self.dates[row]
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.dates.binary_search(&date).ok()
    }

    /// First row whose date is on or after `date`.
    pub fn first_on_or_after(&self, date: NaiveDate) -> usize {
        self.dates.partition_point(|d| *d < date)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AssetKind {
    Stock,
    Etf,
    #[serde(rename = "ff5")]
    Ff5Factor,
    #[serde(rename = "rf")]
    RiskFree,
}

impl AssetKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AssetKind::Stock => "stock",
            AssetKind::Etf => "etf",
            AssetKind::Ff5Factor => "ff5",
            AssetKind::RiskFree => "rf",
        }
    }
}

impl fmt::Display for AssetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AssetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stock" => Ok(AssetKind::Stock),
            "etf" => Ok(AssetKind::Etf),
            "ff5" | "ff5factor" | "factor" => Ok(AssetKind::Ff5Factor),
            "rf" | "riskfree" | "risk_free" => Ok(AssetKind::RiskFree),
            other => Err(format!("unknown asset kind `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssetMeta {
    pub asset_id: String,
    pub kind: AssetKind,
    pub share_code: i32,
    pub exchange_code: i32,
    pub etf_class: Option<String>,
    pub etf_subclass: Option<String>,
}

impl AssetMeta {
    pub fn stock(id: impl Into<String>) -> Self {
        Self {
            asset_id: id.into(),
            kind: AssetKind::Stock,
            share_code: 10,
            exchange_code: 1,
            etf_class: None,
            etf_subclass: None,
        }
    }

    pub fn etf(id: impl Into<String>, class: impl Into<String>, subclass: impl Into<String>) -> Self {
        Self {
            asset_id: id.into(),
            kind: AssetKind::Etf,
            share_code: 73,
            exchange_code: 1,
            etf_class: Some(class.into()),
            etf_subclass: Some(subclass.into()),
        }
    }

    pub fn factor(id: impl Into<String>) -> Self {
        Self {
            asset_id: id.into(),
            kind: AssetKind::Ff5Factor,
            share_code: 0,
            exchange_code: 0,
            etf_class: None,
            etf_subclass: None,
        }
    }

    pub fn risk_free() -> Self {
        Self {
            asset_id: RISK_FREE_ID.to_string(),
            kind: AssetKind::RiskFree,
            share_code: 0,
            exchange_code: 0,
            etf_class: None,
            etf_subclass: None,
        }
    }
}

/// Date-indexed matrix of weekly simple returns. Missing cells are NaN.
///
/// Storage is column-major (one contiguous series per asset). FF5 factor
/// columns hold excess returns as published; every other column holds raw
/// returns.
#[derive(Debug, Clone)]
pub struct ReturnsPanel {
    calendar: Calendar,
    assets: Vec<AssetMeta>,
    index: HashMap<String, usize>,
    returns: Vec<f64>,
    market_cap: Option<Vec<f64>>,
    delist_return: Vec<Option<f64>>,
    last_row: Vec<Option<usize>>,
}

impl ReturnsPanel {
    /// Assembles a panel from column-major returns (`returns[col * T + row]`).
    pub fn new(
        calendar: Calendar,
        assets: Vec<AssetMeta>,
        returns: Vec<f64>,
        market_cap: Option<Vec<f64>>,
        delist_return: Vec<Option<f64>>,
    ) -> Result<Self, DataError> {
        let t = calendar.len();
        let n = assets.len();
        if returns.len() != t * n {
            return Err(DataError::Invalid(format!(
                "returns has {} cells, expected {t}x{n}",
                returns.len()
            )));
        }
        if let Some(caps) = &market_cap {
            if caps.len() != t * n {
                return Err(DataError::Invalid(format!(
                    "market cap has {} cells, expected {t}x{n}",
                    caps.len()
                )));
            }
        }
        if delist_return.len() != n {
            return Err(DataError::Invalid("delist vector length mismatch".into()));
        }
        let mut index = HashMap::with_capacity(n);
        for (j, a) in assets.iter().enumerate() {
            let has_class = a.etf_class.is_some() && a.etf_subclass.is_some();
            if (a.kind == AssetKind::Etf) != has_class {
                return Err(DataError::Invalid(format!(
                    "asset `{}`: etf class/subclass must be present iff kind is etf",
                    a.asset_id
                )));
            }
            if index.insert(a.asset_id.clone(), j).is_some() {
                return Err(DataError::Invalid(format!("duplicate asset `{}`", a.asset_id)));
            }
        }
        let last_row = (0..n)
            .map(|j| returns[j * t..(j + 1) * t].iter().rposition(|v| !v.is_nan()))
            .collect();
        Ok(Self {
            calendar,
            assets,
            index,
            returns,
            market_cap,
            delist_return,
            last_row,
        })
    }

    pub fn calendar(&self) -> &Calendar {
        &self.calendar
    }

    pub fn n_dates(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn assets(&self) -> &[AssetMeta] {
        &self.assets
    }

    pub fn asset(&self, col: usize) -> &AssetMeta {
        &self.assets[col]
    }

    pub fn column_of(&self, asset_id: &str) -> Option<usize> {
        self.index.get(asset_id).copied()
    }

    pub fn columns_of_kind(&self, kind: AssetKind) -> Vec<usize> {
        (0..self.assets.len())
            .filter(|&j| self.assets[j].kind == kind)
            .collect()
    }

    /// Column indices of the five factors in canonical order, if all present.
    pub fn ff5_columns(&self) -> Option<[usize; 5]> {
        let mut out = [0; 5];
        for (slot, id) in out.iter_mut().zip(FF5_IDS) {
            *slot = self.column_of(id)?;
        }
        Some(out)
    }

    pub fn risk_free_column(&self) -> Option<usize> {
        self.assets.iter().position(|a| a.kind == AssetKind::RiskFree)
    }

    /// Raw series of one asset, NaN where missing.
    pub fn series(&self, col: usize) -> &[f64] {
        let t = self.n_dates();
        &self.returns[col * t..(col + 1) * t]
    }

    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        let v = self.series(col)[row];
        (!v.is_nan()).then_some(v)
    }

    pub fn market_cap(&self, row: usize, col: usize) -> Option<f64> {
        let caps = self.market_cap.as_ref()?;
        let v = caps[col * self.n_dates() + row];
        (!v.is_nan()).then_some(v)
    }

    pub fn has_market_cap(&self) -> bool {
        self.market_cap.is_some()
    }

    pub fn delist_return(&self, col: usize) -> Option<f64> {
        self.delist_return[col]
    }

    /// Row of the delisting return for delisted assets.
    pub fn delist_row(&self, col: usize) -> Option<usize> {
        self.delist_return[col].and(self.last_row[col])
    }

    /// Last row with an observed return.
    pub fn last_observed_row(&self, col: usize) -> Option<usize> {
        self.last_row[col]
    }

    /// Excess return of one cell: raw minus risk-free, or the stored value for
    /// factor columns (already net of the risk-free rate). `None` when the cell
    /// is missing; an error when the risk-free rate is missing.
    pub fn excess_at(&self, row: usize, col: usize) -> Result<Option<f64>, DataError> {
        let meta = &self.assets[col];
        match meta.kind {
            AssetKind::Ff5Factor => Ok(self.get(row, col)),
            AssetKind::RiskFree => Ok(Some(0.0)),
            AssetKind::Stock | AssetKind::Etf => {
                let Some(v) = self.get(row, col) else {
                    return Ok(None);
                };
                Ok(Some(v - self.risk_free_at(row)?))
            }
        }
    }

    pub fn risk_free_at(&self, row: usize) -> Result<f64, DataError> {
        let rf = self
            .risk_free_column()
            .ok_or_else(|| DataError::Invalid("panel has no risk-free column".into()))?;
        self.get(row, rf)
            .ok_or(DataError::MissingRiskFree(self.calendar.date(row)))
    }

    /// Excess-return series of one asset over `rows`, NaN where missing.
    pub fn excess_series(&self, col: usize, rows: Range<usize>) -> Result<Vec<f64>, DataError> {
        rows.map(|r| Ok(self.excess_at(r, col)?.unwrap_or(f64::NAN)))
            .collect()
    }

    /// `Y = R - r0` for the given assets over `rows` (rows × assets). Missing
    /// cells stay NaN.
    pub fn excess_returns(&self, ids: &[&str], rows: Range<usize>) -> Result<DMatrix<f64>, DataError> {
        let cols = ids
            .iter()
            .map(|id| {
                self.column_of(id)
                    .ok_or_else(|| DataError::Invalid(format!("unknown asset `{id}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        self.excess_matrix(&cols, rows)
    }

    pub fn excess_matrix(&self, cols: &[usize], rows: Range<usize>) -> Result<DMatrix<f64>, DataError> {
        if rows.end > self.n_dates() {
            return Err(DataError::Window(format!(
                "rows {}..{} exceed calendar length {}",
                rows.start,
                rows.end,
                self.n_dates()
            )));
        }
        let n = rows.len();
        let mut out = DMatrix::zeros(n, cols.len());
        for (k, &c) in cols.iter().enumerate() {
            for (i, r) in rows.clone().enumerate() {
                out[(i, k)] = self.excess_at(r, c)?.unwrap_or(f64::NAN);
            }
        }
        Ok(out)
    }

    /// Number of observed returns for `col` in `rows`.
    pub fn observed_count(&self, col: usize, rows: Range<usize>) -> usize {
        self.series(col)[rows].iter().filter(|v| !v.is_nan()).count()
    }

    /// Returns a copy with the extra assets appended (used to merge factor files).
    pub fn with_extra_columns(
        mut self,
        extra: Vec<(AssetMeta, Vec<f64>)>,
    ) -> Result<Self, DataError> {
        let t = self.n_dates();
        for (meta, series) in extra {
            if series.len() != t {
                return Err(DataError::Invalid(format!(
                    "series for `{}` has length {}, expected {t}",
                    meta.asset_id,
                    series.len()
                )));
            }
            if self.index.contains_key(&meta.asset_id) {
                return Err(DataError::Invalid(format!("duplicate asset `{}`", meta.asset_id)));
            }
            self.index.insert(meta.asset_id.clone(), self.assets.len());
            self.last_row.push(series.iter().rposition(|v| !v.is_nan()));
            self.returns.extend_from_slice(&series);
            if let Some(caps) = &mut self.market_cap {
                caps.extend(std::iter::repeat_n(f64::NAN, t));
            }
            self.delist_return.push(None);
            self.assets.push(meta);
        }
        Ok(self)
    }
}
