//! CSV ingestion and emission for the long-format returns file, the asset
//! metadata file and the factor file.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;

use chrono::NaiveDate;
use serde::Deserialize;

use super::panel::{AssetKind, AssetMeta, Calendar, ReturnsPanel};
use super::taxonomy::Taxonomy;
use super::DataError;
use crate::{FF5_IDS, RISK_FREE_ID};

#[derive(Debug, Deserialize)]
struct ReturnRecord {
    date: String,
    asset_id: String,
    ret: Option<f64>,
    #[serde(default)]
    delist_ret: Option<f64>,
    #[serde(default)]
    mcap: Option<f64>,
}

#[derive(Debug, Deserialize)]
struct MetaRecord {
    asset_id: String,
    kind: String,
    share_code: i32,
    exchange_code: i32,
    #[serde(default)]
    etf_class: Option<String>,
    #[serde(default)]
    etf_subclass: Option<String>,
}

#[derive(Debug, Deserialize)]
struct FactorRecord {
    date: String,
    mkt_rf: Option<f64>,
    smb: Option<f64>,
    hml: Option<f64>,
    rmw: Option<f64>,
    cma: Option<f64>,
    rf: Option<f64>,
}

struct ReturnRow {
    line: u64,
    date: NaiveDate,
    col: usize,
    ret: Option<f64>,
    delist_ret: Option<f64>,
    mcap: Option<f64>,
}

fn open(path: &Path) -> Result<csv::Reader<std::fs::File>, DataError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| match e.into_kind() {
            csv::ErrorKind::Io(source) => DataError::Io {
                path: path.display().to_string(),
                source,
            },
            other => DataError::Parse {
                path: path.display().to_string(),
                line: 0,
                message: format!("{other:?}"),
            },
        })
}

fn parse_err(path: &Path, line: u64, message: impl Into<String>) -> DataError {
    DataError::Parse {
        path: path.display().to_string(),
        line,
        message: message.into(),
    }
}

fn parse_date(path: &Path, line: u64, s: &str) -> Result<NaiveDate, DataError> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map_err(|e| parse_err(path, line, format!("bad date `{s}`: {e}")))
}

fn read_records<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<(u64, T)>, DataError> {
    let mut rdr = open(path)?;
    let headers = rdr
        .headers()
        .map_err(|e| parse_err(path, 1, e.to_string()))?
        .clone();
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            parse_err(path, line, e.to_string())
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        let row: T = rec
            .deserialize(Some(&headers))
            .map_err(|e| parse_err(path, line, e.to_string()))?;
        out.push((line, row));
    }
    Ok(out)
}

fn read_meta(path: &Path) -> Result<Vec<AssetMeta>, DataError> {
    let taxonomy = Taxonomy::builtin();
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, r) in read_records::<MetaRecord>(path)? {
        let kind: AssetKind = r.kind.parse().map_err(|e: String| parse_err(path, line, e))?;
        let class = r.etf_class.filter(|s| !s.is_empty());
        let subclass = r.etf_subclass.filter(|s| !s.is_empty());
        if kind == AssetKind::Etf {
            match (&class, &subclass) {
                (Some(c), Some(s)) => taxonomy
                    .validate(c, s)
                    .map_err(|e| parse_err(path, line, e.to_string()))?,
                _ => return Err(parse_err(path, line, "etf row needs etf_class and etf_subclass")),
            }
        } else if class.is_some() || subclass.is_some() {
            return Err(parse_err(path, line, "etf_class/etf_subclass given for a non-etf asset"));
        }
        if !seen.insert(r.asset_id.clone()) {
            return Err(parse_err(path, line, format!("asset `{}` listed twice", r.asset_id)));
        }
        out.push(AssetMeta {
            asset_id: r.asset_id,
            kind,
            share_code: r.share_code,
            exchange_code: r.exchange_code,
            etf_class: class,
            etf_subclass: subclass,
        });
    }
    Ok(out)
}

fn read_returns(path: &Path, index: &HashMap<&str, usize>) -> Result<Vec<ReturnRow>, DataError> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, r) in read_records::<ReturnRecord>(path)? {
        let date = parse_date(path, line, &r.date)?;
        let col = *index
            .get(r.asset_id.as_str())
            .ok_or_else(|| DataError::UnknownAsset {
                path: path.display().to_string(),
                line,
                asset_id: r.asset_id.clone(),
            })?;
        if !seen.insert((date, col)) {
            return Err(DataError::Duplicate {
                path: path.display().to_string(),
                line,
                date: r.date,
                asset_id: r.asset_id,
            });
        }
        if r.ret.is_none() && r.delist_ret.is_none() {
            return Err(parse_err(path, line, "row has neither ret nor delist_ret"));
        }
        out.push(ReturnRow {
            line,
            date,
            col,
            ret: r.ret,
            delist_ret: r.delist_ret,
            mcap: r.mcap,
        });
    }
    Ok(out)
}

type FactorTable = Vec<(NaiveDate, [Option<f64>; 6])>;

/// Reads `factors.csv` (`date,mkt_rf,smb,hml,rmw,cma,rf`).
pub fn load_factors(path: &Path) -> Result<FactorTable, DataError> {
    let mut out: FactorTable = Vec::new();
    let mut seen = BTreeSet::new();
    for (line, r) in read_records::<FactorRecord>(path)? {
        let date = parse_date(path, line, &r.date)?;
        if !seen.insert(date) {
            return Err(DataError::Duplicate {
                path: path.display().to_string(),
                line,
                date: r.date,
                asset_id: "factors".into(),
            });
        }
        out.push((date, [r.mkt_rf, r.smb, r.hml, r.rmw, r.cma, r.rf]));
    }
    Ok(out)
}

/// Loads the long-format returns file and metadata file into a panel.
pub fn load_panel(returns_csv: &Path, meta_csv: &Path) -> Result<ReturnsPanel, DataError> {
    assemble(returns_csv, meta_csv, None)
}

/// Loads returns, metadata and the factor file (which supplies the five
/// factors and the risk-free rate). The calendar is the union of dates.
pub fn load_dataset(
    returns_csv: &Path,
    meta_csv: &Path,
    factors_csv: &Path,
) -> Result<ReturnsPanel, DataError> {
    let factors = load_factors(factors_csv)?;
    assemble(returns_csv, meta_csv, Some(factors))
}

fn assemble(
    returns_csv: &Path,
    meta_csv: &Path,
    factors: Option<FactorTable>,
) -> Result<ReturnsPanel, DataError> {
    let mut assets = read_meta(meta_csv)?;
    if factors.is_some() {
        if let Some(clash) = assets
            .iter()
            .find(|a| FF5_IDS.contains(&a.asset_id.as_str()) || a.asset_id == RISK_FREE_ID)
        {
            return Err(DataError::Invalid(format!(
                "meta lists `{}` which the factor file also supplies",
                clash.asset_id
            )));
        }
    }
    let n_meta = assets.len();
    let index: HashMap<&str, usize> = assets
        .iter()
        .enumerate()
        .map(|(j, a)| (a.asset_id.as_str(), j))
        .collect();
    let rows = read_returns(returns_csv, &index)?;

    let mut dates: BTreeSet<NaiveDate> = rows.iter().map(|r| r.date).collect();
    if let Some(f) = &factors {
        dates.extend(f.iter().map(|(d, _)| *d));
    }
    let calendar = Calendar::new(dates.into_iter().collect())?;
    let t = calendar.len();

    let mut returns = vec![f64::NAN; t * n_meta];
    let mut caps = vec![f64::NAN; t * n_meta];
    let mut any_cap = false;
    let mut delist: Vec<Option<f64>> = vec![None; n_meta];
    let mut delist_line: Vec<Option<(u64, usize)>> = vec![None; n_meta];

    for r in &rows {
        let row = calendar.index_of(r.date).expect("date collected into calendar");
        if let Some(v) = r.ret {
            returns[r.col * t + row] = v;
        }
        if let Some(c) = r.mcap {
            caps[r.col * t + row] = c;
            any_cap = true;
        }
        if let Some(d) = r.delist_ret {
            if delist[r.col].is_some() {
                return Err(parse_err(returns_csv, r.line, "second delisting row for asset"));
            }
            delist[r.col] = Some(d);
            delist_line[r.col] = Some((r.line, row));
        }
    }

    // The delisting return is appended after the last observed return.
    for col in 0..n_meta {
        let (Some(dret), Some((line, row))) = (delist[col], delist_line[col]) else {
            continue;
        };
        let series = &mut returns[col * t..(col + 1) * t];
        if series[row + 1..].iter().any(|v| !v.is_nan()) {
            return Err(parse_err(returns_csv, line, "returns recorded after the delisting row"));
        }
        if series[row].is_nan() {
            series[row] = dret;
        } else if row + 1 < t {
            series[row + 1] = dret;
        } else {
            log::warn!(
                "{}: delisting on final calendar date; compounding into last return",
                assets[col].asset_id
            );
            series[row] = (1.0 + series[row]) * (1.0 + dret) - 1.0;
        }
    }

    let mut panel = ReturnsPanel::new(
        calendar.clone(),
        std::mem::take(&mut assets),
        returns,
        any_cap.then_some(caps),
        delist,
    )?;

    if let Some(f) = factors {
        let mut series = vec![vec![f64::NAN; t]; 6];
        for (date, values) in f {
            let row = calendar.index_of(date).expect("factor date in calendar");
            for (k, v) in values.iter().enumerate() {
                series[k][row] = v.unwrap_or(f64::NAN);
            }
        }
        let rf = series.pop().expect("six series");
        let mut extra: Vec<(AssetMeta, Vec<f64>)> = FF5_IDS
            .iter()
            .zip(series)
            .map(|(id, s)| (AssetMeta::factor(*id), s))
            .collect();
        extra.push((AssetMeta::risk_free(), rf));
        panel = panel.with_extra_columns(extra)?;
    }
    Ok(panel)
}

fn fmt_f64(v: f64) -> String {
    format!("{v}")
}

fn create(path: &Path) -> Result<csv::Writer<std::fs::File>, DataError> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e.to_string()),
        })
}

fn write_err(path: &Path, e: impl std::fmt::Display) -> DataError {
    DataError::Io {
        path: path.display().to_string(),
        source: std::io::Error::other(e.to_string()),
    }
}

/// Writes stock and ETF returns in long format, one row per observed cell.
/// A delisted asset's final cell is written as `delist_ret` with empty `ret`.
pub fn write_returns_csv(panel: &ReturnsPanel, path: &Path) -> Result<(), DataError> {
    let mut w = create(path)?;
    w.write_record(["date", "asset_id", "ret", "delist_ret"])
        .map_err(|e| write_err(path, e))?;
    let cols: Vec<usize> = (0..panel.n_assets())
        .filter(|&j| matches!(panel.asset(j).kind, AssetKind::Stock | AssetKind::Etf))
        .collect();
    for row in 0..panel.n_dates() {
        let date = panel.calendar().date(row).to_string();
        for &col in &cols {
            let Some(v) = panel.get(row, col) else { continue };
            let id = panel.asset(col).asset_id.as_str();
            let rec = if panel.delist_row(col) == Some(row) {
                [date.as_str(), id, "", &fmt_f64(v)].map(str::to_owned)
            } else {
                [date.as_str(), id, &fmt_f64(v), ""].map(str::to_owned)
            };
            w.write_record(&rec).map_err(|e| write_err(path, e))?;
        }
    }
    w.flush().map_err(|e| write_err(path, e))
}

pub fn write_meta_csv(panel: &ReturnsPanel, path: &Path) -> Result<(), DataError> {
    let mut w = create(path)?;
    w.write_record([
        "asset_id",
        "kind",
        "share_code",
        "exchange_code",
        "etf_class",
        "etf_subclass",
    ])
    .map_err(|e| write_err(path, e))?;
    for a in panel.assets() {
        if !matches!(a.kind, AssetKind::Stock | AssetKind::Etf) {
            continue;
        }
        w.write_record([
            a.asset_id.clone(),
            a.kind.to_string(),
            a.share_code.to_string(),
            a.exchange_code.to_string(),
            a.etf_class.clone().unwrap_or_default(),
            a.etf_subclass.clone().unwrap_or_default(),
        ])
        .map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}

pub fn write_factors_csv(panel: &ReturnsPanel, path: &Path) -> Result<(), DataError> {
    let ff5 = panel
        .ff5_columns()
        .ok_or_else(|| DataError::Invalid("panel lacks factor columns".into()))?;
    let rf = panel
        .risk_free_column()
        .ok_or_else(|| DataError::Invalid("panel lacks a risk-free column".into()))?;
    let mut w = create(path)?;
    w.write_record(["date", "mkt_rf", "smb", "hml", "rmw", "cma", "rf"])
        .map_err(|e| write_err(path, e))?;
    for row in 0..panel.n_dates() {
        let mut rec = vec![panel.calendar().date(row).to_string()];
        for col in ff5.iter().copied().chain(std::iter::once(rf)) {
            rec.push(panel.get(row, col).map(fmt_f64).unwrap_or_default());
        }
        w.write_record(&rec).map_err(|e| write_err(path, e))?;
    }
    w.flush().map_err(|e| write_err(path, e))
}
