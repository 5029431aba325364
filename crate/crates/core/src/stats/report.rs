use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tables::{
    counts_table, factor_difference_over_period, gof_table, heatmap, heatmap_labels, risk_premia, CountsRow,
    CountsTable, CumcapRow, DimensionRow, GofRow, HeatmapMatrix, HeatmapMode, PeriodAnova, PremiumRow,
};
use super::{
    accumulate, anomaly_series, intercept_pvalues, intercept_report, residual_anomaly_tests, InterceptRow,
    ResidualTestOptions, ResidualTestRow,
};
use crate::data::ReturnsPanel;
use crate::gibs::{Side, SidePair, WindowLedger};
use crate::portfolio::PortfolioSeries;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportOptions {
    pub residual: ResidualTestOptions,
    pub heatmap_mode: HeatmapMode,
    pub level: f64,
    /// Share of weeks an asset must be selected in to enter the
    /// factor-difference test.
    pub anova_min_share: f64,
}

impl Default for ReportOptions {
    fn default() -> Self {
        Self {
            residual: ResidualTestOptions::default(),
            heatmap_mode: HeatmapMode::AnyMember,
            level: 0.05,
            anova_min_share: 0.5,
        }
    }
}

/// Every table derived from one ledger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub residual_tests: Vec<ResidualTestRow>,
    pub anova: Option<PeriodAnova>,
    pub intercepts: Vec<InterceptRow>,
    pub counts: CountsTable,
    pub heatmaps: SidePair<HeatmapMatrix>,
    pub premia: Vec<PremiumRow>,
    pub gof: Vec<GofRow>,
    pub cumcap: Vec<(String, Vec<CumcapRow>)>,
}

/// Builds the report for the `amf` model against the `ff5` benchmark. The
/// ledger must hold both.
pub fn build_report(
    panel: &ReturnsPanel,
    series: &PortfolioSeries,
    ledger: &WindowLedger,
    opts: &ReportOptions,
) -> Result<Report> {
    for m in ["amf", "ff5"] {
        if !ledger.has_model(m) {
            return Err(Error::Config(format!("report needs `{m}` fits in the ledger")));
        }
    }
    let labels = heatmap_labels(panel);
    let rows: Vec<usize> = ledger.weeks.iter().map(|w| w.row).collect();

    let anova = match factor_difference_over_period(panel, series, ledger, "amf", opts.anova_min_share) {
        Ok(a) => Some(a),
        Err(e) => {
            log::warn!("factor-difference test skipped: {e}");
            None
        }
    };

    let mut sig: BTreeSet<&str> = BTreeSet::new();
    for side in Side::BOTH {
        for f in ledger.fits("amf", side) {
            sig.extend(f.significant.iter().map(String::as_str));
        }
    }
    let mut premium_ids = Vec::new();
    for id in sig {
        let complete = panel.column_of(id).is_some_and(|c| {
            rows.iter().all(|&r| panel.excess_at(r, c).ok().flatten().is_some())
        });
        if complete {
            premium_ids.push(id.to_string());
        } else {
            log::debug!("`{id}` is incomplete over the evaluation period, left out of the premia table");
        }
    }

    let cumcap = anomaly_series(ledger, series)?
        .into_iter()
        .map(|(name, s)| {
            let low = accumulate(&s.low, opts.residual.accumulation)?;
            let high = accumulate(&s.high, opts.residual.accumulation)?;
            let rows = ledger
                .weeks
                .iter()
                .zip(low.into_iter().zip(high))
                .map(|(w, (low, high))| CumcapRow { date: w.date, low, high })
                .collect();
            Ok((name.trim_end_matches("_residual").to_string(), rows))
        })
        .collect::<std::result::Result<Vec<_>, super::StatsError>>()?;

    Ok(Report {
        residual_tests: residual_anomaly_tests(ledger, series, opts.residual)?,
        anova,
        intercepts: intercept_report(&intercept_pvalues(ledger), opts.level)?,
        counts: counts_table(ledger, "amf"),
        heatmaps: SidePair {
            low: heatmap(ledger, "amf", Side::Low, &labels, opts.heatmap_mode),
            high: heatmap(ledger, "amf", Side::High, &labels, opts.heatmap_mode),
        },
        premia: risk_premia(panel, &premium_ids, &rows, &labels)?,
        gof: gof_table(ledger, opts.level)?,
        cumcap,
    })
}

fn writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    Ok(csv::Writer::from_path(path)?)
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Serialize)]
struct ResidualCsv<'a> {
    series: &'a str,
    low: f64,
    high: f64,
    diff: f64,
    t_stat: f64,
    df: f64,
    p_value: f64,
}

#[derive(Serialize)]
struct AnovaCsv {
    model: &'static str,
    res_df: usize,
    rss: f64,
    df: Option<usize>,
    sum_of_sq: Option<f64>,
    f: Option<f64>,
    p_value: Option<f64>,
}

#[derive(Serialize)]
struct CountsCsv<'a> {
    portfolio: &'a str,
    select: f64,
    ff5_select: f64,
    etf_select: f64,
    significant: f64,
    ff5_significant: f64,
    etf_significant: f64,
}

impl<'a> CountsCsv<'a> {
    fn new(portfolio: &'a str, r: &CountsRow) -> Self {
        Self {
            portfolio,
            select: r.mean_selected,
            ff5_select: r.mean_ff5_selected,
            etf_select: r.mean_etf_selected,
            significant: r.mean_significant,
            ff5_significant: r.mean_ff5_significant,
            etf_significant: r.mean_etf_significant,
        }
    }
}

fn write_heatmap(path: &Path, h: &HeatmapMatrix) -> Result<()> {
    let mut w = writer(path)?;
    w.write_record(std::iter::once("class").chain(h.cols.iter().map(String::as_str)))?;
    for (label, cells) in h.rows.iter().zip(&h.cells) {
        let vals: Vec<String> = cells.iter().map(f64::to_string).collect();
        w.write_record(std::iter::once(label.as_str()).chain(vals.iter().map(String::as_str)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_dimensions(path: &Path, rows: &[DimensionRow]) -> Result<()> {
    write_rows(path, rows)
}

/// Writes every table of `report` (and the dimension series, when given) as
/// CSV files under `dir`.
pub fn write_report(report: &Report, dims: Option<&[DimensionRow]>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let residual: Vec<ResidualCsv> = report
        .residual_tests
        .iter()
        .map(|r| ResidualCsv {
            series: &r.series,
            low: r.low,
            high: r.high,
            diff: r.diff,
            t_stat: r.welch.t_stat,
            df: r.welch.df,
            p_value: r.welch.p_value,
        })
        .collect();
    write_rows(&dir.join("residual_tests.csv"), &residual)?;

    let anova: Vec<AnovaCsv> = match &report.anova {
        Some(PeriodAnova { anova: a, .. }) => vec![
            AnovaCsv {
                model: "restricted",
                res_df: a.res_df_1,
                rss: a.rss_1,
                df: None,
                sum_of_sq: None,
                f: None,
                p_value: None,
            },
            AnovaCsv {
                model: "full",
                res_df: a.res_df_2,
                rss: a.rss_2,
                df: Some(a.df_diff),
                sum_of_sq: Some(a.sum_sq_diff),
                f: Some(a.f_stat),
                p_value: Some(a.p_value),
            },
        ],
        None => Vec::new(),
    };
    if anova.is_empty() {
        let path = dir.join("anova.csv");
        let mut w = writer(&path)?;
        w.write_record(["model", "res_df", "rss", "df", "sum_of_sq", "f", "p_value"])?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    } else {
        write_rows(&dir.join("anova.csv"), &anova)?;
    }
    write_rows(&dir.join("intercept_fdr.csv"), &report.intercepts)?;
    let c = &report.counts;
    write_rows(
        &dir.join("counts.csv"),
        &[
            CountsCsv::new("low", &c.low),
            CountsCsv::new("high", &c.high),
            CountsCsv::new("difference", &c.difference),
        ],
    )?;
    write_heatmap(&dir.join("heatmap_low.csv"), &report.heatmaps.low)?;
    write_heatmap(&dir.join("heatmap_high.csv"), &report.heatmaps.high)?;
    write_rows(&dir.join("risk_premia.csv"), &report.premia)?;
    write_rows(&dir.join("gof.csv"), &report.gof)?;
    for (name, rows) in &report.cumcap {
        write_rows(&dir.join(format!("cumcap_{name}.csv")), rows)?;
    }
    if let Some(d) = dims {
        write_dimensions(&dir.join("dimensions.csv"), d)?;
    }
    Ok(())
}
