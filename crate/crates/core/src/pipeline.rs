//! End-to-end orchestration: configuration, synthetic data generation, the
//! rolling run and dimension tracking, with their file outputs.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::NaiveDate;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{
    generate_synthetic_market, load_dataset, write_factors_csv, write_meta_csv, write_returns_csv, ReturnsPanel,
    SynthSpec, UniverseRules,
};
use crate::gibs::{
    run_rolling, DimensionEstimator, DimensionRegistry, GibsConfig, ModelRegistry, PcaDimension, RollingConfig,
    Side, WeekFailure, WindowBasis, WindowLedger,
};
use crate::portfolio::{build_portfolios, portfolio_returns, PortfolioSeries, VolPortfolios};
use crate::stats::{build_report, oos_r2, write_report, DimensionRow, Report, ReportOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// Directory holding `returns.csv`, `meta.csv` and `factors.csv`.
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    /// First evaluation week. Defaults to the first week with a full
    /// estimation window whose earliest portfolio meets the observation floor.
    pub eval_start: Option<NaiveDate>,
    pub eval_end: Option<NaiveDate>,
    pub window: usize,
    pub vol_lookback: usize,
    pub quartile_fraction: f64,
    /// Share-code, exchange and size filters. The window, lookback and
    /// quartile fields above take precedence over their copies here.
    pub universe: UniverseRules,
    pub gibs: GibsConfig,
    pub models: Vec<String>,
    pub seed: u64,
    pub report: ReportOptions,
    pub pca_variance_target: f64,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("data"),
            out_dir: PathBuf::from("out"),
            eval_start: None,
            eval_end: None,
            window: 156,
            vol_lookback: 52,
            quartile_fraction: 0.25,
            universe: UniverseRules::default(),
            gibs: GibsConfig::default(),
            models: vec!["amf".into(), "ff5".into()],
            seed: 42,
            report: ReportOptions::default(),
            pca_variance_target: 0.90,
            synth: SynthSpec::default(),
        }
    }
}

/// Command-line overrides; every set field replaces the configured value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub eval_start: Option<NaiveDate>,
    pub eval_end: Option<NaiveDate>,
    pub lasso_cap: Option<usize>,
    pub cluster_threshold: Option<f64>,
}

impl RunConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(v) = &o.data_dir {
            self.data_dir = v.clone();
        }
        if let Some(v) = &o.out_dir {
            self.out_dir = v.clone();
        }
        if let Some(v) = o.seed {
            self.seed = v;
        }
        if o.eval_start.is_some() {
            self.eval_start = o.eval_start;
        }
        if o.eval_end.is_some() {
            self.eval_end = o.eval_end;
        }
        if let Some(v) = o.lasso_cap {
            self.gibs.lasso_cap = v;
        }
        if let Some(v) = o.cluster_threshold {
            self.gibs.category_threshold = v;
            self.gibs.union_threshold = v;
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.gibs.cv_folds < 2 {
            return bad(format!("cv_folds {} must be at least 2", self.gibs.cv_folds));
        }
        if self.window < 2 * self.gibs.cv_folds {
            return bad(format!(
                "window {} is shorter than twice the {} cross-validation folds",
                self.window, self.gibs.cv_folds
            ));
        }
        if !(self.quartile_fraction > 0.0 && self.quartile_fraction <= 0.5) {
            return bad(format!("quartile_fraction {} outside (0, 0.5]", self.quartile_fraction));
        }
        if self.vol_lookback < 2 {
            return bad("vol_lookback must be at least 2".into());
        }
        if self.gibs.lasso_cap == 0 {
            return bad("lasso_cap must be positive".into());
        }
        for t in [self.gibs.category_threshold, self.gibs.union_threshold] {
            if !(0.0..=2.0).contains(&t) {
                return bad(format!("cluster threshold {t} outside [0, 2]"));
            }
        }
        if !(self.gibs.significance > 0.0 && self.gibs.significance < 1.0) {
            return bad(format!("significance {} outside (0, 1)", self.gibs.significance));
        }
        if !(self.pca_variance_target > 0.0 && self.pca_variance_target <= 1.0) {
            return bad(format!("pca_variance_target {} outside (0, 1]", self.pca_variance_target));
        }
        if self.models.is_empty() {
            return bad("no models configured".into());
        }
        if let (Some(a), Some(b)) = (self.eval_start, self.eval_end) {
            if a > b {
                return bad(format!("eval_start {a} is after eval_end {b}"));
            }
        }
        Ok(())
    }

    pub fn rules(&self) -> UniverseRules {
        UniverseRules {
            etf_window: self.window,
            stock_lookback: self.vol_lookback,
            portfolio_fraction: self.quartile_fraction,
            ..self.universe.clone()
        }
    }

    pub fn rolling(&self) -> RollingConfig {
        RollingConfig {
            gibs: self.gibs.clone(),
            rules: self.rules(),
            models: self.models.clone(),
            seed: self.seed,
        }
    }

    pub fn load_panel(&self) -> Result<ReturnsPanel> {
        let d = &self.data_dir;
        Ok(load_dataset(&d.join("returns.csv"), &d.join("meta.csv"), &d.join("factors.csv"))?)
    }
}

/// Evaluation rows selected by the configured period.
pub fn eval_rows(panel: &ReturnsPanel, cfg: &RunConfig) -> Result<Vec<usize>> {
    let cal = panel.calendar();
    let rules = cfg.rules();
    let earliest = cfg.window + rules.min_stock_observations();
    let first = match cfg.eval_start {
        Some(d) => cal.first_on_or_after(d),
        None => earliest,
    };
    let end = match cfg.eval_end {
        Some(d) => cal.first_on_or_after(d + chrono::Days::new(1)),
        None => panel.n_dates(),
    };
    if first < cfg.window {
        return Err(Error::Config(format!(
            "evaluation starts at week {first}, before a {}-week window is available",
            cfg.window
        )));
    }
    if first >= end {
        return Err(Error::Config("evaluation period holds no panel weeks".into()));
    }
    Ok((first..end).collect())
}

/// Writes a synthetic dataset (`returns.csv`, `meta.csv`, `factors.csv`,
/// `ground_truth.json`) into `cfg.out_dir`.
pub fn run_synth(cfg: &RunConfig) -> Result<Vec<PathBuf>> {
    let (panel, truth) = generate_synthetic_market(&cfg.synth, cfg.seed)?;
    let dir = &cfg.out_dir;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let files: Vec<PathBuf> = ["returns.csv", "meta.csv", "factors.csv", "ground_truth.json"]
        .iter()
        .map(|f| dir.join(f))
        .collect();
    write_returns_csv(&panel, &files[0])?;
    write_meta_csv(&panel, &files[1])?;
    write_factors_csv(&panel, &files[2])?;
    let mut json = serde_json::to_vec_pretty(&truth)?;
    json.push(b'\n');
    std::fs::write(&files[3], json).map_err(|e| Error::io(&files[3], e))?;
    Ok(files)
}

/// Portfolios formed for every row the rolling windows touch.
pub fn portfolio_stage(
    panel: &ReturnsPanel,
    cfg: &RunConfig,
    rows: &[usize],
) -> Result<(Vec<VolPortfolios>, PortfolioSeries)> {
    let first = rows[0] - cfg.window;
    let last = *rows.last().expect("nonempty");
    let members = build_portfolios(panel, first..last + 1, &cfg.rules())?;
    let series = portfolio_returns(panel, &members)?;
    Ok((members, series))
}

fn write_portfolios(dir: &Path, members: &[VolPortfolios], series: &PortfolioSeries) -> Result<()> {
    let path = dir.join("portfolios.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["date", "side", "asset_id"])?;
    for m in members {
        let d = m.date.to_string();
        for (side, ids) in [("low", &m.low_ids), ("high", &m.high_ids)] {
            for id in ids {
                w.write_record([d.as_str(), side, id])?;
            }
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    let path = dir.join("portfolio_returns.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["date", "low_excess", "high_excess"])?;
    for i in 0..series.len() {
        w.write_record([
            series.dates[i].to_string(),
            series.low_excess[i].to_string(),
            series.high_excess[i].to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

/// Dimension series over `rows`: ETF count, union prototype count and PCA
/// components. Union counts already in `ledger` are reused.
pub fn dimension_series(
    panel: &ReturnsPanel,
    rows: &[usize],
    cfg: &RunConfig,
    ledger: Option<&WindowLedger>,
) -> Result<Vec<DimensionRow>> {
    let mut registry = DimensionRegistry::with_defaults();
    registry.register(
        "pca",
        Arc::new(PcaDimension {
            variance_target: cfg.pca_variance_target,
        }),
    );
    let gibs: Arc<dyn DimensionEstimator> = registry.get("gibs")?;
    let pca = registry.get("pca")?;
    let known: BTreeMap<usize, usize> = ledger
        .map(|l| l.weeks.iter().filter_map(|w| w.union_size.map(|u| (w.row, u))).collect())
        .unwrap_or_default();
    let rules = cfg.rules();
    rows.par_iter()
        .map(|&row| {
            let date = panel.calendar().date(row.min(panel.n_dates() - 1));
            let wrap = |e: Error| Error::Window {
                date,
                source: Box::new(e),
            };
            let basis = WindowBasis::build(panel, row, &rules, false).map_err(wrap)?;
            let gibs_dim = match known.get(&row) {
                Some(&u) => u,
                None => gibs.estimate(&basis, &cfg.gibs).map_err(wrap)?,
            };
            Ok(DimensionRow {
                date,
                etf_count: basis.etf_indices().len(),
                gibs_dim,
                pca_dim: pca.estimate(&basis, &cfg.gibs).map_err(wrap)?,
            })
        })
        .collect()
}

/// Machine-readable outcome of a run, free of timings so reruns match.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub seed: u64,
    pub eval_start: NaiveDate,
    pub eval_end: NaiveDate,
    pub eval_weeks: usize,
    pub completed_weeks: usize,
    pub portfolios_only: bool,
    pub models: Vec<String>,
    pub failures: Vec<WeekFailure>,
    /// Welch p-value of each low-minus-high comparison.
    pub anomaly_p: BTreeMap<String, f64>,
    pub factor_difference_p: Option<f64>,
    /// Out-of-sample R² keyed `model/side`.
    pub oos_r2: BTreeMap<String, f64>,
    pub outputs: Vec<String>,
}

/// Everything a run produced, for callers that inspect results in memory.
pub struct RunOutput {
    pub panel: ReturnsPanel,
    pub series: PortfolioSeries,
    pub ledger: Option<WindowLedger>,
    pub report: Option<Report>,
    pub summary: RunSummary,
}

fn write_summary(dir: &Path, s: &RunSummary) -> Result<()> {
    let path = dir.join("summary.json");
    let mut f = std::fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::to_writer_pretty(&mut f, s)?;
    f.write_all(b"\n").map_err(|e| Error::io(&path, e))
}

/// Universe, portfolios, rolling model fits and the report, written under
/// `cfg.out_dir`. With `portfolios_only` it stops after the portfolio files.
pub fn run_pipeline(cfg: &RunConfig, registry: &ModelRegistry, portfolios_only: bool) -> Result<RunOutput> {
    cfg.validate()?;
    let panel = cfg.load_panel()?;
    run_on_panel(panel, cfg, registry, portfolios_only)
}

pub fn run_on_panel(
    panel: ReturnsPanel,
    cfg: &RunConfig,
    registry: &ModelRegistry,
    portfolios_only: bool,
) -> Result<RunOutput> {
    cfg.validate()?;
    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let rows = eval_rows(&panel, cfg)?;
    let cal = panel.calendar();
    log::info!(
        "evaluating {} weeks from {} to {}",
        rows.len(),
        cal.date(rows[0]),
        cal.date(*rows.last().expect("nonempty"))
    );
    let (members, series) = portfolio_stage(&panel, cfg, &rows)?;
    write_portfolios(out, &members, &series)?;
    let mut summary = RunSummary {
        seed: cfg.seed,
        eval_start: cal.date(rows[0]),
        eval_end: cal.date(*rows.last().expect("nonempty")),
        eval_weeks: rows.len(),
        completed_weeks: 0,
        portfolios_only,
        models: cfg.models.clone(),
        failures: Vec::new(),
        anomaly_p: BTreeMap::new(),
        factor_difference_p: None,
        oos_r2: BTreeMap::new(),
        outputs: vec!["portfolios.csv".into(), "portfolio_returns.csv".into()],
    };
    if portfolios_only {
        write_summary(out, &summary)?;
        return Ok(RunOutput {
            panel,
            series,
            ledger: None,
            report: None,
            summary,
        });
    }

    let ledger = run_rolling(&panel, &series, &rows, &cfg.rolling(), registry)?;
    if ledger.is_empty() {
        return Err(Error::Config("every evaluation week failed".into()));
    }
    ledger.write_jsonl(&out.join("ledger.jsonl"))?;
    summary.outputs.push("ledger.jsonl".into());
    summary.completed_weeks = ledger.len();
    summary.failures = ledger.failures.clone();
    for w in &ledger.weeks {
        for (model, pair) in &w.fits {
            for side in Side::BOTH {
                let f = pair.get(side);
                log::debug!(
                    "{} {model}/{}: {} selected, {} significant, lambda {:?}",
                    w.date,
                    side.as_str(),
                    f.selected.len(),
                    f.significant.len(),
                    f.lambda
                );
            }
        }
    }
    for model in &cfg.models {
        for side in Side::BOTH {
            if let Ok(r) = oos_r2(&ledger, side, model) {
                summary.oos_r2.insert(format!("{model}/{}", side.as_str()), r);
            }
        }
    }

    let report = if ledger.has_model("amf") && ledger.has_model("ff5") {
        let done: Vec<usize> = ledger.weeks.iter().map(|w| w.row).collect();
        let dims = dimension_series(&panel, &done, cfg, Some(&ledger))?;
        let report = build_report(&panel, &series, &ledger, &cfg.report)?;
        let report_dir = out.join("report");
        write_report(&report, Some(&dims), &report_dir)?;
        summary.outputs.push("report/".into());
        for r in &report.residual_tests {
            summary.anomaly_p.insert(r.series.clone(), r.welch.p_value);
        }
        summary.factor_difference_p = report.anova.as_ref().map(|a| a.anova.p_value);
        Some(report)
    } else {
        log::warn!("report needs both `amf` and `ff5` fits; skipped");
        None
    };
    write_summary(out, &summary)?;
    Ok(RunOutput {
        panel,
        series,
        ledger: Some(ledger),
        report,
        summary,
    })
}

/// Writes `dimensions.csv` for the evaluation period into `cfg.out_dir`.
pub fn run_dims(cfg: &RunConfig) -> Result<Vec<DimensionRow>> {
    cfg.validate()?;
    let panel = cfg.load_panel()?;
    let rows = eval_rows(&panel, cfg)?;
    let dims = dimension_series(&panel, &rows, cfg, None)?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    crate::stats::write_dimensions(&cfg.out_dir.join("dimensions.csv"), &dims)?;
    Ok(dims)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_win() {
        let mut c = RunConfig::default();
        c.apply(&Overrides {
            seed: Some(7),
            lasso_cap: Some(5),
            cluster_threshold: Some(0.3),
            ..Default::default()
        });
        assert_eq!((c.seed, c.gibs.lasso_cap), (7, 5));
        assert_eq!((c.gibs.category_threshold, c.gibs.union_threshold), (0.3, 0.3));
    }

    #[test]
    fn validation_guards() {
        let mut c = RunConfig {
            window: 15,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        c.window = 156;
        c.quartile_fraction = 0.6;
        assert!(c.validate().is_err());
        c.quartile_fraction = 0.5;
        assert!(c.validate().is_ok());
    }

    #[test]
    fn config_json_roundtrip() {
        let c = RunConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&s).unwrap(), c);
        let partial: RunConfig = serde_json::from_str(r#"{"seed": 3, "gibs": {"lasso_cap": 10}}"#).unwrap();
        assert_eq!((partial.seed, partial.gibs.lasso_cap, partial.window), (3, 10, 156));
    }
}
