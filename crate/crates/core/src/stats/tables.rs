use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::{factor_difference_test, fdr_adjust, StatsError};
use crate::data::{AssetKind, ReturnsPanel, Taxonomy};
use crate::gibs::{Side, SidePair, WindowLedger};
use crate::linreg::AnovaResult;
use crate::portfolio::PortfolioSeries;
use crate::FF5_IDS;

/// `YYYYH1` for January to June, `YYYYH2` from July 1.
pub fn half_year_label(date: NaiveDate) -> String {
    format!("{}H{}", date.year(), if date.month() < 7 { 1 } else { 2 })
}

fn half_year_index(date: NaiveDate) -> i64 {
    date.year() as i64 * 2 + i64::from(date.month() >= 7)
}

/// Merged heatmap class of every ETF in the panel. Subclasses outside the
/// shipped taxonomy fall back to the top-level class.
pub fn heatmap_labels(panel: &ReturnsPanel) -> BTreeMap<String, String> {
    let tax = Taxonomy::builtin();
    panel
        .columns_of_kind(AssetKind::Etf)
        .into_iter()
        .map(|c| {
            let a = panel.asset(c);
            let label = a
                .etf_subclass
                .as_deref()
                .and_then(|s| tax.merged_class(s).ok())
                .map(str::to_owned)
                .or_else(|| a.etf_class.clone())
                .unwrap_or_else(|| "Unclassified".into());
            (a.asset_id.clone(), label)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapMode {
    /// Fraction of weeks whose significant set holds at least one member of
    /// the row.
    #[default]
    AnyMember,
    /// Row members' share of all significant slots in the bucket.
    SlotShare,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    /// Weeks falling in each column.
    pub weeks: Vec<usize>,
    /// `cells[row][col]`, each in `[0, 1]`.
    pub cells: Vec<Vec<f64>>,
}

impl HeatmapMatrix {
    /// Week-weighted average of one row across columns.
    pub fn row_mean(&self, row: usize) -> f64 {
        let total: usize = self.weeks.iter().sum();
        if total == 0 {
            return 0.0;
        }
        self.cells[row].iter().zip(&self.weeks).map(|(c, &w)| c * w as f64).sum::<f64>() / total as f64
    }

    /// The ETF-class row with the highest average activity (ties go to the
    /// earlier row).
    pub fn dominant_class(&self) -> Option<&str> {
        let mut best: Option<(usize, f64)> = None;
        for (i, r) in self.rows.iter().enumerate() {
            if FF5_IDS.contains(&r.as_str()) {
                continue;
            }
            let m = self.row_mean(i);
            if best.is_none_or(|(_, b)| m > b) {
                best = Some((i, m));
            }
        }
        best.map(|(i, _)| self.rows[i].as_str())
    }
}

/// Class-by-half-year activity of one model's significant sets.
pub fn heatmap(
    ledger: &WindowLedger,
    model: &str,
    side: Side,
    labels: &BTreeMap<String, String>,
    mode: HeatmapMode,
) -> HeatmapMatrix {
    let present: BTreeSet<&str> = labels.values().map(String::as_str).collect();
    let mut rows: Vec<String> = Taxonomy::builtin()
        .merged_classes()
        .into_iter()
        .filter(|c| present.contains(c))
        .map(str::to_owned)
        .collect();
    for c in &present {
        if !rows.iter().any(|r| r == c) {
            rows.push(c.to_string());
        }
    }
    rows.extend(FF5_IDS.iter().map(|s| s.to_string()));
    let row_of: BTreeMap<&str, usize> = rows.iter().enumerate().map(|(i, r)| (r.as_str(), i)).collect();

    let (first, last) = match (ledger.weeks.first(), ledger.weeks.last()) {
        (Some(a), Some(b)) => (half_year_index(a.date), half_year_index(b.date)),
        _ => {
            return HeatmapMatrix {
                cells: vec![Vec::new(); rows.len()],
                rows,
                cols: Vec::new(),
                weeks: Vec::new(),
            }
        }
    };
    let ncol = (last - first + 1) as usize;
    let cols = (first..=last)
        .map(|h| format!("{}H{}", h.div_euclid(2), h.rem_euclid(2) + 1))
        .collect();
    let mut hits = vec![vec![0.0; ncol]; rows.len()];
    let mut slots = vec![0.0; ncol];
    let mut weeks = vec![0usize; ncol];
    for w in &ledger.weeks {
        let Some(fit) = w.fit(model, side) else { continue };
        let c = (half_year_index(w.date) - first) as usize;
        weeks[c] += 1;
        let mut counts = vec![0usize; rows.len()];
        for id in &fit.significant {
            let label = if FF5_IDS.contains(&id.as_str()) {
                Some(id.as_str())
            } else {
                labels.get(id).map(String::as_str)
            };
            if let Some(&r) = label.and_then(|l| row_of.get(l)) {
                counts[r] += 1;
            }
        }
        let total: usize = counts.iter().sum();
        slots[c] += total as f64;
        for (r, &k) in counts.iter().enumerate() {
            hits[r][c] += match mode {
                HeatmapMode::AnyMember => f64::from(k > 0),
                HeatmapMode::SlotShare => k as f64,
            };
        }
    }
    let cells = hits
        .into_iter()
        .map(|row| {
            row.into_iter()
                .enumerate()
                .map(|(c, h)| {
                    let denom = match mode {
                        HeatmapMode::AnyMember => weeks[c] as f64,
                        HeatmapMode::SlotShare => slots[c],
                    };
                    if denom > 0.0 {
                        h / denom
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();
    HeatmapMatrix {
        rows,
        cols,
        weeks,
        cells,
    }
}

/// Mean set sizes over weeks for one portfolio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct CountsRow {
    pub mean_selected: f64,
    pub mean_ff5_selected: f64,
    pub mean_etf_selected: f64,
    pub mean_significant: f64,
    pub mean_ff5_significant: f64,
    pub mean_etf_significant: f64,
}

impl CountsRow {
    fn minus(&self, o: &CountsRow) -> CountsRow {
        CountsRow {
            mean_selected: self.mean_selected - o.mean_selected,
            mean_ff5_selected: self.mean_ff5_selected - o.mean_ff5_selected,
            mean_etf_selected: self.mean_etf_selected - o.mean_etf_selected,
            mean_significant: self.mean_significant - o.mean_significant,
            mean_ff5_significant: self.mean_ff5_significant - o.mean_ff5_significant,
            mean_etf_significant: self.mean_etf_significant - o.mean_etf_significant,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CountsTable {
    pub low: CountsRow,
    pub high: CountsRow,
    /// High minus low.
    pub difference: CountsRow,
}

fn split_counts(ids: &[String]) -> (f64, f64) {
    let ff5 = ids.iter().filter(|s| FF5_IDS.contains(&s.as_str())).count();
    (ff5 as f64, (ids.len() - ff5) as f64)
}

pub fn counts_table(ledger: &WindowLedger, model: &str) -> CountsTable {
    let row = |side| {
        let fits = ledger.fits(model, side);
        let n = fits.len().max(1) as f64;
        let mut r = CountsRow::default();
        for f in fits {
            let (a, b) = split_counts(&f.selected);
            let (c, d) = split_counts(&f.significant);
            r.mean_ff5_selected += a;
            r.mean_etf_selected += b;
            r.mean_ff5_significant += c;
            r.mean_etf_significant += d;
        }
        r.mean_ff5_selected /= n;
        r.mean_etf_selected /= n;
        r.mean_ff5_significant /= n;
        r.mean_etf_significant /= n;
        r.mean_selected = r.mean_ff5_selected + r.mean_etf_selected;
        r.mean_significant = r.mean_ff5_significant + r.mean_etf_significant;
        r
    };
    let low = row(Side::Low);
    let high = row(Side::High);
    CountsTable {
        low,
        high,
        difference: high.minus(&low),
    }
}

/// One-week-ahead out-of-sample R² around the mean realized return.
pub fn oos_r2(ledger: &WindowLedger, side: Side, model: &str) -> Result<f64, StatsError> {
    let fits = ledger.fits(model, side);
    if fits.is_empty() {
        return Err(StatsError::Missing(format!("`{model}` predictions")));
    }
    let ybar = fits.iter().map(|f| f.realized).sum::<f64>() / fits.len() as f64;
    let sse: f64 = fits.iter().map(|f| (f.realized - f.prediction).powi(2)).sum();
    let sst: f64 = fits.iter().map(|f| (f.realized - ybar).powi(2)).sum();
    if sst <= 0.0 {
        return Err(StatsError::Degenerate("realized returns are constant".into()));
    }
    Ok(1.0 - sse / sst)
}

/// In-sample and out-of-sample fit per portfolio and model. The F-test
/// columns summarize, for the AMF rows, the weekly test of the five factors
/// against the five factors plus the AMF selection: the share of all weeks
/// rejecting at `level`, before and after BHY control over weeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GofRow {
    pub side: Side,
    pub model: String,
    pub mean_r2: f64,
    pub mean_adj_r2: f64,
    pub oos_r2: f64,
    pub f_test_weeks: Option<usize>,
    pub f_p_share: Option<f64>,
    pub f_bhy_share: Option<f64>,
}

pub fn gof_table(ledger: &WindowLedger, level: f64) -> Result<Vec<GofRow>, StatsError> {
    let models: Vec<String> = ledger.weeks.first().map(|w| w.fits.keys().cloned().collect()).unwrap_or_default();
    let mut out = Vec::new();
    for side in Side::BOTH {
        for model in &models {
            let fits = ledger.fits(model, side);
            let n = fits.len() as f64;
            let (mut f_weeks, mut f_p, mut f_q) = (None, None, None);
            if model == "amf" {
                let ps: Vec<f64> = ledger
                    .weeks
                    .iter()
                    .filter_map(|w| w.gof_anova_p.as_ref().and_then(|p| *p.get(side)))
                    .collect();
                let q = fdr_adjust(&ps)?.bhy_q;
                f_weeks = Some(ps.len());
                f_p = Some(ps.iter().filter(|&&p| p < level).count() as f64 / n);
                f_q = Some(q.iter().filter(|&&p| p < level).count() as f64 / n);
            }
            out.push(GofRow {
                side,
                model: model.clone(),
                mean_r2: fits.iter().map(|f| f.r2).sum::<f64>() / n,
                mean_adj_r2: fits.iter().map(|f| f.adj_r2).sum::<f64>() / n,
                oos_r2: oos_r2(ledger, side, model)?,
                f_test_weeks: f_weeks,
                f_p_share: f_p,
                f_bhy_share: f_q,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PremiumRow {
    pub asset_id: String,
    pub category: String,
    /// Annualized mean weekly excess return, percent.
    pub premium_pct: f64,
    /// `|premium|` exceeds the smallest absolute five-factor premium.
    pub above_ff5_floor: bool,
}

fn excess_over(panel: &ReturnsPanel, id: &str, rows: &[usize]) -> Result<Option<Vec<f64>>, StatsError> {
    let col = panel
        .column_of(id)
        .ok_or_else(|| StatsError::Missing(format!("asset `{id}`")))?;
    let mut out = Vec::with_capacity(rows.len());
    for &r in rows {
        match panel.excess_at(r, col).map_err(|e| StatsError::Missing(e.to_string()))? {
            Some(v) => out.push(v),
            None => return Ok(None),
        }
    }
    Ok(Some(out))
}

/// Annualized premia of the five factors followed by `ids`, over `rows`.
/// Every asset must be observed on every row.
pub fn risk_premia(
    panel: &ReturnsPanel,
    ids: &[String],
    rows: &[usize],
    labels: &BTreeMap<String, String>,
) -> Result<Vec<PremiumRow>, StatsError> {
    if rows.is_empty() {
        return Err(StatsError::Missing("empty period".into()));
    }
    let mut out = Vec::new();
    let all = FF5_IDS.iter().map(|s| s.to_string()).chain(ids.iter().filter(|i| !FF5_IDS.contains(&i.as_str())).cloned());
    for id in all {
        let x = excess_over(panel, &id, rows)?
            .ok_or_else(|| StatsError::Missing(format!("`{id}` is incomplete over the period")))?;
        let premium = 52.0 * x.iter().sum::<f64>() / x.len() as f64 * 100.0;
        let category = if FF5_IDS.contains(&id.as_str()) {
            "FF5".to_string()
        } else {
            labels.get(&id).cloned().unwrap_or_else(|| "Unclassified".into())
        };
        out.push(PremiumRow {
            asset_id: id,
            category,
            premium_pct: premium,
            above_ff5_floor: false,
        });
    }
    let floor = out[..FF5_IDS.len()].iter().map(|r| r.premium_pct.abs()).fold(f64::INFINITY, f64::min);
    for r in &mut out {
        r.above_ff5_floor = r.premium_pct.abs() > floor;
    }
    Ok(out)
}

/// Factor-difference test over the evaluation period.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodAnova {
    pub s_low: Vec<String>,
    pub s_high: Vec<String>,
    pub anova: AnovaResult,
}

/// Runs the factor-difference test on realized evaluation-week returns. Each
/// portfolio's factor set holds the basis assets `model` selected in at least
/// `min_share` of the weeks (falling back to the last week's selection) that
/// are observed on every evaluation row.
pub fn factor_difference_over_period(
    panel: &ReturnsPanel,
    series: &PortfolioSeries,
    ledger: &WindowLedger,
    model: &str,
    min_share: f64,
) -> Result<PeriodAnova, StatsError> {
    let rows: Vec<usize> = ledger.weeks.iter().map(|w| w.row).collect();
    if rows.is_empty() {
        return Err(StatsError::Missing("empty ledger".into()));
    }
    let mut cache: BTreeMap<String, Option<Vec<f64>>> = BTreeMap::new();
    let mut set_for = |side: Side| -> Result<Vec<String>, StatsError> {
        let fits = ledger.fits(model, side);
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for f in &fits {
            for id in &f.selected {
                *counts.entry(id).or_default() += 1;
            }
        }
        let need = min_share * fits.len() as f64;
        let mut chosen: Vec<String> = counts
            .iter()
            .filter(|(_, &c)| c as f64 >= need)
            .map(|(id, _)| id.to_string())
            .collect();
        if chosen.is_empty() {
            chosen = fits.last().map(|f| f.selected.clone()).unwrap_or_default();
            chosen.sort();
        }
        let mut keep = Vec::new();
        for id in chosen {
            if !cache.contains_key(&id) {
                let x = excess_over(panel, &id, &rows)?;
                cache.insert(id.clone(), x);
            }
            if cache[&id].is_some() {
                keep.push(id);
            }
        }
        Ok(keep)
    };
    let s_low = set_for(Side::Low)?;
    let s_high = set_for(Side::High)?;
    let union: Vec<&String> = s_low.iter().chain(&s_high).collect::<BTreeSet<_>>().into_iter().collect();
    let x = DMatrix::from_fn(rows.len(), union.len(), |i, j| {
        cache[union[j]].as_ref().expect("kept ids are complete")[i]
    });
    let pos = |ids: &[String]| -> Vec<usize> {
        ids.iter().map(|id| union.iter().position(|u| *u == id).expect("in union")).collect()
    };
    let mut y = SidePair {
        low: Vec::with_capacity(rows.len()),
        high: Vec::with_capacity(rows.len()),
    };
    for &r in &rows {
        let p = series
            .position_of_row(r)
            .ok_or_else(|| StatsError::Missing(format!("portfolio return at row {r}")))?;
        y.low.push(series.low_excess[p]);
        y.high.push(series.high_excess[p]);
    }
    let anova = factor_difference_test(&y.low, &y.high, &x, &pos(&s_low), &pos(&s_high))?;
    Ok(PeriodAnova { s_low, s_high, anova })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CumcapRow {
    pub date: NaiveDate,
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionRow {
    pub date: NaiveDate,
    pub etf_count: usize,
    pub gibs_dim: usize,
    pub pca_dim: usize,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gibs::{LedgerWeek, WeekFit};
    use proptest::prelude::*;

    fn fit(selected: &[&str], significant: &[&str], pred: f64, real: f64) -> WeekFit {
        WeekFit {
            n_candidates: 0,
            selected: selected.iter().map(|s| s.to_string()).collect(),
            regressors: selected.iter().map(|s| s.to_string()).collect(),
            significant: significant.iter().map(|s| s.to_string()).collect(),
            coefficients: vec![0.0; selected.len()],
            p_values: vec![0.5; selected.len()],
            alpha: 0.0,
            alpha_p: 0.5,
            r2: 0.5,
            adj_r2: 0.4,
            lambda: None,
            degenerate: false,
            prediction: pred,
            realized: real,
            residual: real - pred,
        }
    }

    fn ledger(weeks: Vec<(NaiveDate, WeekFit, WeekFit)>) -> WindowLedger {
        WindowLedger {
            weeks: weeks
                .into_iter()
                .enumerate()
                .map(|(i, (d, lo, hi))| LedgerWeek {
                    date: d,
                    row: 200 + i,
                    window_start: d,
                    window_end: d,
                    n_etfs: 0,
                    union_size: None,
                    fits: [("amf".to_string(), SidePair { low: lo, high: hi })].into(),
                    gof_anova_p: None,
                })
                .collect(),
            failures: Vec::new(),
        }
    }

    fn d(y: i32, m: u32, day: u32) -> NaiveDate {
        NaiveDate::from_ymd_opt(y, m, day).unwrap()
    }

    fn labels() -> BTreeMap<String, String> {
        [("B1", "Bonds"), ("B2", "Bonds"), ("M1", "Materials & Precious Metals")]
            .into_iter()
            .map(|(a, b)| (a.to_string(), b.to_string()))
            .collect()
    }

    #[test]
    fn half_year_split() {
        assert_eq!(half_year_label(d(2010, 6, 30)), "2010H1");
        assert_eq!(half_year_label(d(2010, 7, 1)), "2010H2");
    }

    #[test]
    fn hand_counts() {
        let l = ledger(vec![(
            d(2010, 1, 1),
            fit(&["mkt_rf", "B1", "M1"], &["mkt_rf"], 0.0, 0.0),
            fit(&["mkt_rf"], &[], 0.0, 0.0),
        )]);
        let t = counts_table(&l, "amf");
        let r = t.low;
        assert_eq!(
            [
                r.mean_selected,
                r.mean_ff5_selected,
                r.mean_etf_selected,
                r.mean_significant,
                r.mean_ff5_significant,
                r.mean_etf_significant
            ],
            [3.0, 1.0, 2.0, 1.0, 1.0, 0.0]
        );
        assert_eq!(t.difference.mean_selected, -2.0);
    }

    #[test]
    fn heatmap_saturation_and_empty() {
        let weeks = (0..4)
            .map(|i| (d(2010, 1, 1) + chrono::Days::new(7 * i), fit(&["B1"], &["B1"], 0.0, 0.0), fit(&[], &[], 0.0, 0.0)))
            .collect();
        let l = ledger(weeks);
        let h = heatmap(&l, "amf", Side::Low, &labels(), HeatmapMode::AnyMember);
        assert_eq!(h.cols, vec!["2010H1"]);
        assert_eq!(h.rows[0], "Bonds");
        assert_eq!(h.cells[0][0], 1.0);
        assert_eq!(h.dominant_class(), Some("Bonds"));
        let e = heatmap(&l, "amf", Side::High, &labels(), HeatmapMode::AnyMember);
        assert!(e.cells.iter().flatten().all(|&c| c == 0.0));
    }

    #[test]
    fn heatmap_columns_cover_gap() {
        let l = ledger(vec![
            (d(2010, 1, 1), fit(&[], &[], 0.0, 0.0), fit(&[], &[], 0.0, 0.0)),
            (d(2011, 8, 1), fit(&[], &[], 0.0, 0.0), fit(&[], &[], 0.0, 0.0)),
        ]);
        let h = heatmap(&l, "amf", Side::Low, &labels(), HeatmapMode::SlotShare);
        assert_eq!(h.cols, vec!["2010H1", "2010H2", "2011H1", "2011H2"]);
        assert_eq!(h.weeks, vec![1, 0, 0, 1]);
    }

    #[test]
    fn oos_r2_extremes() {
        let real = [0.01, -0.02, 0.03, 0.0];
        let mean = real.iter().sum::<f64>() / 4.0;
        let mk = |pred: &dyn Fn(f64) -> f64| {
            ledger(
                real.iter()
                    .enumerate()
                    .map(|(i, &r)| (d(2010, 1, 1 + i as u32), fit(&[], &[], pred(r), r), fit(&[], &[], pred(r), r)))
                    .collect(),
            )
        };
        assert_eq!(oos_r2(&mk(&|r| r), Side::Low, "amf").unwrap(), 1.0);
        assert!(oos_r2(&mk(&|_| mean), Side::Low, "amf").unwrap().abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn heatmap_ignores_order_within_half(seed in 0u64..1000) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let pool = ["B1", "B2", "M1", "mkt_rf", "smb"];
            let sigs: Vec<Vec<&str>> = (0..10)
                .map(|_| pool.iter().copied().filter(|_| rand::Rng::random_bool(&mut rng, 0.4)).collect())
                .collect();
            let build = |s: &[Vec<&str>]| {
                ledger(
                    s.iter()
                        .enumerate()
                        .map(|(i, ids)| (d(2010, 1, 4) + chrono::Days::new(7 * i as u64), fit(ids, ids, 0.0, 0.0), fit(&[], &[], 0.0, 0.0)))
                        .collect(),
                )
            };
            for mode in [HeatmapMode::AnyMember, HeatmapMode::SlotShare] {
                let a = heatmap(&build(&sigs), "amf", Side::Low, &labels(), mode);
                prop_assert!(a.cells.iter().flatten().all(|c| (0.0..=1.0).contains(c)));
                let mut shuffled = sigs.clone();
                shuffled.shuffle(&mut rng);
                let b = heatmap(&build(&shuffled), "amf", Side::Low, &labels(), mode);
                prop_assert_eq!(a, b);
            }
        }
    }
}
