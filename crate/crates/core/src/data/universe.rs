use std::sync::atomic::{AtomicBool, Ordering};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::panel::{AssetKind, ReturnsPanel};
use super::DataError;

/// Eligibility rules for the tradable universe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UniverseRules {
    pub stock_share_codes: Vec<i32>,
    pub etf_share_code: i32,
    pub exchange_codes: Vec<i32>,
    /// Keep the largest `top_n` stocks by market cap (skipped without caps).
    pub top_n: usize,
    /// Trailing weeks used for the stock observability rule.
    pub stock_lookback: usize,
    pub min_observed_frac: f64,
    /// ETFs must be fully observed over this many trailing weeks.
    pub etf_window: usize,
    /// Share of ranked stocks in each volatility portfolio.
    pub portfolio_fraction: f64,
}

impl Default for UniverseRules {
    fn default() -> Self {
        Self {
            stock_share_codes: vec![10, 11],
            etf_share_code: 73,
            exchange_codes: vec![1, 2, 3],
            top_n: 2500,
            stock_lookback: 52,
            min_observed_frac: 0.8,
            etf_window: 156,
            portfolio_fraction: 0.25,
        }
    }
}

impl UniverseRules {
    /// Minimum count of observed returns inside the stock lookback.
    pub fn min_stock_observations(&self) -> usize {
        (self.min_observed_frac * self.stock_lookback as f64 - 1e-9).ceil() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UniverseSnapshot {
    pub date: NaiveDate,
    /// Panel row the snapshot applies to; only rows before it are used.
    pub row: usize,
    pub eligible_stocks: Vec<usize>,
    pub eligible_etfs: Vec<usize>,
}

impl UniverseSnapshot {
    pub fn stock_ids<'a>(&self, panel: &'a ReturnsPanel) -> Vec<&'a str> {
        self.eligible_stocks
            .iter()
            .map(|&j| panel.asset(j).asset_id.as_str())
            .collect()
    }

    pub fn etf_ids<'a>(&self, panel: &'a ReturnsPanel) -> Vec<&'a str> {
        self.eligible_etfs
            .iter()
            .map(|&j| panel.asset(j).asset_id.as_str())
            .collect()
    }
}

static NO_CAP_WARNED: AtomicBool = AtomicBool::new(false);

/// Stocks eligible at `row` using information strictly before it.
///
/// The trailing lookback is clipped at the start of the panel; the observation
/// floor is always measured against the full lookback length, so a clipped
/// window still needs `min_stock_observations` observed weeks.
pub fn eligible_stocks(panel: &ReturnsPanel, row: usize, rules: &UniverseRules) -> Vec<usize> {
    let min_obs = rules.min_stock_observations();
    let lo = row.saturating_sub(rules.stock_lookback);
    let mut candidates: Vec<usize> = panel
        .columns_of_kind(AssetKind::Stock)
        .into_iter()
        .filter(|&j| {
            let a = panel.asset(j);
            rules.stock_share_codes.contains(&a.share_code)
                && rules.exchange_codes.contains(&a.exchange_code)
        })
        .filter(|&j| match panel.delist_row(j) {
            Some(d) => d >= row,
            None => true,
        })
        .collect();

    if row > 0 && panel.has_market_cap() {
        let mut ranked: Vec<(usize, f64)> = candidates
            .iter()
            .filter_map(|&j| panel.market_cap(row - 1, j).map(|c| (j, c)))
            .collect();
        ranked.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| panel.asset(a.0).asset_id.cmp(&panel.asset(b.0).asset_id))
        });
        ranked.truncate(rules.top_n);
        candidates = ranked.into_iter().map(|(j, _)| j).collect();
        candidates.sort_unstable();
    } else if !panel.has_market_cap() && !NO_CAP_WARNED.swap(true, Ordering::Relaxed) {
        log::warn!("panel has no market caps; skipping the top-{} filter", rules.top_n);
    }

    candidates.retain(|&j| panel.observed_count(j, lo..row) >= min_obs);
    candidates
}

/// ETFs fully observed over the `etf_window` rows before `row`.
pub fn eligible_etfs(
    panel: &ReturnsPanel,
    row: usize,
    rules: &UniverseRules,
) -> Result<Vec<usize>, DataError> {
    if row < rules.etf_window || row > panel.n_dates() {
        return Err(DataError::Window(format!(
            "row {row} needs {} prior weeks within a {}-week calendar",
            rules.etf_window,
            panel.n_dates()
        )));
    }
    let window = row - rules.etf_window..row;
    Ok(panel
        .columns_of_kind(AssetKind::Etf)
        .into_iter()
        .filter(|&j| {
            let a = panel.asset(j);
            a.share_code == rules.etf_share_code && rules.exchange_codes.contains(&a.exchange_code)
        })
        .filter(|&j| panel.observed_count(j, window.clone()) == rules.etf_window)
        .collect())
}

/// Universe snapshot for the week at `date`.
pub fn build_universe(
    panel: &ReturnsPanel,
    date: NaiveDate,
    rules: &UniverseRules,
) -> Result<UniverseSnapshot, DataError> {
    let row = panel
        .calendar()
        .index_of(date)
        .ok_or_else(|| DataError::Window(format!("{date} is not in the calendar")))?;
    let eligible_etfs = eligible_etfs(panel, row, rules)?;
    Ok(UniverseSnapshot {
        date,
        row,
        eligible_stocks: eligible_stocks(panel, row, rules),
        eligible_etfs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{AssetMeta, Calendar};

    fn date0() -> NaiveDate {
        NaiveDate::from_ymd_opt(2005, 1, 7).unwrap()
    }

    /// 200 weeks; columns built from closures returning NaN for missing.
    fn panel_with(assets: Vec<(AssetMeta, Box<dyn Fn(usize) -> f64>)>, caps: Option<Vec<f64>>) -> ReturnsPanel {
        let t = 200;
        let cal = Calendar::weekly(date0(), t);
        let n = assets.len();
        let mut data = Vec::new();
        let mut metas = Vec::new();
        for (m, f) in assets {
            data.extend((0..t).map(&f));
            metas.push(m);
        }
        let caps = caps.map(|c| c.iter().flat_map(|&v| std::iter::repeat_n(v, t)).collect());
        ReturnsPanel::new(cal, metas, data, caps, vec![None; n]).unwrap()
    }

    #[test]
    fn stock_with_40_of_52_excluded() {
        let p = panel_with(
            vec![
                (AssetMeta::stock("A"), Box::new(|r| if r % 52 < 40 { 0.01 } else { f64::NAN })),
                (AssetMeta::stock("B"), Box::new(|r| if r % 52 < 42 { 0.01 } else { f64::NAN })),
            ],
            None,
        );
        let elig = eligible_stocks(&p, 156, &UniverseRules::default());
        assert_eq!(elig, vec![1]);
    }

    #[test]
    fn etf_with_full_history_included() {
        let mut gap = AssetMeta::etf("G", "Currency", "Currency");
        gap.exchange_code = 2;
        let mut otc = AssetMeta::etf("O", "Currency", "Currency");
        otc.exchange_code = 4;
        let p = panel_with(
            vec![
                (AssetMeta::etf("E", "Bond/Fixed Income", "Government Bonds"), Box::new(|_| 0.001)),
                (gap, Box::new(|r| if r == 100 { f64::NAN } else { 0.001 })),
                (otc, Box::new(|_| 0.001)),
            ],
            None,
        );
        let snap = build_universe(&p, p.calendar().date(156), &UniverseRules::default()).unwrap();
        assert_eq!(snap.etf_ids(&p), vec!["E"]);
        // The gap falls outside the trailing window later on.
        let later = build_universe(&p, p.calendar().date(199), &UniverseRules::default()).unwrap();
        assert_eq!(later.etf_ids(&p), vec!["E"]);
        assert!(eligible_etfs(&p, 201, &UniverseRules::default()).is_err());
    }

    #[test]
    fn insufficient_history_is_window_error() {
        let p = panel_with(vec![(AssetMeta::stock("A"), Box::new(|_| 0.0))], None);
        assert!(matches!(
            build_universe(&p, p.calendar().date(100), &UniverseRules::default()),
            Err(DataError::Window(_))
        ));
    }

    #[test]
    fn top_n_boundary() {
        let rules = UniverseRules {
            top_n: 2,
            ..Default::default()
        };
        let p = panel_with(
            vec![
                (AssetMeta::stock("A"), Box::new(|_| 0.01)),
                (AssetMeta::stock("B"), Box::new(|_| 0.01)),
                (AssetMeta::stock("C"), Box::new(|_| 0.01)),
            ],
            Some(vec![3.0, 1.0, 2.0]),
        );
        assert_eq!(eligible_stocks(&p, 160, &rules), vec![0, 2]);
    }

    #[test]
    fn shrinking_cutoff_never_adds() {
        let p = panel_with(
            (0..12)
                .map(|i| {
                    let f: Box<dyn Fn(usize) -> f64> =
                        Box::new(move |r| if (r + i) % 7 == 0 && i % 3 == 0 { f64::NAN } else { 0.01 });
                    (AssetMeta::stock(format!("S{i:02}")), f)
                })
                .collect(),
            Some((0..12).map(|i| ((i * 7) % 12) as f64).collect()),
        );
        let mut prev: Option<Vec<usize>> = None;
        for top in (0..=12).rev() {
            let rules = UniverseRules {
                top_n: top,
                ..Default::default()
            };
            let cur = eligible_stocks(&p, 170, &rules);
            if let Some(prev) = &prev {
                assert!(cur.iter().all(|j| prev.contains(j)));
            }
            prev = Some(cur);
        }
    }

    #[test]
    fn adr_share_code_excluded() {
        let mut adr = AssetMeta::stock("ADR");
        adr.share_code = 31;
        let p = panel_with(vec![(adr, Box::new(|_| 0.01))], None);
        assert!(eligible_stocks(&p, 100, &UniverseRules::default()).is_empty());
    }
}
