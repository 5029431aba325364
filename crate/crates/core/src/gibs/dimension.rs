use chrono::NaiveDate;
use nalgebra::DMatrix;

use super::{basis_stages, GibsConfig, WindowBasis};
use crate::data::{ReturnsPanel, UniverseRules};
use crate::{Error, Result};

/// Estimates how many distinct return drivers span a window's ETF basis.
pub trait DimensionEstimator: Send + Sync {
    fn name(&self) -> &str;

    fn estimate(&self, basis: &WindowBasis, cfg: &GibsConfig) -> Result<usize>;
}

/// Size of the union prototype set.
#[derive(Debug, Clone, Copy, Default)]
pub struct GibsDimension;

impl DimensionEstimator for GibsDimension {
    fn name(&self) -> &str {
        "gibs"
    }

    fn estimate(&self, basis: &WindowBasis, cfg: &GibsConfig) -> Result<usize> {
        let projected = basis.projected()?;
        Ok(basis_stages(basis, &projected, cfg)?.union_prototypes.len())
    }
}

/// Number of principal components of the ETF returns needed to reach a
/// share of total variance.
#[derive(Debug, Clone, Copy)]
pub struct PcaDimension {
    pub variance_target: f64,
}

impl Default for PcaDimension {
    fn default() -> Self {
        Self { variance_target: 0.90 }
    }
}

impl DimensionEstimator for PcaDimension {
    fn name(&self) -> &str {
        "pca"
    }

    fn estimate(&self, basis: &WindowBasis, _cfg: &GibsConfig) -> Result<usize> {
        let etfs = basis.etf_indices();
        if etfs.is_empty() {
            return Ok(0);
        }
        Ok(components_for_share(&basis.select(&etfs), self.variance_target))
    }
}

fn components_for_share(x: &DMatrix<f64>, target: f64) -> usize {
    let mut c = x.clone();
    for mut col in c.column_iter_mut() {
        let m = col.mean();
        col.add_scalar_mut(-m);
    }
    let mut ev: Vec<f64> = c.singular_values().iter().map(|s| s * s).collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = ev.iter().sum();
    if total <= 0.0 {
        // Constant columns carry no variance; one component is the floor.
        return 1;
    }
    let mut acc = 0.0;
    for (m, v) in ev.iter().enumerate() {
        acc += v;
        if acc / total >= target - 1e-12 {
            return m + 1;
        }
    }
    ev.len()
}

fn row_of(panel: &ReturnsPanel, date: NaiveDate) -> Result<usize> {
    panel
        .calendar()
        .index_of(date)
        .ok_or_else(|| Error::Config(format!("{date} is not a panel date")))
}

/// Union prototype count for the window ending the week before `date`.
pub fn gibs_dimension(panel: &ReturnsPanel, date: NaiveDate, cfg: &GibsConfig, rules: &UniverseRules) -> Result<usize> {
    let basis = WindowBasis::build(panel, row_of(panel, date)?, rules, true)?;
    GibsDimension.estimate(&basis, cfg)
}

pub fn pca_dimension(panel: &ReturnsPanel, date: NaiveDate, target: f64, rules: &UniverseRules) -> Result<usize> {
    if !(0.0..=1.0).contains(&target) || target == 0.0 {
        return Err(Error::Config(format!("variance target {target} outside (0, 1]")));
    }
    let basis = WindowBasis::build(panel, row_of(panel, date)?, rules, false)?;
    PcaDimension { variance_target: target }.estimate(&basis, &GibsConfig::default())
}
