use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};

use nalgebra::DMatrix;

use super::{
    basis_stages, finish_fit, gibs_select_with, BasisRole, BasisSetStages, DimensionEstimator, FactorFit,
    GibsConfig, GibsDimension, PcaDimension, WindowBasis,
};
use crate::{Error, Result};

/// A window's basis plus lazily computed, shareable intermediate results, so
/// both portfolios reuse one projection and one set of prototype stages.
pub struct WindowContext<'a> {
    pub basis: &'a WindowBasis,
    pub config: &'a GibsConfig,
    projected: OnceLock<std::result::Result<DMatrix<f64>, String>>,
    stages: OnceLock<std::result::Result<BasisSetStages, String>>,
}

impl<'a> WindowContext<'a> {
    pub fn new(basis: &'a WindowBasis, config: &'a GibsConfig) -> Self {
        Self {
            basis,
            config,
            projected: OnceLock::new(),
            stages: OnceLock::new(),
        }
    }

    pub fn projected(&self) -> Result<&DMatrix<f64>> {
        self.projected
            .get_or_init(|| self.basis.projected().map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Config(e.clone()))
    }

    pub fn stages(&self) -> Result<&BasisSetStages> {
        self.stages
            .get_or_init(|| {
                self.projected()
                    .and_then(|p| basis_stages(self.basis, p, self.config))
                    .map_err(|e| e.to_string())
            })
            .as_ref()
            .map_err(|e| Error::Config(e.clone()))
    }

    /// Stages if some model already computed them.
    pub fn computed_stages(&self) -> Option<&BasisSetStages> {
        self.stages.get().and_then(|r| r.as_ref().ok())
    }
}

/// A factor model fitted to one portfolio over one window.
pub trait FactorModel: Send + Sync {
    fn name(&self) -> &str;

    fn fit(&self, ctx: &WindowContext<'_>, y: &[f64], seed: u64) -> Result<FactorFit>;
}

/// Adaptive multi-factor model selected by GIBS.
#[derive(Debug, Clone, Copy, Default)]
pub struct GibsModel;

impl FactorModel for GibsModel {
    fn name(&self) -> &str {
        "amf"
    }

    fn fit(&self, ctx: &WindowContext<'_>, y: &[f64], seed: u64) -> Result<FactorFit> {
        gibs_select_with(y, ctx.basis, ctx.projected()?, ctx.stages()?, ctx.config, seed)
    }
}

/// Plain five-factor regression with intercept.
#[derive(Debug, Clone, Copy, Default)]
pub struct Ff5Model;

impl FactorModel for Ff5Model {
    fn name(&self) -> &str {
        "ff5"
    }

    fn fit(&self, ctx: &WindowContext<'_>, y: &[f64], _seed: u64) -> Result<FactorFit> {
        let cols: Vec<usize> = (0..ctx.basis.columns.len())
            .filter(|&j| matches!(ctx.basis.columns[j].role, BasisRole::Market | BasisRole::Factor))
            .collect();
        if cols.is_empty() {
            return Err(Error::Config("basis has no five-factor columns".into()));
        }
        finish_fit(y, ctx.basis, Vec::new(), cols, None, ctx.config.significance)
    }
}

/// Name-keyed registry of shareable strategy objects.
pub struct Registry<T: ?Sized> {
    entries: BTreeMap<String, Arc<T>>,
}

impl<T: ?Sized> Default for Registry<T> {
    fn default() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: ?Sized> Registry<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `item` under `name`, replacing any previous entry.
    pub fn register(&mut self, name: impl Into<String>, item: Arc<T>) -> &mut Self {
        self.entries.insert(name.into(), item);
        self
    }

    pub fn get(&self, name: &str) -> Result<Arc<T>> {
        self.entries
            .get(name)
            .cloned()
            .ok_or_else(|| Error::UnknownModel(name.to_string()))
    }

    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(String::as_str).collect()
    }
}

pub type ModelRegistry = Registry<dyn FactorModel>;
pub type DimensionRegistry = Registry<dyn DimensionEstimator>;

impl Registry<dyn FactorModel> {
    /// The AMF model (`amf`) and the five-factor benchmark (`ff5`).
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register("amf", Arc::new(GibsModel));
        r.register("ff5", Arc::new(Ff5Model));
        r
    }
}

impl Registry<dyn DimensionEstimator> {
    /// Prototype count (`gibs`) and 90% explained-variance PCA (`pca`).
    pub fn with_defaults() -> Self {
        let mut r = Self::new();
        r.register("gibs", Arc::new(GibsDimension));
        r.register("pca", Arc::new(PcaDimension::default()));
        r
    }
}
