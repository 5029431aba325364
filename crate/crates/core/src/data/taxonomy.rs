use std::collections::HashMap;
use std::io::Read;
use std::path::Path;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::DataError;

const BUILTIN_CSV: &str = include_str!("../../data/etf_taxonomy.csv");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaxonomyEntry {
    pub class: String,
    pub subclass: String,
    pub merged_class: String,
}

/// ETF class / subclass taxonomy with the merged heatmap categories.
#[derive(Debug, Clone)]
pub struct Taxonomy {
    entries: Vec<TaxonomyEntry>,
    by_subclass: HashMap<String, usize>,
}

impl Taxonomy {
    /// The shipped 10-class, 73-subclass fixture.
    pub fn builtin() -> &'static Taxonomy {
        static BUILTIN: OnceLock<Taxonomy> = OnceLock::new();
        BUILTIN.get_or_init(|| {
            Taxonomy::from_reader(BUILTIN_CSV.as_bytes()).expect("builtin taxonomy fixture is valid")
        })
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path).map_err(|source| DataError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_reader(file)
    }

    pub fn from_reader<R: Read>(reader: R) -> Result<Self, DataError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut entries = Vec::new();
        let mut by_subclass = HashMap::new();
        for row in rdr.deserialize::<TaxonomyEntry>() {
            let entry = row.map_err(|e| DataError::Taxonomy(e.to_string()))?;
            if by_subclass
                .insert(entry.subclass.clone(), entries.len())
                .is_some()
            {
                return Err(DataError::Taxonomy(format!(
                    "subclass `{}` listed twice",
                    entry.subclass
                )));
            }
            entries.push(entry);
        }
        Ok(Self {
            entries,
            by_subclass,
        })
    }

    pub fn entries(&self) -> &[TaxonomyEntry] {
        &self.entries
    }

    fn entry(&self, subclass: &str) -> Result<&TaxonomyEntry, DataError> {
        self.by_subclass
            .get(subclass)
            .map(|&i| &self.entries[i])
            .ok_or_else(|| DataError::Taxonomy(format!("unknown subclass `{subclass}`")))
    }

    pub fn merged_class(&self, subclass: &str) -> Result<&str, DataError> {
        Ok(&self.entry(subclass)?.merged_class)
    }

    pub fn class_of(&self, subclass: &str) -> Result<&str, DataError> {
        Ok(&self.entry(subclass)?.class)
    }

    /// Checks that `subclass` exists and belongs to `class`.
    pub fn validate(&self, class: &str, subclass: &str) -> Result<(), DataError> {
        let found = self.class_of(subclass)?;
        if found != class {
            return Err(DataError::Taxonomy(format!(
                "subclass `{subclass}` belongs to `{found}`, not `{class}`"
            )));
        }
        Ok(())
    }

    /// Top-level classes in fixture order.
    pub fn classes(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.class.as_str()) {
                out.push(&e.class);
            }
        }
        out
    }

    pub fn subclasses_of(&self, class: &str) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.class == class)
            .map(|e| e.subclass.as_str())
            .collect()
    }

    /// Merged categories in fixture order.
    pub fn merged_classes(&self) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.merged_class.as_str()) {
                out.push(&e.merged_class);
            }
        }
        out
    }
}

/// Merged heatmap category of a subclass under the shipped taxonomy.
pub fn merged_class(subclass: &str) -> Result<String, DataError> {
    Taxonomy::builtin().merged_class(subclass).map(str::to_owned)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        let t = Taxonomy::builtin();
        assert_eq!(t.entries().len(), 73);
        assert_eq!(t.classes().len(), 10);
        assert_eq!(t.subclasses_of("Equity").len(), 36);
        assert_eq!(t.subclasses_of("Bond/Fixed Income").len(), 13);
    }

    #[test]
    fn merged_examples() {
        assert_eq!(merged_class("Government Bonds").unwrap(), "Bonds");
        assert_eq!(merged_class("Corporate Bonds").unwrap(), "Bonds");
        assert_eq!(merged_class("Consumer Staples Equities").unwrap(), "Consumer Equities");
        assert_eq!(merged_class("Materials").unwrap(), "Materials & Precious Metals");
        assert_eq!(merged_class("Building & Construction").unwrap(), "Real Estate Related");
        assert_eq!(merged_class("Currency").unwrap(), "Currency");
    }

    #[test]
    fn unknown_subclass_fails() {
        assert!(matches!(merged_class("Crypto"), Err(DataError::Taxonomy(_))));
    }

    #[test]
    fn merge_is_total_and_single_valued() {
        let t = Taxonomy::builtin();
        for e in t.entries() {
            assert_eq!(t.merged_class(&e.subclass).unwrap(), e.merged_class);
        }
        // Merged groups never straddle names of other unmerged subclasses.
        let merged: Vec<_> = t.merged_classes();
        assert_eq!(merged.len(), 60);
    }

    #[test]
    fn validate_checks_membership() {
        let t = Taxonomy::builtin();
        assert!(t.validate("Equity", "Materials").is_ok());
        assert!(t.validate("Commodity", "Materials").is_err());
    }
}
