use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PredictError;
use crate::classes::DiseaseClass;

/// Every bundled entry carries this marker in its `source_note`.
pub const ADVISORY_NOTICE: &str = "advisory content: review by a local expert required";

const BUNDLED: &str = include_str!("../../assets/recommendations.json");

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Advice {
    pub class_name: String,
    pub title: String,
    pub summary: String,
    /// Treatment steps, in order.
    pub actions: Vec<String>,
    pub source_note: String,
}

/// Validated: exactly one entry per class, ordered by class index.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct RecommendationCatalog {
    pub schema_version: u32,
    pub entries: Vec<Advice>,
}

#[derive(Deserialize)]
struct CatalogFile {
    schema_version: u32,
    entries: Vec<Advice>,
}

pub fn parse_catalog(text: &str) -> Result<RecommendationCatalog, PredictError> {
    let file: CatalogFile = serde_json::from_str(text).map_err(|e| PredictError::Catalog(e.to_string()))?;
    if file.schema_version != super::SCHEMA_VERSION {
        return Err(PredictError::Catalog(format!("unsupported schema_version {}", file.schema_version)));
    }
    let mut slots: [Option<Advice>; 3] = Default::default();
    for advice in file.entries {
        let class: DiseaseClass = advice
            .class_name
            .parse()
            .map_err(|_| PredictError::Catalog(format!("entry for unknown class `{}`", advice.class_name)))?;
        if advice.title.trim().is_empty() || advice.actions.is_empty() {
            return Err(PredictError::Catalog(format!("entry `{class}` needs a title and at least one action")));
        }
        let slot = &mut slots[class.index()];
        if slot.is_some() {
            return Err(PredictError::Catalog(format!("duplicate entry for `{class}`")));
        }
        *slot = Some(advice);
    }
    let missing: Vec<&str> = DiseaseClass::ALL
        .iter()
        .filter(|c| slots[c.index()].is_none())
        .map(|c| c.as_str())
        .collect();
    if !missing.is_empty() {
        return Err(PredictError::Catalog(format!("missing entries for: {}", missing.join(", "))));
    }
    Ok(RecommendationCatalog {
        schema_version: file.schema_version,
        entries: slots.into_iter().flatten().collect(),
    })
}

pub fn load_catalog(path: &Path) -> Result<RecommendationCatalog, PredictError> {
    let text = std::fs::read_to_string(path).map_err(|e| PredictError::Catalog(format!("{}: {e}", path.display())))?;
    parse_catalog(&text)
}

/// The catalog compiled into the binary.
pub fn default_catalog() -> RecommendationCatalog {
    parse_catalog(BUNDLED).expect("bundled catalog is valid")
}

pub fn recommend<'a>(class_name: &str, catalog: &'a RecommendationCatalog) -> Result<&'a Advice, PredictError> {
    catalog
        .entries
        .iter()
        .find(|a| a.class_name == class_name)
        .ok_or_else(|| PredictError::Catalog(format!("no advice for unknown class `{class_name}`")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn without(class: &str) -> String {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED).unwrap();
        v["entries"].as_array_mut().unwrap().retain(|e| e["class_name"] != class);
        v.to_string()
    }

    #[test]
    fn bundled_catalog_covers_every_class_once() {
        let c = default_catalog();
        let names: Vec<&str> = c.entries.iter().map(|a| a.class_name.as_str()).collect();
        assert_eq!(names, ["bacteria", "brown", "smut"]);
        assert!(c.entries.iter().all(|a| a.source_note.contains(ADVISORY_NOTICE)));
    }

    #[test]
    fn lookup() {
        let c = default_catalog();
        assert_eq!(recommend("brown", &c).unwrap().title, "Brown spot");
        assert_ne!(recommend("smut", &c).unwrap(), recommend("brown", &c).unwrap());
        assert!(matches!(recommend("blast", &c), Err(PredictError::Catalog(_))));
    }

    #[test]
    fn missing_class_is_named() {
        let err = parse_catalog(&without("smut")).unwrap_err().to_string();
        assert!(err.contains("missing") && err.contains("smut"), "{err}");
    }

    #[test]
    fn duplicate_class_is_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED).unwrap();
        let brown = v["entries"][1].clone();
        v["entries"].as_array_mut().unwrap().push(brown);
        let err = parse_catalog(&v.to_string()).unwrap_err().to_string();
        assert!(err.contains("duplicate") && err.contains("brown"), "{err}");
    }

    #[test]
    fn unknown_class_entry_is_rejected() {
        let mut v: serde_json::Value = serde_json::from_str(BUNDLED).unwrap();
        v["entries"][0]["class_name"] = "blast".into();
        assert!(parse_catalog(&v.to_string()).is_err());
    }
}
