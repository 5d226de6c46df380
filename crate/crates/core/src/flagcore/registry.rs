use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FlagError, FlagName};

pub const SENSING_LOADED: &str = "SENSING_LOADED_FLG";
pub const SENSING_ARRIVAL: &str = "SENSING_ARRIVAL_FLG";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlagKind {
    /// Maintained by the sensing system; fixed before planning.
    Default,
    /// Declared by an action sequence.
    Generated,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagRegistryEntry {
    pub name: FlagName,
    pub kind: FlagKind,
    pub initial: bool,
    #[serde(default)]
    pub description: String,
}

impl FlagRegistryEntry {
    pub fn default_flag(name: FlagName, description: impl Into<String>) -> Self {
        Self {
            name,
            kind: FlagKind::Default,
            initial: false,
            description: description.into(),
        }
    }

    pub fn generated(name: FlagName, description: impl Into<String>) -> Self {
        Self {
            name,
            kind: FlagKind::Generated,
            initial: false,
            description: description.into(),
        }
    }
}

/// `SENSING_AT_<PLACE>_FLG` for a snake_case place identifier.
pub fn sensing_at_flag(place: &str) -> FlagName {
    FlagName::new(format!("SENSING_AT_{}_FLG", place.to_ascii_uppercase()))
        .expect("place identifiers are snake_case")
}

/// The sensing flags shipped by default: loaded, arrival, and one
/// `SENSING_AT_<PLACE>_FLG` per place. All start false.
pub fn default_registry<'a>(places: impl IntoIterator<Item = &'a str>) -> Vec<FlagRegistryEntry> {
    let mut out = vec![
        FlagRegistryEntry::default_flag(
            FlagName::new(SENSING_LOADED).unwrap(),
            "True when soil is loaded in a dump truck bed; False otherwise.",
        ),
        FlagRegistryEntry::default_flag(
            FlagName::new(SENSING_ARRIVAL).unwrap(),
            "True when a dump truck occupies the loading position; False otherwise.",
        ),
    ];
    let mut places: Vec<&str> = places.into_iter().collect();
    places.sort_unstable();
    places.dedup();
    for p in places {
        out.push(FlagRegistryEntry::default_flag(
            sensing_at_flag(p),
            format!("True when a machine is at {p}; False otherwise."),
        ));
    }
    out
}

/// Reads a JSON registry file: a list of `{name, kind, initial, description}`.
pub fn load_registry(path: &Path) -> Result<Vec<FlagRegistryEntry>, FlagError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| FlagError::Registry(format!("{}: {e}", path.display())))?;
    let entries: Vec<FlagRegistryEntry> =
        serde_json::from_str(&text).map_err(|e| FlagError::Registry(e.to_string()))?;
    for e in &entries {
        if e.kind == FlagKind::Generated && e.description.trim().is_empty() {
            return Err(FlagError::Registry(format!(
                "generated flag {} has no description",
                e.name
            )));
        }
    }
    Ok(entries)
}
