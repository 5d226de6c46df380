//! Scenario files: site layout, task description and goal predicate.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::actionseq::{MachineKind, Skill};
use crate::btcompile::{MachineEntry, TaskParamDb};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("scenario {id}: malformed json: {source}")]
    Json {
        id: String,
        source: serde_json::Error,
    },
    #[error("scenario {id}: {reason}")]
    Invalid { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Single,
    Coordinated,
}

/// Whether the instruction comes from the published scenario table or was
/// written for this catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Published,
    Authored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Place {
    pub name: String,
    pub x: f64,
    pub y: f64,
    /// How many machines fit at once.
    pub slots: u32,
    #[serde(default)]
    pub soil: u32,
    /// Places an excavator standing here can dig from, release into and
    /// swing over. The place itself is always within reach.
    #[serde(default)]
    pub reach: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineSpec {
    pub id: String,
    pub kind: MachineKind,
    pub place: String,
    #[serde(default = "initial_pose")]
    pub pose: String,
    #[serde(default)]
    pub bed_load: u32,
}

fn initial_pose() -> String {
    "initial".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Site {
    pub places: Vec<Place>,
    /// Where trucks are loaded; drives SENSING_ARRIVAL_FLG.
    #[serde(default)]
    pub loading_place: Option<String>,
    pub machines: Vec<MachineSpec>,
}

impl Site {
    pub fn place(&self, name: &str) -> Option<&Place> {
        self.places.iter().find(|p| p.name == name)
    }

    pub fn machine(&self, id: &str) -> Option<&MachineSpec> {
        self.machines.iter().find(|m| m.id == id)
    }

    /// Whether an excavator at `from` can work on `target`.
    pub fn in_reach(&self, from: &str, target: &str) -> bool {
        from == target
            || self
                .place(from)
                .is_some_and(|p| p.reach.iter().any(|r| r == target))
    }
}

/// One skill call for a named machine.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub skill: Skill,
    pub machine: String,
    #[serde(default)]
    pub params: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Trip {
    pub truck: String,
    /// Bucket loads per trip.
    pub loads: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Task {
    /// Single-machine work, done in order.
    Steps { steps: Vec<Step> },
    /// Load trucks at `load_at` from `dig_from` and dump at `dump_at`.
    Haul {
        excavator: String,
        dig_from: String,
        load_at: String,
        dump_at: String,
        trips: Vec<Trip>,
        #[serde(default)]
        level_bed: bool,
        #[serde(default)]
        before: Vec<Step>,
        #[serde(default)]
        after: Vec<Step>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Goal {
    SoilAt { place: String, units: u32 },
    MachineAt { machine: String, place: String },
    BedLoad { truck: String, units: u32 },
    /// Exact number of completed skill calls across the run.
    Completed { skill: Skill, count: u32 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: u32,
    pub origin: Origin,
    pub instruction: String,
    pub category: Category,
    pub excavators: u32,
    pub dump_trucks: u32,
    pub site: Site,
    pub task: Task,
    pub goal: Vec<Goal>,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: Scenario = serde_json::from_str(text).map_err(|source| ScenarioError::Json {
            id: "?".into(),
            source,
        })?;
        s.check()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text).map_err(|e| match e {
            ScenarioError::Json { source, .. } => ScenarioError::Json {
                id: path.display().to_string(),
                source,
            },
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    fn invalid(&self, reason: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid {
            id: self.id.to_string(),
            reason: reason.into(),
        }
    }

    /// Structural checks: counts match the site, places and machines
    /// resolve, no place starts over capacity.
    pub fn check(&self) -> Result<(), ScenarioError> {
        let count = |k: MachineKind| self.site.machines.iter().filter(|m| m.kind == k).count() as u32;
        if count(MachineKind::Excavator) != self.excavators || count(MachineKind::DumpTruck) != self.dump_trucks {
            return Err(self.invalid("machine counts do not match the site"));
        }
        let multi = self.participants().len() > 1;
        if multi != (self.category == Category::Coordinated) {
            return Err(self.invalid("category must be coordinated iff several machines take part"));
        }
        let mut names = BTreeSet::new();
        for p in &self.site.places {
            if !names.insert(p.name.as_str()) {
                return Err(self.invalid(format!("place {} listed twice", p.name)));
            }
            if p.slots == 0 {
                return Err(self.invalid(format!("place {} has no slots", p.name)));
            }
        }
        for p in &self.site.places {
            if let Some(r) = p.reach.iter().find(|r| !names.contains(r.as_str())) {
                return Err(self.invalid(format!("place {} reaches unknown {r}", p.name)));
            }
        }
        if let Some(lp) = &self.site.loading_place {
            if !names.contains(lp.as_str()) {
                return Err(self.invalid(format!("unknown loading place {lp}")));
            }
        }
        let mut ids = BTreeSet::new();
        let mut occupancy: BTreeMap<&str, u32> = BTreeMap::new();
        for m in &self.site.machines {
            if !ids.insert(m.id.as_str()) {
                return Err(self.invalid(format!("machine {} listed twice", m.id)));
            }
            if !names.contains(m.place.as_str()) {
                return Err(self.invalid(format!("{} starts at unknown place {}", m.id, m.place)));
            }
            if m.kind == MachineKind::Excavator && m.bed_load > 0 {
                return Err(self.invalid(format!("excavator {} has a bed load", m.id)));
            }
            *occupancy.entry(&m.place).or_default() += 1;
        }
        for (place, n) in occupancy {
            if n > self.site.place(place).map_or(0, |p| p.slots) {
                return Err(self.invalid(format!("{place} starts over capacity")));
            }
        }
        Ok(())
    }

    /// Machines the task mentions, in order of first mention.
    pub fn participants(&self) -> Vec<&str> {
        let mentioned: Vec<&str> = match &self.task {
            Task::Steps { steps } => steps.iter().map(|s| s.machine.as_str()).collect(),
            Task::Haul {
                excavator,
                trips,
                before,
                after,
                ..
            } => before
                .iter()
                .map(|s| s.machine.as_str())
                .chain([excavator.as_str()])
                .chain(trips.iter().map(|t| t.truck.as_str()))
                .chain(after.iter().map(|s| s.machine.as_str()))
                .collect(),
        };
        let mut out = Vec::new();
        for m in mentioned {
            if !out.contains(&m) {
                out.push(m);
            }
        }
        out
    }

    /// Compiler parameters for this site: canonical poses and durations,
    /// paths between every pair of places.
    pub fn param_db(&self) -> TaskParamDb {
        let coords = self
            .site
            .places
            .iter()
            .map(|p| (p.name.clone(), [p.x, p.y]))
            .collect();
        let machines = self
            .site
            .machines
            .iter()
            .map(|m| {
                (
                    m.id.clone(),
                    MachineEntry {
                        kind: m.kind,
                        initial_place: m.place.clone(),
                    },
                )
            })
            .collect();
        TaskParamDb::from_layout(coords, machines)
    }

    pub fn place_names(&self) -> Vec<&str> {
        self.site.places.iter().map(|p| p.name.as_str()).collect()
    }
}

macro_rules! bundled {
    ($($n:literal),* $(,)?) => {
        [$(include_str!(concat!("../catalog/scenario_", $n, ".json"))),*]
    };
}

const BUNDLED: [&str; 30] = bundled!(
    "01", "02", "03", "04", "05", "06", "07", "08", "09", "10", "11", "12", "13", "14", "15",
    "16", "17", "18", "19", "20", "21", "22", "23", "24", "25", "26", "27", "28", "29", "30",
);

/// The 30 bundled scenarios, ordered by id.
pub fn catalog() -> Vec<Scenario> {
    BUNDLED
        .iter()
        .map(|text| Scenario::from_json(text).expect("bundled scenario is valid"))
        .collect()
}

pub fn bundled_scenario(id: u32) -> Option<Scenario> {
    catalog().into_iter().find(|s| s.id == id)
}

/// Every `*.json` scenario in `dir`, ordered by id.
pub fn load_catalog_dir(dir: &Path) -> Result<Vec<Scenario>, ScenarioError> {
    let io = |source| ScenarioError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "json") {
            out.push(Scenario::load(&path)?);
        }
    }
    out.sort_by_key(|s| s.id);
    Ok(out)
}
