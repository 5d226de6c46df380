use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::actionseq::MachineKind;
use crate::btree::PrimitiveAction;
use crate::scenario::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaceState {
    pub x: f64,
    pub y: f64,
    pub slots: u32,
    pub reach: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Location {
    Place { place: String },
    /// Driving toward `target`; `progress` ticks done out of `length`.
    Edge {
        path: String,
        target: String,
        progress: u32,
        length: u32,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MachineState {
    pub id: String,
    pub kind: MachineKind,
    pub at: Location,
    /// Named pose, or `moving` while joints travel.
    pub pose: String,
    pub bed_load: u32,
    /// Place the loaded bucket was filled from.
    pub bucket: Option<String>,
    pub busy: Option<PrimitiveAction>,
}

impl MachineState {
    /// The place this machine stands at, if it is not driving.
    pub fn place(&self) -> Option<&str> {
        match &self.at {
            Location::Place { place } => Some(place),
            Location::Edge { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteState {
    pub tick: u64,
    pub places: BTreeMap<String, PlaceState>,
    pub soil: BTreeMap<String, u32>,
    pub machines: BTreeMap<String, MachineState>,
    pub loading_place: Option<String>,
}

impl SiteState {
    pub fn from_scenario(s: &Scenario) -> Self {
        let places = s
            .site
            .places
            .iter()
            .map(|p| {
                (
                    p.name.clone(),
                    PlaceState {
                        x: p.x,
                        y: p.y,
                        slots: p.slots,
                        reach: p.reach.clone(),
                    },
                )
            })
            .collect();
        let soil = s.site.places.iter().map(|p| (p.name.clone(), p.soil)).collect();
        let machines = s
            .site
            .machines
            .iter()
            .map(|m| {
                (
                    m.id.clone(),
                    MachineState {
                        id: m.id.clone(),
                        kind: m.kind,
                        at: Location::Place {
                            place: m.place.clone(),
                        },
                        pose: m.pose.clone(),
                        bed_load: m.bed_load,
                        bucket: None,
                        busy: None,
                    },
                )
            })
            .collect();
        SiteState {
            tick: 0,
            places,
            soil,
            machines,
            loading_place: s.site.loading_place.clone(),
        }
    }

    /// Machines standing at `place`, by id.
    pub fn occupants(&self, place: &str) -> Vec<&str> {
        self.machines
            .values()
            .filter(|m| m.place() == Some(place))
            .map(|m| m.id.as_str())
            .collect()
    }

    /// Soil on the ground plus soil in truck beds.
    pub fn total_soil(&self) -> u64 {
        let ground: u64 = self.soil.values().map(|&u| u as u64).sum();
        let beds: u64 = self.machines.values().map(|m| m.bed_load as u64).sum();
        ground + beds
    }

    /// Whether an excavator standing at `from` can work on `target`.
    pub fn in_reach(&self, from: &str, target: &str) -> bool {
        from == target
            || self
                .places
                .get(from)
                .is_some_and(|p| p.reach.iter().any(|r| r == target))
    }

    /// Excavators whose swing zone covers `place`.
    pub fn swing_zone_owners(&self, place: &str) -> Vec<&MachineState> {
        self.machines
            .values()
            .filter(|m| m.kind == MachineKind::Excavator)
            .filter(|m| m.place().is_some_and(|at| self.in_reach(at, place)))
            .collect()
    }

    pub fn truck_at_loading_place(&self) -> bool {
        self.loading_place.as_deref().is_some_and(|lp| {
            self.machines
                .values()
                .any(|m| m.kind == MachineKind::DumpTruck && m.place() == Some(lp))
        })
    }

    pub fn any_truck_loaded(&self) -> bool {
        self.machines
            .values()
            .any(|m| m.kind == MachineKind::DumpTruck && m.bed_load > 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::bundled_scenario;

    #[test]
    fn starts_from_scenario() {
        let s = SiteState::from_scenario(&bundled_scenario(6).unwrap());
        assert_eq!(s.occupants("mound"), ["excavator"]);
        assert_eq!(s.occupants("truck_yard"), ["dump_truck"]);
        assert_eq!(s.total_soil(), 20);
        assert!(!s.truck_at_loading_place());
        let owners: Vec<&str> = s.swing_zone_owners("loading_site").iter().map(|m| m.id.as_str()).collect();
        assert_eq!(owners, ["excavator"]);
        assert!(s.swing_zone_owners("dumping_site").is_empty());
    }
}
