use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{CompileError, ParamKind};
use crate::actionseq::MachineKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEntry {
    pub from: String,
    pub to: String,
    pub id: String,
    /// Travel time in ticks.
    pub length: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MachineEntry {
    pub kind: MachineKind,
    pub initial_place: String,
}

#[derive(Debug, Error)]
pub enum ParamDbError {
    #[error("malformed parameter file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid parameter database: {0}")]
    Invalid(String),
}

/// Paths, poses and durations the compiler resolves skills against.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskParamDb {
    pub paths: Vec<PathEntry>,
    /// Pose name -> joint angles in radians.
    pub joint_targets: BTreeMap<String, Vec<f64>>,
    /// Pose names plus `dump` and `level_pass` -> ticks.
    pub skill_durations: BTreeMap<String, u32>,
    /// Place -> (x, y) in meters.
    pub place_coords: BTreeMap<String, [f64; 2]>,
    pub machines: BTreeMap<String, MachineEntry>,
}

/// Canonical excavator poses: swing, boom, arm, bucket.
const POSES: [(&str, [f64; 4], u32); 9] = [
    ("initial", [0.0, 0.0, 0.0, 0.0], 3),
    ("dig_ready", [0.0, -0.3, 0.8, 0.2], 2),
    ("dig", [0.0, -0.6, 1.2, 1.0], 3),
    ("scoop", [0.0, -0.2, 1.0, 1.6], 2),
    ("swing", [1.57, -0.2, 0.9, 1.6], 3),
    ("release", [1.57, -0.1, 0.7, 0.2], 2),
    ("level_start", [0.0, -0.5, 1.1, 0.6], 2),
    ("gather_start", [0.0, -0.7, 0.6, 0.3], 2),
    ("gather_pull", [0.0, -0.4, 1.3, 0.9], 3),
];

/// Meters a machine covers per tick when driving.
pub const TRAVEL_SPEED: f64 = 2.5;

impl TaskParamDb {
    /// Canonical poses and durations, a path between every ordered pair of
    /// places, and the given machines.
    pub fn from_layout(
        place_coords: BTreeMap<String, [f64; 2]>,
        machines: BTreeMap<String, MachineEntry>,
    ) -> Self {
        let mut db = TaskParamDb {
            place_coords,
            machines,
            ..Default::default()
        };
        for (name, joints, ticks) in POSES {
            db.joint_targets.insert(name.into(), joints.to_vec());
            db.skill_durations.insert(name.into(), ticks);
        }
        db.skill_durations.insert("dump".into(), 4);
        db.skill_durations.insert("level_pass".into(), 4);
        for (a, pa) in &db.place_coords {
            for (b, pb) in &db.place_coords {
                if a == b {
                    continue;
                }
                let dist = ((pa[0] - pb[0]).powi(2) + (pa[1] - pb[1]).powi(2)).sqrt();
                db.paths.push(PathEntry {
                    from: a.clone(),
                    to: b.clone(),
                    id: format!("{a}__{b}"),
                    length: ((dist / TRAVEL_SPEED).ceil() as u32).max(1),
                });
            }
        }
        db
    }

    pub fn from_json(text: &str) -> Result<Self, ParamDbError> {
        let db: TaskParamDb = serde_json::from_str(text)?;
        db.check().map_err(ParamDbError::Invalid)?;
        Ok(db)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("parameter database serializes")
    }

    /// Durations and path lengths at least 1; machines start at known places.
    pub fn check(&self) -> Result<(), String> {
        if let Some((k, _)) = self.skill_durations.iter().find(|(_, d)| **d == 0) {
            return Err(format!("duration of {k} is zero"));
        }
        if let Some(p) = self.paths.iter().find(|p| p.length == 0) {
            return Err(format!("path {} has zero length", p.id));
        }
        for (id, m) in &self.machines {
            if !self.place_coords.contains_key(&m.initial_place) {
                return Err(format!("{id} starts at unknown place {}", m.initial_place));
            }
        }
        Ok(())
    }

    pub fn places(&self) -> impl Iterator<Item = &str> {
        self.place_coords.keys().map(String::as_str)
    }

    pub fn machine_kinds(&self) -> BTreeMap<String, MachineKind> {
        self.machines
            .iter()
            .map(|(id, m)| (id.clone(), m.kind))
            .collect()
    }

    pub fn initial_place(&self, machine: &str) -> Option<&str> {
        self.machines.get(machine).map(|m| m.initial_place.as_str())
    }

    pub fn path(&self, from: &str, to: &str) -> Result<&PathEntry, CompileError> {
        self.paths
            .iter()
            .find(|p| p.from == from && p.to == to)
            .ok_or_else(|| CompileError::MissingParam {
                kind: ParamKind::Path,
                key: format!("({from}, {to})"),
            })
    }

    pub fn joints(&self, pose: &str) -> Result<&[f64], CompileError> {
        self.joint_targets
            .get(pose)
            .map(Vec::as_slice)
            .ok_or_else(|| CompileError::MissingParam {
                kind: ParamKind::Pose,
                key: pose.to_string(),
            })
    }

    pub fn duration(&self, key: &str) -> Result<u32, CompileError> {
        self.skill_durations
            .get(key)
            .copied()
            .ok_or_else(|| CompileError::MissingParam {
                kind: ParamKind::Duration,
                key: key.to_string(),
            })
    }

    /// The loading example's site: one excavator at the mound, one truck in
    /// the yard, and no truck path onto the mound.
    #[cfg(test)]
    pub(crate) fn example() -> Self {
        let coords = [
            ("mound", [0.0, 0.0]),
            ("loading_site", [8.0, 0.0]),
            ("dumping_site", [60.0, 20.0]),
            ("truck_yard", [30.0, -25.0]),
        ]
        .map(|(k, v)| (k.to_string(), v))
        .into();
        let machines = [
            ("excavator", MachineKind::Excavator, "mound"),
            ("dump_truck", MachineKind::DumpTruck, "truck_yard"),
        ]
        .map(|(id, kind, at)| {
            (
                id.to_string(),
                MachineEntry {
                    kind,
                    initial_place: at.into(),
                },
            )
        })
        .into();
        let mut db = Self::from_layout(coords, machines);
        db.paths.retain(|p| p.from != "mound" && p.to != "mound");
        db
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let db = TaskParamDb::example();
        assert_eq!(TaskParamDb::from_json(&db.to_json()).unwrap(), db);
    }

    #[test]
    fn path_lengths_follow_distance() {
        let db = TaskParamDb::example();
        // 8 m at 2.5 m/tick -> 4 ticks
        assert_eq!(db.path("loading_site", "mound").err(), Some(CompileError::MissingParam {
            kind: ParamKind::Path,
            key: "(loading_site, mound)".into(),
        }));
        let p = db.path("truck_yard", "loading_site").unwrap();
        let d = (22.0f64 * 22.0 + 25.0 * 25.0).sqrt();
        assert_eq!(p.length, (d / TRAVEL_SPEED).ceil() as u32);
    }

    #[test]
    fn zero_duration_rejected() {
        let mut db = TaskParamDb::example();
        db.skill_durations.insert("dump".into(), 0);
        assert!(matches!(
            TaskParamDb::from_json(&db.to_json()),
            Err(ParamDbError::Invalid(_))
        ));
    }
}
