use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MachineKind {
    Excavator,
    DumpTruck,
}

impl MachineKind {
    pub fn label(self) -> &'static str {
        match self {
            MachineKind::Excavator => "Excavator",
            MachineKind::DumpTruck => "Dump Truck",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Skill {
    Move,
    InitialPose,
    ExcavateAndRelease,
    Level,
    Gather,
    DumpSoil,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Machine,
    Place,
}

#[derive(Debug, Clone, Copy)]
pub struct ParamSpec {
    pub name: &'static str,
    pub kind: ParamKind,
    /// A place parameter that may also name a dump truck (its bed).
    pub accepts_truck: bool,
}

#[derive(Debug, Clone, Copy)]
pub struct SkillSignature {
    pub skill: Skill,
    pub name: &'static str,
    pub machine_kinds: &'static [MachineKind],
    /// First entry is always the executing machine.
    pub params: &'static [ParamSpec],
    pub description: &'static str,
}

const MACHINE: ParamSpec = ParamSpec {
    name: "machine",
    kind: ParamKind::Machine,
    accepts_truck: false,
};

const fn place(name: &'static str, accepts_truck: bool) -> ParamSpec {
    ParamSpec {
        name,
        kind: ParamKind::Place,
        accepts_truck,
    }
}

use MachineKind::{DumpTruck, Excavator};

pub const SKILLS: [SkillSignature; 6] = [
    SkillSignature {
        skill: Skill::Move,
        name: "move",
        machine_kinds: &[Excavator, DumpTruck],
        params: &[MACHINE, place("destination", false)],
        description: "Move the specified machine to the destination.",
    },
    SkillSignature {
        skill: Skill::InitialPose,
        name: "initial_pose",
        machine_kinds: &[Excavator],
        params: &[MACHINE],
        description: "Change the pose of the machine to its initial pose.",
    },
    SkillSignature {
        skill: Skill::ExcavateAndRelease,
        name: "excavate_and_release",
        machine_kinds: &[Excavator],
        params: &[MACHINE, place("excavate_place", false), place("release_place", true)],
        description: "Excavate soil from excavate_place and release it to release_place.",
    },
    SkillSignature {
        skill: Skill::Level,
        name: "level",
        machine_kinds: &[Excavator],
        params: &[MACHINE, place("level_place", true)],
        description: "Level the soil at the specified level_place.",
    },
    SkillSignature {
        skill: Skill::Gather,
        name: "gather",
        machine_kinds: &[Excavator],
        params: &[MACHINE, place("gather_place", false)],
        description: "Gather soil at the specified gather_place.",
    },
    SkillSignature {
        skill: Skill::DumpSoil,
        name: "dump_soil",
        machine_kinds: &[DumpTruck],
        params: &[MACHINE],
        description: "Dump the loaded soil at the current location.",
    },
];

impl Skill {
    pub fn signature(self) -> &'static SkillSignature {
        SKILLS.iter().find(|s| s.skill == self).unwrap()
    }

    pub fn name(self) -> &'static str {
        self.signature().name
    }

    pub fn from_name(name: &str) -> Option<Skill> {
        SKILLS.iter().find(|s| s.name == name).map(|s| s.skill)
    }

    pub fn allowed_for(self, kind: MachineKind) -> bool {
        self.signature().machine_kinds.contains(&kind)
    }

    /// Total argument count including the machine.
    pub fn arity(self) -> usize {
        self.signature().params.len()
    }
}

impl fmt::Display for Skill {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Markdown rendering of the skill table, grouped by machine type.
pub fn skills_table() -> String {
    let mut out = String::from("| Machine Type | Skill | Description |\n|---|---|---|\n");
    for kind in [Excavator, DumpTruck] {
        for s in SKILLS.iter().filter(|s| s.machine_kinds.contains(&kind)) {
            let params: Vec<_> = s.params.iter().map(|p| p.name).collect();
            out.push_str(&format!(
                "| {} | {}({}) | {} |\n",
                kind.label(),
                s.name,
                params.join(", "),
                s.description
            ));
        }
    }
    out
}
