//! Flag-synchronized behavior trees for coordinated earthwork machines.
//!
//! The pipeline runs instruction → [`actionseq`] plan → [`btcompile`]
//! per-machine trees → [`sitesim`] execution, with the machines' trees
//! coordinating only through the [`flagcore::GlobalBlackboard`].

pub mod actionseq;
pub mod btcompile;
pub mod btree;
pub mod eval;
pub mod flagcore;
pub mod planner;
pub mod scenario;
pub mod sitesim;

pub use actionseq::{ActionSequence, ActionStatement, FlagExpr, MachineKind, Skill};
pub use flagcore::{FlagName, GlobalBlackboard};
