//! Redundant-flag detection (NRF).
//!
//! Two rules, applied to generated flags only:
//!
//! * duplicate semantics: another generated flag has the same setter
//!   statement and the same consuming statements, so either could replace
//!   the other. The later declaration is reported.
//! * intra-machine superfluous: every consumer is a later statement of the
//!   setter's own machine, which sequential order already serializes.
//!
//! Generated flags that mirror default sensing flags are not reported.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::binding::bind_flags;
use super::ActionSequence;
use crate::flagcore::FlagName;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RedundancyReason {
    DuplicateSemantics,
    IntraMachineSuperfluous,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RedundantFlag {
    pub flag: FlagName,
    pub reason: RedundancyReason,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlagAnalysis {
    pub redundant: Vec<RedundantFlag>,
    pub nrf: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("sequence is not validated: {0}")]
    Unvalidated(String),
}

pub fn analyze_flags(seq: &ActionSequence) -> Result<FlagAnalysis, AnalysisError> {
    let bindings = bind_flags(seq);
    if let Some(issue) = bindings.issues.first() {
        return Err(AnalysisError::Unvalidated(format!(
            "flag {} has no unique setter",
            issue.flag()
        )));
    }
    let mut seen = BTreeSet::new();
    for g in &seq.generated_flags {
        if !seen.insert(&g.name) {
            return Err(AnalysisError::Unvalidated(format!(
                "flag {} declared twice",
                g.name
            )));
        }
    }

    struct Site<'a> {
        flag: &'a FlagName,
        setter: usize,
        uses: Vec<usize>,
    }
    let sites: Vec<Site> = seq
        .generated_flags
        .iter()
        .map(|g| Site {
            flag: &g.name,
            setter: bindings.setters[&g.name],
            uses: seq.consumers(&g.name),
        })
        .collect();

    let mut redundant = Vec::new();
    for (i, site) in sites.iter().enumerate() {
        let duplicate = sites[..i]
            .iter()
            .any(|earlier| earlier.setter == site.setter && earlier.uses == site.uses);
        if duplicate {
            redundant.push(RedundantFlag {
                flag: site.flag.clone(),
                reason: RedundancyReason::DuplicateSemantics,
            });
            continue;
        }
        let setter_machine = &seq.statements[site.setter - 1].machine;
        let intra = !site.uses.is_empty()
            && site.uses.iter().all(|&u| {
                u > site.setter && &seq.statements[u - 1].machine == setter_machine
            });
        if intra {
            redundant.push(RedundantFlag {
                flag: site.flag.clone(),
                reason: RedundancyReason::IntraMachineSuperfluous,
            });
        }
    }
    Ok(FlagAnalysis {
        nrf: redundant.len(),
        redundant,
    })
}
