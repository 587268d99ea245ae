//! Fixed dose path, for replaying a known trajectory.

use serde::{Deserialize, Serialize};

use super::{Action, DesignError, ObservedData, StopReason};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedConfig {
    pub num_doses: usize,
    pub max_n: usize,
    pub cohort_size: usize,
    /// Dose for each successive cohort.
    pub path: Vec<usize>,
    /// Dose reported once the path is exhausted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub select: Option<usize>,
}

impl ScriptedConfig {
    pub(crate) fn validate(&self) -> Result<(), DesignError> {
        let bad = |d: usize| d == 0 || d > self.num_doses;
        if self.path.iter().copied().any(bad) || self.select.is_some_and(bad) {
            return Err(DesignError::InvalidConfig(
                "scripted dose out of range".into(),
            ));
        }
        Ok(())
    }

    pub(crate) fn decide(&self, data: &ObservedData) -> Action {
        let cohort = data.total_treated().div_ceil(self.cohort_size);
        match self.path.get(cohort) {
            Some(&d) if data.total_treated() < self.max_n => Action::TreatNextCohortAt(d),
            _ => match self.select {
                Some(dose) => Action::StopAndSelect {
                    dose,
                    reason: StopReason::ScriptExhausted,
                },
                None => Action::StopNoSelection(StopReason::ScriptExhausted),
            },
        }
    }
}
