//! Classical 3+3 rule-based escalation.

use serde::{Deserialize, Serialize};

use super::{Action, ObservedData, StopReason};

pub(crate) const COHORT: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreePlusThreeConfig {
    pub num_doses: usize,
    pub max_n: usize,
}

fn stop_at(dose: usize) -> Action {
    if dose == 0 {
        Action::StopNoSelection(StopReason::LowestDoseTooToxic)
    } else {
        Action::StopAndSelect {
            dose,
            reason: StopReason::RuleBasedMtd,
        }
    }
}

/// 0/3 escalates, 1/3 expands to six, at most 1/6 escalates and two or more
/// toxicities close the dose. The MTD is the highest dose with at most 1/6.
pub fn three_plus_three_decide(cfg: &ThreePlusThreeConfig, data: &ObservedData) -> Action {
    let Some(d) = data.current_dose() else {
        return Action::TreatNextCohortAt(1);
    };
    let t = data.tally(d);
    if !t.n.is_multiple_of(COHORT as u32) {
        // Finish the cohort in progress.
        return Action::TreatNextCohortAt(d);
    }
    let closed = |dose: usize| dose <= cfg.num_doses && data.tally(dose).tox >= 2;
    if t.tox >= 2 {
        let below = d - 1;
        if below == 0 {
            return stop_at(0);
        }
        return if data.tally(below).n >= 6 {
            stop_at(below)
        } else {
            Action::TreatNextCohortAt(below)
        };
    }
    let cleared = (t.n == 3 && t.tox == 0) || (t.n >= 6 && t.tox <= 1);
    if !cleared {
        // 1/3: expand.
        return Action::TreatNextCohortAt(d);
    }
    if d == cfg.num_doses {
        return if t.n >= 6 {
            stop_at(d)
        } else {
            Action::TreatNextCohortAt(d)
        };
    }
    if closed(d + 1) {
        return if t.n >= 6 {
            stop_at(d)
        } else {
            Action::TreatNextCohortAt(d)
        };
    }
    Action::TreatNextCohortAt(d + 1)
}
