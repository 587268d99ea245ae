//! Escalation designs behind one decision interface.
//!
//! A design sees only sufficient statistics: per-dose tallies plus the
//! chronological list of assigned doses. Given those it either names the
//! dose for the next cohort or stops, with or without a selected dose.

mod boin12;
mod crm;
mod mtpi2;
mod scripted;
mod three_plus_three;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use boin12::{boin12_admissible, boin12_decide, Boin12Config, UtilityWeights};
pub use crm::{crm_posterior, crm_stop_rule, CrmConfig, CrmPosterior};
pub use mtpi2::{dose_exclusion, mtpi2_decision, Mtpi2Config, Mtpi2Decision, Mtpi2Table};
pub use scripted::ScriptedConfig;
pub use three_plus_three::{three_plus_three_decide, ThreePlusThreeConfig};

#[derive(Debug, Error, PartialEq)]
pub enum DesignError {
    #[error("invalid design configuration: {0}")]
    InvalidConfig(String),
    #[error("inconsistent observed data: {0}")]
    InconsistentData(String),
    #[error("design needs efficacy outcomes but the data carries none")]
    MissingEfficacy,
    #[error("posterior mass reaches the quadrature grid edge (weight {edge_weight:e}); widen the grid or shrink prior_sd")]
    QuadratureBounds { edge_weight: f64 },
}

/// Outcome counts at one dose.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DoseTally {
    pub n: u32,
    pub tox: u32,
    pub eff: u32,
    /// Patients with both a toxicity and a response.
    pub tox_eff: u32,
}

impl DoseTally {
    pub fn no_tox_eff(&self) -> u32 {
        self.eff - self.tox_eff
    }

    pub fn tox_no_eff(&self) -> u32 {
        self.tox - self.tox_eff
    }

    pub fn no_tox_no_eff(&self) -> u32 {
        self.n + self.tox_eff - self.tox - self.eff
    }
}

/// Accumulated trial data.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ObservedData {
    pub tallies: Vec<DoseTally>,
    /// Dose (1-based) given to each treated patient, in treatment order.
    pub assignments: Vec<usize>,
    pub has_efficacy: bool,
}

impl ObservedData {
    pub fn new(num_doses: usize, has_efficacy: bool) -> Self {
        Self {
            tallies: vec![DoseTally::default(); num_doses],
            assignments: Vec::new(),
            has_efficacy,
        }
    }

    /// Adds one patient's outcome at `dose` (1-based).
    pub fn record(&mut self, dose: usize, tox: bool, eff: Option<bool>) -> Result<(), DesignError> {
        if dose == 0 || dose > self.tallies.len() {
            return Err(DesignError::InconsistentData(format!(
                "dose {dose} out of range"
            )));
        }
        if eff.is_some() != self.has_efficacy {
            return Err(DesignError::InconsistentData(
                "efficacy presence differs from data".into(),
            ));
        }
        let t = &mut self.tallies[dose - 1];
        t.n += 1;
        t.tox += u32::from(tox);
        if let Some(e) = eff {
            t.eff += u32::from(e);
            t.tox_eff += u32::from(tox && e);
        }
        self.assignments.push(dose);
        Ok(())
    }

    pub fn num_doses(&self) -> usize {
        self.tallies.len()
    }

    pub fn total_treated(&self) -> usize {
        self.assignments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignments.is_empty()
    }

    /// Dose given to the most recent patient.
    pub fn current_dose(&self) -> Option<usize> {
        self.assignments.last().copied()
    }

    pub fn highest_tried(&self) -> Option<usize> {
        self.tallies.iter().rposition(|t| t.n > 0).map(|i| i + 1)
    }

    pub fn tally(&self, dose: usize) -> &DoseTally {
        &self.tallies[dose - 1]
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        let bad = |m: String| Err(DesignError::InconsistentData(m));
        let mut counts = vec![0u32; self.tallies.len()];
        for &d in &self.assignments {
            if d == 0 || d > self.tallies.len() {
                return bad(format!("assignment to dose {d} out of range"));
            }
            counts[d - 1] += 1;
        }
        for (i, t) in self.tallies.iter().enumerate() {
            let dose = i + 1;
            if t.n != counts[i] {
                return bad(format!(
                    "dose {dose}: n = {} but {} assignments",
                    t.n, counts[i]
                ));
            }
            if t.tox > t.n || t.eff > t.n {
                return bad(format!("dose {dose}: events exceed patients"));
            }
            if t.tox_eff > t.tox.min(t.eff) || t.tox + t.eff - t.tox_eff > t.n {
                return bad(format!("dose {dose}: joint counts impossible"));
            }
            if !self.has_efficacy && (t.eff > 0 || t.tox_eff > 0) {
                return bad(format!(
                    "dose {dose}: efficacy counts in toxicity-only data"
                ));
            }
        }
        Ok(())
    }
}

/// Why a trial stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    SampleSizeReached,
    DoseCapReached,
    LowestDoseTooToxic,
    NoAdmissibleDose,
    RuleBasedMtd,
    ScriptExhausted,
    PatientsExhausted,
}

impl StopReason {
    pub fn as_str(&self) -> &'static str {
        match self {
            StopReason::SampleSizeReached => "sample-size-reached",
            StopReason::DoseCapReached => "dose-cap-reached",
            StopReason::LowestDoseTooToxic => "lowest-dose-too-toxic",
            StopReason::NoAdmissibleDose => "no-admissible-dose",
            StopReason::RuleBasedMtd => "rule-based-mtd",
            StopReason::ScriptExhausted => "script-exhausted",
            StopReason::PatientsExhausted => "patients-exhausted",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            StopReason::SampleSizeReached,
            StopReason::DoseCapReached,
            StopReason::LowestDoseTooToxic,
            StopReason::NoAdmissibleDose,
            StopReason::RuleBasedMtd,
            StopReason::ScriptExhausted,
            StopReason::PatientsExhausted,
        ]
        .into_iter()
        .find(|r| r.as_str() == s)
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    TreatNextCohortAt(usize),
    StopAndSelect { dose: usize, reason: StopReason },
    StopNoSelection(StopReason),
}

impl Action {
    pub fn is_stop(&self) -> bool {
        !matches!(self, Action::TreatNextCohortAt(_))
    }

    pub fn selected_dose(&self) -> Option<usize> {
        match self {
            Action::StopAndSelect { dose, .. } => Some(*dose),
            _ => None,
        }
    }
}

/// One escalation design and its resolved parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DesignConfig {
    ThreePlusThree(ThreePlusThreeConfig),
    Crm(CrmConfig),
    Mtpi2(Mtpi2Config),
    Boin12(Boin12Config),
    Scripted(ScriptedConfig),
}

impl DesignConfig {
    pub fn num_doses(&self) -> usize {
        match self {
            DesignConfig::ThreePlusThree(c) => c.num_doses,
            DesignConfig::Crm(c) => c.skeleton.len(),
            DesignConfig::Mtpi2(c) => c.num_doses,
            DesignConfig::Boin12(c) => c.num_doses,
            DesignConfig::Scripted(c) => c.num_doses,
        }
    }

    pub fn max_n(&self) -> usize {
        match self {
            DesignConfig::ThreePlusThree(c) => c.max_n,
            DesignConfig::Crm(c) => c.max_n,
            DesignConfig::Mtpi2(c) => c.max_n,
            DesignConfig::Boin12(c) => c.max_n,
            DesignConfig::Scripted(c) => c.max_n,
        }
    }

    pub fn cohort_size(&self) -> usize {
        match self {
            DesignConfig::ThreePlusThree(_) => three_plus_three::COHORT,
            DesignConfig::Crm(c) => c.cohort_size,
            DesignConfig::Mtpi2(c) => c.cohort_size,
            DesignConfig::Boin12(c) => c.cohort_size,
            DesignConfig::Scripted(c) => c.cohort_size,
        }
    }

    pub fn requires_efficacy(&self) -> bool {
        matches!(self, DesignConfig::Boin12(_))
    }

    pub fn name(&self) -> &'static str {
        match self {
            DesignConfig::ThreePlusThree(_) => "three_plus_three",
            DesignConfig::Crm(_) => "crm",
            DesignConfig::Mtpi2(_) => "mtpi2",
            DesignConfig::Boin12(_) => "boin12",
            DesignConfig::Scripted(_) => "scripted",
        }
    }

    pub fn validate(&self) -> Result<(), DesignError> {
        if self.num_doses() == 0 {
            return Err(DesignError::InvalidConfig(
                "at least one dose is required".into(),
            ));
        }
        if self.max_n() == 0 || self.cohort_size() == 0 {
            return Err(DesignError::InvalidConfig(
                "max_n and cohort_size must be positive".into(),
            ));
        }
        match self {
            DesignConfig::ThreePlusThree(_) => Ok(()),
            DesignConfig::Crm(c) => c.validate(),
            DesignConfig::Mtpi2(c) => c.validate(),
            DesignConfig::Boin12(c) => c.validate(),
            DesignConfig::Scripted(c) => c.validate(),
        }
    }

    /// Next action given the data so far. Pure in `(self, data)`.
    pub fn decide(&self, data: &ObservedData) -> Result<Action, DesignError> {
        self.validate()?;
        data.validate()?;
        if data.num_doses() != self.num_doses() {
            return Err(DesignError::InconsistentData(format!(
                "data has {} doses, design expects {}",
                data.num_doses(),
                self.num_doses()
            )));
        }
        if data.total_treated() > self.max_n() {
            return Err(DesignError::InconsistentData(format!(
                "{} patients treated, cap is {}",
                data.total_treated(),
                self.max_n()
            )));
        }
        if self.requires_efficacy() && !data.has_efficacy {
            return Err(DesignError::MissingEfficacy);
        }
        let at_cap = data.total_treated() >= self.max_n();
        let action = match self {
            DesignConfig::ThreePlusThree(c) => three_plus_three_decide(c, data),
            DesignConfig::Crm(c) => c.decide(data, at_cap)?,
            DesignConfig::Mtpi2(c) => c.decide(data, at_cap),
            DesignConfig::Boin12(c) => boin12_decide(c, data),
            DesignConfig::Scripted(c) => c.decide(data),
        };
        if at_cap && !action.is_stop() {
            // Designs without their own cap handling select what they would
            // have treated next.
            let TreatNextCohortAt(dose) = action else {
                unreachable!()
            };
            return Ok(Action::StopAndSelect {
                dose,
                reason: StopReason::SampleSizeReached,
            });
        }
        Ok(action)
    }

    /// Every resolved parameter, as `key = value` text.
    pub fn describe(&self) -> String {
        toml::to_string(self).expect("design configs serialize to TOML")
    }
}

use Action::TreatNextCohortAt;

/// Lowest dose among `candidates` with the largest score; `candidates` must be
/// in ascending dose order.
pub(crate) fn argmax_lowest(candidates: impl IntoIterator<Item = (usize, f64)>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (d, s) in candidates {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((d, s));
        }
    }
    best.map(|(d, _)| d)
}

pub(crate) fn check_unit_open(name: &str, v: f64) -> Result<(), DesignError> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(DesignError::InvalidConfig(format!(
            "{name} = {v} must lie in (0, 1)"
        )))
    }
}
