//! BOIN12 phase I/II design.
//!
//! Toxicity at the current dose is compared with BOIN escalation and
//! de-escalation boundaries to decide which neighbouring doses are eligible;
//! among eligible admissible doses the one with the highest rank-based
//! desirability score is chosen. The desirability score is the posterior
//! probability, under a quasi-binomial Beta model of the standardized
//! utility, that the dose's utility beats the benchmark.

use serde::{Deserialize, Serialize};

use super::{
    argmax_lowest, check_unit_open, Action, DesignError, DoseTally, ObservedData, StopReason,
};
use crate::stats::{beta_sf, isotonic_fit, posterior_prob_above, posterior_prob_below};

/// Utilities (0..=100 scale) of the four joint outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilityWeights {
    pub no_tox_eff: f64,
    pub tox_eff: f64,
    pub no_tox_no_eff: f64,
    pub tox_no_eff: f64,
}

impl Default for UtilityWeights {
    fn default() -> Self {
        Self {
            no_tox_eff: 100.0,
            tox_eff: 60.0,
            no_tox_no_eff: 40.0,
            tox_no_eff: 0.0,
        }
    }
}

impl UtilityWeights {
    /// Mean utility of a dose with marginal rates `p_tox`, `p_eff` and joint
    /// rate `p_both`.
    pub fn mean_utility(&self, p_tox: f64, p_eff: f64, p_both: f64) -> f64 {
        self.no_tox_eff * (p_eff - p_both)
            + self.tox_eff * p_both
            + self.no_tox_no_eff * (1.0 - p_tox - p_eff + p_both)
            + self.tox_no_eff * (p_tox - p_both)
    }

    /// Sum of standardized utilities over the patients in `t`.
    fn quasi_events(&self, t: &DoseTally) -> f64 {
        (self.no_tox_eff * t.no_tox_eff() as f64
            + self.tox_eff * t.tox_eff as f64
            + self.no_tox_no_eff * t.no_tox_no_eff() as f64
            + self.tox_no_eff * t.tox_no_eff() as f64)
            / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Boin12Config {
    pub num_doses: usize,
    #[serde(default = "defaults::phi_t")]
    pub phi_t: f64,
    #[serde(default = "defaults::phi_e")]
    pub phi_e: f64,
    #[serde(default = "defaults::c_t")]
    pub c_t: f64,
    #[serde(default = "defaults::c_e")]
    pub c_e: f64,
    #[serde(default)]
    pub utility: UtilityWeights,
    #[serde(default = "defaults::utility_benchmark")]
    pub utility_benchmark: f64,
    pub max_n: usize,
    pub cohort_size: usize,
    #[serde(default = "defaults::stop_at_n_on_dose")]
    pub stop_at_n_on_dose: u32,
}

mod defaults {
    pub fn phi_t() -> f64 {
        0.35
    }
    pub fn phi_e() -> f64 {
        0.25
    }
    pub fn c_t() -> f64 {
        0.95
    }
    pub fn c_e() -> f64 {
        0.90
    }
    pub fn utility_benchmark() -> f64 {
        60.0
    }
    pub fn stop_at_n_on_dose() -> u32 {
        12
    }
}

impl Boin12Config {
    pub fn new(num_doses: usize, max_n: usize, cohort_size: usize) -> Self {
        Self {
            num_doses,
            phi_t: defaults::phi_t(),
            phi_e: defaults::phi_e(),
            c_t: defaults::c_t(),
            c_e: defaults::c_e(),
            utility: UtilityWeights::default(),
            utility_benchmark: defaults::utility_benchmark(),
            max_n,
            cohort_size,
            stop_at_n_on_dose: defaults::stop_at_n_on_dose(),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), DesignError> {
        check_unit_open("phi_t", self.phi_t)?;
        check_unit_open("phi_e", self.phi_e)?;
        check_unit_open("c_t", self.c_t)?;
        check_unit_open("c_e", self.c_e)?;
        let u = &self.utility;
        for (name, v) in [
            ("no_tox_eff", u.no_tox_eff),
            ("tox_eff", u.tox_eff),
            ("no_tox_no_eff", u.no_tox_no_eff),
            ("tox_no_eff", u.tox_no_eff),
        ] {
            if !(0.0..=100.0).contains(&v) {
                return Err(DesignError::InvalidConfig(format!(
                    "utility {name} = {v} outside [0, 100]"
                )));
            }
        }
        if !(0.0 < self.utility_benchmark && self.utility_benchmark < 100.0) {
            return Err(DesignError::InvalidConfig(
                "utility_benchmark must lie in (0, 100)".into(),
            ));
        }
        if self.stop_at_n_on_dose == 0 {
            return Err(DesignError::InvalidConfig(
                "stop_at_n_on_dose must be positive".into(),
            ));
        }
        Ok(())
    }

    /// BOIN escalation and de-escalation boundaries for `phi_t`, using the
    /// customary sub-therapeutic and overdose rates 0.6 and 1.4 times `phi_t`.
    pub fn boundaries(&self) -> (f64, f64) {
        let phi = self.phi_t;
        let (phi1, phi2) = (0.6 * phi, 1.4 * phi);
        let lambda_e =
            ((1.0 - phi1) / (1.0 - phi)).ln() / ((phi * (1.0 - phi1)) / (phi1 * (1.0 - phi))).ln();
        let lambda_d =
            ((1.0 - phi) / (1.0 - phi2)).ln() / ((phi2 * (1.0 - phi)) / (phi * (1.0 - phi2))).ln();
        (lambda_e, lambda_d)
    }

    /// Posterior probability that the standardized utility of `dose`
    /// exceeds the benchmark.
    pub fn desirability(&self, data: &ObservedData, dose: usize) -> f64 {
        let t = data.tally(dose);
        let x = self.utility.quasi_events(t);
        beta_sf(
            1.0 + x,
            1.0 + t.n as f64 - x,
            self.utility_benchmark / 100.0,
        )
    }

    /// Posterior mean standardized utility of `dose`.
    pub fn posterior_mean_utility(&self, data: &ObservedData, dose: usize) -> f64 {
        let t = data.tally(dose);
        (1.0 + self.utility.quasi_events(t)) / (2.0 + t.n as f64)
    }

    fn admissible(&self, data: &ObservedData) -> Vec<usize> {
        boin12_admissible(data, self.phi_t, self.phi_e, self.c_t, self.c_e)
    }

    /// Tried dose whose isotonic toxicity estimate is closest to `phi_t`.
    fn estimated_mtd(&self, data: &ObservedData) -> Option<usize> {
        let tried: Vec<usize> = (1..=data.num_doses())
            .filter(|&d| data.tally(d).n > 0)
            .collect();
        if tried.is_empty() {
            return None;
        }
        let est: Vec<f64> = tried
            .iter()
            .map(|&d| {
                let t = data.tally(d);
                (t.tox as f64 + 0.05) / (t.n as f64 + 0.1)
            })
            .collect();
        let w: Vec<f64> = tried.iter().map(|&d| data.tally(d).n as f64).collect();
        let fit = isotonic_fit(&est, &w);
        let mut best = (tried[0], f64::INFINITY);
        for (&d, &p) in tried.iter().zip(&fit) {
            let gap = (p - self.phi_t).abs();
            if gap < best.1 {
                best = (d, gap);
            }
        }
        Some(best.0)
    }

    /// Final optimal-dose pick: highest posterior mean utility among tried,
    /// admissible doses not above the estimated MTD.
    pub fn select(&self, data: &ObservedData) -> Option<usize> {
        let mtd = self.estimated_mtd(data)?;
        let admissible = self.admissible(data);
        argmax_lowest(
            admissible
                .into_iter()
                .filter(|&d| d <= mtd && data.tally(d).n > 0)
                .map(|d| (d, self.posterior_mean_utility(data, d))),
        )
    }

    fn stop_with_selection(&self, data: &ObservedData, reason: StopReason) -> Action {
        match self.select(data) {
            Some(dose) => Action::StopAndSelect { dose, reason },
            None => Action::StopNoSelection(StopReason::NoAdmissibleDose),
        }
    }
}

/// Doses passing both the safety and the efficacy admissibility rules.
/// Toxicity exclusion propagates upward: once a dose is unsafe, so is every
/// higher dose.
pub fn boin12_admissible(
    data: &ObservedData,
    phi_t: f64,
    phi_e: f64,
    c_t: f64,
    c_e: f64,
) -> Vec<usize> {
    let mut out = Vec::new();
    for (i, t) in data.tallies.iter().enumerate() {
        if posterior_prob_above(t.n, t.tox, phi_t) >= c_t {
            break;
        }
        if posterior_prob_below(t.n, t.eff, phi_e) < c_e {
            out.push(i + 1);
        }
    }
    out
}

pub fn boin12_decide(cfg: &Boin12Config, data: &ObservedData) -> Action {
    let Some(current) = data.current_dose() else {
        return Action::TreatNextCohortAt(1);
    };
    let admissible = cfg.admissible(data);
    if admissible.is_empty() {
        return Action::StopNoSelection(StopReason::NoAdmissibleDose);
    }
    if data.total_treated() >= cfg.max_n {
        return cfg.stop_with_selection(data, StopReason::SampleSizeReached);
    }
    let is_admissible = |d: usize| admissible.binary_search(&d).is_ok();
    let top = cfg.num_doses;

    let t = data.tally(current);
    let rate = t.tox as f64 / t.n as f64;
    let (lambda_e, lambda_d) = cfg.boundaries();
    let lower = current.saturating_sub(1).max(1);
    let upper = (current + 1).min(top);

    let next =
        if rate <= lambda_e && current < top && data.tally(upper).n == 0 && is_admissible(upper) {
            // Safe at the current dose and the next level is unexplored.
            Some(upper)
        } else {
            let window = if rate >= lambda_d {
                lower..=lower
            } else if rate > lambda_e {
                lower..=current
            } else {
                lower..=upper
            };
            argmax_lowest(
                window
                    .filter(|&d| is_admissible(d))
                    .map(|d| (d, cfg.desirability(data, d))),
            )
        };
    // Nothing eligible nearby: fall back to the closest admissible dose not
    // more than one level up.
    let next = next.or_else(|| {
        admissible
            .iter()
            .copied()
            .filter(|&d| d <= current + 1)
            .min_by_key(|&d| (d.abs_diff(current), d))
    });
    let Some(next) = next else {
        return Action::StopNoSelection(StopReason::NoAdmissibleDose);
    };
    if data.tally(next).n >= cfg.stop_at_n_on_dose {
        return cfg.stop_with_selection(data, StopReason::DoseCapReached);
    }
    Action::TreatNextCohortAt(next)
}
