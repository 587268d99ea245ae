//! Modified toxicity probability interval design (mTPI-2).
//!
//! The unit interval is cut into pieces of width `eps1 + eps2` anchored on
//! the equivalence interval `(target - eps1, target + eps2)`. The piece with
//! the largest posterior mass per unit length decides whether to escalate,
//! stay or de-escalate.

use serde::{Deserialize, Serialize};

use super::{check_unit_open, Action, DesignError, ObservedData, StopReason};
use crate::stats::{beta_cdf, isotonic_fit, posterior_prob_above};

/// Pieces narrower than this at either end of (0, 1) are rounding residue.
const SLIVER: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mtpi2Decision {
    Escalate,
    Stay,
    Deescalate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Region {
    Below,
    Equivalence,
    Above,
}

impl Region {
    fn decision(self) -> Mtpi2Decision {
        match self {
            Region::Below => Mtpi2Decision::Escalate,
            Region::Equivalence => Mtpi2Decision::Stay,
            Region::Above => Mtpi2Decision::Deescalate,
        }
    }

    /// Larger is more conservative; wins ties.
    fn caution(self) -> u8 {
        match self {
            Region::Below => 0,
            Region::Equivalence => 1,
            Region::Above => 2,
        }
    }
}

fn partition(target: f64, eps1: f64, eps2: f64) -> Vec<(f64, f64, Region)> {
    let width = eps1 + eps2;
    let (ei_lo, ei_hi) = (target - eps1, target + eps2);
    let mut pieces = vec![(ei_lo, ei_hi, Region::Equivalence)];
    let mut hi = ei_lo;
    while hi > SLIVER {
        let lo = if hi - width < SLIVER { 0.0 } else { hi - width };
        pieces.push((lo, hi, Region::Below));
        hi = lo;
    }
    let mut lo = ei_hi;
    while lo < 1.0 - SLIVER {
        let hi = if lo + width > 1.0 - SLIVER {
            1.0
        } else {
            lo + width
        };
        pieces.push((lo, hi, Region::Above));
        lo = hi;
    }
    pieces
}

/// Dose-level decision from `y_d` toxicities among `n_d` patients under a
/// Beta(1, 1) prior. Ties go to the more cautious decision.
pub fn mtpi2_decision(target: f64, eps1: f64, eps2: f64, n_d: u32, y_d: u32) -> Mtpi2Decision {
    assert!(y_d <= n_d, "y_d must not exceed n_d");
    let (a, b) = (1.0 + y_d as f64, 1.0 + (n_d - y_d) as f64);
    let mut best: Option<(f64, Region)> = None;
    for (lo, hi, region) in partition(target, eps1, eps2) {
        let upm = (beta_cdf(a, b, hi) - beta_cdf(a, b, lo)) / (hi - lo);
        let better = match best {
            None => true,
            Some((m, r)) => upm > m || (upm == m && region.caution() > r.caution()),
        };
        if better {
            best = Some((upm, region));
        }
    }
    best.expect("partition is never empty").1.decision()
}

/// True when the posterior probability that the toxicity rate exceeds `phi`
/// reaches `threshold`; the dose and every higher dose are then closed.
pub fn dose_exclusion(n_d: u32, y_d: u32, phi: f64, threshold: f64) -> bool {
    n_d > 0 && posterior_prob_above(n_d, y_d, phi) >= threshold
}

/// Decisions for every `(n, y)` with `1 <= n <= max_n`.
#[derive(Debug, Clone)]
pub struct Mtpi2Table {
    rows: Vec<Vec<(Mtpi2Decision, bool)>>,
}

impl Mtpi2Table {
    pub fn build(cfg: &Mtpi2Config) -> Self {
        let rows = (1..=cfg.max_n as u32)
            .map(|n| {
                (0..=n)
                    .map(|y| {
                        (
                            mtpi2_decision(cfg.target, cfg.eps1, cfg.eps2, n, y),
                            dose_exclusion(n, y, cfg.target, cfg.exclusion_threshold),
                        )
                    })
                    .collect()
            })
            .collect();
        Self { rows }
    }

    pub fn decision(&self, n: u32, y: u32) -> Mtpi2Decision {
        self.rows[n as usize - 1][y as usize].0
    }

    pub fn excluded(&self, n: u32, y: u32) -> bool {
        n > 0 && self.rows[n as usize - 1][y as usize].1
    }

    /// Compact text rendering: one line per `n`, letters E/S/D (X when excluded).
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&format!("{:>3} ", i + 1));
            for &(d, ex) in row {
                out.push(match (d, ex) {
                    (_, true) => 'X',
                    (Mtpi2Decision::Escalate, _) => 'E',
                    (Mtpi2Decision::Stay, _) => 'S',
                    (Mtpi2Decision::Deescalate, _) => 'D',
                });
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mtpi2Config {
    pub num_doses: usize,
    #[serde(default = "defaults::target")]
    pub target: f64,
    #[serde(default = "defaults::eps")]
    pub eps1: f64,
    #[serde(default = "defaults::eps")]
    pub eps2: f64,
    #[serde(default = "defaults::exclusion_threshold")]
    pub exclusion_threshold: f64,
    pub max_n: usize,
    pub cohort_size: usize,
}

mod defaults {
    pub fn target() -> f64 {
        0.30
    }
    pub fn eps() -> f64 {
        0.05
    }
    pub fn exclusion_threshold() -> f64 {
        0.95
    }
}

impl Mtpi2Config {
    pub fn new(num_doses: usize, max_n: usize, cohort_size: usize) -> Self {
        Self {
            num_doses,
            target: defaults::target(),
            eps1: defaults::eps(),
            eps2: defaults::eps(),
            exclusion_threshold: defaults::exclusion_threshold(),
            max_n,
            cohort_size,
        }
    }

    pub(crate) fn validate(&self) -> Result<(), DesignError> {
        check_unit_open("target", self.target)?;
        check_unit_open("exclusion_threshold", self.exclusion_threshold)?;
        if !(self.eps1 > 0.0 && self.eps2 > 0.0) {
            return Err(DesignError::InvalidConfig(
                "eps1 and eps2 must be positive".into(),
            ));
        }
        if self.target - self.eps1 <= 0.0 || self.target + self.eps2 >= 1.0 {
            return Err(DesignError::InvalidConfig(
                "equivalence interval must lie inside (0, 1)".into(),
            ));
        }
        Ok(())
    }

    /// Lowest dose closed for toxicity, if any.
    fn lowest_excluded(&self, data: &ObservedData) -> Option<usize> {
        data.tallies
            .iter()
            .position(|t| dose_exclusion(t.n, t.tox, self.target, self.exclusion_threshold))
            .map(|i| i + 1)
    }

    pub(crate) fn decide(&self, data: &ObservedData, at_cap: bool) -> Action {
        let Some(current) = data.current_dose() else {
            return Action::TreatNextCohortAt(1);
        };
        let ceiling = match self.lowest_excluded(data) {
            Some(1) => return Action::StopNoSelection(StopReason::LowestDoseTooToxic),
            Some(e) => e - 1,
            None => self.num_doses,
        };
        if at_cap {
            return match self.select(data, ceiling) {
                Some(dose) => Action::StopAndSelect {
                    dose,
                    reason: StopReason::SampleSizeReached,
                },
                None => Action::StopNoSelection(StopReason::NoAdmissibleDose),
            };
        }
        let t = data.tally(current);
        let next = match mtpi2_decision(self.target, self.eps1, self.eps2, t.n, t.tox) {
            Mtpi2Decision::Escalate => (current + 1).min(ceiling),
            Mtpi2Decision::Stay => current.min(ceiling),
            Mtpi2Decision::Deescalate => current.saturating_sub(1).max(1),
        };
        Action::TreatNextCohortAt(next)
    }

    /// Tried dose at or below `ceiling` whose isotonic toxicity estimate is
    /// closest to target; ties go to the lower dose.
    fn select(&self, data: &ObservedData, ceiling: usize) -> Option<usize> {
        let tried: Vec<usize> = (1..=ceiling).filter(|&d| data.tally(d).n > 0).collect();
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
            let gap = (p - self.target).abs();
            if gap < best.1 {
                best = (d, gap);
            }
        }
        Some(best.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::function::gamma::ln_gamma;

    /// Independent oracle: subintervals built from integer multiples of the
    /// width and masses from Simpson integration of the Beta density.
    fn oracle(target: f64, eps1: f64, eps2: f64, n: u32, y: u32) -> Mtpi2Decision {
        let (a, b) = (1.0 + y as f64, 1.0 + (n - y) as f64);
        let ln_norm = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b);
        let pdf = |x: f64| {
            if x <= 0.0 || x >= 1.0 {
                // Beta(1+y, 1+n-y) density is finite at the ends.
                let xe = x.clamp(0.0, 1.0);
                return if (xe == 0.0 && a == 1.0) || (xe == 1.0 && b == 1.0) {
                    ln_norm.exp()
                } else {
                    0.0
                };
            }
            (ln_norm + (a - 1.0) * x.ln() + (b - 1.0) * (1.0 - x).ln()).exp()
        };
        let mass = |lo: f64, hi: f64| {
            let m = 2000;
            let h = (hi - lo) / m as f64;
            let mut acc = pdf(lo) + pdf(hi);
            for j in 1..m {
                acc += if j % 2 == 1 { 4.0 } else { 2.0 } * pdf(lo + j as f64 * h);
            }
            acc * h / 3.0
        };
        let w = eps1 + eps2;
        let mut cands: Vec<(f64, u8)> = vec![(mass(target - eps1, target + eps2) / w, 1)];
        for k in 1.. {
            let hi = target - eps1 - (k - 1) as f64 * w;
            if hi <= 1e-9 {
                break;
            }
            let lo = (target - eps1 - k as f64 * w).max(0.0);
            let lo = if lo < 1e-9 { 0.0 } else { lo };
            cands.push((mass(lo, hi) / (hi - lo), 0));
        }
        for k in 1.. {
            let lo = target + eps2 + (k - 1) as f64 * w;
            if lo >= 1.0 - 1e-9 {
                break;
            }
            let hi = (target + eps2 + k as f64 * w).min(1.0);
            let hi = if hi > 1.0 - 1e-9 { 1.0 } else { hi };
            cands.push((mass(lo, hi) / (hi - lo), 2));
        }
        let best = cands.iter().fold((f64::NEG_INFINITY, 0u8), |acc, &(m, r)| {
            if m > acc.0 + 1e-12 || ((m - acc.0).abs() <= 1e-12 && r > acc.1) {
                (m, r)
            } else {
                acc
            }
        });
        match best.1 {
            0 => Mtpi2Decision::Escalate,
            1 => Mtpi2Decision::Stay,
            _ => Mtpi2Decision::Deescalate,
        }
    }

    #[test]
    fn reference_decisions() {
        assert_eq!(
            mtpi2_decision(0.3, 0.05, 0.05, 3, 0),
            Mtpi2Decision::Escalate
        );
        assert_eq!(
            mtpi2_decision(0.3, 0.05, 0.05, 3, 3),
            Mtpi2Decision::Deescalate
        );
        assert_eq!(oracle(0.3, 0.05, 0.05, 3, 0), Mtpi2Decision::Escalate);
        assert_eq!(oracle(0.3, 0.05, 0.05, 3, 3), Mtpi2Decision::Deescalate);
    }

    #[test]
    fn matches_brute_force_oracle_up_to_thirty() {
        for n in 1..=30 {
            for y in 0..=n {
                assert_eq!(
                    mtpi2_decision(0.3, 0.05, 0.05, n, y),
                    oracle(0.3, 0.05, 0.05, n, y),
                    "n={n} y={y}"
                );
            }
        }
    }

    #[test]
    fn mirror_symmetry_at_one_half() {
        let mirror = |d| match d {
            Mtpi2Decision::Escalate => Mtpi2Decision::Deescalate,
            Mtpi2Decision::Deescalate => Mtpi2Decision::Escalate,
            Mtpi2Decision::Stay => Mtpi2Decision::Stay,
        };
        for n in 1..=30 {
            for y in 0..=n {
                assert_eq!(
                    mtpi2_decision(0.5, 0.05, 0.05, n, y),
                    mirror(mtpi2_decision(0.5, 0.05, 0.05, n, n - y)),
                    "n={n} y={y}"
                );
            }
        }
    }

    #[test]
    fn exclusion_examples() {
        assert!(dose_exclusion(3, 3, 0.3, 0.95));
        assert!(!dose_exclusion(6, 0, 0.3, 0.95));
        assert!(!dose_exclusion(0, 0, 0.3, 0.95));
        // Closed form Beta(4,1) tail: 1 - 0.3^4 = 0.9919.
        assert!(posterior_prob_above(3, 3, 0.3) > 0.99);
    }

    #[test]
    fn table_agrees_with_direct_calls() {
        let cfg = Mtpi2Config::new(4, 12, 3);
        let table = Mtpi2Table::build(&cfg);
        for n in 1..=12 {
            for y in 0..=n {
                assert_eq!(table.decision(n, y), mtpi2_decision(0.3, 0.05, 0.05, n, y));
                assert_eq!(table.excluded(n, y), dose_exclusion(n, y, 0.3, 0.95));
            }
        }
        assert_eq!(table.render().lines().count(), 12);
    }

    fn data(entries: &[(usize, u32, u32)]) -> ObservedData {
        let mut d = ObservedData::new(4, false);
        for &(dose, n, y) in entries {
            for i in 0..n {
                d.record(dose, i < y, None).unwrap();
            }
        }
        d
    }

    #[test]
    fn design_moves() {
        let cfg = Mtpi2Config::new(4, 30, 3);
        assert_eq!(
            cfg.decide(&data(&[(1, 3, 0)]), false),
            Action::TreatNextCohortAt(2)
        );
        assert_eq!(
            cfg.decide(&data(&[(1, 3, 0), (2, 3, 3)]), false),
            Action::TreatNextCohortAt(1)
        );
        assert_eq!(
            cfg.decide(&data(&[(1, 3, 3)]), false),
            Action::StopNoSelection(StopReason::LowestDoseTooToxic)
        );
        // Dose 3 is closed, so dose 2 cannot escalate into it.
        let d = data(&[(1, 3, 0), (2, 3, 0), (3, 3, 3), (2, 3, 0)]);
        assert_eq!(cfg.decide(&d, false), Action::TreatNextCohortAt(2));
    }

    #[test]
    fn selection_uses_isotonic_estimates() {
        let cfg = Mtpi2Config::new(4, 12, 3);
        let d = data(&[(1, 3, 0), (2, 3, 0), (3, 3, 1), (4, 3, 1)]);
        // Estimates 0.016, 0.016, 0.339, 0.339 -> dose 3 and 4 tie, lower wins.
        assert_eq!(
            cfg.decide(&d, true),
            Action::StopAndSelect {
                dose: 3,
                reason: StopReason::SampleSizeReached
            }
        );
    }
}
