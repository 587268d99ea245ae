//! One-parameter empiric CRM.
//!
//! Toxicity at dose `d` is modelled as `skeleton[d]^exp(beta)` with a normal
//! prior on `beta`. Posterior quantities come from a fixed trapezoidal grid,
//! so results are exactly reproducible.

use serde::{Deserialize, Serialize};

use super::{check_unit_open, Action, DesignError, ObservedData, StopReason};

/// Weight at either end of the grid, relative to the largest weight, above
/// which the grid is considered too narrow.
const EDGE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrmConfig {
    pub skeleton: Vec<f64>,
    #[serde(default = "defaults::target")]
    pub target: f64,
    #[serde(default = "defaults::prior_sd")]
    pub prior_sd: f64,
    #[serde(default = "defaults::stop_tox_threshold")]
    pub stop_tox_threshold: f64,
    pub max_n: usize,
    pub cohort_size: usize,
    #[serde(default = "defaults::grid_points")]
    pub grid_points: usize,
    #[serde(default = "defaults::grid_bound")]
    pub grid_bound: f64,
}

mod defaults {
    pub fn target() -> f64 {
        0.30
    }
    pub fn prior_sd() -> f64 {
        1.34
    }
    pub fn stop_tox_threshold() -> f64 {
        0.90
    }
    pub fn grid_points() -> usize {
        2001
    }
    pub fn grid_bound() -> f64 {
        10.0
    }
}

impl CrmConfig {
    pub fn with_skeleton(skeleton: Vec<f64>, max_n: usize, cohort_size: usize) -> Self {
        Self {
            skeleton,
            target: defaults::target(),
            prior_sd: defaults::prior_sd(),
            stop_tox_threshold: defaults::stop_tox_threshold(),
            max_n,
            cohort_size,
            grid_points: defaults::grid_points(),
            grid_bound: defaults::grid_bound(),
        }
    }

    pub(crate) fn validate(&self) -> Result<(), DesignError> {
        for (i, &s) in self.skeleton.iter().enumerate() {
            check_unit_open(&format!("skeleton[{}]", i + 1), s)?;
        }
        if self.skeleton.windows(2).any(|w| w[0] >= w[1]) {
            return Err(DesignError::InvalidConfig(
                "skeleton must be strictly increasing".into(),
            ));
        }
        check_unit_open("target", self.target)?;
        check_unit_open("stop_tox_threshold", self.stop_tox_threshold)?;
        if !(self.prior_sd > 0.0 && self.prior_sd.is_finite()) {
            return Err(DesignError::InvalidConfig(
                "prior_sd must be positive".into(),
            ));
        }
        if self.grid_points < 3 || self.grid_bound <= 0.0 {
            return Err(DesignError::InvalidConfig(
                "quadrature grid is degenerate".into(),
            ));
        }
        Ok(())
    }

    fn posterior(&self, data: &ObservedData) -> Result<CrmPosterior, DesignError> {
        CrmPosterior::compute(
            &self.skeleton,
            self.prior_sd,
            data,
            self.grid_points,
            self.grid_bound,
        )
    }

    /// Dose whose posterior mean is closest to target, never more than one
    /// level above the current dose or above the highest tried dose + 1.
    fn recommend(&self, post: &CrmPosterior, data: &ObservedData) -> usize {
        let mut best = 1;
        let mut best_gap = f64::INFINITY;
        for (i, &p) in post.means.iter().enumerate() {
            let gap = (p - self.target).abs();
            if gap < best_gap {
                best = i + 1;
                best_gap = gap;
            }
        }
        let ceiling = data.highest_tried().unwrap_or(0) + 1;
        let step = data.current_dose().unwrap_or(0) + 1;
        best.min(ceiling).min(step)
    }

    pub(crate) fn decide(&self, data: &ObservedData, at_cap: bool) -> Result<Action, DesignError> {
        if data.is_empty() {
            return Ok(Action::TreatNextCohortAt(1));
        }
        let post = self.posterior(data)?;
        if post.prob_tox_above(1, self.target) > self.stop_tox_threshold {
            return Ok(Action::StopNoSelection(StopReason::LowestDoseTooToxic));
        }
        let dose = self.recommend(&post, data);
        Ok(if at_cap {
            Action::StopAndSelect {
                dose,
                reason: StopReason::SampleSizeReached,
            }
        } else {
            Action::TreatNextCohortAt(dose)
        })
    }
}

/// Posterior of the CRM slope parameter on a fixed grid.
#[derive(Debug, Clone)]
pub struct CrmPosterior {
    skeleton: Vec<f64>,
    grid: Vec<f64>,
    /// Normalised trapezoid weights; sum to 1.
    weights: Vec<f64>,
    /// Normalised density at each grid node (integrates to 1).
    density: Vec<f64>,
    pub means: Vec<f64>,
}

impl CrmPosterior {
    pub fn compute(
        skeleton: &[f64],
        prior_sd: f64,
        data: &ObservedData,
        points: usize,
        bound: f64,
    ) -> Result<Self, DesignError> {
        if skeleton.len() != data.num_doses() {
            return Err(DesignError::InconsistentData(
                "skeleton and data lengths differ".into(),
            ));
        }
        let h = 2.0 * bound / (points - 1) as f64;
        let grid: Vec<f64> = (0..points).map(|j| -bound + j as f64 * h).collect();
        let log_skel: Vec<f64> = skeleton.iter().map(|s| s.ln()).collect();
        let log_post: Vec<f64> = grid
            .iter()
            .map(|&b| {
                let scale = b.exp();
                let mut lp = -0.5 * (b / prior_sd).powi(2);
                for (t, &ls) in data.tallies.iter().zip(&log_skel) {
                    if t.n == 0 {
                        continue;
                    }
                    let x = scale * ls; // log pi
                    lp += t.tox as f64 * x;
                    if t.n > t.tox {
                        lp += (t.n - t.tox) as f64 * (-x.exp_m1()).ln();
                    }
                }
                lp
            })
            .collect();
        let peak = log_post.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let raw: Vec<f64> = log_post.iter().map(|&l| (l - peak).exp()).collect();
        let edge_weight = raw[0].max(raw[points - 1]);
        if edge_weight > EDGE_TOLERANCE {
            return Err(DesignError::QuadratureBounds { edge_weight });
        }
        let mut weights: Vec<f64> = raw.clone();
        weights[0] *= 0.5;
        weights[points - 1] *= 0.5;
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        let density: Vec<f64> = raw.iter().map(|r| r / (total * h)).collect();
        let means = log_skel
            .iter()
            .map(|&ls| {
                grid.iter()
                    .zip(&weights)
                    .map(|(&b, &w)| w * (b.exp() * ls).exp())
                    .sum()
            })
            .collect();
        Ok(Self {
            skeleton: skeleton.to_vec(),
            grid,
            weights,
            density,
            means,
        })
    }

    /// Posterior `P(beta < b)`, trapezoidal with linear interpolation inside
    /// the cell containing `b`.
    pub fn cdf_beta(&self, b: f64) -> f64 {
        let (lo, hi) = (self.grid[0], self.grid[self.grid.len() - 1]);
        if b <= lo {
            return 0.0;
        }
        if b >= hi {
            return 1.0;
        }
        let h = self.grid[1] - self.grid[0];
        let k = (((b - lo) / h).floor() as usize).min(self.grid.len() - 2);
        let mut acc = 0.0;
        for j in 0..k {
            acc += 0.5 * h * (self.density[j] + self.density[j + 1]);
        }
        let frac = b - self.grid[k];
        let f_b = self.density[k] + (self.density[k + 1] - self.density[k]) * frac / h;
        acc + 0.5 * frac * (self.density[k] + f_b)
    }

    /// Posterior probability that toxicity at `dose` exceeds `threshold`.
    pub fn prob_tox_above(&self, dose: usize, threshold: f64) -> f64 {
        // skeleton^exp(beta) > t  <=>  beta < ln(ln t / ln skeleton)
        let s = self.skeleton[dose - 1];
        self.cdf_beta((threshold.ln() / s.ln()).ln())
    }

    /// Grid nodes and normalised quadrature weights.
    pub fn nodes(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.grid.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Posterior mean toxicity at each dose under the default grid.
pub fn crm_posterior(
    skeleton: &[f64],
    prior_sd: f64,
    data: &ObservedData,
) -> Result<Vec<f64>, DesignError> {
    Ok(CrmPosterior::compute(
        skeleton,
        prior_sd,
        data,
        defaults::grid_points(),
        defaults::grid_bound(),
    )?
    .means)
}

/// True when the posterior probability that dose 1 is more toxic than
/// `target` exceeds `threshold`.
pub fn crm_stop_rule(
    skeleton: &[f64],
    prior_sd: f64,
    data: &ObservedData,
    target: f64,
    threshold: f64,
) -> Result<bool, DesignError> {
    let post = CrmPosterior::compute(
        skeleton,
        prior_sd,
        data,
        defaults::grid_points(),
        defaults::grid_bound(),
    )?;
    Ok(post.prob_tox_above(1, target) > threshold)
}
