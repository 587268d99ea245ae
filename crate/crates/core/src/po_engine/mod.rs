//! Latent uniforms and potential-outcome matrices.
//!
//! A patient's outcome at dose `d` is 1 exactly when the true probability
//! `pi(d)` is at least the patient's latent uniform. With a non-decreasing
//! curve that makes each patient's toxicity row non-decreasing in dose, and
//! each column's mean is an unbiased estimate of `pi(d)`.

mod format;
mod stream;

use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::stats::std_normal_cdf;

pub use format::{deserialize_dataset, serialize_dataset, FORMAT_VERSION};
pub use stream::{derive_patient_stream, open_unit, Endpoint, TrialStream};

#[derive(Debug, Error, PartialEq)]
pub enum PoError {
    #[error("dose curve is empty")]
    EmptyCurve,
    #[error("probability {value} at dose {dose} is outside [0, 1]")]
    ProbabilityOutOfRange { dose: usize, value: f64 },
    #[error("monotone curve decreases between dose {dose} and dose {}", dose + 1)]
    NotMonotone { dose: usize },
    #[error("toxicity outcomes require a curve tagged monotone")]
    CurveNotTaggedMonotone,
    #[error("latent uniform {0} is outside (0, 1)")]
    LatentOutOfRange(f64),
    #[error("correlation {0} is outside [-1, 1]")]
    CorrelationOutOfRange(f64),
    #[error("efficacy curve has {eff} doses but toxicity curve has {tox}")]
    CurveLengthMismatch { tox: usize, eff: usize },
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error("malformed dataset: {0}")]
    Malformed(String),
    #[error("dataset fingerprint mismatch: header says {expected}, content hashes to {actual}")]
    FingerprintMismatch { expected: String, actual: String },
    #[error("dataset belongs to scenario {found}, expected {expected}")]
    ScenarioMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveShape {
    /// Non-decreasing in dose; required for toxicity.
    Monotone,
    /// Any shape, e.g. an umbrella efficacy curve.
    General,
}

/// True per-dose event probabilities, dose 1 first.
#[derive(Debug, Clone, PartialEq)]
pub struct DoseCurve {
    probs: Vec<f64>,
    shape: CurveShape,
}

impl DoseCurve {
    pub fn monotone(probs: Vec<f64>) -> Result<Self, PoError> {
        Self::check_range(&probs)?;
        if let Some(d) = probs.windows(2).position(|w| w[0] > w[1]) {
            return Err(PoError::NotMonotone { dose: d + 1 });
        }
        Ok(Self {
            probs,
            shape: CurveShape::Monotone,
        })
    }

    pub fn general(probs: Vec<f64>) -> Result<Self, PoError> {
        Self::check_range(&probs)?;
        Ok(Self {
            probs,
            shape: CurveShape::General,
        })
    }

    fn check_range(probs: &[f64]) -> Result<(), PoError> {
        if probs.is_empty() {
            return Err(PoError::EmptyCurve);
        }
        for (i, &p) in probs.iter().enumerate() {
            if !(0.0..=1.0).contains(&p) {
                return Err(PoError::ProbabilityOutOfRange {
                    dose: i + 1,
                    value: p,
                });
            }
        }
        Ok(())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn shape(&self) -> CurveShape {
        self.shape
    }

    pub fn num_doses(&self) -> usize {
        self.probs.len()
    }
}

/// Latent draws of one notional patient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentPatient {
    pub u_tox: f64,
    pub u_eff: Option<f64>,
    pub theta_tox: Option<f64>,
    pub theta_eff: Option<f64>,
}

/// Row-major binary matrix, one row per patient and one column per dose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PoMatrix {
    doses: usize,
    cells: Vec<u8>,
}

impl PoMatrix {
    pub fn from_rows(doses: usize, rows: &[Vec<u8>]) -> Result<Self, PoError> {
        let mut cells = Vec::with_capacity(rows.len() * doses);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != doses {
                return Err(PoError::Malformed(format!(
                    "row {} has {} cells, expected {doses}",
                    i + 1,
                    row.len()
                )));
            }
            if row.iter().any(|&c| c > 1) {
                return Err(PoError::Malformed(format!("row {} is not binary", i + 1)));
            }
            cells.extend_from_slice(row);
        }
        Ok(Self { doses, cells })
    }

    pub fn num_patients(&self) -> usize {
        self.cells.len().checked_div(self.doses).unwrap_or(0)
    }

    pub fn num_doses(&self) -> usize {
        self.doses
    }

    /// Row of patient `i` (0-based).
    pub fn row(&self, i: usize) -> &[u8] {
        &self.cells[i * self.doses..(i + 1) * self.doses]
    }

    /// Outcome of patient `i` (0-based) at dose `dose` (1-based).
    pub fn get(&self, i: usize, dose: usize) -> u8 {
        self.cells[i * self.doses + dose - 1]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[u8]> {
        self.cells.chunks(self.doses.max(1))
    }

    /// Per-dose column means.
    pub fn column_means(&self) -> Vec<f64> {
        let n = self.num_patients();
        let mut sums = vec![0u64; self.doses];
        for row in self.rows() {
            for (s, &c) in sums.iter_mut().zip(row) {
                *s += c as u64;
            }
        }
        sums.into_iter().map(|s| s as f64 / n as f64).collect()
    }
}

/// Data-generating scenario for a set of simulated trials.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub tox_curve: DoseCurve,
    pub eff_curve: Option<DoseCurve>,
    pub rho: f64,
    pub max_n: usize,
    pub cohort_size: usize,
    pub n_trials: usize,
    pub master_seed: u64,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), PoError> {
        if self.tox_curve.shape() != CurveShape::Monotone {
            return Err(PoError::CurveNotTaggedMonotone);
        }
        if let Some(eff) = &self.eff_curve {
            if eff.num_doses() != self.tox_curve.num_doses() {
                return Err(PoError::CurveLengthMismatch {
                    tox: self.tox_curve.num_doses(),
                    eff: eff.num_doses(),
                });
            }
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(PoError::CorrelationOutOfRange(self.rho));
        }
        if self.max_n == 0 {
            return Err(PoError::InvalidScenario("max_n must be at least 1".into()));
        }
        if self.cohort_size == 0 {
            return Err(PoError::InvalidScenario(
                "cohort_size must be at least 1".into(),
            ));
        }
        if self.n_trials == 0 {
            return Err(PoError::InvalidScenario(
                "n_trials must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn num_doses(&self) -> usize {
        self.tox_curve.num_doses()
    }

    /// Same scenario under a different master seed.
    pub fn with_seed(&self, master_seed: u64) -> Self {
        Self {
            master_seed,
            ..self.clone()
        }
    }

    /// Hex SHA-256 over everything that determines the generated datasets.
    /// Cohort size and trial count do not change any single dataset and are
    /// left out.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"dosesim/scenario/v1\n");
        h.update(format!("master_seed {}\n", self.master_seed));
        h.update(format!("patients {}\n", self.max_n));
        h.update(format!("rho {:?}\n", self.rho));
        h.update(format!(
            "tox_curve {}\n",
            format::join_floats(self.tox_curve.probs())
        ));
        match &self.eff_curve {
            Some(c) => h.update(format!("eff_curve {}\n", format::join_floats(c.probs()))),
            None => h.update(b"eff_curve -\n"),
        }
        hex::encode(h.finalize())
    }

    fn uses_gaussian_latents(&self) -> bool {
        self.rho != 0.0 || self.eff_curve.is_some()
    }
}

/// One pre-simulated trial: every patient's latents and potential outcomes.
#[derive(Debug, Clone, PartialEq)]
pub struct PoDataset {
    pub trial_index: u64,
    pub master_seed: u64,
    pub tox_curve: DoseCurve,
    pub eff_curve: Option<DoseCurve>,
    pub rho: f64,
    pub patients: Vec<LatentPatient>,
    pub tox_po: PoMatrix,
    pub eff_po: Option<PoMatrix>,
    pub scenario_fingerprint: String,
}

impl PoDataset {
    /// Builds a dataset from explicit latents by applying the threshold rule
    /// to every patient.
    pub fn from_latents(
        scenario: &Scenario,
        trial_index: u64,
        patients: Vec<LatentPatient>,
    ) -> Result<Self, PoError> {
        scenario.validate()?;
        let d = scenario.num_doses();
        let mut tox_rows = Vec::with_capacity(patients.len());
        let mut eff_rows = Vec::with_capacity(patients.len());
        for p in &patients {
            tox_rows.push(generate_tox_po(p.u_tox, &scenario.tox_curve)?);
            if let Some(curve) = &scenario.eff_curve {
                let u = p.u_eff.ok_or_else(|| {
                    PoError::Malformed("efficacy curve present but patient lacks u_eff".into())
                })?;
                eff_rows.push(generate_eff_po(u, curve)?);
            }
        }
        let eff_po = match scenario.eff_curve {
            Some(_) => Some(PoMatrix::from_rows(d, &eff_rows)?),
            None => None,
        };
        Ok(Self {
            trial_index,
            master_seed: scenario.master_seed,
            tox_curve: scenario.tox_curve.clone(),
            eff_curve: scenario.eff_curve.clone(),
            rho: scenario.rho,
            patients,
            tox_po: PoMatrix::from_rows(d, &tox_rows)?,
            eff_po,
            scenario_fingerprint: scenario.fingerprint(),
        })
    }

    pub fn num_patients(&self) -> usize {
        self.patients.len()
    }

    pub fn num_doses(&self) -> usize {
        self.tox_curve.num_doses()
    }

    /// The scenario this dataset claims to come from, minus the fields that
    /// do not affect a single dataset.
    pub fn check_scenario(&self, scenario: &Scenario) -> Result<(), PoError> {
        let expected = scenario.fingerprint();
        if self.scenario_fingerprint != expected {
            return Err(PoError::ScenarioMismatch {
                expected,
                found: self.scenario_fingerprint.clone(),
            });
        }
        Ok(())
    }
}

/// Latent draws for every notional patient of one trial.
///
/// With `rho == 0` and no efficacy endpoint the toxicity uniforms are drawn
/// directly. Otherwise each patient gets a standard bivariate normal pair
/// with correlation `rho`, mapped to uniforms through the normal CDF.
pub fn generate_latents(
    scenario: &Scenario,
    trial_index: u64,
) -> Result<Vec<LatentPatient>, PoError> {
    let rho = scenario.rho;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(PoError::CorrelationOutOfRange(rho));
    }
    let stream = derive_patient_stream(scenario.master_seed, trial_index);
    let gaussian = scenario.uses_gaussian_latents();
    let resid = (1.0 - rho * rho).max(0.0).sqrt();
    let patients = (0..scenario.max_n)
        .map(|i| {
            if !gaussian {
                return LatentPatient {
                    u_tox: stream.uniform(i, Endpoint::Toxicity),
                    u_eff: None,
                    theta_tox: None,
                    theta_eff: None,
                };
            }
            let z_tox: f64 = StandardNormal.sample(&mut stream.rng(i, Endpoint::Toxicity));
            let z_eff: f64 = StandardNormal.sample(&mut stream.rng(i, Endpoint::Efficacy));
            let theta_tox = z_tox;
            let theta_eff = rho * z_tox + resid * z_eff;
            LatentPatient {
                u_tox: latent_to_uniform(theta_tox),
                u_eff: Some(latent_to_uniform(theta_eff)),
                theta_tox: Some(theta_tox),
                theta_eff: Some(theta_eff),
            }
        })
        .collect();
    Ok(patients)
}

/// `Phi(theta)` kept strictly inside (0, 1).
fn latent_to_uniform(theta: f64) -> f64 {
    const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;
    std_normal_cdf(theta).clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

fn check_unit(u: f64) -> Result<(), PoError> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(PoError::LatentOutOfRange(u))
    }
}

fn threshold_row(u: f64, curve: &DoseCurve) -> Vec<u8> {
    curve.probs().iter().map(|&p| u8::from(p >= u)).collect()
}

/// Toxicity outcomes of a patient with latent `u` at every dose.
pub fn generate_tox_po(u: f64, curve: &DoseCurve) -> Result<Vec<u8>, PoError> {
    check_unit(u)?;
    if curve.shape() != CurveShape::Monotone {
        return Err(PoError::CurveNotTaggedMonotone);
    }
    Ok(threshold_row(u, curve))
}

/// Efficacy outcomes of a patient with latent `u` (their propensity for
/// non-response) at every dose. No ordering is imposed on the curve.
pub fn generate_eff_po(u: f64, curve: &DoseCurve) -> Result<Vec<u8>, PoError> {
    check_unit(u)?;
    Ok(threshold_row(u, curve))
}

/// Dataset for trial `trial_index`; a pure function of the scenario and index.
pub fn generate_dataset(scenario: &Scenario, trial_index: u64) -> Result<PoDataset, PoError> {
    scenario.validate()?;
    let patients = generate_latents(scenario, trial_index)?;
    PoDataset::from_latents(scenario, trial_index, patients)
}
