//! Replays a design over a pre-simulated dataset.
//!
//! Patients are consumed strictly in index order, and each one reveals only
//! the outcome stored for the dose they were given. Two designs replayed on
//! the same dataset therefore treat the same notional patients, whatever
//! doses they choose.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::designs::{Action, DesignConfig, DesignError, DoseTally, ObservedData, StopReason};
use crate::po_engine::{deserialize_dataset, generate_dataset, PoDataset, PoError, Scenario};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Design(#[from] DesignError),
    #[error(transparent)]
    Dataset(#[from] PoError),
    #[error("design has {design} doses but the dataset has {dataset}")]
    DoseCountMismatch { design: usize, dataset: usize },
    #[error("design needs efficacy outcomes but trial {0} has none")]
    MissingEfficacy(u64),
    #[error("design asked for dose {0}, outside the dataset")]
    DoseOutOfRange(usize),
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("malformed result file: {0}")]
    MalformedResults(String),
}

/// Everything a single replay produced.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialResult {
    pub design_id: String,
    pub trial_index: u64,
    /// `(patient index (0-based), dose)` in treatment order.
    pub assignments: Vec<(usize, usize)>,
    /// Revealed `(toxicity, efficacy)` per treated patient, aligned with
    /// `assignments`.
    pub observed: Vec<(u8, Option<u8>)>,
    pub final_action: Action,
    pub n_treated: usize,
    pub tallies: Vec<DoseTally>,
}

impl TrialResult {
    pub fn selected_dose(&self) -> Option<usize> {
        self.final_action.selected_dose()
    }

    pub fn stop_reason(&self) -> StopReason {
        match self.final_action {
            Action::StopAndSelect { reason, .. } | Action::StopNoSelection(reason) => reason,
            Action::TreatNextCohortAt(_) => unreachable!("results always end in a stop"),
        }
    }
}

/// Replays `config` over `dataset` until the design stops or patients run out.
pub fn run_trial(
    design_id: &str,
    config: &DesignConfig,
    dataset: &PoDataset,
) -> Result<TrialResult, RunError> {
    config.validate()?;
    if config.num_doses() != dataset.num_doses() {
        return Err(RunError::DoseCountMismatch {
            design: config.num_doses(),
            dataset: dataset.num_doses(),
        });
    }
    let eff_po = dataset.eff_po.as_ref();
    if config.requires_efficacy() && eff_po.is_none() {
        return Err(RunError::MissingEfficacy(dataset.trial_index));
    }
    let has_eff = eff_po.is_some() && config.requires_efficacy();
    let cap = config.max_n().min(dataset.num_patients());
    let cohort = config.cohort_size();

    let mut data = ObservedData::new(dataset.num_doses(), has_eff);
    let mut assignments = Vec::new();
    let mut observed = Vec::new();
    let mut next_patient = 0usize;

    let final_action = loop {
        let action = config.decide(&data)?;
        let Action::TreatNextCohortAt(dose) = action else {
            break action;
        };
        if dose == 0 || dose > dataset.num_doses() {
            return Err(RunError::DoseOutOfRange(dose));
        }
        if next_patient >= cap {
            // The dataset is smaller than the design's own cap.
            break Action::StopAndSelect {
                dose,
                reason: StopReason::PatientsExhausted,
            };
        }
        let end = (next_patient + cohort).min(cap);
        for i in next_patient..end {
            let tox = dataset.tox_po.get(i, dose);
            let eff = if has_eff {
                eff_po.map(|m| m.get(i, dose))
            } else {
                None
            };
            data.record(dose, tox == 1, eff.map(|e| e == 1))?;
            assignments.push((i, dose));
            observed.push((tox, eff));
        }
        next_patient = end;
    };

    Ok(TrialResult {
        design_id: design_id.to_string(),
        trial_index: dataset.trial_index,
        n_treated: assignments.len(),
        assignments,
        observed,
        final_action,
        tallies: data.tallies,
    })
}

/// 1 when the design selected `true_target_dose`, else 0 (including no selection).
pub fn score_selection(result: &TrialResult, true_target_dose: usize) -> u8 {
    u8::from(result.selected_dose() == Some(true_target_dose))
}

/// Where a batch gets its datasets from.
#[derive(Debug, Clone)]
pub enum DatasetSource {
    Generate,
    /// Directory holding one file per trial, named by [`dataset_file_name`].
    Load(PathBuf),
}

pub fn dataset_file_name(trial_index: u64) -> String {
    format!("trial_{trial_index:06}.po")
}

pub fn load_dataset(
    dir: &Path,
    trial_index: u64,
    scenario: &Scenario,
) -> Result<PoDataset, RunError> {
    let path = dir.join(dataset_file_name(trial_index));
    let text = std::fs::read_to_string(&path).map_err(|source| RunError::Io {
        path: path.clone(),
        source,
    })?;
    let ds = deserialize_dataset(&text)?;
    ds.check_scenario(scenario)?;
    if ds.trial_index != trial_index {
        return Err(RunError::Dataset(PoError::Malformed(format!(
            "{} holds trial {}",
            path.display(),
            ds.trial_index
        ))));
    }
    Ok(ds)
}

pub fn obtain_dataset(
    scenario: &Scenario,
    trial_index: u64,
    source: &DatasetSource,
) -> Result<PoDataset, RunError> {
    match source {
        DatasetSource::Generate => Ok(generate_dataset(scenario, trial_index)?),
        DatasetSource::Load(dir) => load_dataset(dir, trial_index, scenario),
    }
}

/// Replays one design over many trials. Output order follows
/// `trial_indices`, independent of how the work is scheduled.
pub fn run_batch(
    design_id: &str,
    config: &DesignConfig,
    scenario: &Scenario,
    trial_indices: &[u64],
    source: &DatasetSource,
) -> Result<Vec<TrialResult>, RunError> {
    trial_indices
        .par_iter()
        .map(|&k| run_trial(design_id, config, &obtain_dataset(scenario, k, source)?))
        .collect()
}

/// Replays several designs over the same datasets, generating or loading
/// each dataset once. Returns one result list per design.
pub fn run_batch_shared(
    designs: &[(&str, &DesignConfig)],
    scenario: &Scenario,
    trial_indices: &[u64],
    source: &DatasetSource,
) -> Result<Vec<Vec<TrialResult>>, RunError> {
    let per_trial: Vec<Vec<TrialResult>> = trial_indices
        .par_iter()
        .map(|&k| {
            let ds = obtain_dataset(scenario, k, source)?;
            designs
                .iter()
                .map(|(id, cfg)| run_trial(id, cfg, &ds))
                .collect()
        })
        .collect::<Result<_, RunError>>()?;
    let mut out: Vec<Vec<TrialResult>> = designs
        .iter()
        .map(|_| Vec::with_capacity(per_trial.len()))
        .collect();
    for row in per_trial {
        for (slot, r) in out.iter_mut().zip(row) {
            slot.push(r);
        }
    }
    Ok(out)
}

/// Summary row of a trial as stored in a results file.
#[derive(Debug, Clone, PartialEq)]
pub struct ResultRecord {
    pub trial_index: u64,
    pub design_id: String,
    pub selected: Option<usize>,
    pub n_treated: usize,
    pub n: Vec<u32>,
    pub tox: Vec<u32>,
    pub eff: Vec<u32>,
    pub stop_reason: String,
}

impl From<&TrialResult> for ResultRecord {
    fn from(r: &TrialResult) -> Self {
        Self {
            trial_index: r.trial_index,
            design_id: r.design_id.clone(),
            selected: r.selected_dose(),
            n_treated: r.n_treated,
            n: r.tallies.iter().map(|t| t.n).collect(),
            tox: r.tallies.iter().map(|t| t.tox).collect(),
            eff: r.tallies.iter().map(|t| t.eff).collect(),
            stop_reason: r.stop_reason().to_string(),
        }
    }
}

/// Tab-separated results table, one row per trial, sorted by trial index.
pub fn write_results(results: &[TrialResult]) -> String {
    let doses = results.first().map_or(0, |r| r.tallies.len());
    let mut out = String::from("trial_index\tdesign_id\tselected\tn_treated");
    for prefix in ["n", "tox", "eff"] {
        for d in 1..=doses {
            write!(out, "\t{prefix}_{d}").unwrap();
        }
    }
    out.push_str("\tstop_reason\n");
    let mut sorted: Vec<&TrialResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.trial_index);
    for r in sorted {
        let rec = ResultRecord::from(r);
        write!(
            out,
            "{}\t{}\t{}\t{}",
            rec.trial_index,
            rec.design_id,
            rec.selected
                .map_or_else(|| "NONE".to_string(), |d| d.to_string()),
            rec.n_treated
        )
        .unwrap();
        for v in rec.n.iter().chain(&rec.tox).chain(&rec.eff) {
            write!(out, "\t{v}").unwrap();
        }
        writeln!(out, "\t{}", rec.stop_reason).unwrap();
    }
    out
}

pub fn read_results(text: &str) -> Result<Vec<ResultRecord>, RunError> {
    let bad = |m: String| RunError::MalformedResults(m);
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or_else(|| bad("empty file".into()))?
        .split('\t')
        .collect();
    if header.len() < 5 || !(header.len() - 5).is_multiple_of(3) || header[0] != "trial_index" {
        return Err(bad("unexpected header".into()));
    }
    let doses = (header.len() - 5) / 3;
    lines
        .enumerate()
        .map(|(i, line)| {
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != header.len() {
                return Err(bad(format!("row {} has {} columns", i + 1, f.len())));
            }
            let num = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| bad(format!("row {}: bad number `{s}`", i + 1)))
            };
            let counts = |from: usize| -> Result<Vec<u32>, RunError> {
                f[from..from + doses]
                    .iter()
                    .map(|s| num(s).map(|v| v as u32))
                    .collect()
            };
            Ok(ResultRecord {
                trial_index: num(f[0])?,
                design_id: f[1].to_string(),
                selected: if f[2] == "NONE" {
                    None
                } else {
                    Some(num(f[2])? as usize)
                },
                n_treated: num(f[3])? as usize,
                n: counts(4)?,
                tox: counts(4 + doses)?,
                eff: counts(4 + 2 * doses)?,
                stop_reason: f[f.len() - 1].to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::designs::{Mtpi2Config, ScriptedConfig};
    use crate::po_engine::{DoseCurve, LatentPatient};

    fn scenario() -> Scenario {
        Scenario {
            tox_curve: DoseCurve::monotone(vec![0.05, 0.15, 0.3, 0.45]).unwrap(),
            eff_curve: None,
            rho: 0.0,
            max_n: 12,
            cohort_size: 3,
            n_trials: 4,
            master_seed: 5,
        }
    }

    #[test]
    fn immediate_stop_treats_nobody() {
        let cfg = DesignConfig::Scripted(ScriptedConfig {
            num_doses: 4,
            max_n: 12,
            cohort_size: 3,
            path: vec![],
            select: None,
        });
        let ds = generate_dataset(&scenario(), 0).unwrap();
        let r = run_trial("noop", &cfg, &ds).unwrap();
        assert_eq!(r.n_treated, 0);
        assert_eq!(
            r.final_action,
            Action::StopNoSelection(StopReason::ScriptExhausted)
        );
    }

    #[test]
    fn truncated_final_cohort() {
        let cfg = DesignConfig::Scripted(ScriptedConfig {
            num_doses: 4,
            max_n: 10,
            cohort_size: 3,
            path: vec![1, 2, 3, 4, 4],
            select: Some(2),
        });
        let ds = generate_dataset(&scenario(), 1).unwrap();
        let r = run_trial("s", &cfg, &ds).unwrap();
        assert_eq!(r.n_treated, 10);
        assert_eq!(r.assignments.last(), Some(&(9, 4)));
        assert_eq!(r.final_action.selected_dose(), Some(2));
    }

    #[test]
    fn revealed_outcomes_match_cells() {
        let cfg = DesignConfig::Mtpi2(Mtpi2Config::new(4, 12, 3));
        for k in 0..20 {
            let ds = generate_dataset(&scenario(), k).unwrap();
            let r = run_trial("m", &cfg, &ds).unwrap();
            assert!(r.n_treated <= 12);
            for (&(i, d), &(t, e)) in r.assignments.iter().zip(&r.observed) {
                assert_eq!(t, ds.tox_po.get(i, d));
                assert_eq!(e, None);
            }
            let idx: Vec<usize> = r.assignments.iter().map(|a| a.0).collect();
            assert_eq!(idx, (0..r.n_treated).collect::<Vec<_>>());
        }
    }

    #[test]
    fn scoring() {
        let mut r = run_trial(
            "s",
            &DesignConfig::Scripted(ScriptedConfig {
                num_doses: 4,
                max_n: 12,
                cohort_size: 3,
                path: vec![1],
                select: Some(2),
            }),
            &generate_dataset(&scenario(), 0).unwrap(),
        )
        .unwrap();
        assert_eq!(score_selection(&r, 2), 1);
        r.final_action = Action::StopAndSelect {
            dose: 3,
            reason: StopReason::SampleSizeReached,
        };
        assert_eq!(score_selection(&r, 2), 0);
        r.final_action = Action::StopNoSelection(StopReason::NoAdmissibleDose);
        assert_eq!(score_selection(&r, 2), 0);
    }

    #[test]
    fn efficacy_design_on_tox_only_data_fails() {
        let cfg = DesignConfig::Boin12(crate::designs::Boin12Config::new(4, 12, 3));
        let ds = generate_dataset(&scenario(), 0).unwrap();
        assert!(matches!(
            run_trial("b", &cfg, &ds),
            Err(RunError::MissingEfficacy(0))
        ));
    }

    #[test]
    fn results_file_round_trip() {
        let cfg = DesignConfig::Mtpi2(Mtpi2Config::new(4, 12, 3));
        let idx: Vec<u64> = (0..6).collect();
        let rs = run_batch("m", &cfg, &scenario(), &idx, &DatasetSource::Generate).unwrap();
        let text = write_results(&rs);
        let back = read_results(&text).unwrap();
        let want: Vec<ResultRecord> = rs.iter().map(ResultRecord::from).collect();
        assert_eq!(back, want);
    }

    #[test]
    fn shared_batch_matches_separate_batches() {
        let a = DesignConfig::Mtpi2(Mtpi2Config::new(4, 12, 3));
        let mut b_cfg = Mtpi2Config::new(4, 12, 3);
        b_cfg.exclusion_threshold = 0.8;
        let b = DesignConfig::Mtpi2(b_cfg);
        let idx: Vec<u64> = (0..10).collect();
        let shared = run_batch_shared(
            &[("a", &a), ("b", &b)],
            &scenario(),
            &idx,
            &DatasetSource::Generate,
        )
        .unwrap();
        assert_eq!(
            shared[0],
            run_batch("a", &a, &scenario(), &idx, &DatasetSource::Generate).unwrap()
        );
        assert_eq!(
            shared[1],
            run_batch("b", &b, &scenario(), &idx, &DatasetSource::Generate).unwrap()
        );
    }

    #[test]
    fn hand_built_latents_replay() {
        let s = Scenario {
            max_n: 3,
            ..scenario()
        };
        let pts = [0.01, 0.5, 0.99]
            .iter()
            .map(|&u| LatentPatient {
                u_tox: u,
                u_eff: None,
                theta_tox: None,
                theta_eff: None,
            })
            .collect();
        let ds = PoDataset::from_latents(&s, 0, pts).unwrap();
        let cfg = DesignConfig::Scripted(ScriptedConfig {
            num_doses: 4,
            max_n: 3,
            cohort_size: 3,
            path: vec![1],
            select: None,
        });
        let r = run_trial("s", &cfg, &ds).unwrap();
        assert_eq!(r.tallies[0].n, 3);
        assert_eq!(r.tallies[0].tox, 1);
    }
}
