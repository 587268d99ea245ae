//! The TOML run manifest.
//!
//! ```toml
//! [scenario]
//! tox_curve = [0.01, 0.05, 0.15, 0.30]
//! rho = 0.0
//! max_n = 30
//! cohort_size = 3
//! n_trials = 2000
//! seed = 7
//! target_dose = 4
//!
//! [[designs]]
//! id = "crm"
//! type = "crm"
//! skeleton = [0.05, 0.12, 0.25, 0.40]
//! ```
//!
//! Design tables may leave out `num_doses`, `max_n` and `cohort_size`; they
//! are filled in from the scenario before the design is parsed.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::CliError;
use crate::designs::DesignConfig;
use crate::po_engine::{DoseCurve, Scenario};
use crate::trial_runner::DatasetSource;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    scenario: RawScenario,
    #[serde(default)]
    designs: Vec<toml::Table>,
    #[serde(default)]
    dataset: RawDataset,
    #[serde(default)]
    output: RawOutput,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    tox_curve: Vec<f64>,
    eff_curve: Option<Vec<f64>>,
    #[serde(default)]
    rho: f64,
    max_n: usize,
    #[serde(default = "default_cohort")]
    cohort_size: usize,
    n_trials: usize,
    seed: u64,
    independent_seed: Option<u64>,
    target_dose: Option<usize>,
}

fn default_cohort() -> usize {
    3
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum SourceKind {
    #[default]
    Generate,
    Load,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDataset {
    #[serde(default)]
    source: SourceKind,
    path: Option<PathBuf>,
    independent_path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutput {
    #[serde(default = "default_out")]
    dir: PathBuf,
    #[serde(default = "default_checkpoint")]
    checkpoint: usize,
}

impl Default for RawOutput {
    fn default() -> Self {
        Self {
            dir: default_out(),
            checkpoint: default_checkpoint(),
        }
    }
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

fn default_checkpoint() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedDesign {
    pub id: String,
    pub config: DesignConfig,
}

/// A fully resolved manifest. Relative paths are resolved against the
/// manifest's directory.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub scenario: Scenario,
    /// Seed of the second, disjoint dataset set used in independent mode.
    pub independent_seed: u64,
    /// True dose used to score selections.
    pub target_dose: Option<usize>,
    pub designs: Vec<NamedDesign>,
    pub source: DatasetSource,
    pub independent_source: DatasetSource,
    pub out_dir: PathBuf,
    pub checkpoint: usize,
}

/// Command-line overrides applied on top of the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub trials: Option<usize>,
    pub checkpoint: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Seed for the independent set when the manifest does not give one.
pub fn derive_independent_seed(seed: u64) -> u64 {
    let mut h = Sha256::new();
    h.update(b"dosesim/independent-set/v1");
    h.update(seed.to_le_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().unwrap())
}

impl RunManifest {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, overrides)
    }

    pub fn parse(text: &str, base: &Path, overrides: &Overrides) -> Result<Self, CliError> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        let s = raw.scenario;
        let seed = overrides.seed.unwrap_or(s.seed);
        let independent_seed = match s.independent_seed {
            Some(v) => v,
            None => derive_independent_seed(seed),
        };
        if independent_seed == seed {
            return Err(CliError::Config(
                "independent_seed must differ from seed".into(),
            ));
        }
        let cfg_err = |e: crate::po_engine::PoError| CliError::Config(e.to_string());
        let scenario = Scenario {
            tox_curve: DoseCurve::monotone(s.tox_curve).map_err(cfg_err)?,
            eff_curve: s
                .eff_curve
                .map(DoseCurve::general)
                .transpose()
                .map_err(cfg_err)?,
            rho: s.rho,
            max_n: s.max_n,
            cohort_size: s.cohort_size,
            n_trials: overrides.trials.unwrap_or(s.n_trials),
            master_seed: seed,
        };
        scenario.validate().map_err(cfg_err)?;
        if let Some(t) = s.target_dose {
            if t == 0 || t > scenario.num_doses() {
                return Err(CliError::Config(format!(
                    "target_dose {t} is outside 1..={}",
                    scenario.num_doses()
                )));
            }
        }

        let mut seen = BTreeSet::new();
        let mut designs = Vec::with_capacity(raw.designs.len());
        for table in raw.designs {
            let d = resolve_design(table, &scenario)?;
            if !seen.insert(d.id.clone()) {
                return Err(CliError::Config(format!("duplicate design id `{}`", d.id)));
            }
            designs.push(d);
        }

        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let (source, independent_source) = match raw.dataset.source {
            SourceKind::Generate => (DatasetSource::Generate, DatasetSource::Generate),
            SourceKind::Load => {
                let path = raw
                    .dataset
                    .path
                    .ok_or_else(|| CliError::Config("dataset.path is required to load".into()))?;
                let ind = match raw.dataset.independent_path {
                    Some(p) => DatasetSource::Load(resolve(p)),
                    None => DatasetSource::Generate,
                };
                (DatasetSource::Load(resolve(path)), ind)
            }
        };
        let checkpoint = overrides.checkpoint.unwrap_or(raw.output.checkpoint);
        if checkpoint == 0 {
            return Err(CliError::Config("checkpoint must be positive".into()));
        }
        Ok(Self {
            scenario,
            independent_seed,
            target_dose: s.target_dose,
            designs,
            source,
            independent_source,
            out_dir: overrides
                .out
                .clone()
                .unwrap_or_else(|| resolve(raw.output.dir)),
            checkpoint,
        })
    }

    pub fn design(&self, id: &str) -> Result<&NamedDesign, CliError> {
        self.designs
            .iter()
            .find(|d| d.id == id)
            .ok_or_else(|| CliError::Config(format!("no design with id `{id}`")))
    }

    pub fn independent_scenario(&self) -> Scenario {
        self.scenario.with_seed(self.independent_seed)
    }

    /// Every resolved value, including defaults, for the run log.
    pub fn describe(&self) -> String {
        let sc = &self.scenario;
        let list = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:?}"))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let mut out = String::from("[scenario]\n");
        out += &format!("tox_curve = [{}]\n", list(sc.tox_curve.probs()));
        match &sc.eff_curve {
            Some(c) => out += &format!("eff_curve = [{}]\n", list(c.probs())),
            None => out += "# eff_curve absent\n",
        }
        out += &format!(
            "rho = {:?}\nmax_n = {}\ncohort_size = {}\nn_trials = {}\n",
            sc.rho, sc.max_n, sc.cohort_size, sc.n_trials
        );
        out += &format!(
            "seed = {}\nindependent_seed = {}\n",
            sc.master_seed, self.independent_seed
        );
        match self.target_dose {
            Some(t) => out += &format!("target_dose = {t}\n"),
            None => out += "# target_dose absent\n",
        }
        out += &format!("fingerprint = \"{}\"\n", sc.fingerprint());
        out += &format!(
            "independent_fingerprint = \"{}\"\n",
            self.independent_scenario().fingerprint()
        );
        out += &format!(
            "\n[dataset]\nsource = {}\nindependent_source = {}\n",
            show_source(&self.source),
            show_source(&self.independent_source)
        );
        out += &format!("\n[output]\ncheckpoint = {}\n", self.checkpoint);
        for d in &self.designs {
            out += &format!("\n[[designs]]\nid = \"{}\"\n{}", d.id, d.config.describe());
        }
        out
    }
}

fn show_source(s: &DatasetSource) -> String {
    match s {
        DatasetSource::Generate => "\"generate\"".into(),
        DatasetSource::Load(p) => format!("\"load:{}\"", p.display()),
    }
}

fn resolve_design(mut table: toml::Table, scenario: &Scenario) -> Result<NamedDesign, CliError> {
    let id = match table.remove("id") {
        Some(toml::Value::String(s)) if !s.is_empty() && !s.contains(char::is_whitespace) => s,
        Some(_) => {
            return Err(CliError::Config(
                "design id must be a non-empty string without spaces".into(),
            ))
        }
        None => return Err(CliError::Config("every design needs an id".into())),
    };
    let kind = table
        .get("type")
        .and_then(|v| v.as_str())
        .unwrap_or("")
        .to_string();
    let mut fill = |key: &str, v: usize| {
        table.entry(key).or_insert(toml::Value::Integer(v as i64));
    };
    match kind.as_str() {
        "three_plus_three" => {
            fill("num_doses", scenario.num_doses());
            fill("max_n", scenario.max_n);
        }
        "crm" => {
            fill("max_n", scenario.max_n);
            fill("cohort_size", scenario.cohort_size);
        }
        _ => {
            fill("num_doses", scenario.num_doses());
            fill("max_n", scenario.max_n);
            fill("cohort_size", scenario.cohort_size);
        }
    }
    let config: DesignConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(format!("design `{id}`: {e}")))?;
    config
        .validate()
        .map_err(|e| CliError::Config(format!("design `{id}`: {e}")))?;
    if config.num_doses() != scenario.num_doses() {
        return Err(CliError::Config(format!(
            "design `{id}` has {} doses, scenario has {}",
            config.num_doses(),
            scenario.num_doses()
        )));
    }
    if config.requires_efficacy() && scenario.eff_curve.is_none() {
        return Err(CliError::Config(format!(
            "design `{id}` needs an efficacy curve"
        )));
    }
    Ok(NamedDesign { id, config })
}
