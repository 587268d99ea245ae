//! The `dosesim` command line.
//!
//! Exit codes: 0 success, 1 I/O or other failure, 2 configuration error,
//! 3 dataset fingerprint mismatch, 4 design runtime error.

mod manifest;
mod render;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use manifest::{derive_independent_seed, NamedDesign, Overrides, RunManifest};
pub use render::render_po_matrix;

use crate::metrics::{self, ComparisonSummary, PairedIndicators};
use crate::po_engine::{
    deserialize_dataset, generate_dataset, serialize_dataset, PoError, Scenario,
};
use crate::trial_runner::{
    dataset_file_name, run_batch_shared, run_trial, score_selection, write_results, RunError,
    TrialResult,
};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("dataset rejected: {0}")]
    Fingerprint(String),
    #[error("design failed: {0}")]
    Design(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io(_) => 1,
            CliError::Config(_) => 2,
            CliError::Fingerprint(_) => 3,
            CliError::Design(_) => 4,
        }
    }
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        let msg = e.to_string();
        match e {
            RunError::Design(_) | RunError::DoseOutOfRange(_) => CliError::Design(msg),
            RunError::Dataset(_) => CliError::Fingerprint(msg),
            RunError::DoseCountMismatch { .. } | RunError::MissingEfficacy(_) => {
                CliError::Config(msg)
            }
            RunError::Io { .. } | RunError::MalformedResults(_) => CliError::Io(msg),
        }
    }
}

impl From<metrics::MetricsError> for CliError {
    fn from(e: metrics::MetricsError) -> Self {
        CliError::Config(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "dosesim",
    version,
    about = "Potential-outcome simulation of dose-escalation designs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// Run manifest (TOML).
    #[arg(long)]
    pub manifest: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override the number of trials.
    #[arg(long)]
    pub trials: Option<usize>,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Paired,
    Independent,
    /// Both modes, plus the relative efficiency of pairing.
    Both,
}

impl Mode {
    fn as_str(self) -> &'static str {
        match self {
            Mode::Paired => "paired",
            Mode::Independent => "independent",
            Mode::Both => "both",
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write one dataset file per trial plus an index.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Also write the independent set.
        #[arg(long, value_enum, default_value = "paired")]
        mode: Mode,
    },
    /// Replay one design over every trial and write its results.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        design: String,
    },
    /// Compare two designs on correct selection of the target dose.
    Compare {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
        #[arg(long, value_enum, default_value = "paired")]
        mode: Mode,
        #[arg(long)]
        checkpoint: Option<usize>,
    },
    /// Print a dataset's potential-outcome matrices.
    PoMatrix {
        /// Dataset file.
        #[arg(long)]
        dataset: PathBuf,
        /// Manifest holding `--design`, to mark the cells it observes.
        #[arg(long, requires = "design")]
        manifest: Option<PathBuf>,
        #[arg(long, requires = "manifest")]
        design: Option<String>,
    },
    /// Print every resolved parameter of the manifest's designs.
    DescribeDesign {
        #[arg(long)]
        manifest: PathBuf,
        /// Only this design.
        #[arg(long)]
        design: Option<String>,
    },
}

/// Parses `std::env::args`, runs, and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match execute(cli.command, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("dosesim: {e}");
            e.exit_code()
        }
    }
}

fn load(common: &Common, checkpoint: Option<usize>) -> Result<RunManifest, CliError> {
    let o = Overrides {
        seed: common.seed,
        trials: common.trials,
        checkpoint,
        out: common.out.clone(),
    };
    RunManifest::load(&common.manifest, &o)
}

fn with_threads<T: Send>(
    threads: Option<usize>,
    f: impl FnOnce() -> T + Send,
) -> Result<T, CliError> {
    match threads {
        None => Ok(f()),
        Some(0) => Err(CliError::Config("--threads must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| CliError::Io(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    }
    std::fs::write(path, contents).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
}

fn write_log(m: &RunManifest, name: &str, extra: &str) -> Result<(), CliError> {
    write_file(&m.out_dir.join(name), &format!("{}{extra}", m.describe()))
}

/// Runs a subcommand, writing human-readable output to `out`.
pub fn execute(command: Command, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    let mut say = |s: String| {
        out.write_all(s.as_bytes())
            .map_err(|e| CliError::Io(e.to_string()))
    };
    match command {
        Command::Generate { common, mode } => {
            let m = load(&common, None)?;
            let mut sets = vec![("datasets", m.scenario.clone())];
            if mode != Mode::Paired {
                sets.push(("datasets_independent", m.independent_scenario()));
            }
            for (dir, scenario) in &sets {
                let dir = m.out_dir.join(dir);
                with_threads(common.threads, || generate_set(scenario, &dir))??;
                say(format!(
                    "wrote {} datasets to {}\n",
                    scenario.n_trials,
                    dir.display()
                ))?;
            }
            write_log(&m, "generate.log", "")?;
        }
        Command::Run { common, design } => {
            let m = load(&common, None)?;
            let d = m.design(&design)?.clone();
            let indices = trial_indices(&m.scenario);
            let results = with_threads(common.threads, || {
                run_batch_shared(&[(&d.id, &d.config)], &m.scenario, &indices, &m.source)
            })??;
            let path = m.out_dir.join(format!("results_{}.tsv", d.id));
            write_file(&path, &write_results(&results[0]))?;
            let mut extra = String::new();
            if let Some(t) = m.target_dose {
                let x: Vec<u8> = results[0].iter().map(|r| score_selection(r, t)).collect();
                let e = metrics::estimate_psi(&x)?;
                extra = format!("\n# {}: psi = {:?} (mcse {:?})\n", d.id, e.value, e.mcse);
                say(format!(
                    "{}: correct selection {:.4} (MCSE {:.4})\n",
                    d.id, e.value, e.mcse
                ))?;
            }
            write_log(&m, &format!("run_{}.log", d.id), &extra)?;
            say(format!("wrote {}\n", path.display()))?;
        }
        Command::Compare {
            common,
            a,
            b,
            mode,
            checkpoint,
        } => {
            let m = load(&common, checkpoint)?;
            let report = with_threads(common.threads, || compare(&m, &a, &b, mode))??;
            say(report)?;
        }
        Command::PoMatrix {
            dataset,
            manifest,
            design,
        } => {
            let text = std::fs::read_to_string(&dataset)
                .map_err(|e| CliError::Io(format!("{}: {e}", dataset.display())))?;
            let ds =
                deserialize_dataset(&text).map_err(|e| CliError::Fingerprint(e.to_string()))?;
            let replay = match (manifest, design) {
                (Some(path), Some(id)) => {
                    let m = RunManifest::load(&path, &Overrides::default())?;
                    let d = m.design(&id)?;
                    Some((run_trial(&d.id, &d.config, &ds)?, d.config.cohort_size()))
                }
                _ => None,
            };
            say(render_po_matrix(&ds, replay.as_ref().map(|(r, c)| (r, *c))))?;
        }
        Command::DescribeDesign { manifest, design } => {
            let m = RunManifest::load(&manifest, &Overrides::default())?;
            let chosen: Vec<&NamedDesign> = match &design {
                Some(id) => vec![m.design(id)?],
                None => m.designs.iter().collect(),
            };
            for d in chosen {
                say(format!(
                    "[[designs]]\nid = \"{}\"\n{}\n",
                    d.id,
                    d.config.describe()
                ))?;
            }
        }
    }
    Ok(())
}

fn trial_indices(scenario: &Scenario) -> Vec<u64> {
    (0..scenario.n_trials as u64).collect()
}

fn generate_set(scenario: &Scenario, dir: &Path) -> Result<(), CliError> {
    use rayon::prelude::*;
    std::fs::create_dir_all(dir).map_err(|e| CliError::Io(format!("{}: {e}", dir.display())))?;
    let rows: Vec<String> = trial_indices(scenario)
        .par_iter()
        .map(|&k| {
            let ds = generate_dataset(scenario, k)
                .map_err(|e: PoError| CliError::Config(e.to_string()))?;
            let name = dataset_file_name(k);
            let text = serialize_dataset(&ds);
            write_file(&dir.join(&name), &text)?;
            Ok(format!(
                "{k}\t{name}\t{}\n",
                hex::encode(Sha256::digest(text.as_bytes()))
            ))
        })
        .collect::<Result<_, CliError>>()?;
    // The index goes last, so a partial directory has no index.
    let mut index = format!(
        "# master_seed {}\n# scenario_fingerprint {}\n# n_trials {}\ntrial_index\tfile\tsha256\n",
        scenario.master_seed,
        scenario.fingerprint(),
        scenario.n_trials
    );
    index.extend(rows);
    write_file(&dir.join("index.tsv"), &index)
}

fn compare(m: &RunManifest, a: &str, b: &str, mode: Mode) -> Result<String, CliError> {
    let target = m
        .target_dose
        .ok_or_else(|| CliError::Config("compare needs scenario.target_dose".into()))?;
    let (da, db) = (m.design(a)?, m.design(b)?);
    if mode != Mode::Paired && m.independent_seed == m.scenario.master_seed {
        return Err(CliError::Config(
            "independent mode needs two different seeds".into(),
        ));
    }
    let indices = trial_indices(&m.scenario);
    let score = |rs: &[TrialResult]| {
        rs.iter()
            .map(|r| score_selection(r, target))
            .collect::<Vec<u8>>()
    };

    // Set 1 is always needed: both designs in paired mode, `a` in independent mode.
    let mut set1: Vec<(&str, &crate::designs::DesignConfig)> = vec![(&da.id, &da.config)];
    if da.id != db.id && mode != Mode::Independent {
        set1.push((&db.id, &db.config));
    }
    let res1 = run_batch_shared(&set1, &m.scenario, &indices, &m.source)?;
    let x = score(&res1[0]);
    for r in &res1 {
        write_file(
            &m.out_dir.join(format!("results_{}.tsv", r[0].design_id)),
            &write_results(r),
        )?;
    }

    let mut report = String::new();
    let mut summaries: Vec<(Mode, ComparisonSummary)> = Vec::new();
    if mode != Mode::Independent {
        let y = score(res1.last().unwrap());
        let ind = PairedIndicators::new(x.clone(), y, true)?;
        summaries.push((Mode::Paired, metrics::summarize(&ind)?));
        emit_convergence(m, a, b, Mode::Paired, &ind)?;
    }
    if mode != Mode::Paired {
        let ind_scenario = m.independent_scenario();
        let res2 = run_batch_shared(
            &[(&db.id, &db.config)],
            &ind_scenario,
            &indices,
            &m.independent_source,
        )?;
        write_file(
            &m.out_dir.join(format!("results_{}_independent.tsv", db.id)),
            &write_results(&res2[0]),
        )?;
        let ind = PairedIndicators::new(x.clone(), score(&res2[0]), false)?;
        summaries.push((Mode::Independent, metrics::summarize(&ind)?));
        emit_convergence(m, a, b, Mode::Independent, &ind)?;
    }
    if let [(Mode::Paired, p), (Mode::Independent, i)] = summaries.as_slice() {
        let p = metrics::with_relative_efficiency(p.clone(), i);
        summaries[0].1 = p;
    }

    for (md, s) in &summaries {
        let mut meta = vec![
            ("design_a", a.to_string()),
            ("design_b", b.to_string()),
            ("mode", md.as_str().to_string()),
            ("target_dose", target.to_string()),
            ("scenario_fingerprint", m.scenario.fingerprint()),
        ];
        if *md == Mode::Independent {
            meta.push((
                "independent_fingerprint",
                m.independent_scenario().fingerprint(),
            ));
        }
        let name = format!("comparison_{a}_vs_{b}_{}.tsv", md.as_str());
        write_file(&m.out_dir.join(&name), &metrics::write_summary(s, &meta))?;
        writeln!(
            report,
            "{}: psi_{a} = {:.4}, psi_{b} = {:.4}, delta = {:+.4} (MCSE {:.5}), corr = {}{}",
            md.as_str(),
            s.psi1.value,
            s.psi2.value,
            s.delta,
            s.mcse_delta,
            s.corr_xy.map_or_else(|| "NA".into(), |c| format!("{c:.3}")),
            s.relative_efficiency
                .map_or_else(String::new, |r| format!(", relative efficiency {r:.2}")),
        )
        .unwrap();
    }
    write_log(
        m,
        &format!("compare_{a}_vs_{b}.log"),
        &format!("\n# mode = {}\n", mode.as_str()),
    )?;
    Ok(report)
}

fn emit_convergence(
    m: &RunManifest,
    a: &str,
    b: &str,
    mode: Mode,
    ind: &PairedIndicators,
) -> Result<(), CliError> {
    let series = metrics::convergence_series(ind, m.checkpoint)?;
    let name = format!("convergence_{a}_vs_{b}_{}.tsv", mode.as_str());
    write_file(&m.out_dir.join(name), &metrics::write_convergence(&series))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_are_distinct() {
        let codes = [
            CliError::Io(String::new()).exit_code(),
            CliError::Config(String::new()).exit_code(),
            CliError::Fingerprint(String::new()).exit_code(),
            CliError::Design(String::new()).exit_code(),
        ];
        assert_eq!(codes, [1, 2, 3, 4]);
    }

    #[test]
    fn cli_definition_is_consistent() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
