use std::fmt::Write as _;

use crate::po_engine::{PoDataset, PoMatrix};
use crate::trial_runner::TrialResult;

/// Plain-text view of a dataset's potential outcomes, one row per patient.
///
/// With a replay, each treated patient's observed cell is starred, cohorts
/// are separated by rules, and the observed `y/n` tallies follow the
/// matrix.
pub fn render_po_matrix(ds: &PoDataset, replay: Option<(&TrialResult, usize)>) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "trial {} (seed {}, rho {:?})",
        ds.trial_index, ds.master_seed, ds.rho
    )
    .unwrap();
    render_one(
        &mut out,
        "DLT",
        ds.tox_curve.probs(),
        &ds.tox_po,
        replay,
        |t| t.tox,
    );
    if let (Some(curve), Some(po)) = (&ds.eff_curve, &ds.eff_po) {
        out.push('\n');
        // Designs that ignore efficacy leave nothing to tally.
        let replay = replay.filter(|(r, _)| r.observed.iter().any(|(_, e)| e.is_some()));
        render_one(&mut out, "response", curve.probs(), po, replay, |t| t.eff);
    }
    out
}

fn render_one(
    out: &mut String,
    label: &str,
    truth: &[f64],
    po: &PoMatrix,
    replay: Option<(&TrialResult, usize)>,
    events: impl Fn(&crate::designs::DoseTally) -> u32,
) {
    let doses = truth.len();
    let first = format!("PO empirical p({label})")
        .len()
        .max(format!("True p({label})").len())
        .max(16);
    let cell = 6;
    let row = |out: &mut String, name: &str, cells: &[String]| {
        write!(out, "{name:<first$}").unwrap();
        for c in cells {
            write!(out, "{c:>cell$}").unwrap();
        }
        out.push('\n');
    };
    let rule = "-".repeat(first + cell * doses);
    let header: Vec<String> = (1..=doses).map(|d| d.to_string()).collect();
    row(out, "Dose level", &header);
    let truths: Vec<String> = truth.iter().map(|p| format!("{p:.2}")).collect();
    row(out, &format!("True p({label})"), &truths);
    out.push_str(&rule);
    out.push('\n');

    let assigned = |i: usize| {
        replay.and_then(|(r, _)| r.assignments.iter().find(|(p, _)| *p == i).map(|&(_, d)| d))
    };
    for i in 0..po.num_patients() {
        if let Some((_, cohort)) = replay {
            if i > 0 && i % cohort == 0 {
                out.push_str(&rule);
                out.push('\n');
            }
        }
        let cells: Vec<String> = (1..=doses)
            .map(|d| {
                let star = if assigned(i) == Some(d) { "*" } else { "" };
                format!("{}{star}", po.get(i, d))
            })
            .collect();
        row(out, &format!("Patient {}", i + 1), &cells);
    }
    out.push_str(&rule);
    out.push('\n');
    let means: Vec<String> = po
        .column_means()
        .iter()
        .map(|p| format!("{p:.2}"))
        .collect();
    row(out, &format!("PO empirical p({label})"), &means);

    if let Some((r, _)) = replay {
        let mut data = Vec::with_capacity(doses);
        let mut rates = Vec::with_capacity(doses);
        for t in &r.tallies {
            if t.n == 0 {
                data.push("-".to_string());
                rates.push("-".to_string());
            } else {
                data.push(format!("{}/{}", events(t), t.n));
                rates.push(format!("{:.2}", events(t) as f64 / t.n as f64));
            }
        }
        out.push_str(&rule);
        out.push('\n');
        row(out, "Data (y/n)", &data);
        row(out, &format!("Empirical p({label})"), &rates);
        let sel = r
            .selected_dose()
            .map_or_else(|| "none".to_string(), |d| d.to_string());
        writeln!(out, "selected dose: {sel} ({})", r.stop_reason()).unwrap();
    }
}
