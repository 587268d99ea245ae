//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each,
//! and exits non-zero if any failed.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use dosesim::designs::{Boin12Config, CrmConfig, Mtpi2Config, ScriptedConfig};
use dosesim::metrics::{
    self, relative_efficiency, var_delta_covariance, var_delta_difference, PairedIndicators,
};
use dosesim::po_engine::{
    generate_dataset, generate_latents, DoseCurve, LatentPatient, PoDataset, Scenario,
};
use dosesim::trial_runner::{run_batch_shared, run_trial, score_selection, DatasetSource};
use dosesim::DesignConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

const FIVE_DOSE_TOX: [f64; 5] = [0.05, 0.10, 0.15, 0.18, 0.45];
const FIVE_DOSE_EFF: [f64; 5] = [0.40, 0.50, 0.52, 0.53, 0.53];
const FOUR_DOSE_TOX: [f64; 4] = [0.01, 0.05, 0.15, 0.30];

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn five_dose(rho: f64, n_trials: usize, seed: u64) -> Scenario {
    Scenario {
        tox_curve: DoseCurve::monotone(FIVE_DOSE_TOX.to_vec()).unwrap(),
        eff_curve: Some(DoseCurve::monotone(FIVE_DOSE_EFF.to_vec()).unwrap()),
        rho,
        max_n: 36,
        cohort_size: 3,
        n_trials,
        master_seed: seed,
    }
}

fn worked_example_replay() -> Outcome {
    let scenario = Scenario {
        tox_curve: DoseCurve::monotone(vec![0.10, 0.20, 0.22, 0.35, 0.50]).unwrap(),
        eff_curve: None,
        rho: 0.0,
        max_n: 10,
        cohort_size: 2,
        n_trials: 1,
        master_seed: 0,
    };
    // One latent per row, picked inside the interval that yields that row.
    let u = [0.05, 0.15, 0.40, 0.90, 0.90, 0.30, 0.90, 0.90, 0.90, 0.21];
    let patients = u
        .iter()
        .map(|&u_tox| LatentPatient {
            u_tox,
            u_eff: None,
            theta_tox: None,
            theta_eff: None,
        })
        .collect();
    let ds = PoDataset::from_latents(&scenario, 0, patients).map_err(|e| e.to_string())?;
    let expected_rows: [[u8; 5]; 10] = [
        [1, 1, 1, 1, 1],
        [0, 1, 1, 1, 1],
        [0, 0, 0, 0, 1],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 1, 1],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
        [0, 0, 0, 0, 0],
        [0, 0, 1, 1, 1],
    ];
    for (i, row) in expected_rows.iter().enumerate() {
        if ds.tox_po.row(i) != row {
            return Err(format!("row {} is {:?}", i + 1, ds.tox_po.row(i)));
        }
    }
    let cfg = DesignConfig::Scripted(ScriptedConfig {
        num_doses: 5,
        max_n: 10,
        cohort_size: 2,
        path: vec![1, 1, 2, 3, 4],
        select: None,
    });
    let r = run_trial("worked", &cfg, &ds).map_err(|e| e.to_string())?;
    let tallies: Vec<String> = r
        .tallies
        .iter()
        .map(|t| format!("{}/{}", t.tox, t.n))
        .collect();
    let rates: Vec<String> = r.tallies[..4]
        .iter()
        .map(|t| format!("{:.2}", t.tox as f64 / t.n as f64))
        .collect();
    let ok =
        tallies == ["1/4", "0/2", "0/2", "1/2", "0/0"] && rates == ["0.25", "0.00", "0.00", "0.50"];
    check(ok, format!("tallies {tallies:?}, rates {rates:?}"))
}

fn po_distribution() -> Outcome {
    let sc = five_dose(0.0, 10_000, 2024);
    let mut tox = [0u64; 5];
    let mut eff = [0u64; 5];
    let mut cells = 0u64;
    for k in 0..sc.n_trials as u64 {
        let ds = generate_dataset(&sc, k).map_err(|e| e.to_string())?;
        let em = ds.eff_po.as_ref().unwrap();
        for i in 0..ds.num_patients() {
            for d in 1..=5 {
                tox[d - 1] += ds.tox_po.get(i, d) as u64;
                eff[d - 1] += em.get(i, d) as u64;
            }
        }
        cells += ds.num_patients() as u64;
    }
    let mut worst: f64 = 0.0;
    for (counts, truth) in [(tox, FIVE_DOSE_TOX), (eff, FIVE_DOSE_EFF)] {
        for d in 0..5 {
            let p = truth[d];
            let se = (p * (1.0 - p) / cells as f64).sqrt();
            worst = worst.max((counts[d] as f64 / cells as f64 - p).abs() / se);
        }
    }
    check(
        worst < 3.0,
        format!("largest deviation {worst:.2} SE over {cells} patients per dose"),
    )
}

fn monotonicity() -> Outcome {
    let sc = Scenario {
        max_n: 40,
        n_trials: 25_000,
        ..five_dose(0.0, 1, 99)
    };
    let probs = FIVE_DOSE_TOX;
    let (mut rows, mut violations, mut law_breaks) = (0u64, 0u64, 0u64);
    for k in 0..sc.n_trials as u64 {
        let ds = generate_dataset(&sc, k).map_err(|e| e.to_string())?;
        for (i, p) in ds.patients.iter().enumerate() {
            let row = ds.tox_po.row(i);
            rows += 1;
            violations += row.windows(2).filter(|w| w[0] > w[1]).count() as u64;
            law_breaks += (0..5)
                .filter(|&d| row[d] != u8::from(probs[d] >= p.u_tox))
                .count() as u64;
        }
    }
    check(
        rows >= 1_000_000 && violations == 0 && law_breaks == 0,
        format!("{rows} rows, {violations} order violations, {law_breaks} threshold-law breaks"),
    )
}

/// Sample variance of `x - y` over `n`, from the all-pairs definition in
/// exact integer arithmetic.
fn brute_force_var_delta(x: &[u8], y: &[u8]) -> f64 {
    let n = x.len() as i64;
    let d: Vec<i64> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| a as i64 - b as i64)
        .collect();
    let mut pairs = 0i64;
    for a in &d {
        for b in &d {
            pairs += (a - b) * (a - b);
        }
    }
    pairs as f64 / (2 * n * (n - 1) * n) as f64
}

fn variance_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst_rel, mut worst_oracle): (f64, f64) = (0.0, 0.0);
    for _ in 0..1000 {
        let n = rng.random_range(2..=500);
        let bias: f64 = rng.random();
        let agree: f64 = rng.random();
        let x: Vec<u8> = (0..n)
            .map(|_| u8::from(rng.random::<f64>() < bias))
            .collect();
        let y: Vec<u8> = x
            .iter()
            .map(|&v| {
                if rng.random::<f64>() < agree {
                    v
                } else {
                    u8::from(rng.random::<bool>())
                }
            })
            .collect();
        let a = var_delta_covariance(&x, &y, true).unwrap();
        let b = var_delta_difference(&x, &y).unwrap();
        let scale = a.abs().max(b.abs());
        if scale > 0.0 {
            worst_rel = worst_rel.max((a - b).abs() / scale);
        }
    }
    for n in 2..=12usize {
        for _ in 0..200 {
            let x: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..2)).collect();
            let oracle = brute_force_var_delta(&x, &y);
            for v in [
                var_delta_covariance(&x, &y, true).unwrap(),
                var_delta_difference(&x, &y).unwrap(),
            ] {
                let scale = oracle.abs().max(f64::MIN_POSITIVE);
                worst_oracle = worst_oracle.max(if oracle == 0.0 {
                    v.abs()
                } else {
                    (v - oracle).abs() / scale
                });
            }
        }
    }
    // "Exact" against a rational oracle means agreement to a few ulps.
    check(
        worst_rel <= 1e-12 && worst_oracle <= 1e-14,
        format!("forms agree to {worst_rel:.1e} relative; oracle agreement {worst_oracle:.1e}"),
    )
}

fn relative_efficiency_arithmetic() -> Outcome {
    let a = relative_efficiency(0.00661, 0.00117);
    let b = relative_efficiency(0.00599472, 0.004408828);
    check(
        (a - 32.0).abs() <= 0.5 && (b - 1.85).abs() <= 0.01,
        format!("{a:.3} and {b:.4}"),
    )
}

fn boin_variants() -> (DesignConfig, DesignConfig) {
    let v1 = Boin12Config::new(5, 36, 3);
    let v2 = Boin12Config {
        c_t: 0.85,
        c_e: 0.80,
        ..v1.clone()
    };
    (DesignConfig::Boin12(v1), DesignConfig::Boin12(v2))
}

/// Paired and independent summaries of V1 vs V2 on the five-dose scenario.
fn variant_comparison(
    rho: f64,
    seed: u64,
) -> Result<(metrics::ComparisonSummary, metrics::ComparisonSummary), String> {
    let (v1, v2) = boin_variants();
    let set1 = five_dose(rho, 2000, seed);
    let set2 = set1.with_seed(dosesim::cli::derive_independent_seed(seed));
    let idx: Vec<u64> = (0..2000).collect();
    let r1 = run_batch_shared(
        &[("v1", &v1), ("v2", &v2)],
        &set1,
        &idx,
        &DatasetSource::Generate,
    )
    .map_err(|e| e.to_string())?;
    let r2 = run_batch_shared(&[("v2", &v2)], &set2, &idx, &DatasetSource::Generate)
        .map_err(|e| e.to_string())?;
    let score = |rs: &[dosesim::TrialResult]| {
        rs.iter()
            .map(|r| score_selection(r, 2))
            .collect::<Vec<u8>>()
    };
    let x = score(&r1[0]);
    let paired = PairedIndicators::new(x.clone(), score(&r1[1]), true).unwrap();
    let indep = PairedIndicators::new(x, score(&r2[0]), false).unwrap();
    Ok((
        metrics::summarize(&paired).unwrap(),
        metrics::summarize(&indep).unwrap(),
    ))
}

fn paired_efficiency() -> Outcome {
    let (p, i) = variant_comparison(0.0, 11)?;
    let ratio = i.mcse_delta / p.mcse_delta;
    check(
        ratio >= 2.5,
        format!(
            "psi V1 {:.3}, V2 {:.3}; MCSE paired {:.5} vs independent {:.5} (ratio {ratio:.2}, corr {:.3})",
            p.psi1.value,
            p.psi2.value,
            p.mcse_delta,
            i.mcse_delta,
            p.corr_xy.unwrap_or(f64::NAN)
        ),
    )
}

fn correlation_direction() -> Outcome {
    let (neg, _) = variant_comparison(-0.5, 12)?;
    let (pos, _) = variant_comparison(0.5, 12)?;
    let (a, b) = (
        neg.corr_xy.unwrap_or(f64::NAN),
        pos.corr_xy.unwrap_or(f64::NAN),
    );
    check(
        a > b,
        format!("corr at rho=-0.5 {a:.4}, at rho=+0.5 {b:.4}"),
    )
}

fn four_dose(n_trials: usize, seed: u64) -> Scenario {
    Scenario {
        tox_curve: DoseCurve::monotone(FOUR_DOSE_TOX.to_vec()).unwrap(),
        eff_curve: None,
        rho: 0.0,
        max_n: 30,
        cohort_size: 3,
        n_trials,
        master_seed: seed,
    }
}

fn crm_vs_mtpi2() -> Outcome {
    let sc = four_dose(2000, 31);
    let crm = DesignConfig::Crm(CrmConfig::with_skeleton(
        vec![0.05, 0.12, 0.25, 0.40],
        30,
        3,
    ));
    let mtpi = DesignConfig::Mtpi2(Mtpi2Config::new(4, 30, 3));
    let idx: Vec<u64> = (0..2000).collect();
    let r = run_batch_shared(
        &[("crm", &crm), ("mtpi2", &mtpi)],
        &sc,
        &idx,
        &DatasetSource::Generate,
    )
    .map_err(|e| e.to_string())?;
    let psi = |rs: &[dosesim::TrialResult]| {
        rs.iter().map(|t| score_selection(t, 4) as f64).sum::<f64>() / rs.len() as f64
    };
    let (c, m) = (psi(&r[0]), psi(&r[1]));
    check(
        c > m && (0.73..=0.89).contains(&c) && (0.66..=0.82).contains(&m),
        format!("CRM {c:.4}, mTPI-2 {m:.4}"),
    )
}

const FOUR_DOSE_MANIFEST: &str = r#"
[scenario]
tox_curve = [0.01, 0.05, 0.15, 0.30]
max_n = 30
cohort_size = 3
n_trials = 2000
seed = 31
target_dose = 4

[[designs]]
id = "crm"
type = "crm"
skeleton = [0.05, 0.12, 0.25, 0.40]

[[designs]]
id = "mtpi2"
type = "mtpi2"
"#;

fn cli_determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let manifest = dir.path().join("four_dose.toml");
    std::fs::write(&manifest, FOUR_DOSE_MANIFEST).map_err(|e| e.to_string())?;
    let run = |threads: &str, out: &Path| -> Result<(), String> {
        let status = Command::new(env!("CARGO_BIN_EXE_dosesim"))
            .args([
                "compare",
                "--a",
                "crm",
                "--b",
                "mtpi2",
                "--mode",
                "both",
                "--threads",
                threads,
            ])
            .arg("--manifest")
            .arg(&manifest)
            .arg("--out")
            .arg(out)
            .output()
            .map_err(|e| e.to_string())?;
        if !status.status.success() {
            return Err(String::from_utf8_lossy(&status.stderr).into_owned());
        }
        Ok(())
    };
    let (a, b) = (dir.path().join("t1"), dir.path().join("t4"));
    run("1", &a)?;
    run("4", &b)?;
    let mut names: Vec<String> = std::fs::read_dir(&a)
        .map_err(|e| e.to_string())?
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    for name in &names {
        let (x, y) = (
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap_or_default(),
        );
        if x != y {
            return Err(format!("{name} differs between --threads 1 and 4"));
        }
    }
    check(
        names.iter().any(|n| n.starts_with("results_")),
        format!("{} files byte-identical", names.len()),
    )
}

fn ks_uniform(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x - i as f64 / n).max((i + 1) as f64 / n - x))
        .fold(0.0, f64::max)
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

fn copula_marginals() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for rho in [-0.5, 0.0, 0.5] {
        let sc = Scenario {
            max_n: 100,
            n_trials: 1000,
            ..five_dose(rho, 1, 77)
        };
        let (mut ut, mut ue) = (Vec::with_capacity(100_000), Vec::with_capacity(100_000));
        for k in 0..1000 {
            for p in generate_latents(&sc, k).map_err(|e| e.to_string())? {
                ut.push(p.u_tox);
                ue.push(p.u_eff.unwrap());
            }
        }
        let r = pearson(&ut, &ue);
        let (kt, ke) = (ks_uniform(ut), ks_uniform(ue));
        let sign_ok = if rho == 0.0 {
            r.abs() < 0.01
        } else {
            r.signum() == f64::signum(rho)
        };
        ok &= kt < 0.01 && ke < 0.01 && sign_ok;
        notes.push(format!("rho {rho:+}: KS {kt:.4}/{ke:.4}, corr {r:+.3}"));
    }
    check(ok, notes.join("; "))
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("1 worked-example replay", worked_example_replay),
        ("2 PO per-dose frequencies", po_distribution),
        ("3 monotone toxicity rows", monotonicity),
        ("4 variance identity", variance_identity),
        (
            "5 relative efficiency arithmetic",
            relative_efficiency_arithmetic,
        ),
        ("6 paired vs independent MCSE", paired_efficiency),
        ("7 correlation direction", correlation_direction),
        ("8 four-dose CRM vs mTPI-2", crm_vs_mtpi2),
        ("9 thread-count determinism", cli_determinism),
        ("10 copula marginals", copula_marginals),
    ];
    let mut failed = 0;
    for (name, f) in criteria {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS criterion {name}: {d} [{secs:.1}s]"),
            Err(d) => {
                failed += 1;
                println!("FAIL criterion {name}: {d} [{secs:.1}s]");
            }
        }
    }
    println!("{} of {} criteria passed", 10 - failed, 10);
    if failed > 0 {
        std::process::exit(1);
    }
}
