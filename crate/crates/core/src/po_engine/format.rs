//! Text container for one potential-outcome dataset.
//!
//! ```text
//! dosesim-po-dataset
//! format 1
//! master_seed 42
//! trial_index 0
//! doses 5
//! patients 36
//! rho 0.0
//! tox_curve 0.05 0.1 0.15 0.18 0.45
//! eff_curve 0.4 0.5 0.52 0.53 0.53
//! scenario <hex sha-256 of the generating scenario>
//! fingerprint <hex sha-256 of every other line>
//! columns patient u_tox u_eff tox eff theta_tox theta_eff
//! 1 0.8123 0.0412 00000 11111 0.887 -1.736
//! ...
//! ```
//!
//! Floats are written in shortest round-trip form, so every latent is
//! reproduced bit for bit. Absent values are written as `-`.

use sha2::{Digest, Sha256};

use super::{
    generate_eff_po, generate_tox_po, DoseCurve, LatentPatient, PoDataset, PoError, PoMatrix,
    Scenario,
};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "dosesim-po-dataset";
const COLUMNS: &str = "columns patient u_tox u_eff tox eff theta_tox theta_eff";
const ABSENT: &str = "-";

pub(crate) fn join_floats(xs: &[f64]) -> String {
    xs.iter()
        .map(|x| format!("{x:?}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn opt_float(x: Option<f64>) -> String {
    x.map_or_else(|| ABSENT.to_string(), |v| format!("{v:?}"))
}

fn row_string(row: &[u8]) -> String {
    row.iter()
        .map(|&c| if c == 1 { '1' } else { '0' })
        .collect()
}

fn digest(lines: &[String]) -> String {
    let mut h = Sha256::new();
    for l in lines {
        h.update(l.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Lines of the container without the fingerprint line, in file order.
fn body_lines(ds: &PoDataset) -> Vec<String> {
    let mut lines = vec![
        MAGIC.to_string(),
        format!("format {FORMAT_VERSION}"),
        format!("master_seed {}", ds.master_seed),
        format!("trial_index {}", ds.trial_index),
        format!("doses {}", ds.num_doses()),
        format!("patients {}", ds.num_patients()),
        format!("rho {:?}", ds.rho),
        format!("tox_curve {}", join_floats(ds.tox_curve.probs())),
        match &ds.eff_curve {
            Some(c) => format!("eff_curve {}", join_floats(c.probs())),
            None => format!("eff_curve {ABSENT}"),
        },
        format!("scenario {}", ds.scenario_fingerprint),
        COLUMNS.to_string(),
    ];
    for (i, p) in ds.patients.iter().enumerate() {
        let eff_row = ds
            .eff_po
            .as_ref()
            .map_or_else(|| ABSENT.to_string(), |m| row_string(m.row(i)));
        lines.push(format!(
            "{} {:?} {} {} {} {} {}",
            i + 1,
            p.u_tox,
            opt_float(p.u_eff),
            row_string(ds.tox_po.row(i)),
            eff_row,
            opt_float(p.theta_tox),
            opt_float(p.theta_eff),
        ));
    }
    lines
}

/// Index of the fingerprint line; it sits right after the `scenario` line.
const FINGERPRINT_LINE: usize = 10;

pub fn serialize_dataset(ds: &PoDataset) -> String {
    let mut lines = body_lines(ds);
    let fp = digest(&lines);
    lines.insert(FINGERPRINT_LINE, format!("fingerprint {fp}"));
    let mut out = lines.join("\n");
    out.push('\n');
    out
}

fn malformed(msg: impl Into<String>) -> PoError {
    PoError::Malformed(msg.into())
}

fn header_value<'a>(line: Option<&'a str>, key: &str) -> Result<&'a str, PoError> {
    let line = line.ok_or_else(|| malformed(format!("missing `{key}` line")))?;
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| malformed(format!("expected `{key}`, found `{line}`")))
}

fn parse_num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, PoError> {
    s.parse()
        .map_err(|_| malformed(format!("bad {what}: `{s}`")))
}

fn parse_floats(s: &str, what: &str) -> Result<Vec<f64>, PoError> {
    s.split_whitespace().map(|t| parse_num(t, what)).collect()
}

fn parse_opt_float(s: &str, what: &str) -> Result<Option<f64>, PoError> {
    if s == ABSENT {
        Ok(None)
    } else {
        parse_num(s, what).map(Some)
    }
}

fn parse_row(s: &str, doses: usize, what: &str) -> Result<Vec<u8>, PoError> {
    if s.len() != doses {
        return Err(malformed(format!(
            "{what} row `{s}` has wrong length, expected {doses}"
        )));
    }
    s.bytes()
        .map(|b| match b {
            b'0' => Ok(0),
            b'1' => Ok(1),
            _ => Err(malformed(format!("{what} row `{s}` is not binary"))),
        })
        .collect()
}

fn check_open_unit(u: f64, patient: usize) -> Result<(), PoError> {
    if u > 0.0 && u < 1.0 {
        Ok(())
    } else {
        Err(malformed(format!(
            "patient {patient}: latent {u} outside (0, 1)"
        )))
    }
}

/// Parses and fully validates a dataset container.
pub fn deserialize_dataset(text: &str) -> Result<PoDataset, PoError> {
    let mut lines: Vec<&str> = text.lines().collect();
    if lines.len() <= FINGERPRINT_LINE {
        return Err(malformed("truncated header"));
    }
    let fp_line = lines.remove(FINGERPRINT_LINE);
    let expected_fp = header_value(Some(fp_line), "fingerprint")?.to_string();
    let owned: Vec<String> = lines.iter().map(|s| s.to_string()).collect();
    let actual_fp = digest(&owned);
    if actual_fp != expected_fp {
        return Err(PoError::FingerprintMismatch {
            expected: expected_fp,
            actual: actual_fp,
        });
    }

    let mut it = lines.into_iter();
    if it.next() != Some(MAGIC) {
        return Err(malformed("not a dosesim dataset"));
    }
    let version: u32 = parse_num(header_value(it.next(), "format")?, "format version")?;
    if version != FORMAT_VERSION {
        return Err(malformed(format!("unsupported format version {version}")));
    }
    let master_seed: u64 = parse_num(header_value(it.next(), "master_seed")?, "master_seed")?;
    let trial_index: u64 = parse_num(header_value(it.next(), "trial_index")?, "trial_index")?;
    let doses: usize = parse_num(header_value(it.next(), "doses")?, "doses")?;
    let n: usize = parse_num(header_value(it.next(), "patients")?, "patients")?;
    let rho: f64 = parse_num(header_value(it.next(), "rho")?, "rho")?;
    if !(-1.0..=1.0).contains(&rho) {
        return Err(PoError::CorrelationOutOfRange(rho));
    }
    let tox_curve = DoseCurve::monotone(parse_floats(
        header_value(it.next(), "tox_curve")?,
        "tox_curve",
    )?)?;
    let eff_raw = header_value(it.next(), "eff_curve")?;
    let eff_curve = if eff_raw == ABSENT {
        None
    } else {
        Some(DoseCurve::general(parse_floats(eff_raw, "eff_curve")?)?)
    };
    if tox_curve.num_doses() != doses || eff_curve.as_ref().is_some_and(|c| c.num_doses() != doses)
    {
        return Err(malformed(format!(
            "curve length does not match doses = {doses}"
        )));
    }
    let scenario_fingerprint = header_value(it.next(), "scenario")?.to_string();
    if it.next() != Some(COLUMNS) {
        return Err(malformed("missing or unexpected columns line"));
    }

    let mut patients = Vec::with_capacity(n);
    let mut tox_rows = Vec::with_capacity(n);
    let mut eff_rows = Vec::with_capacity(n);
    for (i, line) in it.enumerate() {
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 7 {
            return Err(malformed(format!(
                "record {} has {} fields, expected 7",
                i + 1,
                f.len()
            )));
        }
        let idx: usize = parse_num(f[0], "patient index")?;
        if idx != i + 1 {
            return Err(malformed(format!(
                "record {} carries patient index {idx}",
                i + 1
            )));
        }
        let u_tox: f64 = parse_num(f[1], "u_tox")?;
        check_open_unit(u_tox, idx)?;
        let u_eff = parse_opt_float(f[2], "u_eff")?;
        if let Some(u) = u_eff {
            check_open_unit(u, idx)?;
        }
        let tox = parse_row(f[3], doses, "tox")?;
        if tox != generate_tox_po(u_tox, &tox_curve)? {
            return Err(malformed(format!(
                "patient {idx}: toxicity row contradicts u_tox"
            )));
        }
        match (&eff_curve, f[4]) {
            (None, ABSENT) => {}
            (Some(curve), s) if s != ABSENT => {
                let eff = parse_row(s, doses, "eff")?;
                let u = u_eff.ok_or_else(|| {
                    malformed(format!("patient {idx}: efficacy row without u_eff"))
                })?;
                if eff != generate_eff_po(u, curve)? {
                    return Err(malformed(format!(
                        "patient {idx}: efficacy row contradicts u_eff"
                    )));
                }
                eff_rows.push(eff);
            }
            _ => {
                return Err(malformed(format!(
                    "patient {idx}: efficacy row does not match header"
                )))
            }
        }
        tox_rows.push(tox);
        patients.push(LatentPatient {
            u_tox,
            u_eff,
            theta_tox: parse_opt_float(f[5], "theta_tox")?,
            theta_eff: parse_opt_float(f[6], "theta_eff")?,
        });
    }
    if patients.len() != n {
        return Err(malformed(format!(
            "header declares {n} patients, found {}",
            patients.len()
        )));
    }

    // The header must describe the scenario it claims to come from.
    let claimed = Scenario {
        tox_curve: tox_curve.clone(),
        eff_curve: eff_curve.clone(),
        rho,
        max_n: n,
        cohort_size: 1,
        n_trials: 1,
        master_seed,
    };
    let recomputed = claimed.fingerprint();
    if recomputed != scenario_fingerprint {
        return Err(PoError::ScenarioMismatch {
            expected: recomputed,
            found: scenario_fingerprint,
        });
    }

    Ok(PoDataset {
        trial_index,
        master_seed,
        eff_po: match eff_curve {
            Some(_) => Some(PoMatrix::from_rows(doses, &eff_rows)?),
            None => None,
        },
        tox_curve,
        eff_curve,
        rho,
        patients,
        tox_po: PoMatrix::from_rows(doses, &tox_rows)?,
        scenario_fingerprint,
    })
}
