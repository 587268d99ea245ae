//! Monte Carlo error of performance contrasts between two designs.
//!
//! For indicators `X_i` (design 1 correct) and `Y_i` (design 2 correct) the
//! variance of `psi1_hat - psi2_hat` is estimated two ways: from the
//! variances and covariance of the indicators, and directly from the sample
//! variance of `X_i - Y_i`. For paired runs the two agree up to rounding.
//! All sample moments use the `n - 1` denominator.

use std::fmt::Write as _;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("need at least {need} simulations, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("indicator vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("indicator value {0} is not 0 or 1")]
    NotBinary(u8),
    #[error("checkpoint cadence must be positive")]
    ZeroCheckpoint,
}

/// Paired or independent selection indicators of two designs.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedIndicators {
    pub x: Vec<u8>,
    pub y: Vec<u8>,
    /// True when `x[i]` and `y[i]` come from the same dataset.
    pub paired: bool,
}

impl PairedIndicators {
    pub fn new(x: Vec<u8>, y: Vec<u8>, paired: bool) -> Result<Self, MetricsError> {
        if let Some(&v) = x.iter().chain(&y).find(|&&v| v > 1) {
            return Err(MetricsError::NotBinary(v));
        }
        if x.len() != y.len() {
            return Err(MetricsError::LengthMismatch(x.len(), y.len()));
        }
        if x.len() < 2 {
            return Err(MetricsError::TooFew {
                need: 2,
                got: x.len(),
            });
        }
        Ok(Self { x, y, paired })
    }

    pub fn n_sim(&self) -> usize {
        self.x.len()
    }
}

/// A proportion and its Monte Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Estimate {
    pub value: f64,
    pub mcse: f64,
}

fn mean(v: &[u8]) -> f64 {
    v.iter().map(|&x| x as f64).sum::<f64>() / v.len() as f64
}

/// Sample covariance with `n - 1` denominator.
fn sample_cov(a: &[u8], b: &[u8]) -> f64 {
    let (ma, mb) = (mean(a), mean(b));
    let s: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| (x as f64 - ma) * (y as f64 - mb))
        .sum();
    s / (a.len() - 1) as f64
}

fn sample_var(a: &[u8]) -> f64 {
    sample_cov(a, a)
}

pub fn estimate_psi(indicators: &[u8]) -> Result<Estimate, MetricsError> {
    if indicators.len() < 2 {
        return Err(MetricsError::TooFew {
            need: 2,
            got: indicators.len(),
        });
    }
    Ok(Estimate {
        value: mean(indicators),
        mcse: (sample_var(indicators) / indicators.len() as f64).sqrt(),
    })
}

fn check_pair(x: &[u8], y: &[u8]) -> Result<usize, MetricsError> {
    if x.len() != y.len() {
        return Err(MetricsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(MetricsError::TooFew {
            need: 2,
            got: x.len(),
        });
    }
    Ok(x.len())
}

/// `(Var(X) + Var(Y) - 2 Cov(X, Y)) / n`. For independent sets the
/// covariance term is structurally zero and is dropped.
pub fn var_delta_covariance(x: &[u8], y: &[u8], paired: bool) -> Result<f64, MetricsError> {
    let n = check_pair(x, y)? as f64;
    let cov = if paired { sample_cov(x, y) } else { 0.0 };
    Ok((sample_var(x) + sample_var(y) - 2.0 * cov) / n)
}

/// Sample variance of `X_i - Y_i`, divided by `n`.
pub fn var_delta_difference(x: &[u8], y: &[u8]) -> Result<f64, MetricsError> {
    let n = check_pair(x, y)?;
    let d: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let m = d.iter().sum::<f64>() / n as f64;
    let ss: f64 = d.iter().map(|v| (v - m).powi(2)).sum();
    Ok(ss / (n - 1) as f64 / n as f64)
}

/// Pearson correlation of the indicators; `None` when either has zero
/// variance.
pub fn indicator_correlation(x: &[u8], y: &[u8]) -> Result<Option<f64>, MetricsError> {
    check_pair(x, y)?;
    let (vx, vy) = (sample_var(x), sample_var(y));
    if vx == 0.0 || vy == 0.0 {
        return Ok(None);
    }
    Ok(Some(sample_cov(x, y) / (vx * vy).sqrt()))
}

/// Factor by which pairing shrinks the number of simulations needed for a
/// given MCSE: `(mcse_indep / mcse_paired)^2`.
pub fn relative_efficiency(mcse_indep: f64, mcse_paired: f64) -> f64 {
    (mcse_indep / mcse_paired).powi(2)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonSummary {
    pub n_sim: usize,
    pub paired: bool,
    pub psi1: Estimate,
    pub psi2: Estimate,
    pub delta: f64,
    pub var_delta_cov: f64,
    pub var_delta_diff: f64,
    pub mcse_delta: f64,
    pub corr_xy: Option<f64>,
    pub relative_efficiency: Option<f64>,
}

/// Full summary of one comparison. Paired runs take the MCSE from the
/// difference form; independent runs from the covariance form with the
/// covariance dropped.
pub fn summarize(ind: &PairedIndicators) -> Result<ComparisonSummary, MetricsError> {
    let psi1 = estimate_psi(&ind.x)?;
    let psi2 = estimate_psi(&ind.y)?;
    let var_delta_cov = var_delta_covariance(&ind.x, &ind.y, ind.paired)?;
    let var_delta_diff = var_delta_difference(&ind.x, &ind.y)?;
    let mcse_delta = if ind.paired {
        var_delta_diff.sqrt()
    } else {
        var_delta_cov.sqrt()
    };
    Ok(ComparisonSummary {
        n_sim: ind.n_sim(),
        paired: ind.paired,
        psi1,
        psi2,
        delta: psi1.value - psi2.value,
        var_delta_cov,
        var_delta_diff,
        mcse_delta,
        corr_xy: indicator_correlation(&ind.x, &ind.y)?,
        relative_efficiency: None,
    })
}

/// Fills in the relative efficiency of a paired summary against an
/// independent one.
pub fn with_relative_efficiency(
    mut paired: ComparisonSummary,
    independent: &ComparisonSummary,
) -> ComparisonSummary {
    paired.relative_efficiency = Some(relative_efficiency(
        independent.mcse_delta,
        paired.mcse_delta,
    ));
    paired
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergencePoint {
    pub n: usize,
    pub psi1: f64,
    pub psi2: f64,
    pub delta: f64,
    pub mcse_delta: f64,
}

/// Running estimates after every `checkpoint` simulations, with the full
/// sample always as the last point.
pub fn convergence_series(
    ind: &PairedIndicators,
    checkpoint: usize,
) -> Result<Vec<ConvergencePoint>, MetricsError> {
    if checkpoint == 0 {
        return Err(MetricsError::ZeroCheckpoint);
    }
    let n_sim = ind.n_sim();
    let mut marks: Vec<usize> = (1..)
        .map(|k| k * checkpoint)
        .take_while(|&m| m < n_sim)
        .filter(|&m| m >= 2)
        .collect();
    marks.push(n_sim);
    marks
        .into_iter()
        .map(|m| {
            let sub = PairedIndicators {
                x: ind.x[..m].to_vec(),
                y: ind.y[..m].to_vec(),
                paired: ind.paired,
            };
            let s = summarize(&sub)?;
            Ok(ConvergencePoint {
                n: m,
                psi1: s.psi1.value,
                psi2: s.psi2.value,
                delta: s.delta,
                mcse_delta: s.mcse_delta,
            })
        })
        .collect()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:?}"))
}

/// Two-column `key<TAB>value` report of a summary plus caller metadata.
pub fn write_summary(summary: &ComparisonSummary, metadata: &[(&str, String)]) -> String {
    let mut out = String::from("field\tvalue\n");
    for (k, v) in metadata {
        writeln!(out, "{k}\t{v}").unwrap();
    }
    let rows: [(&str, String); 13] = [
        ("n_sim", summary.n_sim.to_string()),
        ("paired", summary.paired.to_string()),
        ("psi1", format!("{:?}", summary.psi1.value)),
        ("psi1_mcse", format!("{:?}", summary.psi1.mcse)),
        ("psi2", format!("{:?}", summary.psi2.value)),
        ("psi2_mcse", format!("{:?}", summary.psi2.mcse)),
        ("delta", format!("{:?}", summary.delta)),
        ("var_delta_cov", format!("{:?}", summary.var_delta_cov)),
        ("var_delta_diff", format!("{:?}", summary.var_delta_diff)),
        ("mcse_delta", format!("{:?}", summary.mcse_delta)),
        ("ci95_delta", format!("{:?}", 1.96 * summary.mcse_delta)),
        ("corr_xy", fmt_opt(summary.corr_xy)),
        ("relative_efficiency", fmt_opt(summary.relative_efficiency)),
    ];
    for (k, v) in rows {
        writeln!(out, "{k}\t{v}").unwrap();
    }
    out
}

pub fn write_convergence(series: &[ConvergencePoint]) -> String {
    let mut out = String::from("n\tpsi1\tpsi2\tdelta\tmcse_delta\tlower95\tupper95\n");
    for p in series {
        writeln!(
            out,
            "{}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}\t{:?}",
            p.n,
            p.psi1,
            p.psi2,
            p.delta,
            p.mcse_delta,
            p.delta - 1.96 * p.mcse_delta,
            p.delta + 1.96 * p.mcse_delta
        )
        .unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn psi_examples() {
        let e = estimate_psi(&[1, 1, 1, 1]).unwrap();
        assert_eq!((e.value, e.mcse), (1.0, 0.0));
        let e = estimate_psi(&[1, 0, 1, 0]).unwrap();
        assert_eq!(e.value, 0.5);
        // Sample variance 1/3, divided by 4.
        assert!((e.mcse - (1.0f64 / 12.0).sqrt()).abs() < 1e-15);
        assert!((e.mcse - 0.2887).abs() < 1e-4);
    }

    #[test]
    fn identical_indicators_have_zero_variance() {
        let x = vec![1, 0, 0, 1, 1, 0, 1];
        assert_eq!(var_delta_covariance(&x, &x, true).unwrap(), 0.0);
        assert_eq!(var_delta_difference(&x, &x).unwrap(), 0.0);
    }

    #[test]
    fn degenerate_correlation_is_flagged() {
        assert_eq!(indicator_correlation(&[1, 1, 1], &[0, 1, 0]).unwrap(), None);
        let ind = PairedIndicators::new(vec![1, 1, 1], vec![1, 1, 1], true).unwrap();
        let s = summarize(&ind).unwrap();
        assert_eq!(s.corr_xy, None);
        assert_eq!(s.mcse_delta, 0.0);
    }

    #[test]
    fn relative_efficiency_examples() {
        assert!((relative_efficiency(0.00661, 0.00117) - 31.9176).abs() < 1e-3);
        assert!((relative_efficiency(0.00599472, 0.004408828) - 1.8488).abs() < 1e-3);
        assert_eq!(relative_efficiency(0.3, 0.3), 1.0);
    }

    #[test]
    fn input_checks() {
        assert_eq!(
            PairedIndicators::new(vec![0, 2], vec![0, 1], true),
            Err(MetricsError::NotBinary(2))
        );
        assert_eq!(
            PairedIndicators::new(vec![0, 1, 1], vec![0, 1], true),
            Err(MetricsError::LengthMismatch(3, 2))
        );
        assert_eq!(
            estimate_psi(&[1]),
            Err(MetricsError::TooFew { need: 2, got: 1 })
        );
    }

    #[test]
    fn convergence_last_point_is_full_sample() {
        let x: Vec<u8> = (0..2500).map(|i| ((i * 7) % 3 == 0) as u8).collect();
        let y: Vec<u8> = (0..2500).map(|i| ((i * 5) % 4 == 0) as u8).collect();
        let ind = PairedIndicators::new(x, y, true).unwrap();
        let series = convergence_series(&ind, 1000).unwrap();
        assert_eq!(
            series.iter().map(|p| p.n).collect::<Vec<_>>(),
            vec![1000, 2000, 2500]
        );
        let full = summarize(&ind).unwrap();
        let last = series.last().unwrap();
        assert_eq!(
            (last.psi1, last.psi2, last.delta, last.mcse_delta),
            (
                full.psi1.value,
                full.psi2.value,
                full.delta,
                full.mcse_delta
            )
        );
    }

    proptest! {
        #[test]
        fn variance_forms_agree(pairs in prop::collection::vec((0u8..2, 0u8..2), 2..300)) {
            let (x, y): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            let a = var_delta_covariance(&x, &y, true).unwrap();
            let b = var_delta_difference(&x, &y).unwrap();
            prop_assert!(a >= -1e-15 && b >= 0.0);
            // Rounding in the covariance form scales with the terms that cancel.
            let terms = (sample_var(&x) + sample_var(&y)) / x.len() as f64;
            prop_assert!((a - b).abs() <= 1e-12 * terms.max(f64::MIN_POSITIVE), "{a} vs {b}");
        }

        #[test]
        fn positive_correlation_shrinks_variance(pairs in prop::collection::vec((0u8..2, 0u8..2), 3..200)) {
            let (x, y): (Vec<u8>, Vec<u8>) = pairs.into_iter().unzip();
            if let Some(r) = indicator_correlation(&x, &y).unwrap() {
                if r > 1e-9 {
                    prop_assert!(var_delta_covariance(&x, &y, true).unwrap() < var_delta_covariance(&x, &y, false).unwrap());
                }
            }
        }
    }
}
