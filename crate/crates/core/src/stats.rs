//! Small numerical helpers shared by the generator and the designs.

use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `P(X <= x)` for `X ~ Beta(a, b)`.
pub fn beta_cdf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else if x >= 1.0 {
        1.0
    } else {
        beta_reg(a, b, x)
    }
}

/// `P(X > x)` for `X ~ Beta(a, b)`, evaluated through the reflected tail so
/// small upper-tail probabilities keep their precision.
pub fn beta_sf(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        1.0
    } else if x >= 1.0 {
        0.0
    } else {
        beta_reg(b, a, 1.0 - x)
    }
}

/// Beta(1 + successes, 1 + failures) posterior probability that the rate
/// exceeds `threshold`.
pub fn posterior_prob_above(n: u32, y: u32, threshold: f64) -> f64 {
    debug_assert!(y <= n);
    beta_sf(1.0 + y as f64, 1.0 + (n - y) as f64, threshold)
}

/// Beta(1 + successes, 1 + failures) posterior probability that the rate is
/// below `threshold`.
pub fn posterior_prob_below(n: u32, y: u32, threshold: f64) -> f64 {
    debug_assert!(y <= n);
    beta_cdf(1.0 + y as f64, 1.0 + (n - y) as f64, threshold)
}

/// Pool-adjacent-violators fit of a non-decreasing sequence.
pub fn isotonic_fit(values: &[f64], weights: &[f64]) -> Vec<f64> {
    assert_eq!(values.len(), weights.len());
    // (mean, weight, count)
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(values.len());
    for (&v, &w) in values.iter().zip(weights) {
        blocks.push((v, w, 1));
        while blocks.len() > 1 {
            let (m2, w2, c2) = blocks[blocks.len() - 1];
            let (m1, w1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            let w = w1 + w2;
            let m = if w > 0.0 {
                (m1 * w1 + m2 * w2) / w
            } else {
                0.5 * (m1 + m2)
            };
            blocks.truncate(blocks.len() - 2);
            blocks.push((m, w, c1 + c2));
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, c)| std::iter::repeat_n(m, c))
        .collect()
}
