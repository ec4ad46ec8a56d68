//! Percentiles and the Wilcoxon signed-rank test.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Largest sample size (after dropping zeros) that uses the exact null distribution.
pub const WILCOXON_EXACT_MAX: usize = 25;

/// Linear-interpolation percentile with inclusive endpoints, `q ∈ [0, 1]`.
pub fn percentile(data: &[f64], q: f64) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidInput("percentile of empty data".into()));
    }
    if !(0.0..=1.0).contains(&q) {
        return Err(Error::InvalidInput(format!("percentile level {q} outside [0, 1]")));
    }
    let mut v = data.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(percentile_sorted(&v, q))
}

pub(crate) fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Number of non-zero differences.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

/// Average ranks of `|d|`, ties sharing the mean rank.
fn ranks(abs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..abs.len()).collect();
    idx.sort_by(|&a, &b| abs[a].total_cmp(&abs[b]));
    let mut out = vec![0.0; abs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && abs[idx[j + 1]] == abs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

/// Exact two-sided p-value: `P(min(W+, W−) ≤ observed)` doubled, by dynamic
/// programming over doubled ranks (integers even with half-rank ties).
fn exact_p(doubled: &[usize], w_small_doubled: usize) -> f64 {
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in doubled {
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let all = 2f64.powi(doubled.len() as i32);
    let tail: f64 = counts[..=w_small_doubled.min(total)].iter().sum();
    (2.0 * tail / all).min(1.0)
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided Wilcoxon signed-rank test on paired samples.
///
/// Zero differences are dropped. With no non-zero differences the test is
/// undefined and reported as `p = 1`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::InvalidInput("paired samples differ in length".into()));
    }
    if a.len() < 5 {
        return Err(Error::InvalidInput("signed-rank test needs at least 5 pairs".into()));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|v| *v != 0.0).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite difference".into()));
    }
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            n: 0,
            w_plus: 0.0,
            w_minus: 0.0,
            p_value: 1.0,
            exact: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let r = ranks(&abs);
    let w_plus: f64 = d.iter().zip(&r).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let w_minus: f64 = d.iter().zip(&r).filter(|(v, _)| **v < 0.0).map(|(_, r)| r).sum();
    let w_small = w_plus.min(w_minus);
    if n <= WILCOXON_EXACT_MAX {
        let doubled: Vec<usize> = r.iter().map(|v| (2.0 * v).round() as usize).collect();
        let p = exact_p(&doubled, (2.0 * w_small).round() as usize);
        return Ok(WilcoxonResult {
            n,
            w_plus,
            w_minus,
            p_value: p,
            exact: true,
        });
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
    let p = if var > 0.0 {
        let z = (w_small - mean) / var.sqrt();
        (2.0 * normal_sf(z.abs())).min(1.0)
    } else {
        1.0
    };
    Ok(WilcoxonResult {
        n,
        w_plus,
        w_minus,
        p_value: p,
        exact: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn percentile_examples() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.5).unwrap(), 3.0);
        assert_eq!(percentile(&[7.5], 0.3).unwrap(), 7.5);
        let v: Vec<f64> = (0..100).map(f64::from).collect();
        assert!((percentile(&v, 0.2).unwrap() - 19.8).abs() < 1e-12);
        assert!(percentile(&[], 0.5).is_err());
    }

    #[test]
    fn ties_share_mean_rank() {
        assert_eq!(ranks(&[1.0, 2.0, 2.0, 3.0]), vec![1.0, 2.5, 2.5, 4.0]);
    }

    #[test]
    fn all_positive_five() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let r = wilcoxon_signed_rank(&a, &[0.0; 5]).unwrap();
        assert_eq!(r.w_minus, 0.0);
        assert!((r.p_value - 0.0625).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_give_p_one() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        assert_eq!(wilcoxon_signed_rank(&a, &a).unwrap().p_value, 1.0);
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let a: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin() + 0.4).collect();
        let r = wilcoxon_signed_rank(&a, &vec![0.0; 40]).unwrap();
        assert!(!r.exact);
        assert!(r.p_value > 0.0 && r.p_value < 0.05);
    }
}
