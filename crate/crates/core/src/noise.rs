//! Power-law ("coloured") noise with spectral density ∝ 1/f^ω.
//!
//! Sequences are synthesised in the frequency domain: complex Gaussian
//! coefficients scaled by `f^(−ω/2)` (zero at f = 0), an inverse FFT, and an
//! explicit standardisation to zero mean and unit variance.

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::sim::Action;

/// Spectral exponent used for all action sampling.
pub const DEFAULT_OMEGA: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseConfig {
    pub omega: f64,
    pub horizon: usize,
    pub dims: usize,
}

impl NoiseConfig {
    pub fn new(omega: f64, horizon: usize, dims: usize) -> Self {
        Self { omega, horizon, dims }
    }

    fn validate(&self) {
        assert!(self.omega >= 0.0 && self.omega.is_finite(), "omega must be finite and >= 0");
        assert!(self.horizon >= 1, "horizon must be >= 1");
    }
}

/// One standardised, unclipped coloured sequence of length `n`.
///
/// Lengths below 2 are synthesised at length 2 and truncated.
pub fn colored_sequence(omega: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let len = n.max(2);
    let mut spectrum = vec![Complex::new(0.0, 0.0); len];
    let half = len / 2;
    for k in 1..=half {
        let f = k as f64 / len as f64;
        let amp = f.powf(-omega / 2.0);
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = if 2 * k == len { 0.0 } else { rng.sample(StandardNormal) };
        let re = if 2 * k == len { re * std::f64::consts::SQRT_2 } else { re };
        spectrum[k] = Complex::new(amp * re, amp * im);
        if k != len - k {
            spectrum[len - k] = spectrum[k].conj();
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(len).process(&mut spectrum);
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re).collect();
    standardize(&mut out);
    out.truncate(n);
    out
}

/// One coloured sequence of length `n` with unit *expected* variance.
///
/// Unlike [`colored_sequence`] the zero-frequency bin carries a random real
/// coefficient at the lowest non-zero frequency's amplitude and the output is
/// scaled by the ensemble standard deviation, so the sample mean of a short
/// sequence fluctuates. Perturbations for sampling-based optimisation need
/// that: with an exactly zero-mean perturbation every candidate shares the
/// time-average of the current mean and the optimiser could never move it.
pub fn colored_sequence_ensemble(omega: f64, n: usize, rng: &mut impl Rng) -> Vec<f64> {
    let len = n.max(2);
    let mut spectrum = vec![Complex::new(0.0, 0.0); len];
    let half = len / 2;
    let amp_of = |k: usize| (k.max(1) as f64 / len as f64).powf(-omega / 2.0);
    let mut power = 0.0;
    for k in 0..=half {
        let amp = amp_of(k);
        let real_only = k == 0 || 2 * k == len;
        let re: f64 = rng.sample(StandardNormal);
        if real_only {
            spectrum[k] = Complex::new(amp * re * std::f64::consts::SQRT_2, 0.0);
            power += 2.0 * amp * amp;
        } else {
            let im: f64 = rng.sample(StandardNormal);
            spectrum[k] = Complex::new(amp * re, amp * im);
            spectrum[len - k] = spectrum[k].conj();
            power += 4.0 * amp * amp;
        }
    }
    let mut planner = FftPlanner::new();
    planner.plan_fft_inverse(len).process(&mut spectrum);
    let inv = power.sqrt().recip();
    let mut out: Vec<f64> = spectrum.iter().map(|c| c.re * inv).collect();
    out.truncate(n);
    out
}

fn standardize(x: &mut [f64]) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    x.iter_mut().for_each(|v| *v -= mean);
    let var = x.iter().map(|v| v * v).sum::<f64>() / n;
    if var > 0.0 {
        let inv = var.sqrt().recip();
        x.iter_mut().for_each(|v| *v *= inv);
    }
}

/// `horizon × dims` standardised samples without clipping, per-dimension independent.
pub fn sample_colored_unclipped(cfg: &NoiseConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    cfg.validate();
    let columns: Vec<Vec<f64>> = (0..cfg.dims)
        .map(|_| colored_sequence(cfg.omega, cfg.horizon, rng))
        .collect();
    (0..cfg.horizon)
        .map(|t| columns.iter().map(|c| c[t]).collect())
        .collect()
}

/// `horizon × dims` samples clipped to `[−1, 1]`.
pub fn sample_colored(cfg: &NoiseConfig, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut out = sample_colored_unclipped(cfg, rng);
    for row in &mut out {
        row.iter_mut().for_each(|v| *v = v.clamp(-1.0, 1.0));
    }
    out
}

/// A coloured action sequence in `[−1, 1]²`.
pub fn sample_actions(omega: f64, horizon: usize, rng: &mut impl Rng) -> Vec<Action> {
    if horizon == 0 {
        return Vec::new();
    }
    sample_colored(&NoiseConfig::new(omega, horizon, 2), rng)
        .into_iter()
        .map(|r| Action::new(r[0], r[1]))
        .collect()
}

/// Least-squares slope of the log-log periodogram over the decade of
/// frequency bins centred (geometrically) in `1..=n/2`.
///
/// Each input sequence contributes one periodogram; they are averaged before
/// fitting.
pub fn periodogram_slope(sequences: &[Vec<f64>]) -> f64 {
    let n = sequences[0].len();
    let half = n / 2;
    let mut power = vec![0.0; half + 1];
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(n);
    for seq in sequences {
        assert_eq!(seq.len(), n);
        let mut buf: Vec<Complex<f64>> = seq.iter().map(|&v| Complex::new(v, 0.0)).collect();
        fft.process(&mut buf);
        for k in 1..=half {
            power[k] += buf[k].norm_sqr();
        }
    }
    let center = (half as f64).sqrt();
    let lo = (center / 10f64.sqrt()).ceil().max(1.0) as usize;
    let hi = ((center * 10f64.sqrt()).floor() as usize).min(half);
    let pts: Vec<(f64, f64)> = (lo..=hi)
        .map(|k| ((k as f64 / n as f64).ln(), power[k].ln()))
        .collect();
    let m = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / m;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / m;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pre_clip_samples_are_standardized() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &n in &[2usize, 3, 17, 100, 1024] {
            let x = colored_sequence(0.5, n, &mut rng);
            let mean = x.iter().sum::<f64>() / n as f64;
            let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
            assert!(mean.abs() < 1e-9, "n={n} mean={mean}");
            assert!((var - 1.0).abs() < 1e-9, "n={n} var={var}");
        }
    }

    #[test]
    fn white_noise_has_no_lag_one_correlation() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let x = colored_sequence(0.0, 10_000, &mut rng);
        let r1: f64 = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (x.len() - 1) as f64;
        assert!(r1.abs() < 0.05, "lag-1 autocorrelation {r1}");
    }

    #[test]
    fn clipped_output_stays_in_range_and_is_seeded() {
        let cfg = NoiseConfig::new(0.5, 300, 2);
        let a = sample_colored(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        let b = sample_colored(&cfg, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert_eq!(a.len(), 300);
        assert!(a.iter().flatten().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn ensemble_sequences_have_unit_expected_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (n, reps) = (25, 4000);
        let (mut sq, mut mean_sq) = (0.0, 0.0);
        for _ in 0..reps {
            let x = colored_sequence_ensemble(0.5, n, &mut rng);
            sq += x.iter().map(|v| v * v).sum::<f64>() / n as f64;
            mean_sq += (x.iter().sum::<f64>() / n as f64).powi(2);
        }
        let var = sq / reps as f64;
        assert!((var - 1.0).abs() < 0.03, "ensemble variance {var}");
        // The time-average is free to move; for white noise it would be 1/n.
        assert!(mean_sq / reps as f64 > 1.0 / n as f64, "{}", mean_sq / reps as f64);
    }

    #[test]
    fn horizon_one_is_supported() {
        let acts = sample_actions(0.5, 1, &mut ChaCha8Rng::seed_from_u64(4));
        assert_eq!(acts.len(), 1);
        assert!(sample_actions(0.5, 0, &mut ChaCha8Rng::seed_from_u64(4)).is_empty());
    }
}
