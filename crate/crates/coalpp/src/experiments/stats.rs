//! Statistical helpers for the experiment harness: goodness-of-fit
//! statistics, variance intervals, and robust summaries.

use statrs::distribution::{ChiSquared, ContinuousCDF};

/// One-sample Kolmogorov–Smirnov statistic against a model survival
/// function. `values` need not be sorted.
pub fn ks_one_sample(values: &[f64], survival: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len() as f64;
    // Defective hypotheses put an atom at +∞; matching sample points count
    // toward the denominator but contribute no step on the real line.
    let finite = sorted.iter().filter(|x| x.is_finite()).count();
    let mut d = 0.0f64;
    for (i, &x) in sorted.iter().take(finite).enumerate() {
        let cdf = 1.0 - survival(x);
        let lo = i as f64 / m;
        let hi = (i + 1) as f64 / m;
        d = d.max((cdf - lo).abs()).max((hi - cdf).abs());
    }
    if finite < sorted.len() {
        let tail_cdf = 1.0 - survival(f64::INFINITY);
        d = d.max((tail_cdf - finite as f64 / m).abs());
    }
    d
}

/// Asymptotic 1% critical value for the one-sample KS statistic.
pub fn ks_one_sample_threshold(m: usize) -> f64 {
    1.63 / (m as f64).sqrt()
}

/// Two-sample Kolmogorov–Smirnov statistic.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0f64;
    while i < a.len() && j < b.len() {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    d
}

/// Asymptotic 1% critical value for the two-sample KS statistic.
pub fn ks_two_sample_threshold(m: usize, n: usize) -> f64 {
    1.628 * ((m + n) as f64 / (m as f64 * n as f64)).sqrt()
}

/// Two-sided `level` (e.g. 0.99) chi-square acceptance interval for the
/// sample variance of `reps` draws from a normal with variance `sigma_sq`.
pub fn variance_interval(sigma_sq: f64, reps: usize, level: f64) -> (f64, f64) {
    let df = (reps - 1) as f64;
    let chi = ChiSquared::new(df).expect("df > 0");
    let tail = (1.0 - level) / 2.0;
    (
        sigma_sq * chi.inverse_cdf(tail) / df,
        sigma_sq * chi.inverse_cdf(1.0 - tail) / df,
    )
}

/// Mean and standard error of the mean.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample variance (unbiased) and skewness (standardized third moment).
pub fn variance_skewness(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let m2 = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let m3 = values.iter().map(|v| (v - mean).powi(3)).sum::<f64>() / n;
    (m2 * n / (n - 1.0), m3 / m2.powf(1.5))
}

pub fn median(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    if m % 2 == 1 {
        sorted[m / 2]
    } else {
        0.5 * (sorted[m / 2 - 1] + sorted[m / 2])
    }
}

/// Lag-1 sample autocorrelation.
pub fn lag1_correlation(values: &[f64]) -> f64 {
    if values.len() < 3 {
        return 0.0;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let denom: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    if denom == 0.0 {
        return 0.0;
    }
    let num: f64 = values
        .windows(2)
        .map(|w| (w[0] - mean) * (w[1] - mean))
        .sum();
    num / denom
}
