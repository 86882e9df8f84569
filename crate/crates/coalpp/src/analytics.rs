//! Analytic predictions for the sampling statistics: linear growth rate and
//! CLT variance of the site count, exact finite-n spectrum expectations, the
//! per-k spectrum limits, the `n ln n` growth constant, the stable limit law
//! via its Laplace transform, and the allele (haplotype) limits.
//!
//! Closed forms are used where they exist; everything else goes through the
//! adaptive quadrature in [`crate::numerics`].

use crate::numerics::{self, QuadratureError};
use crate::scale::{BranchLength, Family, ModelError, ScaleModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalyticsError {
    #[error("CLT inapplicable: branch-length moments are infinite")]
    CltInapplicable,
    #[error("spectrum limit inapplicable: E min(H_1,H_2) is infinite for this model")]
    SpectrumLimitInapplicable,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Inputs echoed back with a prediction, for reporting.
#[derive(Debug, Clone, Default, Serialize)]
pub struct PredictionInputs {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ScaleModel>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    /// Scaling exponent 1/(α−1) for the heavy-tailed growth regime.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
}

/// One evaluated formula. `value` is `f64::INFINITY` for superlinear
/// regimes; closed forms carry `error_bound` 0.
#[derive(Debug, Clone, Serialize)]
pub struct AnalyticPrediction {
    pub value: f64,
    pub error_bound: f64,
    pub formula_id: &'static str,
    pub inputs: PredictionInputs,
}

impl AnalyticPrediction {
    fn closed(value: f64, formula_id: &'static str, inputs: PredictionInputs) -> Self {
        Self {
            value,
            error_bound: 0.0,
            formula_id,
            inputs,
        }
    }
}

const QUAD_TOL: f64 = 1e-10;

/// `lim S_n / n = θ·E(H)`; infinite when the mean branch length diverges.
pub fn limit_sites_rate(
    model: &ScaleModel,
    theta: f64,
) -> Result<AnalyticPrediction, AnalyticsError> {
    let inputs = PredictionInputs {
        model: Some(*model),
        theta: Some(theta),
        ..Default::default()
    };
    if theta == 0.0 {
        return Ok(AnalyticPrediction::closed(0.0, "sites_rate_limit", inputs));
    }
    let m = model.moments()?;
    let value = if m.mean.is_finite() {
        theta * m.mean
    } else {
        f64::INFINITY
    };
    Ok(AnalyticPrediction {
        value,
        error_bound: 0.0,
        formula_id: "sites_rate_limit",
        inputs,
    })
}

/// Variance of the Gaussian fluctuation of `S_n/√n`: `θ·E(H) + θ²·Var(H)`.
pub fn clt_variance(model: &ScaleModel, theta: f64) -> Result<AnalyticPrediction, AnalyticsError> {
    let m = model.moments()?;
    if !m.mean.is_finite() || !m.variance.is_finite() {
        return Err(AnalyticsError::CltInapplicable);
    }
    let inputs = PredictionInputs {
        model: Some(*model),
        theta: Some(theta),
        ..Default::default()
    };
    Ok(AnalyticPrediction::closed(
        theta * m.mean + theta * theta * m.variance,
        "clt_variance",
        inputs,
    ))
}

/// Exact `E S_n(k) = θ ∫ dx (1−1/W)^{k−1} ((n−k−1)/W² + 2/W)`; infinite
/// exactly when `E(H) = ∞`.
pub fn expected_site_count_exact(
    model: &ScaleModel,
    theta: f64,
    n: usize,
    k: usize,
) -> Result<AnalyticPrediction, AnalyticsError> {
    if n < 2 || k < 1 || k > n - 1 {
        return Err(AnalyticsError::InvalidArgument(format!(
            "need 1 <= k <= n-1, got k={k}, n={n}"
        )));
    }
    let inputs = PredictionInputs {
        model: Some(*model),
        theta: Some(theta),
        n: Some(n),
        k: Some(k),
        ..Default::default()
    };
    if !model.moments()?.mean.is_finite() {
        return Ok(AnalyticPrediction {
            value: f64::INFINITY,
            error_bound: 0.0,
            formula_id: "expected_site_count",
            inputs,
        });
    }
    let lead = (n - k - 1) as f64;
    let f = |x: f64| {
        // Out-of-domain x (at or past the horizon) has survival 0.
        let s = model.survival(x).unwrap_or(0.0);
        pow_one_minus(s, k) * (lead * s * s + 2.0 * s)
    };
    let tol = QUAD_TOL * n as f64;
    let r = match model.horizon() {
        Some(t) => numerics::integrate_finite(f, 0.0, t, tol, None)?,
        None => numerics::integrate_semi_infinite(f, tol, None)?,
    };
    Ok(AnalyticPrediction {
        value: theta * r.value,
        error_bound: theta * r.error_estimate,
        formula_id: "expected_site_count",
        inputs,
    })
}

/// `(1 - s)^{k-1}` in log space so large `k` does not underflow prematurely.
fn pow_one_minus(s: f64, k: usize) -> f64 {
    if k == 1 {
        1.0
    } else if s >= 1.0 {
        0.0
    } else {
        (((k - 1) as f64) * (-s).ln_1p()).exp()
    }
}

fn spectrum_inputs(model: &ScaleModel, theta: f64, k: usize) -> PredictionInputs {
    PredictionInputs {
        model: Some(*model),
        theta: Some(theta),
        k: Some(k),
        ..Default::default()
    }
}

fn check_spectrum_k(k: usize) -> Result<(), AnalyticsError> {
    if k < 1 {
        Err(AnalyticsError::InvalidArgument("k must be >= 1".into()))
    } else {
        Ok(())
    }
}

/// Is `∫ survival² dx` finite, the condition for the per-k spectrum limit?
/// Whether the per-k spectrum limit is finite for this model (it fails in
/// the heavy-tail regime, where the site count grows superlinearly).
pub fn spectrum_limit_applies(model: &ScaleModel) -> bool {
    if model.horizon().is_some() {
        return true;
    }
    match model.family() {
        Family::Yule { .. } | Family::CriticalBd { .. } => true,
        // Untruncated subcritical survival has a positive limit at infinity.
        Family::BirthDeath { b, d } => b > d,
        // survival ~ x^{-(α-1)}: square-integrable iff α > 3/2.
        Family::Stable { alpha, .. } => alpha > 1.5,
    }
}

/// `lim S_n(k)/n = θ ∫ dx W^{-2}(1−1/W)^{k−1}`, closed form where available.
pub fn limit_site_spectrum(
    model: &ScaleModel,
    theta: f64,
    k: usize,
) -> Result<AnalyticPrediction, AnalyticsError> {
    check_spectrum_k(k)?;
    if !spectrum_limit_applies(model) {
        return Err(AnalyticsError::SpectrumLimitInapplicable);
    }
    let inputs = spectrum_inputs(model, theta, k);
    if model.horizon().is_none() {
        let kf = k as f64;
        match model.family() {
            Family::Yule { a } => {
                return Ok(AnalyticPrediction::closed(
                    theta / (a * kf * (kf + 1.0)),
                    "site_spectrum_limit",
                    inputs,
                ));
            }
            Family::CriticalBd { a } => {
                return Ok(AnalyticPrediction::closed(
                    theta / (a * kf),
                    "site_spectrum_limit",
                    inputs,
                ));
            }
            _ => {}
        }
    }
    limit_site_spectrum_quadrature(model, theta, k)
}

/// Quadrature route for the spectrum limit, exposed so the closed forms can
/// be cross-checked through the generic path.
pub fn limit_site_spectrum_quadrature(
    model: &ScaleModel,
    theta: f64,
    k: usize,
) -> Result<AnalyticPrediction, AnalyticsError> {
    check_spectrum_k(k)?;
    if !spectrum_limit_applies(model) {
        return Err(AnalyticsError::SpectrumLimitInapplicable);
    }
    let f = |x: f64| {
        let s = model.survival(x).unwrap_or(0.0);
        s * s * pow_one_minus(s, k)
    };
    let r = match model.horizon() {
        Some(t) => numerics::integrate_finite(f, 0.0, t, QUAD_TOL, None)?,
        None => {
            let hint = match model.family() {
                Family::Stable { alpha, .. } => Some(2.0 * (alpha - 1.0)),
                Family::CriticalBd { .. } => Some(2.0),
                _ => None,
            };
            numerics::integrate_semi_infinite(f, QUAD_TOL, hint)?
        }
    };
    Ok(AnalyticPrediction {
        value: theta * r.value,
        error_bound: theta * r.error_estimate,
        formula_id: "site_spectrum_limit",
        inputs: spectrum_inputs(model, theta, k),
    })
}

/// Monte Carlo evaluation of the equivalent order-statistic expression
/// `θ·E (min{H_1,H_{k+1}} − max{H_2,…,H_k})⁺`; returns (estimate, stderr).
pub fn limit_site_spectrum_mc_form(
    model: &ScaleModel,
    theta: f64,
    k: usize,
    seed: u64,
    reps: usize,
) -> Result<(f64, f64), AnalyticsError> {
    check_spectrum_k(k)?;
    if reps == 0 {
        return Err(AnalyticsError::InvalidArgument("reps must be >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> f64 {
        let mut u: f64 = rng.gen();
        while u <= 0.0 {
            u = rng.gen();
        }
        match model.sample_branch_length(u) {
            BranchLength::Finite(h) => h,
            BranchLength::Infinite => f64::INFINITY,
        }
    };
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for _ in 0..reps {
        let first = draw(&mut rng);
        let mut inner_max = 0.0f64;
        for _ in 2..=k {
            inner_max = inner_max.max(draw(&mut rng));
        }
        let last = draw(&mut rng);
        let low = first.min(last);
        let v = if low.is_infinite() {
            f64::INFINITY
        } else {
            (low - inner_max).max(0.0)
        };
        sum += v;
        sum_sq += v * v;
    }
    let mean = sum / reps as f64;
    let var = (sum_sq / reps as f64 - mean * mean).max(0.0);
    Ok((theta * mean, theta * (var / reps as f64).sqrt()))
}

/// `lim S_n/(n ln n) = θ/c` for the linear scale functions `W = 1 + cx`
/// (critical birth–death with `c = a`, or the heavy-tail boundary α = 2).
pub fn brownian_growth_constant(
    model: &ScaleModel,
    theta: f64,
) -> Result<AnalyticPrediction, AnalyticsError> {
    if model.horizon().is_some() {
        return Err(AnalyticsError::InvalidArgument(
            "n ln n growth requires an untruncated linear scale function".into(),
        ));
    }
    let c = match model.family() {
        Family::CriticalBd { a } => a,
        Family::Stable { alpha, c } if alpha == 2.0 => c,
        other => {
            return Err(AnalyticsError::InvalidArgument(format!(
                "n ln n growth requires W = 1 + cx, got {other:?}"
            )));
        }
    };
    let inputs = PredictionInputs {
        model: Some(*model),
        theta: Some(theta),
        c: Some(c),
        ..Default::default()
    };
    Ok(AnalyticPrediction::closed(
        theta / c,
        "growth_constant",
        inputs,
    ))
}

/// `φ(x) = x^{1−α} e^{−x} + ∫_0^x s^{1−α} e^{−s} ds`, for α ∈ (1,2).
/// Strictly decreasing with limit Γ(2−α) at infinity.
pub fn phi(alpha: f64, x: f64) -> Result<f64, AnalyticsError> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return Err(AnalyticsError::InvalidArgument(format!(
            "alpha must lie in (1,2), got {alpha}"
        )));
    }
    if !(x > 0.0) {
        return Err(AnalyticsError::InvalidArgument(format!(
            "x must be positive, got {x}"
        )));
    }
    let r = numerics::integrate_finite(
        |s: f64| s.powf(1.0 - alpha) * (-s).exp(),
        0.0,
        x,
        1e-12,
        Some(1.0 - alpha),
    )?;
    Ok(x.powf(1.0 - alpha) * (-x).exp() + r.value)
}

/// Limit Laplace transform `lim E exp(−λ S_n / n^β)`, β = 1/(α−1):
/// `∫_0^∞ dv e^{−v} exp(−c^{−1} θ^{α−1} λ^{α−1} φ(v))`.
pub fn stable_laplace_transform(
    alpha: f64,
    c: f64,
    theta: f64,
    lambda: f64,
) -> Result<AnalyticPrediction, AnalyticsError> {
    if !(alpha > 1.0 && alpha < 2.0) || !(c > 0.0) || !(theta > 0.0) || !(lambda >= 0.0) {
        return Err(AnalyticsError::InvalidArgument(format!(
            "need alpha in (1,2), c > 0, theta > 0, lambda >= 0; got \
             alpha={alpha}, c={c}, theta={theta}, lambda={lambda}"
        )));
    }
    let inputs = PredictionInputs {
        theta: Some(theta),
        lambda: Some(lambda),
        alpha: Some(alpha),
        c: Some(c),
        beta: Some(1.0 / (alpha - 1.0)),
        ..Default::default()
    };
    if lambda == 0.0 {
        return Ok(AnalyticPrediction::closed(1.0, "stable_laplace", inputs));
    }
    let kappa = theta.powf(alpha - 1.0) * lambda.powf(alpha - 1.0) / c;
    let f = |v: f64| {
        let p = phi(alpha, v).unwrap_or(f64::NAN);
        (-v).exp() * (-kappa * p).exp()
    };
    let r = numerics::integrate_semi_infinite(f, 1e-9, None)?;
    Ok(AnalyticPrediction {
        value: r.value,
        error_bound: r.error_estimate,
        formula_id: "stable_laplace",
        inputs,
    })
}

/// Allele-limit integral `∫ dx θe^{−θx} g(1/W_θ(x))` over the branch-length
/// support. The `θe^{−θx}` weight makes the tail exponential for every
/// family, so the semi-infinite route converges without hints.
fn allele_integral(
    model: &ScaleModel,
    theta: f64,
    g: impl Fn(f64) -> f64,
) -> Result<numerics::QuadratureResult, AnalyticsError> {
    let f = |x: f64| {
        let w = model.w_theta(theta, x);
        theta * (-theta * x).exp() * g(1.0 / w)
    };
    let run = |tol: f64| match model.horizon() {
        Some(t) => numerics::integrate_finite(&f, 0.0, t, tol, None),
        None => numerics::integrate_semi_infinite(&f, tol, None),
    };
    let mut r = run(QUAD_TOL)?;
    // Tiny tail terms (large k) need relative rather than absolute accuracy,
    // otherwise k-weighted normalization sums accumulate the slack.
    let rel_tol = (r.value.abs() * 1e-9).max(1e-16);
    if r.value != 0.0 && rel_tol < QUAD_TOL {
        r = run(rel_tol)?;
    }
    Ok(r)
}

/// `lim A_n/n = ∫ dx θe^{−θx} / W_θ(x)`, the fraction of distinct haplotypes.
pub fn limit_allele_fraction(
    model: &ScaleModel,
    theta: f64,
) -> Result<AnalyticPrediction, AnalyticsError> {
    if theta < 0.0 {
        return Err(AnalyticsError::InvalidArgument("theta must be >= 0".into()));
    }
    let inputs = PredictionInputs {
        model: Some(*model),
        theta: Some(theta),
        ..Default::default()
    };
    if theta == 0.0 {
        return Ok(AnalyticPrediction::closed(0.0, "allele_fraction_limit", inputs));
    }
    if model.horizon().is_none() {
        if let Family::CriticalBd { a } = model.family() {
            let r = a / theta;
            return Ok(AnalyticPrediction::closed(
                r.ln_1p() / r,
                "allele_fraction_limit",
                inputs,
            ));
        }
    }
    limit_allele_fraction_quadrature(model, theta)
}

/// Generic quadrature route for the haplotype fraction.
pub fn limit_allele_fraction_quadrature(
    model: &ScaleModel,
    theta: f64,
) -> Result<AnalyticPrediction, AnalyticsError> {
    if !(theta > 0.0) {
        return Err(AnalyticsError::InvalidArgument("theta must be > 0".into()));
    }
    let r = allele_integral(model, theta, |s| s)?;
    Ok(AnalyticPrediction {
        value: r.value,
        error_bound: r.error_estimate,
        formula_id: "allele_fraction_limit",
        inputs: PredictionInputs {
            model: Some(*model),
            theta: Some(theta),
            ..Default::default()
        },
    })
}

/// `lim A_n(k)/n = ∫ dx θe^{−θx} W_θ^{-2} (1−1/W_θ)^{k−1}`.
pub fn limit_allele_spectrum(
    model: &ScaleModel,
    theta: f64,
    k: usize,
) -> Result<AnalyticPrediction, AnalyticsError> {
    check_spectrum_k(k)?;
    if !(theta > 0.0) {
        return Err(AnalyticsError::InvalidArgument("theta must be > 0".into()));
    }
    if model.horizon().is_none() {
        if let Family::CriticalBd { a } = model.family() {
            let kf = k as f64;
            let value = theta / (a * kf) * (a / (a + theta)).powi(k as i32);
            return Ok(AnalyticPrediction::closed(
                value,
                "allele_spectrum_limit",
                spectrum_inputs(model, theta, k),
            ));
        }
    }
    limit_allele_spectrum_quadrature(model, theta, k)
}

/// Generic quadrature route for the per-k haplotype limit.
pub fn limit_allele_spectrum_quadrature(
    model: &ScaleModel,
    theta: f64,
    k: usize,
) -> Result<AnalyticPrediction, AnalyticsError> {
    check_spectrum_k(k)?;
    if !(theta > 0.0) {
        return Err(AnalyticsError::InvalidArgument("theta must be > 0".into()));
    }
    let r = allele_integral(model, theta, |s| s * s * pow_one_minus(s, k))?;
    Ok(AnalyticPrediction {
        value: r.value,
        error_bound: r.error_estimate,
        formula_id: "allele_spectrum_limit",
        inputs: spectrum_inputs(model, theta, k),
    })
}
