//! Scale functions of the branch-length law.
//!
//! A coalescent point process is described by its scale function `W`, with
//! `P(H > x) = 1 / W(x)`. Four families are supported, each with closed-form
//! `W`, derivative, inverse and census transform:
//!
//! * `Yule(a)`          — `W(x) = e^{ax}`
//! * `BirthDeath(b, d)` — `W(x) = (d - b e^{(b-d)x}) / (d - b)`, `b != d`
//! * `CriticalBd(a)`    — `W(x) = 1 + ax`
//! * `Stable(alpha, c)` — `W(x) = 1 + c x^{alpha-1}`, `alpha` in `(1, 2]`
//!
//! A model may carry a truncation horizon `t`, in which case the branch law
//! is `H | H < t` and the survival function is renormalized accordingly.
//!
//! Note on the census transform: closing the birth-death family under
//! Bernoulli census requires admitting death rates `d <= 0`. The scale
//! function `(d - b e^{(b-d)x})/(d - b)` remains a valid survival reciprocal
//! for any `d < b`, and the censused Yule model `W_c = 1 - c + c e^{ax}` is
//! exactly `BirthDeath(ac, a(c-1))`.

use crate::numerics::{self, QuadratureError};
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model parameter: {0}")]
    InvalidParameter(String),
    #[error("argument out of domain: {0}")]
    OutOfDomain(String),
    #[error("operation requires an untruncated subcritical birth-death model")]
    NotSubcriticalBirthDeath,
    #[error("invalid census probability {0}")]
    InvalidCensusProbability(f64),
    #[error("cannot parse model spec '{0}'")]
    Parse(String),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// A branch length, possibly infinite (defective laws only).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BranchLength {
    Finite(f64),
    Infinite,
}

impl BranchLength {
    pub fn finite(self) -> Option<f64> {
        match self {
            BranchLength::Finite(x) => Some(x),
            BranchLength::Infinite => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Family {
    Yule { a: f64 },
    BirthDeath { b: f64, d: f64 },
    CriticalBd { a: f64 },
    Stable { alpha: f64, c: f64 },
}

/// `W(x)`, `W'(x)` and the survival probability `P(H > x)` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub w: f64,
    pub w_prime: f64,
    pub survival: f64,
}

/// Mean and variance of the branch length; `f64::INFINITY` marks divergence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleModel {
    family: Family,
    horizon: Option<f64>,
}

impl ScaleModel {
    pub fn yule(a: f64) -> Result<Self, ModelError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("yule rate a = {a}")));
        }
        Ok(Self {
            family: Family::Yule { a },
            horizon: None,
        })
    }

    /// Birth-death model with birth rate `b > 0` and death rate `d != b`.
    /// `d <= 0` is admitted so the family is closed under Bernoulli census.
    pub fn birth_death(b: f64, d: f64) -> Result<Self, ModelError> {
        if !(b > 0.0 && b.is_finite() && d.is_finite() && b != d) {
            return Err(ModelError::InvalidParameter(format!(
                "birth-death rates b = {b}, d = {d}"
            )));
        }
        Ok(Self {
            family: Family::BirthDeath { b, d },
            horizon: None,
        })
    }

    pub fn critical(a: f64) -> Result<Self, ModelError> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "critical rate a = {a}"
            )));
        }
        Ok(Self {
            family: Family::CriticalBd { a },
            horizon: None,
        })
    }

    pub fn stable(alpha: f64, c: f64) -> Result<Self, ModelError> {
        if !(alpha > 1.0 && alpha <= 2.0 && c > 0.0 && c.is_finite()) {
            return Err(ModelError::InvalidParameter(format!(
                "stable parameters alpha = {alpha}, c = {c}"
            )));
        }
        Ok(Self {
            family: Family::Stable { alpha, c },
            horizon: None,
        })
    }

    /// Truncate the branch law to `H | H < t`.
    pub fn with_horizon(mut self, t: f64) -> Result<Self, ModelError> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(ModelError::InvalidParameter(format!("horizon t = {t}")));
        }
        self.horizon = Some(t);
        Ok(self)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn horizon(&self) -> Option<f64> {
        self.horizon
    }

    /// Raw family `W(x)`, ignoring any horizon.
    pub fn w(&self, x: f64) -> f64 {
        match self.family {
            Family::Yule { a } => (a * x).exp(),
            Family::BirthDeath { b, d } => (d - b * ((b - d) * x).exp()) / (d - b),
            Family::CriticalBd { a } => 1.0 + a * x,
            Family::Stable { alpha, c } => 1.0 + c * x.powf(alpha - 1.0),
        }
    }

    /// Raw family `W'(x)`, ignoring any horizon.
    pub fn w_prime(&self, x: f64) -> f64 {
        match self.family {
            Family::Yule { a } => a * (a * x).exp(),
            Family::BirthDeath { b, d } => b * ((b - d) * x).exp(),
            Family::CriticalBd { a } => a,
            Family::Stable { alpha, c } => c * (alpha - 1.0) * x.powf(alpha - 2.0),
        }
    }

    /// Closed-form inverse of the family `W`: returns `x` with `W(x) = w`.
    fn w_inverse(&self, w: f64) -> f64 {
        debug_assert!(w >= 1.0);
        match self.family {
            Family::Yule { a } => w.ln() / a,
            Family::BirthDeath { b, d } => ((d - w * (d - b)) / b).ln() / (b - d),
            Family::CriticalBd { a } => (w - 1.0) / a,
            Family::Stable { alpha, c } => ((w - 1.0) / c).powf(1.0 / (alpha - 1.0)),
        }
    }

    /// `W`, `W'` and the survival `P(H > x)` at `x`.
    ///
    /// For truncated models the survival is the conditional
    /// `(1/W(x) - 1/W(t)) / (1 - 1/W(t))`.
    pub fn evaluate(&self, x: f64) -> Result<Evaluation, ModelError> {
        if !(x >= 0.0) {
            return Err(ModelError::OutOfDomain(format!("x = {x} < 0")));
        }
        if let Some(t) = self.horizon {
            if x >= t {
                return Err(ModelError::OutOfDomain(format!(
                    "x = {x} at or above horizon {t}"
                )));
            }
        }
        Ok(Evaluation {
            w: self.w(x),
            w_prime: self.w_prime(x),
            survival: self.survival_unchecked(x),
        })
    }

    fn survival_unchecked(&self, x: f64) -> f64 {
        let raw = 1.0 / self.w(x);
        match self.horizon {
            None => raw,
            Some(t) => {
                let st = 1.0 / self.w(t);
                (raw - st) / (1.0 - st)
            }
        }
    }

    /// `P(H > x)`; domain-checked.
    pub fn survival(&self, x: f64) -> Result<f64, ModelError> {
        self.evaluate(x).map(|e| e.survival)
    }

    /// Probability that the branch length is infinite.
    pub fn defect_mass(&self) -> f64 {
        if self.horizon.is_some() {
            return 0.0;
        }
        match self.family {
            Family::BirthDeath { b, d } if d > 0.0 && b < d => 1.0 - b / d,
            _ => 0.0,
        }
    }

    /// Replace an untruncated subcritical birth-death law by the law of its
    /// branch length conditioned to be finite: `BirthDeath(d, b)`.
    pub fn condition_finite(&self) -> Result<Self, ModelError> {
        match (self.family, self.horizon) {
            (Family::BirthDeath { b, d }, None) if d > 0.0 && b < d => Self::birth_death(d, b),
            _ => Err(ModelError::NotSubcriticalBirthDeath),
        }
    }

    /// Bernoulli census with retention probability (or, for the stable
    /// family, intensity) `p`. The transformed scale function is
    /// `W_p = 1 - p + p W` and every family maps back into the family set.
    pub fn bernoulli_census(&self, p: f64) -> Result<Self, ModelError> {
        let horizon = self.horizon;
        let family = match self.family {
            Family::Stable { alpha, c } => {
                if !(p > 0.0 && p.is_finite()) {
                    return Err(ModelError::InvalidCensusProbability(p));
                }
                Family::Stable { alpha, c: c * p }
            }
            finite_variation => {
                if !(p > 0.0 && p <= 1.0) {
                    return Err(ModelError::InvalidCensusProbability(p));
                }
                if p == 1.0 {
                    finite_variation
                } else {
                    match finite_variation {
                        Family::Yule { a } => Family::BirthDeath {
                            b: a * p,
                            d: a * (p - 1.0),
                        },
                        Family::BirthDeath { b, d } => Family::BirthDeath {
                            b: b * p,
                            d: d - b * (1.0 - p),
                        },
                        Family::CriticalBd { a } => Family::CriticalBd { a: a * p },
                        Family::Stable { .. } => unreachable!(),
                    }
                }
            }
        };
        Ok(Self { family, horizon })
    }

    /// Invert the survival function at `u` in `(0, 1)`. Returns `Infinite`
    /// when `u` falls below the defect mass of an untruncated subcritical
    /// birth-death law.
    pub fn sample_branch_length(&self, u: f64) -> BranchLength {
        debug_assert!(u > 0.0 && u < 1.0, "uniform draw must lie in (0, 1)");
        match self.horizon {
            Some(t) => {
                let st = 1.0 / self.w(t);
                let raw = u * (1.0 - st) + st;
                BranchLength::Finite(self.w_inverse(1.0 / raw))
            }
            None => {
                let defect = self.defect_mass();
                if u < defect {
                    BranchLength::Infinite
                } else {
                    BranchLength::Finite(self.w_inverse(1.0 / u))
                }
            }
        }
    }

    /// `W_theta(x) = 1 + int_0^x W'(u) e^{-theta u} du`, the scale function of
    /// the thinned process of individuals carrying no extra mutations.
    ///
    /// Closed form for Yule, birth-death and critical; quadrature for the
    /// stable family with `alpha < 2` (singular derivative at 0) and for
    /// truncated models. Returns NaN if quadrature fails.
    pub fn w_theta(&self, theta: f64, x: f64) -> f64 {
        debug_assert!(theta > 0.0 && x >= 0.0);
        if x == 0.0 {
            return 1.0;
        }
        if self.horizon.is_some() {
            // W of the truncated law is (1 - s) W / (1 - s W) with s = 1/W(t);
            // its derivative has a second-order pole at the horizon, which
            // integration by parts trades for a first-order one:
            //   1 + ∫ (1-s) W' (1-sW)^{-2} e^{-θu} du
            //     = 1 + e^{-θx} p(x) + θ ∫_0^x e^{-θu} p(u) du,
            //   p(u) = (W(u) - 1) / (1 - s W(u)).
            let t = self.horizon.unwrap();
            let s = 1.0 / self.w(t);
            // Within a relative 1e-13 of the horizon, 1 - sW(x) is pure
            // cancellation noise and the true value exceeds ~1e12: report
            // the divergence at the horizon directly.
            if x >= t - t * 1e-13 {
                return f64::INFINITY;
            }
            let p = |u: f64| {
                let w = self.w(u);
                let den = 1.0 - s * w;
                if den <= 0.0 {
                    f64::INFINITY
                } else {
                    (w - 1.0) / den
                }
            };
            let sing = match self.family {
                // W - 1 vanishes like u^{α-1} at the origin.
                Family::Stable { alpha, .. } if alpha < 2.0 => Some(alpha - 1.0),
                _ => None,
            };
            let g = |u: f64| (-theta * u).exp() * p(u);
            // The integral grows like the first-order pole's magnitude at
            // the evaluation point; an absolute tolerance far below that
            // scale is unreachable in f64, so anchor it there.
            let gx = g(x);
            let tol = 1e-10 * (1.0 + gx * t.max(1.0));
            return match numerics::integrate_finite(&g, 0.0, x, tol, sing) {
                Ok(r) => 1.0 + gx + theta * r.value,
                Err(_) => f64::NAN,
            };
        }
        match self.family {
            Family::Yule { a } => {
                if (a - theta).abs() < 1e-12 * a.max(theta) {
                    1.0 + a * x
                } else {
                    1.0 + a * (((a - theta) * x).exp() - 1.0) / (a - theta)
                }
            }
            Family::BirthDeath { b, d } => {
                let r = b - d - theta;
                if r.abs() < 1e-12 * (b + d.abs() + theta) {
                    1.0 + b * x
                } else {
                    1.0 + b * ((r * x).exp() - 1.0) / r
                }
            }
            Family::CriticalBd { a } => 1.0 + a / theta * (1.0 - (-theta * x).exp()),
            Family::Stable { alpha, c } => {
                if alpha == 2.0 {
                    1.0 + c / theta * (1.0 - (-theta * x).exp())
                } else {
                    let integrand =
                        move |u: f64| c * (alpha - 1.0) * u.powf(alpha - 2.0) * (-theta * u).exp();
                    match numerics::integrate_finite(integrand, 0.0, x, 1e-11, Some(alpha - 2.0)) {
                        Ok(r) => 1.0 + r.value,
                        Err(_) => f64::NAN,
                    }
                }
            }
        }
    }

    /// Mean and variance of the branch length (`INFINITY` when divergent).
    ///
    /// `mean = int_0^inf P(H > x) dx`, `variance = 2 int x P(H > x) dx - mean^2`.
    pub fn moments(&self) -> Result<Moments, ModelError> {
        if let Some(t) = self.horizon {
            // Bounded support: both integrals are finite.
            let mean = numerics::integrate_finite(|x| self.survival_unchecked(x), 0.0, t, 1e-10, None)?
                .value;
            let second =
                numerics::integrate_finite(|x| 2.0 * x * self.survival_unchecked(x), 0.0, t, 1e-10, None)?
                    .value;
            return Ok(Moments {
                mean,
                variance: second - mean * mean,
            });
        }
        match self.family {
            Family::Yule { a } => Ok(Moments {
                mean: 1.0 / a,
                variance: 1.0 / (a * a),
            }),
            Family::BirthDeath { b, d } => {
                if d > 0.0 && b < d {
                    // Atom at infinity.
                    Ok(Moments {
                        mean: f64::INFINITY,
                        variance: f64::INFINITY,
                    })
                } else {
                    // Exponential tail of rate b - d; d -> 0 recovers 1/b.
                    let mean = if d == 0.0 { 1.0 / b } else { (b / (b - d)).ln() / d };
                    let second = numerics::integrate_semi_infinite(
                        |x| 2.0 * x * self.survival_unchecked(x),
                        1e-10,
                        None,
                    )?
                    .value;
                    Ok(Moments {
                        mean,
                        variance: second - mean * mean,
                    })
                }
            }
            // Survival ~ x^{-(alpha-1)} with alpha - 1 <= 1: never integrable.
            Family::CriticalBd { .. } | Family::Stable { .. } => Ok(Moments {
                mean: f64::INFINITY,
                variance: f64::INFINITY,
            }),
        }
    }
}

impl fmt::Display for ScaleModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.family {
            Family::Yule { a } => write!(f, "yule:a={a}")?,
            Family::BirthDeath { b, d } => write!(f, "bd:b={b},d={d}")?,
            Family::CriticalBd { a } => write!(f, "critical:a={a}")?,
            Family::Stable { alpha, c } => write!(f, "stable:alpha={alpha},c={c}")?,
        }
        if let Some(t) = self.horizon {
            write!(f, ",horizon={t}")?;
        }
        Ok(())
    }
}

impl FromStr for ScaleModel {
    type Err = ModelError;

    /// Parses the CLI model grammar, e.g. `yule:a=1.0`, `bd:b=1.0,d=2.0`,
    /// `critical:a=1.0`, `stable:alpha=1.5,c=1.0`, with an optional trailing
    /// `,horizon=10.0`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || ModelError::Parse(s.to_string());
        let (name, rest) = s.split_once(':').ok_or_else(bad)?;
        let mut fields = std::collections::BTreeMap::new();
        for kv in rest.split(',') {
            let (k, v) = kv.split_once('=').ok_or_else(bad)?;
            let v: f64 = v.trim().parse().map_err(|_| bad())?;
            fields.insert(k.trim().to_string(), v);
        }
        let horizon = fields.remove("horizon");
        let mut take = |k: &str| fields.remove(k).ok_or_else(bad);
        let model = match name.trim() {
            "yule" => Self::yule(take("a")?)?,
            "bd" => Self::birth_death(take("b")?, take("d")?)?,
            "critical" => Self::critical(take("a")?)?,
            "stable" => Self::stable(take("alpha")?, take("c")?)?,
            _ => return Err(bad()),
        };
        if !fields.is_empty() {
            return Err(bad());
        }
        match horizon {
            Some(t) => model.with_horizon(t),
            None => Ok(model),
        }
    }
}
