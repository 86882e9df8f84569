//! Adaptive quadrature on finite and semi-infinite intervals.
//!
//! The base rule is a 12-point Gauss-Legendre panel; the error estimate for a
//! panel compares the whole-panel value against the sum over its two halves.
//! Panels are refined worst-error-first until the summed error estimate drops
//! below the requested absolute tolerance. Everything here is deterministic:
//! identical inputs produce bit-identical results.

use once_cell::sync::Lazy;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use thiserror::Error;

/// Default evaluation budget for a single integral.
pub const DEFAULT_BUDGET: u64 = 1_000_000;

const GL_ORDER: usize = 12;

/// Result of a quadrature call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureResult {
    pub value: f64,
    /// Absolute error estimate, always nonnegative.
    pub error_estimate: f64,
    /// Number of integrand evaluations.
    pub evaluations: u64,
}

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("quadrature budget exceeded (partial value {value}, error {error_estimate}, {evaluations} evaluations)")]
    BudgetExceeded {
        value: f64,
        error_estimate: f64,
        evaluations: u64,
    },
    #[error("integrand returned a non-finite value")]
    InvalidIntegrand,
    #[error("invalid integration interval: a > b")]
    InvalidInterval,
    #[error("singular exponent {0} outside (-1, 0]")]
    InvalidSingularExponent(f64),
}

impl QuadratureError {
    /// Partial value carried by a budget-exceeded error, if any.
    pub fn partial(&self) -> Option<QuadratureResult> {
        match *self {
            QuadratureError::BudgetExceeded {
                value,
                error_estimate,
                evaluations,
            } => Some(QuadratureResult {
                value,
                error_estimate,
                evaluations,
            }),
            _ => None,
        }
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], computed once by Newton
/// iteration on the Legendre polynomial.
static GL_RULE: Lazy<(Vec<f64>, Vec<f64>)> = Lazy::new(|| gauss_legendre(GL_ORDER));

fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev initial guess.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre_and_deriv(n, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre_and_deriv(n, x);
        nodes[i] = -x; // ascending order
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

fn legendre_and_deriv(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// Single Gauss-Legendre panel. Returns NaN if the integrand does.
fn gl_panel<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> f64 {
    let (nodes, weights) = &*GL_RULE;
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in nodes.iter().zip(weights) {
        acc += w * f(c + h * x);
    }
    acc * h
}

#[derive(Debug)]
struct Interval {
    a: f64,
    b: f64,
    value: f64,
    err: f64,
}

impl PartialEq for Interval {
    fn eq(&self, other: &Self) -> bool {
        self.err == other.err && self.a == other.a
    }
}
impl Eq for Interval {}
impl PartialOrd for Interval {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Interval {
    fn cmp(&self, other: &Self) -> Ordering {
        // Worst error first; ties broken by left endpoint for determinism.
        self.err
            .total_cmp(&other.err)
            .then_with(|| other.a.total_cmp(&self.a))
    }
}

fn make_interval<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, evals: &mut u64) -> Interval {
    let whole = gl_panel(f, a, b);
    let m = 0.5 * (a + b);
    let halves = gl_panel(f, a, m) + gl_panel(f, m, b);
    *evals += 3 * GL_ORDER as u64;
    Interval {
        a,
        b,
        value: halves,
        err: (whole - halves).abs(),
    }
}

fn adaptive<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    abs_tol: f64,
    budget: u64,
) -> Result<QuadratureResult, QuadratureError> {
    let mut evals: u64 = 0;
    let mut heap = BinaryHeap::new();
    // Frozen contribution from intervals too small to split further.
    let mut frozen_value = 0.0;
    let mut frozen_err = 0.0;
    heap.push(make_interval(f, a, b, &mut evals));

    loop {
        let mut value = frozen_value;
        let mut err = frozen_err;
        for it in &heap {
            value += it.value;
            err += it.err;
        }
        if value.is_nan() {
            return Err(QuadratureError::InvalidIntegrand);
        }
        if err <= abs_tol {
            return Ok(QuadratureResult {
                value,
                error_estimate: err,
                evaluations: evals,
            });
        }
        if evals >= budget {
            return Err(QuadratureError::BudgetExceeded {
                value,
                error_estimate: err,
                evaluations: evals,
            });
        }
        let worst = heap.pop().expect("heap never empty");
        let m = 0.5 * (worst.a + worst.b);
        if !(worst.a < m && m < worst.b) {
            // Interval at floating-point resolution; keep its estimate as is.
            frozen_value += worst.value;
            frozen_err += worst.err;
            continue;
        }
        heap.push(make_interval(f, worst.a, m, &mut evals));
        heap.push(make_interval(f, m, worst.b, &mut evals));
    }
}

/// Integrate `f` over `[a, b]`.
///
/// If `singular_exponent_at_a = Some(sigma)` with `sigma` in `(-1, 0]`, the
/// integrand is assumed to behave like `(s - a)^sigma` near `a`; the
/// substitution `s = a + t^{1/(1+sigma)}` removes the singularity before the
/// adaptive rule is applied.
pub fn integrate_finite<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    singular_exponent_at_a: Option<f64>,
) -> Result<QuadratureResult, QuadratureError> {
    integrate_finite_with_budget(f, a, b, abs_tol, singular_exponent_at_a, DEFAULT_BUDGET)
}

pub fn integrate_finite_with_budget<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    abs_tol: f64,
    singular_exponent_at_a: Option<f64>,
    budget: u64,
) -> Result<QuadratureResult, QuadratureError> {
    if a > b || !a.is_finite() || !b.is_finite() {
        return Err(QuadratureError::InvalidInterval);
    }
    if a == b {
        return Ok(QuadratureResult {
            value: 0.0,
            error_estimate: 0.0,
            evaluations: 1,
        });
    }
    match singular_exponent_at_a {
        None => adaptive(&f, a, b, abs_tol, budget),
        Some(sigma) => {
            if !(-1.0 < sigma && sigma <= 0.0) {
                return Err(QuadratureError::InvalidSingularExponent(sigma));
            }
            if sigma == 0.0 {
                return adaptive(&f, a, b, abs_tol, budget);
            }
            let p = 1.0 / (1.0 + sigma);
            let upper = (b - a).powf(1.0 + sigma);
            let g = |t: f64| f(a + t.powf(p)) * p * t.powf(p - 1.0);
            adaptive(&g, 0.0, upper, abs_tol, budget)
        }
    }
}

/// Integrate `f` over `(0, infinity)`.
///
/// The interval is split at a cutoff `X` chosen so that the algebraic tail
/// bound `f(X) * X / (p - 1)` falls below `abs_tol / 2`, where `p` is
/// `tail_decay_hint` when given and is otherwise estimated from `f(X)` and
/// `f(2X)`. The tail contribution is then accounted for as the midpoint of
/// `[0, bound]` with half-width `bound / 2` as its error.
pub fn integrate_semi_infinite<F: Fn(f64) -> f64>(
    f: F,
    abs_tol: f64,
    tail_decay_hint: Option<f64>,
) -> Result<QuadratureResult, QuadratureError> {
    integrate_semi_infinite_with_budget(f, abs_tol, tail_decay_hint, DEFAULT_BUDGET)
}

pub fn integrate_semi_infinite_with_budget<F: Fn(f64) -> f64>(
    f: F,
    abs_tol: f64,
    tail_decay_hint: Option<f64>,
    budget: u64,
) -> Result<QuadratureResult, QuadratureError> {
    assert!(abs_tol > 0.0, "abs_tol must be positive");
    let mut probe_evals: u64 = 0;
    let mut cutoff = 1.0_f64;
    let tail_bound = loop {
        let fx = f(cutoff);
        probe_evals += 1;
        if fx.is_nan() {
            return Err(QuadratureError::InvalidIntegrand);
        }
        let fx = fx.abs();
        if fx == 0.0 {
            break 0.0;
        }
        let p = match tail_decay_hint {
            Some(p) if p > 1.0 => p,
            _ => {
                let f2x = f(2.0 * cutoff).abs();
                probe_evals += 1;
                if f2x == 0.0 {
                    // Decay faster than representable; charge the last octave.
                    break fx * cutoff;
                }
                (fx / f2x).log2()
            }
        };
        if p > 1.0 {
            let bound = fx * cutoff / (p - 1.0);
            if bound <= abs_tol / 2.0 {
                break bound;
            }
        }
        cutoff *= 2.0;
        if cutoff > 1e250 || probe_evals > budget {
            return Err(QuadratureError::BudgetExceeded {
                value: f64::NAN,
                error_estimate: f64::INFINITY,
                evaluations: probe_evals,
            });
        }
    };

    let main_tol = (abs_tol - tail_bound / 2.0).max(abs_tol / 4.0);
    let main = integrate_finite_with_budget(&f, 0.0, cutoff, main_tol, None, budget)?;
    Ok(QuadratureResult {
        value: main.value + tail_bound / 2.0,
        error_estimate: main.error_estimate + tail_bound / 2.0,
        evaluations: main.evaluations + probe_evals,
    })
}
