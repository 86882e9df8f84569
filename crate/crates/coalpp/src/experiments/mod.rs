//! Deterministic Monte Carlo experiment harness: replicated simulations
//! compared against the analytic predictions, with machine-readable reports.
//!
//! Reproducibility contract: every replicate owns a counter-derived RNG
//! stream ([`derive_substream`]), replicates may run in parallel, and results
//! are merged in replicate-index order — reports are bit-identical across
//! runs and worker counts.

pub mod stats;

use crate::analytics::{self, AnalyticsError};
use crate::genealogy::{CoalescentSample, GenealogyError};
use crate::mutation::{self, MutationError, MutationOverlay};
use crate::scale::{Family, ModelError, ScaleModel};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Analytics(#[from] AnalyticsError),
    #[error(transparent)]
    Genealogy(#[from] GenealogyError),
    #[error(transparent)]
    Mutation(#[from] MutationError),
    #[error("report I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("report parse error: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Spectrum,
    Clt,
    Allele,
    Wtheta,
    Stable,
    Brownian,
    CensusEquivalence,
    Oracle,
}

impl std::str::FromStr for ExperimentKind {
    type Err = ExperimentError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "spectrum" => Self::Spectrum,
            "clt" => Self::Clt,
            "allele" => Self::Allele,
            "wtheta" => Self::Wtheta,
            "stable" => Self::Stable,
            "brownian" => Self::Brownian,
            "census-equivalence" => Self::CensusEquivalence,
            "oracle" => Self::Oracle,
            other => return Err(ExperimentError::Config(format!("unknown experiment kind '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub model: ScaleModel,
    pub theta: f64,
    /// Sample sizes, typically increasing so reports show convergence trends.
    pub sample_sizes: Vec<usize>,
    pub replicates: usize,
    /// Master seed; all randomness is derived from it.
    pub seed: u64,
    /// Largest per-k statistic reported by the spectrum/allele experiments.
    pub k_max: usize,
    /// λ grid for the heavy-tail Laplace-transform experiment.
    pub lambda_grid: Vec<f64>,
    /// Retention probability for the census-equivalence experiment.
    pub census_p: f64,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        if self.replicates < 1 {
            return Err(ExperimentError::Config("replicates must be >= 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.iter().any(|&n| n < 2) {
            return Err(ExperimentError::Config(
                "at least one sample size, each >= 2".into(),
            ));
        }
        if !(self.theta >= 0.0) {
            return Err(ExperimentError::Config("theta must be >= 0".into()));
        }
        Ok(())
    }
}

/// One comparison row. Statistical rows carry `mc_mean`/`mc_stderr`/`analytic`
/// and a z-score; goodness-of-fit rows carry `statistic`/`threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub formula_id: String,
    pub n: Option<usize>,
    pub k: Option<usize>,
    pub lambda: Option<f64>,
    pub mc_mean: Option<f64>,
    pub mc_stderr: Option<f64>,
    pub analytic: Option<f64>,
    pub z_score: Option<f64>,
    pub statistic: Option<f64>,
    pub threshold: Option<f64>,
    pub pass: bool,
}

impl ReportRow {
    fn new(formula_id: &str) -> Self {
        Self {
            formula_id: formula_id.to_string(),
            n: None,
            k: None,
            lambda: None,
            mc_mean: None,
            mc_stderr: None,
            analytic: None,
            z_score: None,
            statistic: None,
            threshold: None,
            pass: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub config: ExperimentConfig,
    pub rows: Vec<ReportRow>,
    pub notes: Vec<String>,
    pub passed: bool,
    pub runtime_seconds: f64,
    pub seed: u64,
}

/// Stable counter-based stream splitting: a splitmix64 finalizer applied to
/// `master + (index+1)·odd` — injective in `index` for fixed `master`, so
/// replicate streams never collide and are identical on every machine.
pub fn derive_substream(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Run `reps` closures on derived streams in parallel, merged in index order.
fn par_replicates<T: Send>(
    reps: usize,
    master: u64,
    f: impl Fn(u64) -> T + Sync,
) -> Vec<T> {
    (0..reps)
        .into_par_iter()
        .map(|i| f(derive_substream(master, i as u64)))
        .collect()
}

fn finish(
    config: &ExperimentConfig,
    rows: Vec<ReportRow>,
    notes: Vec<String>,
    started: Instant,
) -> SummaryReport {
    let passed = rows.iter().all(|r| r.pass);
    SummaryReport {
        config: config.clone(),
        rows,
        notes,
        passed,
        runtime_seconds: started.elapsed().as_secs_f64(),
        seed: config.seed,
    }
}

fn mc_row(formula_id: &str, values: &[f64], analytic: f64, floor: f64) -> ReportRow {
    let mut row = ReportRow::new(formula_id);
    row.analytic = Some(analytic);
    if values.len() < 2 {
        row.mc_mean = values.first().copied();
        return row;
    }
    let (mean, se) = stats::mean_stderr(values);
    row.mc_mean = Some(mean);
    row.mc_stderr = Some(se);
    if se > 0.0 {
        row.z_score = Some((mean - analytic) / se);
    }
    let tol = (4.0 * se).max(floor);
    row.pass = (mean - analytic).abs() <= tol || analytic.is_infinite();
    row
}

/// Per-k site-frequency-spectrum comparison: `S_n(k)/n` (and the
/// variance-reduced `θ·L_k/n`) against the per-k limit.
pub fn run_spectrum_experiment(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let mut notes = Vec::new();
    let mut rows = Vec::new();

    let analytic: Vec<f64> = match (1..=config.k_max)
        .map(|k| analytics::limit_site_spectrum(&config.model, config.theta, k).map(|p| p.value))
        .collect::<Result<_, _>>()
    {
        Ok(v) => v,
        Err(AnalyticsError::SpectrumLimitInapplicable) => {
            notes.push(
                "inapplicable: per-k spectrum limit requires a square-integrable survival \
                 (heavy-tail regime grows superlinearly instead)"
                    .into(),
            );
            return Ok(finish(config, rows, notes, started));
        }
        Err(e) => return Err(e.into()),
    };
    if config.replicates < 2 {
        notes.push("insufficient replicates: stderr and z-scores undefined".into());
    }

    for &n in &config.sample_sizes {
        let per_rep = par_replicates(config.replicates, config.seed, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = CoalescentSample::simulate(&config.model, n, &mut rng)
                .expect("non-defective model");
            let overlay =
                MutationOverlay::generate(&sample, config.theta, &mut rng).expect("theta >= 0");
            let spec = mutation::site_spectrum(&sample, &overlay).expect("matching overlay");
            let rb = mutation::expected_spectrum_given_tree(&sample, config.theta);
            let mc: Vec<f64> = (0..config.k_max)
                .map(|i| spec.counts.get(i).copied().unwrap_or(0) as f64 / n as f64)
                .collect();
            let rb: Vec<f64> = (0..config.k_max)
                .map(|i| rb.get(i).copied().unwrap_or(0.0) / n as f64)
                .collect();
            (mc, rb)
        });
        for (ki, &target) in analytic.iter().enumerate() {
            let k = ki + 1;
            let mc: Vec<f64> = per_rep.iter().map(|r| r.0[ki]).collect();
            let rb: Vec<f64> = per_rep.iter().map(|r| r.1[ki]).collect();
            let mut row = mc_row("site_spectrum_limit", &mc, target, 0.0);
            row.n = Some(n);
            row.k = Some(k);
            rows.push(row);
            let mut row = mc_row("site_spectrum_limit_rb", &rb, target, 0.0);
            row.n = Some(n);
            row.k = Some(k);
            rows.push(row);
        }
    }
    Ok(finish(config, rows, notes, started))
}

/// Sample variance of `√n (S_n/n − θE H)` against the predicted Gaussian
/// variance, with a 99% chi-square acceptance interval.
pub fn run_clt_experiment(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let mut notes = Vec::new();
    let mut rows = Vec::new();

    let sigma_sq = match analytics::clt_variance(&config.model, config.theta) {
        Ok(p) => p.value,
        Err(AnalyticsError::CltInapplicable) => {
            notes.push("inapplicable: infinite branch-length moments".into());
            return Ok(finish(config, rows, notes, started));
        }
        Err(e) => return Err(e.into()),
    };
    let rate = analytics::limit_sites_rate(&config.model, config.theta)?.value;
    if config.replicates < 2 {
        notes.push("insufficient replicates: variance undefined".into());
        return Ok(finish(config, rows, notes, started));
    }

    for &n in &config.sample_sizes {
        let values = par_replicates(config.replicates, config.seed, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = mutation::poisson_site_count(&config.model, n, config.theta, &mut rng)
                .expect("non-defective model");
            (n as f64).sqrt() * (s as f64 / n as f64 - rate)
        });
        let (var, skew) = stats::variance_skewness(&values);
        let mut row = ReportRow::new("clt_variance");
        row.n = Some(n);
        row.statistic = Some(var);
        row.analytic = Some(sigma_sq);
        if config.theta == 0.0 {
            row.pass = var == 0.0;
        } else {
            let (lo, hi) = stats::variance_interval(sigma_sq, config.replicates, 0.99);
            row.threshold = Some(hi);
            row.pass = lo <= var && var <= hi;
        }
        rows.push(row);
        // Diagnostic only: the skewness of an asymptotically normal statistic.
        let mut row = ReportRow::new("clt_skewness");
        row.n = Some(n);
        row.statistic = Some(if skew.is_nan() { 0.0 } else { skew });
        rows.push(row);
    }
    Ok(finish(config, rows, notes, started))
}

/// `A_n/n` and `A_n(k)/n` against the haplotype limits.
pub fn run_allele_experiment(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let mut rows = Vec::new();
    let notes = Vec::new();

    for &n in &config.sample_sizes {
        let per_rep = par_replicates(config.replicates, config.seed, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let sample = CoalescentSample::simulate(&config.model, n, &mut rng)
                .expect("non-defective model");
            let overlay =
                MutationOverlay::generate(&sample, config.theta, &mut rng).expect("theta >= 0");
            let keys = mutation::haplotype_keys(&sample, &overlay).expect("matching overlay");
            let spec = mutation::allele_spectrum(&keys);
            let fraction = spec.total as f64 / n as f64;
            let per_k: Vec<f64> = (0..config.k_max)
                .map(|i| spec.counts.get(i).copied().unwrap_or(0) as f64 / n as f64)
                .collect();
            (fraction, per_k)
        });

        if config.theta == 0.0 {
            // A single ancestral class, every replicate.
            let mut row = ReportRow::new("allele_fraction_limit");
            row.n = Some(n);
            row.mc_mean = Some(per_rep.iter().map(|r| r.0).sum::<f64>() / per_rep.len() as f64);
            row.analytic = Some(1.0 / n as f64);
            row.pass = per_rep.iter().all(|r| r.0 * n as f64 == 1.0);
            rows.push(row);
            continue;
        }

        let fraction_target = analytics::limit_allele_fraction(&config.model, config.theta)?.value;
        let fractions: Vec<f64> = per_rep.iter().map(|r| r.0).collect();
        let mut row = mc_row("allele_fraction_limit", &fractions, fraction_target, 0.01);
        row.n = Some(n);
        rows.push(row);

        for ki in 0..config.k_max {
            let target =
                analytics::limit_allele_spectrum(&config.model, config.theta, ki + 1)?.value;
            let values: Vec<f64> = per_rep.iter().map(|r| r.1[ki]).collect();
            let mut row = mc_row("allele_spectrum_limit", &values, target, 0.01);
            row.n = Some(n);
            row.k = Some(ki + 1);
            rows.push(row);
        }
    }
    Ok(finish(config, rows, notes, started))
}

/// How the no-extra-mutation scan behaves in an unbounded population.
enum ScanRegime {
    /// The scan terminates a.s.; the thinned branch-length law has an atom
    /// at +∞ of mass `1/w_inf`, and a large finite sample reveals the whole
    /// scan set — one terminal ∞ per tree completes the pooled sample.
    Terminating { w_inf: f64 },
    /// A horizon bounds branch lengths, so scan gaps have geometric tails
    /// and pooling within large trees is asymptotically unbiased.
    Bounded,
    /// Infinitely many scan points with infinite-mean gaps: the portion
    /// visible in a finite tree is size-biased and cannot be tested.
    Unbounded,
}

fn scan_regime(model: &ScaleModel, theta: f64) -> ScanRegime {
    if model.horizon().is_some() {
        return ScanRegime::Bounded;
    }
    match model.family() {
        Family::Yule { a } if theta > a => ScanRegime::Terminating { w_inf: 1.0 + a / (theta - a) },
        Family::BirthDeath { b, d } if theta > b - d => {
            ScanRegime::Terminating { w_inf: 1.0 + b / (theta - b + d) }
        }
        Family::CriticalBd { a } => ScanRegime::Terminating { w_inf: 1.0 + a / theta },
        Family::Stable { alpha, c } => ScanRegime::Terminating {
            w_inf: 1.0 + c * statrs::function::gamma::gamma(alpha) / theta.powf(alpha - 1.0),
        },
        _ => ScanRegime::Unbounded,
    }
}

/// Pools the no-extra-mutation scan across replicates: KS of the collected
/// branch lengths against survival `1/W_θ`, plus the lag-1 correlation of
/// the index increments (an independence diagnostic). When the scan
/// terminates a.s. the terminal event of each tree is pooled as an ∞ point,
/// so the sample follows the unconditioned thinned law.
pub fn run_wtheta_experiment(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    config.validate()?;
    if !(config.theta > 0.0) {
        return Err(ExperimentError::Config("wtheta experiment needs theta > 0".into()));
    }
    let started = Instant::now();
    let mut rows = Vec::new();

    let regime = scan_regime(&config.model, config.theta);
    if matches!(regime, ScanRegime::Unbounded) {
        return Ok(finish(
            config,
            rows,
            vec![
                "inapplicable: the scan set is infinite with infinite-mean gaps, so the \
                 portion visible in a finite sample is size-biased toward short branches"
                    .into(),
            ],
            started,
        ));
    }

    let n = *config.sample_sizes.last().expect("validated non-empty");
    let per_rep = par_replicates(config.replicates, config.seed, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sample =
            CoalescentSample::simulate(&config.model, n, &mut rng).expect("non-defective model");
        let overlay =
            MutationOverlay::generate(&sample, config.theta, &mut rng).expect("theta >= 0");
        let scan = mutation::theta_scan(&sample, &overlay, usize::MAX).expect("matching overlay");
        let mut heights: Vec<f64> = scan.pairs.iter().map(|p| p.1).collect();
        if matches!(regime, ScanRegime::Terminating { .. }) {
            heights.push(f64::INFINITY);
        }
        let mut increments = Vec::with_capacity(scan.pairs.len());
        let mut prev = 0usize;
        for &(idx, _) in &scan.pairs {
            increments.push((idx - prev) as f64);
            prev = idx;
        }
        (heights, increments)
    });
    let pooled: Vec<f64> = per_rep.iter().flat_map(|r| r.0.iter().copied()).collect();
    let increments: Vec<f64> = per_rep.iter().flat_map(|r| r.1.iter().copied()).collect();
    let m = pooled.len();

    let mut row = ReportRow::new("wtheta_survival_ks");
    row.n = Some(n);
    row.statistic = Some(stats::ks_one_sample(&pooled, |x| {
        if x.is_finite() {
            1.0 / config.model.w_theta(config.theta, x)
        } else if let ScanRegime::Terminating { w_inf } = regime {
            1.0 / w_inf
        } else {
            0.0
        }
    }));
    row.threshold = Some(stats::ks_one_sample_threshold(m));
    row.pass = row.statistic <= row.threshold;
    rows.push(row);

    let mut row = ReportRow::new("wtheta_increment_lag1");
    row.n = Some(n);
    row.statistic = Some(stats::lag1_correlation(&increments));
    row.threshold = Some(4.0 / (increments.len() as f64).sqrt());
    row.pass = row.statistic.unwrap().abs() <= row.threshold.unwrap();
    rows.push(row);

    Ok(finish(config, rows, Vec::new(), started))
}

/// Empirical `E exp(−λ S_n/n^β)` on a λ grid against the limit Laplace
/// transform, in the heavy-tail regime `α ∈ (1,2)` with `β = 1/(α−1)`.
pub fn run_stable_experiment(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    config.validate()?;
    let (alpha, c) = match config.model.family() {
        Family::Stable { alpha, c } if alpha < 2.0 => (alpha, c),
        other => {
            return Err(ExperimentError::Config(format!(
                "stable experiment needs stable α in (1,2), got {other:?}"
            )));
        }
    };
    let beta = 1.0 / (alpha - 1.0);
    let started = Instant::now();
    let mut rows = Vec::new();

    for &n in &config.sample_sizes {
        let scale = (n as f64).powf(beta);
        let counts = par_replicates(config.replicates, config.seed, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            mutation::poisson_site_count(&config.model, n, config.theta, &mut rng)
                .expect("non-defective model") as f64
        });
        for &lambda in &config.lambda_grid {
            let analytic =
                analytics::stable_laplace_transform(alpha, c, config.theta, lambda)?.value;
            let values: Vec<f64> = counts.iter().map(|&s| (-lambda * s / scale).exp()).collect();
            let mut row = mc_row("stable_laplace", &values, analytic, 0.02);
            row.n = Some(n);
            row.lambda = Some(lambda);
            rows.push(row);
        }
    }
    Ok(finish(config, rows, Vec::new(), started))
}

/// Median of `S_n/(n ln n)` per sample size against `θ/c` — medians, not
/// means, because `E S_n` is infinite in this regime.
pub fn run_brownian_experiment(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    config.validate()?;
    let target = analytics::brownian_growth_constant(&config.model, config.theta)
        .map_err(|e| ExperimentError::Config(e.to_string()))?
        .value;
    let started = Instant::now();
    let mut rows = Vec::new();

    for &n in &config.sample_sizes {
        let values = par_replicates(config.replicates, config.seed, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let s = mutation::poisson_site_count(&config.model, n, config.theta, &mut rng)
                .expect("non-defective model");
            s as f64 / (n as f64 * (n as f64).ln())
        });
        let median = stats::median(&values);
        let mut row = ReportRow::new("growth_constant");
        row.n = Some(n);
        row.statistic = Some(median);
        row.analytic = Some(target);
        // Convergence is logarithmic; 0.30 covers the finite-n bias at 10^6.
        row.threshold = Some(0.30);
        row.pass = (median - target).abs() <= 0.30;
        rows.push(row);
    }
    Ok(finish(config, rows, Vec::new(), started))
}

/// Distributional check of the census transform: branch lengths of the
/// retained subsample are maxima of Geometric(p)-many original branches, and
/// must match direct draws from the transformed model (two-sample KS).
/// Also pins the exact linear-scale identity `census(1+x, p) = 1+px`.
pub fn run_census_equivalence(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    config.validate()?;
    let p = config.census_p;
    if !(p > 0.0 && p <= 1.0) {
        return Err(ExperimentError::Config(format!(
            "census retention probability must lie in (0,1], got {p}"
        )));
    }
    let started = Instant::now();
    let mut rows = Vec::new();

    let censused = config.model.bernoulli_census(p)?;
    let m = config.replicates;
    let direct = par_replicates(m, config.seed, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        draw_finite(&censused, &mut rng)
    });
    let constructed = par_replicates(m, config.seed ^ 0x5DEE_CE66_D154_27A1, |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Geometric(p) trials until retention, maximum of the spanned draws.
        let mut max = 0.0f64;
        loop {
            max = max.max(draw_finite(&config.model, &mut rng));
            if rng.gen::<f64>() < p {
                return max;
            }
        }
    });
    let mut row = ReportRow::new("census_two_sample_ks");
    row.statistic = Some(stats::ks_two_sample(&direct, &constructed));
    row.threshold = Some(stats::ks_two_sample_threshold(m, m));
    row.pass = row.statistic <= row.threshold;
    rows.push(row);

    // The α = 2 intensity census scales the linear slope: W goes from
    // 1 + cx to exactly 1 + cpx, the linear model with slope cp.
    let brownian = ScaleModel::stable(2.0, 1.0)?.bernoulli_census(p)?;
    let linear = ScaleModel::critical(p)?;
    let exact = (1..=1000)
        .map(|i| i as f64 * 0.01)
        .all(|x| brownian.w(x) == linear.w(x));
    let mut row = ReportRow::new("census_linear_identity");
    row.statistic = Some(if exact { 0.0 } else { 1.0 });
    row.threshold = Some(0.0);
    row.pass = exact;
    rows.push(row);

    Ok(finish(config, rows, Vec::new(), started))
}

fn draw_finite<R: Rng>(model: &ScaleModel, rng: &mut R) -> f64 {
    let mut u: f64 = rng.gen();
    while u <= 0.0 {
        u = rng.gen();
    }
    model
        .sample_branch_length(u)
        .finite()
        .expect("non-defective model")
}

/// Randomized cross-validation of the fast spectrum/haplotype paths against
/// the literal brute-force evaluation; any mismatch is reported with enough
/// detail to reproduce the instance.
pub fn run_oracle_check(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    config.validate()?;
    let started = Instant::now();
    let mut rows = Vec::new();
    let mut notes = Vec::new();

    let families = [
        ScaleModel::yule(1.0)?,
        ScaleModel::critical(1.0)?,
        ScaleModel::birth_death(1.0, 2.0)?.with_horizon(2.0)?,
        ScaleModel::stable(1.7, 1.0)?,
    ];
    let thetas = [0.3, 1.0, 3.0, 0.0];

    let mismatches: Vec<Option<String>> =
        par_replicates(config.replicates, config.seed, |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = families[(seed % families.len() as u64) as usize];
            let theta = thetas[((seed >> 8) % thetas.len() as u64) as usize];
            let n = rng.gen_range(2..=50);
            let sample = CoalescentSample::simulate(&model, n, &mut rng).expect("non-defective");
            let overlay = MutationOverlay::generate(&sample, theta, &mut rng).expect("theta >= 0");
            let (site, allele) = mutation::brute_force_check(&sample, &overlay).expect("matching");
            let fast_site = mutation::site_spectrum(&sample, &overlay).expect("matching");
            let keys = mutation::haplotype_keys(&sample, &overlay).expect("matching");
            let fast_allele = mutation::allele_spectrum(&keys);
            if site == fast_site && allele == fast_allele {
                None
            } else {
                Some(format!(
                    "mismatch: model={model}, theta={theta}, lengths={:?}, heights={:?}",
                    sample.lengths(),
                    (0..n).map(|i| overlay.branch_heights(i).to_vec()).collect::<Vec<_>>()
                ))
            }
        });
    let bad: Vec<&String> = mismatches.iter().flatten().collect();
    for b in &bad {
        notes.push((*b).clone());
    }
    let mut row = ReportRow::new("oracle_equivalence");
    row.statistic = Some(bad.len() as f64);
    row.threshold = Some(0.0);
    row.pass = bad.is_empty();
    rows.push(row);

    // The worked reference instance must reproduce its published totals.
    let sample =
        CoalescentSample::from_lengths(vec![6.0, 12.0, 6.5, 3.5, 7.5, 16.5, 6.0, 3.0])?;
    let overlay = MutationOverlay::from_heights(
        &sample,
        1.0,
        vec![
            vec![14.5],
            vec![],
            vec![10.5],
            vec![2.0],
            vec![],
            vec![],
            vec![8.0, 13.0],
            vec![5.0],
            vec![],
        ],
    )?;
    let site = mutation::site_spectrum(&sample, &overlay)?;
    let allele = mutation::allele_spectrum(&mutation::haplotype_keys(&sample, &overlay)?);
    let mut row = ReportRow::new("reference_fixture");
    row.statistic = Some(site.total as f64);
    row.analytic = Some(6.0);
    row.pass = site.total == 6 && allele.total == 5;
    rows.push(row);

    Ok(finish(config, rows, notes, started))
}

/// Dispatch on the configured kind.
pub fn run(config: &ExperimentConfig) -> Result<SummaryReport, ExperimentError> {
    match config.kind {
        ExperimentKind::Spectrum => run_spectrum_experiment(config),
        ExperimentKind::Clt => run_clt_experiment(config),
        ExperimentKind::Allele => run_allele_experiment(config),
        ExperimentKind::Wtheta => run_wtheta_experiment(config),
        ExperimentKind::Stable => run_stable_experiment(config),
        ExperimentKind::Brownian => run_brownian_experiment(config),
        ExperimentKind::CensusEquivalence => run_census_equivalence(config),
        ExperimentKind::Oracle => run_oracle_check(config),
    }
}

fn opt<T: std::fmt::Display>(v: &Option<T>) -> String {
    v.as_ref().map(|x| x.to_string()).unwrap_or_default()
}

fn parse_opt<T: std::str::FromStr>(s: &str, field: &str) -> Result<Option<T>, ExperimentError> {
    if s.is_empty() {
        Ok(None)
    } else {
        s.parse()
            .map(Some)
            .map_err(|_| ExperimentError::Parse(format!("bad value '{s}' for {field}")))
    }
}

impl SummaryReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(s).map_err(|e| ExperimentError::Parse(e.to_string()))
    }

    /// CSV with `#`-prefixed metadata lines followed by one row per
    /// comparison. Floats use the shortest round-tripping representation, so
    /// parsing the output reproduces the report exactly.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "#config={}\n",
            serde_json::to_string(&self.config).expect("config serializes")
        ));
        out.push_str(&format!(
            "#notes={}\n",
            serde_json::to_string(&self.notes).expect("notes serialize")
        ));
        out.push_str(&format!("#passed={}\n", self.passed));
        out.push_str(&format!("#runtime_seconds={}\n", self.runtime_seconds));
        out.push_str(&format!("#seed={}\n", self.seed));
        out.push_str(
            "formula_id,n,k,lambda,mc_mean,mc_stderr,analytic,z_score,statistic,threshold,pass\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                r.formula_id,
                opt(&r.n),
                opt(&r.k),
                opt(&r.lambda),
                opt(&r.mc_mean),
                opt(&r.mc_stderr),
                opt(&r.analytic),
                opt(&r.z_score),
                opt(&r.statistic),
                opt(&r.threshold),
                r.pass
            ));
        }
        out
    }

    pub fn from_csv(s: &str) -> Result<Self, ExperimentError> {
        let mut config = None;
        let mut notes = None;
        let mut passed = None;
        let mut runtime_seconds = None;
        let mut seed = None;
        let mut rows = Vec::new();
        let mut saw_header = false;
        for line in s.lines() {
            if let Some(meta) = line.strip_prefix('#') {
                let (key, value) = meta
                    .split_once('=')
                    .ok_or_else(|| ExperimentError::Parse(format!("bad metadata line '{line}'")))?;
                match key {
                    "config" => {
                        config = Some(serde_json::from_str(value).map_err(|e| {
                            ExperimentError::Parse(format!("bad config metadata: {e}"))
                        })?)
                    }
                    "notes" => {
                        notes = Some(serde_json::from_str(value).map_err(|e| {
                            ExperimentError::Parse(format!("bad notes metadata: {e}"))
                        })?)
                    }
                    "passed" => passed = parse_opt(value, "passed")?,
                    "runtime_seconds" => runtime_seconds = parse_opt(value, "runtime_seconds")?,
                    "seed" => seed = parse_opt(value, "seed")?,
                    other => {
                        return Err(ExperimentError::Parse(format!("unknown metadata '{other}'")))
                    }
                }
                continue;
            }
            if !saw_header {
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 11 {
                return Err(ExperimentError::Parse(format!("bad row '{line}'")));
            }
            rows.push(ReportRow {
                formula_id: fields[0].to_string(),
                n: parse_opt(fields[1], "n")?,
                k: parse_opt(fields[2], "k")?,
                lambda: parse_opt(fields[3], "lambda")?,
                mc_mean: parse_opt(fields[4], "mc_mean")?,
                mc_stderr: parse_opt(fields[5], "mc_stderr")?,
                analytic: parse_opt(fields[6], "analytic")?,
                z_score: parse_opt(fields[7], "z_score")?,
                statistic: parse_opt(fields[8], "statistic")?,
                threshold: parse_opt(fields[9], "threshold")?,
                pass: fields[10]
                    .parse()
                    .map_err(|_| ExperimentError::Parse(format!("bad pass flag in '{line}'")))?,
            });
        }
        Ok(SummaryReport {
            config: config.ok_or_else(|| ExperimentError::Parse("missing #config".into()))?,
            rows,
            notes: notes.ok_or_else(|| ExperimentError::Parse("missing #notes".into()))?,
            passed: passed.ok_or_else(|| ExperimentError::Parse("missing #passed".into()))?,
            runtime_seconds: runtime_seconds
                .ok_or_else(|| ExperimentError::Parse("missing #runtime_seconds".into()))?,
            seed: seed.ok_or_else(|| ExperimentError::Parse("missing #seed".into()))?,
        })
    }
}
