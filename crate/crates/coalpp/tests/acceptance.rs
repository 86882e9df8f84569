//! End-to-end acceptance gate. Each test checks one contract item and prints
//! a single pass/fail line (visible with `cargo test --test acceptance --
//! --nocapture`).

use coalpp::analytics;
use coalpp::experiments::{self, stats, ExperimentConfig, ExperimentKind};
use coalpp::genealogy::CoalescentSample;
use coalpp::mutation::{self, MutationOverlay};
use coalpp::scale::ScaleModel;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::{Duration, Instant};

const LN_2: f64 = std::f64::consts::LN_2;

fn verdict(label: &str, f: impl FnOnce() + std::panic::UnwindSafe) -> Result<(), String> {
    let result = std::panic::catch_unwind(f);
    println!("{label}: {}", if result.is_ok() { "PASS" } else { "FAIL" });
    result.map_err(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panic".to_string());
        format!("{label}: {msg}")
    })
}

/// Runs every criterion in order on a single thread so the per-criterion
/// runtime budgets measure the work itself rather than scheduler contention.
#[test]
fn acceptance_criteria() {
    let checks: [fn() -> Result<(), String>; 12] = [
        c01_worked_example_golden_values,
        c02_fast_paths_match_brute_force,
        c03_quadrature_reproduces_closed_forms,
        c04_site_counts_match_expectations,
        c05_site_spectrum_reaches_limit,
        c06_site_count_clt,
        c07_allele_limits_converge,
        c08_thinned_scan_law,
        c09_site_count_growth_constant,
        c10_heavy_tail_transform,
        c11_census_matches_composed_model,
        c12_structural_invariants,
    ];
    let failures: Vec<String> = checks.iter().filter_map(|c| c().err()).collect();
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

fn base_config(kind: ExperimentKind, model: ScaleModel, n: Vec<usize>, reps: usize) -> ExperimentConfig {
    ExperimentConfig {
        kind,
        model,
        theta: 1.0,
        sample_sizes: n,
        replicates: reps,
        seed: 0x5EED,
        k_max: 5,
        lambda_grid: vec![1.0],
        census_p: 0.5,
    }
}

fn worked_example() -> (CoalescentSample, MutationOverlay) {
    let sample =
        CoalescentSample::from_lengths(vec![6.0, 12.0, 6.5, 3.5, 7.5, 16.5, 6.0, 3.0]).unwrap();
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
    )
    .unwrap();
    (sample, overlay)
}

fn budget(elapsed: Duration, limit: Duration, what: &str) {
    assert!(
        elapsed <= limit,
        "{what} took {elapsed:?}, budget {limit:?}"
    );
}

#[test]
fn c01_worked_example_golden_values() {
    verdict("[ 1/12] worked-example golden spectra", || {
        let (sample, overlay) = worked_example();
        // Warm up, then time the analysis itself.
        let _ = mutation::site_spectrum(&sample, &overlay).unwrap();
        let started = Instant::now();
        let site = mutation::site_spectrum(&sample, &overlay).unwrap();
        let keys = mutation::haplotype_keys(&sample, &overlay).unwrap();
        let allele = mutation::allele_spectrum(&keys);
        let elapsed = started.elapsed();
        assert_eq!(site.total, 6);
        assert_eq!(allele.total, 5);
        assert_eq!(&site.counts[..6], [1, 1, 2, 1, 0, 1]);
        assert!(site.counts[6..].iter().all(|&c| c == 0));
        assert_eq!(&allele.counts[..3], [2, 2, 1]);
        assert!(allele.counts[3..].iter().all(|&c| c == 0));
        budget(elapsed, Duration::from_millis(1), "worked-example analysis");
    });
}

#[test]
fn c02_fast_paths_match_brute_force() {
    verdict("[ 2/12] fast spectra equal brute force on 1000 random instances", || {
        let started = Instant::now();
        let config = base_config(
            ExperimentKind::Oracle,
            ScaleModel::yule(1.0).unwrap(),
            vec![50],
            1000,
        );
        let report = experiments::run_oracle_check(&config).unwrap();
        assert!(report.passed, "{:?}", report.notes);
        budget(started.elapsed(), Duration::from_secs(30), "oracle sweep");
    });
}

#[test]
fn c03_quadrature_reproduces_closed_forms() {
    verdict("[ 3/12] generic quadrature matches closed forms to 1e-8", || {
        let started = Instant::now();
        let yule = ScaleModel::yule(1.0).unwrap();
        let critical = ScaleModel::critical(1.0).unwrap();
        for theta in [0.5, 1.0, 2.0] {
            for k in 1..=10usize {
                let q = analytics::limit_site_spectrum_quadrature(&yule, theta, k)
                    .unwrap()
                    .value;
                assert!((q - theta / (k as f64 * (k as f64 + 1.0))).abs() <= 1e-8);
                let q = analytics::limit_site_spectrum_quadrature(&critical, theta, k)
                    .unwrap()
                    .value;
                assert!((q - theta / k as f64).abs() <= 1e-8);
                let q = analytics::limit_allele_spectrum_quadrature(&critical, theta, k)
                    .unwrap()
                    .value;
                let closed = (theta / k as f64) * (1.0 + theta).powi(-(k as i32));
                assert!((q - closed).abs() <= 1e-8);
            }
            let q = analytics::limit_allele_fraction_quadrature(&critical, theta)
                .unwrap()
                .value;
            assert!((q - theta * (1.0 + 1.0 / theta).ln()).abs() <= 1e-8);
        }
        budget(started.elapsed(), Duration::from_secs(5), "closed-form sweep");
    });
}

#[test]
fn c04_finite_sample_expected_site_counts() {
    verdict("[ 4/12] finite-sample per-k site-count expectations", || {
        let started = Instant::now();
        let model = ScaleModel::yule(1.0).unwrap();
        let (n, reps) = (10usize, 100_000usize);
        let per_rep: Vec<(Vec<f64>, Vec<f64>)> = (0..reps)
            .into_par_iter()
            .map(|i| {
                let seed = experiments::derive_substream(0xC4, i as u64);
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let sample = CoalescentSample::simulate(&model, n, &mut rng).unwrap();
                let overlay = MutationOverlay::generate(&sample, 1.0, &mut rng).unwrap();
                let spec = mutation::site_spectrum(&sample, &overlay).unwrap();
                let rb = mutation::expected_spectrum_given_tree(&sample, 1.0);
                let mc: Vec<f64> = (0..n - 1)
                    .map(|i| spec.counts.get(i).copied().unwrap_or(0) as f64)
                    .collect();
                let rb: Vec<f64> = (0..n - 1)
                    .map(|i| rb.get(i).copied().unwrap_or(0.0))
                    .collect();
                (mc, rb)
            })
            .collect();
        for k in 1..n {
            let target = analytics::expected_site_count_exact(&model, 1.0, n, k)
                .unwrap()
                .value;
            let mc: Vec<f64> = per_rep.iter().map(|r| r.0[k - 1]).collect();
            let rb: Vec<f64> = per_rep.iter().map(|r| r.1[k - 1]).collect();
            let (mean, se) = stats::mean_stderr(&mc);
            assert!(
                (mean - target).abs() <= 4.0 * se,
                "k={k}: mc {mean} vs {target} (se {se})"
            );
            let (mean_rb, se_rb) = stats::mean_stderr(&rb);
            assert!(se_rb < se, "k={k}: conditional estimator should cut variance");
            assert!(
                (mean_rb - target).abs() <= 4.0 * se_rb,
                "k={k}: rb {mean_rb} vs {target} (se {se_rb})"
            );
        }
        // Two tips share one stem up to their split: two independent
        // singleton clocks of unit expected length each.
        let pair = analytics::expected_site_count_exact(&model, 1.0, 2, 1)
            .unwrap()
            .value;
        assert!((pair - 2.0).abs() <= 1e-10, "E S_2(1) = {pair}");
        budget(started.elapsed(), Duration::from_secs(120), "site-count sweep");
    });
}

#[test]
fn c05_spectrum_limits_match_monte_carlo() {
    verdict("[ 5/12] per-k spectrum limits within 4 stderr at n = 2e4", || {
        let started = Instant::now();
        for model in [ScaleModel::yule(1.0).unwrap(), ScaleModel::critical(1.0).unwrap()] {
            let config =
                base_config(ExperimentKind::Spectrum, model, vec![20_000], 200);
            let report = experiments::run_spectrum_experiment(&config).unwrap();
            assert!(report.passed, "{model}: {:#?}", report.rows);
            for k in 1..=5usize {
                let quad = analytics::limit_site_spectrum_quadrature(&model, 1.0, k)
                    .unwrap()
                    .value;
                let (est, se) =
                    analytics::limit_site_spectrum_mc_form(&model, 1.0, k, 0xC5, 400_000)
                        .unwrap();
                assert!(
                    (est - quad).abs() <= 4.0 * se,
                    "{model} k={k}: direct-form MC {est} vs {quad} (se {se})"
                );
            }
        }
        budget(started.elapsed(), Duration::from_secs(180), "spectrum-limit sweep");
    });
}

#[test]
fn c06_site_count_clt_variance() {
    verdict("[ 6/12] CLT variance of the normalized site count", || {
        let started = Instant::now();
        let config = base_config(
            ExperimentKind::Clt,
            ScaleModel::yule(1.0).unwrap(),
            vec![10_000],
            2000,
        );
        let report = experiments::run_clt_experiment(&config).unwrap();
        assert_eq!(report.rows[0].analytic, Some(2.0));
        assert!(report.passed, "{:#?}", report.rows);
        budget(started.elapsed(), Duration::from_secs(120), "CLT sweep");
    });
}

#[test]
fn c07_allele_limits_converge() {
    verdict("[ 7/12] haplotype-fraction limits at the linear-scale model", || {
        let started = Instant::now();
        let model = ScaleModel::critical(1.0).unwrap();
        let plan = [(1_000usize, 2000usize), (10_000, 400), (100_000, 50)];
        let mut devs = Vec::new();
        for (n, reps) in plan {
            let mut config = base_config(ExperimentKind::Allele, model, vec![n], reps);
            config.k_max = 1;
            let report = experiments::run_allele_experiment(&config).unwrap();
            let fraction = &report.rows[0];
            assert_eq!(fraction.formula_id, "allele_fraction_limit");
            assert_eq!(fraction.analytic, Some(LN_2));
            let singleton = &report.rows[1];
            assert_eq!(singleton.analytic, Some(0.5));
            if n == 100_000 {
                assert!(report.passed, "{:#?}", report.rows);
            }
            devs.push((
                (fraction.mc_mean.unwrap() - LN_2).abs(),
                fraction.mc_stderr.unwrap(),
            ));
        }
        // The limit has no published convergence rate and the finite-n bias
        // is already below Monte Carlo noise at n = 10^3, so the trend check
        // allows sampling slack: deviations must not grow beyond it.
        for w in devs.windows(2) {
            let ((d0, s0), (d1, s1)) = (w[0], w[1]);
            assert!(
                d1 <= d0 + 4.0 * (s0 + s1),
                "deviation grew: {d0}±{s0} -> {d1}±{s1}"
            );
        }
        budget(started.elapsed(), Duration::from_secs(180), "allele sweep");
    });
}

#[test]
fn c08_thinned_scan_law() {
    verdict("[ 8/12] scanned branch lengths follow the thinned scale law", || {
        let started = Instant::now();
        // ~2 scan entries per tree (incl. the terminal one) => m ≈ 10^4.
        let config = base_config(
            ExperimentKind::Wtheta,
            ScaleModel::critical(1.0).unwrap(),
            vec![1_000],
            5_000,
        );
        let report = experiments::run_wtheta_experiment(&config).unwrap();
        assert_eq!(report.rows.len(), 2);
        assert!(report.passed, "{:#?}", report.rows);
        budget(started.elapsed(), Duration::from_secs(120), "scan-law sweep");
    });
}

#[test]
fn c09_logarithmic_growth_constant() {
    verdict("[ 9/12] site count grows like n ln n at the linear-scale model", || {
        let started = Instant::now();
        let model = ScaleModel::critical(1.0).unwrap();
        let config = base_config(ExperimentKind::Brownian, model, vec![1_000_000], 50);
        let report = experiments::run_brownian_experiment(&config).unwrap();
        assert!(report.passed, "{:#?}", report.rows);
        // Convergence is logarithmic (~0.02 per decade), below the sampling
        // noise of a 50-replicate median, so the trend needs more replicates
        // to be resolvable at all.
        let config = base_config(
            ExperimentKind::Brownian,
            model,
            vec![10_000, 100_000, 1_000_000],
            600,
        );
        let report = experiments::run_brownian_experiment(&config).unwrap();
        let devs: Vec<f64> = report
            .rows
            .iter()
            .map(|r| (r.statistic.unwrap() - r.analytic.unwrap()).abs())
            .collect();
        assert!(
            devs[0] > devs[1] && devs[1] > devs[2],
            "median deviations not decreasing: {devs:?}"
        );
        budget(started.elapsed(), Duration::from_secs(600), "growth sweep");
    });
}

#[test]
fn c10_heavy_tail_laplace_limit() {
    verdict("[10/12] heavy-tail Laplace functional matches nested quadrature", || {
        let started = Instant::now();
        let model = ScaleModel::stable(1.5, 1.0).unwrap();
        let plan = [(1_000usize, 2000usize), (10_000, 500), (100_000, 200)];
        let mut devs = Vec::new();
        for (n, reps) in plan {
            let config = base_config(ExperimentKind::Stable, model, vec![n], reps);
            let report = experiments::run_stable_experiment(&config).unwrap();
            let row = &report.rows[0];
            if n == 100_000 {
                assert!(report.passed, "{:#?}", report.rows);
            }
            devs.push((
                (row.mc_mean.unwrap() - row.analytic.unwrap()).abs(),
                row.mc_stderr.unwrap(),
            ));
        }
        // Finite-n bias is below sampling noise from n = 10^3 on; the trend
        // check therefore only forbids growth beyond the combined stderr.
        for w in devs.windows(2) {
            let ((d0, s0), (d1, s1)) = (w[0], w[1]);
            assert!(
                d1 <= d0 + 4.0 * (s0 + s1),
                "deviation grew: {d0}±{s0} -> {d1}±{s1}"
            );
        }
        let sqrt_pi = std::f64::consts::PI.sqrt();
        // The tail integrand decays like e^{-x}; x = 60 is past all mass.
        let at_infinity = analytics::phi(1.5, 60.0).unwrap();
        assert!((at_infinity - sqrt_pi).abs() <= 1e-6);
        budget(started.elapsed(), Duration::from_secs(600), "heavy-tail sweep");
    });
}

#[test]
fn c11_census_transform_equivalence() {
    verdict("[11/12] census subsampling matches the transformed model", || {
        let started = Instant::now();
        let config = base_config(
            ExperimentKind::CensusEquivalence,
            ScaleModel::yule(1.0).unwrap(),
            vec![2],
            100_000,
        );
        let report = experiments::run_census_equivalence(&config).unwrap();
        assert!(report.passed, "{:#?}", report.rows);
        budget(started.elapsed(), Duration::from_secs(60), "census sweep");
    });
}

#[test]
fn c12_structural_invariants() {
    verdict("[12/12] structural invariants on 10^4 random instances", || {
        let started = Instant::now();
        let families = [
            ScaleModel::yule(1.0).unwrap(),
            ScaleModel::critical(1.0).unwrap(),
            ScaleModel::birth_death(1.0, 2.0).unwrap().with_horizon(2.0).unwrap(),
            ScaleModel::stable(1.7, 1.0).unwrap(),
        ];
        let thetas = [0.0, 0.3, 1.0, 3.0];
        (0..10_000u64).into_par_iter().for_each(|i| {
            let seed = experiments::derive_substream(0xC12, i);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let model = families[(i % 4) as usize];
            let theta = thetas[((i / 4) % 4) as usize];
            use rand::Rng;
            let n = rng.gen_range(2..=60);
            let sample = CoalescentSample::simulate(&model, n, &mut rng).unwrap();
            let overlay = MutationOverlay::generate(&sample, theta, &mut rng).unwrap();
            let site = mutation::site_spectrum(&sample, &overlay).unwrap();
            let keys = mutation::haplotype_keys(&sample, &overlay).unwrap();
            let allele = mutation::allele_spectrum(&keys);

            // Every extra haplotype beyond the first needs a polymorphic site.
            assert!(site.total + 1 >= allele.total);
            // Haplotype classes partition the sample.
            let classified: u64 = allele
                .counts
                .iter()
                .enumerate()
                .map(|(i, &c)| (i as u64 + 1) * c)
                .sum();
            assert_eq!(classified, n as u64);
            // Per-k site counts add up to the polymorphic total.
            assert_eq!(site.counts.iter().sum::<u64>(), site.total);
            // Subtended lengths decompose the finite tree measure.
            let measures = sample.subtending_measures();
            let total: f64 = measures.iter().sum();
            let tree: f64 = sample.y_max() + sample.lengths().iter().sum::<f64>();
            assert!((total - tree).abs() <= 1e-9 * (1.0 + tree.abs()));
            // A leading subsample is itself a valid genealogy that agrees
            // with the full one on every pairwise divergence time.
            let m = rng.gen_range(2..=n);
            let prefix =
                CoalescentSample::from_lengths(sample.lengths()[..m - 1].to_vec()).unwrap();
            for _ in 0..10 {
                let a = rng.gen_range(0..m - 1);
                let b = rng.gen_range(a + 1..m);
                assert_eq!(
                    prefix.coalescence_time(a, b).unwrap(),
                    sample.coalescence_time(a, b).unwrap()
                );
            }
        });
        budget(started.elapsed(), Duration::from_secs(60), "invariant sweep");
    });
}
