use clap::{Parser, Subcommand, ValueEnum};
use coalpp::analytics::{self, AnalyticPrediction, AnalyticsError};
use coalpp::experiments::{self, ExperimentConfig, ExperimentKind};
use coalpp::genealogy::CoalescentSample;
use coalpp::mutation::{self, MutationOverlay};
use coalpp::scale::{Family, ScaleModel};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::io::Write as _;
use std::path::PathBuf;
use std::process::ExitCode;

/// Simulator and analytics toolkit for coalescent point processes with
/// neutral mutations at rate θ.
#[derive(Parser)]
#[command(name = "coalpp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(clap::Args)]
struct CommonArgs {
    /// Model spec, e.g. `yule:a=1`, `bd:b=1,d=2`, `critical:a=1`,
    /// `stable:alpha=1.5,c=1`, optionally with `,horizon=10`.
    #[arg(long)]
    model: String,
    /// Mutation rate θ ≥ 0.
    #[arg(long, default_value_t = 1.0)]
    theta: f64,
    /// Sample size(s), comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1000")]
    n: Vec<usize>,
    /// Master seed for all randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output path (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "csv")]
    format: Format,
}

#[derive(Subcommand)]
enum Command {
    /// Draw one genealogy per sample size and report its branch lengths and
    /// observed mutation spectra.
    Simulate {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Evaluate the closed-form / quadrature predictions for a model.
    Predict {
        #[command(flatten)]
        common: CommonArgs,
        /// Largest per-k statistic to tabulate.
        #[arg(long, default_value_t = 10)]
        k_max: usize,
        /// λ grid for the heavy-tail Laplace transform, comma-separated.
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
        lambda: Vec<f64>,
    },
    /// Run a replicated Monte Carlo experiment and compare against the
    /// analytic predictions.
    Experiment {
        /// One of: spectrum, clt, allele, wtheta, stable, brownian,
        /// census-equivalence, oracle.
        kind: ExperimentKind,
        #[command(flatten)]
        common: CommonArgs,
        /// Number of replicates.
        #[arg(long, default_value_t = 200)]
        reps: usize,
        #[arg(long, default_value_t = 5)]
        k_max: usize,
        #[arg(long, value_delimiter = ',', default_value = "0.5,1,2")]
        lambda: Vec<f64>,
        /// Retention probability for the census-equivalence experiment.
        #[arg(long, default_value_t = 0.5)]
        census_p: f64,
    },
    /// Cross-validate the fast spectrum/haplotype algorithms against a
    /// brute-force reimplementation on random instances.
    OracleCheck {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value_t = 1000)]
        reps: usize,
    },
}

fn emit(out: &Option<PathBuf>, text: &str) -> std::io::Result<()> {
    match out {
        Some(path) => std::fs::write(path, text),
        None => std::io::stdout().write_all(text.as_bytes()),
    }
}

#[derive(Serialize)]
struct SimulationOutput {
    n: usize,
    seed: u64,
    total_sites: u64,
    distinct_haplotypes: u64,
    site_spectrum: Vec<u64>,
    allele_spectrum: Vec<u64>,
    lengths: Vec<f64>,
}

fn run_simulate(common: &CommonArgs) -> Result<(), String> {
    let model: ScaleModel = common.model.parse().map_err(|e| format!("{e}"))?;
    let mut outputs = Vec::new();
    for (i, &n) in common.n.iter().enumerate() {
        let seed = experiments::derive_substream(common.seed, i as u64);
        let sample = CoalescentSample::simulate_seeded(&model, n, seed).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(experiments::derive_substream(seed, 1));
        let overlay =
            MutationOverlay::generate(&sample, common.theta, &mut rng).map_err(|e| e.to_string())?;
        let site = mutation::site_spectrum(&sample, &overlay).map_err(|e| e.to_string())?;
        let keys = mutation::haplotype_keys(&sample, &overlay).map_err(|e| e.to_string())?;
        let allele = mutation::allele_spectrum(&keys);
        outputs.push(SimulationOutput {
            n,
            seed,
            total_sites: site.total,
            distinct_haplotypes: allele.total,
            site_spectrum: site.counts.clone(),
            allele_spectrum: allele.counts.clone(),
            lengths: sample.lengths().to_vec(),
        });
    }
    let text = match common.format {
        Format::Json => serde_json::to_string_pretty(&outputs).expect("serializes") + "\n",
        Format::Csv => {
            let mut text = String::from("n,seed,index,length\n");
            for o in &outputs {
                for (i, len) in o.lengths.iter().enumerate() {
                    text.push_str(&format!("{},{},{},{}\n", o.n, o.seed, i + 1, len));
                }
            }
            text
        }
    };
    emit(&common.out, &text).map_err(|e| e.to_string())
}

fn push_prediction(rows: &mut Vec<(String, Option<usize>, f64, f64)>, k: Option<usize>, p: AnalyticPrediction) {
    rows.push((p.formula_id.to_string(), k, p.value, p.error_bound));
}

fn run_predict(common: &CommonArgs, k_max: usize, lambda: &[f64]) -> Result<(), String> {
    let model: ScaleModel = common.model.parse().map_err(|e| format!("{e}"))?;
    let theta = common.theta;
    let mut rows = Vec::new();
    let mut notes = Vec::new();

    push_prediction(
        &mut rows,
        None,
        analytics::limit_sites_rate(&model, theta).map_err(|e| e.to_string())?,
    );
    match analytics::clt_variance(&model, theta) {
        Ok(p) => push_prediction(&mut rows, None, p),
        Err(AnalyticsError::CltInapplicable) => {
            notes.push("clt_variance inapplicable: infinite branch-length moments".to_string())
        }
        Err(e) => return Err(e.to_string()),
    }
    if analytics::spectrum_limit_applies(&model) {
        for k in 1..=k_max {
            push_prediction(
                &mut rows,
                Some(k),
                analytics::limit_site_spectrum(&model, theta, k).map_err(|e| e.to_string())?,
            );
        }
    } else {
        notes.push("site_spectrum_limit inapplicable in the heavy-tail regime".to_string());
    }
    push_prediction(
        &mut rows,
        None,
        analytics::limit_allele_fraction(&model, theta).map_err(|e| e.to_string())?,
    );
    for k in 1..=k_max {
        push_prediction(
            &mut rows,
            Some(k),
            analytics::limit_allele_spectrum(&model, theta, k).map_err(|e| e.to_string())?,
        );
    }
    if let Some(&n) = common.n.first() {
        for k in 1..=k_max.min(n.saturating_sub(1)) {
            push_prediction(
                &mut rows,
                Some(k),
                analytics::expected_site_count_exact(&model, theta, n, k)
                    .map_err(|e| e.to_string())?,
            );
        }
    }
    if let Ok(p) = analytics::brownian_growth_constant(&model, theta) {
        push_prediction(&mut rows, None, p);
    }
    if let Family::Stable { alpha, c } = model.family() {
        if alpha < 2.0 && model.horizon().is_none() {
            for (i, &lam) in lambda.iter().enumerate() {
                push_prediction(
                    &mut rows,
                    Some(i),
                    analytics::stable_laplace_transform(alpha, c, theta, lam)
                        .map_err(|e| e.to_string())?,
                );
            }
        }
    }

    let text = match common.format {
        Format::Csv => {
            let mut text = String::new();
            for note in &notes {
                text.push_str(&format!("#{note}\n"));
            }
            text.push_str("formula_id,k,value,error_bound\n");
            for (id, k, v, e) in &rows {
                let k = k.map(|k| k.to_string()).unwrap_or_default();
                text.push_str(&format!("{id},{k},{v},{e}\n"));
            }
            text
        }
        Format::Json => {
            #[derive(Serialize)]
            struct Row<'a> {
                formula_id: &'a str,
                #[serde(skip_serializing_if = "Option::is_none")]
                k: Option<usize>,
                value: f64,
                error_bound: f64,
            }
            #[derive(Serialize)]
            struct Out<'a> {
                rows: Vec<Row<'a>>,
                notes: &'a [String],
            }
            let out = Out {
                rows: rows
                    .iter()
                    .map(|(id, k, v, e)| Row { formula_id: id, k: *k, value: *v, error_bound: *e })
                    .collect(),
                notes: &notes,
            };
            serde_json::to_string_pretty(&out).expect("serializes") + "\n"
        }
    };
    emit(&common.out, &text).map_err(|e| e.to_string())
}

fn run_experiment(
    kind: ExperimentKind,
    common: &CommonArgs,
    reps: usize,
    k_max: usize,
    lambda: Vec<f64>,
    census_p: f64,
) -> Result<bool, String> {
    let model: ScaleModel = common.model.parse().map_err(|e| format!("{e}"))?;
    let config = ExperimentConfig {
        kind,
        model,
        theta: common.theta,
        sample_sizes: common.n.clone(),
        replicates: reps,
        seed: common.seed,
        k_max,
        lambda_grid: lambda,
        census_p,
    };
    let report = experiments::run(&config).map_err(|e| e.to_string())?;
    let text = match common.format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json() + "\n",
    };
    emit(&common.out, &text).map_err(|e| e.to_string())?;
    Ok(report.passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Simulate { common } => run_simulate(&common).map(|()| true),
        Command::Predict { common, k_max, lambda } => {
            run_predict(&common, k_max, &lambda).map(|()| true)
        }
        Command::Experiment { kind, common, reps, k_max, lambda, census_p } => {
            run_experiment(kind, &common, reps, k_max, lambda, census_p)
        }
        Command::OracleCheck { common, reps } => run_experiment(
            ExperimentKind::Oracle,
            &common,
            reps,
            5,
            vec![1.0],
            0.5,
        ),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("statistical check failed (see report rows with pass=false)");
            ExitCode::from(1)
        }
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
