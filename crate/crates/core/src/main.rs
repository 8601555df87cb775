//! Command-line harness: synthetic data generation, MCMC fitting, exact
//! mixture posteriors, chain-vs-mixture comparison, and the simulation
//! experiments.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use groupslab::bvm::{build_mixture, compare_to_chain, MixtureExport};
use groupslab::harness::config::ExperimentConfig;
use groupslab::harness::experiments::{run_experiment, ExperimentKind};
use groupslab::harness::generate::generate_data;
use groupslab::harness::io;
use groupslab::sampler::{run_chain, CovarianceMode, JsonlSink, SamplerConfig};
use groupslab::types::Dataset;
use groupslab::{Error, Result};

#[derive(Parser)]
#[command(
    name = "groupslab",
    about = "Bayesian multivariate regression under group sparsity: data generation, MCMC, mixture posteriors, and simulation experiments",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic instance into a directory: x.csv, y.csv,
    /// groups.txt, beta0.csv, sigma0.csv, truth.json.
    Generate {
        /// Experiment configuration (JSON); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Master seed override.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the MCMC sampler on data files; writes chain.jsonl and
    /// summary.json.
    Fit {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory holding x.csv, y.csv, groups.txt.
        #[arg(long)]
        data: PathBuf,
        /// Known covariance (CSV); switches the chain to fixed-covariance
        /// mode.
        #[arg(long)]
        sigma0: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute the exact mixture posterior at a known covariance; writes
    /// mixture.json.
    Bvm {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        /// True covariance (CSV), required by the mixture.
        #[arg(long)]
        sigma0: PathBuf,
        /// Support-size cap; defaults to the configured rule.
        #[arg(long)]
        cap: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a persisted chain against a mixture export; writes
    /// comparison.json.
    Compare {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        mixture: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulation experiment: contraction, selection, bvm-compare,
    /// prior-checks, or wishart-tails.
    Experiment {
        kind: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Print the default experiment configuration as JSON.
    PrintConfig,
}

fn load_config(path: &Option<PathBuf>) -> Result<ExperimentConfig> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Error::Io(p.display().to_string(), e))?;
            ExperimentConfig::from_json(&text)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn ensure_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::Io(path.display().to_string(), e))
}

fn load_dataset(dir: &Path) -> Result<(Dataset, groupslab::GroupStructure)> {
    let x = io::read_matrix_csv(&dir.join("x.csv"))?;
    let y = io::read_matrix_csv(&dir.join("y.csv"))?;
    let groups = io::read_groups(&dir.join("groups.txt"))?;
    if x.ncols() != groups.num_predictors() {
        return Err(Error::Dimension(format!(
            "x.csv has {} columns but groups.txt covers {}",
            x.ncols(),
            groups.num_predictors()
        )));
    }
    Ok((Dataset::new(x, y)?, groups))
}

fn cmd_generate(config: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    ensure_dir(&out)?;
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let gen = generate_data(&cfg.data, &mut rng)?;
    io::write_matrix_csv(&out.join("x.csv"), gen.data.x())?;
    io::write_matrix_csv(&out.join("y.csv"), gen.data.y())?;
    io::write_groups(&out.join("groups.txt"), &gen.groups)?;
    io::write_matrix_csv(&out.join("beta0.csv"), &gen.beta0)?;
    io::write_matrix_csv(&out.join("sigma0.csv"), &gen.sigma0)?;
    let hp = cfg.hyper.resolve(&gen.data, &gen.groups)?;
    let (in_budget, l21_total, budget) = gen.b0_membership(&hp);
    io::write_json(
        &out.join("truth.json"),
        &io::TruthFile {
            support: gen.support0.pairs(),
            signal: cfg.data.signal,
            in_signal_budget: in_budget,
            l21_total,
            signal_budget: budget,
        },
    )?;
    println!(
        "generated n={} p={} d={} s0={} into {}",
        gen.data.n(),
        gen.data.p(),
        gen.data.d(),
        gen.support0.total_size(),
        out.display()
    );
    Ok(())
}

fn cmd_fit(
    config: Option<PathBuf>,
    seed: Option<u64>,
    data_dir: PathBuf,
    sigma0: Option<PathBuf>,
    out: PathBuf,
) -> Result<()> {
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.sampler.seed = s;
    }
    ensure_dir(&out)?;
    let (data, groups) = load_dataset(&data_dir)?;
    let hp = cfg.hyper.resolve(&data, &groups)?;
    let fixed = match &sigma0 {
        Some(path) => {
            cfg.sampler.covariance = CovarianceMode::Fixed;
            Some(io::read_matrix_csv(path)?)
        }
        None => None,
    };
    let chain_path = out.join("chain.jsonl");
    let file = std::fs::File::create(&chain_path)
        .map_err(|e| Error::Io(chain_path.display().to_string(), e))?;
    let mut sink = JsonlSink::new(std::io::BufWriter::new(file));
    let run = run_chain(&data, &groups, &hp, &cfg.sampler, fixed.as_ref(), &mut sink)?;
    drop(sink);
    #[derive(serde::Serialize)]
    struct FitSummary {
        diagnostics: groupslab::sampler::ChainDiagnostics,
        /// Kept-sample counts by total support size.
        size_histogram: std::collections::BTreeMap<usize, usize>,
        final_support: Vec<(usize, usize)>,
        final_loglik: f64,
        final_log_prior: f64,
        sampler: SamplerConfig,
    }
    let mut size_histogram = std::collections::BTreeMap::new();
    for (pairs, count) in &run.diagnostics.support_visits {
        *size_histogram.entry(pairs.len()).or_insert(0) += count;
    }
    io::write_json(
        &out.join("summary.json"),
        &FitSummary {
            size_histogram,
            final_support: run.final_support.pairs(),
            final_loglik: run.final_loglik,
            final_log_prior: run.final_log_prior,
            diagnostics: run.diagnostics,
            sampler: cfg.sampler.clone(),
        },
    )?;
    println!(
        "fit: kept samples in {}, summary in {}",
        chain_path.display(),
        out.join("summary.json").display()
    );
    Ok(())
}

fn cmd_bvm(
    config: Option<PathBuf>,
    data_dir: PathBuf,
    sigma0: PathBuf,
    cap: Option<usize>,
    out: PathBuf,
) -> Result<()> {
    let cfg = load_config(&config)?;
    ensure_dir(&out)?;
    let (data, groups) = load_dataset(&data_dir)?;
    let sigma0 = io::read_matrix_csv(&sigma0)?;
    let hp = cfg.hyper.resolve(&data, &groups)?;
    let cap = cap.or(cfg.bvm_cap).unwrap_or_else(|| {
        let s_star = groupslab::metrics::dimension_threshold(
            data.n(),
            groups.num_groups(),
            data.d(),
            groups.max_group_size(),
            cfg.data.s0,
        );
        (cfg.rate_constants.m2 * s_star).ceil() as usize
    });
    let mp = build_mixture(&data, &groups, &sigma0, &hp, cap)?;
    io::write_json(&out.join("mixture.json"), &MixtureExport::from_posterior(&mp))?;
    let top = &mp.components()[mp.top_component()];
    println!(
        "mixture over {} supports (cap {cap}); top weight {:.4} on {:?}",
        mp.components().len(),
        top.log_weight.exp(),
        top.support.pairs()
    );
    Ok(())
}

fn cmd_compare(chain: PathBuf, mixture: PathBuf, out: PathBuf) -> Result<()> {
    ensure_dir(&out)?;
    let export: MixtureExport = io::read_json(&mixture)?;
    let d = export.d;
    let mp = export.into_posterior()?;
    let records = io::read_chain(&chain)?;
    let samples = io::chain_to_comparison_samples(&records, mp.groups(), d)?;
    let report = compare_to_chain(&mp, &samples)?;
    io::write_json(&out.join("comparison.json"), &report)?;
    println!(
        "support TV {:.4} over {} chain samples; top-weight support visited {} times",
        report.support_tv, report.chain_samples, report.top_chain_count
    );
    Ok(())
}

fn cmd_experiment(
    kind: String,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: PathBuf,
    workers: Option<usize>,
) -> Result<bool> {
    let mut cfg = load_config(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(w) = workers {
        cfg.workers = w;
    }
    ensure_dir(&out)?;
    let kind: ExperimentKind = kind.parse()?;
    let report = run_experiment(kind, &cfg)?;
    io::write_json(&out.join("report.json"), &report)?;
    for table in &report.tables {
        let path = out.join(format!("{}.csv", table.name));
        let mut text = table.header.join(",");
        text.push('\n');
        for row in &table.rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        std::fs::write(&path, text).map_err(|e| Error::Io(path.display().to_string(), e))?;
    }
    for check in &report.checks {
        println!(
            "{} {} (statistic {:.6e}, threshold {:.6e})",
            if check.pass { "PASS" } else { "FAIL" },
            check.name,
            check.statistic,
            check.threshold
        );
    }
    println!(
        "report written to {} ({:.1}s)",
        out.join("report.json").display(),
        report.wall_seconds
    );
    Ok(report.checks.iter().all(|c| c.pass))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate { config, seed, out } => cmd_generate(config, seed, out).map(|_| true),
        Command::Fit {
            config,
            seed,
            data,
            sigma0,
            out,
        } => cmd_fit(config, seed, data, sigma0, out).map(|_| true),
        Command::Bvm {
            config,
            data,
            sigma0,
            cap,
            out,
        } => cmd_bvm(config, data, sigma0, cap, out).map(|_| true),
        Command::Compare {
            chain,
            mixture,
            out,
        } => cmd_compare(chain, mixture, out).map(|_| true),
        Command::Experiment {
            kind,
            config,
            seed,
            out,
            workers,
        } => cmd_experiment(kind, config, seed, out, workers),
        Command::PrintConfig => {
            println!(
                "{}",
                serde_json::to_string_pretty(&ExperimentConfig::default())
                    .expect("default config serializes")
            );
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}
