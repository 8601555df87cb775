//! The five experiment drivers. Each replication generates data, fits, and
//! measures; replications run on a small worker pool with per-replication
//! seeds derived from the master seed, so reports are reproducible and
//! independent of scheduling.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::bvm::{build_mixture, compare_to_chain};
use crate::error::{Error, Result};
use crate::harness::checks::{self, CheckResult};
use crate::harness::config::{replication_seed, DataSpec, ExperimentConfig, Sigma0Spec};
use crate::harness::generate::generate_data;
use crate::harness::io::chain_to_comparison_samples;
use crate::metrics::{dimension_threshold, theoretical_rates, RateSummary};
use crate::priors::{wishart_tail_bounds, WishartTailConfig, WishartTailReport};
use crate::sampler::{run_chain, CovarianceMode, SampleRecord, SamplerConfig, VecSink};
use crate::types::SupportIndex;

/// Which experiment to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Contraction,
    Selection,
    BvmCompare,
    PriorChecks,
    WishartTails,
}

impl std::str::FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "contraction" => Ok(Self::Contraction),
            "selection" => Ok(Self::Selection),
            "bvm-compare" => Ok(Self::BvmCompare),
            "prior-checks" => Ok(Self::PriorChecks),
            "wishart-tails" => Ok(Self::WishartTails),
            other => Err(Error::InvalidArgument(format!(
                "unknown experiment {other:?}; expected contraction, selection, bvm-compare, prior-checks, or wishart-tails"
            ))),
        }
    }
}

/// One replication's measurements; unused fields stay `None`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepRow {
    pub rep: usize,
    pub seed: u64,
    pub arm: String,
    pub n: usize,
    /// Mean posterior prediction loss `||X(beta - beta0)||_F^2 / n`.
    pub prediction_loss: Option<f64>,
    /// Mean posterior squared Frobenius loss.
    pub frobenius_loss: Option<f64>,
    /// Mean posterior squared l2,1 loss.
    pub l21_loss: Option<f64>,
    pub modal_support_exact: Option<bool>,
    pub missed_pairs: Option<usize>,
    pub false_pairs: Option<usize>,
    pub w_s0: Option<f64>,
    pub tv_mixture: Option<f64>,
    pub ess_loglik: Option<f64>,
    pub beta_acceptance: Option<f64>,
    pub wall_seconds: f64,
}

impl RepRow {
    fn new(rep: usize, seed: u64, arm: impl Into<String>, n: usize) -> Self {
        Self {
            rep,
            seed,
            arm: arm.into(),
            n,
            prediction_loss: None,
            frobenius_loss: None,
            l21_loss: None,
            modal_support_exact: None,
            missed_pairs: None,
            false_pairs: None,
            w_s0: None,
            tv_mixture: None,
            ess_loglik: None,
            beta_acceptance: None,
            wall_seconds: 0.0,
        }
    }
}

/// A named scalar derived from the per-replication rows.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Aggregate {
    pub name: String,
    pub value: f64,
}

/// A plottable table, persisted as CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

/// The experiment outcome: rows, aggregates recomputable from them, check
/// verdicts, and optional rate summary and Wishart reports.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub kind: ExperimentKind,
    pub per_replication: Vec<RepRow>,
    pub aggregates: Vec<Aggregate>,
    pub checks: Vec<CheckResult>,
    pub tables: Vec<Table>,
    pub rate_summary: Option<RateSummary>,
    pub wishart_reports: Vec<WishartTailReport>,
    pub wall_seconds: f64,
}

impl RunReport {
    fn new(scenario: &str, kind: ExperimentKind) -> Self {
        Self {
            scenario: scenario.to_string(),
            kind,
            per_replication: Vec::new(),
            aggregates: Vec::new(),
            checks: Vec::new(),
            tables: Vec::new(),
            rate_summary: None,
            wishart_reports: Vec::new(),
            wall_seconds: 0.0,
        }
    }

    pub fn aggregate(&self, name: &str) -> Option<f64> {
        self.aggregates
            .iter()
            .find(|a| a.name == name)
            .map(|a| a.value)
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }
}

/// Runs `count` jobs on `workers` threads (0 = machine parallelism),
/// preserving job-index order in the output.
fn run_parallel<T: Send>(
    count: usize,
    workers: usize,
    job: impl Fn(usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    let workers = if workers == 0 {
        std::thread::available_parallelism()
            .map(|v| v.get())
            .unwrap_or(1)
            .min(count)
    } else {
        workers.min(count)
    }
    .max(1);
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<Result<T>>>> =
        Mutex::new((0..count).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= count {
                    break;
                }
                let out = job(idx);
                results.lock().unwrap()[idx] = Some(out);
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.unwrap_or_else(|| Err(Error::Numeric(format!("replication {i} never ran"))))
                .map_err(|e| Error::Numeric(format!("replication {i}: {e}")))
        })
        .collect()
}

/// Posterior-mean losses over kept samples against the truth.
fn posterior_mean_losses(
    records: &[SampleRecord],
    gram: &DMatrix<f64>,
    beta0: &DMatrix<f64>,
    groups: &crate::types::GroupStructure,
) -> (f64, f64, f64) {
    let p = beta0.nrows();
    let d = beta0.ncols();
    let mut pred = 0.0;
    let mut frob = 0.0;
    let mut l21 = 0.0;
    for rec in records {
        let mut delta = -beta0.clone();
        for &(r, c, v) in &rec.beta {
            delta[(r, c)] += v;
        }
        for k in 0..d {
            let col = delta.column(k);
            let gcol = gram * col;
            pred += col.dot(&gcol);
        }
        frob += delta.norm_squared();
        let mut l21_total = 0.0;
        for k in 0..d {
            for j in 0..groups.num_groups() {
                let sq: f64 = groups.columns(j).map(|r| delta[(r, k)] * delta[(r, k)]).sum();
                l21_total += sq.sqrt();
            }
        }
        l21 += l21_total * l21_total;
        let _ = p;
    }
    let m = records.len().max(1) as f64;
    (pred / m, frob / m, l21 / m)
}

/// Modal support over kept samples.
fn modal_support(records: &[SampleRecord], num_groups: usize, d: usize) -> Result<SupportIndex> {
    let mut counts: std::collections::HashMap<&[(usize, usize)], usize> =
        std::collections::HashMap::new();
    for rec in records {
        *counts.entry(rec.support.as_slice()).or_insert(0) += 1;
    }
    let best = counts
        .into_iter()
        .max_by_key(|&(_, c)| c)
        .map(|(s, _)| s.to_vec())
        .unwrap_or_default();
    SupportIndex::from_pairs(d, num_groups, &best)
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[idx]
}

/// Fits one generated instance and returns the kept records plus
/// diagnostics; a helper shared by the experiment arms.
fn fit_instance(
    gen: &crate::harness::generate::GeneratedData,
    cfg: &ExperimentConfig,
    sampler: &SamplerConfig,
) -> Result<(Vec<SampleRecord>, crate::sampler::ChainDiagnostics)> {
    let hp = cfg.hyper.resolve(&gen.data, &gen.groups)?;
    let mut sink = VecSink::default();
    let run = run_chain(&gen.data, &gen.groups, &hp, sampler, None, &mut sink)?;
    Ok((sink.records, run.diagnostics))
}

/// Contraction scaling: sweeps the configured sample sizes with the rest of
/// the instance fixed and reports mean posterior prediction losses.
fn run_contraction(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(&cfg.scenario, ExperimentKind::Contraction);
    let ns = cfg.contraction_ns.clone();
    if ns.len() < 2 {
        return Err(Error::InvalidArgument(
            "contraction needs at least two sample sizes".into(),
        ));
    }
    let jobs: Vec<(usize, usize)> = ns
        .iter()
        .enumerate()
        .flat_map(|(ni, &n)| (0..cfg.replications).map(move |r| (n, ni * 10_000 + r)))
        .collect();
    let rows = run_parallel(jobs.len(), cfg.workers, |idx| {
        let (n, job_id) = jobs[idx];
        let rep = job_id % 10_000;
        let seed = replication_seed(cfg.seed, job_id as u64);
        let started = Instant::now();
        let spec = DataSpec { n, ..cfg.data.clone() };
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let gen = generate_data(&spec, &mut rng)?;
        let sampler = SamplerConfig { seed, ..cfg.sampler.clone() };
        let (records, diag) = fit_instance(&gen, cfg, &sampler)?;
        let gram = gen.data.x().transpose() * gen.data.x();
        let (pred, frob, l21) = posterior_mean_losses(&records, &gram, &gen.beta0, &gen.groups);
        let mut row = RepRow::new(rep, seed, format!("n={n}"), n);
        row.prediction_loss = Some(pred / n as f64);
        row.frobenius_loss = Some(frob);
        row.l21_loss = Some(l21);
        row.ess_loglik = Some(diag.ess_loglik);
        row.beta_acceptance = Some(diag.acceptance_rate(crate::sampler::MoveKind::Beta));
        row.wall_seconds = started.elapsed().as_secs_f64();
        Ok(row)
    })?;
    // Per-n aggregation and the scaling table.
    let mut table = Table {
        name: "contraction".into(),
        header: vec![
            "n".into(),
            "mean_prediction_loss".into(),
            "q10".into(),
            "median".into(),
            "q90".into(),
        ],
        rows: Vec::new(),
    };
    let mut means = Vec::new();
    for &n in &ns {
        let mut losses: Vec<f64> = rows
            .iter()
            .filter(|r| r.n == n)
            .filter_map(|r| r.prediction_loss)
            .collect();
        losses.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        means.push(mean);
        report.aggregates.push(Aggregate {
            name: format!("mean_prediction_loss_n{n}"),
            value: mean,
        });
        table.rows.push(vec![
            n as f64,
            mean,
            quantile(&losses, 0.1),
            quantile(&losses, 0.5),
            quantile(&losses, 0.9),
        ]);
    }
    let decreasing = means.windows(2).all(|w| w[1] < w[0]);
    report.checks.push(CheckResult {
        name: "contraction-loss-decreasing".into(),
        statistic: if decreasing { 0.0 } else { 1.0 },
        threshold: 0.5,
        pass: decreasing,
    });
    let ratio = means[0] / means[means.len() - 1];
    report.aggregates.push(Aggregate {
        name: "loss_ratio_first_to_last".into(),
        value: ratio,
    });
    report.checks.push(CheckResult {
        name: "contraction-ratio-in-[2,8]".into(),
        statistic: ratio,
        threshold: 8.0,
        pass: (2.0..=8.0).contains(&ratio),
    });
    report.per_replication = rows;
    report.tables.push(table);
    Ok(report)
}

/// Selection consistency: a strong arm at the configured signal and a weak
/// arm at one tenth of the beta-min threshold norm.
fn run_selection(cfg: &ExperimentConfig) -> Result<RunReport> {
    if !(cfg.data.signal > 0.0) {
        return Err(Error::InvalidArgument(
            "selection needs a positive signal to rescale against".into(),
        ));
    }
    let mut report = RunReport::new(&cfg.scenario, ExperimentKind::Selection);
    let arms = ["strong", "weak"];
    let total = arms.len() * cfg.replications;
    let rows = run_parallel(total, cfg.workers, |idx| {
        let arm = arms[idx / cfg.replications];
        let rep = idx % cfg.replications;
        let seed = replication_seed(cfg.seed, idx as u64);
        let started = Instant::now();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut gen = generate_data(&cfg.data, &mut rng)?;
        let hp = cfg.hyper.resolve(&gen.data, &gen.groups)?;
        let max_lambda = hp.lambda().iter().cloned().fold(0.0f64, f64::max);
        let rates = theoretical_rates(
            gen.data.x(),
            &gen.groups,
            cfg.data.d,
            cfg.data.s0,
            max_lambda,
            cfg.rate_constants,
        )?;
        if arm == "weak" {
            // Rescale every active block to one tenth of the beta-min norm,
            // keeping the realized noise.
            let target = 0.1 * rates.beta_min_threshold.sqrt();
            let factor = target / cfg.data.signal;
            let noise = gen.data.y() - gen.data.x() * &gen.beta0;
            let beta_scaled = &gen.beta0 * factor;
            let y = gen.data.x() * &beta_scaled + noise;
            gen.beta0 = beta_scaled;
            gen.data = crate::types::Dataset::new(gen.data.x().clone(), y)?;
        }
        let sampler = SamplerConfig { seed, ..cfg.sampler.clone() };
        let (records, diag) = fit_instance(&gen, cfg, &sampler)?;
        let modal = modal_support(&records, gen.groups.num_groups(), cfg.data.d)?;
        let sel = crate::metrics::selection_report(&modal, &gen.support0);
        let mut row = RepRow::new(rep, seed, arm, cfg.data.n);
        row.modal_support_exact = Some(sel.exact_match);
        row.missed_pairs = Some(sel.missed.len());
        row.false_pairs = Some(sel.false_pairs.len());
        row.ess_loglik = Some(diag.ess_loglik);
        row.beta_acceptance = Some(diag.acceptance_rate(crate::sampler::MoveKind::Beta));
        row.wall_seconds = started.elapsed().as_secs_f64();
        Ok(row)
    })?;
    for arm in arms {
        let hits = rows
            .iter()
            .filter(|r| r.arm == arm)
            .filter(|r| r.modal_support_exact == Some(true))
            .count();
        let frac = hits as f64 / cfg.replications as f64;
        report.aggregates.push(Aggregate {
            name: format!("exact_selection_rate_{arm}"),
            value: frac,
        });
        if arm == "strong" {
            report.checks.push(CheckResult {
                name: "selection-strong-at-least-90pct".into(),
                statistic: frac,
                threshold: 0.9,
                pass: frac >= 0.9,
            });
        } else {
            report.checks.push(CheckResult {
                name: "selection-weak-below-50pct".into(),
                statistic: frac,
                threshold: 0.5,
                pass: frac < 0.5,
            });
        }
    }
    report.per_replication = rows;
    Ok(report)
}

/// The tiny instance used for the chain-vs-mixture total variation check.
pub fn tiny_instance_spec() -> DataSpec {
    DataSpec {
        n: 200,
        num_groups: 4,
        group_size: 1,
        group_sizes: None,
        d: 1,
        s0: 1,
        signal: 1.0,
        sigma0: Sigma0Spec {
            eig_min: 1.0,
            eig_max: 1.0,
            rotate: false,
        },
    }
}

/// Mixture weights on the configured instance (dominant-truth check) plus
/// a chain-vs-mixture total variation comparison on the tiny instance.
fn run_bvm_compare(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(&cfg.scenario, ExperimentKind::BvmCompare);
    let cap = match cfg.bvm_cap {
        Some(cap) => cap,
        None => {
            let groups = cfg.data.groups()?;
            let s_star = dimension_threshold(
                cfg.data.n,
                groups.num_groups(),
                cfg.data.d,
                groups.max_group_size(),
                cfg.data.s0,
            );
            (cfg.rate_constants.m2 * s_star).ceil() as usize
        }
    };
    let mut rows = run_parallel(cfg.replications, cfg.workers, |rep| {
        let seed = replication_seed(cfg.seed, rep as u64);
        let started = Instant::now();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let gen = generate_data(&cfg.data, &mut rng)?;
        let hp = cfg.hyper.resolve(&gen.data, &gen.groups)?;
        let mp = build_mixture(&gen.data, &gen.groups, &gen.sigma0, &hp, cap)?;
        let mut row = RepRow::new(rep, seed, "weights", cfg.data.n);
        row.w_s0 = mp.weight_of(&gen.support0).or(Some(0.0));
        row.wall_seconds = started.elapsed().as_secs_f64();
        Ok(row)
    })?;
    let dominant = rows
        .iter()
        .filter(|r| r.w_s0.map(|w| w > 0.9).unwrap_or(false))
        .count();
    report.aggregates.push(Aggregate {
        name: "reps_with_w_s0_above_0.9".into(),
        value: dominant as f64,
    });
    let needed = (cfg.replications as f64 * 0.9).ceil();
    report.checks.push(CheckResult {
        name: "bvm-truth-dominates".into(),
        statistic: dominant as f64,
        threshold: needed,
        pass: dominant as f64 >= needed,
    });

    // Tiny-instance chain-vs-mixture total variation.
    let tiny = tiny_instance_spec();
    let seed = replication_seed(cfg.seed, 1_000_000);
    let started = Instant::now();
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let gen = generate_data(&tiny, &mut rng)?;
    let hp = cfg.hyper.resolve(&gen.data, &gen.groups)?;
    let sampler = SamplerConfig {
        iterations: 120_000,
        burn_in: 20_000,
        thin: 1,
        covariance: CovarianceMode::Eigen,
        init: crate::sampler::InitStrategy::WarmStart,
        seed,
        ..SamplerConfig::default()
    };
    let mut sink = VecSink::default();
    run_chain(&gen.data, &gen.groups, &hp, &sampler, None, &mut sink)?;
    let mp = build_mixture(
        &gen.data,
        &gen.groups,
        &gen.sigma0,
        &hp,
        tiny.num_groups * tiny.d,
    )?;
    let samples = chain_to_comparison_samples(&sink.records, &gen.groups, tiny.d)?;
    let cmp = compare_to_chain(&mp, &samples)?;
    let mut tiny_row = RepRow::new(0, seed, "tiny-tv", tiny.n);
    tiny_row.tv_mixture = Some(cmp.support_tv);
    tiny_row.wall_seconds = started.elapsed().as_secs_f64();
    rows.push(tiny_row);
    report.aggregates.push(Aggregate {
        name: "tiny_instance_tv".into(),
        value: cmp.support_tv,
    });
    report.checks.push(CheckResult {
        name: "bvm-tiny-instance-tv-below-0.1".into(),
        statistic: cmp.support_tv,
        threshold: 0.1,
        pass: cmp.support_tv < 0.1,
    });
    report.per_replication = rows;
    Ok(report)
}

/// Full-size prior law checks.
fn run_prior_checks(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(&cfg.scenario, ExperimentKind::PriorChecks);
    let mut rng = ChaCha20Rng::seed_from_u64(replication_seed(cfg.seed, 0));
    for m in [1usize, 2, 3] {
        for lambda in [0.5, 1.0, 2.0] {
            report.checks.push(checks::slab_normalization_check(
                m, lambda, 1_000_000, 0.01, &mut rng,
            )?);
        }
    }
    for m in [1usize, 2, 5] {
        report
            .checks
            .push(checks::slab_radius_ks_check(m, 1.0, 100_000, &mut rng));
    }
    report.checks.push(checks::slab_symmetry_check(3, 1.0, 100_000, &mut rng));
    report.checks.push(checks::haar_invariance_check(3, 100_000, &mut rng));
    report.checks.push(checks::haar_sign_check(100_000, 0.01, &mut rng));
    report
        .checks
        .push(checks::inverse_gaussian_quadrature_check(1.0, 1.0, 0.01));
    report
        .checks
        .push(checks::inverse_gaussian_ks_check(1.0, 1.0, 100_000, &mut rng));
    let groups = cfg.data.groups()?;
    report.checks.extend(checks::dimension_prior_checks(
        groups.num_groups(),
        cfg.data.d,
        cfg.data.n,
        groups.max_group_size(),
        cfg.hyper.dim_exponent,
    )?);
    Ok(report)
}

/// The Wishart tail-bound configurations exercised by `wishart-tails`.
pub fn wishart_tail_configs(draws: usize) -> Vec<WishartTailConfig> {
    vec![
        WishartTailConfig {
            dof: 10,
            psi: DMatrix::identity(3, 3),
            t1: 60.0,
            t2: 1e-4,
            t3: 1.0,
            anchors: vec![2.0, 6.0, 12.0],
            draws,
        },
        WishartTailConfig {
            dof: 25,
            psi: DMatrix::identity(5, 5),
            t1: 250.0,
            t2: 1e-3,
            t3: 1.0,
            anchors: vec![6.0, 12.0, 18.0, 26.0, 36.0],
            draws,
        },
    ]
}

fn run_wishart_tails(cfg: &ExperimentConfig) -> Result<RunReport> {
    let mut report = RunReport::new(&cfg.scenario, ExperimentKind::WishartTails);
    let mut rng = ChaCha20Rng::seed_from_u64(replication_seed(cfg.seed, 0));
    for (i, tail_cfg) in wishart_tail_configs(10_000).into_iter().enumerate() {
        let out = wishart_tail_bounds(&tail_cfg, &mut rng)?;
        let tag = format!("nu={} d={}", tail_cfg.dof, tail_cfg.psi.nrows());
        report.checks.push(CheckResult {
            name: format!("wishart-largest-upper-bound {tag}"),
            statistic: out.empirical_largest,
            threshold: out.upper_largest(),
            pass: out.empirical_largest <= out.upper_largest(),
        });
        report.checks.push(CheckResult {
            name: format!("wishart-smallest-upper-bound {tag}"),
            statistic: out.empirical_smallest,
            threshold: out.upper_smallest(),
            pass: out.empirical_smallest <= out.upper_smallest(),
        });
        report.checks.push(CheckResult {
            name: format!("wishart-interval-lower-bound {tag}"),
            statistic: out.lower_interval(),
            threshold: out.empirical_interval,
            pass: out.empirical_interval >= out.lower_interval(),
        });
        if i == 0 {
            // The first configuration is tuned so the interval event has
            // nonnegligible mass.
            report.checks.push(CheckResult {
                name: format!("wishart-interval-event-mass {tag}"),
                statistic: 1e-3,
                threshold: out.empirical_interval,
                pass: out.empirical_interval >= 1e-3,
            });
        }
        report.wishart_reports.push(out);
    }
    Ok(report)
}

/// Dispatches one experiment and stamps the wall time.
pub fn run_experiment(kind: ExperimentKind, cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let started = Instant::now();
    let mut report = match kind {
        ExperimentKind::Contraction => run_contraction(cfg)?,
        ExperimentKind::Selection => run_selection(cfg)?,
        ExperimentKind::BvmCompare => run_bvm_compare(cfg)?,
        ExperimentKind::PriorChecks => run_prior_checks(cfg)?,
        ExperimentKind::WishartTails => run_wishart_tails(cfg)?,
    };
    report.wall_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}
