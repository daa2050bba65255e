//! Command-line surface: strict JSON configuration loading, the experiment
//! commands, and report emission.
//!
//! Every command reads one JSON config (unknown keys are hard errors), honors
//! the `--seed/--out/--threads` overrides, echoes the effective config into
//! its JSON summary, and is idempotent: re-running with the same config and
//! seed rewrites byte-identical outputs except for the summary timestamp and
//! the per-record wall times.
//!
//! Exit codes: `0` success (all requested verdicts pass), `1` a verdict
//! failed, `2` validation or execution error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::eb::{estimate_alpha, EBConfig};
use crate::error::{Error, Result};
use crate::lab::{
    fit_rate, illustrative_envelope, prior_self_similar_mass, run_contraction, ErrField,
    ExperimentPlan, InstanceSpec, RateFit, TruthSpec,
};
use crate::operators::verify_assumptions;
use crate::posterior::{kl_ball_check, simulate_data, DataRealization};
use crate::report::{render_report, write_records_csv, RunSummary};
use crate::sequence::{ell2_norm, BallKind, BallSpec, SelfSimilarSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERDICT_FAILED: i32 = 1;
pub const EXIT_ERROR: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "galeb",
    version,
    about = "Spectral-Galerkin empirical Bayes experiments for linear Gaussian inverse problems",
    after_help = "Config files are strict JSON: unknown keys are rejected. Every command\n\
                  writes a JSON summary echoing the effective config (with CLI overrides\n\
                  applied); the only non-reproducible bytes are the summary timestamp and\n\
                  per-record wall times."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to the JSON config for this command.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `master_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config's `threads` (0 = all available cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one data realization and write it as JSON.
    ///
    /// Config keys: instance (required), truth (required), n (required),
    /// master_seed (default 0), output_dir (default "out"), threads (default 0).
    Simulate(CommonArgs),
    /// Estimate the regularity index from a data file or an inline simulation.
    ///
    /// Config keys: instance (required), data_file OR simulate {truth, n}
    /// (one required), eb (default: offset_c1 1, threshold_lo 1, threshold_hi 2,
    /// grid_points 256, refine_tol 1e-4, beta_tilde_max 4), write_curve
    /// (default false), master_seed (default 0), output_dir (default "out"),
    /// threads (default 0).
    EstimateAlpha(CommonArgs),
    /// Run a Monte Carlo contraction experiment and fit error rates.
    ///
    /// Config keys: plan {instance, truth, n_grid, replicates, estimator,
    /// eps_exponent (default 0.1), m_n_rule (default sqrt-log),
    /// beta_tilde_min (default 0.5), master_seed (default 0)}, fits (default
    /// empty; entries {field: err_u|err_m, target, tolerance}), output_dir
    /// (default "out"), threads (default 0). Exit 1 when any fit verdict fails.
    Contract(CommonArgs),
    /// Verify the structural assumptions on an instance at two truncations.
    ///
    /// Config keys: instance (required), alpha_grid (required), r_grid
    /// (default [0, 0.5, 1]), probes (default 8), master_seed (default 0),
    /// output_dir (default "out"), threads (default 0). Exit 1 when the
    /// consistency verdict fails.
    VerifyAssumptions(CommonArgs),
    /// Estimate the prior mass of the self-similar class.
    ///
    /// Config keys: alpha (required), epsilon (required), n0 (required),
    /// rho (required), beta (required), radius (required), samples (default
    /// 500), n_coords (default 4096), min_fraction (default 0.99),
    /// master_seed (default 0), output_dir (default "out"), threads
    /// (default 0). Exit 1 when the fraction is below min_fraction.
    PriorMass(CommonArgs),
    /// Monte Carlo check of the KL-ball identity.
    ///
    /// Config keys: instance (required), u (required truth spec), u_truth
    /// (required truth spec), n (required), mc (default 10000), z_mean_max
    /// (default 3), var_rel_se_max (default 5), master_seed (default 0),
    /// output_dir (default "out"), threads (default 0). Exit 1 when either
    /// gate fails.
    KlCheck(CommonArgs),
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

fn default_mc() -> usize {
    10_000
}

fn default_probes() -> usize {
    8
}

fn default_r_grid() -> Vec<f64> {
    vec![0.0, 0.5, 1.0]
}

fn default_samples() -> usize {
    500
}

fn default_n_coords() -> usize {
    4096
}

fn default_min_fraction() -> f64 {
    0.99
}

fn default_z_mean_max() -> f64 {
    3.0
}

fn default_var_rel_se_max() -> f64 {
    5.0
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    instance: InstanceSpec,
    truth: TruthSpec,
    n: f64,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    threads: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InlineSimulation {
    truth: TruthSpec,
    n: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EstimateAlphaConfig {
    instance: InstanceSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    data_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    simulate: Option<InlineSimulation>,
    #[serde(default)]
    eb: EBConfig,
    #[serde(default)]
    write_curve: bool,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    threads: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FitSpec {
    field: ErrField,
    target: f64,
    tolerance: f64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContractConfig {
    plan: ExperimentPlan,
    #[serde(default)]
    fits: Vec<FitSpec>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    threads: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyConfig {
    instance: InstanceSpec,
    alpha_grid: Vec<f64>,
    #[serde(default = "default_r_grid")]
    r_grid: Vec<f64>,
    #[serde(default = "default_probes")]
    probes: usize,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    threads: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PriorMassConfig {
    alpha: f64,
    epsilon: f64,
    n0: usize,
    rho: f64,
    beta: f64,
    radius: f64,
    #[serde(default = "default_samples")]
    samples: usize,
    #[serde(default = "default_n_coords")]
    n_coords: usize,
    #[serde(default = "default_min_fraction")]
    min_fraction: f64,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    threads: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KlCheckConfig {
    instance: InstanceSpec,
    u: TruthSpec,
    u_truth: TruthSpec,
    n: f64,
    #[serde(default = "default_mc")]
    mc: usize,
    #[serde(default = "default_z_mean_max")]
    z_mean_max: f64,
    #[serde(default = "default_var_rel_se_max")]
    var_rel_se_max: f64,
    #[serde(default)]
    master_seed: u64,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    threads: usize,
}

fn load_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

fn ensure_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn effective_config<T: Serialize>(config: &T) -> Result<serde_json::Value> {
    serde_json::to_value(config).map_err(|e| Error::Config(e.to_string()))
}

fn with_thread_pool<T: Send>(threads: usize, task: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(task());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(task))
}

/// Parses and runs a full command line; returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    let outcome = match cli.command {
        Command::Simulate(common) => cmd_simulate(&common),
        Command::EstimateAlpha(common) => cmd_estimate_alpha(&common),
        Command::Contract(common) => cmd_contract(&common),
        Command::VerifyAssumptions(common) => cmd_verify(&common),
        Command::PriorMass(common) => cmd_prior_mass(&common),
        Command::KlCheck(common) => cmd_kl_check(&common),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

fn cmd_simulate(common: &CommonArgs) -> Result<i32> {
    let mut config: SimulateConfig = load_config(&common.config)?;
    apply_overrides(
        &mut config.master_seed,
        &mut config.output_dir,
        &mut config.threads,
        common,
    );
    if !(config.n > 0.0) {
        return Err(Error::Config(format!(
            "noise scale n must be > 0, got {}",
            config.n
        )));
    }
    let instance = config.instance.build()?;
    let truth = config.truth.build(&instance, config.master_seed)?;
    let data = simulate_data(&instance, &truth, config.n, config.master_seed)?;
    ensure_output_dir(&config.output_dir)?;
    let data_path = config.output_dir.join("data.json");
    fs::write(&data_path, data.to_json()).map_err(|e| Error::io(&data_path, e))?;
    let signal_norm = ell2_norm(&instance.apply_forward(&truth));
    println!("noise level (n^-1/2): {}", config.n.sqrt().recip());
    println!("|T u|: {signal_norm}");
    println!("wrote {}", data_path.display());
    let mut summary = RunSummary::new("simulate", effective_config(&config)?, config.threads);
    summary.extra = Some(serde_json::json!({
        "signal_norm": signal_norm,
        "data_file": data_path,
    }));
    summary.write(&config.output_dir.join("simulate_summary.json"))?;
    Ok(EXIT_OK)
}

fn cmd_estimate_alpha(common: &CommonArgs) -> Result<i32> {
    let mut config: EstimateAlphaConfig = load_config(&common.config)?;
    apply_overrides(
        &mut config.master_seed,
        &mut config.output_dir,
        &mut config.threads,
        common,
    );
    let instance = config.instance.build()?;
    let data: DataRealization = match (&config.data_file, &config.simulate) {
        (Some(path), None) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            DataRealization::from_json(&text)?
        }
        (None, Some(inline)) => {
            let truth = inline.truth.build(&instance, config.master_seed)?;
            simulate_data(&instance, &truth, inline.n, config.master_seed)?
        }
        _ => {
            return Err(Error::Config(
                "exactly one of data_file or simulate must be given".into(),
            ));
        }
    };
    let estimate = estimate_alpha(&data.d, data.n, &instance, &config.eb)?;
    ensure_output_dir(&config.output_dir)?;
    let printed = serde_json::json!({
        "alpha_tilde_raw": estimate.alpha_tilde_raw,
        "alpha_tilde_hat": estimate.alpha_tilde_hat,
        "alpha_hat": estimate.alpha_hat,
        "n": estimate.n,
        "curve_points": estimate.curve.points.len(),
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&printed).map_err(|e| Error::Config(e.to_string()))?
    );
    if config.write_curve {
        let curve_path = config.output_dir.join("likelihood_curve.csv");
        let file = fs::File::create(&curve_path).map_err(|e| Error::io(&curve_path, e))?;
        estimate
            .curve
            .write_csv(std::io::BufWriter::new(file))
            .map_err(|e| Error::io(&curve_path, e))?;
    }
    let mut summary =
        RunSummary::new("estimate-alpha", effective_config(&config)?, config.threads);
    summary.extra = Some(printed);
    summary.write(&config.output_dir.join("estimate_summary.json"))?;
    Ok(EXIT_OK)
}

fn cmd_contract(common: &CommonArgs) -> Result<i32> {
    let mut config: ContractConfig = load_config(&common.config)?;
    if let Some(seed) = common.seed {
        config.plan.master_seed = seed;
    }
    if let Some(out) = &common.out {
        config.output_dir = out.clone();
    }
    if let Some(threads) = common.threads {
        config.threads = threads;
    }
    if !config.fits.is_empty() && config.plan.n_grid.len() < 4 {
        return Err(Error::Config(
            "rate fits need an n_grid with at least 4 points".into(),
        ));
    }
    let records = with_thread_pool(config.threads, || run_contraction(&config.plan))??;
    let fits: Vec<RateFit> = config
        .fits
        .iter()
        .map(|f| fit_rate(&records, f.field, f.target, f.tolerance))
        .collect::<Result<_>>()?;
    ensure_output_dir(&config.output_dir)?;
    write_records_csv(&records, &config.output_dir.join("records.csv"))?;
    let instance = config.plan.instance.build()?;
    let spectrum = instance.spectrum();
    let envelope: Vec<(f64, f64)> = config
        .plan
        .n_grid
        .iter()
        .map(|&n| {
            (
                n,
                illustrative_envelope(
                    instance.exponents(),
                    spectrum.p(),
                    spectrum.d(),
                    config.plan.eps_exponent,
                    n,
                ),
            )
        })
        .collect();
    let mut summary = RunSummary::new("contract", effective_config(&config)?, config.threads);
    summary.record_count = records.len();
    summary.fits = fits.clone();
    summary.extra = Some(serde_json::json!({
        "illustrative_envelope": envelope,
        "truncation": instance.dim(),
    }));
    summary.write(&config.output_dir.join("summary.json"))?;
    render_report(
        &records,
        &fits,
        instance.label(),
        &config.output_dir.join("report.svg"),
    )?;
    for fit in &fits {
        println!(
            "fit {:?}: slope {:.4} vs target {:.4} +- {:.2} => {}",
            fit.field,
            fit.slope,
            fit.target_exponent,
            fit.tolerance,
            if fit.verdict { "pass" } else { "FAIL" }
        );
    }
    if fits.iter().all(|f| f.verdict) {
        Ok(EXIT_OK)
    } else {
        Ok(EXIT_VERDICT_FAILED)
    }
}

fn cmd_verify(common: &CommonArgs) -> Result<i32> {
    let mut config: VerifyConfig = load_config(&common.config)?;
    apply_overrides(
        &mut config.master_seed,
        &mut config.output_dir,
        &mut config.threads,
        common,
    );
    let instance = config.instance.build()?;
    let refined = config.instance.build_refined()?;
    let report = verify_assumptions(
        &instance,
        Some(&refined),
        &config.alpha_grid,
        &config.r_grid,
        config.probes,
        config.master_seed,
    )?;
    ensure_output_dir(&config.output_dir)?;
    let mut summary =
        RunSummary::new("verify-assumptions", effective_config(&config)?, config.threads);
    summary.extra = Some(serde_json::to_value(&report).map_err(|e| Error::Config(e.to_string()))?);
    summary.write(&config.output_dir.join("verify.json"))?;
    println!(
        "assumption check on {}: {}",
        instance.label(),
        if report.consistent { "consistent" } else { "INCONSISTENT" }
    );
    Ok(if report.consistent {
        EXIT_OK
    } else {
        EXIT_VERDICT_FAILED
    })
}

fn cmd_prior_mass(common: &CommonArgs) -> Result<i32> {
    let mut config: PriorMassConfig = load_config(&common.config)?;
    apply_overrides(
        &mut config.master_seed,
        &mut config.output_dir,
        &mut config.threads,
        common,
    );
    let ball = BallSpec::new(BallKind::Hyperrectangle, config.beta, config.radius)?;
    let spec = SelfSimilarSpec::new(config.epsilon, config.n0, config.rho, ball)?;
    let fraction = prior_self_similar_mass(
        config.alpha,
        &spec,
        config.samples,
        config.n_coords,
        config.master_seed,
    )?;
    ensure_output_dir(&config.output_dir)?;
    let passed = fraction >= config.min_fraction;
    println!(
        "self-similar fraction: {fraction:.4} (threshold {:.4}) => {}",
        config.min_fraction,
        if passed { "pass" } else { "FAIL" }
    );
    let mut summary = RunSummary::new("prior-mass", effective_config(&config)?, config.threads);
    summary.extra = Some(serde_json::json!({
        "fraction": fraction,
        "passed": passed,
    }));
    summary.write(&config.output_dir.join("prior_mass.json"))?;
    Ok(if passed { EXIT_OK } else { EXIT_VERDICT_FAILED })
}

fn cmd_kl_check(common: &CommonArgs) -> Result<i32> {
    let mut config: KlCheckConfig = load_config(&common.config)?;
    apply_overrides(
        &mut config.master_seed,
        &mut config.output_dir,
        &mut config.threads,
        common,
    );
    let instance = config.instance.build()?;
    let u = config.u.build(&instance, config.master_seed.wrapping_add(1))?;
    let u_truth = config.u_truth.build(&instance, config.master_seed)?;
    let report = kl_ball_check(
        &instance,
        &u,
        &u_truth,
        config.n,
        config.mc,
        config.master_seed,
    )?;
    ensure_output_dir(&config.output_dir)?;
    let mean_ok = report.z_mean.abs() <= config.z_mean_max;
    let var_ok = report.z_var.abs() <= config.var_rel_se_max;
    println!(
        "KL mean {:.4} vs target {:.4} (z = {:.2}); variance {:.4} vs target {:.4} (z = {:.2}) => {}",
        report.kl_mean,
        report.target_mean,
        report.z_mean,
        report.kl_var,
        report.target_var,
        report.z_var,
        if mean_ok && var_ok { "pass" } else { "FAIL" }
    );
    let mut summary = RunSummary::new("kl-check", effective_config(&config)?, config.threads);
    summary.extra = Some(serde_json::to_value(&report).map_err(|e| Error::Config(e.to_string()))?);
    summary.write(&config.output_dir.join("kl_check.json"))?;
    Ok(if mean_ok && var_ok {
        EXIT_OK
    } else {
        EXIT_VERDICT_FAILED
    })
}

fn apply_overrides(
    master_seed: &mut u64,
    output_dir: &mut PathBuf,
    threads: &mut usize,
    common: &CommonArgs,
) {
    if let Some(seed) = common.seed {
        *master_seed = seed;
    }
    if let Some(out) = &common.out {
        *output_dir = out.clone();
    }
    if let Some(t) = common.threads {
        *threads = t;
    }
}
