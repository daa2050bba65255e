//! Experiment harness: Monte Carlo contraction runs, rate regression,
//! posterior tail-mass estimation, and the prior/sieve mass experiments.
//!
//! A run is a pure function of its [`ExperimentPlan`]: replicates are
//! parallelized but every random draw comes from a stream keyed by
//! `(master_seed, purpose, n, replicate)` and results are merged in plan
//! order, so scheduling never changes the output.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::eb::{estimate_alpha, EBConfig};
use crate::error::{Error, Result};
use crate::operators::{Exponents, ProblemInstance};
use crate::posterior::{covariance_trace, posterior_sample, posterior_u, simulate_data};
use crate::rng;
use crate::sequence::{
    ell2_norm, is_self_similar, make_truth, sample_prior_sequence, SelfSimilarSpec,
    SpectralVector, TruthFamily,
};

/// Number of posterior draws behind each tail-mass estimate.
pub const TAIL_SAMPLES: usize = 256;

/// How an instance is specified in a plan or config file.
///
/// Torus instances use the serialized descriptor
/// `{example, d, K, q_fourier, r_fourier}`; sequence-model instances use
/// `{diagonal: {p, d, n}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InstanceSpec {
    Example(crate::operators::InstanceDescriptor),
    Diagonal { diagonal: DiagonalSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalSpec {
    pub p: f64,
    pub d: u32,
    pub n: usize,
}

impl InstanceSpec {
    pub fn build(&self) -> Result<ProblemInstance> {
        match self {
            InstanceSpec::Example(descriptor) => descriptor.build(),
            InstanceSpec::Diagonal { diagonal } => {
                ProblemInstance::diagonal(diagonal.p, diagonal.d, diagonal.n)
            }
        }
    }

    /// Rebuilds at (roughly) twice the truncation, for refinement checks.
    pub fn build_refined(&self) -> Result<ProblemInstance> {
        match self {
            InstanceSpec::Example(descriptor) => descriptor.build_with_cutoff(descriptor.k * 2),
            InstanceSpec::Diagonal { diagonal } => {
                ProblemInstance::diagonal(diagonal.p, diagonal.d, diagonal.n * 2)
            }
        }
    }
}

/// Ground-truth parameters; unset fields default to the instance's spectrum
/// exponents, its truncation level, and the plan's master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruthSpec {
    pub family: TruthFamily,
    pub gamma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl TruthSpec {
    pub fn build(&self, instance: &ProblemInstance, master_seed: u64) -> Result<SpectralVector> {
        let spectrum = instance.spectrum();
        make_truth(
            self.family,
            self.gamma,
            self.p.unwrap_or(spectrum.p()),
            self.d.unwrap_or(spectrum.d()),
            self.n.unwrap_or(instance.dim()),
            self.seed.unwrap_or(master_seed),
        )
    }
}

/// Which estimator selects the prior exponent for each replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EstimatorSpec {
    Oracle { alpha: f64 },
    EmpiricalBayes { #[serde(default)] config: EBConfig },
}

/// Growth rule for the radius multiplier `M_n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MnRule {
    /// `M_n = sqrt(log n)` (the default).
    SqrtLog,
    /// `M_n = (log n)^exponent`.
    LogPower { exponent: f64 },
    /// A fixed multiplier.
    Fixed { value: f64 },
}

impl Default for MnRule {
    fn default() -> Self {
        MnRule::SqrtLog
    }
}

impl MnRule {
    pub fn evaluate(&self, n: f64) -> f64 {
        match self {
            MnRule::SqrtLog => n.ln().sqrt(),
            MnRule::LogPower { exponent } => n.ln().powf(*exponent),
            MnRule::Fixed { value } => *value,
        }
    }
}

fn default_eps_exponent() -> f64 {
    0.1
}

fn default_beta_tilde_min() -> f64 {
    0.5
}

/// A full Monte Carlo contraction experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentPlan {
    pub instance: InstanceSpec,
    pub truth: TruthSpec,
    pub n_grid: Vec<f64>,
    pub replicates: usize,
    pub estimator: EstimatorSpec,
    /// The theorems' arbitrarily small rate slack.
    #[serde(default = "default_eps_exponent")]
    pub eps_exponent: f64,
    #[serde(default)]
    pub m_n_rule: MnRule,
    /// Smallest regularity the truncation floor is sized for.
    #[serde(default = "default_beta_tilde_min")]
    pub beta_tilde_min: f64,
    #[serde(default)]
    pub master_seed: u64,
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.n_grid.is_empty() {
            return Err(Error::Config("n_grid must be non-empty".into()));
        }
        if self.n_grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Config("n_grid must be strictly increasing".into()));
        }
        if self.n_grid.iter().any(|n| !(*n >= 3.0)) {
            return Err(Error::Config("every n must be >= 3".into()));
        }
        if self.replicates < 1 {
            return Err(Error::Config("replicates must be >= 1".into()));
        }
        if self.eps_exponent < 0.0 {
            return Err(Error::Config("eps_exponent must be >= 0".into()));
        }
        if !(self.beta_tilde_min > 0.0) {
            return Err(Error::Config("beta_tilde_min must be > 0".into()));
        }
        if let EstimatorSpec::EmpiricalBayes { config } = &self.estimator {
            config.validate()?;
        }
        let instance = self.instance.build()?;
        if let EstimatorSpec::Oracle { alpha } = &self.estimator {
            if *alpha <= instance.alpha0() {
                return Err(Error::Config(format!(
                    "oracle alpha = {alpha} must exceed alpha0 = {}",
                    instance.alpha0()
                )));
            }
        }
        // truncation floor: the likelihood sum must dominate the effective
        // frequency of the roughest regularity the experiment declares
        let n_max = *self.n_grid.last().expect("n_grid checked non-empty");
        let floor = 8.0 * n_max.powf(1.0 / (1.0 + 2.0 * self.beta_tilde_min));
        let dim = instance.dim() as f64;
        if dim < floor {
            return Err(Error::Config(format!(
                "truncation {dim} is below the floor {floor:.1} required by \
                 n_max = {n_max} at beta_tilde_min = {}",
                self.beta_tilde_min
            )));
        }
        Ok(())
    }
}

/// Outcome of one `(n, replicate)` cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContractionRecord {
    pub n: f64,
    pub replicate: usize,
    pub alpha_hat: f64,
    pub err_u: f64,
    pub err_m: f64,
    pub posterior_trace: f64,
    pub tail_mass: f64,
    pub wall_time_ms: f64,
}

/// Polynomial contraction rate `n^(-p gamma / (d + 2p(gamma + delta - 1) + eps))`
/// of the original problem.
pub fn theorem_rate_exponent(exponents: &Exponents, p: f64, d: u32, eps: f64) -> f64 {
    let d = d as f64;
    p * exponents.gamma / (d + 2.0 * p * (exponents.gamma + exponents.delta - 1.0) + eps)
}

/// The radius sequence used for tail-mass estimates: the theorem's polynomial
/// rate without its slowly varying factor (at desk scale the full envelope
/// with illustrative constants exceeds the truth norm and every mass is
/// trivially zero; the envelope is still drawn on reports).
pub fn tail_radius(exponents: &Exponents, p: f64, d: u32, eps: f64, m_n: &MnRule, n: f64) -> f64 {
    m_n.evaluate(n) * n.powf(-theorem_rate_exponent(exponents, p, d, eps))
}

/// The full theoretical envelope with illustrative constants
/// `C2 = C3 = 1`: `(log n)^(C2+C3+4) (loglog n)^(1/2) n^(-rate)`.
pub fn illustrative_envelope(exponents: &Exponents, p: f64, d: u32, eps: f64, n: f64) -> f64 {
    let rate = theorem_rate_exponent(exponents, p, d, eps);
    n.ln().powi(6) * n.ln().ln().sqrt() * n.powf(-rate)
}

fn run_cell(
    plan: &ExperimentPlan,
    instance: &ProblemInstance,
    truth: &SpectralVector,
    n: f64,
    replicate: usize,
) -> Result<ContractionRecord> {
    let start = std::time::Instant::now();
    let data_seed = rng::derive_u64(plan.master_seed, "record-data", n, replicate as u64);
    let data = simulate_data(instance, truth, n, data_seed)?;
    let alpha_hat = match &plan.estimator {
        EstimatorSpec::Oracle { alpha } => *alpha,
        EstimatorSpec::EmpiricalBayes { config } => {
            estimate_alpha(&data.d, n, instance, config)?.alpha_hat
        }
    };
    // the posterior needs a trace-class prior; a clipped exponent is used for
    // the solve while the record keeps the raw estimate
    let alpha_used = alpha_hat.max(instance.alpha0() + 1e-9);
    let post = posterior_u(&data.d, n, alpha_used, instance)?;
    let residual = post.mean.sub(truth);
    let err_u = ell2_norm(&residual);
    let err_m = ell2_norm(&instance.apply_forward(&residual));
    let posterior_trace = covariance_trace(instance, alpha_used, n)?;
    let spectrum = instance.spectrum();
    let radius = tail_radius(
        instance.exponents(),
        spectrum.p(),
        spectrum.d(),
        plan.eps_exponent,
        &plan.m_n_rule,
        n,
    );
    let tail_seed = rng::derive_u64(plan.master_seed, "record-tail", n, replicate as u64);
    let samples = posterior_sample(&post, TAIL_SAMPLES, tail_seed)?;
    let exceed = samples
        .iter()
        .filter(|s| ell2_norm(&s.sub(truth)) >= radius)
        .count();
    Ok(ContractionRecord {
        n,
        replicate,
        alpha_hat,
        err_u,
        err_m,
        posterior_trace,
        tail_mass: exceed as f64 / TAIL_SAMPLES as f64,
        wall_time_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

/// Runs the full plan; records are returned in `(n, replicate)` order and are
/// identical across thread counts and scheduling.
pub fn run_contraction(plan: &ExperimentPlan) -> Result<Vec<ContractionRecord>> {
    plan.validate()?;
    let instance = plan.instance.build()?;
    let truth = plan.truth.build(&instance, plan.master_seed)?;
    if truth.len() != instance.dim() {
        return Err(Error::Config(format!(
            "truth length {} does not match instance dimension {}",
            truth.len(),
            instance.dim()
        )));
    }
    let cells: Vec<(f64, usize)> = plan
        .n_grid
        .iter()
        .flat_map(|&n| (0..plan.replicates).map(move |rep| (n, rep)))
        .collect();
    cells
        .par_iter()
        .map(|&(n, replicate)| {
            run_cell(plan, &instance, &truth, n, replicate).map_err(|e| Error::Replicate {
                n,
                replicate,
                source: Box::new(e),
            })
        })
        .collect()
}

/// Which error column a rate is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrField {
    ErrU,
    ErrM,
}

impl ErrField {
    fn extract(&self, record: &ContractionRecord) -> f64 {
        match self {
            ErrField::ErrU => record.err_u,
            ErrField::ErrM => record.err_m,
        }
    }
}

/// Least-squares fit of `log(mean error)` against `log n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub field: ErrField,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub target_exponent: f64,
    pub tolerance: f64,
    pub verdict: bool,
}

/// Aggregates per-`n` means (and medians alongside) of an error field.
pub fn aggregate_errors(records: &[ContractionRecord], field: ErrField) -> Vec<(f64, f64, f64)> {
    let mut by_n: Vec<(f64, Vec<f64>)> = Vec::new();
    for record in records {
        let value = field.extract(record);
        match by_n.iter_mut().find(|(n, _)| *n == record.n) {
            Some((_, values)) => values.push(value),
            None => by_n.push((record.n, vec![value])),
        }
    }
    by_n.sort_by(|a, b| a.0.total_cmp(&b.0));
    by_n
        .into_iter()
        .map(|(n, mut values)| {
            let mean = values.iter().sum::<f64>() / values.len() as f64;
            values.sort_by(f64::total_cmp);
            let median = if values.len() % 2 == 1 {
                values[values.len() / 2]
            } else {
                0.5 * (values[values.len() / 2 - 1] + values[values.len() / 2])
            };
            (n, mean, median)
        })
        .collect()
}

/// Ordinary least squares of the log mean error on `log n`; the verdict is
/// `|slope - target| <= tolerance`.
pub fn fit_rate(
    records: &[ContractionRecord],
    field: ErrField,
    target: f64,
    tolerance: f64,
) -> Result<RateFit> {
    let aggregated = aggregate_errors(records, field);
    if aggregated.len() < 4 {
        return Err(Error::invalid(format!(
            "rate fit needs >= 4 distinct n values, found {}",
            aggregated.len()
        )));
    }
    let points: Vec<(f64, f64)> = aggregated
        .iter()
        .map(|(n, mean, _)| (n.ln(), mean.ln()))
        .collect();
    let count = points.len() as f64;
    let x_mean = points.iter().map(|(x, _)| x).sum::<f64>() / count;
    let y_mean = points.iter().map(|(_, y)| y).sum::<f64>() / count;
    let sxx: f64 = points.iter().map(|(x, _)| (x - x_mean).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::invalid("rate fit design is degenerate: all n equal"));
    }
    let sxy: f64 = points
        .iter()
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_res: f64 = points
        .iter()
        .map(|(x, y)| (y - (intercept + slope * x)).powi(2))
        .sum();
    let ss_tot: f64 = points.iter().map(|(_, y)| (y - y_mean).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok(RateFit {
        field,
        slope,
        intercept,
        r_squared,
        target_exponent: target,
        tolerance,
        verdict: (slope - target).abs() <= tolerance,
    })
}

/// Fraction of prior draws (independent `N(0, i^-(1+2 alpha))` coordinates)
/// certified self-similar.
pub fn prior_self_similar_mass(
    alpha: f64,
    spec: &SelfSimilarSpec,
    samples: usize,
    n: usize,
    seed: u64,
) -> Result<f64> {
    if alpha > spec.ball.beta {
        return Err(Error::invalid(format!(
            "the full-mass regime requires alpha = {alpha} <= beta = {}",
            spec.ball.beta
        )));
    }
    if samples < 100 {
        return Err(Error::invalid("prior mass estimate needs >= 100 samples"));
    }
    let mut certified = 0usize;
    let mut g = rng::stream(seed, "prior-mass", alpha, 0);
    for _ in 0..samples {
        let draw = sample_prior_sequence(alpha, n, &mut g);
        if is_self_similar(&draw, spec)?.holds {
            certified += 1;
        }
    }
    Ok(certified as f64 / samples as f64)
}

/// Fraction of samples whose high-frequency tail mass `sum_{i > k_n} u_i^2`
/// stays below `c rho_n^2`.
pub fn sieve_mass(
    samples: &[SpectralVector],
    k_n: usize,
    rho_n: f64,
    c: f64,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::invalid("sieve mass needs at least one sample"));
    }
    let dim = samples[0].len();
    if k_n > dim {
        return Err(Error::invalid(format!(
            "sieve cutoff k_n = {k_n} exceeds the truncation {dim}"
        )));
    }
    let bound = c * rho_n * rho_n;
    let inside = samples
        .iter()
        .filter(|s| {
            let tail: f64 = s.coeffs()[k_n..].iter().map(|x| x * x).sum();
            tail <= bound
        })
        .count();
    Ok(inside as f64 / samples.len() as f64)
}

/// Default sieve parameters: cutoff `k_n = n^(1/(1 + (2p/d)(gamma+delta-1) + eps))`
/// and radius `rho_n = L_n n^(-((2p/d) alpha_hat - 1 - eps) / (2 (1 + (2p/d)(gamma+delta-1) + eps)))`
/// with `L_n = (log n)^3 (loglog n)^(1/2)`.
pub fn sieve_defaults(
    exponents: &Exponents,
    p: f64,
    d: u32,
    alpha_hat: f64,
    eps: f64,
    n: f64,
) -> (usize, f64) {
    let ratio = 2.0 * p / d as f64;
    let denom = 1.0 + ratio * (exponents.gamma + exponents.delta - 1.0) + eps;
    let k_n = n.powf(1.0 / denom).ceil() as usize;
    let l_n = n.ln().powi(3) * n.ln().ln().sqrt();
    let rho_n = l_n * n.powf(-0.5 * (ratio * alpha_hat - 1.0 - eps) / denom);
    (k_n.max(1), rho_n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sequence::{BallKind, BallSpec};
    use approx::assert_relative_eq;

    fn diagonal_plan() -> ExperimentPlan {
        ExperimentPlan {
            instance: InstanceSpec::Diagonal {
                diagonal: DiagonalSpec { p: 2.0, d: 2, n: 128 },
            },
            truth: TruthSpec {
                family: TruthFamily::SingleSpike,
                gamma: 1.0,
                p: None,
                d: None,
                n: None,
                seed: None,
            },
            n_grid: vec![100.0],
            replicates: 1,
            estimator: EstimatorSpec::Oracle { alpha: 1.5 },
            eps_exponent: 0.1,
            m_n_rule: MnRule::SqrtLog,
            beta_tilde_min: 0.5,
            master_seed: 0,
        }
    }

    #[test]
    fn smoke_run_produces_finite_record() {
        let records = run_contraction(&diagonal_plan()).unwrap();
        assert_eq!(records.len(), 1);
        let record = &records[0];
        assert!(record.err_u.is_finite());
        assert!(record.err_m.is_finite());
        assert!(record.posterior_trace.is_finite());
        assert!((0.0..=1.0).contains(&record.tail_mass));
    }

    #[test]
    fn runs_are_deterministic_up_to_wall_time() {
        let mut plan = diagonal_plan();
        plan.n_grid = vec![100.0, 1000.0];
        plan.replicates = 3;
        plan.truth.family = TruthFamily::RandomSelfSimilar;
        let a = run_contraction(&plan).unwrap();
        let b = run_contraction(&plan).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.n, y.n);
            assert_eq!(x.replicate, y.replicate);
            assert_eq!(x.alpha_hat, y.alpha_hat);
            assert_eq!(x.err_u, y.err_u);
            assert_eq!(x.err_m, y.err_m);
            assert_eq!(x.posterior_trace, y.posterior_trace);
            assert_eq!(x.tail_mass, y.tail_mass);
        }
    }

    #[test]
    fn plan_validation_rejects_bad_grids_and_small_truncations() {
        let mut plan = diagonal_plan();
        plan.n_grid = vec![];
        assert!(plan.validate().is_err());
        plan.n_grid = vec![100.0, 100.0];
        assert!(plan.validate().is_err());
        plan.n_grid = vec![100.0, 1e6];
        // floor: 8 * (1e6)^(1/2) = 8000 > 128
        assert!(plan.validate().is_err());
    }

    #[test]
    fn mean_error_decreases_along_grid_for_matched_oracle() {
        let mut plan = diagonal_plan();
        plan.instance = InstanceSpec::Diagonal {
            diagonal: DiagonalSpec { p: 2.0, d: 2, n: 1024 },
        };
        plan.truth.family = TruthFamily::PolynomialDecay;
        plan.n_grid = vec![100.0, 1000.0, 1e4];
        plan.replicates = 10;
        let records = run_contraction(&plan).unwrap();
        let means = aggregate_errors(&records, ErrField::ErrM);
        assert_eq!(means.len(), 3);
        assert!(means[0].1 > means[1].1 && means[1].1 > means[2].1);
    }

    #[test]
    fn fit_rate_exact_power_law() {
        let records: Vec<ContractionRecord> = [1e2, 1e3, 1e4, 1e5]
            .iter()
            .map(|&n: &f64| ContractionRecord {
                n,
                replicate: 0,
                alpha_hat: 1.0,
                err_u: n.powf(-0.5),
                err_m: n.powf(-0.5),
                posterior_trace: 0.0,
                tail_mass: 0.0,
                wall_time_ms: 0.0,
            })
            .collect();
        let fit = fit_rate(&records, ErrField::ErrU, -0.5, 0.01).unwrap();
        assert_relative_eq!(fit.slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(fit.r_squared, 1.0, epsilon = 1e-12);
        assert!(fit.verdict);
    }

    #[test]
    fn fit_rate_with_multiplicative_noise() {
        let mut records = Vec::new();
        for (idx, &n) in [1e2, 1e3, 1e4, 1e5, 1e6].iter().enumerate() {
            let wiggle = 1.0 + 0.01 * if idx % 2 == 0 { 1.0 } else { -1.0 };
            records.push(ContractionRecord {
                n,
                replicate: 0,
                alpha_hat: 1.0,
                err_u: 3.0 * f64::powf(n, -0.4) * wiggle,
                err_m: 0.0,
                posterior_trace: 0.0,
                tail_mass: 0.0,
                wall_time_ms: 0.0,
            });
        }
        let fit = fit_rate(&records, ErrField::ErrU, -0.4, 0.02).unwrap();
        assert!((fit.slope + 0.4).abs() <= 0.02);
        assert!(fit.verdict);
    }

    #[test]
    fn fit_rate_scale_invariance_and_degeneracy() {
        let make = |scale: f64| -> Vec<ContractionRecord> {
            [1e2, 1e3, 1e4, 1e5]
                .iter()
                .map(|&n: &f64| ContractionRecord {
                    n,
                    replicate: 0,
                    alpha_hat: 0.0,
                    err_u: scale * n.powf(-0.33),
                    err_m: 0.0,
                    posterior_trace: 0.0,
                    tail_mass: 0.0,
                    wall_time_ms: 0.0,
                })
                .collect()
        };
        let base = fit_rate(&make(1.0), ErrField::ErrU, -0.33, 0.05).unwrap();
        let scaled = fit_rate(&make(17.0), ErrField::ErrU, -0.33, 0.05).unwrap();
        assert_relative_eq!(base.slope, scaled.slope, epsilon = 1e-12);
        assert_eq!(base.verdict, scaled.verdict);

        let few: Vec<ContractionRecord> = make(1.0).into_iter().take(3).collect();
        assert!(fit_rate(&few, ErrField::ErrU, -0.33, 0.05).is_err());
    }

    #[test]
    fn prior_mass_extremes() {
        let ball = BallSpec::new(BallKind::Hyperrectangle, 1.0, 1.0).unwrap();
        // impossible bound at the first window
        let hopeless = SelfSimilarSpec::new(1e9, 4, 2.0, ball).unwrap();
        let fraction = prior_self_similar_mass(0.5, &hopeless, 200, 512, 1).unwrap();
        assert!(fraction < 0.05, "fraction = {fraction}");
        // determinism
        let spec = SelfSimilarSpec::new(0.125, 8, 2.0, ball).unwrap();
        let a = prior_self_similar_mass(0.5, &spec, 150, 512, 2).unwrap();
        let b = prior_self_similar_mass(0.5, &spec, 150, 512, 2).unwrap();
        assert_eq!(a, b);
        // regime guard
        assert!(prior_self_similar_mass(1.5, &spec, 150, 512, 2).is_err());
    }

    #[test]
    fn sieve_mass_edges() {
        let samples = vec![
            SpectralVector::new(vec![1.0, 0.5, 0.25]).unwrap(),
            SpectralVector::new(vec![1.0, 0.0, 0.0]).unwrap(),
        ];
        // empty tail: everything passes
        assert_eq!(sieve_mass(&samples, 3, 0.1, 1.0).unwrap(), 1.0);
        // zero budget: only the sample with an exactly zero tail passes
        assert_eq!(sieve_mass(&samples, 1, 0.0, 0.0).unwrap(), 0.5);
        assert!(sieve_mass(&samples, 4, 0.1, 1.0).is_err());
    }

    #[test]
    fn sieve_mass_grows_along_grid_for_posterior_samples() {
        use crate::posterior::{posterior_sample, posterior_u, simulate_data};
        let instance = ProblemInstance::diagonal(2.0, 2, 1024).unwrap();
        let truth = make_truth(TruthFamily::PolynomialDecay, 1.0, 2.0, 2, 1024, 0).unwrap();
        let exponents = *instance.exponents();
        let alpha = 1.5;
        let mut fractions = Vec::new();
        for &n in &[1e2, 1e4, 1e6] {
            let data = simulate_data(&instance, &truth, n, 3).unwrap();
            let post = posterior_u(&data.d, n, alpha, &instance).unwrap();
            let samples = posterior_sample(&post, 128, 4).unwrap();
            let (k_n, rho_n) = sieve_defaults(&exponents, 2.0, 2, alpha, 0.1, n);
            fractions.push(sieve_mass(&samples, k_n.min(1024), rho_n, 1.0).unwrap());
        }
        assert!(
            fractions.last().unwrap() >= fractions.first().unwrap(),
            "fractions: {fractions:?}"
        );
        assert_eq!(*fractions.last().unwrap(), 1.0);
    }

    #[test]
    fn oracle_dominates_eb_within_slack() {
        let mut oracle_plan = diagonal_plan();
        oracle_plan.instance = InstanceSpec::Diagonal {
            diagonal: DiagonalSpec { p: 2.0, d: 2, n: 2048 },
        };
        oracle_plan.truth.family = TruthFamily::RandomSelfSimilar;
        oracle_plan.n_grid = vec![1e4, 1e5];
        oracle_plan.replicates = 8;
        let mut eb_plan = oracle_plan.clone();
        eb_plan.estimator = EstimatorSpec::EmpiricalBayes {
            config: EBConfig::default(),
        };
        let oracle_records = run_contraction(&oracle_plan).unwrap();
        let eb_records = run_contraction(&eb_plan).unwrap();
        let oracle_means = aggregate_errors(&oracle_records, ErrField::ErrM);
        let eb_means = aggregate_errors(&eb_records, ErrField::ErrM);
        for ((n, oracle_mean, _), (_, eb_mean, _)) in oracle_means.iter().zip(&eb_means) {
            assert!(
                *oracle_mean <= 1.25 * eb_mean,
                "n = {n}: oracle {oracle_mean} vs EB {eb_mean}"
            );
        }
    }
}
