//! Data simulation and conjugate Gaussian posteriors.
//!
//! All solves are dense SPD factorizations at the truncation level; diagonal
//! forward maps take coordinate-wise fast paths that agree with the dense
//! route to roundoff. Posterior covariances are symmetrized after assembly
//! and factorizations fall back to an eigenvalue decomposition with tiny
//! negative values clipped at zero, so sampling is robust to roundoff jitter.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::{
    covariance_power, m_eigenvalues, make_m, power_iteration_sym, LinearOp, OpRepr,
    ProblemInstance,
};
use crate::rng;
use crate::sequence::{ell2_norm, SpectralVector};

/// Relative residual bound accepted from the regularized solve.
pub const SOLVE_RESIDUAL_BOUND: f64 = 1e-8;

/// Relative floor below which covariance eigenvalues are treated as roundoff
/// and clipped to zero.
const COV_EIGEN_SLACK: f64 = 1e-12;

/// One simulated observation of the whitened problem.
#[derive(Debug, Clone, PartialEq)]
pub struct DataRealization {
    pub d: SpectralVector,
    pub n: f64,
    pub seed: u64,
    pub truth_ref: SpectralVector,
}

#[derive(Serialize, Deserialize)]
struct DataRealizationWire {
    n: f64,
    seed: u64,
    d: Vec<f64>,
    truth: Vec<f64>,
}

impl DataRealization {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&DataRealizationWire {
            n: self.n,
            seed: self.seed,
            d: self.d.coeffs().to_vec(),
            truth: self.truth_ref.coeffs().to_vec(),
        })
        .expect("data realization serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let wire: DataRealizationWire = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("data realization: {e}")))?;
        if wire.d.len() != wire.truth.len() {
            return Err(Error::Config(
                "data and truth vectors must have equal length".into(),
            ));
        }
        Ok(Self {
            d: SpectralVector::new(wire.d)?,
            n: wire.n,
            seed: wire.seed,
            truth_ref: SpectralVector::new(wire.truth)?,
        })
    }
}

/// Which space a Gaussian lives in: the original `u`-space or the transformed
/// image space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GaussianSpace {
    U,
    M,
}

/// A conjugate Gaussian posterior.
#[derive(Debug, Clone)]
pub struct PosteriorGaussian {
    pub mean: SpectralVector,
    pub cov: LinearOp,
    pub space: GaussianSpace,
}

/// Draws `d = T u + n^(-1/2) eta` with standard Gaussian noise from the
/// stream keyed by `seed`.
pub fn simulate_data(
    instance: &ProblemInstance,
    u_truth: &SpectralVector,
    n: f64,
    seed: u64,
) -> Result<DataRealization> {
    if !(n > 0.0) {
        return Err(Error::invalid("noise scale n must be > 0"));
    }
    if u_truth.len() != instance.dim() {
        return Err(Error::invalid(format!(
            "truth has {} coordinates, instance expects {}",
            u_truth.len(),
            instance.dim()
        )));
    }
    let mut g = rng::stream(seed, "data", n, 0);
    let signal = instance.apply_forward(u_truth);
    let scale = n.sqrt().recip();
    let coeffs = signal
        .coeffs()
        .iter()
        .map(|s| s + scale * g.sample::<f64, _>(StandardNormal))
        .collect();
    Ok(DataRealization {
        d: SpectralVector::new(coeffs)?,
        n,
        seed,
        truth_ref: u_truth.clone(),
    })
}

/// Coordinate-wise shrinkage `m_i = n d_i / (i^(1+2a) + n)` of the artificial
/// diagonal problem.
pub fn posterior_mean_diagonal(
    d: &SpectralVector,
    n: f64,
    alpha_tilde: f64,
) -> Result<SpectralVector> {
    if !(n > 0.0) {
        return Err(Error::invalid("noise scale n must be > 0"));
    }
    if alpha_tilde < 0.0 {
        return Err(Error::invalid("alpha_tilde must be >= 0"));
    }
    let exponent = 1.0 + 2.0 * alpha_tilde;
    let coeffs = d
        .coeffs()
        .iter()
        .enumerate()
        .map(|(j, di)| {
            let weight = ((j + 1) as f64).powf(exponent);
            n * di / (weight + n)
        })
        .collect();
    SpectralVector::new(coeffs)
}

fn cholesky_of(matrix: DMatrix<f64>, context: &str) -> Result<Cholesky<f64, nalgebra::Dyn>> {
    Cholesky::new(matrix)
        .ok_or_else(|| Error::NotSpd(format!("{context}: Cholesky factorization failed")))
}

/// Posterior mean of the transformed problem,
/// `M(alpha) (M(alpha) + n^(-1) I)^(-1) d`.
pub fn posterior_mean_m(
    d: &SpectralVector,
    n: f64,
    alpha: f64,
    instance: &ProblemInstance,
) -> Result<SpectralVector> {
    if !(n > 0.0) {
        return Err(Error::invalid("noise scale n must be > 0"));
    }
    let m = make_m(instance, alpha)?;
    match m.repr() {
        OpRepr::Diagonal(mu) => {
            let coeffs = d
                .coeffs()
                .iter()
                .zip(mu.iter())
                .map(|(di, mi)| mi * di / (mi + 1.0 / n))
                .collect();
            SpectralVector::new(coeffs)
        }
        OpRepr::Dense(dense) => {
            let mut f = dense.clone();
            for i in 0..f.nrows() {
                f[(i, i)] += 1.0 / n;
            }
            let chol = cholesky_of(f, "F_n(alpha)")?;
            let rhs = DVector::from_column_slice(d.coeffs());
            let solved = chol.solve(&rhs);
            SpectralVector::new((dense * solved).data.into())
        }
    }
}

/// Conjugate posterior of the original problem: mean
/// `C^a T* (T C^a T* + n^(-1) I)^(-1) d` and covariance
/// `C^a - C^a T* (...)^(-1) T C^a`, symmetrized.
pub fn posterior_u(
    d: &SpectralVector,
    n: f64,
    alpha: f64,
    instance: &ProblemInstance,
) -> Result<PosteriorGaussian> {
    if !(n > 0.0) {
        return Err(Error::invalid("noise scale n must be > 0"));
    }
    let spec = instance.spectrum();
    let dim = instance.dim();
    let m = make_m(instance, alpha)?;
    match (instance.forward().repr(), m.repr()) {
        (OpRepr::Diagonal(t), OpRepr::Diagonal(_)) => {
            let mut mean = Vec::with_capacity(dim);
            let mut cov = DVector::zeros(dim);
            for j in 0..dim {
                let ca = spec.lambda_sq_pow(j + 1, alpha);
                let tj = t[j];
                let denom = tj * tj * ca + 1.0 / n;
                mean.push(ca * tj * d.coeff(j + 1) / denom);
                cov[j] = ca - ca * ca * tj * tj / denom;
            }
            Ok(PosteriorGaussian {
                mean: SpectralVector::new(mean)?,
                cov: LinearOp::diagonal(cov, true)?,
                space: GaussianSpace::U,
            })
        }
        _ => {
            let t = instance.forward().to_dense();
            let ca = covariance_power(spec, alpha);
            let ca_diag = ca.diagonal_values().expect("covariance powers are diagonal");
            // B = C^a T^T
            let mut b = t.transpose();
            for i in 0..dim {
                b.row_mut(i).scale_mut(ca_diag[i]);
            }
            let mut f = m.to_dense();
            for i in 0..dim {
                f[(i, i)] += 1.0 / n;
            }
            let chol = cholesky_of(f, "T C^a T* + n^-1 I")?;
            let rhs = DVector::from_column_slice(d.coeffs());
            let mean = &b * chol.solve(&rhs);
            let correction = &b * chol.solve(&b.transpose());
            let mut cov = DMatrix::from_diagonal(ca_diag) - correction;
            let symmetrized = (&cov + cov.transpose()) * 0.5;
            cov = symmetrized;
            Ok(PosteriorGaussian {
                mean: SpectralVector::new(mean.data.into())?,
                cov: LinearOp::dense(cov, true)?,
                space: GaussianSpace::U,
            })
        }
    }
}

/// Solves `(n M(alpha) + I) u = r` by SPD factorization and checks the
/// residual against [`SOLVE_RESIDUAL_BOUND`].
pub fn solve_regularized(
    instance: &ProblemInstance,
    alpha: f64,
    n: f64,
    r: &SpectralVector,
) -> Result<SpectralVector> {
    if !(n > 0.0) {
        return Err(Error::invalid("noise scale n must be > 0"));
    }
    let m = make_m(instance, alpha)?;
    let solution = match m.repr() {
        OpRepr::Diagonal(mu) => {
            let coeffs = r
                .coeffs()
                .iter()
                .zip(mu.iter())
                .map(|(ri, mi)| ri / (n * mi + 1.0))
                .collect();
            SpectralVector::new(coeffs)?
        }
        OpRepr::Dense(dense) => {
            let mut a = dense * n;
            for i in 0..a.nrows() {
                a[(i, i)] += 1.0;
            }
            let chol = cholesky_of(a, "n M(alpha) + I")?;
            let rhs = DVector::from_column_slice(r.coeffs());
            SpectralVector::new(chol.solve(&rhs).data.into())?
        }
    };
    // residual check on every accepted return
    let mut residual_vec = m.apply(&DVector::from_column_slice(solution.coeffs())) * n;
    residual_vec += DVector::from_column_slice(solution.coeffs());
    residual_vec -= DVector::from_column_slice(r.coeffs());
    let residual = residual_vec.norm();
    let bound = SOLVE_RESIDUAL_BOUND * ell2_norm(r).max(f64::MIN_POSITIVE);
    if residual > bound {
        return Err(Error::SolveResidual { residual, bound });
    }
    Ok(solution)
}

/// Posterior spread of the transformed problem,
/// `Tr[(n M(alpha) + I)^(-1) M(alpha)]`, from the eigenvalues of `M(alpha)`.
pub fn covariance_trace(instance: &ProblemInstance, alpha: f64, n: f64) -> Result<f64> {
    if !(n > 0.0) {
        return Err(Error::invalid("noise scale n must be > 0"));
    }
    let eigenvalues = m_eigenvalues(instance, alpha)?;
    Ok(eigenvalues.iter().map(|mu| mu / (n * mu + 1.0)).sum())
}

/// Spectral norms of `C^((a+delta-1-s)/2) (n M(a) + I)^(-1) C^((a+delta-1-s)/2)`
/// along a grid of noise scales.
pub fn operator_norm_probe(
    instance: &ProblemInstance,
    alpha: f64,
    s: f64,
    n_list: &[f64],
) -> Result<Vec<f64>> {
    let alpha0 = instance.alpha0();
    if !(s > alpha0 && s < alpha) {
        return Err(Error::invalid(format!(
            "probe order must satisfy alpha0 = {alpha0} < s < alpha = {alpha}"
        )));
    }
    if n_list.iter().any(|n| !(*n > 0.0)) {
        return Err(Error::invalid("every probe noise scale must be > 0"));
    }
    let spec = instance.spectrum();
    let dim = instance.dim();
    let order = alpha + instance.exponents().delta - 1.0 - s;
    let weights: Vec<f64> = (1..=dim)
        .map(|i| spec.lambda_sq_pow(i, order / 2.0))
        .collect();
    let m = make_m(instance, alpha)?;
    let mut out = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        match m.repr() {
            OpRepr::Diagonal(mu) => {
                let norm = mu
                    .iter()
                    .zip(&weights)
                    .map(|(mi, w)| w * w / (n * mi + 1.0))
                    .fold(0.0f64, f64::max);
                out.push(norm);
            }
            OpRepr::Dense(dense) => {
                let mut a = dense * n;
                for i in 0..a.nrows() {
                    a[(i, i)] += 1.0;
                }
                let chol = cholesky_of(a, "n M(alpha) + I")?;
                let apply = |v: &DVector<f64>| {
                    let mut w = v.clone();
                    for (i, wi) in weights.iter().enumerate() {
                        w[i] *= wi;
                    }
                    let mut solved = chol.solve(&w);
                    for (i, wi) in weights.iter().enumerate() {
                        solved[i] *= wi;
                    }
                    solved
                };
                out.push(power_iteration_sym(dim, apply, 1771 + idx as u64)?);
            }
        }
    }
    Ok(out)
}

/// Monte Carlo check of the Kullback-Leibler ball identity.
#[derive(Debug, Clone, Serialize)]
pub struct KlBallReport {
    pub kl_mean: f64,
    pub kl_var: f64,
    pub target_mean: f64,
    pub target_var: f64,
    pub z_mean: f64,
    pub z_var: f64,
    pub mc: usize,
}

/// Draws `mc` truth-centered data sets and compares the Monte Carlo mean and
/// variance of the negative log density ratio against `(n/2) |T(u-u')|^2`
/// and `n |T(u-u')|^2`.
pub fn kl_ball_check(
    instance: &ProblemInstance,
    u: &SpectralVector,
    u_truth: &SpectralVector,
    n: f64,
    mc: usize,
    seed: u64,
) -> Result<KlBallReport> {
    if mc < 1000 {
        return Err(Error::invalid("KL check requires at least 1000 draws"));
    }
    if !(n > 0.0) {
        return Err(Error::invalid("noise scale n must be > 0"));
    }
    let shift = instance.apply_forward(&u.sub(u_truth));
    let shift_sq = ell2_norm(&shift).powi(2);
    let target_mean = 0.5 * n * shift_sq;
    let target_var = n * shift_sq;
    let dim = instance.dim();
    let sqrt_n = n.sqrt();
    let mut mean_acc = 0.0;
    let mut sq_acc = 0.0;
    let mut g = rng::stream(seed, "kl", n, 0);
    for _ in 0..mc {
        let mut dot = 0.0;
        for value in shift.coeffs().iter().take(dim) {
            let eta: f64 = g.sample(StandardNormal);
            dot += value * eta;
        }
        let neg_log_ratio = target_mean - sqrt_n * dot;
        mean_acc += neg_log_ratio;
        sq_acc += neg_log_ratio * neg_log_ratio;
    }
    let kl_mean = mean_acc / mc as f64;
    let kl_var = (sq_acc - mc as f64 * kl_mean * kl_mean) / (mc as f64 - 1.0);
    let z_mean = if target_var > 0.0 {
        (kl_mean - target_mean) / (target_var / mc as f64).sqrt()
    } else {
        0.0
    };
    let z_var = if target_var > 0.0 {
        (kl_var - target_var) / (target_var * (2.0 / (mc as f64 - 1.0)).sqrt())
    } else {
        0.0
    };
    Ok(KlBallReport {
        kl_mean,
        kl_var,
        target_mean,
        target_var,
        z_mean,
        z_var,
        mc,
    })
}

enum CovFactor {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

fn factor_covariance(cov: &LinearOp) -> Result<CovFactor> {
    match cov.repr() {
        OpRepr::Diagonal(diag) => {
            let max = diag.amax();
            let mut sds = Vec::with_capacity(diag.len());
            for v in diag.iter() {
                if *v < -COV_EIGEN_SLACK * max {
                    return Err(Error::NotSpd(format!(
                        "covariance diagonal entry {v:.3e} below the clip floor"
                    )));
                }
                sds.push(v.max(0.0).sqrt());
            }
            Ok(CovFactor::Diagonal(sds))
        }
        OpRepr::Dense(dense) => {
            if let Some(chol) = Cholesky::new(dense.clone()) {
                return Ok(CovFactor::Dense(chol.unpack()));
            }
            // roundoff jitter: clip eigenvalues within the slack, reject below
            let eigen = SymmetricEigen::new(dense.clone());
            let max = eigen.eigenvalues.amax();
            let mut vecs = eigen.eigenvectors;
            for (j, ev) in eigen.eigenvalues.iter().enumerate() {
                if *ev < -COV_EIGEN_SLACK * max {
                    return Err(Error::NotSpd(format!(
                        "covariance eigenvalue {ev:.3e} below the clip floor"
                    )));
                }
                vecs.column_mut(j).scale_mut(ev.max(0.0).sqrt());
            }
            Ok(CovFactor::Dense(vecs))
        }
    }
}

/// Draws `count` samples `mean + L xi` with `L L^T = cov` and seeded white
/// noise `xi`.
pub fn posterior_sample(
    post: &PosteriorGaussian,
    count: usize,
    seed: u64,
) -> Result<Vec<SpectralVector>> {
    if count < 1 {
        return Err(Error::invalid("sample count must be >= 1"));
    }
    let dim = post.mean.len();
    let factor = factor_covariance(&post.cov)?;
    let mut g = rng::stream(seed, "posterior-sample", 0.0, 0);
    let mut samples = Vec::with_capacity(count);
    for _ in 0..count {
        let xi = DVector::from_iterator(dim, (0..dim).map(|_| g.sample::<f64, _>(StandardNormal)));
        let draw = match &factor {
            CovFactor::Diagonal(sds) => DVector::from_iterator(
                dim,
                xi.iter().zip(sds).map(|(x, sd)| sd * x),
            ),
            CovFactor::Dense(l) => l * xi,
        };
        let coeffs = post
            .mean
            .coeffs()
            .iter()
            .zip(draw.iter())
            .map(|(m, x)| m + x)
            .collect();
        samples.push(SpectralVector::new(coeffs)?);
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{build_example1, FourierFunction};
    use crate::rng;
    use approx::assert_relative_eq;

    fn cos_symbol() -> FourierFunction {
        FourierFunction::from_entries(
            1,
            &[(vec![0], 2.0, 0.0), (vec![1], 0.5, 0.0), (vec![-1], 0.5, 0.0)],
        )
        .unwrap()
    }

    fn random_vector(len: usize, seed: u64, scale: f64) -> SpectralVector {
        let mut g = rng::stream(seed, "test-vec", 0.0, 0);
        SpectralVector::new(
            (0..len)
                .map(|_| scale * g.sample::<f64, _>(StandardNormal))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn simulate_data_is_deterministic_and_unbiased() {
        let instance = ProblemInstance::diagonal(1.0, 1, 10_000).unwrap();
        let truth = SpectralVector::zeros(10_000);
        let n = 50.0;
        let a = simulate_data(&instance, &truth, n, 42).unwrap();
        let b = simulate_data(&instance, &truth, n, 42).unwrap();
        assert_eq!(a.d, b.d);
        // empirical coordinate variance close to 1/n
        let var: f64 =
            a.d.coeffs().iter().map(|x| x * x).sum::<f64>() / a.d.len() as f64;
        assert!((var - 1.0 / n).abs() < 0.05 / n, "var = {var}");
    }

    #[test]
    fn simulate_data_tiny_noise_recovers_signal() {
        let instance = ProblemInstance::diagonal(1.0, 1, 512).unwrap();
        let truth = random_vector(512, 7, 1.0);
        let data = simulate_data(&instance, &truth, 1e16, 1).unwrap();
        let sup = data
            .d
            .coeffs()
            .iter()
            .zip(truth.coeffs())
            .map(|(d, t)| (d - t).abs())
            .fold(0.0f64, f64::max);
        assert!(sup <= 1e-6, "sup deviation {sup}");
    }

    #[test]
    fn simulate_rejects_nonpositive_noise() {
        let instance = ProblemInstance::diagonal(1.0, 1, 16).unwrap();
        let truth = SpectralVector::zeros(16);
        assert!(simulate_data(&instance, &truth, 0.0, 0).is_err());
        assert!(simulate_data(&instance, &truth, -2.0, 0).is_err());
    }

    #[test]
    fn data_realization_round_trips_through_json() {
        let instance = ProblemInstance::diagonal(1.0, 1, 32).unwrap();
        let truth = random_vector(32, 3, 0.5);
        let data = simulate_data(&instance, &truth, 100.0, 5).unwrap();
        let json = data.to_json();
        let parsed = DataRealization::from_json(&json).unwrap();
        assert_eq!(data, parsed);
    }

    #[test]
    fn diagonal_mean_examples() {
        let zero = SpectralVector::zeros(8);
        let out = posterior_mean_diagonal(&zero, 10.0, 0.5).unwrap();
        assert!(out.coeffs().iter().all(|x| *x == 0.0));
        let e1 = SpectralVector::basis(8, 1);
        let out = posterior_mean_diagonal(&e1, 1.0, 3.0).unwrap();
        assert_eq!(out.coeff(1), 0.5);
    }

    #[test]
    fn dense_and_diagonal_posterior_means_agree() {
        // c == 1, T = I: the m-space mean equals the coordinate formula under
        // the index identification alpha_tilde = (p/d) alpha - 1/2
        let p = 2.0;
        let d = 2u32;
        let n_coords = 128;
        let instance = ProblemInstance::diagonal(p, d, n_coords).unwrap();
        let alpha = 1.5;
        let alpha_tilde = p / d as f64 * alpha - 0.5;
        let data = random_vector(n_coords, 11, 1.0);
        let n = 250.0;
        let diag = posterior_mean_diagonal(&data, n, alpha_tilde).unwrap();
        let dense = posterior_mean_m(&data, n, alpha, &instance).unwrap();
        for i in 1..=n_coords {
            assert_relative_eq!(diag.coeff(i), dense.coeff(i), max_relative = 1e-10);
        }
    }

    #[test]
    fn posterior_mean_m_interpolates_data_at_tiny_noise() {
        let q = cos_symbol();
        let instance = build_example1(1, 16, &q).unwrap();
        let truth = random_vector(instance.dim(), 13, 1.0);
        let data = simulate_data(&instance, &truth, 1e12, 2).unwrap();
        let mean = posterior_mean_m(&data.d, 1e12, 1.2, &instance).unwrap();
        for i in 1..=10 {
            assert_relative_eq!(mean.coeff(i), data.d.coeff(i), max_relative = 1e-6);
        }
    }

    #[test]
    fn posterior_u_identity_forward_closed_form() {
        let n_coords = 64;
        let instance = ProblemInstance::diagonal(2.0, 1, n_coords).unwrap();
        let data = random_vector(n_coords, 17, 1.0);
        let n = 100.0;
        let alpha = 0.8;
        let post = posterior_u(&data, n, alpha, &instance).unwrap();
        let spec = instance.spectrum();
        for i in 1..=n_coords {
            let ca = spec.lambda_sq_pow(i, alpha);
            let expected = ca * data.coeff(i) / (ca + 1.0 / n);
            assert_relative_eq!(post.mean.coeff(i), expected, max_relative = 1e-12);
        }
        // zero data: mean zero, shrunk trace
        let zero = SpectralVector::zeros(n_coords);
        let post = posterior_u(&zero, n, alpha, &instance).unwrap();
        assert!(post.mean.coeffs().iter().all(|x| *x == 0.0));
        let trace: f64 = post.cov.diagonal_values().unwrap().iter().sum();
        let prior_trace: f64 = (1..=n_coords).map(|i| spec.lambda_sq_pow(i, alpha)).sum();
        assert!(trace < prior_trace);
    }

    #[test]
    fn pushforward_of_u_mean_matches_m_mean() {
        let q = cos_symbol();
        let instance = build_example1(1, 16, &q).unwrap();
        let data = random_vector(instance.dim(), 19, 0.3);
        let n = 500.0;
        let alpha = 1.1;
        let u_post = posterior_u(&data, n, alpha, &instance).unwrap();
        let pushed = instance.apply_forward(&u_post.mean);
        let m_mean = posterior_mean_m(&data, n, alpha, &instance).unwrap();
        let diff = ell2_norm(&pushed.sub(&m_mean));
        let scale = ell2_norm(&m_mean);
        assert!(diff <= 1e-10 * scale, "diff {diff} scale {scale}");
    }

    #[test]
    fn shrinkage_never_expands_data() {
        let q = cos_symbol();
        let instance = build_example1(1, 8, &q).unwrap();
        for seed in 0..20 {
            let data = random_vector(instance.dim(), seed, 1.0);
            let mean = posterior_mean_m(&data, 40.0, 1.3, &instance).unwrap();
            assert!(ell2_norm(&mean) <= ell2_norm(&data) * (1.0 + 1e-12));
        }
    }

    #[test]
    fn solve_regularized_scalar_and_bilinear_form() {
        let instance = ProblemInstance::diagonal(1.0, 1, 32).unwrap();
        let zero = SpectralVector::zeros(32);
        let out = solve_regularized(&instance, 1.0, 10.0, &zero).unwrap();
        assert!(out.coeffs().iter().all(|x| *x == 0.0));

        let r = random_vector(32, 23, 1.0);
        let n = 10.0;
        let alpha = 1.0;
        let out = solve_regularized(&instance, alpha, n, &r).unwrap();
        let spec = instance.spectrum();
        for i in 1..=32 {
            let mu = spec.lambda_sq_pow(i, alpha);
            assert_relative_eq!(out.coeff(i), r.coeff(i) / (n * mu + 1.0), max_relative = 1e-12);
        }

        // weak form: B(u, v) = (r, v) with B(u, v) = n (C^(a/2) T* u, C^(a/2) T* v) + (u, v)
        let q = cos_symbol();
        let instance = build_example1(1, 8, &q).unwrap();
        let dim = instance.dim();
        let r = random_vector(dim, 29, 1.0);
        let u = solve_regularized(&instance, alpha, n, &r).unwrap();
        let spec = instance.spectrum();
        let t = instance.forward().to_dense();
        let weighted_image = |w: &SpectralVector| -> DVector<f64> {
            let mut image = t.tr_mul(&DVector::from_column_slice(w.coeffs()));
            for i in 0..dim {
                image[i] *= spec.lambda_sq_pow(i + 1, alpha / 2.0);
            }
            image
        };
        let tu = weighted_image(&u);
        for probe in 0..10 {
            let v = random_vector(dim, 100 + probe, 1.0);
            let tv = weighted_image(&v);
            let vv = DVector::from_column_slice(v.coeffs());
            let lhs = n * tu.dot(&tv) + DVector::from_column_slice(u.coeffs()).dot(&vv);
            let rhs = DVector::from_column_slice(r.coeffs()).dot(&vv);
            assert_relative_eq!(lhs, rhs, max_relative = 1e-8);
        }
    }

    #[test]
    fn covariance_trace_diagonal_and_limits() {
        let instance = ProblemInstance::diagonal(2.0, 1, 64).unwrap();
        let alpha = 1.0;
        let n = 25.0;
        let spec = instance.spectrum();
        let expected: f64 = (1..=64)
            .map(|i| {
                let mu = spec.lambda_sq_pow(i, alpha);
                mu / (n * mu + 1.0)
            })
            .sum();
        assert_relative_eq!(
            covariance_trace(&instance, alpha, n).unwrap(),
            expected,
            max_relative = 1e-13
        );
        // vanishing in the small-noise limit
        assert!(covariance_trace(&instance, alpha, 1e12).unwrap() < 1e-8);
        // strictly decreasing along an n-grid
        let mut last = f64::INFINITY;
        for &n in &[1.0, 10.0, 100.0, 1e3, 1e4] {
            let trace = covariance_trace(&instance, alpha, n).unwrap();
            assert!(trace < last);
            last = trace;
        }
    }

    #[test]
    fn covariance_trace_example1_diagonal_oracle() {
        let instance = build_example1(1, 8, &FourierFunction::zero(1)).unwrap();
        let alpha = 1.2;
        let n = 100.0;
        let expected: f64 = (0..instance.dim())
            .map(|j| {
                let rho_sq = ((j / 2 + 1) * (j / 2 + 1)) as f64;
                let mu = rho_sq.powf(-2.0 - 2.0 * alpha);
                mu / (n * mu + 1.0)
            })
            .sum();
        assert_relative_eq!(
            covariance_trace(&instance, alpha, n).unwrap(),
            expected,
            max_relative = 1e-10
        );
    }

    #[test]
    fn probe_norm_diagonal_closed_form() {
        let instance = ProblemInstance::diagonal(2.0, 1, 48).unwrap();
        let alpha = 1.5;
        let s = 0.5;
        let n_list = [10.0, 1000.0];
        let norms = operator_norm_probe(&instance, alpha, s, &n_list).unwrap();
        let spec = instance.spectrum();
        for (&n, norm) in n_list.iter().zip(&norms) {
            let expected = (1..=48)
                .map(|i| {
                    let w = spec.lambda_sq_pow(i, (alpha - s) / 2.0);
                    let mu = spec.lambda_sq_pow(i, alpha);
                    w * w / (n * mu + 1.0)
                })
                .fold(0.0f64, f64::max);
            assert_relative_eq!(*norm, expected, max_relative = 1e-12);
        }
    }

    #[test]
    fn probe_norm_dense_matches_diagonal_instance() {
        // densified copy of a diagonal instance must agree with the closed form
        let q = FourierFunction::zero(1);
        let diag_instance = build_example1(1, 8, &q).unwrap();
        let dense_forward = LinearOp::dense(diag_instance.forward().to_dense(), true).unwrap();
        let dense_instance = ProblemInstance::new(
            diag_instance.spectrum().clone(),
            dense_forward,
            *diag_instance.exponents(),
            "densified",
        )
        .unwrap();
        let alpha = 1.5;
        let s = 0.6;
        let n_list = [50.0, 5e3];
        let a = operator_norm_probe(&diag_instance, alpha, s, &n_list).unwrap();
        let b = operator_norm_probe(&dense_instance, alpha, s, &n_list).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-6);
        }
    }

    #[test]
    fn probe_rejects_order_outside_range() {
        let instance = ProblemInstance::diagonal(2.0, 1, 16).unwrap();
        assert!(operator_norm_probe(&instance, 1.5, 0.1, &[10.0]).is_err());
        assert!(operator_norm_probe(&instance, 1.5, 1.6, &[10.0]).is_err());
    }

    #[test]
    fn kl_check_matched_truth_is_degenerate() {
        let instance = ProblemInstance::diagonal(1.0, 1, 32).unwrap();
        let u = random_vector(32, 31, 1.0);
        let report = kl_ball_check(&instance, &u, &u, 100.0, 2000, 0).unwrap();
        assert_eq!(report.kl_mean, 0.0);
        assert_eq!(report.target_mean, 0.0);
        assert_eq!(report.kl_var, 0.0);
    }

    #[test]
    fn kl_check_targets_scale_linearly_in_n() {
        let instance = ProblemInstance::diagonal(1.0, 1, 32).unwrap();
        let u = random_vector(32, 37, 1.0);
        let truth = SpectralVector::zeros(32);
        let a = kl_ball_check(&instance, &u, &truth, 100.0, 1000, 0).unwrap();
        let b = kl_ball_check(&instance, &u, &truth, 200.0, 1000, 0).unwrap();
        assert_relative_eq!(b.target_mean, 2.0 * a.target_mean, max_relative = 1e-12);
        assert_relative_eq!(b.target_var, 2.0 * a.target_var, max_relative = 1e-12);
    }

    #[test]
    fn kl_check_requires_enough_draws() {
        let instance = ProblemInstance::diagonal(1.0, 1, 16).unwrap();
        let u = SpectralVector::zeros(16);
        assert!(kl_ball_check(&instance, &u, &u, 10.0, 100, 0).is_err());
    }

    #[test]
    fn posterior_samples_deterministic_and_tight_at_zero_covariance() {
        let mean = random_vector(24, 41, 1.0);
        let cov = LinearOp::diagonal(DVector::from_element(24, 1e-30), true).unwrap();
        let post = PosteriorGaussian {
            mean: mean.clone(),
            cov,
            space: GaussianSpace::U,
        };
        let s1 = posterior_sample(&post, 4, 9).unwrap();
        let s2 = posterior_sample(&post, 4, 9).unwrap();
        assert_eq!(s1, s2);
        for sample in &s1 {
            for (a, b) in sample.coeffs().iter().zip(mean.coeffs()) {
                assert!((a - b).abs() <= 1e-14);
            }
        }
    }

    #[test]
    fn posterior_sample_variance_matches_diagonal_covariance() {
        let dim = 16;
        let mean = SpectralVector::zeros(dim);
        let diag: Vec<f64> = (1..=dim).map(|i| 1.0 / i as f64).collect();
        let cov = LinearOp::diagonal(DVector::from_vec(diag.clone()), true).unwrap();
        let post = PosteriorGaussian {
            mean,
            cov,
            space: GaussianSpace::U,
        };
        let samples = posterior_sample(&post, 10_000, 3).unwrap();
        for (j, target) in diag.iter().enumerate() {
            let var: f64 = samples
                .iter()
                .map(|s| s.coeff(j + 1) * s.coeff(j + 1))
                .sum::<f64>()
                / samples.len() as f64;
            assert!(
                (var - target).abs() <= 0.05 * target,
                "coordinate {} variance {var} target {target}",
                j + 1
            );
        }
    }
}
