//! Sequence-space primitives: spectral coefficient vectors, weighted norms,
//! norm balls, Hilbert-scale norms and the self-similarity certificate.
//!
//! Everything here works on finite truncations: a sequence is represented by
//! its first `N` coefficients against the eigenbasis of the prior covariance,
//! with the tail treated as exactly zero. Indexing is 1-based throughout so
//! that weights like `i^(1+2*beta)` read the same as in the usual sequence
//! notation.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operators::Spectrum;
use crate::rng;

/// A finite truncation of a coefficient sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralVector {
    coeffs: Vec<f64>,
}

impl SpectralVector {
    /// Wraps a coefficient vector. Every entry must be finite and the
    /// truncation level must be at least one.
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::invalid("spectral vector must have length >= 1"));
        }
        if let Some(pos) = coeffs.iter().position(|x| !x.is_finite()) {
            return Err(Error::invalid(format!(
                "spectral vector entry {} is not finite",
                pos + 1
            )));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(len: usize) -> Self {
        Self {
            coeffs: vec![0.0; len.max(1)],
        }
    }

    /// The k-th basis vector (1-based).
    pub fn basis(len: usize, k: usize) -> Self {
        assert!(k >= 1 && k <= len, "basis index out of range");
        let mut coeffs = vec![0.0; len];
        coeffs[k - 1] = 1.0;
        Self { coeffs }
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coefficient at the 1-based index `i`.
    pub fn coeff(&self, i: usize) -> f64 {
        self.coeffs[i - 1]
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.coeffs
    }

    pub fn scale(&self, factor: f64) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|x| factor * x).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.len(), other.len(), "length mismatch");
        Self {
            coeffs: self
                .coeffs
                .iter()
                .zip(&other.coeffs)
                .map(|(a, b)| a - b)
                .collect(),
        }
    }
}

/// Which weighted norm a ball is measured in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallKind {
    Sobolev,
    Hyperrectangle,
}

/// A smoothness ball: Sobolev or hyperrectangle, of order `beta` and
/// (squared-norm) radius `radius`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub kind: BallKind,
    pub beta: f64,
    pub radius: f64,
}

impl BallSpec {
    pub fn new(kind: BallKind, beta: f64, radius: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::invalid("ball smoothness beta must be > 0"));
        }
        if !(radius > 0.0) {
            return Err(Error::invalid("ball radius must be > 0"));
        }
        Ok(Self { kind, beta, radius })
    }
}

/// Parameters of the self-similarity window condition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfSimilarSpec {
    pub epsilon: f64,
    pub n0: usize,
    pub rho: f64,
    pub ball: BallSpec,
}

impl SelfSimilarSpec {
    pub fn new(epsilon: f64, n0: usize, rho: f64, ball: BallSpec) -> Result<Self> {
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be > 0"));
        }
        if n0 < 1 {
            return Err(Error::invalid("n0 must be >= 1"));
        }
        if !(rho >= 2.0) {
            return Err(Error::invalid("rho must be >= 2"));
        }
        if ball.kind != BallKind::Hyperrectangle {
            return Err(Error::invalid(
                "self-similarity is defined on a hyperrectangle ball",
            ));
        }
        Ok(Self {
            epsilon,
            n0,
            rho,
            ball,
        })
    }
}

/// Outcome of a self-similarity check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelfSimilarCertificate {
    pub holds: bool,
    /// Smallest window start that fails the lower bound, when any does.
    pub first_violation: Option<usize>,
}

/// The plain `l^2` norm of the truncation.
pub fn ell2_norm(v: &SpectralVector) -> f64 {
    v.coeffs().iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Weighted norm of order `beta`: `sqrt(sum_i i^(2 beta) v_i^2)` for the
/// Sobolev kind, `sqrt(sup_i i^(1+2 beta) v_i^2)` for the hyperrectangle kind.
pub fn weighted_norm(v: &SpectralVector, beta: f64, kind: BallKind) -> Result<f64> {
    if beta < 0.0 {
        return Err(Error::invalid("weighted norm requires beta >= 0"));
    }
    let sq = match kind {
        BallKind::Sobolev => v
            .coeffs()
            .iter()
            .enumerate()
            .map(|(j, x)| ((j + 1) as f64).powf(2.0 * beta) * x * x)
            .sum::<f64>(),
        BallKind::Hyperrectangle => v
            .coeffs()
            .iter()
            .enumerate()
            .map(|(j, x)| ((j + 1) as f64).powf(1.0 + 2.0 * beta) * x * x)
            .fold(0.0, f64::max),
    };
    Ok(sq.sqrt())
}

/// Membership test: squared weighted norm within the ball radius.
pub fn in_ball(v: &SpectralVector, ball: &BallSpec) -> bool {
    let norm = weighted_norm(v, ball.beta, ball.kind)
        .expect("ball beta is validated positive at construction");
    norm * norm <= ball.radius
}

/// Norm of the Hilbert scale of order `t` induced by the covariance spectrum:
/// `sqrt(sum_i lambda_i^(-2t) v_i^2)`.
pub fn hilbert_scale_norm(v: &SpectralVector, t: f64, spec: &Spectrum) -> f64 {
    assert!(
        spec.len() >= v.len(),
        "spectrum covers {} indices, vector has {}",
        spec.len(),
        v.len()
    );
    v.coeffs()
        .iter()
        .enumerate()
        .map(|(j, x)| spec.lambda_sq_pow(j + 1, -t) * x * x)
        .sum::<f64>()
        .sqrt()
}

/// Checks the block-energy lower bound on every window `[N', floor(rho N')]`
/// with `N'` ranging over `[n0, floor(N/rho)]`.
pub fn is_self_similar(
    v: &SpectralVector,
    spec: &SelfSimilarSpec,
) -> Result<SelfSimilarCertificate> {
    let n = v.len();
    let rho_n0 = spec.rho * spec.n0 as f64;
    if rho_n0 > n as f64 {
        return Err(Error::EmptyWindow { rho_n0, len: n });
    }
    let upper = (n as f64 / spec.rho).floor() as usize;
    let threshold_scale = spec.epsilon * spec.ball.radius;
    // prefix sums of squares; prefix[i] = sum of v_1^2 .. v_i^2
    let mut prefix = Vec::with_capacity(n + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for x in v.coeffs() {
        acc += x * x;
        prefix.push(acc);
    }
    for start in spec.n0..=upper {
        let end = ((spec.rho * start as f64).floor() as usize).min(n);
        let window = prefix[end] - prefix[start - 1];
        let bound = threshold_scale * (start as f64).powf(-2.0 * spec.ball.beta);
        if window < bound {
            return Ok(SelfSimilarCertificate {
                holds: false,
                first_violation: Some(start),
            });
        }
    }
    Ok(SelfSimilarCertificate {
        holds: true,
        first_violation: None,
    })
}

/// Families of ground-truth sequences used by the experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TruthFamily {
    PolynomialDecay,
    RandomSelfSimilar,
    SingleSpike,
}

/// Margin added to the decay exponent so polynomial truths sit strictly
/// inside the Sobolev ball, not just the hyperrectangle.
pub const DECAY_MARGIN: f64 = 0.01;

/// Builds a ground-truth sequence of smoothness `gamma` (measured in the
/// Hilbert scale of a spectrum with exponents `p`, `d`).
///
/// `PolynomialDecay` is the deterministic envelope `i^-(1/2 + p*gamma/d + margin)`;
/// `RandomSelfSimilar` fills `[1/2, 1]` of that envelope with seeded magnitudes
/// and signs; `SingleSpike` is the first basis vector.
pub fn make_truth(
    family: TruthFamily,
    gamma: f64,
    p: f64,
    d: u32,
    n: usize,
    seed: u64,
) -> Result<SpectralVector> {
    if gamma < 1.0 {
        return Err(Error::invalid("truth smoothness gamma must be >= 1"));
    }
    if n < 16 {
        return Err(Error::invalid("truth truncation must be >= 16"));
    }
    if !(p > 0.0) || d < 1 {
        return Err(Error::invalid("spectrum exponents require p > 0, d >= 1"));
    }
    let exponent = 0.5 + p * gamma / d as f64 + DECAY_MARGIN;
    let coeffs = match family {
        TruthFamily::PolynomialDecay => (1..=n)
            .map(|i| (i as f64).powf(-exponent))
            .collect::<Vec<_>>(),
        TruthFamily::RandomSelfSimilar => {
            let mut rng = rng::stream(seed, "truth", 0.0, 0);
            (1..=n)
                .map(|i| {
                    let magnitude = 0.5 + 0.5 * rng.random::<f64>();
                    let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                    sign * magnitude * (i as f64).powf(-exponent)
                })
                .collect()
        }
        TruthFamily::SingleSpike => {
            let mut coeffs = vec![0.0; n];
            coeffs[0] = 1.0;
            coeffs
        }
    };
    SpectralVector::new(coeffs)
}

/// Draws a sequence with independent `N(0, i^-(1+2 alpha))` coordinates.
pub fn sample_prior_sequence(alpha: f64, n: usize, rng: &mut impl Rng) -> SpectralVector {
    let coeffs = (1..=n)
        .map(|i| {
            let sd = (i as f64).powf(-(0.5 + alpha));
            sd * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    SpectralVector { coeffs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn ell2_zero_and_pythagorean() {
        assert_eq!(ell2_norm(&SpectralVector::zeros(3)), 0.0);
        let v = SpectralVector::new(vec![3.0, 4.0]).unwrap();
        assert_eq!(ell2_norm(&v), 5.0);
    }

    #[test]
    fn ell2_harmonic_matches_direct_sum() {
        let n = 1000;
        let v = SpectralVector::new((1..=n).map(|i| 1.0 / i as f64).collect()).unwrap();
        // independent oracle: descending-order compensated summation
        let mut oracle = 0.0f64;
        let mut carry = 0.0f64;
        for i in (1..=n).rev() {
            let term = (i as f64).powi(-2) - carry;
            let tmp = oracle + term;
            carry = (tmp - oracle) - term;
            oracle = tmp;
        }
        assert_relative_eq!(ell2_norm(&v), oracle.sqrt(), max_relative = 1e-13);
    }

    #[test]
    fn weighted_norm_examples() {
        let e1 = SpectralVector::basis(4, 1);
        assert_eq!(weighted_norm(&e1, 0.7, BallKind::Sobolev).unwrap(), 1.0);
        assert_eq!(
            weighted_norm(&e1, 0.7, BallKind::Hyperrectangle).unwrap(),
            1.0
        );
        let e2 = SpectralVector::new(vec![0.0, 1.0]).unwrap();
        assert_eq!(weighted_norm(&e2, 1.0, BallKind::Sobolev).unwrap(), 2.0);
        // critical envelope saturates the hyperrectangle norm at exactly 1
        let beta = 0.8;
        let v = SpectralVector::new(
            (1..=64)
                .map(|i| (i as f64).powf(-(0.5 + beta)))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let norm = weighted_norm(&v, beta, BallKind::Hyperrectangle).unwrap();
        assert_relative_eq!(norm, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn weighted_norm_rejects_negative_beta() {
        let v = SpectralVector::zeros(4);
        assert!(weighted_norm(&v, -0.1, BallKind::Sobolev).is_err());
    }

    #[test]
    fn ball_membership() {
        let zero = SpectralVector::zeros(5);
        let ball = BallSpec::new(BallKind::Sobolev, 1.0, 0.5).unwrap();
        assert!(in_ball(&zero, &ball));
        let e1 = SpectralVector::basis(2, 1);
        assert!(!in_ball(&e1, &ball));

        // sum_{i<=1e4} i^{-1.5} vs radius 2, decided by direct summation
        let n = 10_000;
        let v = SpectralVector::new((1..=n).map(|i| 1.0 / i as f64).collect()).unwrap();
        let ball = BallSpec::new(BallKind::Sobolev, 0.25, 2.0).unwrap();
        let direct: f64 = (1..=n).map(|i| (i as f64).powf(-1.5)).sum();
        assert_eq!(in_ball(&v, &ball), direct <= 2.0);
        assert!(!in_ball(&v, &ball));
    }

    #[test]
    fn hilbert_scale_norm_examples() {
        let spec = Spectrum::constant(1.0, 1, 32);
        let v = SpectralVector::new((1..=32).map(|i| 1.0 / (i * i) as f64).collect()).unwrap();
        assert_eq!(hilbert_scale_norm(&v, 0.0, &spec), ell2_norm(&v));
        let e5 = SpectralVector::basis(32, 5);
        // lambda_5^{-t} with lambda_5^2 = 5^{-2}
        assert_relative_eq!(
            hilbert_scale_norm(&e5, 1.5, &spec),
            5.0f64.powf(1.5),
            max_relative = 1e-13
        );
        // t = 1, lambda_i^2 = i^{-2}: sum i^2 v_i^2
        let direct: f64 = (1..=32).map(|i| (i as f64).powi(2) * v.coeff(i).powi(2)).sum();
        assert_relative_eq!(
            hilbert_scale_norm(&v, 1.0, &spec),
            direct.sqrt(),
            max_relative = 1e-12
        );
    }

    fn hyper_ball(beta: f64, radius: f64) -> BallSpec {
        BallSpec::new(BallKind::Hyperrectangle, beta, radius).unwrap()
    }

    #[test]
    fn self_similar_zero_vector_fails_at_n0() {
        let spec = SelfSimilarSpec::new(0.1, 2, 2.0, hyper_ball(1.0, 1.0)).unwrap();
        let cert = is_self_similar(&SpectralVector::zeros(64), &spec).unwrap();
        assert!(!cert.holds);
        assert_eq!(cert.first_violation, Some(2));
    }

    #[test]
    fn self_similar_envelope_holds_for_small_epsilon() {
        let beta = 1.0;
        let n = 1 << 12;
        let v = SpectralVector::new(
            (1..=n)
                .map(|i| (i as f64).powf(-(0.5 + beta)))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        // window sums are ~ N^{-2 beta}/2 by integral comparison
        let spec = SelfSimilarSpec::new(0.05, 2, 2.0, hyper_ball(beta, 1.0)).unwrap();
        let cert = is_self_similar(&v, &spec).unwrap();
        assert!(cert.holds, "violation at {:?}", cert.first_violation);
    }

    #[test]
    fn self_similar_detects_truncated_tail() {
        let n0 = 4;
        let n = 256;
        let mut coeffs = vec![0.0; n];
        for (j, c) in coeffs.iter_mut().enumerate().take(2 * n0) {
            *c = ((j + 1) as f64).powf(-1.0);
        }
        let v = SpectralVector::new(coeffs).unwrap();
        let spec = SelfSimilarSpec::new(1e-6, n0, 2.0, hyper_ball(0.5, 1.0)).unwrap();
        let cert = is_self_similar(&v, &spec).unwrap();
        assert!(!cert.holds);
        // first window entirely past index 2*n0 starts at 2*n0 + 1... but any
        // window [N', 2N'] with N' > 2*n0 has zero mass; the scan reports the
        // smallest failing start, which is the first N' with window sum zero.
        let first = cert.first_violation.unwrap();
        assert!(first > n0);
        let prefix: Vec<f64> = v.coeffs().iter().map(|x| x * x).collect();
        let window_sum: f64 = prefix[first - 1..(2 * first).min(n)].iter().sum();
        assert_eq!(window_sum, 0.0);
    }

    #[test]
    fn self_similar_rejects_empty_window() {
        let spec = SelfSimilarSpec::new(0.1, 40, 2.0, hyper_ball(1.0, 1.0)).unwrap();
        let err = is_self_similar(&SpectralVector::zeros(64), &spec);
        assert!(matches!(err, Err(Error::EmptyWindow { .. })));
    }

    #[test]
    fn make_truth_families() {
        let spike = make_truth(TruthFamily::SingleSpike, 1.0, 2.0, 1, 16, 0).unwrap();
        assert_eq!(spike.coeff(1), 1.0);
        assert_eq!(ell2_norm(&spike), 1.0);

        let poly = make_truth(TruthFamily::PolynomialDecay, 1.0, 2.0, 2, 16, 0).unwrap();
        assert_eq!(poly.coeff(1), 1.0);
        assert_relative_eq!(poly.coeff(2), 2f64.powf(-1.51), max_relative = 1e-15);
        assert_relative_eq!(poly.coeff(4), 4f64.powf(-1.51), max_relative = 1e-15);

        let a = make_truth(TruthFamily::RandomSelfSimilar, 1.0, 1.0, 1, 64, 9).unwrap();
        let b = make_truth(TruthFamily::RandomSelfSimilar, 1.0, 1.0, 1, 64, 9).unwrap();
        assert_eq!(a, b);
        for i in 1..=64 {
            let envelope = (i as f64).powf(-1.51);
            let mag = a.coeff(i).abs();
            assert!(mag >= 0.5 * envelope - 1e-15 && mag <= envelope + 1e-15);
        }

        assert!(make_truth(TruthFamily::PolynomialDecay, 0.5, 2.0, 1, 64, 0).is_err());
        assert!(make_truth(TruthFamily::PolynomialDecay, 1.0, 2.0, 1, 8, 0).is_err());
    }

    proptest! {
        #[test]
        fn interpolation_inequality(
            seed in 0u64..500,
            q in -1.0f64..0.5,
            gap1 in 0.1f64..1.0,
            gap2 in 0.1f64..1.0,
        ) {
            let r = q + gap1;
            let s = r + gap2;
            let n = 48;
            let mut g = rng::stream(seed, "interp", 0.0, 0);
            let spec = Spectrum::constant(1.3, 1, n);
            let v = sample_prior_sequence(0.4, n, &mut g);
            let nq = hilbert_scale_norm(&v, q, &spec);
            let nr = hilbert_scale_norm(&v, r, &spec);
            let ns = hilbert_scale_norm(&v, s, &spec);
            let theta = (s - r) / (s - q);
            let bound = nq.powf(theta) * ns.powf(1.0 - theta);
            prop_assert!(nr <= bound * (1.0 + 1e-12));
        }

        #[test]
        fn interpolation_equality_on_basis_vectors(k in 1usize..32, r in -1.0f64..1.0) {
            let spec = Spectrum::constant(2.0, 1, 32);
            let v = SpectralVector::basis(32, k);
            let q = r - 0.7;
            let s = r + 0.9;
            let nq = hilbert_scale_norm(&v, q, &spec);
            let nr = hilbert_scale_norm(&v, r, &spec);
            let ns = hilbert_scale_norm(&v, s, &spec);
            let theta = (s - r) / (s - q);
            let bound = nq.powf(theta) * ns.powf(1.0 - theta);
            prop_assert!((nr - bound).abs() <= 1e-12 * nr.abs().max(1.0));
        }

        #[test]
        fn embedding_monotone_for_contracting_spectra(
            seed in 0u64..500,
            s in -1.0f64..1.0,
            gap in 0.01f64..1.5,
        ) {
            // lambda_i <= 1 for all i: norms grow with the scale order
            let n = 32;
            let spec = Spectrum::constant(1.0, 1, n);
            let mut g = rng::stream(seed, "embed", 0.0, 0);
            let v = sample_prior_sequence(0.3, n, &mut g);
            let lo = hilbert_scale_norm(&v, s, &spec);
            let hi = hilbert_scale_norm(&v, s + gap, &spec);
            prop_assert!(lo <= hi * (1.0 + 1e-12));
        }

        #[test]
        fn hilbert_norm_equals_sobolev_norm_for_plain_spectra(
            seed in 0u64..200,
            gamma in 0.1f64..3.0,
        ) {
            // c == 1: || . ||_{H^gamma} is exactly the Sobolev norm of order p*gamma/d
            let n = 40;
            let p = 2.0;
            let d = 2u32;
            let spec = Spectrum::constant(p, d, n);
            let mut g = rng::stream(seed, "equiv", 0.0, 0);
            let v = sample_prior_sequence(0.6, n, &mut g);
            let beta = p * gamma / d as f64;
            let lhs = hilbert_scale_norm(&v, gamma, &spec);
            let rhs = weighted_norm(&v, beta, BallKind::Sobolev).unwrap();
            prop_assert_eq!(lhs, rhs);
        }

        #[test]
        fn self_similarity_monotone_in_epsilon(seed in 0u64..200, eps in 0.01f64..0.2) {
            let n = 512;
            let mut g = rng::stream(seed, "ss-mono", 0.0, 0);
            let v = sample_prior_sequence(0.5, n, &mut g);
            let ball = hyper_ball(0.7, 1.0);
            let strict = SelfSimilarSpec::new(eps, 2, 2.0, ball).unwrap();
            let relaxed = SelfSimilarSpec::new(eps / 2.0, 2, 2.0, ball).unwrap();
            let strict_cert = is_self_similar(&v, &strict).unwrap();
            let relaxed_cert = is_self_similar(&v, &relaxed).unwrap();
            if strict_cert.holds {
                prop_assert!(relaxed_cert.holds);
            }
        }
    }
}
