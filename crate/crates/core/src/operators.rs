//! Spectra and truncated Galerkin operator matrices.
//!
//! The covariance family `C^alpha` is diagonal in the eigenbasis; the whitened
//! forward map `T` is either diagonal (sequence-model instances) or a dense
//! Galerkin section assembled on the zero-mean Fourier basis of the torus.
//! Multiplication operators become convolution matrices in the complex
//! exponential basis; the entries below are that assembly conjugated to the
//! real cos/sin basis in closed form, so they are exact for band-limited
//! symbols.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sequence::{hilbert_scale_norm, SpectralVector};

/// Relative floor for the negative-eigenvalue check on assembled operators.
const SPD_EIGEN_SLACK: f64 = 1e-10;

/// Tolerance band for the assumption-consistency verdict.
pub const ASSUMPTION_BAND: f64 = 50.0;

/// Relative tolerance of every power-iteration norm estimate.
pub const POWER_ITERATION_TOL: f64 = 1e-8;
const POWER_ITERATION_MAX: usize = 10_000;

// ---------------------------------------------------------------------------
// Spectrum
// ---------------------------------------------------------------------------

/// The eigenvalue sequence `lambda_i^2 = c_i^2 i^(-2p/d)` of the prior
/// covariance, truncated at `N = c.len()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    p: f64,
    d: u32,
    c: Vec<f64>,
    c_bound: f64,
}

impl Spectrum {
    pub fn new(p: f64, d: u32, c: Vec<f64>) -> Result<Self> {
        if !(p > 0.0) {
            return Err(Error::invalid("spectrum decay exponent p must be > 0"));
        }
        if d < 1 {
            return Err(Error::invalid("spatial dimension d must be >= 1"));
        }
        if c.is_empty() {
            return Err(Error::invalid("spectrum needs at least one eigenvalue"));
        }
        let mut c_bound: f64 = 1.0;
        for (j, cj) in c.iter().enumerate() {
            if !(cj.is_finite() && *cj > 0.0) {
                return Err(Error::invalid(format!(
                    "spectrum constant c_{} must be positive and finite",
                    j + 1
                )));
            }
            c_bound = c_bound.max(*cj).max(1.0 / cj);
        }
        Ok(Self { p, d, c, c_bound })
    }

    /// Spectrum with `c_i == 1`.
    pub fn constant(p: f64, d: u32, n: usize) -> Self {
        Self::new(p, d, vec![1.0; n]).expect("constant spectrum parameters are valid")
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    /// The declared bound `C >= max(c_i, 1/c_i)`.
    pub fn c_bound(&self) -> f64 {
        self.c_bound
    }

    /// Trace-class threshold `alpha_0 = d / (2p)`.
    pub fn alpha0(&self) -> f64 {
        self.d as f64 / (2.0 * self.p)
    }

    /// `lambda_i^2` for the 1-based index `i`.
    pub fn lambda_sq(&self, i: usize) -> f64 {
        self.lambda_sq_pow(i, 1.0)
    }

    /// `lambda_i^(2e) = c_i^(2e) i^(-2 p e / d)` for the 1-based index `i`.
    pub fn lambda_sq_pow(&self, i: usize, e: f64) -> f64 {
        let two_e = 2.0 * e;
        let exponent = -(two_e * self.p) / self.d as f64;
        self.c[i - 1].powf(two_e) * (i as f64).powf(exponent)
    }
}

// ---------------------------------------------------------------------------
// LinearOp
// ---------------------------------------------------------------------------

/// Representation of a truncated operator in the eigenbasis of `C`.
#[derive(Debug, Clone, PartialEq)]
pub enum OpRepr {
    Diagonal(DVector<f64>),
    Dense(DMatrix<f64>),
}

/// A truncated linear operator, optionally flagged symmetric positive
/// definite.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearOp {
    repr: OpRepr,
    spd: bool,
}

impl LinearOp {
    pub fn diagonal(values: DVector<f64>, spd: bool) -> Result<Self> {
        if spd && values.iter().any(|v| *v <= 0.0) {
            return Err(Error::NotSpd(
                "diagonal operator flagged SPD has a non-positive entry".into(),
            ));
        }
        Ok(Self {
            repr: OpRepr::Diagonal(values),
            spd,
        })
    }

    pub fn dense(matrix: DMatrix<f64>, spd: bool) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::invalid("operator matrix must be square"));
        }
        if spd {
            let scale = matrix.amax();
            for i in 0..matrix.nrows() {
                for j in (i + 1)..matrix.ncols() {
                    if (matrix[(i, j)] - matrix[(j, i)]).abs() > 1e-12 * scale.max(1.0) {
                        return Err(Error::NotSpd(format!(
                            "asymmetry at ({i}, {j}) exceeds tolerance"
                        )));
                    }
                }
            }
        }
        Ok(Self {
            repr: OpRepr::Dense(matrix),
            spd,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self {
            repr: OpRepr::Diagonal(DVector::from_element(n, 1.0)),
            spd: true,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.repr {
            OpRepr::Diagonal(v) => v.len(),
            OpRepr::Dense(m) => m.nrows(),
        }
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.repr, OpRepr::Diagonal(_))
    }

    pub fn is_spd(&self) -> bool {
        self.spd
    }

    pub fn repr(&self) -> &OpRepr {
        &self.repr
    }

    pub fn diagonal_values(&self) -> Option<&DVector<f64>> {
        match &self.repr {
            OpRepr::Diagonal(v) => Some(v),
            OpRepr::Dense(_) => None,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        match &self.repr {
            OpRepr::Diagonal(v) => DMatrix::from_diagonal(v),
            OpRepr::Dense(m) => m.clone(),
        }
    }

    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            OpRepr::Diagonal(d) => d.component_mul(v),
            OpRepr::Dense(m) => m * v,
        }
    }

    pub fn apply_transpose(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.repr {
            OpRepr::Diagonal(d) => d.component_mul(v),
            OpRepr::Dense(m) => m.tr_mul(v),
        }
    }
}

// ---------------------------------------------------------------------------
// ProblemInstance
// ---------------------------------------------------------------------------

/// Structural exponents of an instance: noise smoothness `beta`, forward
/// smoothing `ell`, the combination `delta = 2 ell - beta + 1`, and the truth
/// smoothness `gamma` the experiments assume.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Exponents {
    pub beta: f64,
    pub ell: f64,
    pub delta: f64,
    pub gamma: f64,
}

impl Exponents {
    pub fn new(beta: f64, ell: f64, gamma: f64) -> Result<Self> {
        if beta < 0.0 || ell < 0.0 {
            return Err(Error::invalid("exponents beta and ell must be >= 0"));
        }
        if gamma < 1.0 {
            return Err(Error::invalid("truth smoothness gamma must be >= 1"));
        }
        let delta = 2.0 * ell - beta + 1.0;
        if delta < 1.0 {
            return Err(Error::invalid(format!(
                "delta = 2*ell - beta + 1 = {delta} violates delta >= 1"
            )));
        }
        Ok(Self {
            beta,
            ell,
            delta,
            gamma,
        })
    }

    /// Smoothness of the transformed truth: `beta~ = (p/d)(gamma + delta - 1)`.
    pub fn beta_tilde(&self, spectrum: &Spectrum) -> f64 {
        spectrum.p() / spectrum.d() as f64 * (self.gamma + self.delta - 1.0)
    }
}

/// A whitened forward map together with the covariance spectrum and the
/// structural exponents, at a fixed truncation level.
#[derive(Debug, Clone)]
pub struct ProblemInstance {
    spectrum: Spectrum,
    forward: LinearOp,
    exponents: Exponents,
    label: String,
    descriptor: Option<InstanceDescriptor>,
}

impl ProblemInstance {
    pub fn new(
        spectrum: Spectrum,
        forward: LinearOp,
        exponents: Exponents,
        label: impl Into<String>,
    ) -> Result<Self> {
        if forward.dim() != spectrum.len() {
            return Err(Error::invalid(format!(
                "forward map dimension {} does not match spectrum length {}",
                forward.dim(),
                spectrum.len()
            )));
        }
        Ok(Self {
            spectrum,
            forward,
            exponents,
            label: label.into(),
            descriptor: None,
        })
    }

    /// Sequence-model instance: `T = I`, `c == 1`, `delta = 1`.
    pub fn diagonal(p: f64, d: u32, n: usize) -> Result<Self> {
        let spectrum = Spectrum::new(p, d, vec![1.0; n])?;
        let forward = LinearOp::identity(n);
        let exponents = Exponents::new(0.0, 0.0, 1.0)?;
        Self::new(spectrum, forward, exponents, "diagonal")
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if gamma < 1.0 {
            return Err(Error::invalid("truth smoothness gamma must be >= 1"));
        }
        self.exponents.gamma = gamma;
        Ok(self)
    }

    pub fn spectrum(&self) -> &Spectrum {
        &self.spectrum
    }

    pub fn forward(&self) -> &LinearOp {
        &self.forward
    }

    pub fn exponents(&self) -> &Exponents {
        &self.exponents
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn descriptor(&self) -> Option<&InstanceDescriptor> {
        self.descriptor.as_ref()
    }

    pub fn dim(&self) -> usize {
        self.spectrum.len()
    }

    pub fn alpha0(&self) -> f64 {
        self.spectrum.alpha0()
    }

    /// Applies `T` to a coefficient vector.
    pub fn apply_forward(&self, v: &SpectralVector) -> SpectralVector {
        let out = self
            .forward
            .apply(&DVector::from_column_slice(v.coeffs()));
        SpectralVector::new(out.data.into()).expect("forward image of finite input is finite")
    }
}

// ---------------------------------------------------------------------------
// Fourier symbols on the torus
// ---------------------------------------------------------------------------

/// A real trigonometric polynomial on the d-torus, given by finitely many
/// Fourier coefficients `q(theta) = sum_k qhat_k exp(i k.theta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierFunction {
    d: u32,
    coeffs: BTreeMap<Vec<i64>, (f64, f64)>,
}

impl FourierFunction {
    /// Builds the symbol from `(k, re, im)` entries and validates that the
    /// list is Hermitian (so the function is real-valued): the entry for `-k`
    /// must be present with the conjugate value, and `k = 0` must be real.
    pub fn from_entries(d: u32, entries: &[(Vec<i64>, f64, f64)]) -> Result<Self> {
        if d < 1 {
            return Err(Error::invalid("Fourier symbol dimension must be >= 1"));
        }
        let mut coeffs = BTreeMap::new();
        for (k, re, im) in entries {
            if k.len() != d as usize {
                return Err(Error::invalid(format!(
                    "frequency vector {k:?} does not have dimension {d}"
                )));
            }
            if !(re.is_finite() && im.is_finite()) {
                return Err(Error::invalid("Fourier coefficients must be finite"));
            }
            if coeffs.insert(k.clone(), (*re, *im)).is_some() {
                return Err(Error::invalid(format!("duplicate frequency {k:?}")));
            }
        }
        for (k, (re, im)) in &coeffs {
            let neg: Vec<i64> = k.iter().map(|x| -x).collect();
            if neg == *k {
                if *im != 0.0 {
                    return Err(Error::invalid(
                        "coefficient at frequency 0 must be real for a real-valued symbol",
                    ));
                }
                continue;
            }
            match coeffs.get(&neg) {
                Some((nre, nim)) if *nre == *re && *nim == -*im => {}
                _ => {
                    return Err(Error::invalid(format!(
                        "coefficient list is not Hermitian at frequency {k:?}; \
                         the symbol would be complex-valued"
                    )));
                }
            }
        }
        Ok(Self { d, coeffs })
    }

    /// The constant symbol `q == c0`.
    pub fn constant(d: u32, c0: f64) -> Result<Self> {
        if c0 == 0.0 {
            Self::from_entries(d, &[])
        } else {
            Self::from_entries(d, &[(vec![0; d as usize], c0, 0.0)])
        }
    }

    pub fn zero(d: u32) -> Self {
        Self::from_entries(d, &[]).expect("empty coefficient list is valid")
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.values().all(|(re, im)| *re == 0.0 && *im == 0.0)
    }

    /// True when only the zero frequency carries a coefficient.
    pub fn is_constant(&self) -> bool {
        self.coeffs
            .iter()
            .all(|(k, (re, im))| k.iter().all(|x| *x == 0) || (*re == 0.0 && *im == 0.0))
    }

    pub fn mean(&self) -> f64 {
        self.coeffs
            .get(&vec![0; self.d as usize])
            .map(|(re, _)| *re)
            .unwrap_or(0.0)
    }

    fn coeff(&self, k: &[i64]) -> (f64, f64) {
        self.coeffs.get(k).copied().unwrap_or((0.0, 0.0))
    }

    /// Evaluates the symbol at the angle vector `theta`.
    pub fn eval(&self, theta: &[f64]) -> f64 {
        assert_eq!(theta.len(), self.d as usize);
        let mut value = 0.0;
        for (k, (re, im)) in &self.coeffs {
            let phase: f64 = k
                .iter()
                .zip(theta)
                .map(|(ki, ti)| *ki as f64 * ti)
                .sum();
            value += re * phase.cos() - im * phase.sin();
        }
        value
    }

    /// Smallest value over a uniform verification grid (64 points per
    /// dimension).
    pub fn min_on_grid(&self) -> f64 {
        let steps = 64usize;
        let dim = self.d as usize;
        let mut min = f64::INFINITY;
        let mut idx = vec![0usize; dim];
        let two_pi = std::f64::consts::TAU;
        loop {
            let theta: Vec<f64> = idx
                .iter()
                .map(|i| *i as f64 * two_pi / steps as f64)
                .collect();
            min = min.min(self.eval(&theta));
            let mut carry = 0;
            loop {
                idx[carry] += 1;
                if idx[carry] < steps {
                    break;
                }
                idx[carry] = 0;
                carry += 1;
                if carry == dim {
                    return min;
                }
            }
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = (&Vec<i64>, f64, f64)> {
        self.coeffs.iter().map(|(k, (re, im))| (k, *re, *im))
    }
}

// ---------------------------------------------------------------------------
// Torus modes and Galerkin assembly
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Trig {
    Cos,
    Sin,
}

#[derive(Debug, Clone)]
struct Mode {
    k: Vec<i64>,
    trig: Trig,
    rho_sq: i64,
}

/// Enumerates the real zero-mean Fourier modes with `|k|_inf <= K`, ordered by
/// the Laplacian eigenvalue `|k|^2` ascending with lexicographic tie-break on
/// the representative frequency (cosine before sine).
fn enumerate_modes(d: u32, k_cut: u32) -> Vec<Mode> {
    let dim = d as usize;
    let k_max = k_cut as i64;
    let mut reps = Vec::new();
    let mut current = vec![-k_max; dim];
    'outer: loop {
        if current.iter().any(|x| *x != 0) {
            // canonical representative: first nonzero component positive
            let first_nonzero = current.iter().find(|x| **x != 0).copied().unwrap_or(0);
            if first_nonzero > 0 {
                reps.push(current.clone());
            }
        }
        for slot in (0..dim).rev() {
            current[slot] += 1;
            if current[slot] <= k_max {
                continue 'outer;
            }
            current[slot] = -k_max;
        }
        break;
    }
    let mut modes = Vec::with_capacity(2 * reps.len());
    for k in reps {
        let rho_sq: i64 = k.iter().map(|x| x * x).sum();
        modes.push(Mode {
            k: k.clone(),
            trig: Trig::Cos,
            rho_sq,
        });
        modes.push(Mode {
            k,
            trig: Trig::Sin,
            rho_sq,
        });
    }
    modes.sort_by(|a, b| {
        a.rho_sq
            .cmp(&b.rho_sq)
            .then_with(|| a.k.cmp(&b.k))
            .then_with(|| match (a.trig, b.trig) {
                (Trig::Cos, Trig::Sin) => std::cmp::Ordering::Less,
                (Trig::Sin, Trig::Cos) => std::cmp::Ordering::Greater,
                _ => std::cmp::Ordering::Equal,
            })
    });
    modes
}

/// Entry of the multiplication operator by `q` between two real modes; this is
/// the complex convolution matrix conjugated to the cos/sin basis.
fn multiplication_entry(q: &FourierFunction, a: &Mode, b: &Mode) -> f64 {
    let diff: Vec<i64> = a.k.iter().zip(&b.k).map(|(x, y)| x - y).collect();
    let sum: Vec<i64> = a.k.iter().zip(&b.k).map(|(x, y)| x + y).collect();
    let (dre, dim_) = q.coeff(&diff);
    let (sre, sim) = q.coeff(&sum);
    match (a.trig, b.trig) {
        (Trig::Cos, Trig::Cos) => dre + sre,
        (Trig::Sin, Trig::Sin) => dre - sre,
        (Trig::Cos, Trig::Sin) => dim_ - sim,
        (Trig::Sin, Trig::Cos) => -dim_ - sim,
    }
}

fn assemble_shifted_laplacian(modes: &[Mode], q: &FourierFunction) -> LinearOp {
    let n = modes.len();
    if q.is_constant() {
        let mean = q.mean();
        let diag = DVector::from_iterator(n, modes.iter().map(|m| m.rho_sq as f64 + mean));
        LinearOp::diagonal(diag, true).expect("shifted Laplacian diagonal is positive")
    } else {
        let mut matrix = DMatrix::zeros(n, n);
        for (i, a) in modes.iter().enumerate() {
            for (j, b) in modes.iter().enumerate().skip(i) {
                let entry = multiplication_entry(q, a, b);
                matrix[(i, j)] = entry;
                matrix[(j, i)] = entry;
            }
            matrix[(i, i)] += a.rho_sq as f64;
        }
        LinearOp::dense(matrix, true).expect("assembled operator is symmetric")
    }
}

fn invert_spd(op: &LinearOp, context: &str) -> Result<LinearOp> {
    match op.repr() {
        OpRepr::Diagonal(diag) => {
            let inv = DVector::from_iterator(diag.len(), diag.iter().map(|v| 1.0 / v));
            LinearOp::diagonal(inv, true)
        }
        OpRepr::Dense(matrix) => {
            let chol = Cholesky::new(matrix.clone())
                .ok_or_else(|| Error::NotSpd(format!("{context}: factorization failed")))?;
            let mut inv = chol.solve(&DMatrix::identity(matrix.nrows(), matrix.ncols()));
            let symmetrized = (&inv + inv.transpose()) * 0.5;
            inv = symmetrized;
            LinearOp::dense(inv, true)
        }
    }
}

fn torus_spectrum(modes: &[Mode], d: u32) -> Result<Spectrum> {
    // lambda_j^2 = rho_j^-4 = c_j^2 j^(-4/d) with p = 2
    let c: Vec<f64> = modes
        .iter()
        .enumerate()
        .map(|(j, m)| ((j + 1) as f64).powf(2.0 / d as f64) / m.rho_sq as f64)
        .collect();
    Spectrum::new(2.0, d, c)
}

fn validate_symbol(q: &FourierFunction, name: &str) -> Result<()> {
    let min = q.min_on_grid();
    if min < 0.0 {
        return Err(Error::invalid(format!(
            "{name} takes the negative value {min:.6e} on the verification grid"
        )));
    }
    Ok(())
}

fn check_cutoff(d: u32, k_cut: u32) -> Result<usize> {
    if !(1..=3).contains(&d) {
        return Err(Error::invalid("torus examples support d in {1, 2, 3}"));
    }
    let n = (2 * k_cut as usize + 1).pow(d) - 1;
    if n < 16 {
        return Err(Error::invalid(format!(
            "cutoff K = {k_cut} yields only {n} modes; need at least 16"
        )));
    }
    Ok(n)
}

/// Builds the first example: white observational noise, forward map
/// `(A0 + M_q)^-1`, prior covariance base `C = A0^-2`.
pub fn build_example1(d: u32, k_cut: u32, q: &FourierFunction) -> Result<ProblemInstance> {
    check_cutoff(d, k_cut)?;
    if q.d() != d {
        return Err(Error::invalid("symbol dimension does not match instance"));
    }
    validate_symbol(q, "q")?;
    let modes = enumerate_modes(d, k_cut);
    let a_op = assemble_shifted_laplacian(&modes, q);
    let forward = invert_spd(&a_op, "A0 + M_q")?;
    let spectrum = torus_spectrum(&modes, d)?;
    let exponents = Exponents::new(0.0, 0.5, 1.0)?;
    let mut instance = ProblemInstance::new(
        spectrum,
        forward,
        exponents,
        format!("example1(d={d}, K={k_cut})"),
    )?;
    instance.descriptor = Some(InstanceDescriptor::example1(d, k_cut, q));
    Ok(instance)
}

/// Builds the second example: noise covariance `(A0 + M_r)^-2`, forward map
/// `(A0 + M_q)^-1`, so `T = (A0 + M_r)(A0 + M_q)^-1`.
pub fn build_example2(
    d: u32,
    k_cut: u32,
    q: &FourierFunction,
    r: &FourierFunction,
) -> Result<ProblemInstance> {
    check_cutoff(d, k_cut)?;
    if q.d() != d || r.d() != d {
        return Err(Error::invalid("symbol dimension does not match instance"));
    }
    validate_symbol(q, "q")?;
    validate_symbol(r, "r")?;
    let modes = enumerate_modes(d, k_cut);
    let a_q = assemble_shifted_laplacian(&modes, q);
    let a_r = assemble_shifted_laplacian(&modes, r);
    let a_q_inv = invert_spd(&a_q, "A0 + M_q")?;
    let forward = match (a_r.repr(), a_q_inv.repr()) {
        (OpRepr::Diagonal(r_diag), OpRepr::Diagonal(q_inv)) => {
            LinearOp::diagonal(r_diag.component_mul(q_inv), true)?
        }
        _ => {
            let dense = a_r.to_dense() * a_q_inv.to_dense();
            LinearOp::dense(dense, false)?
        }
    };
    let spectrum = torus_spectrum(&modes, d)?;
    let exponents = Exponents::new(1.0, 0.5, 1.0)?;
    let mut instance = ProblemInstance::new(
        spectrum,
        forward,
        exponents,
        format!("example2(d={d}, K={k_cut})"),
    )?;
    instance.descriptor = Some(InstanceDescriptor::example2(d, k_cut, q, r));
    Ok(instance)
}

// ---------------------------------------------------------------------------
// Instance descriptors (serializable)
// ---------------------------------------------------------------------------

/// Serialized form of a torus instance:
/// `{example: 1|2, d, K, q_fourier: [[k, re, im], ...], r_fourier: [...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceDescriptor {
    pub example: u8,
    pub d: u32,
    #[serde(rename = "K")]
    pub k: u32,
    pub q_fourier: Vec<FourierEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_fourier: Option<Vec<FourierEntry>>,
}

/// One `[k, re, im]` triple; the frequency is a scalar in one dimension and a
/// vector otherwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierEntry(pub FreqKey, pub f64, pub f64);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FreqKey {
    Scalar(i64),
    Vector(Vec<i64>),
}

impl FreqKey {
    fn to_vec(&self, d: u32) -> Result<Vec<i64>> {
        match self {
            FreqKey::Scalar(k) => {
                if d == 1 {
                    Ok(vec![*k])
                } else {
                    Err(Error::invalid(format!(
                        "scalar frequency {k} in a {d}-dimensional descriptor"
                    )))
                }
            }
            FreqKey::Vector(k) => {
                if k.len() == d as usize {
                    Ok(k.clone())
                } else {
                    Err(Error::invalid(format!(
                        "frequency {k:?} does not have dimension {d}"
                    )))
                }
            }
        }
    }

    fn from_vec(k: &[i64]) -> Self {
        if k.len() == 1 {
            FreqKey::Scalar(k[0])
        } else {
            FreqKey::Vector(k.to_vec())
        }
    }
}

fn entries_to_symbol(d: u32, entries: &[FourierEntry]) -> Result<FourierFunction> {
    let converted: Vec<(Vec<i64>, f64, f64)> = entries
        .iter()
        .map(|FourierEntry(k, re, im)| Ok((k.to_vec(d)?, *re, *im)))
        .collect::<Result<_>>()?;
    FourierFunction::from_entries(d, &converted)
}

fn symbol_to_entries(q: &FourierFunction) -> Vec<FourierEntry> {
    q.entries()
        .map(|(k, re, im)| FourierEntry(FreqKey::from_vec(k), re, im))
        .collect()
}

impl InstanceDescriptor {
    pub fn example1(d: u32, k: u32, q: &FourierFunction) -> Self {
        Self {
            example: 1,
            d,
            k,
            q_fourier: symbol_to_entries(q),
            r_fourier: None,
        }
    }

    pub fn example2(d: u32, k: u32, q: &FourierFunction, r: &FourierFunction) -> Self {
        Self {
            example: 2,
            d,
            k,
            q_fourier: symbol_to_entries(q),
            r_fourier: Some(symbol_to_entries(r)),
        }
    }

    pub fn q_symbol(&self) -> Result<FourierFunction> {
        entries_to_symbol(self.d, &self.q_fourier)
    }

    pub fn r_symbol(&self) -> Result<FourierFunction> {
        match &self.r_fourier {
            Some(entries) => entries_to_symbol(self.d, entries),
            None => Ok(FourierFunction::zero(self.d)),
        }
    }

    /// Rebuilds the instance, optionally scaling the frequency cutoff.
    pub fn build_with_cutoff(&self, k: u32) -> Result<ProblemInstance> {
        match self.example {
            1 => build_example1(self.d, k, &self.q_symbol()?),
            2 => build_example2(self.d, k, &self.q_symbol()?, &self.r_symbol()?),
            other => Err(Error::invalid(format!(
                "unknown example tag {other}; expected 1 or 2"
            ))),
        }
    }

    pub fn build(&self) -> Result<ProblemInstance> {
        self.build_with_cutoff(self.k)
    }
}

// ---------------------------------------------------------------------------
// Covariance powers and M(alpha)
// ---------------------------------------------------------------------------

/// The diagonal operator `C^alpha` with entries `lambda_i^(2 alpha)`.
pub fn covariance_power(spec: &Spectrum, alpha: f64) -> LinearOp {
    let diag = DVector::from_iterator(
        spec.len(),
        (1..=spec.len()).map(|i| spec.lambda_sq_pow(i, alpha)),
    );
    LinearOp::diagonal(diag, true).expect("covariance powers are positive")
}

/// Assembles `M(alpha) = T C^alpha T*`, symmetric positive semidefinite.
///
/// Diagonal forward maps stay diagonal; dense maps are assembled as
/// `L L^T` with `L = T C^(alpha/2)` and then symmetrized, and the result is
/// rejected if a numerically negative eigenvalue beyond the roundoff floor
/// shows up.
pub fn make_m(instance: &ProblemInstance, alpha: f64) -> Result<LinearOp> {
    if alpha <= instance.alpha0() {
        return Err(Error::invalid(format!(
            "alpha = {alpha} must exceed alpha0 = {}",
            instance.alpha0()
        )));
    }
    let spec = instance.spectrum();
    match instance.forward().repr() {
        OpRepr::Diagonal(t) => {
            let diag = DVector::from_iterator(
                t.len(),
                t.iter()
                    .enumerate()
                    .map(|(j, tj)| tj * tj * spec.lambda_sq_pow(j + 1, alpha)),
            );
            LinearOp::diagonal(diag, true)
        }
        OpRepr::Dense(t) => {
            let n = t.nrows();
            let mut half = t.clone();
            for j in 0..n {
                let scale = spec.lambda_sq_pow(j + 1, alpha / 2.0);
                half.column_mut(j).scale_mut(scale);
            }
            let mut m = &half * half.transpose();
            let symmetrized = (&m + m.transpose()) * 0.5;
            m = symmetrized;
            let eigen = SymmetricEigen::new(m.clone());
            let max = eigen.eigenvalues.amax();
            let min = eigen.eigenvalues.min();
            if min < -SPD_EIGEN_SLACK * max {
                return Err(Error::NotSpd(format!(
                    "M(alpha) eigenvalue {min:.3e} below -{SPD_EIGEN_SLACK:.0e} * {max:.3e}"
                )));
            }
            LinearOp::dense(m, true)
        }
    }
}

/// Eigenvalues of `M(alpha)` (clipped at zero), dense path via a symmetric
/// eigendecomposition.
pub fn m_eigenvalues(instance: &ProblemInstance, alpha: f64) -> Result<Vec<f64>> {
    let m = make_m(instance, alpha)?;
    Ok(match m.repr() {
        OpRepr::Diagonal(d) => d.iter().copied().collect(),
        OpRepr::Dense(dense) => SymmetricEigen::new(dense.clone())
            .eigenvalues
            .iter()
            .map(|v| v.max(0.0))
            .collect(),
    })
}

// ---------------------------------------------------------------------------
// Power iteration
// ---------------------------------------------------------------------------

/// Largest eigenvalue of a symmetric positive semidefinite operator given via
/// its action, to `POWER_ITERATION_TOL` relative accuracy.
pub fn power_iteration_sym(
    dim: usize,
    apply: impl Fn(&DVector<f64>) -> DVector<f64>,
    seed: u64,
) -> Result<f64> {
    let mut rng = rng::stream(seed, "power-iteration", dim as f64, 0);
    let mut v = DVector::from_iterator(dim, (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)));
    let norm = v.norm();
    if norm == 0.0 {
        return Err(Error::invalid("power iteration start vector is zero"));
    }
    v /= norm;
    let mut eigenvalue = 0.0f64;
    for _ in 0..POWER_ITERATION_MAX {
        let w = apply(&v);
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = norm;
        v = w / norm;
        if (next - eigenvalue).abs() <= POWER_ITERATION_TOL * next {
            return Ok(next);
        }
        eigenvalue = next;
    }
    Err(Error::PowerIterationDiverged {
        tol: POWER_ITERATION_TOL,
        max_iter: POWER_ITERATION_MAX,
    })
}

/// Spectral norm of an arbitrary dense matrix via power iteration on `G^T G`.
fn spectral_norm(matrix: &DMatrix<f64>, seed: u64) -> Result<f64> {
    let sq = power_iteration_sym(
        matrix.ncols(),
        |v| matrix.tr_mul(&(matrix * v)),
        seed,
    )?;
    Ok(sq.sqrt())
}

// ---------------------------------------------------------------------------
// Assumption verification
// ---------------------------------------------------------------------------

/// Norm-equivalence ratios and finite-section operator norms for the
/// structural assumptions, reported per `alpha`, together with the
/// refinement-stability verdict.
#[derive(Debug, Clone, Serialize)]
pub struct AssumptionReport {
    pub label: String,
    pub alpha_grid: Vec<f64>,
    pub r_grid: Vec<f64>,
    pub probes: usize,
    pub band: f64,
    /// statement (2): min/max of `|T v|_{H^r} / |C^((delta-1)/2) v|_{H^r}`
    /// over random probes, per r, at the base and refined truncations.
    pub equivalence_ratios: Vec<EquivalenceRatio>,
    /// statements (3)-(7): operator norms per alpha at both truncations.
    pub section_norms: Vec<SectionNorms>,
    pub consistent: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct EquivalenceRatio {
    pub r: f64,
    pub base_min: f64,
    pub base_max: f64,
    pub refined_min: Option<f64>,
    pub refined_max: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct SectionNorms {
    pub alpha: f64,
    pub base: StatementNorms,
    pub refined: Option<StatementNorms>,
}

/// Operator norms for statements (3)-(7); statement (6) is evaluated on a
/// fixed grid of exponents `x` in `[-1/2, 1]`.
#[derive(Debug, Clone, Serialize)]
pub struct StatementNorms {
    pub stmt3: f64,
    pub stmt4: f64,
    pub stmt5: Vec<(f64, f64)>,
    pub stmt6: Vec<(f64, f64)>,
    pub stmt7: f64,
}

const STMT6_GRID: [f64; 6] = [-0.5, -0.25, 0.25, 0.5, 0.75, 1.0];

fn scale_columns(matrix: &DMatrix<f64>, weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut out = matrix.clone();
    for j in 0..out.ncols() {
        out.column_mut(j).scale_mut(weights(j));
    }
    out
}

fn scale_rows(matrix: &DMatrix<f64>, weights: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let mut out = matrix.clone();
    for i in 0..out.nrows() {
        out.row_mut(i).scale_mut(weights(i));
    }
    out
}

fn statement_norms(instance: &ProblemInstance, alpha: f64, seed: u64) -> Result<StatementNorms> {
    let spec = instance.spectrum();
    let delta = instance.exponents().delta;
    let t = instance.forward().to_dense();
    let order = alpha + delta - 1.0;

    // (3): C^(alpha/2) T^T C^(order/2)
    let g3 = scale_rows(
        &scale_columns(&t.transpose(), |j| spec.lambda_sq_pow(j + 1, order / 2.0)),
        |i| spec.lambda_sq_pow(i + 1, alpha / 2.0),
    );
    let stmt3 = spectral_norm(&g3, seed)?;

    let m = make_m(instance, alpha)?.to_dense();
    // (4): C^-(order) M(alpha)
    let g4 = scale_rows(&m, |i| spec.lambda_sq_pow(i + 1, -order));
    let stmt4 = spectral_norm(&g4, seed.wrapping_add(1))?;

    let eigen = SymmetricEigen::new(m.clone());
    let m_half = {
        let mut vecs = eigen.eigenvectors.clone();
        for (j, ev) in eigen.eigenvalues.iter().enumerate() {
            vecs.column_mut(j).scale_mut(ev.max(0.0).sqrt());
        }
        &vecs * eigen.eigenvectors.transpose()
    };

    // (5): C^-(order/2) M^(1/2) C^(-s/2), s > alpha0
    let mut stmt5 = Vec::new();
    for (idx, &s) in STMT6_GRID.iter().enumerate() {
        // reuse the exponent grid for s, keeping only trace-class values
        if s <= spec.alpha0() {
            continue;
        }
        let g5 = scale_rows(
            &scale_columns(&m_half, |j| spec.lambda_sq_pow(j + 1, -s / 2.0)),
            |i| spec.lambda_sq_pow(i + 1, -order / 2.0),
        );
        stmt5.push((s, spectral_norm(&g5, seed.wrapping_add(10 + idx as u64))?));
    }

    // (6): M^x C^(-x * order) for x in [-1/2, 1]
    let mut stmt6 = Vec::new();
    let min_eig = eigen.eigenvalues.min();
    for (idx, &x) in STMT6_GRID.iter().enumerate() {
        if x < 0.0 && min_eig <= 0.0 {
            continue;
        }
        let m_pow = {
            let mut vecs = eigen.eigenvectors.clone();
            for (j, ev) in eigen.eigenvalues.iter().enumerate() {
                vecs.column_mut(j).scale_mut(ev.max(f64::MIN_POSITIVE).powf(x));
            }
            &vecs * eigen.eigenvectors.transpose()
        };
        let g6 = scale_columns(&m_pow, |j| spec.lambda_sq_pow(j + 1, -x * order));
        stmt6.push((x, spectral_norm(&g6, seed.wrapping_add(20 + idx as u64))?));
    }

    // (7): M C^(-order)
    let g7 = scale_columns(&m, |j| spec.lambda_sq_pow(j + 1, -order));
    let stmt7 = spectral_norm(&g7, seed.wrapping_add(2))?;

    Ok(StatementNorms {
        stmt3,
        stmt4,
        stmt5,
        stmt6,
        stmt7,
    })
}

fn equivalence_ratio(
    instance: &ProblemInstance,
    r: f64,
    probes: usize,
    seed: u64,
) -> (f64, f64) {
    let spec = instance.spectrum();
    let n = instance.dim();
    let delta = instance.exponents().delta;
    let mut min = f64::INFINITY;
    let mut max = 0.0f64;
    for probe in 0..probes {
        let mut g = rng::stream(seed, "assumption-probe", r, probe as u64);
        let coeffs: Vec<f64> = (1..=n)
            .map(|i| {
                spec.lambda_sq_pow(i, (r - (delta - 1.0)) / 2.0)
                    * g.sample::<f64, _>(StandardNormal)
            })
            .collect();
        let v = SpectralVector::new(coeffs).expect("probe coefficients are finite");
        let tv = instance.apply_forward(&v);
        let scaled = SpectralVector::new(
            v.coeffs()
                .iter()
                .enumerate()
                .map(|(j, x)| spec.lambda_sq_pow(j + 1, (delta - 1.0) / 2.0) * x)
                .collect(),
        )
        .expect("scaled probe is finite");
        let num = hilbert_scale_norm(&tv, r, spec);
        let den = hilbert_scale_norm(&scaled, r, spec);
        if den > 0.0 {
            let ratio = num / den;
            min = min.min(ratio);
            max = max.max(ratio);
        }
    }
    (min, max)
}

/// Computes the statement-(2) ratios over seeded probes and the finite-section
/// norms for statements (3)-(7), at the instance truncation and (when a
/// refined instance is supplied) at the doubled truncation. The verdict is
/// `consistent` when every ratio lies in `[1/band, band]` at both truncations
/// and no section norm grows or shrinks by more than the band under
/// refinement.
pub fn verify_assumptions(
    instance: &ProblemInstance,
    refined: Option<&ProblemInstance>,
    alpha_grid: &[f64],
    r_grid: &[f64],
    probes: usize,
    seed: u64,
) -> Result<AssumptionReport> {
    if alpha_grid.is_empty() {
        return Err(Error::invalid("alpha grid must be non-empty"));
    }
    for &alpha in alpha_grid {
        if alpha <= instance.alpha0() {
            return Err(Error::invalid(format!(
                "alpha = {alpha} must exceed alpha0 = {}",
                instance.alpha0()
            )));
        }
    }
    let band = ASSUMPTION_BAND;
    let mut equivalence_ratios = Vec::new();
    for &r in r_grid {
        let (base_min, base_max) = equivalence_ratio(instance, r, probes, seed);
        let (refined_min, refined_max) = match refined {
            Some(ref2) => {
                let (lo, hi) = equivalence_ratio(ref2, r, probes, seed);
                (Some(lo), Some(hi))
            }
            None => (None, None),
        };
        equivalence_ratios.push(EquivalenceRatio {
            r,
            base_min,
            base_max,
            refined_min,
            refined_max,
        });
    }

    let mut section_norms = Vec::new();
    for (idx, &alpha) in alpha_grid.iter().enumerate() {
        let base = statement_norms(instance, alpha, seed.wrapping_add(1000 * idx as u64))?;
        let refined_norms = match refined {
            Some(ref2) => Some(statement_norms(
                ref2,
                alpha,
                seed.wrapping_add(1000 * idx as u64 + 500),
            )?),
            None => None,
        };
        section_norms.push(SectionNorms {
            alpha,
            base,
            refined: refined_norms,
        });
    }

    let in_band = |x: f64| x >= 1.0 / band && x <= band;
    let mut consistent = equivalence_ratios.iter().all(|e| {
        in_band(e.base_min)
            && in_band(e.base_max)
            && e.refined_min.is_none_or(in_band)
            && e.refined_max.is_none_or(in_band)
    });
    for entry in &section_norms {
        if let Some(refined_norms) = &entry.refined {
            let pairs = [
                (entry.base.stmt3, refined_norms.stmt3),
                (entry.base.stmt4, refined_norms.stmt4),
                (entry.base.stmt7, refined_norms.stmt7),
            ];
            for (base, refined_value) in pairs
                .into_iter()
                .chain(
                    entry
                        .base
                        .stmt5
                        .iter()
                        .zip(&refined_norms.stmt5)
                        .map(|((_, b), (_, r))| (*b, *r)),
                )
                .chain(
                    entry
                        .base
                        .stmt6
                        .iter()
                        .zip(&refined_norms.stmt6)
                        .map(|((_, b), (_, r))| (*b, *r)),
                )
            {
                if base > 0.0 && !in_band(refined_value / base) {
                    consistent = false;
                }
            }
        }
    }

    Ok(AssumptionReport {
        label: instance.label().to_string(),
        alpha_grid: alpha_grid.to_vec(),
        r_grid: r_grid.to_vec(),
        probes,
        band,
        equivalence_ratios,
        section_norms,
        consistent,
    })
}

/// Frobenius norm of `C^(-(alpha+delta-1)/2) M(alpha) C^(-(alpha+delta-1)/2) - I`,
/// the defect measuring how far the transformed prior is from the artificial
/// diagonal one.
pub fn hs_defect(instance: &ProblemInstance, alpha: f64) -> Result<f64> {
    let m = make_m(instance, alpha)?;
    let spec = instance.spectrum();
    let order = alpha + instance.exponents().delta - 1.0;
    match m.repr() {
        OpRepr::Diagonal(diag) => {
            let sum: f64 = diag
                .iter()
                .enumerate()
                .map(|(j, mu)| {
                    let w = spec.lambda_sq_pow(j + 1, -order);
                    let jj = w * mu - 1.0;
                    jj * jj
                })
                .sum();
            Ok(sum.sqrt())
        }
        OpRepr::Dense(dense) => {
            let n = dense.nrows();
            let mut sum = 0.0;
            for i in 0..n {
                let wi = spec.lambda_sq_pow(i + 1, -order / 2.0);
                for j in 0..n {
                    let wj = spec.lambda_sq_pow(j + 1, -order / 2.0);
                    let mut entry = wi * dense[(i, j)] * wj;
                    if i == j {
                        entry -= 1.0;
                    }
                    sum += entry * entry;
                }
            }
            Ok(sum.sqrt())
        }
    }
}
