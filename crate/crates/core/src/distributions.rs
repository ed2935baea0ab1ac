//! Exponential-family building blocks: normal, gamma, Wishart, Dirichlet and
//! categorical distributions with their moments, entropies and samplers.
//!
//! Gamma distributions use the shape/rate parametrization, `p(x) ∝ x^(a-1) exp(-b x)`.
//! Wishart distributions use the matching convention
//! `p(X) ∝ det(X)^((ν-p-1)/2) exp(-tr(W X) / 2)`, so that `E[X] = ν W⁻¹` and a
//! 1×1 Wishart(ν, w) is Gamma(ν/2, w/2).

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};
use crate::linalg;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Seeded generator for stream `stream` of `seed`.
///
/// ChaCha streams are independent, so restarts and grid cells can each own a
/// stream and run in any order (or concurrently) with identical results.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Log of the multivariate gamma function Γ_p(a).
pub fn ln_multigamma(p: usize, a: f64) -> f64 {
    let pf = p as f64;
    pf * (pf - 1.0) / 4.0 * PI.ln() + (1..=p).map(|j| ln_gamma(a + (1.0 - j as f64) / 2.0)).sum::<f64>()
}

fn check_positive(name: &str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("{name} must be positive and finite, got {v}")))
    }
}

/// Something that can be drawn from with an explicit generator.
pub trait Sampler {
    type Sample;

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Self::Sample;
}

/// Draw `count` samples from `dist` using a generator seeded with `seed`.
pub fn sample<D: Sampler>(dist: &D, seed: u64, count: usize) -> Result<Vec<D::Sample>> {
    if count == 0 {
        return Err(Error::InvalidParameter("sample count must be at least 1".into()));
    }
    let mut rng = seeded_rng(seed, 0);
    Ok((0..count).map(|_| dist.draw(&mut rng)).collect())
}

// ---------------------------------------------------------------------------
// Univariate normal
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalParams {
    mean: f64,
    precision: f64,
}

impl NormalParams {
    pub fn new(mean: f64, precision: f64) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidParameter(format!("normal mean must be finite, got {mean}")));
        }
        check_positive("normal precision", precision)?;
        Ok(Self { mean, precision })
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn precision(&self) -> f64 {
        self.precision
    }

    pub fn variance(&self) -> f64 {
        1.0 / self.precision
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        0.5 * (self.precision.ln() - LN_2PI) - 0.5 * self.precision * (x - self.mean).powi(2)
    }
}

impl Sampler for NormalParams {
    type Sample = f64;

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = rng.sample(StandardNormal);
        self.mean + z / self.precision.sqrt()
    }
}

// ---------------------------------------------------------------------------
// Gamma
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    shape: f64,
    rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaMoments {
    pub mean: f64,
    pub variance: f64,
    pub expected_log: f64,
}

impl GammaParams {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        check_positive("gamma shape", shape)?;
        check_positive("gamma rate", rate)?;
        Ok(Self { shape, rate })
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn mean(&self) -> f64 {
        self.shape / self.rate
    }

    pub fn variance(&self) -> f64 {
        self.shape / (self.rate * self.rate)
    }

    /// `E[log x] = ψ(a) - log b`.
    pub fn expected_log(&self) -> f64 {
        digamma(self.shape) - self.rate.ln()
    }

    pub fn moments(&self) -> GammaMoments {
        GammaMoments { mean: self.mean(), variance: self.variance(), expected_log: self.expected_log() }
    }

    pub fn entropy(&self) -> f64 {
        let a = self.shape;
        a - self.rate.ln() + ln_gamma(a) + (1.0 - a) * digamma(a)
    }

    /// `E_q[log p(x)]` where `q` has log-moments `(mean, expected_log)`.
    pub fn expected_ln_pdf(&self, mean: f64, expected_log: f64) -> f64 {
        self.shape * self.rate.ln() - ln_gamma(self.shape) + (self.shape - 1.0) * expected_log - self.rate * mean
    }

    pub fn ln_pdf(&self, x: f64) -> Result<f64> {
        if !(x.is_finite() && x > 0.0) {
            return Err(Error::InvalidParameter(format!("gamma density evaluated off support at {x}")));
        }
        Ok(self.expected_ln_pdf(x, x.ln()))
    }
}

impl Sampler for GammaParams {
    type Sample = f64;

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rand_distr::Gamma::new(self.shape, 1.0 / self.rate).expect("validated gamma parameters").sample(rng)
    }
}

/// Gamma(shape, 1) variate returned on the log scale, stable for tiny shapes.
fn ln_standard_gamma<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        let g: f64 = rand_distr::Gamma::new(shape, 1.0).expect("positive shape").sample(rng);
        g.ln()
    } else {
        // G(a) = G(a + 1) U^(1/a)
        let g: f64 = rand_distr::Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
        g.ln() + u.ln() / shape
    }
}

// ---------------------------------------------------------------------------
// Multivariate normal
// ---------------------------------------------------------------------------

/// Multivariate normal in mean/precision form. The covariance and the log
/// determinant of the precision are cached at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MvNormalRaw", into = "MvNormalRaw")]
pub struct MvNormalParams {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
    covariance: DMatrix<f64>,
    log_det_precision: f64,
}

#[derive(Serialize, Deserialize)]
struct MvNormalRaw {
    mean: DVector<f64>,
    precision: DMatrix<f64>,
}

impl TryFrom<MvNormalRaw> for MvNormalParams {
    type Error = Error;

    fn try_from(raw: MvNormalRaw) -> Result<Self> {
        MvNormalParams::new(raw.mean, raw.precision)
    }
}

impl From<MvNormalParams> for MvNormalRaw {
    fn from(p: MvNormalParams) -> Self {
        MvNormalRaw { mean: p.mean, precision: p.precision }
    }
}

impl MvNormalParams {
    pub fn new(mean: DVector<f64>, precision: DMatrix<f64>) -> Result<Self> {
        let d = mean.len();
        if precision.nrows() != d || precision.ncols() != d {
            return Err(Error::Dimension(format!(
                "mean has length {d} but precision is {}x{}",
                precision.nrows(),
                precision.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("normal mean".into()));
        }
        let chol = linalg::cholesky(&precision, "normal precision")?;
        let mut covariance = chol.inverse();
        linalg::symmetrize(&mut covariance);
        let log_det_precision = linalg::log_det(&chol);
        Ok(Self { mean, precision, covariance, log_det_precision })
    }

    /// Build from the natural parameters: precision `P` and linear term `h`,
    /// giving mean `P⁻¹ h`.
    pub fn from_natural(precision: DMatrix<f64>, linear: &DVector<f64>, what: &str) -> Result<Self> {
        let chol = linalg::cholesky(&precision, what)?;
        let mean = chol.solve(linear);
        let mut covariance = chol.inverse();
        linalg::symmetrize(&mut covariance);
        let log_det_precision = linalg::log_det(&chol);
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("{what}: mean")));
        }
        Ok(Self { mean, precision, covariance, log_det_precision })
    }

    /// Standard normal in `dim` dimensions.
    pub fn standard(dim: usize) -> Self {
        Self {
            mean: DVector::zeros(dim),
            precision: DMatrix::identity(dim, dim),
            covariance: DMatrix::identity(dim, dim),
            log_det_precision: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn log_det_precision(&self) -> f64 {
        self.log_det_precision
    }

    /// `E[v vᵀ] = Σ + m mᵀ`.
    pub fn second_moment(&self) -> DMatrix<f64> {
        let mut out = self.covariance.clone();
        linalg::add_outer(&mut out, &self.mean, 1.0);
        out
    }

    pub fn entropy(&self) -> f64 {
        let d = self.dim() as f64;
        0.5 * d * (1.0 + LN_2PI) - 0.5 * self.log_det_precision
    }

    pub fn ln_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::Dimension(format!("point has length {}, expected {}", x.len(), self.dim())));
        }
        let diff = x - &self.mean;
        let d = self.dim() as f64;
        Ok(0.5 * (self.log_det_precision - d * LN_2PI) - 0.5 * linalg::bilinear(&diff, &self.precision, &diff))
    }
}

impl Sampler for MvNormalParams {
    type Sample = DVector<f64>;

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        // x = m + L⁻ᵀ z with P = L Lᵀ
        let chol = linalg::cholesky(&self.precision, "normal precision").expect("validated precision");
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        let offset = chol.l().transpose().solve_upper_triangular(&z).expect("triangular factor is invertible");
        &self.mean + offset
    }
}

// ---------------------------------------------------------------------------
// Wishart
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WishartRaw", into = "WishartRaw")]
pub struct WishartParams {
    shape: f64,
    scale: DMatrix<f64>,
    scale_inverse: DMatrix<f64>,
    log_det_scale: f64,
}

#[derive(Serialize, Deserialize)]
struct WishartRaw {
    shape: f64,
    scale: DMatrix<f64>,
}

impl TryFrom<WishartRaw> for WishartParams {
    type Error = Error;

    fn try_from(raw: WishartRaw) -> Result<Self> {
        WishartParams::new(raw.shape, raw.scale)
    }
}

impl From<WishartParams> for WishartRaw {
    fn from(p: WishartParams) -> Self {
        WishartRaw { shape: p.shape, scale: p.scale }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WishartMoments {
    pub mean: DMatrix<f64>,
    pub expected_log_det: f64,
}

impl WishartParams {
    pub fn new(shape: f64, scale: DMatrix<f64>) -> Result<Self> {
        let p = scale.nrows();
        if scale.ncols() != p || p == 0 {
            return Err(Error::Dimension(format!("Wishart scale must be square, got {}x{}", p, scale.ncols())));
        }
        if !(shape.is_finite() && shape > p as f64 - 1.0) {
            return Err(Error::InvalidParameter(format!("Wishart shape {shape} must exceed p - 1 = {}", p - 1)));
        }
        let chol = linalg::cholesky(&scale, "Wishart scale")?;
        let mut scale_inverse = chol.inverse();
        linalg::symmetrize(&mut scale_inverse);
        let log_det_scale = linalg::log_det(&chol);
        Ok(Self { shape, scale, scale_inverse, log_det_scale })
    }

    pub fn dim(&self) -> usize {
        self.scale.nrows()
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn scale(&self) -> &DMatrix<f64> {
        &self.scale
    }

    pub fn log_det_scale(&self) -> f64 {
        self.log_det_scale
    }

    /// `E[X] = ν W⁻¹`.
    pub fn mean(&self) -> DMatrix<f64> {
        &self.scale_inverse * self.shape
    }

    /// `var(X_ij) = ν (V_ij² + V_ii V_jj)` with `V = W⁻¹`.
    pub fn variance(&self, i: usize, j: usize) -> f64 {
        let v = &self.scale_inverse;
        self.shape * (v[(i, j)].powi(2) + v[(i, i)] * v[(j, j)])
    }

    /// `E[log det X] = Σ_d ψ((ν + 1 - d)/2) + p log 2 - log det W`.
    pub fn expected_log_det(&self) -> f64 {
        let p = self.dim();
        (1..=p).map(|d| digamma((self.shape + 1.0 - d as f64) / 2.0)).sum::<f64>() + p as f64 * LN_2
            - self.log_det_scale
    }

    pub fn moments(&self) -> WishartMoments {
        WishartMoments { mean: self.mean(), expected_log_det: self.expected_log_det() }
    }

    fn log_normalizer(&self) -> f64 {
        let p = self.dim() as f64;
        0.5 * self.shape * self.log_det_scale - 0.5 * self.shape * p * LN_2 - ln_multigamma(self.dim(), self.shape / 2.0)
    }

    /// `E_q[log p(X)]` given `E_q[X]` and `E_q[log det X]`.
    pub fn expected_ln_pdf(&self, mean: &DMatrix<f64>, expected_log_det: f64) -> f64 {
        let p = self.dim() as f64;
        self.log_normalizer() + 0.5 * (self.shape - p - 1.0) * expected_log_det
            - 0.5 * linalg::trace_product(&self.scale, mean)
    }

    pub fn entropy(&self) -> f64 {
        let p = self.dim() as f64;
        -self.log_normalizer() - 0.5 * (self.shape - p - 1.0) * self.expected_log_det() + 0.5 * self.shape * p
    }

    pub fn ln_pdf(&self, x: &DMatrix<f64>) -> Result<f64> {
        if x.nrows() != self.dim() || x.ncols() != self.dim() {
            return Err(Error::Dimension("Wishart argument has the wrong size".into()));
        }
        let chol = linalg::cholesky(x, "Wishart argument (off support)")?;
        Ok(self.expected_ln_pdf(x, linalg::log_det(&chol)))
    }
}

impl Sampler for WishartParams {
    type Sample = DMatrix<f64>;

    /// Bartlett decomposition: `X = L B Bᵀ Lᵀ` with `W⁻¹ = L Lᵀ`.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> DMatrix<f64> {
        let p = self.dim();
        let l = linalg::cholesky(&self.scale_inverse, "Wishart scale inverse").expect("validated scale").l();
        let mut b = DMatrix::zeros(p, p);
        for i in 0..p {
            let dof = self.shape - i as f64;
            let chi2: f64 = rand_distr::ChiSquared::new(dof).expect("dof > 0").sample(rng);
            b[(i, i)] = chi2.sqrt();
            for j in 0..i {
                b[(i, j)] = rng.sample::<f64, _>(StandardNormal);
            }
        }
        let lb = l * b;
        let mut x = &lb * lb.transpose();
        linalg::symmetrize(&mut x);
        x
    }
}

// ---------------------------------------------------------------------------
// Dirichlet
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirichletParams {
    concentration: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletMoments {
    pub mean: Vec<f64>,
    pub expected_log: Vec<f64>,
}

impl DirichletParams {
    pub fn new(concentration: Vec<f64>) -> Result<Self> {
        if concentration.is_empty() {
            return Err(Error::InvalidParameter("Dirichlet needs at least one component".into()));
        }
        for &a in &concentration {
            check_positive("Dirichlet concentration", a)?;
        }
        Ok(Self { concentration })
    }

    pub fn symmetric(k: usize, gamma: f64) -> Result<Self> {
        Self::new(vec![gamma; k])
    }

    pub fn concentration(&self) -> &[f64] {
        &self.concentration
    }

    pub fn len(&self) -> usize {
        self.concentration.len()
    }

    pub fn is_empty(&self) -> bool {
        self.concentration.is_empty()
    }

    fn total(&self) -> f64 {
        self.concentration.iter().sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let total = self.total();
        self.concentration.iter().map(|a| a / total).collect()
    }

    pub fn variance(&self) -> Vec<f64> {
        let total = self.total();
        self.concentration.iter().map(|a| a * (total - a) / (total * total * (total + 1.0))).collect()
    }

    /// `E[log x_k] = ψ(α_k) - ψ(Σα)`.
    pub fn expected_log(&self) -> Vec<f64> {
        let psi_total = digamma(self.total());
        self.concentration.iter().map(|&a| digamma(a) - psi_total).collect()
    }

    pub fn moments(&self) -> DirichletMoments {
        DirichletMoments { mean: self.mean(), expected_log: self.expected_log() }
    }

    fn ln_beta(&self) -> f64 {
        self.concentration.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(self.total())
    }

    pub fn expected_ln_pdf(&self, expected_log: &[f64]) -> f64 {
        -self.ln_beta() + self.concentration.iter().zip(expected_log).map(|(a, l)| (a - 1.0) * l).sum::<f64>()
    }

    pub fn entropy(&self) -> f64 {
        let total = self.total();
        let k = self.len() as f64;
        self.ln_beta() + (total - k) * digamma(total)
            - self.concentration.iter().map(|&a| (a - 1.0) * digamma(a)).sum::<f64>()
    }

    pub fn ln_pdf(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.len() {
            return Err(Error::Dimension("Dirichlet argument has the wrong length".into()));
        }
        let sum: f64 = x.iter().sum();
        if x.iter().any(|&v| !(v > 0.0 && v.is_finite())) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter("Dirichlet density evaluated off the simplex".into()));
        }
        let logs: Vec<f64> = x.iter().map(|v| v.ln()).collect();
        Ok(self.expected_ln_pdf(&logs))
    }
}

impl Sampler for DirichletParams {
    type Sample = Vec<f64>;

    /// Normalized gamma variates, formed on the log scale so tiny
    /// concentrations do not underflow to an all-zero draw.
    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let logs: Vec<f64> = self.concentration.iter().map(|&a| ln_standard_gamma(a, rng)).collect();
        softmax(&logs)
    }
}

/// Normalized exponentials via log-sum-exp.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= total);
    out
}

// ---------------------------------------------------------------------------
// Categorical
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalParams {
    probs: Vec<f64>,
}

impl CategoricalParams {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() || probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidParameter("categorical probabilities must be non-negative".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidParameter(format!("categorical probabilities sum to {total}")));
        }
        Ok(Self { probs })
    }

    pub fn uniform(k: usize) -> Self {
        Self { probs: vec![1.0 / k as f64; k] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// `-Σ p log p` with `0 log 0 = 0`.
    pub fn entropy(&self) -> f64 {
        categorical_entropy(&self.probs)
    }
}

pub fn categorical_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

impl Sampler for CategoricalParams {
    type Sample = usize;

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (k, p) in self.probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        self.probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    }
}
