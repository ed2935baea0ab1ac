#![allow(dead_code)]

pub mod blackbox;
pub mod moments;
pub mod perturb;

use edgeless::distributions::{seeded_rng, DirichletParams, GammaParams, MvNormalParams, WishartParams};
use edgeless::inference::{assemble_state, kmeans_init, PpcaSolution};
use edgeless::model::{Dataset, Hyperparameters, PosteriorState};
use edgeless::synthesis::{generate, mask_random, GeneratorConfig};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Well-conditioned random SPD matrix with eigenvalues roughly in `[lo, hi]`.
pub fn random_spd(p: usize, lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let g = DMatrix::from_fn(p, p, |_, _| normal(rng));
    let q = g.qr().q();
    let d = DMatrix::from_diagonal(&DVector::from_fn(p, |_, _| lo + (hi - lo) * rng.random::<f64>()));
    let m = &q * d * q.transpose();
    (&m + m.transpose()) * 0.5
}

pub fn random_mvn(p: usize, rng: &mut ChaCha8Rng) -> MvNormalParams {
    let mean = DVector::from_fn(p, |_, _| normal(rng));
    MvNormalParams::new(mean, random_spd(p, 0.5, 5.0, rng)).unwrap()
}

pub fn random_gamma(rng: &mut ChaCha8Rng) -> GammaParams {
    GammaParams::new(0.5 + 5.0 * rng.random::<f64>(), 0.5 + 5.0 * rng.random::<f64>()).unwrap()
}

/// Small random instance: data from the generator (optionally masked) and a
/// posterior whose every factor is drawn at random, away from any optimum.
pub struct Instance {
    pub data: Dataset,
    pub hyper: Hyperparameters,
    pub state: PosteriorState,
}

pub fn random_instance(seed: u64, n: usize, t: usize, p: usize, k: usize, mask: f64) -> Instance {
    let mut rng = seeded_rng(seed, 99);
    let config = GeneratorConfig { n, t, p, k: k.min(n), seed, ..GeneratorConfig::default() };
    let mut data = generate(&config).unwrap().dataset;
    if mask > 0.0 {
        data = mask_random(&data, mask, seed).unwrap();
    }
    let hyper = Hyperparameters::new(p, k, 0.5 + 20.0 * rng.random::<f64>());
    let mut responsibilities = DMatrix::from_fn(n, k, |_, _| rng.random::<f64>() + 0.05);
    for mut row in responsibilities.row_iter_mut() {
        let s = row.sum();
        row /= s;
    }
    let state = PosteriorState {
        latent: (0..t).map(|_| random_mvn(p, &mut rng)).collect(),
        noise: (0..n).map(|_| random_gamma(&mut rng)).collect(),
        loadings: (0..n).map(|_| random_mvn(p, &mut rng)).collect(),
        centers: (0..k).map(|_| random_mvn(p, &mut rng)).collect(),
        precisions: (0..k)
            .map(|_| WishartParams::new(p as f64 + 5.0 * rng.random::<f64>(), random_spd(p, 0.2, 2.0, &mut rng)).unwrap())
            .collect(),
        responsibilities,
        sizes: DirichletParams::new((0..k).map(|_| 0.5 + 5.0 * rng.random::<f64>()).collect()).unwrap(),
        ard: (0..k).map(|_| (0..p).map(|_| random_gamma(&mut rng)).collect()).collect(),
    };
    state.check().unwrap();
    Instance { data, hyper, state }
}

/// The deterministic starting point `fit` uses for restart 0.
pub fn initial_state(data: &Dataset, hyper: &Hyperparameters, seed: u64) -> PosteriorState {
    let mut rng = seeded_rng(seed, 0);
    let init = PpcaSolution::fit(data, hyper.p).unwrap().initialize(data, hyper, &mut rng).unwrap();
    let labels = kmeans_init(&init.loadings, hyper.k_max, 10, &mut rng).unwrap();
    assemble_state(init, &labels, hyper).unwrap()
}

/// Whether two labelings describe the same set partition.
pub fn same_partition(a: &[usize], b: &[usize]) -> bool {
    use std::collections::HashMap;
    if a.len() != b.len() {
        return false;
    }
    let mut fwd = HashMap::new();
    let mut back = HashMap::new();
    a.iter().zip(b).all(|(x, y)| *fwd.entry(x).or_insert(y) == y && *back.entry(y).or_insert(x) == x)
}

// ---------------------------------------------------------------------------
// one-observation toy with an exact evidence
// ---------------------------------------------------------------------------

/// One series, one time step, `p = K = 1`, unit prior constants.
pub struct Toy {
    pub y: f64,
    pub data: Dataset,
    pub hyper: Hyperparameters,
}

impl Toy {
    pub fn new(y: f64) -> Self {
        let data = Dataset::from_matrix(DMatrix::from_element(1, 1, y)).unwrap();
        let mut hyper = Hyperparameters::new(1, 1, 1.0);
        hyper.ard_a = 1.0;
        hyper.ard_b = 1.0;
        hyper.noise_alpha = 1.0;
        hyper.noise_beta = 1.0;
        Self { y, data, hyper }
    }

    /// `log p(y)` by a 4-D trapezoid rule. `A` and `μ` integrate out in
    /// closed form, `y | x, τ, Λ, λ ~ N(0, x² (1/Λ + 1/λ) + 1/τ)`, and the
    /// precisions are integrated on the log scale; with `p = 1`, `W = 1` the
    /// Wishart prior is Gamma(½, ½).
    pub fn log_evidence(&self) -> f64 {
        let y = self.y;
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        let ln_sqrt_pi = 0.5 * std::f64::consts::PI.ln();
        let xs = trapezoid(-9.0, 9.0, 0.25);
        let logs = trapezoid(-25.0, 5.0, 0.3);
        let mut terms = Vec::with_capacity(xs.len() * logs.len().pow(3));
        for &(x, wx) in &xs {
            let lx = -0.5 * (ln_2pi + x * x) + wx.ln();
            for &(u, wu) in &logs {
                let lu = ln_gamma_of_log(u, 1.0, 1.0, 0.0) + wu.ln();
                for &(v, wv) in &logs {
                    let lv = ln_gamma_of_log(v, 0.5, 0.5, ln_sqrt_pi) + wv.ln();
                    for &(s, ws) in &logs {
                        let ls = ln_gamma_of_log(s, 1.0, 1.0, 0.0) + ws.ln();
                        let var = x * x * ((-v).exp() + (-s).exp()) + (-u).exp();
                        let ly = -0.5 * (ln_2pi + var.ln() + y * y / var);
                        terms.push(lx + lu + lv + ls + ly);
                    }
                }
            }
        }
        log_sum_exp(&terms)
    }

    /// Converged coordinate ascent from a neutral start.
    pub fn fit(&self) -> (f64, PosteriorState) {
        let unit = MvNormalParams::standard(1);
        let mut state = PosteriorState {
            latent: vec![unit.clone()],
            noise: vec![GammaParams::new(1.0, 1.0).unwrap()],
            loadings: vec![MvNormalParams::new(DVector::from_element(1, 0.5), DMatrix::identity(1, 1)).unwrap()],
            centers: vec![unit],
            precisions: vec![self.hyper.wishart_prior().unwrap()],
            responsibilities: DMatrix::from_element(1, 1, 1.0),
            sizes: DirichletParams::new(vec![1.0 + self.hyper.dirichlet_gamma]).unwrap(),
            ard: vec![vec![GammaParams::new(1.0, 1.0).unwrap()]],
        };
        let config = edgeless::FitConfig { max_sweeps: 100_000, elbo_rel_tol: 1e-15, ..Default::default() };
        let trace = edgeless::inference::run_cavi(&mut state, &self.data, &self.hyper, &config).unwrap();
        (*trace.elbo.last().unwrap(), state)
    }
}

fn trapezoid(lo: f64, hi: f64, step: f64) -> Vec<(f64, f64)> {
    let m = ((hi - lo) / step).round() as usize;
    (0..=m).map(|j| (lo + j as f64 * step, if j == 0 || j == m { 0.5 * step } else { step })).collect()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// `log Gamma(e^u; a, b) + u`: the log density of `u = log x`.
fn ln_gamma_of_log(u: f64, a: f64, b: f64, ln_gamma_a: f64) -> f64 {
    a * b.ln() - ln_gamma_a + a * u - b * u.exp()
}
