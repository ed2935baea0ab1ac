//! Random finite perturbations of single posterior factors.

use edgeless::distributions::{seeded_rng, DirichletParams, GammaParams, MvNormalParams, WishartParams};
use edgeless::inference::{apply_update, compute_elbo, Factor};
use edgeless::model::PosteriorState;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{normal, random_instance};

fn jitter(v: f64, eps: f64, rng: &mut ChaCha8Rng) -> f64 {
    v * (1.0 + eps * normal(rng))
}

/// `L (I + eps S) Lᵀ` for a random symmetric `S`: SPD for small `eps`.
fn jitter_spd(m: &DMatrix<f64>, eps: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let p = m.nrows();
    let l = m.clone().cholesky().unwrap().l();
    let g = DMatrix::from_fn(p, p, |_, _| normal(rng));
    let s = (&g + g.transpose()) * (0.5 * eps) + DMatrix::identity(p, p);
    let out = &l * s * l.transpose();
    (&out + out.transpose()) * 0.5
}

fn jitter_mvn(q: &MvNormalParams, eps: f64, rng: &mut ChaCha8Rng) -> MvNormalParams {
    let sd = q.covariance().diagonal().map(f64::sqrt);
    let mean = DVector::from_fn(q.dim(), |j, _| q.mean()[j] + eps * q.mean()[j].abs().max(sd[j]) * normal(rng));
    MvNormalParams::new(mean, jitter_spd(q.precision(), eps, rng)).unwrap()
}

fn jitter_gamma(g: &GammaParams, eps: f64, rng: &mut ChaCha8Rng) -> GammaParams {
    GammaParams::new(jitter(g.shape(), eps, rng), jitter(g.rate(), eps, rng)).unwrap()
}

pub fn perturb(factor: Factor, s: &PosteriorState, eps: f64, rng: &mut ChaCha8Rng) -> PosteriorState {
    let mut out = s.clone();
    match factor {
        Factor::Latent => out.latent = s.latent.iter().map(|q| jitter_mvn(q, eps, rng)).collect(),
        Factor::Noise => out.noise = s.noise.iter().map(|g| jitter_gamma(g, eps, rng)).collect(),
        Factor::Loadings => out.loadings = s.loadings.iter().map(|q| jitter_mvn(q, eps, rng)).collect(),
        Factor::Centers => out.centers = s.centers.iter().map(|q| jitter_mvn(q, eps, rng)).collect(),
        Factor::Precisions => {
            out.precisions = s
                .precisions
                .iter()
                .map(|w| WishartParams::new(jitter(w.shape(), eps, rng), jitter_spd(w.scale(), eps, rng)).unwrap())
                .collect()
        }
        Factor::Assignments => {
            for mut row in out.responsibilities.row_iter_mut() {
                for r in row.iter_mut() {
                    *r *= (eps * normal(rng)).exp();
                }
                let total = row.sum();
                row /= total;
            }
        }
        Factor::Sizes => {
            out.sizes = DirichletParams::new(s.sizes.concentration().iter().map(|&a| jitter(a, eps, rng)).collect()).unwrap()
        }
        Factor::Ard => out.ard = s.ard.iter().map(|row| row.iter().map(|g| jitter_gamma(g, eps, rng)).collect()).collect(),
    }
    out
}

/// Largest relative bound gain of any perturbation of size `eps` applied
/// right after each update, on one random small instance.
pub fn worst_gain_after_updates(seed: u64, perturbations: usize, eps: f64) -> (f64, Factor) {
    let mut rng = seeded_rng(seed, 7);
    let (n, t, p, k) = (rng.random_range(3..8), rng.random_range(4..12), rng.random_range(1..4), rng.random_range(1..5));
    let mask = if seed % 2 == 0 { 0.15 } else { 0.0 };
    let inst = random_instance(seed, n, t.max(p), p, k, mask);
    let mut state = inst.state;
    let mut worst = (f64::NEG_INFINITY, Factor::Latent);
    for factor in Factor::DEFAULT_ORDER {
        apply_update(factor, &mut state, &inst.data, &inst.hyper).unwrap();
        let best = compute_elbo(&state, &inst.data, &inst.hyper).unwrap();
        for _ in 0..perturbations {
            let moved = perturb(factor, &state, eps, &mut rng);
            let value = compute_elbo(&moved, &inst.data, &inst.hyper).unwrap();
            let gain = (value - best) / best.abs();
            if gain > worst.0 {
                worst = (gain, factor);
            }
        }
    }
    worst
}
