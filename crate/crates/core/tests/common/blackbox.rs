//! A generic quasi-Newton optimizer over the same `p = 1` variational family
//! that coordinate ascent searches.

use argmin::core::{CostFunction, Executor, Gradient};
use argmin::solver::linesearch::MoreThuenteLineSearch;
use argmin::solver::quasinewton::LBFGS;
use edgeless::distributions::{DirichletParams, GammaParams, MvNormalParams, WishartParams};
use edgeless::inference::{apply_update, compute_elbo, run_cavi, Factor, FitConfig};
use edgeless::model::{Dataset, Hyperparameters, PosteriorState};
use edgeless::synthesis::{generate, GeneratorConfig};
use nalgebra::{DMatrix, DVector};

use super::initial_state;

/// Unconstrained coordinates of a `p = 1` posterior: means as they are,
/// positive parameters on the log scale, responsibilities as logits against
/// the last community.
struct Family {
    n: usize,
    t: usize,
    k: usize,
}

impl Family {
    fn encode(&self, s: &PosteriorState) -> Vec<f64> {
        let mut v = Vec::new();
        for q in s.latent.iter().chain(&s.loadings).chain(&s.centers) {
            v.extend([q.mean()[0], q.precision()[(0, 0)].ln()]);
        }
        for g in s.noise.iter().chain(s.ard.iter().flatten()) {
            v.extend([g.shape().ln(), g.rate().ln()]);
        }
        for w in &s.precisions {
            v.extend([w.shape().ln(), w.scale()[(0, 0)].ln()]);
        }
        for row in s.responsibilities.row_iter() {
            let last = row[self.k - 1].ln();
            v.extend((0..self.k - 1).map(|k| row[k].ln() - last));
        }
        v.extend(s.sizes.concentration().iter().map(|a| a.ln()));
        v
    }

    fn decode(&self, v: &[f64]) -> Option<PosteriorState> {
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("parameter vector has the encoded length");
        let mut normals = |count: usize| -> Option<Vec<MvNormalParams>> {
            (0..count)
                .map(|_| {
                    let (m, lp) = (next(), next());
                    MvNormalParams::new(DVector::from_element(1, m), DMatrix::from_element(1, 1, lp.exp())).ok()
                })
                .collect()
        };
        let latent = normals(self.t)?;
        let loadings = normals(self.n)?;
        let centers = normals(self.k)?;
        let mut gammas = |count: usize| -> Option<Vec<GammaParams>> {
            (0..count).map(|_| GammaParams::new(next().exp(), next().exp()).ok()).collect()
        };
        let noise = gammas(self.n)?;
        let ard = gammas(self.k)?.into_iter().map(|g| vec![g]).collect();
        let precisions = (0..self.k)
            .map(|_| WishartParams::new(next().exp(), DMatrix::from_element(1, 1, next().exp())).ok())
            .collect::<Option<Vec<_>>>()?;
        let mut responsibilities = DMatrix::zeros(self.n, self.k);
        for i in 0..self.n {
            let mut logits: Vec<f64> = (0..self.k - 1).map(|_| next()).collect();
            logits.push(0.0);
            let probs = edgeless::distributions::softmax(&logits);
            for (k, p) in probs.into_iter().enumerate() {
                responsibilities[(i, k)] = p;
            }
        }
        let sizes = DirichletParams::new((0..self.k).map(|_| next().exp()).collect()).ok()?;
        Some(PosteriorState { latent, noise, loadings, centers, precisions, responsibilities, sizes, ard })
    }
}

struct NegativeBound<'a> {
    family: Family,
    data: &'a Dataset,
    hyper: &'a Hyperparameters,
}

impl NegativeBound<'_> {
    fn value(&self, v: &[f64]) -> f64 {
        self.family
            .decode(v)
            .and_then(|s| compute_elbo(&s, self.data, self.hyper).ok())
            .map_or(f64::INFINITY, |l| -l)
    }
}

impl CostFunction for NegativeBound<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, v: &Vec<f64>) -> Result<f64, argmin::core::Error> {
        Ok(self.value(v))
    }
}

impl Gradient for NegativeBound<'_> {
    type Param = Vec<f64>;
    type Gradient = Vec<f64>;

    /// Central differences.
    fn gradient(&self, v: &Vec<f64>) -> Result<Vec<f64>, argmin::core::Error> {
        let mut probe = v.clone();
        Ok((0..v.len())
            .map(|j| {
                let h = 1e-6 * v[j].abs().max(1.0);
                probe[j] = v[j] + h;
                let up = self.value(&probe);
                probe[j] = v[j] - h;
                let down = self.value(&probe);
                probe[j] = v[j];
                (up - down) / (2.0 * h)
            })
            .collect())
    }
}

/// Converged bound of coordinate ascent and of L-BFGS, both started from the
/// same point, on an `n = 4`, `T = 8`, `K = 2` instance.
pub fn both_optima() -> (f64, f64) {
    let (n, t, k) = (4, 8, 2);
    let config = GeneratorConfig { n, t, p: 1, k, seed: 11, ..GeneratorConfig::default() };
    let data = generate(&config).unwrap().dataset;
    let hyper = Hyperparameters::new(1, k, 2.0);
    // one sweep from the usual initialization softens the hard assignments
    // so that both methods start from the same interior point
    let mut start = initial_state(&data, &hyper, 3);
    for f in Factor::DEFAULT_ORDER {
        apply_update(f, &mut start, &data, &hyper).unwrap();
    }

    let mut cavi = start.clone();
    let trace = run_cavi(&mut cavi, &data, &hyper, &FitConfig { max_sweeps: 200_000, elbo_rel_tol: 1e-15, ..FitConfig::default() }).unwrap();
    let by_cavi = *trace.elbo.last().unwrap();

    let family = Family { n, t, k };
    let x0 = family.encode(&start);
    assert_eq!(x0.len(), 50);
    let problem = NegativeBound { family, data: &data, hyper: &hyper };
    let solver = LBFGS::new(MoreThuenteLineSearch::new(), 20)
        .with_tolerance_grad(1e-9)
        .unwrap()
        .with_tolerance_cost(1e-15)
        .unwrap();
    let result = Executor::new(problem, solver).configure(|s| s.param(x0).max_iters(20_000)).run().unwrap();
    let by_optimizer = -result.state.best_cost;

    (by_cavi, by_optimizer)
}
