//! Seeded Monte Carlo estimates of distribution moments, reported as
//! deviations in standard errors.

use std::fmt;

use edgeless::distributions::{sample, seeded_rng, DirichletParams, GammaParams, Sampler, WishartParams};

/// A sample statistic against its analytic value.
pub struct Deviation {
    pub what: String,
    pub got: f64,
    pub want: f64,
    pub se: f64,
}

impl Deviation {
    pub fn z(&self) -> f64 {
        (self.got - self.want).abs() / self.se
    }

    pub fn within(&self, standard_errors: f64) -> bool {
        (self.got - self.want).abs() <= standard_errors * self.se
    }
}

impl fmt::Display for Deviation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: sample {} vs {} (se {:.3e}, z {:.2})", self.what, self.got, self.want, self.se, self.z())
    }
}

/// Running mean, variance and fourth central moment of a scalar stream.
#[derive(Default)]
pub struct Moments {
    values: Vec<f64>,
}

impl Moments {
    pub fn push(&mut self, v: f64) {
        self.values.push(v);
    }

    pub fn n(&self) -> f64 {
        self.values.len() as f64
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.n()
    }

    pub fn central(&self, power: i32) -> f64 {
        let m = self.mean();
        self.values.iter().map(|v| (v - m).powi(power)).sum::<f64>() / self.n()
    }

    pub fn variance(&self) -> f64 {
        self.central(2) * self.n() / (self.n() - 1.0)
    }

    pub fn mean_against(&self, want: f64, what: &str) -> Deviation {
        let se = (self.variance() / self.n()).sqrt();
        Deviation { what: format!("{what} (mean)"), got: self.mean(), want, se }
    }

    pub fn variance_against(&self, want: f64, what: &str) -> Deviation {
        let s2 = self.central(2);
        let se = ((self.central(4) - s2 * s2) / self.n()).sqrt();
        Deviation { what: format!("{what} (variance)"), got: self.variance(), want, se }
    }
}

pub fn gamma_checks(draws: usize) -> Vec<Deviation> {
    let mut checks = Vec::new();
    let g = GammaParams::new(3.7, 2.2).unwrap();
    let (mut x, mut lx, mut nlp) = (Moments::default(), Moments::default(), Moments::default());
    for v in sample(&g, 1, draws).unwrap() {
        x.push(v);
        lx.push(v.ln());
        nlp.push(-g.ln_pdf(v).unwrap());
    }
    checks.push(x.mean_against(g.mean(), "gamma mean"));
    checks.push(x.variance_against(g.variance(), "gamma variance"));
    checks.push(lx.mean_against(g.expected_log(), "gamma E[log x]"));
    checks.push(nlp.mean_against(g.entropy(), "gamma entropy"));
    checks
}

pub fn wishart_checks(draws: usize) -> Vec<Deviation> {
    let mut checks = Vec::new();
    let mut rng = seeded_rng(17, 0);
    let scale = super::random_spd(3, 0.3, 3.0, &mut rng);
    let w = WishartParams::new(5.0, scale).unwrap();
    let mut entries: Vec<Moments> = (0..9).map(|_| Moments::default()).collect();
    let (mut logdet, mut nlp) = (Moments::default(), Moments::default());
    let mut rng = seeded_rng(18, 0);
    for _ in 0..draws {
        let x = w.draw(&mut rng);
        for (e, m) in entries.iter_mut().enumerate() {
            m.push(x[(e / 3, e % 3)]);
        }
        let chol = x.clone().cholesky().expect("draw is SPD");
        logdet.push(2.0 * chol.l().diagonal().map(f64::ln).sum());
        nlp.push(-w.ln_pdf(&x).unwrap());
    }
    let mean = w.mean();
    for (e, m) in entries.iter().enumerate() {
        let (i, j) = (e / 3, e % 3);
        checks.push(m.mean_against(mean[(i, j)], &format!("wishart mean ({i},{j})")));
        checks.push(m.variance_against(w.variance(i, j), &format!("wishart variance ({i},{j})")));
    }
    checks.push(logdet.mean_against(w.expected_log_det(), "wishart E[log det]"));
    checks.push(nlp.mean_against(w.entropy(), "wishart entropy"));
    checks
}

pub fn dirichlet_checks(draws: usize) -> Vec<Deviation> {
    let mut checks = Vec::new();
    let d = DirichletParams::new(vec![0.3, 1.7, 4.0]).unwrap();
    let mut x: Vec<Moments> = (0..3).map(|_| Moments::default()).collect();
    let mut lx: Vec<Moments> = (0..3).map(|_| Moments::default()).collect();
    let mut nlp = Moments::default();
    for draw in sample(&d, 3, draws).unwrap() {
        for k in 0..3 {
            x[k].push(draw[k]);
            lx[k].push(draw[k].ln());
        }
        // the smallest component can underflow below the simplex tolerance
        if draw.iter().all(|&v| v > 0.0) {
            nlp.push(-d.ln_pdf(&draw).unwrap());
        }
    }
    let (mean, var, elog) = (d.mean(), d.variance(), d.expected_log());
    for k in 0..3 {
        checks.push(x[k].mean_against(mean[k], "dirichlet mean"));
        checks.push(x[k].variance_against(var[k], "dirichlet variance"));
        checks.push(lx[k].mean_against(elog[k], "dirichlet E[log x]"));
    }
    assert!(nlp.n() > 0.999 * draws as f64);
    checks.push(nlp.mean_against(d.entropy(), "dirichlet entropy"));
    checks
}

pub fn normal_checks(draws: usize) -> Vec<Deviation> {
    let mut checks = Vec::new();
    let mut rng = seeded_rng(21, 0);
    let q = super::random_mvn(3, &mut rng);
    let mut first: Vec<Moments> = (0..3).map(|_| Moments::default()).collect();
    let mut outer: Vec<Moments> = (0..9).map(|_| Moments::default()).collect();
    let mut nlp = Moments::default();
    for x in sample(&q, 22, draws).unwrap() {
        for j in 0..3 {
            first[j].push(x[j]);
        }
        for (e, m) in outer.iter_mut().enumerate() {
            m.push(x[e / 3] * x[e % 3]);
        }
        nlp.push(-q.ln_pdf(&x).unwrap());
    }
    let second = q.second_moment();
    for j in 0..3 {
        checks.push(first[j].mean_against(q.mean()[j], "normal mean"));
        checks.push(first[j].variance_against(q.covariance()[(j, j)], "normal variance"));
    }
    for (e, m) in outer.iter().enumerate() {
        checks.push(m.mean_against(second[(e / 3, e % 3)], "normal E[x xᵀ]"));
    }
    checks.push(nlp.mean_against(q.entropy(), "normal entropy"));
    checks
}
