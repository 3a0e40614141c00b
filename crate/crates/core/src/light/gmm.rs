//! Two-component 1-D Gaussian mixture fitted by EM.

use serde::{Deserialize, Serialize};

use super::LightError;

pub const MIN_SAMPLES: usize = 8;
const MAX_ITER: usize = 200;
const TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm2 {
    /// Components sorted by decreasing weight.
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    /// Mean per-sample log-likelihood after each EM iteration.
    pub loglik: Vec<f64>,
    /// The fitted components overlapped too much to be told apart and were
    /// merged into the major component (minor weight 0).
    pub merged: bool,
}

impl Gmm2 {
    pub fn major(&self) -> (f64, f64, f64) {
        (self.weights[0], self.means[0], self.variances[0])
    }

    /// Posterior probability that `x` belongs to the major component.
    pub fn major_responsibility(&self, x: f64) -> f64 {
        if self.weights[1] == 0.0 {
            return 1.0;
        }
        let l = [0, 1].map(|k| log_normal(x, self.means[k], self.variances[k]) + self.weights[k].ln());
        let m = l[0].max(l[1]);
        let a = (l[0] - m).exp();
        a / (a + (l[1] - m).exp())
    }
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + var.ln() + std::f64::consts::TAU.ln())
}

fn moments(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Fits two Gaussians by EM, initialized by splitting the sorted samples at
/// the median and moment-matching each half. Variances are floored at
/// `1e-8 · range²` (or `1e-8 · max(mean², 1)` when all samples coincide).
/// Iterates until the mean log-likelihood improves by less than 1e-8 or
/// 200 iterations.
pub fn fit_gmm2(samples: &[f64]) -> Result<Gmm2, LightError> {
    if samples.len() < MIN_SAMPLES {
        return Err(LightError::TooFewSamples {
            found: samples.len(),
            needed: MIN_SAMPLES,
        });
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(LightError::NonFinite);
    }
    let n = samples.len();
    let mut sorted = samples.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let range = sorted[n - 1] - sorted[0];
    let (all_mean, all_var) = moments(&sorted);
    let floor = if range > 0.0 {
        1e-8 * range * range
    } else {
        1e-8 * all_mean.powi(2).max(1.0)
    };

    let (lo, hi) = sorted.split_at(n / 2);
    let (m0, v0) = moments(lo);
    let (m1, v1) = moments(hi);
    let mut w = [0.5f64, 0.5];
    let mut mu = [m0, m1];
    let mut var = [v0.max(floor), v1.max(floor)];

    let mut resp = vec![0.0f64; n];
    let mut trace: Vec<f64> = Vec::new();
    for _ in 0..MAX_ITER {
        // E step; resp = posterior of component 0
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(samples) {
            let a = w[0].ln() + log_normal(x, mu[0], var[0]);
            let b = w[1].ln() + log_normal(x, mu[1], var[1]);
            let m = a.max(b);
            let (ea, eb) = ((a - m).exp(), (b - m).exp());
            ll += m + (ea + eb).ln();
            *r = ea / (ea + eb);
        }
        let ll = ll / n as f64;
        let done = trace.last().is_some_and(|prev| ll - prev < TOL);
        trace.push(ll);
        if done {
            break;
        }
        // M step
        let n0: f64 = resp.iter().sum();
        let n1 = n as f64 - n0;
        if n0 <= 0.0 || n1 <= 0.0 {
            break;
        }
        let s0: f64 = resp.iter().zip(samples).map(|(r, x)| r * x).sum();
        let s1: f64 = resp.iter().zip(samples).map(|(r, x)| (1.0 - r) * x).sum();
        mu = [s0 / n0, s1 / n1];
        let q0: f64 = resp.iter().zip(samples).map(|(r, x)| r * (x - mu[0]).powi(2)).sum();
        let q1: f64 = resp.iter().zip(samples).map(|(r, x)| (1.0 - r) * (x - mu[1]).powi(2)).sum();
        var = [(q0 / n0).max(floor), (q1 / n1).max(floor)];
        w = [n0 / n as f64, n1 / n as f64];
    }

    let (major, minor) = if w[0] >= w[1] { (0, 1) } else { (1, 0) };
    // Unresolved mixture: the two means lie within one combined standard
    // deviation of each other, so the data show a single mode.
    if (mu[0] - mu[1]).abs() <= var[0].sqrt() + var[1].sqrt() || w[minor] == 0.0 {
        let v = all_var.max(floor);
        return Ok(Gmm2 {
            weights: [1.0, 0.0],
            means: [all_mean, all_mean],
            variances: [v, v],
            loglik: trace,
            merged: true,
        });
    }
    Ok(Gmm2 {
        weights: [w[major], w[minor]],
        means: [mu[major], mu[minor]],
        variances: [var[major], var[minor]],
        loglik: trace,
        merged: false,
    })
}
