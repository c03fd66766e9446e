//! Two-component one-dimensional Gaussian mixture fitted by EM.

use serde::{Deserialize, Serialize};

use crate::Error;

pub const MAX_ITERATIONS: usize = 500;
pub const TOLERANCE: f64 = 1e-8;
/// Added to every variance so a collapsing component stays proper.
pub const VARIANCE_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Gmm1d {
    pub weights: [f64; 2],
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub log_likelihood: f64,
    pub iterations: usize,
}

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * ((x - mean).powi(2) / var + var.ln() + (2.0 * std::f64::consts::PI).ln())
}

impl Gmm1d {
    /// Initial state: the given means, equal weights, the pooled variance.
    pub fn init(values: &[f64], means: [f64; 2]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n + VARIANCE_FLOOR;
        Self { weights: [0.5, 0.5], means, variances: [var, var], log_likelihood: f64::NEG_INFINITY, iterations: 0 }
    }

    /// Posterior responsibility of each component for `x`.
    pub fn posterior(&self, x: f64) -> [f64; 2] {
        let a = self.weights[0].ln() + log_normal(x, self.means[0], self.variances[0]);
        let b = self.weights[1].ln() + log_normal(x, self.means[1], self.variances[1]);
        let m = a.max(b);
        let (ea, eb) = ((a - m).exp(), (b - m).exp());
        [ea / (ea + eb), eb / (ea + eb)]
    }

    fn log_likelihood_of(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .map(|&x| {
                let a = self.weights[0].ln() + log_normal(x, self.means[0], self.variances[0]);
                let b = self.weights[1].ln() + log_normal(x, self.means[1], self.variances[1]);
                let m = a.max(b);
                m + ((a - m).exp() + (b - m).exp()).ln()
            })
            .sum()
    }

    /// EM until the log-likelihood gain drops below `TOLERANCE` or `MAX_ITERATIONS`.
    pub fn fit(values: &[f64], init: Gmm1d) -> Self {
        let n = values.len() as f64;
        let mut model = init;
        model.log_likelihood = model.log_likelihood_of(values);
        let mut resp = vec![[0.0; 2]; values.len()];
        for it in 1..=MAX_ITERATIONS {
            for (r, &x) in resp.iter_mut().zip(values) {
                *r = model.posterior(x);
            }
            let mut next = model;
            for k in 0..2 {
                let nk: f64 = resp.iter().map(|r| r[k]).sum();
                let nk_safe = nk.max(f64::MIN_POSITIVE);
                let mean = resp.iter().zip(values).map(|(r, x)| r[k] * x).sum::<f64>() / nk_safe;
                let var = resp.iter().zip(values).map(|(r, x)| r[k] * (x - mean).powi(2)).sum::<f64>() / nk_safe;
                next.weights[k] = (nk / n).max(1e-12);
                next.means[k] = mean;
                next.variances[k] = var + VARIANCE_FLOOR;
            }
            next.log_likelihood = next.log_likelihood_of(values);
            next.iterations = it;
            let gain = next.log_likelihood - model.log_likelihood;
            model = next;
            if gain < TOLERANCE {
                break;
            }
        }
        model
    }

    pub fn low_component(&self) -> usize {
        usize::from(self.means[1] < self.means[0])
    }
}

/// Min-max normalise `losses` into `[0, 1]`.
pub fn min_max(losses: &[f64]) -> Result<Vec<f64>, Error> {
    if losses.len() < 2 {
        return Err(Error::InsufficientSamples { needed: 2, available: losses.len() });
    }
    if losses.iter().any(|l| !l.is_finite()) {
        return Err(Error::NonFiniteLoss);
    }
    let lo = losses.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = losses.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return Err(Error::DegenerateLosses);
    }
    Ok(losses.iter().map(|l| (l - lo) / (hi - lo)).collect())
}

/// Linear-interpolated quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Mixture fitted to min-max normalised losses, started at their 25% and 75% quantiles.
pub fn fit_losses(losses: &[f64]) -> Result<(Vec<f64>, Gmm1d), Error> {
    let values = min_max(losses)?;
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let init = Gmm1d::init(&values, [quantile(&sorted, 0.25), quantile(&sorted, 0.75)]);
    let fit = Gmm1d::fit(&values, init);
    Ok((values, fit))
}
