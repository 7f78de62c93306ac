use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

// Pre-activation clamps that keep σ > 0, |ρ| < 1 and e ∈ (0, 1) in floating
// point. Gradients vanish outside them.
const LOG_SIGMA_CLAMP: f64 = 30.0;
const RHO_CLAMP: f64 = 15.0;
const STOP_CLAMP: f64 = 30.0;

/// Bivariate Gaussian mixture over (s, t) plus the stop probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureParams {
    pub pi: Vec<f64>,
    pub mu: Vec<[f64; 2]>,
    pub sigma: Vec<[f64; 2]>,
    pub rho: Vec<f64>,
    pub e: f64,
}

impl MixtureParams {
    pub fn len(&self) -> usize {
        self.pi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pi.is_empty()
    }

    /// Checks the simplex, positivity and correlation bounds.
    pub fn validate(&self) -> Result<()> {
        let k = self.pi.len();
        if k == 0 || self.mu.len() != k || self.sigma.len() != k || self.rho.len() != k {
            return Err(Error::ShapeMismatch("mixture parameter lengths differ".into()));
        }
        let total: f64 = self.pi.iter().sum();
        if (total - 1.0).abs() > 1e-6 || self.pi.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::invalid(format!("mixture weights not on the simplex (sum {total})")));
        }
        if self.sigma.iter().flatten().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("non-positive standard deviation"));
        }
        if self.rho.iter().any(|r| !(r.abs() < 1.0)) {
            return Err(Error::invalid("correlation outside (-1, 1)"));
        }
        if !(self.e > 0.0 && self.e < 1.0) {
            return Err(Error::invalid("stop probability outside (0, 1)"));
        }
        Ok(())
    }

    /// Component indices by decreasing weight (ties by index).
    pub fn ranked(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.pi.len()).collect();
        idx.sort_by(|&a, &b| self.pi[b].total_cmp(&self.pi[a]).then(a.cmp(&b)));
        idx
    }

    /// `log N(x | μ_k, σ_k, ρ_k)`.
    pub fn log_density(&self, k: usize, x: [f64; 2]) -> f64 {
        log_normal2(x, self.mu[k], self.sigma[k], self.rho[k])
    }
}

fn log_normal2(x: [f64; 2], mu: [f64; 2], sigma: [f64; 2], rho: f64) -> f64 {
    let u = (x[0] - mu[0]) / sigma[0];
    let v = (x[1] - mu[1]) / sigma[1];
    let om = 1.0 - rho * rho;
    let z = u * u + v * v - 2.0 * rho * u * v;
    -(2.0 * PI).ln() - sigma[0].ln() - sigma[1].ln() - 0.5 * om.ln() - z / (2.0 * om)
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Offsets of the parameter groups inside the raw MDN output.
struct Raw {
    k: usize,
}

impl Raw {
    fn logit(&self, i: usize) -> usize {
        i
    }
    fn mu(&self, i: usize, j: usize) -> usize {
        self.k + j * self.k + i
    }
    fn log_sigma(&self, i: usize, j: usize) -> usize {
        3 * self.k + j * self.k + i
    }
    fn rho(&self, i: usize) -> usize {
        5 * self.k + i
    }
    fn stop(&self) -> usize {
        6 * self.k
    }
}

/// Maps the raw head output (`6K + 1` values: logits, means, log standard
/// deviations, correlation pre-activations, stop logit) to constrained
/// parameters via softmax, exp, tanh and the logistic function.
pub fn mixture_from_raw(o: &[f64], k: usize) -> MixtureParams {
    let r = Raw { k };
    let logits: Vec<f64> = (0..k).map(|i| o[r.logit(i)]).collect();
    let lse = log_sum_exp(&logits);
    MixtureParams {
        pi: logits.iter().map(|l| (l - lse).exp()).collect(),
        mu: (0..k).map(|i| [o[r.mu(i, 0)], o[r.mu(i, 1)]]).collect(),
        sigma: (0..k)
            .map(|i| {
                [0, 1].map(|j| o[r.log_sigma(i, j)].clamp(-LOG_SIGMA_CLAMP, LOG_SIGMA_CLAMP).exp())
            })
            .collect(),
        rho: (0..k).map(|i| o[r.rho(i)].clamp(-RHO_CLAMP, RHO_CLAMP).tanh()).collect(),
        e: sigmoid(o[r.stop()].clamp(-STOP_CLAMP, STOP_CLAMP)),
    }
}

/// Negative log-likelihood of one target under one step's mixture, and of
/// its stop flag under the Bernoulli stop probability.
pub fn step_loss(m: &MixtureParams, target: [f64; 2], stop: bool) -> f64 {
    let terms: Vec<f64> = (0..m.len())
        .map(|k| m.pi[k].ln() + m.log_density(k, target))
        .collect();
    let ll = log_sum_exp(&terms).max(PROB_FLOOR.ln());
    let pe = if stop { m.e } else { 1.0 - m.e };
    -ll - pe.max(PROB_FLOOR).ln()
}

/// Summed [`step_loss`] over aligned steps: `targets[t]` is the (s, t, stop)
/// target of `params[t]`.
pub fn mdn_loss(params: &[MixtureParams], targets: &[([f64; 2], bool)]) -> Result<f64> {
    if params.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} mixture steps for {} targets",
            params.len(),
            targets.len()
        )));
    }
    Ok(params.iter().zip(targets).map(|(m, (x, e))| step_loss(m, *x, *e)).sum())
}

/// Loss of one step and its gradient with respect to the raw head output.
pub(crate) fn step_loss_grad(o: &[f64], k: usize, target: [f64; 2], stop: bool) -> (f64, Vec<f64>) {
    let r = Raw { k };
    let m = mixture_from_raw(o, k);
    let mut g = vec![0.0; o.len()];

    let logits: Vec<f64> = (0..k).map(|i| o[r.logit(i)]).collect();
    let lse = log_sum_exp(&logits);
    let terms: Vec<f64> = (0..k)
        .map(|i| logits[i] - lse + m.log_density(i, target))
        .collect();
    let ll = log_sum_exp(&terms);
    let mut loss = 0.0;
    if ll > PROB_FLOOR.ln() {
        loss -= ll;
        for i in 0..k {
            let gamma = (terms[i] - ll).exp();
            g[r.logit(i)] = m.pi[i] - gamma;
            let (s1, s2, rho) = (m.sigma[i][0], m.sigma[i][1], m.rho[i]);
            let u = (target[0] - m.mu[i][0]) / s1;
            let v = (target[1] - m.mu[i][1]) / s2;
            let c = 1.0 / (1.0 - rho * rho);
            let z = u * u + v * v - 2.0 * rho * u * v;
            g[r.mu(i, 0)] = -gamma * c / s1 * (u - rho * v);
            g[r.mu(i, 1)] = -gamma * c / s2 * (v - rho * u);
            for (j, (a, b)) in [(u, v), (v, u)].into_iter().enumerate() {
                if o[r.log_sigma(i, j)].abs() < LOG_SIGMA_CLAMP {
                    g[r.log_sigma(i, j)] = -gamma * (c * a * (a - rho * b) - 1.0);
                }
            }
            if o[r.rho(i)].abs() < RHO_CLAMP {
                g[r.rho(i)] = -gamma * (u * v + rho * (1.0 - c * z));
            }
        }
    } else {
        loss -= PROB_FLOOR.ln();
    }

    let pe = if stop { m.e } else { 1.0 - m.e };
    if pe > PROB_FLOOR {
        loss -= pe.ln();
        if o[r.stop()].abs() < STOP_CLAMP {
            g[r.stop()] = m.e - if stop { 1.0 } else { 0.0 };
        }
    } else {
        loss -= PROB_FLOOR.ln();
    }
    (loss, g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::rng;
    use rand::Rng;

    fn standard() -> MixtureParams {
        MixtureParams {
            pi: vec![1.0],
            mu: vec![[0.0, 0.0]],
            sigma: vec![[1.0, 1.0]],
            rho: vec![0.0],
            e: 1.0 - 1e-12,
        }
    }

    #[test]
    fn standard_normal_at_mode_is_log_two_pi() {
        let l = mdn_loss(&[standard()], &[([0.0, 0.0], true)]).unwrap();
        assert!((l - (2.0 * PI).ln()).abs() < 1e-9, "{l}");
    }

    #[test]
    fn zero_correlation_factorizes() {
        let m = MixtureParams {
            mu: vec![[0.3, -1.0]],
            sigma: vec![[0.5, 2.0]],
            ..standard()
        };
        let x = [0.9, 0.4];
        let uni = |x: f64, mu: f64, s: f64| -0.5 * ((x - mu) / s).powi(2) - s.ln() - 0.5 * (2.0 * PI).ln();
        let want = uni(x[0], 0.3, 0.5) + uni(x[1], -1.0, 2.0);
        assert!((m.log_density(0, x) - want).abs() < 1e-12);
    }

    #[test]
    fn neutral_activations() {
        let m = mixture_from_raw(&vec![0.0; 6 * 4 + 1], 4);
        assert!(m.pi.iter().all(|p| (p - 0.25).abs() < 1e-15));
        assert!(m.sigma.iter().all(|s| *s == [1.0, 1.0]));
        assert!(m.rho.iter().all(|r| *r == 0.0));
        assert_eq!(m.e, 0.5);
        let mut o = vec![0.0; 25];
        o[24] = -40.0;
        assert!(mixture_from_raw(&o, 4).e < 1e-3);
    }

    #[test]
    fn constraints_hold_for_extreme_outputs() {
        let mut r = rng(5);
        for _ in 0..1000 {
            let o: Vec<f64> = (0..6 * 3 + 1).map(|_| r.random_range(-60.0..60.0)).collect();
            mixture_from_raw(&o, 3).validate().unwrap();
        }
    }

    #[test]
    fn matches_direct_density_evaluation() {
        let mut r = rng(6);
        for _ in 0..50 {
            let k = 3;
            let o: Vec<f64> = (0..6 * k + 1).map(|_| r.random_range(-1.5..1.5)).collect();
            let m = mixture_from_raw(&o, k);
            let x = [r.random_range(-2.0..2.0), r.random_range(-2.0..2.0)];
            let mut p = 0.0;
            for i in 0..k {
                let (s1, s2, rho) = (m.sigma[i][0], m.sigma[i][1], m.rho[i]);
                let dx = (x[0] - m.mu[i][0]) / s1;
                let dy = (x[1] - m.mu[i][1]) / s2;
                let z = dx * dx + dy * dy - 2.0 * rho * dx * dy;
                let n = (-z / (2.0 * (1.0 - rho * rho))).exp() / (2.0 * PI * s1 * s2 * (1.0 - rho * rho).sqrt());
                p += m.pi[i] * n;
            }
            let want = -p.ln() - (1.0 - m.e).ln();
            assert!((step_loss(&m, x, false) - want).abs() < 1e-10);
            assert!((step_loss_grad(&o, k, x, false).0 - want).abs() < 1e-10);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut r = rng(7);
        let k = 3;
        for _ in 0..20 {
            let o: Vec<f64> = (0..6 * k + 1).map(|_| r.random_range(-1.0..1.0)).collect();
            let x = [r.random_range(-1.5..1.5), r.random_range(-1.5..1.5)];
            let stop = r.random_bool(0.5);
            let (_, g) = step_loss_grad(&o, k, x, stop);
            for i in 0..o.len() {
                let h = 1e-6;
                let (mut a, mut b) = (o.clone(), o.clone());
                a[i] += h;
                b[i] -= h;
                let fd = (step_loss_grad(&a, k, x, stop).0 - step_loss_grad(&b, k, x, stop).0) / (2.0 * h);
                assert!((fd - g[i]).abs() < 1e-6 * (1.0 + fd.abs()), "param {i}: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn moving_a_mean_toward_the_target_lowers_the_loss() {
        let target = [1.0, -0.5];
        let mut last = f64::INFINITY;
        for step in 0..=10 {
            let f = step as f64 / 10.0;
            let m = MixtureParams {
                mu: vec![[target[0] * f, target[1] * f]],
                e: 0.5,
                ..standard()
            };
            let l = step_loss(&m, target, false);
            assert!(l < last);
            last = l;
        }
    }
}
