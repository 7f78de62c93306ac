use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::mdn::MixtureParams;
use super::model::{lstm_step, mdn_head, rotation_heads, LstmState};
use super::token::{Token, TokenSequence};
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::geom::Axis;
use crate::synth::rng;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplingMode {
    /// Component drawn from all of π.
    Train,
    /// Component drawn from the two most probable components, renormalized.
    #[default]
    Test,
    /// Mean of the most probable component; thresholds at 0.5.
    Greedy,
}

/// Continuous part of a sampled token plus its stop flag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Draw {
    pub component: usize,
    pub s: f64,
    pub t: f64,
    pub e: bool,
}

fn pick(weights: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().map(|w| w.1).sum();
    let mut u = rng.random::<f64>() * total;
    for &(k, p) in weights {
        if u < p {
            return k;
        }
        u -= p;
    }
    // rounding left u at the very top
    weights.iter().rev().find(|w| w.1 > 0.0).map_or(weights[0].0, |w| w.0)
}

pub fn sample_next(params: &MixtureParams, mode: SamplingMode, rng: &mut impl Rng) -> Draw {
    let ranked = params.ranked();
    let k = match mode {
        SamplingMode::Greedy => ranked[0],
        SamplingMode::Train => {
            let w: Vec<(usize, f64)> = params.pi.iter().copied().enumerate().collect();
            pick(&w, rng)
        }
        SamplingMode::Test => {
            let w: Vec<(usize, f64)> = ranked.iter().take(2).map(|&k| (k, params.pi[k])).collect();
            pick(&w, rng)
        }
    };
    let mu = params.mu[k];
    if mode == SamplingMode::Greedy {
        return Draw {
            component: k,
            s: mu[0],
            t: mu[1],
            e: params.e > 0.5,
        };
    }
    let [s1, s2] = params.sigma[k];
    let rho = params.rho[k];
    let z1: f64 = rng.sample(StandardNormal);
    let z2: f64 = rng.sample(StandardNormal);
    let e = rng.random::<f64>() < params.e;
    Draw {
        component: k,
        s: mu[0] + s1 * z1,
        t: mu[1] + s2 * (rho * z1 + (1.0 - rho * rho).sqrt() * z2),
        e,
    }
}

/// Rotation flag (Bernoulli, or thresholded when greedy) and the rotation
/// value, which is exactly zero when the flag is off.
pub fn sample_rotation(r: f64, a: f64, mode: SamplingMode, rng: &mut impl Rng) -> (f64, bool) {
    let flag = match mode {
        SamplingMode::Greedy => a > 0.5,
        _ => rng.random::<f64>() < a,
    };
    (if flag { r } else { 0.0 }, flag)
}

/// Rolls the model forward from `init`, feeding each sampled token back in,
/// until a sampled stop or `max_steps` tokens. A trailing partial primitive
/// is dropped.
pub fn generate(
    d: Option<&[f64]>,
    init: &Token,
    w: &ModelWeights,
    max_steps: usize,
    mode: SamplingMode,
    seed: u64,
) -> Result<TokenSequence> {
    if max_steps < 3 {
        return Err(Error::invalid("max_steps must be at least 3"));
    }
    let zeros = vec![0.0; w.config.depth_dim];
    let d = d.unwrap_or(&zeros);
    let mut rng = rng(seed);
    let mut state = LstmState::zeros(&w.config);
    let mut x = *init;
    let mut tokens = Vec::new();
    for step in 0..max_steps {
        let (y, next) = lstm_step(&x, d, &state, w)?;
        state = next;
        let mix = mdn_head(&y, w);
        let draw = sample_next(&mix, mode, &mut rng);
        let (rv, av) = rotation_heads(&y, w);
        let (r, a) = sample_rotation(rv, av, mode, &mut rng);
        let tok = Token {
            s: draw.s,
            t: draw.t,
            e: draw.e,
            r,
            a,
            axis: Axis::from_index(step % 3),
        };
        tokens.push(tok);
        if tok.e {
            break;
        }
        x = tok;
    }
    let keep = tokens.len() / 3 * 3;
    if keep < tokens.len() {
        log::debug!("dropping {} trailing tokens of an unfinished primitive", tokens.len() - keep);
        tokens.truncate(keep);
    }
    Ok(TokenSequence { tokens })
}
