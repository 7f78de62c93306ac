//! Stacked LSTM with depth injection, the mixture head and the two rotation
//! heads: forward pass, losses and hand-written backpropagation.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::mdn::{mdn_loss, mixture_from_raw, sigmoid, step_loss_grad, MixtureParams};
use super::token::{Token, INPUT_DIM};
use super::weights::{MlpSlots, ModelConfig, ModelWeights};
use crate::encoder::conv::{dense, dense_backward};
use crate::encoder::{encoder_backward, encoder_forward, DepthImage};
use crate::error::{Error, Result};
use crate::geom::Plane;

/// Hidden and cell vectors of every layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmState {
    pub h: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
}

impl LstmState {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        LstmState {
            h: vec![vec![0.0; cfg.hidden]; cfg.layers],
            c: vec![vec![0.0; cfg.hidden]; cfg.layers],
        }
    }

    fn is_finite(&self) -> bool {
        self.h.iter().chain(&self.c).flatten().all(|v| v.is_finite())
    }
}

fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (r, o) in out.iter_mut().enumerate() {
        *o += w[r * cols..(r + 1) * cols].iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// `dW += dz xᵀ`; `dx += Wᵀ dz`.
fn matvec_backward(w: &[f64], x: &[f64], dz: &[f64], dw: &mut [f64], dx: Option<&mut [f64]>) {
    let cols = x.len();
    for (r, &g) in dz.iter().enumerate() {
        if g == 0.0 {
            continue;
        }
        for (d, xv) in dw[r * cols..(r + 1) * cols].iter_mut().zip(x) {
            *d += g * xv;
        }
    }
    if let Some(dx) = dx {
        for (r, &g) in dz.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            for (d, wv) in dx.iter_mut().zip(&w[r * cols..(r + 1) * cols]) {
                *d += g * wv;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct LayerAct {
    s: Vec<f64>,
    g: Vec<f64>,
    c: Vec<f64>,
    tc: Vec<f64>,
    h: Vec<f64>,
}

fn layer_forward(
    w: &ModelWeights,
    l: usize,
    x: &[f64],
    h_prev: &[f64],
    c_prev: &[f64],
    below: Option<&[f64]>,
    d: &[f64],
) -> LayerAct {
    let ls = &w.slots.layers[l];
    let mut z = w.p(&ls.b).to_vec();
    matvec_add(w.p(&ls.wx), x, &mut z);
    matvec_add(w.p(&ls.wh), h_prev, &mut z);
    matvec_add(w.p(&ls.wc), below.unwrap_or(d), &mut z);
    if let Some(wd) = &ls.wd {
        matvec_add(w.p(wd), d, &mut z);
    }
    // one pre-activation drives all three gates and the candidate
    let s: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
    let g: Vec<f64> = z.iter().map(|v| v.tanh()).collect();
    let c: Vec<f64> = (0..z.len()).map(|i| s[i] * c_prev[i] + s[i] * g[i]).collect();
    let tc: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
    let h = (0..z.len()).map(|i| s[i] * tc[i]).collect();
    LayerAct { s, g, c, tc, h }
}

#[derive(Debug, Clone)]
struct MlpAct {
    a1: Vec<f64>,
    a2: Vec<f64>,
    out: f64,
}

fn mlp_forward(w: &ModelWeights, m: &MlpSlots, y: &[f64], sig: bool) -> MlpAct {
    let mut a1 = dense(w.p(&m.w[0]), w.p(&m.b[0]), y);
    a1.iter_mut().for_each(|v| *v = v.tanh());
    let mut a2 = dense(w.p(&m.w[1]), w.p(&m.b[1]), &a1);
    a2.iter_mut().for_each(|v| *v = v.tanh());
    let z = dense(w.p(&m.w[2]), w.p(&m.b[2]), &a2)[0];
    MlpAct {
        out: if sig { sigmoid(z) } else { z.tanh() },
        a1,
        a2,
    }
}

/// Accumulates head gradients for `dL/dz` at the output pre-activation and
/// returns the gradient on the head input.
fn mlp_backward(w: &ModelWeights, m: &MlpSlots, y: &[f64], act: &MlpAct, dz: f64, grad: &mut [f64]) -> Vec<f64> {
    let layer = |i: usize, x: &[f64], dy: &[f64], grad: &mut [f64]| -> Vec<f64> {
        let mut dw = vec![0.0; m.w[i].len()];
        let mut db = vec![0.0; m.b[i].len()];
        let dx = dense_backward(w.p(&m.w[i]), x, dy, &mut dw, &mut db);
        add(grad, &m.w[i], &dw);
        add(grad, &m.b[i], &db);
        dx
    };
    let mut da2 = layer(2, &act.a2, &[dz], grad);
    da2.iter_mut().zip(&act.a2).for_each(|(g, a)| *g *= 1.0 - a * a);
    let mut da1 = layer(1, &act.a1, &da2, grad);
    da1.iter_mut().zip(&act.a1).for_each(|(g, a)| *g *= 1.0 - a * a);
    layer(0, y, &da1, grad)
}

fn add(grad: &mut [f64], r: &Range<usize>, v: &[f64]) {
    for (g, x) in grad[r.clone()].iter_mut().zip(v) {
        *g += x;
    }
}

/// One recurrent step: feeds the previous token and the depth feature through
/// every layer and returns the summary `y = W_y [h¹ … hᴸ] + b_y`.
pub fn lstm_step(x_prev: &Token, d: &[f64], state: &LstmState, w: &ModelWeights) -> Result<(Vec<f64>, LstmState)> {
    check_shapes(d, state, w)?;
    let (acts, y) = step_forward(w, &x_prev.input(), d, state);
    let next = LstmState {
        h: acts.iter().map(|a| a.h.clone()).collect(),
        c: acts.iter().map(|a| a.c.clone()).collect(),
    };
    if !next.is_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup("lstm"));
    }
    Ok((y, next))
}

fn check_shapes(d: &[f64], state: &LstmState, w: &ModelWeights) -> Result<()> {
    let cfg = &w.config;
    if d.len() != cfg.depth_dim {
        return Err(Error::ShapeMismatch(format!(
            "depth feature has {} entries, model expects {}",
            d.len(),
            cfg.depth_dim
        )));
    }
    let ok = |v: &Vec<Vec<f64>>| v.len() == cfg.layers && v.iter().all(|x| x.len() == cfg.hidden);
    if !ok(&state.h) || !ok(&state.c) {
        return Err(Error::ShapeMismatch("LSTM state does not match the model".into()));
    }
    Ok(())
}

fn step_forward(w: &ModelWeights, x: &[f64], d: &[f64], state: &LstmState) -> (Vec<LayerAct>, Vec<f64>) {
    let mut acts: Vec<LayerAct> = Vec::with_capacity(w.config.layers);
    for l in 0..w.config.layers {
        let below = if l == 0 { None } else { Some(acts[l - 1].h.as_slice()) };
        let a = layer_forward(w, l, x, &state.h[l], &state.c[l], below, d);
        acts.push(a);
    }
    let hcat: Vec<f64> = acts.iter().flat_map(|a| a.h.iter().copied()).collect();
    let y = dense(w.p(&w.slots.wy), w.p(&w.slots.by), &hcat);
    (acts, y)
}

fn mdn_raw(y: &[f64], w: &ModelWeights) -> Vec<f64> {
    dense(w.p(&w.slots.mdn_w), w.p(&w.slots.mdn_b), y)
}

pub fn mdn_head(y: &[f64], w: &ModelWeights) -> MixtureParams {
    mixture_from_raw(&mdn_raw(y, w), w.config.mixtures)
}

/// Rotation value in `(-1, 1)` and rotation-flag probability.
pub fn rotation_heads(y: &[f64], w: &ModelWeights) -> (f64, f64) {
    (
        mlp_forward(w, &w.slots.rot, y, false).out,
        mlp_forward(w, &w.slots.axis, y, true).out,
    )
}

/// Everything predicted at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepOutput {
    pub mixture: MixtureParams,
    pub r: f64,
    pub a: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Mixture negative log-likelihood including the stop terms.
    pub shape: f64,
    pub rotation: f64,
    pub axis: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.shape + self.rotation + self.axis
    }

    fn add(&mut self, o: &LossBreakdown) {
        self.shape += o.shape;
        self.rotation += o.rotation;
        self.axis += o.axis;
    }
}

fn target_of(t: &Token) -> ([f64; 2], bool) {
    ([t.s, t.t], t.e)
}

pub fn total_loss(outputs: &[StepOutput], targets: &[Token]) -> Result<LossBreakdown> {
    if outputs.len() != targets.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} outputs for {} targets",
            outputs.len(),
            targets.len()
        )));
    }
    let mix: Vec<MixtureParams> = outputs.iter().map(|o| o.mixture.clone()).collect();
    let tg: Vec<_> = targets.iter().map(target_of).collect();
    Ok(LossBreakdown {
        shape: mdn_loss(&mix, &tg)?,
        rotation: outputs.iter().zip(targets).map(|(o, t)| (o.r - t.r).powi(2)).sum(),
        axis: outputs
            .iter()
            .zip(targets)
            .map(|(o, t)| (o.a - f64::from(u8::from(t.a))).powi(2))
            .sum(),
    })
}

/// Teacher-forced inputs for a target sequence: the first token is fed
/// twice (once as the initial input), then each target is fed in turn.
pub fn teacher_inputs(targets: &[Token]) -> Vec<Token> {
    match targets.first() {
        None => Vec::new(),
        Some(first) => std::iter::once(*first).chain(targets[..targets.len() - 1].iter().copied()).collect(),
    }
}

/// Runs the model over given inputs with teacher forcing.
pub fn forward_sequence(w: &ModelWeights, d: &[f64], inputs: &[Token]) -> Result<Vec<StepOutput>> {
    let mut state = LstmState::zeros(&w.config);
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        let (y, next) = lstm_step(x, d, &state, w)?;
        let (r, a) = rotation_heads(&y, w);
        out.push(StepOutput {
            mixture: mdn_head(&y, w),
            r,
            a,
        });
        state = next;
    }
    Ok(out)
}

/// One training example: a target sequence and its optional depth view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainItem {
    /// Shape identifier; views of one shape share it.
    pub name: String,
    pub tokens: Vec<Token>,
    pub depth: Option<DepthImage>,
    #[serde(default)]
    pub symmetry_plane: Option<Plane>,
}

struct StepCache {
    x: [f64; INPUT_DIM],
    acts: Vec<LayerAct>,
    hcat: Vec<f64>,
    y: Vec<f64>,
    raw: Vec<f64>,
    rot: MlpAct,
    axis: MlpAct,
}

/// Teacher-forced loss of one item and the gradient of that loss with
/// respect to every parameter (encoder included when a depth view exists).
pub fn backward(item: &TrainItem, w: &ModelWeights) -> Result<(LossBreakdown, Vec<f64>)> {
    let cfg = &w.config;
    if item.tokens.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let (d, enc_cache) = match &item.depth {
        Some(img) => {
            let (d, c) = encoder_forward(w, img);
            (d, Some(c))
        }
        None => (vec![0.0; cfg.depth_dim], None),
    };
    let inputs = teacher_inputs(&item.tokens);

    let mut state = LstmState::zeros(cfg);
    let mut caches = Vec::with_capacity(inputs.len());
    for x in &inputs {
        let x = x.input();
        let (acts, y) = step_forward(w, &x, &d, &state);
        let hcat = acts.iter().flat_map(|a| a.h.iter().copied()).collect();
        state = LstmState {
            h: acts.iter().map(|a| a.h.clone()).collect(),
            c: acts.iter().map(|a| a.c.clone()).collect(),
        };
        caches.push(StepCache {
            x,
            raw: mdn_raw(&y, w),
            rot: mlp_forward(w, &w.slots.rot, &y, false),
            axis: mlp_forward(w, &w.slots.axis, &y, true),
            acts,
            hcat,
            y,
        });
    }

    let (h, nl) = (cfg.hidden, cfg.layers);
    let zeros = vec![0.0; h];
    let mut grad = vec![0.0; w.len()];
    let mut dd = vec![0.0; cfg.depth_dim];
    let mut dh_next = vec![vec![0.0; h]; nl];
    let mut dc_next = vec![vec![0.0; h]; nl];
    let mut loss = LossBreakdown::default();
    let sl = &w.slots;

    for t in (0..caches.len()).rev() {
        let cache = &caches[t];
        let target = &item.tokens[t];

        let (ls, graw) = step_loss_grad(&cache.raw, cfg.mixtures, [target.s, target.t], target.e);
        let mut dw = vec![0.0; sl.mdn_w.len()];
        let mut db = vec![0.0; sl.mdn_b.len()];
        let mut dy = dense_backward(w.p(&sl.mdn_w), &cache.y, &graw, &mut dw, &mut db);
        add(&mut grad, &sl.mdn_w, &dw);
        add(&mut grad, &sl.mdn_b, &db);

        let r = cache.rot.out;
        let dr = 2.0 * (r - target.r) * (1.0 - r * r);
        let a = cache.axis.out;
        let a_t = f64::from(u8::from(target.a));
        let da = 2.0 * (a - a_t) * a * (1.0 - a);
        for (g, v) in dy.iter_mut().zip(mlp_backward(w, &sl.rot, &cache.y, &cache.rot, dr, &mut grad)) {
            *g += v;
        }
        for (g, v) in dy.iter_mut().zip(mlp_backward(w, &sl.axis, &cache.y, &cache.axis, da, &mut grad)) {
            *g += v;
        }
        loss.add(&LossBreakdown {
            shape: ls,
            rotation: (r - target.r).powi(2),
            axis: (a - a_t).powi(2),
        });

        let mut dw = vec![0.0; sl.wy.len()];
        let mut db = vec![0.0; sl.by.len()];
        let dhcat = dense_backward(w.p(&sl.wy), &cache.hcat, &dy, &mut dw, &mut db);
        add(&mut grad, &sl.wy, &dw);
        add(&mut grad, &sl.by, &db);

        let mut from_above = vec![0.0; h];
        for l in (0..nl).rev() {
            let act = &cache.acts[l];
            let (h_prev, c_prev) = if t == 0 {
                (&zeros, &zeros)
            } else {
                (&caches[t - 1].acts[l].h, &caches[t - 1].acts[l].c)
            };
            let mut dz = vec![0.0; h];
            for i in 0..h {
                let dh = dhcat[l * h + i] + dh_next[l][i] + from_above[i];
                let (s, g, tc) = (act.s[i], act.g[i], act.tc[i]);
                let dc = dc_next[l][i] + dh * s * (1.0 - tc * tc);
                let ds = dh * tc + dc * (c_prev[i] + g);
                let dg = dc * s;
                dz[i] = ds * s * (1.0 - s) + dg * (1.0 - g * g);
                dc_next[l][i] = dc * s;
            }
            let lw = &sl.layers[l];
            let mut dwx = vec![0.0; lw.wx.len()];
            matvec_backward(w.p(&lw.wx), &cache.x, &dz, &mut dwx, None);
            add(&mut grad, &lw.wx, &dwx);
            let mut dwh = vec![0.0; lw.wh.len()];
            let mut dhp = vec![0.0; h];
            matvec_backward(w.p(&lw.wh), h_prev, &dz, &mut dwh, Some(&mut dhp));
            add(&mut grad, &lw.wh, &dwh);
            dh_next[l] = dhp;
            let mut dwc = vec![0.0; lw.wc.len()];
            if l == 0 {
                matvec_backward(w.p(&lw.wc), &d, &dz, &mut dwc, Some(&mut dd));
                from_above = Vec::new();
            } else {
                let mut below = vec![0.0; h];
                matvec_backward(w.p(&lw.wc), &cache.acts[l - 1].h, &dz, &mut dwc, Some(&mut below));
                from_above = below;
            }
            add(&mut grad, &lw.wc, &dwc);
            if let Some(wd) = &lw.wd {
                let mut dwd = vec![0.0; wd.len()];
                matvec_backward(w.p(wd), &d, &dz, &mut dwd, Some(&mut dd));
                add(&mut grad, wd, &dwd);
            }
            add(&mut grad, &lw.b, &dz);
        }
    }

    if let Some(ec) = &enc_cache {
        encoder_backward(w, ec, &dd, &mut grad);
    }
    if !loss.total().is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NumericalBlowup("gradient"));
    }
    Ok((loss, grad))
}

/// Teacher-forced loss of one item without gradients.
pub fn item_loss(item: &TrainItem, w: &ModelWeights) -> Result<LossBreakdown> {
    let d = match &item.depth {
        Some(img) => encoder_forward(w, img).0,
        None => vec![0.0; w.config.depth_dim],
    };
    let outputs = forward_sequence(w, &d, &teacher_inputs(&item.tokens))?;
    total_loss(&outputs, &item.tokens)
}
