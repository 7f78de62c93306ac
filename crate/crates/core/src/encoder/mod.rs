//! Depth-image encoder producing the conditioning vector `d`, and
//! nearest-neighbor retrieval over encoded training views.

pub mod conv;

use serde::{Deserialize, Serialize};

use self::conv::{
    avgpool, conv2d, conv2d_backward, dense, dense_backward, leaky_relu, leaky_relu_backward, maxpool2,
    maxpool2_backward, ConvShape, Dims,
};
use crate::error::{Error, Result};
use crate::seqgen::{BankEntry, EncoderSlots, ModelWeights, Token};

pub const DEPTH_SIZE: usize = 64;

/// Encoded depth image.
pub type DepthFeature = Vec<f64>;

/// 64×64 depth map, row-major, values in `[0, 1]`, background 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthImage {
    data: Vec<f64>,
}

impl DepthImage {
    /// Takes exactly 64×64 values; non-finite values become 0 and the rest
    /// are clamped to `[0, 1]`.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        if data.len() != DEPTH_SIZE * DEPTH_SIZE {
            return Err(Error::ShapeMismatch(format!(
                "depth image needs {} values, got {}",
                DEPTH_SIZE * DEPTH_SIZE,
                data.len()
            )));
        }
        Ok(DepthImage {
            data: data
                .into_iter()
                .map(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 })
                .collect(),
        })
    }

    /// Resamples a `width × height` grid to 64×64 (bilinear at pixel
    /// centers), then clamps like [`DepthImage::new`].
    pub fn resized(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        if width == 0 || height == 0 || values.len() != width * height {
            return Err(Error::ShapeMismatch(format!(
                "{} values for a {width}x{height} image",
                values.len()
            )));
        }
        if width == DEPTH_SIZE && height == DEPTH_SIZE {
            return Self::new(values.to_vec());
        }
        let at = |x: usize, y: usize| values[y * width + x];
        let sample = |pos: f64, n: usize, out: usize| {
            let p = ((pos + 0.5) * n as f64 / out as f64 - 0.5).clamp(0.0, (n - 1) as f64);
            let i = (p.floor() as usize).min(n - 1);
            let j = (i + 1).min(n - 1);
            (i, j, p - i as f64)
        };
        let mut data = Vec::with_capacity(DEPTH_SIZE * DEPTH_SIZE);
        for oy in 0..DEPTH_SIZE {
            let (y0, y1, fy) = sample(oy as f64, height, DEPTH_SIZE);
            for ox in 0..DEPTH_SIZE {
                let (x0, x1, fx) = sample(ox as f64, width, DEPTH_SIZE);
                let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
                let bottom = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
                data.push(top * (1.0 - fy) + bottom * fy);
            }
        }
        Self::new(data)
    }

    pub fn values(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.data[row * DEPTH_SIZE + col]
    }
}

const CONV: [ConvShape; 3] = [
    ConvShape { c_in: 1, c_out: 32, k: 7, stride: 2 },
    ConvShape { c_in: 32, c_out: 64, k: 5, stride: 2 },
    ConvShape { c_in: 64, c_out: 128, k: 3, stride: 2 },
];
const TINY_POOL: usize = 4;

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub(crate) enum EncoderCache {
    Full {
        input: Vec<f64>,
        a0: Vec<f64>,
        a1: Vec<f64>,
        arg1: Vec<usize>,
        p1: Vec<f64>,
        a2: Vec<f64>,
        arg2: Vec<usize>,
        p2: Vec<f64>,
        f0: Vec<f64>,
    },
    Tiny {
        pooled: Vec<f64>,
        f0: Vec<f64>,
    },
}

pub(crate) fn encoder_forward(w: &ModelWeights, img: &DepthImage) -> (Vec<f64>, EncoderCache) {
    match &w.slots.encoder {
        EncoderSlots::Full { conv, fc } => {
            let input = img.values().to_vec();
            let d0 = Dims::new(1, DEPTH_SIZE, DEPTH_SIZE);
            // 64 -> 29
            let (mut a0, d1) = conv2d(&input, d0, CONV[0], w.p(&conv[0].0), w.p(&conv[0].1));
            leaky_relu(&mut a0);
            // 29 -> 13 -> pool 6
            let (mut a1, d2) = conv2d(&a0, d1, CONV[1], w.p(&conv[1].0), w.p(&conv[1].1));
            leaky_relu(&mut a1);
            let (p1, arg1, d3) = maxpool2(&a1, d2);
            // 6 -> 2 -> pool 1
            let (mut a2, d4) = conv2d(&p1, d3, CONV[2], w.p(&conv[2].0), w.p(&conv[2].1));
            leaky_relu(&mut a2);
            let (p2, arg2, _) = maxpool2(&a2, d4);
            let mut f0 = dense(w.p(&fc[0].0), w.p(&fc[0].1), &p2);
            leaky_relu(&mut f0);
            let d = dense(w.p(&fc[1].0), w.p(&fc[1].1), &f0);
            let cache = EncoderCache::Full {
                input,
                a0,
                a1,
                arg1,
                p1,
                a2,
                arg2,
                p2,
                f0,
            };
            (d, cache)
        }
        EncoderSlots::Tiny { fc } => {
            let pooled = avgpool(img.values(), DEPTH_SIZE, DEPTH_SIZE, TINY_POOL);
            let mut f0 = dense(w.p(&fc[0].0), w.p(&fc[0].1), &pooled);
            leaky_relu(&mut f0);
            let d = dense(w.p(&fc[1].0), w.p(&fc[1].1), &f0);
            (d, EncoderCache::Tiny { pooled, f0 })
        }
    }
}

/// Accumulates encoder parameter gradients for an upstream gradient on `d`.
pub(crate) fn encoder_backward(w: &ModelWeights, cache: &EncoderCache, dd: &[f64], grad: &mut [f64]) {
    let fc_back = |fc: &[(std::ops::Range<usize>, std::ops::Range<usize>); 2], input: &[f64], f0: &[f64], grad: &mut [f64]| {
        let (w1, b1) = (&fc[1].0, &fc[1].1);
        let mut dw = vec![0.0; w1.len()];
        let mut db = vec![0.0; b1.len()];
        let mut df0 = dense_backward(w.p(w1), f0, dd, &mut dw, &mut db);
        add(grad, w1, &dw);
        add(grad, b1, &db);
        leaky_relu_backward(f0, &mut df0);
        let (w0, b0) = (&fc[0].0, &fc[0].1);
        let mut dw = vec![0.0; w0.len()];
        let mut db = vec![0.0; b0.len()];
        let dx = dense_backward(w.p(w0), input, &df0, &mut dw, &mut db);
        add(grad, w0, &dw);
        add(grad, b0, &db);
        dx
    };
    match (&w.slots.encoder, cache) {
        (
            EncoderSlots::Full { conv, fc },
            EncoderCache::Full {
                input,
                a0,
                a1,
                arg1,
                p1,
                a2,
                arg2,
                p2,
                f0,
            },
        ) => {
            let mut dp2 = fc_back(fc, p2, f0, grad);
            let _ = &mut dp2;
            let d0 = Dims::new(1, DEPTH_SIZE, DEPTH_SIZE);
            let d1 = CONV[0].out_dims(d0);
            let d2 = CONV[1].out_dims(d1);
            let d3 = Dims::new(d2.c, d2.h / 2, d2.w / 2);
            let mut da2 = maxpool2_backward(&dp2, arg2, a2.len());
            leaky_relu_backward(a2, &mut da2);
            let mut dw = vec![0.0; conv[2].0.len()];
            let mut db = vec![0.0; conv[2].1.len()];
            let dp1 = conv2d_backward(p1, d3, CONV[2], w.p(&conv[2].0), &da2, &mut dw, &mut db);
            add(grad, &conv[2].0, &dw);
            add(grad, &conv[2].1, &db);
            let mut da1 = maxpool2_backward(&dp1, arg1, a1.len());
            leaky_relu_backward(a1, &mut da1);
            let mut dw = vec![0.0; conv[1].0.len()];
            let mut db = vec![0.0; conv[1].1.len()];
            let mut da0 = conv2d_backward(a0, d1, CONV[1], w.p(&conv[1].0), &da1, &mut dw, &mut db);
            add(grad, &conv[1].0, &dw);
            add(grad, &conv[1].1, &db);
            leaky_relu_backward(a0, &mut da0);
            let mut dw = vec![0.0; conv[0].0.len()];
            let mut db = vec![0.0; conv[0].1.len()];
            conv2d_backward(input, d0, CONV[0], w.p(&conv[0].0), &da0, &mut dw, &mut db);
            add(grad, &conv[0].0, &dw);
            add(grad, &conv[0].1, &db);
        }
        (EncoderSlots::Tiny { fc }, EncoderCache::Tiny { pooled, f0 }) => {
            fc_back(fc, pooled, f0, grad);
        }
        _ => unreachable!("encoder cache does not match the weights"),
    }
}

fn add(grad: &mut [f64], r: &std::ops::Range<usize>, v: &[f64]) {
    for (g, x) in grad[r.clone()].iter_mut().zip(v) {
        *g += x;
    }
}

/// The conditioning feature of a depth image.
pub fn encode_depth(img: &DepthImage, w: &ModelWeights) -> Result<DepthFeature> {
    let (d, _) = encoder_forward(w, img);
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalBlowup("depth encoder"));
    }
    Ok(d)
}

/// Index of the Euclidean-nearest bank feature (lowest index on ties).
/// Entries whose feature width differs from `d` are skipped.
pub fn nearest_entry(d: &[f64], bank: &[BankEntry]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, e) in bank.iter().enumerate() {
        if e.feature.len() != d.len() {
            continue;
        }
        let v: f64 = e.feature.iter().zip(d).map(|(a, b)| (a - b).powi(2)).sum();
        if best.is_none_or(|(_, b)| v < b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyBank)
}

/// First-primitive tokens of the nearest bank entry.
pub fn nn_retrieve(d: &[f64], bank: &[BankEntry]) -> Result<[Token; 3]> {
    Ok(bank[nearest_entry(d, bank)?].first)
}
