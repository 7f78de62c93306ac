//! Valid (unpadded) 2D convolution, 2×2 max pooling and dense layers on
//! row-major `(channels, height, width)` buffers, with backward passes.

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Dims {
    pub fn new(c: usize, h: usize, w: usize) -> Self {
        Dims { c, h, w }
    }

    pub fn len(&self) -> usize {
        self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Square-kernel convolution shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub c_in: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
}

impl ConvShape {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.k * self.k
    }

    pub fn out_dims(&self, input: Dims) -> Dims {
        Dims::new(
            self.c_out,
            (input.h - self.k) / self.stride + 1,
            (input.w - self.k) / self.stride + 1,
        )
    }
}

pub fn conv2d(x: &[f64], dims: Dims, shape: ConvShape, weight: &[f64], bias: &[f64]) -> (Vec<f64>, Dims) {
    let od = shape.out_dims(dims);
    let k = shape.k;
    let mut out = vec![0.0; od.len()];
    for o in 0..shape.c_out {
        for i in 0..od.h {
            for j in 0..od.w {
                let mut acc = bias[o];
                for c in 0..shape.c_in {
                    let wb = ((o * shape.c_in + c) * k) * k;
                    let xb = c * dims.h * dims.w;
                    for u in 0..k {
                        let row = xb + (i * shape.stride + u) * dims.w + j * shape.stride;
                        let wrow = wb + u * k;
                        for v in 0..k {
                            acc += weight[wrow + v] * x[row + v];
                        }
                    }
                }
                out[(o * od.h + i) * od.w + j] = acc;
            }
        }
    }
    (out, od)
}

/// Accumulates weight and bias gradients and returns the input gradient.
pub fn conv2d_backward(
    x: &[f64],
    dims: Dims,
    shape: ConvShape,
    weight: &[f64],
    dout: &[f64],
    dweight: &mut [f64],
    dbias: &mut [f64],
) -> Vec<f64> {
    let od = shape.out_dims(dims);
    let k = shape.k;
    let mut dx = vec![0.0; dims.len()];
    for o in 0..shape.c_out {
        for i in 0..od.h {
            for j in 0..od.w {
                let g = dout[(o * od.h + i) * od.w + j];
                if g == 0.0 {
                    continue;
                }
                dbias[o] += g;
                for c in 0..shape.c_in {
                    let wb = ((o * shape.c_in + c) * k) * k;
                    let xb = c * dims.h * dims.w;
                    for u in 0..k {
                        let row = xb + (i * shape.stride + u) * dims.w + j * shape.stride;
                        let wrow = wb + u * k;
                        for v in 0..k {
                            dweight[wrow + v] += g * x[row + v];
                            dx[row + v] += g * weight[wrow + v];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2×2 max pooling with stride 2 (odd trailing rows/columns dropped).
/// Returns the pooled values and the flat input index of each maximum.
pub fn maxpool2(x: &[f64], dims: Dims) -> (Vec<f64>, Vec<usize>, Dims) {
    let od = Dims::new(dims.c, dims.h / 2, dims.w / 2);
    let mut out = Vec::with_capacity(od.len());
    let mut arg = Vec::with_capacity(od.len());
    for c in 0..dims.c {
        for i in 0..od.h {
            for j in 0..od.w {
                let mut best = usize::MAX;
                for u in 0..2 {
                    for v in 0..2 {
                        let idx = (c * dims.h + 2 * i + u) * dims.w + 2 * j + v;
                        // first maximum wins ties
                        if best == usize::MAX || x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    (out, arg, od)
}

pub fn maxpool2_backward(dout: &[f64], arg: &[usize], in_len: usize) -> Vec<f64> {
    let mut dx = vec![0.0; in_len];
    for (g, &i) in dout.iter().zip(arg) {
        dx[i] += g;
    }
    dx
}

/// Mean over non-overlapping `f × f` blocks of a single-channel image.
pub fn avgpool(x: &[f64], h: usize, w: usize, f: usize) -> Vec<f64> {
    let (oh, ow) = (h / f, w / f);
    let norm = 1.0 / (f * f) as f64;
    let mut out = vec![0.0; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut s = 0.0;
            for u in 0..f {
                for v in 0..f {
                    s += x[(i * f + u) * w + j * f + v];
                }
            }
            out[i * ow + j] = s * norm;
        }
    }
    out
}

pub const LEAK: f64 = 0.1;

pub fn leaky_relu(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v *= LEAK;
        }
    }
}

/// Gradient through a leaky ReLU given its output.
pub fn leaky_relu_backward(out: &[f64], dout: &mut [f64]) {
    for (g, &o) in dout.iter_mut().zip(out) {
        if o < 0.0 {
            *g *= LEAK;
        }
    }
}

/// `W x + b` with `W` row-major `(rows, cols)`.
pub fn dense(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let cols = x.len();
    b.iter()
        .enumerate()
        .map(|(r, &bias)| {
            let row = &w[r * cols..(r + 1) * cols];
            bias + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect()
}

/// Accumulates `dW += dy xᵀ`, `db += dy` and returns `Wᵀ dy`.
pub fn dense_backward(w: &[f64], x: &[f64], dy: &[f64], dw: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let cols = x.len();
    let mut dx = vec![0.0; cols];
    for (r, &g) in dy.iter().enumerate() {
        db[r] += g;
        if g == 0.0 {
            continue;
        }
        let row = &w[r * cols..(r + 1) * cols];
        let drow = &mut dw[r * cols..(r + 1) * cols];
        for c in 0..cols {
            drow[c] += g * x[c];
            dx[c] += g * row[c];
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::rng;
    use rand::Rng;

    fn random(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng(seed);
        (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
    }

    #[test]
    fn conv_matches_naive_sliding_window() {
        let dims = Dims::new(2, 8, 8);
        let shape = ConvShape { c_in: 2, c_out: 3, k: 3, stride: 2 };
        let x = random(dims.len(), 1);
        let w = random(shape.weight_len(), 2);
        let b = random(3, 3);
        let (out, od) = conv2d(&x, dims, shape, &w, &b);
        assert_eq!((od.h, od.w), (3, 3));
        let at = |c: usize, i: usize, j: usize| x[(c * 8 + i) * 8 + j];
        for o in 0..3 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut s = b[o];
                    for c in 0..2 {
                        for u in 0..3 {
                            for v in 0..3 {
                                s += w[((o * 2 + c) * 3 + u) * 3 + v] * at(c, 2 * i + u, 2 * j + v);
                            }
                        }
                    }
                    assert!((out[(o * 3 + i) * 3 + j] - s).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_backward_matches_finite_differences() {
        let dims = Dims::new(1, 4, 4);
        let shape = ConvShape { c_in: 1, c_out: 1, k: 2, stride: 1 };
        let x = random(dims.len(), 4);
        let w = random(shape.weight_len(), 5);
        let b = vec![0.3];
        let up = random(9, 6);
        let loss = |x: &[f64], w: &[f64], b: &[f64]| {
            let (o, _) = conv2d(x, dims, shape, w, b);
            o.iter().zip(&up).map(|(a, u)| a * a * u).sum::<f64>()
        };
        let (o, _) = conv2d(&x, dims, shape, &w, &b);
        let dout: Vec<f64> = o.iter().zip(&up).map(|(a, u)| 2.0 * a * u).collect();
        let mut dw = vec![0.0; w.len()];
        let mut db = vec![0.0; 1];
        let dx = conv2d_backward(&x, dims, shape, &w, &dout, &mut dw, &mut db);
        let h = 1e-6;
        let check = |analytic: f64, plus: f64, minus: f64| {
            let fd = (plus - minus) / (2.0 * h);
            assert!((analytic - fd).abs() <= 1e-6 * (1.0 + fd.abs()), "{analytic} vs {fd}");
        };
        for i in 0..w.len() {
            let (mut a, mut m) = (w.clone(), w.clone());
            a[i] += h;
            m[i] -= h;
            check(dw[i], loss(&x, &a, &b), loss(&x, &m, &b));
        }
        for i in 0..x.len() {
            let (mut a, mut m) = (x.clone(), x.clone());
            a[i] += h;
            m[i] -= h;
            check(dx[i], loss(&a, &w, &b), loss(&m, &w, &b));
        }
        check(db[0], loss(&x, &w, &[b[0] + h]), loss(&x, &w, &[b[0] - h]));
    }

    #[test]
    fn pooling_routes_gradient_to_the_maximum() {
        let x = vec![1.0, 5.0, 2.0, 0.0, 3.0, 4.0, 9.0, 8.0, 7.0];
        let (out, arg, od) = maxpool2(&x, Dims::new(1, 3, 3));
        assert_eq!(out, vec![5.0]);
        assert_eq!(od, Dims::new(1, 1, 1));
        assert_eq!(maxpool2_backward(&[2.0], &arg, 9)[1], 2.0);
        assert_eq!(avgpool(&[1.0, 2.0, 3.0, 4.0], 2, 2, 2), vec![2.5]);
    }

    #[test]
    fn dense_backward_is_the_transpose() {
        let w = random(6, 7);
        let x = random(3, 8);
        let y = dense(&w, &[0.0, 0.0], &x);
        let mut dw = vec![0.0; 6];
        let mut db = vec![0.0; 2];
        let dx = dense_backward(&w, &x, &[1.0, 0.0], &mut dw, &mut db);
        assert_eq!(dx, w[..3].to_vec());
        assert_eq!(&dw[..3], &x[..]);
        assert_eq!(db, vec![1.0, 0.0]);
        assert!((y[0] - (0..3).map(|i| w[i] * x[i]).sum::<f64>()).abs() < 1e-15);
    }
}
