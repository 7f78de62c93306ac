use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{mirror_primitive, Axis, Plane, Primitive};
use crate::parser::PrimitiveSet;

/// Width of the network input vector built from a token.
pub const INPUT_DIM: usize = 8;

/// One axis-step: scale and translation along `axis` (normalized), the stop
/// flag, and the rotation about `axis` as a fraction of π with its flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Token {
    pub s: f64,
    pub t: f64,
    pub e: bool,
    pub r: f64,
    pub a: bool,
    pub axis: Axis,
}

impl Token {
    /// `[s, t, e, r, a, one-hot(axis)]`.
    pub fn input(&self) -> [f64; INPUT_DIM] {
        let mut x = [0.0; INPUT_DIM];
        x[0] = self.s;
        x[1] = self.t;
        x[2] = f64::from(u8::from(self.e));
        x[3] = self.r;
        x[4] = f64::from(u8::from(self.a));
        x[5 + self.axis.index()] = 1.0;
        x
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TokenSequence {
    pub tokens: Vec<Token>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// The three tokens of the first primitive.
    pub fn first_primitive(&self) -> Option<[Token; 3]> {
        (self.tokens.len() >= 3).then(|| [self.tokens[0], self.tokens[1], self.tokens[2]])
    }
}

/// Dataset-wide mean and standard deviation of side lengths and of center
/// coordinates. Rotations are not standardized; they are stored as θ/π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub s_mean: f64,
    pub s_std: f64,
    pub t_mean: f64,
    pub t_std: f64,
}

impl Stats {
    pub fn validate(&self) -> Result<()> {
        if !(self.s_std > 0.0 && self.s_std.is_finite()) {
            return Err(Error::DegenerateStats("scale standard deviation"));
        }
        if !(self.t_std > 0.0 && self.t_std.is_finite()) {
            return Err(Error::DegenerateStats("translation standard deviation"));
        }
        if !(self.s_mean.is_finite() && self.t_mean.is_finite()) {
            return Err(Error::DegenerateStats("non-finite mean"));
        }
        Ok(())
    }

    /// Statistics over the primitives that [`tokenize`] would emit.
    pub fn fit<'a>(sets: impl IntoIterator<Item = &'a PrimitiveSet>) -> Result<Stats> {
        let (mut s, mut t) = (Vec::new(), Vec::new());
        for set in sets {
            for p in sequence_primitives(set) {
                s.extend(p.scale.iter());
                t.extend(p.translation.iter());
            }
        }
        if s.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let moments = |v: &[f64]| {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / v.len() as f64;
            (m, var.sqrt())
        };
        let (s_mean, s_std) = moments(&s);
        let (t_mean, t_std) = moments(&t);
        let stats = Stats {
            s_mean,
            s_std,
            t_mean,
            t_std,
        };
        stats.validate()?;
        Ok(stats)
    }
}

/// Primitives in sequence order: one representative per mirrored pair (the
/// one with the smaller x center), sorted by decreasing center height, ties
/// by increasing x then y.
pub fn sequence_primitives(set: &PrimitiveSet) -> Vec<Primitive> {
    let n = set.primitives.len();
    let mut keep = vec![true; n];
    for j in 0..n {
        let Some(Some(i)) = set.mirror_of.get(j).copied() else {
            continue;
        };
        if i >= n || !keep[i] || !keep[j] {
            continue;
        }
        let (xi, xj) = (set.primitives[i].translation.x, set.primitives[j].translation.x);
        if xj < xi {
            keep[i] = false;
        } else {
            keep[j] = false;
        }
    }
    let mut prims: Vec<Primitive> = (0..n).filter(|&i| keep[i]).map(|i| set.primitives[i]).collect();
    prims.sort_by(|a, b| {
        b.translation
            .z
            .total_cmp(&a.translation.z)
            .then(a.translation.x.total_cmp(&b.translation.x))
            .then(a.translation.y.total_cmp(&b.translation.y))
            .then(Ordering::Equal)
    });
    prims
}

/// Three tokens per primitive (x, y, z axis-steps) in sequence order; the
/// last token carries the stop flag.
pub fn tokenize(set: &PrimitiveSet, stats: &Stats) -> Result<TokenSequence> {
    stats.validate()?;
    let prims = sequence_primitives(set);
    if prims.is_empty() {
        return Err(Error::EmptyPrimitiveSet);
    }
    let mut tokens = Vec::with_capacity(prims.len() * 3);
    for p in &prims {
        for axis in Axis::ALL {
            let i = axis.index();
            let a = p.axis_flags[i] && p.rotation[i] != 0.0;
            tokens.push(Token {
                s: (p.scale[i] - stats.s_mean) / stats.s_std,
                t: (p.translation[i] - stats.t_mean) / stats.t_std,
                e: false,
                r: if a { p.rotation[i] / PI } else { 0.0 },
                a,
                axis,
            });
        }
    }
    if let Some(last) = tokens.last_mut() {
        last.e = true;
    }
    Ok(TokenSequence { tokens })
}

/// Smallest side length produced by decoding; generated scales can be
/// non-positive.
pub const MIN_DECODED_SCALE: f64 = 1e-4;

/// Inverse of [`tokenize`]. A trailing partial primitive is dropped with a
/// warning. With a symmetry plane, every primitive that does not straddle it
/// gains its mirror image.
pub fn detokenize(seq: &TokenSequence, stats: &Stats, symmetry: Option<&Plane>) -> PrimitiveSet {
    let whole = seq.tokens.len() / 3 * 3;
    if whole < seq.tokens.len() {
        log::warn!(
            "dropping {} trailing tokens of an incomplete primitive",
            seq.tokens.len() - whole
        );
    }
    let mut prims = Vec::new();
    for chunk in seq.tokens[..whole].chunks(3) {
        let mut scale = Vector3::zeros();
        let mut translation = Vector3::zeros();
        let mut rotation = Vector3::zeros();
        // tokens carry their own axis; out-of-order chunks still decode
        for tok in chunk {
            let i = tok.axis.index();
            scale[i] = (tok.s * stats.s_std + stats.s_mean).max(MIN_DECODED_SCALE);
            translation[i] = tok.t * stats.t_std + stats.t_mean;
            rotation[i] = if tok.a { crate::geom::wrap_angle(tok.r * PI) } else { 0.0 };
        }
        prims.push(Primitive::new(scale, translation, rotation));
    }
    let mut set = PrimitiveSet::new(prims);
    if let Some(plane) = symmetry {
        let n = set.primitives.len();
        for i in 0..n {
            let p = set.primitives[i];
            let b = p.bounds();
            let k = plane.axis.index();
            if b.min[k] < plane.offset && b.max[k] > plane.offset {
                continue;
            }
            let mut m = mirror_primitive(&p, plane);
            m.symmetric = true;
            set.primitives[i].symmetric = true;
            set.primitives.push(m);
            set.fitted.push(Vec::new());
            set.mirror_of.push(Some(i));
        }
        set.symmetry_plane = Some(*plane);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{random_cuboid, rng};
    use rand::Rng;

    fn unit_stats() -> Stats {
        Stats {
            s_mean: 0.0,
            s_std: 1.0,
            t_mean: 0.0,
            t_std: 1.0,
        }
    }

    #[test]
    fn single_primitive_gives_three_tokens() {
        let p = Primitive::axis_aligned(Vector3::new(1.0, 2.0, 3.0), Vector3::new(0.1, 0.2, 0.3));
        let seq = tokenize(&PrimitiveSet::new(vec![p]), &unit_stats()).unwrap();
        assert_eq!(seq.len(), 3);
        assert!(seq.tokens.iter().all(|t| !t.a));
        assert_eq!(seq.tokens.iter().map(|t| t.e).collect::<Vec<_>>(), vec![false, false, true]);
        assert_eq!(seq.tokens[1].input(), [2.0, 0.2, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn order_follows_height() {
        let low = Primitive::axis_aligned(Vector3::repeat(1.0), Vector3::new(0.0, 0.0, 0.0));
        let high = Primitive::axis_aligned(Vector3::repeat(2.0), Vector3::new(0.0, 0.0, 5.0));
        let a = tokenize(&PrimitiveSet::new(vec![low, high]), &unit_stats()).unwrap();
        let b = tokenize(&PrimitiveSet::new(vec![high, low]), &unit_stats()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.tokens[0].s, 2.0);
    }

    #[test]
    fn zero_spread_is_rejected() {
        let p = Primitive::axis_aligned(Vector3::repeat(1.0), Vector3::repeat(1.0));
        assert!(matches!(Stats::fit([&PrimitiveSet::new(vec![p])]), Err(Error::DegenerateStats(_))));
        let bad = Stats { s_std: 0.0, ..unit_stats() };
        assert!(tokenize(&PrimitiveSet::new(vec![p]), &bad).is_err());
    }

    #[test]
    fn round_trip_recovers_parameters() {
        let mut r = rng(12);
        for _ in 0..50 {
            let n = r.random_range(1..6);
            let prims: Vec<_> = (0..n)
                .map(|_| {
                    let rot = r.random_bool(0.5);
                    random_cuboid(&mut r, rot)
                })
                .collect();
            let set = PrimitiveSet::new(prims);
            let stats = Stats {
                s_mean: r.random_range(0.1..1.0),
                s_std: r.random_range(0.1..1.0),
                t_mean: r.random_range(-1.0..1.0),
                t_std: r.random_range(0.1..1.0),
            };
            let back = detokenize(&tokenize(&set, &stats).unwrap(), &stats, None);
            let want = sequence_primitives(&set);
            assert_eq!(back.len(), want.len());
            for (a, b) in back.primitives.iter().zip(&want) {
                assert!((a.scale - b.scale).amax() < 1e-9);
                assert!((a.translation - b.translation).amax() < 1e-9);
                assert!((a.rotation - b.rotation).amax() < 1e-9);
            }
        }
    }

    #[test]
    fn mirrored_halves_are_dropped_and_restored() {
        let plane = Plane::new(Axis::X, 0.0);
        let leg = Primitive::axis_aligned(Vector3::new(0.1, 0.1, 1.0), Vector3::new(-0.5, 0.0, 0.5));
        let top = Primitive::axis_aligned(Vector3::new(1.2, 0.6, 0.1), Vector3::new(0.0, 0.0, 1.05));
        let mut set = PrimitiveSet::new(vec![top, mirror_primitive(&leg, &plane), leg]);
        set.mirror_of[2] = Some(1);
        let seq = tokenize(&set, &unit_stats()).unwrap();
        assert_eq!(seq.len(), 6);
        assert_eq!(seq.tokens[3].t, -0.5);
        let back = detokenize(&seq, &unit_stats(), Some(&plane));
        assert_eq!(back.len(), 3);
        assert_eq!(back.mirror_of, vec![None, None, Some(1)]);
        assert!((back.primitives[2].translation.x - 0.5).abs() < 1e-12);
    }

    #[test]
    fn partial_tail_is_dropped() {
        let p = Primitive::axis_aligned(Vector3::new(1.0, 2.0, 3.0), Vector3::zeros());
        let mut seq = tokenize(&PrimitiveSet::new(vec![p]), &unit_stats()).unwrap();
        seq.tokens.push(seq.tokens[0]);
        assert_eq!(detokenize(&seq, &unit_stats(), None).len(), 1);
    }
}
