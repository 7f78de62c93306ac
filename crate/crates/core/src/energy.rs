//! Gaussian-field fitness energy of a cuboid against a point set.
//!
//! For a primitive with lattice samples `w_m = R(θ)·diag(S)·p_m + T` and a
//! target set `{q_n}` the energy is
//!
//! ```text
//! E = -V_p · Σ_{m,n} min(exp(-‖w_m - q_n‖² / σ²), ξ),   V_p = s_x·s_y·s_z / M
//! ```
//!
//! and the weighted energy against a free-space set is `E_w = E⁺ - α·E⁻`
//! with `α = clamp(gain·|Q|/|Q⁻|, α_min, α_max)`.
//!
//! Pairs whose kernel is at or above `ξ` are constant; they contribute
//! nothing to the gradient, including through `V_p`.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::{rotation_jacobian, CubeLattice, Primitive};

/// Pairs with `‖w - q‖² > CUTOFF · σ²` are skipped; their kernel is below
/// `e^-40 ≈ 4e-18`.
pub const CUTOFF: f64 = 40.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnergyConfig {
    /// Gaussian bandwidth, object units.
    pub sigma: f64,
    /// Kernel truncation in `(0, 1]`.
    pub xi: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub alpha_gain: f64,
    /// Lattice samples per axis; `M = m³`.
    pub lattice_per_axis: usize,
}

impl Default for EnergyConfig {
    fn default() -> Self {
        EnergyConfig {
            sigma: 2.0,
            xi: 0.9,
            alpha_min: 0.1,
            alpha_max: 10.0,
            alpha_gain: 5.0,
            lattice_per_axis: CubeLattice::DEFAULT_PER_AXIS,
        }
    }
}

impl EnergyConfig {
    pub fn with_sigma(self, sigma: f64) -> Self {
        EnergyConfig { sigma, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::invalid(format!("sigma must be positive, got {}", self.sigma)));
        }
        if !(self.xi > 0.0 && self.xi <= 1.0) {
            return Err(Error::invalid(format!("xi must be in (0, 1], got {}", self.xi)));
        }
        if self.alpha_min > self.alpha_max {
            return Err(Error::invalid("alpha_min exceeds alpha_max"));
        }
        if self.lattice_per_axis == 0 {
            return Err(Error::invalid("lattice needs at least one sample per axis"));
        }
        Ok(())
    }

    /// Relative weight of the free-space term for the given set sizes.
    pub fn alpha(&self, n_pos: usize, n_neg: usize) -> f64 {
        if n_neg == 0 {
            return self.alpha_max;
        }
        let ratio = n_pos as f64 / n_neg as f64 * self.alpha_gain;
        ratio.min(self.alpha_max).max(self.alpha_min)
    }
}

/// Partial derivatives of `E_w` with respect to the primitive parameters.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EnergyGradient {
    pub d_scale: Vector3<f64>,
    pub d_translation: Vector3<f64>,
    pub d_rotation: Vector3<f64>,
}

impl EnergyGradient {
    fn axpy(&mut self, a: f64, other: &EnergyGradient) {
        self.d_scale += other.d_scale * a;
        self.d_translation += other.d_translation * a;
        self.d_rotation += other.d_rotation * a;
    }

    pub fn is_finite(&self) -> bool {
        self.d_scale
            .iter()
            .chain(self.d_translation.iter())
            .chain(self.d_rotation.iter())
            .all(|v| v.is_finite())
    }
}

/// Target points bucketed on a uniform grid so that lattice samples only
/// visit neighbors inside the kernel cutoff.
#[derive(Debug, Clone)]
pub struct KernelField {
    points: Vec<[f64; 3]>,
    starts: Vec<usize>,
    origin: [f64; 3],
    cell: f64,
    dims: [usize; 3],
    inv_sigma2: f64,
    cutoff2: f64,
}

impl KernelField {
    pub fn new(points: &[Vector3<f64>], sigma: f64) -> Self {
        let cutoff2 = CUTOFF * sigma * sigma;
        let mut origin = [f64::INFINITY; 3];
        let mut hi = [f64::NEG_INFINITY; 3];
        for p in points {
            for a in 0..3 {
                origin[a] = origin[a].min(p[a]);
                hi[a] = hi[a].max(p[a]);
            }
        }
        if points.is_empty() {
            origin = [0.0; 3];
            hi = [0.0; 3];
        }
        let widest = (0..3).map(|a| hi[a] - origin[a]).fold(0.0, f64::max);
        let cell = cutoff2.sqrt().max(widest / 64.0).max(1e-12);
        let mut dims = [1usize; 3];
        for a in 0..3 {
            dims[a] = ((hi[a] - origin[a]) / cell).floor() as usize + 1;
        }
        let bin_of = |p: &Vector3<f64>| {
            let mut idx = [0usize; 3];
            for a in 0..3 {
                idx[a] = (((p[a] - origin[a]) / cell) as usize).min(dims[a] - 1);
            }
            (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
        };
        let nbins = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; nbins + 1];
        let bins: Vec<usize> = points.iter().map(bin_of).collect();
        for &b in &bins {
            counts[b + 1] += 1;
        }
        for i in 0..nbins {
            counts[i + 1] += counts[i];
        }
        let mut fill = counts.clone();
        let mut sorted = vec![[0.0; 3]; points.len()];
        // stable within a bin: keeps the accumulation order reproducible
        for (p, &b) in points.iter().zip(&bins) {
            sorted[fill[b]] = [p.x, p.y, p.z];
            fill[b] += 1;
        }
        KernelField {
            points: sorted,
            starts: counts,
            origin,
            cell,
            dims,
            inv_sigma2: 1.0 / (sigma * sigma),
            cutoff2,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn bin_range(&self, w: &Vector3<f64>) -> Option<[(usize, usize); 3]> {
        let r = self.cutoff2.sqrt();
        let mut out = [(0, 0); 3];
        for a in 0..3 {
            let lo = ((w[a] - r - self.origin[a]) / self.cell).floor();
            let hi = ((w[a] + r - self.origin[a]) / self.cell).floor();
            if hi < 0.0 || lo > (self.dims[a] - 1) as f64 {
                return None;
            }
            out[a] = (lo.max(0.0) as usize, (hi as usize).min(self.dims[a] - 1));
        }
        Some(out)
    }

    /// Visits all target points that may lie within the cutoff of `w`.
    #[inline]
    fn for_neighbors(&self, w: &Vector3<f64>, mut f: impl FnMut(&[f64; 3])) {
        let Some(range) = self.bin_range(w) else {
            return;
        };
        for i in range[0].0..=range[0].1 {
            for j in range[1].0..=range[1].1 {
                let row = (i * self.dims[1] + j) * self.dims[2];
                let start = self.starts[row + range[2].0];
                let end = self.starts[row + range[2].1 + 1];
                for q in &self.points[start..end] {
                    f(q);
                }
            }
        }
    }

    /// Energy and gradient of one primitive against this field.
    fn evaluate(
        &self,
        prim: &Primitive,
        lattice: &CubeLattice,
        xi: f64,
        want_grad: bool,
    ) -> (f64, EnergyGradient) {
        let m = lattice.len() as f64;
        let vp = prim.volume() / m;
        let r = prim.rotation_matrix();
        let jac = if want_grad {
            Some(rotation_jacobian(&prim.rotation))
        } else {
            None
        };
        let two_inv = 2.0 * self.inv_sigma2;

        let mut total = 0.0;
        let mut active_sum = 0.0;
        let mut grad = EnergyGradient::default();
        for p in lattice.points() {
            let sp = prim.scale.component_mul(p);
            let w = r * sp + prim.translation;
            let mut sum = 0.0;
            let mut gw = [0.0f64; 3];
            let mut active = 0.0;
            self.for_neighbors(&w, |q| {
                let d = [w.x - q[0], w.y - q[1], w.z - q[2]];
                let d2 = d[0] * d[0] + d[1] * d[1] + d[2] * d[2];
                if d2 > self.cutoff2 {
                    return;
                }
                let k = (-d2 * self.inv_sigma2).exp();
                if k >= xi {
                    sum += xi;
                } else {
                    sum += k;
                    if want_grad {
                        active += k;
                        let c = -k * two_inv;
                        gw[0] += c * d[0];
                        gw[1] += c * d[1];
                        gw[2] += c * d[2];
                    }
                }
            });
            total += sum;
            if let Some(jac) = &jac {
                active_sum += active;
                // dE/dw_m = -V_p · Σ ∂k/∂w
                let de_dw = Vector3::new(gw[0], gw[1], gw[2]) * (-vp);
                grad.d_translation += de_dw;
                let local = r.transpose() * de_dw;
                grad.d_scale += local.component_mul(p);
                for (k, jk) in jac.iter().enumerate() {
                    grad.d_rotation[k] += de_dw.dot(&(jk * sp));
                }
            }
        }
        if want_grad {
            let s = &prim.scale;
            let dvp = Vector3::new(s.y * s.z, s.x * s.z, s.x * s.y) / m;
            grad.d_scale -= dvp * active_sum;
        }
        (-vp * total, grad)
    }
}

/// A prepared weighted-energy problem: lattice, positive and free-space
/// fields, and the resulting `α`.
#[derive(Debug, Clone)]
pub struct EnergyProblem {
    pub cfg: EnergyConfig,
    pub alpha: f64,
    lattice: CubeLattice,
    positive: KernelField,
    negative: KernelField,
}

impl EnergyProblem {
    pub fn new(q: &[Vector3<f64>], qneg: &[Vector3<f64>], cfg: &EnergyConfig) -> Result<Self> {
        cfg.validate()?;
        if q.is_empty() {
            return Err(Error::EmptyTargetCloud);
        }
        Ok(EnergyProblem {
            cfg: *cfg,
            alpha: cfg.alpha(q.len(), qneg.len()),
            lattice: CubeLattice::new(cfg.lattice_per_axis),
            positive: KernelField::new(q, cfg.sigma),
            negative: KernelField::new(qneg, cfg.sigma),
        })
    }

    pub fn positive(&self, prim: &Primitive) -> f64 {
        self.positive.evaluate(prim, &self.lattice, self.cfg.xi, false).0
    }

    pub fn negative(&self, prim: &Primitive) -> f64 {
        if self.negative.is_empty() {
            return 0.0;
        }
        self.negative.evaluate(prim, &self.lattice, self.cfg.xi, false).0
    }

    pub fn energy(&self, prim: &Primitive) -> f64 {
        self.positive(prim) - self.alpha * self.negative(prim)
    }

    pub fn energy_and_gradient(&self, prim: &Primitive) -> (f64, EnergyGradient) {
        let (ep, mut g) = self.positive.evaluate(prim, &self.lattice, self.cfg.xi, true);
        if self.negative.is_empty() {
            return (ep, g);
        }
        let (en, gn) = self.negative.evaluate(prim, &self.lattice, self.cfg.xi, true);
        g.axpy(-self.alpha, &gn);
        (ep - self.alpha * en, g)
    }
}

/// `E⁺` of a primitive against `q`.
pub fn energy_positive(prim: &Primitive, q: &[Vector3<f64>], cfg: &EnergyConfig) -> Result<f64> {
    Ok(EnergyProblem::new(q, &[], cfg)?.positive(prim))
}

/// `E_w = E⁺ - α·E⁻`.
pub fn energy_weighted(
    prim: &Primitive,
    q: &[Vector3<f64>],
    qneg: &[Vector3<f64>],
    cfg: &EnergyConfig,
) -> Result<f64> {
    Ok(EnergyProblem::new(q, qneg, cfg)?.energy(prim))
}

/// Analytic gradient of [`energy_weighted`].
pub fn energy_gradient(
    prim: &Primitive,
    q: &[Vector3<f64>],
    qneg: &[Vector3<f64>],
    cfg: &EnergyConfig,
) -> Result<EnergyGradient> {
    let (_, g) = EnergyProblem::new(q, qneg, cfg)?.energy_and_gradient(prim);
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::rotation_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_positive(prim: &Primitive, q: &[Vector3<f64>], cfg: &EnergyConfig) -> f64 {
        let lattice = CubeLattice::new(cfg.lattice_per_axis);
        let r = rotation_matrix(&prim.rotation);
        let vp = prim.scale.x * prim.scale.y * prim.scale.z / lattice.len() as f64;
        let mut sum = 0.0;
        for p in lattice.points() {
            let w = r * Vector3::new(prim.scale.x * p.x, prim.scale.y * p.y, prim.scale.z * p.z)
                + prim.translation;
            for qn in q {
                let k = (-(w - qn).norm_squared() / (cfg.sigma * cfg.sigma)).exp();
                sum += k.min(cfg.xi);
            }
        }
        -vp * sum
    }

    fn random_prim(rng: &mut ChaCha8Rng) -> Primitive {
        let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
        Primitive::new(
            Vector3::new(u(0.5, 3.0), u(0.5, 3.0), u(0.5, 3.0)),
            Vector3::new(u(-1.0, 1.0), u(-1.0, 1.0), u(-1.0, 1.0)),
            Vector3::new(u(-1.5, 1.5), u(-1.5, 1.5), u(-1.5, 1.5)),
        )
    }

    fn random_points(rng: &mut ChaCha8Rng, n: usize, half: f64) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                    rng.random_range(-half..half),
                )
            })
            .collect()
    }

    #[test]
    fn single_sample_coincident_point_is_truncated() {
        let cfg = EnergyConfig {
            lattice_per_axis: 1,
            ..Default::default()
        };
        let prim = Primitive::axis_aligned(Vector3::repeat(1.0), Vector3::zeros());
        let e = energy_positive(&prim, &[Vector3::zeros()], &cfg).unwrap();
        assert!((e + 0.9).abs() < 1e-15);
    }

    #[test]
    fn single_sample_at_one_bandwidth() {
        let cfg = EnergyConfig {
            lattice_per_axis: 1,
            ..Default::default()
        };
        let prim = Primitive::axis_aligned(Vector3::repeat(1.0), Vector3::zeros());
        let e = energy_positive(&prim, &[Vector3::new(cfg.sigma, 0.0, 0.0)], &cfg).unwrap();
        assert!((e + (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_target_is_an_error() {
        let prim = Primitive::axis_aligned(Vector3::repeat(1.0), Vector3::zeros());
        let err = energy_positive(&prim, &[], &EnergyConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), "empty target cloud");
    }

    #[test]
    fn matches_naive_double_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = EnergyConfig::default();
        for _ in 0..20 {
            let prim = random_prim(&mut rng);
            let q = random_points(&mut rng, 50, 3.0);
            let fast = energy_positive(&prim, &q, &cfg).unwrap();
            let slow = naive_positive(&prim, &q, &cfg);
            assert!(((fast - slow) / slow).abs() < 1e-12, "{fast} vs {slow}");
        }
    }

    #[test]
    fn alpha_clamps() {
        let cfg = EnergyConfig::default();
        assert_eq!(cfg.alpha(1000, 1000), 5.0);
        assert_eq!(cfg.alpha(10, 10_000), 0.1);
        assert_eq!(cfg.alpha(10_000, 10), 10.0);
        assert_eq!(cfg.alpha(10, 0), 10.0);
    }

    #[test]
    fn empty_negative_set_leaves_positive_energy() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let prim = random_prim(&mut rng);
        let q = random_points(&mut rng, 30, 2.0);
        let cfg = EnergyConfig::default();
        assert_eq!(
            energy_weighted(&prim, &q, &[], &cfg).unwrap(),
            energy_positive(&prim, &q, &cfg).unwrap()
        );
    }

    #[test]
    fn weighted_energy_is_linear_in_alpha() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let prim = random_prim(&mut rng);
        let q = random_points(&mut rng, 40, 2.0);
        let qn = random_points(&mut rng, 40, 4.0);
        let base = EnergyConfig::default();
        let ep = energy_positive(&prim, &q, &base).unwrap();
        let en = energy_positive(&prim, &qn, &base).unwrap();
        for a in [0.5, 2.0, 7.0] {
            let cfg = EnergyConfig {
                alpha_min: a,
                alpha_max: a,
                ..base
            };
            let ew = energy_weighted(&prim, &q, &qn, &cfg).unwrap();
            assert!((ew - (ep - a * en)).abs() < 1e-12 * ep.abs().max(1.0));
        }
    }

    #[test]
    fn huge_sigma_saturates_every_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let prim = random_prim(&mut rng);
        let q = random_points(&mut rng, 25, 1.0);
        let cfg = EnergyConfig {
            sigma: 1e8,
            xi: 1.0,
            ..Default::default()
        };
        let e = energy_positive(&prim, &q, &cfg).unwrap();
        let closed = -prim.volume() / 343.0 * 343.0 * 25.0;
        assert!(((e - closed) / closed).abs() < 1e-12);
    }

    #[test]
    fn rigid_motion_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = EnergyConfig::default();
        for _ in 0..10 {
            let base = random_prim(&mut rng);
            // rotations about z compose additively, so the moved primitive stays expressible
            let prim = Primitive::new(base.scale, base.translation, Vector3::new(0.0, 0.0, base.rotation.z));
            let q = random_points(&mut rng, 40, 2.0);
            let e0 = energy_positive(&prim, &q, &cfg).unwrap();
            let a = rng.random_range(-1.0..1.0);
            let shift = Vector3::new(3.0, -2.0, 0.5);
            let rz = crate::geom::rot_z(a);
            let q2: Vec<_> = q.iter().map(|p| rz * p + shift).collect();
            let moved = Primitive::new(
                prim.scale,
                rz * prim.translation + shift,
                Vector3::new(0.0, 0.0, prim.rotation.z + a),
            );
            let e1 = energy_positive(&moved, &q2, &cfg).unwrap();
            assert!(e0 <= 0.0);
            assert!((e0 - e1).abs() < 1e-9 * e0.abs().max(1.0));
        }
    }

    #[test]
    fn fully_truncated_gradient_vanishes() {
        // every lattice sample sits within a tiny distance of every target
        let cfg = EnergyConfig {
            sigma: 1e6,
            ..Default::default()
        };
        let prim = Primitive::axis_aligned(Vector3::repeat(1.0), Vector3::zeros());
        let q = vec![Vector3::zeros(); 10];
        let g = energy_gradient(&prim, &q, &[], &cfg).unwrap();
        assert_eq!(g, EnergyGradient::default());
    }

    #[test]
    fn attraction_toward_distant_mass() {
        let cfg = EnergyConfig::default();
        let prim = Primitive::axis_aligned(Vector3::repeat(1.0), Vector3::zeros());
        let q = vec![Vector3::new(3.0, 0.0, 0.0)];
        let g = energy_gradient(&prim, &q, &[], &cfg).unwrap();
        assert!(g.d_translation.x < 0.0);
        let h = 1e-5;
        let mut a = prim;
        let mut b = prim;
        a.translation.x += h;
        b.translation.x -= h;
        let fd = (energy_positive(&a, &q, &cfg).unwrap() - energy_positive(&b, &q, &cfg).unwrap())
            / (2.0 * h);
        assert!(fd < 0.0);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let cfg = EnergyConfig::default();
        for _ in 0..20 {
            let prim = random_prim(&mut rng);
            // keep every pair below the truncation level
            let q: Vec<_> = random_points(&mut rng, 20, 3.0)
                .into_iter()
                .map(|p| p + Vector3::new(8.0, 0.0, 0.0))
                .collect();
            let qn = random_points(&mut rng, 20, 3.0)
                .into_iter()
                .map(|p| p - Vector3::new(8.0, 0.0, 0.0))
                .collect::<Vec<_>>();
            let g = energy_gradient(&prim, &q, &qn, &cfg).unwrap();
            let f = |p: &Primitive| energy_weighted(p, &q, &qn, &cfg).unwrap();
            let h = 1e-5;
            for k in 0..9 {
                let mut a = prim;
                let mut b = prim;
                let (field_a, field_b, analytic) = match k / 3 {
                    0 => (&mut a.scale, &mut b.scale, g.d_scale[k % 3]),
                    1 => (&mut a.translation, &mut b.translation, g.d_translation[k % 3]),
                    _ => (&mut a.rotation, &mut b.rotation, g.d_rotation[k % 3]),
                };
                field_a[k % 3] += h;
                field_b[k % 3] -= h;
                let fd = (f(&a) - f(&b)) / (2.0 * h);
                let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs()).max(1e-8);
                assert!(rel < 1e-5, "param {k}: fd {fd} vs analytic {analytic}");
            }
        }
    }
}
