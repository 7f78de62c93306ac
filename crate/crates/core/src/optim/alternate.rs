use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use super::lbfgs::{lbfgs_minimize, LbfgsConfig};
use crate::energy::{EnergyConfig, EnergyProblem};
use crate::error::{Error, Result};
use crate::geom::{wrap_angle, Primitive};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AlternationConfig {
    /// Outer (S,T) / θ alternations.
    pub max_iter: usize,
    /// Stop when the squared parameter change of one alternation drops
    /// below this.
    pub delta_tol: f64,
    /// Optional soft upper bound on every side length. `log s` is then
    /// parameterized as `log c - softplus(log c - v)`, which is the identity
    /// well below `c` and never exceeds it.
    pub max_scale: Option<f64>,
    pub lbfgs: LbfgsConfig,
}

impl Default for AlternationConfig {
    fn default() -> Self {
        AlternationConfig {
            max_iter: 5,
            delta_tol: 0.01,
            max_scale: None,
            lbfgs: LbfgsConfig::default(),
        }
    }
}

impl AlternationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.delta_tol > 0.0) {
            return Err(Error::invalid("delta_tol must be positive"));
        }
        if let Some(c) = self.max_scale {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid("max_scale must be positive"));
            }
        }
        self.lbfgs.validate()
    }
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Map between unconstrained variables `v` and `log s`.
#[derive(Clone, Copy)]
struct ScaleMap(Option<f64>);

impl ScaleMap {
    fn log_scale(self, v: f64) -> f64 {
        match self.0 {
            None => v,
            Some(c) => c.ln() - softplus(c.ln() - v),
        }
    }

    /// `d log s / d v`.
    fn slope(self, v: f64) -> f64 {
        match self.0 {
            None => 1.0,
            Some(c) => sigmoid(c.ln() - v),
        }
    }

    fn inverse(self, log_s: f64) -> f64 {
        match self.0 {
            None => log_s,
            Some(c) => {
                // keep strictly below the cap
                let y = (c.ln() - log_s).max(1e-9);
                c.ln() - if y > 30.0 { y } else { y.exp_m1().ln() }
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct AlternationOutcome {
    pub primitive: Primitive,
    pub energy: f64,
    /// Outer alternations performed.
    pub iterations: usize,
    /// Squared parameter change of the last alternation.
    pub delta: f64,
    pub converged: bool,
    /// `E_w` at the start and after each alternation.
    pub energies: Vec<f64>,
}

fn with_scale_translation(base: &Primitive, x: &[f64], map: ScaleMap) -> Primitive {
    let mut p = *base;
    p.scale = Vector3::new(
        map.log_scale(x[0]).exp(),
        map.log_scale(x[1]).exp(),
        map.log_scale(x[2]).exp(),
    );
    p.translation = Vector3::new(x[3], x[4], x[5]);
    p
}

fn with_rotation(base: &Primitive, x: &[f64]) -> Primitive {
    let mut p = *base;
    p.rotation = Vector3::new(x[0], x[1], x[2]);
    p
}

/// Squared change between two parameter vectors, angles compared modulo 2π.
pub fn parameter_delta(a: &Primitive, b: &Primitive) -> f64 {
    let dr: f64 = (0..3)
        .map(|i| wrap_angle(a.rotation[i] - b.rotation[i]).powi(2))
        .sum();
    (a.scale - b.scale).norm_squared() + (a.translation - b.translation).norm_squared() + dr
}

/// Block-coordinate descent on `E_w`: (S, T) with θ fixed, then θ with
/// (S, T) fixed, repeated until the parameters settle.
///
/// Scale is optimized as `log S`. All three Euler angles are free; the
/// returned angles are wrapped into `(-π, π]` and flagged where nonzero.
pub fn alternate_fit_problem(
    prim0: &Primitive,
    problem: &EnergyProblem,
    cfg: &AlternationConfig,
) -> Result<AlternationOutcome> {
    cfg.validate()?;
    prim0.validate()?;
    let mut current = *prim0;
    current.axis_flags = [true; 3];
    let mut energies = vec![problem.energy(&current)];
    let mut delta = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iter {
        iterations += 1;
        let start = current;

        let map = ScaleMap(cfg.max_scale);
        let x0 = [
            map.inverse(current.scale.x.ln()),
            map.inverse(current.scale.y.ln()),
            map.inverse(current.scale.z.ln()),
            current.translation.x,
            current.translation.y,
            current.translation.z,
        ];
        let base = current;
        let st = lbfgs_minimize(
            |x| {
                let p = with_scale_translation(&base, x, map);
                let (e, g) = problem.energy_and_gradient(&p);
                let ds = g.d_scale.component_mul(&p.scale);
                let ds = [0, 1, 2].map(|i| ds[i] * map.slope(x[i]));
                (e, vec![ds[0], ds[1], ds[2], g.d_translation.x, g.d_translation.y, g.d_translation.z])
            },
            &x0,
            &cfg.lbfgs,
        )?;
        current = with_scale_translation(&base, &st.x, map);

        let base = current;
        let rot = lbfgs_minimize(
            |x| {
                let p = with_rotation(&base, x);
                let (e, g) = problem.energy_and_gradient(&p);
                (e, g.d_rotation.iter().copied().collect())
            },
            current.rotation.as_slice(),
            &cfg.lbfgs,
        )?;
        current = with_rotation(&base, &rot.x);
        for i in 0..3 {
            current.rotation[i] = wrap_angle(current.rotation[i]);
        }

        energies.push(rot.f);
        delta = parameter_delta(&start, &current);
        if delta < cfg.delta_tol {
            break;
        }
    }

    let mut primitive = current;
    primitive.axis_flags = [0, 1, 2].map(|i| primitive.rotation[i] != 0.0);
    let energy = problem.energy(&primitive);
    Ok(AlternationOutcome {
        primitive,
        energy,
        iterations,
        delta,
        converged: delta < cfg.delta_tol,
        energies,
    })
}

/// [`alternate_fit_problem`] on freshly prepared positive and free-space sets.
pub fn alternate_fit(
    prim0: &Primitive,
    q: &[Vector3<f64>],
    qneg: &[Vector3<f64>],
    energy: &EnergyConfig,
    cfg: &AlternationConfig,
) -> Result<AlternationOutcome> {
    let problem = EnergyProblem::new(q, qneg, energy)?;
    alternate_fit_problem(prim0, &problem, cfg)
}
