use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LbfgsConfig {
    /// Number of stored `(s, y)` correction pairs.
    pub memory: usize,
    pub max_iterations: usize,
    /// Stop once `‖g‖∞` falls below this.
    pub grad_tol: f64,
    /// Stop once an accepted step changes `f` by less than this, relative.
    pub f_rel_tol: f64,
    /// Armijo sufficient-decrease constant.
    pub armijo_c: f64,
    /// Backtracking trials (step halved each time) per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsConfig {
    fn default() -> Self {
        LbfgsConfig {
            memory: 10,
            max_iterations: 100,
            grad_tol: 1e-6,
            f_rel_tol: 1e-10,
            armijo_c: 1e-4,
            max_line_search: 50,
        }
    }
}

impl LbfgsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.memory == 0 {
            return Err(Error::invalid("L-BFGS memory must be at least 1"));
        }
        if !(self.grad_tol > 0.0 && self.f_rel_tol > 0.0) {
            return Err(Error::invalid("L-BFGS tolerances must be positive"));
        }
        if !(self.armijo_c > 0.0 && self.armijo_c < 1.0) {
            return Err(Error::invalid("Armijo constant must be in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    GradientTolerance,
    FunctionTolerance,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub termination: Termination,
    /// Objective at the start and after every accepted step.
    pub trace: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn finite(f: f64, g: &[f64]) -> bool {
    f.is_finite() && g.iter().all(|v| v.is_finite())
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// Two-loop recursion: returns `-H·g` for the current inverse-Hessian
/// estimate.
fn direction(history: &VecDeque<Pair>, g: &[f64]) -> Vec<f64> {
    let mut q = g.to_vec();
    let mut alphas = vec![0.0; history.len()];
    for (i, p) in history.iter().enumerate().rev() {
        let a = p.rho * dot(&p.s, &q);
        alphas[i] = a;
        for (qj, yj) in q.iter_mut().zip(&p.y) {
            *qj -= a * yj;
        }
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (i, p) in history.iter().enumerate() {
        let b = p.rho * dot(&p.y, &q);
        for (qj, sj) in q.iter_mut().zip(&p.s) {
            *qj += (alphas[i] - b) * sj;
        }
    }
    q.iter_mut().for_each(|v| *v = -*v);
    q
}

/// Limited-memory BFGS with Armijo backtracking.
///
/// `fg` returns the objective and its gradient at a point. Accepted steps
/// never increase the objective.
pub fn lbfgs_minimize<F>(mut fg: F, x0: &[f64], cfg: &LbfgsConfig) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    cfg.validate()?;
    let mut x = x0.to_vec();
    let (mut f, mut g) = fg(&x);
    let mut evaluations = 1;
    if !finite(f, &g) {
        return Err(Error::NonFiniteObjective);
    }
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(cfg.memory);
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;
    let mut trace = vec![f];

    while iterations < cfg.max_iterations {
        if g.iter().fold(0.0f64, |m, v| m.max(v.abs())) <= cfg.grad_tol {
            termination = Termination::GradientTolerance;
            break;
        }
        let mut d = direction(&history, &g);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }

        let mut accepted = None;
        // one retry along steepest descent when the quasi-Newton step fails
        for attempt in 0..2 {
            let mut step = if history.is_empty() {
                (1.0 / dot(&g, &g).sqrt()).min(1.0)
            } else {
                1.0
            };
            for _ in 0..cfg.max_line_search {
                let xn: Vec<f64> = x.iter().zip(&d).map(|(xi, di)| xi + step * di).collect();
                let (fn_, gn) = fg(&xn);
                evaluations += 1;
                if finite(fn_, &gn) && fn_ <= f + cfg.armijo_c * step * slope {
                    accepted = Some((xn, fn_, gn));
                    break;
                }
                step *= 0.5;
            }
            if accepted.is_some() || attempt == 1 || history.is_empty() {
                break;
            }
            history.clear();
            d = g.iter().map(|v| -v).collect();
            slope = dot(&g, &d);
        }
        let Some((xn, fn_, gn)) = accepted else {
            termination = Termination::LineSearchFailed;
            break;
        };
        iterations += 1;

        let s: Vec<f64> = xn.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            if history.len() == cfg.memory {
                history.pop_front();
            }
            history.push_back(Pair { s, y, rho: 1.0 / sy });
        }
        let change = (f - fn_).abs();
        let small = change <= cfg.f_rel_tol * f.abs().max(fn_.abs()).max(1.0);
        x = xn;
        f = fn_;
        g = gn;
        trace.push(f);
        if small {
            termination = Termination::FunctionTolerance;
            break;
        }
    }

    Ok(LbfgsResult {
        x,
        f,
        iterations,
        evaluations,
        termination,
        trace,
    })
}

/// [`lbfgs_minimize`] for a separately supplied objective and gradient.
pub fn lbfgs_minimize_split<F, G>(
    mut objective: F,
    mut gradient: G,
    x0: &[f64],
    cfg: &LbfgsConfig,
) -> Result<LbfgsResult>
where
    F: FnMut(&[f64]) -> f64,
    G: FnMut(&[f64]) -> Vec<f64>,
{
    lbfgs_minimize(|x| (objective(x), gradient(x)), x0, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tight() -> LbfgsConfig {
        LbfgsConfig {
            grad_tol: 1e-12,
            f_rel_tol: 1e-300,
            max_iterations: 500,
            ..Default::default()
        }
    }

    #[test]
    fn one_dimensional_quadratic() {
        let r = lbfgs_minimize_split(
            |x| (x[0] - 3.0).powi(2),
            |x| vec![2.0 * (x[0] - 3.0)],
            &[0.0],
            &tight(),
        )
        .unwrap();
        assert!((r.x[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn rosenbrock() {
        let r = lbfgs_minimize(
            |x| {
                let (a, b) = (x[0], x[1]);
                let f = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
                let g = vec![
                    -2.0 * (1.0 - a) - 400.0 * a * (b - a * a),
                    200.0 * (b - a * a),
                ];
                (f, g)
            },
            &[-1.2, 1.0],
            &tight(),
        )
        .unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-5 && (r.x[1] - 1.0).abs() < 1e-5, "{:?}", r.x);
    }

    #[test]
    fn non_finite_start_is_rejected() {
        let err = lbfgs_minimize(|_| (f64::NAN, vec![0.0]), &[1.0], &LbfgsConfig::default())
            .unwrap_err();
        assert_eq!(err.to_string(), "non-finite objective");
    }

    #[test]
    fn accepted_steps_never_increase() {
        let r = lbfgs_minimize(
            |x| {
                let f: f64 = x.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v.powi(4) + v.sin()).sum();
                let g = x.iter().enumerate().map(|(i, v)| 4.0 * (i + 1) as f64 * v.powi(3) + v.cos()).collect();
                (f, g)
            },
            &[2.0, -1.5, 0.7, 3.0],
            &tight(),
        )
        .unwrap();
        assert!(r.trace.len() > 2);
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn deterministic() {
        let run = || {
            lbfgs_minimize(
                |x| ((x[0] - 1.0).powi(2) + (x[1] + x[0]).powi(4), vec![2.0 * (x[0] - 1.0) + 4.0 * (x[1] + x[0]).powi(3), 4.0 * (x[1] + x[0]).powi(3)]),
                &[5.0, 5.0],
                &LbfgsConfig::default(),
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.x, b.x);
        assert_eq!(a.f.to_bits(), b.f.to_bits());
    }
}
