//! BFGS minimization with a strong-Wolfe line search.
//!
//! Objectives may return `+inf` (or NaN) outside their feasible region; the
//! line search treats such points as failing the sufficient-decrease test and
//! shrinks the step.

use serde::{Deserialize, Serialize};

pub trait Objective {
    fn value(&self, x: &[f64]) -> f64;
    /// `None` when the gradient cannot be evaluated at `x`.
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BfgsConfig {
    pub max_iterations: usize,
    /// Converged when the gradient's infinity norm is at most this.
    pub grad_tol: f64,
    /// Converged when an iteration changes the objective by at most
    /// `rel_f_tol * |f|`.
    pub rel_f_tol: f64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        BfgsConfig { max_iterations: 500, grad_tol: 1e-6, rel_f_tol: 1e-10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Gradient,
    FunctionChange,
    MaxIterations,
    LineSearchFailed,
    NonFiniteStart,
}

impl Termination {
    pub fn converged(self) -> bool {
        matches!(self, Termination::Gradient | Termination::FunctionChange)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BfgsOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    pub termination: Termination,
}

const C1: f64 = 1e-4;
const C2: f64 = 0.9;
const MAX_LINE_EVALS: usize = 60;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn axpy(x: &[f64], a: f64, p: &[f64]) -> Vec<f64> {
    x.iter().zip(p).map(|(xi, pi)| xi + a * pi).collect()
}

struct Trial {
    step: f64,
    x: Vec<f64>,
    value: f64,
    gradient: Option<Vec<f64>>,
}

struct LineSearch<'a, O: Objective> {
    objective: &'a O,
    x: &'a [f64],
    p: &'a [f64],
    f0: f64,
    d0: f64,
}

impl<O: Objective> LineSearch<'_, O> {
    fn eval(&self, step: f64) -> Trial {
        let x = axpy(self.x, step, self.p);
        let value = self.objective.value(&x);
        let gradient = if value.is_finite() { self.objective.gradient(&x) } else { None };
        Trial { step, x, value, gradient }
    }

    fn armijo_fails(&self, t: &Trial) -> bool {
        !t.value.is_finite() || t.value > self.f0 + C1 * t.step * self.d0
    }

    fn slope(&self, t: &Trial) -> Option<f64> {
        t.gradient.as_ref().map(|g| dot(g, self.p)).filter(|d| d.is_finite())
    }

    /// Returns a step satisfying the strong Wolfe conditions, or failing
    /// that the best sufficient-decrease step found.
    fn search(&self, initial: f64) -> Option<Trial> {
        let mut evals = 0;
        let mut prev: Option<Trial> = None;
        let mut step = initial;
        while evals < MAX_LINE_EVALS {
            let t = self.eval(step);
            evals += 1;
            let worse_than_prev = prev.as_ref().is_some_and(|p| t.value >= p.value);
            if self.armijo_fails(&t) || worse_than_prev {
                return self.zoom(prev, t, evals);
            }
            let Some(d) = self.slope(&t) else {
                return self.zoom(prev, t, evals);
            };
            if d.abs() <= -C2 * self.d0 {
                return Some(t);
            }
            if d >= 0.0 {
                let lo = t;
                let hi = prev;
                return match hi {
                    Some(hi) => self.zoom_between(lo, hi, evals),
                    None => Some(lo),
                };
            }
            step *= 2.0;
            prev = Some(t);
        }
        prev
    }

    fn zoom(&self, lo: Option<Trial>, hi: Trial, evals: usize) -> Option<Trial> {
        let lo = lo.unwrap_or(Trial { step: 0.0, x: self.x.to_vec(), value: self.f0, gradient: None });
        self.zoom_between(lo, hi, evals)
    }

    /// `lo` satisfies sufficient decrease (or is the origin); the interval
    /// between `lo` and `hi` contains an acceptable step.
    fn zoom_between(&self, mut lo: Trial, mut hi: Trial, mut evals: usize) -> Option<Trial> {
        while evals < MAX_LINE_EVALS {
            let (a, b) = (lo.step, hi.step);
            let width = b - a;
            // safeguarded quadratic interpolation from lo's value and slope
            let d_lo = if lo.step == 0.0 { Some(self.d0) } else { self.slope(&lo) };
            let mut step = 0.5 * (a + b);
            if let Some(d_lo) = d_lo {
                if hi.value.is_finite() {
                    let denom = 2.0 * (hi.value - lo.value - d_lo * width);
                    if denom > 0.0 {
                        step = a - d_lo * width * width / denom;
                    }
                }
            }
            let (left, right) = if a < b { (a, b) } else { (b, a) };
            let margin = 0.1 * (right - left);
            step = step.clamp(left + margin, right - margin);
            if (right - left).abs() <= 1e-16 * right.abs().max(1.0) {
                break;
            }
            let t = self.eval(step);
            evals += 1;
            if self.armijo_fails(&t) || t.value >= lo.value {
                hi = t;
                continue;
            }
            let Some(d) = self.slope(&t) else {
                hi = t;
                continue;
            };
            if d.abs() <= -C2 * self.d0 {
                return Some(t);
            }
            if d * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = t;
        }
        (lo.step > 0.0 && lo.value < self.f0).then_some(lo)
    }
}

fn identity(n: usize, scale: f64) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { scale } else { 0.0 }).collect()).collect()
}

/// Initial inverse Hessian: the reciprocal of each coordinate's curvature,
/// from forward differences of the gradient. Parameters on very different
/// scales (a rate near zero on the log scale next to a slope) otherwise leave
/// the flat directions unexplored until the steep ones have converged.
fn diagonal_start<O: Objective>(objective: &O, x: &[f64], g: &[f64]) -> Vec<Vec<f64>> {
    let n = x.len();
    let fallback = 1.0 / inf_norm(g).max(1.0);
    let mut h = identity(n, fallback);
    let mut point = x.to_vec();
    for i in 0..n {
        let step = 1e-4 * x[i].abs().max(1.0);
        point[i] = x[i] + step;
        if let Some(gi) = objective.gradient(&point) {
            let curvature = (gi[i] - g[i]) / step;
            if curvature > 0.0 && curvature.is_finite() {
                h[i][i] = 1.0 / curvature;
            }
        }
        point[i] = x[i];
    }
    h
}

/// Minimize `objective` from `x0`.
pub fn minimize<O: Objective>(objective: &O, x0: &[f64], config: &BfgsConfig) -> BfgsOutcome {
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut f = objective.value(&x);
    let grad = if f.is_finite() { objective.gradient(&x) } else { None };
    let Some(mut g) = grad else {
        return BfgsOutcome {
            x,
            value: f,
            gradient: vec![f64::NAN; n],
            iterations: 0,
            termination: Termination::NonFiniteStart,
        };
    };
    if inf_norm(&g) <= config.grad_tol {
        return BfgsOutcome { x, value: f, gradient: g, iterations: 0, termination: Termination::Gradient };
    }

    let mut h = diagonal_start(objective, &x, &g);
    let mut fresh = true;

    for iteration in 1..=config.max_iterations {
        let mut p: Vec<f64> = h.iter().map(|row| -dot(row, &g)).collect();
        let mut d0 = dot(&g, &p);
        if !(d0 < 0.0) {
            h = diagonal_start(objective, &x, &g);
            fresh = true;
            p = g.iter().map(|v| -v).collect();
            d0 = dot(&g, &p);
        }
        let initial = if fresh { (1.0 / inf_norm(&p)).min(1.0) } else { 1.0 };
        let ls = LineSearch { objective, x: &x, p: &p, f0: f, d0 };
        let trial = match ls.search(initial) {
            Some(t) => t,
            None if !fresh => {
                // retry along steepest descent before giving up
                h = diagonal_start(objective, &x, &g);
                fresh = true;
                continue;
            }
            None => {
                return BfgsOutcome {
                    x,
                    value: f,
                    gradient: g,
                    iterations: iteration,
                    termination: Termination::LineSearchFailed,
                }
            }
        };
        let g_new = match trial.gradient {
            Some(gn) => gn,
            None => match objective.gradient(&trial.x) {
                Some(gn) => gn,
                None => {
                    return BfgsOutcome {
                        x,
                        value: f,
                        gradient: g,
                        iterations: iteration,
                        termination: Termination::LineSearchFailed,
                    }
                }
            },
        };
        let s: Vec<f64> = trial.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let f_change = (f - trial.value).abs();
        x = trial.x;
        f = trial.value;
        g = g_new;

        if inf_norm(&g) <= config.grad_tol {
            return BfgsOutcome { x, value: f, gradient: g, iterations: iteration, termination: Termination::Gradient };
        }
        if f_change <= config.rel_f_tol * f.abs() {
            return BfgsOutcome {
                x,
                value: f,
                gradient: g,
                iterations: iteration,
                termination: Termination::FunctionChange,
            };
        }

        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
            let rho = 1.0 / sy;
            let hy: Vec<f64> = h.iter().map(|row| dot(row, &y)).collect();
            let yhy = dot(&y, &hy);
            // H += rho^2 (y'Hy) ss' + rho ss' - rho (Hy s' + s (Hy)')
            for i in 0..n {
                for j in 0..n {
                    h[i][j] += (rho * rho * yhy + rho) * s[i] * s[j] - rho * (hy[i] * s[j] + s[i] * hy[j]);
                }
            }
            fresh = false;
        }
    }
    BfgsOutcome { x, value: f, gradient: g, iterations: config.max_iterations, termination: Termination::MaxIterations }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn value(&self, x: &[f64]) -> f64 {
            (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
        }
        fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
            Some(vec![-2.0 * (1.0 - x[0]) - 400.0 * x[0] * (x[1] - x[0] * x[0]), 200.0 * (x[1] - x[0] * x[0])])
        }
    }

    /// Quadratic bowl that is infinite outside the unit-ish box.
    struct Walled;

    impl Objective for Walled {
        fn value(&self, x: &[f64]) -> f64 {
            if x.iter().any(|v| v.abs() > 3.0) {
                return f64::INFINITY;
            }
            (x[0] - 2.5).powi(2) + 10.0 * (x[1] + 1.0).powi(2)
        }
        fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
            Some(vec![2.0 * (x[0] - 2.5), 20.0 * (x[1] + 1.0)])
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let cfg = BfgsConfig { max_iterations: 1000, grad_tol: 1e-8, rel_f_tol: 0.0 };
        let out = minimize(&Rosenbrock, &[-1.2, 1.0], &cfg);
        assert_eq!(out.termination, Termination::Gradient);
        assert!((out.x[0] - 1.0).abs() < 1e-6 && (out.x[1] - 1.0).abs() < 1e-6, "{out:?}");
    }

    #[test]
    fn backs_off_infinite_region() {
        let out = minimize(&Walled, &[-2.9, 2.9], &BfgsConfig::default());
        assert!(out.termination.converged());
        assert!((out.x[0] - 2.5).abs() < 1e-5 && (out.x[1] + 1.0).abs() < 1e-5);
    }

    #[test]
    fn reports_non_finite_start() {
        let out = minimize(&Walled, &[5.0, 0.0], &BfgsConfig::default());
        assert_eq!(out.termination, Termination::NonFiniteStart);
    }

    #[test]
    fn already_optimal_start() {
        let out = minimize(&Walled, &[2.5, -1.0], &BfgsConfig::default());
        assert_eq!(out.iterations, 0);
        assert_eq!(out.termination, Termination::Gradient);
    }

    #[test]
    fn respects_iteration_cap() {
        let cfg = BfgsConfig { max_iterations: 3, grad_tol: 1e-12, rel_f_tol: 0.0 };
        let out = minimize(&Rosenbrock, &[-1.2, 1.0], &cfg);
        assert_eq!(out.termination, Termination::MaxIterations);
        assert_eq!(out.iterations, 3);
        assert!(out.value < Rosenbrock.value(&[-1.2, 1.0]));
    }
}
