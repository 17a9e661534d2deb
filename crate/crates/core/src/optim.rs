//! Limited-memory BFGS with backtracking (Armijo) line search.
//!
//! Fixed degrees of freedom are handled by the objective: it must return a
//! gradient that is exactly zero there. Every search direction is then a
//! linear combination of such gradients and differences of iterates, so
//! pinned entries never move.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

const ARMIJO: f64 = 1e-4;
const MIN_STEP: f64 = 1e-14;

pub trait Objective {
    /// Returns the objective value and writes its gradient into `grad`.
    /// Non-finite values are treated as rejected trial points.
    fn evaluate(&mut self, x: &[f64], grad: &mut [f64]) -> f64;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LbfgsOptions {
    pub grad_tol: f64,
    pub max_iters: usize,
    pub memory: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions { grad_tol: 1e-8, max_iters: 5000, memory: 10 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Converged,
    MaxIterations,
    LineSearchStall,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub value: f64,
    /// Sup-norm of the final gradient.
    pub grad_norm: f64,
    pub iterations: usize,
    pub status: Status,
}

impl Outcome {
    pub fn converged(&self) -> bool {
        self.status == Status::Converged
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn sup_norm(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

struct Pair {
    s: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

fn two_loop(history: &VecDeque<Pair>, grad: &[f64], dir: &mut [f64]) {
    for (d, g) in dir.iter_mut().zip(grad) {
        *d = -g;
    }
    let mut alphas = Vec::with_capacity(history.len());
    for pair in history.iter().rev() {
        let a = pair.rho * dot(&pair.s, dir);
        for (d, y) in dir.iter_mut().zip(&pair.y) {
            *d -= a * y;
        }
        alphas.push(a);
    }
    if let Some(last) = history.back() {
        let gamma = dot(&last.s, &last.y) / dot(&last.y, &last.y);
        for d in dir.iter_mut() {
            *d *= gamma;
        }
    }
    for (pair, a) in history.iter().zip(alphas.iter().rev()) {
        let b = pair.rho * dot(&pair.y, dir);
        for (d, s) in dir.iter_mut().zip(&pair.s) {
            *d += (a - b) * s;
        }
    }
}

/// Minimizes `objective` starting from `x`, which holds the best iterate on return.
pub fn minimize<O: Objective>(objective: &mut O, x: &mut [f64], opts: &LbfgsOptions) -> Outcome {
    minimize_observed(objective, x, opts, |_, _, _| {})
}

/// As [`minimize`], calling `observer(iteration, x, value)` after every
/// accepted step.
pub fn minimize_observed<O, F>(objective: &mut O, x: &mut [f64], opts: &LbfgsOptions, mut observer: F) -> Outcome
where
    O: Objective,
    F: FnMut(usize, &[f64], f64),
{
    let n = x.len();
    let mut grad = vec![0.0; n];
    let mut value = objective.evaluate(x, &mut grad);
    let mut history: VecDeque<Pair> = VecDeque::with_capacity(opts.memory);
    let mut dir = vec![0.0; n];
    let mut trial = vec![0.0; n];
    let mut trial_grad = vec![0.0; n];

    let finish = |value: f64, grad: &[f64], iterations: usize, status: Status| Outcome {
        value,
        grad_norm: sup_norm(grad),
        iterations,
        status,
    };
    if !value.is_finite() {
        return finish(value, &grad, 0, Status::LineSearchStall);
    }

    for iter in 0..opts.max_iters {
        if sup_norm(&grad) <= opts.grad_tol * (1.0 + value.abs()) {
            return finish(value, &grad, iter, Status::Converged);
        }
        two_loop(&history, &grad, &mut dir);
        let mut slope = dot(&grad, &dir);
        if !(slope < 0.0) {
            history.clear();
            for (d, g) in dir.iter_mut().zip(&grad) {
                *d = -g;
            }
            slope = -dot(&grad, &grad);
        }
        let mut step = if history.is_empty() { (1.0 / sup_norm(&dir)).min(1.0) } else { 1.0 };
        let trial_value = loop {
            for ((t, xi), d) in trial.iter_mut().zip(x.iter()).zip(&dir) {
                *t = xi + step * d;
            }
            let f = objective.evaluate(&trial, &mut trial_grad);
            if f.is_finite() && f <= value + ARMIJO * step * slope {
                break Some(f);
            }
            step *= 0.5;
            if step < MIN_STEP {
                break None;
            }
        };
        let Some(new_value) = trial_value else {
            return finish(value, &grad, iter, Status::LineSearchStall);
        };

        let s: Vec<f64> = trial.iter().zip(x.iter()).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = trial_grad.iter().zip(&grad).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-14 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if history.len() == opts.memory {
                history.pop_front();
            }
            if opts.memory > 0 {
                history.push_back(Pair { s, y, rho: 1.0 / sy });
            }
        }
        x.copy_from_slice(&trial);
        std::mem::swap(&mut grad, &mut trial_grad);
        value = new_value;
        observer(iter + 1, x, value);
    }
    let status = if sup_norm(&grad) <= opts.grad_tol * (1.0 + value.abs()) { Status::Converged } else { Status::MaxIterations };
    finish(value, &grad, opts.max_iters, status)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Rosenbrock;

    impl Objective for Rosenbrock {
        fn evaluate(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
            let (a, b) = (x[0], x[1]);
            g[0] = -2.0 * (1.0 - a) - 400.0 * a * (b - a * a);
            g[1] = 200.0 * (b - a * a);
            (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2)
        }
    }

    /// Quadratic with the last coordinate pinned.
    struct Pinned;

    impl Objective for Pinned {
        fn evaluate(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
            let mut f = 0.0;
            for i in 0..x.len() {
                let w = (i + 1) as f64;
                f += w * (x[i] - 1.0).powi(2);
                g[i] = 2.0 * w * (x[i] - 1.0);
            }
            *g.last_mut().unwrap() = 0.0;
            f
        }
    }

    #[test]
    fn solves_rosenbrock() {
        let mut x = [-1.2, 1.0];
        let out = minimize(&mut Rosenbrock, &mut x, &LbfgsOptions { grad_tol: 1e-10, ..Default::default() });
        assert!(out.converged(), "{out:?}");
        assert!((x[0] - 1.0).abs() < 1e-6 && (x[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn pinned_entries_never_move_and_values_descend() {
        let mut x = vec![0.0, 3.0, -2.0, 0.123456789];
        let mut prev = f64::INFINITY;
        let out = minimize_observed(&mut Pinned, &mut x, &LbfgsOptions::default(), |_, x, v| {
            assert_eq!(x[3], 0.123456789);
            assert!(v <= prev);
            prev = v;
        });
        assert!(out.converged());
        assert_eq!(x[3], 0.123456789);
        assert!((x[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn reports_max_iterations() {
        let mut x = [-1.2, 1.0];
        let out = minimize(&mut Rosenbrock, &mut x, &LbfgsOptions { max_iters: 3, ..Default::default() });
        assert_eq!(out.status, Status::MaxIterations);
        assert_eq!(out.iterations, 3);
    }

    struct Nan;

    impl Objective for Nan {
        fn evaluate(&mut self, x: &[f64], g: &mut [f64]) -> f64 {
            g[0] = 1.0;
            if x[0] == 0.0 {
                0.0
            } else {
                f64::NAN
            }
        }
    }

    #[test]
    fn stalls_when_no_step_is_acceptable() {
        let mut x = [0.0];
        let out = minimize(&mut Nan, &mut x, &LbfgsOptions::default());
        assert_eq!(out.status, Status::LineSearchStall);
        assert_eq!(x[0], 0.0);
    }
}
