//! Full-batch Adam with a monotone acceptance rule.
//!
//! A step is kept only if it does not increase the objective; otherwise the
//! step size is halved and the moment estimates are reset. The accepted
//! objective sequence is therefore non-increasing.

use super::OptimizerConfig;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-12;
/// Below this step size the iterate cannot move in f64 and the run stops.
const MIN_LR: f64 = 1e-12;

#[derive(Clone, Debug)]
pub struct OptimOutcome {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after every iteration (accepted value), starting with the
    /// initial point.
    pub trace: Vec<f64>,
}

/// Minimises `f`, which returns the objective and writes the gradient into its
/// second argument.
pub fn minimize<F>(f: F, x0: Vec<f64>, opts: &OptimizerConfig) -> OptimOutcome
where
    F: Fn(&[f64], &mut [f64]) -> f64,
{
    let d = x0.len();
    let mut x = x0;
    let mut g = vec![0.0; d];
    let mut value = f(&x, &mut g);
    let mut trace = Vec::with_capacity(opts.iterations + 1);
    trace.push(value);

    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut t = 0i32;
    let mut lr = opts.learning_rate;
    let mut cand = vec![0.0; d];
    let mut g_cand = vec![0.0; d];
    let mut converged = false;
    let mut iterations = 0;

    if !value.is_finite() {
        return OptimOutcome {
            x,
            value,
            iterations,
            converged,
            trace,
        };
    }

    for it in 1..=opts.iterations {
        iterations = it;
        t += 1;
        let bc1 = 1.0 - BETA1.powi(t);
        let bc2 = 1.0 - BETA2.powi(t);
        for i in 0..d {
            m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
            v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
            let step = lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + EPS);
            cand[i] = x[i] - step;
        }
        let f_cand = f(&cand, &mut g_cand);
        if f_cand.is_finite() && f_cand <= value {
            std::mem::swap(&mut x, &mut cand);
            std::mem::swap(&mut g, &mut g_cand);
            value = f_cand;
        } else {
            lr *= 0.5;
            m.iter_mut().for_each(|e| *e = 0.0);
            v.iter_mut().for_each(|e| *e = 0.0);
            t = 0;
        }
        trace.push(value);
        if it >= opts.patience && trace[it - opts.patience] - value < opts.tolerance {
            converged = true;
            break;
        }
        if lr < MIN_LR {
            converged = true;
            break;
        }
    }
    OptimOutcome {
        x,
        value,
        iterations,
        converged,
        trace,
    }
}
