//! Limited-memory BFGS minimizer with a strong-Wolfe line search.

use std::collections::VecDeque;

use crate::error::Result;

/// A differentiable objective to be minimized.
pub trait Objective {
    fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Called after every accepted step. May negate coordinates of `x` as
    /// long as the objective is invariant under that reflection; returns the
    /// negated coordinates so curvature history can follow.
    fn after_step(&mut self, _x: &mut [f64]) -> Vec<usize> {
        Vec::new()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub rel_tol: f64,
    pub c1: f64,
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self {
            memory: 10,
            max_iters: 1000,
            grad_tol: 1e-5,
            rel_tol: 1e-9,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    Gradient,
    RelativeChange,
    MaxIterations,
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
    /// Objective value after each accepted step, starting point first.
    pub trace: Vec<f64>,
    pub termination: Termination,
}

impl LbfgsResult {
    pub fn converged(&self) -> bool {
        matches!(self.termination, Termination::Gradient | Termination::RelativeChange)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Objective value at `x + t d`; failed evaluations count as `+inf`.
fn probe<O: Objective>(obj: &mut O, x: &[f64], d: &[f64], t: f64) -> (f64, Vec<f64>, f64) {
    let xt: Vec<f64> = x.iter().zip(d).map(|(a, b)| a + t * b).collect();
    match obj.eval(&xt) {
        Ok((f, g)) if f.is_finite() && g.iter().all(|v| v.is_finite()) => {
            let slope = dot(&g, d);
            (f, g, slope)
        }
        _ => (f64::INFINITY, Vec::new(), f64::NAN),
    }
}

struct Accepted {
    t: f64,
    f: f64,
    g: Vec<f64>,
}

fn interpolate(lo: f64, hi: f64, f_lo: f64, f_hi: f64, d_lo: f64) -> f64 {
    // Minimizer of the quadratic through (lo, f_lo, d_lo) and (hi, f_hi),
    // safeguarded to the interior of the bracket.
    let width = hi - lo;
    let denom = 2.0 * (f_hi - f_lo - d_lo * width);
    let mut t = if f_hi.is_finite() && denom > 0.0 {
        lo - d_lo * width * width / denom
    } else {
        lo + 0.5 * width
    };
    let (a, b) = if lo < hi { (lo, hi) } else { (hi, lo) };
    let margin = 0.1 * (b - a);
    if !(t > a + margin && t < b - margin) {
        t = lo + 0.5 * width;
    }
    t
}

#[allow(clippy::too_many_arguments)]
fn line_search<O: Objective>(
    obj: &mut O,
    x: &[f64],
    d: &[f64],
    f0: f64,
    d0: f64,
    t_init: f64,
    opts: &LbfgsOptions,
) -> Option<Accepted> {
    let armijo = |t: f64, f: f64| f <= f0 + opts.c1 * t * d0;
    let curvature = |slope: f64| slope.abs() <= -opts.c2 * d0;

    let (mut t_prev, mut f_prev, mut d_prev) = (0.0, f0, d0);
    let mut t = t_init;
    let mut evals = 0;
    let mut bracket = None;
    while evals < opts.max_line_search {
        let (f, g, slope) = probe(obj, x, d, t);
        evals += 1;
        if !f.is_finite() {
            // Step left the region where the objective is defined.
            bracket = Some((t_prev, f_prev, d_prev, t, f));
            break;
        }
        if !armijo(t, f) || (evals > 1 && f >= f_prev) {
            bracket = Some((t_prev, f_prev, d_prev, t, f));
            break;
        }
        if curvature(slope) {
            return Some(Accepted { t, f, g });
        }
        if slope >= 0.0 {
            bracket = Some((t, f, slope, t_prev, f_prev));
            break;
        }
        t_prev = t;
        f_prev = f;
        d_prev = slope;
        t *= 2.0;
    }
    let (mut lo, mut f_lo, mut d_lo, mut hi, mut f_hi) = bracket?;
    let mut best: Option<Accepted> = None;
    while evals < opts.max_line_search {
        let t = interpolate(lo, hi, f_lo, f_hi, d_lo);
        let (f, g, slope) = probe(obj, x, d, t);
        evals += 1;
        if !f.is_finite() || !armijo(t, f) || f >= f_lo {
            hi = t;
            f_hi = f;
        } else {
            if curvature(slope) {
                return Some(Accepted { t, f, g });
            }
            if best.as_ref().is_none_or(|b| f < b.f) {
                best = Some(Accepted { t, f, g: g.clone() });
            }
            if slope * (hi - lo) >= 0.0 {
                hi = lo;
                f_hi = f_lo;
            }
            lo = t;
            f_lo = f;
            d_lo = slope;
        }
        if (hi - lo).abs() < 1e-16 * lo.abs().max(1.0) {
            break;
        }
    }
    // Fall back to a point with sufficient decrease if the curvature
    // condition could not be met.
    best
}

fn direction(g: &[f64], history: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q: Vec<f64> = g.to_vec();
    let mut alphas = Vec::with_capacity(history.len());
    for (s, y, rho) in history.iter().rev() {
        let a = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y, _)) = history.back() {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
        let b = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}

/// Minimizes `obj` from `x0`.
pub fn minimize<O: Objective>(obj: &mut O, x0: Vec<f64>, opts: &LbfgsOptions) -> Result<LbfgsResult> {
    let mut x = x0;
    let (mut f, mut g) = obj.eval(&x)?;
    let mut trace = vec![f];
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut iterations = 0;
    let termination = loop {
        if inf_norm(&g) <= opts.grad_tol {
            break Termination::Gradient;
        }
        if iterations >= opts.max_iters {
            break Termination::MaxIterations;
        }
        let mut d = direction(&g, &history);
        let mut d0 = dot(&g, &d);
        if !(d0 < 0.0) {
            history.clear();
            d = g.iter().map(|v| -v).collect();
            d0 = dot(&g, &d);
        }
        let t_init = if history.is_empty() {
            (1.0 / dot(&d, &d).sqrt()).min(1.0)
        } else {
            1.0
        };
        let step = match line_search(obj, &x, &d, f, d0, t_init, opts) {
            Some(s) => s,
            None if !history.is_empty() => {
                // Retry once along steepest descent with fresh memory.
                history.clear();
                d = g.iter().map(|v| -v).collect();
                d0 = dot(&g, &d);
                let t0 = (1.0 / dot(&d, &d).sqrt()).min(1.0);
                match line_search(obj, &x, &d, f, d0, t0, opts) {
                    Some(s) => s,
                    None => break Termination::LineSearchFailed,
                }
            }
            None => break Termination::LineSearchFailed,
        };
        iterations += 1;
        let mut s: Vec<f64> = d.iter().map(|v| step.t * v).collect();
        let mut x_new: Vec<f64> = x.iter().zip(&s).map(|(a, b)| a + b).collect();
        let mut g_new = step.g;
        let mut y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let flipped = obj.after_step(&mut x_new);
        for &i in &flipped {
            g_new[i] = -g_new[i];
            s[i] = -s[i];
            y[i] = -y[i];
            for (hs, hy, _) in history.iter_mut() {
                hs[i] = -hs[i];
                hy[i] = -hy[i];
            }
        }
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&y, &y).sqrt() * dot(&s, &s).sqrt() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }
        let f_old = f;
        x = x_new;
        f = step.f;
        g = g_new;
        trace.push(f);
        if (f_old - f).abs() <= opts.rel_tol * f.abs().max(1.0) {
            break Termination::RelativeChange;
        }
    };
    Ok(LbfgsResult {
        x,
        f,
        grad: g,
        iterations,
        trace,
        termination,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;

    struct Rosenbrock {
        evals: usize,
    }

    impl Objective for Rosenbrock {
        fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            self.evals += 1;
            let mut f = 0.0;
            let mut g = vec![0.0; x.len()];
            for i in 0..x.len() - 1 {
                let a = x[i + 1] - x[i] * x[i];
                let b = 1.0 - x[i];
                f += 100.0 * a * a + b * b;
                g[i] += -400.0 * x[i] * a - 2.0 * b;
                g[i + 1] += 200.0 * a;
            }
            Ok((f, g))
        }
    }

    #[test]
    fn minimizes_rosenbrock() {
        let mut obj = Rosenbrock { evals: 0 };
        let opts = LbfgsOptions {
            rel_tol: 0.0,
            ..LbfgsOptions::default()
        };
        let r = minimize(&mut obj, vec![-1.2, 1.0, -1.2, 1.0, 0.5], &opts).unwrap();
        assert_eq!(r.termination, Termination::Gradient);
        for v in &r.x {
            assert!((v - 1.0).abs() < 1e-5, "{:?}", r.x);
        }
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    struct Quadratic(Vec<f64>);

    impl Objective for Quadratic {
        fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let f = x.iter().zip(&self.0).map(|(v, c)| 0.5 * c * v * v).sum();
            Ok((f, x.iter().zip(&self.0).map(|(v, c)| c * v).collect()))
        }
    }

    #[test]
    fn ill_conditioned_quadratic() {
        let mut obj = Quadratic((0..20).map(|i| 10f64.powf(i as f64 / 5.0)).collect());
        let opts = LbfgsOptions {
            rel_tol: 0.0,
            grad_tol: 1e-8,
            ..LbfgsOptions::default()
        };
        let r = minimize(&mut obj, vec![1.0; 20], &opts).unwrap();
        assert!(r.converged());
        assert!(inf_norm(&r.grad) <= 1e-8);
    }

    /// Even function of x[0]; reflects so that x[0] stays nonnegative.
    struct Reflected;

    impl Objective for Reflected {
        fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let (a, b) = (x[0] * x[0] - 4.0, x[1] - x[0] * x[0]);
            Ok((a * a + b * b, vec![4.0 * x[0] * a - 4.0 * x[0] * b, 2.0 * b]))
        }

        fn after_step(&mut self, x: &mut [f64]) -> Vec<usize> {
            if x[0] < 0.0 {
                x[0] = -x[0];
                vec![0]
            } else {
                Vec::new()
            }
        }
    }

    #[test]
    fn reflections_keep_history_consistent() {
        let opts = LbfgsOptions {
            rel_tol: 0.0,
            grad_tol: 1e-9,
            ..LbfgsOptions::default()
        };
        let r = minimize(&mut Reflected, vec![-0.3, 3.0], &opts).unwrap();
        assert!(r.converged());
        assert!((r.x[0] - 2.0).abs() < 1e-8 && (r.x[1] - 4.0).abs() < 1e-8, "{:?}", r.x);
    }

    /// Defined only for x > 0.
    struct Barrier;

    impl Objective for Barrier {
        fn eval(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            if x[0] <= 0.0 {
                return Err(Error::Domain("x must be positive".into()));
            }
            Ok((x[0] - 3.0 * x[0].ln(), vec![1.0 - 3.0 / x[0]]))
        }
    }

    #[test]
    fn recovers_from_failed_evaluations() {
        let opts = LbfgsOptions {
            rel_tol: 0.0,
            ..LbfgsOptions::default()
        };
        let r = minimize(&mut Barrier, vec![0.1], &opts).unwrap();
        assert!(r.converged());
        assert!((r.x[0] - 3.0).abs() < 1e-4);
    }

    #[test]
    fn reports_iteration_limit() {
        let mut obj = Rosenbrock { evals: 0 };
        let opts = LbfgsOptions {
            max_iters: 3,
            rel_tol: 0.0,
            ..LbfgsOptions::default()
        };
        let r = minimize(&mut obj, vec![-1.2, 1.0], &opts).unwrap();
        assert_eq!(r.termination, Termination::MaxIterations);
        assert!(!r.converged());
        assert_eq!(r.iterations, 3);
    }
}
