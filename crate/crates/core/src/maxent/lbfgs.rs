//! Limited-memory BFGS with a strong-Wolfe line search.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LbfgsOptions {
    /// Number of stored curvature pairs.
    pub memory: usize,
    /// Stop once the Euclidean gradient norm falls below this.
    pub grad_tol: f64,
    pub max_iterations: usize,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            grad_tol: 1e-8,
            max_iterations: 500,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Iterate {
    pub iteration: usize,
    pub value: f64,
    pub grad_norm: f64,
    /// Largest absolute gradient entry.
    pub grad_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub gradient: Vec<f64>,
    pub iterations: usize,
    /// Gradient tolerance reached. False after the iteration cap or a failed
    /// line search.
    pub converged: bool,
    pub history: Vec<Iterate>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn record(iteration: usize, value: f64, g: &[f64]) -> Iterate {
    Iterate {
        iteration,
        value,
        grad_norm: norm(g),
        grad_max: g.iter().fold(0.0f64, |m, v| m.max(v.abs())),
    }
}

/// Minimizes `f` from `x0`. `f(x, grad)` returns the value and writes the
/// gradient into `grad`.
pub fn minimize<F>(mut f: F, x0: &[f64], opts: &LbfgsOptions) -> Minimum
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    let mut g = vec![0.0; n];
    let mut fx = f(&x, &mut g);
    let mut history = vec![record(0, fx, &g)];
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut d = vec![0.0; n];
    let mut alpha_buf = vec![0.0; opts.memory];
    let mut iterations = 0;
    let mut converged = norm(&g) <= opts.grad_tol;

    while !converged && iterations < opts.max_iterations {
        // two-loop recursion: d = -H g
        d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
        for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
            let a = rho * dot(s, &d);
            alpha_buf[k] = a;
            d.iter_mut().zip(y).for_each(|(di, yi)| *di -= a * yi);
        }
        if let Some((s, y, _)) = pairs.back() {
            let gamma = dot(s, y) / dot(y, y);
            d.iter_mut().for_each(|di| *di *= gamma);
        }
        for (k, (s, y, rho)) in pairs.iter().enumerate() {
            let b = rho * dot(y, &d);
            let a = alpha_buf[k];
            d.iter_mut().zip(s).for_each(|(di, si)| *di += (a - b) * si);
        }
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            // lost descent: restart from steepest descent
            pairs.clear();
            d.iter_mut().zip(&g).for_each(|(di, gi)| *di = -gi);
            slope = dot(&g, &d);
        }
        let step0 = if pairs.is_empty() { (1.0 / norm(&g)).min(1.0) } else { 1.0 };

        let Some(next) = line_search(&mut f, &x, fx, slope, &d, step0, opts) else {
            break;
        };
        iterations += 1;

        let s: Vec<f64> = next.x.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = next.g.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * norm(&s) * norm(&y) && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, 1.0 / sy));
        }
        x = next.x;
        g = next.g;
        fx = next.value;
        history.push(record(iterations, fx, &g));
        converged = norm(&g) <= opts.grad_tol;
    }

    Minimum {
        x,
        value: fx,
        gradient: g,
        iterations,
        converged,
        history,
    }
}

struct Probe {
    step: f64,
    value: f64,
    slope: f64,
    x: Vec<f64>,
    g: Vec<f64>,
}

fn probe<F>(f: &mut F, x: &[f64], d: &[f64], step: f64) -> Probe
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let xs: Vec<f64> = x.iter().zip(d).map(|(xi, di)| xi + step * di).collect();
    let mut g = vec![0.0; x.len()];
    let value = f(&xs, &mut g);
    Probe {
        step,
        value,
        slope: dot(&g, d),
        x: xs,
        g,
    }
}

/// Bracketing phase of a strong-Wolfe line search followed by zooming with
/// safeguarded cubic interpolation.
fn line_search<F>(f: &mut F, x: &[f64], f0: f64, slope0: f64, d: &[f64], step0: f64, opts: &LbfgsOptions) -> Option<Probe>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let mut prev = Probe {
        step: 0.0,
        value: f0,
        slope: slope0,
        x: x.to_vec(),
        g: Vec::new(),
    };
    let mut step = step0;
    for i in 0..opts.max_line_search {
        let cur = probe(f, x, d, step);
        if !cur.value.is_finite() || cur.value > f0 + opts.c1 * step * slope0 || (i > 0 && cur.value >= prev.value) {
            return zoom(f, x, f0, slope0, d, prev, cur, opts);
        }
        if cur.slope.abs() <= -opts.c2 * slope0 {
            return Some(cur);
        }
        if cur.slope >= 0.0 {
            return zoom(f, x, f0, slope0, d, cur, prev, opts);
        }
        step *= 2.0;
        prev = cur;
    }
    None
}

#[allow(clippy::too_many_arguments)]
fn zoom<F>(
    f: &mut F,
    x: &[f64],
    f0: f64,
    slope0: f64,
    d: &[f64],
    mut lo: Probe,
    mut hi: Probe,
    opts: &LbfgsOptions,
) -> Option<Probe>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    for _ in 0..opts.max_line_search {
        let (a, b) = (lo.step.min(hi.step), lo.step.max(hi.step));
        let width = b - a;
        if width <= 1e-16 * b.max(1.0) {
            break;
        }
        let mut step = cubic_min(&lo, &hi).unwrap_or(0.5 * (lo.step + hi.step));
        if !(step > a + 0.1 * width && step < b - 0.1 * width) {
            step = 0.5 * (lo.step + hi.step);
        }
        let cur = probe(f, x, d, step);
        if !cur.value.is_finite() || cur.value > f0 + opts.c1 * step * slope0 || cur.value >= lo.value {
            hi = cur;
        } else {
            if cur.slope.abs() <= -opts.c2 * slope0 {
                return Some(cur);
            }
            if cur.slope * (hi.step - lo.step) >= 0.0 {
                hi = lo;
            }
            lo = cur;
        }
    }
    // accept the best sufficient-decrease point if the bracket collapsed
    (lo.step > 0.0 && lo.value < f0).then_some(lo)
}

/// Minimizer of the cubic through two points with known values and slopes.
fn cubic_min(p: &Probe, q: &Probe) -> Option<f64> {
    if !q.value.is_finite() {
        return None;
    }
    let d1 = p.slope + q.slope - 3.0 * (p.value - q.value) / (p.step - q.step);
    let disc = d1 * d1 - p.slope * q.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (q.step - p.step).signum() * disc.sqrt();
    let t = q.step - (q.step - p.step) * (q.slope + d2 - d1) / (q.slope - p.slope + 2.0 * d2);
    t.is_finite().then_some(t)
}
