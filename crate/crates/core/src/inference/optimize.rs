//! Box-constrained quasi-Newton minimization and golden-section search.

#[derive(Debug, Clone, Copy)]
pub struct MinimizeOptions {
    pub max_iter: usize,
    /// Stop when the projected gradient's max-norm falls below this.
    pub gtol: f64,
    /// Stop when the objective improves by less than `ftol · (1 + |f|)`.
    pub ftol: f64,
    /// Longest first step, in parameter units.
    pub max_step: f64,
    /// Stop when `stall_window` consecutive iterations together improve the
    /// objective by less than `stall_tol · (1 + |f|)`.
    pub stall_window: usize,
    pub stall_tol: f64,
}

impl Default for MinimizeOptions {
    fn default() -> Self {
        MinimizeOptions { max_iter: 200, gtol: 1e-6, ftol: 1e-11, max_step: 10.0, stall_window: 10, stall_tol: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimum {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
}

fn project(x: &mut [f64], lo: &[f64], hi: &[f64]) {
    for i in 0..x.len() {
        x[i] = x[i].clamp(lo[i], hi[i]);
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projected BFGS with Armijo backtracking.
///
/// `f` returns the objective and its gradient. Variables sitting on a bound
/// with the gradient pointing outward are frozen for the step. Non-finite
/// objective values are treated as `+∞` by the line search.
///
/// Returns `None` when the starting point itself is not finite.
pub fn minimize_box<F>(mut f: F, x0: &[f64], lo: &[f64], hi: &[f64], opts: MinimizeOptions) -> Option<Minimum>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lo, hi);
    let (mut fx, mut g) = f(&x);
    let mut evaluations = 1;
    if !fx.is_finite() || g.iter().any(|v| !v.is_finite()) {
        return None;
    }
    // Dense inverse Hessian approximation, row-major.
    let mut h = vec![0.0; n * n];
    let reset = |h: &mut Vec<f64>, scale: f64| {
        h.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..n {
            h[i * n + i] = scale;
        }
    };
    reset(&mut h, 1.0);
    let mut scaled = false;
    let mut history = std::collections::VecDeque::with_capacity(opts.stall_window + 1);
    history.push_back(fx);

    for iter in 0..opts.max_iter {
        let free: Vec<bool> = (0..n)
            .map(|i| !((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)))
            .collect();
        let pg = (0..n)
            .map(|i| (x[i] - (x[i] - g[i]).clamp(lo[i], hi[i])).abs())
            .fold(0.0, f64::max);
        if pg < opts.gtol {
            return Some(Minimum { x, value: fx, iterations: iter, evaluations, converged: true });
        }

        let mut d = vec![0.0; n];
        for i in 0..n {
            if free[i] {
                d[i] = -(0..n).filter(|&j| free[j]).map(|j| h[i * n + j] * g[j]).sum::<f64>();
            }
        }
        if dot(&d, &g) >= 0.0 {
            reset(&mut h, 1.0);
            scaled = false;
            for i in 0..n {
                d[i] = if free[i] { -g[i] } else { 0.0 };
            }
        }
        let norm = dot(&d, &d).sqrt();
        let mut t = if norm > opts.max_step { opts.max_step / norm } else { 1.0 };

        let mut accepted = None;
        for _ in 0..60 {
            let mut xn: Vec<f64> = (0..n).map(|i| x[i] + t * d[i]).collect();
            project(&mut xn, lo, hi);
            let step: Vec<f64> = (0..n).map(|i| xn[i] - x[i]).collect();
            if step.iter().all(|&s| s == 0.0) {
                break;
            }
            let (fn_, gn) = f(&xn);
            evaluations += 1;
            if fn_.is_finite() && gn.iter().all(|v| v.is_finite()) && fn_ <= fx + 1e-4 * dot(&g, &step) {
                accepted = Some((xn, fn_, gn, step));
                break;
            }
            t *= 0.5;
        }
        let Some((xn, fn_, gn, s)) = accepted else {
            // No descent possible along the projected direction.
            return Some(Minimum { x, value: fx, iterations: iter, evaluations, converged: true });
        };

        let y: Vec<f64> = (0..n).map(|i| gn[i] - g[i]).collect();
        let sy = dot(&s, &y);
        if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() && sy > 0.0 {
            if !scaled {
                reset(&mut h, sy / dot(&y, &y));
                scaled = true;
            }
            // H ← (I − ρ s yᵀ) H (I − ρ y sᵀ) + ρ s sᵀ
            let rho = 1.0 / sy;
            let hy: Vec<f64> = (0..n).map(|i| (0..n).map(|j| h[i * n + j] * y[j]).sum()).collect();
            let yhy = dot(&y, &hy);
            for i in 0..n {
                for j in 0..n {
                    h[i * n + j] += rho * ((1.0 + rho * yhy) * s[i] * s[j] - hy[i] * s[j] - s[i] * hy[j]);
                }
            }
        }

        let improvement = fx - fn_;
        x = xn;
        fx = fn_;
        g = gn;
        if improvement.abs() < opts.ftol * (1.0 + fx.abs()) {
            return Some(Minimum { x, value: fx, iterations: iter + 1, evaluations, converged: true });
        }
        history.push_back(fx);
        if opts.stall_window > 0 && history.len() > opts.stall_window {
            let old = history.pop_front().unwrap_or(fx);
            if old - fx < opts.stall_tol * (1.0 + fx.abs()) {
                return Some(Minimum { x, value: fx, iterations: iter + 1, evaluations, converged: true });
            }
        }
    }
    Some(Minimum { x, value: fx, iterations: opts.max_iter, evaluations, converged: false })
}

/// Golden-section search for the maximum of a unimodal `f` on `[a, b]`.
///
/// Returns `(argmax, max)` and every evaluated point, in evaluation order.
pub fn golden_section_max<F>(mut f: F, a: f64, b: f64, tol: f64) -> (f64, f64, Vec<(f64, f64)>)
where
    F: FnMut(f64) -> f64,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut trace = Vec::new();
    let (mut a, mut b) = (a, b);
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    trace.push((x1, f1));
    let mut f2 = f(x2);
    trace.push((x2, f2));
    while b - a > tol {
        if f1 >= f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
            trace.push((x1, f1));
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
            trace.push((x2, f2));
        }
    }
    if f1 >= f2 {
        (x1, f1, trace)
    } else {
        (x2, f2, trace)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rosenbrock_interior_minimum() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let m = minimize_box(
            f,
            &[-1.2, 1.0],
            &[-5.0, -5.0],
            &[5.0, 5.0],
            MinimizeOptions { max_iter: 500, gtol: 1e-9, ftol: 0.0, max_step: 1.0, stall_window: 0, stall_tol: 0.0 },
        )
        .unwrap();
        assert!((m.x[0] - 1.0).abs() < 1e-5 && (m.x[1] - 1.0).abs() < 1e-5, "{m:?}");
    }

    #[test]
    fn active_bound() {
        // Unconstrained minimum at (3, −2); box forces x ≤ 1, y ≥ 0.
        let f = |x: &[f64]| {
            let v = (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 2.0).powi(2);
            (v, vec![2.0 * (x[0] - 3.0), 4.0 * (x[1] + 2.0)])
        };
        let m = minimize_box(f, &[0.0, 0.5], &[-1.0, 0.0], &[1.0, 1.0], MinimizeOptions::default()).unwrap();
        assert_eq!(m.x, vec![1.0, 0.0]);
        assert!(m.converged);
    }

    #[test]
    fn non_finite_start() {
        let f = |_: &[f64]| (f64::INFINITY, vec![0.0]);
        assert!(minimize_box(f, &[0.0], &[-1.0], &[1.0], MinimizeOptions::default()).is_none());
    }

    #[test]
    fn golden_section_finds_peak() {
        let (x, fx, trace) = golden_section_max(|r| -(r - 0.37f64).powi(2), 0.0, 0.95, 1e-4);
        assert!((x - 0.37).abs() < 1e-4);
        assert!(fx <= 0.0);
        assert!(trace.len() > 10);
    }
}
