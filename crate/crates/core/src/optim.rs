//! Nelder-Mead simplex minimisation with dimension-adaptive coefficients.

use std::cell::Cell;

/// Stopping and start-up settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexOptions {
    /// Stop once every vertex lies within this max-norm distance of the best.
    pub tol: f64,
    pub max_evals: usize,
    /// Offset added to each coordinate to build the initial simplex.
    pub initial_step: f64,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            tol: 1e-8,
            max_evals: 50_000,
            initial_step: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimplexResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub evals: usize,
    pub iterations: usize,
    pub converged: bool,
    /// Best objective value after each iteration.
    pub trace: Vec<f64>,
}

fn diameter(points: &[Vec<f64>]) -> f64 {
    let best = &points[0];
    points[1..]
        .iter()
        .flat_map(|p| p.iter().zip(best).map(|(a, b)| (a - b).abs()))
        .fold(0.0, f64::max)
}

/// Minimises `f` from `x0`. Non-finite objective values are treated as `+inf`.
pub fn nelder_mead(f: impl Fn(&[f64]) -> f64, x0: &[f64], opts: &SimplexOptions) -> SimplexResult {
    let n = x0.len();
    let counter = Cell::new(0usize);
    let eval = |x: &[f64]| -> f64 {
        counter.set(counter.get() + 1);
        let v = f(x);
        if v.is_finite() {
            v
        } else {
            f64::INFINITY
        }
    };
    if n == 0 {
        let v = eval(x0);
        return SimplexResult {
            x: vec![],
            f: v,
            evals: 1,
            iterations: 0,
            converged: true,
            trace: vec![],
        };
    }
    let nf = n as f64;
    let (alpha, beta, gamma, delta) = (1.0, 1.0 + 2.0 / nf, 0.75 - 0.5 / nf, 1.0 - 1.0 / nf);

    let mut pts: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    pts.push(x0.to_vec());
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] += opts.initial_step;
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p)).collect();
    let mut iterations = 0;
    let mut trace = Vec::new();
    let mut converged = false;

    loop {
        // stable sort keeps the earlier vertex first on ties
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        if iterations > 0 {
            trace.push(vals[0]);
        }
        if diameter(&pts) < opts.tol {
            converged = true;
            break;
        }
        if counter.get() >= opts.max_evals {
            break;
        }
        iterations += 1;

        let mut centroid = vec![0.0; n];
        for p in &pts[..n] {
            for (c, v) in centroid.iter_mut().zip(p) {
                *c += v / nf;
            }
        }
        let along = |t: f64| -> Vec<f64> {
            centroid
                .iter()
                .zip(&pts[n])
                .map(|(c, w)| c + t * (c - w))
                .collect()
        };
        let xr = along(alpha);
        let fr = eval(&xr);
        if fr < vals[0] {
            let xe = along(alpha * beta);
            let fe = eval(&xe);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
            continue;
        }
        if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
            continue;
        }
        // outside contraction if the reflection beat the worst vertex
        let xc = if fr < vals[n] { along(alpha * gamma) } else { along(-gamma) };
        let fc = eval(&xc);
        if fc < vals[n].min(fr) {
            pts[n] = xc;
            vals[n] = fc;
            continue;
        }
        for i in 1..=n {
            let p: Vec<f64> = pts[0]
                .iter()
                .zip(&pts[i])
                .map(|(b, x)| b + delta * (x - b))
                .collect();
            vals[i] = eval(&p);
            pts[i] = p;
        }
    }
    SimplexResult {
        x: pts.swap_remove(0),
        f: vals[0],
        evals: counter.get(),
        iterations,
        converged,
        trace,
    }
}

/// Runs [`nelder_mead`] repeatedly from its own optimum until a restart no
/// longer improves the objective or the evaluation budget is spent.
pub fn nelder_mead_restarting(
    f: impl Fn(&[f64]) -> f64,
    x0: &[f64],
    opts: &SimplexOptions,
) -> SimplexResult {
    let mut best = nelder_mead(&f, x0, opts);
    loop {
        let left = opts.max_evals.saturating_sub(best.evals);
        if left <= x0.len() + 1 || !best.converged {
            return best;
        }
        let step = SimplexOptions {
            max_evals: left,
            ..*opts
        };
        let next = nelder_mead(&f, &best.x, &step);
        let improved = next.f < best.f;
        best.evals += next.evals;
        best.iterations += next.iterations;
        let floor = best.f;
        best.trace.extend(next.trace.iter().map(|v| v.min(floor)));
        if !improved {
            return best;
        }
        best.x = next.x;
        best.f = next.f;
        best.converged = next.converged;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rosenbrock(x: &[f64]) -> f64 {
        (1.0 - x[0]).powi(2) + 100.0 * (x[1] - x[0] * x[0]).powi(2)
    }

    #[test]
    fn quadratic_minimum() {
        let f = |x: &[f64]| (x[0] - 3.0).powi(2) + 2.0 * (x[1] + 1.0).powi(2) + 0.5 * x[2] * x[2];
        let r = nelder_mead(f, &[0.0, 0.0, 0.0], &SimplexOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 3.0).abs() < 1e-7 && (r.x[1] + 1.0).abs() < 1e-7 && r.x[2].abs() < 1e-7);
    }

    #[test]
    fn rosenbrock_minimum() {
        let r = nelder_mead_restarting(rosenbrock, &[-1.2, 1.0], &SimplexOptions::default());
        assert!(r.converged);
        assert!((r.x[0] - 1.0).abs() < 1e-6 && (r.x[1] - 1.0).abs() < 1e-6, "{:?}", r.x);
    }

    #[test]
    fn trace_is_monotone() {
        let r = nelder_mead_restarting(rosenbrock, &[-1.2, 1.0], &SimplexOptions::default());
        assert!(r.trace.windows(2).all(|w| w[1] <= w[0]));
        assert!(*r.trace.last().unwrap() == r.f);
    }

    #[test]
    fn never_worse_than_start() {
        let f = |x: &[f64]| x.iter().map(|v| v.abs().sqrt()).sum::<f64>();
        let x0 = [0.0, 0.0, 0.0];
        let r = nelder_mead(f, &x0, &SimplexOptions { max_evals: 200, ..Default::default() });
        assert_eq!(r.f, 0.0);
        assert_eq!(r.x, x0);
    }

    #[test]
    fn budget_is_respected() {
        let opts = SimplexOptions { max_evals: 60, tol: 0.0, ..Default::default() };
        let r = nelder_mead(rosenbrock, &[-1.2, 1.0], &opts);
        assert!(!r.converged);
        // one iteration may overshoot by at most n + 1 evaluations
        assert!(r.evals <= 60 + 3);
    }

    #[test]
    fn nan_is_rejected() {
        let f = |x: &[f64]| if x[0] > 0.5 { f64::NAN } else { (x[0] - 0.5).powi(2) + x[1] * x[1] };
        let r = nelder_mead(f, &[0.0, 0.3], &SimplexOptions::default());
        assert!(r.f.is_finite() && r.x[0] <= 0.5);
    }
}
