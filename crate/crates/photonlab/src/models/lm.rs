//! Levenberg–Marquardt for weighted least squares with analytic Jacobians.

use crate::numeric::solve_linear;

#[derive(Debug, Clone, Copy)]
pub struct LmOptions {
    pub max_iter: usize,
    /// Convergence threshold on the largest cosine between the residual
    /// vector and a Jacobian column.
    pub gtol: f64,
    /// Stop when a step changes the cost by less than this relative amount.
    pub ftol: f64,
}

impl Default for LmOptions {
    fn default() -> Self {
        LmOptions {
            max_iter: 500,
            gtol: 1e-8,
            ftol: 1e-15,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LmResult {
    pub params: Vec<f64>,
    /// Euclidean norm of the weighted residual vector.
    pub residual_norm: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// A least-squares problem: model values and partial derivatives for one
/// parameter vector, evaluated at every data point.
pub trait Problem {
    fn n_params(&self) -> usize;
    /// Weighted residuals and their Jacobian rows.
    fn eval(&self, p: &[f64]) -> (Vec<f64>, Vec<Vec<f64>>);
    /// Rejects steps into invalid parameter space.
    fn valid(&self, _p: &[f64]) -> bool {
        true
    }
    /// Per-parameter lower bounds; trial steps are clipped onto them.
    fn lower_bounds(&self) -> Vec<Option<f64>> {
        vec![None; self.n_params()]
    }
}

fn cost(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|v| v * v).sum::<f64>()
}

/// Largest cosine between the residual and a Jacobian column, skipping
/// parameters held at a lower bound by a gradient pointing past it.
fn gradient_cosine(g: &[f64], jac: &[Vec<f64>], c: f64, p: &[f64], lb: &[Option<f64>]) -> f64 {
    let rnorm = (2.0 * c).sqrt();
    if rnorm == 0.0 {
        return 0.0;
    }
    (0..g.len())
        .filter(|&k| !(lb[k].is_some_and(|b| p[k] <= b) && g[k] > 0.0))
        .map(|k| {
            let col = jac.iter().map(|row| row[k] * row[k]).sum::<f64>().sqrt();
            if col == 0.0 {
                0.0
            } else {
                g[k].abs() / (col * rnorm)
            }
        })
        .fold(0.0, f64::max)
}

pub fn minimize<P: Problem>(problem: &P, start: &[f64], opts: LmOptions) -> LmResult {
    let n = problem.n_params();
    let lb = problem.lower_bounds();
    let mut p = start.to_vec();
    let (mut r, mut jac) = problem.eval(&p);
    let mut c = cost(&r);
    let mut lambda = 1e-3;
    let mut iterations = 0;

    let gradient = |r: &[f64], jac: &[Vec<f64>]| -> Vec<f64> {
        let mut g = vec![0.0; n];
        for (ri, row) in r.iter().zip(jac) {
            for k in 0..n {
                g[k] += row[k] * ri;
            }
        }
        g
    };

    // An exact fit leaves only rounding noise in the residual, whose
    // direction is meaningless; compare its size with the model scale
    // |J·p| instead.
    let model_scale = |jac: &[Vec<f64>], p: &[f64]| -> f64 {
        jac.iter()
            .map(|row| {
                row.iter()
                    .zip(p)
                    .map(|(j, x)| (j * x).abs())
                    .sum::<f64>()
                    .powi(2)
            })
            .sum::<f64>()
            .sqrt()
    };
    let done =
        |gnorm: f64, c: f64, scale: f64| gnorm <= opts.gtol || (2.0 * c).sqrt() <= 1e-12 * scale;
    let mut g = gradient(&r, &jac);
    let mut gnorm = gradient_cosine(&g, &jac, c, &p, &lb);
    while !done(gnorm, c, model_scale(&jac, &p)) && iterations < opts.max_iter {
        iterations += 1;
        let mut jtj = vec![vec![0.0; n]; n];
        for row in &jac {
            for a in 0..n {
                for b in a..n {
                    jtj[a][b] += row[a] * row[b];
                }
            }
        }
        for a in 0..n {
            for b in 0..a {
                jtj[a][b] = jtj[b][a];
            }
        }
        // parameters pinned at a bound with the gradient pushing past it
        let active: Vec<bool> = (0..n)
            .map(|k| lb[k].is_some_and(|b| p[k] <= b) && g[k] > 0.0)
            .collect();
        // a dead column (e.g. the lifetime of a zero amplitude) keeps unit
        // scale; squaring a tiny floor would underflow to 0/0
        let d: Vec<f64> = (0..n)
            .map(|k| {
                let s = jtj[k][k].sqrt();
                if s > 1e-150 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        let mut improved = false;
        let mut stalled = false;
        for _ in 0..60 {
            // solve in column-scaled variables so that badly scaled
            // parameters do not wreck the elimination
            let mut m = vec![vec![0.0; n]; n];
            let mut rhs = vec![0.0; n];
            for a in 0..n {
                if active[a] {
                    m[a][a] = 1.0;
                    continue;
                }
                for b in 0..n {
                    if !active[b] {
                        m[a][b] = jtj[a][b] / (d[a] * d[b]);
                    }
                }
                m[a][a] += lambda;
                rhs[a] = -g[a] / d[a];
            }
            let Some(y) = solve_linear(m, rhs) else {
                lambda *= 10.0;
                continue;
            };
            let step: Vec<f64> = y.iter().zip(&d).map(|(y, d)| y / d).collect();
            let trial: Vec<f64> = p
                .iter()
                .zip(&step)
                .zip(&lb)
                .map(|((a, b), l)| match l {
                    Some(l) => (a + b).max(*l),
                    None => a + b,
                })
                .collect();
            if !problem.valid(&trial) {
                lambda *= 10.0;
                continue;
            }
            let (rt, jt) = problem.eval(&trial);
            let ct = cost(&rt);
            if ct.is_finite() && ct <= c {
                let rel = (c - ct) / c.max(f64::MIN_POSITIVE);
                stalled = rel < opts.ftol
                    && step
                        .iter()
                        .zip(&trial)
                        .all(|(s, x)| s.abs() <= 1e-12 * x.abs().max(1e-12));
                p = trial;
                r = rt;
                jac = jt;
                c = ct;
                lambda = (lambda / 3.0).max(1e-12);
                improved = true;
                break;
            }
            lambda *= 4.0;
        }
        g = gradient(&r, &jac);
        gnorm = gradient_cosine(&g, &jac, c, &p, &lb);
        log::trace!("lm {iterations}: cost {c:.6e} cosine {gnorm:.3e} lambda {lambda:.1e} improved {improved} stalled {stalled}");
        if !improved || stalled {
            break;
        }
    }
    LmResult {
        residual_norm: (2.0 * c).sqrt(),
        converged: done(gnorm, c, model_scale(&jac, &p)),
        grad_norm: gnorm,
        params: p,
        iterations,
    }
}
