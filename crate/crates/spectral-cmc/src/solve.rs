//! Damped least-squares solver (Levenberg-Marquardt with finite-difference
//! Jacobians) used for the small nonlinear systems in this crate: residual
//! closing, unitarizability minimization, and section solving.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LeastSquaresOptions {
    /// Stop when the residual 2-norm drops below this.
    pub residual_tol: f64,
    /// Stop when the step norm drops below step_tol * (1 + |x|).
    pub step_tol: f64,
    /// Maximum outer iterations.
    pub max_iters: usize,
    /// Central finite-difference step for the Jacobian.
    pub fd_step: f64,
    /// Initial damping parameter.
    pub lambda0: f64,
    /// Use one-sided differences for the Jacobian. Halves the evaluation
    /// count per column at the price of a first-order Jacobian, which the
    /// damped iteration tolerates when evaluations are expensive.
    pub forward_fd: bool,
}

impl Default for LeastSquaresOptions {
    fn default() -> Self {
        Self {
            residual_tol: 1e-12,
            step_tol: 1e-13,
            max_iters: 100,
            fd_step: 1e-6,
            lambda0: 1e-3,
            forward_fd: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LeastSquaresReport {
    pub x: DVector<f64>,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Central finite-difference Jacobian of f at x.
pub fn fd_jacobian<F>(f: &mut F, x: &DVector<f64>, h: f64) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        let step = h * (1.0 + x[j].abs());
        xp[j] += step;
        xm[j] -= step;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        cols.push((fp - fm) / (2.0 * step));
    }
    let m = cols[0].len();
    Ok(DMatrix::from_fn(m, n, |i, j| cols[j][i]))
}

/// One-sided finite-difference Jacobian of f at x, reusing the residual r0
/// already evaluated there.
pub fn fd_jacobian_forward<F>(
    f: &mut F,
    x: &DVector<f64>,
    r0: &DVector<f64>,
    h: f64,
) -> Result<DMatrix<f64>>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let n = x.len();
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(n);
    for j in 0..n {
        let mut xp = x.clone();
        let step = h * (1.0 + x[j].abs());
        xp[j] += step;
        let fp = f(&xp)?;
        cols.push((fp - r0) / step);
    }
    Ok(DMatrix::from_fn(r0.len(), n, |i, j| cols[j][i]))
}

/// Minimize |f(x)|^2 by damped Gauss-Newton steps. Returns the best point
/// found; `converged` reports whether a stopping criterion was met before the
/// iteration limit.
pub fn levenberg_marquardt<F>(
    f: &mut F,
    x0: DVector<f64>,
    opts: &LeastSquaresOptions,
) -> Result<LeastSquaresReport>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let mut x = x0;
    let mut r = f(&x)?;
    let mut rnorm = r.norm();
    let mut lambda = opts.lambda0;

    for iter in 0..opts.max_iters {
        if rnorm < opts.residual_tol {
            return Ok(LeastSquaresReport {
                x,
                residual_norm: rnorm,
                iterations: iter,
                converged: true,
            });
        }
        let jac = if opts.forward_fd {
            fd_jacobian_forward(f, &x, &r, opts.fd_step)?
        } else {
            fd_jacobian(f, &x, opts.fd_step)?
        };
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * &r;

        let mut accepted = false;
        for _ in 0..25 {
            let mut damped = jtj.clone();
            for k in 0..damped.nrows() {
                damped[(k, k)] += lambda * (1.0 + jtj[(k, k)]);
            }
            let step = match damped.clone().cholesky() {
                Some(ch) => ch.solve(&g),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let x_new = &x - &step;
            let r_new = f(&x_new)?;
            let rnorm_new = r_new.norm();
            if rnorm_new <= rnorm {
                let small_step = step.norm() < opts.step_tol * (1.0 + x.norm());
                let no_progress = rnorm - rnorm_new < 1e-16 * (1.0 + rnorm);
                x = x_new;
                r = r_new;
                rnorm = rnorm_new;
                lambda = (lambda / 3.0).max(1e-14);
                accepted = true;
                if small_step || no_progress {
                    return Ok(LeastSquaresReport {
                        x,
                        residual_norm: rnorm,
                        iterations: iter + 1,
                        converged: rnorm < opts.residual_tol || small_step,
                    });
                }
                break;
            }
            lambda *= 4.0;
        }
        if !accepted {
            return Ok(LeastSquaresReport {
                x,
                residual_norm: rnorm,
                iterations: iter + 1,
                converged: rnorm < opts.residual_tol,
            });
        }
    }
    let converged = rnorm < opts.residual_tol;
    Ok(LeastSquaresReport {
        x,
        residual_norm: rnorm,
        iterations: opts.max_iters,
        converged,
    })
}

/// Solve a square nonlinear system f(x) = 0; errors if no solution is found
/// to within the residual tolerance.
pub fn solve_system<F>(
    f: &mut F,
    x0: DVector<f64>,
    opts: &LeastSquaresOptions,
) -> Result<LeastSquaresReport>
where
    F: FnMut(&DVector<f64>) -> Result<DVector<f64>>,
{
    let report = levenberg_marquardt(f, x0, opts)?;
    if report.residual_norm > opts.residual_tol.max(1e-10) {
        return Err(Error::NoConvergence {
            iterations: report.iterations,
            residual: report.residual_norm,
        });
    }
    Ok(report)
}
