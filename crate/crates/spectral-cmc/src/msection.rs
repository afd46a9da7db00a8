//! Unitarizing section: for given residue weights and line-bundle parameter
//! chi, find the unique coefficient alpha that makes the monodromy of the
//! assembled connection unitarizable.
//!
//! The solver runs a two-real-unknown Newton iteration on (Re alpha,
//! Im alpha) with residuals given by imaginary parts of two selected
//! monodromy traces, then certifies the candidate by minimizing the full
//! unitarizability defect. Reduced residuals can admit spurious roots; the
//! certification step rejects them.

use nalgebra::DVector;

use crate::abelianization::{AbelianizedConnection, Weights, torus_lattice};
use crate::elliptic::EllipticContext;
use crate::jacobian::JacobianPoint;
use crate::monodromy::{LoopSystem, rep_with_system, unitarizability_defect};
use crate::path::Path;
use crate::solve::{LeastSquaresOptions, levenberg_marquardt};
use crate::transport::{M2, TRANSPORT_RTOL, transport};
use crate::{C64, Error, HALF_LATTICE_TOL, Result};

/// Distance to the half-lattice below which results are flagged as
/// potentially degraded.
pub const NEAR_SPIN_DISTANCE: f64 = 0.02;

/// Residual norm at which the Newton iteration stops refining.
const NEWTON_RESIDUAL_TOL: f64 = 1e-10;

/// Finite-difference step on (Re alpha, Im alpha).
const FD_STEP: f64 = 1e-6;

/// Smallest continuation step in the weight-scaling homotopy.
const MIN_CONTINUATION_STEP: f64 = 1.0 / 32.0;

/// A unitarization query: weights and line-bundle point, an initial guess,
/// the certification tolerance, and the iteration budget.
#[derive(Debug, Clone)]
pub struct MSQuery {
    pub weights: Weights,
    pub chi: JacobianPoint,
    pub guess: C64,
    pub tol: f64,
    pub max_iter: usize,
}

impl MSQuery {
    /// Query with the default initial guess conj(chi), which is exact at
    /// zero weights, certification tolerance 1e-10, and 40 iterations.
    pub fn new(weights: Weights, chi: JacobianPoint) -> Self {
        let guess = chi.chi().conj();
        Self {
            weights,
            chi,
            guess,
            tol: 1e-10,
            max_iter: 40,
        }
    }

    pub fn with_guess(mut self, guess: C64) -> Self {
        self.guess = guess;
        self
    }
}

/// A certified solution of a unitarization query.
#[derive(Debug, Clone)]
pub struct MSSolution {
    pub alpha: C64,
    /// Full unitarizability defect at the returned alpha.
    pub defect: f64,
    pub iterations: usize,
    /// Set when chi sits close to the half-lattice; accuracy may degrade.
    pub near_spin: bool,
    /// Set when a pair of traces other than the primary one drove part of
    /// the iteration.
    pub fallback_used: bool,
    /// Set when the direct solve failed and the answer was reached by
    /// continuation in the weights from the zero-weight closed form.
    pub continuation_used: bool,
}

/// Which pair of trace residuals drives the Newton iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ResidualPair {
    CycleWithLoop0,
    CycleWithLoop1,
    MixedLoop0,
}

impl ResidualPair {
    fn next(self) -> Option<ResidualPair> {
        match self {
            ResidualPair::CycleWithLoop0 => Some(ResidualPair::CycleWithLoop1),
            ResidualPair::CycleWithLoop1 => Some(ResidualPair::MixedLoop0),
            ResidualPair::MixedLoop0 => None,
        }
    }
}

struct TraceSystem<'a> {
    template: &'a AbelianizedConnection,
    sys: &'a LoopSystem,
    loop0_cw: Path,
    loop1_cw: Path,
}

impl<'a> TraceSystem<'a> {
    fn new(template: &'a AbelianizedConnection, sys: &'a LoopSystem) -> Self {
        Self {
            template,
            sys,
            loop0_cw: sys.keyhole_ccw(0).reversed(),
            loop1_cw: sys.keyhole_ccw(1).reversed(),
        }
    }

    /// Two trace residuals at the given alpha: three path transports.
    fn residuals(&self, alpha: C64, pair: ResidualPair, rtol: f64) -> Result<[f64; 2]> {
        let conn = self.template.with_alpha(alpha);
        let tr = |m: &M2| -> f64 { (m[(0, 0)] + m[(1, 1)]).im };
        let a = transport(&conn, self.sys.cycle_a(), rtol)?;
        let b = transport(&conn, self.sys.cycle_b(), rtol)?;
        Ok(match pair {
            ResidualPair::CycleWithLoop0 => {
                let n0 = transport(&conn, &self.loop0_cw, rtol)?;
                [tr(&(a * n0)), tr(&(a * b))]
            }
            ResidualPair::CycleWithLoop1 => {
                let n1 = transport(&conn, &self.loop1_cw, rtol)?;
                [tr(&(a * n1)), tr(&(a * b))]
            }
            ResidualPair::MixedLoop0 => {
                let n0 = transport(&conn, &self.loop0_cw, rtol)?;
                [tr(&(b * n0)), tr(&(a * n0))]
            }
        })
    }
}

/// One damped least-squares run on a fixed residual pair. Returns the end
/// point, the iterations spent, and the final residual norm. `forward`
/// selects one-sided difference quotients for the Jacobian, saving two
/// transport evaluations per iteration on well-seeded queries.
fn lm_root(
    system: &TraceSystem<'_>,
    guess: C64,
    pair: ResidualPair,
    max_iter: usize,
    rtol: f64,
    forward: bool,
) -> Result<(C64, usize, f64)> {
    let mut f = |x: &DVector<f64>| -> Result<DVector<f64>> {
        let r = system.residuals(C64::new(x[0], x[1]), pair, rtol)?;
        Ok(DVector::from_column_slice(&r))
    };
    let opts = LeastSquaresOptions {
        residual_tol: NEWTON_RESIDUAL_TOL,
        step_tol: 1e-13,
        max_iters: max_iter,
        fd_step: FD_STEP,
        lambda0: 1e-3,
        forward_fd: forward,
    };
    let start = DVector::from_column_slice(&[guess.re, guess.im]);
    let report = levenberg_marquardt(&mut f, start, &opts)?;
    Ok((
        C64::new(report.x[0], report.x[1]),
        report.iterations,
        report.residual_norm,
    ))
}

/// Drive the residuals to zero from the given guess, walking down the pair
/// ladder when a pair stalls. Each pair restarts from the original guess.
fn root_from(
    system: &TraceSystem<'_>,
    guess: C64,
    max_iter: usize,
    rtol: f64,
    forward: bool,
) -> Result<(C64, usize, bool)> {
    let mut total = 0;
    let mut fallback = false;
    let mut last = (guess, f64::INFINITY);
    let mut pair = Some(ResidualPair::CycleWithLoop0);
    while let Some(p) = pair {
        let (alpha, iters, rnorm) = lm_root(system, guess, p, max_iter, rtol, forward)?;
        total += iters;
        if rnorm < NEWTON_RESIDUAL_TOL {
            return Ok((alpha, total, fallback));
        }
        fallback = true;
        if rnorm < last.1 {
            last = (alpha, rnorm);
        }
        pair = p.next();
    }
    Err(Error::NewtonDivergence {
        iterations: total,
        residual: last.1,
        last: last.0,
    })
}

/// Solve a unitarization query, returning the full diagnostic record.
pub fn solve_alpha_u_full(q: &MSQuery) -> Result<MSSolution> {
    let lattice = q.chi.lattice();
    let spin_dist = lattice.dist_to_half_lattice(q.chi.chi());
    if !q.weights.is_zero() && spin_dist < HALF_LATTICE_TOL {
        return Err(Error::SpinDegeneracy { chi: q.chi.chi() });
    }
    let near_spin = !q.weights.is_zero() && spin_dist < NEAR_SPIN_DISTANCE;

    let tau = lattice.tau();
    let sys = LoopSystem::new(tau)?;
    let template = AbelianizedConnection::new(tau, q.weights, q.chi, q.guess)?;

    let certify = |alpha: C64| -> Result<f64> {
        let conn = template.with_alpha(alpha);
        let rep = rep_with_system(&conn, &sys, sys.basepoint(), TRANSPORT_RTOL)?;
        let report = unitarizability_defect(&rep, 200, 1e-14);
        if report.converged && report.defect <= q.tol {
            Ok(report.defect)
        } else {
            Err(Error::SpuriousRoot {
                alpha,
                defect: report.defect,
            })
        }
    };

    let mut iterations = 0;
    let mut fallback_used = false;

    // Direct attempt from the caller's guess. The reduced residuals admit
    // roots that are not unitarizing; certification filters them.
    let system = TraceSystem::new(&template, &sys);
    if let Ok((alpha, iters, fb)) = root_from(&system, q.guess, q.max_iter, TRANSPORT_RTOL, false) {
        iterations += iters;
        fallback_used |= fb;
        if let Ok(defect) = certify(alpha) {
            return Ok(MSSolution {
                alpha,
                defect,
                iterations,
                near_spin,
                fallback_used,
                continuation_used: false,
            });
        }
    }

    // Homotopy in the weights: start at the exact zero-weight solution and
    // scale the weights up, warm-starting each stage.
    let mut alpha = q.chi.chi().conj();
    let mut s = 0.0f64;
    let mut ds = 0.25f64;
    while s < 1.0 {
        let s_next = (s + ds).min(1.0);
        let scaled = Weights::new(s_next * q.weights.rho0(), s_next * q.weights.rho1())?;
        let stage_template = AbelianizedConnection::new(tau, scaled, q.chi, alpha)?;
        let stage = TraceSystem::new(&stage_template, &sys);
        match root_from(&stage, alpha, q.max_iter, TRANSPORT_RTOL, false) {
            Ok((a, iters, fb)) => {
                alpha = a;
                s = s_next;
                iterations += iters;
                fallback_used |= fb;
                ds = (ds * 2.0).min(0.25);
            }
            Err(e) => {
                ds *= 0.5;
                if ds < MIN_CONTINUATION_STEP {
                    return Err(e);
                }
            }
        }
    }

    let defect = certify(alpha)?;
    Ok(MSSolution {
        alpha,
        defect,
        iterations,
        near_spin,
        fallback_used,
        continuation_used: true,
    })
}

/// Solve a unitarization query for the coefficient alone.
pub fn solve_alpha_u(q: &MSQuery) -> Result<C64> {
    solve_alpha_u_full(q).map(|s| s.alpha)
}

/// Reusable solving session for many line-bundle points at one torus
/// modulus and one set of weights. Shares the elliptic context and the
/// transport loop system across solves, which matters inside residual loops
/// that query the section at every circle sample.
///
/// `solve` returns an uncertified Newton root from the caller's guess.
/// Callers tracking a continuous branch should warm-start from nearby
/// solutions and call `certify` on accepted states; cold queries belong to
/// [`solve_alpha_u_full`], which adds the continuation fallback.
#[derive(Debug)]
pub struct SectionSolver {
    ctx: EllipticContext,
    sys: LoopSystem,
    weights: Weights,
    tau: C64,
    rtol: f64,
}

impl SectionSolver {
    pub fn new(tau: C64, weights: Weights) -> Result<Self> {
        let ctx = EllipticContext::new(torus_lattice(tau)?)?;
        let sys = LoopSystem::new(tau)?;
        Ok(Self {
            ctx,
            sys,
            weights,
            tau,
            rtol: TRANSPORT_RTOL,
        })
    }

    /// Relax or tighten the transport tolerance used by `solve`.
    pub fn with_rtol(mut self, rtol: f64) -> Self {
        self.rtol = rtol;
        self
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }

    fn template(&self, chi: &JacobianPoint, alpha: C64) -> Result<AbelianizedConnection> {
        AbelianizedConnection::from_context(self.ctx.clone(), self.weights, *chi, alpha)
    }

    /// Newton root of the reduced trace system from the guess, without
    /// certification. Zero weights return the exact closed form.
    pub fn solve(&self, chi: &JacobianPoint, guess: C64, max_iter: usize) -> Result<C64> {
        if self.weights.is_zero() {
            return Ok(chi.chi().conj());
        }
        if chi.lattice().dist_to_half_lattice(chi.chi()) < HALF_LATTICE_TOL {
            return Err(Error::SpinDegeneracy { chi: chi.chi() });
        }
        let template = self.template(chi, guess)?;
        let system = TraceSystem::new(&template, &self.sys);
        let (alpha, _, _) = root_from(&system, guess, max_iter, self.rtol, true)?;
        Ok(alpha)
    }

    /// Local first-order response of the section: the solved coefficient
    /// together with the 2x2 real derivative d(Re a, Im a)/d(Re chi, Im chi),
    /// estimated through the implicit function theorem on the reduced trace
    /// system with one-sided differences.
    pub fn solve_with_slope(
        &self,
        chi: &JacobianPoint,
        guess: C64,
        max_iter: usize,
    ) -> Result<(C64, [[f64; 2]; 2])> {
        let alpha = self.solve(chi, guess, max_iter)?;
        if self.weights.is_zero() {
            // Exact: alpha = conj(chi).
            return Ok((alpha, [[1.0, 0.0], [0.0, -1.0]]));
        }
        let h = 1e-6 * (1.0 + chi.chi().norm());
        let pair = ResidualPair::CycleWithLoop0;
        let template = self.template(chi, alpha)?;
        let system = TraceSystem::new(&template, &self.sys);
        let r0 = system.residuals(alpha, pair, self.rtol)?;
        // Columns of dr/d(alpha).
        let ra = system.residuals(alpha + C64::new(h, 0.0), pair, self.rtol)?;
        let rb = system.residuals(alpha + C64::new(0.0, h), pair, self.rtol)?;
        // Columns of dr/d(chi) need the template rebuilt at shifted chi.
        let lattice = *chi.lattice();
        let chi_col = |dc: C64| -> Result<[f64; 2]> {
            let moved = JacobianPoint::from_raw(chi.chi() + dc, &lattice);
            let template = self.template(&moved, alpha)?;
            let system = TraceSystem::new(&template, &self.sys);
            let r = system.residuals(alpha, pair, self.rtol)?;
            Ok([(r[0] - r0[0]) / h, (r[1] - r0[1]) / h])
        };
        let rc = chi_col(C64::new(h, 0.0))?;
        let rd = chi_col(C64::new(0.0, h))?;
        // Solve (dr/da) S = -(dr/dchi) for the 2x2 slope S.
        let da = [
            [(ra[0] - r0[0]) / h, (rb[0] - r0[0]) / h],
            [(ra[1] - r0[1]) / h, (rb[1] - r0[1]) / h],
        ];
        let det = da[0][0] * da[1][1] - da[0][1] * da[1][0];
        if det.abs() < 1e-14 {
            return Err(Error::Domain(
                "section slope is singular at this point".into(),
            ));
        }
        let inv = [
            [da[1][1] / det, -da[0][1] / det],
            [-da[1][0] / det, da[0][0] / det],
        ];
        let rhs = [[rc[0], rd[0]], [rc[1], rd[1]]];
        let mut slope = [[0.0; 2]; 2];
        for i in 0..2 {
            for j in 0..2 {
                slope[i][j] = -(inv[i][0] * rhs[0][j] + inv[i][1] * rhs[1][j]);
            }
        }
        Ok((alpha, slope))
    }

    /// Full unitarizability defect of the closure at the given coefficient.
    pub fn certify(&self, chi: &JacobianPoint, alpha: C64) -> Result<f64> {
        let template = self.template(chi, alpha)?;
        let rep = rep_with_system(&template, &self.sys, self.sys.basepoint(), TRANSPORT_RTOL)?;
        let report = unitarizability_defect(&rep, 200, 1e-14);
        Ok(report.defect)
    }
}

/// Measured and expected shifts of the unitarizing coefficient under
/// translation of the line-bundle representative by twice each Jacobian
/// generator.
#[derive(Debug, Clone)]
pub struct FunctionalEquationReport {
    pub shift_a: C64,
    pub shift_b: C64,
    pub expected_a: C64,
    pub expected_b: C64,
    pub max_error: f64,
    pub ok: bool,
}

/// Verify the two translation laws of the lifted unitarizing section: the
/// coefficient solved at representative chi + 2 g shifts by conj(2 g) for
/// each Jacobian generator g. Three independent solver runs.
pub fn verify_functional_equations(
    weights: Weights,
    chi: &JacobianPoint,
    tol: f64,
) -> Result<FunctionalEquationReport> {
    let lattice = *chi.lattice();
    let base = solve_alpha_u(&MSQuery::new(weights, *chi))?;
    let mut shifts = [C64::from(0.0); 2];
    let mut expected = [C64::from(0.0); 2];
    for (k, g) in [lattice.g1(), lattice.g2()].into_iter().enumerate() {
        let translated = JacobianPoint::from_raw(chi.chi() + 2.0 * g, &lattice);
        let moved = solve_alpha_u(&MSQuery::new(weights, translated))?;
        shifts[k] = moved - base;
        expected[k] = (2.0 * g).conj();
    }
    let max_error = (shifts[0] - expected[0])
        .norm()
        .max((shifts[1] - expected[1]).norm());
    Ok(FunctionalEquationReport {
        shift_a: shifts[0],
        shift_b: shifts[1],
        expected_a: expected[0],
        expected_b: expected[1],
        max_error,
        ok: max_error < tol,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobian::{JacLattice, reduce};

    #[test]
    fn query_defaults_start_at_the_conjugate() {
        let jl = JacLattice::new(C64::new(0.0, 1.0)).unwrap();
        let chi = reduce(jl.from_coords(0.21, 0.34), &jl);
        let q = MSQuery::new(Weights::new(0.1, 0.05).unwrap(), chi);
        assert_eq!(q.guess, chi.chi().conj());
        assert_eq!(q.max_iter, 40);
    }

    #[test]
    fn residual_pair_fallback_chain_terminates() {
        let mut pair = ResidualPair::CycleWithLoop0;
        let mut count = 0;
        while let Some(p) = pair.next() {
            pair = p;
            count += 1;
        }
        assert_eq!(count, 2);
    }

    #[test]
    fn spin_degenerate_queries_are_rejected() {
        let jl = JacLattice::new(C64::new(0.0, 1.0)).unwrap();
        let chi = reduce(jl.g1() * C64::from(0.5), &jl);
        let q = MSQuery::new(Weights::new(0.1, 0.05).unwrap(), chi);
        match solve_alpha_u(&q) {
            Err(Error::SpinDegeneracy { .. }) => {}
            other => panic!("expected spin degeneracy, got {other:?}"),
        }
    }
}
