//! Monodromy representations of flat connections on the four-punctured
//! torus: keyhole loops around the punctures, the two torus cycles, the
//! generator relation, a unitarizability defect, and trace residuals.
//!
//! Loop conventions. All loops are based at the cell corner b = -1/2. With
//! gamma_a = 1 - tau and gamma_b = 1 + tau, the commutator cell has corners
//! b, b + gamma_b, b + gamma_b - gamma_a, b - gamma_a and contains one copy
//! of each puncture, shifted by -gamma_a. The A cycle runs from b to
//! b + gamma_a, the B cycle from b to b - gamma_b. Keyholes consist of
//! straight connectors (one waypoint for the third puncture copy, which is
//! hidden behind the first) and a full circle around the target copy. The
//! generator around puncture 3 is dressed by the keyhole around puncture 2
//! so that the product relation
//!   (A B A^-1 B^-1) g3 g2 g1 g0 = identity
//! holds as written in matrix order.

use nalgebra::DVector;

use crate::abelianization::AbelianizedConnection;
use crate::path::{CLEARANCE, Path, Segment};
use crate::solve::{LeastSquaresOptions, levenberg_marquardt};
use crate::transport::{ConnectionEval, M2, transport};
use crate::{C64, Error, Result};

/// Keyhole circle radius as a fraction of the shortest lattice generator,
/// clamped to a fixed window.
pub const KEYHOLE_RADIUS_FACTOR: f64 = 0.06;
pub const KEYHOLE_RADIUS_MIN: f64 = 0.05;
pub const KEYHOLE_RADIUS_MAX: f64 = 0.12;

fn inv2(m: &M2) -> M2 {
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    M2::new(m[(1, 1)] / det, -m[(0, 1)] / det, -m[(1, 0)] / det, m[(0, 0)] / det)
}

fn frob(m: &M2) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// The loop system on the four-punctured torus for modulus tau: basepoint,
/// counterclockwise keyhole paths around the puncture copies inside the
/// commutator cell, the two cycle paths, and the commutator cell boundary.
#[derive(Debug, Clone)]
pub struct LoopSystem {
    basepoint: C64,
    keyholes_ccw: [Path; 4],
    cycle_a: Path,
    cycle_b: Path,
    commutator: Path,
    puncture_copies: Vec<C64>,
}

/// Build a keyhole path: straight connectors through the waypoints, a full
/// counterclockwise circle around the target, and the connectors reversed.
fn keyhole(base: C64, waypoints: &[C64], target: C64, radius: f64) -> Result<Path> {
    let last = *waypoints.last().unwrap_or(&base);
    let approach = target - last;
    let dir = approach / C64::from(approach.norm());
    let entry = target - dir * C64::from(radius);
    let theta0 = (entry - target).im.atan2((entry - target).re);

    let mut segs = Vec::new();
    let mut prev = base;
    for &w in waypoints {
        segs.push(Segment::Line { from: prev, to: w });
        prev = w;
    }
    segs.push(Segment::Line { from: prev, to: entry });
    segs.push(Segment::Arc {
        center: target,
        radius,
        start_angle: theta0,
        end_angle: theta0 + 2.0 * std::f64::consts::PI,
    });
    let n = segs.len() - 1;
    for i in (0..n).rev() {
        segs.push(segs[i].reversed());
    }
    Path::new(segs)
}

impl LoopSystem {
    pub fn new(tau: C64) -> Result<Self> {
        if tau.im <= 0.0 {
            return Err(Error::Domain("modulus must have positive imaginary part".into()));
        }
        let one = C64::from(1.0);
        let ga = one - tau; // A-cycle translation
        let gb = one + tau; // B-cycle direction (cycle runs to b - gb)
        let uv = |u: f64, v: f64| -> C64 { gb * C64::from(u) + ga * C64::from(v) };
        let b = -(ga + gb) * C64::from(0.25);

        // Puncture copies inside the commutator cell (shifted by -ga).
        let copies = [uv(0.0, -1.0), uv(0.0, -0.5), uv(0.5, -0.5), uv(0.5, -1.0)];
        let radius = (KEYHOLE_RADIUS_FACTOR * ga.norm().min(gb.norm()))
            .clamp(KEYHOLE_RADIUS_MIN, KEYHOLE_RADIUS_MAX);

        // The copy of puncture 3 sits exactly behind the copy of puncture 1
        // as seen from the basepoint; route its connector around one side.
        let w3 = uv(0.25, -0.5);
        let keyholes_ccw = [
            keyhole(b, &[], copies[0], radius)?,
            keyhole(b, &[], copies[1], radius)?,
            keyhole(b, &[], copies[2], radius)?,
            keyhole(b, &[w3], copies[3], radius)?,
        ];

        let cycle_a = Path::line(b, b + ga);
        let cycle_b = Path::line(b, b - gb);
        let commutator = Path::new(vec![
            Segment::Line { from: b, to: b + gb },
            Segment::Line { from: b + gb, to: b + gb - ga },
            Segment::Line { from: b + gb - ga, to: b - ga },
            Segment::Line { from: b - ga, to: b },
        ])?;

        let mut puncture_copies = Vec::new();
        let base_punctures = [
            C64::from(0.0),
            ga * C64::from(0.5),
            (ga + gb) * C64::from(0.5),
            gb * C64::from(0.5),
        ];
        for m in -2i32..=2 {
            for n in -2i32..=2 {
                for &p in &base_punctures {
                    puncture_copies.push(p + gb * C64::from(m as f64) + ga * C64::from(n as f64));
                }
            }
        }

        let sys = Self {
            basepoint: b,
            keyholes_ccw,
            cycle_a,
            cycle_b,
            commutator,
            puncture_copies,
        };
        sys.check_clearances()?;
        Ok(sys)
    }

    /// Verify every path keeps clear of every puncture copy in a window of
    /// lattice translates. The keyhole circles sit at exactly their radius
    /// from their own target, which passes the clearance margin.
    fn check_clearances(&self) -> Result<()> {
        for path in self
            .keyholes_ccw
            .iter()
            .chain([&self.cycle_a, &self.cycle_b, &self.commutator])
        {
            path.check_clearance(&self.puncture_copies, CLEARANCE)?;
        }
        Ok(())
    }

    pub fn basepoint(&self) -> C64 {
        self.basepoint
    }

    pub fn keyhole_ccw(&self, i: usize) -> &Path {
        &self.keyholes_ccw[i]
    }

    pub fn cycle_a(&self) -> &Path {
        &self.cycle_a
    }

    pub fn cycle_b(&self) -> &Path {
        &self.cycle_b
    }

    pub fn commutator(&self) -> &Path {
        &self.commutator
    }
}

/// Monodromy generators of a flat connection: loops around the four
/// punctures and the two torus cycles, all based at the same point.
#[derive(Debug, Clone, PartialEq)]
pub struct MonodromyRep {
    pub loops: [M2; 4],
    pub cycle_a: M2,
    pub cycle_b: M2,
}

impl MonodromyRep {
    pub fn generators(&self) -> Vec<M2> {
        vec![
            self.loops[0],
            self.loops[1],
            self.loops[2],
            self.loops[3],
            self.cycle_a,
            self.cycle_b,
        ]
    }

    /// Deviation of every generator determinant from one.
    pub fn det_defect(&self) -> f64 {
        self.generators()
            .iter()
            .map(|m| {
                let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
                (det - C64::from(1.0)).norm()
            })
            .fold(0.0, f64::max)
    }

    /// Frobenius deviation of (A B A^-1 B^-1) g3 g2 g1 g0 from the identity.
    pub fn relation_defect(&self) -> f64 {
        let a = self.cycle_a;
        let b = self.cycle_b;
        let com = a * b * inv2(&a) * inv2(&b);
        let product = com * self.loops[3] * self.loops[2] * self.loops[1] * self.loops[0];
        frob(&(product - M2::identity()))
    }

    /// Conjugate every generator by the same matrix.
    pub fn conjugated(&self, g: &M2) -> MonodromyRep {
        let gi = inv2(g);
        MonodromyRep {
            loops: [
                gi * self.loops[0] * g,
                gi * self.loops[1] * g,
                gi * self.loops[2] * g,
                gi * self.loops[3] * g,
            ],
            cycle_a: gi * self.cycle_a * g,
            cycle_b: gi * self.cycle_b * g,
        }
    }
}

/// Compute the monodromy representation of a connection, based at the given
/// point. Loops are transported at the conventional interior basepoint and
/// conjugated by the transport along the segment joining the two basepoints
/// when they differ.
pub fn monodromy_rep(
    conn: &AbelianizedConnection,
    basepoint: C64,
    tol: f64,
) -> Result<MonodromyRep> {
    let sys = LoopSystem::new(conn.tau())?;
    rep_with_system(conn, &sys, basepoint, tol)
}

/// Monodromy representation reusing an already-built loop system.
pub fn rep_with_system(
    conn: &dyn ConnectionEval,
    sys: &LoopSystem,
    basepoint: C64,
    tol: f64,
) -> Result<MonodromyRep> {
    // Clockwise keyhole transports.
    let n: Vec<M2> = (0..4)
        .map(|i| transport(conn, &sys.keyholes_ccw[i].reversed(), tol))
        .collect::<Result<_>>()?;
    let cycle_a = transport(conn, &sys.cycle_a, tol)?;
    let cycle_b = transport(conn, &sys.cycle_b, tol)?;

    // Generators: clockwise keyholes, with the third dressed by the second
    // so the fixed product relation closes.
    let loops = [n[0], n[1], n[2], n[2] * n[3] * inv2(&n[2])];

    let mut rep = MonodromyRep {
        loops,
        cycle_a,
        cycle_b,
    };
    if (basepoint - sys.basepoint).norm() > 1e-12 {
        let shift = Path::line(basepoint, sys.basepoint);
        shift.check_clearance(&sys.puncture_copies, CLEARANCE)?;
        let s = transport(conn, &shift, tol)?;
        // A loop at the new basepoint runs along the shift, around the old
        // loop, and back, so its transport is the old one conjugated by the
        // shift transport.
        rep = rep.conjugated(&s);
    }
    Ok(rep)
}

/// Eigenvalue arguments of a 2x2 matrix, sorted ascending.
pub fn eigen_args(m: &M2) -> (f64, f64) {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    let disc = (tr * tr - 4.0 * det).sqrt();
    let l1 = (tr + disc) / 2.0;
    let l2 = (tr - disc) / 2.0;
    let (a1, a2) = (l1.arg(), l2.arg());
    if a1 <= a2 { (a1, a2) } else { (a2, a1) }
}

/// Result of the unitarizability minimization: the smallest found value of
/// the conjugation defect over unit-determinant positive hermitian forms,
/// the minimizing form, and whether the search converged.
#[derive(Debug, Clone)]
pub struct UnitarizabilityReport {
    pub defect: f64,
    pub h: M2,
    pub converged: bool,
}

/// Positive hermitian unit-determinant form from three real parameters.
fn hermitian_form(x: &DVector<f64>) -> M2 {
    let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
    // s = x . (pauli basis); H = exp(2 s) = cosh(2r) I + sinh(2r)/r s.
    let s = M2::new(
        C64::from(x[2]),
        C64::new(x[0], -x[1]),
        C64::new(x[0], x[1]),
        C64::from(-x[2]),
    );
    if r < 1e-14 {
        M2::identity() + s * C64::from(2.0)
    } else {
        M2::identity() * C64::from((2.0 * r).cosh()) + s * C64::from((2.0 * r).sinh() / r)
    }
}

fn conjugation_residuals(ms: &[M2], h: &M2) -> DVector<f64> {
    let mut out = DVector::zeros(4 * ms.len());
    for (k, m) in ms.iter().enumerate() {
        let d = m.adjoint() * h * m - h;
        out[4 * k] = d[(0, 0)].re;
        out[4 * k + 1] = d[(1, 1)].re;
        out[4 * k + 2] = std::f64::consts::SQRT_2 * d[(0, 1)].re;
        out[4 * k + 3] = std::f64::consts::SQRT_2 * d[(0, 1)].im;
    }
    out
}

/// Minimize the total conjugation defect sum_i |M_i^* H M_i - H|_F^2 over
/// positive hermitian H with det H = 1.
pub fn unitarizability_defect(
    rep: &MonodromyRep,
    iters: usize,
    tol: f64,
) -> UnitarizabilityReport {
    let ms = rep.generators();
    let mut f = |x: &DVector<f64>| -> Result<DVector<f64>> {
        Ok(conjugation_residuals(&ms, &hermitian_form(x)))
    };
    let opts = LeastSquaresOptions {
        residual_tol: tol.sqrt(),
        step_tol: 1e-12,
        max_iters: iters,
        fd_step: 1e-6,
        lambda0: 1e-3,
        forward_fd: false,
    };
    let report = levenberg_marquardt(&mut f, DVector::zeros(3), &opts)
        .expect("residual evaluation cannot fail");
    let h = hermitian_form(&report.x);
    UnitarizabilityReport {
        defect: report.residual_norm * report.residual_norm,
        h,
        converged: report.converged,
    }
}

/// Imaginary parts of the generator traces and of selected pair traces,
/// used as reality residuals: the four puncture loops, the two cycles, then
/// loop 0 times loop 1, cycle A times loop 0, and cycle A times cycle B.
pub fn trace_residuals(rep: &MonodromyRep) -> Vec<f64> {
    let tr = |m: &M2| -> f64 { (m[(0, 0)] + m[(1, 1)]).im };
    let mut out: Vec<f64> = rep.loops.iter().map(tr).collect();
    out.push(tr(&rep.cycle_a));
    out.push(tr(&rep.cycle_b));
    out.push(tr(&(rep.loops[0] * rep.loops[1])));
    out.push(tr(&(rep.cycle_a * rep.loops[0])));
    out.push(tr(&(rep.cycle_a * rep.cycle_b)));
    out
}
