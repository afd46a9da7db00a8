//! Parallel transport of 2x2 frames along paths, for connections of the form
//! d + A dw + B dw-bar. The transport matrix T solves T' = -(A c' + B
//! conj(c')) T along the parametrized path c, integrated with an embedded
//! Dormand-Prince 5(4) scheme with adaptive step control.

use nalgebra::Matrix2;

use crate::path::{Path, Segment};
use crate::{C64, Error, Result};

pub type M2 = Matrix2<C64>;

/// Relative tolerance used for transport unless the caller overrides it.
pub const TRANSPORT_RTOL: f64 = 1e-11;

/// A connection evaluated pointwise: returns the dw and dw-bar coefficient
/// matrices at a point.
pub trait ConnectionEval {
    fn eval(&self, w: C64) -> Result<(M2, M2)>;
}

impl<F> ConnectionEval for F
where
    F: Fn(C64) -> Result<(M2, M2)>,
{
    fn eval(&self, w: C64) -> Result<(M2, M2)> {
        self(w)
    }
}

fn frob(m: &M2) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Right-hand side -(A c' + B conj(c')) T at parameter t on a segment.
fn rhs(conn: &dyn ConnectionEval, seg: &Segment, t: f64, frame: &M2) -> Result<M2> {
    let w = seg.point(t);
    let v = seg.velocity(t);
    let (a, b) = conn.eval(w)?;
    Ok(-(a * v + b * v.conj()) * frame)
}

// Dormand-Prince 5(4) coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;

const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;

const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;

const E1: f64 = 35.0 / 384.0 - 5179.0 / 57600.0;
const E3: f64 = 500.0 / 1113.0 - 7571.0 / 16695.0;
const E4: f64 = 125.0 / 192.0 - 393.0 / 640.0;
const E5: f64 = -2187.0 / 6784.0 - -92097.0 / 339200.0;
const E6: f64 = 11.0 / 84.0 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

/// Transport the identity frame along one segment.
fn transport_segment(conn: &dyn ConnectionEval, seg: &Segment, start: M2, rtol: f64) -> Result<M2> {
    let atol = 1e-14;
    let mut t = 0.0_f64;
    let mut y = start;
    let mut h = 0.05_f64;
    let mut k1 = rhs(conn, seg, t, &y)?;
    let mut rejected_in_a_row = 0usize;

    while t < 1.0 {
        if h < 1e-13 {
            return Err(Error::Integration(format!(
                "transport step size underflow near {}",
                seg.point(t)
            )));
        }
        if t + h > 1.0 {
            h = 1.0 - t;
        }

        let y2 = y + k1 * C64::from(h * A21);
        let k2 = rhs(conn, seg, t + C2 * h, &y2)?;
        let y3 = y + (k1 * C64::from(A31) + k2 * C64::from(A32)) * C64::from(h);
        let k3 = rhs(conn, seg, t + C3 * h, &y3)?;
        let y4 = y + (k1 * C64::from(A41) + k2 * C64::from(A42) + k3 * C64::from(A43)) * C64::from(h);
        let k4 = rhs(conn, seg, t + C4 * h, &y4)?;
        let y5 = y
            + (k1 * C64::from(A51) + k2 * C64::from(A52) + k3 * C64::from(A53)
                + k4 * C64::from(A54))
                * C64::from(h);
        let k5 = rhs(conn, seg, t + C5 * h, &y5)?;
        let y6 = y
            + (k1 * C64::from(A61) + k2 * C64::from(A62) + k3 * C64::from(A63)
                + k4 * C64::from(A64)
                + k5 * C64::from(A65))
                * C64::from(h);
        let k6 = rhs(conn, seg, t + h, &y6)?;

        let y_new = y
            + (k1 * C64::from(B1) + k3 * C64::from(B3) + k4 * C64::from(B4) + k5 * C64::from(B5)
                + k6 * C64::from(B6))
                * C64::from(h);
        let k7 = rhs(conn, seg, t + h, &y_new)?;

        let err_mat = (k1 * C64::from(E1) + k3 * C64::from(E3) + k4 * C64::from(E4)
            + k5 * C64::from(E5)
            + k6 * C64::from(E6)
            + k7 * C64::from(E7))
            * C64::from(h);
        let scale = atol + rtol * frob(&y).max(frob(&y_new));
        let err = frob(&err_mat) / scale;

        if err <= 1.0 {
            t += h;
            y = y_new;
            k1 = k7;
            rejected_in_a_row = 0;
        } else {
            rejected_in_a_row += 1;
            if rejected_in_a_row > 60 {
                return Err(Error::Integration(format!(
                    "transport cannot meet tolerance near {}",
                    seg.point(t)
                )));
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * (1.0 / err).powf(0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    Ok(y)
}

/// Transport the identity frame along a path; for a concatenation p1 then p2
/// the result is transport(p2) * transport(p1).
pub fn transport(conn: &dyn ConnectionEval, path: &Path, rtol: f64) -> Result<M2> {
    let mut frame = M2::identity();
    for seg in path.segments() {
        frame = transport_segment(conn, seg, frame, rtol)?;
    }
    Ok(frame)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    struct Zero;
    impl ConnectionEval for Zero {
        fn eval(&self, _w: C64) -> Result<(M2, M2)> {
            Ok((M2::zeros(), M2::zeros()))
        }
    }

    /// d + a dz/z with constant diagonal coefficient, holomorphic part only.
    struct LogPole {
        a: C64,
    }
    impl ConnectionEval for LogPole {
        fn eval(&self, w: C64) -> Result<(M2, M2)> {
            let m = M2::new(self.a / w, C64::from(0.0), C64::from(0.0), -self.a / w);
            Ok((m, M2::zeros()))
        }
    }

    #[test]
    fn zero_connection_gives_identity() {
        let p = Path::circle(c(0.3, 0.1), 0.8, 0.4, true);
        let t = transport(&Zero, &p, TRANSPORT_RTOL).unwrap();
        assert!(frob(&(t - M2::identity())) < 1e-12);
    }

    #[test]
    fn log_pole_matches_closed_form() {
        // Around the unit circle counterclockwise, d + a dz/z transports to
        // diag(exp(-2 pi i a), exp(2 pi i a)).
        let a = c(0.23, -0.11);
        let conn = LogPole { a };
        let p = Path::circle(c(0.0, 0.0), 1.0, 0.0, true);
        let t = transport(&conn, &p, TRANSPORT_RTOL).unwrap();
        let two_pi_i = c(0.0, 2.0 * std::f64::consts::PI);
        let expect = M2::new(
            (-two_pi_i * a).exp(),
            C64::from(0.0),
            C64::from(0.0),
            (two_pi_i * a).exp(),
        );
        assert!(
            frob(&(t - expect)) < 1e-10,
            "transport error {:.3e}",
            frob(&(t - expect))
        );
    }

    #[test]
    fn concatenation_composes_in_reverse_order() {
        let a = c(0.4, 0.05);
        let conn = LogPole { a };
        // Half circles: right half then left half of the unit circle.
        let p1 = Path::new(vec![Segment::Arc {
            center: c(0.0, 0.0),
            radius: 1.0,
            start_angle: -std::f64::consts::FRAC_PI_2,
            end_angle: std::f64::consts::FRAC_PI_2,
        }])
        .unwrap();
        let p2 = Path::new(vec![Segment::Arc {
            center: c(0.0, 0.0),
            radius: 1.0,
            start_angle: std::f64::consts::FRAC_PI_2,
            end_angle: 3.0 * std::f64::consts::FRAC_PI_2,
        }])
        .unwrap();
        let whole = p1.then(&p2).unwrap();
        let t1 = transport(&conn, &p1, TRANSPORT_RTOL).unwrap();
        let t2 = transport(&conn, &p2, TRANSPORT_RTOL).unwrap();
        let tw = transport(&conn, &whole, TRANSPORT_RTOL).unwrap();
        assert!(frob(&(tw - t2 * t1)) < 1e-10);
    }

    #[test]
    fn traceless_connection_preserves_determinant() {
        // Non-diagonal traceless connection; determinant of transport stays 1.
        struct Sl2;
        impl ConnectionEval for Sl2 {
            fn eval(&self, w: C64) -> Result<(M2, M2)> {
                let m = M2::new(
                    w,
                    c(1.0, 0.0) + w * w,
                    (0.3 * w).exp(),
                    -w,
                );
                let mb = M2::new(
                    C64::from(0.1) * w.conj(),
                    C64::from(0.0),
                    c(0.0, 0.2),
                    C64::from(-0.1) * w.conj(),
                );
                Ok((m, mb))
            }
        }
        let p = Path::circle(c(0.2, -0.1), 0.9, 1.0, false);
        let t = transport(&Sl2, &p, TRANSPORT_RTOL).unwrap();
        let det = t[(0, 0)] * t[(1, 1)] - t[(0, 1)] * t[(1, 0)];
        assert!((det - C64::from(1.0)).norm() < 1e-9, "det drift {det}");
    }

    #[test]
    fn tighter_tolerance_refines_answer() {
        let a = c(0.37, 0.21);
        let conn = LogPole { a };
        let p = Path::circle(c(0.0, 0.0), 1.0, 0.3, true);
        let coarse = transport(&conn, &p, 1e-6).unwrap();
        let fine = transport(&conn, &p, 1e-12).unwrap();
        let two_pi_i = c(0.0, 2.0 * std::f64::consts::PI);
        let expect = M2::new(
            (-two_pi_i * a).exp(),
            C64::from(0.0),
            C64::from(0.0),
            (two_pi_i * a).exp(),
        );
        let e_coarse = frob(&(coarse - expect));
        let e_fine = frob(&(fine - expect));
        assert!(e_fine < e_coarse.max(1e-13));
        assert!(e_fine < 1e-11);
    }
}
