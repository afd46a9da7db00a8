//! Piecewise-smooth parametrized paths in the complex plane built from line
//! segments and circular arcs, with distance queries used to keep integration
//! paths clear of punctures.

use crate::{C64, Error, Result};

/// Default minimum distance a path must keep from every puncture.
pub const CLEARANCE: f64 = 0.02;

/// One smooth piece of a path, parametrized over t in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line {
        from: C64,
        to: C64,
    },
    /// Circular arc traversed from start_angle to end_angle (counterclockwise
    /// when end_angle > start_angle); the sweep may reach a full turn.
    Arc {
        center: C64,
        radius: f64,
        start_angle: f64,
        end_angle: f64,
    },
}

impl Segment {
    pub fn point(&self, t: f64) -> C64 {
        match *self {
            Segment::Line { from, to } => from + (to - from) * t,
            Segment::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let theta = start_angle + (end_angle - start_angle) * t;
                center + C64::new(0.0, theta).exp() * radius
            }
        }
    }

    /// Derivative of the parametrization with respect to t.
    pub fn velocity(&self, t: f64) -> C64 {
        match *self {
            Segment::Line { from, to } => to - from,
            Segment::Arc {
                center: _,
                radius,
                start_angle,
                end_angle,
            } => {
                let sweep = end_angle - start_angle;
                let theta = start_angle + sweep * t;
                C64::new(0.0, theta).exp() * C64::new(0.0, sweep * radius)
            }
        }
    }

    pub fn start(&self) -> C64 {
        self.point(0.0)
    }

    pub fn end(&self) -> C64 {
        self.point(1.0)
    }

    pub fn reversed(&self) -> Segment {
        match *self {
            Segment::Line { from, to } => Segment::Line { from: to, to: from },
            Segment::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => Segment::Arc {
                center,
                radius,
                start_angle: end_angle,
                end_angle: start_angle,
            },
        }
    }

    /// Arc length of the segment.
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { from, to } => (to - from).norm(),
            Segment::Arc {
                radius,
                start_angle,
                end_angle,
                ..
            } => radius * (end_angle - start_angle).abs(),
        }
    }

    /// Exact distance from a point to the segment.
    pub fn distance_to(&self, p: C64) -> f64 {
        match *self {
            Segment::Line { from, to } => {
                let d = to - from;
                let len2 = d.norm_sqr();
                if len2 == 0.0 {
                    return (p - from).norm();
                }
                let t = ((p - from).re * d.re + (p - from).im * d.im) / len2;
                let t = t.clamp(0.0, 1.0);
                (p - (from + d * t)).norm()
            }
            Segment::Arc {
                center,
                radius,
                start_angle,
                end_angle,
            } => {
                let delta = p - center;
                let sweep = (end_angle - start_angle).abs();
                if sweep >= 2.0 * std::f64::consts::PI - 1e-12 {
                    return (delta.norm() - radius).abs();
                }
                let lo = start_angle.min(end_angle);
                let ang = delta.im.atan2(delta.re);
                // Shift ang by full turns into [lo, lo + 2π).
                let two_pi = 2.0 * std::f64::consts::PI;
                let mut a = (ang - lo) % two_pi;
                if a < 0.0 {
                    a += two_pi;
                }
                if a <= sweep {
                    (delta.norm() - radius).abs()
                } else {
                    let e0 = (p - self.point(0.0)).norm();
                    let e1 = (p - self.point(1.0)).norm();
                    e0.min(e1)
                }
            }
        }
    }
}

/// An ordered chain of segments with matching endpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    segments: Vec<Segment>,
}

impl Path {
    pub fn new(segments: Vec<Segment>) -> Result<Self> {
        if segments.is_empty() {
            return Err(Error::Domain("path needs at least one segment".into()));
        }
        for pair in segments.windows(2) {
            let gap = (pair[0].end() - pair[1].start()).norm();
            if gap > 1e-9 {
                return Err(Error::Domain(format!(
                    "path segments not contiguous (gap {gap:.3e})"
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn line(from: C64, to: C64) -> Self {
        Self {
            segments: vec![Segment::Line { from, to }],
        }
    }

    /// Full circle around center, starting and ending at start_angle;
    /// counterclockwise for positive orientation.
    pub fn circle(center: C64, radius: f64, start_angle: f64, counterclockwise: bool) -> Self {
        let sweep = if counterclockwise {
            2.0 * std::f64::consts::PI
        } else {
            -2.0 * std::f64::consts::PI
        };
        Self {
            segments: vec![Segment::Arc {
                center,
                radius,
                start_angle,
                end_angle: start_angle + sweep,
            }],
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn start(&self) -> C64 {
        self.segments[0].start()
    }

    pub fn end(&self) -> C64 {
        self.segments[self.segments.len() - 1].end()
    }

    pub fn is_closed(&self) -> bool {
        (self.start() - self.end()).norm() < 1e-9
    }

    /// Concatenation self followed by other.
    pub fn then(&self, other: &Path) -> Result<Path> {
        let mut segments = self.segments.clone();
        segments.extend_from_slice(&other.segments);
        Path::new(segments)
    }

    pub fn reversed(&self) -> Path {
        Path {
            segments: self.segments.iter().rev().map(|s| s.reversed()).collect(),
        }
    }

    pub fn length(&self) -> f64 {
        self.segments.iter().map(|s| s.length()).sum()
    }

    /// Minimum distance from the path to a point.
    pub fn distance_to(&self, p: C64) -> f64 {
        self.segments
            .iter()
            .map(|s| s.distance_to(p))
            .fold(f64::INFINITY, f64::min)
    }

    /// Check the path keeps at least `clearance` away from every listed point.
    pub fn check_clearance(&self, punctures: &[C64], clearance: f64) -> Result<()> {
        for &p in punctures {
            let d = self.distance_to(p);
            if d < clearance {
                return Err(Error::Domain(format!(
                    "path passes within {d:.3e} of puncture {p} (clearance {clearance})"
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rejects_discontinuous_chains() {
        let a = Segment::Line {
            from: c(0.0, 0.0),
            to: c(1.0, 0.0),
        };
        let b = Segment::Line {
            from: c(2.0, 0.0),
            to: c(3.0, 0.0),
        };
        assert!(Path::new(vec![a, b]).is_err());
        let b = Segment::Line {
            from: c(1.0, 0.0),
            to: c(3.0, 0.0),
        };
        assert!(Path::new(vec![a, b]).is_ok());
    }

    #[test]
    fn circle_is_closed_and_oriented() {
        let p = Path::circle(c(0.5, 0.5), 0.3, 0.0, true);
        assert!(p.is_closed());
        assert!((p.start() - c(0.8, 0.5)).norm() < 1e-12);
        let v = p.segments()[0].velocity(0.0);
        assert!(v.im > 0.0, "counterclockwise start should move upward");
        let q = Path::circle(c(0.5, 0.5), 0.3, 0.0, false);
        assert!(q.segments()[0].velocity(0.0).im < 0.0);
    }

    #[test]
    fn distances_are_exact() {
        let line = Segment::Line {
            from: c(0.0, 0.0),
            to: c(2.0, 0.0),
        };
        assert!((line.distance_to(c(1.0, 0.7)) - 0.7).abs() < 1e-12);
        assert!((line.distance_to(c(-1.0, 0.0)) - 1.0).abs() < 1e-12);

        let arc = Segment::Arc {
            center: c(0.0, 0.0),
            radius: 1.0,
            start_angle: 0.0,
            end_angle: std::f64::consts::FRAC_PI_2,
        };
        let d = arc.distance_to(c(2.0, 2.0));
        assert!((d - (8.0f64.sqrt() - 1.0)).abs() < 1e-12);
        // Point angularly outside the arc: nearest is an endpoint.
        let d = arc.distance_to(c(-2.0, 0.0));
        assert!((d - 5.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn reversal_and_concatenation() {
        let p = Path::line(c(0.0, 0.0), c(1.0, 1.0));
        let q = Path::line(c(1.0, 1.0), c(2.0, 0.0));
        let pq = p.then(&q).unwrap();
        assert_eq!(pq.segments().len(), 2);
        let r = pq.reversed();
        assert!((r.start() - c(2.0, 0.0)).norm() < 1e-15);
        assert!((r.end() - c(0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn clearance_check() {
        let p = Path::line(c(-1.0, 0.1), c(1.0, 0.1));
        assert!(p.check_clearance(&[c(0.0, 0.0)], 0.02).is_ok());
        assert!(p.check_clearance(&[c(0.0, 0.1)], 0.02).is_err());
    }
}
