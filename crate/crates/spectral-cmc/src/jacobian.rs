//! Points of the Jacobians of the abelianization torus and its double cover,
//! realized as complex numbers modulo explicit lattices, with half-lattice
//! classification and the dualizing involution.

use crate::{C64, Error, Result, HALF_LATTICE_TOL};

/// Lattice of a Jacobian for a rectangular modulus tau in i·ℝ.
///
/// The standard instance has generators g1 = πi(1+τ)/(τ−τ̄) and
/// g2 = πi(1−τ)/(τ−τ̄); the hat instance (Jacobian of the double cover) has
/// generators πi/(2τ) and πi/2 and contains the standard lattice with
/// index two.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacLattice {
    tau: C64,
    g1: C64,
    g2: C64,
}

fn check_tau(tau: C64) -> Result<()> {
    if tau.re.abs() > 1e-12 * tau.norm() {
        return Err(Error::Domain(format!(
            "modulus must be purely imaginary, got {tau}"
        )));
    }
    if !(tau.im > 0.0) {
        return Err(Error::Domain("modulus must have positive imaginary part".into()));
    }
    Ok(())
}

impl JacLattice {
    /// Lattice generating Jac(T²) for the torus with modulus tau (|tau| >= 1).
    pub fn new(tau: C64) -> Result<Self> {
        check_tau(tau)?;
        if tau.norm() < 1.0 - 1e-12 {
            return Err(Error::Domain(format!("modulus must satisfy |tau| >= 1, got {tau}")));
        }
        let pi_i = C64::new(0.0, std::f64::consts::PI);
        let denom = tau - tau.conj();
        let one = C64::new(1.0, 0.0);
        Ok(Self {
            tau,
            g1: pi_i * (one + tau) / denom,
            g2: pi_i * (one - tau) / denom,
        })
    }

    /// Lattice generating the Jacobian of the doubly covering torus.
    pub fn hat(tau: C64) -> Result<Self> {
        check_tau(tau)?;
        let pi_i = C64::new(0.0, std::f64::consts::PI);
        Ok(Self {
            tau,
            g1: pi_i / (tau * 2.0),
            g2: pi_i * 0.5,
        })
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }

    pub fn g1(&self) -> C64 {
        self.g1
    }

    pub fn g2(&self) -> C64 {
        self.g2
    }

    /// Real coordinates (x, y) with z = x g1 + y g2.
    pub fn coords(&self, z: C64) -> (f64, f64) {
        let x = (z * self.g2.conj()).im / (self.g1 * self.g2.conj()).im;
        let y = (z * self.g1.conj()).im / (self.g2 * self.g1.conj()).im;
        (x, y)
    }

    pub fn from_coords(&self, x: f64, y: f64) -> C64 {
        self.g1 * x + self.g2 * y
    }

    /// Reduce z modulo the lattice to coordinates in [-1/2, 1/2).
    pub fn reduce_raw(&self, z: C64) -> (C64, i64, i64) {
        let (x, y) = self.coords(z);
        let m = (x + 0.5).floor();
        let n = (y + 0.5).floor();
        (z - self.g1 * m - self.g2 * n, m as i64, n as i64)
    }

    /// Distance from z to the nearest lattice point.
    pub fn dist_to_lattice(&self, z: C64) -> f64 {
        let (zr, _, _) = self.reduce_raw(z);
        let mut d = zr.norm();
        for dm in [-1.0, 0.0, 1.0] {
            for dn in [-1.0, 0.0, 1.0] {
                d = d.min((zr - self.g1 * dm - self.g2 * dn).norm());
            }
        }
        d
    }

    /// Distance from z to the nearest half-lattice point.
    pub fn dist_to_half_lattice(&self, z: C64) -> f64 {
        let half = Self {
            tau: self.tau,
            g1: self.g1 * 0.5,
            g2: self.g2 * 0.5,
        };
        half.dist_to_lattice(z)
    }
}

/// Residue class of a point modulo the lattice among the four half-lattice
/// cosets, or none of them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum HalfLatticeClass {
    /// Lattice points themselves.
    Zero,
    /// (g1 + g2)/2 + Λ.
    Center,
    /// g1/2 + Λ.
    SymA,
    /// g2/2 + Λ.
    SymB,
    NotHalf,
}

/// A point of the Jacobian: reduced representative plus its lattice.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianPoint {
    chi: C64,
    lattice: JacLattice,
}

/// Reduce a raw complex number to the fundamental domain of the lattice.
pub fn reduce(chi_raw: C64, lattice: &JacLattice) -> JacobianPoint {
    let (chi, _, _) = lattice.reduce_raw(chi_raw);
    JacobianPoint {
        chi,
        lattice: *lattice,
    }
}

impl JacobianPoint {
    /// Keep the given representative as is. Functions that lift through the
    /// lattice quotient distinguish translated representatives, so callers
    /// probing such lifts must not reduce first.
    pub fn from_raw(chi: C64, lattice: &JacLattice) -> JacobianPoint {
        JacobianPoint {
            chi,
            lattice: *lattice,
        }
    }

    pub fn chi(&self) -> C64 {
        self.chi
    }

    pub fn lattice(&self) -> &JacLattice {
        &self.lattice
    }

    /// Classify the point among the half-lattice cosets within tol
    /// (distance measured on the point itself).
    pub fn classify_half(&self, tol: f64) -> HalfLatticeClass {
        let lat = &self.lattice;
        let (x, y) = lat.coords(self.chi);
        let m = (2.0 * x).round();
        let n = (2.0 * y).round();
        let nearest = lat.from_coords(m / 2.0, n / 2.0);
        if (self.chi - nearest).norm() > tol {
            return HalfLatticeClass::NotHalf;
        }
        match ((m as i64).rem_euclid(2), (n as i64).rem_euclid(2)) {
            (0, 0) => HalfLatticeClass::Zero,
            (1, 1) => HalfLatticeClass::Center,
            (1, 0) => HalfLatticeClass::SymA,
            _ => HalfLatticeClass::SymB,
        }
    }

    /// Classification with the default half-lattice tolerance.
    pub fn classify(&self) -> HalfLatticeClass {
        self.classify_half(HALF_LATTICE_TOL)
    }
}

/// A flat line-bundle connection d + alpha dw - chi dw̄ as a moduli point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineConnectionPoint {
    pub chi: JacobianPoint,
    pub alpha: C64,
}

impl LineConnectionPoint {
    pub fn new(chi: JacobianPoint, alpha: C64) -> Self {
        Self { chi, alpha }
    }
}

/// The involution induced by dualizing: (χ, α) ↦ (−χ, −α), reduced.
pub fn dual(p: &LineConnectionPoint) -> LineConnectionPoint {
    LineConnectionPoint {
        chi: reduce(-p.chi.chi(), p.chi.lattice()),
        alpha: -p.alpha,
    }
}
