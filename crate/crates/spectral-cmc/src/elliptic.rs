//! Special functions on complex tori: the odd Jacobi theta function and the
//! Weierstrass functions ℘, ℘′, ζ derived from it, together with lattice
//! quasi-periods and the invariants g2, g3.
//!
//! All series are evaluated after reduction to the fundamental domain, with
//! the truncation order chosen from the nome so the first omitted term is
//! below the context tolerance.

use crate::{C64, Error, Result, DEFAULT_TOL};

/// Largest number of theta series terms before a modulus is rejected.
const MAX_TRUNC: usize = 64;
const MIN_TRUNC: usize = 6;

/// A rank-two lattice gamma1 ℤ + gamma2 ℤ with positively oriented basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Lattice {
    gamma1: C64,
    gamma2: C64,
}

impl Lattice {
    /// Build a lattice, rejecting degenerate or negatively oriented bases.
    pub fn new(gamma1: C64, gamma2: C64) -> Result<Self> {
        if gamma1.norm() == 0.0 || gamma2.norm() == 0.0 {
            return Err(Error::Domain("lattice generator is zero".into()));
        }
        let tau = gamma2 / gamma1;
        if !(tau.im > 0.0) {
            return Err(Error::Domain(format!(
                "lattice basis not positively oriented: Im(gamma2/gamma1) = {}",
                tau.im
            )));
        }
        Ok(Self { gamma1, gamma2 })
    }

    pub fn gamma1(&self) -> C64 {
        self.gamma1
    }

    pub fn gamma2(&self) -> C64 {
        self.gamma2
    }

    /// Modulus gamma2/gamma1 of the normalized lattice.
    pub fn tau(&self) -> C64 {
        self.gamma2 / self.gamma1
    }

    /// Real coordinates (x, y) with z = x gamma1 + y gamma2.
    pub fn coords(&self, z: C64) -> (f64, f64) {
        let x = (z * self.gamma2.conj()).im / (self.gamma1 * self.gamma2.conj()).im;
        let y = (z * self.gamma1.conj()).im / (self.gamma2 * self.gamma1.conj()).im;
        (x, y)
    }

    /// Point x gamma1 + y gamma2 from real lattice coordinates.
    pub fn from_coords(&self, x: f64, y: f64) -> C64 {
        self.gamma1 * x + self.gamma2 * y
    }

    /// Reduce z modulo the lattice so both coordinates lie in [-1/2, 1/2).
    ///
    /// Returns (z_red, m, n) with z = z_red + m gamma1 + n gamma2.
    pub fn reduce(&self, z: C64) -> (C64, i64, i64) {
        let (x, y) = self.coords(z);
        let m = (x + 0.5).floor();
        let n = (y + 0.5).floor();
        (z - self.gamma1 * m - self.gamma2 * n, m as i64, n as i64)
    }

    /// Distance from z to the nearest lattice point.
    pub fn dist_to_lattice(&self, z: C64) -> f64 {
        let (zr, _, _) = self.reduce(z);
        // The reduced representative need not be the closest one for skew
        // bases; check the four candidate corners.
        let mut d = zr.norm();
        for dm in [-1.0, 0.0, 1.0] {
            for dn in [-1.0, 0.0, 1.0] {
                d = d.min((zr - self.gamma1 * dm - self.gamma2 * dn).norm());
            }
        }
        d
    }

    /// Scale both generators by c.
    pub fn scaled(&self, c: C64) -> Result<Self> {
        Self::new(self.gamma1 * c, self.gamma2 * c)
    }
}

/// Number of series terms needed so the first omitted theta term has
/// magnitude below tol after argument reduction.
fn trunc_for(q_abs: f64, tol: f64) -> Result<usize> {
    // After reduction, the n-th term is bounded by |q|^(n^2 - 1/4).
    let target = (tol / 100.0).min(1e-14);
    let ln_q = q_abs.ln();
    if !(ln_q < 0.0) {
        return Err(Error::Domain("theta nome must have |q| < 1".into()));
    }
    let n2 = target.ln() / ln_q + 0.25;
    let n = n2.max(1.0).sqrt().ceil() as usize;
    let n = n.clamp(MIN_TRUNC, MAX_TRUNC);
    let first_omitted = ((n * n) as f64 - 0.25) * ln_q;
    if first_omitted > tol.ln() {
        return Err(Error::Domain(
            "modulus too close to the real axis for the series budget".into(),
        ));
    }
    Ok(n)
}

/// Raw theta series and its first three derivatives at a reduced argument.
///
/// coeffs[n] = (-1)^n q^((n+1/2)^2); theta1(z) = 2 Σ coeffs[n] sin((2n+1)πz).
fn theta1_series(z: C64, coeffs: &[C64]) -> [C64; 4] {
    let mut th = C64::new(0.0, 0.0);
    let mut d1 = C64::new(0.0, 0.0);
    let mut d2 = C64::new(0.0, 0.0);
    let mut d3 = C64::new(0.0, 0.0);
    for (n, &c) in coeffs.iter().enumerate() {
        let k = (2 * n + 1) as f64 * std::f64::consts::PI;
        let (s, co) = ((z * k).sin(), (z * k).cos());
        th += c * s;
        d1 += c * co * k;
        d2 -= c * s * (k * k);
        d3 -= c * co * (k * k * k);
    }
    [th * 2.0, d1 * 2.0, d2 * 2.0, d3 * 2.0]
}

fn theta_coeffs(tau: C64, trunc: usize) -> Vec<C64> {
    let ipi = C64::new(0.0, std::f64::consts::PI);
    (0..trunc)
        .map(|n| {
            let e = (n as f64 + 0.5) * (n as f64 + 0.5);
            let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
            (ipi * tau * e).exp() * sign
        })
        .collect()
}

/// Odd Jacobi theta function for the given modulus (Im > 0), with default
/// truncation tolerance.
pub fn theta1(z: C64, modulus: C64) -> Result<C64> {
    Ok(theta1_with_derivatives(z, modulus)?[0])
}

/// theta1 together with its first three z-derivatives.
pub fn theta1_with_derivatives(z: C64, modulus: C64) -> Result<[C64; 4]> {
    if !(modulus.im > 0.0) {
        return Err(Error::Domain(
            "theta modulus must have positive imaginary part".into(),
        ));
    }
    let q_abs = (-std::f64::consts::PI * modulus.im).exp();
    let trunc = trunc_for(q_abs, DEFAULT_TOL)?;
    let coeffs = theta_coeffs(modulus, trunc);
    let lattice = Lattice::new(C64::new(1.0, 0.0), modulus)?;
    Ok(theta1_reduced(z, modulus, &lattice, &coeffs))
}

/// Evaluate theta1 and derivatives at arbitrary z by quasi-periodicity:
/// theta1(z + m + n tau) = (-1)^(m+n) exp(-πi n² tau - 2πi n z_red) theta1(z_red).
fn theta1_reduced(z: C64, tau: C64, unit_lattice: &Lattice, coeffs: &[C64]) -> [C64; 4] {
    let (zr, m, n) = unit_lattice.reduce(z);
    let base = theta1_series(zr, coeffs);
    if m == 0 && n == 0 {
        return base;
    }
    let nf = n as f64;
    let ipi = C64::new(0.0, std::f64::consts::PI);
    let sign = if (m + n).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    let factor = (-ipi * tau * (nf * nf) - ipi * 2.0 * nf * zr).exp() * sign;
    // d/dz of the prefactor contributes -2πi n per derivative order.
    let a = -ipi * 2.0 * nf;
    let [t0, t1, t2, t3] = base;
    [
        factor * t0,
        factor * (t1 + a * t0),
        factor * (t2 + a * 2.0 * t1 + a * a * t0),
        factor * (t3 + a * 3.0 * t2 + a * a * 3.0 * t1 + a * a * a * t0),
    ]
}

/// Precomputed evaluation context for Weierstrass functions on a lattice.
#[derive(Debug, Clone)]
pub struct EllipticContext {
    lattice: Lattice,
    tau: C64,
    unit_lattice: Lattice,
    coeffs: Vec<C64>,
    trunc: usize,
    tol: f64,
    /// Quasi-period eta1 of the normalized lattice (1, tau).
    eta1_norm: C64,
    eta1: C64,
    eta2: C64,
    g2: C64,
    g3: C64,
}

impl EllipticContext {
    pub fn new(lattice: Lattice) -> Result<Self> {
        Self::with_tol(lattice, DEFAULT_TOL)
    }

    pub fn with_tol(lattice: Lattice, tol: f64) -> Result<Self> {
        let q_abs = (-std::f64::consts::PI * lattice.tau().im).exp();
        let trunc = trunc_for(q_abs, tol)?;
        Self::with_trunc(lattice, tol, trunc)
    }

    /// Context with an explicit series truncation order, mainly for
    /// truncation-stability experiments.
    pub fn with_trunc(lattice: Lattice, tol: f64, trunc: usize) -> Result<Self> {
        if !(tol > 0.0) {
            return Err(Error::Domain("tolerance must be positive".into()));
        }
        if trunc == 0 {
            return Err(Error::Domain("truncation order must be positive".into()));
        }
        let tau = lattice.tau();
        let coeffs = theta_coeffs(tau, trunc);
        let unit_lattice = Lattice::new(C64::new(1.0, 0.0), tau)?;

        let at_zero = theta1_series(C64::new(0.0, 0.0), &coeffs);
        let eta1_norm = -at_zero[3] / (at_zero[1] * 3.0);
        let two_pi_i = C64::new(0.0, 2.0 * std::f64::consts::PI);
        let g1 = lattice.gamma1();
        let eta1 = eta1_norm / g1;
        let eta2 = (eta1_norm * tau - two_pi_i) / g1;

        let (g2n, g3n) = eisenstein_invariants(tau, tol);
        let g1_2 = g1 * g1;
        let g1_4 = g1_2 * g1_2;
        let g2 = g2n / g1_4;
        let g3 = g3n / (g1_4 * g1_2);

        Ok(Self {
            lattice,
            tau,
            unit_lattice,
            coeffs,
            trunc,
            tol,
            eta1_norm,
            eta1,
            eta2,
            g2,
            g3,
        })
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn trunc(&self) -> usize {
        self.trunc
    }

    pub fn g2(&self) -> C64 {
        self.g2
    }

    pub fn g3(&self) -> C64 {
        self.g3
    }

    /// Quasi-periods (eta1, eta2) = (2ζ(gamma1/2), 2ζ(gamma2/2)).
    pub fn quasi_periods(&self) -> (C64, C64) {
        (self.eta1, self.eta2)
    }

    /// theta1 and derivatives on the normalized lattice (1, tau).
    pub fn theta1_norm(&self, u: C64) -> [C64; 4] {
        theta1_reduced(u, self.tau, &self.unit_lattice, &self.coeffs)
    }

    fn guard_pole(&self, z: C64) -> Result<(C64, i64, i64)> {
        let (zr, m, n) = self.lattice.reduce(z);
        if self.lattice.dist_to_lattice(z) < self.tol.max(1e-13) {
            return Err(Error::Pole { location: z });
        }
        Ok((zr, m, n))
    }

    /// Logarithmic derivative theta1'/theta1 and its two derivatives at a
    /// reduced normalized argument.
    fn log_derivatives(&self, u_red: C64) -> (C64, C64, C64) {
        let [t0, t1, t2, t3] = theta1_series(u_red, &self.coeffs);
        let f = t1 / t0;
        let fp = t2 / t0 - f * f;
        let fpp = t3 / t0 - f * (t2 / t0) * 3.0 + f * f * f * 2.0;
        (f, fp, fpp)
    }

    /// Weierstrass ℘ for the context lattice.
    pub fn wp(&self, z: C64) -> Result<C64> {
        let (zr, _, _) = self.guard_pole(z)?;
        let g1 = self.lattice.gamma1();
        let (_, fp, _) = self.log_derivatives(zr / g1);
        Ok((-self.eta1_norm - fp) / (g1 * g1))
    }

    /// Weierstrass ℘′ for the context lattice.
    pub fn wp_prime(&self, z: C64) -> Result<C64> {
        let (zr, _, _) = self.guard_pole(z)?;
        let g1 = self.lattice.gamma1();
        let (_, _, fpp) = self.log_derivatives(zr / g1);
        Ok(-fpp / (g1 * g1 * g1))
    }

    /// ℘ and ℘′ in one pass.
    pub fn wp_and_prime(&self, z: C64) -> Result<(C64, C64)> {
        let (zr, _, _) = self.guard_pole(z)?;
        let g1 = self.lattice.gamma1();
        let (_, fp, fpp) = self.log_derivatives(zr / g1);
        Ok((
            (-self.eta1_norm - fp) / (g1 * g1),
            -fpp / (g1 * g1 * g1),
        ))
    }

    /// Weierstrass ζ for the context lattice.
    pub fn zeta(&self, z: C64) -> Result<C64> {
        let (zr, _, n) = self.guard_pole(z)?;
        let g1 = self.lattice.gamma1();
        let u = z / g1;
        let (f, _, _) = self.log_derivatives(zr / g1);
        let two_pi_i = C64::new(0.0, 2.0 * std::f64::consts::PI);
        // zeta on the normalized lattice: eta1_norm u + f(u_red) - 2πi n.
        Ok((self.eta1_norm * u + f - two_pi_i * (n as f64)) / g1)
    }
}

/// Quasi-periods eta_i = 2ζ(gamma_i/2) of a lattice.
pub fn zeta_quasi_periods(lattice: &Lattice) -> Result<(C64, C64)> {
    let ctx = EllipticContext::new(lattice.clone())?;
    Ok(ctx.quasi_periods())
}

/// Weierstrass invariants for the normalized lattice (1, tau) from the
/// Eisenstein series E4, E6 in the squared nome.
fn eisenstein_invariants(tau: C64, tol: f64) -> (C64, C64) {
    let pi = std::f64::consts::PI;
    let q2 = (C64::new(0.0, 2.0 * pi) * tau).exp();
    let mut e4 = C64::new(1.0, 0.0);
    let mut e6 = C64::new(1.0, 0.0);
    let mut qn = C64::new(1.0, 0.0);
    let target = (tol / 100.0).min(1e-16);
    for n in 1..=256u32 {
        qn *= q2;
        let nf = n as f64;
        let n3 = nf * nf * nf;
        let term = qn / (C64::new(1.0, 0.0) - qn);
        e4 += term * (240.0 * n3);
        e6 -= term * (504.0 * n3 * nf * nf);
        if qn.norm() * n3 * nf * nf * 504.0 < target {
            break;
        }
    }
    let pi4 = pi.powi(4);
    (
        e4 * (4.0 * pi4 / 3.0),
        e6 * (8.0 * pi4 * pi * pi / 27.0),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn rejects_bad_lattices() {
        assert!(Lattice::new(c(0.0, 0.0), c(1.0, 0.0)).is_err());
        assert!(Lattice::new(c(1.0, 0.0), c(2.0, 0.0)).is_err());
        assert!(Lattice::new(c(1.0, 0.0), c(0.0, -1.0)).is_err());
        assert!(Lattice::new(c(1.0, 0.0), c(0.0, 1.0)).is_ok());
    }

    #[test]
    fn reduce_lands_in_fundamental_cell() {
        let lat = Lattice::new(c(1.0, 0.2), c(-0.3, 1.1)).unwrap();
        let z = c(17.3, -4.9);
        let (zr, m, n) = lat.reduce(z);
        let (x, y) = lat.coords(zr);
        assert!((-0.5..0.5).contains(&x), "x = {x}");
        assert!((-0.5..0.5).contains(&y), "y = {y}");
        let back = zr + lat.gamma1() * (m as f64) + lat.gamma2() * (n as f64);
        assert_abs_diff_eq!(back.re, z.re, epsilon = 1e-12);
        assert_abs_diff_eq!(back.im, z.im, epsilon = 1e-12);
    }

    #[test]
    fn theta1_vanishes_at_origin() {
        let v = theta1(c(0.0, 0.0), c(0.0, 1.0)).unwrap();
        assert!(v.norm() < 1e-14, "theta1(0) = {v}");
    }

    #[test]
    fn theta1_rejects_bad_modulus() {
        assert!(theta1(c(0.1, 0.0), c(0.3, -0.2)).is_err());
        assert!(theta1(c(0.1, 0.0), c(0.3, 0.0)).is_err());
    }
}
