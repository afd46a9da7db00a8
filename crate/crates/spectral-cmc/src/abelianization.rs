//! Flat rank-2 connections on a four-punctured torus with prescribed
//! off-diagonal residues. A connection is determined by a residue weight pair,
//! a line-bundle parameter chi, and a diagonal coefficient alpha; the
//! off-diagonal entries are meromorphic sections built from theta-function
//! quotients, with one simple pole at each puncture.

use nalgebra::Matrix4;
use serde::{Deserialize, Serialize};

use crate::elliptic::{EllipticContext, Lattice};
use crate::jacobian::{HalfLatticeClass, JacobianPoint};
use crate::transport::{ConnectionEval, M2};
use crate::{C64, Error, Result};

/// Radius of the residue-extraction contour around each puncture.
pub const RESIDUE_RADIUS: f64 = 0.05;
/// Node count of the residue-extraction trapezoid rule.
pub const RESIDUE_POINTS: usize = 64;
/// Distance under which a point counts as sitting on a puncture.
pub const PUNCTURE_GUARD: f64 = 1e-6;

/// Residue weight pair (rho0 at even punctures, rho1 at odd punctures),
/// each in (-1/2, 1/2). The shifted weights rho/2 + 1/4 lie in (0, 1/2).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    rho0: f64,
    rho1: f64,
}

impl Weights {
    pub fn new(rho0: f64, rho1: f64) -> Result<Self> {
        for r in [rho0, rho1] {
            if !(r > -0.5 && r < 0.5) || !r.is_finite() {
                return Err(Error::Domain(format!(
                    "residue weight {r} outside (-1/2, 1/2)"
                )));
            }
        }
        Ok(Self { rho0, rho1 })
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    /// Residue weight at puncture i (even punctures carry rho0, odd rho1).
    pub fn rho(&self, i: usize) -> f64 {
        if i % 2 == 0 { self.rho0 } else { self.rho1 }
    }

    /// Shifted weight rho_i/2 + 1/4 in (0, 1/2).
    pub fn rhohat(&self, i: usize) -> f64 {
        self.rho(i) / 2.0 + 0.25
    }

    pub fn is_zero(&self) -> bool {
        self.rho0 == 0.0 && self.rho1 == 0.0
    }
}

/// Branch choice for signed expansion weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BranchSign {
    Plus,
    Minus,
}

impl BranchSign {
    pub fn value(self) -> f64 {
        match self {
            BranchSign::Plus => 1.0,
            BranchSign::Minus => -1.0,
        }
    }

    pub fn from_i32(v: i32) -> Result<Self> {
        match v {
            1 => Ok(BranchSign::Plus),
            -1 => Ok(BranchSign::Minus),
            _ => Err(Error::Domain(format!("branch sign must be +1 or -1, got {v}"))),
        }
    }

    pub fn to_i32(self) -> i32 {
        match self {
            BranchSign::Plus => 1,
            BranchSign::Minus => -1,
        }
    }
}

/// Which off-diagonal entry a line-bundle section belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BundleSign {
    /// Lower-left entry; meromorphic multiplier parameter +2 chi.
    Plus,
    /// Upper-right entry; meromorphic multiplier parameter -2 chi.
    Minus,
}

/// Torus lattice spanned by 1+tau and tau-1 (positively oriented for
/// Im tau > 0).
pub fn torus_lattice(tau: C64) -> Result<Lattice> {
    Lattice::new(C64::from(1.0) + tau, tau - C64::from(1.0))
}

/// The four half-period punctures: 0, (1-tau)/2, 1, (1+tau)/2.
pub fn punctures(lattice: &Lattice) -> [C64; 4] {
    let g1 = lattice.gamma1();
    let g2 = lattice.gamma2();
    [
        C64::from(0.0),
        -g2 * C64::from(0.5),
        (g1 - g2) * C64::from(0.5),
        g1 * C64::from(0.5),
    ]
}

/// Theta-quotient data for one off-diagonal line bundle. The meromorphic
/// representative h satisfies h(w + gamma) = exp(c conj(gamma)) h(w); the
/// globally defined entry is exp(-c conj(w)) h(w).
#[derive(Debug, Clone)]
struct ThetaBundle {
    /// Exponent of the smooth prefactor (the negated multiplier parameter).
    smooth_exp: C64,
    /// Linear exponent rate of the basis sections.
    mu: C64,
    /// Zero shift of the numerator theta factor.
    d: C64,
    /// Per-puncture normalization giving unit global residue.
    norms: [C64; 4],
}

impl ThetaBundle {
    fn build(ctx: &EllipticContext, punct: &[C64; 4], c: C64) -> Result<Self> {
        let g1 = ctx.lattice().gamma1();
        let g2 = ctx.lattice().gamma2();
        let mu = c * g1.conj() / g1;
        let two_pi_i = C64::new(0.0, 2.0 * std::f64::consts::PI);
        let d = c * (g1 * g2.conj() - g2 * g1.conj()) / two_pi_i;

        let theta_prime0 = ctx.theta1_norm(C64::from(0.0))[1];
        let theta_minus_d = ctx.theta1_norm(-d / g1)[0];
        if theta_minus_d.norm() < 1e-8 * theta_prime0.norm() {
            return Err(Error::SpinDegeneracy { chi: -c / 2.0 });
        }

        let smooth_exp = -c;
        let mut norms = [C64::from(0.0); 4];
        for (i, &om) in punct.iter().enumerate() {
            norms[i] = (c * om.conj()).exp() * theta_prime0
                / (g1 * theta_minus_d * (mu * om).exp());
        }
        Ok(Self {
            smooth_exp,
            mu,
            d,
            norms,
        })
    }

    /// Meromorphic basis section with its simple pole at puncture i.
    fn basis(&self, ctx: &EllipticContext, punct: &[C64; 4], i: usize, w: C64) -> C64 {
        let g1 = ctx.lattice().gamma1();
        let u = w - punct[i];
        let num = ctx.theta1_norm((u - self.d) / g1)[0];
        let den = ctx.theta1_norm(u / g1)[0];
        self.norms[i] * (self.mu * w).exp() * num / den
    }

    /// Meromorphic section with the given basis coefficients.
    fn section(&self, ctx: &EllipticContext, punct: &[C64; 4], coeff: &[C64; 4], w: C64) -> C64 {
        let mut acc = C64::from(0.0);
        for i in 0..4 {
            if coeff[i] != C64::from(0.0) {
                acc += coeff[i] * self.basis(ctx, punct, i, w);
            }
        }
        acc
    }
}

/// Solve the 4x4 residue system for one bundle: quadrature residues of the
/// basis sections at every puncture against the prescribed weights.
fn solve_residue_system(
    ctx: &EllipticContext,
    punct: &[C64; 4],
    bundle: &ThetaBundle,
    weights: &Weights,
) -> Result<[C64; 4]> {
    let mut sys = Matrix4::<C64>::zeros();
    for j in 0..4 {
        let convert = (bundle.smooth_exp * punct[j].conj()).exp();
        for i in 0..4 {
            let r = crate::quadrature::contour_residue(
                |w| Ok(bundle.basis(ctx, punct, i, w)),
                punct[j],
                RESIDUE_RADIUS,
                RESIDUE_POINTS,
            )?;
            sys[(j, i)] = convert * r;
        }
    }
    let rhs = nalgebra::Vector4::from_fn(|j, _| C64::from(weights.rho(j)));
    let lu = sys.lu();
    let sol = lu
        .solve(&rhs)
        .ok_or_else(|| Error::Infeasible("residue system is singular".into()))?;
    Ok([sol[0], sol[1], sol[2], sol[3]])
}

/// Build the off-diagonal coefficient vectors (plus bundle, minus bundle) for
/// the given line-bundle point and weights.
pub fn build_beta(
    chi: &JacobianPoint,
    weights: &Weights,
    ctx: &EllipticContext,
) -> Result<([C64; 4], [C64; 4])> {
    if weights.is_zero() {
        return Ok(([C64::from(0.0); 4], [C64::from(0.0); 4]));
    }
    if chi.lattice().dist_to_half_lattice(chi.chi()) < crate::HALF_LATTICE_TOL {
        return Err(Error::SpinDegeneracy { chi: chi.chi() });
    }
    let punct = punctures(ctx.lattice());
    let chi_val = chi.chi();
    let plus = ThetaBundle::build(ctx, &punct, 2.0 * chi_val)?;
    let minus = ThetaBundle::build(ctx, &punct, -2.0 * chi_val)?;
    let cp = solve_residue_system(ctx, &punct, &plus, weights)?;
    let cm = solve_residue_system(ctx, &punct, &minus, weights)?;
    Ok((cp, cm))
}

/// A flat traceless rank-2 connection on the four-punctured torus. The
/// 1-form is
///   d + [[alpha, bminus], [bplus, -alpha]] dw + diag(-chi, chi) dwbar
/// with off-diagonal entries having simple poles of residue rho_i at the
/// punctures.
#[derive(Debug, Clone)]
pub struct AbelianizedConnection {
    ctx: EllipticContext,
    tau: C64,
    punct: [C64; 4],
    weights: Weights,
    chi: JacobianPoint,
    alpha: C64,
    beta_plus: [C64; 4],
    beta_minus: [C64; 4],
    bundles: Option<(ThetaBundle, ThetaBundle)>,
}

impl AbelianizedConnection {
    pub fn new(tau: C64, weights: Weights, chi: JacobianPoint, alpha: C64) -> Result<Self> {
        let lattice = torus_lattice(tau)?;
        let ctx = EllipticContext::new(lattice)?;
        Self::from_context(ctx, weights, chi, alpha)
    }

    pub fn from_context(
        ctx: EllipticContext,
        weights: Weights,
        chi: JacobianPoint,
        alpha: C64,
    ) -> Result<Self> {
        let tau = ctx.lattice().gamma1() - C64::from(1.0);
        let jac_tau = chi.lattice().tau();
        if (jac_tau - tau).norm() > 1e-9 * (1.0 + tau.norm()) {
            return Err(Error::Domain(format!(
                "line-bundle modulus {jac_tau} does not match torus modulus {tau}"
            )));
        }
        let punct = punctures(ctx.lattice());
        let (beta_plus, beta_minus, bundles) = if weights.is_zero() {
            ([C64::from(0.0); 4], [C64::from(0.0); 4], None)
        } else {
            let (bp, bm) = build_beta(&chi, &weights, &ctx)?;
            let chi_val = chi.chi();
            let plus = ThetaBundle::build(&ctx, &punct, 2.0 * chi_val)?;
            let minus = ThetaBundle::build(&ctx, &punct, -2.0 * chi_val)?;
            (bp, bm, Some((plus, minus)))
        };
        Ok(Self {
            ctx,
            tau,
            punct,
            weights,
            chi,
            alpha,
            beta_plus,
            beta_minus,
            bundles,
        })
    }

    /// Same connection with a different diagonal coefficient; the section
    /// data is reused unchanged.
    pub fn with_alpha(&self, alpha: C64) -> Self {
        let mut out = self.clone();
        out.alpha = alpha;
        out
    }

    pub fn tau(&self) -> C64 {
        self.tau
    }

    pub fn lattice(&self) -> &Lattice {
        self.ctx.lattice()
    }

    pub fn context(&self) -> &EllipticContext {
        &self.ctx
    }

    pub fn punctures(&self) -> &[C64; 4] {
        &self.punct
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn chi(&self) -> &JacobianPoint {
        &self.chi
    }

    pub fn alpha(&self) -> C64 {
        self.alpha
    }

    pub fn beta_plus(&self) -> &[C64; 4] {
        &self.beta_plus
    }

    pub fn beta_minus(&self) -> &[C64; 4] {
        &self.beta_minus
    }

    fn bundle(&self, sign: BundleSign) -> Option<&ThetaBundle> {
        self.bundles.as_ref().map(|(p, m)| match sign {
            BundleSign::Plus => p,
            BundleSign::Minus => m,
        })
    }

    fn coeff(&self, sign: BundleSign) -> &[C64; 4] {
        match sign {
            BundleSign::Plus => &self.beta_plus,
            BundleSign::Minus => &self.beta_minus,
        }
    }

    /// Distance from w to the nearest puncture, measured on the torus.
    pub fn puncture_distance(&self, w: C64) -> f64 {
        self.punct
            .iter()
            .map(|&om| self.ctx.lattice().dist_to_lattice(w - om))
            .fold(f64::INFINITY, f64::min)
    }

    fn guard_puncture(&self, w: C64) -> Result<()> {
        if self.puncture_distance(w) < PUNCTURE_GUARD {
            return Err(Error::Pole { location: w });
        }
        Ok(())
    }

    /// Meromorphic representative of an off-diagonal section.
    pub fn beta_meromorphic(&self, sign: BundleSign, w: C64) -> Result<C64> {
        match self.bundle(sign) {
            None => Ok(C64::from(0.0)),
            Some(bundle) => {
                self.guard_puncture(w)?;
                Ok(bundle.section(&self.ctx, &self.punct, self.coeff(sign), w))
            }
        }
    }

    /// Globally defined (periodic) off-diagonal entry at w.
    pub fn beta_smooth(&self, sign: BundleSign, w: C64) -> Result<C64> {
        match self.bundle(sign) {
            None => Ok(C64::from(0.0)),
            Some(bundle) => {
                let h = self.beta_meromorphic(sign, w)?;
                Ok((bundle.smooth_exp * w.conj()).exp() * h)
            }
        }
    }

    /// Multiplier exp(c conj(gamma)) of the meromorphic representative under
    /// translation by gamma.
    pub fn multiplier(&self, sign: BundleSign, gamma: C64) -> C64 {
        let c = match sign {
            BundleSign::Plus => 2.0 * self.chi.chi(),
            BundleSign::Minus => -2.0 * self.chi.chi(),
        };
        (c * gamma.conj()).exp()
    }

    /// Connection 1-form coefficients (dw part, dwbar part) at w.
    pub fn form(&self, w: C64) -> Result<(M2, M2)> {
        let chi = self.chi.chi();
        let zero = C64::from(0.0);
        let b = M2::new(-chi, zero, zero, chi);
        let mut a = M2::new(self.alpha, zero, zero, -self.alpha);
        if self.bundles.is_some() {
            a[(0, 1)] = self.beta_smooth(BundleSign::Minus, w)?;
            a[(1, 0)] = self.beta_smooth(BundleSign::Plus, w)?;
        }
        Ok((a, b))
    }

    /// dw coefficient of the connection in the local meromorphic gauge (the
    /// dwbar part vanishes there).
    pub fn meromorphic_form(&self, w: C64) -> Result<M2> {
        let zero = C64::from(0.0);
        let mut a = M2::new(self.alpha, zero, zero, -self.alpha);
        if self.bundles.is_some() {
            a[(0, 1)] = self.beta_meromorphic(BundleSign::Minus, w)?;
            a[(1, 0)] = self.beta_meromorphic(BundleSign::Plus, w)?;
        }
        Ok(a)
    }

    /// Residue matrix of the connection at puncture i, extracted by contour
    /// quadrature of the meromorphic gauge and converted back to the global
    /// gauge by the constant diagonal conjugation at the puncture.
    pub fn residue_matrix(&self, i: usize) -> Result<M2> {
        let om = self.punct[i];
        let mut acc = M2::zeros();
        let n = RESIDUE_POINTS;
        for k in 0..n {
            let theta = 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
            let dir = C64::new(0.0, theta).exp();
            let w = om + dir * C64::from(RESIDUE_RADIUS);
            acc += self.meromorphic_form(w)? * (dir * C64::from(RESIDUE_RADIUS / n as f64));
        }
        let chi = self.chi.chi();
        let gp = (chi * om.conj()).exp();
        let gm = (-chi * om.conj()).exp();
        // Conjugate by diag(gm, gp): entry (0,1) scales by gm/gp inverted.
        let zero = C64::from(0.0);
        let g = M2::new(gm, zero, zero, gp);
        let g_inv = M2::new(C64::from(1.0) / gm, zero, zero, C64::from(1.0) / gp);
        Ok(g_inv * acc * g)
    }
}

impl ConnectionEval for AbelianizedConnection {
    fn eval(&self, w: C64) -> Result<(M2, M2)> {
        if self.bundles.is_some() {
            self.guard_puncture(w)?;
        }
        self.form(w)
    }
}

/// Stability of a line-bundle point under the expansion-weight sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stability {
    Stable,
    Semistable,
    Unstable,
}

/// Signed expansion weight at a half-lattice class.
pub fn mu_gamma(class: HalfLatticeClass, weights: &Weights, sign: BranchSign) -> Result<f64> {
    match class {
        HalfLatticeClass::Zero => Ok(sign.value() * (weights.rho0() + weights.rho1())),
        HalfLatticeClass::Center => Ok(sign.value() * (weights.rho0() - weights.rho1())),
        HalfLatticeClass::SymA | HalfLatticeClass::SymB => Ok(0.0),
        HalfLatticeClass::NotHalf => Err(Error::Domain(
            "expansion weight needs a half-lattice class".into(),
        )),
    }
}

/// First-order local data of the diagonal coefficient as a function of the
/// line-bundle parameter near a half-lattice point: residue of the simple
/// pole and the constant term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinExpansion {
    pub residue: C64,
    pub constant: C64,
}

/// Outcome of checking a local expansion against the expected residue and
/// constant term; mu is the matched signed expansion weight.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinReport {
    pub residue_ok: bool,
    pub constant_ok: bool,
    pub stability: Stability,
    pub mu: f64,
}

/// Check the local expansion of the diagonal coefficient at a half-lattice
/// point: the pole residue must be pi/Im(tau) times a signed expansion
/// weight, and the constant term must equal conj(gamma).
pub fn check_spin_expansion(
    series: &SpinExpansion,
    gamma: &JacobianPoint,
    weights: &Weights,
    tol: f64,
) -> Result<SpinReport> {
    let class = gamma.classify_half(crate::HALF_LATTICE_TOL);
    if class == HalfLatticeClass::NotHalf {
        return Err(Error::Domain(
            "expansion check needs a half-lattice point".into(),
        ));
    }
    let tau = gamma.lattice().tau();
    let factor = C64::from(std::f64::consts::PI / tau.im);
    let magnitude = match class {
        HalfLatticeClass::Zero => weights.rho0() + weights.rho1(),
        HalfLatticeClass::Center => weights.rho0() - weights.rho1(),
        _ => 0.0,
    };
    let mut mu = magnitude;
    let mut best = (series.residue - factor * C64::from(mu)).norm();
    let other = (series.residue - factor * C64::from(-magnitude)).norm();
    if other < best {
        mu = -magnitude;
        best = other;
    }
    let residue_ok = best <= tol;
    let constant_ok = (series.constant - gamma.chi().conj()).norm() <= tol;
    let stability = if mu > 1e-15 {
        Stability::Stable
    } else if mu < -1e-15 {
        Stability::Unstable
    } else {
        Stability::Semistable
    };
    Ok(SpinReport {
        residue_ok,
        constant_ok,
        stability,
        mu,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::jacobian::{JacLattice, reduce};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn weights_validate_range() {
        assert!(Weights::new(0.49, -0.49).is_ok());
        assert!(Weights::new(0.5, 0.0).is_err());
        assert!(Weights::new(0.0, -0.5).is_err());
        let w = Weights::new(0.2, -0.1).unwrap();
        assert_eq!(w.rho(0), 0.2);
        assert_eq!(w.rho(2), 0.2);
        assert_eq!(w.rho(1), -0.1);
        assert_eq!(w.rho(3), -0.1);
        for i in 0..4 {
            let rh = w.rhohat(i);
            assert!(rh > 0.0 && rh < 0.5);
            assert!((2.0 * rh - 0.5 - w.rho(i)).abs() < 1e-15);
        }
    }

    #[test]
    fn punctures_sit_at_half_periods() {
        let tau = c(0.0, 1.3);
        let lat = torus_lattice(tau).unwrap();
        let p = punctures(&lat);
        assert!((p[0]).norm() < 1e-15);
        assert!((p[1] - (C64::from(1.0) - tau) * 0.5).norm() < 1e-15);
        assert!((p[2] - C64::from(1.0)).norm() < 1e-15);
        assert!((p[3] - (C64::from(1.0) + tau) * 0.5).norm() < 1e-15);
        for &om in &p[1..] {
            assert!(lat.dist_to_lattice(om) > 0.5);
            assert!(lat.dist_to_lattice(om * 2.0) < 1e-12);
        }
    }

    #[test]
    fn zero_weights_give_diagonal_form() {
        let tau = c(0.0, 1.0);
        let jl = JacLattice::new(tau).unwrap();
        let chi = reduce(c(0.3, 0.2), &jl);
        let conn =
            AbelianizedConnection::new(tau, Weights::new(0.0, 0.0).unwrap(), chi, c(0.7, -0.4))
                .unwrap();
        assert_eq!(conn.beta_plus(), &[C64::from(0.0); 4]);
        assert_eq!(conn.beta_minus(), &[C64::from(0.0); 4]);
        let (a, b) = conn.form(c(0.31, 0.17)).unwrap();
        assert_eq!(a[(0, 1)], C64::from(0.0));
        assert_eq!(a[(1, 0)], C64::from(0.0));
        assert_eq!(a[(0, 0)], c(0.7, -0.4));
        assert_eq!(b[(0, 0)], -chi.chi());
        assert_eq!(b[(1, 1)], chi.chi());
    }

    #[test]
    fn spin_proximity_is_rejected() {
        let tau = c(0.0, 1.0);
        let jl = JacLattice::new(tau).unwrap();
        let w = Weights::new(0.1, 0.2).unwrap();
        let half = jl.g1() * 0.5;
        let chi = reduce(half, &jl);
        let err = AbelianizedConnection::new(tau, w, chi, C64::from(0.0));
        assert!(matches!(err, Err(Error::SpinDegeneracy { .. })));
    }

    #[test]
    fn mu_gamma_table() {
        let w = Weights::new(0.1, 0.2).unwrap();
        let mu = mu_gamma(HalfLatticeClass::Zero, &w, BranchSign::Plus).unwrap();
        assert!((mu - 0.3).abs() < 1e-15);
        let mu = mu_gamma(HalfLatticeClass::Zero, &w, BranchSign::Minus).unwrap();
        assert!((mu + 0.3).abs() < 1e-15);
        let mu = mu_gamma(HalfLatticeClass::Center, &w, BranchSign::Plus).unwrap();
        assert!((mu + 0.1).abs() < 1e-14);
        assert_eq!(
            mu_gamma(HalfLatticeClass::SymA, &w, BranchSign::Plus).unwrap(),
            0.0
        );
        assert_eq!(
            mu_gamma(HalfLatticeClass::SymB, &w, BranchSign::Minus).unwrap(),
            0.0
        );
        assert!(mu_gamma(HalfLatticeClass::NotHalf, &w, BranchSign::Plus).is_err());
    }

    #[test]
    fn spin_expansion_checker() {
        let tau = c(0.0, 1.0);
        let jl = JacLattice::new(tau).unwrap();
        let w = Weights::new(0.1, 0.2).unwrap();
        let factor = std::f64::consts::PI / tau.im;

        // Pole-free class with the correct constant term.
        let gamma = reduce(jl.g1() * 0.5, &jl);
        let report = check_spin_expansion(
            &SpinExpansion {
                residue: C64::from(0.0),
                constant: gamma.chi().conj(),
            },
            &gamma,
            &w,
            1e-9,
        )
        .unwrap();
        assert!(report.residue_ok && report.constant_ok);
        assert_eq!(report.stability, Stability::Semistable);

        // Stable branch at the origin class.
        let gamma0 = reduce(C64::from(0.0), &jl);
        let report = check_spin_expansion(
            &SpinExpansion {
                residue: C64::from(factor * 0.3),
                constant: C64::from(0.0),
            },
            &gamma0,
            &w,
            1e-9,
        )
        .unwrap();
        assert!(report.residue_ok && report.constant_ok);
        assert_eq!(report.stability, Stability::Stable);
        assert!((report.mu - 0.3).abs() < 1e-15);

        // Mismatched constant term is flagged without affecting the residue.
        let report = check_spin_expansion(
            &SpinExpansion {
                residue: C64::from(-factor * 0.3),
                constant: c(1.0, 0.0),
            },
            &gamma0,
            &w,
            1e-9,
        )
        .unwrap();
        assert!(report.residue_ok);
        assert!(!report.constant_ok);
        assert_eq!(report.stability, Stability::Unstable);

        let not_half = reduce(c(0.3, 0.1), &jl);
        assert!(
            check_spin_expansion(
                &SpinExpansion {
                    residue: C64::from(0.0),
                    constant: C64::from(0.0)
                },
                &not_half,
                &w,
                1e-9
            )
            .is_err()
        );
    }
}
