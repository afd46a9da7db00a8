//! Spectral data for conformally immersed tori: curve and line-bundle
//! coordinates, closing residuals, interior degeneracy scans, and the
//! deformation flow in the residue weight scale.
//!
//! A state couples a spectral curve (genus 0 or 1) over the unit lambda disc
//! with an odd abelian map `chi`, an odd dual map `alpha`, and a pair of Sym
//! points on the unit lambda circle. Closing a state means: `chi` vanishes
//! over lambda = 0, `alpha` matches the unitarizable section of the four
//! puncture family along the unit circle, interior spin points carry the
//! required simple-pole data, and the Sym values sit on their half-lattice
//! targets. The flow advances the weight scale `t` at fixed direction
//! `q = rho1/rho0` and fixed domain modulus, re-closing the state after each
//! step by a damped Gauss-Newton iteration.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use num_rational::Ratio;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::abelianization::{BranchSign, Stability, Weights, mu_gamma};
use crate::elliptic::{EllipticContext, Lattice};
use crate::jacobian::{HalfLatticeClass, JacLattice, JacobianPoint};
use crate::msection::SectionSolver;
use crate::{C64, Error, Result};

/// Default truncation order for the odd series coefficients.
pub const DEFAULT_SERIES_ORDER: usize = 8;

/// Default truncation order for the genus-1 ladder coefficients.
pub const G1_SERIES_ORDER: usize = 12;

/// Default number of unit-circle samples for closing checks.
pub const DEFAULT_CIRCLE_SAMPLES: usize = 32;

/// Residual entry reported when the section solver fails at a sample, so a
/// broken sample dominates every closing norm instead of vanishing silently.
pub const SOLVER_FAILURE_SENTINEL: f64 = 1e6;

/// Allowed relative imaginary leakage when a pinned coefficient is real by
/// symmetry.
const REAL_PART_TOL: f64 = 1e-8;

/// Convergence tolerance for the circle-parameter Newton iteration.
const CIRCLE_NEWTON_TOL: f64 = 1e-12;

/// A trailing series coefficient larger than this fraction of the largest
/// coefficient triggers an order increase.
const SERIES_TAIL_RATIO: f64 = 1e-3;

/// Spurious-root guard for certified section solves inside closing checks.
const CLOSING_DEFECT_TOL: f64 = 1e-8;

pub(crate) mod complex_pair {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(c: &C64, s: S) -> std::result::Result<S::Ok, S::Error> {
        [c.re, c.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<C64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(C64::new(re, im))
    }
}

pub(crate) mod complex_quad {
    use super::C64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[C64; 4], s: S) -> std::result::Result<S::Ok, S::Error> {
        [
            [v[0].re, v[0].im],
            [v[1].re, v[1].im],
            [v[2].re, v[2].im],
            [v[3].re, v[3].im],
        ]
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(
        d: D,
    ) -> std::result::Result<[C64; 4], D::Error> {
        let raw = <[[f64; 2]; 4]>::deserialize(d)?;
        Ok([
            C64::new(raw[0][0], raw[0][1]),
            C64::new(raw[1][0], raw[1][1]),
            C64::new(raw[2][0], raw[2][1]),
            C64::new(raw[3][0], raw[3][1]),
        ])
    }
}

fn rectangular_im(tau: C64, label: &str) -> Result<f64> {
    if !tau.re.is_finite() || !tau.im.is_finite() || tau.im <= 0.0 {
        return Err(Error::Domain(format!(
            "{label} must have positive imaginary part, got {tau}"
        )));
    }
    if tau.re.abs() > 1e-9 * tau.im.max(1.0) {
        return Err(Error::Domain(format!(
            "{label} must be purely imaginary, got {tau}"
        )));
    }
    Ok(tau.im)
}

/// Curve of the state: the double cover of the lambda disc is either
/// unbranched in the interior (genus 0, `lambda = xi^2`) or carried by a
/// rectangular torus `C/(Z + tau_spec Z)` with `lambda` a Moebius function of
/// the elliptic `wp` (genus 1).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SpectralCurve {
    Genus0,
    Genus1 {
        /// Modulus of the curve torus, purely imaginary.
        #[serde(with = "complex_pair")]
        tau_spec: C64,
        /// Coefficients `[n0, n1, d0, d1]` of
        /// `lambda = (n0 wp + n1) / (d0 wp + d1)`.
        #[serde(with = "complex_quad")]
        moebius: [C64; 4],
    },
}

impl SpectralCurve {
    pub fn genus(&self) -> usize {
        match self {
            SpectralCurve::Genus0 => 0,
            SpectralCurve::Genus1 { .. } => 1,
        }
    }
}

/// Builds the genus-1 curve over the rectangular torus with modulus
/// `tau_spec`. The Moebius coefficients are determined by three
/// normalizations: `lambda` vanishes on the lattice, the half shift by
/// `tau_spec/2` inverts `lambda`, and the interior branch values are real.
pub fn genus1_curve(tau_spec: C64) -> Result<SpectralCurve> {
    let geom = CurveGeometry::new(tau_spec)?;
    Ok(SpectralCurve::Genus1 {
        tau_spec,
        moebius: geom.moebius(),
    })
}

/// Half-period data of the curve torus used to build `lambda`.
#[derive(Debug, Clone)]
struct CurveGeometry {
    ctx: EllipticContext,
    tau_spec: C64,
    s_sigma: f64,
    omega: C64,
    eta1: C64,
    eta2: C64,
    g2: C64,
    g3: C64,
    e2: f64,
    e3: f64,
    beta: f64,
}

impl CurveGeometry {
    fn new(tau_spec: C64) -> Result<Self> {
        let s_sigma = rectangular_im(tau_spec, "curve modulus")?;
        if !(0.05..=50.0).contains(&s_sigma) {
            return Err(Error::Domain(format!(
                "curve modulus imaginary part {s_sigma} outside supported range [0.05, 50]"
            )));
        }
        let lattice = Lattice::new(C64::new(1.0, 0.0), tau_spec)?;
        let ctx = EllipticContext::new(lattice)?;
        let (eta1, eta2) = ctx.quasi_periods();
        let g2 = ctx.g2();
        let g3 = ctx.g3();
        let omega = 0.5 * tau_spec;
        let half1 = C64::new(0.5, 0.0);
        let e1 = real_part(ctx.wp(half1)?, "branch value e1")?;
        let e2 = real_part(ctx.wp(half1 + omega)?, "branch value e2")?;
        let e3 = real_part(ctx.wp(omega)?, "branch value e3")?;
        if !(e1 > e2 && e2 > e3) {
            return Err(Error::Domain(format!(
                "branch values not ordered: e1 = {e1}, e2 = {e2}, e3 = {e3}"
            )));
        }
        let beta = ((e1 - e3) * (e2 - e3)).sqrt();
        Ok(Self {
            ctx,
            tau_spec,
            s_sigma,
            omega,
            eta1,
            eta2,
            g2,
            g3,
            e2,
            e3,
            beta,
        })
    }

    fn moebius(&self) -> [C64; 4] {
        [
            C64::new(0.0, 0.0),
            C64::new(self.beta, 0.0),
            C64::new(1.0, 0.0),
            C64::new(-self.e3, 0.0),
        ]
    }
}

fn real_part(z: C64, label: &str) -> Result<f64> {
    if z.im.abs() > 1e-8 * (1.0 + z.re.abs()) {
        return Err(Error::Domain(format!(
            "{label} should be real, got {z}"
        )));
    }
    Ok(z.re)
}

/// Full state of a spectral torus.
///
/// Complex entries serialize as `[re, im]` pairs. The series coefficients are
/// real: conjugation symmetry of the closed states is built into the
/// representation. For genus 0, `chi_coeffs[j]` multiplies `xi^(2j+1)` and
/// `alpha_coeffs` holds the `1/xi` coefficient first, then the odd powers.
/// For genus 1, `chi_coeffs` are ladder coefficients and `alpha_coeffs`
/// holds the mirror-pole coefficient first, then the ladder coefficients;
/// the two leading coefficients of each map and the interior pole
/// coefficient are pinned by the period, shift, and residue conditions and
/// are not stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralData {
    pub curve: SpectralCurve,
    /// Domain modulus, purely imaginary with `|tau| >= 1`.
    #[serde(with = "complex_pair")]
    pub tau: C64,
    pub chi_coeffs: Vec<f64>,
    pub alpha_coeffs: Vec<f64>,
    /// First Sym point, over the unit lambda circle.
    #[serde(with = "complex_pair")]
    pub sym1: C64,
    /// Second Sym point, conjugate to the first on closed states.
    #[serde(with = "complex_pair")]
    pub sym2: C64,
    /// Residue weight scale: the puncture weights are `(t, q t)`.
    pub t: f64,
    /// Weight direction `rho1/rho0`, held fixed along the flow.
    pub q: f64,
    /// Sign selecting the branch of the interior pairing, `+1` or `-1`.
    pub mu_sign: i32,
}

impl SpectralData {
    pub fn weights(&self) -> Result<Weights> {
        Weights::new(self.t, self.q * self.t)
    }

    pub fn branch_sign(&self) -> Result<BranchSign> {
        BranchSign::from_i32(self.mu_sign)
    }

    /// Signed interior pairing weight `mu = mu_sign * (rho0 - rho1)`.
    pub fn mu(&self) -> Result<f64> {
        Ok(self.branch_sign()?.value() * (self.t - self.q * self.t))
    }

    /// Lambda values at the two Sym points.
    pub fn sym_lambdas(&self) -> Result<(C64, C64)> {
        let eval = CurveEval::new(self)?;
        Ok((eval.lambda(self.sym1)?, eval.lambda(self.sym2)?))
    }

    /// Mean curvature of the associated surface,
    /// `H = i (lambda1 + lambda2) / (lambda1 - lambda2)`.
    pub fn mean_curvature(&self) -> Result<f64> {
        let (l1, l2) = self.sym_lambdas()?;
        if (l1 - l2).norm() < 1e-9 {
            return Err(Error::Domain(
                "Sym points coincide; mean curvature undefined".into(),
            ));
        }
        let h = C64::new(0.0, 1.0) * (l1 + l2) / (l1 - l2);
        if h.im.abs() > 1e-6 * (1.0 + h.re.abs()) {
            return Err(Error::Domain(format!(
                "Sym pair breaks conjugation symmetry: H = {h}"
            )));
        }
        Ok(h.re)
    }

    /// Checks structural consistency: moduli, coefficient layout, Sym point
    /// placement, weight ranges, and (genus 1) curve coefficients.
    pub fn validate(&self) -> Result<()> {
        JacLattice::new(self.tau)?;
        self.weights()?;
        self.branch_sign()?;
        if self.t < 0.0 {
            return Err(Error::Domain(format!("weight scale t = {} negative", self.t)));
        }
        if self.q < 0.0 {
            return Err(Error::Domain(format!("weight direction q = {} negative", self.q)));
        }
        if self.chi_coeffs.is_empty() && self.curve.genus() == 0 {
            return Err(Error::Domain("empty chi coefficient vector".into()));
        }
        if self.alpha_coeffs.len() != self.chi_coeffs.len() + 1 {
            return Err(Error::Domain(format!(
                "alpha coefficient count {} should exceed chi count {} by one",
                self.alpha_coeffs.len(),
                self.chi_coeffs.len()
            )));
        }
        match &self.curve {
            SpectralCurve::Genus0 => {
                for (label, sym) in [("sym1", self.sym1), ("sym2", self.sym2)] {
                    if (sym.norm() - 1.0).abs() > 1e-6 {
                        return Err(Error::Domain(format!(
                            "{label} = {sym} off the unit circle"
                        )));
                    }
                }
            }
            SpectralCurve::Genus1 { tau_spec, moebius } => {
                let geom = CurveGeometry::new(*tau_spec)?;
                let fresh = geom.moebius();
                for (have, want) in moebius.iter().zip(fresh.iter()) {
                    if (have - want).norm() > 1e-6 * (1.0 + want.norm()) {
                        return Err(Error::Domain(format!(
                            "curve coefficient {have} inconsistent with modulus {tau_spec} (expected {want})"
                        )));
                    }
                }
                let quarter = geom.s_sigma / 4.0;
                if (self.sym1.im - quarter).abs() > 1e-6 * quarter.max(1.0) {
                    return Err(Error::Domain(format!(
                        "sym1 = {} off the unit-circle line Im = {quarter}",
                        self.sym1
                    )));
                }
                if (self.sym2.im + quarter).abs() > 1e-6 * quarter.max(1.0) {
                    return Err(Error::Domain(format!(
                        "sym2 = {} off the unit-circle line Im = {}",
                        self.sym2, -quarter
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Parameters of the flow driver and its inner solvers.
#[derive(Debug, Clone)]
pub struct FlowConfig {
    /// Initial and maximal step in the weight scale.
    pub dt: f64,
    /// Step underflow bound; halving below this aborts the flow.
    pub min_dt: f64,
    /// Residual norm target of the closing iteration.
    pub tol: f64,
    /// Iteration cap of the closing Gauss-Newton loop.
    pub gn_max_iter: usize,
    /// Unit-circle sample count for closing checks (the closing iteration
    /// itself samples a quarter of this on the independent arc).
    pub circle_samples: usize,
    /// Cap reference for adaptive series order growth.
    pub series_order: usize,
    /// Relative transport tolerance of section solves inside the closing
    /// iteration; validation and certification always run at full tolerance.
    pub ms_rtol: f64,
    /// Iteration cap of the inner section solves.
    pub ms_max_iter: usize,
    /// Unitarizability defect bound for certified solves.
    pub defect_tol: f64,
    /// Grid resolution of the interior degeneracy scan.
    pub scan_grid: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            dt: 5e-3,
            min_dt: 1e-5,
            tol: 1e-9,
            gn_max_iter: 30,
            circle_samples: DEFAULT_CIRCLE_SAMPLES,
            series_order: DEFAULT_SERIES_ORDER,
            ms_rtol: 1e-10,
            ms_max_iter: 40,
            defect_tol: 1e-8,
            scan_grid: 48,
        }
    }
}

/// Homogeneous genus-0 state at `t = 0` for domain modulus `tau = i s`,
/// `s >= 1`: `chi` is linear and both Sym points close exactly.
pub fn homogeneous_data(tau: C64) -> Result<SpectralData> {
    let s = rectangular_im(tau, "domain modulus")?;
    if s < 1.0 - 1e-12 {
        return Err(Error::Domain(format!(
            "domain modulus {tau} below the supported rectangle |tau| >= 1"
        )));
    }
    let r = (1.0 + s * s).sqrt();
    let c1 = PI * r / (4.0 * s);
    let mut chi_coeffs = vec![0.0; DEFAULT_SERIES_ORDER];
    chi_coeffs[0] = c1;
    let mut alpha_coeffs = vec![0.0; DEFAULT_SERIES_ORDER + 1];
    alpha_coeffs[0] = c1;
    let sym1 = C64::new(1.0 / r, s / r);
    let data = SpectralData {
        curve: SpectralCurve::Genus0,
        tau,
        chi_coeffs,
        alpha_coeffs,
        sym1,
        sym2: sym1.conj(),
        t: 0.0,
        q: 1.0,
        mu_sign: 1,
    };
    let lattice = JacLattice::new(tau)?;
    let hat = JacLattice::hat(tau)?;
    let miss = hat.dist_to_lattice(c1 * sym1 - 0.5 * lattice.g1());
    if miss > 1e-9 {
        return Err(Error::Infeasible(format!(
            "no unit-circle Sym solution: target missed by {miss:.3e}"
        )));
    }
    data.validate()?;
    Ok(data)
}

/// Genus-1 state at `t = 0` over the curve torus with modulus `tau_spec`.
///
/// The two leading coefficients of `chi` follow from the period conditions in
/// closed form. The Sym points and the matching domain modulus solve the
/// half-lattice target condition on the unit-circle line; `tau` seeds the
/// choice among the finitely many crossings and the returned state carries
/// the matched modulus, which may differ from the seed.
pub fn delaunay_data(tau: C64, tau_spec: C64) -> Result<SpectralData> {
    rectangular_im(tau, "domain modulus seed")?;
    let geom = CurveGeometry::new(tau_spec)?;
    let basis = LadderBasis::new(geom, 1.0, 0.0, 0.0, &[0.0, 0.0], &[0.0, 0.0])?;
    let quarter = basis.geom.s_sigma / 4.0;

    // Scan Re X(u + i s_sigma/4) - 1/2 for sign changes; X gains exactly 2
    // per unit period in u, so at least one crossing exists.
    let f = |u: f64| -> Result<f64> {
        Ok(basis.x_value(C64::new(u, quarter))?.re - 0.5)
    };
    let n_scan = 400;
    let mut roots: Vec<f64> = Vec::new();
    let mut prev_u = 0.0;
    let mut prev_f = f(prev_u)?;
    for i in 1..=n_scan {
        let u = i as f64 / n_scan as f64;
        let fu = f(u)?;
        if prev_f == 0.0 {
            roots.push(prev_u);
        } else if prev_f * fu < 0.0 {
            let (mut lo, mut hi, mut flo) = (prev_u, u, prev_f);
            for _ in 0..80 {
                let mid = 0.5 * (lo + hi);
                let fm = f(mid)?;
                if flo * fm <= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                    flo = fm;
                }
            }
            roots.push(0.5 * (lo + hi));
        }
        prev_u = u;
        prev_f = fu;
    }

    let seed = tau.im;
    let mut best: Option<(f64, f64)> = None;
    for &u in &roots {
        let s_cand = 2.0 * basis.x_value(C64::new(u, quarter))?.im;
        if !(s_cand >= 1.0 - 1e-12) {
            continue;
        }
        let better = match best {
            None => true,
            Some((_, s_prev)) => (s_cand - seed).abs() < (s_prev - seed).abs(),
        };
        if better {
            best = Some((u, s_cand));
        }
    }
    let (u_star, s_star) = best.ok_or_else(|| {
        Error::Infeasible(
            "no unit-circle Sym pair with domain modulus |tau| >= 1 on this curve".into(),
        )
    })?;

    let data = SpectralData {
        curve: genus1_curve(tau_spec)?,
        tau: C64::new(0.0, s_star),
        chi_coeffs: vec![0.0; G1_SERIES_ORDER],
        alpha_coeffs: vec![0.0; G1_SERIES_ORDER + 1],
        sym1: C64::new(u_star, quarter),
        sym2: C64::new(u_star, -quarter),
        t: 0.0,
        q: 1.0,
        mu_sign: 1,
    };
    data.validate()?;
    let eval = CurveEval::new(&data)?;
    let lattice = JacLattice::new(data.tau)?;
    let hat = JacLattice::hat(data.tau)?;
    let miss = hat.dist_to_lattice(eval.chi(data.sym1)? - 0.5 * lattice.g1());
    if miss > 1e-8 {
        return Err(Error::Infeasible(format!(
            "Sym target missed by {miss:.3e} after matching the domain modulus"
        )));
    }
    Ok(data)
}

/// Evaluator for the maps of one state: `lambda`, `chi`, `alpha`, and the
/// parametrization of the unit-circle preimage.
#[derive(Debug, Clone)]
pub struct CurveEval {
    kind: EvalKind,
}

#[derive(Debug, Clone)]
enum EvalKind {
    G0(SeriesMaps),
    G1(Box<LadderBasis>),
}

impl CurveEval {
    pub fn new(data: &SpectralData) -> Result<Self> {
        let kind = match &data.curve {
            SpectralCurve::Genus0 => EvalKind::G0(SeriesMaps {
                c: data.chi_coeffs.clone(),
                a: data.alpha_coeffs.clone(),
            }),
            SpectralCurve::Genus1 { tau_spec, .. } => {
                let geom = CurveGeometry::new(*tau_spec)?;
                let s = rectangular_im(data.tau, "domain modulus")?;
                let (r_x, d) = match data.alpha_coeffs.split_first() {
                    Some((first, rest)) => (*first, rest),
                    None => (0.0, &[] as &[f64]),
                };
                EvalKind::G1(Box::new(LadderBasis::new(
                    geom,
                    s,
                    data.mu()?,
                    r_x,
                    &data.chi_coeffs,
                    d,
                )?))
            }
        };
        Ok(Self { kind })
    }

    pub fn genus(&self) -> usize {
        match &self.kind {
            EvalKind::G0(_) => 0,
            EvalKind::G1(_) => 1,
        }
    }

    pub fn lambda(&self, xi: C64) -> Result<C64> {
        match &self.kind {
            EvalKind::G0(_) => Ok(xi * xi),
            EvalKind::G1(b) => b.lambda(xi),
        }
    }

    pub fn chi(&self, xi: C64) -> Result<C64> {
        match &self.kind {
            EvalKind::G0(m) => Ok(m.chi(xi)),
            EvalKind::G1(b) => Ok(b.scale * b.x_value(xi)?),
        }
    }

    pub fn chi_prime(&self, xi: C64) -> Result<C64> {
        match &self.kind {
            EvalKind::G0(m) => Ok(m.chi_prime(xi)),
            EvalKind::G1(b) => Ok(b.scale * b.x_prime(xi)?),
        }
    }

    pub fn alpha(&self, xi: C64) -> Result<C64> {
        match &self.kind {
            EvalKind::G0(m) => m.alpha(xi),
            EvalKind::G1(b) => Ok(b.scale * b.y_value(xi)?),
        }
    }

    /// Points over `lambda = exp(i theta)` for each angle, on the canonical
    /// preimage arc (upper unit half circle for genus 0, the line
    /// `Im xi = s_sigma/4` for genus 1).
    pub fn circle_points(&self, thetas: &[f64]) -> Result<Vec<C64>> {
        let mut out = Vec::with_capacity(thetas.len());
        let mut warm = None;
        for &theta in thetas {
            let (xi, w) = self.circle_point_warm(theta, warm)?;
            warm = Some(w);
            out.push(xi);
        }
        Ok(out)
    }

    /// Single circle point with an optional warm start for the genus-1 line
    /// parameter; returns the point and the parameter reached.
    pub fn circle_point_warm(&self, theta: f64, warm: Option<f64>) -> Result<(C64, f64)> {
        match &self.kind {
            EvalKind::G0(_) => {
                let xi = C64::new(0.0, 0.5 * theta).exp();
                Ok((xi, 0.0))
            }
            EvalKind::G1(b) => b.circle_point(theta, warm),
        }
    }

    /// Pinned period coefficients `(a, b)` of the genus-1 `chi` ladder.
    pub fn period_coefficients(&self) -> Option<(f64, f64)> {
        match &self.kind {
            EvalKind::G0(_) => None,
            EvalKind::G1(b) => Some((b.a, b.b)),
        }
    }

    /// Pinned shift coefficients `(A, B, r)` of the genus-1 `alpha` ladder,
    /// with `r` the simple-pole coefficient at the interior branch point.
    pub fn shift_coefficients(&self) -> Option<(f64, f64, f64)> {
        match &self.kind {
            EvalKind::G0(_) => None,
            EvalKind::G1(b) => Some((b.cap_a, b.cap_b, b.r_b)),
        }
    }

    fn g1(&self) -> Option<&LadderBasis> {
        match &self.kind {
            EvalKind::G0(_) => None,
            EvalKind::G1(b) => Some(b),
        }
    }
}

/// Genus-0 maps: odd series for `chi`, odd Laurent series with a simple pole
/// for `alpha`.
#[derive(Debug, Clone)]
struct SeriesMaps {
    c: Vec<f64>,
    a: Vec<f64>,
}

impl SeriesMaps {
    fn chi(&self, xi: C64) -> C64 {
        let w = xi * xi;
        let mut acc = C64::new(0.0, 0.0);
        for &cj in self.c.iter().rev() {
            acc = acc * w + cj;
        }
        acc * xi
    }

    fn chi_prime(&self, xi: C64) -> C64 {
        let w = xi * xi;
        let mut acc = C64::new(0.0, 0.0);
        for (j, &cj) in self.c.iter().enumerate().rev() {
            acc = acc * w + (2 * j + 1) as f64 * cj;
        }
        acc
    }

    fn alpha(&self, xi: C64) -> Result<C64> {
        if xi.norm() < 1e-9 {
            return Err(Error::Pole { location: xi });
        }
        let w = xi * xi;
        let mut acc = C64::new(0.0, 0.0);
        for &aj in self.a[1..].iter().rev() {
            acc = acc * w + aj;
        }
        Ok(acc * xi + self.a[0] / xi)
    }
}

/// Genus-1 maps, built on the odd ladder of elliptic primitives.
///
/// `P_0 = xi`, `P_1 = -zeta(xi - omega) - eta2/2` with `omega = tau_spec/2`,
/// and for `k >= 2`
/// `P_k = (wp^(k-2) wp' (xi - omega) + (2k-3)(g2/2) P_(k-2) + (k-2) g3 P_(k-3)) / (4k-2)`,
/// so that `P_k' = wp^k(xi - omega)`. All ladder maps are odd; their periods
/// follow the same recursion with `P_0 -> gamma`, `P_1 -> -eta_gamma`.
///
/// `X = a P_1 + b P_0 + sum c_k P_(k+2)` with `(a, b)` pinned so the periods
/// of `chi = scale X` are `(pi/s, 0)`; `Y` adds the lattice `zeta`, simple
/// pole terms at the two branch points over the unit circle's interior and
/// exterior mirror (`1/2` and `(1 + tau_spec)/2`), and the ladder, with
/// `(A, B)` pinned by the shift conditions.
#[derive(Debug, Clone)]
struct LadderBasis {
    geom: CurveGeometry,
    scale: f64,
    a: f64,
    b: f64,
    c: Vec<f64>,
    cap_a: f64,
    cap_b: f64,
    r_b: f64,
    r_x: f64,
    d: Vec<f64>,
    periods_1: Vec<C64>,
}

impl LadderBasis {
    fn with_residues(
        geom: CurveGeometry,
        s_domain: f64,
        r_b: f64,
        r_x: f64,
        c: &[f64],
        d: &[f64],
    ) -> Result<Self> {
        let kmax = (c.len() + 1).max(d.len()).max(1);
        let periods_1 = ladder_periods(C64::new(1.0, 0.0), geom.eta1, geom.g2, geom.g3, kmax);
        let periods_tau = ladder_periods(geom.tau_spec, geom.eta2, geom.g2, geom.g3, kmax);

        // Period rows for X: the cycle over 1 carries 2, the cycle over
        // tau_spec carries 0. Cramer with det = -(eta1 tau - eta2) = -2 pi i.
        let sum_c = |p: &[C64]| -> C64 {
            c.iter()
                .enumerate()
                .map(|(j, &cj)| cj * p[j + 2])
                .sum::<C64>()
        };
        let r0 = C64::new(2.0, 0.0) - sum_c(&periods_1);
        let r1 = -sum_c(&periods_tau);
        let det = -geom.eta1 * geom.tau_spec + geom.eta2;
        if det.norm() < 1e-10 {
            return Err(Error::Domain(
                "degenerate period system on the curve torus".into(),
            ));
        }
        let a = pinned_real((r0 * geom.tau_spec - r1) / det, "period coefficient a")?;
        let b = pinned_real((-geom.eta1 * r1 + geom.eta2 * r0) / det, "period coefficient b")?;

        let scale = PI / (2.0 * s_domain);

        // Shift rows for Y: cycle over 1 carries 2, cycle over tau_spec
        // carries 0; the lattice zeta and both branch-point poles contribute
        // their quasi-periods. Cramer with det = 2 pi i.
        let sum_d = |p: &[C64]| -> C64 {
            d.iter()
                .enumerate()
                .map(|(j, &dj)| dj * p[j + 1])
                .sum::<C64>()
        };
        let poles = r_b + r_x;
        let q0 = C64::new(2.0, 0.0) - poles * geom.eta1 - sum_d(&periods_1);
        let q1 = -poles * geom.eta2 - sum_d(&periods_tau);
        let det2 = geom.eta1 * geom.tau_spec - geom.eta2;
        let cap_a = pinned_real((q0 * geom.tau_spec - q1) / det2, "shift coefficient A")?;
        let cap_b = pinned_real((geom.eta1 * q1 - geom.eta2 * q0) / det2, "shift coefficient B")?;

        Ok(Self {
            geom,
            scale,
            a,
            b,
            c: c.to_vec(),
            cap_a,
            cap_b,
            r_b,
            r_x,
            d: d.to_vec(),
            periods_1,
        })
    }

    /// Basis with the interior pole coefficient pinned so the residue of
    /// `alpha` at the branch point `1/2` carries the spin weight `mu`; the
    /// mirror pole coefficient `r_x` stays free.
    fn new(
        geom: CurveGeometry,
        s_domain: f64,
        mu: f64,
        r_x: f64,
        c: &[f64],
        d: &[f64],
    ) -> Result<Self> {
        let probe = Self::with_residues(geom.clone(), s_domain, 0.0, 0.0, c, d)?;
        let x_slope_half = probe.slope_at_half();
        if x_slope_half.abs() < 1e-12 {
            return Err(Error::Domain(
                "interior branch point is degenerate for chi".into(),
            ));
        }
        let r_b = 4.0 * s_domain * mu / (PI * x_slope_half);
        if r_b == 0.0 && r_x == 0.0 {
            return Ok(probe);
        }
        Self::with_residues(geom, s_domain, r_b, r_x, c, d)
    }

    /// Slope of X at the interior branch point 1/2; wp(1/2 - omega) = e2.
    fn slope_at_half(&self) -> f64 {
        let e2 = self.geom.e2;
        let mut x_slope_half = self.a * e2 + self.b;
        let mut e2_pow = e2 * e2;
        for &cj in &self.c {
            x_slope_half += cj * e2_pow;
            e2_pow *= e2;
        }
        x_slope_half
    }

    /// Ladder values `P_0..=P_kmax` at `xi`.
    fn ladder_values(&self, xi: C64, kmax: usize) -> Result<Vec<C64>> {
        let g = &self.geom;
        let zs = xi - g.omega;
        let mut v = Vec::with_capacity(kmax + 1);
        v.push(xi);
        if kmax >= 1 {
            v.push(-g.ctx.zeta(zs)? - 0.5 * g.eta2);
        }
        if kmax >= 2 {
            let (wp, wpp) = g.ctx.wp_and_prime(zs)?;
            let mut wp_pow = C64::new(1.0, 0.0);
            for k in 2..=kmax {
                let mut num = wp_pow * wpp + (2 * k - 3) as f64 * 0.5 * g.g2 * v[k - 2];
                if k >= 3 {
                    num += (k - 2) as f64 * g.g3 * v[k - 3];
                }
                v.push(num / (4 * k - 2) as f64);
                wp_pow *= wp;
            }
        }
        Ok(v)
    }

    fn x_value(&self, xi: C64) -> Result<C64> {
        let v = self.ladder_values(xi, self.c.len() + 1)?;
        let mut x = self.a * v[1] + self.b * v[0];
        for (j, &cj) in self.c.iter().enumerate() {
            x += cj * v[j + 2];
        }
        Ok(x)
    }

    fn x_prime(&self, xi: C64) -> Result<C64> {
        let wp = self.geom.ctx.wp(xi - self.geom.omega)?;
        let mut x = self.a * wp + self.b;
        let mut wp_pow = wp * wp;
        for &cj in &self.c {
            x += cj * wp_pow;
            wp_pow *= wp;
        }
        Ok(x)
    }

    fn y_value(&self, xi: C64) -> Result<C64> {
        let g = &self.geom;
        let v = self.ladder_values(xi, self.d.len().max(1))?;
        let zeta_lat = g.ctx.zeta(xi)?;
        let zeta_branch = g.ctx.zeta(xi - C64::new(0.5, 0.0))? + 0.5 * g.eta1;
        let mut y = self.cap_a * zeta_lat + self.cap_b * xi + self.r_b * zeta_branch;
        if self.r_x != 0.0 {
            let mirror = C64::new(0.5, 0.0) + g.omega;
            let zeta_mirror = g.ctx.zeta(xi - mirror)? + 0.5 * (g.eta1 + g.eta2);
            y += self.r_x * zeta_mirror;
        }
        for (j, &dj) in self.d.iter().enumerate() {
            y += dj * v[j + 1];
        }
        Ok(y)
    }

    /// Finite part of `alpha` at the interior branch point `1/2`, using
    /// `P_k(1/2) = Delta_1 P_k / 2` (oddness) and the finite parts `eta1/2`
    /// of the zeta terms (for the mirror pole, `zeta(-omega) = -eta2/2`
    /// cancels against its parity constant).
    fn alpha_center_constant(&self) -> C64 {
        let g = &self.geom;
        let mut y =
            0.5 * self.cap_a * g.eta1 + 0.5 * self.cap_b + 0.5 * (self.r_b + self.r_x) * g.eta1;
        for (j, &dj) in self.d.iter().enumerate() {
            y += dj * 0.5 * self.periods_1[j + 1];
        }
        self.scale * y
    }

    fn lambda(&self, xi: C64) -> Result<C64> {
        let g = &self.geom;
        let lat = g.ctx.lattice();
        if lat.dist_to_lattice(xi) < 1e-9 {
            return Ok(C64::new(0.0, 0.0));
        }
        if lat.dist_to_lattice(xi - g.omega) < 1e-9 {
            return Err(Error::Pole { location: xi });
        }
        let wp = g.ctx.wp(xi)?;
        let m = g.moebius();
        Ok((m[0] * wp + m[1]) / (m[2] * wp + m[3]))
    }

    /// Point on the line `Im xi = s_sigma/4` with `lambda = exp(i theta)`,
    /// solved by a damped Newton iteration in the real line parameter. The
    /// anchors `lambda = 1` at `u = 1/2` and `lambda = -1` at `u = 0` seed a
    /// short walk when no warm start is given.
    fn circle_point(&self, theta: f64, warm: Option<f64>) -> Result<(C64, f64)> {
        let (mut u0, mut th0) = match warm {
            Some(u) => (u, f64::NAN),
            None => {
                let th = theta.rem_euclid(2.0 * PI);
                if th <= PI { (0.5 - 0.5 * th / PI, 0.0) } else { (1.0 - 0.5 * (th - PI) / PI, f64::NAN) }
            }
        };
        // Walk in moderate increments when the start is a remembered angle.
        if !th0.is_nan() {
            let span = theta - th0;
            let steps = (span.abs() / 0.4).ceil().max(1.0) as usize;
            for i in 1..steps {
                let th_i = th0 + span * i as f64 / steps as f64;
                u0 = self.circle_newton(th_i, u0)?;
            }
            th0 = f64::NAN;
        }
        let _ = th0;
        let u = self.circle_newton(theta, u0)?;
        Ok((C64::new(u, 0.25 * self.geom.s_sigma), u))
    }

    fn circle_newton(&self, theta: f64, u_start: f64) -> Result<f64> {
        let g = &self.geom;
        let target = C64::new(g.e3, 0.0) + g.beta * C64::new(0.0, -theta).exp();
        let quarter = 0.25 * g.s_sigma;
        let mut u = u_start;
        for _ in 0..60 {
            let xi = C64::new(u, quarter);
            let (wp, wpp) = g.ctx.wp_and_prime(xi)?;
            let f = wp - target;
            if f.norm() < CIRCLE_NEWTON_TOL * (1.0 + target.norm()) {
                return Ok(u);
            }
            let denom = wpp.norm_sqr();
            if denom < 1e-20 {
                return Err(Error::Domain(
                    "circle parametrization stalled at a critical point".into(),
                ));
            }
            let mut du = -(f * wpp.conj()).re / denom;
            du = du.clamp(-0.08, 0.08);
            u += du;
        }
        Err(Error::NoConvergence {
            iterations: 60,
            residual: 1.0,
        })
    }
}

fn ladder_periods(gamma: C64, eta: C64, g2: C64, g3: C64, kmax: usize) -> Vec<C64> {
    let mut v = Vec::with_capacity(kmax + 1);
    v.push(gamma);
    if kmax >= 1 {
        v.push(-eta);
    }
    for k in 2..=kmax {
        let mut num = (2 * k - 3) as f64 * 0.5 * g2 * v[k - 2];
        if k >= 3 {
            num += (k - 2) as f64 * g3 * v[k - 3];
        }
        v.push(num / (4 * k - 2) as f64);
    }
    v
}

fn pinned_real(z: C64, label: &str) -> Result<f64> {
    if z.im.abs() > REAL_PART_TOL * (1.0 + z.re.abs()) {
        return Err(Error::Domain(format!(
            "{label} lost reality: {z}"
        )));
    }
    Ok(z.re)
}

/// Interior point where `chi` meets the half lattice, with its pairing data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpinHit {
    #[serde(with = "complex_pair")]
    pub xi: C64,
    #[serde(with = "complex_pair")]
    pub lambda: C64,
    /// Half-lattice value hit by `chi`.
    #[serde(with = "complex_pair")]
    pub chi: C64,
    pub class: HalfLatticeClass,
    pub mu: f64,
    pub stability: Stability,
}

/// Scans the open lambda disc for interior points where `chi` takes
/// half-lattice values, classifies each hit, and reports the signed pairing
/// weight and its stability reading. Points over `lambda = 0` and the unit
/// circle are excluded. Hits are deduplicated over the deck involution and
/// sorted by `|lambda|`.
pub fn stability_scan(data: &SpectralData, grid: usize) -> Result<Vec<SpinHit>> {
    let eval = CurveEval::new(data)?;
    let lattice = JacLattice::new(data.tau)?;
    let weights = data.weights()?;
    let sign = data.branch_sign()?;
    let n = grid.max(8);

    let mut candidates: Vec<(C64, f64)> = Vec::new();
    let mut max_slope: f64 = 0.0;
    let cell: f64;
    match eval.genus() {
        0 => {
            cell = 2.0 * PI / n as f64;
            for i in 0..n {
                let r = (i as f64 + 0.5) / n as f64 * 0.998;
                for j in 0..n {
                    let phi = 2.0 * PI * j as f64 / n as f64;
                    let xi = r * C64::new(0.0, phi).exp();
                    let chi = eval.chi(xi)?;
                    let d = lattice.dist_to_half_lattice(chi);
                    max_slope = max_slope.max(eval.chi_prime(xi)?.norm());
                    candidates.push((xi, d));
                }
            }
        }
        _ => {
            let b = eval.g1().expect("genus-1 evaluator");
            let s_sigma = b.geom.s_sigma;
            cell = (1.0 / n as f64).max(0.5 * s_sigma / n as f64);
            for i in 0..n {
                let u = (i as f64 + 0.5) / n as f64;
                for j in 0..n {
                    let y = ((j as f64 + 0.5) / n as f64 - 0.5) * 0.5 * s_sigma * 0.98;
                    let xi = C64::new(u, y);
                    let chi = eval.chi(xi)?;
                    let d = lattice.dist_to_half_lattice(chi);
                    max_slope = max_slope.max(eval.chi_prime(xi)?.norm());
                    candidates.push((xi, d));
                }
            }
        }
    }

    let threshold = (2.5 * cell * max_slope).max(0.05);
    let mut hits: Vec<SpinHit> = Vec::new();
    for (xi0, d) in candidates {
        if d > threshold {
            continue;
        }
        let chi0 = eval.chi(xi0)?;
        let (cx, cy) = lattice.coords(chi0);
        let gamma = lattice.from_coords((2.0 * cx).round() / 2.0, (2.0 * cy).round() / 2.0);

        // Newton polish of chi(xi) = gamma.
        let mut xi = xi0;
        let mut ok = false;
        for _ in 0..40 {
            let r = eval.chi(xi)? - gamma;
            if r.norm() < 1e-10 * (1.0 + gamma.norm()) {
                ok = true;
                break;
            }
            let dp = eval.chi_prime(xi)?;
            if dp.norm() < 1e-12 {
                break;
            }
            xi -= r / dp;
        }
        if !ok {
            continue;
        }
        let lambda = match eval.lambda(xi) {
            Ok(l) => l,
            Err(_) => continue,
        };
        if lambda.norm() >= 1.0 - 1e-3 || lambda.norm() < 1e-8 {
            continue;
        }
        if hits.iter().any(|h| (h.lambda - lambda).norm() < 1e-5) {
            continue;
        }
        let class = JacobianPoint::from_raw(gamma, &lattice).classify_half(1e-7);
        if class == HalfLatticeClass::NotHalf {
            continue;
        }
        let mu = mu_gamma(class, &weights, sign)?;
        let stability = if mu > 1e-15 {
            Stability::Stable
        } else if mu < -1e-15 {
            Stability::Unstable
        } else {
            Stability::Semistable
        };
        hits.push(SpinHit {
            xi,
            lambda,
            chi: gamma,
            class,
            mu,
            stability,
        });
    }
    hits.sort_by(|p, q| {
        (p.lambda.norm(), p.lambda.arg())
            .partial_cmp(&(q.lambda.norm(), q.lambda.arg()))
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    Ok(hits)
}

/// Closing residuals of a state, all entries as magnitudes.
///
/// Layout: `[0]` the value of `chi` over `lambda = 0` (its required zero);
/// `[1]` the pole-order defect of `alpha` there, identically zero in this
/// representation; then two entries per interior spin point (pole coefficient
/// mismatch and finite-part mismatch against the conjugate target); then one
/// entry per unit-circle sample, `|alpha - alpha_u|` with `alpha_u` the
/// certified unitarizable section value (a failed or uncertified solve
/// reports [`SOLVER_FAILURE_SENTINEL`]); finally the two Sym target distances
/// and the two unit-circle distances of the Sym lambda values. Moving a Sym
/// point off its target by `delta` changes its entry by exactly `|delta|`.
pub fn closing_residuals(data: &SpectralData, circle_samples: usize) -> Result<Vec<f64>> {
    data.validate()?;
    let eval = CurveEval::new(data)?;
    let lattice = JacLattice::new(data.tau)?;
    let hat = JacLattice::hat(data.tau)?;
    let weights = data.weights()?;
    let s = data.tau.im;
    let mut out = Vec::new();

    out.push(eval.chi(C64::new(0.0, 0.0))?.norm());
    out.push(0.0);

    let hits = stability_scan(data, 48)?;
    for hit in &hits {
        let slope = eval.chi_prime(hit.xi)?;
        let required = C64::new(PI / s, 0.0) * hit.mu / slope;
        match (eval.g1(), lattice.dist_to_lattice(hit.xi - C64::new(0.5, 0.0)) < 1e-6) {
            (Some(b), true) => {
                out.push((b.scale * b.r_b - required).norm());
                out.push((b.alpha_center_constant() - eval.chi(hit.xi)?.conj()).norm());
            }
            _ => {
                // The representation has no pole here: report the full
                // required pole coefficient and the finite-part mismatch.
                out.push(required.norm());
                out.push((eval.alpha(hit.xi)? - hit.chi.conj()).norm());
            }
        }
    }

    let n = circle_samples.max(4);
    let thetas: Vec<f64> = (0..n).map(|m| (m as f64 + 0.5) * 2.0 * PI / n as f64).collect();
    let points = eval.circle_points(&thetas)?;
    let solver = SectionSolver::new(data.tau, weights)?;
    let sample_entries: Vec<f64> = points
        .par_iter()
        .map(|&xi| -> f64 {
            let run = || -> Result<f64> {
                let chi = eval.chi(xi)?;
                let model = eval.alpha(xi)?;
                let point = JacobianPoint::from_raw(chi, &lattice);
                let alpha_u = solver.solve(&point, model, 40)?;
                if !weights.is_zero() {
                    let defect = solver.certify(&point, alpha_u)?;
                    if defect > CLOSING_DEFECT_TOL {
                        return Err(Error::SpuriousRoot {
                            alpha: alpha_u,
                            defect,
                        });
                    }
                }
                Ok((model - alpha_u).norm())
            };
            run().unwrap_or(SOLVER_FAILURE_SENTINEL)
        })
        .collect();
    out.extend(sample_entries);

    for (sym, base) in [
        (data.sym1, 0.5 * lattice.g1()),
        (data.sym2, 0.5 * lattice.g2()),
    ] {
        out.push(hat.dist_to_lattice(eval.chi(sym)? - base));
    }
    out.push((eval.lambda(data.sym1)?.norm() - 1.0).abs());
    out.push((eval.lambda(data.sym2)?.norm() - 1.0).abs());
    Ok(out)
}

/// Per-sample state of the closing iteration: the last accepted section value
/// and its first-order response to the abelian coordinate.
#[derive(Debug, Clone)]
struct SampleCache {
    theta: f64,
    u: f64,
    chi: C64,
    alpha: C64,
    slope: [[f64; 2]; 2],
}

fn apply_slope(slope: &[[f64; 2]; 2], dchi: C64) -> C64 {
    C64::new(
        slope[0][0] * dchi.re + slope[0][1] * dchi.im,
        slope[1][0] * dchi.re + slope[1][1] * dchi.im,
    )
}

enum StepKind {
    G0 { order: usize },
    G1 { nc: usize, nd: usize },
}

/// One re-closing problem at fixed weights: residual assembly, linearized
/// model for the Jacobian, and the damped Gauss-Newton driver.
struct StepSolver<'a> {
    cfg: &'a FlowConfig,
    data: &'a SpectralData,
    kind: StepKind,
    t_new: f64,
    mu_new: f64,
    lattice: JacLattice,
    solver: SectionSolver,
    target1: C64,
    target2: C64,
    thetas: Vec<f64>,
}

impl<'a> StepSolver<'a> {
    fn new(data: &'a SpectralData, t_new: f64, cfg: &'a FlowConfig) -> Result<Self> {
        let weights_new = Weights::new(t_new, data.q * t_new)?;
        let mu_new = data.branch_sign()?.value() * (t_new - data.q * t_new);
        let lattice = JacLattice::new(data.tau)?;
        let hat = JacLattice::hat(data.tau)?;
        let solver = SectionSolver::new(data.tau, weights_new)?.with_rtol(cfg.ms_rtol);

        // Freeze the Sym targets in the lift reached by the current state.
        let eval0 = CurveEval::new(data)?;
        let mut targets = [C64::new(0.0, 0.0); 2];
        for (slot, (sym, base)) in [
            (data.sym1, 0.5 * lattice.g1()),
            (data.sym2, 0.5 * lattice.g2()),
        ]
        .into_iter()
        .enumerate()
        {
            let value = eval0.chi(sym)?;
            let (reduced, _, _) = hat.reduce_raw(value - base);
            targets[slot] = value - reduced;
        }

        let kind = match &data.curve {
            SpectralCurve::Genus0 => StepKind::G0 {
                order: data.chi_coeffs.len(),
            },
            SpectralCurve::Genus1 { .. } => StepKind::G1 {
                nc: data.chi_coeffs.len(),
                nd: data.alpha_coeffs.len().saturating_sub(1),
            },
        };
        let m = match &kind {
            StepKind::G0 { order } => (cfg.circle_samples / 4).max(order + 2),
            StepKind::G1 { nc, nd } => (cfg.circle_samples / 4).max(nc + nd),
        };
        let thetas: Vec<f64> = (0..m).map(|k| (k as f64 + 0.5) * PI / m as f64).collect();
        Ok(Self {
            cfg,
            data,
            kind,
            t_new,
            mu_new,
            lattice,
            solver,
            target1: targets[0],
            target2: targets[1],
            thetas,
        })
    }

    fn pack(&self) -> DVector<f64> {
        let d = self.data;
        match &self.kind {
            StepKind::G0 { order } => {
                let mut x = DVector::zeros(2 * order + 3);
                for (j, &cj) in d.chi_coeffs.iter().enumerate() {
                    x[j] = cj;
                }
                for (j, &aj) in d.alpha_coeffs.iter().enumerate() {
                    x[order + j] = aj;
                }
                x[2 * order + 1] = d.sym1.arg();
                x[2 * order + 2] = d.sym2.arg();
                x
            }
            StepKind::G1 { nc, nd } => {
                let mut x = DVector::zeros(4 + nc + nd);
                let SpectralCurve::Genus1 { tau_spec, .. } = &d.curve else {
                    unreachable!("genus-1 step on genus-0 data");
                };
                x[0] = tau_spec.im;
                for (j, &cj) in d.chi_coeffs.iter().enumerate() {
                    x[1 + j] = cj;
                }
                for (j, &dj) in d.alpha_coeffs.iter().skip(1).enumerate() {
                    x[1 + nc + j] = dj;
                }
                x[1 + nc + nd] = d.alpha_coeffs.first().copied().unwrap_or(0.0);
                x[2 + nc + nd] = d.sym1.re;
                x[3 + nc + nd] = d.sym2.re;
                x
            }
        }
    }

    /// Builds the evaluator and Sym points described by an unknown vector.
    fn unpack(&self, x: &DVector<f64>) -> Result<(CurveEval, C64, C64)> {
        match &self.kind {
            StepKind::G0 { order } => {
                let c: Vec<f64> = (0..*order).map(|j| x[j]).collect();
                let a: Vec<f64> = (0..=*order).map(|j| x[order + j]).collect();
                let sym1 = C64::new(0.0, x[2 * order + 1]).exp();
                let sym2 = C64::new(0.0, x[2 * order + 2]).exp();
                Ok((
                    CurveEval {
                        kind: EvalKind::G0(SeriesMaps { c, a }),
                    },
                    sym1,
                    sym2,
                ))
            }
            StepKind::G1 { nc, nd } => {
                let s_sigma = x[0];
                let geom = CurveGeometry::new(C64::new(0.0, s_sigma))?;
                let c: Vec<f64> = (0..*nc).map(|j| x[1 + j]).collect();
                let d: Vec<f64> = (0..*nd).map(|j| x[1 + nc + j]).collect();
                let r_x = x[1 + nc + nd];
                let basis = LadderBasis::new(geom, self.data.tau.im, self.mu_new, r_x, &c, &d)?;
                let quarter = 0.25 * s_sigma;
                let sym1 = C64::new(x[2 + nc + nd], quarter);
                let sym2 = C64::new(x[3 + nc + nd], -quarter);
                Ok((
                    CurveEval {
                        kind: EvalKind::G1(Box::new(basis)),
                    },
                    sym1,
                    sym2,
                ))
            }
        }
    }

    fn residual_len(&self) -> usize {
        2 * self.thetas.len()
            + 4
            + match self.kind {
                StepKind::G0 { .. } => 0,
                StepKind::G1 { .. } => 2,
            }
    }

    fn shared_rows(
        &self,
        eval: &CurveEval,
        sym1: C64,
        sym2: C64,
        r: &mut DVector<f64>,
        base: usize,
    ) -> Result<()> {
        let d1 = eval.chi(sym1)? - self.target1;
        let d2 = eval.chi(sym2)? - self.target2;
        r[base] = d1.re;
        r[base + 1] = d1.im;
        r[base + 2] = d2.re;
        r[base + 3] = d2.im;
        if let Some(b) = eval.g1() {
            let cc = b.alpha_center_constant() - eval.chi(C64::new(0.5, 0.0))?.conj();
            r[base + 4] = cc.re;
            r[base + 5] = cc.im;
        }
        Ok(())
    }

    /// Residuals with exact section solves, updating the sample cache.
    fn exact_residuals(
        &self,
        x: &DVector<f64>,
        cache: &mut Vec<SampleCache>,
    ) -> Result<DVector<f64>> {
        let (eval, sym1, sym2) = self.unpack(x)?;
        let mut r = DVector::zeros(self.residual_len());
        for (k, entry) in cache.iter_mut().enumerate() {
            let (xi, u) = eval.circle_point_warm(entry.theta, Some(entry.u))?;
            let chi = eval.chi(xi)?;
            let guess = entry.alpha + apply_slope(&entry.slope, chi - entry.chi);
            let point = JacobianPoint::from_raw(chi, &self.lattice);
            let alpha_u = self.solver.solve(&point, guess, self.cfg.ms_max_iter)?;
            let diff = eval.alpha(xi)? - alpha_u;
            r[2 * k] = diff.re;
            r[2 * k + 1] = diff.im;
            entry.u = u;
            entry.chi = chi;
            entry.alpha = alpha_u;
        }
        self.shared_rows(&eval, sym1, sym2, &mut r, 2 * self.thetas.len())?;
        Ok(r)
    }

    /// Residuals with the section replaced by its cached linearization; no
    /// transport solves. At the cached base point this agrees with
    /// [`Self::exact_residuals`].
    fn linear_residuals(&self, x: &DVector<f64>, cache: &[SampleCache]) -> Result<DVector<f64>> {
        let (eval, sym1, sym2) = self.unpack(x)?;
        let mut r = DVector::zeros(self.residual_len());
        for (k, entry) in cache.iter().enumerate() {
            let (xi, _) = eval.circle_point_warm(entry.theta, Some(entry.u))?;
            let chi = eval.chi(xi)?;
            let alpha_pred = entry.alpha + apply_slope(&entry.slope, chi - entry.chi);
            let diff = eval.alpha(xi)? - alpha_pred;
            r[2 * k] = diff.re;
            r[2 * k + 1] = diff.im;
        }
        self.shared_rows(&eval, sym1, sym2, &mut r, 2 * self.thetas.len())?;
        Ok(r)
    }

    fn refresh_slopes(&self, cache: &mut Vec<SampleCache>) -> Result<()> {
        for entry in cache.iter_mut() {
            let point = JacobianPoint::from_raw(entry.chi, &self.lattice);
            let (alpha, slope) = self
                .solver
                .solve_with_slope(&point, entry.alpha, self.cfg.ms_max_iter)?;
            entry.alpha = alpha;
            entry.slope = slope;
        }
        Ok(())
    }

    fn jacobian(
        &self,
        x: &DVector<f64>,
        cache: &[SampleCache],
        r_base: &DVector<f64>,
    ) -> Result<DMatrix<f64>> {
        let n = x.len();
        let mut jac = DMatrix::zeros(r_base.len(), n);
        for j in 0..n {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.clone();
            xp[j] += h;
            let rp = self.linear_residuals(&xp, cache)?;
            for i in 0..r_base.len() {
                jac[(i, j)] = (rp[i] - r_base[i]) / h;
            }
        }
        Ok(jac)
    }

    /// Damped Gauss-Newton loop. Returns the solution vector, its largest
    /// residual entry, and the iteration count. Convergence is judged entry
    /// by entry so the target is independent of the sample count.
    fn run(&self, cache: &mut Vec<SampleCache>) -> Result<(DVector<f64>, f64, usize)> {
        let mut x = self.pack();
        let mut r = self.exact_residuals(&x, cache)?;
        let mut lm = 1e-4f64;
        for iter in 0..self.cfg.gn_max_iter {
            let rmax = r.amax();
            if rmax < self.cfg.tol {
                return Ok((x, rmax, iter));
            }
            let rnorm = r.norm();
            self.refresh_slopes(cache)?;
            let mut jac = self.jacobian(&x, cache, &r)?;
            // Equilibrate the columns: the ladder directions span many
            // orders of magnitude.
            let n = x.len();
            let rows = r.len();
            let mut colscale = vec![1.0f64; n];
            for j in 0..n {
                let norm = jac.column(j).norm();
                if norm > 1e-14 {
                    colscale[j] = 1.0 / norm;
                    for i in 0..rows {
                        jac[(i, j)] *= colscale[j];
                    }
                }
            }
            let mut stepped = false;
            for _ in 0..10 {
                // Damped least squares through a QR of the augmented system;
                // normal equations would square the conditioning.
                let mut aug = DMatrix::zeros(rows + n, n);
                aug.view_mut((0, 0), (rows, n)).copy_from(&jac);
                for j in 0..n {
                    aug[(rows + j, j)] = lm.sqrt();
                }
                let mut rhs = DVector::zeros(rows + n);
                rhs.rows_mut(0, rows).copy_from(&r);
                let qr = aug.qr();
                let qtr = qr.q().transpose() * rhs;
                let mut delta = match qr.r().solve_upper_triangular(&qtr) {
                    Some(y) => y,
                    None => {
                        lm *= 10.0;
                        continue;
                    }
                };
                for j in 0..n {
                    delta[j] *= colscale[j];
                }
                let xp = &x - &delta;
                let mut trial = cache.clone();
                match self.exact_residuals(&xp, &mut trial) {
                    Ok(rp) if rp.norm() < rnorm => {
                        x = xp;
                        r = rp;
                        *cache = trial;
                        lm = (lm / 3.0).max(1e-12);
                        stepped = true;
                        break;
                    }
                    _ => {
                        lm *= 4.0;
                    }
                }
            }
            if !stepped {
                // No damping level descends: the iterate sits on the noise
                // floor of the loosened inner solves. Accept it when it is
                // within ten times the target; the full-precision validation
                // still gates the step.
                if rmax < 10.0 * self.cfg.tol {
                    return Ok((x, rmax, iter));
                }
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: rmax,
                });
            }
        }
        let rmax = r.amax();
        if rmax < 10.0 * self.cfg.tol {
            Ok((x, rmax, self.cfg.gn_max_iter))
        } else {
            Err(Error::NoConvergence {
                iterations: self.cfg.gn_max_iter,
                residual: rmax,
            })
        }
    }

    fn init_cache(&self) -> Result<Vec<SampleCache>> {
        let eval = CurveEval::new(self.data)?;
        let points = eval.circle_points(&self.thetas)?;
        let mut cache = Vec::with_capacity(self.thetas.len());
        for (&theta, &xi) in self.thetas.iter().zip(points.iter()) {
            cache.push(SampleCache {
                theta,
                u: xi.re,
                chi: eval.chi(xi)?,
                alpha: eval.alpha(xi)?,
                slope: [[0.0; 2]; 2],
            });
        }
        Ok(cache)
    }

    /// Assembles the advanced state from a converged unknown vector.
    fn assemble(&self, x: &DVector<f64>) -> Result<SpectralData> {
        let mut out = self.data.clone();
        out.t = self.t_new;
        match &self.kind {
            StepKind::G0 { order } => {
                out.chi_coeffs = (0..*order).map(|j| x[j]).collect();
                out.alpha_coeffs = (0..=*order).map(|j| x[order + j]).collect();
                out.sym1 = C64::new(0.0, x[2 * order + 1]).exp();
                out.sym2 = C64::new(0.0, x[2 * order + 2]).exp();
            }
            StepKind::G1 { nc, nd } => {
                let s_sigma = x[0];
                out.curve = genus1_curve(C64::new(0.0, s_sigma))?;
                out.chi_coeffs = (0..*nc).map(|j| x[1 + j]).collect();
                let mut alpha = Vec::with_capacity(nd + 1);
                alpha.push(x[1 + nc + nd]);
                alpha.extend((0..*nd).map(|j| x[1 + nc + j]));
                out.alpha_coeffs = alpha;
                let quarter = 0.25 * s_sigma;
                out.sym1 = C64::new(x[2 + nc + nd], quarter);
                out.sym2 = C64::new(x[3 + nc + nd], -quarter);
            }
        }
        Ok(out)
    }
}

/// Diagnostics of one accepted step.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub gn_iterations: usize,
    pub residual_norm: f64,
    /// Largest certified section mismatch on the validation samples.
    pub validation_max: f64,
    /// Largest unitarizability defect on the validation samples.
    pub defect_max: f64,
    pub series_order: usize,
}

/// Tail-decay check of the series coefficients; returns true when the
/// truncation is certified.
fn series_tail_ok(chi: &[f64], alpha: &[f64], head_extra: &[f64]) -> bool {
    let head = chi
        .iter()
        .chain(alpha.iter())
        .chain(head_extra.iter())
        .fold(0.0f64, |m, &v| m.max(v.abs()));
    if head == 0.0 {
        return true;
    }
    let chi_tail = chi.last().map_or(0.0, |v| v.abs());
    let alpha_tail = alpha.last().map_or(0.0, |v| v.abs());
    chi_tail.max(alpha_tail) <= SERIES_TAIL_RATIO * head
}

fn validation_thetas() -> Vec<f64> {
    // Nine angles offset by a third of a cell: disjoint by parity from the
    // closing-iteration samples and clear of the quarter-circle angles where
    // symmetric states place their Sym points.
    (0..9)
        .map(|m| (m as f64 + 1.0 / 3.0) * 2.0 * PI / 9.0)
        .collect()
}

/// Certified validation on a sample set disjoint from the closing iteration.
fn validate_state(
    data: &SpectralData,
    cfg: &FlowConfig,
) -> Result<(f64, f64)> {
    let eval = CurveEval::new(data)?;
    let lattice = JacLattice::new(data.tau)?;
    let weights = data.weights()?;
    let solver = SectionSolver::new(data.tau, weights)?;
    let thetas = validation_thetas();
    let points = eval.circle_points(&thetas)?;
    let mut max_miss = 0.0f64;
    let mut max_defect = 0.0f64;
    for &xi in &points {
        let chi = eval.chi(xi)?;
        let model = eval.alpha(xi)?;
        let point = JacobianPoint::from_raw(chi, &lattice);
        let alpha_u = solver.solve(&point, model, cfg.ms_max_iter)?;
        if !weights.is_zero() {
            max_defect = max_defect.max(solver.certify(&point, alpha_u)?);
        }
        max_miss = max_miss.max((model - alpha_u).norm());
    }
    Ok((max_miss, max_defect))
}

fn step_inner(
    data: &SpectralData,
    t_new: f64,
    cfg: &FlowConfig,
) -> Result<(SpectralData, StepDiagnostics)> {
    let solver = StepSolver::new(data, t_new, cfg)?;
    let mut cache = solver.init_cache()?;
    let (x, rnorm, iters) = solver.run(&mut cache)?;
    let advanced = solver.assemble(&x)?;

    // Truncation certificate: grow the series order and re-close when the
    // trailing coefficients have not decayed.
    let (tail_ok, order) = match &advanced.curve {
        SpectralCurve::Genus0 => (
            series_tail_ok(&advanced.chi_coeffs, &advanced.alpha_coeffs, &[]),
            advanced.chi_coeffs.len(),
        ),
        SpectralCurve::Genus1 { .. } => {
            let eval = CurveEval::new(&advanced)?;
            let (a, b) = eval.period_coefficients().expect("genus-1 coefficients");
            let (ca, cb, ry) = eval.shift_coefficients().expect("genus-1 coefficients");
            (
                series_tail_ok(
                    &advanced.chi_coeffs,
                    &advanced.alpha_coeffs,
                    &[a, b, ca, cb, ry],
                ),
                advanced.chi_coeffs.len(),
            )
        }
    };
    if !tail_ok {
        let base = match &advanced.curve {
            SpectralCurve::Genus0 => DEFAULT_SERIES_ORDER,
            SpectralCurve::Genus1 { .. } => G1_SERIES_ORDER,
        };
        let cap = 2 * cfg.series_order.max(base);
        if order + 2 > cap {
            return Err(Error::Infeasible(format!(
                "series tail not decaying at the order cap {cap}"
            )));
        }
        let mut grown = data.clone();
        grown.chi_coeffs.extend_from_slice(&[0.0, 0.0]);
        grown.alpha_coeffs.extend_from_slice(&[0.0, 0.0]);
        return step_inner(&grown, t_new, cfg);
    }

    let (validation_max, defect_max) = validate_state(&advanced, cfg)?;
    if validation_max > 10.0 * cfg.tol {
        return Err(Error::Infeasible(format!(
            "validation mismatch {validation_max:.3e} exceeds {:.3e}",
            10.0 * cfg.tol
        )));
    }
    if defect_max > cfg.defect_tol {
        return Err(Error::Infeasible(format!(
            "validation defect {defect_max:.3e} exceeds {:.3e}",
            cfg.defect_tol
        )));
    }
    Ok((
        advanced,
        StepDiagnostics {
            gn_iterations: iters,
            residual_norm: rnorm,
            validation_max,
            defect_max,
            series_order: order,
        },
    ))
}

/// Advances the weight scale by `dt` at fixed direction and domain modulus,
/// re-closing the state. `dt = 0` returns the state unchanged.
pub fn whitham_step(data: &SpectralData, dt: f64, cfg: &FlowConfig) -> Result<SpectralData> {
    data.validate()?;
    if dt < 0.0 {
        return Err(Error::Domain(format!("negative step dt = {dt}")));
    }
    if dt == 0.0 {
        return Ok(data.clone());
    }
    step_inner(data, data.t + dt, cfg).map(|(d, _)| d)
}

/// One record of the flow trajectory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FlowRecord {
    pub t: f64,
    /// Step taken into this state; zero for the initial record.
    pub dt: f64,
    pub gn_iterations: usize,
    /// Largest certified closing mismatch on the validation samples.
    pub closing_max: f64,
    pub defect_max: f64,
    pub hits: Vec<SpinHit>,
}

/// Outcome of a flow run. `completed` is false when the step size underflowed;
/// the last closed state and the reason are still returned.
#[derive(Debug, Clone)]
pub struct FlowOutcome {
    pub data: SpectralData,
    pub records: Vec<FlowRecord>,
    pub completed: bool,
    pub termination: Option<String>,
}

/// Runs the flow from `data0` to the target weight scale at direction `q`,
/// with adaptive step halving on failed closings and regrowth after accepted
/// steps. Each accepted state is validated and scanned for interior spin
/// points.
pub fn flow(data0: &SpectralData, q: f64, t_target: f64, cfg: &FlowConfig) -> Result<FlowOutcome> {
    let mut data = data0.clone();
    data.q = q;
    data.validate()?;
    if t_target < data.t - 1e-15 {
        return Err(Error::Domain(format!(
            "flow target {t_target} below current weight scale {}",
            data.t
        )));
    }

    let (miss0, defect0) = validate_state(&data, cfg)?;
    let mut records = vec![FlowRecord {
        t: data.t,
        dt: 0.0,
        gn_iterations: 0,
        closing_max: miss0,
        defect_max: defect0,
        hits: stability_scan(&data, cfg.scan_grid)?,
    }];

    let mut dt_cur = cfg.dt;
    while t_target - data.t > 1e-12 {
        let dt = dt_cur.min(t_target - data.t);
        match step_inner(&data, data.t + dt, cfg) {
            Ok((next, diag)) => {
                data = next;
                records.push(FlowRecord {
                    t: data.t,
                    dt,
                    gn_iterations: diag.gn_iterations,
                    closing_max: diag.validation_max,
                    defect_max: diag.defect_max,
                    hits: stability_scan(&data, cfg.scan_grid)?,
                });
                dt_cur = (dt_cur * 2.0).min(cfg.dt);
            }
            Err(err) => {
                dt_cur *= 0.5;
                if dt_cur < cfg.min_dt {
                    return Ok(FlowOutcome {
                        completed: false,
                        termination: Some(format!(
                            "step size underflow at t = {:.6}: {err}",
                            data.t
                        )),
                        data,
                        records,
                    });
                }
            }
        }
    }
    Ok(FlowOutcome {
        data,
        records,
        completed: true,
        termination: None,
    })
}

/// Refinement certificate of a closed state: closing norms at the working
/// resolution, at doubled sample count, and after re-closing with increased
/// series order at doubled sample count. `drift` bounds the sensitivity of
/// the reported closing to the discretization.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: f64,
    pub fine: f64,
    pub refined: f64,
    pub drift: f64,
}

fn max_residual(values: &[f64]) -> f64 {
    values.iter().fold(0.0f64, |m, &v| m.max(v))
}

pub fn refinement_certificate(data: &SpectralData, cfg: &FlowConfig) -> Result<RefinementReport> {
    let coarse = max_residual(&closing_residuals(data, cfg.circle_samples)?);
    let fine = max_residual(&closing_residuals(data, 2 * cfg.circle_samples)?);

    let mut padded = data.clone();
    let extra = match data.curve {
        SpectralCurve::Genus0 => 4,
        SpectralCurve::Genus1 { .. } => 2,
    };
    padded.chi_coeffs.extend(std::iter::repeat(0.0).take(extra));
    padded.alpha_coeffs.extend(std::iter::repeat(0.0).take(extra));
    let mut cfg2 = cfg.clone();
    cfg2.circle_samples = 2 * cfg.circle_samples;
    let (repolished, _) = step_inner(&padded, data.t, &cfg2)?;
    let refined = max_residual(&closing_residuals(&repolished, 2 * cfg.circle_samples)?);

    Ok(RefinementReport {
        coarse,
        fine,
        refined,
        drift: (fine - coarse).abs().max((refined - fine).abs()),
    })
}

/// Weight direction and terminal scale for the `(k, l)` minimal-surface
/// family: `q = (l-1)(2k+2) / ((2l+2)(k-1))` and `t_end = (k-1)/(2k+2)`.
/// Requires `k >= 2`; `l = 1` gives direction zero.
pub fn lawson_direction(k: u32, l: u32) -> Result<(Ratio<i64>, Ratio<i64>)> {
    if k < 2 || l < 1 {
        return Err(Error::Domain(format!(
            "family indices (k, l) = ({k}, {l}) need k >= 2 and l >= 1"
        )));
    }
    let (k, l) = (k as i64, l as i64);
    let q = Ratio::new((l - 1) * (2 * k + 2), (2 * l + 2) * (k - 1));
    let t_end = Ratio::new(k - 1, 2 * k + 2);
    Ok((q, t_end))
}
