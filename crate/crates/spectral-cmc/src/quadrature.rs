//! Numerical integration helpers: adaptive Simpson quadrature for line
//! integrals and fixed trapezoid contour quadrature for residues.

use crate::{C64, Error, Result};

fn simpson(fa: C64, fm: C64, fb: C64, h: f64) -> C64 {
    (fa + fm * 4.0 + fb) * (h / 6.0)
}

#[allow(clippy::too_many_arguments)]
fn simpson_rec(
    f: &mut dyn FnMut(f64) -> Result<C64>,
    a: f64,
    b: f64,
    fa: C64,
    fm: C64,
    fb: C64,
    whole: C64,
    tol: f64,
    depth: u32,
) -> Result<C64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = simpson(fa, flm, fm, m - a);
    let right = simpson(fm, frm, fb, b - m);
    let err = (left + right - whole).norm();
    if err < 15.0 * tol || depth == 0 {
        // Classic Richardson correction for composite Simpson.
        return Ok(left + right + (left + right - whole) / 15.0);
    }
    let half_tol = 0.5 * tol;
    Ok(
        simpson_rec(f, a, m, fa, flm, fm, left, half_tol, depth - 1)?
            + simpson_rec(f, m, b, fm, frm, fb, right, half_tol, depth - 1)?,
    )
}

/// Adaptive Simpson integral of f over [a, b] to absolute tolerance tol.
pub fn adaptive_simpson(
    mut f: impl FnMut(f64) -> Result<C64>,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<C64> {
    if !(tol > 0.0) {
        return Err(Error::Integration("tolerance must be positive".into()));
    }
    let m = 0.5 * (a + b);
    let fa = f(a)?;
    let fm = f(m)?;
    let fb = f(b)?;
    let whole = simpson(fa, fm, fb, b - a);
    simpson_rec(&mut f, a, b, fa, fm, fb, whole, tol, 48)
}

/// Residue of f at center via an n-point trapezoid rule on a circle.
///
/// Exponentially accurate when f is meromorphic with a single simple pole
/// inside the contour and analytic on it.
pub fn contour_residue(
    mut f: impl FnMut(C64) -> Result<C64>,
    center: C64,
    radius: f64,
    n: usize,
) -> Result<C64> {
    let mut sum = C64::new(0.0, 0.0);
    for k in 0..n {
        let theta = 2.0 * std::f64::consts::PI * (k as f64) / (n as f64);
        let dir = C64::new(0.0, theta).exp();
        sum += f(center + dir * radius)? * dir;
    }
    Ok(sum * (radius / n as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn integrates_polynomial_exactly() {
        let v = adaptive_simpson(|t| Ok(C64::new(t * t, 3.0 * t)), 0.0, 1.0, 1e-12).unwrap();
        assert!((v - C64::new(1.0 / 3.0, 1.5)).norm() < 1e-12);
    }

    #[test]
    fn integrates_oscillatory_function() {
        let v = adaptive_simpson(
            |t| Ok(C64::new((10.0 * t).sin(), 0.0)),
            0.0,
            std::f64::consts::PI,
            1e-11,
        )
        .unwrap();
        let exact = (1.0 - (10.0 * std::f64::consts::PI).cos()) / 10.0;
        assert!((v.re - exact).abs() < 1e-10, "{v}");
    }

    #[test]
    fn residue_of_rational_function() {
        // f(z) = 1/(z - 0.3) + z has residue 1 at 0.3.
        let r = contour_residue(
            |z| Ok(1.0 / (z - C64::new(0.3, 0.0)) + z),
            C64::new(0.3, 0.0),
            0.05,
            64,
        )
        .unwrap();
        assert!((r - C64::new(1.0, 0.0)).norm() < 1e-12, "{r}");
    }
}
