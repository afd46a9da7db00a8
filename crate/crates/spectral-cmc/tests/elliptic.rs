//! Elliptic-function tests against direct lattice-sum oracles.
//!
//! The oracle evaluators below sum over lattice translates directly and know
//! nothing about theta series; reference values frozen into the tables were
//! produced by `print_oracle_values` (run with --ignored) at summation radius
//! 2000 and are compared here against the fast implementation.

use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use spectral_cmc::elliptic::{theta1, zeta_quasi_periods, EllipticContext, Lattice};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Direct Eisenstein sums g2 = 60 Σ' ω^-4, g3 = 140 Σ' ω^-6 over the square
/// block of lattice indices |m|, |n| <= radius.
fn eisenstein_lattice_sum(gamma1: C64, gamma2: C64, radius: i64) -> (C64, C64) {
    let mut s4 = C64::new(0.0, 0.0);
    let mut s6 = C64::new(0.0, 0.0);
    for m in -radius..=radius {
        for n in -radius..=radius {
            if m == 0 && n == 0 {
                continue;
            }
            let w = gamma1 * (m as f64) + gamma2 * (n as f64);
            let w2 = w * w;
            let inv4 = 1.0 / (w2 * w2);
            s4 += inv4;
            s6 += inv4 / w2;
        }
    }
    (s4 * 60.0, s6 * 140.0)
}

/// Direct Weierstrass zeta sum 1/z + Σ' (1/(z-ω) + 1/ω + z/ω²) over the same
/// index block.
fn zeta_lattice_sum(z: C64, gamma1: C64, gamma2: C64, radius: i64) -> C64 {
    let mut s = 1.0 / z;
    for m in -radius..=radius {
        for n in -radius..=radius {
            if m == 0 && n == 0 {
                continue;
            }
            let w = gamma1 * (m as f64) + gamma2 * (n as f64);
            s += 1.0 / (z - w) + 1.0 / w + z / (w * w);
        }
    }
    s
}

/// Lattices exercised by the frozen tables: square, the abelianization torus
/// at tau = i, and two rectangular moduli.
fn table_lattices() -> Vec<(Lattice, &'static str)> {
    vec![
        (Lattice::new(c(1.0, 0.0), c(0.0, 1.0)).unwrap(), "square"),
        (Lattice::new(c(1.0, 1.0), c(-1.0, 1.0)).unwrap(), "torus_tau_i"),
        (Lattice::new(c(1.0, 0.0), c(0.0, 0.8)).unwrap(), "rect_0.8"),
        (Lattice::new(c(1.0, 0.0), c(0.0, 1.3)).unwrap(), "rect_1.3"),
    ]
}

/// Two-level Richardson extrapolation of the block sums at radius/4,
/// radius/2, radius. The partial sums converge like R^-2 with an R^-3
/// correction; the levels remove those terms in order.
fn richardson(s_quarter: C64, s_half: C64, s_full: C64) -> C64 {
    let r1_half = s_half + (s_half - s_quarter) / 3.0;
    let r1_full = s_full + (s_full - s_half) / 3.0;
    r1_full + (r1_full - r1_half) / 7.0
}

fn eisenstein_oracle(gamma1: C64, gamma2: C64, radius: i64) -> (C64, C64) {
    let (a2, a3) = eisenstein_lattice_sum(gamma1, gamma2, radius / 4);
    let (b2, b3) = eisenstein_lattice_sum(gamma1, gamma2, radius / 2);
    let (c2, c3) = eisenstein_lattice_sum(gamma1, gamma2, radius);
    (richardson(a2, b2, c2), richardson(a3, b3, c3))
}

fn zeta_oracle(z: C64, gamma1: C64, gamma2: C64, radius: i64) -> C64 {
    richardson(
        zeta_lattice_sum(z, gamma1, gamma2, radius / 4),
        zeta_lattice_sum(z, gamma1, gamma2, radius / 2),
        zeta_lattice_sum(z, gamma1, gamma2, radius),
    )
}

#[test]
#[ignore = "generator for the frozen oracle tables"]
fn print_oracle_values() {
    for radius in [1000i64, 2000] {
        println!("radius {radius}");
        for (lat, name) in table_lattices() {
            let (g2, g3) = eisenstein_oracle(lat.gamma1(), lat.gamma2(), radius);
            let zh = zeta_oracle(lat.gamma1() * 0.5, lat.gamma1(), lat.gamma2(), radius);
            println!(
                "  (\"{name}\", c({:+.16e}, {:+.16e}), c({:+.16e}, {:+.16e}), c({:+.16e}, {:+.16e})),",
                g2.re, g2.im, g3.re, g3.im, zh.re, zh.im
            );
        }
    }
}

/// Frozen oracle outputs (summation radius 2000): per lattice, extrapolated
/// g2, g3, and zeta(gamma1/2). Cross-radius agreement puts these within about
/// 2e-10 of the true values.
const ORACLE_TABLE: [(&str, (f64, f64), (f64, f64), (f64, f64)); 4] = [
    (
        "square",
        (1.8907272012924392e2, 8.2701223062155346e-16),
        (4.3872213078892479e-12, -1.2365373191602168e-15),
        (1.5707963267936849e0, 3.0261487297041294e-17),
    ),
    (
        "torus_tau_i",
        (-4.7268180032310980e1, -2.0675305765538837e-16),
        (1.5456716489502710e-16, 5.4840266348615599e-13),
        (7.8539816339741420e-1, -7.8539816339741308e-1),
    ),
    (
        "rect_0.8",
        (3.4673282114300662e2, 1.1045892670534499e-15),
        (-8.7130232177437802e2, -1.4955508129815582e-16),
        (1.3807555654151771e0, 2.2592163606422323e-17),
    ),
    (
        "rect_1.3",
        (1.3873970752813472e2, 5.9498288539837755e-16),
        (2.4376657080875387e2, -6.1015293767685860e-16),
        (1.6337306466512513e0, 4.9462060396578466e-18),
    ),
];

fn table_entry(name: &str) -> (C64, C64, C64) {
    let row = ORACLE_TABLE.iter().find(|r| r.0 == name).unwrap();
    (
        c(row.1 .0, row.1 .1),
        c(row.2 .0, row.2 .1),
        c(row.3 .0, row.3 .1),
    )
}

#[test]
fn invariants_match_lattice_sum_oracle() {
    for (lat, name) in table_lattices() {
        let ctx = EllipticContext::new(lat).unwrap();
        let (g2_ref, g3_ref, _) = table_entry(name);
        let d2 = (ctx.g2() - g2_ref).norm();
        let d3 = (ctx.g3() - g3_ref).norm();
        assert!(d2 < 3e-9 * (1.0 + g2_ref.norm()), "{name}: g2 off by {d2}");
        assert!(d3 < 3e-9 * (1.0 + g3_ref.norm()), "{name}: g3 off by {d3}");
    }
}

#[test]
fn zeta_half_period_matches_oracle() {
    for (lat, name) in table_lattices() {
        let ctx = EllipticContext::new(lat.clone()).unwrap();
        let (_, _, z_ref) = table_entry(name);
        let z = ctx.zeta(lat.gamma1() * 0.5).unwrap();
        let d = (z - z_ref).norm();
        assert!(d < 1e-10 * (1.0 + z_ref.norm()), "{name}: zeta off by {d}");
    }
}

#[test]
fn oracle_table_reproducible_at_reduced_radius() {
    // Guards the frozen constants against drift: the same oracle at radius
    // 400 must already agree with the table to its cruder accuracy.
    for (lat, name) in table_lattices() {
        let (g2_ref, g3_ref, z_ref) = table_entry(name);
        let (g2, g3) = eisenstein_oracle(lat.gamma1(), lat.gamma2(), 400);
        let z = zeta_oracle(lat.gamma1() * 0.5, lat.gamma1(), lat.gamma2(), 400);
        assert!((g2 - g2_ref).norm() < 1e-6 * (1.0 + g2_ref.norm()), "{name}");
        assert!((g3 - g3_ref).norm() < 1e-6 * (1.0 + g3_ref.norm()), "{name}");
        assert!((z - z_ref).norm() < 1e-8 * (1.0 + z_ref.norm()), "{name}");
    }
}

#[test]
fn wp_differential_equation_against_oracle_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2106);
    for (lat, name) in table_lattices() {
        let ctx = EllipticContext::new(lat.clone()).unwrap();
        let (g2_ref, g3_ref, _) = table_entry(name);
        for _ in 0..50 {
            let z = lat.from_coords(rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45));
            if lat.dist_to_lattice(z) < 0.1 {
                continue;
            }
            let (p, pp) = ctx.wp_and_prime(z).unwrap();
            let res = pp * pp - (p * p * p * 4.0 - g2_ref * p - g3_ref);
            let scale = 1.0 + pp.norm_sqr() + p.norm().powi(3);
            assert!(res.norm() < 1e-9 * scale, "{name} at {z}: {}", res.norm());
        }
    }
}

#[test]
fn theta1_is_odd() {
    let mut rng = ChaCha8Rng::seed_from_u64(2101);
    for tau in [c(0.0, 1.0), c(0.3, 0.9), c(-0.2, 1.7)] {
        for _ in 0..20 {
            let z = c(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0));
            let a = theta1(z, tau).unwrap();
            let b = theta1(-z, tau).unwrap();
            assert!((a + b).norm() < 1e-10 * (1.0 + a.norm()), "tau {tau} z {z}");
        }
    }
}

#[test]
fn theta1_quasi_periodicity() {
    let mut rng = ChaCha8Rng::seed_from_u64(2102);
    let ipi = c(0.0, std::f64::consts::PI);
    for tau in [c(0.0, 1.0), c(0.25, 1.1), c(-0.4, 0.8)] {
        for _ in 0..100 {
            let z = c(rng.gen_range(-1.5..1.5), rng.gen_range(-1.5..1.5));
            let t = theta1(z, tau).unwrap();
            let shifted = theta1(z + 1.0, tau).unwrap();
            assert!((shifted + t).norm() < 1e-10 * (1.0 + t.norm()));
            let shifted = theta1(z + tau, tau).unwrap();
            let factor = -(-ipi * tau - ipi * 2.0 * z).exp();
            assert!(
                (shifted - factor * t).norm() < 1e-10 * (1.0 + (factor * t).norm()),
                "tau {tau} z {z}"
            );
        }
    }
}

#[test]
fn wp_even_and_periodic() {
    let mut rng = ChaCha8Rng::seed_from_u64(2103);
    for (lat, name) in table_lattices() {
        let ctx = EllipticContext::new(lat.clone()).unwrap();
        for _ in 0..20 {
            let z = lat.from_coords(rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45));
            if lat.dist_to_lattice(z) < 0.05 {
                continue;
            }
            let p = ctx.wp(z).unwrap();
            let scale = 1.0 + p.norm();
            assert!((ctx.wp(-z).unwrap() - p).norm() < 1e-10 * scale, "{name}");
            assert!(
                (ctx.wp(z + lat.gamma1()).unwrap() - p).norm() < 1e-9 * scale,
                "{name}"
            );
            assert!(
                (ctx.wp(z + lat.gamma2()).unwrap() - p).norm() < 1e-9 * scale,
                "{name}"
            );
            let pp = ctx.wp_prime(z).unwrap();
            assert!(
                (ctx.wp_prime(-z).unwrap() + pp).norm() < 1e-10 * (1.0 + pp.norm()),
                "{name}"
            );
        }
    }
}

#[test]
fn wp_pole_guard() {
    let lat = Lattice::new(c(1.0, 0.0), c(0.0, 1.0)).unwrap();
    let ctx = EllipticContext::new(lat).unwrap();
    assert!(ctx.wp(c(0.0, 0.0)).is_err());
    assert!(ctx.wp(c(3.0, 2.0)).is_err());
    assert!(ctx.wp(c(0.5, 0.5)).is_ok());
}

#[test]
fn zeta_consistency_with_quasi_periods() {
    for (lat, name) in table_lattices() {
        let ctx = EllipticContext::new(lat.clone()).unwrap();
        let (eta1, eta2) = ctx.quasi_periods();
        let z1 = ctx.zeta(lat.gamma1() * 0.5).unwrap();
        let z2 = ctx.zeta(lat.gamma2() * 0.5).unwrap();
        assert!((z1 * 2.0 - eta1).norm() < 1e-10, "{name}: {}", (z1 * 2.0 - eta1).norm());
        assert!((z2 * 2.0 - eta2).norm() < 1e-10, "{name}: {}", (z2 * 2.0 - eta2).norm());
    }
}

#[test]
fn legendre_relation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2104);
    let two_pi_i = c(0.0, 2.0 * std::f64::consts::PI);
    for _ in 0..10 {
        let g1 = c(rng.gen_range(0.5..1.5), rng.gen_range(-0.3..0.3));
        let g2 = c(rng.gen_range(-0.4..0.4), rng.gen_range(0.6..1.6));
        let lat = Lattice::new(g1, g2).unwrap();
        let (eta1, eta2) = zeta_quasi_periods(&lat).unwrap();
        let defect = (eta1 * g2 - eta2 * g1 - two_pi_i).norm();
        assert!(defect < 1e-10, "Legendre defect {defect} for {g1}, {g2}");
    }
}

#[test]
fn quasi_periods_scale_inversely() {
    let lat = Lattice::new(c(1.0, 0.1), c(0.2, 1.2)).unwrap();
    let (eta1, eta2) = zeta_quasi_periods(&lat).unwrap();
    for s in [c(2.0, 0.0), c(0.5, 0.7), c(-1.0, 0.4)] {
        let scaled = lat.scaled(s).unwrap();
        let (se1, se2) = zeta_quasi_periods(&scaled).unwrap();
        assert!((se1 - eta1 / s).norm() < 1e-10 * (1.0 + eta1.norm()));
        assert!((se2 - eta2 / s).norm() < 1e-10 * (1.0 + eta2.norm()));
    }
}

#[test]
fn square_lattice_eta1_is_pi() {
    let lat = Lattice::new(c(1.0, 0.0), c(0.0, 1.0)).unwrap();
    let (eta1, eta2) = zeta_quasi_periods(&lat).unwrap();
    assert!((eta1 - c(std::f64::consts::PI, 0.0)).norm() < 1e-10, "eta1 = {eta1}");
    assert!((eta2 - c(0.0, -std::f64::consts::PI)).norm() < 1e-10, "eta2 = {eta2}");
}

#[test]
fn wp_differential_equation_on_grid() {
    for (lat, name) in table_lattices() {
        let ctx = EllipticContext::new(lat.clone()).unwrap();
        let g2 = ctx.g2();
        let g3 = ctx.g3();
        let mut checked = 0;
        for i in 0..20 {
            for j in 0..20 {
                let x = -0.475 + 0.05 * i as f64;
                let y = -0.475 + 0.05 * j as f64;
                let z = lat.from_coords(x, y);
                if lat.dist_to_lattice(z) < 0.08 {
                    continue;
                }
                let (p, pp) = ctx.wp_and_prime(z).unwrap();
                let res = pp * pp - (p * p * p * 4.0 - g2 * p - g3);
                let scale = 1.0 + pp.norm_sqr() + p.norm().powi(3);
                assert!(res.norm() < 1e-9 * scale, "{name} at {z}: {}", res.norm());
                checked += 1;
            }
        }
        assert!(checked > 300, "{name}: only {checked} grid points checked");
    }
}

#[test]
fn doubling_truncation_is_stable() {
    let mut rng = ChaCha8Rng::seed_from_u64(2105);
    let lat = Lattice::new(c(1.0, 0.0), c(0.15, 1.05)).unwrap();
    let base = EllipticContext::new(lat.clone()).unwrap();
    let fine =
        EllipticContext::with_trunc(lat.clone(), base.tol(), 2 * base.trunc()).unwrap();
    assert!(fine.trunc() == 2 * base.trunc());
    for _ in 0..25 {
        let z = lat.from_coords(rng.gen_range(-0.45..0.45), rng.gen_range(-0.45..0.45));
        if lat.dist_to_lattice(z) < 0.05 {
            continue;
        }
        let d = (base.wp(z).unwrap() - fine.wp(z).unwrap()).norm();
        assert!(d < 1e-11 * (1.0 + base.wp(z).unwrap().norm()), "wp drift {d}");
        let d = (base.zeta(z).unwrap() - fine.zeta(z).unwrap()).norm();
        assert!(d < 1e-11, "zeta drift {d}");
    }
}
