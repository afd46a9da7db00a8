//! The unitarizing section solver: closed form at zero weights, symmetry
//! laws, translation laws, uniqueness, and continuity.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use spectral_cmc::C64;
use spectral_cmc::abelianization::Weights;
use spectral_cmc::jacobian::{JacLattice, JacobianPoint, reduce};
use spectral_cmc::msection::{
    MSQuery, NEAR_SPIN_DISTANCE, solve_alpha_u, solve_alpha_u_full, verify_functional_equations,
};

fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Random interior point staying away from the half-lattice.
fn random_point(jl: &JacLattice, rng: &mut ChaCha8Rng) -> JacobianPoint {
    loop {
        let p = reduce(
            jl.from_coords(rng.gen::<f64>(), rng.gen::<f64>()),
            jl,
        );
        if jl.dist_to_half_lattice(p.chi()) > 2.0 * NEAR_SPIN_DISTANCE {
            return p;
        }
    }
}

#[test]
fn zero_weights_recover_the_conjugate() {
    let jl = JacLattice::new(c(0.0, 1.0)).unwrap();
    let weights = Weights::new(0.0, 0.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5101);
    for _ in 0..4 {
        let chi = reduce(jl.from_coords(rng.gen::<f64>(), rng.gen::<f64>()), &jl);
        let alpha = solve_alpha_u(&MSQuery::new(weights, chi).with_guess(
            chi.chi().conj() + c(0.2, -0.15),
        ))
        .unwrap();
        assert!(
            (alpha - chi.chi().conj()).norm() < 1e-8,
            "alpha {alpha} vs conj chi {}",
            chi.chi().conj()
        );
        // Direct unitarity oracle for the diagonal connection: both cycle
        // monodromy entries exp(-alpha g + chi conj(g)) must lie on the
        // unit circle.
        let tau = jl.tau();
        for g in [c(1.0, 0.0) - tau, -(c(1.0, 0.0) + tau)] {
            let m = (-alpha * g + chi.chi() * g.conj()).exp();
            assert!((m.norm() - 1.0).abs() < 1e-9);
        }
    }
}

#[test]
fn solutions_certify_and_are_unique() {
    let jl = JacLattice::new(c(0.0, 1.0)).unwrap();
    let weights = Weights::new(0.05, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5102);
    let chi = random_point(&jl, &mut rng);
    let base = solve_alpha_u_full(&MSQuery::new(weights, chi)).unwrap();
    assert!(base.defect < 1e-10);
    assert!(!base.near_spin);
    for _ in 0..5 {
        let offset = c(rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5) * c(2.0, 0.0);
        let q = MSQuery::new(weights, chi).with_guess(base.alpha + offset);
        match solve_alpha_u(&q) {
            Ok(alpha) => assert!(
                (alpha - base.alpha).norm() < 1e-7,
                "second root? {alpha} vs {}",
                base.alpha
            ),
            Err(e) => panic!("restart from {offset} failed: {e}"),
        }
    }
}

#[test]
fn section_is_odd_and_real() {
    let tau = c(0.0, 1.0);
    let jl = JacLattice::new(tau).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5103);
    for weights in [Weights::new(0.1, 0.06).unwrap(), Weights::new(0.2, -0.13).unwrap()] {
        for _ in 0..3 {
            let chi = random_point(&jl, &mut rng);
            let alpha = solve_alpha_u(&MSQuery::new(weights, chi)).unwrap();

            let minus = JacobianPoint::from_raw(-chi.chi(), &jl);
            let alpha_minus = solve_alpha_u(&MSQuery::new(weights, minus)).unwrap();
            assert!(
                (alpha_minus + alpha).norm() < 1e-7,
                "odd symmetry: {alpha_minus} vs {}",
                -alpha
            );

            // Rectangular modulus: conjugation symmetry.
            let bar = JacobianPoint::from_raw(chi.chi().conj(), &jl);
            let alpha_bar = solve_alpha_u(&MSQuery::new(weights, bar)).unwrap();
            assert!(
                (alpha_bar - alpha.conj()).norm() < 1e-7,
                "reality: {alpha_bar} vs {}",
                alpha.conj()
            );
        }
    }
}

#[test]
fn translation_laws_hold() {
    let jl = JacLattice::new(c(0.0, 1.0)).unwrap();

    // Zero weights: exact from the closed form.
    let chi0 = reduce(jl.from_coords(0.31, 0.17), &jl);
    let report = verify_functional_equations(Weights::new(0.0, 0.0).unwrap(), &chi0, 1e-8).unwrap();
    assert!(report.ok, "zero-weight shifts off by {}", report.max_error);

    // Small weights: two independent solver runs per generator.
    let mut rng = ChaCha8Rng::seed_from_u64(5104);
    let chi = random_point(&jl, &mut rng);
    let report =
        verify_functional_equations(Weights::new(0.05, 0.02).unwrap(), &chi, 1e-6).unwrap();
    assert!(report.ok, "small-weight shifts off by {}", report.max_error);
}

#[test]
fn full_lattice_translation_is_invisible_after_reduction() {
    let jl = JacLattice::new(c(0.0, 1.0)).unwrap();
    let weights = Weights::new(0.08, 0.03).unwrap();
    let raw = jl.from_coords(0.27, 0.41);
    let shifted = raw + jl.g1() + 2.0 * jl.g2();
    let a0 = solve_alpha_u(&MSQuery::new(weights, reduce(raw, &jl))).unwrap();
    let a1 = solve_alpha_u(&MSQuery::new(weights, reduce(shifted, &jl))).unwrap();
    assert!((a0 - a1).norm() < 1e-12);
}

#[test]
fn section_moves_continuously_in_chi() {
    let jl = JacLattice::new(c(0.0, 1.0)).unwrap();
    let weights = Weights::new(0.1, 0.05).unwrap();
    let start = jl.from_coords(0.28, 0.12);
    let dir = c(0.02, 0.013);
    let mut prev: Option<C64> = None;
    for k in 0..5 {
        let chi = JacobianPoint::from_raw(start + dir * c(k as f64, 0.0), &jl);
        let alpha = solve_alpha_u(&MSQuery::new(weights, chi)).unwrap();
        if let Some(p) = prev {
            assert!(
                (alpha - p).norm() < 10.0 * dir.norm(),
                "jump {} over step {}",
                (alpha - p).norm(),
                dir.norm()
            );
        }
        prev = Some(alpha);
    }
}

#[test]
fn near_spin_queries_are_flagged() {
    let jl = JacLattice::new(c(0.0, 1.0)).unwrap();
    let weights = Weights::new(0.05, 0.02).unwrap();
    // Close to the half-lattice class of g1/2 but well outside the hard
    // rejection band.
    let chi = JacobianPoint::from_raw(jl.g1() * c(0.5, 0.0) + c(0.005, 0.003), &jl);
    let sol = solve_alpha_u_full(&MSQuery::new(weights, chi)).unwrap();
    assert!(sol.near_spin);
    assert!(sol.defect < 1e-10);
}

#[test]
fn hopeless_budgets_error_out() {
    let jl = JacLattice::new(c(0.0, 1.0)).unwrap();
    let weights = Weights::new(0.2, -0.13).unwrap();
    let chi = reduce(jl.from_coords(0.23, 0.11), &jl);
    let mut q = MSQuery::new(weights, chi).with_guess(c(25.0, 25.0));
    q.max_iter = 1;
    assert!(solve_alpha_u(&q).is_err());
}
