use ipds_core::constrained::{
    build_lagrangian, compute_constants, k_cons, lemma51_violation_bound, multiplier_growth_audit, solve_constrained,
    theorem53_bounds, ConsMode, ConsReference, ConstrainedError, ConstrainedProgram, Constraint,
};
use ipds_core::gap::GapEvaluator;
use ipds_core::geometry::{Geometry, ProxFn};
use ipds_core::linalg::Mat;
use ipds_core::problem::{Indices, OracleCounter, QuadraticObjective};
use ipds_core::zoo;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// `min ½‖x‖² − x₁ − x₂` over `[-2,2]²` subject to `x₁ + x₂ ≤ rhs`.
fn one_affine(rhs: f64) -> ConstrainedProgram {
    let x_geom = Geometry::box_uniform(2, -2.0, 2.0).unwrap();
    let f = QuadraticObjective::new(Mat::identity(2), vec![-1.0, -1.0], 1.0, 1.0).unwrap();
    ConstrainedProgram::new(x_geom, f, ProxFn::Zero, vec![Constraint::affine(vec![1.0, 1.0], -rhs)], vec![0.0, 0.0])
        .unwrap()
}

#[test]
fn single_affine_lagrangian() {
    let cp = one_affine(1.0);
    let p = build_lagrangian(&cp).unwrap();
    let x = [0.3, 1.1];
    let g = p.grad_lambda_phi(&x, &[0.4], Indices::All, &OracleCounter::new()).unwrap();
    assert_eq!(g, vec![cp.constraints[0].value(&x)]);
    assert_eq!(p.h, ProxFn::Zero);
    assert_eq!(p.dual_geom, Geometry::orthant(1));
    let c = compute_constants(&cp).unwrap();
    assert_eq!(c.m_i, vec![2f64.sqrt()]);
    assert_eq!(c.l_d, 2.0 * c.m_total * c.m_total / cp.f.mu);
}

#[test]
fn quadratic_constraint_constant() {
    let x_geom = Geometry::box_uniform(2, -1.0, 1.0).unwrap();
    let f = QuadraticObjective::new(Mat::identity(2), vec![0.0; 2], 1.0, 1.0).unwrap();
    let cons = vec![Constraint::quadratic(Mat::identity(2), vec![0.0; 2], -1.0)];
    let cp = ConstrainedProgram::new(x_geom, f, ProxFn::Zero, cons, vec![0.0, 0.0]).unwrap();
    let c = compute_constants(&cp).unwrap();
    assert!((c.m_i[0] - 2.0 * 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(c.kappa_cons, 2.0);
}

#[test]
fn slater_and_boundedness_are_checked() {
    let x_geom = Geometry::box_uniform(1, -1.0, 1.0).unwrap();
    let f = QuadraticObjective::new(Mat::identity(1), vec![0.0], 1.0, 1.0).unwrap();
    let bad = ConstrainedProgram::new(x_geom, f.clone(), ProxFn::Zero, vec![Constraint::affine(vec![1.0], 0.0)], vec![0.0]);
    assert!(matches!(bad, Err(ConstrainedError::SlaterViolation { index: 0, .. })));
    let orthant = ConstrainedProgram::new(
        Geometry::orthant(1),
        f,
        ProxFn::Zero,
        vec![Constraint::affine(vec![1.0], -1.0)],
        vec![0.0],
    );
    assert!(matches!(orthant, Err(ConstrainedError::UnboundedPrimalSet)));
}

#[test]
fn bound_formulas() {
    let b = theorem53_bounds(10, 0.1, 2.0, None, -5.0);
    assert_eq!(b.w_f, 0.05);
    assert!(!b.lambda_star_aware && b.w_g.len() == 1);
    let ls = [0.5, 0.0];
    let mut prev = theorem53_bounds(1, 1e-3, 2.0, Some(&ls), 3.0);
    for k in [2u64, 5, 20, 100, 1000, 100_000] {
        let b = theorem53_bounds(k, 1e-3, 2.0, Some(&ls), 3.0);
        assert!(b.w_f <= prev.w_f && b.w_g.iter().zip(&prev.w_g).all(|(a, c)| a <= c));
        prev = b;
    }
    assert!((prev.w_f - 5e-4).abs() < 1e-9);
    assert!(prev.w_g.iter().all(|w| *w < 1e-3));
}

#[test]
fn analytic_kkt_instance_meets_bounds() {
    let cp = one_affine(1.0);
    let reference = ConsReference { f_star: Some(-0.75), lambda_star: Some(vec![0.5]) };
    let eps = 1e-3;
    let (x, rep, trace) = solve_constrained(&cp, eps, ConsMode::Det, None, &reference, &OracleCounter::new()).unwrap();
    assert!(rep.passes(), "{rep:?}");
    assert_eq!(rep.k, k_cons(rep.constants.l_d, eps, rep.initial_sgap_upper));
    assert!((x[0] - 0.5).abs() < 0.05 && (x[1] - 0.5).abs() < 0.05);
    // Complementary slackness at K_cons.
    let lam = trace.final_lambda();
    let linf = lam.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let slack = (lam[0] * cp.constraints[0].value(&x)).abs();
    assert!(slack <= 10.0 * rep.violation_bounds[0] * linf.max(1.0), "{slack}");
    assert!(trace.records.iter().all(|r| r.eta_k == 0.0));
}

#[test]
fn inactive_constraint_multiplier_vanishes() {
    let cp = one_affine(10.0);
    let (x, rep, trace) =
        solve_constrained(&cp, 1e-3, ConsMode::Det, None, &ConsReference::default(), &OracleCounter::new()).unwrap();
    assert_eq!(rep.violations, vec![0.0]);
    assert!(trace.final_lambda()[0] <= 1e-12);
    assert!((x[0] - 1.0).abs() < 0.05);
    let audit = multiplier_growth_audit(&trace, &cp, &rep.constants, 1e-3);
    assert!(audit.c1.abs() < 1e-9 && !audit.superlinear);
    assert!(audit.l_prime_mismatch < 1e-12);
}

#[test]
fn qcqp_violations_within_bounds_across_iteration_counts() {
    let inst = zoo::make_qcqp(3, 12, 4, 0.5).unwrap();
    let cp = inst.constrained.as_ref().unwrap();
    let reference =
        ConsReference { f_star: Some(inst.reference.f_star), lambda_star: Some(inst.reference.lambda_star.clone()) };
    for k in [10u64, 50, 200] {
        let (_, rep, _) = solve_constrained(cp, 1e-3, ConsMode::Det, Some(k), &reference, &OracleCounter::new()).unwrap();
        assert!(rep.lambda_star_aware);
        assert!(rep.violations.iter().zip(&rep.violation_bounds).all(|(v, w)| v <= w), "K={k} {rep:?}");
        assert!(rep.objective_gap.unwrap() <= rep.objective_gap_bound);
    }
}

#[test]
fn active_constraint_multiplier_growth_is_affine() {
    let inst = zoo::make_qcqp(3, 6, 1, 1.0).unwrap();
    let cp = inst.constrained.as_ref().unwrap();
    let eps = 1e-3;
    let (_, rep, trace) =
        solve_constrained(cp, eps, ConsMode::Det, Some(500), &ConsReference::default(), &OracleCounter::new()).unwrap();
    let audit = multiplier_growth_audit(&trace, cp, &rep.constants, eps);
    assert!(audit.max_ratio_to_fit <= 10.0, "{audit:?}");
    assert!(audit.l_prime_mismatch < 1e-12);
    assert!(trace.records.iter().skip(1).all(|r| r.primal_l_prime.is_some()));
}

#[test]
fn randomized_mean_objective_gap_within_bound() {
    let inst = zoo::make_qcqp(3, 200, 6, 0.5).unwrap();
    let cp = inst.constrained.as_ref().unwrap();
    let reference = ConsReference { f_star: Some(inst.reference.f_star), lambda_star: None };
    let eps = 1e-2;
    // W_f holds at every K; K′_det is the smallest K whose W_f reaches ε.
    let (_, probe, _) = solve_constrained(cp, eps, ConsMode::Det, Some(0), &reference, &OracleCounter::new()).unwrap();
    let k = ipds_core::ipds::k_prime_det(eps, probe.initial_sgap_upper);
    let reps: Vec<_> = (0..100u64)
        .into_par_iter()
        .map(|seed| {
            solve_constrained(cp, eps, ConsMode::Rand { seed }, Some(k), &reference, &OracleCounter::new()).unwrap().1
        })
        .collect();
    let gaps: Vec<f64> = reps.iter().map(|r| r.objective_gap.unwrap()).collect();
    let n = gaps.len() as f64;
    let mean = gaps.iter().sum::<f64>() / n;
    let se = (gaps.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0) / n).sqrt();
    assert!(mean <= reps[0].objective_gap_bound + 3.0 * se, "mean {mean} bound {}", reps[0].objective_gap_bound);
}

#[test]
fn program_json_round_trip() {
    let inst = zoo::make_qcqp(4, 5, 3, 0.4).unwrap();
    let cp = inst.constrained.unwrap();
    let back: ConstrainedProgram = serde_json::from_str(&serde_json::to_string(&cp).unwrap()).unwrap();
    assert_eq!(back, cp);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Perturb the reference saddle, measure its smoothed gap, and check both
    /// conclusions of the gap-to-feasibility lemma.
    #[test]
    fn small_smoothed_gap_implies_near_optimal_and_near_feasible(seed in 0u64..200, scale in 1e-4f64..1e-1) {
        let inst = zoo::make_qcqp(3, 8, seed, 0.5).unwrap();
        let cp = inst.constrained.as_ref().unwrap();
        let p = build_lagrangian(cp).unwrap();
        let r = &inst.reference;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ev = GapEvaluator::certified();
        for rho in [1e-3, 1e-1, 1.0] {
            let x: Vec<f64> = r.x_star.iter().map(|v| (v + scale * (rng.gen::<f64>() - 0.5)).clamp(-1.0, 1.0)).collect();
            let l: Vec<f64> = r.lambda_star.iter().map(|v| (v + scale * rng.gen::<f64>()).max(0.0)).collect();
            let gap_eps = ev.smoothed_gap(&p, &x, &l, rho, &OracleCounter::new()).unwrap().hi.max(0.0);
            prop_assert!(cp.objective(&x) - r.f_star <= gap_eps + 1e-9);
            let bound = lemma51_violation_bound(&r.lambda_star, rho, gap_eps);
            for (v, w) in cp.violations(&x).iter().zip(&bound) {
                prop_assert!(*v <= w + 1e-9, "viol {v} bound {w}");
            }
        }
    }

    #[test]
    fn closed_form_step_matches_generic_projection(g in prop::collection::vec(-1e3f64..1e3, 1..10), rho in 1e-8f64..1e3) {
        let closed = ipds_core::gap::positive_part_step(&g, rho);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let generic = Geometry::orthant(g.len()).prox_step(&ProxFn::Zero, &neg, rho).unwrap();
        prop_assert!(closed.iter().zip(&generic).all(|(a, b)| a.to_bits() == b.to_bits()));
    }
}
