use ipds_core::ipds::{
    self, duality_gap_bound, k_det, k_prime_det, schedule_at, smoothed_gap_bound, GapTarget, RunOptions, RunTrace,
    Schedule,
};
use ipds_core::problem::OracleCounter;
use ipds_core::zoo::{self, ZooInstance};
use proptest::prelude::*;
use std::collections::HashSet;

fn anchors(inst: &ZooInstance) -> (Vec<f64>, Vec<f64>) {
    (inst.problem.primal_geom.anchor(), inst.problem.dual_geom.anchor())
}

fn det(inst: &ZooInstance, s: &Schedule, start: (&[f64], &[f64]), k: u64) -> RunTrace {
    let opts = RunOptions { k, evaluator: Some(inst.evaluator()), analytic: Some(inst.analytic()), ..RunOptions::default() };
    ipds::run_deterministic(&inst.problem, s, start, &opts, &OracleCounter::new()).unwrap()
}

#[test]
fn schedule_examples() {
    let s = Schedule::new(1.0, 0.12);
    let p = schedule_at(&s, 0);
    assert_eq!(s.rho0, 8.0);
    assert!((p.tau - 1.0 / 3.0).abs() < 1e-16);
    assert!((p.gamma - 0.01).abs() < 1e-16 && (p.eta - 0.01).abs() < 1e-16);
    assert_eq!(p.rho, 8.0);
    let r1 = schedule_at(&s, 1).rho;
    assert!((r1 - 8.0 / 3.0).abs() < 1e-15);
    assert!((r1 - p.tau * p.rho).abs() < 1e-15);
    assert!(r1 >= 4.0 * (1.0 - p.tau).powi(2) * 1.0);
    let zero = Schedule { eta_override_zero: true, ..s.clone() };
    assert_eq!(schedule_at(&zero, 3).eta, 0.0);
    assert!(schedule_at(&zero, 3).gamma > 0.0);
}

#[test]
fn iteration_count_examples() {
    assert_eq!(k_det(1.0, 1.0, 1.0, 0.0), 9);
    assert_eq!(k_prime_det(0.1, -3.0), 1);
    assert_eq!(k_prime_det(1.0, 4.0), 5);
    let inst = zoo::make_bilinear_qp_with(3, 2, 4, 0, &Default::default()).unwrap();
    let mut p = inst.problem.clone();
    p.dual_geom = ipds_core::geometry::Geometry::orthant(2);
    assert!(matches!(
        ipds::k_for_target(&p, 0.1, GapTarget::Duality, 0.0),
        Err(ipds::IpdsError::UnboundedDualSet)
    ));
    assert_eq!(ipds::k_for_target(&p, 0.1, GapTarget::Smoothed, 0.4).unwrap(), 5);
}

#[test]
fn duality_gap_bound_after_sixty_iterations() {
    for seed in 0..3 {
        let inst = zoo::make_bilinear_qp(4, 3, seed).unwrap();
        let p = &inst.problem;
        let (x0, l0) = anchors(&inst);
        let d0 = inst.evaluator().duality_gap(p, &x0, &l0, &OracleCounter::new()).unwrap().hi;
        let eps = 1e-2;
        let tr = det(&inst, &Schedule::new(p.l_d(), eps), (&x0, &l0), 60);
        assert_eq!(tr.records.len(), 61);
        let b = p.dual_geom.dgf_sup_abs().as_f64();
        assert!(tr.last().gap.unwrap().hi <= duality_gap_bound(60, eps, p.l_d(), b, d0));
    }
}

#[test]
fn exact_start_stays_accurate() {
    // A nonnegative DGF makes Δ_{ρ₀}(x*,λ*) ≤ 0.
    let inst = zoo::make_bilinear_qp(4, 3, 2).unwrap();
    let p = &inst.problem;
    let eps = 1e-3;
    let s = Schedule { exact_inner: true, ..Schedule::new(p.l_d(), eps) };
    let r = &inst.reference;
    let tr = det(&inst, &s, (&r.x_star, &r.lambda_star), 40);
    for rec in &tr.records {
        assert_eq!((rec.gamma_k, rec.eta_k), (0.0, 0.0));
        assert!(rec.sgap.unwrap().hi <= eps / 2.0 + 1e-12, "k={} {:?}", rec.k, rec.sgap);
    }
}

#[test]
fn trace_bookkeeping() {
    let inst = zoo::make_bilinear_qp_with(4, 3, 6, 1, &Default::default()).unwrap();
    let p = &inst.problem;
    let (x0, l0) = anchors(&inst);
    let s = Schedule::new(p.l_d(), 1e-2);
    let tr = det(&inst, &s, (&x0, &l0), 25);
    for (k, rec) in tr.records.iter().enumerate() {
        let want = 16.0 * p.l_d() / ((k as f64 + 1.0) * (k as f64 + 2.0));
        assert!((rec.rho_k - want).abs() <= 1e-14 * want);
        assert_eq!(rec.k, k as u64);
    }
    for w in tr.records.windows(2) {
        assert!(w[1].rho_k < w[0].rho_k);
        assert!(w[1].primal_calls >= w[0].primal_calls && w[1].dual_calls >= w[0].dual_calls);
    }
    let csv = tr.to_csv();
    assert!(csv.lines().next().unwrap().starts_with('#'));
    let body: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(body.len(), 1 + tr.records.len());
    for col in ["gap_lo", "gap_hi", "sgap_lo", "sgap_hi", "primal_calls", "dual_calls"] {
        assert!(body[0].split(',').any(|c| c == col), "missing column {col}");
    }
    let json: serde_json::Value = serde_json::from_str(&tr.to_json()).unwrap();
    assert_eq!(json["records"].as_array().unwrap().len(), tr.records.len());
}

#[test]
fn randomized_trace_is_reproducible() {
    let inst = zoo::make_bilinear_qp_with(4, 3, 10, 3, &Default::default()).unwrap();
    let p = &inst.problem;
    let (x0, l0) = anchors(&inst);
    let s = Schedule::new(p.l_d(), 1e-2);
    let opts = RunOptions { k: 10, evaluator: Some(inst.evaluator()), ..RunOptions::default() };
    let hash = |seed| ipds::run_randomized(p, &s, (&x0, &l0), &opts, seed, None, &OracleCounter::new()).unwrap().hash();
    assert_eq!(hash(5), hash(5));
    assert_eq!(hash(6), hash(6));
}

#[test]
fn sub_solve_streams_are_distinct() {
    let mut seen = HashSet::new();
    for seed in 0..4 {
        for k in 0..50 {
            for stage in 0..3 {
                assert!(seen.insert(ipds::stream_seed(seed, k, stage)));
            }
        }
    }
}

#[test]
fn infeasible_start_is_rejected() {
    let inst = zoo::make_bilinear_qp(3, 2, 0).unwrap();
    let p = &inst.problem;
    let s = Schedule::new(p.l_d(), 1e-2);
    let bad = vec![100.0; 3];
    let l0 = p.dual_geom.anchor();
    let r = ipds::run_deterministic(p, &s, (&bad, &l0), &RunOptions { k: 3, ..RunOptions::default() }, &OracleCounter::new());
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn schedule_is_admissible(l_d in 1e-3f64..1e3, eps in 1e-6f64..1.0, k in 0u64..100_000) {
        let s = Schedule::new(l_d, eps);
        let a = schedule_at(&s, k);
        let b = schedule_at(&s, k + 1);
        prop_assert!(b.rho >= 4.0 * (1.0 - a.tau).powi(2) * l_d * (1.0 - 1e-12));
        prop_assert!((b.rho - a.tau * a.rho).abs() <= 1e-13 * a.rho);
    }

    #[test]
    fn square_root_law_for_iteration_counts(l_d in 1e-3f64..1e3, b in 0.0f64..10.0, d0 in 0.0f64..100.0, eps in 1e-8f64..1.0) {
        prop_assert!(k_det(l_d, b, eps / 4.0, d0) <= 2 * k_det(l_d, b, eps, d0) + 1);
        prop_assert!(k_prime_det(eps / 4.0, d0) <= 2 * k_prime_det(eps, d0) + 1);
        prop_assert!(k_det(l_d, b, 2.0 * eps, d0) <= k_det(l_d, b, eps, d0));
    }

    #[test]
    fn smoothed_gap_follows_the_rate_at_every_iteration(which in 0u8..3, seed in 0u64..200) {
        let inst = match which {
            0 => zoo::make_bilinear_qp(4, 3, seed).unwrap(),
            1 => zoo::make_bilinear_qp_with(4, 3, 5, seed, &Default::default()).unwrap(),
            _ => zoo::make_nonbilinear_entropy(4, 3, seed).unwrap(),
        };
        let p = &inst.problem;
        let eps = 1e-3;
        let s = Schedule::new(p.l_d(), eps);
        let (x0, l0) = anchors(&inst);
        let s0 = inst.evaluator().smoothed_gap(p, &x0, &l0, s.rho0, &OracleCounter::new()).unwrap().hi;
        let tr = det(&inst, &s, (&x0, &l0), 40);
        for rec in &tr.records {
            let g = rec.sgap.unwrap();
            prop_assert!(g.hi <= smoothed_gap_bound(rec.k, eps, s0) + 1e-9 + g.width());
        }
        for w in tr.records.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let rhs = a.tau_k * a.sgap.unwrap().hi + 2.0 * a.gamma_k + 2.0 * a.eta_k;
            prop_assert!(b.sgap.unwrap().hi <= rhs + 1e-9 + b.sgap.unwrap().width() + a.sgap.unwrap().width());
        }
    }
}
