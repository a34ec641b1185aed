use ipds_core::constrained::{build_lagrangian, Constraint, ConstrainedProgram};
use ipds_core::geometry::{FeasibleSet, Geometry, ProxFn};
use ipds_core::ipds::{self, RunOptions, Schedule};
use ipds_core::linalg::Mat;
use ipds_core::problem::{
    Component, FiniteSumCoupling, Indices, OracleCounter, ProblemError, QuadraticObjective, SaddleProblem,
};
use ipds_core::zoo;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn affine_program() -> ConstrainedProgram {
    let x_geom = Geometry::box_uniform(2, -1.0, 1.0).unwrap();
    let f = QuadraticObjective::new(Mat::identity(2), vec![0.0; 2], 1.0, 1.0).unwrap();
    let cons = vec![
        Constraint::affine(vec![1.0, 2.0], -0.5),
        Constraint::affine(vec![-1.0, 0.5], -0.25),
        Constraint::quadratic(Mat::diag(&[0.5, 0.2]), vec![0.1, 0.0], -1.0),
    ];
    ConstrainedProgram::new(x_geom, f, ProxFn::Zero, cons, vec![0.0, 0.0]).unwrap()
}

#[test]
fn lagrangian_affine_gradients() {
    let cp = affine_program();
    let p = build_lagrangian(&cp).unwrap();
    let ctr = OracleCounter::new();
    let x = [0.3, -0.2];
    let lam = [2.0, 0.0, 0.0];
    // Φ₀ = nλ₀g₀, so ∇ₓΦ₀ = nλ₀a₀.
    let gx = p.grad_x_phi(&x, &lam, Indices::Subset(&[0]), &ctr).unwrap();
    assert_eq!(gx, vec![3.0 * 2.0 * 1.0, 3.0 * 2.0 * 2.0]);
    let gl = p.grad_lambda_phi(&x, &lam, Indices::Subset(&[0]), &ctr).unwrap();
    let g0 = cp.constraints[0].value(&x);
    assert_eq!(gl, vec![3.0 * g0, 0.0, 0.0]);
    assert_eq!((ctr.primal(), ctr.dual()), (1, 1));
    let zero = p.grad_x_phi(&x, &[0.0; 3], Indices::All, &ctr).unwrap();
    assert!(zero.iter().all(|v| *v == 0.0));
    assert_eq!(ctr.primal(), 4);
}

#[test]
fn bilinear_dual_gradient_is_ax() {
    let px = Geometry::box_uniform(2, -1.0, 1.0).unwrap();
    let pl = Geometry::euclidean(2, FeasibleSet::Ball { center: vec![0.0; 2], radius: 1.0 }).unwrap();
    let a = Mat::from_fn(2, 2, |i, j| (1 + i + 2 * j) as f64);
    let f = QuadraticObjective::new(Mat::identity(2), vec![0.0; 2], 1.0, 1.0).unwrap();
    let coupling = FiniteSumCoupling::bilinear(vec![Component::Bilinear { a: a.clone(), b_diag: None }], &pl).unwrap();
    let p = SaddleProblem::new(px, pl, f, ProxFn::Zero, ProxFn::Zero, coupling).unwrap();
    let x = [0.5, -0.25];
    let g = p.grad_lambda_phi(&x, &[0.1, 0.2], Indices::All, &OracleCounter::new()).unwrap();
    assert_eq!(g, a.matvec(&x));
}

#[test]
fn batched_gradients_equal_average_of_single_calls() {
    let inst = zoo::make_bilinear_qp_with(4, 3, 3, 11, &Default::default()).unwrap();
    let p = &inst.problem;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let x = p.primal_geom.sample(&mut rng);
        let l = p.dual_geom.sample(&mut rng);
        let ctr = OracleCounter::new();
        let all_x = p.grad_x_phi(&x, &l, Indices::All, &ctr).unwrap();
        let all_l = p.grad_lambda_phi(&x, &l, Indices::All, &ctr).unwrap();
        let mut sx = vec![0.0; x.len()];
        let mut sl = vec![0.0; l.len()];
        for i in 0..3 {
            let gx = p.grad_x_phi(&x, &l, Indices::Subset(&[i]), &ctr).unwrap();
            let gl = p.grad_lambda_phi(&x, &l, Indices::Subset(&[i]), &ctr).unwrap();
            sx.iter_mut().zip(&gx).for_each(|(s, v)| *s += v / 3.0);
            sl.iter_mut().zip(&gl).for_each(|(s, v)| *s += v / 3.0);
        }
        assert!(all_x.iter().zip(&sx).all(|(a, b)| (a - b).abs() <= 1e-14));
        assert!(all_l.iter().zip(&sl).all(|(a, b)| (a - b).abs() <= 1e-14));
        assert_eq!((ctr.primal(), ctr.dual()), (6, 6));
    }
}

#[test]
fn saddle_value_at_constrained_optimum_is_primal_optimum() {
    let inst = zoo::make_qcqp(3, 10, 2, 0.5).unwrap();
    let r = &inst.reference;
    let v = inst.problem.saddle_value(&r.x_star, &r.lambda_star).unwrap();
    assert!((v - r.f_star).abs() <= 1e-9 * (1.0 + r.f_star.abs()), "{v} vs {}", r.f_star);
}

#[test]
fn zero_terms_give_zero_value() {
    let px = Geometry::box_uniform(1, -1.0, 1.0).unwrap();
    let pl = Geometry::euclidean(1, FeasibleSet::Ball { center: vec![0.0], radius: 1.0 }).unwrap();
    let f = QuadraticObjective::new(Mat::zeros(1, 1), vec![0.0], 0.0, 0.0);
    // A zero f violates μ > 0; the value identity is checked through a zero coupling instead.
    assert!(f.is_err());
    let f = QuadraticObjective::new(Mat::identity(1), vec![0.0], 1.0, 1.0).unwrap();
    let coupling =
        FiniteSumCoupling::bilinear(vec![Component::Bilinear { a: Mat::zeros(1, 1), b_diag: None }], &pl).unwrap();
    let p = SaddleProblem::new(px, pl, f, ProxFn::Zero, ProxFn::Zero, coupling).unwrap();
    assert_eq!(p.saddle_value(&[0.0], &[0.7]).unwrap(), 0.0);
}

#[test]
fn out_of_domain_and_index_errors() {
    let p = build_lagrangian(&affine_program()).unwrap();
    let ctr = OracleCounter::new();
    assert!(p.grad_f(&[2.0, 0.0], &ctr).unwrap_err().out_of_domain());
    assert!(p.grad_lambda_phi(&[0.0, 0.0], &[-1.0, 0.0, 0.0], Indices::All, &ctr).unwrap_err().out_of_domain());
    assert_eq!(p.grad_x_phi(&[0.0, 0.0], &[0.0; 3], Indices::Subset(&[]), &ctr), Err(ProblemError::EmptyIndices));
    assert_eq!(ctr.total(), 0);
}

#[test]
fn json_problem_errors_carry_position() {
    let err = SaddleProblem::from_json("{\n  \"primal\": 3,\n}").unwrap_err();
    assert!(matches!(err, ProblemError::Parse { line: 2 | 3, .. }), "{err:?}");
    let inst = zoo::make_bilinear_qp(3, 2, 4).unwrap();
    let s = serde_json::to_string(&inst.problem).unwrap();
    let back = SaddleProblem::from_json(&s).unwrap();
    assert_eq!(back, inst.problem);
}

#[test]
fn run_counters_match_certificate_shadow_tally() {
    let inst = zoo::make_bilinear_qp_with(4, 3, 5, 2, &Default::default()).unwrap();
    let p = &inst.problem;
    let (x0, l0) = (p.primal_geom.anchor(), p.dual_geom.anchor());
    let s = Schedule::new(p.l_d(), 1e-2);
    let opts = RunOptions { k: 12, ..RunOptions::default() };
    for rand in [false, true] {
        let ctr = OracleCounter::new();
        let tr = if rand {
            ipds::run_randomized(p, &s, (&x0, &l0), &opts, 9, None, &ctr).unwrap()
        } else {
            ipds::run_deterministic(p, &s, (&x0, &l0), &opts, &ctr).unwrap()
        };
        let last = tr.last();
        assert_eq!(last.primal_calls + last.dual_calls, ctr.total());
        let shadow: u64 =
            tr.records.iter().flat_map(|r| r.certificates.iter().flatten()).map(|c| c.oracle_calls_charged).sum();
        assert_eq!(shadow, ctr.total(), "rand={rand}");
        assert!(tr.records.windows(2).all(|w| w[0].primal_calls <= w[1].primal_calls));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn strong_convexity_sandwich_and_smoothness(seed in 0u64..1000) {
        let inst = zoo::make_bilinear_qp_with(4, 3, 4, seed, &Default::default()).unwrap();
        let p = &inst.problem;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let ctr = OracleCounter::new();
        for _ in 0..1000 {
            let x = p.primal_geom.sample(&mut rng);
            let y = p.primal_geom.sample(&mut rng);
            let l = p.dual_geom.sample(&mut rng);
            let d: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
            let nd2: f64 = d.iter().map(|v| v * v).sum();
            let gy = p.grad_f(&y, &ctr).unwrap();
            let br = p.f.value(&x) - p.f.value(&y) - gy.iter().zip(&d).map(|(g, v)| g * v).sum::<f64>();
            let tol = 1e-8 * (1.0 + br.abs());
            prop_assert!(br >= p.f.mu / 2.0 * nd2 - tol);
            prop_assert!(br <= p.f.l / 2.0 * nd2 + tol);
            let a = p.grad_lambda_phi(&x, &l, Indices::All, &ctr).unwrap();
            let b = p.grad_lambda_phi(&y, &l, Indices::All, &ctr).unwrap();
            let diff: f64 = a.iter().zip(&b).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            prop_assert!(diff <= p.coupling.l_lx() * nd2.sqrt() * (1.0 + 1e-12) + 1e-12);
        }
    }

    #[test]
    fn counter_equals_sum_of_index_set_sizes(seed in any::<u64>()) {
        let inst = zoo::make_bilinear_qp_with(3, 2, 7, 1, &Default::default()).unwrap();
        let p = &inst.problem;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ctr = OracleCounter::new();
        let (mut shadow_p, mut shadow_d) = (0u64, 0u64);
        let x = p.primal_geom.anchor();
        let l = p.dual_geom.anchor();
        for _ in 0..50 {
            let m = rng.gen_range(1..10);
            let idx: Vec<usize> = (0..m).map(|_| rng.gen_range(0..7)).collect();
            match rng.gen_range(0..4) {
                0 => { p.grad_x_phi(&x, &l, Indices::Subset(&idx), &ctr).unwrap(); shadow_p += m as u64; }
                1 => { p.grad_lambda_phi(&x, &l, Indices::Subset(&idx), &ctr).unwrap(); shadow_d += m as u64; }
                2 => { p.grad_x_phi(&x, &l, Indices::All, &ctr).unwrap(); shadow_p += 7; }
                _ => { p.grad_f(&x, &ctr).unwrap(); shadow_p += 1; }
            }
        }
        prop_assert_eq!((ctr.primal(), ctr.dual()), (shadow_p, shadow_d));
    }
}
