//! Acceptance criteria 1–9. Runs as a plain binary so every criterion prints
//! exactly one PASS/FAIL line; exits nonzero if any criterion fails.

use ipds_core::constrained::{self, ConsMode, ConsReference};
use ipds_core::gap::{self, AnalyticInner, SubSolver};
use ipds_core::geometry::{Geometry, ProxFn};
use ipds_core::ipds::{self, GapTarget, HpConfig, RunOptions, RunTrace, Schedule};
use ipds_core::problem::OracleCounter;
use ipds_core::subsolver::SolverOptions;
use ipds_core::zoo::{self, QpParams, ZooInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use std::time::{Duration, Instant};

struct Outcome {
    pass: bool,
    detail: String,
}

fn report(n: u32, name: &str, limit: Duration, f: impl FnOnce() -> Outcome) -> bool {
    let t = Instant::now();
    let o = f();
    let el = t.elapsed();
    let in_time = el <= limit;
    let pass = o.pass && in_time;
    println!(
        "criterion {n} [{}] {name}: {} ({:.1}s / limit {}s)",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        el.as_secs_f64(),
        limit.as_secs()
    );
    pass
}

fn anchors(p: &ipds_core::problem::SaddleProblem) -> (Vec<f64>, Vec<f64>) {
    (p.primal_geom.anchor(), p.dual_geom.anchor())
}

fn finite_sum(n: usize, seed: u64) -> ZooInstance {
    zoo::make_bilinear_qp_with(4, 3, n, seed, &QpParams::default()).unwrap()
}

fn det_run(inst: &ZooInstance, eps: f64, k: u64) -> RunTrace {
    let p = &inst.problem;
    let (x0, l0) = anchors(p);
    let opts = RunOptions { k, evaluator: Some(inst.evaluator()), ..RunOptions::default() };
    ipds::run_deterministic(p, &Schedule::new(p.l_d(), eps), (&x0, &l0), &opts, &OracleCounter::new()).unwrap()
}

fn initial_gap(inst: &ZooInstance) -> f64 {
    let p = &inst.problem;
    let (x0, l0) = anchors(p);
    inst.evaluator().duality_gap(p, &x0, &l0, &OracleCounter::new()).unwrap().hi
}

fn initial_sgap(inst: &ZooInstance, rho0: f64) -> f64 {
    let p = &inst.problem;
    let (x0, l0) = anchors(p);
    inst.evaluator().smoothed_gap(p, &x0, &l0, rho0, &OracleCounter::new()).unwrap().hi
}

fn mean_se(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

/// Per-iteration smoothed-gap recursion on three families × five seeds.
fn criterion1() -> Outcome {
    let mut worst = f64::NEG_INFINITY;
    let mut checked = 0usize;
    for seed in 0..5 {
        let insts = [
            zoo::make_bilinear_qp(4, 3, seed).unwrap(),
            finite_sum(10, seed),
            zoo::make_nonbilinear_entropy(4, 3, seed).unwrap(),
        ];
        for inst in &insts {
            let tr = det_run(inst, 1e-3, 60);
            for w in tr.records.windows(2) {
                let (a, b) = (&w[0], &w[1]);
                let (sa, sb) = (a.sgap.unwrap(), b.sgap.unwrap());
                let rhs = a.tau_k * sa.hi + 2.0 * a.gamma_k + 2.0 * a.eta_k;
                let tol = 1e-9 + sb.width() + a.tau_k * sa.width();
                worst = worst.max(sb.hi - rhs - tol);
                checked += 1;
            }
        }
    }
    Outcome { pass: worst <= 0.0, detail: format!("{checked} steps, worst excess {worst:.3e}") }
}

/// Final duality gap against `B_Δ(K, ε)`, and `Δ ≤ ε` at `K_det`.
fn criterion2() -> Outcome {
    let mut insts = Vec::new();
    for seed in 0..3 {
        insts.push(zoo::make_bilinear_qp(4, 3, seed).unwrap());
        insts.push(zoo::make_nonbilinear_entropy(4, 3, seed).unwrap());
    }
    let mut worst_ratio = 0.0f64;
    let mut worst_kdet = 0.0f64;
    for inst in &insts {
        let p = &inst.problem;
        let d0 = initial_gap(inst);
        let b = p.dual_geom.dgf_sup_abs().as_f64();
        for eps in [1e-1, 1e-2, 1e-3] {
            for k in [10u64, 30, 100] {
                let g = det_run(inst, eps, k).last().gap.unwrap().hi;
                worst_ratio = worst_ratio.max(g / ipds::duality_gap_bound(k, eps, p.l_d(), b, d0));
            }
            let kd = ipds::k_det(p.l_d(), b, eps, d0);
            let g = det_run(inst, eps, kd).last().gap.unwrap().hi;
            worst_kdet = worst_kdet.max(g / eps);
        }
    }
    Outcome {
        pass: worst_ratio <= 1.0 && worst_kdet <= 1.0,
        detail: format!("max gap/B_Δ {worst_ratio:.3}, max gap/eps at K_det {worst_kdet:.3}"),
    }
}

/// Lipschitz constants of `x*(·)` and `∇ψ̂ᴰ` plus the two-sided inexact
/// descent inequality.
fn criterion3() -> Outcome {
    let mut ok = true;
    let mut xr = 0.0f64;
    let mut gr = 0.0f64;
    let mut excess = f64::NEG_INFINITY;
    for seed in 0..3 {
        for inst in [
            zoo::make_bilinear_qp(4, 3, seed).unwrap(),
            finite_sum(10, seed),
            zoo::make_nonbilinear_entropy(4, 3, seed).unwrap(),
        ] {
            let a = zoo::lipschitz_audit(&inst, 100 + seed, 1000);
            ok &= a.passes(1e-9) && a.triples >= 900;
            xr = xr.max(a.x_star_ratio / a.x_star_bound);
            gr = gr.max(a.grad_ratio / a.grad_bound);
            excess = excess.max(a.descent_excess).max(-a.descent_min).max(a.inexact_grad_excess);
        }
    }
    Outcome {
        pass: ok,
        detail: format!("max ratio/bound: x* {xr:.3}, grad {gr:.3}; descent worst excess {excess:.3e}"),
    }
}

/// Monte-Carlo mean of the final smoothed gap against `B′_Δ` (n = 50).
fn criterion4() -> Outcome {
    let inst = finite_sum(50, 0);
    let p = &inst.problem;
    let eps = 1e-2;
    let s = Schedule::new(p.l_d(), eps);
    let d0 = initial_sgap(&inst, s.rho0);
    let k = ipds::k_prime_det(eps, d0);
    let (x0, l0) = anchors(p);
    let vals: Vec<f64> = (0..200u64)
        .into_par_iter()
        .map(|seed| {
            let opts = RunOptions { k, evaluator: Some(inst.evaluator()), ..RunOptions::default() };
            let tr = ipds::run_randomized(p, &s, (&x0, &l0), &opts, seed, None, &OracleCounter::new()).unwrap();
            tr.last().sgap.unwrap().hi
        })
        .collect();
    let (m, se) = mean_se(&vals);
    let bound = ipds::smoothed_gap_bound(k, eps, d0);
    Outcome { pass: m <= bound + 3.0 * se, detail: format!("K={k} mean {m:.4e} se {se:.2e} bound {bound:.4e}") }
}

/// High-probability mode: success fraction of `Δ ≤ ε` at `K_det`.
fn criterion5() -> Outcome {
    let inst = finite_sum(20, 0);
    let p = &inst.problem;
    let eps = 1e-2;
    let delta = 0.2;
    let s = Schedule::new(p.l_d(), eps);
    let k = ipds::k_for_target(p, eps, GapTarget::Duality, initial_gap(&inst)).unwrap();
    let (x0, l0) = anchors(p);
    let hp = HpConfig { delta, k_fixed: k };
    let ok = (0..200u64)
        .into_par_iter()
        .filter(|&seed| {
            let opts = RunOptions { k, evaluator: Some(inst.evaluator()), ..RunOptions::default() };
            let tr = ipds::run_randomized(p, &s, (&x0, &l0), &opts, seed, Some(hp), &OracleCounter::new()).unwrap();
            tr.last().gap.unwrap().hi <= eps
        })
        .count();
    let frac = ok as f64 / 200.0;
    Outcome { pass: frac >= 0.8 - 0.06, detail: format!("K={k} success fraction {frac:.3} (need >= 0.74)") }
}

/// Constrained programs: objective gap and violations against the λ*-aware
/// bounds at `K_cons`, plus the bitwise closed-form dual step.
fn criterion6() -> Outcome {
    let eps = 1e-3;
    let cases: Vec<(usize, usize, u64)> = [1usize, 20, 200]
        .iter()
        .flat_map(|&n| [(3usize, n, 0u64), (5, n, 1)])
        .collect();
    let results: Vec<(bool, f64, f64, u64)> = cases
        .par_iter()
        .map(|&(dim, n, seed)| {
            let inst = zoo::make_qcqp(dim, n, seed, 0.5).unwrap();
            let cp = inst.constrained.as_ref().unwrap();
            let reference = ConsReference {
                f_star: Some(inst.reference.f_star),
                lambda_star: Some(inst.reference.lambda_star.clone()),
            };
            let (_, rep, _) =
                constrained::solve_constrained(cp, eps, ConsMode::Det, None, &reference, &OracleCounter::new()).unwrap();
            let obj = rep.objective_gap.unwrap() / rep.objective_gap_bound;
            let viol = rep
                .violations
                .iter()
                .zip(&rep.violation_bounds)
                .map(|(v, w)| v / w)
                .fold(0.0f64, f64::max);
            (rep.passes() && rep.lambda_star_aware, obj, viol, rep.k)
        })
        .collect();
    let all = results.iter().all(|r| r.0);
    let obj = results.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let viol = results.iter().map(|r| r.2).fold(0.0f64, f64::max);
    let kmax = results.iter().map(|r| r.3).max().unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut bitwise = true;
    for _ in 0..10_000 {
        let d = rng.gen_range(1..8);
        let g: Vec<f64> = (0..d).map(|_| (rng.gen::<f64>() - 0.5) * 10f64.powi(rng.gen_range(-8..8))).collect();
        let rho = 10f64.powf(rng.gen_range(-10.0..3.0));
        let closed = gap::positive_part_step(&g, rho);
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let generic = Geometry::orthant(d).prox_step(&ProxFn::Zero, &neg, rho).unwrap();
        bitwise &= closed.iter().zip(&generic).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    Outcome {
        pass: all && bitwise,
        detail: format!(
            "{} programs, max (f−f*)/W_f {obj:.3}, max viol/W_g {viol:.3}, max K {kmax}, bitwise dual step {bitwise}",
            cases.len()
        ),
    }
}

/// Deterministic √(1/ε) law and randomized-vs-deterministic ordering at n = 200.
fn criterion7() -> Outcome {
    let inst = zoo::make_bilinear_qp(4, 3, 0).unwrap();
    let p = &inst.problem;
    let d0 = initial_gap(&inst);
    let mut pts = Vec::new();
    for eps in [1e-1, 1e-2, 1e-3, 1e-4] {
        let k = ipds::k_for_target(p, eps, GapTarget::Duality, d0).unwrap();
        let ctr = OracleCounter::new();
        let (x0, l0) = anchors(p);
        let opts = RunOptions { k, ..RunOptions::default() };
        ipds::run_deterministic(p, &Schedule::new(p.l_d(), eps), (&x0, &l0), &opts, &ctr).unwrap();
        pts.push((eps.ln(), (ctr.primal() as f64).ln()));
    }
    let slope = constrained::least_squares_line(&pts).1;
    let slope_ok = (-0.6..=-0.4).contains(&slope);

    let big = finite_sum(200, 0);
    let p = &big.problem;
    let eps = 1e-2;
    let s = Schedule::new(p.l_d(), eps);
    let (x0, l0) = anchors(p);
    let opts = RunOptions { k: 10_000, stop_gap: Some(eps), evaluator: Some(big.evaluator()), ..RunOptions::default() };
    let ctr = OracleCounter::new();
    let det = ipds::run_deterministic(p, &s, (&x0, &l0), &opts, &ctr).unwrap();
    let det_calls = ctr.primal() as f64;
    let det_gap = det.last().gap.unwrap().hi;
    let rand: Vec<(f64, f64)> = (0..10u64)
        .into_par_iter()
        .map(|seed| {
            let ctr = OracleCounter::new();
            let tr = ipds::run_randomized(p, &s, (&x0, &l0), &opts, seed, None, &ctr).unwrap();
            (ctr.primal() as f64, tr.last().gap.unwrap().hi)
        })
        .collect();
    let rand_calls = rand.iter().map(|r| r.0).sum::<f64>() / rand.len() as f64;
    let matched = det_gap <= eps && rand.iter().all(|r| r.1 <= eps);
    let order_ok = matched && rand_calls < det_calls;
    Outcome {
        pass: slope_ok && order_ok,
        detail: format!(
            "det slope {slope:.3} ({}); n=200 at gap<=eps: rand mean {rand_calls:.3e} vs det {det_calls:.3e} primal calls ({})",
            if slope_ok { "ok" } else { "out of range" },
            if order_ok { "rand below det" } else { "rand NOT below det" }
        ),
    }
}

/// Sub-solver certificates against exact box-QP minimizers.
fn criterion8() -> Outcome {
    let mut insts = Vec::new();
    for seed in 0..10 {
        insts.push(zoo::make_bilinear_qp(4, 3, seed).unwrap());
        insts.push(zoo::make_nonbilinear_entropy(4, 3, seed).unwrap());
    }
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for inst in &insts {
        let p = &inst.problem;
        let lam = p.dual_geom.sample(&mut rng);
        let xs = inst.exact_inner().primal_argmin(&lam);
        let opt = p.s_hat_primal(&xs, &lam);
        for e in 1..=8 {
            let eps = 10f64.powi(-e);
            let start = p.primal_geom.sample(&mut rng);
            let sol = gap::solve_primal_sub(
                p,
                &lam,
                eps,
                SubSolver::Deterministic,
                &start,
                &OracleCounter::new(),
                &SolverOptions::default(),
                None,
            )
            .unwrap();
            worst = worst.max((p.s_hat_primal(&sol.point, &lam) - opt) / eps);
        }
    }
    let apg_ok = worst <= 1.0;

    let inst = finite_sum(50, 3);
    let p = &inst.problem;
    let lam = p.dual_geom.sample(&mut rng);
    let xs = inst.exact_inner().primal_argmin(&lam);
    let opt = p.s_hat_primal(&xs, &lam);
    let eps = 1e-4;
    let start = p.primal_geom.anchor();
    let run = |mult: u32, seeds: std::ops::Range<u64>| -> Vec<f64> {
        seeds
            .into_par_iter()
            .map(|seed| {
                let opts = SolverOptions { rand_multiplier: mult, ..SolverOptions::default() };
                let sol = gap::solve_primal_sub(
                    p,
                    &lam,
                    eps,
                    SubSolver::Randomized { seed },
                    &start,
                    &OracleCounter::new(),
                    &opts,
                    None,
                )
                .unwrap();
                p.s_hat_primal(&sol.point, &lam) - opt
            })
            .collect()
    };
    let mut mult = 1u32;
    while mult < 64 && mean_se(&run(mult, 10_000..10_020)).0 > eps {
        mult *= 2;
    }
    let (m, _) = mean_se(&run(mult, 0..200));
    let rand_ok = m <= eps;
    Outcome {
        pass: apg_ok && rand_ok,
        detail: format!(
            "APG max gap/eps {worst:.3} over 20x8; SVRG mean gap {m:.3e} <= {eps:e} with budget multiplier {mult}"
        ),
    }
}

/// Identical (config, seed) gives identical trace hashes.
fn criterion9() -> Outcome {
    let inst = finite_sum(20, 4);
    let p = &inst.problem;
    let s = Schedule::new(p.l_d(), 1e-2);
    let (x0, l0) = anchors(p);
    let opts = RunOptions { k: 20, evaluator: Some(inst.evaluator()), ..RunOptions::default() };
    let h = |rand: bool| {
        let c = OracleCounter::new();
        if rand {
            ipds::run_randomized(p, &s, (&x0, &l0), &opts, 17, None, &c).unwrap().hash()
        } else {
            ipds::run_deterministic(p, &s, (&x0, &l0), &opts, &c).unwrap().hash()
        }
    };
    let lib_ok = h(false) == h(false) && h(true) == h(true);

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ipds_core::cli::ExperimentConfig::quick(ipds_core::cli::ProblemSource::Zoo(
        ipds_core::cli::ZooSpec::family(zoo::Family::FiniteSumQp),
    ));
    cfg.modes = vec![ipds::RunMode::Det, ipds::RunMode::Rand];
    cfg.seeds = Some(ipds_core::cli::SeedSpec::List(vec![1, 2]));
    cfg.k = Some(15);
    cfg.output_dir = dir.path().join("a");
    let (a, _) = ipds_core::cli::cmd_run(&cfg).unwrap();
    cfg.output_dir = dir.path().join("b");
    let (b, _) = ipds_core::cli::cmd_run(&cfg).unwrap();
    let hashes = |s: &ipds_core::cli::RunSummary| s.cells.iter().map(|c| c.trace_hash.clone()).collect::<Vec<_>>();
    let cli_ok = hashes(&a) == hashes(&b) && a.cells.len() == 3;
    Outcome {
        pass: lib_ok && cli_ok,
        detail: format!("library reruns identical: {lib_ok}; CLI reruns identical: {cli_ok}"),
    }
}

fn main() {
    let min = |m: u64| Duration::from_secs(60 * m);
    let results = [
        report(1, "smoothed-gap recursion", min(1), criterion1),
        report(2, "duality-gap bound and K_det", min(5), criterion2),
        report(3, "smoothness of x* and dual gradient", min(5), criterion3),
        report(4, "randomized mode in expectation", min(10), criterion4),
        report(5, "randomized mode with high probability", min(10), criterion5),
        report(6, "constrained programs", min(5), criterion6),
        report(7, "oracle-complexity scaling", min(15), criterion7),
        report(8, "sub-solver certificates", min(5), criterion8),
        report(9, "determinism", min(5), criterion9),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("acceptance: {passed}/{} criteria pass", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
