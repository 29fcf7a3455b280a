//! Acceptance gate: eleven numbered criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (no libtest harness) so the lines always show up
//! in `cargo test` output. Every tolerance and sample count is a named
//! constant below; the process exits nonzero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nilflow::algebra::{
    delta, delta_transpose, derivation_basis, gl_action, Bracket, Operator, DEFAULT_TOL,
};
use nilflow::bch::{metric_convergence_distance, metric_field_2step, GroupLaw, GroupPoint};
use nilflow::curvature::{ricci_energy, ricci_energy_gradient, ricci_operator, ricci_spectrum};
use nilflow::flow::{
    check_equivalence, integrate_bracket_flow, integrate_normalized_flow, rescale_to_sphere,
    verify_flow_identities, FlowOptions, Rate,
};
use nilflow::sample::{
    random_filiform, random_near_identity, random_nilpotent, random_tangent, random_two_step,
};
use nilflow::soliton::{detect_convergence, limit_checks, SOLITON_TOL};

// 1
const HEIS_TIMES: [f64; 3] = [0.1, 1.0, 10.0];
const HEIS_REL_TOL: f64 = 1e-6;
const HEIS_BUDGET: Duration = Duration::from_secs(1);
// 2
const TYPE3_SAMPLES: usize = 50;
const TYPE3_T_MAX: f64 = 20.0;
const TYPE3_BUDGET: Duration = Duration::from_secs(60);
// 3
const RIC_BOUND_SAMPLES: usize = 1000;
const RIC_BOUND_SLACK: f64 = 1e-9;
// 4
const GRAD_SAMPLES: usize = 50;
const GRAD_FD_STEP: f64 = 1e-5;
const GRAD_REL_TOL: f64 = 1e-6;
// 5
const STRUCT_SAMPLES: usize = 200;
const STRUCT_TOL: f64 = 1e-10;
// 6
const IDENT_T_MAX: f64 = 2.0;
const IDENT_H_MAX: f64 = 2.5e-4;
const IDENT_ODE_TOL: f64 = 1e-11;
const IDENT_REL_TOL: f64 = 1e-4;
// 7
const EQUIV_T_MAX: f64 = 5.0;
const EQUIV_TOL: f64 = 1e-5;
const EQUIV_ODE_TOL: f64 = 1e-11;
const EQUIV_BUDGET: Duration = Duration::from_secs(10);
// 8
const SPHERE_STARTS: usize = 10;
const SPHERE_T_MAX: f64 = 50.0;
const SPHERE_TOL: f64 = 1e-8;
// Per-step drift before correction scales with the local error tolerance.
const SPHERE_ODE_TOL: f64 = 1e-10;
// 9
const SOLITON_STARTS: usize = 20;
const SOLITON_PERTURBATION: f64 = 0.3;
const SOLITON_T_MAX: f64 = 100.0;
const SOLITON_ODE_TOL: f64 = 1e-12;
const SOLITON_RESIDUAL_TOL: f64 = 1e-8;
const SOLITON_SPECTRUM_TOL: f64 = 1e-6;
// 10
const METRIC_BRACKETS: usize = 20;
const METRIC_POINTS: usize = 50;
const METRIC_TOL: f64 = 1e-12;
const ASSOC_TOL: f64 = 1e-10;
// 11
const MONITOR_T_MAX: f64 = 60.0;
const MONITOR_RADIUS: f64 = 2.0;
const MONITOR_ORDER: usize = 2;
const MONITOR_FINAL_TOL: f64 = 1e-6;
const MONITOR_SLACK: f64 = 1e-12;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn heisenberg_analytic() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for &t in &HEIS_TIMES {
        let tr = integrate_bracket_flow(&Bracket::heisenberg(1.0), t, &FlowOptions::default())
            .expect("flow");
        let c = tr.last().get(0, 1, 2);
        worst = worst.max(rel(c * c, 1.0 / (1.0 + 3.0 * t)));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < HEIS_REL_TOL && elapsed < HEIS_BUDGET,
        format!(
            "max rel err {worst:.2e} (< {HEIS_REL_TOL:.0e}), {elapsed:.2?} (< {HEIS_BUDGET:?})"
        ),
    )
}

fn type3_bound(rng: &mut ChaCha8Rng) -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for s in 0..TYPE3_SAMPLES {
        let n = 3 + s % 4;
        let b = random_two_step(n, rng);
        let tr = integrate_bracket_flow(&b, TYPE3_T_MAX, &FlowOptions::default()).expect("flow");
        for (t, d) in tr.times.iter().zip(&tr.diagnostics) {
            worst = worst.max(t * d.mu_norm * d.mu_norm / (2.0 * n as f64));
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1.0 && elapsed < TYPE3_BUDGET,
        format!("sup t|mu|^2/(2n) = {worst:.4} (<= 1), {elapsed:.2?} (< {TYPE3_BUDGET:?})"),
    )
}

fn ricci_norm_bound(rng: &mut ChaCha8Rng) -> Outcome {
    let bound = 3f64.sqrt() / 4.0;
    let mut worst = f64::NEG_INFINITY;
    for s in 0..RIC_BOUND_SAMPLES {
        let n = 3 + s % 4;
        let scale = rng.random_range(0.1..10.0);
        let b = random_nilpotent(n, rng).scaled(scale);
        let excess = ricci_operator(&b).norm() - bound * b.norm_squared();
        worst = worst.max(excess);
    }
    outcome(
        worst <= RIC_BOUND_SLACK,
        format!("max |Ric| - (sqrt3/4)|mu|^2 = {worst:.3e} (<= {RIC_BOUND_SLACK:.0e})"),
    )
}

fn gradient_identity(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0f64;
    for s in 0..GRAD_SAMPLES {
        let n = 2 + s % 4;
        let b = if s % 2 == 0 || n < 3 {
            random_tangent(n, rng)
        } else {
            random_nilpotent(n, rng)
        };
        let grad = ricci_energy_gradient(&b);
        let (mut num, mut den) = (0.0, 0.0);
        for (i, j, k, _) in Bracket::from_fn(n, |_, _, _| 1.0).canonical_entries() {
            let mut e = Bracket::zero(n);
            e.set(i, j, k, 1.0);
            let fp = ricci_energy(&b.axpy(GRAD_FD_STEP, &e).unwrap());
            let fm = ricci_energy(&b.axpy(-GRAD_FD_STEP, &e).unwrap());
            let fd = (fp - fm) / (2.0 * GRAD_FD_STEP);
            // ⟨grad, e⟩ counts both orderings of (i, j)
            let exact = 2.0 * grad.get(i, j, k);
            num += (fd - exact).powi(2);
            den += exact * exact;
        }
        worst = worst.max((num / den).sqrt());
    }
    outcome(
        worst < GRAD_REL_TOL,
        format!("max rel err {worst:.2e} (< {GRAD_REL_TOL:.0e})"),
    )
}

fn structural_identities(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = [0.0f64; 4];
    for s in 0..STRUCT_SAMPLES {
        let n = 3 + s % 4;
        let b = random_nilpotent(n, rng);
        let id = Operator::identity(n, n);
        worst[0] = worst[0].max(delta(&b, &id).unwrap().sub(&b).unwrap().norm());
        let ric = ricci_operator(&b);
        worst[1] = worst[1].max((delta_transpose(&b, &b).unwrap() + &ric * 4.0).norm());
        for d in derivation_basis(&b, DEFAULT_TOL) {
            worst[2] = worst[2].max(ric.dot(&d).abs());
        }
        worst[3] = worst[3].max((ric.trace() + 0.25 * b.norm_squared()).abs());
    }
    outcome(
        worst.iter().all(|&w| w < STRUCT_TOL),
        format!(
            "delta(I)=mu {:.1e}, delta^t(mu)=-4Ric {:.1e}, tr(Ric D)=0 {:.1e}, tr Ric {:.1e} (< {STRUCT_TOL:.0e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn flow_identities(rng: &mut ChaCha8Rng) -> Outcome {
    let opts = FlowOptions {
        rtol: IDENT_ODE_TOL,
        atol: IDENT_ODE_TOL,
        h_max: IDENT_H_MAX,
        ..Default::default()
    };
    let starts = [
        Bracket::heisenberg(1.0),
        random_filiform(4, rng),
        random_filiform(5, rng),
        random_two_step(5, rng),
        random_nilpotent(6, rng),
    ];
    let (mut scal_err, mut norm_err, mut checked) = (0.0f64, 0.0f64, 0usize);
    for b in &starts {
        let tr = integrate_bracket_flow(b, IDENT_T_MAX, &opts).expect("flow");
        let rep = verify_flow_identities(&tr).expect("enough samples");
        scal_err = scal_err.max(rep.max_scal_rel_err);
        norm_err = norm_err.max(rep.max_norm_rel_err);
        checked += rep.times.len();
    }
    outcome(
        scal_err < IDENT_REL_TOL && norm_err < IDENT_REL_TOL,
        format!(
            "{checked} interior samples: d scal/dt {scal_err:.2e}, d|mu|^2/dt {norm_err:.2e} (< {IDENT_REL_TOL:.0e})"
        ),
    )
}

fn equivalence() -> Outcome {
    let start = Instant::now();
    let opts = FlowOptions {
        rtol: EQUIV_ODE_TOL,
        atol: EQUIV_ODE_TOL,
        ..Default::default()
    };
    let cases = [
        ("heisenberg", Bracket::heisenberg(1.0)),
        ("filiform(1,1)", Bracket::filiform(&[1.0, 1.0])),
        ("filiform(1,2)", Bracket::filiform(&[1.0, 2.0])),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, b) in cases {
        let rep = check_equivalence(&b, EQUIV_T_MAX, &opts, Rate::Zero).expect("equivalence run");
        pass &= rep.max_bracket_residual < EQUIV_TOL && rep.max_metric_residual < EQUIV_TOL;
        parts.push(format!(
            "{name}: mu {:.1e}, G {:.1e}",
            rep.max_bracket_residual, rep.max_metric_residual
        ));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < EQUIV_BUDGET;
    outcome(
        pass,
        format!(
            "{} (< {EQUIV_TOL:.0e}), {elapsed:.2?} (< {EQUIV_BUDGET:?})",
            parts.join("; ")
        ),
    )
}

fn sphere_conservation(rng: &mut ChaCha8Rng) -> Outcome {
    let (mut drift, mut scal) = (0.0f64, 0.0f64);
    for s in 0..SPHERE_STARTS {
        let n = 3 + s % 4;
        let b = rescale_to_sphere(&random_nilpotent(n, rng)).unwrap();
        let opts = FlowOptions {
            rtol: SPHERE_ODE_TOL,
            atol: SPHERE_ODE_TOL,
            ..Default::default()
        };
        let tr = integrate_normalized_flow(&b, SPHERE_T_MAX, &opts).expect("flow");
        drift = drift.max(tr.max_norm_drift);
        for d in &tr.diagnostics {
            drift = drift.max((d.mu_norm - 2.0).abs());
            scal = scal.max((d.scal + 1.0).abs());
        }
    }
    outcome(
        drift < SPHERE_TOL && scal < SPHERE_TOL,
        format!("max norm drift {drift:.2e}, max |scal + 1| {scal:.2e} (< {SPHERE_TOL:.0e})"),
    )
}

fn soliton_convergence(rng: &mut ChaCha8Rng) -> Outcome {
    let opts = FlowOptions {
        rtol: SOLITON_ODE_TOL,
        atol: SOLITON_ODE_TOL,
        ..Default::default()
    };
    let target = [-1.0, -1.0, 1.0];
    let (mut converged, mut residual, mut spec_err) = (0usize, 0.0f64, 0.0f64);
    let mut min_eig = f64::INFINITY;
    for _ in 0..SOLITON_STARTS {
        let g = random_near_identity(3, SOLITON_PERTURBATION, rng);
        let b = rescale_to_sphere(&gl_action(&g, &Bracket::heisenberg(1.0)).unwrap()).unwrap();
        let tr = integrate_normalized_flow(&b, SOLITON_T_MAX, &opts).expect("flow");
        match detect_convergence(&tr, SOLITON_TOL) {
            Ok(rep) => {
                converged += 1;
                residual = residual.max(rep.certificate.residual);
                let spectrum = ricci_spectrum(&rep.limit);
                for (a, b) in spectrum.iter().zip(target) {
                    spec_err = spec_err.max((a - b).abs());
                }
                min_eig = min_eig.min(limit_checks(&rep.limit).min_eigenvalue);
            }
            Err(e) => eprintln!("    start did not converge: {e}"),
        }
    }
    outcome(
        converged == SOLITON_STARTS
            && residual < SOLITON_RESIDUAL_TOL
            && spec_err < SOLITON_SPECTRUM_TOL
            && min_eig > 0.0,
        format!(
            "{converged}/{SOLITON_STARTS} converged, residual {residual:.2e} (< {SOLITON_RESIDUAL_TOL:.0e}), \
             spectrum err {spec_err:.2e} (< {SOLITON_SPECTRUM_TOL:.0e}), min eig(Ric + r I) {min_eig:.3}"
        ),
    )
}

fn metric_pipeline(rng: &mut ChaCha8Rng) -> Outcome {
    let (mut metric_err, mut assoc_err) = (0.0f64, 0.0f64);
    let point = |rng: &mut ChaCha8Rng, n: usize| {
        GroupPoint((0..n).map(|_| rng.random_range(-2.0..2.0)).collect())
    };
    for s in 0..METRIC_BRACKETS {
        let n = 3 + s % 4;
        let b = random_two_step(n, rng);
        let law = GroupLaw::new(&b).unwrap();
        let field = metric_field_2step(&b).unwrap();
        for _ in 0..METRIC_POINTS {
            let x = point(rng, n);
            metric_err = metric_err.max((law.metric_at(&x) - field.eval(&x.0)).amax());
        }
        for b in [b, random_filiform(n, rng)] {
            let law = GroupLaw::new(&b).unwrap();
            for _ in 0..METRIC_POINTS {
                let (x, y, z) = (point(rng, n), point(rng, n), point(rng, n));
                let lhs = law.product(&law.product(&x, &y), &z);
                let rhs = law.product(&x, &law.product(&y, &z));
                let d = DVector::from_vec(lhs.0).metric_distance(&DVector::from_vec(rhs.0));
                assoc_err = assoc_err.max(d);
            }
        }
    }
    outcome(
        metric_err < METRIC_TOL && assoc_err < ASSOC_TOL,
        format!(
            "metric vs closed form {metric_err:.2e} (< {METRIC_TOL:.0e}), associativity {assoc_err:.2e} (< {ASSOC_TOL:.0e})"
        ),
    )
}

fn convergence_monitor() -> Outcome {
    let opts = FlowOptions {
        rtol: SOLITON_ODE_TOL,
        atol: SOLITON_ODE_TOL,
        ..Default::default()
    };
    let b = rescale_to_sphere(&Bracket::filiform(&[1.0, 2.0])).unwrap();
    // The limit comes from a run twice as long, so the final sample of the
    // monitored trace is compared against an independent bracket.
    let long = integrate_normalized_flow(&b, 2.0 * MONITOR_T_MAX, &opts).expect("flow");
    let lambda = long.last().clone();
    let tr = integrate_normalized_flow(&b, MONITOR_T_MAX, &opts).expect("flow");
    let t_tail = MONITOR_T_MAX / 2.0;
    let mut dist = Vec::new();
    for (t, mu) in tr.times.iter().zip(&tr.brackets) {
        if *t >= t_tail {
            dist.push(
                metric_convergence_distance(mu, &lambda, MONITOR_RADIUS, MONITOR_ORDER)
                    .expect("distance"),
            );
        }
    }
    let monotone = dist.windows(2).all(|w| w[1] <= w[0] + MONITOR_SLACK);
    let last = *dist.last().unwrap();
    outcome(
        monotone && last < MONITOR_FINAL_TOL,
        format!(
            "{} tail samples, monotone {monotone}, first {:.2e}, final {last:.2e} (< {MONITOR_FINAL_TOL:.0e})",
            dist.len(),
            dist[0]
        ),
    )
}

type Criterion = Box<dyn FnOnce(&mut ChaCha8Rng) -> Outcome>;

fn main() -> ExitCode {
    let mut rng = ChaCha8Rng::seed_from_u64(20_240_601);
    let criteria: Vec<(&str, Criterion)> = vec![
        (
            "Heisenberg analytic solution",
            Box::new(|_| heisenberg_analytic()),
        ),
        ("type-III bound t|mu|^2 <= 2n", Box::new(type3_bound)),
        ("Ricci-norm bound", Box::new(ricci_norm_bound)),
        (
            "gradient of F vs finite differences",
            Box::new(gradient_identity),
        ),
        ("structural identities", Box::new(structural_identities)),
        ("flow ODE identities", Box::new(flow_identities)),
        (
            "bracket / h(t) / inner-product equivalence",
            Box::new(|_| equivalence()),
        ),
        (
            "normalized-flow conservation",
            Box::new(sphere_conservation),
        ),
        (
            "soliton convergence from perturbed Heisenberg",
            Box::new(soliton_convergence),
        ),
        ("metric pipeline equivalence", Box::new(metric_pipeline)),
        (
            "C-infinity convergence monitor",
            Box::new(|_| convergence_monitor()),
        ),
    ];
    let mut failures = 0;
    for (idx, (name, run)) in criteria.into_iter().enumerate() {
        let o = run(&mut rng);
        if !o.pass {
            failures += 1;
        }
        println!(
            "[{}] {:>2}. {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            idx + 1,
            o.detail
        );
    }
    println!("acceptance: {} passed, {failures} failed", 11 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
