use nilflow::algebra::{gl_action, jacobi_residual, nilpotency_degree_with_tol};
use nilflow::curvature::ricci_spectrum;
use nilflow::flow::{
    check_equivalence, integrate_bracket_flow, integrate_innerproduct_flow,
    integrate_normalized_flow, integrate_r_normalized, rescale_to_sphere, type3_certificate,
    FlowOptions, FlowTrace, Rate,
};
use nilflow::io::{read_trace_csv, save_trace, sidecar_path, trace_rows, TraceSidecar};
use nilflow::ode::OdeOptions;
use nilflow::sample::{
    random_filiform, random_near_identity, random_nilpotent, random_two_step_with_split,
};
use nilflow::soliton::{
    critical_point_check, detect_convergence, log_linear_fit, orbit_invariants, soliton_residual,
    SOLITON_TOL,
};
use nilflow::{Bracket, Error};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn starts() -> Vec<Bracket> {
    let mut r = rng(7);
    vec![
        Bracket::heisenberg(1.0),
        Bracket::filiform(&[1.0, 2.0]),
        random_filiform(5, &mut r),
        random_two_step_with_split(6, 3, &mut r),
        random_nilpotent(6, &mut r),
    ]
}

fn tight() -> FlowOptions {
    FlowOptions {
        rtol: 1e-11,
        atol: 1e-11,
        ..FlowOptions::default()
    }
}

#[test]
fn unnormalized_flow_obeys_type_three_bound() {
    for b in starts() {
        let tr = integrate_bracket_flow(&b, 20.0, &FlowOptions::default()).unwrap();
        let rep = type3_certificate(&tr);
        assert!(rep.bound_ok, "{rep:?}");
        assert!(rep.sup_t_riem.is_finite());
    }
}

#[test]
fn heisenberg_type_three_constant() {
    // t|mu|^2 = 2t / (1 + 3t) increases to 2/3, so sup t|mu|^2/(2n) -> 1/9.
    let tr =
        integrate_bracket_flow(&Bracket::heisenberg(1.0), 200.0, &FlowOptions::default()).unwrap();
    let rep = type3_certificate(&tr);
    let exact = 2.0 * 200.0 / (1.0 + 600.0) / 6.0;
    assert!((rep.sup_t_mu2_over_2n - exact).abs() < 1e-6, "{rep:?}");
}

#[test]
fn norm_decreases_and_scal_increases() {
    for b in starts() {
        let tr = integrate_bracket_flow(&b, 10.0, &FlowOptions::default()).unwrap();
        for w in tr.diagnostics.windows(2) {
            assert!(w[1].mu_norm <= w[0].mu_norm * (1.0 + 1e-12));
            assert!(w[1].scal >= w[0].scal - 1e-12 * w[0].scal.abs());
        }
    }
}

#[test]
fn energy_decreases_on_the_sphere() {
    for b in starts() {
        let b = rescale_to_sphere(&b).unwrap();
        let tr = integrate_normalized_flow(&b, 20.0, &FlowOptions::default()).unwrap();
        for w in tr.diagnostics.windows(2) {
            assert!(
                w[1].tr_ric2 <= w[0].tr_ric2 + 1e-10,
                "{} -> {}",
                w[0].tr_ric2,
                w[1].tr_ric2
            );
        }
    }
}

#[test]
fn flow_stays_on_the_nilpotent_variety() {
    for b in starts() {
        let degree = nilpotency_degree_with_tol(&b, 1e-8).unwrap();
        let b = rescale_to_sphere(&b).unwrap();
        let tr = integrate_normalized_flow(&b, 60.0, &FlowOptions::default()).unwrap();
        for mu in &tr.brackets {
            assert!(jacobi_residual(mu) < 1e-8);
            assert_eq!(nilpotency_degree_with_tol(mu, 1e-8).unwrap(), degree);
        }
    }
}

#[test]
fn halving_the_tolerance_converges() {
    let b = rescale_to_sphere(&Bracket::filiform(&[1.0, 2.0])).unwrap();
    let final_at = |tol: f64| {
        let opts = FlowOptions {
            rtol: tol,
            atol: tol,
            ..FlowOptions::default()
        };
        integrate_normalized_flow(&b, 5.0, &opts)
            .unwrap()
            .last()
            .clone()
    };
    let reference = final_at(1e-13);
    let coarse = final_at(1e-7).sub(&reference).unwrap().norm();
    let fine = final_at(1e-10).sub(&reference).unwrap().norm();
    assert!(fine < coarse, "{fine} vs {coarse}");
    assert!(fine < 1e-8, "{fine}");
}

#[test]
fn h_reproduces_the_bracket_and_stays_invertible() {
    let g = random_near_identity(4, 0.3, &mut rng(3));
    let b = gl_action(&g, &Bracket::filiform(&[1.0, 2.0])).unwrap();
    let ode = OdeOptions {
        rtol: 1e-11,
        atol: 1e-11,
        ..OdeOptions::default()
    };
    let tr = integrate_bracket_flow(&b, 5.0, &tight())
        .unwrap()
        .with_h(&ode)
        .unwrap();
    let h = tr.h.as_ref().unwrap();
    for (mu, h) in tr.brackets.iter().zip(h) {
        assert!(h.determinant().abs() > 1e-6);
        let pushed = gl_action(h, &b).unwrap();
        assert!(pushed.sub(mu).unwrap().norm() < 1e-6 * (1.0 + b.norm()));
    }
}

#[test]
fn normalized_flow_converges_exponentially() {
    let b = rescale_to_sphere(&Bracket::filiform(&[1.0, 2.0])).unwrap();
    let opts = FlowOptions {
        h_max: 0.5,
        ..tight()
    };
    let tr = integrate_normalized_flow(&b, 80.0, &opts).unwrap();
    let rep = detect_convergence(&tr, SOLITON_TOL).unwrap();
    let fit = rep.tail_fit.expect("resolvable tail");
    assert!(fit.slope < 0.0, "{fit:?}");
    assert!(fit.r_squared > 0.99, "{fit:?}");
    assert!(rep.limit_checks.positive_definite);
}

#[test]
fn normalized_equivalence_survives_metric_decay() {
    // On the Heisenberg soliton G(t) decays like diag(e^{-4t}, e^{-4t}, e^{-8t})
    // and h(t) degenerates with it; both must keep their relative accuracy.
    let mut r = rng(7);
    let cases = [
        (Bracket::heisenberg(1.0), 20.0, 1e-8),
        (random_filiform(5, &mut r), 20.0, 1e-7),
    ];
    for (b, t_max, tol) in cases {
        let b = rescale_to_sphere(&b).unwrap();
        let rep = check_equivalence(&b, t_max, &tight(), Rate::RicciSquared).unwrap();
        assert!(rep.min_abs_det_h < 1e-20, "{}", rep.min_abs_det_h);
        assert!(rep.max_bracket_residual < tol, "{rep:?}");
        assert!(rep.max_metric_residual_rel < tol, "{rep:?}");
        assert!(rep.max_scal_residual < 1e-10, "{rep:?}");
    }
}

#[test]
fn innerproduct_flow_stays_on_the_sphere() {
    let b = rescale_to_sphere(&Bracket::filiform(&[1.0, 2.0])).unwrap();
    let ip = integrate_innerproduct_flow(&b, 10.0, &tight(), Rate::RicciSquared).unwrap();
    let g = ip.metrics.last().unwrap();
    let (_, lam) = nilflow::flow::orthonormal_frame_bracket(&b, g).unwrap();
    assert!((lam.norm() - 2.0).abs() < 1e-11, "{}", lam.norm());
}

#[test]
fn short_runs_are_not_converged() {
    let b = rescale_to_sphere(&Bracket::filiform(&[1.0, 2.0])).unwrap();
    let tr = integrate_normalized_flow(&b, 0.5, &FlowOptions::default()).unwrap();
    match detect_convergence(&tr, SOLITON_TOL) {
        Err(Error::NotConverged(rep)) => assert!(rep.gradient_norm_at_limit > 1e-6),
        other => panic!("expected NotConverged, got {other:?}"),
    }
}

#[test]
fn soliton_is_stationary_under_constant_rate() {
    // Ric = -3/2 I + D for filiform(1, 1), so r = 3/2 freezes the bracket.
    let b = Bracket::filiform(&[1.0, 1.0]);
    let tr = integrate_r_normalized(&b, Rate::Constant(1.5), 10.0, &tight()).unwrap();
    assert!(tr.last().sub(&b).unwrap().norm() < 1e-9);
}

#[test]
fn filiform_fixture_spectrum() {
    let b = Bracket::filiform(&[1.0, 1.0]);
    let s = ricci_spectrum(&b);
    for (got, want) in s.iter().zip([-1.0, -0.5, 0.0, 0.5]) {
        assert!((got - want).abs() < 1e-14, "{s:?}");
    }
    let cert = soliton_residual(&b, SOLITON_TOL).unwrap();
    assert!(cert.is_soliton);
    assert!((cert.c + 1.5).abs() < 1e-12);
}

#[test]
fn generic_two_step_is_not_critical() {
    let b = random_two_step_with_split(6, 3, &mut rng(11));
    assert!(!critical_point_check(&b, SOLITON_TOL).unwrap());
    assert!(!soliton_residual(&b, SOLITON_TOL).unwrap().is_soliton);
}

#[test]
fn orbit_invariants_scale() {
    let b = random_filiform(5, &mut rng(5));
    let c = 1.7;
    let a = orbit_invariants(&b);
    let s = orbit_invariants(&b.scaled(c));
    for (x, y) in a.ricci_spectrum.iter().zip(&s.ricci_spectrum) {
        assert!((x * c * c - y).abs() < 1e-12);
    }
    assert!((a.norm * c - s.norm).abs() < 1e-12);
    assert!((a.energy * c.powi(4) - s.energy).abs() < 1e-10);
    assert_eq!(a.central_series, s.central_series);
    assert_eq!(a.degree, s.degree);
}

#[test]
fn tail_fit_recovers_a_line() {
    let x: Vec<f64> = (0..20).map(f64::from).collect();
    let y: Vec<f64> = x.iter().map(|t| 3.0 - 0.5 * t).collect();
    let fit = log_linear_fit(&x, &y).unwrap();
    assert!((fit.slope + 0.5).abs() < 1e-12);
    assert!((fit.intercept - 3.0).abs() < 1e-12);
    assert!((fit.r_squared - 1.0).abs() < 1e-12);
}

fn saved(tr: &FlowTrace) -> (Vec<nilflow::io::TraceRow>, TraceSidecar) {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("trace.csv");
    save_trace(&path, tr).unwrap();
    let rows = read_trace_csv(std::fs::File::open(&path).unwrap()).unwrap();
    let sidecar =
        serde_json::from_reader(std::fs::File::open(sidecar_path(&path)).unwrap()).unwrap();
    (rows, sidecar)
}

#[test]
fn trace_files_round_trip() {
    let tr = integrate_bracket_flow(
        &Bracket::filiform(&[1.0, 2.0]),
        1.0,
        &FlowOptions::default(),
    )
    .unwrap();
    let (rows, sidecar) = saved(&tr);
    assert_eq!(rows, trace_rows(&tr));
    assert_eq!(sidecar.snapshots.len(), tr.len());
    let last = sidecar
        .snapshots
        .last()
        .unwrap()
        .bracket
        .to_bracket()
        .unwrap();
    assert_eq!(&last, tr.last());
}
