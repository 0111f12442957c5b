use hjb_core::analytic::bm_truncated_exit;
use hjb_core::fixedpoint::{apply_t, choose_kappa, iterate};
use hjb_core::hamiltonian::{control_expression, eval_hmax};
use hjb_core::model::{to_general, BoundaryData, ControlSet, ControlledField, ProblemSpec, ScalarField2};
use hjb_core::pde::{bielecki_norm, dx, solve_linear, FarField, GridFunction, Mesh, SchemeConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn spec_with(c: [f64; 4], controls: ControlSet) -> ProblemSpec {
    let [c1, c2, c3, c4] = c;
    ProblemSpec::new(
        ScalarField2::constant(1.0),
        ControlledField::new(move |x, _, a| c1 * a + c2 * x.sin()),
        ControlledField::new(move |_, _, a| -c3 * a * a),
        ControlledField::new(move |_, t, a| c4 * a + t.cos()),
        BoundaryData::zero(1.0),
        controls,
        1.0,
    )
    .unwrap()
}

fn drift_benchmark() -> ProblemSpec {
    ProblemSpec::new(
        ScalarField2::constant(1.0),
        ControlledField::new(|_, _, a| a),
        ControlledField::constant(0.0),
        ControlledField::constant(1.0),
        BoundaryData::zero(1.0),
        ControlSet::interval(-1.0, 1.0).unwrap(),
        1.0,
    )
    .unwrap()
}

fn coeffs() -> impl Strategy<Value = [f64; 4]> {
    [-2.0..2.0f64, -1.0..1.0f64, 0.0..1.0f64, -1.0..1.0f64]
}

fn control_sets() -> impl Strategy<Value = ControlSet> {
    prop_oneof![
        Just(ControlSet::interval(-1.0, 1.0).unwrap()),
        Just(ControlSet::interval(0.0, 2.0).unwrap()),
        Just(ControlSet::finite(vec![-1.0, -0.3, 0.4, 1.0]).unwrap()),
    ]
}

/// Smooth random grid function built from a few modes.
fn random_grid(rng: &mut ChaCha8Rng, mesh: Mesh, amplitude: f64) -> GridFunction {
    let modes: Vec<(f64, f64, f64)> = (0..3)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(0.2..2.0), rng.random_range(0.0..3.0)))
        .collect();
    let norm: f64 = modes.iter().map(|m| m.0.abs()).sum::<f64>().max(1e-12);
    GridFunction::from_fn(mesh, |x, t| {
        amplitude / norm * modes.iter().map(|(a, w, s)| a * (w * x + s * t).sin()).sum::<f64>()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hamiltonian_dominates_every_control(
        c in coeffs(),
        controls in control_sets(),
        p in -10.0..10.0f64,
        u in -5.0..5.0f64,
        x in 0.0..8.0f64,
        t in 0.0..1.0f64,
    ) {
        let spec = spec_with(c, controls.clone());
        let h = to_general(&spec).hamiltonian.eval(p, u, x, t).unwrap();
        for a in controls.grid() {
            prop_assert!(h >= control_expression(&spec, p, u, x, t, a).unwrap() - 1e-12);
        }
        let (v, arg) = eval_hmax(p, u, x, t, &spec).unwrap();
        prop_assert_eq!(v, h);
        prop_assert!(controls.contains(arg));
    }

    #[test]
    fn hamiltonian_is_lipschitz_in_p_and_u(
        c in coeffs(),
        controls in control_sets(),
        p in -10.0..10.0f64,
        q in -10.0..10.0f64,
        u in -5.0..5.0f64,
        v in -5.0..5.0f64,
        x in 0.0..8.0f64,
    ) {
        let spec = spec_with(c, controls.clone());
        let amax = controls.min().abs().max(controls.max().abs());
        let k = c[0].abs() * amax + c[1].abs() + c[2] * amax * amax;
        let h = |p, u| eval_hmax(p, u, x, 0.3, &spec).unwrap().0;
        let lhs = (h(p, u) - h(q, v)).abs();
        prop_assert!(lhs <= k * ((p - q).abs() + (u - v).abs()) + 1e-9, "{lhs} vs K = {k}");
    }

    #[test]
    fn argmax_is_scale_invariant_for_linear_drift(p in -10.0..10.0f64, u in -5.0..5.0f64, lambda in 0.01..100.0f64) {
        let spec = drift_benchmark();
        let mut spec0 = spec.clone();
        spec0.running_reward = ControlledField::constant(0.0);
        let (_, a) = eval_hmax(p, u, 1.0, 0.0, &spec0).unwrap();
        let (_, b) = eval_hmax(lambda * p, lambda * u, 1.0, 0.0, &spec0).unwrap();
        prop_assert_eq!(a, b);
        prop_assert_eq!(a, if p > 0.0 { 1.0 } else { -1.0 });
    }

    #[test]
    fn bielecki_norm_axioms(seed in any::<u64>(), kappa in 0.0..50.0f64, lambda in -5.0..5.0f64) {
        let mesh = Mesh::new(4.0, 21, 17, 1.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = random_grid(&mut rng, mesh, 2.0);
        let v = random_grid(&mut rng, mesh, 1.0);
        let n = |g: &GridFunction| bielecki_norm(g, Some(&dx(g)), kappa).unwrap();
        let scaled = u.map(|z| lambda * z);
        prop_assert!((n(&scaled) - lambda.abs() * n(&u)).abs() <= 1e-12 * (1.0 + n(&u)));
        let sum = GridFunction::from_values(mesh, u.values().iter().zip(v.values()).map(|(a, b)| a + b).collect()).unwrap();
        prop_assert!(n(&sum) <= n(&u) + n(&v) + 1e-12);
        prop_assert_eq!(n(&GridFunction::zeros(mesh)), 0.0);
        prop_assert!(n(&u) > 0.0);
        let weighted = bielecki_norm(&u, None, kappa).unwrap();
        let plain = u.sup_norm();
        prop_assert!(weighted <= plain * (1.0 + 1e-15));
        prop_assert!(weighted >= (-kappa * mesh.horizon).exp() * plain * (1.0 - 1e-12));
    }

    #[test]
    fn linear_solve_is_monotone_and_bounded(
        seed in any::<u64>(),
        neumann in any::<bool>(),
        sigma0 in 0.3..2.0f64,
        c in -1.0..1.0f64,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mesh = Mesh::new(5.0, 31, 41, 1.0).unwrap();
        let f = random_grid(&mut rng, mesh, 1.0);
        let bump = random_grid(&mut rng, mesh, 1.0).map(f64::abs);
        let g = GridFunction::from_values(mesh, f.values().iter().zip(bump.values()).map(|(a, b)| a + b).collect()).unwrap();
        let sigma = ScalarField2::new(move |x, _| sigma0 * (1.0 + 0.3 * x.sin().powi(2)));
        let beta = BoundaryData::new(move |x| c * (-x).exp(), move |t| c * (1.0 + (1.0 - t) * 0.5), 1.0).unwrap();
        let far = if neumann { FarField::Neumann } else { FarField::ZeroCurvature };
        let scheme = SchemeConfig::implicit(far);
        let uf = hjb_core::pde::solve_linear_with_source(&sigma, &f, &beta, &scheme).unwrap();
        let ug = hjb_core::pde::solve_linear_with_source(&sigma, &g, &beta, &scheme).unwrap();
        for (a, b) in uf.values().iter().zip(ug.values()) {
            prop_assert!(*a <= *b + 1e-12);
        }
        let sup_beta = (0..mesh.n_x).map(|i| beta.terminal(mesh.x(i)).abs())
            .chain((0..mesh.n_t).map(|j| beta.lateral(mesh.t(j)).abs()))
            .fold(0.0, f64::max);
        prop_assert!(uf.sup_norm() <= (sup_beta + mesh.horizon * f.sup_norm()) * (1.0 + 1e-12));
    }

    #[test]
    fn operator_is_monotone_when_hamiltonian_increases_in_u(seed in any::<u64>(), h0 in 0.0..1.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = ProblemSpec::new(
            ScalarField2::constant(1.0),
            ControlledField::constant(0.0),
            ControlledField::new(move |_, _, a| h0 * (1.0 + a)),
            ControlledField::new(|x, _, a| a * (-x).exp()),
            BoundaryData::zero(1.0),
            ControlSet::interval(-1.0, 1.0).unwrap(),
            1.0,
        ).unwrap();
        let g = to_general(&spec);
        let mesh = Mesh::new(5.0, 31, 41, 1.0).unwrap();
        let u = random_grid(&mut rng, mesh, 2.0);
        let gap = random_grid(&mut rng, mesh, 1.0).map(f64::abs);
        let v = GridFunction::from_values(mesh, u.values().iter().zip(gap.values()).map(|(a, b)| a + b).collect()).unwrap();
        let scheme = SchemeConfig::default();
        let tu = apply_t(&u, &g, &scheme).unwrap();
        let tv = apply_t(&v, &g, &scheme).unwrap();
        for (a, b) in tu.values().iter().zip(tv.values()) {
            prop_assert!(*a <= *b + 1e-12);
        }
    }
}

#[test]
fn refinement_reduces_error_against_closed_form() {
    let one = ScalarField2::constant(1.0);
    let mut errors = Vec::new();
    for level in 0..3 {
        let s = 1usize << level;
        let mesh = Mesh::new(8.0, 40 * s + 1, 100 * s + 1, 1.0).unwrap();
        let u = solve_linear(&one, &one, &BoundaryData::zero(1.0), &mesh, &SchemeConfig::default()).unwrap();
        let mut err: f64 = 0.0;
        for j in 0..mesh.n_t - 1 {
            for i in 1..mesh.n_x {
                let (x, t) = (mesh.x(i), mesh.t(j));
                if x > 4.0 {
                    break;
                }
                err = err.max((u.get(j, i) - (bm_truncated_exit(x, t, 1.0) - t)).abs());
            }
        }
        errors.push(err);
    }
    assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
}

#[test]
fn operator_contracts_on_random_pairs() {
    let spec = drift_benchmark();
    let g = to_general(&spec);
    let mesh = Mesh::new(6.0, 61, 101, 1.0).unwrap();
    let scheme = SchemeConfig::default();
    let m = hjb_core::fixedpoint::calibrate_m(&g.sigma, &mesh, &scheme, 8.0).unwrap();
    let kappa = choose_kappa(1.0, m, 1.5);
    let n = |w: &GridFunction| bielecki_norm(w, Some(&dx(w)), kappa).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let trials = 40;
    let mut contracted = 0;
    for _ in 0..trials {
        // a priori bound sup|u| <= T sup l = 1
        let u = random_grid(&mut rng, mesh, 1.0);
        let v = random_grid(&mut rng, mesh, 1.0);
        let num = n(&apply_t(&u, &g, &scheme).unwrap().sub(&apply_t(&v, &g, &scheme).unwrap()).unwrap());
        let den = n(&u.sub(&v).unwrap());
        if num < den {
            contracted += 1;
        }
    }
    assert!(contracted as f64 >= 0.95 * trials as f64, "{contracted}/{trials}");
}

#[test]
fn converged_solution_is_a_fixed_point_with_exact_boundary() {
    let spec = ProblemSpec::new(
        ScalarField2::new(|x, _| 1.0 + 0.2 * x.cos()),
        ControlledField::new(|_, _, a| a),
        ControlledField::constant(-0.2),
        ControlledField::new(|x, _, a| 1.0 - 0.1 * a * a + 0.1 * x.sin()),
        BoundaryData::new(|x| 0.5 * (1.0 - (-x).exp()), |_| 0.0, 1.0).unwrap(),
        ControlSet::interval(-1.0, 1.0).unwrap(),
        1.0,
    )
    .unwrap();
    let g = to_general(&spec);
    let mesh = Mesh::new(6.0, 61, 101, 1.0).unwrap();
    let scheme = SchemeConfig::default();
    let kappa = choose_kappa(1.2, 2.0, 1.5);
    let tol = 1e-9;
    let sol = iterate(&g, &mesh, &scheme, kappa, tol, 200, None).unwrap();
    assert!(sol.converged);
    let next = apply_t(&sol.value, &g, &scheme).unwrap();
    let r = next.sub(&sol.value).unwrap();
    assert!(bielecki_norm(&r, Some(&dx(&r)), kappa).unwrap() <= 2.0 * tol);

    let mut u = GridFunction::from_fn(mesh, |x, t| (x - t).sin());
    for _ in 0..4 {
        u = apply_t(&u, &g, &scheme).unwrap();
        for j in 0..mesh.n_t {
            assert_eq!(u.get(j, 0), spec.boundary.lateral(mesh.t(j)));
        }
        for i in 0..mesh.n_x {
            assert_eq!(u.get(mesh.n_t - 1, i), spec.boundary.terminal(mesh.x(i)));
        }
    }
}
