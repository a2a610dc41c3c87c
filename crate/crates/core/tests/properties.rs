//! Property tests for the invariants of every module.

use proptest::prelude::*;
use spde_core::analysis::{
    chain_rule_eval, faa_di_bruno_terms, interpolation_check, interpolation_product, interpolation_product_argmax,
};
use spde_core::model::{
    gamma_norm_closed, gaussian_moment_constant, growth_and_lipschitz_certify, Certifiable, DiffusionSpec,
    NonlinearTerm, NonlinearitySpec, ScalarFunction, SeparableFunction,
};
use spde_core::operator::{galerkin_matrix, EllipticOperator};
use spde_core::rng;
use spde_core::solver::{sample_wiener_path, PicardOptions, Solver, SolverConfig};
use spde_core::spectral::{
    derivative, forward_transform, fractional_sobolev_norm, lp_norm, sobolev_norm, MultiIndex, SpectralField, TrigKind,
    TrigPolynomial,
};

fn cases(n: u32) -> ProptestConfig {
    ProptestConfig { cases: n, ..ProptestConfig::default() }
}

fn field(seed: u64, dim: usize, cutoff: usize, decay: f64) -> SpectralField {
    rng::random_field(&mut rng::stream(seed, &[dim as u64, cutoff as u64]), dim, cutoff, decay)
}

fn max_rel(a: &SpectralField, b: &SpectralField) -> f64 {
    a.sub(b).unwrap().energy().sqrt() / b.energy().sqrt().max(f64::MIN_POSITIVE)
}

fn catalog(index: usize, scale: f64) -> ScalarFunction {
    match index % 5 {
        0 => ScalarFunction::tanh(scale),
        1 => ScalarFunction::atan(scale),
        2 => ScalarFunction::Sine { amplitude: scale, frequency: 0.7 },
        3 => ScalarFunction::linear(scale),
        _ => ScalarFunction::clamped_polynomial(vec![0.2, scale, -0.3], 2.0),
    }
}

// ---------------------------------------------------------------------------
// spectral
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn grid_round_trip_is_the_identity(seed in any::<u64>(), dim in 1usize..=3, cutoff in 1usize..=6, extra in 0usize..3) {
        let cutoff = if dim == 3 { cutoff.min(3) } else { cutoff };
        let u = field(seed, dim, cutoff, 0.0);
        let points = 2 * cutoff + 2 + 2 * extra;
        let back = forward_transform(&u.to_grid(points).unwrap(), cutoff).unwrap();
        prop_assert!(max_rel(&back, &u) < 1e-12);
    }

    #[test]
    fn parseval(seed in any::<u64>(), dim in 1usize..=2, cutoff in 1usize..=8) {
        let u = field(seed, dim, cutoff, 1.0);
        let l2 = lp_norm(&u, 2.0).unwrap();
        prop_assert!((l2 * l2 - u.energy()).abs() <= 1e-12 * u.energy());
    }

    #[test]
    fn derivatives_compose_exactly(seed in any::<u64>(), a in prop::collection::vec(0u32..3, 2), b in prop::collection::vec(0u32..3, 2)) {
        let u = field(seed, 2, 5, 0.5);
        let (a, b) = (MultiIndex::new(a), MultiIndex::new(b));
        let lhs = derivative(&derivative(&u, &b).unwrap(), &a).unwrap();
        let rhs = derivative(&u, &a.checked_add(&b).unwrap()).unwrap();
        prop_assert!(max_rel(&lhs, &rhs) <= 1e-14);
    }

    #[test]
    fn fractional_and_integer_sobolev_norms_are_equivalent(seed in any::<u64>(), dim in 1usize..=2, m in 1usize..=2, l in 1u32..=2) {
        let op = EllipticOperator::diagonal(l, 1.0, 1.0);
        let u = field(seed, dim, 6, 1.0);
        let frac = fractional_sobolev_norm(&u, m as f64 / (2.0 * l as f64), 2.0, &op).unwrap();
        let int = sobolev_norm(&u, m, 2.0).unwrap();
        let ratio = frac / int;
        prop_assert!((0.25..=4.0).contains(&ratio), "ratio {}", ratio);
    }
}

// ---------------------------------------------------------------------------
// operator
// ---------------------------------------------------------------------------

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn semigroup_law(seed in any::<u64>(), s in 0.0f64..1.0, t in 0.0f64..1.0, l in 1u32..=2) {
        let op = EllipticOperator::diagonal(l, 0.2, 1.0);
        let d = op.discretize(1, 8).unwrap();
        let u = field(seed, 1, 8, 0.0);
        let lhs = d.semigroup(s, &d.semigroup(t, &u).unwrap()).unwrap();
        let rhs = d.semigroup(s + t, &u).unwrap();
        prop_assert!(lhs.sub(&rhs).unwrap().energy().sqrt() <= 1e-11 * u.energy().sqrt());
    }

    #[test]
    fn powers_commute_with_the_semigroup(seed in any::<u64>(), delta in 0.0f64..1.5, t in 0.0f64..0.5) {
        let d = EllipticOperator::diagonal(1, 0.5, 1.0).discretize(2, 4).unwrap();
        let u = field(seed, 2, 4, 0.0);
        let a = d.power(delta, &d.semigroup(t, &u).unwrap()).unwrap();
        let b = d.semigroup(t, &d.power(delta, &u).unwrap()).unwrap();
        // Diagonal multipliers commute up to the order of two roundings.
        for (x, y) in a.coefficients().iter().zip(b.coefficients()) {
            prop_assert!((x - y).norm() <= 4.0 * f64::EPSILON * x.norm());
        }
    }

    #[test]
    fn power_law(seed in any::<u64>(), d1 in 0.0f64..1.0, d2 in 0.0f64..1.0) {
        let d = EllipticOperator::diagonal(1, 0.3, 1.0).discretize(1, 8).unwrap();
        let u = field(seed, 1, 8, 2.0);
        let lhs = d.power(d1, &d.power(d2, &u).unwrap()).unwrap();
        let rhs = d.power(d1 + d2, &u).unwrap();
        prop_assert!(max_rel(&lhs, &rhs) <= 1e-12);
    }

    #[test]
    fn identity_coefficients_reduce_to_the_diagonal_symbol(dim in 1usize..=2, mu in 0.1f64..3.0) {
        let coeffs: Vec<Vec<TrigPolynomial>> = (0..dim)
            .map(|i| (0..dim).map(|j| TrigPolynomial::constant(if i == j { 1.0 } else { 0.0 })).collect())
            .collect();
        let op = EllipticOperator::divergence_form(coeffs, mu);
        let cutoff = 3;
        let g = galerkin_matrix(&op, dim, cutoff).unwrap();
        let diag = EllipticOperator::diagonal(1, 1.0, mu);
        let field = SpectralField::zeros(dim, cutoff);
        for (i, k) in g.modes.iter().enumerate() {
            let expected = -diag.symbol(k).unwrap();
            prop_assert!((g.matrix[(i, i)].re - expected).abs() <= 1e-10 * expected.abs());
            prop_assert!(field.index_of(k).is_some());
        }
        prop_assert!(g.hermitian_defect() <= 1e-12);
    }
}

// ---------------------------------------------------------------------------
// model
// ---------------------------------------------------------------------------

fn diffusion_suite(index: usize, scale: f64) -> DiffusionSpec {
    DiffusionSpec::new(vec![
        SeparableFunction::new(TrigPolynomial::constant(1.0).plus(0.5, vec![1], TrigKind::Cos), catalog(index, scale)),
        SeparableFunction::new(TrigPolynomial::sin(0.7, vec![2]), catalog(index + 1, 1.0)),
    ])
}

proptest! {
    #![proptest_config(cases(48))]

    #[test]
    fn gamma_norm_has_linear_growth(seed in any::<u64>(), index in 0usize..5, amp in 0.0f64..20.0, p in prop::sample::select(vec![2.0, 3.0, 4.0])) {
        let spec = diffusion_suite(index, 1.3);
        let cert = growth_and_lipschitz_certify(Certifiable::Diffusion(&spec)).unwrap();
        let z = field(seed, 1, 6, 1.0).scale(amp);
        let g = gamma_norm_closed(&spec, &z, p).unwrap();
        // ‖Σσ_i²‖_{p/2} ≤ C_growth ‖1 + z²‖_{p/2} ≤ C_growth (1 + ‖z‖_p²), times the Gaussian constant.
        let c = cert.c_growth * gaussian_moment_constant(p).unwrap().powi(2);
        prop_assert!(g * g <= c * (1.0 + lp_norm(&z, p).unwrap().powi(2)) * (1.0 + 1e-12));
    }

    #[test]
    fn lipschitz_constants_transfer_to_lp(seed in any::<u64>(), index in 0usize..5, scale in 0.2f64..3.0, p in 2.0f64..6.0) {
        let f = catalog(index, scale);
        let spec = NonlinearitySpec::single(1.0, MultiIndex::zero(1), f.clone());
        let cert = growth_and_lipschitz_certify(Certifiable::Nonlinearity(&spec)).unwrap();
        let z1 = field(seed, 1, 6, 1.0).scale(3.0).quadrature_grid();
        let z2 = field(seed ^ 1, 1, 6, 1.0).scale(3.0).quadrature_grid();
        let diff_f: Vec<f64> = z1.values().iter().zip(z2.values()).map(|(a, b)| f.value(*a) - f.value(*b)).collect();
        let diff_z: Vec<f64> = z1.values().iter().zip(z2.values()).map(|(a, b)| a - b).collect();
        let norm = |v: &[f64]| (v.iter().map(|x| x.abs().powf(p)).sum::<f64>() / v.len() as f64).powf(1.0 / p);
        prop_assert!(norm(&diff_f) <= cert.c_lip * norm(&diff_z) * (1.0 + 1e-12));
    }

    #[test]
    fn nonlinearity_is_additive_in_terms(seed in any::<u64>(), a in 0usize..5, b in 0usize..5, ca in -2.0f64..2.0, cb in -2.0f64..2.0) {
        let u = field(seed, 1, 6, 1.0);
        let t1 = NonlinearTerm { coefficient: ca, alpha: MultiIndex::zero(1), function: catalog(a, 1.0) };
        let t2 = NonlinearTerm { coefficient: cb, alpha: MultiIndex::new([1]), function: catalog(b, 0.5) };
        let both = NonlinearitySpec::new(vec![t1.clone(), t2.clone()]).evaluate(&u).unwrap();
        let sum = NonlinearitySpec::new(vec![t1]).evaluate(&u).unwrap().add(&NonlinearitySpec::new(vec![t2]).evaluate(&u).unwrap()).unwrap();
        prop_assert_eq!(both, sum);
    }
}

// ---------------------------------------------------------------------------
// analysis
// ---------------------------------------------------------------------------

fn bell(n: usize) -> u64 {
    // Bell triangle.
    let mut row = vec![1u64];
    for _ in 1..n {
        let mut next = vec![*row.last().unwrap()];
        for v in &row {
            next.push(next.last().unwrap() + v);
        }
        row = next;
    }
    *row.last().unwrap()
}

#[test]
fn chain_rule_constant_totals_are_bell_numbers() {
    for n in 1..=7 {
        let total: u64 = faa_di_bruno_terms(&MultiIndex::new([n as u32])).unwrap().iter().map(|t| t.constant).sum();
        assert_eq!(total, bell(n), "n = {n}");
    }
}

proptest! {
    #![proptest_config(cases(32))]

    #[test]
    fn chain_rule_matches_spectral_differentiation_of_the_composition(seed in any::<u64>(), index in 0usize..4, order in 1u32..=3) {
        // Band-limited inner field and a polynomial outer function keep the
        // composition inside the dealiased range.
        let f = field(seed, 1, 2, 0.0).scale(0.5).with_cutoff(12);
        let g = match index {
            0 => ScalarFunction::linear(1.5),
            1 => ScalarFunction::clamped_polynomial(vec![0.1, -0.4, 0.3], 50.0),
            2 => ScalarFunction::clamped_polynomial(vec![0.0, 1.0, 0.5], 50.0),
            _ => ScalarFunction::clamped_polynomial(vec![1.0, 0.0, -0.2], 50.0),
        };
        let gamma = MultiIndex::new([order]);
        let composed = forward_transform(&f.quadrature_grid().map(|v| g.value(v)), 12).unwrap();
        let expected = derivative(&composed, &gamma).unwrap();
        let got = chain_rule_eval(&g, &f, &gamma).unwrap();
        prop_assert!(max_rel(&got, &expected) <= 1e-8, "{}", max_rel(&got, &expected));
    }

    #[test]
    fn interpolation_endpoints_are_exact(seed in any::<u64>(), m in 2usize..=4, p in 2.0f64..4.0) {
        let f = field(seed, 1, 6, 1.0);
        let low = interpolation_check(&f, m, p, &MultiIndex::new([1])).unwrap();
        prop_assert_eq!(low.theta, 0.0);
        prop_assert!(low.lhs <= low.rhs * (1.0 + 1e-10));
        let high = interpolation_check(&f, m, p, &MultiIndex::new([m as u32])).unwrap();
        prop_assert_eq!(high.theta, 1.0);
        prop_assert!(high.lhs <= high.rhs * (1.0 + 1e-10));
    }

    #[test]
    fn interpolation_product_peaks_at_an_endpoint(a in 0.01f64..100.0, b in 0.01f64..100.0, m in 2usize..=8) {
        let best = (1..=m).map(|x| interpolation_product(a, b, m, x)).fold(f64::NEG_INFINITY, f64::max);
        let ends = interpolation_product(a, b, m, 1).max(interpolation_product(a, b, m, m));
        prop_assert!(best <= ends * (1.0 + 1e-12));
        let arg = interpolation_product_argmax(a, b, m);
        prop_assert!(arg == 1 || arg == m);
    }
}

// ---------------------------------------------------------------------------
// solver
// ---------------------------------------------------------------------------

fn nonlinear_config(horizon: f64) -> SolverConfig {
    spde_core::harness::contraction_suite(horizon)
}

proptest! {
    #![proptest_config(cases(12))]

    #[test]
    fn scheme_is_adapted(seed in any::<u64>(), cut in 1usize..127, bump in -3.0f64..3.0) {
        let cfg = nonlinear_config(0.2);
        let s = Solver::new(&cfg).unwrap();
        let u0 = spde_core::analysis::unit_sine(1).to_field(1, cfg.cutoff).unwrap();
        let path = sample_wiener_path(2, cfg.horizon, cfg.steps, seed, 0).unwrap();
        let mut fine = path.increments().to_vec();
        for x in &mut fine[cut * 2..] {
            *x += bump;
        }
        let bumped = spde_core::solver::WienerPath::from_increments(2, path.dt(), fine).unwrap();
        let opts = PicardOptions { max_levels: 3, stop_on_convergence: false, ..s.picard_options() };
        let a = s.picard_solve(&path, &u0, opts).unwrap();
        let b = s.picard_solve(&bumped, &u0, opts).unwrap();
        for (x, y) in a.trajectories.iter().zip(&b.trajectories) {
            prop_assert_eq!(&x.states[..=cut], &y.states[..=cut]);
        }
    }

    #[test]
    fn picard_levels_share_one_path_and_contract(seed in any::<u64>()) {
        let cfg = nonlinear_config(0.1);
        let s = Solver::new(&cfg).unwrap();
        let u0 = spde_core::analysis::unit_sine(1).to_field(1, cfg.cutoff).unwrap();
        let path = sample_wiener_path(2, cfg.horizon, cfg.steps, seed, 0).unwrap();
        let before = path.hash();
        let opts = PicardOptions { stop_on_convergence: false, ..s.picard_options() };
        let mut seen = Vec::new();
        let summary = s.picard_iterate(&path, &u0, opts, |t| {
            seen.push(t.path);
            Ok(())
        }).unwrap();
        prop_assert_eq!(path.hash(), before);
        prop_assert!(seen.iter().all(|&p| p == path.path_index()));
        let floor = 1e-10 * summary.deltas[0];
        for n in 1..summary.deltas.len() - 1 {
            if summary.deltas[n + 1] > floor {
                prop_assert!(summary.deltas[n + 1] <= summary.deltas[n], "{:?}", summary.deltas);
            }
        }
    }

    #[test]
    fn partitioned_linear_flow_matches_a_single_solve(seed in any::<u64>(), pieces in prop::sample::select(vec![2usize, 4, 8])) {
        let mut cfg = nonlinear_config(0.4);
        cfg.nonlinearity = NonlinearitySpec::default();
        cfg.diffusion = DiffusionSpec::constant(0.0);
        cfg.diffusion.components.clear();
        let s = Solver::new(&cfg).unwrap();
        let u0 = field(seed, 1, cfg.cutoff, 1.0);
        let path = sample_wiener_path(0, cfg.horizon, cfg.steps, seed, 0).unwrap();
        let whole = s.partitioned_solve(&path, &u0, cfg.horizon, s.picard_options()).unwrap();
        let split = s.partitioned_solve(&path, &u0, cfg.horizon / pieces as f64, s.picard_options()).unwrap();
        for (a, b) in whole.states.iter().zip(&split.states) {
            prop_assert!(a.sub(b).unwrap().energy().sqrt() <= 1e-12 * u0.energy().sqrt());
        }
    }
}

#[test]
fn mean_square_increments_vanish_with_the_lag() {
    let cfg = nonlinear_config(0.5);
    let s = Solver::new(&cfg).unwrap();
    let u0 = spde_core::analysis::unit_sine(1).to_field(1, cfg.cutoff).unwrap();
    let trajectories: Vec<_> = (0..40)
        .map(|i| s.direct(&sample_wiener_path(2, cfg.horizon, cfg.steps, 99, i).unwrap(), &u0).unwrap())
        .collect();
    let msi = |lag: usize| {
        let mut acc = 0.0;
        let mut count = 0.0;
        for t in &trajectories {
            for j in 0..t.states.len() - lag {
                acc += t.states[j + lag].sub(&t.states[j]).unwrap().energy();
                count += 1.0;
            }
        }
        acc / count
    };
    let values: Vec<f64> = [32, 16, 8, 4, 2, 1].iter().map(|&l| msi(l)).collect();
    for w in values.windows(2) {
        assert!(w[1] < w[0], "{values:?}");
    }
    assert!(values[5] < 0.1 * values[0], "{values:?}");
}
