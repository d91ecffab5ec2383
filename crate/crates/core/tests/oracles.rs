//! Cross-module checks against closed forms and independent oracles.

use approx::assert_abs_diff_eq;

use oufield::basis::{decompose_index, norm, synthesize, DyadicGrid, NormKind};
use oufield::extremes::{norming_constants, tail_fbar, TailModel};
use oufield::ou_field::{transition, uniform_times, InitialLaw, PathSimulator};
use oufield::quadvar::{
    pi_norm_l1, scalar_qv_partition, theta_l1_quadrature, theta_mc, theta_tensor_closed_form, Partition,
};
use oufield::semigroup::{catalog, mehler_expectation, pathwise_expectation};
use oufield::spectrum::{SpectrumSpec, Verdict};

fn reference() -> SpectrumSpec {
    SpectrumSpec::power_law(1.0, 0.25, 1).unwrap()
}

#[test]
fn reference_spectrum_satisfies_every_condition() {
    let s = reference();
    for r in [
        s.check_closability(20).unwrap(),
        s.check_qv_condition(&[], 20).unwrap(),
        s.check_approx_condition(&[], 20).unwrap(),
    ] {
        assert_eq!(r.verdict, Verdict::ConvergesAnalytically, "{}", r.id.as_str());
    }
    let steep = SpectrumSpec::power_law(1.0, 0.75, 1).unwrap();
    assert_eq!(
        steep.check_qv_condition(&[], 20).unwrap().verdict,
        Verdict::DivergesAnalytically
    );
}

#[test]
fn worked_index_decomposition() {
    let idx = decompose_index(26, 2).unwrap();
    assert_eq!((idx.r, idx.j, idx.m()), (13, 2, Some(3)));
}

#[test]
fn single_term_theta_agrees_across_estimators() {
    let spec = SpectrumSpec::degenerate(vec![2.0, 0.0], 1).unwrap();
    let grid = DyadicGrid::new(4).unwrap();
    let q = theta_l1_quadrature(&spec, 0, 4).unwrap();
    assert_abs_diff_eq!(q.value, 1.0, epsilon = 1e-12);
    let sup = theta_mc(&spec, 0, NormKind::Sup, grid, 40_000, 3).unwrap();
    assert!(sup.z_to(4.0) < 3.5, "{sup:?}");
    let l1 = theta_mc(&spec, 0, NormKind::L1, grid, 40_000, 4).unwrap();
    assert!(l1.z_to(1.0) < 3.5, "{l1:?}");

    let k = theta_tensor_closed_form(&spec, 0, grid).unwrap();
    let nodes = grid.nodes();
    for (p, u) in nodes.iter().enumerate() {
        for (q, v) in nodes.iter().enumerate() {
            assert_abs_diff_eq!(k.at(p, q, 1, 1), 4.0 * u * v, epsilon = 1e-12);
        }
    }
    assert_abs_diff_eq!(pi_norm_l1(&k), 1.0, epsilon = 1e-12);
}

#[test]
fn mehler_and_paths_reproduce_gaussian_moments() {
    let spec = SpectrumSpec::explicit(vec![1.0; 4], 1).unwrap();
    let quad = catalog("quadratic").unwrap();
    let lin = catalog("linear").unwrap();
    let target = 1.0 - (-2.0f64).exp();
    let m = mehler_expectation(quad.as_ref(), &[], &spec, 1.0, 100_000, 9).unwrap();
    assert!(m.z_to(target) < 3.5, "{m:?}");
    let p = pathwise_expectation(quad.as_ref(), &[], &spec, 1.0, 4, 40_000, 10).unwrap();
    assert!(p.z_to(target) < 3.5, "{p:?}");
    let mean = mehler_expectation(lin.as_ref(), &[1.0], &spec, 1.0, 100_000, 11).unwrap();
    assert!(mean.z_to((-1.0f64).exp()) < 3.5, "{mean:?}");
}

#[test]
fn single_coordinate_partition_qv_is_scalar_realized_variance() {
    // Only S_1(s) = s is active, so the sup norm of the field is |G_1| and
    // the QV limit is 2 lambda_1 t.
    let spec = SpectrumSpec::degenerate(vec![1.5, 0.0], 1).unwrap();
    let sim = PathSimulator::new(&spec, 2, uniform_times(1.0 / 512.0, 512), 5)
        .unwrap()
        .with_initials(InitialLaw::Stationary);
    let part = Partition::uniform(1.0, 512).unwrap();
    let grid = DyadicGrid::new(2).unwrap();
    let q = &scalar_qv_partition(&sim, 400, &part, grid, &[NormKind::Sup]).unwrap()[0];
    let term = q.terminal();
    // The partition sum has a small negative bias of order lambda^2 h.
    assert!((term.mean - 3.0).abs() < 4.0 * term.se + 0.02, "{term:?}");
}

#[test]
fn synthesized_norms_match_closed_forms() {
    let grid = DyadicGrid::new(6).unwrap();
    let mut c = vec![0.0; 4];
    c[2] = 1.0;
    assert_abs_diff_eq!(
        norm(&synthesize(&c, 1, grid).unwrap(), NormKind::Sup),
        2f64.powf(-1.5),
        epsilon = 1e-15
    );
    let root = synthesize(&[1.0], 1, grid).unwrap();
    assert_abs_diff_eq!(norm(&root, NormKind::L1), 0.5, epsilon = 1e-15);
}

#[test]
fn transition_moments() {
    let (a, b) = transition(1.0, 0.5);
    assert_abs_diff_eq!(a, (-0.5f64).exp(), epsilon = 1e-15);
    assert_abs_diff_eq!(b, (1.0 - (-1.0f64).exp()).sqrt(), epsilon = 1e-15);
    assert_abs_diff_eq!(a * a + b * b, 1.0, epsilon = 1e-15);
}

#[test]
fn norming_constants_invert_the_tail() {
    let model = TailModel::new(1.0, 1.0).unwrap();
    let c = norming_constants(&model, 100).unwrap();
    assert_abs_diff_eq!(c.d_n, 2.68843, epsilon = 1e-5);
    assert_abs_diff_eq!(c.c_n, 0.30706, epsilon = 1e-5);
    assert_abs_diff_eq!(tail_fbar(&model, c.d_n).unwrap() * 100.0, 1.0, epsilon = 1e-10);
}
