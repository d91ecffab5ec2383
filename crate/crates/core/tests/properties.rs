use proptest::prelude::*;

use oufield::basis::{decompose_index, schauder_pairing, synthesize, truncation_count, DyadicGrid};
use oufield::ou_field::{uniform_times, InitialLaw, PathSimulator};
use oufield::parallel::map_paths;
use oufield::rng::rng_stream;
use oufield::spectrum::SpectrumSpec;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn pairing_recovers_synthesized_coefficients(
        d in 1usize..4,
        level in 0u32..5,
        extra in 0u32..3,
        seed in any::<u64>(),
    ) {
        let n = truncation_count(level, d);
        let mut s = rng_stream(seed, 0, 0);
        let coeffs: Vec<f64> = (0..n).map(|_| s.next_normal()).collect();
        let field = synthesize(&coeffs, d, DyadicGrid::new(level + 1 + extra).unwrap()).unwrap();
        for (k, c) in coeffs.iter().enumerate() {
            let got = schauder_pairing(&decompose_index(k + 1, d).unwrap(), &field).unwrap();
            prop_assert!((got - c).abs() < 1e-11, "i = {}: {} vs {}", k + 1, got, c);
        }
    }

    #[test]
    fn truncations_share_coordinates(
        seed in any::<u64>(),
        path in 0u64..1000,
        alpha in 0.0f64..0.5,
        stationary in any::<bool>(),
    ) {
        let spec = SpectrumSpec::power_law(1.0, alpha, 1).unwrap();
        let times = uniform_times(0.125, 8);
        let law = if stationary { InitialLaw::Stationary } else { InitialLaw::zeros() };
        let small = PathSimulator::new(&spec, 4, times.clone(), seed).unwrap().with_initials(law.clone());
        let big = PathSimulator::new(&spec, 16, times, seed).unwrap().with_initials(law);
        let (a, b) = (small.simulate(path), big.simulate(path));
        for i in 1..=4 {
            prop_assert_eq!(a.coordinate_series(i), b.coordinate_series(i));
        }
    }

    #[test]
    fn map_paths_ignores_pool_size(workers in 1usize..6, n in 0usize..300, seed in any::<u64>()) {
        let job = || map_paths(n, |p| rng_stream(seed, p as u64, 3).next_normal());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(workers).build().unwrap();
        let serial = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        prop_assert_eq!(pool.install(job), serial.install(job));
    }
}
