//! Keyed, counter-based random streams.
//!
//! Every Monte Carlo draw in the crate comes from a stream addressed by
//! `(seed, path_id, stream_id)`. The stream is a ChaCha8 keystream whose key
//! packs the seed and path id and whose 64-bit stream selector is the stream
//! id, so results never depend on scheduling or on how many workers run.
//! Normal variates use inversion so each draw consumes exactly one `u64`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Offset added to a coordinate index to address its auxiliary noise stream.
pub const AUX_STREAM: u64 = 1 << 32;
/// Offset for per-path random initial conditions.
pub const INITIAL_STREAM: u64 = 2 << 32;
/// Offset for streams that are not tied to a basis coordinate.
pub const MISC_STREAM: u64 = 3 << 32;

const DOMAIN_TAG: &[u8; 8] = b"oufield\0";

/// A deterministic stream of uniform and standard normal variates.
#[derive(Clone, Debug)]
pub struct NormalStream {
    rng: ChaCha8Rng,
}

/// Opens the stream addressed by `(seed, path_id, stream_id)`.
pub fn rng_stream(seed: u64, path_id: u64, stream_id: u64) -> NormalStream {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&path_id.to_le_bytes());
    key[16..24].copy_from_slice(DOMAIN_TAG);
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(stream_id);
    NormalStream { rng }
}

impl NormalStream {
    /// Uniform variate in the open interval (0, 1).
    #[inline]
    pub fn next_uniform(&mut self) -> f64 {
        ((self.rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9_007_199_254_740_992.0)
    }

    #[inline]
    pub fn next_normal(&mut self) -> f64 {
        inverse_normal_cdf(self.next_uniform())
    }

    pub fn fill_normal(&mut self, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = self.next_normal();
        }
    }
}

/// Standard normal quantile function (Acklam's rational approximation,
/// relative error below 1.2e-9 over (0, 1)).
pub fn inverse_normal_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    let tail = |q: f64| {
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    if p < P_LOW {
        tail((-2.0 * p.ln()).sqrt())
    } else if p <= 1.0 - P_LOW {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        -tail((-2.0 * (1.0 - p).ln()).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{ks_critical_1pct, ks_statistic, normal_cdf};

    #[test]
    fn same_key_same_draws() {
        let mut a = rng_stream(42, 7, 3);
        let mut b = rng_stream(42, 7, 3);
        for _ in 0..1_000_000 {
            assert_eq!(a.next_normal().to_bits(), b.next_normal().to_bits());
        }
    }

    #[test]
    fn adjacent_keys_uncorrelated() {
        let n = 100_000;
        for (k1, k2) in [((1, 0, 0), (1, 1, 0)), ((1, 0, 0), (1, 0, 1)), ((1, 0, 0), (2, 0, 0))] {
            let mut a = rng_stream(k1.0, k1.1, k1.2);
            let mut b = rng_stream(k2.0, k2.1, k2.2);
            let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
            for _ in 0..n {
                let (x, y) = (a.next_normal(), b.next_normal());
                sab += x * y;
                saa += x * x;
                sbb += y * y;
            }
            let corr = sab / (saa * sbb).sqrt();
            assert!(corr.abs() < 4.0 / (n as f64).sqrt(), "corr {corr}");
        }
    }

    #[test]
    fn marginal_is_standard_normal() {
        let mut s = rng_stream(9, 0, 0);
        let mut v: Vec<f64> = (0..100_000).map(|_| s.next_normal()).collect();
        let d = ks_statistic(&mut v, normal_cdf);
        assert!(d < ks_critical_1pct(100_000), "KS {d}");
    }

    #[test]
    fn quantile_matches_cdf() {
        for &p in &[1e-12, 1e-6, 0.01, 0.02425, 0.3, 0.5, 0.77, 0.99, 1.0 - 1e-9] {
            let x = inverse_normal_cdf(p);
            // A relative error of 1.2e-9 in x maps to roughly x^2 * 1.2e-9 in p.
            let tol = 1.2e-9 * (1.0 + x * x) * 1.5;
            assert!(((normal_cdf(x) - p) / p.min(1.0 - p)).abs() < tol, "p={p}");
        }
    }
}
