//! Running maxima of Ornstein–Uhlenbeck coordinates: the von Mises tail
//! `F-bar`, norming constants, Gumbel convergence and moment bounds.
//!
//! With `psi(s, x) = phi(x a(s))`, `a(s)^2 = (s + 1) / s` and
//! `mu(ds) = (s + 2) / (2 s^{1/2} (s + 1)^{3/2}) ds` on `(0, S]`, write
//! `J_k(x) = int psi a^{2k} mu`. Then `F-bar = x J_1`,
//! `F-bar' = J_1 - x^2 J_2` and `F-bar'' = -3 x J_2 + x^3 J_3`.
//! All integrals use `s = e^y - 1`, which spreads the mass near `s = 0`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::ou_field::transition;
use crate::parallel::map_paths;
use crate::quad::{composite, legendre_unit, Rule};
use crate::rng::{rng_stream, MISC_STREAM};
use crate::spectrum::SpectrumSpec;
use crate::stats::{gumbel_cdf, ks_statistic, normal_pdf, normal_sf, Estimate};

const RULE_POINTS: usize = 8;
const GRADED_SEGMENTS: usize = 64;

/// Tail model of `max_{t <= T} (G(lambda t) - G(0) e^{-lambda t})`.
#[derive(Clone, Debug)]
pub struct TailModel {
    lambda: f64,
    horizon: f64,
    panels: usize,
    rule: Rule,
}

impl TailModel {
    pub fn new(lambda: f64, horizon: f64) -> Result<Self> {
        Self::with_panels(lambda, horizon, 2048)
    }

    pub fn with_panels(lambda: f64, horizon: f64, panels: usize) -> Result<Self> {
        if !(lambda >= 1.0) || !lambda.is_finite() {
            return Err(domain("lambda", "the tail model requires lambda >= 1"));
        }
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(domain("T", "horizon must be positive"));
        }
        if panels == 0 {
            return Err(domain("panels", "at least one panel is required"));
        }
        Ok(Self {
            lambda,
            horizon,
            panels,
            rule: legendre_unit(RULE_POINTS)?,
        })
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn panels(&self) -> usize {
        self.panels
    }

    /// `S = e^{2 lambda T} - 1`.
    pub fn s_upper(&self) -> f64 {
        (2.0 * self.lambda * self.horizon).exp_m1()
    }

    fn y_upper(&self) -> f64 {
        2.0 * self.lambda * self.horizon
    }

    fn refined(&self) -> Self {
        Self {
            panels: 2 * self.panels,
            ..self.clone()
        }
    }

    /// `int_0^{ln(S+1)} g(s(y)) (s+1) dy`. The range is cut into dyadic
    /// segments `[Y 2^{-k-1}, Y 2^{-k}]` so that the peak near `s = x^2`
    /// is resolved for small `x`; each segment gets `panels / 32` panels.
    fn integrate_s(&self, g: impl Fn(f64) -> f64) -> f64 {
        let per = (self.panels / 32).max(1);
        let mut hi = self.y_upper();
        let mut total = 0.0;
        for _ in 0..GRADED_SEGMENTS {
            let lo = 0.5 * hi;
            total += composite(&self.rule, lo, hi, per, |y| {
                let s = y.exp_m1();
                g(s) * (s + 1.0)
            });
            hi = lo;
        }
        total
    }

    /// `J_k(x)`.
    fn j(&self, k: i32, x: f64) -> f64 {
        self.integrate_s(|s| {
            let a2 = (s + 1.0) / s;
            let mu = (s + 2.0) / (2.0 * s.sqrt() * (s + 1.0).powf(1.5));
            normal_pdf(x * a2.sqrt()) * a2.powi(k) * mu
        })
    }

    /// `F-bar(x)` in its defining form
    /// `int_0^S (1/2s) x a phi(x a) ds + Phi-bar(x a(S))`, without the
    /// convergence check of [`tail_fbar`].
    pub fn fbar_raw(&self, x: f64) -> f64 {
        let s_up = self.s_upper();
        let integral = self.integrate_s(|s| {
            let xa = x * ((s + 1.0) / s).sqrt();
            xa * normal_pdf(xa) / (2.0 * s)
        });
        integral + normal_sf(x * ((s_up + 1.0) / s_up).sqrt())
    }

    /// `F-bar` through `x J_1`.
    pub fn fbar_via_j(&self, x: f64) -> f64 {
        x * self.j(1, x)
    }

    pub fn fbar_prime_raw(&self, x: f64) -> f64 {
        self.j(1, x) - x * x * self.j(2, x)
    }

    pub fn fbar_second_raw(&self, x: f64) -> f64 {
        -3.0 * x * self.j(2, x) + x.powi(3) * self.j(3, x)
    }
}

fn check_x(x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(domain("x", "the tail is evaluated at x > 0"))
    }
}

/// Compares a value against the same computation on twice as many panels.
fn converged(coarse: f64, fine: f64) -> Result<f64> {
    let err = (fine - coarse).abs();
    if err <= 1e-9 * fine.abs() + 1e-300 {
        Ok(fine)
    } else {
        Err(Error::Quadrature {
            estimate: fine,
            error: err,
        })
    }
}

/// `F-bar(x)` with a panel-doubling error check.
pub fn tail_fbar(model: &TailModel, x: f64) -> Result<f64> {
    check_x(x)?;
    converged(model.fbar_raw(x), model.refined().fbar_raw(x))
}

/// `F-bar'(x) = J_1 - x^2 J_2` with a panel-doubling error check.
pub fn tail_fbar_prime(model: &TailModel, x: f64) -> Result<f64> {
    check_x(x)?;
    converged(model.fbar_prime_raw(x), model.refined().fbar_prime_raw(x))
}

/// `F-bar''(x) = -3 x J_2 + x^3 J_3` with a panel-doubling error check.
pub fn tail_fbar_second(model: &TailModel, x: f64) -> Result<f64> {
    check_x(x)?;
    converged(model.fbar_second_raw(x), model.refined().fbar_second_raw(x))
}

/// `F-bar F-bar'' / F-bar'^2`, with `F-bar''` from central differences of
/// `F-bar'`.
pub fn von_mises_ratio(model: &TailModel, x: f64) -> Result<f64> {
    check_x(x)?;
    let h = 1e-4 * x;
    let second = (tail_fbar_prime(model, x + h)? - tail_fbar_prime(model, x - h)?) / (2.0 * h);
    Ok(tail_fbar(model, x)? * second / tail_fbar_prime(model, x)?.powi(2))
}

/// Centering `d_n` and scaling `c_n` for maxima of `n` draws.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormingConstants {
    pub n: u64,
    pub c_n: f64,
    pub d_n: f64,
}

/// `d_n` solves `F-bar(d_n) = 1/n` by bisection; `c_n = F-bar(d_n) / (-F-bar'(d_n))`.
pub fn norming_constants(model: &TailModel, n: u64) -> Result<NormingConstants> {
    if n < 2 {
        return Err(domain("n", "norming constants need n >= 2"));
    }
    let target = 1.0 / n as f64;
    let f = |x: f64| model.fbar_raw(x);
    let mut lo = 1e-6;
    if f(lo) <= target {
        return Err(Error::Bracket(format!("F-bar({lo}) is already below 1/{n}")));
    }
    let mut hi = 1.0;
    while f(hi) > target {
        lo = hi;
        hi *= 2.0;
        if hi > 50.0 {
            return Err(Error::Bracket(format!("F-bar stays above 1/{n} up to x = 50")));
        }
    }
    let tol = 1e-10 * target;
    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let v = f(mid);
        if (v - target).abs() < tol {
            break;
        }
        if v > target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
    }
    let fbar = tail_fbar(model, mid)?;
    if (fbar - target).abs() >= tol {
        return Err(Error::Bracket(format!(
            "bisection stalled at x = {mid} with residual {}",
            (fbar - target).abs()
        )));
    }
    let slope = tail_fbar_prime(model, mid)?;
    Ok(NormingConstants {
        n,
        c_n: fbar / -slope,
        d_n: mid,
    })
}

/// Running maximum over `[0, T]` of `e^{-lambda t} W(e^{2 lambda t} - 1)` on
/// a grid of `steps` cells, driven by stream `(seed, path_id, stream)`.
pub fn running_max(lambda: f64, horizon: f64, steps: usize, seed: u64, path_id: u64, stream: u64) -> f64 {
    let (a, b) = transition(lambda, horizon / steps as f64);
    let mut rng = rng_stream(seed, path_id, stream);
    let mut g = 0.0;
    let mut best: f64 = 0.0;
    for _ in 0..steps {
        g = a * g + b * rng.next_normal();
        best = best.max(g);
    }
    best
}

/// Goodness of fit of normalized maxima to the standard Gumbel law.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GumbelReport {
    pub n: u64,
    pub samples: usize,
    pub steps: usize,
    pub constants: NormingConstants,
    pub ks: f64,
    pub median: f64,
}

/// Gumbel fit for several `n` at once. Sample `p` uses the coordinates
/// `0..max(n_list)` of path `p`, so the maxima for smaller `n` are maxima
/// over a prefix of the same coordinates.
pub fn gumbel_sweep(
    model: &TailModel,
    n_list: &[u64],
    samples: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<GumbelReport>> {
    if n_list.iter().any(|n| *n < 2) || steps == 0 {
        return Err(domain("n_list", "need n >= 2 and at least one time step"));
    }
    let constants = n_list
        .iter()
        .map(|&n| norming_constants(model, n))
        .collect::<Result<Vec<_>>>()?;
    let n_max = *n_list.iter().max().unwrap_or(&2);
    let (lambda, horizon) = (model.lambda(), model.horizon());
    let mut sorted: Vec<(usize, u64)> = n_list.iter().copied().enumerate().collect();
    sorted.sort_by_key(|(_, n)| *n);
    let maxima: Vec<Vec<f64>> = map_paths(samples, |p| {
        let mut out = vec![0.0; n_list.len()];
        let mut best = f64::NEG_INFINITY;
        let mut next = 0;
        for i in 0..n_max {
            best = best.max(running_max(lambda, horizon, steps, seed, p as u64, i));
            while next < sorted.len() && sorted[next].1 == i + 1 {
                out[sorted[next].0] = best;
                next += 1;
            }
        }
        out
    });
    Ok(n_list
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let c = constants[k];
            let mut z: Vec<f64> = maxima.iter().map(|m| (m[k] - c.d_n) / c.c_n).collect();
            let ks = ks_statistic(&mut z, gumbel_cdf);
            let median = if samples % 2 == 1 {
                z[samples / 2]
            } else {
                0.5 * (z[samples / 2 - 1] + z[samples / 2])
            };
            GumbelReport {
                n,
                samples,
                steps,
                constants: c,
                ks,
                median,
            }
        })
        .collect())
}

/// Gumbel fit for a single `n` on a grid of `2^12` cells.
pub fn gumbel_convergence_check(model: &TailModel, n: u64, samples: usize, seed: u64) -> Result<GumbelReport> {
    Ok(gumbel_sweep(model, &[n], samples, 1 << 12, seed)?.remove(0))
}

/// `E[(G*_{m,T})^k]` next to the bound shape
/// `(ln lambda_{d 2^{m+1}})^{k/2} + m^{k/2}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaxMoment {
    pub m: u32,
    pub k: u32,
    pub horizon: f64,
    pub estimate: Estimate,
    pub bound_shape: f64,
}

impl MaxMoment {
    pub fn ratio(&self) -> f64 {
        self.estimate.mean / self.bound_shape
    }
}

/// Monte Carlo moment of the level-`m` running maximum
/// `max { G_i(lambda_i t) - G_i(0) e^{-lambda_i t} : t <= T, d 2^m < i <= d 2^{m+1} }`.
#[allow(clippy::too_many_arguments)]
pub fn max_moment_estimate(
    spec: &SpectrumSpec,
    m: u32,
    horizon: f64,
    k: u32,
    samples: usize,
    steps: usize,
    seed: u64,
) -> Result<MaxMoment> {
    if !spec.supports_extremes() {
        return Err(domain("spectrum", "max-moment bounds require lambda_1 >= 1"));
    }
    if !(1..=4).contains(&k) {
        return Err(domain("k", "moment order must lie in 1..=4"));
    }
    if !(horizon > 0.0) || steps == 0 {
        return Err(domain("T", "need T > 0 and at least one time step"));
    }
    let d = spec.dim();
    let range = crate::basis::level_indices(m, d);
    let lambdas: Vec<(usize, f64)> = range
        .clone()
        .map(|i| spec.lambda_at(i).map(|l| (i, l)))
        .collect::<Result<_>>()?;
    let values = map_paths(samples, |p| {
        lambdas
            .iter()
            .map(|&(i, l)| running_max(l, horizon, steps, seed, p as u64, i as u64))
            .fold(0.0, f64::max)
            .powi(k as i32)
    });
    let top = spec.lambda_at(*range.end())?;
    let half = k as f64 / 2.0;
    Ok(MaxMoment {
        m,
        k,
        horizon,
        estimate: Estimate::from_samples(&values),
        bound_shape: top.ln().powf(half) + (m as f64).powf(half),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianMaxMoment {
    pub n: usize,
    pub k: u32,
    pub estimate: Estimate,
    /// `estimate / (ln n)^{k/2}`.
    pub log_ratio: f64,
    /// `estimate / (2 ln n)^{k/2}`.
    pub asymptotic_ratio: f64,
}

/// `E[max_{i<=n} |xi_i|^k]` over `samples` independent batches.
pub fn gaussian_max_moment(n: usize, k: u32, samples: usize, seed: u64) -> Result<GaussianMaxMoment> {
    if n < 2 || k == 0 {
        return Err(domain("n", "need n >= 2 and k >= 1"));
    }
    let values = map_paths(samples, |p| {
        let mut s = rng_stream(seed, p as u64, MISC_STREAM);
        (0..n).map(|_| s.next_normal().abs()).fold(0.0, f64::max).powi(k as i32)
    });
    let estimate = Estimate::from_samples(&values);
    let ln = (n as f64).ln();
    let half = k as f64 / 2.0;
    Ok(GaussianMaxMoment {
        n,
        k,
        estimate,
        log_ratio: estimate.mean / ln.powf(half),
        asymptotic_ratio: estimate.mean / (2.0 * ln).powf(half),
    })
}

/// Scaled norming constants at one `(lambda, n)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaScaling {
    pub lambda: f64,
    pub constants: NormingConstants,
    /// `c_n (sqrt(ln n) + sqrt(ln lambda))`.
    pub scaled_c: f64,
    /// `d_n / (sqrt(ln n) + sqrt(ln lambda))`.
    pub scaled_d: f64,
}

pub fn lambda_scaling(lambdas: &[f64], ns: &[u64], horizon: f64) -> Result<Vec<LambdaScaling>> {
    let mut rows = Vec::new();
    for &lambda in lambdas {
        let model = TailModel::new(lambda, horizon)?;
        for &n in ns {
            let c = norming_constants(&model, n)?;
            let shape = (n as f64).ln().sqrt() + lambda.ln().sqrt();
            rows.push(LambdaScaling {
                lambda,
                constants: c,
                scaled_c: c.c_n * shape,
                scaled_d: c.d_n / shape,
            });
        }
    }
    Ok(rows)
}

/// `max / min - 1` over a set of positive values.
pub fn relative_variation(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    max / min - 1.0
}
