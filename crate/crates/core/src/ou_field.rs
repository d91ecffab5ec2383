//! Exact simulation of the coordinate processes `G_i(lambda_i t)` and of the
//! field `X_t = sum_i G_i(lambda_i t) S_i`.
//!
//! Each coordinate is a stationary-generator Ornstein–Uhlenbeck process run
//! at speed `lambda_i`; between grid times it is advanced with its exact
//! Gaussian transition, never with an Euler step. Coordinate `i` of path `p`
//! draws from the stream `(seed, p, i)`, so truncation level and worker count
//! never change the value of a stored coordinate.

use serde::{Deserialize, Serialize};

use crate::basis::{self, DyadicGrid, GridField, NormKind};
use crate::error::{domain, Error, Result};
use crate::parallel::map_paths;
use crate::rng::{rng_stream, AUX_STREAM, INITIAL_STREAM, MISC_STREAM};
use crate::spectrum::SpectrumSpec;
use crate::stats::{log_log_slope, Estimate};

/// Exact transition of `G(lambda .)` over a time step `u`:
/// `g e^{-lambda u} + sqrt(1 - e^{-2 lambda u}) xi`.
#[inline]
pub fn ou_step(g: f64, lambda: f64, u: f64, xi: f64) -> f64 {
    let (decay, scale) = transition(lambda, u);
    g * decay + scale * xi
}

/// Contraction factor and noise scale of the transition over `u`.
#[inline]
pub fn transition(lambda: f64, u: f64) -> (f64, f64) {
    ((-lambda * u).exp(), (-(-2.0 * lambda * u).exp_m1()).max(0.0).sqrt())
}

/// Law of the initial coordinates `G_i(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", content = "values", rename_all = "snake_case")]
pub enum InitialLaw {
    /// Deterministic values; coordinates beyond the list start at zero.
    Fixed(Vec<f64>),
    /// Independent standard normal draws per path (the invariant law).
    Stationary,
}

impl Default for InitialLaw {
    fn default() -> Self {
        InitialLaw::Fixed(Vec::new())
    }
}

impl InitialLaw {
    pub fn zeros() -> Self {
        Self::default()
    }

    /// Initial coordinates of path `path_id`.
    pub fn sample(&self, n: usize, seed: u64, path_id: u64) -> Vec<f64> {
        match self {
            InitialLaw::Fixed(v) => (0..n).map(|i| v.get(i).copied().unwrap_or(0.0)).collect(),
            InitialLaw::Stationary => (0..n)
                .map(|i| rng_stream(seed, path_id, INITIAL_STREAM + i as u64).next_normal())
                .collect(),
        }
    }
}

/// Validates a time grid: finite, starting at 0, nondecreasing.
fn check_times(times: &[f64]) -> Result<()> {
    match times.first() {
        Some(t0) if *t0 == 0.0 => {}
        _ => return Err(domain("times", "time grid must start at t = 0")),
    }
    if let Some(pos) = times.windows(2).position(|w| !(w[1] >= w[0]) || !w[1].is_finite()) {
        return Err(Error::NonMonotoneTime { position: pos + 1 });
    }
    Ok(())
}

/// Step of a uniform grid starting at 0 (relative tolerance 1e-12), or
/// `None` if the grid is not uniform or has a single point.
pub fn uniform_step(times: &[f64]) -> Option<f64> {
    let k = times.len().checked_sub(1).filter(|k| *k > 0)?;
    let h = times[k] / k as f64;
    (h > 0.0
        && times
            .iter()
            .enumerate()
            .all(|(j, t)| (t - j as f64 * h).abs() <= 1e-12 * times[k]))
    .then_some(h)
}

/// Index of the grid time equal to `t` within an absolute 1e-12.
pub fn time_index(times: &[f64], t: f64) -> Option<usize> {
    let pos = times.partition_point(|x| *x < t - 1e-12);
    (pos < times.len() && (times[pos] - t).abs() <= 1e-12).then_some(pos)
}

/// Uniform time grid `0, h, ..., steps h`.
pub fn uniform_times(step: f64, steps: usize) -> Vec<f64> {
    (0..=steps).map(|j| j as f64 * step).collect()
}

/// The live state of `n` coordinates, advanced in place by exact steps.
#[derive(Clone, Debug)]
pub struct OuEnsemble {
    lambdas: Vec<f64>,
    t: f64,
    g: Vec<f64>,
}

impl OuEnsemble {
    pub fn new(spec: &SpectrumSpec, initials: Vec<f64>) -> Result<Self> {
        let lambdas = spec.lambdas(initials.len())?;
        Ok(Self {
            lambdas,
            t: 0.0,
            g: initials,
        })
    }

    pub fn time(&self) -> f64 {
        self.t
    }

    pub fn coords(&self) -> &[f64] {
        &self.g
    }

    /// Advances all coordinates by `u >= 0` using one standard normal each.
    pub fn advance(&mut self, u: f64, normals: &[f64]) -> Result<()> {
        if !(u >= 0.0) {
            return Err(domain("u", "time steps must be nonnegative"));
        }
        if normals.len() != self.g.len() {
            return Err(domain("normals", "one draw per coordinate is required"));
        }
        for ((g, &lam), &xi) in self.g.iter_mut().zip(&self.lambdas).zip(normals) {
            *g = ou_step(*g, lam, u, xi);
        }
        self.t += u;
        Ok(())
    }
}

/// Standard normals consumed by a simulation: `ou` drives the coordinate
/// transitions, `aux` is the independent complement used to rebuild the
/// martingale part. Both are stored step-major (`[step * n + i]`).
#[derive(Clone, Debug, PartialEq)]
pub struct NoiseRecord {
    pub ou: Vec<f64>,
    pub aux: Vec<f64>,
}

/// A simulated trajectory of the truncated field.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldPath {
    times: Vec<f64>,
    d: usize,
    lambdas: Vec<f64>,
    coords: Vec<f64>,
    noise: Option<NoiseRecord>,
}

impl FieldPath {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_coords(&self) -> usize {
        self.lambdas.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn noise(&self) -> Option<&NoiseRecord> {
        self.noise.as_ref()
    }

    /// Coordinates `G_i(lambda_i t_j)`, `i = 1..=n`, at time index `j`.
    pub fn coords_at(&self, j: usize) -> &[f64] {
        let n = self.n_coords();
        &self.coords[j * n..(j + 1) * n]
    }

    /// `G_i(lambda_i t_j)` for all stored times.
    pub fn coordinate_series(&self, i: usize) -> Vec<f64> {
        let n = self.n_coords();
        (0..self.times.len()).map(|j| self.coords[j * n + i - 1]).collect()
    }

    /// Grid step if the time grid is uniform.
    pub fn uniform_step(&self) -> Option<f64> {
        uniform_step(&self.times)
    }

    pub fn time_index(&self, t: f64) -> Option<usize> {
        time_index(&self.times, t)
    }
}

/// Samples paths of the truncated field on a fixed time grid.
#[derive(Clone, Debug)]
pub struct PathSimulator {
    d: usize,
    lambdas: Vec<f64>,
    initials: InitialLaw,
    times: Vec<f64>,
    seed: u64,
    retain_noise: bool,
}

impl PathSimulator {
    /// Simulator for the first `n` coordinates with zero initial values.
    pub fn new(spec: &SpectrumSpec, n: usize, times: Vec<f64>, seed: u64) -> Result<Self> {
        if n == 0 {
            return Err(domain("n", "at least one coordinate is required"));
        }
        check_times(&times)?;
        Ok(Self {
            d: spec.dim(),
            lambdas: spec.lambdas(n)?,
            initials: InitialLaw::zeros(),
            times,
            seed,
            retain_noise: false,
        })
    }

    pub fn with_initials(mut self, initials: InitialLaw) -> Self {
        self.initials = initials;
        self
    }

    /// Keep the per-step standard normals so the martingale part can be
    /// reconstructed pathwise.
    pub fn retain_noise(mut self, yes: bool) -> Self {
        self.retain_noise = yes;
        self
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn n_coords(&self) -> usize {
        self.lambdas.len()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn initials(&self) -> &InitialLaw {
        &self.initials
    }

    /// Series of coordinate `i` (1-based) of path `path_id`, equal to
    /// `simulate(path_id).coordinate_series(i)` without simulating the others.
    pub fn simulate_coordinate(&self, path_id: u64, i: usize) -> Result<Vec<f64>> {
        if i == 0 || i > self.lambdas.len() {
            return Err(Error::SpectrumRange {
                index: i,
                len: self.lambdas.len(),
            });
        }
        let lam = self.lambdas[i - 1];
        let mut g = self.initials.sample(i, self.seed, path_id)[i - 1];
        let mut stream = rng_stream(self.seed, path_id, (i - 1) as u64);
        let mut out = Vec::with_capacity(self.times.len());
        out.push(g);
        for w in self.times.windows(2) {
            let (a, b) = transition(lam, w[1] - w[0]);
            g = g * a + b * stream.next_normal();
            out.push(g);
        }
        Ok(out)
    }

    pub fn simulate(&self, path_id: u64) -> FieldPath {
        let n = self.n_coords();
        let steps = self.times.len() - 1;
        let mut coords = vec![0.0; (steps + 1) * n];
        let init = self.initials.sample(n, self.seed, path_id);
        coords[..n].copy_from_slice(&init);
        let mut noise = self.retain_noise.then(|| NoiseRecord {
            ou: vec![0.0; steps * n],
            aux: vec![0.0; steps * n],
        });
        for (i, &lam) in self.lambdas.iter().enumerate() {
            let mut stream = rng_stream(self.seed, path_id, i as u64);
            let mut g = init[i];
            let mut cached = (f64::NAN, 1.0, 0.0);
            for j in 0..steps {
                let u = self.times[j + 1] - self.times[j];
                if u != cached.0 {
                    let (a, b) = transition(lam, u);
                    cached = (u, a, b);
                }
                let xi = stream.next_normal();
                g = g * cached.1 + cached.2 * xi;
                coords[(j + 1) * n + i] = g;
                if let Some(rec) = noise.as_mut() {
                    rec.ou[j * n + i] = xi;
                }
            }
            if let Some(rec) = noise.as_mut() {
                let mut aux = rng_stream(self.seed, path_id, AUX_STREAM + i as u64);
                for j in 0..steps {
                    rec.aux[j * n + i] = aux.next_normal();
                }
            }
        }
        FieldPath {
            times: self.times.clone(),
            d: self.d,
            lambdas: self.lambdas.clone(),
            coords,
            noise,
        }
    }
}

/// Simulates one path (path id 0) of the first `initials.len()` coordinates.
pub fn simulate_ensemble(spec: &SpectrumSpec, initials: &[f64], times: &[f64], seed: u64) -> Result<FieldPath> {
    Ok(PathSimulator::new(spec, initials.len(), times.to_vec(), seed)?
        .with_initials(InitialLaw::Fixed(initials.to_vec()))
        .retain_noise(true)
        .simulate(0))
}

/// The field `X_{t_j}` sampled on `grid`.
pub fn synthesize_field(path: &FieldPath, j: usize, grid: DyadicGrid) -> Result<GridField> {
    if j >= path.times.len() {
        return Err(domain("j", format!("time index {j} out of range")));
    }
    basis::synthesize(path.coords_at(j), path.d, grid)
}

/// Independent increments of the martingale part over the cells of
/// `partition`: entry `[j * n + i]` is `N(0, 2 lambda_{i+1} (t_{j+1} - t_j))`.
pub fn simulate_y_increments(spec: &SpectrumSpec, partition: &[f64], n: usize, seed: u64) -> Result<Vec<f64>> {
    check_times(partition)?;
    let lambdas = spec.lambdas(n)?;
    let cells = partition.len() - 1;
    let mut out = vec![0.0; cells * n];
    for (i, lam) in lambdas.iter().enumerate() {
        let mut s = rng_stream(seed, 0, MISC_STREAM + i as u64);
        for j in 0..cells {
            let dt = partition[j + 1] - partition[j];
            out[j * n + i] = (2.0 * lam * dt).sqrt() * s.next_normal();
        }
    }
    Ok(out)
}

/// Coordinates `e^{-lambda_i t} G_i(0)` of the deterministic part.
pub fn synthesize_a(spec: &SpectrumSpec, initials: &[f64], t: f64) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(domain("t", "time must be nonnegative"));
    }
    let lambdas = spec.lambdas(initials.len())?;
    Ok(initials.iter().zip(&lambdas).map(|(g, l)| g * (-l * t).exp()).collect())
}

/// Coordinates of `X = Y + Z + A` on a coarse sub-grid of a simulated path.
/// All matrices are time-major `[j * n + i]` on `times`.
#[derive(Clone, Debug, PartialEq)]
pub struct DecompositionSample {
    pub times: Vec<f64>,
    pub n: usize,
    pub y: Vec<f64>,
    /// `X - Y - A`, exact by construction.
    pub z_residual: Vec<f64>,
    /// `-lambda_i int_0^t V_i(u) du` by the trapezoid rule on the path grid.
    pub z_quadrature: Vec<f64>,
    pub a: Vec<f64>,
}

impl DecompositionSample {
    /// `Y_{t_j} - Y_{t_{j-1}}` for `j = 1..`, step-major.
    pub fn y_increments(&self) -> Vec<f64> {
        let n = self.n;
        (n..self.y.len()).map(|k| self.y[k] - self.y[k - n]).collect()
    }
}

/// Martingale increment coupled to the transition noise `xi_ou` over a step
/// `u`: `Y` has variance `2 lambda u` and covariance `2 (1 - e^{-lambda u})`
/// with the transition noise `sqrt(1 - e^{-2 lambda u}) xi_ou`.
#[inline]
pub fn coupled_y_increment(lambda: f64, u: f64, xi_ou: f64, xi_aux: f64) -> f64 {
    if u == 0.0 || lambda == 0.0 {
        return 0.0;
    }
    let var_y = 2.0 * lambda * u;
    let var_v = -(-2.0 * lambda * u).exp_m1();
    let cov = -2.0 * (-lambda * u).exp_m1();
    let rho = (cov / (var_v * var_y).sqrt()).min(1.0);
    var_y.sqrt() * (rho * xi_ou + (1.0 - rho * rho).max(0.0).sqrt() * xi_aux)
}

/// Splits a path into martingale, drift and deterministic parts. The coarse
/// grid keeps every `stride`-th stored time; the quadrature for `Z` uses
/// every stored time.
pub fn decompose_path(path: &FieldPath, stride: usize) -> Result<DecompositionSample> {
    decompose_path_with(path, stride, 1)
}

/// As [`decompose_path`], with the `Z` quadrature using every
/// `quad_stride`-th stored time (`stride` must be a multiple of it).
pub fn decompose_path_with(path: &FieldPath, stride: usize, quad_stride: usize) -> Result<DecompositionSample> {
    let noise = path.noise.as_ref().ok_or(Error::MissingNoise)?;
    if stride == 0 || quad_stride == 0 || !stride.is_multiple_of(quad_stride) {
        return Err(domain(
            "stride",
            "coarse stride must be a positive multiple of the quadrature stride",
        ));
    }
    let steps = path.times.len() - 1;
    if !steps.is_multiple_of(stride) {
        return Err(domain("stride", "stride must divide the number of time steps"));
    }
    let n = path.n_coords();
    let coarse = steps / stride;
    let times: Vec<f64> = (0..=coarse).map(|c| path.times[c * stride]).collect();
    let init = path.coords_at(0);

    let mut y = vec![0.0; (coarse + 1) * n];
    let mut zq = vec![0.0; (coarse + 1) * n];
    let mut a = vec![0.0; (coarse + 1) * n];
    let mut zr = vec![0.0; (coarse + 1) * n];
    for i in 0..n {
        let lam = path.lambdas[i];
        let v = |j: usize| path.coords[j * n + i] - init[i] * (-lam * path.times[j]).exp();
        let mut yi = 0.0;
        let mut zi = 0.0;
        for j in 0..steps {
            let u = path.times[j + 1] - path.times[j];
            yi += coupled_y_increment(lam, u, noise.ou[j * n + i], noise.aux[j * n + i]);
            if (j + 1) % stride == 0 {
                y[((j + 1) / stride) * n + i] = yi;
            }
        }
        for j in (0..steps).step_by(quad_stride) {
            let h = path.times[j + quad_stride] - path.times[j];
            zi -= lam * 0.5 * h * (v(j) + v(j + quad_stride));
            if (j + quad_stride).is_multiple_of(stride) {
                zq[((j + quad_stride) / stride) * n + i] = zi;
            }
        }
        for c in 0..=coarse {
            let k = c * n + i;
            a[k] = init[i] * (-lam * times[c]).exp();
            zr[k] = path.coords[c * stride * n + i] - y[k] - a[k];
        }
    }
    Ok(DecompositionSample {
        times,
        n,
        y,
        z_residual: zr,
        z_quadrature: zq,
        a,
    })
}

/// One row of an increment-moment scan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub u: f64,
    pub estimate: Estimate,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentScan {
    pub t: f64,
    pub rows: Vec<MomentRow>,
    /// Least-squares slope of `ln E` against `ln u`.
    pub slope: f64,
}

/// Monte Carlo estimate of `E ||X_{t+u} - X_t||_sup^4` for each lag `u`.
#[allow(clippy::too_many_arguments)]
pub fn fourth_moment_scan(
    spec: &SpectrumSpec,
    initials: &InitialLaw,
    level: u32,
    t: f64,
    u_list: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<MomentScan> {
    if u_list.iter().any(|u| !(*u > 0.0 && *u <= 1.0)) {
        return Err(domain("u_list", "lags must lie in (0, 1]"));
    }
    if !(t >= 0.0) {
        return Err(domain("t", "start time must be nonnegative"));
    }
    let n = basis::truncation_count(level, spec.dim());
    let mut offsets: Vec<f64> = u_list.to_vec();
    offsets.sort_by(f64::total_cmp);
    offsets.dedup();
    let mut times = vec![0.0];
    if t > 0.0 {
        times.push(t);
    }
    times.extend(offsets.iter().map(|u| t + u));
    let base = times.len() - offsets.len() - 1;
    let sim = PathSimulator::new(spec, n, times, seed)?.with_initials(initials.clone());
    let grid = DyadicGrid::new(level + 1)?;
    let d = spec.dim();

    let per_path: Vec<Vec<f64>> = map_paths(n_paths, |p| {
        let path = sim.simulate(p as u64);
        let start = path.coords_at(base).to_vec();
        let mut field = GridField::zeros(grid, d);
        let mut diff = vec![0.0; n];
        (0..offsets.len())
            .map(|k| {
                for (dv, (a, b)) in diff.iter_mut().zip(path.coords_at(base + 1 + k).iter().zip(&start)) {
                    *dv = a - b;
                }
                field.synthesize_from(&diff).expect("grid depth checked");
                basis::norm(&field, NormKind::Sup).powi(4)
            })
            .collect()
    });
    let rows: Vec<MomentRow> = offsets
        .iter()
        .enumerate()
        .map(|(k, &u)| {
            let samples: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
            MomentRow {
                u,
                estimate: Estimate::from_samples(&samples),
            }
        })
        .collect();
    let us: Vec<f64> = rows.iter().map(|r| r.u).collect();
    let es: Vec<f64> = rows.iter().map(|r| r.estimate.mean).collect();
    let slope = if rows.len() >= 2 {
        log_log_slope(&us, &es)
    } else {
        f64::NAN
    };
    Ok(MomentScan { t, rows, slope })
}
