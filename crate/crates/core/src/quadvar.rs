//! Scalar and tensor quadratic variation of the truncated field, and the
//! reference values `theta` (scalar) and `Theta` (kernel) they converge to.
//!
//! Estimators consume a [`PathSimulator`] and a path count and regenerate
//! each path on demand, so memory stays proportional to one path per worker.

use serde::{Deserialize, Serialize};

use crate::basis::{self, decompose_index, max_level, BasisIndex, DyadicGrid, GridField, Level, NormKind};
use crate::error::{domain, Error, Result};
use crate::ou_field::{decompose_path, time_index, uniform_step, PathSimulator};
use crate::parallel::{fold_paths, map_paths};
use crate::quad::legendre_unit;
use crate::rng::{rng_stream, MISC_STREAM};
use crate::spectrum::SpectrumSpec;
use crate::stats::{linear_fit, Estimate};

/// How a reference value was obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    MonteCarlo,
    Quadrature,
    ClosedForm,
}

impl Provenance {
    pub fn as_str(&self) -> &'static str {
        match self {
            Provenance::MonteCarlo => "mc",
            Provenance::Quadrature => "quadrature",
            Provenance::ClosedForm => "closed_form",
        }
    }
}

/// A reference slope `theta` with its standard error (zero when exact).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaRef {
    pub value: f64,
    pub se: f64,
    pub source: Provenance,
}

/// Points `0 = t_0 < ... < t_K`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    points: Vec<f64>,
}

impl Partition {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.len() < 2 || points[0] != 0.0 {
            return Err(domain("partition", "needs at least two points starting at 0"));
        }
        if let Some(pos) = points.windows(2).position(|w| !(w[1] > w[0]) || !w[1].is_finite()) {
            return Err(domain(
                "partition",
                format!("points must be strictly increasing (position {})", pos + 1),
            ));
        }
        Ok(Self { points })
    }

    /// `cells` equal cells on `[0, end]`.
    pub fn uniform(end: f64, cells: usize) -> Result<Self> {
        if !(end > 0.0) || cells == 0 {
            return Err(domain("partition", "uniform partitions need end > 0 and cells >= 1"));
        }
        Self::new((0..=cells).map(|j| end * j as f64 / cells as f64).collect())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn end(&self) -> f64 {
        *self.points.last().expect("nonempty")
    }

    pub fn mesh(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }

    /// Positions of the partition points in a time grid.
    pub fn indices_in(&self, times: &[f64]) -> Result<Vec<usize>> {
        self.points
            .iter()
            .map(|&t| time_index(times, t).ok_or(Error::PartitionNotNested { time: t }))
            .collect()
    }
}

/// Mean quadratic-variation curve across paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QvEstimate {
    pub kind: NormKind,
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub n_paths: usize,
    /// Partition mesh, or the lag `delta` for regularized estimates.
    pub mesh: f64,
    pub theta: Option<ThetaRef>,
}

/// Largest gap between an estimated curve and `t theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub t: f64,
    pub value: f64,
    pub se: f64,
}

impl QvEstimate {
    pub fn with_theta(mut self, theta: ThetaRef) -> Self {
        self.theta = Some(theta);
        self
    }

    pub fn terminal(&self) -> Estimate {
        let k = self.times.len() - 1;
        Estimate {
            mean: self.mean[k],
            se: self.se[k],
        }
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// Least-squares slope of the mean curve against `t`.
    pub fn slope(&self) -> f64 {
        linear_fit(&self.times, &self.mean).1
    }

    /// Terminal value compared to `T theta`, in combined standard errors.
    pub fn terminal_z(&self) -> Option<f64> {
        let th = self.theta?;
        let end = self.end();
        Some(self.terminal().z_distance(&Estimate {
            mean: end * th.value,
            se: end * th.se,
        }))
    }

    pub fn max_deviation(&self) -> Option<Deviation> {
        let th = self.theta?;
        let mut best = Deviation {
            t: 0.0,
            value: 0.0,
            se: 0.0,
        };
        for (k, &t) in self.times.iter().enumerate() {
            let dev = (self.mean[k] - t * th.value).abs();
            if dev > best.value {
                best = Deviation {
                    t,
                    value: dev,
                    se: self.se[k].hypot(t * th.se),
                };
            }
        }
        Some(best)
    }
}

/// Reusable buffers for norms of field increments.
struct IncrementNorms {
    field: GridField,
    diff: Vec<f64>,
}

impl IncrementNorms {
    fn new(grid: DyadicGrid, d: usize, n: usize) -> Self {
        Self {
            field: GridField::zeros(grid, d),
            diff: vec![0.0; n],
        }
    }

    /// Squared norms of the field with coefficients `to - from`.
    fn squared(&mut self, from: &[f64], to: &[f64], kinds: &[NormKind], out: &mut [f64]) {
        for ((d, a), b) in self.diff.iter_mut().zip(from).zip(to) {
            *d = b - a;
        }
        self.field.synthesize_from(&self.diff).expect("grid depth validated");
        for (o, k) in out.iter_mut().zip(kinds) {
            *o = basis::norm(&self.field, *k).powi(2);
        }
    }
}

fn check_depth(sim: &PathSimulator, grid: DyadicGrid) -> Result<()> {
    grid.require(max_level(sim.n_coords(), sim.dim()) + 1)
}

/// Per-time mean and standard error of curves stored path by path.
fn curve_stats(curves: &[Vec<f64>], len: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = Vec::with_capacity(len);
    let mut se = Vec::with_capacity(len);
    let mut column = vec![0.0; curves.len()];
    for k in 0..len {
        for (c, curve) in column.iter_mut().zip(curves) {
            *c = curve[k];
        }
        let e = Estimate::from_samples(&column);
        mean.push(e.mean);
        se.push(e.se);
    }
    (mean, se)
}

/// Collects curves laid out as `[kind][time]` per path into one estimate per
/// norm kind.
fn collect_curves(per_path: Vec<Vec<Vec<f64>>>, kinds: &[NormKind], times: &[f64], mesh: f64) -> Vec<QvEstimate> {
    let n_paths = per_path.len();
    kinds
        .iter()
        .enumerate()
        .map(|(ki, &kind)| {
            let curves: Vec<Vec<f64>> = per_path.iter().map(|p| p[ki].clone()).collect();
            let (mean, se) = curve_stats(&curves, times.len());
            QvEstimate {
                kind,
                times: times.to_vec(),
                mean,
                se,
                n_paths,
                mesh,
                theta: None,
            }
        })
        .collect()
}

/// Partition quadratic variation `sum_{t_j <= t} ||X_{t_j} - X_{t_{j-1}}||^2`
/// for each norm in `kinds`, averaged over paths `0..n_paths`.
pub fn scalar_qv_partition(
    sim: &PathSimulator,
    n_paths: usize,
    partition: &Partition,
    grid: DyadicGrid,
    kinds: &[NormKind],
) -> Result<Vec<QvEstimate>> {
    check_depth(sim, grid)?;
    let idx = partition.indices_in(sim.times())?;
    let (n, d) = (sim.n_coords(), sim.dim());
    let per_path = map_paths(n_paths, |p| {
        let path = sim.simulate(p as u64);
        let mut ws = IncrementNorms::new(grid, d, n);
        let mut curves = vec![vec![0.0; idx.len()]; kinds.len()];
        let mut sq = vec![0.0; kinds.len()];
        for c in 1..idx.len() {
            ws.squared(path.coords_at(idx[c - 1]), path.coords_at(idx[c]), kinds, &mut sq);
            for (curve, s) in curves.iter_mut().zip(&sq) {
                curve[c] = curve[c - 1] + s;
            }
        }
        curves
    });
    Ok(collect_curves(per_path, kinds, partition.points(), partition.mesh()))
}

/// Validates a lag against a uniform path grid and returns
/// `(step, lag in steps, index of t_end)`.
fn lag_layout(sim: &PathSimulator, delta: f64, t_end: f64) -> Result<(f64, usize, usize)> {
    let h = uniform_step(sim.times()).ok_or(Error::NonUniformGrid)?;
    let ratio = (delta / h).round();
    if !(delta > 0.0) || ratio < 1.0 || (ratio * h - delta).abs() > 1e-9 * delta {
        return Err(Error::LagMismatch { delta, step: h });
    }
    let r = ratio as usize;
    let k_end = time_index(sim.times(), t_end).ok_or(Error::PartitionNotNested { time: t_end })?;
    if k_end + r >= sim.times().len() {
        return Err(domain(
            "t_end",
            format!("path grid must extend to t_end + delta = {}", t_end + delta),
        ));
    }
    Ok((h, r, k_end))
}

/// Regularized quadratic variation `(1/delta) int_0^t ||X_{s+delta} - X_s||^2 ds`
/// by a left-point sum on the path grid, for every grid time `t <= t_end`.
pub fn regularized_qv(
    sim: &PathSimulator,
    n_paths: usize,
    delta: f64,
    t_end: f64,
    grid: DyadicGrid,
    kinds: &[NormKind],
) -> Result<Vec<QvEstimate>> {
    check_depth(sim, grid)?;
    let (h, r, k_end) = lag_layout(sim, delta, t_end)?;
    let (n, d) = (sim.n_coords(), sim.dim());
    let scale = h / delta;
    let per_path = map_paths(n_paths, |p| {
        let path = sim.simulate(p as u64);
        let mut ws = IncrementNorms::new(grid, d, n);
        let mut curves = vec![vec![0.0; k_end + 1]; kinds.len()];
        let mut sq = vec![0.0; kinds.len()];
        for j in 0..k_end {
            ws.squared(path.coords_at(j), path.coords_at(j + r), kinds, &mut sq);
            for (curve, s) in curves.iter_mut().zip(&sq) {
                curve[j + 1] = curve[j] + scale * s;
            }
        }
        curves
    });
    Ok(collect_curves(per_path, kinds, &sim.times()[..=k_end], delta))
}

/// Which part of the decomposition `X = Y + Z + A` to measure.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// The martingale part `Y`.
    Martingale,
    /// The bounded-variation remainder `Z + A`.
    DriftAndInitial,
}

/// Terminal partition QV of one component at one mesh.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentQv {
    pub stride: usize,
    pub mesh: f64,
    pub qv: Estimate,
    /// Sample variance of the per-path QV.
    pub variance: f64,
}

/// Partition QV at the final time of `Y` or `Z + A`, on the sub-grids that
/// keep every `stride`-th stored time. The simulator must retain noise.
pub fn component_qv(
    sim: &PathSimulator,
    n_paths: usize,
    strides: &[usize],
    grid: DyadicGrid,
    kind: NormKind,
    component: Component,
) -> Result<Vec<ComponentQv>> {
    check_depth(sim, grid)?;
    let steps = sim.times().len() - 1;
    if strides.iter().any(|s| *s == 0 || !steps.is_multiple_of(*s)) {
        return Err(domain("strides", "each stride must divide the number of time steps"));
    }
    let (n, d) = (sim.n_coords(), sim.dim());
    let per_path: Vec<Result<Vec<f64>>> = map_paths(n_paths, |p| {
        let dec = decompose_path(&sim.simulate(p as u64), 1)?;
        let values: Vec<f64> = match component {
            Component::Martingale => dec.y,
            Component::DriftAndInitial => dec.z_residual.iter().zip(&dec.a).map(|(z, a)| z + a).collect(),
        };
        let mut ws = IncrementNorms::new(grid, d, n);
        let mut sq = [0.0];
        Ok(strides
            .iter()
            .map(|&s| {
                (s..=steps)
                    .step_by(s)
                    .map(|j| {
                        ws.squared(
                            &values[(j - s) * n..(j - s + 1) * n],
                            &values[j * n..(j + 1) * n],
                            &[kind],
                            &mut sq,
                        );
                        sq[0]
                    })
                    .sum()
            })
            .collect())
    });
    let per_path = per_path.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(strides
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let samples: Vec<f64> = per_path.iter().map(|v| v[k]).collect();
            let mesh = (s..=steps)
                .step_by(s)
                .map(|j| sim.times()[j] - sim.times()[j - s])
                .fold(0.0, f64::max);
            ComponentQv {
                stride: s,
                mesh,
                qv: Estimate::from_samples(&samples),
                variance: crate::stats::sample_variance(&samples),
            }
        })
        .collect())
}

/// `2 E ||sum_i lambda_i^{1/2} xi_i S_i||^2` over the first `level` levels,
/// estimated from `n_samples` draws.
pub fn theta_mc(
    spec: &SpectrumSpec,
    level: u32,
    kind: NormKind,
    grid: DyadicGrid,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let d = spec.dim();
    let n = basis::truncation_count(level, d);
    grid.require(level + 1)?;
    let roots: Vec<f64> = spec.lambdas(n)?.iter().map(|l| l.sqrt()).collect();
    let samples = map_paths(n_samples, |p| {
        let mut s = rng_stream(seed, p as u64, MISC_STREAM);
        let coeffs: Vec<f64> = roots.iter().map(|r| r * s.next_normal()).collect();
        let f = basis::synthesize(&coeffs, d, grid).expect("grid depth validated");
        2.0 * basis::norm(&f, kind).powi(2)
    });
    Ok(Estimate::from_samples(&samples))
}

/// Outcome of the deterministic L1 reference computation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaQuadrature {
    pub value: f64,
    /// Number of node pairs whose correlation exceeded 1 in magnitude.
    pub clamped: usize,
    /// Largest excess `|rho| - 1` observed before clamping.
    pub max_excess: f64,
}

impl ThetaQuadrature {
    /// True when some correlation overshot 1 by more than the 1e-9 tolerance.
    pub fn warn(&self) -> bool {
        self.max_excess > 1e-9
    }
}

/// `E|XY|` for centred jointly normal `X, Y` with standard deviations
/// `sx, sy` and correlation `rho`.
pub fn expected_abs_product(sx: f64, sy: f64, rho: f64) -> f64 {
    let rho = rho.clamp(-1.0, 1.0);
    std::f64::consts::FRAC_2_PI * sx * sy * (rho * rho.asin() + (1.0 - rho * rho).sqrt())
}

/// Deterministic `theta` under the L1 norm. The double integral of
/// `E|g_a(u) g_b(v)|` is taken by composite 4-point Gauss–Legendre on the
/// cells of a dyadic grid of depth `quad_depth`.
pub fn theta_l1_quadrature(spec: &SpectrumSpec, level: u32, quad_depth: u32) -> Result<ThetaQuadrature> {
    if quad_depth < level + 2 || quad_depth > 14 {
        return Err(domain("quad_depth", format!("must lie in {}..=14", level + 2)));
    }
    let d = spec.dim();
    let n = basis::truncation_count(level, d);
    let lambdas = spec.lambdas(n)?;
    let rule = legendre_unit(4)?;
    let cells = 1usize << quad_depth;
    let levels = level as usize + 2;

    // For each node and coordinate: the Haar index active at every level and
    // lambda^{1/2} S_i(u) for it. Two nodes share a prefix of active indices.
    let mut u = Vec::with_capacity(cells * 4);
    let mut w = Vec::with_capacity(cells * 4);
    for c in 0..cells {
        for (x, wt) in rule.pairs() {
            u.push((c as f64 + x) / cells as f64);
            w.push(wt / cells as f64);
        }
    }
    let pts = u.len();
    let mut rid = vec![0usize; pts * d * levels];
    let mut val = vec![0.0; pts * d * levels];
    let mut sigma = vec![0.0; pts * d];
    for p in 0..pts {
        for a in 0..d {
            let mut s2 = 0.0;
            for l in 0..levels {
                let r = if l == 0 {
                    1
                } else {
                    let m = l - 1;
                    (1usize << m) + ((u[p] * (1u64 << m) as f64).floor() as usize).min((1 << m) - 1) + 1
                };
                let i = basis::compose_index(r, a + 1, d);
                let idx = decompose_index(i, d)?;
                let v = lambdas[i - 1].sqrt() * basis::schauder_value(&idx, u[p]);
                let k = (p * d + a) * levels + l;
                rid[k] = r;
                val[k] = v;
                s2 += v * v;
            }
            sigma[p * d + a] = s2.sqrt();
        }
    }

    struct Row {
        sum: f64,
        clamped: usize,
        excess: f64,
    }
    let rows = map_paths(pts, |p| {
        let mut row = Row {
            sum: 0.0,
            clamped: 0,
            excess: 0.0,
        };
        for a in 0..d {
            let sp = sigma[p * d + a];
            if sp == 0.0 {
                continue;
            }
            let base_p = (p * d + a) * levels;
            for q in p..pts {
                let sq = sigma[q * d + a];
                if sq == 0.0 {
                    continue;
                }
                let base_q = (q * d + a) * levels;
                let mut cov = 0.0;
                for l in 0..levels {
                    if rid[base_p + l] != rid[base_q + l] {
                        break;
                    }
                    cov += val[base_p + l] * val[base_q + l];
                }
                let rho = cov / (sp * sq);
                let excess = rho.abs() - 1.0;
                if excess > 0.0 {
                    row.clamped += 1;
                    row.excess = row.excess.max(excess);
                }
                let mult = if q == p { 1.0 } else { 2.0 };
                row.sum += mult * w[p] * w[q] * expected_abs_product(sp, sq, rho);
            }
        }
        row
    });
    let mut same = 0.0;
    let mut clamped = 0;
    let mut max_excess: f64 = 0.0;
    for r in rows {
        same += r.sum;
        clamped += r.clamped;
        max_excess = max_excess.max(r.excess);
    }
    // Distinct coordinates are independent: E|g_a g_b| = (2/pi) sigma_a sigma_b.
    let mean_sigma: Vec<f64> = (0..d)
        .map(|a| (0..pts).map(|p| w[p] * sigma[p * d + a]).sum())
        .collect();
    let mut cross = 0.0;
    for a in 0..d {
        for b in 0..d {
            if a != b {
                cross += std::f64::consts::FRAC_2_PI * mean_sigma[a] * mean_sigma[b];
            }
        }
    }
    Ok(ThetaQuadrature {
        value: 2.0 * (same + cross),
        clamped,
        max_excess,
    })
}

/// A `d x d`-matrix valued kernel on the nodes of `grid x grid`.
#[derive(Clone, Debug, PartialEq)]
pub struct TensorKernel {
    grid: DyadicGrid,
    d: usize,
    values: Vec<f64>,
    source: Provenance,
    n_paths: Option<usize>,
}

impl TensorKernel {
    pub fn zeros(grid: DyadicGrid, d: usize, source: Provenance) -> Self {
        let q = grid.len();
        Self {
            grid,
            d,
            values: vec![0.0; q * q * d * d],
            source,
            n_paths: None,
        }
    }

    /// Kernel `f(u) g(v)^T` of two fields on the same grid.
    pub fn outer(f: &GridField, g: &GridField) -> Result<Self> {
        if f.grid() != g.grid() || f.dim() != g.dim() {
            return Err(domain("g", "fields must share grid and dimension"));
        }
        let (grid, d) = (f.grid(), f.dim());
        let mut k = Self::zeros(grid, d, Provenance::ClosedForm);
        for p in 0..grid.len() {
            for q in 0..grid.len() {
                for a in 1..=d {
                    for b in 1..=d {
                        let pos = k.offset(p, q, a, b);
                        k.values[pos] = f.at(p, a) * g.at(q, b);
                    }
                }
            }
        }
        Ok(k)
    }

    #[inline]
    fn offset(&self, p: usize, q: usize, a: usize, b: usize) -> usize {
        ((p * self.grid.len() + q) * self.d + a - 1) * self.d + b - 1
    }

    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn source(&self) -> Provenance {
        self.source
    }

    pub fn n_paths(&self) -> Option<usize> {
        self.n_paths
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `K_{ab}(u_p, v_q)` with 1-based coordinates.
    pub fn at(&self, p: usize, q: usize, a: usize, b: usize) -> f64 {
        self.values[self.offset(p, q, a, b)]
    }

    /// Largest violation of `K_{ab}(u, v) = K_{ba}(v, u)`.
    pub fn asymmetry(&self) -> f64 {
        let len = self.grid.len();
        let mut worst: f64 = 0.0;
        for p in 0..len {
            for q in 0..len {
                for a in 1..=self.d {
                    for b in 1..=self.d {
                        worst = worst.max((self.at(p, q, a, b) - self.at(q, p, b, a)).abs());
                    }
                }
            }
        }
        worst
    }

    pub fn sub(&self, other: &TensorKernel) -> Result<TensorKernel> {
        if self.grid != other.grid || self.d != other.d {
            return Err(domain("other", "kernels must share grid and dimension"));
        }
        Ok(TensorKernel {
            grid: self.grid,
            d: self.d,
            values: self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect(),
            source: self.source,
            n_paths: self.n_paths,
        })
    }
}

/// Nonzero Schauder values `(coefficient position, coordinate, S_i(u))` at
/// every node of `grid`.
fn node_supports(n: usize, d: usize, grid: DyadicGrid) -> Result<Vec<Vec<(usize, usize, f64)>>> {
    let mut lists = vec![Vec::new(); grid.len()];
    for i in 1..=n {
        let idx: BasisIndex = decompose_index(i, d)?;
        grid.require(idx.required_depth())?;
        let range = match idx.level {
            Level::Root => 1..grid.len(),
            Level::Dyadic { m, k } => {
                let span = 1usize << (grid.depth() - m);
                let q1 = (k as usize - 1) * span;
                q1 + 1..q1 + span
            }
        };
        for q in range {
            let v = basis::schauder_value(&idx, grid.node(q));
            if v != 0.0 {
                lists[q].push((i - 1, idx.j, v));
            }
        }
    }
    Ok(lists)
}

/// Kernel `sum_{i,i'} cov[i][i'] S_i(u) S_{i'}(v)^T` for a row-major
/// `n x n` coefficient matrix.
pub fn kernel_from_coefficients(
    cov: &[f64],
    n: usize,
    d: usize,
    grid: DyadicGrid,
    source: Provenance,
) -> Result<TensorKernel> {
    if cov.len() != n * n {
        return Err(domain("cov", "expected an n x n matrix"));
    }
    let lists = node_supports(n, d, grid)?;
    let mut k = TensorKernel::zeros(grid, d, source);
    let len = grid.len();
    let rows = map_paths(len, |p| {
        let mut row = vec![0.0; len * d * d];
        for (q, lq) in lists.iter().enumerate() {
            for &(i, a, s) in &lists[p] {
                for &(i2, b, s2) in lq {
                    row[(q * d + a - 1) * d + b - 1] += cov[i * n + i2] * s * s2;
                }
            }
        }
        row
    });
    for (p, row) in rows.into_iter().enumerate() {
        k.values[p * len * d * d..(p + 1) * len * d * d].copy_from_slice(&row);
    }
    Ok(k)
}

/// `Theta` kernel `2 sum_i lambda_i S_i(u) S_i(v)^T` truncated at `level`.
pub fn theta_tensor_closed_form(spec: &SpectrumSpec, level: u32, grid: DyadicGrid) -> Result<TensorKernel> {
    let d = spec.dim();
    let n = basis::truncation_count(level, d);
    grid.require(level + 1)?;
    let lambdas = spec.lambdas(n)?;
    let mut cov = vec![0.0; n * n];
    for (i, l) in lambdas.iter().enumerate() {
        cov[i * n + i] = 2.0 * l;
    }
    kernel_from_coefficients(&cov, n, d, grid, Provenance::ClosedForm)
}

/// Monte Carlo kernel `(1/(t delta)) int_0^t (X_{s+delta} - X_s)^{(x)2} ds`,
/// averaged over paths, with `t = t_end`.
pub fn tensor_qv(
    sim: &PathSimulator,
    n_paths: usize,
    delta: f64,
    t_end: f64,
    grid: DyadicGrid,
) -> Result<TensorKernel> {
    check_depth(sim, grid)?;
    if !(t_end > 0.0) {
        return Err(domain("t_end", "must be positive"));
    }
    let (h, r, k_end) = lag_layout(sim, delta, t_end)?;
    let n = sim.n_coords();
    let acc = fold_paths(
        n_paths,
        8,
        || vec![0.0; n * n],
        |acc, p| {
            let path = sim.simulate(p as u64);
            let mut diff = vec![0.0; n];
            for j in 0..k_end {
                for ((dv, a), b) in diff.iter_mut().zip(path.coords_at(j)).zip(path.coords_at(j + r)) {
                    *dv = b - a;
                }
                for a in 0..n {
                    let da = diff[a];
                    let row = &mut acc[a * n + a..a * n + n];
                    for (c, db) in row.iter_mut().zip(&diff[a..]) {
                        *c += da * db;
                    }
                }
            }
        },
        |total, part| total.iter_mut().zip(part).for_each(|(t, p)| *t += p),
    );
    let scale = h / (t_end * delta * n_paths as f64);
    let mut cov = vec![0.0; n * n];
    for a in 0..n {
        for b in a..n {
            let v = acc[a * n + b] * scale;
            cov[a * n + b] = v;
            cov[b * n + a] = v;
        }
    }
    let mut k = kernel_from_coefficients(&cov, n, sim.dim(), grid, Provenance::MonteCarlo)?;
    k.n_paths = Some(n_paths);
    Ok(k)
}

/// A probe `(u, v, a, b)` of a kernel with 1-based coordinates.
pub type KernelProbe = (f64, f64, usize, usize);

/// Direct sampling of `2 E[(sum_i lambda_i^{1/2} xi_i S_i)(u) (sum_i lambda_i^{1/2} xi_i S_i)(v)^T]`
/// at the probes, without using independence of the `xi_i`.
pub fn theta_tensor_mc(
    spec: &SpectrumSpec,
    level: u32,
    probes: &[KernelProbe],
    n_draws: usize,
    seed: u64,
) -> Result<Vec<Estimate>> {
    let d = spec.dim();
    let n = basis::truncation_count(level, d);
    let roots: Vec<f64> = spec.lambdas(n)?.iter().map(|l| l.sqrt()).collect();
    let mut supports = Vec::with_capacity(probes.len());
    for &(u, v, a, b) in probes {
        if !(0.0..=1.0).contains(&u) || !(0.0..=1.0).contains(&v) || a == 0 || b == 0 || a > d || b > d {
            return Err(domain(
                "probes",
                "positions must lie in [0, 1] and coordinates in 1..=d",
            ));
        }
        let at = |s: f64, c: usize| -> Result<Vec<(usize, f64)>> {
            let mut out = Vec::new();
            for i in 1..=n {
                let idx = decompose_index(i, d)?;
                if idx.j == c {
                    let val = basis::schauder_value(&idx, s);
                    if val != 0.0 {
                        out.push((i - 1, val));
                    }
                }
            }
            Ok(out)
        };
        supports.push((at(u, a)?, at(v, b)?));
    }
    let draws = map_paths(n_draws, |p| {
        let mut s = rng_stream(seed, p as u64, MISC_STREAM);
        let c: Vec<f64> = roots.iter().map(|r| r * s.next_normal()).collect();
        supports
            .iter()
            .map(|(su, sv)| {
                let fu: f64 = su.iter().map(|(i, v)| c[*i] * v).sum();
                let fv: f64 = sv.iter().map(|(i, v)| c[*i] * v).sum();
                2.0 * fu * fv
            })
            .collect::<Vec<f64>>()
    });
    Ok((0..probes.len())
        .map(|k| {
            let col: Vec<f64> = draws.iter().map(|row| row[k]).collect();
            Estimate::from_samples(&col)
        })
        .collect())
}

/// `int_0^1 |A + (B - A) x| dx` as a function of one variable, where `A` and
/// `B` are linear; integrated over `[y0, y1]` with the kinks at sign changes
/// of `A` and `B` split out so Gauss–Legendre sees smooth pieces.
fn abs_bilinear_cell(f00: f64, f10: f64, f01: f64, f11: f64, rule: &crate::quad::Rule) -> f64 {
    let a = |y: f64| f00 + (f01 - f00) * y;
    let b = |y: f64| f10 + (f11 - f10) * y;
    let mut cuts = vec![0.0, 1.0];
    for (lo, hi) in [(f00, f01), (f10, f11)] {
        if lo * hi < 0.0 {
            cuts.push(lo / (lo - hi));
        }
    }
    cuts.sort_by(f64::total_cmp);
    let mut total = 0.0;
    for win in cuts.windows(2) {
        let (y0, y1) = (win[0], win[1]);
        if y1 <= y0 {
            continue;
        }
        for (x, w) in rule.pairs() {
            let y = y0 + (y1 - y0) * x;
            total += w * (y1 - y0) * basis::abs_linear_integral(a(y), b(y), 1.0);
        }
    }
    total
}

/// `int int sum_{ab} |K_{ab}(u, v)| du dv` for the piecewise-bilinear
/// interpolant of the kernel.
pub fn pi_norm_l1(kernel: &TensorKernel) -> f64 {
    let rule = legendre_unit(8).expect("fixed order");
    let grid = kernel.grid;
    let cells = grid.cells();
    let area = grid.step() * grid.step();
    let d = kernel.d;
    let rows = map_paths(cells, |p| {
        let mut row = 0.0;
        for q in 0..cells {
            for a in 1..=d {
                for b in 1..=d {
                    row += abs_bilinear_cell(
                        kernel.at(p, q, a, b),
                        kernel.at(p + 1, q, a, b),
                        kernel.at(p, q + 1, a, b),
                        kernel.at(p + 1, q + 1, a, b),
                        &rule,
                    );
                }
            }
        }
        row
    });
    rows.iter().sum::<f64>() * area
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ou_field::{uniform_times, InitialLaw};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn degenerate_single(l1: f64, n: usize) -> SpectrumSpec {
        let mut v = vec![0.0; n];
        v[0] = l1;
        SpectrumSpec::degenerate(v, 1).unwrap()
    }

    #[test]
    fn partition_validation() {
        assert!(Partition::new(vec![0.0, 0.5, 0.5]).is_err());
        assert!(Partition::new(vec![0.1, 0.5]).is_err());
        let p = Partition::new(vec![0.0, 0.25, 1.0]).unwrap();
        assert_eq!(p.mesh(), 0.75);
        assert_eq!(
            p.indices_in(&[0.0, 0.5, 1.0]),
            Err(Error::PartitionNotNested { time: 0.25 })
        );
        assert_eq!(p.indices_in(&uniform_times(0.125, 8)).unwrap(), vec![0, 2, 8]);
    }

    #[test]
    fn frozen_paths_have_zero_qv() {
        let spec = SpectrumSpec::degenerate(vec![0.0; 4], 1).unwrap();
        let sim = PathSimulator::new(&spec, 4, uniform_times(1.0 / 64.0, 80), 1).unwrap();
        let grid = DyadicGrid::new(3).unwrap();
        let kinds = [NormKind::Sup, NormKind::L1];
        for q in scalar_qv_partition(&sim, 5, &Partition::uniform(1.0, 16).unwrap(), grid, &kinds).unwrap() {
            assert!(q.mean.iter().all(|v| *v == 0.0));
        }
        for q in regularized_qv(&sim, 5, 1.0 / 16.0, 1.0, grid, &kinds).unwrap() {
            assert!(q.mean.iter().all(|v| *v == 0.0));
        }
        let k = tensor_qv(&sim, 5, 1.0 / 16.0, 1.0, grid).unwrap();
        assert!(k.values().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_coordinate_qv_matches_scalar_oracle() {
        let l1 = 1.5;
        let spec = degenerate_single(l1, 1);
        let sim = PathSimulator::new(&spec, 1, uniform_times(1.0 / 512.0, 520), 3)
            .unwrap()
            .with_initials(InitialLaw::Stationary);
        let grid = DyadicGrid::new(1).unwrap();
        let part = Partition::uniform(1.0, 512).unwrap();
        let q = &scalar_qv_partition(&sim, 400, &part, grid, &[NormKind::Sup]).unwrap()[0];
        // Stationary increments over h have variance 2 (1 - e^{-lambda h}).
        let h = 1.0 / 512.0;
        let exact = 512.0 * 2.0 * (1.0 - (-l1 * h).exp());
        assert!(q.terminal().z_to(exact) < 3.0, "{:?} vs {exact}", q.terminal());
        assert!((exact - 2.0 * l1).abs() / (2.0 * l1) < 2e-3);

        let r = &regularized_qv(&sim, 400, 4.0 * h, 1.0, grid, &[NormKind::Sup]).unwrap()[0];
        let exact_r = 2.0 * (1.0 - (-l1 * 4.0 * h).exp()) / (4.0 * h);
        assert!(r.terminal().z_to(exact_r) < 3.0, "{:?} vs {exact_r}", r.terminal());
    }

    #[test]
    fn qv_curves_are_monotone_and_ordered() {
        let spec = SpectrumSpec::power_law(1.0, 0.25, 2).unwrap();
        let sim = PathSimulator::new(&spec, 16, uniform_times(1.0 / 64.0, 64), 9).unwrap();
        let grid = DyadicGrid::new(4).unwrap();
        let part = Partition::uniform(1.0, 32).unwrap();
        let q = scalar_qv_partition(&sim, 20, &part, grid, &[NormKind::Sup, NormKind::L1]).unwrap();
        for e in &q {
            assert!(e.mean.windows(2).all(|w| w[1] >= w[0]));
        }
        for k in 0..q[0].mean.len() {
            assert!(q[1].mean[k] <= 4.0 * q[0].mean[k] + 1e-12);
        }
    }

    #[test]
    fn lag_validation() {
        let spec = SpectrumSpec::power_law(1.0, 0.25, 1).unwrap();
        let sim = PathSimulator::new(&spec, 2, uniform_times(1.0 / 64.0, 72), 9).unwrap();
        let grid = DyadicGrid::new(2).unwrap();
        assert!(matches!(
            regularized_qv(&sim, 2, 1.0 / 128.0, 1.0, grid, &[NormKind::Sup]),
            Err(Error::LagMismatch { .. })
        ));
        assert!(regularized_qv(&sim, 2, 1.0 / 4.0, 1.0, grid, &[NormKind::Sup]).is_err());
        let bumpy = PathSimulator::new(&spec, 2, vec![0.0, 0.1, 0.3], 9).unwrap();
        assert_eq!(
            regularized_qv(&bumpy, 2, 0.1, 0.1, grid, &[NormKind::Sup]).unwrap_err(),
            Error::NonUniformGrid
        );
    }

    #[test]
    fn theta_single_term_examples() {
        let spec = degenerate_single(2.0, 4);
        let grid = DyadicGrid::new(3).unwrap();
        let sup = theta_mc(&spec, 1, NormKind::Sup, grid, 20_000, 4).unwrap();
        assert!(sup.z_to(4.0) < 3.0, "{sup:?}");
        let l1 = theta_mc(&spec, 1, NormKind::L1, grid, 20_000, 5).unwrap();
        assert!(l1.z_to(1.0) < 3.0, "{l1:?}");
        let quad = theta_l1_quadrature(&spec, 1, 4).unwrap();
        assert_abs_diff_eq!(quad.value, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn abs_product_identity_limits() {
        assert_abs_diff_eq!(
            expected_abs_product(2.0, 3.0, 0.0),
            12.0 / std::f64::consts::PI,
            epsilon = 1e-15
        );
        assert_abs_diff_eq!(expected_abs_product(2.0, 3.0, 1.0), 6.0, epsilon = 1e-14);
        assert_abs_diff_eq!(expected_abs_product(2.0, 3.0, -1.0), 6.0, epsilon = 1e-14);
        // Oracle: condition on X. Given X = x, Y ~ N(rho x, 1 - rho^2) and
        // E|N(mu, s^2)| = s sqrt(2/pi) e^{-mu^2 / 2 s^2} + mu (1 - 2 Phi(-mu / s)).
        let rho: f64 = 0.6;
        let s = (1.0 - rho * rho).sqrt();
        let cond = |x: f64| {
            let mu = rho * x;
            s * std::f64::consts::FRAC_2_PI.sqrt() * (-mu * mu / (2.0 * s * s)).exp()
                + mu * (1.0 - 2.0 * crate::stats::normal_cdf(-mu / s))
        };
        let rule = legendre_unit(10).unwrap();
        let v = 2.0 * crate::quad::composite(&rule, 0.0, 12.0, 48, |x| crate::stats::normal_pdf(x) * x * cond(x));
        assert_abs_diff_eq!(expected_abs_product(1.0, 1.0, rho), v, epsilon = 1e-10);
    }

    #[test]
    fn l1_theta_oracle_agreement() {
        let spec = SpectrumSpec::power_law(1.0, 0.25, 1).unwrap();
        let q = theta_l1_quadrature(&spec, 3, 6).unwrap();
        assert!(!q.warn());
        let mc = theta_mc(&spec, 3, NormKind::L1, DyadicGrid::new(4).unwrap(), 200_000, 77).unwrap();
        assert!(mc.z_to(q.value) < 3.0, "{mc:?} vs {}", q.value);
        let finer = theta_l1_quadrature(&spec, 3, 8).unwrap();
        assert!((finer.value - q.value).abs() < 1e-4 * q.value);
    }

    #[test]
    fn l1_theta_two_dimensions() {
        let spec = SpectrumSpec::power_law(1.0, 0.25, 2).unwrap();
        let q = theta_l1_quadrature(&spec, 2, 5).unwrap();
        let mc = theta_mc(&spec, 2, NormKind::L1, DyadicGrid::new(3).unwrap(), 40_000, 78).unwrap();
        assert!(mc.z_to(q.value) < 3.0, "{mc:?} vs {}", q.value);
    }

    #[test]
    fn closed_form_kernel_examples() {
        let grid = DyadicGrid::new(3).unwrap();
        let k = theta_tensor_closed_form(&degenerate_single(1.5, 4), 1, grid).unwrap();
        for p in 0..grid.len() {
            for q in 0..grid.len() {
                assert_abs_diff_eq!(k.at(p, q, 1, 1), 3.0 * grid.node(p) * grid.node(q), epsilon = 1e-14);
            }
        }
        assert_abs_diff_eq!(pi_norm_l1(&k), 1.5 / 2.0, epsilon = 1e-13);
        let k2 = theta_tensor_closed_form(&SpectrumSpec::power_law(1.0, 0.3, 2).unwrap(), 2, grid).unwrap();
        assert!(k2.asymmetry() < 1e-14);
    }

    #[test]
    fn kernel_gram_matrix_is_psd() {
        let grid = DyadicGrid::new(5).unwrap();
        let k = theta_tensor_closed_form(&SpectrumSpec::power_law(1.0, 0.25, 1).unwrap(), 4, grid).unwrap();
        let len = grid.len();
        let m = nalgebra::DMatrix::from_fn(len, len, |p, q| k.at(p, q, 1, 1));
        let eig = nalgebra::SymmetricEigen::new(m);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min > -1e-12, "min eigenvalue {min}");
    }

    #[test]
    fn pi_norm_examples() {
        let grid = DyadicGrid::new(4).unwrap();
        let zero = TensorKernel::zeros(grid, 2, Provenance::ClosedForm);
        assert_eq!(pi_norm_l1(&zero), 0.0);
        let f = GridField::from_fn(grid, |s| (6.0 * s).sin() - 0.2);
        let g = GridField::from_fn(grid, |s| s * s - 0.3);
        let k = TensorKernel::outer(&f, &g).unwrap();
        let expect = basis::norm(&f, NormKind::L1) * basis::norm(&g, NormKind::L1);
        assert_abs_diff_eq!(pi_norm_l1(&k), expect, epsilon = 1e-13);
    }

    #[test]
    fn bilinear_cell_against_dense_grid() {
        let rule = legendre_unit(8).unwrap();
        let (f00, f10, f01, f11) = (0.7, -1.1, -0.4, 0.9);
        let n = 2000;
        let mut dense = 0.0;
        for i in 0..n {
            for j in 0..n {
                let (x, y) = ((i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64);
                let v = f00 * (1.0 - x) * (1.0 - y) + f10 * x * (1.0 - y) + f01 * (1.0 - x) * y + f11 * x * y;
                dense += v.abs();
            }
        }
        dense /= (n * n) as f64;
        // The midpoint oracle itself carries an O(1e-6) error along the zero set.
        assert_abs_diff_eq!(abs_bilinear_cell(f00, f10, f01, f11, &rule), dense, epsilon = 1e-5);
    }

    #[test]
    fn single_coordinate_tensor_qv() {
        let spec = degenerate_single(1.0, 1);
        let sim = PathSimulator::new(&spec, 1, uniform_times(1.0 / 64.0, 68), 12)
            .unwrap()
            .with_initials(InitialLaw::Stationary);
        let grid = DyadicGrid::new(2).unwrap();
        let k = tensor_qv(&sim, 2000, 1.0 / 64.0, 1.0, grid).unwrap();
        let exact = 2.0 * (1.0 - (-1.0f64 / 64.0).exp()) * 64.0;
        // Per-path terminal samples have relative sd near sqrt(2 / 64).
        let se = exact * (2.0f64 / 64.0 / 2000.0).sqrt();
        assert!((k.at(4, 4, 1, 1) - exact).abs() < 4.0 * se, "{}", k.at(4, 4, 1, 1));
        assert_abs_diff_eq!(k.at(2, 4, 1, 1), 0.5 * k.at(4, 4, 1, 1), epsilon = 1e-12);
    }

    #[test]
    fn direct_xi_sampling_matches_closed_form() {
        let spec = SpectrumSpec::power_law(1.0, 0.25, 1).unwrap();
        let grid = DyadicGrid::new(4).unwrap();
        let k = theta_tensor_closed_form(&spec, 3, grid).unwrap();
        let probes: Vec<KernelProbe> = [(3, 5), (8, 8), (2, 13), (11, 12)]
            .iter()
            .map(|&(p, q)| (grid.node(p), grid.node(q), 1, 1))
            .collect();
        let est = theta_tensor_mc(&spec, 3, &probes, 40_000, 8).unwrap();
        for (e, &(p, q)) in est.iter().zip(&[(3, 5), (8, 8), (2, 13), (11, 12)]) {
            assert!(e.z_to(k.at(p, q, 1, 1)) < 4.0, "{e:?}");
        }
    }

    #[test]
    fn drift_component_qv_halves_with_mesh() {
        let spec = SpectrumSpec::power_law(1.0, 0.25, 1).unwrap();
        let sim = PathSimulator::new(&spec, 8, uniform_times(1.0 / 256.0, 256), 4)
            .unwrap()
            .retain_noise(true);
        let grid = DyadicGrid::new(3).unwrap();
        let za = component_qv(&sim, 100, &[2, 1], grid, NormKind::Sup, Component::DriftAndInitial).unwrap();
        let ratio = za[0].qv.mean / za[1].qv.mean;
        assert!((1.6..2.4).contains(&ratio), "ratio {ratio}");
        let y = component_qv(&sim, 100, &[2, 1], grid, NormKind::Sup, Component::Martingale).unwrap();
        assert!(y[0].qv.mean > 100.0 * za[0].qv.mean);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn l1_qv_bounded_by_sup_qv(seed in 0u64..1000, d in 1usize..3) {
            let spec = SpectrumSpec::power_law(1.0, 0.25, d).unwrap();
            let sim = PathSimulator::new(&spec, 4 * d, uniform_times(0.125, 8), seed).unwrap();
            let grid = DyadicGrid::new(3).unwrap();
            let part = Partition::uniform(1.0, 8).unwrap();
            let q = scalar_qv_partition(&sim, 1, &part, grid, &[NormKind::Sup, NormKind::L1]).unwrap();
            for k in 0..q[0].mean.len() {
                prop_assert!(q[1].mean[k] <= (d * d) as f64 * q[0].mean[k] + 1e-12);
            }
        }
    }
}
