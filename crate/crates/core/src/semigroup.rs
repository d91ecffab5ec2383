//! Cylindrical test functions and the checks built on them: the Mehler
//! representation of the transition semigroup, the Dirichlet form and its
//! generator limit, the Itô formula along simulated paths, and exactness of
//! finite-dimensional truncations.
//!
//! A cylindrical function acts on the pairings `x_i = <S_i, gamma>`,
//! `i = 1..=k`. Under the invariant measure these coordinates are iid
//! standard normal, so every invariant-measure integral below is computed in
//! coordinates.

use serde::{Deserialize, Serialize};

use crate::basis::{self, decompose_index, max_level, schauder_pairing, DyadicGrid};
use crate::error::{domain, Error, Result};
use crate::ou_field::{transition, uniform_step, FieldPath, InitialLaw, PathSimulator};
use crate::parallel::map_paths;
use crate::quad::hermite_normal;
use crate::rng::{rng_stream, MISC_STREAM};
use crate::spectrum::SpectrumSpec;
use crate::stats::Estimate;

/// A function `f(s; x_1, ..., x_k)` of time and the first `k` coordinates
/// together with its partial derivatives. Implementations must be stateless.
pub trait CylindricalFn: Send + Sync {
    fn name(&self) -> &str;
    fn arity(&self) -> usize;
    fn value(&self, s: f64, x: &[f64]) -> f64;
    /// `d f / d s`.
    fn time_partial(&self, _s: f64, _x: &[f64]) -> f64 {
        0.0
    }
    /// `d f / d x_i`, `i` zero-based.
    fn partial(&self, i: usize, s: f64, x: &[f64]) -> f64;
    /// `d^2 f / d x_i^2`, `i` zero-based.
    fn second_partial(&self, i: usize, s: f64, x: &[f64]) -> f64;
    fn polynomial_growth(&self) -> bool;
}

/// Checks the supplied partials against central differences at 20 random
/// points, to a relative tolerance of 1e-5.
pub fn validate(f: &dyn CylindricalFn, seed: u64) -> Result<()> {
    let k = f.arity();
    let mut rng = rng_stream(seed, 0, MISC_STREAM);
    let tol = |v: f64| 1e-5 * (1.0 + v.abs());
    let mismatch = |what: &'static str, got: f64, fd: f64, s: f64, x: &[f64]| Error::PartialMismatch {
        name: f.name().to_string(),
        what,
        detail: format!("supplied {got}, difference quotient {fd} at s = {s}, x = {x:?}"),
    };
    for _ in 0..20 {
        let s = rng.next_uniform();
        let x: Vec<f64> = (0..k).map(|_| 1.5 * rng.next_normal()).collect();
        let hs = 1e-5;
        let fd = (f.value(s + hs, &x) - f.value(s - hs, &x)) / (2.0 * hs);
        let got = f.time_partial(s, &x);
        if (got - fd).abs() > tol(got) {
            return Err(mismatch("time partial", got, fd, s, &x));
        }
        for i in 0..k {
            let mut xp = x.clone();
            let mut xm = x.clone();
            let h1 = 1e-5 * (1.0 + x[i].abs());
            xp[i] += h1;
            xm[i] -= h1;
            let fd = (f.value(s, &xp) - f.value(s, &xm)) / (2.0 * h1);
            let got = f.partial(i, s, &x);
            if (got - fd).abs() > tol(got) {
                return Err(mismatch("first partial", got, fd, s, &x));
            }
            let h2 = 1e-3 * (1.0 + x[i].abs());
            xp[i] = x[i] + h2;
            xm[i] = x[i] - h2;
            let fd2 = (f.value(s, &xp) - 2.0 * f.value(s, &x) + f.value(s, &xm)) / (h2 * h2);
            let got = f.second_partial(i, s, &x);
            if (got - fd2).abs() > tol(got) {
                return Err(mismatch("second partial", got, fd2, s, &x));
            }
        }
    }
    Ok(())
}

/// `f = c`.
#[derive(Clone, Copy, Debug)]
pub struct Constant(pub f64);

impl CylindricalFn for Constant {
    fn name(&self) -> &str {
        "constant"
    }
    fn arity(&self) -> usize {
        1
    }
    fn value(&self, _s: f64, _x: &[f64]) -> f64 {
        self.0
    }
    fn partial(&self, _i: usize, _s: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn second_partial(&self, _i: usize, _s: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn polynomial_growth(&self) -> bool {
        true
    }
}

/// `f = x_coord` (coordinate 1-based).
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub coord: usize,
}

impl CylindricalFn for Linear {
    fn name(&self) -> &str {
        "linear"
    }
    fn arity(&self) -> usize {
        self.coord
    }
    fn value(&self, _s: f64, x: &[f64]) -> f64 {
        x[self.coord - 1]
    }
    fn partial(&self, i: usize, _s: f64, _x: &[f64]) -> f64 {
        if i + 1 == self.coord {
            1.0
        } else {
            0.0
        }
    }
    fn second_partial(&self, _i: usize, _s: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn polynomial_growth(&self) -> bool {
        true
    }
}

/// `f = x_coord^2`.
#[derive(Clone, Copy, Debug)]
pub struct Quadratic {
    pub coord: usize,
}

impl CylindricalFn for Quadratic {
    fn name(&self) -> &str {
        "quadratic"
    }
    fn arity(&self) -> usize {
        self.coord
    }
    fn value(&self, _s: f64, x: &[f64]) -> f64 {
        x[self.coord - 1].powi(2)
    }
    fn partial(&self, i: usize, _s: f64, x: &[f64]) -> f64 {
        if i + 1 == self.coord {
            2.0 * x[i]
        } else {
            0.0
        }
    }
    fn second_partial(&self, i: usize, _s: f64, _x: &[f64]) -> f64 {
        if i + 1 == self.coord {
            2.0
        } else {
            0.0
        }
    }
    fn polynomial_growth(&self) -> bool {
        true
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// `f = sigma(x_1) sigma(x_2)` with the logistic sigmoid.
#[derive(Clone, Copy, Debug)]
pub struct SigmoidProduct;

impl CylindricalFn for SigmoidProduct {
    fn name(&self) -> &str {
        "sigmoid_product"
    }
    fn arity(&self) -> usize {
        2
    }
    fn value(&self, _s: f64, x: &[f64]) -> f64 {
        sigmoid(x[0]) * sigmoid(x[1])
    }
    fn partial(&self, i: usize, _s: f64, x: &[f64]) -> f64 {
        let g = sigmoid(x[i]);
        g * (1.0 - g) * sigmoid(x[1 - i])
    }
    fn second_partial(&self, i: usize, _s: f64, x: &[f64]) -> f64 {
        let g = sigmoid(x[i]);
        g * (1.0 - g) * (1.0 - 2.0 * g) * sigmoid(x[1 - i])
    }
    fn polynomial_growth(&self) -> bool {
        true
    }
}

/// `f = sin(x_1) + cos(x_1) x_2 / 2 + cos(2 x_2)`.
#[derive(Clone, Copy, Debug)]
pub struct TrigPolynomial;

impl CylindricalFn for TrigPolynomial {
    fn name(&self) -> &str {
        "trig"
    }
    fn arity(&self) -> usize {
        2
    }
    fn value(&self, _s: f64, x: &[f64]) -> f64 {
        x[0].sin() + 0.5 * x[0].cos() * x[1] + (2.0 * x[1]).cos()
    }
    fn partial(&self, i: usize, _s: f64, x: &[f64]) -> f64 {
        match i {
            0 => x[0].cos() - 0.5 * x[0].sin() * x[1],
            _ => 0.5 * x[0].cos() - 2.0 * (2.0 * x[1]).sin(),
        }
    }
    fn second_partial(&self, i: usize, _s: f64, x: &[f64]) -> f64 {
        match i {
            0 => -x[0].sin() - 0.5 * x[0].cos() * x[1],
            _ => -4.0 * (2.0 * x[1]).cos(),
        }
    }
    fn polynomial_growth(&self) -> bool {
        true
    }
}

/// `f(s; x) = s x_1`.
#[derive(Clone, Copy, Debug)]
pub struct TimeLinear;

impl CylindricalFn for TimeLinear {
    fn name(&self) -> &str {
        "time_linear"
    }
    fn arity(&self) -> usize {
        1
    }
    fn value(&self, s: f64, x: &[f64]) -> f64 {
        s * x[0]
    }
    fn time_partial(&self, _s: f64, x: &[f64]) -> f64 {
        x[0]
    }
    fn partial(&self, i: usize, s: f64, _x: &[f64]) -> f64 {
        if i == 0 {
            s
        } else {
            0.0
        }
    }
    fn second_partial(&self, _i: usize, _s: f64, _x: &[f64]) -> f64 {
        0.0
    }
    fn polynomial_growth(&self) -> bool {
        true
    }
}

/// Product `prod_m f_m` of cylindrical functions at a common time.
pub struct Product(pub Vec<Box<dyn CylindricalFn>>);

impl CylindricalFn for Product {
    fn name(&self) -> &str {
        "product"
    }
    fn arity(&self) -> usize {
        self.0.iter().map(|f| f.arity()).max().unwrap_or(0)
    }
    fn value(&self, s: f64, x: &[f64]) -> f64 {
        self.0.iter().map(|f| f.value(s, x)).product()
    }
    fn time_partial(&self, s: f64, x: &[f64]) -> f64 {
        (0..self.0.len())
            .map(|m| {
                self.0
                    .iter()
                    .enumerate()
                    .map(|(j, f)| if j == m { f.time_partial(s, x) } else { f.value(s, x) })
                    .product::<f64>()
            })
            .sum()
    }
    fn partial(&self, i: usize, s: f64, x: &[f64]) -> f64 {
        (0..self.0.len())
            .map(|m| {
                self.0
                    .iter()
                    .enumerate()
                    .map(|(j, f)| if j == m { f.partial(i, s, x) } else { f.value(s, x) })
                    .product::<f64>()
            })
            .sum()
    }
    fn second_partial(&self, i: usize, s: f64, x: &[f64]) -> f64 {
        let n = self.0.len();
        let mut total = 0.0;
        for a in 0..n {
            for b in 0..n {
                let mut term = 1.0;
                for (j, f) in self.0.iter().enumerate() {
                    term *= match (j == a, j == b) {
                        (true, true) => f.second_partial(i, s, x),
                        (true, false) | (false, true) => f.partial(i, s, x),
                        (false, false) => f.value(s, x),
                    };
                }
                total += term;
            }
        }
        total
    }
    fn polynomial_growth(&self) -> bool {
        self.0.iter().all(|f| f.polynomial_growth())
    }
}

/// Names accepted by [`catalog`].
pub const CATALOG: &[&str] = &[
    "constant",
    "linear",
    "quadratic",
    "sigmoid_product",
    "trig",
    "time_linear",
];

/// Built-in test functions by name.
pub fn catalog(name: &str) -> Option<Box<dyn CylindricalFn>> {
    Some(match name {
        "constant" => Box::new(Constant(1.0)),
        "linear" => Box::new(Linear { coord: 1 }),
        "quadratic" => Box::new(Quadratic { coord: 1 }),
        "sigmoid_product" => Box::new(SigmoidProduct),
        "trig" => Box::new(TrigPolynomial),
        "time_linear" => Box::new(TimeLinear),
        _ => return None,
    })
}

/// Contraction and noise scales of the Mehler representation at time `t`:
/// coordinate `i` maps to `c_i x_i + s_i xi_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MehlerSample {
    pub t: f64,
    pub contraction: Vec<f64>,
    pub scale: Vec<f64>,
}

impl MehlerSample {
    pub fn new(spec: &SpectrumSpec, k: usize, t: f64) -> Result<Self> {
        if !(t >= 0.0) {
            return Err(domain("t", "time must be nonnegative"));
        }
        let (contraction, scale) = spec.lambdas(k)?.iter().map(|&l| transition(l, t)).unzip();
        Ok(Self { t, contraction, scale })
    }

    pub fn apply(&self, x0: &[f64], xi: &[f64], out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = self.contraction[i] * x0[i] + self.scale[i] * xi[i];
        }
    }

    /// The step `self` followed by `next`, as a single step.
    pub fn then(&self, next: &MehlerSample) -> MehlerSample {
        let contraction: Vec<f64> = self
            .contraction
            .iter()
            .zip(&next.contraction)
            .map(|(a, b)| a * b)
            .collect();
        let scale = self
            .scale
            .iter()
            .zip(&next.contraction)
            .zip(&next.scale)
            .map(|((s1, c2), s2)| ((c2 * s1).powi(2) + s2 * s2).sqrt())
            .collect();
        MehlerSample {
            t: self.t + next.t,
            contraction,
            scale,
        }
    }
}

fn padded(initials: &[f64], k: usize) -> Vec<f64> {
    (0..k).map(|i| initials.get(i).copied().unwrap_or(0.0)).collect()
}

/// `E f(T_t x_0 + y)` with `y ~ mu_t`, by Monte Carlo over `n_samples` draws.
pub fn mehler_expectation(
    f: &dyn CylindricalFn,
    initials: &[f64],
    spec: &SpectrumSpec,
    t: f64,
    n_samples: usize,
    seed: u64,
) -> Result<Estimate> {
    let k = f.arity();
    let x0 = padded(initials, k);
    if t == 0.0 {
        return Ok(Estimate::exact(f.value(0.0, &x0)));
    }
    let step = MehlerSample::new(spec, k, t)?;
    let samples = map_paths(n_samples, |p| {
        let mut s = rng_stream(seed, p as u64, MISC_STREAM);
        let mut xi = vec![0.0; k];
        s.fill_normal(&mut xi);
        let mut y = vec![0.0; k];
        step.apply(&x0, &xi, &mut y);
        f.value(t, &y)
    });
    Ok(Estimate::from_samples(&samples))
}

/// `E f(X_t)` from simulated field paths: the field is advanced in `steps`
/// exact steps, synthesized on a dyadic grid, and the coordinates are
/// recovered by pairing with the Schauder functions.
pub fn pathwise_expectation(
    f: &dyn CylindricalFn,
    initials: &[f64],
    spec: &SpectrumSpec,
    t: f64,
    steps: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Estimate> {
    if !(t > 0.0) || steps == 0 {
        return Err(domain("t", "pathwise expectation needs t > 0 and at least one step"));
    }
    let k = f.arity();
    let d = spec.dim();
    let mut level = 0;
    while basis::truncation_count(level, d) < k {
        level += 1;
    }
    let n = basis::truncation_count(level, d);
    let times = (0..=steps).map(|j| t * j as f64 / steps as f64).collect();
    let sim = PathSimulator::new(spec, n, times, seed)?.with_initials(InitialLaw::Fixed(padded(initials, n)));
    let grid = DyadicGrid::new(max_level(n, d) + 1)?;
    let indices = (1..=k).map(|i| decompose_index(i, d)).collect::<Result<Vec<_>>>()?;
    let samples = map_paths(n_paths, |p| {
        let path = sim.simulate(p as u64);
        let field = basis::synthesize(path.coords_at(steps), d, grid).expect("grid depth fixed above");
        let x: Vec<f64> = indices
            .iter()
            .map(|idx| schauder_pairing(idx, &field).expect("grid depth fixed above"))
            .collect();
        f.value(t, &x)
    });
    Ok(Estimate::from_samples(&samples))
}

/// How a deterministic-looking value was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    Quadrature,
    MonteCarlo,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FormValue {
    pub value: f64,
    pub se: f64,
    pub mode: EvalMode,
}

/// Settings for invariant-measure integrals.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianIntegration {
    /// Gauss–Hermite points per axis.
    pub points: usize,
    /// Largest dimension handled by tensor quadrature.
    pub max_quadrature_dim: usize,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for GaussianIntegration {
    fn default() -> Self {
        Self {
            points: 32,
            max_quadrature_dim: 4,
            mc_samples: 200_000,
            seed: 0,
        }
    }
}

/// `E g(xi)` for `xi ~ N(0, I_k)`.
fn gaussian_integral(k: usize, opts: &GaussianIntegration, g: impl Fn(&[f64]) -> f64 + Sync) -> Result<FormValue> {
    if k <= opts.max_quadrature_dim {
        let rule = hermite_normal(opts.points)?;
        let total_points = rule.len().pow(k as u32);
        let parts = map_paths(rule.len(), |first| {
            let per = total_points / rule.len();
            let mut x = vec![0.0; k];
            let mut sum = 0.0;
            for rest in 0..per {
                let mut w = rule.weights[first];
                x[0] = rule.nodes[first];
                let mut code = rest;
                for xj in x.iter_mut().skip(1) {
                    let q = code % rule.len();
                    code /= rule.len();
                    *xj = rule.nodes[q];
                    w *= rule.weights[q];
                }
                sum += w * g(&x);
            }
            sum
        });
        Ok(FormValue {
            value: parts.iter().sum(),
            se: 0.0,
            mode: EvalMode::Quadrature,
        })
    } else {
        let samples = map_paths(opts.mc_samples, |p| {
            let mut s = rng_stream(opts.seed, p as u64, MISC_STREAM);
            let mut x = vec![0.0; k];
            s.fill_normal(&mut x);
            g(&x)
        });
        let e = Estimate::from_samples(&samples);
        Ok(FormValue {
            value: e.mean,
            se: e.se,
            mode: EvalMode::MonteCarlo,
        })
    }
}

/// Dirichlet form `E(F, H) = sum_{i<=k} lambda_i E[d_i f d_i h]` under iid
/// standard normal coordinates.
pub fn dirichlet_form(
    f: &dyn CylindricalFn,
    h: &dyn CylindricalFn,
    spec: &SpectrumSpec,
    opts: &GaussianIntegration,
) -> Result<FormValue> {
    let k = f.arity().max(h.arity());
    if k == 0 {
        return Err(domain("k", "cylindrical functions must use at least one coordinate"));
    }
    let lambdas = spec.lambdas(k)?;
    gaussian_integral(k, opts, |x| {
        lambdas
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let a = if i < f.arity() { f.partial(i, 0.0, x) } else { 0.0 };
                let b = if i < h.arity() { h.partial(i, 0.0, x) } else { 0.0 };
                l * a * b
            })
            .sum()
    })
}

/// One row of the generator-limit table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorRow {
    pub t: f64,
    pub quotient: Estimate,
    pub target: f64,
    pub mode: EvalMode,
}

impl GeneratorRow {
    pub fn relative_error(&self) -> f64 {
        (self.quotient.mean - self.target).abs() / self.target.abs().max(f64::MIN_POSITIVE)
    }
}

/// `(1/t) E_nu[(F(X_0) - E_{X_0} F(X_t)) H(X_0)]` for each `t`, next to the
/// Dirichlet form it converges to. Up to two coordinates the outer and inner
/// Gaussian integrals are nested Gauss–Hermite rules; otherwise each outer
/// sample uses one independent Mehler draw.
pub fn generator_limit_check(
    f: &dyn CylindricalFn,
    h: &dyn CylindricalFn,
    spec: &SpectrumSpec,
    t_list: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<Vec<GeneratorRow>> {
    let k = f.arity().max(h.arity());
    if t_list.iter().any(|t| !(*t > 0.0)) {
        return Err(domain("t_list", "times must be positive"));
    }
    let target = dirichlet_form(f, h, spec, &GaussianIntegration::default())?.value;
    t_list
        .iter()
        .map(|&t| {
            let step = MehlerSample::new(spec, k, t)?;
            if k <= 2 {
                let opts = GaussianIntegration {
                    points: 32,
                    max_quadrature_dim: 2,
                    ..GaussianIntegration::default()
                };
                let inner_rule = hermite_normal(32)?;
                let v = gaussian_integral(k, &opts, |x0| {
                    let mut inner = 0.0;
                    let mut y = vec![0.0; k];
                    let mut xi = vec![0.0; k];
                    let total = inner_rule.len().pow(k as u32);
                    for code in 0..total {
                        let mut c = code;
                        let mut w = 1.0;
                        for xj in xi.iter_mut() {
                            let q = c % inner_rule.len();
                            c /= inner_rule.len();
                            *xj = inner_rule.nodes[q];
                            w *= inner_rule.weights[q];
                        }
                        step.apply(x0, &xi, &mut y);
                        inner += w * f.value(0.0, &y);
                    }
                    (f.value(0.0, x0) - inner) * h.value(0.0, x0)
                })?;
                Ok(GeneratorRow {
                    t,
                    quotient: Estimate::exact(v.value / t),
                    target,
                    mode: EvalMode::Quadrature,
                })
            } else {
                let samples = map_paths(n_samples, |p| {
                    let mut s = rng_stream(seed, p as u64, MISC_STREAM);
                    let mut x0 = vec![0.0; k];
                    let mut xi = vec![0.0; k];
                    s.fill_normal(&mut x0);
                    s.fill_normal(&mut xi);
                    let mut y = vec![0.0; k];
                    step.apply(&x0, &xi, &mut y);
                    (f.value(0.0, &x0) - f.value(0.0, &y)) * h.value(0.0, &x0) / t
                });
                Ok(GeneratorRow {
                    t,
                    quotient: Estimate::from_samples(&samples),
                    target,
                    mode: EvalMode::MonteCarlo,
                })
            }
        })
        .collect()
}

/// Itô residual along one path with left-point sums, using every
/// `stride`-th stored time:
/// `F(t, G_t) - F(0, G_0) - sum d_s F h - sum_i sum_j d_i f dG_i - sum_i lambda_i sum_j d_i^2 f h`.
pub fn ito_residual(f: &dyn CylindricalFn, path: &FieldPath, stride: usize) -> Result<f64> {
    let step = uniform_step(path.times()).ok_or(Error::NonUniformGrid)?;
    let k = f.arity();
    if k > path.n_coords() {
        return Err(domain("f", "function uses more coordinates than the path carries"));
    }
    let steps = path.times().len() - 1;
    if stride == 0 || !steps.is_multiple_of(stride) {
        return Err(domain("stride", "stride must divide the number of time steps"));
    }
    let h = step * stride as f64;
    let lambdas = &path.lambdas()[..k];
    let mut residual = 0.0;
    let last = steps / stride;
    for c in 0..last {
        let s = path.times()[c * stride];
        let x = &path.coords_at(c * stride)[..k];
        let next = &path.coords_at((c + 1) * stride)[..k];
        let mut term = f.time_partial(s, x) * h;
        for i in 0..k {
            term += f.partial(i, s, x) * (next[i] - x[i]);
            term += lambdas[i] * f.second_partial(i, s, x) * h;
        }
        residual -= term;
    }
    let t_end = path.times()[steps];
    residual += f.value(t_end, &path.coords_at(steps)[..k]) - f.value(0.0, &path.coords_at(0)[..k]);
    Ok(residual)
}

/// Residual of each Itô sum step taken on its own: for step `c`,
/// `F(s_{c+1}, G_{c+1}) - F(s_c, G_c)` minus the step's three sum terms.
pub fn ito_step_residuals(f: &dyn CylindricalFn, path: &FieldPath) -> Result<Vec<f64>> {
    let h = uniform_step(path.times()).ok_or(Error::NonUniformGrid)?;
    let k = f.arity();
    if k > path.n_coords() {
        return Err(domain("f", "function uses more coordinates than the path carries"));
    }
    let lambdas = &path.lambdas()[..k];
    Ok((0..path.times().len() - 1)
        .map(|c| {
            let s = path.times()[c];
            let x = &path.coords_at(c)[..k];
            let next = &path.coords_at(c + 1)[..k];
            let mut term = f.time_partial(s, x) * h;
            for i in 0..k {
                term += f.partial(i, s, x) * (next[i] - x[i]) + lambdas[i] * f.second_partial(i, s, x) * h;
            }
            f.value(path.times()[c + 1], next) - f.value(s, x) - term
        })
        .collect())
}

/// One row of the finite-dimensional exactness table.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FindimRow {
    pub n: usize,
    pub estimate: Estimate,
}

/// `E[prod_m F_m(X^{(n)}(t_m))]` for each truncation `n`. The truncated
/// process keeps coordinates `1..=n` and sets the rest to zero; each
/// coordinate is advanced by exact Mehler steps between the sorted times.
pub fn findim_exactness_check(
    factors: &[(&dyn CylindricalFn, f64)],
    initials: &[f64],
    spec: &SpectrumSpec,
    n_list: &[usize],
    n_paths: usize,
    seed: u64,
) -> Result<Vec<FindimRow>> {
    if factors.is_empty() {
        return Err(domain("factors", "at least one factor is required"));
    }
    if factors.iter().any(|(_, t)| !(*t >= 0.0)) {
        return Err(domain("factors", "evaluation times must be nonnegative"));
    }
    let k = factors.iter().map(|(f, _)| f.arity()).max().unwrap_or(0);
    let mut order: Vec<usize> = (0..factors.len()).collect();
    order.sort_by(|a, b| factors[*a].1.total_cmp(&factors[*b].1));
    n_list
        .iter()
        .map(|&n| {
            if n == 0 {
                return Err(domain("n_list", "truncations start at n = 1"));
            }
            let x0 = padded(initials, n);
            let mut steps = Vec::with_capacity(order.len());
            let mut prev = 0.0;
            for &m in &order {
                steps.push(MehlerSample::new(spec, n, factors[m].1 - prev)?);
                prev = factors[m].1;
            }
            let samples = map_paths(n_paths, |p| {
                let mut x = x0.clone();
                let mut streams: Vec<_> = (0..n).map(|i| rng_stream(seed, p as u64, i as u64)).collect();
                let mut view = vec![0.0; k];
                let mut prod = 1.0;
                for (step, &m) in steps.iter().zip(&order) {
                    for i in 0..n {
                        x[i] = step.contraction[i] * x[i] + step.scale[i] * streams[i].next_normal();
                    }
                    for (i, v) in view.iter_mut().enumerate() {
                        *v = if i < n { x[i] } else { 0.0 };
                    }
                    prod *= factors[m].0.value(factors[m].1, &view);
                }
                prod
            });
            Ok(FindimRow {
                n,
                estimate: Estimate::from_samples(&samples),
            })
        })
        .collect()
}
