//! Haar functions, Schauder tents, cylindrical pairings and path norms.
//!
//! Basis functions are addressed by a global index `i >= 1`. With ambient
//! dimension `d`, index `i = d (r - 1) + j` selects Haar index `r` acting in
//! coordinate `j`. Haar index `r = 1` is the constant function; otherwise
//! `r = 2^m + k` with `1 <= k <= 2^m` is supported on `[(k-1) 2^-m, k 2^-m)`.
//!
//! Fields live on dyadic grids. Every operation here is exact (up to
//! rounding) as long as the grid resolves the breakpoints of the basis
//! functions involved, i.e. grid depth `>= m + 1` for level `m`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

/// Dyadic level of a Haar index.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Level {
    Root,
    Dyadic { m: u32, k: u64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct BasisIndex {
    /// Global index, starting at 1.
    pub i: usize,
    /// Haar index, starting at 1.
    pub r: usize,
    /// Coordinate in `1..=d`.
    pub j: usize,
    pub d: usize,
    pub level: Level,
}

impl BasisIndex {
    /// Dyadic level `m`, or `None` for the root function.
    pub fn m(&self) -> Option<u32> {
        match self.level {
            Level::Root => None,
            Level::Dyadic { m, .. } => Some(m),
        }
    }

    /// Minimal grid depth on which this function is piecewise linear.
    pub fn required_depth(&self) -> u32 {
        self.m().map_or(1, |m| m + 1)
    }

    /// Peak value of the Schauder tent, `2^{-(m+2)/2}`; 1 for the root.
    pub fn tent_peak(&self) -> f64 {
        self.m().map_or(1.0, |m| (-(m as f64 + 2.0) / 2.0).exp2())
    }
}

pub fn compose_index(r: usize, j: usize, d: usize) -> usize {
    d * (r - 1) + j
}

pub fn decompose_index(i: usize, d: usize) -> Result<BasisIndex> {
    if i == 0 {
        return Err(domain("i", "basis indices start at 1"));
    }
    if d == 0 {
        return Err(domain("d", "dimension must be positive"));
    }
    let r = (i - 1) / d + 1;
    let j = (i - 1) % d + 1;
    let level = if r == 1 {
        Level::Root
    } else {
        let m = (r - 1).ilog2();
        Level::Dyadic {
            m,
            k: (r - (1usize << m)) as u64,
        }
    };
    Ok(BasisIndex { i, r, j, d, level })
}

/// Number of basis functions covering levels root through `level`.
pub fn truncation_count(level: u32, d: usize) -> usize {
    d << (level + 1)
}

/// Global indices `d 2^m < i <= d 2^{m+1}` making up level `m`.
pub fn level_indices(m: u32, d: usize) -> std::ops::RangeInclusive<usize> {
    (d << m) + 1..=(d << (m + 1))
}

/// Deepest dyadic level among the first `n` basis functions (0 when only
/// root functions are present).
pub fn max_level(n: usize, d: usize) -> u32 {
    if n <= d {
        0
    } else {
        let r = (n - 1) / d + 1;
        (r - 1).ilog2()
    }
}

/// Haar function `H_r(t)` on the half-open interval `[0, 1)`.
pub fn haar_eval(r: usize, t: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&t) {
        return Err(domain("t", format!("{t} is outside [0, 1)")));
    }
    if r == 0 {
        return Err(domain("r", "Haar indices start at 1"));
    }
    if r == 1 {
        return Ok(1.0);
    }
    let m = (r - 1).ilog2();
    let k = (r - (1usize << m)) as f64;
    let scale = (1u64 << (m + 1)) as f64;
    let height = (m as f64 / 2.0).exp2();
    let x = t * scale;
    Ok(if x >= 2.0 * k - 2.0 && x < 2.0 * k - 1.0 {
        height
    } else if x >= 2.0 * k - 1.0 && x < 2.0 * k {
        -height
    } else {
        0.0
    })
}

/// Scalar value of the Schauder function in its active coordinate.
/// `s` is clamped to `[0, 1]`; the function is continuous there.
pub fn schauder_value(idx: &BasisIndex, s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    match idx.level {
        Level::Root => s,
        Level::Dyadic { m, k } => {
            let width = (-(m as f64)).exp2();
            let left = (k - 1) as f64 * width;
            let half = width / 2.0;
            let x = s - left;
            if x <= 0.0 || x >= width {
                0.0
            } else {
                idx.tent_peak() * (1.0 - (x - half).abs() / half)
            }
        }
    }
}

/// Schauder function `S_i(s)` as a `d`-vector.
pub fn schauder_eval(idx: &BasisIndex, s: f64) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&s) {
        return Err(domain("s", format!("{s} is outside [0, 1]")));
    }
    let mut out = vec![0.0; idx.d];
    out[idx.j - 1] = schauder_value(idx, s);
    Ok(out)
}

/// Uniform dyadic grid `q 2^-L`, `q = 0..=2^L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DyadicGrid {
    depth: u32,
}

impl DyadicGrid {
    pub fn new(depth: u32) -> Result<Self> {
        if depth == 0 || depth > 24 {
            return Err(domain("depth", format!("{depth} is outside 1..=24")));
        }
        Ok(Self { depth })
    }

    pub fn depth(&self) -> u32 {
        self.depth
    }

    /// Number of nodes, `2^L + 1`.
    pub fn len(&self) -> usize {
        (1usize << self.depth) + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cells(&self) -> usize {
        1usize << self.depth
    }

    pub fn step(&self) -> f64 {
        (-(self.depth as f64)).exp2()
    }

    pub fn node(&self, q: usize) -> f64 {
        q as f64 * self.step()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|q| self.node(q)).collect()
    }

    pub fn require(&self, depth: u32) -> Result<()> {
        if self.depth < depth {
            Err(Error::GridDepth {
                have: self.depth,
                need: depth,
            })
        } else {
            Ok(())
        }
    }
}

/// An `R^d`-valued function sampled at the nodes of a dyadic grid and
/// interpolated linearly between them. Values are stored node-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    grid: DyadicGrid,
    d: usize,
    values: Vec<f64>,
}

impl GridField {
    pub fn zeros(grid: DyadicGrid, d: usize) -> Self {
        Self {
            grid,
            d,
            values: vec![0.0; grid.len() * d],
        }
    }

    /// Builds a field from node-major values (`values[q * d + j]`).
    pub fn from_values(grid: DyadicGrid, d: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() * d {
            return Err(domain(
                "values",
                format!("expected {} entries, got {}", grid.len() * d, values.len()),
            ));
        }
        Ok(Self { grid, d, values })
    }

    /// Samples a scalar function (d = 1) at the grid nodes.
    pub fn from_fn(grid: DyadicGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = (0..grid.len()).map(|q| f(grid.node(q))).collect();
        Self { grid, d: 1, values }
    }

    pub fn grid(&self) -> DyadicGrid {
        self.grid
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Value of coordinate `j` (1-based) at node `q`.
    #[inline]
    pub fn at(&self, q: usize, j: usize) -> f64 {
        self.values[q * self.d + j - 1]
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Adds `coeff * S_idx` to the field. Requires sufficient grid depth.
    pub fn add_schauder(&mut self, idx: &BasisIndex, coeff: f64) -> Result<()> {
        self.grid.require(idx.required_depth())?;
        self.add_schauder_unchecked(idx, coeff);
        Ok(())
    }

    #[inline]
    fn add_schauder_unchecked(&mut self, idx: &BasisIndex, coeff: f64) {
        if coeff == 0.0 {
            return;
        }
        let depth = self.grid.depth;
        let d = self.d;
        let col = idx.j - 1;
        match idx.level {
            Level::Root => {
                let step = self.grid.step();
                for q in 1..self.grid.len() {
                    self.values[q * d + col] += coeff * (q as f64 * step);
                }
            }
            Level::Dyadic { m, k } => {
                let span = 1usize << (depth - m);
                let half = span / 2;
                let q1 = (k as usize - 1) * span;
                let peak = coeff * idx.tent_peak();
                let inv_half = 1.0 / half as f64;
                for off in 1..span {
                    let dist = off.abs_diff(half);
                    let w = (half - dist) as f64 * inv_half;
                    self.values[(q1 + off) * d + col] += peak * w;
                }
            }
        }
    }

    /// Replaces the field by `sum_i coeffs[i-1] S_i`.
    pub fn synthesize_from(&mut self, coeffs: &[f64]) -> Result<()> {
        let need = max_level(coeffs.len(), self.d) + 1;
        self.grid.require(need)?;
        self.fill_zero();
        for (n, &c) in coeffs.iter().enumerate() {
            let idx = decompose_index(n + 1, self.d)?;
            self.add_schauder_unchecked(&idx, c);
        }
        Ok(())
    }

    /// Node-wise difference `self - other` on the same grid.
    pub fn sub(&self, other: &GridField) -> GridField {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        GridField {
            grid: self.grid,
            d: self.d,
            values,
        }
    }
}

/// Field `sum_i coeffs[i-1] S_i` on `grid`.
pub fn synthesize(coeffs: &[f64], d: usize, grid: DyadicGrid) -> Result<GridField> {
    let mut f = GridField::zeros(grid, d);
    f.synthesize_from(coeffs)?;
    Ok(f)
}

/// Pairing `<S_i, gamma> = int g_i d gamma` for a piecewise-linear field.
pub fn schauder_pairing(idx: &BasisIndex, gamma: &GridField) -> Result<f64> {
    if idx.d != gamma.d {
        return Err(domain("gamma", "dimension differs from the basis index"));
    }
    gamma.grid.require(idx.required_depth())?;
    let depth = gamma.grid.depth;
    let j = idx.j;
    Ok(match idx.level {
        Level::Root => gamma.at(gamma.grid.len() - 1, j) - gamma.at(0, j),
        Level::Dyadic { m, k } => {
            let span = 1usize << (depth - m);
            let q1 = (k as usize - 1) * span;
            let c = (m as f64 / 2.0).exp2();
            c * (2.0 * gamma.at(q1 + span / 2, j) - gamma.at(q1, j) - gamma.at(q1 + span, j))
        }
    })
}

/// Norm used on path space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    /// Maximum over positions and coordinates of `|f_j(x)|`.
    Sup,
    /// `sum_j int_0^1 |f_j(x)| dx`.
    L1,
}

impl NormKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            NormKind::Sup => "sup",
            NormKind::L1 => "l1",
        }
    }
}

impl std::fmt::Display for NormKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for NormKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sup" | "supnorm" => Ok(NormKind::Sup),
            "l1" | "l1norm" => Ok(NormKind::L1),
            other => Err(domain("norm", format!("unknown norm `{other}`"))),
        }
    }
}

/// Exact integral of `|a + (b - a) x|` over a cell of width `w`.
#[inline]
pub(crate) fn abs_linear_integral(a: f64, b: f64, w: f64) -> f64 {
    if a * b >= 0.0 {
        0.5 * w * (a.abs() + b.abs())
    } else {
        0.5 * w * (a * a + b * b) / (a.abs() + b.abs())
    }
}

pub fn norm(field: &GridField, kind: NormKind) -> f64 {
    match kind {
        NormKind::Sup => field.values.iter().fold(0.0, |acc, v| acc.max(v.abs())),
        NormKind::L1 => {
            let d = field.d;
            let w = field.grid.step();
            let mut total = 0.0;
            for j in 0..d {
                for q in 0..field.grid.cells() {
                    let a = field.values[q * d + j];
                    let b = field.values[(q + 1) * d + j];
                    total += abs_linear_integral(a, b, w);
                }
            }
            total
        }
    }
}
