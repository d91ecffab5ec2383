//! Gauss rules rescaled to the forms the estimators need.

use gauss_quad::{GaussHermite, GaussLegendre};

use crate::error::{domain, Result};

/// Nodes and weights of a fixed rule.
#[derive(Clone, Debug, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }
}

/// Gauss–Legendre rule on `[0, 1]` with weights summing to 1.
pub fn legendre_unit(points: usize) -> Result<Rule> {
    let rule = GaussLegendre::new(points).map_err(|e| domain("points", e.to_string()))?;
    let (nodes, weights) = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (0.5 * (x + 1.0), 0.5 * w))
        .unzip();
    Ok(Rule { nodes, weights })
}

/// Gauss–Hermite rule for the standard normal law: `E f(xi) ~ sum w f(x)`.
pub fn hermite_normal(points: usize) -> Result<Rule> {
    let rule = GaussHermite::new(points).map_err(|e| domain("points", e.to_string()))?;
    let inv_sqrt_pi = 1.0 / std::f64::consts::PI.sqrt();
    let (nodes, weights) = rule
        .as_node_weight_pairs()
        .iter()
        .map(|&(x, w)| (std::f64::consts::SQRT_2 * x, w * inv_sqrt_pi))
        .unzip();
    Ok(Rule { nodes, weights })
}

/// Composite rule: `panels` equal panels on `[a, b]`, `rule` on each.
pub fn composite(rule: &Rule, a: f64, b: f64, panels: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = (b - a) / panels as f64;
    let mut total = 0.0;
    for p in 0..panels {
        let left = a + p as f64 * h;
        let mut part = 0.0;
        for (x, w) in rule.pairs() {
            part += w * f(left + h * x);
        }
        total += part * h;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn legendre_integrates_polynomials() {
        let r = legendre_unit(8).unwrap();
        for k in 0..16 {
            let v: f64 = r.pairs().map(|(x, w)| w * x.powi(k)).sum();
            assert_relative_eq!(v, 1.0 / (k as f64 + 1.0), max_relative = 1e-13);
        }
    }

    #[test]
    fn hermite_matches_normal_moments() {
        let r = hermite_normal(32).unwrap();
        let m = |k: i32| r.pairs().map(|(x, w)| w * x.powi(k)).sum::<f64>();
        assert_relative_eq!(m(0), 1.0, max_relative = 1e-13);
        assert_relative_eq!(m(2), 1.0, max_relative = 1e-12);
        assert_relative_eq!(m(4), 3.0, max_relative = 1e-12);
        assert_relative_eq!(m(8), 105.0, max_relative = 1e-11);
        assert!(m(3).abs() < 1e-12);
    }

    #[test]
    fn composite_rule_on_smooth_function() {
        let r = legendre_unit(4).unwrap();
        let v = composite(&r, 0.0, std::f64::consts::PI, 16, f64::sin);
        assert_relative_eq!(v, 2.0, max_relative = 1e-12);
    }
}
