//! Diffusion eigenvalue sequences and their summability conditions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Family {
    /// `lambda_i = a i^alpha`.
    PowerLaw { a: f64, alpha: f64 },
    /// `lambda_i = a (ln(i + 1))^p`.
    LogLaw { a: f64, p: f64 },
    /// Finite list `lambda_1, lambda_2, ...`.
    Explicit { values: Vec<f64> },
}

/// A nondecreasing positive eigenvalue sequence together with the ambient
/// dimension `d` of the path space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    family: Family,
    d: usize,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    degenerate: bool,
}

impl SpectrumSpec {
    pub fn power_law(a: f64, alpha: f64, d: usize) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(alpha >= 0.0 && alpha.is_finite()) {
            return Err(Error::Spectrum(format!(
                "power law needs a > 0, alpha >= 0 (got a={a}, alpha={alpha})"
            )));
        }
        Self::with_family(Family::PowerLaw { a, alpha }, d)
    }

    pub fn log_law(a: f64, p: f64, d: usize) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) || !(p > 0.0 && p.is_finite()) {
            return Err(Error::Spectrum(format!(
                "log law needs a > 0, p > 0 (got a={a}, p={p})"
            )));
        }
        Self::with_family(Family::LogLaw { a, p }, d)
    }

    pub fn explicit(values: Vec<f64>, d: usize) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Spectrum("explicit spectrum is empty".into()));
        }
        if let Some(pos) = values.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(Error::Spectrum(format!(
                "lambda_{} = {} is not positive",
                pos + 1,
                values[pos]
            )));
        }
        if let Some(pos) = values.windows(2).position(|w| w[1] < w[0]) {
            return Err(Error::Spectrum(format!("sequence decreases at index {}", pos + 2)));
        }
        Self::with_family(Family::Explicit { values }, d)
    }

    /// Explicit spectrum that may contain zeros and need not be monotone.
    ///
    /// This violates the standing positivity assumption and exists only to
    /// build single-term reference cases (e.g. `lambda = [l, 0, 0, ...]`).
    #[doc(hidden)]
    pub fn degenerate(values: Vec<f64>, d: usize) -> Result<Self> {
        if values.is_empty() || values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(Error::Spectrum(
                "degenerate spectrum needs finite nonnegative values".into(),
            ));
        }
        let mut s = Self::with_family(Family::Explicit { values }, d)?;
        s.degenerate = true;
        Ok(s)
    }

    /// Validates a deserialized spectrum.
    pub fn validated(self) -> Result<Self> {
        let d = self.d;
        match self.family {
            Family::PowerLaw { a, alpha } => Self::power_law(a, alpha, d),
            Family::LogLaw { a, p } => Self::log_law(a, p, d),
            Family::Explicit { values } if self.degenerate => Self::degenerate(values, d),
            Family::Explicit { values } => Self::explicit(values, d),
        }
    }

    fn with_family(family: Family, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::Spectrum("dimension d must be positive".into()));
        }
        Ok(Self {
            family,
            d,
            degenerate: false,
        })
    }

    pub fn family(&self) -> &Family {
        &self.family
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    /// Stored length for explicit spectra.
    pub fn len(&self) -> Option<usize> {
        match &self.family {
            Family::Explicit { values } => Some(values.len()),
            _ => None,
        }
    }

    pub fn lambda_at(&self, i: usize) -> Result<f64> {
        if i == 0 {
            return Err(crate::error::domain("i", "eigenvalue indices start at 1"));
        }
        Ok(match &self.family {
            Family::PowerLaw { a, alpha } => a * (i as f64).powf(*alpha),
            Family::LogLaw { a, p } => a * ((i as f64) + 1.0).ln().powf(*p),
            Family::Explicit { values } => *values.get(i - 1).ok_or(Error::SpectrumRange {
                index: i,
                len: values.len(),
            })?,
        })
    }

    /// `lambda_1..=lambda_n`.
    pub fn lambdas(&self, n: usize) -> Result<Vec<f64>> {
        (1..=n).map(|i| self.lambda_at(i)).collect()
    }

    /// Whether `lambda_1 >= 1`, the standing assumption of the extreme-value
    /// estimates.
    pub fn supports_extremes(&self) -> bool {
        self.lambda_at(1).map(|l| l >= 1.0).unwrap_or(false)
    }

    pub fn check_closability(&self, m_max: u32) -> Result<ConditionReport> {
        let terms = (0..=m_max)
            .map(|m| Ok((-(m as f64)).exp2() * self.lambda_at(self.d << m)?))
            .collect::<Result<Vec<_>>>()?;
        let analytic = match (&self.family, self.degenerate) {
            (_, true) | (Family::Explicit { .. }, _) => None,
            (Family::PowerLaw { alpha, .. }, _) => Some(*alpha < 1.0),
            (Family::LogLaw { .. }, _) => Some(true),
        };
        Ok(ConditionReport::new(ConditionId::Closability, terms, analytic))
    }

    pub fn check_qv_condition(&self, initials: &[f64], m_max: u32) -> Result<ConditionReport> {
        self.weighted_condition(ConditionId::Qv, initials, m_max, 1)
    }

    pub fn check_approx_condition(&self, initials: &[f64], m_max: u32) -> Result<ConditionReport> {
        self.weighted_condition(ConditionId::Approx, initials, m_max, 0)
    }

    // Terms 2^{-m/2} lambda_{d 2^{m+shift}} (max_level |G_i(0)| + sqrt m).
    // Initial values beyond the supplied slice count as zero.
    fn weighted_condition(&self, id: ConditionId, initials: &[f64], m_max: u32, shift: u32) -> Result<ConditionReport> {
        let d = self.d;
        let terms = (0..=m_max)
            .map(|m| {
                let lam = self.lambda_at(d << (m + shift))?;
                let peak = crate::basis::level_indices(m, d)
                    .filter_map(|i| initials.get(i - 1))
                    .fold(0.0f64, |acc, g| acc.max(g.abs()));
                Ok((-(m as f64) / 2.0).exp2() * lam * (peak + (m as f64).sqrt()))
            })
            .collect::<Result<Vec<_>>>()?;
        let analytic = match (&self.family, self.degenerate) {
            (_, true) | (Family::Explicit { .. }, _) => None,
            (Family::PowerLaw { alpha, .. }, _) => Some(*alpha < 0.5),
            (Family::LogLaw { .. }, _) => Some(true),
        };
        Ok(ConditionReport::new(id, terms, analytic))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConditionId {
    /// `sum_m 2^{-m} lambda_{d 2^m} < inf`.
    Closability,
    /// Weak approximation by finite truncations.
    Approx,
    /// Existence of the scalar and tensor quadratic variation.
    Qv,
}

impl ConditionId {
    pub fn as_str(&self) -> &'static str {
        match self {
            ConditionId::Closability => "closability",
            ConditionId::Approx => "approx",
            ConditionId::Qv => "qv",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Verdict {
    ConvergesAnalytically,
    DivergesAnalytically,
    /// The last ten terms decay geometrically; `tail_estimate` bounds the
    /// remainder by the corresponding geometric series.
    NumericallyPlausible {
        tail_estimate: f64,
    },
    Inconclusive,
}

impl Verdict {
    pub fn converges(&self) -> bool {
        matches!(
            self,
            Verdict::ConvergesAnalytically | Verdict::NumericallyPlausible { .. }
        )
    }

    pub fn label(&self) -> &'static str {
        match self {
            Verdict::ConvergesAnalytically => "converges_analytically",
            Verdict::DivergesAnalytically => "diverges_analytically",
            Verdict::NumericallyPlausible { .. } => "numerically_plausible",
            Verdict::Inconclusive => "inconclusive",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub id: ConditionId,
    pub terms: Vec<f64>,
    pub partial_sums: Vec<f64>,
    pub verdict: Verdict,
}

/// Number of trailing terms inspected by the numeric tail test.
pub const TAIL_WINDOW: usize = 10;
/// Largest admissible ratio between consecutive trailing terms.
pub const TAIL_RATIO: f64 = 0.95;

impl ConditionReport {
    fn new(id: ConditionId, terms: Vec<f64>, analytic: Option<bool>) -> Self {
        let partial_sums = terms
            .iter()
            .scan(0.0, |acc, t| {
                *acc += t;
                Some(*acc)
            })
            .collect();
        let verdict = match analytic {
            Some(true) => Verdict::ConvergesAnalytically,
            Some(false) => Verdict::DivergesAnalytically,
            None => numeric_verdict(&terms),
        };
        Self {
            id,
            terms,
            partial_sums,
            verdict,
        }
    }
}

fn numeric_verdict(terms: &[f64]) -> Verdict {
    if terms.len() < TAIL_WINDOW {
        return Verdict::Inconclusive;
    }
    let tail = &terms[terms.len() - TAIL_WINDOW..];
    if tail.iter().all(|t| *t == 0.0) {
        return Verdict::NumericallyPlausible { tail_estimate: 0.0 };
    }
    if tail.iter().any(|t| *t <= 0.0) {
        return Verdict::Inconclusive;
    }
    let ratio = tail.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    if ratio < TAIL_RATIO {
        let last = tail[TAIL_WINDOW - 1];
        Verdict::NumericallyPlausible {
            tail_estimate: last * ratio / (1.0 - ratio),
        }
    } else {
        Verdict::Inconclusive
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn lambda_examples() {
        let p = SpectrumSpec::power_law(1.0, 0.4, 1).unwrap();
        assert_abs_diff_eq!(p.lambda_at(32).unwrap(), 4.0, epsilon = 1e-12);
        let l = SpectrumSpec::log_law(2.0, 1.0, 1).unwrap();
        assert_abs_diff_eq!(l.lambda_at(1).unwrap(), 2.0 * 2f64.ln(), epsilon = 1e-15);
        let e = SpectrumSpec::explicit(vec![1.0, 1.0, 2.0], 1).unwrap();
        assert_eq!(e.lambda_at(2).unwrap(), 1.0);
        assert_eq!(e.lambda_at(4), Err(Error::SpectrumRange { index: 4, len: 3 }));
    }

    #[test]
    fn explicit_validation() {
        assert!(SpectrumSpec::explicit(vec![2.0, 1.0], 1).is_err());
        assert!(SpectrumSpec::explicit(vec![0.0, 1.0], 1).is_err());
        assert!(SpectrumSpec::explicit(vec![], 1).is_err());
        assert!(SpectrumSpec::degenerate(vec![1.0, 0.0], 1).is_ok());
        assert!(SpectrumSpec::power_law(0.0, 1.0, 1).is_err());
        assert!(SpectrumSpec::power_law(1.0, 1.0, 0).is_err());
    }

    #[test]
    fn closability_examples() {
        let v = |s: SpectrumSpec| s.check_closability(20).unwrap().verdict;
        assert_eq!(
            v(SpectrumSpec::power_law(1.0, 0.5, 1).unwrap()),
            Verdict::ConvergesAnalytically
        );
        let div = SpectrumSpec::power_law(1.0, 1.0, 1)
            .unwrap()
            .check_closability(20)
            .unwrap();
        assert_eq!(div.verdict, Verdict::DivergesAnalytically);
        assert!(div.terms.iter().all(|t| (t - 1.0).abs() < 1e-12));
        assert_eq!(
            v(SpectrumSpec::log_law(1.0, 2.0, 2).unwrap()),
            Verdict::ConvergesAnalytically
        );
    }

    #[test]
    fn qv_and_approx_examples() {
        let zeros = vec![0.0; 1 << 12];
        let p25 = SpectrumSpec::power_law(1.0, 0.25, 1).unwrap();
        assert_eq!(
            p25.check_qv_condition(&zeros, 10).unwrap().verdict,
            Verdict::ConvergesAnalytically
        );
        assert_eq!(
            p25.check_approx_condition(&zeros, 10).unwrap().verdict,
            Verdict::ConvergesAnalytically
        );
        let p75 = SpectrumSpec::power_law(1.0, 0.75, 1).unwrap();
        assert_eq!(
            p75.check_qv_condition(&zeros, 10).unwrap().verdict,
            Verdict::DivergesAnalytically
        );
        let p50 = SpectrumSpec::power_law(1.0, 0.5, 1).unwrap();
        let r = p50.check_approx_condition(&zeros, 10).unwrap();
        assert_eq!(r.verdict, Verdict::DivergesAnalytically);
        // lambda_{2^m} = 2^{m/2}, so the terms are exactly sqrt(m).
        for (m, t) in r.terms.iter().enumerate() {
            assert_abs_diff_eq!(*t, (m as f64).sqrt(), epsilon = 1e-12);
        }
        let log = SpectrumSpec::log_law(1.0, 1.0, 1).unwrap();
        let ones = vec![1.0; 1 << 12];
        assert_eq!(
            log.check_approx_condition(&ones, 10).unwrap().verdict,
            Verdict::ConvergesAnalytically
        );
    }

    #[test]
    fn explicit_constant_is_numerically_summable() {
        let m_max = 20;
        let n = 1usize << (m_max + 1);
        let flat = SpectrumSpec::explicit(vec![1.0; n], 1).unwrap();
        let ones = vec![1.0; n];
        let r = flat.check_qv_condition(&ones, m_max).unwrap();
        let Verdict::NumericallyPlausible { tail_estimate } = r.verdict else {
            panic!("{:?}", r.verdict)
        };
        assert!(tail_estimate > 0.0 && tail_estimate < 0.05);
        for (m, t) in r.terms.iter().enumerate() {
            let m = m as f64;
            assert_abs_diff_eq!(*t, (-m / 2.0).exp2() * (1.0 + m.sqrt()), epsilon = 1e-12);
        }
    }

    #[test]
    fn short_explicit_is_inconclusive_or_errors() {
        let e = SpectrumSpec::explicit(vec![1.0; 64], 1).unwrap();
        assert!(e.check_closability(7).is_err());
        assert_eq!(e.check_closability(5).unwrap().verdict, Verdict::Inconclusive);
    }

    #[test]
    fn extremes_flag() {
        assert!(SpectrumSpec::power_law(1.0, 0.25, 1).unwrap().supports_extremes());
        assert!(!SpectrumSpec::power_law(0.5, 0.25, 1).unwrap().supports_extremes());
    }

    proptest! {
        #[test]
        fn monotone_families(a in 0.1f64..5.0, alpha in 0.0f64..2.0, p in 0.1f64..3.0, i in 1usize..10_000) {
            let pl = SpectrumSpec::power_law(a, alpha, 1).unwrap();
            prop_assert!(pl.lambda_at(i + 1).unwrap() >= pl.lambda_at(i).unwrap());
            let ll = SpectrumSpec::log_law(a, p, 1).unwrap();
            prop_assert!(ll.lambda_at(i + 1).unwrap() >= ll.lambda_at(i).unwrap());
        }

        #[test]
        fn condition_nesting(alpha in 0.0f64..1.5, d in 1usize..3, g in 0.0f64..2.0) {
            let s = SpectrumSpec::power_law(1.0, alpha, d).unwrap();
            let init = vec![g; d << 14];
            let qv = s.check_qv_condition(&init, 12).unwrap();
            let ap = s.check_approx_condition(&init, 12).unwrap();
            let cl = s.check_closability(12).unwrap();
            if qv.verdict.converges() {
                prop_assert!(ap.verdict.converges());
                prop_assert!(cl.verdict.converges());
            }
            for (a, b) in ap.terms.iter().zip(&qv.terms) {
                prop_assert!(a <= b);
            }
            for r in [&qv, &ap, &cl] {
                prop_assert!(r.partial_sums.windows(2).all(|w| w[1] >= w[0]));
            }
        }
    }
}
