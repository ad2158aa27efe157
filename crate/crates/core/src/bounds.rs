//! Closed-form bounds on the expected number of tokens per iteration.
//!
//! With `a = (μ + μ₂)/μ²` and `b = 1 − 1/μ`:
//!
//! * exact upper bound: `E[X] ≤ a ln((P − b)/a) + a + b` for `P ≥ 1 + μ₂/μ²`
//! * limit upper bound: `ln P / μ`, up to `o(ln P)`
//! * imperfect-knowledge lower bound: `min(1/E[Pr[q=0]], ln P / μ_CE)`, up to `o(ln P)`
//! * node count: `E[N(t)] ≤ a eᵗ − 1/μ + 1`
//! * renewal function: `x/μ + 1 ≤ U(x) ≤ x/μ + 1 + μ₂/μ²`, and the
//!   first-passage form `x/μ ≤ U(x) ≤ x/μ + μ₂/μ²`
//!
//! Asymptotic forms drop their error terms; every such value carries a
//! [`Neglected`] marker.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Moment parameters of the verifier's next-token distribution, in nats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentParams {
    /// Expected entropy `E[-Σ β ln β]`.
    pub mu: f64,
    /// Expected second log-moment `E[Σ β ln² β]`.
    pub mu2: f64,
    /// Expected cross-entropy conditioned on `q > 0`.
    pub mu_ce: Option<f64>,
    /// Expected p-mass where `q = 0`.
    pub pr_q_zero: Option<f64>,
    pub stderr_mu: f64,
    pub stderr_mu2: f64,
    pub stderr_mu_ce: Option<f64>,
    pub stderr_pr_q_zero: Option<f64>,
    pub n_samples: u64,
}

impl MomentParams {
    pub fn new(mu: f64, mu2: f64) -> Self {
        Self {
            mu,
            mu2,
            mu_ce: None,
            pr_q_zero: None,
            stderr_mu: 0.0,
            stderr_mu2: 0.0,
            stderr_mu_ce: None,
            stderr_pr_q_zero: None,
            n_samples: 0,
        }
    }

    pub fn with_cross_entropy(mut self, mu_ce: f64, pr_q_zero: f64) -> Self {
        self.mu_ce = Some(mu_ce);
        self.pr_q_zero = Some(pr_q_zero);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.mu == 0.0 {
            return Err(Error::ZeroEntropy(self.mu));
        }
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::InvalidParams(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.mu2 >= 0.0 && self.mu2.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "mu2 must be finite and nonnegative, got {}",
                self.mu2
            )));
        }
        if let Some(ce) = self.mu_ce {
            if !(ce >= 0.0 && ce.is_finite()) {
                return Err(Error::InvalidParams(format!("mu_ce must be nonnegative, got {ce}")));
            }
        }
        if let Some(z) = self.pr_q_zero {
            if !(0.0..=1.0).contains(&z) {
                return Err(Error::InvalidParams(format!("pr_q_zero must lie in [0, 1], got {z}")));
            }
        }
        Ok(())
    }

    /// `a = (μ + μ₂)/μ²`
    pub fn slope(&self) -> f64 {
        (self.mu + self.mu2) / (self.mu * self.mu)
    }

    /// `b = 1 − 1/μ`
    pub fn offset(&self) -> f64 {
        1.0 - 1.0 / self.mu
    }

    /// Smallest capacity the exact bound applies to: `1 + μ₂/μ²`.
    pub fn threshold(&self) -> f64 {
        1.0 + self.mu2 / (self.mu * self.mu)
    }
}

/// Error term dropped from an asymptotic value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Neglected {
    #[serde(rename = "o(log P)")]
    LittleOLogP,
    #[serde(rename = "O(1)")]
    BigOOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactBound {
    pub a: f64,
    pub b: f64,
    pub threshold: f64,
    /// `ln((P − b)/a)`, present when the bound applies.
    pub t_star: Option<f64>,
    /// Bound value; `None` when `P` is below the threshold.
    pub value: Option<f64>,
}

impl ExactBound {
    pub fn is_valid(&self) -> bool {
        self.value.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Asymptotic {
    pub value: f64,
    pub neglected: Neglected,
}

pub fn bound_exact(params: &MomentParams, p_capacity: u64) -> Result<ExactBound> {
    params.validate()?;
    let (a, b, threshold) = (params.slope(), params.offset(), params.threshold());
    let p = p_capacity as f64;
    if p < threshold * (1.0 - 1e-12) {
        return Ok(ExactBound {
            a,
            b,
            threshold,
            t_star: None,
            value: None,
        });
    }
    // a + b = threshold, so t* ≥ 0 up to rounding at the threshold itself
    let t_star = ((p - b) / a).ln().max(0.0);
    Ok(ExactBound {
        a,
        b,
        threshold,
        t_star: Some(t_star),
        value: Some(a * t_star + a + b),
    })
}

/// `ln P / μ`.
pub fn bound_limit(params: &MomentParams, p_capacity: u64) -> Result<Asymptotic> {
    params.validate()?;
    Ok(Asymptotic {
        value: (p_capacity.max(1) as f64).ln() / params.mu,
        neglected: Neglected::LittleOLogP,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossEntropyBound {
    pub value: f64,
    /// `1/E[Pr[q=0]]`; `None` (infinite) when the drafter never misses.
    pub q_miss_branch: Option<f64>,
    /// `ln P / μ_CE`
    pub cross_entropy_branch: f64,
    pub neglected: Neglected,
}

/// `min(1/E[Pr[q=0]], ln P / μ_CE)`.
pub fn bound_ce_lower(params: &MomentParams, p_capacity: u64) -> Result<CrossEntropyBound> {
    params.validate()?;
    let (Some(mu_ce), Some(z)) = (params.mu_ce, params.pr_q_zero) else {
        return Err(Error::InvalidParams(
            "cross-entropy bound needs mu_ce and pr_q_zero".into(),
        ));
    };
    if mu_ce <= 0.0 {
        return Err(Error::InvalidParams(format!("mu_ce must be positive, got {mu_ce}")));
    }
    let ce_branch = (p_capacity.max(1) as f64).ln() / mu_ce;
    let miss = (z > 0.0).then(|| 1.0 / z);
    Ok(CrossEntropyBound {
        value: miss.map_or(ce_branch, |m| m.min(ce_branch)),
        q_miss_branch: miss,
        cross_entropy_branch: ce_branch,
        neglected: Neglected::LittleOLogP,
    })
}

/// Lower and upper bounds on the spine walk's renewal function `U(x)`.
pub fn renewal_bounds(params: &MomentParams, x: f64) -> Result<(f64, f64)> {
    params.validate()?;
    if !(x >= 0.0) {
        return Err(Error::InvalidParams(format!("x must be nonnegative, got {x}")));
    }
    let lower = x / params.mu + 1.0;
    Ok((lower, lower + params.mu2 / (params.mu * params.mu)))
}

/// First-passage form of the renewal bounds: `x/μ ≤ U(x) ≤ x/μ + μ₂/μ²`.
///
/// `U(x)` counts the partial sums `S_0 = 0, S_1, …` not exceeding `x`, which
/// is exactly the first index `τ` with `S_τ > x`. Wald gives
/// `E[τ] = E[S_τ]/μ > x/μ` and Lorden bounds the overshoot `E[S_τ − x]` by
/// `μ₂/μ`. Both ends sit one below [`renewal_bounds`], whose lower end
/// `x/μ + 1` exceeds `U(x)` once `x` is large.
pub fn renewal_bounds_first_passage(params: &MomentParams, x: f64) -> Result<(f64, f64)> {
    let (lower, upper) = renewal_bounds(params, x)?;
    Ok((lower - 1.0, upper - 1.0))
}

/// Upper bound on `E[N(t)]`, the expected number of nodes with value ≤ t.
pub fn bound_en_t(params: &MomentParams, t: f64) -> Result<f64> {
    params.validate()?;
    if !(t >= 0.0) {
        return Err(Error::InvalidParams(format!("t must be nonnegative, got {t}")));
    }
    Ok(params.slope() * t.exp() - 1.0 / params.mu + 1.0)
}

/// Reference curve `ln P − ln ln P` for `E[T_P]`; its `O(1)` is unquantified.
pub fn limit_lower_tp(p_capacity: u64) -> Option<Asymptotic> {
    (p_capacity > 1).then(|| {
        let lp = (p_capacity as f64).ln();
        Asymptotic {
            value: lp - lp.ln(),
            neglected: Neglected::BigOOne,
        }
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Validity {
    /// `P ≥ 1 + μ₂/μ²`
    pub p_above_threshold: bool,
    /// `None` when the parameters did not come from a known family.
    pub non_arithmetic: Option<bool>,
}

/// Every bound for one parameter set and capacity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub p_capacity: u64,
    pub mu: f64,
    pub mu2: f64,
    pub mu_ce: Option<f64>,
    pub pr_q_zero: Option<f64>,
    pub a: f64,
    pub b: f64,
    pub threshold: f64,
    pub t_star: Option<f64>,
    pub exact_upper: Option<f64>,
    pub limit_upper: Asymptotic,
    pub limit_lower_tp: Option<Asymptotic>,
    pub ce_lower: Option<CrossEntropyBound>,
    pub renewal_x: f64,
    pub renewal_lower: f64,
    pub renewal_upper: f64,
    pub validity: Validity,
}

impl BoundReport {
    /// `renewal_x` defaults to `ln P`.
    pub fn compute(
        params: &MomentParams,
        p_capacity: u64,
        renewal_x: Option<f64>,
        non_arithmetic: Option<bool>,
    ) -> Result<Self> {
        let exact = bound_exact(params, p_capacity)?;
        let limit = bound_limit(params, p_capacity)?;
        let ce = match (params.mu_ce, params.pr_q_zero) {
            (Some(_), Some(_)) => Some(bound_ce_lower(params, p_capacity)?),
            _ => None,
        };
        let x = renewal_x.unwrap_or_else(|| (p_capacity.max(1) as f64).ln());
        let (renewal_lower, renewal_upper) = renewal_bounds(params, x)?;
        Ok(Self {
            p_capacity,
            mu: params.mu,
            mu2: params.mu2,
            mu_ce: params.mu_ce,
            pr_q_zero: params.pr_q_zero,
            a: exact.a,
            b: exact.b,
            threshold: exact.threshold,
            t_star: exact.t_star,
            exact_upper: exact.value,
            limit_upper: limit,
            limit_lower_tp: limit_lower_tp(p_capacity),
            ce_lower: ce,
            renewal_x: x,
            renewal_lower,
            renewal_upper,
            validity: Validity {
                p_above_threshold: exact.is_valid(),
                non_arithmetic,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::LN_2;

    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn table_row_coefficients() {
        let m = MomentParams::new(0.279, 0.777);
        let e = bound_exact(&m, 60).unwrap();
        // a = 1.056 / 0.077841, b = 1 - 1/0.279
        assert!(close(e.a, 13.566_115_543_222_723, 1e-12));
        assert!(close(e.b, -2.584_229_390_681_003_6, 1e-12));
        assert!((e.value.unwrap() - 31.72).abs() < 0.01, "{:?}", e);
    }

    #[test]
    fn threshold_case() {
        // μ = 1, μ₂ = 2: threshold 3, a = 3, b = 0
        let m = MomentParams::new(1.0, 2.0);
        let e = bound_exact(&m, 3).unwrap();
        assert_eq!(e.t_star, Some(0.0));
        assert!(close(e.value.unwrap(), 3.0, 1e-15));
        let below = bound_exact(&m, 2).unwrap();
        assert!(!below.is_valid());
        assert_eq!(below.value, None);
    }

    #[test]
    fn limit_examples() {
        let m = MomentParams::new(0.683, 2.960);
        assert!((bound_limit(&m, 60).unwrap().value - 5.9946).abs() < 1e-4);
        assert_eq!(bound_limit(&m, 1).unwrap().value, 0.0);
        let u = MomentParams::new(LN_2, LN_2 * LN_2);
        assert!(close(bound_limit(&u, 8).unwrap().value, 3.0, 1e-15));
    }

    #[test]
    fn ce_examples() {
        let m = MomentParams::new(LN_2, LN_2 * LN_2).with_cross_entropy(LN_2, 0.0);
        let b = bound_ce_lower(&m, 8).unwrap();
        assert!(close(b.value, 3.0, 1e-15));
        assert_eq!(b.q_miss_branch, None);

        let m = MomentParams::new(0.5, 1.0).with_cross_entropy(1.0, 0.5);
        let b = bound_ce_lower(&m, 1_000_000).unwrap();
        assert_eq!(b.value, 2.0);
        assert!((b.cross_entropy_branch - 13.8155).abs() < 1e-4);

        let plain = MomentParams::new(0.5, 1.0);
        assert!(bound_ce_lower(&plain, 8).is_err());
    }

    #[test]
    fn ce_equals_limit_when_q_is_p() {
        let m = MomentParams::new(0.61, 0.9).with_cross_entropy(0.61, 0.0);
        for p in [2u64, 17, 1000] {
            assert_eq!(
                bound_ce_lower(&m, p).unwrap().value,
                bound_limit(&m, p).unwrap().value
            );
        }
    }

    #[test]
    fn renewal_examples() {
        let m = MomentParams::new(1.0, 2.0);
        assert_eq!(renewal_bounds(&m, 3.0).unwrap(), (4.0, 6.0));
        assert_eq!(renewal_bounds(&m, 0.0).unwrap(), (1.0, 3.0));
        let t = MomentParams::new(0.683, 2.960);
        let (lo, hi) = renewal_bounds(&t, 2.0).unwrap();
        assert!((lo - 3.928).abs() < 1e-3);
        assert!((hi - 10.27).abs() < 1e-2);
        assert_eq!(renewal_bounds_first_passage(&m, 3.0).unwrap(), (3.0, 5.0));
    }

    #[test]
    fn en_t_examples() {
        let m = MomentParams::new(0.4, 0.9);
        assert!(close(bound_en_t(&m, 0.0).unwrap(), m.threshold(), 1e-14));
        let u = MomentParams::new(LN_2, LN_2 * LN_2);
        assert!(bound_en_t(&u, 2.0 * LN_2).unwrap() >= 7.0);
        let t = MomentParams::new(0.279, 0.777);
        let expected = t.slope() * 1f64.exp() - 1.0 / 0.279 + 1.0;
        assert_eq!(bound_en_t(&t, 1.0).unwrap(), expected);
    }

    #[test]
    fn zero_entropy_rejected() {
        let m = MomentParams::new(0.0, 0.0);
        assert!(matches!(bound_exact(&m, 10), Err(Error::ZeroEntropy(_))));
        assert!(bound_limit(&MomentParams::new(-1.0, 0.0), 10).is_err());
    }

    #[test]
    fn report_flags() {
        let m = MomentParams::new(0.279, 0.777);
        let r = BoundReport::compute(&m, 5, None, Some(true)).unwrap();
        assert!(!r.validity.p_above_threshold);
        assert_eq!(r.exact_upper, None);
        let r = BoundReport::compute(&m, 60, Some(2.0), None).unwrap();
        assert!(r.validity.p_above_threshold);
        assert!(r.exact_upper.unwrap() >= 1.0);
        assert_eq!(r.renewal_x, 2.0);
        assert!((r.limit_upper.value - 14.675).abs() < 1e-3);
    }
}
