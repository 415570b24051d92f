//! Disutility functions of a region's tax payment.
//!
//! A disutility `v` is strictly increasing and strictly convex in the amount paid. Two families
//! are supported:
//!
//! * CARA: `v(x) = γ·exp(x/γ)` with risk tolerance `γ > 0`. Then `v'(x) = exp(x/γ)` and the
//!   inverse marginal is `I(y) = γ·ln y`.
//! * Power: the negated power utility `u(z) = (b + z)^c` evaluated at the wealth left after
//!   paying `x` out of a reserve `r = w - π`, i.e. `v(x) = -(b + r - x)^c` with `b > 0` and
//!   `0 < c < 1`.
//!
//! Marginals are also exposed in log form. The Pareto machinery works with `ln λ` so that
//! wealth scales of a few dozen units do not overflow `exp`.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisutilityFn {
    Cara {
        tolerance: f64,
    },
    Power {
        shift: f64,
        exponent: f64,
        /// Wealth net of premium, `w - π`, at which the utility is anchored.
        reserve: f64,
    },
}

/// Admissible tax amounts `[lo, hi]`, normally `[0, w - π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapDomain {
    pub lo: f64,
    pub hi: f64,
}

impl CapDomain {
    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    /// `[0, hi]`.
    pub fn up_to(hi: f64) -> Self {
        Self { lo: 0.0, hi }
    }

    pub fn clamp(&self, x: f64) -> f64 {
        x.max(self.lo).min(self.hi)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

impl Default for DisutilityFn {
    /// `v(l) = e^l`, the common disutility of the storm application.
    fn default() -> Self {
        DisutilityFn::Cara { tolerance: 1.0 }
    }
}

impl DisutilityFn {
    pub fn cara(tolerance: f64) -> Result<Self> {
        let f = DisutilityFn::Cara { tolerance };
        f.check_parameters()?;
        Ok(f)
    }

    pub fn power(shift: f64, exponent: f64, reserve: f64) -> Result<Self> {
        let f = DisutilityFn::Power {
            shift,
            exponent,
            reserve,
        };
        f.check_parameters()?;
        Ok(f)
    }

    pub fn check_parameters(&self) -> Result<()> {
        match *self {
            DisutilityFn::Cara { tolerance } => {
                if !(tolerance.is_finite() && tolerance > 0.0) {
                    return Err(Error::invalid(format!(
                        "CARA tolerance must be positive, got {tolerance}"
                    )));
                }
            }
            DisutilityFn::Power {
                shift,
                exponent,
                reserve,
            } => {
                // b = 0 would give v'(r) = 0 at full payment only in the limit; rejected.
                if !(shift.is_finite() && shift > 0.0) {
                    return Err(Error::invalid(format!(
                        "power shift must be positive, got {shift}"
                    )));
                }
                if !(exponent > 0.0 && exponent < 1.0) {
                    return Err(Error::invalid(format!(
                        "power exponent must lie in (0, 1), got {exponent}"
                    )));
                }
                if !(reserve.is_finite() && reserve >= 0.0) {
                    return Err(Error::invalid(format!(
                        "power reserve must be non-negative, got {reserve}"
                    )));
                }
            }
        }
        Ok(())
    }

    fn domain(&self) -> (f64, f64) {
        match *self {
            DisutilityFn::Cara { .. } => (0.0, f64::INFINITY),
            DisutilityFn::Power { reserve, .. } => (0.0, reserve),
        }
    }

    fn check_domain(&self, x: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if x.is_nan() || x < lo || x > hi {
            return Err(Error::OutOfDomain { value: x, lo, hi });
        }
        Ok(())
    }

    pub fn eval(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(match *self {
            DisutilityFn::Cara { tolerance } => tolerance * (x / tolerance).exp(),
            DisutilityFn::Power {
                shift,
                exponent,
                reserve,
            } => -(shift + reserve - x).powf(exponent),
        })
    }

    /// `v(x)` for any cash outlay, including net receipts `x < 0`, as long as the closed form
    /// is defined (`x ≤ b + r` for the power family).
    pub fn eval_outlay(&self, x: f64) -> Result<f64> {
        let hi = match *self {
            DisutilityFn::Cara { .. } => f64::INFINITY,
            DisutilityFn::Power { shift, reserve, .. } => shift + reserve,
        };
        if x.is_nan() || x > hi {
            return Err(Error::OutOfDomain {
                value: x,
                lo: f64::NEG_INFINITY,
                hi,
            });
        }
        Ok(match *self {
            DisutilityFn::Cara { tolerance } => tolerance * (x / tolerance).exp(),
            DisutilityFn::Power {
                shift,
                exponent,
                reserve,
            } => -(shift + reserve - x).powf(exponent),
        })
    }

    pub fn marginal(&self, x: f64) -> Result<f64> {
        Ok(self.ln_marginal(x)?.exp())
    }

    /// `ln v'(x)`.
    pub fn ln_marginal(&self, x: f64) -> Result<f64> {
        self.check_domain(x)?;
        Ok(self.ln_marginal_unchecked(x))
    }

    pub(crate) fn ln_marginal_unchecked(&self, x: f64) -> f64 {
        match *self {
            DisutilityFn::Cara { tolerance } => x / tolerance,
            DisutilityFn::Power {
                shift,
                exponent,
                reserve,
            } => exponent.ln() + (exponent - 1.0) * (shift + reserve - x).ln(),
        }
    }

    /// `I(y) = (v')^{-1}(y)` clamped to `cap`.
    pub fn inverse_marginal(&self, y: f64, cap: CapDomain) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::invalid(format!(
                "marginal level must be positive, got {y}"
            )));
        }
        Ok(self.inverse_ln_marginal(y.ln(), cap))
    }

    /// Inverse marginal taking `ln y`, clamped to `cap`.
    pub fn inverse_ln_marginal(&self, ln_y: f64, cap: CapDomain) -> f64 {
        let x = match *self {
            DisutilityFn::Cara { tolerance } => tolerance * ln_y,
            DisutilityFn::Power {
                shift,
                exponent,
                reserve,
            } => shift + reserve - ((ln_y - exponent.ln()) / (exponent - 1.0)).exp(),
        };
        cap.clamp(x)
    }

    /// Slope of the unclamped inverse marginal in `ln y` when it is affine, which holds for CARA.
    pub fn log_linear_slope(&self) -> Option<f64> {
        match *self {
            DisutilityFn::Cara { tolerance } => Some(tolerance),
            DisutilityFn::Power { .. } => None,
        }
    }

    pub fn validate_assumption1(&self, cap: CapDomain) -> ValidationReport {
        let mut violations = Vec::new();
        if let Err(e) = self.check_parameters() {
            violations.push(e.to_string());
        }
        if !(cap.hi > cap.lo) || !(cap.hi > 0.0) {
            violations.push("empty tax capacity".to_string());
        }
        if let DisutilityFn::Power { reserve, .. } = *self {
            if cap.hi > reserve {
                violations.push(format!(
                    "tax capacity {} exceeds the power reserve {reserve}",
                    cap.hi
                ));
            }
        }
        if violations.is_empty() {
            match self.marginal(cap.lo) {
                Ok(m) if m > 0.0 && m.is_finite() => {}
                Ok(m) => violations.push(format!("v'(0) = {m} is not strictly positive")),
                Err(e) => violations.push(e.to_string()),
            }
        }
        ValidationReport { violations }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::E;

    #[test]
    fn cara_values() {
        let one = DisutilityFn::cara(1.0).unwrap();
        let two = DisutilityFn::cara(2.0).unwrap();
        assert_eq!(one.eval(0.0).unwrap(), 1.0);
        assert_relative_eq!(two.eval(2.0).unwrap(), 2.0 * E, max_relative = 1e-15);
        assert_relative_eq!(one.eval(1.0).unwrap(), E, max_relative = 1e-15);

        assert_eq!(two.marginal(0.0).unwrap(), 1.0);
        assert_relative_eq!(two.marginal(2.0).unwrap(), E, max_relative = 1e-15);
        assert_relative_eq!(one.marginal(3f64.ln()).unwrap(), 3.0, max_relative = 1e-15);
    }

    #[test]
    fn cara_inverse_marginal_clamps() {
        let one = DisutilityFn::cara(1.0).unwrap();
        let two = DisutilityFn::cara(2.0).unwrap();
        assert_relative_eq!(
            two.inverse_marginal(E, CapDomain::up_to(10.0)).unwrap(),
            2.0,
            max_relative = 1e-15
        );
        assert_eq!(one.inverse_marginal(0.5, CapDomain::up_to(10.0)).unwrap(), 0.0);
        assert_eq!(
            one.inverse_marginal(20f64.exp(), CapDomain::up_to(4.5)).unwrap(),
            4.5
        );
        assert!(one.inverse_marginal(0.0, CapDomain::up_to(1.0)).is_err());
        assert!(one.inverse_marginal(-1.0, CapDomain::up_to(1.0)).is_err());
    }

    #[test]
    fn domain_violations_are_rejected() {
        let f = DisutilityFn::cara(1.0).unwrap();
        assert!(matches!(f.eval(-0.1), Err(Error::OutOfDomain { .. })));
        let p = DisutilityFn::power(1.0, 0.5, 3.0).unwrap();
        assert!(p.eval(3.5).is_err());
        assert!(p.marginal(-1e-9).is_err());
        assert_relative_eq!(f.eval_outlay(-0.1).unwrap(), (-0.1f64).exp(), max_relative = 1e-15);
        assert!(p.eval_outlay(-2.0).unwrap() < p.eval_outlay(0.0).unwrap());
        assert!(p.eval_outlay(4.5).is_err());
    }

    #[test]
    fn assumption1_reports() {
        let f = DisutilityFn::cara(1.0).unwrap();
        assert!(f.validate_assumption1(CapDomain::up_to(4.5)).passed());
        let p = DisutilityFn::power(1.0, 0.5, 3.0).unwrap();
        assert!(p.validate_assumption1(CapDomain::up_to(3.0)).passed());
        // u'(w - π) = 0.5 (1 + 3)^{-0.5} = 0.25 is the marginal at zero tax.
        assert_relative_eq!(p.marginal(0.0).unwrap(), 0.25, max_relative = 1e-14);
        for g in [f, p] {
            let r = g.validate_assumption1(CapDomain::up_to(0.0));
            assert!(!r.passed());
            assert!(r.violations.iter().any(|v| v == "empty tax capacity"));
        }
    }

    #[test]
    fn power_rejects_degenerate_shift() {
        assert!(DisutilityFn::power(0.0, 0.5, 1.0).is_err());
        assert!(DisutilityFn::power(1.0, 1.0, 1.0).is_err());
        let bad = DisutilityFn::Power {
            shift: 0.0,
            exponent: 0.5,
            reserve: 1.0,
        };
        assert!(!bad.validate_assumption1(CapDomain::up_to(1.0)).passed());
    }

    #[test]
    fn serde_shape() {
        let f: DisutilityFn = serde_json::from_str(r#"{"kind":"cara","tolerance":2.0}"#).unwrap();
        assert_eq!(f, DisutilityFn::Cara { tolerance: 2.0 });
        assert!(serde_json::from_str::<DisutilityFn>(r#"{"kind":"cara","gamma":2.0}"#).is_err());
    }

    fn any_fn() -> impl Strategy<Value = (DisutilityFn, f64)> {
        prop_oneof![
            (0.2f64..5.0).prop_map(|g| (DisutilityFn::Cara { tolerance: g }, 20.0)),
            (0.1f64..3.0, 0.05f64..0.95, 0.5f64..20.0).prop_map(|(b, c, r)| (
                DisutilityFn::Power {
                    shift: b,
                    exponent: c,
                    reserve: r
                },
                r
            )),
        ]
    }

    proptest! {
        #[test]
        fn strictly_increasing_and_convex((f, hi) in any_fn(), a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let (x1, x2) = if a < b { (a * hi, b * hi) } else { (b * hi, a * hi) };
            prop_assume!(x2 - x1 > 1e-6 * hi);
            prop_assert!(f.eval(x1).unwrap() < f.eval(x2).unwrap());
            prop_assert!(f.marginal(x1).unwrap() < f.marginal(x2).unwrap());
        }

        #[test]
        fn inverse_marginal_round_trip((f, hi) in any_fn(), t in 0.0f64..1.0) {
            let cap = CapDomain::up_to(hi);
            let lo_m = f.marginal(0.0).unwrap();
            let hi_m = f.marginal(hi).unwrap();
            let y = lo_m * (hi_m / lo_m).powf(t);
            let x = f.inverse_marginal(y, cap).unwrap();
            let back = f.marginal(x).unwrap();
            prop_assert!(((back - y) / y).abs() <= 1e-10, "y={y} back={back}");
        }

        #[test]
        fn marginal_matches_central_difference((f, hi) in any_fn(), t in 0.05f64..0.95) {
            let x = t * hi;
            let h = 1e-5 * x.max(1.0);
            prop_assume!(x - h >= 0.0 && x + h <= hi);
            let fd = (f.eval(x + h).unwrap() - f.eval(x - h).unwrap()) / (2.0 * h);
            let m = f.marginal(x).unwrap();
            prop_assert!((m - fd).abs() <= 1e-6 * m, "m={m} fd={fd}");
        }
    }
}
