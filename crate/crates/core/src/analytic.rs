//! Closed-form AFPO rule for two CARA regions.
//!
//! The aggregate residual claim is zero with probability `p0` and otherwise uniform on
//! `[0, w1 + w2]`. With `γ = γ2/γ1`, `μ = μ2/μ1` and
//! `M = (2/(1-p0))² (μ+1) (μ1/γ1)²` the fair weights fall into one of three cases, each
//! defined by an interval for `M`:
//!
//! | case | region 1 pays                          | `ζ = ln(α2/α1)` |
//! |------|----------------------------------------|-----------------|
//! | 1    | everything first, then quota share, then `w1` | `w1/γ1 - sqrt(Mμ/γ - γ (w2/γ2)²)` |
//! | 2    | nothing first, then quota share, then `w1`    | affine in `μ1` |
//! | 3    | nothing first, then quota share, then `s - w2`| `-w2/γ2 + sqrt(M/γ - (w1/γ1)²/γ)` |
//!
//! On the quota-share layer `T1(s) = (s + γ2 ζ)/(1 + γ)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::quadrature::GaussLegendre;
use crate::{Error, Result};

const SET_TOL: f64 = 1e-12;
/// Nodes per piece for the fairness integrals.
pub const QUADRATURE_NODES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cara2Params {
    pub w1: f64,
    pub w2: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub p0: f64,
}

impl Cara2Params {
    /// Validates the parameters. `μ1 + μ2` must equal the mean aggregate loss, since a fair
    /// rule allocates every loss.
    pub fn new(w1: f64, w2: f64, gamma1: f64, gamma2: f64, mu1: f64, mu2: f64, p0: f64) -> Result<Self> {
        for (name, v) in [("w1", w1), ("w2", w2), ("gamma1", gamma1), ("gamma2", gamma2)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&p0) {
            return Err(Error::invalid(format!("p0 must lie in [0, 1), got {p0}")));
        }
        if !(mu1 > 0.0 && mu2 > 0.0) {
            return Err(Error::Infeasible(format!(
                "expected losses must be positive, got mu1={mu1}, mu2={mu2}"
            )));
        }
        let p = Self {
            w1,
            w2,
            gamma1,
            gamma2,
            mu1,
            mu2,
            p0,
        };
        let mean = p.mean_loss();
        if (mu1 + mu2 - mean).abs() > 1e-9 * mean {
            return Err(Error::Infeasible(format!(
                "mu1 + mu2 = {} differs from the mean aggregate loss {mean}",
                mu1 + mu2
            )));
        }
        if w1 / gamma1 > w2 / gamma2 * (1.0 + SET_TOL) {
            return Err(Error::Infeasible(format!(
                "regions must satisfy w1/gamma1 <= w2/gamma2, got {} > {}",
                w1 / gamma1,
                w2 / gamma2
            )));
        }
        Ok(p)
    }

    /// `μ1 = (1-p0)(w1+w2)/2 - μ2`.
    pub fn from_mu2(w1: f64, w2: f64, gamma1: f64, gamma2: f64, mu2: f64, p0: f64) -> Result<Self> {
        let mu1 = (1.0 - p0) * (w1 + w2) / 2.0 - mu2;
        Self::new(w1, w2, gamma1, gamma2, mu1, mu2, p0)
    }

    /// Splits the mean aggregate loss so that `μ2/μ1 = ratio`.
    pub fn from_mu_ratio(w1: f64, w2: f64, gamma1: f64, gamma2: f64, ratio: f64, p0: f64) -> Result<Self> {
        if !(ratio > 0.0) {
            return Err(Error::invalid(format!("mu ratio must be positive, got {ratio}")));
        }
        let mean = (1.0 - p0) * (w1 + w2) / 2.0;
        let mu1 = mean / (1.0 + ratio);
        Self::new(w1, w2, gamma1, gamma2, mu1, ratio * mu1, p0)
    }

    /// The parameters used throughout the sensitivity study.
    pub fn baseline() -> Self {
        Self::from_mu2(4.5, 10.0, 1.0, 2.0, 4.0, 0.2).expect("baseline parameters are feasible")
    }

    pub fn total_wealth(&self) -> f64 {
        self.w1 + self.w2
    }

    pub fn mean_loss(&self) -> f64 {
        (1.0 - self.p0) * self.total_wealth() / 2.0
    }

    pub fn gamma_ratio(&self) -> f64 {
        self.gamma2 / self.gamma1
    }

    pub fn mu_ratio(&self) -> f64 {
        self.mu2 / self.mu1
    }

    pub fn m(&self) -> f64 {
        let f = 2.0 / (1.0 - self.p0);
        f * f * (self.mu_ratio() + 1.0) * (self.mu1 / self.gamma1).powi(2)
    }

    /// The intervals for `M` defining cases 1, 2 and 3.
    pub fn case_sets(&self) -> [(f64, f64); 3] {
        let g = self.gamma_ratio();
        let mu = self.mu_ratio();
        let a = self.w1 / self.gamma1;
        let b = self.w2 / self.gamma2;
        [
            (g * g / mu * b * b, g / mu * a * a + g * g / mu * b * b),
            ((g + 1.0) * a * a, (1.0 - g) * a * a + 2.0 * g * a * b),
            (a * a, (g + 1.0) * a * a),
        ]
    }

    /// The interval for `ζ` corresponding to each case.
    pub fn zeta_intervals(&self) -> [(f64, f64); 3] {
        let a = self.w1 / self.gamma1;
        let b = self.w2 / self.gamma2;
        [(0.0, a), (a - b, 0.0), (-b, a - b)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Case {
    One = 1,
    Two = 2,
    Three = 3,
}

impl Case {
    pub fn id(self) -> u8 {
        self as u8
    }

    fn index(self) -> usize {
        self as usize - 1
    }
}

impl std::fmt::Display for Case {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.id())
    }
}

/// Locates `M` in the case sets; on a shared boundary the lower-numbered case wins.
pub fn classify_case(p: &Cara2Params) -> Result<Case> {
    let m = p.m();
    let sets = p.case_sets();
    for case in [Case::One, Case::Two, Case::Three] {
        let (lo, hi) = sets[case.index()];
        let tol = SET_TOL * hi.abs().max(1.0);
        if m >= lo - tol && m <= hi + tol {
            return Ok(case);
        }
    }
    Err(Error::Infeasible(format!(
        "M = {m} lies outside every case set {sets:?}"
    )))
}

fn zeta_for(case: Case, p: &Cara2Params) -> Result<f64> {
    let g = p.gamma_ratio();
    let a = p.w1 / p.gamma1;
    let b = p.w2 / p.gamma2;
    let m = p.m();
    let root = |x: f64| -> Result<f64> {
        if x < -SET_TOL * m.max(1.0) {
            return Err(Error::Numerical(format!("negative radicand {x} for case {case}")));
        }
        Ok(x.max(0.0).sqrt())
    };
    match case {
        Case::One => Ok(a - root(m * p.mu_ratio() / g - g * b * b)?),
        Case::Two => {
            let q = 1.0 - p.p0;
            Ok(((1.0 + g) * p.w1 / 2.0
                + 2.0 * (p.mu1 + p.mu2) / q * (p.mu1 / (q * p.w1) - 1.0))
                / p.gamma2)
        }
        Case::Three => Ok(-b + root(m / g - a * a / g)?),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Cara2Solution {
    pub params: Cara2Params,
    pub case: Case,
    pub zeta: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    /// Start and end of the quota-share layer.
    pub breakpoints: (f64, f64),
}

pub fn solve_zeta(p: &Cara2Params) -> Result<Cara2Solution> {
    let case = classify_case(p)?;
    let zeta = zeta_for(case, p)?;
    Ok(Cara2Solution::with_zeta(*p, case, zeta))
}

impl Cara2Solution {
    /// The case-`case` rule shape with an arbitrary `ζ`, used to probe the fairness map.
    pub fn with_zeta(params: Cara2Params, case: Case, zeta: f64) -> Self {
        let alpha1 = 1.0 / (1.0 + zeta.exp());
        let g = params.gamma_ratio();
        let c = (1.0 + g) * params.w1 - params.gamma2 * zeta;
        let breakpoints = match case {
            Case::One => (params.gamma1 * zeta, c),
            Case::Two => (-params.gamma2 * zeta, c),
            Case::Three => (
                -params.gamma2 * zeta,
                ((1.0 + g) * params.w2 + params.gamma2 * zeta) / g,
            ),
        };
        Self {
            params,
            case,
            zeta,
            alpha1,
            alpha2: 1.0 - alpha1,
            breakpoints,
        }
    }

    /// Shift `c = (1+γ) w1 - γ2 ζ` of region 1's cap.
    pub fn cap_shift(&self) -> f64 {
        (1.0 + self.params.gamma_ratio()) * self.params.w1 - self.params.gamma2 * self.zeta
    }

    /// Slope of `T1` on the quota-share layer.
    pub fn quota_share(&self) -> f64 {
        self.params.gamma1 / (self.params.gamma1 + self.params.gamma2)
    }

    pub fn t1(&self, s: f64) -> f64 {
        let p = &self.params;
        let (lo, hi) = self.breakpoints;
        let inner = (s + p.gamma2 * self.zeta) / (1.0 + p.gamma_ratio());
        let t = if s <= lo {
            match self.case {
                Case::One => s,
                Case::Two | Case::Three => 0.0,
            }
        } else if s >= hi {
            match self.case {
                Case::One | Case::Two => p.w1,
                Case::Three => s - p.w2,
            }
        } else {
            inner
        };
        t.clamp(0.0, p.w1)
    }

    pub fn t2(&self, s: f64) -> f64 {
        s - self.t1(s)
    }

    /// `(T1(s), T2(s))` on `[0, w1 + w2]`.
    pub fn evaluate(&self, s: f64) -> Result<[f64; 2]> {
        let hi = self.params.total_wealth();
        if !(s >= 0.0 && s <= hi * (1.0 + 1e-12)) {
            return Err(Error::OutOfDomain { value: s, lo: 0.0, hi });
        }
        let s = s.min(hi);
        Ok([self.t1(s), self.t2(s)])
    }

    fn pieces(&self) -> Vec<f64> {
        let hi = self.params.total_wealth();
        let mut b = vec![0.0, self.breakpoints.0.clamp(0.0, hi), self.breakpoints.1.clamp(0.0, hi), hi];
        b.sort_by(f64::total_cmp);
        b
    }

    /// `(E[T1], E[T2])` under the zero-or-uniform loss law.
    pub fn expected_taxes(&self) -> (f64, f64) {
        let gl = GaussLegendre::new(QUADRATURE_NODES);
        self.expected_taxes_with(&gl)
    }

    fn expected_taxes_with(&self, gl: &GaussLegendre) -> (f64, f64) {
        let p = &self.params;
        let w = p.total_wealth();
        let scale = (1.0 - p.p0) / w;
        let breaks = self.pieces();
        let e1 = scale * gl.integrate_pieces(&breaks, |s| self.t1(s));
        let e2 = scale * gl.integrate_pieces(&breaks, |s| self.t2(s));
        (e1, e2)
    }
}

/// `(E[T1] - μ1, E[T2] - μ2)`, integrated numerically.
pub fn analytic_fairness_residual(sol: &Cara2Solution) -> (f64, f64) {
    let (e1, e2) = sol.expected_taxes();
    (e1 - sol.params.mu1, e2 - sol.params.mu2)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    /// `μ = μ2/μ1` with `μ1 + μ2` held at the mean aggregate loss.
    Mu,
    /// `γ = γ2/γ1` with `γ1` and `μ2` held fixed.
    Gamma,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mu" => Ok(SweepParam::Mu),
            "gamma" => Ok(SweepParam::Gamma),
            other => Err(Error::invalid(format!("unknown sweep parameter `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub ratio: f64,
    pub case: Option<Case>,
    pub alpha1: f64,
    pub alpha2: f64,
    pub zeta: f64,
    /// Why the point has no solution.
    pub infeasible: Option<String>,
}

impl SweepRow {
    pub fn is_feasible(&self) -> bool {
        self.case.is_some()
    }
}

/// Evaluates the closed form at `steps` equally spaced ratios over `[min, max]`.
///
/// `base` supplies the fixed quantities; for [`SweepParam::Gamma`] its `μ2` is kept and `μ1`
/// follows from the mean aggregate loss.
pub fn sensitivity_sweep(
    base: &Cara2Params,
    vary: SweepParam,
    min: f64,
    max: f64,
    steps: usize,
) -> Result<Vec<SweepRow>> {
    if !(min > 0.0 && max >= min && max.is_finite()) {
        return Err(Error::invalid(format!("invalid sweep range [{min}, {max}]")));
    }
    if steps == 0 {
        return Err(Error::invalid("a sweep needs at least one step"));
    }
    let ratios: Vec<f64> = if steps == 1 {
        vec![min]
    } else {
        (0..steps)
            .map(|k| min + (max - min) * k as f64 / (steps - 1) as f64)
            .collect()
    };
    let rows = ratios
        .into_par_iter()
        .map(|ratio| {
            let params = match vary {
                SweepParam::Mu => Cara2Params::from_mu_ratio(
                    base.w1, base.w2, base.gamma1, base.gamma2, ratio, base.p0,
                ),
                SweepParam::Gamma => Cara2Params::from_mu2(
                    base.w1,
                    base.w2,
                    base.gamma1,
                    ratio * base.gamma1,
                    base.mu2,
                    base.p0,
                ),
            };
            match params.and_then(|p| solve_zeta(&p)) {
                Ok(sol) => SweepRow {
                    ratio,
                    case: Some(sol.case),
                    alpha1: sol.alpha1,
                    alpha2: sol.alpha2,
                    zeta: sol.zeta,
                    infeasible: None,
                },
                Err(e) => SweepRow {
                    ratio,
                    case: None,
                    alpha1: f64::NAN,
                    alpha2: f64::NAN,
                    zeta: f64::NAN,
                    infeasible: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(rows)
}
