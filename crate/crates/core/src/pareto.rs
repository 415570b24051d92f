//! Pareto-optimal taxation rules indexed by weights on the unit simplex.
//!
//! For weights `α` the optimal split of a total residual claim `s` solves
//! `min Σ α_i v_i(T_i)` subject to `Σ T_i = s` and `0 ≤ T_i ≤ cap_i`. Its first order
//! conditions give `T_i(λ) = clamp(I_i(λ / α_i), 0, cap_i)` for a common multiplier `λ`.
//! Summing over regions at a fixed `λ` yields the aggregate `s(λ)`, which is continuous and
//! nondecreasing; inverting it gives `Λ(s)` and hence the rule `T_i(Λ(s))`.
//!
//! All multipliers are handled as `L = ln λ`. Region `i` enters at `λ_i = α_i v_i'(0)` and
//! saturates at `λ_i^max = α_i v_i'(cap_i)`; between consecutive thresholds the set of
//! interior regions is fixed, so `Λ` is found by locating the bracketing thresholds and
//! solving inside that segment (in closed form when every interior region is CARA).

use serde::{Deserialize, Serialize};

use crate::disutility::{CapDomain, DisutilityFn};
use crate::{Error, Result};

/// A region's side of the sharing problem: its disutility and its tax capacity `w - π`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Participant {
    pub disutility: DisutilityFn,
    pub cap: f64,
}

impl Participant {
    pub fn new(disutility: DisutilityFn, cap: f64) -> Result<Self> {
        let report = disutility.validate_assumption1(CapDomain::up_to(cap));
        if !report.passed() {
            return Err(Error::invalid(format!(
                "participant violates the disutility assumptions: {}",
                report.violations.join("; ")
            )));
        }
        Ok(Self { disutility, cap })
    }

    pub fn cara(tolerance: f64, cap: f64) -> Result<Self> {
        Self::new(DisutilityFn::cara(tolerance)?, cap)
    }
}

/// Strictly positive weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct Weights(Vec<f64>);

impl Weights {
    /// Normalises `raw` onto the simplex.
    pub fn new(raw: Vec<f64>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::invalid("weights must not be empty"));
        }
        if raw.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
            return Err(Error::invalid("weights must be strictly positive and finite"));
        }
        let total: f64 = raw.iter().sum();
        Ok(Self(raw.into_iter().map(|a| a / total).collect()))
    }

    pub fn uniform(n: usize) -> Result<Self> {
        Self::new(vec![1.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl TryFrom<Vec<f64>> for Weights {
    type Error = Error;

    fn try_from(v: Vec<f64>) -> Result<Self> {
        Weights::new(v)
    }
}

impl From<Weights> for Vec<f64> {
    fn from(w: Weights) -> Self {
        w.0
    }
}

/// Interior set between two consecutive thresholds.
#[derive(Debug, Clone, Copy, Default)]
struct Segment {
    saturated: f64,
    gamma: f64,
    gamma_entry: f64,
    general: bool,
}

#[derive(Debug, Clone)]
pub struct PiecewiseTaxRule {
    weights: Weights,
    participants: Vec<Participant>,
    ln_alpha: Vec<f64>,
    ln_entry: Vec<f64>,
    ln_saturation: Vec<f64>,
    layering: Vec<f64>,
    entry_order: Vec<usize>,
    knots: Vec<f64>,
    knot_sums: Vec<f64>,
    /// `segments[j]` describes the open interval `(knots[j], knots[j + 1])`.
    segments: Vec<Segment>,
    support: f64,
}

const BRACKET_PAD: f64 = 1e-6;
const LN_TOL: f64 = 1e-12;

impl PiecewiseTaxRule {
    pub fn new(weights: Weights, participants: Vec<Participant>) -> Result<Self> {
        let n = participants.len();
        if n == 0 {
            return Err(Error::invalid("a rule needs at least one region"));
        }
        if weights.len() != n {
            return Err(Error::invalid(format!(
                "{} weights for {n} regions",
                weights.len()
            )));
        }
        for p in &participants {
            if !(p.cap > 0.0 && p.cap.is_finite()) {
                return Err(Error::invalid(format!(
                    "tax capacity must be positive, got {}",
                    p.cap
                )));
            }
            p.disutility.check_parameters()?;
        }
        let ln_alpha: Vec<f64> = weights.as_slice().iter().map(|a| a.ln()).collect();
        let ln_entry: Vec<f64> = participants
            .iter()
            .zip(&ln_alpha)
            .map(|(p, la)| la + p.disutility.ln_marginal_unchecked(0.0))
            .collect();
        let ln_saturation: Vec<f64> = participants
            .iter()
            .zip(&ln_alpha)
            .map(|(p, la)| la + p.disutility.ln_marginal_unchecked(p.cap))
            .collect();
        let support = participants.iter().map(|p| p.cap).sum();

        let mut entry_order: Vec<usize> = (0..n).collect();
        entry_order.sort_by(|&a, &b| ln_entry[a].total_cmp(&ln_entry[b]));

        let mut rule = Self {
            weights,
            participants,
            ln_alpha,
            ln_entry,
            ln_saturation,
            layering: Vec::new(),
            entry_order,
            knots: Vec::new(),
            knot_sums: Vec::new(),
            segments: Vec::new(),
            support,
        };
        rule.build_knots();
        rule.layering = rule
            .ln_entry
            .iter()
            .map(|&l| rule.aggregate_at_ln_lambda(l))
            .collect();
        Ok(rule)
    }

    /// Sweeps the sorted thresholds once, tracking which regions are interior.
    fn build_knots(&mut self) {
        #[derive(Clone, Copy)]
        enum Event {
            Enter(usize),
            Saturate(usize),
        }
        let n = self.n_regions();
        let mut events: Vec<(f64, Event)> = Vec::with_capacity(2 * n);
        for i in 0..n {
            events.push((self.ln_entry[i], Event::Enter(i)));
            events.push((self.ln_saturation[i], Event::Saturate(i)));
        }
        events.sort_by(|a, b| a.0.total_cmp(&b.0));

        let mut interior_general: Vec<usize> = Vec::new();
        let mut seg = Segment::default();
        let mut e = 0;
        while e < events.len() {
            let l = events[e].0;
            while e < events.len() && events[e].0 <= l {
                match events[e].1 {
                    Event::Enter(i) => match self.participants[i].disutility.log_linear_slope() {
                        Some(g) => {
                            seg.gamma += g;
                            seg.gamma_entry += g * self.ln_entry[i];
                        }
                        None => interior_general.push(i),
                    },
                    Event::Saturate(i) => {
                        seg.saturated += self.participants[i].cap;
                        match self.participants[i].disutility.log_linear_slope() {
                            Some(g) => {
                                seg.gamma -= g;
                                seg.gamma_entry -= g * self.ln_entry[i];
                            }
                            None => interior_general.retain(|&j| j != i),
                        }
                    }
                }
                e += 1;
            }
            seg.general = !interior_general.is_empty();
            if seg.gamma.abs() < 1e-12 * self.total_gamma() {
                seg.gamma = 0.0;
                seg.gamma_entry = 0.0;
            }
            self.knots.push(l);
            self.knot_sums.push(self.aggregate_at_ln_lambda(l));
            self.segments.push(seg);
        }
        // Sums must be monotone for the bracketing search even under rounding.
        for j in 1..self.knot_sums.len() {
            if self.knot_sums[j] < self.knot_sums[j - 1] {
                self.knot_sums[j] = self.knot_sums[j - 1];
            }
        }
        let last = self.knot_sums.len() - 1;
        self.knot_sums[last] = self.support;
    }

    fn total_gamma(&self) -> f64 {
        self.participants
            .iter()
            .filter_map(|p| p.disutility.log_linear_slope())
            .sum::<f64>()
            .max(1.0)
    }

    pub fn n_regions(&self) -> usize {
        self.participants.len()
    }

    pub fn weights(&self) -> &Weights {
        &self.weights
    }

    pub fn alpha(&self) -> &[f64] {
        self.weights.as_slice()
    }

    pub fn participants(&self) -> &[Participant] {
        &self.participants
    }

    pub fn caps(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        self.participants.iter().map(|p| p.cap)
    }

    /// `λ_i = α_i v_i'(0)`.
    pub fn entry_thresholds(&self) -> Vec<f64> {
        self.ln_entry.iter().map(|l| l.exp()).collect()
    }

    /// `λ_i^max = α_i v_i'(cap_i)`.
    pub fn saturation_thresholds(&self) -> Vec<f64> {
        self.ln_saturation.iter().map(|l| l.exp()).collect()
    }

    pub fn ln_entry_thresholds(&self) -> &[f64] {
        &self.ln_entry
    }

    pub fn ln_saturation_thresholds(&self) -> &[f64] {
        &self.ln_saturation
    }

    /// `C_i = s(λ_i)`, the aggregate level at which region `i` starts paying.
    pub fn layering_constants(&self) -> &[f64] {
        &self.layering
    }

    /// Region indices in ascending `λ_i`, ties by index.
    pub fn entry_order(&self) -> &[usize] {
        &self.entry_order
    }

    /// Upper end of the evaluation domain, `Σ cap_i`.
    pub fn support(&self) -> f64 {
        self.support
    }

    fn participation_one(&self, i: usize, ln_lambda: f64) -> f64 {
        let p = &self.participants[i];
        if ln_lambda <= self.ln_entry[i] {
            0.0
        } else if ln_lambda >= self.ln_saturation[i] {
            p.cap
        } else {
            p.disutility
                .inverse_ln_marginal(ln_lambda - self.ln_alpha[i], CapDomain::up_to(p.cap))
        }
    }

    /// `T_i(λ)` for every region, given `ln λ`.
    pub fn participation_at_ln_lambda(&self, ln_lambda: f64, out: &mut [f64]) {
        for (i, t) in out.iter_mut().enumerate() {
            *t = self.participation_one(i, ln_lambda);
        }
    }

    pub fn participation_at_lambda(&self, lambda: f64) -> Result<Vec<f64>> {
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!("multiplier must be positive, got {lambda}")));
        }
        let mut out = vec![0.0; self.n_regions()];
        self.participation_at_ln_lambda(lambda.ln(), &mut out);
        Ok(out)
    }

    pub fn aggregate_at_ln_lambda(&self, ln_lambda: f64) -> f64 {
        (0..self.n_regions())
            .map(|i| self.participation_one(i, ln_lambda))
            .sum()
    }

    /// `s(λ) = Σ T_i(λ)`.
    pub fn aggregate_at_lambda(&self, lambda: f64) -> Result<f64> {
        if !(lambda > 0.0) {
            return Err(Error::invalid(format!("multiplier must be positive, got {lambda}")));
        }
        Ok(self.aggregate_at_ln_lambda(lambda.ln()))
    }

    fn check_support(&self, s: f64) -> Result<f64> {
        let slack = 1e-12 * self.support.max(1.0);
        if !(s >= 0.0 && s <= self.support + slack) {
            return Err(Error::OutOfDomain {
                value: s,
                lo: 0.0,
                hi: self.support,
            });
        }
        Ok(s.min(self.support))
    }

    /// `ln Λ(s)`; flat stretches of `s(λ)` resolve to their left end.
    pub fn invert_ln_lambda(&self, s: f64) -> Result<f64> {
        let s = self.check_support(s)?;
        let j = self.knot_sums.partition_point(|&v| v < s);
        if j == 0 || self.knot_sums[j] == s {
            return Ok(self.knots[j]);
        }
        let (lo, hi) = (self.knots[j - 1], self.knots[j]);
        let seg = self.segments[j - 1];
        if !seg.general && seg.gamma > 0.0 {
            let l = (s - seg.saturated + seg.gamma_entry) / seg.gamma;
            return Ok(l.clamp(lo, hi));
        }
        Ok(self.bisect(s, lo, hi, self.knot_sums[j - 1], self.knot_sums[j]))
    }

    fn bisect(&self, s: f64, mut lo: f64, mut hi: f64, mut s_lo: f64, mut s_hi: f64) -> f64 {
        for _ in 0..200 {
            if hi - lo <= LN_TOL * lo.abs().max(1.0) {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let v = self.aggregate_at_ln_lambda(mid);
            if v < s {
                lo = mid;
                s_lo = v;
            } else {
                hi = mid;
                s_hi = v;
            }
        }
        if s_hi > s_lo {
            lo + (hi - lo) * ((s - s_lo) / (s_hi - s_lo)).clamp(0.0, 1.0)
        } else {
            hi
        }
    }

    /// `Λ(s)`.
    pub fn invert_lambda(&self, s: f64) -> Result<f64> {
        Ok(self.invert_ln_lambda(s)?.exp())
    }

    /// Plain bisection on `ln λ` over the padded full bracket, without the threshold table.
    pub fn invert_lambda_bisection(&self, s: f64) -> Result<f64> {
        let s = self.check_support(s)?;
        let min_entry = self.ln_entry.iter().copied().fold(f64::INFINITY, f64::min);
        let max_sat = self
            .ln_saturation
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        if s == 0.0 {
            return Ok(min_entry.exp());
        }
        if s >= self.support {
            return Ok(max_sat.exp());
        }
        let mut lo = min_entry + (1.0 - BRACKET_PAD).ln();
        let mut hi = max_sat + (1.0 + BRACKET_PAD).ln();
        for _ in 0..400 {
            if hi - lo <= LN_TOL {
                break;
            }
            let mid = 0.5 * (lo + hi);
            if self.aggregate_at_ln_lambda(mid) < s {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok((0.5 * (lo + hi)).exp())
    }

    /// Writes `T_i(s)` into `out`.
    pub fn evaluate_into(&self, s: f64, out: &mut [f64]) -> Result<()> {
        if out.len() != self.n_regions() {
            return Err(Error::invalid("output length does not match region count"));
        }
        let l = self.invert_ln_lambda(s)?;
        self.participation_at_ln_lambda(l, out);
        Ok(())
    }

    pub fn evaluate(&self, s: f64) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.n_regions()];
        self.evaluate_into(s, &mut out)?;
        Ok(out)
    }

    /// `ln(α_i v_i'(t))` for an arbitrary payment `t` of region `i`.
    pub fn ln_weighted_marginal(&self, i: usize, t: f64) -> f64 {
        self.ln_alpha[i] + self.participants[i].disutility.ln_marginal_unchecked(t)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KktViolation {
    pub s: f64,
    /// Relative size of the breach.
    pub magnitude: f64,
    pub kind: KktBreach,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KktBreach {
    /// No common multiplier satisfies the stationarity and sign conditions.
    Stationarity,
    Allocation,
    Bounds,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktReport {
    pub tolerance: f64,
    pub points: usize,
    pub worst: f64,
    pub worst_at: Option<f64>,
    pub violations: Vec<KktViolation>,
}

impl KktReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

pub const KKT_TOLERANCE: f64 = 1e-8;

/// Checks the optimality conditions of the rule's own allocations on `grid`.
pub fn kkt_verify(rule: &PiecewiseTaxRule, grid: &[f64]) -> Result<KktReport> {
    kkt_verify_allocations(rule, grid, |s| rule.evaluate(s))
}

/// Checks allocations produced by `alloc` against the weights and disutilities of `rule`.
///
/// Each payment is classified as zero, interior or capped. The conditions hold iff some `Λ`
/// satisfies `α_i v_i'(T_i) = Λ` on interior regions, `≥ Λ` at zero and `≤ Λ` at the cap,
/// i.e. iff the largest value over interior and capped regions does not exceed the smallest
/// over interior and zero regions.
pub fn kkt_verify_allocations(
    rule: &PiecewiseTaxRule,
    grid: &[f64],
    mut alloc: impl FnMut(f64) -> Result<Vec<f64>>,
) -> Result<KktReport> {
    let tolerance = KKT_TOLERANCE;
    let mut report = KktReport {
        tolerance,
        points: grid.len(),
        worst: 0.0,
        worst_at: None,
        violations: Vec::new(),
    };
    let caps: Vec<f64> = rule.caps().collect();
    for &s in grid {
        let t = alloc(s)?;
        if t.len() != caps.len() {
            return Err(Error::invalid("allocation length does not match region count"));
        }
        let scale = s.abs().max(1.0);
        let mut breaches = Vec::new();

        let total: f64 = t.iter().sum();
        let alloc_err = (total - s).abs() / scale;
        if alloc_err > 1e-9 {
            breaches.push((KktBreach::Allocation, alloc_err));
        }
        let bound_err = t
            .iter()
            .zip(&caps)
            .map(|(ti, c)| (-ti).max(ti - c).max(0.0) / c.max(1.0))
            .fold(0.0, f64::max);
        if bound_err > 1e-12 {
            breaches.push((KktBreach::Bounds, bound_err));
        }

        let mut upper = f64::INFINITY;
        let mut lower = f64::NEG_INFINITY;
        for (i, (&ti, &cap)) in t.iter().zip(&caps).enumerate() {
            let eps = 1e-12 * cap.max(1.0);
            let value = rule.ln_weighted_marginal(i, ti.clamp(0.0, cap));
            let at_zero = ti <= eps;
            let at_cap = ti >= cap - eps;
            if !at_cap {
                upper = upper.min(value);
            }
            if !at_zero {
                lower = lower.max(value);
            }
        }
        let gap = if lower > upper { (lower - upper).exp_m1() } else { 0.0 };
        if gap > tolerance {
            breaches.push((KktBreach::Stationarity, gap));
        }
        for (kind, magnitude) in breaches {
            if magnitude > report.worst {
                report.worst = magnitude;
                report.worst_at = Some(s);
            }
            report.violations.push(KktViolation { s, magnitude, kind });
        }
        if gap > report.worst {
            report.worst = gap;
            report.worst_at = Some(s);
        }
    }
    Ok(report)
}

/// `points` equally spaced levels over `[0, support]`.
pub fn support_grid(rule: &PiecewiseTaxRule, points: usize) -> Vec<f64> {
    let hi = rule.support();
    match points {
        0 => Vec::new(),
        1 => vec![0.0],
        _ => (0..points)
            .map(|k| hi * k as f64 / (points - 1) as f64)
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::E;

    fn cara_rule(alpha: &[f64], gammas: &[f64], caps: &[f64]) -> PiecewiseTaxRule {
        let parts = gammas
            .iter()
            .zip(caps)
            .map(|(g, c)| Participant::cara(*g, *c).unwrap())
            .collect();
        PiecewiseTaxRule::new(Weights::new(alpha.to_vec()).unwrap(), parts).unwrap()
    }

    #[test]
    fn participation_examples() {
        let rule = cara_rule(&[0.5, 0.5], &[1.0, 2.0], &[1e3, 1e3]);
        let t = rule.participation_at_lambda(0.5 * E).unwrap();
        assert_relative_eq!(t[0], 1.0, max_relative = 1e-14);
        assert_relative_eq!(t[1], 2.0, max_relative = 1e-14);
        assert_relative_eq!(rule.aggregate_at_lambda(0.5 * E).unwrap(), 3.0, max_relative = 1e-14);

        let lam_min = rule.entry_thresholds().into_iter().fold(f64::INFINITY, f64::min);
        assert_eq!(rule.participation_at_lambda(lam_min).unwrap(), vec![0.0, 0.0]);
        assert_eq!(rule.participation_at_lambda(0.1 * lam_min).unwrap(), vec![0.0, 0.0]);
        assert_eq!(rule.aggregate_at_lambda(0.1 * lam_min).unwrap(), 0.0);

        let lam_max = rule
            .saturation_thresholds()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(rule.participation_at_lambda(lam_max).unwrap(), vec![1e3, 1e3]);
        assert_eq!(rule.aggregate_at_lambda(2.0 * lam_max).unwrap(), 2e3);
    }

    #[test]
    fn inversion_examples() {
        let rule = cara_rule(&[0.5, 0.5], &[1.0, 2.0], &[1e3, 1e3]);
        assert_relative_eq!(rule.invert_lambda(3.0).unwrap(), 0.5 * E, max_relative = 1e-12);
        assert_relative_eq!(rule.invert_lambda(0.0).unwrap(), 0.5, max_relative = 1e-15);
        let lam_max = rule
            .saturation_thresholds()
            .into_iter()
            .fold(f64::NEG_INFINITY, f64::max);
        assert_relative_eq!(
            rule.invert_lambda(rule.support()).unwrap(),
            lam_max,
            max_relative = 1e-14
        );
        assert!(rule.invert_lambda(-1.0).is_err());
        assert!(rule.invert_lambda(2e3 + 1.0).is_err());
    }

    #[test]
    fn evaluation_examples() {
        let rule = cara_rule(&[0.3, 0.7], &[1.0, 2.0], &[5.0, 5.0]);
        assert_eq!(rule.evaluate(0.0).unwrap(), vec![0.0, 0.0]);

        let single = cara_rule(&[1.0], &[1.5], &[7.0]);
        for s in [0.0, 0.3, 2.0, 6.9, 7.0] {
            assert_relative_eq!(single.evaluate(s).unwrap()[0], s, max_relative = 1e-12);
        }

        let twins = cara_rule(&[0.5, 0.5], &[1.3, 1.3], &[4.0, 4.0]);
        for s in [0.1, 1.0, 3.3, 7.9] {
            let t = twins.evaluate(s).unwrap();
            assert_relative_eq!(t[0], s / 2.0, max_relative = 1e-12);
            assert_relative_eq!(t[1], s / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn layering_follows_entry_order() {
        let rule = cara_rule(&[0.2, 0.5, 0.3], &[1.0, 1.0, 2.0], &[3.0, 3.0, 3.0]);
        let order = rule.entry_order();
        assert_eq!(order, &[0, 2, 1]);
        let c = rule.layering_constants();
        assert_eq!(c[order[0]], 0.0);
        assert!(c[order[0]] <= c[order[1]] && c[order[1]] <= c[order[2]]);
        // Region 1 pays nothing below its layering constant.
        let below = rule.evaluate(0.99 * c[1]).unwrap();
        assert_eq!(below[1], 0.0);
        let above = rule.evaluate(c[1] + 0.1).unwrap();
        assert!(above[1] > 0.0);
    }

    #[test]
    fn kkt_examples() {
        let rule = cara_rule(&[0.4, 0.6], &[1.0, 2.0], &[4.5, 10.0]);
        let grid = support_grid(&rule, 1000);
        assert!(kkt_verify(&rule, &grid).unwrap().passed());

        // Pick a level where both regions are strictly interior and shift 0.1 between them.
        let s = grid
            .iter()
            .copied()
            .find(|&s| {
                let t = rule.evaluate(s).unwrap();
                t[0] > 0.2 && t[0] < 4.3 && t[1] > 0.2 && t[1] < 9.8
            })
            .unwrap();
        let report = kkt_verify_allocations(&rule, &[s], |s| {
            let mut t = rule.evaluate(s)?;
            t[0] += 0.1;
            t[1] -= 0.1;
            Ok(t)
        })
        .unwrap();
        assert!(!report.passed());
        assert_eq!(report.violations[0].kind, KktBreach::Stationarity);
    }

    #[test]
    fn mixed_families_invert() {
        let parts = vec![
            Participant::cara(1.0, 3.0).unwrap(),
            Participant::new(DisutilityFn::power(1.0, 0.5, 4.0).unwrap(), 4.0).unwrap(),
            Participant::cara(2.5, 2.0).unwrap(),
        ];
        let rule = PiecewiseTaxRule::new(Weights::new(vec![0.2, 0.5, 0.3]).unwrap(), parts).unwrap();
        for s in support_grid(&rule, 301) {
            let t = rule.evaluate(s).unwrap();
            let total: f64 = t.iter().sum();
            assert!((total - s).abs() <= 1e-9 * s.max(1.0), "s={s} total={total}");
            let fast = rule.invert_lambda(s).unwrap();
            let slow = rule.invert_lambda_bisection(s).unwrap();
            if s > 0.0 && s < rule.support() {
                assert_relative_eq!(fast, slow, max_relative = 1e-9);
            }
        }
        assert!(kkt_verify(&rule, &support_grid(&rule, 1000)).unwrap().passed());
    }

    #[test]
    fn flat_segment_takes_left_end() {
        // Region 1 saturates before region 0 enters: s(λ) is flat at 1 in between.
        let rule = cara_rule(&[0.9, 0.1], &[1.0, 1.0], &[1.0, 1.0]);
        let ln_sat1 = rule.ln_saturation_thresholds()[1];
        let ln_entry0 = rule.ln_entry_thresholds()[0];
        assert!(ln_sat1 < ln_entry0);
        assert_relative_eq!(rule.invert_ln_lambda(1.0).unwrap(), ln_sat1, max_relative = 1e-14);
        assert_eq!(rule.evaluate(1.0).unwrap(), vec![0.0, 1.0]);
    }

    fn rule_strategy() -> impl Strategy<Value = PiecewiseTaxRule> {
        (2usize..6)
            .prop_flat_map(|n| {
                (
                    proptest::collection::vec(0.01f64..1.0, n),
                    proptest::collection::vec(0.2f64..5.0, n),
                    proptest::collection::vec(0.1f64..15.0, n),
                )
            })
            .prop_map(|(a, g, c)| cara_rule(&a, &g, &c))
    }

    proptest! {
        #[test]
        fn allocation_bounds_monotonicity(rule in rule_strategy(), u in proptest::collection::vec(0.0f64..=1.0, 20)) {
            let mut levels: Vec<f64> = u.iter().map(|x| x * rule.support()).collect();
            levels.sort_by(f64::total_cmp);
            let caps: Vec<f64> = rule.caps().collect();
            let mut prev = vec![0.0; rule.n_regions()];
            for s in levels {
                let t = rule.evaluate(s).unwrap();
                let total: f64 = t.iter().sum();
                prop_assert!((total - s).abs() <= 1e-9 * s.max(1.0));
                for i in 0..t.len() {
                    prop_assert!(t[i] >= 0.0 && t[i] <= caps[i]);
                    prop_assert!(t[i] >= prev[i] - 1e-12 * caps[i].max(1.0));
                }
                prev = t;
            }
        }

        #[test]
        fn aggregate_is_nondecreasing(rule in rule_strategy(), a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(rule.aggregate_at_ln_lambda(lo) <= rule.aggregate_at_ln_lambda(hi));
        }

        #[test]
        fn fast_inversion_matches_bisection(rule in rule_strategy(), u in 0.001f64..0.999) {
            let s = u * rule.support();
            let fast = rule.invert_ln_lambda(s).unwrap();
            let slow = rule.invert_lambda_bisection(s).unwrap().ln();
            // Either the same multiplier or the same point of a flat stretch.
            let same_allocation = (rule.aggregate_at_ln_lambda(slow) - s).abs() <= 1e-8 * s.max(1.0);
            prop_assert!((fast - slow).abs() <= 1e-9 || same_allocation);
        }

        #[test]
        fn heavier_weight_pays_less(rule in rule_strategy(), j in 0usize..6, bump in 1.05f64..3.0, u in 0.0f64..=1.0) {
            let n = rule.n_regions();
            let j = j % n;
            let s = u * rule.support();
            let mut alpha = rule.alpha().to_vec();
            alpha[j] *= bump;
            let heavier = PiecewiseTaxRule::new(Weights::new(alpha).unwrap(), rule.participants().to_vec()).unwrap();
            let before = rule.evaluate(s).unwrap()[j];
            let after = heavier.evaluate(s).unwrap()[j];
            prop_assert!(after <= before + 1e-9 * s.max(1.0));
        }

        #[test]
        fn rules_pass_kkt(rule in rule_strategy()) {
            let report = kkt_verify(&rule, &support_grid(&rule, 200)).unwrap();
            prop_assert!(report.passed(), "{:?}", report.violations.first());
        }
    }
}
