//! Numerical AFPO weights for `n` regions.
//!
//! The expected tax of each region under a rule is estimated from a histogram of the aggregate
//! residual claim: within a bin every sample is charged with the relative participation
//! `t_i = T_i(mid)/mid` of the bin midpoint, so the estimate of `E[T_i]` is
//! `Σ_bins t_i(mid) · (sum of samples in the bin) / N`. Because `Σ_i t_i = 1` the gaps
//! `η_i = E[ε_i] - E[T_i]` sum to zero exactly (up to rounding).
//!
//! The weights are then moved on the simplex: the most overcharged regions (`η < 0`) gain
//! weight and the most undercharged (`η > 0`) lose the same amount, until the gaps are small.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::pareto::{Participant, PiecewiseTaxRule, Weights};
use crate::{Error, Result, ScenarioMatrix};

const ALPHA_FLOOR: f64 = 1e-12;
const OSCILLATION_WINDOW: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Stop once `‖Δα‖₂ < delta`.
    pub delta: f64,
    /// Defaults to `0.1 / mean(S_ε)`.
    pub step_size: Option<f64>,
    pub bins: usize,
    /// Defaults to `max(2, ⌈n/10⌉)`; used as `⌊m/2⌋` pairs.
    pub adjust_m: Option<usize>,
    pub max_iter: usize,
    /// Stop once `max |η_i| ≤ fairness_tol · E[S_ε]`.
    pub fairness_tol: f64,
    /// Random initial weights drawn uniformly on the simplex; uniform weights when absent.
    pub seed: Option<u64>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            delta: 1e-6,
            step_size: None,
            bins: 200,
            adjust_m: None,
            max_iter: 50_000,
            fairness_tol: 1e-3,
            seed: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(Error::invalid(format!("delta must be positive, got {}", self.delta)));
        }
        if let Some(step) = self.step_size {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::invalid(format!("step size must be positive, got {step}")));
            }
        }
        if self.bins < 10 {
            return Err(Error::invalid(format!("at least 10 bins required, got {}", self.bins)));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        if !(self.fairness_tol >= 0.0) {
            return Err(Error::invalid("fairness_tol must be non-negative"));
        }
        Ok(())
    }

    pub fn adjust_m_for(&self, n: usize) -> Result<usize> {
        let m = self.adjust_m.unwrap_or_else(|| n.div_ceil(10).max(2));
        if m < 2 || m > n {
            return Err(Error::invalid(format!(
                "adjust_m must lie in [2, {n}], got {m}"
            )));
        }
        Ok(m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Bin {
    mid: f64,
    sum: f64,
}

/// Equal-width histogram of nonnegative samples over `[0, max]` with a separate atom at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistogram {
    bins: Vec<Bin>,
    count: usize,
    zeros: usize,
    max: f64,
    total: f64,
}

impl LossHistogram {
    pub fn new(samples: &[f64], bins: usize) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::invalid("no samples"));
        }
        if bins == 0 {
            return Err(Error::invalid("histogram needs at least one bin"));
        }
        if let Some(bad) = samples.iter().find(|x| !(**x >= 0.0 && x.is_finite())) {
            return Err(Error::invalid(format!("samples must be finite and non-negative, got {bad}")));
        }
        let max = samples.iter().copied().fold(0.0, f64::max);
        let mut zeros = 0;
        let mut sums = vec![0.0; bins];
        let mut filled = vec![false; bins];
        let width = max / bins as f64;
        for &x in samples {
            if x == 0.0 {
                zeros += 1;
                continue;
            }
            let k = ((x / width) as usize).min(bins - 1);
            sums[k] += x;
            filled[k] = true;
        }
        let bins = (0..bins)
            .filter(|&k| filled[k])
            .map(|k| Bin {
                mid: (k as f64 + 0.5) * width,
                sum: sums[k],
            })
            .collect::<Vec<_>>();
        let total = bins.iter().map(|b| b.sum).sum();
        Ok(Self {
            bins,
            count: samples.len(),
            zeros,
            max,
            total,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn zero_count(&self) -> usize {
        self.zeros
    }

    pub fn max(&self) -> f64 {
        self.max
    }

    pub fn mean(&self) -> f64 {
        self.total / self.count as f64
    }

    pub fn nonempty_bins(&self) -> usize {
        self.bins.len()
    }

    /// `E[T_i]` under `rule`.
    pub fn expected_participation(&self, rule: &PiecewiseTaxRule) -> Result<Vec<f64>> {
        let n = rule.n_regions();
        if self.max > rule.support() * (1.0 + 1e-12) {
            return Err(Error::CapacityExceeded {
                max_loss: self.max,
                capacity: rule.support(),
            });
        }
        let per_bin: Vec<Vec<f64>> = self
            .bins
            .par_iter()
            .map(|b| {
                let mut t = vec![0.0; n];
                rule.evaluate_into(b.mid, &mut t)?;
                let scale = b.sum / b.mid;
                t.iter_mut().for_each(|x| *x *= scale);
                Ok(t)
            })
            .collect::<Result<_>>()?;
        let mut out = vec![0.0; n];
        for t in &per_bin {
            for (o, x) in out.iter_mut().zip(t) {
                *o += x;
            }
        }
        let count = self.count as f64;
        out.iter_mut().for_each(|x| *x /= count);
        Ok(out)
    }
}

/// `E[T_i]` estimated from aggregate samples with `bins` histogram bins.
pub fn expected_participation(samples: &[f64], rule: &PiecewiseTaxRule, bins: usize) -> Result<Vec<f64>> {
    LossHistogram::new(samples, bins)?.expected_participation(rule)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FairnessGap {
    /// `η_i = E[ε_i] - E[T_i]`.
    pub eta: Vec<f64>,
    pub mean_residual: Vec<f64>,
    pub expected_tax: Vec<f64>,
}

impl FairnessGap {
    fn new(mean_residual: &[f64], expected_tax: Vec<f64>) -> Self {
        let eta = mean_residual
            .iter()
            .zip(&expected_tax)
            .map(|(e, t)| e - t)
            .collect();
        Self {
            eta,
            mean_residual: mean_residual.to_vec(),
            expected_tax,
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.eta.iter().fold(0.0, |m, e| m.max(e.abs()))
    }

    pub fn sum(&self) -> f64 {
        self.eta.iter().sum()
    }
}

/// Gap between each region's mean residual claim and its expected tax.
pub fn fairness_gap(residuals: &ScenarioMatrix, rule: &PiecewiseTaxRule, bins: usize) -> Result<FairnessGap> {
    if residuals.n_regions() != rule.n_regions() {
        return Err(Error::invalid(format!(
            "residuals have {} regions, rule has {}",
            residuals.n_regions(),
            rule.n_regions()
        )));
    }
    if residuals.is_empty() {
        return Err(Error::invalid("no residual samples"));
    }
    let hist = LossHistogram::new(&residuals.aggregates(), bins)?;
    Ok(FairnessGap::new(
        &residuals.column_means(),
        hist.expected_participation(rule)?,
    ))
}

/// Pairs the `⌊m/2⌋` most negative gaps with the `⌊m/2⌋` most positive by rank.
///
/// Ties go to the lowest index. Pairs whose low side is not negative or whose high side is not
/// positive are dropped.
pub fn extreme_pairs(eta: &[f64], m: usize) -> Vec<(usize, usize)> {
    let k = (m / 2).min(eta.len());
    let mut low: Vec<usize> = (0..eta.len()).collect();
    low.sort_by(|&a, &b| eta[a].total_cmp(&eta[b]).then(a.cmp(&b)));
    let mut high: Vec<usize> = (0..eta.len()).collect();
    high.sort_by(|&a, &b| eta[b].total_cmp(&eta[a]).then(a.cmp(&b)));
    low.into_iter()
        .zip(high)
        .take(k)
        .filter(|&(l, h)| eta[l] < 0.0 && eta[h] > 0.0)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iter: usize,
    pub max_abs_eta: f64,
    pub delta_alpha: f64,
    pub step_size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Fairness,
    Stationary,
    MaxIter,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub weights: Weights,
    pub rule: PiecewiseTaxRule,
    pub gap: FairnessGap,
    pub trace: Vec<TraceRow>,
    pub stop: StopReason,
    pub mean_aggregate: f64,
}

impl Solution {
    pub fn alpha(&self) -> &[f64] {
        self.weights.as_slice()
    }

    /// False when the iteration cap was hit.
    pub fn converged(&self) -> bool {
        self.stop != StopReason::MaxIter
    }

    pub fn relative_gap(&self) -> f64 {
        if self.mean_aggregate > 0.0 {
            self.gap.max_abs() / self.mean_aggregate
        } else {
            0.0
        }
    }
}

fn initial_weights(n: usize, seed: Option<u64>) -> Result<Weights> {
    match seed {
        None => Weights::uniform(n),
        Some(seed) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let draws: Vec<f64> = (0..n)
                .map(|_| {
                    let e: f64 = Exp1.sample(&mut rng);
                    e.max(ALPHA_FLOOR)
                })
                .collect();
            Weights::new(draws)
        }
    }
}

/// Finds weights whose Pareto rule is actuarially fair for the residual sample.
pub fn solve(residuals: &ScenarioMatrix, participants: &[Participant], cfg: &SolverConfig) -> Result<Solution> {
    cfg.validate()?;
    let n = participants.len();
    if n < 2 {
        return Err(Error::invalid("at least two regions are needed to share losses"));
    }
    if residuals.n_regions() != n {
        return Err(Error::invalid(format!(
            "residuals have {} regions, {n} participants given",
            residuals.n_regions()
        )));
    }
    if residuals.is_empty() {
        return Err(Error::invalid("no residual samples"));
    }
    let m = cfg.adjust_m_for(n)?;
    let hist = LossHistogram::new(&residuals.aggregates(), cfg.bins)?;
    let capacity: f64 = participants.iter().map(|p| p.cap).sum();
    if hist.max() > capacity {
        return Err(Error::CapacityExceeded {
            max_loss: hist.max(),
            capacity,
        });
    }
    let mean_residual = residuals.column_means();
    let mean_aggregate = hist.mean();

    let build = |w: Weights| PiecewiseTaxRule::new(w, participants.to_vec());
    let mut weights = initial_weights(n, cfg.seed)?;
    let mut rule = build(weights.clone())?;
    let mut gap = FairnessGap::new(&mean_residual, hist.expected_participation(&rule)?);
    let mut step = cfg
        .step_size
        .unwrap_or(if mean_aggregate > 0.0 { 0.1 / mean_aggregate } else { 0.1 });
    let mut trace = vec![TraceRow {
        iter: 0,
        max_abs_eta: gap.max_abs(),
        delta_alpha: 0.0,
        step_size: step,
    }];
    let target = cfg.fairness_tol * mean_aggregate;
    let mut rising = 0;
    let mut stop = StopReason::MaxIter;

    for iter in 1..=cfg.max_iter {
        if gap.max_abs() <= target {
            stop = StopReason::Fairness;
            break;
        }
        let pairs = extreme_pairs(&gap.eta, m);
        let mut next = weights.as_slice().to_vec();
        for &(l, h) in &pairs {
            let d = step * gap.eta[l].abs().min(gap.eta[h].abs());
            next[l] += d;
            next[h] -= d;
        }
        next.iter_mut().for_each(|a| *a = a.max(ALPHA_FLOOR));
        let next = Weights::new(next)?;
        let delta_alpha = next
            .as_slice()
            .iter()
            .zip(weights.as_slice())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let previous = gap.max_abs();
        weights = next;
        rule = build(weights.clone())?;
        gap = FairnessGap::new(&mean_residual, hist.expected_participation(&rule)?);
        trace.push(TraceRow {
            iter,
            max_abs_eta: gap.max_abs(),
            delta_alpha,
            step_size: step,
        });
        if gap.max_abs() > previous {
            rising += 1;
            if rising >= OSCILLATION_WINDOW {
                step *= 0.5;
                rising = 0;
            }
        } else {
            rising = 0;
        }
        if delta_alpha < cfg.delta {
            stop = if gap.max_abs() <= target {
                StopReason::Fairness
            } else {
                StopReason::Stationary
            };
            break;
        }
    }

    Ok(Solution {
        weights,
        rule,
        gap,
        trace,
        stop,
        mean_aggregate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn halves_rule() -> PiecewiseTaxRule {
        let parts = vec![Participant::cara(1.0, 10.0).unwrap(); 2];
        PiecewiseTaxRule::new(Weights::uniform(2).unwrap(), parts).unwrap()
    }

    #[test]
    fn linear_rule_is_exact() {
        let e = expected_participation(&[2.0, 4.0], &halves_rule(), 10).unwrap();
        assert_relative_eq!(e[0], 1.5, max_relative = 1e-12);
        assert_relative_eq!(e[1], 1.5, max_relative = 1e-12);
    }

    #[test]
    fn zero_samples_give_zero_taxes() {
        let e = expected_participation(&[0.0; 5], &halves_rule(), 10).unwrap();
        assert_eq!(e, vec![0.0, 0.0]);
        assert!(expected_participation(&[], &halves_rule(), 10).is_err());
    }

    #[test]
    fn samples_beyond_support_abort() {
        let err = expected_participation(&[25.0], &halves_rule(), 10).unwrap_err();
        assert!(matches!(err, Error::CapacityExceeded { .. }));
    }

    #[test]
    fn pair_selection() {
        assert_eq!(extreme_pairs(&[-3.0, 1.0, 2.0], 2), vec![(0, 2)]);
        assert_eq!(extreme_pairs(&[-1.0, -1.0, 2.0], 2), vec![(0, 2)]);
        assert_eq!(extreme_pairs(&[-2.0, -1.0, 1.0, 2.0], 4), vec![(0, 3), (1, 2)]);
        assert_eq!(extreme_pairs(&[0.0, 0.0], 2), vec![]);
    }

    #[test]
    fn symmetric_gaps_vanish() {
        let eps = ScenarioMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0], vec![0.0, 0.0]]).unwrap();
        let gap = fairness_gap(&eps, &halves_rule(), 20).unwrap();
        assert!(gap.max_abs() < 1e-12);
    }

    #[test]
    fn overcharged_region_has_negative_gap() {
        let eps = ScenarioMatrix::from_rows(&[vec![1.0, 1.0], vec![2.0, 2.0]]).unwrap();
        let parts = vec![Participant::cara(1.0, 10.0).unwrap(); 2];
        // A light weight on region 0 makes it pay more than half.
        let rule = PiecewiseTaxRule::new(Weights::new(vec![0.2, 0.8]).unwrap(), parts).unwrap();
        let gap = fairness_gap(&eps, &rule, 20).unwrap();
        assert!(gap.eta[0] < 0.0 && gap.eta[1] > 0.0);
        assert!(gap.sum().abs() < 1e-12);
    }

    #[test]
    fn identical_regions_stay_uniform() {
        let eps = ScenarioMatrix::from_rows(&[vec![0.5, 0.5], vec![1.5, 1.5], vec![0.0, 0.0]]).unwrap();
        let parts = vec![Participant::cara(1.0, 5.0).unwrap(); 2];
        let sol = solve(&eps, &parts, &SolverConfig::default()).unwrap();
        assert_relative_eq!(sol.alpha()[0], 0.5, max_relative = 1e-12);
        assert_eq!(sol.stop, StopReason::Fairness);
    }

    #[test]
    fn capacity_is_checked() {
        let eps = ScenarioMatrix::from_rows(&[vec![6.0, 6.0]]).unwrap();
        let parts = vec![Participant::cara(1.0, 5.0).unwrap(); 2];
        let err = solve(&eps, &parts, &SolverConfig::default()).unwrap_err();
        assert!(err.to_string().contains("pool cannot absorb worst loss"));
    }

    #[test]
    fn config_bounds() {
        let cfg = SolverConfig { bins: 5, ..SolverConfig::default() };
        assert!(cfg.validate().is_err());
        let cfg = SolverConfig { adjust_m: Some(7), ..SolverConfig::default() };
        assert!(cfg.adjust_m_for(4).is_err());
        assert_eq!(SolverConfig::default().adjust_m_for(50).unwrap(), 5);
        assert_eq!(SolverConfig::default().adjust_m_for(3).unwrap(), 2);
    }

    #[test]
    fn asymmetric_three_regions_converge_and_stay_deterministic() {
        let eps = ScenarioMatrix::from_rows(&[
            vec![0.0, 0.0, 0.0],
            vec![1.0, 0.5, 0.2],
            vec![2.0, 0.1, 1.0],
            vec![0.5, 1.5, 0.5],
        ])
        .unwrap();
        let parts = vec![
            Participant::cara(1.0, 4.0).unwrap(),
            Participant::cara(2.0, 3.0).unwrap(),
            Participant::cara(0.5, 3.0).unwrap(),
        ];
        let cfg = SolverConfig { seed: Some(7), ..SolverConfig::default() };
        let a = solve(&eps, &parts, &cfg).unwrap();
        let b = solve(&eps, &parts, &cfg).unwrap();
        assert!(a.converged());
        assert!(a.relative_gap() <= 1e-3);
        assert_eq!(a.alpha(), b.alpha());
        assert_eq!(a.trace, b.trace);
        assert!(a.trace.last().unwrap().max_abs_eta <= a.trace[0].max_abs_eta);
    }

    proptest! {
        #[test]
        fn gaps_sum_to_zero(
            rows in proptest::collection::vec(proptest::collection::vec(0.0f64..3.0, 3), 1..40),
            a in proptest::collection::vec(0.05f64..1.0, 3),
        ) {
            let eps = ScenarioMatrix::from_rows(&rows).unwrap();
            let parts = vec![
                Participant::cara(1.0, 9.0).unwrap(),
                Participant::cara(0.7, 9.0).unwrap(),
                Participant::cara(2.0, 9.0).unwrap(),
            ];
            let rule = PiecewiseTaxRule::new(Weights::new(a).unwrap(), parts).unwrap();
            let gap = fairness_gap(&eps, &rule, 50).unwrap();
            let mean_s: f64 = eps.aggregates().iter().sum::<f64>() / rows.len() as f64;
            prop_assert!(gap.sum().abs() <= 1e-9 * mean_s.max(1e-300) + 1e-15);
        }

        #[test]
        fn iterates_stay_on_the_simplex(seed in 0u64..1000) {
            let eps = ScenarioMatrix::from_rows(&[vec![1.0, 0.0, 0.5], vec![0.2, 0.9, 0.0], vec![0.0, 0.0, 0.0]]).unwrap();
            let parts = vec![Participant::cara(1.0, 2.0).unwrap(); 3];
            let cfg = SolverConfig { seed: Some(seed), max_iter: 50, ..SolverConfig::default() };
            let sol = solve(&eps, &parts, &cfg).unwrap();
            let total: f64 = sol.alpha().iter().sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
            prop_assert!(sol.alpha().iter().all(|a| *a > 0.0));
        }
    }
}
