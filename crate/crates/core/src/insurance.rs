//! The insurer layer: premiums, scenario classes, payments `Y_i` and residual claims `ε_i`.
//!
//! Premiums follow `π_i = (1 + θ)·E[X_i] + η·σ[X_i]` with moments estimated from the simulated
//! loss sample. The insurer holds `K = k + k0` where `k = Σ π_i`. An event with aggregate loss
//! `S` is
//!
//! * favorable when `S < k`: every loss is paid and the surplus `k - S` is shared by fixed
//!   proportions `c_0, c_1, ..., c_n`;
//! * intermediate when `k ≤ S ≤ K`: every loss is paid;
//! * a default when `S > K`: capital `K` is split proportionally to the claims and the
//!   uncovered remainder `ε_i = X_i - Y_i` goes to the ex-post tax pool.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::{Error, Result, ScenarioMatrix};

/// How the insurer's capital is specified.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capital {
    /// Initial capital `k0`; `K = k + k0`.
    Initial(f64),
    /// Total capital `K`; `k0 = K - k` is derived once premiums are known.
    Total(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsurerConfig {
    pub theta: f64,
    pub eta: f64,
    pub capital: Capital,
    /// `c_0` (insurer) followed by `c_1..c_n`, normalised to sum to one.
    surplus_shares: Vec<f64>,
}

impl InsurerConfig {
    /// `surplus_shares` may be empty, meaning the insurer keeps the whole surplus.
    pub fn new(theta: f64, eta: f64, capital: Capital, surplus_shares: Vec<f64>) -> Result<Self> {
        if !(theta >= 0.0 && theta.is_finite()) {
            return Err(Error::invalid(format!("theta must be >= 0, got {theta}")));
        }
        if !(eta >= 0.0 && eta.is_finite()) {
            return Err(Error::invalid(format!("eta must be >= 0, got {eta}")));
        }
        match capital {
            Capital::Initial(k0) if !(k0 >= 0.0 && k0.is_finite()) => {
                return Err(Error::invalid(format!("k0 must be >= 0, got {k0}")))
            }
            Capital::Total(total) if !(total >= 0.0 && total.is_finite()) => {
                return Err(Error::invalid(format!(
                    "total capital must be >= 0, got {total}"
                )))
            }
            _ => {}
        }
        let surplus_shares = if surplus_shares.is_empty() {
            vec![1.0]
        } else {
            if surplus_shares.iter().any(|c| !(*c >= 0.0 && c.is_finite())) {
                return Err(Error::invalid("surplus shares must be non-negative"));
            }
            let total: f64 = surplus_shares.iter().sum();
            if !(total > 0.0) {
                return Err(Error::invalid("surplus shares sum to zero"));
            }
            surplus_shares.iter().map(|c| c / total).collect()
        };
        Ok(Self {
            theta,
            eta,
            capital,
            surplus_shares,
        })
    }

    /// Share of region `i` (0-based) in the surplus; zero when no shares were configured.
    pub fn region_share(&self, i: usize) -> f64 {
        self.surplus_shares.get(i + 1).copied().unwrap_or(0.0)
    }

    pub fn insurer_share(&self) -> f64 {
        self.surplus_shares[0]
    }

    pub fn surplus_shares(&self) -> &[f64] {
        &self.surplus_shares
    }

    fn check_regions(&self, n: usize) -> Result<()> {
        if self.surplus_shares.len() > 1 && self.surplus_shares.len() != n + 1 {
            return Err(Error::invalid(format!(
                "expected {} surplus shares (insurer first), got {}",
                n + 1,
                self.surplus_shares.len()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PremiumSchedule {
    pub premiums: Vec<f64>,
    /// `k = Σ π_i`.
    pub collected: f64,
    pub initial_capital: f64,
    /// `K = k + k0`.
    pub total_capital: f64,
}

impl PremiumSchedule {
    pub fn new(premiums: Vec<f64>, capital: Capital) -> Result<Self> {
        if premiums.iter().any(|p| !(*p >= 0.0 && p.is_finite())) {
            return Err(Error::invalid("premiums must be non-negative"));
        }
        let collected: f64 = premiums.iter().sum();
        let (initial_capital, total_capital) = match capital {
            Capital::Initial(k0) => (k0, collected + k0),
            Capital::Total(total) => {
                if total < collected {
                    return Err(Error::invalid(format!(
                        "total capital {total} is below the collected premium {collected}"
                    )));
                }
                (total - collected, total)
            }
        };
        Ok(Self {
            premiums,
            collected,
            initial_capital,
            total_capital,
        })
    }
}

/// `π_i = (1 + θ)·mean_i + η·sd_i` over the simulated losses.
pub fn compute_premiums(losses: &ScenarioMatrix, cfg: &InsurerConfig) -> Result<PremiumSchedule> {
    if losses.n_scenarios() < 2 {
        return Err(Error::invalid("premiums need at least two loss scenarios"));
    }
    if losses.values().iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::invalid("losses must be non-negative"));
    }
    cfg.check_regions(losses.n_regions())?;
    let means = losses.column_means();
    let sds = losses.column_std_devs();
    let premiums = means
        .iter()
        .zip(&sds)
        .map(|(m, s)| (1.0 + cfg.theta) * m + cfg.eta * s)
        .collect();
    PremiumSchedule::new(premiums, cfg.capital)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioClass {
    Favorable,
    Intermediate,
    Default,
}

impl ScenarioClass {
    pub const ALL: [ScenarioClass; 3] = [
        ScenarioClass::Favorable,
        ScenarioClass::Intermediate,
        ScenarioClass::Default,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            ScenarioClass::Favorable => "favorable",
            ScenarioClass::Intermediate => "intermediate",
            ScenarioClass::Default => "default",
        }
    }
}

impl std::fmt::Display for ScenarioClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ScenarioClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "favorable" => Ok(ScenarioClass::Favorable),
            "intermediate" => Ok(ScenarioClass::Intermediate),
            "default" => Ok(ScenarioClass::Default),
            other => Err(Error::invalid(format!("unknown scenario class `{other}`"))),
        }
    }
}

/// Ties `S = k` and `S = K` are intermediate.
pub fn classify(aggregate: f64, sched: &PremiumSchedule) -> ScenarioClass {
    if aggregate < sched.collected {
        ScenarioClass::Favorable
    } else if aggregate > sched.total_capital {
        ScenarioClass::Default
    } else {
        ScenarioClass::Intermediate
    }
}

/// One settled event.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSample {
    pub losses: Vec<f64>,
    pub aggregate: f64,
    pub class: ScenarioClass,
    pub payments: Vec<f64>,
    pub residuals: Vec<f64>,
    pub insurer_wealth: f64,
}

impl ScenarioSample {
    pub fn residual_total(&self) -> f64 {
        self.residuals.iter().sum()
    }

    /// `c_i (k - S)` on favorable events, zero otherwise.
    pub fn surplus_received(&self, region: usize, sched: &PremiumSchedule, cfg: &InsurerConfig) -> f64 {
        match self.class {
            ScenarioClass::Favorable => cfg.region_share(region) * (sched.collected - self.aggregate),
            _ => 0.0,
        }
    }
}

pub fn settle(losses: &[f64], sched: &PremiumSchedule, cfg: &InsurerConfig) -> Result<ScenarioSample> {
    if losses.iter().any(|x| !(*x >= 0.0)) {
        return Err(Error::invalid("losses must be non-negative"));
    }
    if losses.len() != sched.premiums.len() {
        return Err(Error::invalid(format!(
            "{} losses for {} premium-paying regions",
            losses.len(),
            sched.premiums.len()
        )));
    }
    let aggregate: f64 = losses.iter().sum();
    let class = classify(aggregate, sched);
    let n = losses.len();
    let mut residuals = vec![0.0; n];
    let (payments, insurer_wealth) = match class {
        ScenarioClass::Favorable => {
            let surplus = sched.collected - aggregate;
            let payments = losses
                .iter()
                .enumerate()
                .map(|(i, x)| x + cfg.region_share(i) * surplus)
                .collect();
            (payments, sched.initial_capital + cfg.insurer_share() * surplus)
        }
        ScenarioClass::Intermediate => (losses.to_vec(), sched.total_capital - aggregate),
        ScenarioClass::Default => {
            if !(aggregate > 0.0) {
                return Err(Error::Numerical(
                    "default classified with zero aggregate loss".into(),
                ));
            }
            let capital = sched.total_capital;
            let payments: Vec<f64> = losses.iter().map(|x| x / aggregate * capital).collect();
            for (r, (x, y)) in residuals.iter_mut().zip(losses.iter().zip(&payments)) {
                *r = (x - y).max(0.0);
            }
            (payments, 0.0)
        }
    };
    Ok(ScenarioSample {
        losses: losses.to_vec(),
        aggregate,
        class,
        payments,
        residuals,
        insurer_wealth,
    })
}

/// Settles every scenario row in parallel.
pub fn settle_all(
    losses: &ScenarioMatrix,
    sched: &PremiumSchedule,
    cfg: &InsurerConfig,
) -> Result<Vec<ScenarioSample>> {
    cfg.check_regions(losses.n_regions())?;
    (0..losses.n_scenarios())
        .into_par_iter()
        .map(|i| settle(losses.row(i), sched, cfg))
        .collect()
}

/// Residual-claim rows of the default scenarios.
pub fn default_residuals(samples: &[ScenarioSample]) -> Result<ScenarioMatrix> {
    let n = samples
        .first()
        .map(|s| s.residuals.len())
        .ok_or_else(|| Error::invalid("no settled scenarios"))?;
    let values: Vec<f64> = samples
        .iter()
        .filter(|s| s.class == ScenarioClass::Default)
        .flat_map(|s| s.residuals.iter().copied())
        .collect();
    ScenarioMatrix::new(n, values)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnrichmentFlag {
    pub scenario: usize,
    pub region: usize,
    pub surplus: f64,
    pub premium: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EnrichmentReport {
    pub flags: Vec<EnrichmentFlag>,
}

impl EnrichmentReport {
    pub fn passed(&self) -> bool {
        self.flags.is_empty()
    }
}

/// Flags every `(scenario, region)` with `c_i (k - S)^+ > π_i`.
pub fn no_free_enrichment_check(
    samples: &[ScenarioSample],
    sched: &PremiumSchedule,
    cfg: &InsurerConfig,
) -> EnrichmentReport {
    let mut flags = Vec::new();
    for (s, sample) in samples.iter().enumerate() {
        let surplus = (sched.collected - sample.aggregate).max(0.0);
        for (i, premium) in sched.premiums.iter().enumerate() {
            let share = cfg.region_share(i) * surplus;
            if share > *premium {
                flags.push(EnrichmentFlag {
                    scenario: s,
                    region: i,
                    surplus: share,
                    premium: *premium,
                });
            }
        }
    }
    EnrichmentReport { flags }
}
