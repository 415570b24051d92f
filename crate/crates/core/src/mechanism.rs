//! Financing mechanisms compared by the disutility of each region's cash outlay.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disutility::DisutilityFn;
use crate::insurance::{InsurerConfig, PremiumSchedule, ScenarioClass, ScenarioSample};
use crate::pareto::PiecewiseTaxRule;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MechanismKind {
    /// Every region bears its own loss.
    Baseline,
    /// Insurance only; uncovered default losses stay with the region.
    TraditionalInsurance,
    /// No insurer; the whole aggregate loss is shared by the rule.
    PureRiskSharing,
    /// Insurance plus sharing of the residual claims on default.
    Hybrid,
}

impl MechanismKind {
    pub const ALL: [MechanismKind; 4] = [
        MechanismKind::Baseline,
        MechanismKind::TraditionalInsurance,
        MechanismKind::PureRiskSharing,
        MechanismKind::Hybrid,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            MechanismKind::Baseline => "baseline",
            MechanismKind::TraditionalInsurance => "traditional_insurance",
            MechanismKind::PureRiskSharing => "pure_risk_sharing",
            MechanismKind::Hybrid => "hybrid",
        }
    }

    pub fn shares_losses(&self) -> bool {
        matches!(self, MechanismKind::PureRiskSharing | MechanismKind::Hybrid)
    }
}

impl std::fmt::Display for MechanismKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for MechanismKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MechanismKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown mechanism `{s}`")))
    }
}

/// Everything a mechanism needs besides the settled scenarios.
#[derive(Debug, Clone, Copy)]
pub struct MechanismSpec<'a> {
    pub kind: MechanismKind,
    pub schedule: &'a PremiumSchedule,
    pub insurer: &'a InsurerConfig,
    /// Required by the sharing mechanisms.
    pub rule: Option<&'a PiecewiseTaxRule>,
}

impl MechanismSpec<'_> {
    fn rule(&self) -> Result<&PiecewiseTaxRule> {
        self.rule
            .ok_or_else(|| Error::invalid(format!("mechanism {} needs a fitted rule", self.kind)))
    }
}

/// Cash outlays and their disutilities, scenario-major.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlayTable {
    pub kind: MechanismKind,
    pub n_regions: usize,
    pub classes: Vec<ScenarioClass>,
    pub outlays: Vec<f64>,
    pub disutilities: Vec<f64>,
}

impl OutlayTable {
    pub fn n_scenarios(&self) -> usize {
        self.classes.len()
    }

    pub fn outlay_row(&self, s: usize) -> &[f64] {
        &self.outlays[s * self.n_regions..(s + 1) * self.n_regions]
    }

    pub fn disutility_row(&self, s: usize) -> &[f64] {
        &self.disutilities[s * self.n_regions..(s + 1) * self.n_regions]
    }
}

/// Premium net of surplus received; shared by the insurance-based mechanisms so that they
/// agree bit for bit outside default.
fn insured_base(sample: &ScenarioSample, spec: &MechanismSpec<'_>, i: usize) -> f64 {
    spec.schedule.premiums[i] - sample.surplus_received(i, spec.schedule, spec.insurer)
}

fn outlays_for(sample: &ScenarioSample, spec: &MechanismSpec<'_>) -> Result<Vec<f64>> {
    let n = sample.losses.len();
    match spec.kind {
        MechanismKind::Baseline => Ok(sample.losses.clone()),
        MechanismKind::TraditionalInsurance => Ok((0..n)
            .map(|i| {
                let base = insured_base(sample, spec, i);
                if sample.class == ScenarioClass::Default {
                    base + (sample.losses[i] - sample.payments[i])
                } else {
                    base
                }
            })
            .collect()),
        MechanismKind::Hybrid => {
            let tax = if sample.class == ScenarioClass::Default {
                spec.rule()?.evaluate(sample.residual_total())?
            } else {
                vec![0.0; n]
            };
            Ok((0..n)
                .map(|i| {
                    let base = insured_base(sample, spec, i);
                    if sample.class == ScenarioClass::Default {
                        base + tax[i]
                    } else {
                        base
                    }
                })
                .collect())
        }
        MechanismKind::PureRiskSharing => spec.rule()?.evaluate(sample.aggregate),
    }
}

/// Outlays of `spec` over every scenario, valued with `disutilities` (one per region).
///
/// An outlay is negative when the surplus a region receives exceeds its premium.
pub fn evaluate_mechanism(
    spec: &MechanismSpec<'_>,
    scenarios: &[ScenarioSample],
    disutilities: &[DisutilityFn],
) -> Result<OutlayTable> {
    let n = disutilities.len();
    if let Some(rule) = spec.rule {
        if rule.n_regions() != n {
            return Err(Error::invalid("rule and disutilities disagree on the region count"));
        }
    }
    if spec.kind.shares_losses() {
        spec.rule()?;
    }
    let rows: Vec<(Vec<f64>, Vec<f64>)> = scenarios
        .par_iter()
        .map(|sample| {
            if sample.losses.len() != n {
                return Err(Error::invalid("scenario and disutilities disagree on the region count"));
            }
            let outlays = outlays_for(sample, spec)?;
            let values = outlays
                .iter()
                .zip(disutilities)
                .map(|(x, v)| v.eval_outlay(*x))
                .collect::<Result<Vec<f64>>>()?;
            Ok((outlays, values))
        })
        .collect::<Result<_>>()?;
    let mut table = OutlayTable {
        kind: spec.kind,
        n_regions: n,
        classes: scenarios.iter().map(|s| s.class).collect(),
        outlays: Vec::with_capacity(rows.len() * n),
        disutilities: Vec::with_capacity(rows.len() * n),
    };
    for (o, d) in rows {
        table.outlays.extend(o);
        table.disutilities.extend(d);
    }
    Ok(table)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassSummary {
    pub mechanism: MechanismKind,
    pub class: ScenarioClass,
    pub region: usize,
    /// `None` when the class has no scenarios.
    pub mean_outlay: Option<f64>,
    pub mean_disutility: Option<f64>,
    pub n_scenarios: usize,
}

/// Class-conditional means for every mechanism, class and region.
pub fn expected_disutility_by_class(tables: &[OutlayTable]) -> Vec<ClassSummary> {
    let mut out = Vec::new();
    for table in tables {
        for class in ScenarioClass::ALL {
            let members: Vec<usize> = (0..table.n_scenarios())
                .filter(|&s| table.classes[s] == class)
                .collect();
            let count = members.len();
            for region in 0..table.n_regions {
                let mean = |f: &dyn Fn(usize) -> f64| {
                    (count > 0).then(|| members.iter().map(|&s| f(s)).sum::<f64>() / count as f64)
                };
                out.push(ClassSummary {
                    mechanism: table.kind,
                    class,
                    region,
                    mean_outlay: mean(&|s| table.outlay_row(s)[region]),
                    mean_disutility: mean(&|s| table.disutility_row(s)[region]),
                    n_scenarios: count,
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferRow {
    pub region: usize,
    pub epsilon: f64,
    pub tax: f64,
    /// `tax - epsilon`: positive for payers, negative for receivers.
    pub net: f64,
    /// Fraction of its own residual claim an affected region funds through its tax.
    pub self_borne_share: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransferReport {
    pub mechanism: MechanismKind,
    pub total_residual: f64,
    pub rows: Vec<TransferRow>,
}

impl TransferReport {
    pub fn net_total(&self) -> f64 {
        self.rows.iter().map(|r| r.net).sum()
    }
}

/// Who pays whom in one event under a sharing mechanism.
///
/// Under the hybrid scheme the shared claims are the residuals `ε`; under pure sharing they are
/// the raw losses.
pub fn event_transfers(sample: &ScenarioSample, rule: &PiecewiseTaxRule, kind: MechanismKind) -> Result<TransferReport> {
    let claims: Vec<f64> = match kind {
        MechanismKind::Hybrid => sample.residuals.clone(),
        MechanismKind::PureRiskSharing => sample.losses.clone(),
        other => {
            return Err(Error::invalid(format!(
                "mechanism {other} does not share losses between regions"
            )))
        }
    };
    if claims.len() != rule.n_regions() {
        return Err(Error::invalid("scenario and rule disagree on the region count"));
    }
    let total: f64 = claims.iter().sum();
    let tax = rule.evaluate(total)?;
    let rows = claims
        .iter()
        .zip(&tax)
        .enumerate()
        .map(|(region, (&epsilon, &tax))| TransferRow {
            region,
            epsilon,
            tax,
            net: tax - epsilon,
            self_borne_share: (epsilon > 0.0).then(|| tax.min(epsilon) / epsilon),
        })
        .collect();
    Ok(TransferReport {
        mechanism: kind,
        total_residual: total,
        rows,
    })
}
