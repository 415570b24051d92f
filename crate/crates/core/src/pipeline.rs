//! End-to-end runs: simulate, insure, fit the sharing rules, compare mechanisms, export.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::catsim::{build_correlation, sample_losses, RegionGeo, StormModel};
use crate::disutility::DisutilityFn;
use crate::insurance::{
    compute_premiums, default_residuals, no_free_enrichment_check, settle, settle_all, Capital, InsurerConfig,
    PremiumSchedule, ScenarioClass, ScenarioSample,
};
use crate::io::{fmt_f64, fmt_opt, load_matrix, load_regions, matrix_table, sha256_file, sha256_hex, Metadata, Table};
use crate::mechanism::{
    evaluate_mechanism, event_transfers, expected_disutility_by_class, ClassSummary, MechanismKind, MechanismSpec,
    OutlayTable, TransferReport,
};
use crate::pareto::{Participant, PiecewiseTaxRule, Weights};
use crate::solver::{solve, Solution, SolverConfig};
use crate::{Error, Result, ScenarioMatrix};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InsurerBlock {
    pub theta: f64,
    #[serde(default)]
    pub eta: f64,
    /// Initial capital; exclusive with `total_capital`.
    #[serde(default)]
    pub k0: Option<f64>,
    /// Total capital `K`; `k0 = K - k` is derived.
    #[serde(default)]
    pub total_capital: Option<f64>,
    /// `c_0, c_1, ..., c_n`; empty means the insurer keeps any surplus.
    #[serde(default)]
    pub surplus_shares: Vec<f64>,
}

impl InsurerBlock {
    pub fn to_config(&self) -> Result<InsurerConfig> {
        let capital = match (self.k0, self.total_capital) {
            (Some(k0), None) => Capital::Initial(k0),
            (None, Some(total)) => Capital::Total(total),
            (None, None) => Capital::Initial(0.0),
            (Some(_), Some(_)) => {
                return Err(Error::invalid("give either `k0` or `total_capital`, not both"))
            }
        };
        InsurerConfig::new(self.theta, self.eta, capital, self.surplus_shares.clone())
    }
}

fn default_mechanisms() -> Vec<MechanismKind> {
    MechanismKind::ALL.to_vec()
}

fn default_grid_points() -> usize {
    512
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub n_sims: usize,
    pub regions_path: PathBuf,
    pub storm: StormModel,
    /// Distance used to normalise the correlation; the largest pairwise distance by default.
    #[serde(default)]
    pub correlation_normalizer: Option<f64>,
    pub insurer: InsurerBlock,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default = "default_mechanisms")]
    pub mechanisms: Vec<MechanismKind>,
    /// Common disutility of every region.
    #[serde(default)]
    pub disutility: DisutilityFn,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_grid_points")]
    pub grid_points: usize,
}

impl RunConfig {
    /// Parses a JSON config; relative paths are taken from the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg: RunConfig = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.regions_path.is_relative() {
            cfg.regions_path = base.join(&cfg.regions_path);
        }
        if let Some(out) = &cfg.output_dir {
            if out.is_relative() {
                cfg.output_dir = Some(base.join(out));
            }
        }
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sims < 2 {
            return Err(Error::invalid("n_sims must be at least 2"));
        }
        if !self.regions_path.exists() {
            return Err(Error::invalid(format!(
                "regions file {} does not exist",
                self.regions_path.display()
            )));
        }
        if self.grid_points < 2 {
            return Err(Error::invalid("grid_points must be at least 2"));
        }
        if self.mechanisms.is_empty() {
            return Err(Error::invalid("no mechanisms selected"));
        }
        self.storm.validate()?;
        self.solver.validate()?;
        self.disutility.check_parameters()?;
        self.insurer.to_config()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(serde_json::to_string(self)?.as_bytes()))
    }

    fn wants(&self, kind: MechanismKind) -> bool {
        self.mechanisms.contains(&kind)
    }
}

/// Disutility of a region whose tax capacity is `cap`; power disutilities are anchored there.
pub fn region_disutility(base: &DisutilityFn, cap: f64) -> DisutilityFn {
    match *base {
        DisutilityFn::Power { shift, exponent, .. } => DisutilityFn::Power {
            shift,
            exponent,
            reserve: cap,
        },
        cara => cara,
    }
}

pub fn participants(base: &DisutilityFn, caps: &[f64]) -> Result<Vec<Participant>> {
    caps.iter()
        .map(|&cap| Participant::new(region_disutility(base, cap), cap))
        .collect()
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub losses: ScenarioMatrix,
    pub repair_delta: f64,
    pub repair_delta_relative: f64,
    pub cache_hit: bool,
}

/// A fitted rule, or the uniform-weight rule when there was nothing to fit.
#[derive(Debug, Clone)]
pub enum FittedRule {
    Solved(Box<Solution>),
    Unfitted(Box<PiecewiseTaxRule>),
}

impl FittedRule {
    pub fn rule(&self) -> &PiecewiseTaxRule {
        match self {
            FittedRule::Solved(s) => &s.rule,
            FittedRule::Unfitted(r) => r,
        }
    }

    pub fn solution(&self) -> Option<&Solution> {
        match self {
            FittedRule::Solved(s) => Some(s),
            FittedRule::Unfitted(_) => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunState {
    pub regions: Vec<RegionGeo>,
    pub simulation: SimulationOutput,
    pub insurer: InsurerConfig,
    pub schedule: PremiumSchedule,
    pub settled: Vec<ScenarioSample>,
    pub enrichment_flags: usize,
    pub pure: Option<FittedRule>,
    pub hybrid: Option<FittedRule>,
    pub tables: Vec<OutlayTable>,
    pub summary: Vec<ClassSummary>,
}

impl RunState {
    pub fn class_counts(&self) -> BTreeMap<ScenarioClass, usize> {
        let mut counts: BTreeMap<ScenarioClass, usize> = ScenarioClass::ALL.iter().map(|c| (*c, 0)).collect();
        for s in &self.settled {
            *counts.entry(s.class).or_default() += 1;
        }
        counts
    }

    /// Empirical `P(S ≤ K)`.
    pub fn solvency_share(&self) -> f64 {
        let solvent = self
            .settled
            .iter()
            .filter(|s| s.class != ScenarioClass::Default)
            .count();
        solvent as f64 / self.settled.len() as f64
    }

    pub fn rule_for(&self, kind: MechanismKind) -> Option<&PiecewiseTaxRule> {
        match kind {
            MechanismKind::PureRiskSharing => self.pure.as_ref().map(FittedRule::rule),
            MechanismKind::Hybrid => self.hybrid.as_ref().map(FittedRule::rule),
            _ => None,
        }
    }
}

fn cache_key(cfg: &RunConfig, regions: &[RegionGeo]) -> Result<String> {
    #[derive(Serialize)]
    struct Key<'a> {
        version: &'a str,
        regions: &'a [RegionGeo],
        storm: &'a StormModel,
        normalizer: Option<f64>,
        n_sims: usize,
        seed: u64,
    }
    let key = Key {
        version: VERSION,
        regions,
        storm: &cfg.storm,
        normalizer: cfg.correlation_normalizer,
        n_sims: cfg.n_sims,
        seed: cfg.seed,
    };
    Ok(sha256_hex(serde_json::to_string(&key)?.as_bytes()))
}

fn parse_meta_value(line: &str, key: &str) -> Option<f64> {
    line.trim_start_matches('#')
        .split_whitespace()
        .find_map(|kv| kv.strip_prefix(key)?.strip_prefix('=')?.parse().ok())
}

fn simulate(cfg: &RunConfig, regions: &[RegionGeo], cache_dir: Option<&Path>) -> Result<SimulationOutput> {
    let cache_path = match cache_dir {
        Some(dir) => Some(dir.join(format!("losses-{}.csv", &cache_key(cfg, regions)?[..32]))),
        None => None,
    };
    if let Some(path) = cache_path.as_ref().filter(|p| p.exists()) {
        let text = std::fs::read_to_string(path)?;
        let first = text.lines().next().unwrap_or("");
        let (_, losses) = load_matrix(path)?;
        if let (Some(d), Some(rel)) = (
            parse_meta_value(first, "repair_delta"),
            parse_meta_value(first, "repair_delta_relative"),
        ) {
            if losses.n_regions() == regions.len() && losses.n_scenarios() == cfg.n_sims {
                return Ok(SimulationOutput {
                    losses,
                    repair_delta: d,
                    repair_delta_relative: rel,
                    cache_hit: true,
                });
            }
        }
    }
    let corr = build_correlation(regions, cfg.correlation_normalizer)?;
    let losses = sample_losses(regions, &cfg.storm, &corr, cfg.n_sims, cfg.seed)?;
    let out = SimulationOutput {
        losses,
        repair_delta: corr.repair_delta,
        repair_delta_relative: corr.repair_delta_relative,
        cache_hit: false,
    };
    if let Some(path) = cache_path {
        std::fs::create_dir_all(path.parent().unwrap_or(Path::new(".")))?;
        let ids: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
        matrix_table(&ids, &out.losses).write(&path, &simulation_meta(cfg, &out))?;
    }
    Ok(out)
}

fn simulation_meta(cfg: &RunConfig, sim: &SimulationOutput) -> Metadata {
    Metadata::new()
        .with("afpo", VERSION)
        .with("seed", cfg.seed)
        .with("n_sims", cfg.n_sims)
        .with("repair_delta", fmt_f64(sim.repair_delta))
        .with("repair_delta_relative", fmt_f64(sim.repair_delta_relative))
}

fn fit(residuals: &ScenarioMatrix, parts: Vec<Participant>, solver: &SolverConfig) -> Result<FittedRule> {
    if residuals.is_empty() {
        let n = parts.len();
        return Ok(FittedRule::Unfitted(Box::new(PiecewiseTaxRule::new(Weights::uniform(n)?, parts)?)));
    }
    Ok(FittedRule::Solved(Box::new(solve(residuals, &parts, solver)?)))
}

/// Runs every computational stage. `cache_dir` enables reuse of simulated losses.
pub fn execute(cfg: &RunConfig, cache_dir: Option<&Path>) -> Result<RunState> {
    cfg.validate().map_err(|e| e.in_stage("config"))?;
    let regions = load_regions(&cfg.regions_path).map_err(|e| e.in_stage("load_regions"))?;
    let simulation = simulate(cfg, &regions, cache_dir).map_err(|e| e.in_stage("simulate"))?;
    let insurer = cfg.insurer.to_config().map_err(|e| e.in_stage("premiums"))?;
    let schedule = compute_premiums(&simulation.losses, &insurer).map_err(|e| e.in_stage("premiums"))?;
    let settled = settle_all(&simulation.losses, &schedule, &insurer).map_err(|e| e.in_stage("settle"))?;
    let enrichment_flags = no_free_enrichment_check(&settled, &schedule, &insurer).flags.len();

    let pure = if cfg.wants(MechanismKind::PureRiskSharing) {
        let caps: Vec<f64> = regions.iter().map(|r| r.wealth).collect();
        let parts = participants(&cfg.disutility, &caps).map_err(|e| e.in_stage("solve_pure"))?;
        Some(fit(&simulation.losses, parts, &cfg.solver).map_err(|e| e.in_stage("solve_pure"))?)
    } else {
        None
    };
    let hybrid = if cfg.wants(MechanismKind::Hybrid) {
        let stage = |e: Error| e.in_stage("solve_hybrid");
        let caps: Vec<f64> = regions
            .iter()
            .zip(&schedule.premiums)
            .map(|(r, p)| r.wealth - p)
            .collect();
        let parts = participants(&cfg.disutility, &caps).map_err(stage)?;
        let residuals = default_residuals(&settled).map_err(stage)?;
        Some(fit(&residuals, parts, &cfg.solver).map_err(stage)?)
    } else {
        None
    };

    let disutilities: Vec<DisutilityFn> = regions
        .iter()
        .map(|r| region_disutility(&cfg.disutility, r.wealth))
        .collect();
    let mut tables = Vec::new();
    for &kind in &cfg.mechanisms {
        let rule = match kind {
            MechanismKind::PureRiskSharing => pure.as_ref().map(FittedRule::rule),
            MechanismKind::Hybrid => hybrid.as_ref().map(FittedRule::rule),
            _ => None,
        };
        let spec = MechanismSpec {
            kind,
            schedule: &schedule,
            insurer: &insurer,
            rule,
        };
        tables.push(evaluate_mechanism(&spec, &settled, &disutilities).map_err(|e| e.in_stage("evaluate"))?);
    }
    let summary = expected_disutility_by_class(&tables);
    Ok(RunState {
        regions,
        simulation,
        insurer,
        schedule,
        settled,
        enrichment_flags,
        pure,
        hybrid,
        tables,
        summary,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileEntry {
    pub name: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleReport {
    pub fitted: bool,
    pub stop: Option<String>,
    pub iterations: usize,
    pub relative_gap: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub seed: u64,
    pub version: String,
    pub n_sims: usize,
    pub n_regions: usize,
    pub repair_delta: f64,
    pub repair_delta_relative: f64,
    pub collected_premium: f64,
    pub initial_capital: f64,
    pub total_capital: f64,
    pub class_counts: BTreeMap<String, usize>,
    pub solvency_share: f64,
    pub enrichment_flags: usize,
    pub surplus_sharing: bool,
    pub loss_cache_hit: bool,
    pub rules: BTreeMap<String, RuleReport>,
    pub wall_time_secs: f64,
    pub files: Vec<FileEntry>,
}

impl RunManifest {
    pub fn file_hash(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|f| f.name == name).map(|f| f.sha256.as_str())
    }
}

pub fn rule_grid(rule: &PiecewiseTaxRule, ids: &[String], points: usize) -> Result<Table> {
    let mut t = Table::new(
        std::iter::once("s".to_string())
            .chain(ids.iter().map(|id| format!("T_{id}")))
            .chain(std::iter::once("lambda".to_string())),
    );
    let hi = rule.support();
    for k in 0..points {
        let s = hi * k as f64 / (points - 1) as f64;
        let tax = rule.evaluate(s)?;
        let lambda = rule.invert_lambda(s)?;
        t.push(
            std::iter::once(fmt_f64(s))
                .chain(tax.iter().map(|x| fmt_f64(*x)))
                .chain(std::iter::once(fmt_f64(lambda)))
                .collect(),
        );
    }
    Ok(t)
}

pub fn alpha_table(rule: &PiecewiseTaxRule, ids: &[String]) -> Table {
    let mut t = Table::new(["region_id", "alpha", "layering_constant"]);
    for ((id, a), c) in ids.iter().zip(rule.alpha()).zip(rule.layering_constants()) {
        t.push(vec![id.clone(), fmt_f64(*a), fmt_f64(*c)]);
    }
    t
}

pub fn trace_table(sol: &Solution) -> Table {
    let mut t = Table::new(["iter", "max_abs_eta", "delta_alpha", "step_size"]);
    for r in &sol.trace {
        t.push(vec![
            r.iter.to_string(),
            fmt_f64(r.max_abs_eta),
            fmt_f64(r.delta_alpha),
            fmt_f64(r.step_size),
        ]);
    }
    t
}

pub fn compare_table(summary: &[ClassSummary], ids: &[String]) -> Table {
    let mut t = Table::new([
        "mechanism",
        "class",
        "region",
        "mean_outlay",
        "mean_disutility",
        "n_scenarios",
    ]);
    for r in summary {
        t.push(vec![
            r.mechanism.to_string(),
            r.class.to_string(),
            ids[r.region].clone(),
            fmt_opt(r.mean_outlay),
            fmt_opt(r.mean_disutility),
            r.n_scenarios.to_string(),
        ]);
    }
    t
}

fn settlement_table(settled: &[ScenarioSample], ids: &[String]) -> Table {
    let mut t = Table::new(["scenario_id", "region_id", "X", "Y", "epsilon", "class"]);
    for (s, sample) in settled.iter().enumerate() {
        for (i, id) in ids.iter().enumerate() {
            t.push(vec![
                s.to_string(),
                id.clone(),
                fmt_f64(sample.losses[i]),
                fmt_f64(sample.payments[i]),
                fmt_f64(sample.residuals[i]),
                sample.class.to_string(),
            ]);
        }
    }
    t
}

/// Writes every table of `state` to `out_dir` and returns the manifest.
pub fn export(cfg: &RunConfig, state: &RunState, out_dir: &Path, started: Instant) -> Result<RunManifest> {
    std::fs::create_dir_all(out_dir)?;
    let ids: Vec<String> = state.regions.iter().map(|r| r.id.clone()).collect();
    let surplus_sharing = state.insurer.insurer_share() < 1.0;
    let meta = simulation_meta(cfg, &state.simulation)
        .with("surplus_sharing", if surplus_sharing { "configured" } else { "none" });

    let mut tables: Vec<(String, Table)> = vec![
        ("losses.csv".into(), matrix_table(&ids, &state.simulation.losses)),
        ("settlement.csv".into(), settlement_table(&state.settled, &ids)),
        ("compare.csv".into(), compare_table(&state.summary, &ids)),
    ];
    let mut premiums = Table::new(["region_id", "premium"]);
    for (id, p) in ids.iter().zip(&state.schedule.premiums) {
        premiums.push(vec![id.clone(), fmt_f64(*p)]);
    }
    tables.push(("premiums.csv".into(), premiums));

    let mut rules = BTreeMap::new();
    for (label, fitted) in [("pure", &state.pure), ("hybrid", &state.hybrid)] {
        let Some(fitted) = fitted else { continue };
        tables.push((format!("alpha_{label}.csv"), alpha_table(fitted.rule(), &ids)));
        tables.push((format!("rule_{label}.csv"), rule_grid(fitted.rule(), &ids, cfg.grid_points)?));
        let report = match fitted.solution() {
            Some(sol) => {
                tables.push((format!("trace_{label}.csv"), trace_table(sol)));
                RuleReport {
                    fitted: true,
                    stop: Some(format!("{:?}", sol.stop).to_lowercase()),
                    iterations: sol.trace.len() - 1,
                    relative_gap: Some(sol.relative_gap()),
                }
            }
            None => RuleReport {
                fitted: false,
                stop: None,
                iterations: 0,
                relative_gap: None,
            },
        };
        rules.insert(label.to_string(), report);
    }

    let mut files = Vec::new();
    for (name, table) in &tables {
        let path = out_dir.join(name);
        table.write(&path, &meta)?;
        files.push(FileEntry {
            name: name.clone(),
            sha256: sha256_file(&path)?,
        });
    }

    let manifest = RunManifest {
        config_hash: cfg.hash()?,
        seed: cfg.seed,
        version: VERSION.to_string(),
        n_sims: cfg.n_sims,
        n_regions: state.regions.len(),
        repair_delta: state.simulation.repair_delta,
        repair_delta_relative: state.simulation.repair_delta_relative,
        collected_premium: state.schedule.collected,
        initial_capital: state.schedule.initial_capital,
        total_capital: state.schedule.total_capital,
        class_counts: state
            .class_counts()
            .into_iter()
            .map(|(c, n)| (c.to_string(), n))
            .collect(),
        solvency_share: state.solvency_share(),
        enrichment_flags: state.enrichment_flags,
        surplus_sharing,
        loss_cache_hit: state.simulation.cache_hit,
        rules,
        wall_time_secs: started.elapsed().as_secs_f64(),
        files,
    };
    std::fs::write(out_dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Output directory of a run: the config's, else `fallback`.
pub fn output_dir(cfg: &RunConfig, fallback: &Path) -> PathBuf {
    cfg.output_dir.clone().unwrap_or_else(|| fallback.to_path_buf())
}

/// Runs the whole pipeline into `out_dir`, caching simulated losses under `out_dir/cache`.
pub fn run_pipeline_into(cfg: &RunConfig, out_dir: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    let state = execute(cfg, Some(&out_dir.join("cache")))?;
    export(cfg, &state, out_dir, started).map_err(|e| e.in_stage("export"))
}

/// Runs the whole pipeline into the configured output directory (`./afpo-out` if unset).
pub fn run_pipeline(cfg: &RunConfig) -> Result<RunManifest> {
    run_pipeline_into(cfg, &output_dir(cfg, Path::new("afpo-out")))
}

/// Settings of a standalone fit on a sample file.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolveConfig {
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub disutility: DisutilityFn,
}

impl SolveConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Reorders the columns of `samples` to follow `regions`.
pub fn align_columns(columns: &[String], samples: &ScenarioMatrix, regions: &[RegionGeo]) -> Result<ScenarioMatrix> {
    if columns.len() != regions.len() {
        return Err(Error::invalid(format!(
            "samples have {} region columns, the region file has {}",
            columns.len(),
            regions.len()
        )));
    }
    let order: Vec<usize> = regions
        .iter()
        .map(|r| {
            columns
                .iter()
                .position(|c| *c == r.id)
                .ok_or_else(|| Error::invalid(format!("no sample column for region `{}`", r.id)))
        })
        .collect::<Result<_>>()?;
    let values = samples
        .rows()
        .flat_map(|row| order.iter().map(move |&k| row[k]))
        .collect();
    ScenarioMatrix::new(regions.len(), values)
}

/// Premiums in region order from `(region_id, premium)` pairs.
pub fn align_premiums(pairs: &[(String, f64)], regions: &[RegionGeo]) -> Result<Vec<f64>> {
    if pairs.len() != regions.len() {
        return Err(Error::invalid(format!(
            "{} premiums for {} regions",
            pairs.len(),
            regions.len()
        )));
    }
    regions
        .iter()
        .map(|r| {
            pairs
                .iter()
                .find(|(id, _)| *id == r.id)
                .map(|(_, p)| *p)
                .ok_or_else(|| Error::invalid(format!("no premium for region `{}`", r.id)))
        })
        .collect()
}

/// Fits a rule on residual claims; capacities are `w_i - π_i`, or `w_i` without premiums.
pub fn solve_samples(
    residuals: &ScenarioMatrix,
    regions: &[RegionGeo],
    premiums: Option<&[f64]>,
    cfg: &SolveConfig,
) -> Result<Solution> {
    let caps: Vec<f64> = match premiums {
        Some(p) => regions.iter().zip(p).map(|(r, p)| r.wealth - p).collect(),
        None => regions.iter().map(|r| r.wealth).collect(),
    };
    if let Some(i) = caps.iter().position(|c| !(*c > 0.0)) {
        return Err(Error::invalid(format!(
            "region `{}` has no tax capacity left after its premium",
            regions[i].id
        )));
    }
    let parts = participants(&cfg.disutility, &caps)?;
    solve(residuals, &parts, &cfg.solver)
}

/// Transfers of simulated scenario `scenario` under `kind`.
pub fn scenario_transfers(state: &RunState, kind: MechanismKind, scenario: usize) -> Result<TransferReport> {
    let sample = state.settled.get(scenario).ok_or_else(|| {
        Error::invalid(format!(
            "scenario {scenario} out of range, the run has {} scenarios",
            state.settled.len()
        ))
    })?;
    let rule = state
        .rule_for(kind)
        .ok_or_else(|| Error::invalid(format!("mechanism {kind} was not fitted in this run")))?;
    event_transfers(sample, rule, kind)
}

/// Transfers of an external loss vector, settled against the run's insurer.
pub fn event_transfers_for(state: &RunState, kind: MechanismKind, losses: &[f64]) -> Result<TransferReport> {
    let sample = settle(losses, &state.schedule, &state.insurer)?;
    let rule = state
        .rule_for(kind)
        .ok_or_else(|| Error::invalid(format!("mechanism {kind} was not fitted in this run")))?;
    event_transfers(&sample, rule, kind)
}

pub fn transfer_table(report: &TransferReport, ids: &[String]) -> Table {
    let mut t = Table::new(["region", "epsilon", "tax", "net"]);
    for r in &report.rows {
        t.push(vec![ids[r.region].clone(), fmt_f64(r.epsilon), fmt_f64(r.tax), fmt_f64(r.net)]);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn insurer_block_capital() {
        let both = InsurerBlock {
            theta: 0.3,
            eta: 0.0,
            k0: Some(1.0),
            total_capital: Some(2.0),
            surplus_shares: vec![],
        };
        assert!(both.to_config().is_err());
        let total = InsurerBlock {
            k0: None,
            ..both.clone()
        };
        assert_eq!(total.to_config().unwrap().capital, Capital::Total(2.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = r#"{"seed":1,"n_sims":10,"regions_path":"r.csv","storm":{"path":[[0,0],[1,0]]},
            "insurer":{"theta":0.3},"bogus":1}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
        let text = r#"{"seed":1,"n_sims":10,"regions_path":"r.csv","storm":{"path":[[0,0],[1,0]]},
            "insurer":{"theta":0.3},"solver":{"bins":50,"tolerance":1}}"#;
        assert!(serde_json::from_str::<RunConfig>(text).is_err());
    }

    #[test]
    fn meta_values_parse() {
        let line = "# afpo=0.1.0 seed=3 repair_delta=0.25 repair_delta_relative=0.01";
        assert_eq!(parse_meta_value(line, "repair_delta"), Some(0.25));
        assert_eq!(parse_meta_value(line, "repair_delta_relative"), Some(0.01));
        assert_eq!(parse_meta_value(line, "missing"), None);
    }
}
