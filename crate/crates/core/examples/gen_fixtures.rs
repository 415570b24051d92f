//! Regenerates the synthetic fixtures under `fixtures/`.
//!
//! Wealths are log-GDP-like values in `[8, 13]` on the unit square, with a storm track hugging
//! the southern edge. Total capital is set to the 80% quantile of the simulated aggregate loss
//! (never below the collected premium).
//!
//! ```text
//! cargo run -p afpo --example gen_fixtures -- fixtures
//! ```

use std::path::{Path, PathBuf};

use afpo::catsim::{RegionGeo, StormModel};
use afpo::insurance::{compute_premiums, Capital, InsurerConfig};
use afpo::io::{fmt_f64, matrix_table, Metadata, Table};
use afpo::pipeline::{execute, InsurerBlock, RunConfig};
use afpo::solver::SolverConfig;
use afpo::ScenarioMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STORM: [[f64; 2]; 4] = [[0.0, 0.05], [0.35, 0.12], [0.7, 0.08], [1.0, 0.2]];

fn wealth(rng: &mut ChaCha8Rng) -> f64 {
    let w = 8.0 + 2.5 * (rng.random::<f64>() + rng.random::<f64>());
    (w * 1000.0).round() / 1000.0
}

fn region(k: usize, w: f64, c: [f64; 2]) -> RegionGeo {
    RegionGeo {
        id: format!("R{:03}", k + 1),
        name: format!("Region {}", k + 1),
        wealth: w,
        centroid: [(c[0] * 1e4).round() / 1e4, (c[1] * 1e4).round() / 1e4],
    }
}

fn scattered(n: usize, seed: u64) -> Vec<RegionGeo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let c = [rng.random::<f64>(), rng.random::<f64>()];
            region(k, wealth(&mut rng), c)
        })
        .collect()
}

/// Jittered 15 x 15 lattice, first `n` cells.
fn grid(n: usize, seed: u64) -> Vec<RegionGeo> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|k| {
            let (i, j) = ((k % 15) as f64, (k / 15) as f64);
            let c = [
                (i + 0.5 + 0.6 * (rng.random::<f64>() - 0.5)) / 15.0,
                (j + 0.5 + 0.6 * (rng.random::<f64>() - 0.5)) / 15.0,
            ];
            region(k, wealth(&mut rng), c)
        })
        .collect()
}

fn write_regions(path: &Path, regions: &[RegionGeo]) {
    let mut t = Table::new(afpo::io::REGION_HEADER);
    for r in regions {
        t.push(vec![
            r.id.clone(),
            r.name.clone(),
            fmt_f64(r.wealth),
            fmt_f64(r.centroid[0]),
            fmt_f64(r.centroid[1]),
        ]);
    }
    t.write(path, &Metadata::new().with("synthetic", "true").with("regions", regions.len()))
        .expect("write regions");
}

fn config(dir: &Path, n: usize, n_sims: usize, seed: u64) -> RunConfig {
    RunConfig {
        seed,
        n_sims,
        regions_path: dir.join(format!("regions_{n}.csv")),
        storm: StormModel::new(STORM.to_vec()).expect("storm"),
        correlation_normalizer: None,
        insurer: InsurerBlock {
            theta: 0.3,
            eta: 0.0,
            k0: None,
            total_capital: None,
            surplus_shares: vec![],
        },
        solver: SolverConfig {
            fairness_tol: 5e-4,
            ..Default::default()
        },
        mechanisms: afpo::mechanism::MechanismKind::ALL.to_vec(),
        disutility: Default::default(),
        output_dir: None,
        grid_points: 512,
    }
}

/// 80% quantile of `S`, raised to the collected premium if needed.
fn capital(cfg: &RunConfig) -> f64 {
    let state = execute(
        &RunConfig {
            mechanisms: vec![afpo::mechanism::MechanismKind::Baseline],
            ..cfg.clone()
        },
        None,
    )
    .expect("simulate");
    let losses = &state.simulation.losses;
    let mut s = losses.aggregates();
    s.sort_by(f64::total_cmp);
    let q = s[(0.8 * s.len() as f64) as usize];
    let insurer = InsurerConfig::new(0.3, 0.0, Capital::Initial(0.0), vec![]).expect("insurer");
    let k = compute_premiums(losses, &insurer).expect("premiums").collected;
    (q.max(k) * 1000.0).ceil() / 1000.0
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));
    std::fs::create_dir_all(&dir).expect("create fixture dir");

    let sets = [
        (2, vec![region(0, 9.5, [0.2, 0.1]), region(1, 11.2, [0.8, 0.9])], 4000, 11),
        (3, scattered(3, 3), 4000, 13),
        (50, scattered(50, 50), 4000, 17),
        (212, grid(212, 212), 5000, 19),
    ];
    for (n, regions, n_sims, seed) in sets {
        write_regions(&dir.join(format!("regions_{n}.csv")), &regions);
        let mut cfg = config(&dir, n, n_sims, seed);
        let k_total = capital(&cfg);
        cfg.insurer.total_capital = Some(k_total);
        cfg.regions_path = PathBuf::from(format!("regions_{n}.csv"));
        let text = serde_json::to_string_pretty(&cfg).expect("serialise config");
        std::fs::write(dir.join(format!("run_{n}.json")), text + "\n").expect("write config");
        println!("regions_{n}: K={k_total}");

        if n == 50 {
            // The regions closest to the track lose 90% of their wealth, enough to exceed K
            // by a quarter; everyone else is untouched.
            let storm = StormModel::new(STORM.to_vec()).expect("storm");
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                storm
                    .distance_to(regions[a].centroid)
                    .total_cmp(&storm.distance_to(regions[b].centroid))
            });
            let mut row = vec![0.0; n];
            let mut hit = 0.0;
            for &i in &order {
                if hit > 1.25 * k_total {
                    break;
                }
                row[i] = ((0.9 * regions[i].wealth) * 1e4).round() / 1e4;
                hit += row[i];
            }
            let total: f64 = row.iter().sum();
            println!("coastal event: S={total} affected={}", row.iter().filter(|x| **x > 0.0).count());
            assert!(total > k_total, "coastal event must exceed total capital");
            let ids: Vec<String> = regions.iter().map(|r| r.id.clone()).collect();
            let m = ScenarioMatrix::new(n, row).expect("event");
            matrix_table(&ids, &m)
                .write(&dir.join("coastal_event.csv"), &Metadata::new().with("synthetic", "true"))
                .expect("write event");
        }
    }
    std::fs::write(dir.join("solve.json"), "{\n  \"solver\": {\"fairness_tol\": 1e-3}\n}\n").expect("write solve config");
}
