//! Spatially correlated storm losses.
//!
//! A storm runs along a polyline. Region `i`, at distance `d_i` from the path, loses the
//! fraction `τ_i ~ Beta(a_num/(d_i + d_off), b)` of its wealth. Dependence between regions is
//! a Gaussian copula whose correlation is one minus the normalised centroid distance.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::beta::{checked_beta_reg, ln_beta};
use statrs::function::erf::erfc;

use crate::{Error, Result, ScenarioMatrix};

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionGeo {
    pub id: String,
    pub name: String,
    pub wealth: f64,
    pub centroid: Point,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StormModel {
    pub path: Vec<Point>,
    #[serde(default = "StormModel::default_beta_b")]
    pub beta_b: f64,
    #[serde(default = "StormModel::default_a_num")]
    pub a_num: f64,
    #[serde(default = "StormModel::default_d_off")]
    pub d_off: f64,
}

impl StormModel {
    fn default_beta_b() -> f64 {
        0.5
    }

    fn default_a_num() -> f64 {
        0.1
    }

    fn default_d_off() -> f64 {
        0.3
    }

    pub fn new(path: Vec<Point>) -> Result<Self> {
        let storm = Self {
            path,
            beta_b: Self::default_beta_b(),
            a_num: Self::default_a_num(),
            d_off: Self::default_d_off(),
        };
        storm.validate()?;
        Ok(storm)
    }

    pub fn validate(&self) -> Result<()> {
        if self.path.len() < 2 {
            return Err(Error::invalid("storm path needs at least two points"));
        }
        if self.path.iter().flatten().any(|c| !c.is_finite()) {
            return Err(Error::invalid("storm path coordinates must be finite"));
        }
        if !(self.a_num > 0.0 && self.d_off > 0.0 && self.beta_b > 0.0) {
            return Err(Error::invalid("storm shape parameters must be positive"));
        }
        Ok(())
    }

    /// `(a, b)` of the severity law at distance `d`.
    pub fn severity_params(&self, d: f64) -> Result<(f64, f64)> {
        if !(d >= 0.0) {
            return Err(Error::invalid(format!("distance must be non-negative, got {d}")));
        }
        Ok((self.a_num / (d + self.d_off), self.beta_b))
    }

    pub fn distance_to(&self, p: Point) -> f64 {
        min_distance(p, &self.path)
    }
}

/// Euclidean distance from `p` to the nearest point of the polyline.
pub fn min_distance(p: Point, path: &[Point]) -> f64 {
    match path {
        [] => f64::INFINITY,
        [q] => dist(p, *q),
        _ => path
            .windows(2)
            .map(|s| segment_distance(p, s[0], s[1]))
            .fold(f64::INFINITY, f64::min),
    }
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn segment_distance(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return dist(p, a);
    }
    let t = (((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2).clamp(0.0, 1.0);
    dist(p, [a[0] + t * dx, a[1] + t * dy])
}

pub fn beta_mean(a: f64, b: f64) -> f64 {
    a / (a + b)
}

pub fn beta_cdf(a: f64, b: f64, x: f64) -> Result<f64> {
    checked_beta_reg(a, b, x.clamp(0.0, 1.0)).map_err(|e| Error::Numerical(e.to_string()))
}

/// Quantile of `Beta(a, b)` to relative tolerance `1e-12` in `x`.
///
/// Bisection on the regularised incomplete beta function, geometric while the bracket spans
/// orders of magnitude; a Newton step replaces the split point whenever it stays strictly inside
/// the bracket. Small-shape laws put most of their mass far below `1e-12`, hence the relative
/// tolerance.
pub fn beta_quantile(a: f64, b: f64, u: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0) {
        return Err(Error::invalid(format!("beta shapes must be positive, got ({a}, {b})")));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::invalid(format!("probability must lie in [0, 1], got {u}")));
    }
    if u == 0.0 {
        return Ok(0.0);
    }
    if u == 1.0 {
        return Ok(1.0);
    }
    let ln_b = ln_beta(a, b);
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    // Near zero F(x) ≈ x^a / (a B(a, b)).
    let tail = ((u.ln() + a.ln() + ln_b) / a).exp();
    let mut x = if tail > 0.0 && tail < 0.5 { tail } else { beta_mean(a, b) };
    for _ in 0..2000 {
        let f = beta_cdf(a, b, x)? - u;
        if f == 0.0 {
            return Ok(x);
        }
        if f < 0.0 {
            lo = x;
        } else {
            hi = x;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
        let ln_pdf = (a - 1.0) * x.ln() + (b - 1.0) * (-x).ln_1p() - ln_b;
        let newton = x - f / ln_pdf.exp();
        x = if newton > lo && newton < hi && newton.is_finite() {
            newton
        } else if lo == 0.0 {
            hi / 16.0
        } else if hi > 2.0 * lo {
            (lo * hi).sqrt()
        } else {
            0.5 * (lo + hi)
        };
        if x <= lo || x >= hi {
            break;
        }
    }
    Ok(x.clamp(lo, hi))
}

pub fn standard_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

#[derive(Debug, Clone)]
pub struct CorrelationModel {
    pub raw: DMatrix<f64>,
    pub matrix: DMatrix<f64>,
    /// Frobenius norm of `matrix - raw`.
    pub repair_delta: f64,
    /// `repair_delta / ‖raw‖_F`.
    pub repair_delta_relative: f64,
    pub normalizer: f64,
    cholesky: DMatrix<f64>,
}

pub const MIN_EIGENVALUE: f64 = 1e-8;

impl CorrelationModel {
    /// Repairs `raw` and factorises it.
    pub fn from_raw(raw: DMatrix<f64>, normalizer: f64) -> Result<Self> {
        if !raw.is_square() || raw.nrows() == 0 {
            return Err(Error::invalid("correlation matrix must be square and non-empty"));
        }
        let matrix = repair_correlation(&raw)?;
        let repair_delta = (&matrix - &raw).norm();
        let raw_norm = raw.norm();
        let cholesky = matrix
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("repaired correlation matrix is not positive definite".into()))?
            .l();
        Ok(Self {
            raw,
            matrix,
            repair_delta,
            repair_delta_relative: if raw_norm > 0.0 { repair_delta / raw_norm } else { 0.0 },
            normalizer,
            cholesky,
        })
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::from_raw(DMatrix::identity(n, n), 1.0)
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }

    pub fn cholesky_factor(&self) -> &DMatrix<f64> {
        &self.cholesky
    }
}

/// `Σ_ij = 1 - d_ij / normalizer` with the maximum pairwise distance as default normaliser.
pub fn build_correlation(regions: &[RegionGeo], normalizer: Option<f64>) -> Result<CorrelationModel> {
    let n = regions.len();
    if n < 2 {
        return Err(Error::invalid("correlation needs at least two regions"));
    }
    let mut d = DMatrix::<f64>::zeros(n, n);
    let mut d_max = 0.0f64;
    for i in 0..n {
        for j in 0..i {
            let v = dist(regions[i].centroid, regions[j].centroid);
            d[(i, j)] = v;
            d[(j, i)] = v;
            d_max = d_max.max(v);
        }
    }
    if !(d_max > 0.0) {
        return Err(Error::invalid("all centroids coincide, distances cannot be normalised"));
    }
    let norm = match normalizer {
        Some(v) if !(v > 0.0 && v.is_finite()) => {
            return Err(Error::invalid(format!("distance normaliser must be positive, got {v}")))
        }
        Some(v) => v,
        None => d_max,
    };
    let raw = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { 1.0 - d[(i, j)] / norm });
    CorrelationModel::from_raw(raw, norm)
}

/// Clips eigenvalues at [`MIN_EIGENVALUE`] and rescales to a unit diagonal until the smallest
/// eigenvalue clears the floor.
pub fn repair_correlation(raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let mut a = 0.5 * (raw + raw.transpose());
    for _ in 0..100 {
        let eig = SymmetricEigen::new(a.clone());
        if eig.eigenvalues.min() >= MIN_EIGENVALUE {
            return Ok(a);
        }
        // Clip slightly above the floor so the diagonal rescale does not undo it.
        let clipped = eig.eigenvalues.map(|l| l.max(2.0 * MIN_EIGENVALUE));
        let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clipped) * eig.eigenvectors.transpose();
        let scale = DVector::from_iterator(a.nrows(), rebuilt.diagonal().iter().map(|v| 1.0 / v.sqrt()));
        a = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| {
            if i == j {
                1.0
            } else {
                rebuilt[(i, j)] * scale[i] * scale[j]
            }
        });
        a = 0.5 * (&a + a.transpose());
    }
    Err(Error::Numerical("correlation repair did not reach a positive definite matrix".into()))
}

/// Per-region severity shapes along `storm`.
pub fn severity_shapes(regions: &[RegionGeo], storm: &StormModel) -> Result<Vec<(f64, f64)>> {
    regions
        .iter()
        .map(|r| storm.severity_params(storm.distance_to(r.centroid)))
        .collect()
}

/// `n_sims × n` losses `X_i = τ_i w_i`. Scenario `s` draws from stream `s` of the seeded
/// generator, so the result does not depend on thread scheduling.
pub fn sample_losses(
    regions: &[RegionGeo],
    storm: &StormModel,
    corr: &CorrelationModel,
    n_sims: usize,
    seed: u64,
) -> Result<ScenarioMatrix> {
    storm.validate()?;
    let n = regions.len();
    if corr.n() != n {
        return Err(Error::invalid(format!(
            "correlation is {}x{} for {n} regions",
            corr.n(),
            corr.n()
        )));
    }
    if n_sims == 0 {
        return Err(Error::invalid("n_sims must be at least 1"));
    }
    let shapes = severity_shapes(regions, storm)?;
    let fractions = sample_fractions(&shapes, corr, n_sims, seed)?;
    let values = fractions
        .values()
        .chunks(n)
        .flat_map(|row| row.iter().zip(regions).map(|(t, r)| t * r.wealth))
        .collect();
    ScenarioMatrix::new(n, values)
}

/// Destruction rates `τ` for the given Beta shapes under the copula of `corr`.
pub fn sample_fractions(
    shapes: &[(f64, f64)],
    corr: &CorrelationModel,
    n_sims: usize,
    seed: u64,
) -> Result<ScenarioMatrix> {
    let n = shapes.len();
    let l = corr.cholesky_factor();
    let rows: Vec<Vec<f64>> = (0..n_sims)
        .into_par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s as u64);
            let z = DVector::from_iterator(n, (0..n).map(|_| StandardNormal.sample(&mut rng)));
            let x = l * z;
            x.iter()
                .zip(shapes)
                .map(|(xi, &(a, b))| beta_quantile(a, b, standard_normal_cdf(*xi)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<_>>()?;
    ScenarioMatrix::from_rows(&rows)
}
