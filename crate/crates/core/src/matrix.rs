//! Dense row-major scenario × region tables.

use crate::{Error, Result};

/// A `scenarios × regions` table of non-negative amounts (losses, residual claims).
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioMatrix {
    n_regions: usize,
    values: Vec<f64>,
}

impl ScenarioMatrix {
    pub fn new(n_regions: usize, values: Vec<f64>) -> Result<Self> {
        if n_regions == 0 {
            return Err(Error::invalid("matrix needs at least one region column"));
        }
        if !values.len().is_multiple_of(n_regions) {
            return Err(Error::invalid(format!(
                "{} values do not fill rows of {} regions",
                values.len(),
                n_regions
            )));
        }
        Ok(Self { n_regions, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("ragged rows"));
        }
        Self::new(n, rows.concat())
    }

    pub fn n_regions(&self) -> usize {
        self.n_regions
    }

    pub fn n_scenarios(&self) -> usize {
        self.values.len() / self.n_regions
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_regions..(i + 1) * self.n_regions]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.n_regions)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Row sums.
    pub fn aggregates(&self) -> Vec<f64> {
        self.rows().map(|r| r.iter().sum()).collect()
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_scenarios() as f64;
        let mut sums = vec![0.0; self.n_regions];
        for row in self.rows() {
            for (s, x) in sums.iter_mut().zip(row) {
                *s += x;
            }
        }
        sums.iter_mut().for_each(|s| *s /= n);
        sums
    }

    /// Sample standard deviation per column with the `n - 1` denominator.
    pub fn column_std_devs(&self) -> Vec<f64> {
        let n = self.n_scenarios();
        let means = self.column_means();
        let mut ss = vec![0.0; self.n_regions];
        for row in self.rows() {
            for ((s, x), m) in ss.iter_mut().zip(row).zip(&means) {
                *s += (x - m) * (x - m);
            }
        }
        ss.iter()
            .map(|s| if n > 1 { (s / (n - 1) as f64).sqrt() } else { 0.0 })
            .collect()
    }

    /// Keeps the rows selected by `keep`.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize, &[f64]) -> bool) -> Self {
        let mut values = Vec::new();
        for (i, row) in self.rows().enumerate() {
            if keep(i, row) {
                values.extend_from_slice(row);
            }
        }
        Self {
            n_regions: self.n_regions,
            values,
        }
    }
}
