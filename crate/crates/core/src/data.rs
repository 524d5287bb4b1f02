//! Dense design matrices and the missing-response dataset.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    nrows: usize,
    ncols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![0.0; nrows * ncols],
        }
    }

    pub fn from_vec(nrows: usize, ncols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nrows * ncols {
            return Err(Error::InvalidInput(format!(
                "matrix data has {} entries, expected {nrows}x{ncols}",
                data.len()
            )));
        }
        Ok(Self { nrows, ncols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::InvalidInput("ragged rows".into()));
        }
        let data = rows.iter().flatten().copied().collect();
        Ok(Self {
            nrows: rows.len(),
            ncols,
            data,
        })
    }

    #[inline]
    pub fn nrows(&self) -> usize {
        self.nrows
    }

    #[inline]
    pub fn ncols(&self) -> usize {
        self.ncols
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.ncols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.ncols + j] = v;
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.nrows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    /// `X v`.
    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        debug_assert_eq!(v.len(), self.ncols);
        (0..self.nrows).map(|i| dot(self.row(i), v)).collect()
    }

    /// New matrix holding the listed rows in order.
    pub fn select_rows(&self, rows: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(rows.len() * self.ncols);
        for &i in rows {
            data.extend_from_slice(self.row(i));
        }
        Matrix {
            nrows: rows.len(),
            ncols: self.ncols,
            data,
        }
    }

    /// New matrix holding the listed columns in order.
    pub fn select_columns(&self, cols: &[usize]) -> Matrix {
        let mut data = Vec::with_capacity(self.nrows * cols.len());
        for i in 0..self.nrows {
            let row = self.row(i);
            data.extend(cols.iter().map(|&j| row[j]));
        }
        Matrix {
            nrows: self.nrows,
            ncols: cols.len(),
            data,
        }
    }

    pub fn column_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.ncols];
        for i in 0..self.nrows {
            for (m, x) in means.iter_mut().zip(self.row(i)) {
                *m += x;
            }
        }
        let n = self.nrows.max(1) as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Units `(Xᵢ, δᵢ, Yᵢ)`; `Yᵢ` is meaningful only where `δᵢ = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Matrix,
    y: Vec<f64>,
    delta: Vec<bool>,
    column_centers: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Matrix, y: Vec<f64>, delta: Vec<bool>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::InvalidInput(format!("need at least 2 units, got {n}")));
        }
        if x.ncols() < 1 {
            return Err(Error::InvalidInput("need at least one covariate".into()));
        }
        if y.len() != n || delta.len() != n {
            return Err(Error::InvalidInput(format!(
                "length mismatch: x has {n} rows, y {} and delta {}",
                y.len(),
                delta.len()
            )));
        }
        if !delta.iter().any(|&d| d) {
            return Err(Error::NoObserved);
        }
        if let Some(i) = (0..n).find(|&i| delta[i] && !y[i].is_finite()) {
            return Err(Error::InvalidInput(format!("observed response {i} is not finite")));
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("covariates must be finite".into()));
        }
        let p = x.ncols();
        Ok(Self {
            x,
            y,
            delta,
            column_centers: vec![0.0; p],
        })
    }

    /// Dataset with every response observed.
    pub fn complete(x: Matrix, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        Self::new(x, y, vec![true; n])
    }

    /// Subtracts column means in place. Offsets accumulate in
    /// [`column_centers`](Self::column_centers).
    pub fn center_covariates(&mut self) {
        let means = self.x.column_means();
        for i in 0..self.x.nrows() {
            for (v, m) in self.x.row_mut(i).iter_mut().zip(&means) {
                *v -= m;
            }
        }
        for (c, m) in self.column_centers.iter_mut().zip(&means) {
            *c += m;
        }
    }

    pub fn centered(mut self) -> Self {
        self.center_covariates();
        self
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &Matrix {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn delta(&self) -> &[bool] {
        &self.delta
    }

    pub fn column_centers(&self) -> &[f64] {
        &self.column_centers
    }

    pub fn n_observed(&self) -> usize {
        self.delta.iter().filter(|&&d| d).count()
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        (0..self.n()).filter(|&i| self.delta[i]).collect()
    }

    pub fn observed_y(&self) -> Vec<f64> {
        (0..self.n()).filter(|&i| self.delta[i]).map(|i| self.y[i]).collect()
    }

    /// Single indices `Xᵢᵀβ` for every unit.
    pub fn indices(&self, beta: &[f64]) -> Vec<f64> {
        self.x.mul_vec(beta)
    }

    /// Returns a copy with the response shifted and scaled,
    /// `y ↦ (y - location) / scale`, at observed positions.
    pub fn with_transformed_response(&self, location: f64, scale: f64) -> Self {
        let y = self
            .y
            .iter()
            .zip(&self.delta)
            .map(|(&v, &d)| if d { (v - location) / scale } else { v })
            .collect();
        Self { y, ..self.clone() }
    }

    /// Subset of units, keeping centers.
    pub fn select_units(&self, rows: &[usize]) -> Result<Self> {
        let mut out = Self::new(
            self.x.select_rows(rows),
            rows.iter().map(|&i| self.y[i]).collect(),
            rows.iter().map(|&i| self.delta[i]).collect(),
        )?;
        out.column_centers = self.column_centers.clone();
        Ok(out)
    }
}
