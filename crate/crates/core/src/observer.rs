//! Local Luenberger observers for the detectable modes of a node.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum ObserverError {
    #[error("closed loop is not Schur stable (spectral radius {0})")]
    NotSchurStable(f64),
    #[error("pole placement failed: {0}")]
    PlacementFailed(&'static str),
    #[error("dimension mismatch for `{what}`: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GainSpec {
    Explicit(Vec<Vec<f64>>),
    PoleTarget(f64),
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec::PoleTarget(0.5)
    }
}

pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().complex_eigenvalues().iter().map(|c| c.norm()).fold(0.0, f64::max)
}

fn closed_loop(lambda: &[f64], c_bar: &DMatrix<f64>, gain: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(lambda)) - gain * c_bar
}

/// Returns a gain `L` (rho x r) with `diag(lambda) - L C_bar` Schur stable.
pub fn design_gain(lambda: &[f64], c_bar: &DMatrix<f64>, spec: &GainSpec) -> Result<DMatrix<f64>, ObserverError> {
    let rho = lambda.len();
    if c_bar.ncols() != rho {
        return Err(ObserverError::DimensionMismatch { what: "C_bar columns", expected: rho, got: c_bar.ncols() });
    }
    let r = c_bar.nrows();
    let gain = match spec {
        GainSpec::Explicit(rows) => {
            if rows.len() != rho {
                return Err(ObserverError::DimensionMismatch { what: "gain rows", expected: rho, got: rows.len() });
            }
            if let Some(bad) = rows.iter().find(|row| row.len() != r) {
                return Err(ObserverError::DimensionMismatch { what: "gain columns", expected: r, got: bad.len() });
            }
            DMatrix::from_fn(rho, r, |i, j| rows[i][j])
        }
        GainSpec::PoleTarget(mu) => {
            if !(0.0..1.0).contains(mu) {
                return Err(ObserverError::PlacementFailed("pole target must lie in [0, 1)"));
            }
            place_rank_one(lambda, c_bar, *mu)?
        }
    };
    let radius = spectral_radius(&closed_loop(lambda, c_bar, &gain));
    if radius.is_nan() || radius >= 1.0 {
        return Err(ObserverError::NotSchurStable(radius));
    }
    Ok(gain)
}

/// Rank-one placement `L = l w^T` putting every closed-loop pole at `mu`.
fn place_rank_one(lambda: &[f64], c_bar: &DMatrix<f64>, mu: f64) -> Result<DMatrix<f64>, ObserverError> {
    let rho = lambda.len();
    let r = c_bar.nrows();
    if rho == 0 {
        return Ok(DMatrix::zeros(0, r));
    }
    if r == 0 {
        return Err(ObserverError::PlacementFailed("no measurements"));
    }
    let mut candidates: Vec<DVector<f64>> =
        (0..r).map(|i| DVector::from_fn(r, |k, _| if k == i { 1.0 } else { 0.0 })).collect();
    for phi in [1.0, 0.5, -0.7, 1.618, 3.0] {
        candidates.push(DVector::from_fn(r, |k, _| f64::powi(phi, k as i32)));
    }
    let score = |w: &DVector<f64>| {
        (0..rho)
            .map(|j| {
                let col = c_bar.column(j);
                let norm = col.norm();
                if norm == 0.0 {
                    0.0
                } else {
                    w.dot(&col).abs() / (norm * w.norm())
                }
            })
            .fold(f64::INFINITY, f64::min)
    };
    let w = candidates.into_iter().max_by(|a, b| score(a).total_cmp(&score(b))).expect("non-empty");
    if score(&w) <= 1e-9 {
        return Err(ObserverError::PlacementFailed("no output combination sees every mode"));
    }
    let c: Vec<f64> = (0..rho).map(|j| w.dot(&c_bar.column(j))).collect();
    let ell = DVector::from_fn(rho, |j, _| {
        let num = (lambda[j] - mu).powi(rho as i32);
        let den: f64 = (0..rho).filter(|&m| m != j).map(|m| lambda[j] - lambda[m]).product();
        num / (c[j] * den)
    });
    Ok(ell * w.transpose())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LuenbergerObserver {
    pub node: NodeId,
    pub modes: Vec<usize>,
    pub lambda: Vec<f64>,
    pub c_bar: DMatrix<f64>,
    pub gain: DMatrix<f64>,
    pub estimate: DVector<f64>,
}

impl LuenbergerObserver {
    pub fn new(
        node: NodeId,
        modes: Vec<usize>,
        lambda: Vec<f64>,
        c_bar: DMatrix<f64>,
        spec: &GainSpec,
        initial: DVector<f64>,
    ) -> Result<Self, ObserverError> {
        if initial.len() != lambda.len() || modes.len() != lambda.len() {
            return Err(ObserverError::DimensionMismatch {
                what: "initial estimate",
                expected: lambda.len(),
                got: initial.len(),
            });
        }
        let gain = design_gain(&lambda, &c_bar, spec)?;
        Ok(Self { node, modes, lambda, c_bar, gain, estimate: initial })
    }

    pub fn closed_loop(&self) -> DMatrix<f64> {
        closed_loop(&self.lambda, &self.c_bar, &self.gain)
    }

    /// One observer update from the measurement `y`.
    pub fn step(&mut self, y: &DVector<f64>) -> Result<&DVector<f64>, ObserverError> {
        if y.len() != self.c_bar.nrows() {
            return Err(ObserverError::DimensionMismatch {
                what: "measurement",
                expected: self.c_bar.nrows(),
                got: y.len(),
            });
        }
        let innovation = y - &self.c_bar * &self.estimate;
        let predicted =
            DVector::from_iterator(self.estimate.len(), self.estimate.iter().zip(&self.lambda).map(|(z, l)| l * z));
        self.estimate = predicted + &self.gain * innovation;
        Ok(&self.estimate)
    }
}
