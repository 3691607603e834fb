//! Plant model, modal decomposition and per-node detectability.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::NodeId;

#[derive(Debug, Error, PartialEq)]
pub enum LtiError {
    #[error("state matrix must be square and non-empty, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix `{0}` contains non-finite entries")]
    NonFinite(&'static str),
    #[error("dimension mismatch for `{what}`: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("eigenvalues {0} and {1} coincide within tolerance")]
    NonSimpleSpectrum(f64, f64),
    #[error("complex eigenvalue {re}{im:+}i")]
    ComplexSpectrum { re: f64, im: f64 },
    #[error("eigenvector matrix is singular")]
    SingularPsi,
    #[error("supplied eigenvector matrix does not diagonalize A (off-diagonal residual {0:e})")]
    NotDiagonalizing(f64),
}

/// Numerical tolerances used by the modal decomposition and PBH test.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LtiTolerances {
    /// Relative separation below which two eigenvalues count as repeated.
    pub eig_tol: f64,
    /// Allowed off-diagonal residual of `Psi^-1 A Psi`, relative to `max(1, |A|_max)`.
    pub diag_tol: f64,
    /// Relative column-norm threshold for detectability.
    pub pbh_tol: f64,
}

impl Default for LtiTolerances {
    fn default() -> Self {
        Self { eig_tol: 1e-9, diag_tol: 1e-9, pbh_tol: 1e-9 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LtiSystem {
    pub a: DMatrix<f64>,
    pub x0: DVector<f64>,
}

impl LtiSystem {
    pub fn new(a: DMatrix<f64>, x0: DVector<f64>) -> Result<Self, LtiError> {
        if a.nrows() != a.ncols() || a.nrows() == 0 {
            return Err(LtiError::NotSquare { rows: a.nrows(), cols: a.ncols() });
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite("A"));
        }
        if x0.len() != a.nrows() {
            return Err(LtiError::DimensionMismatch { what: "x0", expected: a.nrows(), got: x0.len() });
        }
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite("x0"));
        }
        Ok(Self { a, x0 })
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Eigenstructure of a plant with a real, simple spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalizedSystem {
    pub psi: DMatrix<f64>,
    pub psi_inv: DMatrix<f64>,
    pub eigenvalues: Vec<f64>,
    pub unstable_modes: Vec<usize>,
    pub z0: DVector<f64>,
}

impl DiagonalizedSystem {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_unstable(&self, mode: usize) -> bool {
        self.eigenvalues[mode].abs() >= 1.0
    }

    pub fn to_modal(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.psi_inv * x
    }

    pub fn to_state(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.psi * z
    }

    pub fn a_bar(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues))
    }
}

/// Diagonalizes `sys`. A supplied `psi` is validated, otherwise the
/// eigenvectors are computed (eigenvalues sorted ascending).
pub fn diagonalize(
    sys: &LtiSystem,
    psi: Option<&DMatrix<f64>>,
    tol: &LtiTolerances,
) -> Result<DiagonalizedSystem, LtiError> {
    let n = sys.dim();
    let scale = sys.a.amax().max(1.0);
    let (psi, psi_inv, eigenvalues) = match psi {
        Some(p) => {
            if p.nrows() != n || p.ncols() != n {
                return Err(LtiError::DimensionMismatch { what: "psi", expected: n, got: p.nrows().max(p.ncols()) });
            }
            if p.iter().any(|v| !v.is_finite()) {
                return Err(LtiError::NonFinite("psi"));
            }
            let inv = invert(p)?;
            let d = &inv * &sys.a * p;
            let mut off = 0.0f64;
            for i in 0..n {
                for j in 0..n {
                    if i != j {
                        off = off.max(d[(i, j)].abs());
                    }
                }
            }
            if off > tol.diag_tol * scale {
                return Err(LtiError::NotDiagonalizing(off));
            }
            let eig: Vec<f64> = (0..n).map(|i| d[(i, i)]).collect();
            (p.clone(), inv, eig)
        }
        None => {
            let eig = real_eigenvalues(&sys.a, tol)?;
            let mut psi = DMatrix::zeros(n, n);
            for (j, &lambda) in eig.iter().enumerate() {
                let v = null_vector(&sys.a, lambda);
                psi.set_column(j, &v);
            }
            let inv = invert(&psi)?;
            (psi, inv, eig)
        }
    };
    check_simple(&eigenvalues, tol)?;
    let unstable_modes = (0..n).filter(|&j| eigenvalues[j].abs() >= 1.0).collect();
    let z0 = &psi_inv * &sys.x0;
    Ok(DiagonalizedSystem { psi, psi_inv, eigenvalues, unstable_modes, z0 })
}

pub fn transform_initial(sys: &LtiSystem, diag: &DiagonalizedSystem) -> DVector<f64> {
    diag.to_modal(&sys.x0)
}

pub fn step_truth(z: &DVector<f64>, diag: &DiagonalizedSystem) -> DVector<f64> {
    DVector::from_iterator(z.len(), z.iter().zip(&diag.eigenvalues).map(|(v, l)| l * v))
}

fn invert(p: &DMatrix<f64>) -> Result<DMatrix<f64>, LtiError> {
    let svd = p.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax.is_nan() || smax <= 0.0 || smin <= smax * 1e-12 {
        return Err(LtiError::SingularPsi);
    }
    p.clone().try_inverse().ok_or(LtiError::SingularPsi)
}

fn real_eigenvalues(a: &DMatrix<f64>, tol: &LtiTolerances) -> Result<Vec<f64>, LtiError> {
    let mut eig = Vec::with_capacity(a.nrows());
    for c in a.complex_eigenvalues().iter() {
        if c.im.abs() > tol.eig_tol * c.re.abs().max(1.0) {
            return Err(LtiError::ComplexSpectrum { re: c.re, im: c.im });
        }
        eig.push(c.re);
    }
    eig.sort_by(f64::total_cmp);
    check_simple(&eig, tol)?;
    Ok(eig)
}

fn check_simple(eig: &[f64], tol: &LtiTolerances) -> Result<(), LtiError> {
    for i in 0..eig.len() {
        for j in i + 1..eig.len() {
            let gap = (eig[i] - eig[j]).abs();
            if gap <= tol.eig_tol * eig[i].abs().max(eig[j].abs()).max(1.0) {
                return Err(LtiError::NonSimpleSpectrum(eig[i], eig[j]));
            }
        }
    }
    Ok(())
}

/// Unit null vector of `A - lambda I`, signed so its largest entry is positive.
fn null_vector(a: &DMatrix<f64>, lambda: f64) -> DVector<f64> {
    let n = a.nrows();
    let shifted = a - DMatrix::identity(n, n) * lambda;
    let svd = shifted.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let (idx, _) = svd.singular_values.iter().enumerate().min_by(|x, y| x.1.total_cmp(y.1)).expect("non-empty");
    let mut v: DVector<f64> = v_t.row(idx).transpose();
    let (imax, _) = v.iter().enumerate().max_by(|x, y| x.1.abs().total_cmp(&y.1.abs())).expect("non-empty");
    v /= v[imax];
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObservationModel {
    pub node: NodeId,
    pub c: DMatrix<f64>,
    pub c_bar: DMatrix<f64>,
}

impl ObservationModel {
    pub fn new(node: NodeId, c: DMatrix<f64>, diag: &DiagonalizedSystem) -> Result<Self, LtiError> {
        if c.ncols() != diag.dim() {
            return Err(LtiError::DimensionMismatch { what: "C", expected: diag.dim(), got: c.ncols() });
        }
        if c.iter().any(|v| !v.is_finite()) {
            return Err(LtiError::NonFinite("C"));
        }
        let c_bar = &c * &diag.psi;
        Ok(Self { node, c, c_bar })
    }

    pub fn measure(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    /// Columns of `C_bar` restricted to `modes`.
    pub fn detectable_block(&self, modes: &[usize]) -> DMatrix<f64> {
        self.c_bar.select_columns(modes)
    }
}

/// Detectable / undetectable split of the modes for one node.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModeSplit {
    pub detectable: Vec<usize>,
    pub undetectable: Vec<usize>,
}

pub fn detectable_modes(obs: &ObservationModel, tol: f64) -> ModeSplit {
    let n = obs.c_bar.ncols();
    let scale = obs.c_bar.amax();
    let mut split = ModeSplit::default();
    for j in 0..n {
        let norm = obs.c_bar.column(j).norm();
        if scale > 0.0 && norm > tol * scale {
            split.detectable.push(j);
        } else {
            split.undetectable.push(j);
        }
    }
    split
}

/// Maps each mode in `modes` to the nodes that can detect it.
pub fn source_sets(splits: &BTreeMap<NodeId, ModeSplit>, modes: &[usize]) -> BTreeMap<usize, BTreeSet<NodeId>> {
    modes
        .iter()
        .map(|&j| {
            let s = splits.iter().filter(|(_, sp)| sp.detectable.contains(&j)).map(|(&id, _)| id).collect();
            (j, s)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sample_system() -> (LtiSystem, DMatrix<f64>) {
        let a = DMatrix::from_row_slice(2, 2, &[0.98, 0.02, -0.04, 1.04]);
        let psi = DMatrix::from_row_slice(2, 2, &[0.1, 1.0, 0.2, 1.0]);
        (LtiSystem::new(a, DVector::from_vec(vec![2.0, 5.0])).unwrap(), psi)
    }

    #[test]
    fn supplied_psi_gives_sample_eigenvalues() {
        let (sys, psi) = sample_system();
        let d = diagonalize(&sys, Some(&psi), &LtiTolerances::default()).unwrap();
        assert_abs_diff_eq!(d.eigenvalues[0], 1.02, epsilon = 1e-12);
        assert_abs_diff_eq!(d.eigenvalues[1], 1.0, epsilon = 1e-12);
        assert_eq!(d.unstable_modes, vec![0, 1]);
        assert_abs_diff_eq!(d.z0[0], 30.0, epsilon = 1e-10);
        assert_abs_diff_eq!(d.z0[1], -1.0, epsilon = 1e-10);
    }

    #[test]
    fn identity_is_repeated() {
        let sys = LtiSystem::new(DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        let err = diagonalize(&sys, None, &LtiTolerances::default()).unwrap_err();
        assert!(matches!(err, LtiError::NonSimpleSpectrum(..)));
    }

    #[test]
    fn diagonal_matrix_without_psi() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0]));
        let sys = LtiSystem::new(a, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let d = diagonalize(&sys, None, &LtiTolerances::default()).unwrap();
        assert_abs_diff_eq!(d.eigenvalues[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(d.eigenvalues[1], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.psi, DMatrix::identity(2, 2), epsilon = 1e-12);
        assert_eq!(d.unstable_modes, vec![1]);
        assert_abs_diff_eq!(d.z0, DVector::from_vec(vec![1.0, 0.0]), epsilon = 1e-12);
    }

    #[test]
    fn rotation_is_complex() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let sys = LtiSystem::new(a, DVector::zeros(2)).unwrap();
        let err = diagonalize(&sys, None, &LtiTolerances::default()).unwrap_err();
        assert!(matches!(err, LtiError::ComplexSpectrum { .. }));
    }

    #[test]
    fn singular_psi_rejected() {
        let (sys, _) = sample_system();
        let psi = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let err = diagonalize(&sys, Some(&psi), &LtiTolerances::default()).unwrap_err();
        assert_eq!(err, LtiError::SingularPsi);
    }

    #[test]
    fn zero_initial_state() {
        let (mut sys, psi) = sample_system();
        sys.x0 = DVector::zeros(2);
        let d = diagonalize(&sys, Some(&psi), &LtiTolerances::default()).unwrap();
        assert_eq!(transform_initial(&sys, &d), DVector::zeros(2));
    }

    #[test]
    fn step_truth_multiplies() {
        let (sys, psi) = sample_system();
        let d = diagonalize(&sys, Some(&psi), &LtiTolerances::default()).unwrap();
        let z = step_truth(&DVector::from_vec(vec![30.0, -1.0]), &d);
        assert_abs_diff_eq!(z[0], 30.6, epsilon = 1e-9);
        assert_abs_diff_eq!(z[1], -1.0, epsilon = 1e-9);
        assert_eq!(step_truth(&DVector::zeros(2), &d), DVector::zeros(2));
    }

    #[test]
    fn sample_observations_classify() {
        let (sys, psi) = sample_system();
        let d = diagonalize(&sys, Some(&psi), &LtiTolerances::default()).unwrap();
        let r1 = ObservationModel::new(1, DMatrix::from_row_slice(1, 2, &[-10.0, 10.0]), &d).unwrap();
        let r2 = ObservationModel::new(5, DMatrix::from_row_slice(1, 2, &[2.0, -1.0]), &d).unwrap();
        let r3 = ObservationModel::new(9, DMatrix::zeros(1, 2), &d).unwrap();
        assert_abs_diff_eq!(r1.c_bar, DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), epsilon = 1e-12);
        assert_abs_diff_eq!(r2.c_bar, DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), epsilon = 1e-12);
        let s1 = detectable_modes(&r1, 1e-9);
        assert_eq!(s1.detectable, vec![0]);
        assert_eq!(s1.undetectable, vec![1]);
        assert_eq!(detectable_modes(&r2, 1e-9).detectable, vec![1]);
        assert!(detectable_modes(&r3, 1e-9).detectable.is_empty());

        let mut splits = BTreeMap::new();
        splits.insert(1, s1);
        splits.insert(5, detectable_modes(&r2, 1e-9));
        splits.insert(9, detectable_modes(&r3, 1e-9));
        let src = source_sets(&splits, &[0, 1]);
        assert_eq!(src[&0], BTreeSet::from([1]));
        assert_eq!(src[&1], BTreeSet::from([5]));
    }

    #[test]
    fn full_rank_detects_everything() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 2.0, 3.0]));
        let sys = LtiSystem::new(a, DVector::zeros(3)).unwrap();
        let d = diagonalize(&sys, None, &LtiTolerances::default()).unwrap();
        let o = ObservationModel::new(1, DMatrix::identity(3, 3), &d).unwrap();
        assert_eq!(detectable_modes(&o, 1e-9).detectable, vec![0, 1, 2]);
        let mut splits = BTreeMap::new();
        splits.insert(1, detectable_modes(&o, 1e-9));
        let src = source_sets(&splits, &d.unstable_modes);
        assert!(src.values().all(|s| s == &BTreeSet::from([1])));
        splits.insert(1, ModeSplit { detectable: vec![], undetectable: vec![0, 1, 2] });
        assert!(source_sets(&splits, &[1, 2]).values().all(|s| s.is_empty()));
    }
}
