//! Small dense linear-algebra helpers and serde adapters.
//!
//! Matrices are written to config and artifact files as arrays of rows, which
//! is what people type by hand; `nalgebra`'s own serde layout is column-major
//! and flat.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Build a matrix from row vectors. All rows must have the same length.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(Error::InvalidModel("ragged matrix rows".into()));
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

/// Max absolute asymmetry `|A - A^T|_max`.
pub fn asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Check symmetry (within `sym_tol`) and strict positive definiteness.
pub fn check_spd(m: &DMatrix<f64>, sym_tol: f64, what: &'static str) -> Result<()> {
    if !m.is_square() || m.nrows() == 0 || asymmetry(m) > sym_tol {
        return Err(Error::NotSpd(what));
    }
    let sym = (m + m.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotSpd(what));
    }
    let eig = sym.symmetric_eigenvalues();
    if eig.iter().any(|&e| e <= 0.0) {
        return Err(Error::NotSpd(what));
    }
    Ok(())
}

/// Eigenvalues of the symmetric part of `m`.
pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    ((m + m.transpose()) * 0.5).symmetric_eigenvalues()
}

/// `(x - c)^T M (x - c)` on plain slices.
pub fn quad_form(m: &DMatrix<f64>, x: &[f64], c: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        let dj = x[j] - c[j];
        if dj == 0.0 {
            continue;
        }
        let mut col = 0.0;
        for i in 0..n {
            col += m[(i, j)] * (x[i] - c[i]);
        }
        acc += col * dj;
    }
    acc
}

pub(crate) mod serde_matrix {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_round_trip() {
        let rows = vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]];
        let m = from_rows(&rows).unwrap();
        assert_eq!(m[(2, 1)], 6.0);
        assert_eq!(to_rows(&m), rows);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(from_rows(&[vec![1.0], vec![1.0, 2.0]]).is_err());
    }

    #[test]
    fn spd_check() {
        assert!(check_spd(&diag(&[1.0, 2.0]), 1e-10, "d").is_ok());
        assert!(check_spd(&diag(&[1.0, 0.0]), 1e-10, "d").is_err());
        let asym = from_rows(&[vec![1.0, 0.1], vec![0.0, 1.0]]).unwrap();
        assert!(check_spd(&asym, 1e-10, "a").is_err());
    }

    #[test]
    fn quad_form_matches_matrix_product() {
        let m = from_rows(&[vec![2.0, 0.5], vec![0.5, 1.0]]).unwrap();
        let v = quad_form(&m, &[1.0, 3.0], &[0.0, 1.0]);
        // d = (1, 2): 2 + 2*0.5*2 + 4 = 8
        assert!((v - 8.0).abs() < 1e-15);
    }
}
