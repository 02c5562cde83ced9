//! Dense matrices of size at most 3×3 and the exterior-power machinery built on them.
//!
//! Everything here is fixed-capacity and allocation free: phase spaces have
//! dimension ≤ 3, and `C(3, k) ≤ 3`, so compound matrices fit as well.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: [[T; MAX_DIM]; MAX_DIM],
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows <= MAX_DIM && cols <= MAX_DIM && rows > 0 && cols > 0);
        Self {
            rows,
            cols,
            data: [[T::zero(); MAX_DIM]; MAX_DIM],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i][i] = T::one();
        }
        m
    }

    pub fn scalar(x: T) -> Self {
        let mut m = Self::zeros(1, 1);
        m.data[0][0] = x;
        m
    }

    pub fn diag(entries: &[T]) -> Self {
        let mut m = Self::zeros(entries.len(), entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m.data[i][i] = e;
        }
        m
    }

    /// Builds from row slices; all rows must have the same length.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let mut m = Self::zeros(rows.len(), rows[0].len());
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), m.cols, "ragged rows");
            m.data[i][..row.len()].copy_from_slice(row);
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i][j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i][j] = v;
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimensions differ");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for j in 0..rhs.cols {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc = acc + self.data[i][k] * rhs.data[k][j];
                }
                out.data[i][j] = acc;
            }
        }
        out
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j][i] = self.data[i][j];
            }
        }
        out
    }

    pub fn scale(&self, s: T) -> Self {
        let mut out = *self;
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[i][j] = out.data[i][j] * s;
            }
        }
        out
    }

    pub fn max_abs(&self) -> T {
        let mut m = T::zero();
        for i in 0..self.rows {
            for j in 0..self.cols {
                m = m.max(self.data[i][j].abs());
            }
        }
        m
    }

    pub fn is_finite(&self) -> bool {
        (0..self.rows).all(|i| (0..self.cols).all(|j| self.data[i][j].is_finite()))
    }

    pub fn determinant(&self) -> T {
        assert_eq!(self.rows, self.cols, "determinant of a non-square matrix");
        let a = &self.data;
        match self.rows {
            1 => a[0][0],
            2 => a[0][0] * a[1][1] - a[0][1] * a[1][0],
            3 => {
                a[0][0] * (a[1][1] * a[2][2] - a[1][2] * a[2][1])
                    - a[0][1] * (a[1][0] * a[2][2] - a[1][2] * a[2][0])
                    + a[0][2] * (a[1][0] * a[2][1] - a[1][1] * a[2][0])
            }
            _ => unreachable!(),
        }
    }

    fn minor(&self, rows: &[usize], cols: &[usize]) -> T {
        let mut sub = Self::zeros(rows.len(), cols.len());
        for (a, &i) in rows.iter().enumerate() {
            for (b, &j) in cols.iter().enumerate() {
                sub.data[a][b] = self.data[i][j];
            }
        }
        sub.determinant()
    }

    /// The matrix of `Λ^k` in the basis of wedge products of basis vectors,
    /// index sets in lexicographic order.
    pub fn compound(&self, k: usize) -> Result<Self> {
        let dim = self.rows;
        assert_eq!(self.rows, self.cols, "compound of a non-square matrix");
        if k == 0 || k > dim {
            return Err(Error::ExteriorDegree { k, dim });
        }
        let subsets = index_subsets(dim, k);
        let mut out = Self::zeros(subsets.len(), subsets.len());
        for (a, rows) in subsets.iter().enumerate() {
            for (b, cols) in subsets.iter().enumerate() {
                out.data[a][b] = self.minor(rows, cols);
            }
        }
        Ok(out)
    }

    /// Singular values in nonincreasing order (one-sided Jacobi).
    pub fn singular_values(&self) -> Vec<T> {
        // Jacobi acts on columns; use the orientation with at most as many columns as rows.
        let work = if self.cols > self.rows {
            self.transpose()
        } else {
            *self
        };
        let (m, n) = (work.rows, work.cols);
        let mut cols = [[T::zero(); MAX_DIM]; MAX_DIM];
        for (j, col) in cols.iter_mut().enumerate().take(n) {
            for (i, c) in col.iter_mut().enumerate().take(m) {
                *c = work.data[i][j];
            }
        }
        let eps = T::epsilon();
        for _sweep in 0..64 {
            let mut rotated = false;
            for p in 0..n {
                for q in (p + 1)..n {
                    let (mut alpha, mut beta, mut gamma) = (T::zero(), T::zero(), T::zero());
                    for i in 0..m {
                        alpha = alpha + cols[p][i] * cols[p][i];
                        beta = beta + cols[q][i] * cols[q][i];
                        gamma = gamma + cols[p][i] * cols[q][i];
                    }
                    if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let two = T::lit(2.0);
                    let zeta = (beta - alpha) / (two * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for i in 0..m {
                        let up = cols[p][i];
                        let uq = cols[q][i];
                        cols[p][i] = c * up - s * uq;
                        cols[q][i] = s * up + c * uq;
                    }
                }
            }
            if !rotated {
                break;
            }
        }
        let mut sv: Vec<T> = (0..n)
            .map(|j| {
                let scale = (0..m).fold(T::zero(), |acc, i| acc.max(cols[j][i].abs()));
                if scale == T::zero() {
                    return T::zero();
                }
                let ss = (0..m).fold(T::zero(), |acc, i| {
                    let v = cols[j][i] / scale;
                    acc + v * v
                });
                scale * ss.sqrt()
            })
            .collect();
        sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
        sv
    }

    /// Largest singular value.
    pub fn operator_norm(&self) -> T {
        self.singular_values()[0]
    }
}

/// All `k`-element subsets of `0..n` in lexicographic order.
pub fn index_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    out
}

/// `‖Λ^k J‖`, the product of the `k` largest singular values of `J`.
pub fn exterior_norm<T: Scalar>(j: &Mat<T>, k: usize) -> Result<T> {
    let dim = j.rows();
    if j.rows() != j.cols() {
        return Err(Error::Dimension {
            expected: j.rows(),
            got: j.cols(),
        });
    }
    if k == 0 || k > dim {
        return Err(Error::ExteriorDegree { k, dim });
    }
    Ok(j.singular_values().into_iter().take(k).fold(T::one(), |acc, s| acc * s))
}

/// A matrix product `A_m ⋯ A_1` held as `exp(log_scale) · mat` with `max|mat| = 1`.
///
/// Renormalizing after every factor keeps the dominant singular value exact to
/// working precision for arbitrarily long products.
#[derive(Clone, Copy, Debug)]
pub struct ScaledProduct<T> {
    mat: Mat<T>,
    log_scale: T,
}

impl<T: Scalar> ScaledProduct<T> {
    pub fn identity(dim: usize) -> Self {
        Self {
            mat: Mat::identity(dim),
            log_scale: T::zero(),
        }
    }

    /// Left-multiplies by `a`.
    pub fn push(&mut self, a: &Mat<T>) {
        self.mat = a.mul(&self.mat);
        let m = self.mat.max_abs();
        if m > T::zero() && m.is_finite() {
            self.mat = self.mat.scale(T::one() / m);
            self.log_scale = self.log_scale + m.ln();
        } else if m == T::zero() {
            self.log_scale = T::neg_infinity();
        }
    }

    /// `log ‖product‖` (operator norm).
    pub fn log_norm(&self) -> T {
        if self.log_scale == T::neg_infinity() {
            return T::neg_infinity();
        }
        self.log_scale + self.mat.operator_norm().ln()
    }

    /// Logs of the singular values of the product, nonincreasing.
    pub fn log_singular_values(&self) -> Vec<T> {
        self.mat
            .singular_values()
            .into_iter()
            .map(|s| self.log_scale + s.ln())
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Closed form for 2×2: σ² are the eigenvalues of AᵀA.
    fn svd2_closed_form(a: &Mat<f64>) -> (f64, f64) {
        let ata = a.transpose().mul(a);
        let tr = ata.get(0, 0) + ata.get(1, 1);
        let det = ata.determinant();
        let disc = ((tr * tr / 4.0) - det).max(0.0).sqrt();
        let l1 = tr / 2.0 + disc;
        let l2 = (tr / 2.0 - disc).max(0.0);
        (l1.sqrt(), l2.sqrt())
    }

    #[test]
    fn identity_exterior_norms() {
        let id = Mat::<f64>::identity(2);
        assert_eq!(exterior_norm(&id, 1).unwrap(), 1.0);
        assert_eq!(exterior_norm(&id, 2).unwrap(), 1.0);
    }

    #[test]
    fn diagonal_exterior_norm() {
        let d = Mat::diag(&[3.0_f64, 2.0]);
        assert!((exterior_norm(&d, 1).unwrap() - 3.0).abs() < 1e-14);
        assert!((exterior_norm(&d, 2).unwrap() - 6.0).abs() < 1e-14);
    }

    #[test]
    fn cat_matrix_top_singular_value() {
        let cat = Mat::from_rows(&[&[2.0_f64, 1.0], &[1.0, 1.0]]);
        let golden = (3.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((exterior_norm(&cat, 1).unwrap() - golden).abs() < 1e-12);
        assert!((exterior_norm(&cat, 2).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn degree_out_of_range() {
        let m = Mat::<f64>::identity(2);
        assert!(matches!(exterior_norm(&m, 0), Err(Error::ExteriorDegree { .. })));
        assert!(matches!(exterior_norm(&m, 3), Err(Error::ExteriorDegree { .. })));
    }

    #[test]
    fn compound_of_3x3_has_minors() {
        let a = Mat::from_rows(&[&[1.0_f64, 2.0, 0.0], &[0.0, 1.0, 3.0], &[4.0, 0.0, 1.0]]);
        let c2 = a.compound(2).unwrap();
        // rows {0,1}, cols {0,1}: 1*1 - 2*0
        assert_eq!(c2.get(0, 0), 1.0);
        // rows {1,2}, cols {0,2}: 0*1 - 3*4
        assert_eq!(c2.get(2, 1), -12.0);
        assert!((a.compound(3).unwrap().get(0, 0) - a.determinant()).abs() < 1e-12);
    }

    #[test]
    fn scaled_product_does_not_overflow() {
        let a = Mat::diag(&[1e10_f64, 1e-10]);
        let mut p = ScaledProduct::identity(2);
        for _ in 0..1000 {
            p.push(&a);
        }
        let expected = 1000.0 * 1e10_f64.ln();
        assert!((p.log_norm() - expected).abs() / expected < 1e-12);
    }

    #[test]
    fn f32_singular_values() {
        let cat = Mat::from_rows(&[&[2.0_f32, 1.0], &[1.0, 1.0]]);
        let sv = cat.singular_values();
        assert!((sv[0] - 2.618034).abs() < 1e-5);
        assert!((sv[1] - 0.381966).abs() < 1e-5);
    }

    fn mat3() -> impl Strategy<Value = Mat<f64>> {
        prop::array::uniform9(-3.0..3.0_f64).prop_map(|v| {
            Mat::from_rows(&[&v[0..3], &v[3..6], &v[6..9]])
        })
    }

    fn mat2() -> impl Strategy<Value = Mat<f64>> {
        prop::array::uniform4(-3.0..3.0_f64).prop_map(|v| Mat::from_rows(&[&v[0..2], &v[2..4]]))
    }

    proptest! {
        #[test]
        fn jacobi_matches_2x2_closed_form(a in mat2()) {
            let sv = a.singular_values();
            let (s1, s2) = svd2_closed_form(&a);
            prop_assert!((sv[0] - s1).abs() <= 1e-10 * (1.0 + s1));
            prop_assert!((sv[1] - s2).abs() <= 1e-7 * (1.0 + s1));
        }

        #[test]
        fn top_exterior_equals_abs_det(a in mat3()) {
            let top = exterior_norm(&a, 3).unwrap();
            let det = a.determinant().abs();
            prop_assert!((top - det).abs() <= 1e-9 * (1.0 + det));
        }

        #[test]
        fn exterior_norm_equals_compound_operator_norm(a in mat3(), k in 1usize..=3) {
            let via_sv = exterior_norm(&a, k).unwrap();
            let via_compound = a.compound(k).unwrap().operator_norm();
            prop_assert!((via_sv - via_compound).abs() <= 1e-9 * (1.0 + via_sv));
        }

        #[test]
        fn exterior_norm_submultiplicative(a in mat3(), b in mat3(), k in 1usize..=3) {
            let ab = exterior_norm(&a.mul(&b), k).unwrap();
            let bound = exterior_norm(&a, k).unwrap() * exterior_norm(&b, k).unwrap();
            prop_assert!(ab <= bound * (1.0 + 1e-9) + 1e-12);
        }
    }
}
