//! General banded matrices with an in-place LU factorization (no pivoting).
//!
//! The compact operators are tridiagonal apart from up to four entries in their first
//! two rows, so `kl = 1, ku = 3` covers every case. Rows are diagonally dominant or close
//! to it, which is checked at assembly time.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Row-major band storage: `data[i * width + (j + kl - i)]`.
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        BandedMatrix {
            n,
            kl,
            ku,
            data: vec![0.0; n * (kl + ku + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidths(&self) -> (usize, usize) {
        (self.kl, self.ku)
    }

    fn width(&self) -> usize {
        self.kl + self.ku + 1
    }

    fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if self.in_band(i, j) {
            self.data[i * self.width() + j + self.kl - i]
        } else {
            0.0
        }
    }

    /// Panics if `(i, j)` lies outside the band.
    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) is outside the band");
        let w = self.width();
        self.data[i * w + j + self.kl - i] = value;
    }

    /// Column range of row `i` inside the band.
    fn row_span(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.kl)..(i + self.ku + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y)?;
        Ok(y)
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Dimension { expected: self.n, found: x.len() });
        }
        if y.len() != self.n {
            return Err(Error::Dimension { expected: self.n, found: y.len() });
        }
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row_span(i).map(|j| self.get(i, j) * x[j]).sum();
        }
        Ok(())
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// LU factorization without pivoting. Fill stays inside the band.
    pub fn factor(&self) -> Result<BandedLu> {
        let mut lu = self.clone();
        let n = self.n;
        for k in 0..n {
            let pivot = lu.get(k, k);
            if pivot == 0.0 || !pivot.is_finite() {
                return Err(Error::Singular { row: k });
            }
            let last_row = (k + self.kl).min(n - 1);
            let last_col = (k + self.ku).min(n - 1);
            for i in k + 1..=last_row {
                let l = lu.get(i, k) / pivot;
                lu.set(i, k, l);
                if l != 0.0 {
                    for j in k + 1..=last_col {
                        let v = lu.get(i, j) - l * lu.get(k, j);
                        lu.set(i, j, v);
                    }
                }
            }
        }
        Ok(BandedLu { lu })
    }
}

/// Packed `L` (unit diagonal, below) and `U` factors.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedLu {
    lu: BandedMatrix,
}

impl BandedLu {
    pub fn dim(&self) -> usize {
        self.lu.n
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let mut x = rhs.to_vec();
        self.solve_in_place(&mut x)?;
        Ok(x)
    }

    pub fn solve_in_place(&self, x: &mut [f64]) -> Result<()> {
        let m = &self.lu;
        let n = m.n;
        if x.len() != n {
            return Err(Error::Dimension { expected: n, found: x.len() });
        }
        for i in 0..n {
            let mut s = x[i];
            for j in i.saturating_sub(m.kl)..i {
                s -= m.get(i, j) * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..(i + m.ku + 1).min(n) {
                s -= m.get(i, j) * x[j];
            }
            x[i] = s / m.get(i, i);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tridiagonal(n: usize) -> BandedMatrix {
        let mut a = BandedMatrix::zeros(n, 1, 3);
        for i in 0..n {
            a.set(i, i, 10.0);
            if i > 0 {
                a.set(i, i - 1, 1.0);
            }
            if i + 1 < n {
                a.set(i, i + 1, 1.0);
            }
        }
        a
    }

    #[test]
    fn identity_solve() {
        let mut a = BandedMatrix::zeros(5, 1, 3);
        for i in 0..5 {
            a.set(i, i, 1.0);
        }
        let rhs = [1.0, -2.0, 3.5, 0.0, 7.0];
        assert_eq!(a.factor().unwrap().solve(&rhs).unwrap(), rhs.to_vec());
    }

    #[test]
    fn tridiagonal_round_trip() {
        let a = tridiagonal(40);
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = a.matvec(&x).unwrap();
        let sol = a.factor().unwrap().solve(&b).unwrap();
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-14);
        }
    }

    #[test]
    fn first_row_fill() {
        let mut a = tridiagonal(8);
        a.set(0, 0, 5.0 / 3.0);
        a.set(0, 1, 2.0 / 3.0);
        a.set(0, 2, -1.0 / 3.0);
        a.set(1, 1, 14.0);
        a.set(1, 2, -5.0);
        a.set(1, 3, 4.0);
        a.set(1, 4, -1.0);
        let x: Vec<f64> = (0..8).map(|i| 1.0 + i as f64).collect();
        let b = a.matvec(&x).unwrap();
        let sol = a.factor().unwrap().solve(&b).unwrap();
        for (s, e) in sol.iter().zip(&x) {
            assert!((s - e).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_pivot_is_reported() {
        let mut a = tridiagonal(4);
        a.set(2, 2, 0.0);
        a.set(2, 1, 0.0);
        assert!(matches!(a.factor(), Err(Error::Singular { row: 2 })));
    }

    #[test]
    fn dimension_checks() {
        let a = tridiagonal(4);
        assert!(matches!(a.matvec(&[1.0; 3]), Err(Error::Dimension { .. })));
        assert!(a.factor().unwrap().solve(&[1.0; 5]).is_err());
        assert_eq!(a.get(0, 3), 0.0);
        assert_eq!(a.get(3, 0), 0.0);
    }
}
