//! Symmetric matrices stored by row envelope, factorised in place.
//!
//! Row `i` stores columns `first[i]..=i` of the lower triangle. Fill-in of a
//! Cholesky factor stays inside the envelope, so banded problems with a few
//! dense border rows factorise in time proportional to the envelope size.

use crate::scalar::Real;

#[derive(Clone, Debug)]
pub struct Skyline<T: Real> {
    first: Vec<usize>,
    offset: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Skyline<T> {
    /// `first[i]` is the leftmost stored column of row `i`; it must not exceed `i`.
    pub fn zeros(first: Vec<usize>) -> Self {
        let mut offset = Vec::with_capacity(first.len() + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            debug_assert!(f <= i);
            offset.push(total);
            total += i + 1 - f;
        }
        offset.push(total);
        Self {
            first,
            offset,
            data: vec![T::zero(); total],
        }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored(&self) -> usize {
        self.data.len()
    }

    fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && j >= self.first[i], "({i}, {j}) outside envelope");
        self.offset[i] + j - self.first[i]
    }

    /// Entry `(i, j)` of the lower triangle, zero outside the envelope.
    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if j < self.first[i] {
            T::zero()
        } else {
            self.data[self.index(i, j)]
        }
    }

    /// Adds `v` to entry `(i, j)` with `j <= i`.
    pub fn add(&mut self, i: usize, j: usize, v: T) {
        let k = self.index(i, j);
        self.data[k] += v;
    }

    pub fn diagonal(&self, i: usize) -> T {
        self.data[self.offset[i + 1] - 1]
    }

    pub fn add_diagonal(&mut self, i: usize, v: T) {
        let k = self.offset[i + 1] - 1;
        self.data[k] += v;
    }

    /// Replaces the matrix by its lower Cholesky factor. On failure returns the
    /// row whose pivot was not positive.
    pub fn factorize(&mut self) -> Result<(), usize> {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let (before, row_i) = self.data.split_at_mut(self.offset[i]);
            let row_i = &mut row_i[..i + 1 - fi];
            for j in fi..=i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = row_i[j - fi];
                if j < i {
                    let row_j = &before[self.offset[j]..self.offset[j + 1]];
                    let a = &row_i[k0 - fi..j - fi];
                    let b = &row_j[k0 - fj..j - fj];
                    for (x, y) in a.iter().zip(b) {
                        s -= *x * *y;
                    }
                    let d = row_j[j - fj];
                    row_i[j - fi] = s / d;
                } else {
                    for x in &row_i[k0 - fi..j - fi] {
                        s -= *x * *x;
                    }
                    if !(s > T::zero()) {
                        return Err(i);
                    }
                    row_i[j - fi] = s.sqrt();
                }
            }
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` in place using a factor from [`Self::factorize`].
    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            let mut s = b[i];
            for (k, l) in (fi..i).zip(row) {
                s -= *l * b[k];
            }
            b[i] = s / row[i - fi];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let row = &self.data[self.offset[i]..self.offset[i + 1]];
            b[i] /= row[i - fi];
            let xi = b[i];
            for (k, l) in (fi..i).zip(row) {
                b[k] -= *l * xi;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::*;

    fn from_dense(a: &DMatrix<f64>) -> Skyline<f64> {
        let n = a.nrows();
        let first = (0..n)
            .map(|i| (0..=i).find(|&j| a[(i, j)] != 0.0).unwrap_or(i))
            .collect();
        let mut s = Skyline::zeros(first);
        for i in 0..n {
            for j in s.first[i]..=i {
                s.add(i, j, a[(i, j)]);
            }
        }
        s
    }

    #[test]
    fn envelope_storage() {
        let s = Skyline::<f64>::zeros(vec![0, 0, 1, 0]);
        assert_eq!(s.stored(), 1 + 2 + 2 + 4);
        assert_eq!(s.get(2, 0), 0.0);
    }

    #[test]
    fn rejects_indefinite() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let mut s = from_dense(&a);
        assert_eq!(s.factorize(), Err(1));
    }

    proptest! {
        #[test]
        fn matches_dense_cholesky(n in 2usize..20, band in 0usize..4, seed in 0u64..1000) {
            // Banded SPD matrix with a dense last row.
            let mut a = DMatrix::<f64>::zeros(n, n);
            let mut v = seed as f64 + 0.5;
            let mut next = || { v = (v * 7.31 + 0.17).fract(); v - 0.5 };
            for i in 0..n {
                for j in 0..i {
                    if i - j <= band || i == n - 1 {
                        let x = next();
                        a[(i, j)] = x;
                        a[(j, i)] = x;
                    }
                }
                a[(i, i)] = n as f64 + 1.0;
            }
            let b = DVector::from_fn(n, |i, _| (i as f64).sin());
            let expected = a.clone().cholesky().unwrap().solve(&b);
            let mut s = from_dense(&a);
            s.factorize().unwrap();
            let mut x = b.as_slice().to_vec();
            s.solve_in_place(&mut x);
            for i in 0..n {
                prop_assert!((x[i] - expected[i]).abs() < 1e-12);
            }
        }
    }
}
