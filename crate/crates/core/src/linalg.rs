//! Small dense matrices and the matrix exponential.
//!
//! The hidden chain has a handful of states, so a row-major `Vec` with naive
//! products is all that is needed.

use std::ops::{Index, IndexMut};

use crate::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Mat<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Mat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            assert_eq!(row.len(), c, "ragged matrix rows");
            data.extend_from_slice(row);
        }
        Self { rows: r, cols: c, data }
    }

    pub fn diag(d: &[T]) -> Self {
        let mut m = Self::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows);
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == T::zero() {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// Row vector times matrix: `v · self`.
    pub fn left_mul(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.rows);
        let mut out = vec![T::zero(); self.cols];
        for (k, &vk) in v.iter().enumerate() {
            if vk == T::zero() {
                continue;
            }
            for (j, o) in out.iter_mut().enumerate() {
                *o += vk * self[(k, j)];
            }
        }
        out
    }

    /// Matrix times column vector.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        assert_eq!(v.len(), self.cols);
        (0..self.rows).map(|i| self.row(i).iter().zip(v).map(|(&a, &b)| a * b).sum()).collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self { rows: self.rows, cols: self.cols, data: self.data.iter().map(|&x| x * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(T, T) -> T) -> Self {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    /// Induced 1-norm (max absolute column sum).
    pub fn norm1(&self) -> T {
        (0..self.cols).map(|j| (0..self.rows).map(|i| self[(i, j)].abs()).sum::<T>()).fold(T::zero(), T::max)
    }

    /// Solves `self · X = rhs` by Gaussian elimination with partial pivoting.
    /// Returns `None` when the matrix is numerically singular.
    pub fn solve(&self, rhs: &Self) -> Option<Self> {
        let n = self.rows;
        assert_eq!(n, self.cols);
        assert_eq!(n, rhs.rows);
        let mut a = self.clone();
        let mut b = rhs.clone();
        for col in 0..n {
            let pivot = (col..n).max_by(|&x, &y| a[(x, col)].abs().partial_cmp(&a[(y, col)].abs()).unwrap()).unwrap();
            if a[(pivot, col)].abs() <= T::min_positive_value() {
                return None;
            }
            if pivot != col {
                a.swap_rows(pivot, col);
                b.swap_rows(pivot, col);
            }
            let d = a[(col, col)];
            for r in col + 1..n {
                let f = a[(r, col)] / d;
                if f == T::zero() {
                    continue;
                }
                for c in col..n {
                    let v = a[(col, c)];
                    a[(r, c)] -= f * v;
                }
                for c in 0..b.cols {
                    let v = b[(col, c)];
                    b[(r, c)] -= f * v;
                }
            }
        }
        for col in (0..n).rev() {
            let d = a[(col, col)];
            for c in 0..b.cols {
                let mut acc = b[(col, c)];
                for k in col + 1..n {
                    acc -= a[(col, k)] * b[(k, c)];
                }
                b[(col, c)] = acc / d;
            }
        }
        Some(b)
    }

    fn swap_rows(&mut self, i: usize, j: usize) {
        for c in 0..self.cols {
            self.data.swap(i * self.cols + c, j * self.cols + c);
        }
    }

    /// Matrix exponential by scaling and squaring with the degree-13 Padé
    /// approximant (Higham 2005).
    pub fn expm(&self) -> Self {
        const B: [f64; 14] = [
            64764752532480000.0,
            32382376266240000.0,
            7771770303897600.0,
            1187353796428800.0,
            129060195264000.0,
            10559470521600.0,
            670442572800.0,
            33522128640.0,
            1323241920.0,
            40840800.0,
            960960.0,
            16380.0,
            182.0,
            1.0,
        ];
        const THETA13: f64 = 5.371920351148152;

        let n = self.rows;
        assert_eq!(n, self.cols);
        if n == 0 {
            return self.clone();
        }
        let norm = self.norm1().as_f64();
        let squarings = if norm > THETA13 { (norm / THETA13).log2().ceil() as i32 } else { 0 };
        let a = self.scaled(T::of(2f64.powi(-squarings)));

        let b = |k: usize| T::of(B[k]);
        let id = Self::identity(n);
        let a2 = a.matmul(&a);
        let a4 = a2.matmul(&a2);
        let a6 = a4.matmul(&a2);

        let u_inner = a6.scaled(b(13)).add(&a4.scaled(b(11))).add(&a2.scaled(b(9)));
        let u_outer =
            a6.matmul(&u_inner).add(&a6.scaled(b(7))).add(&a4.scaled(b(5))).add(&a2.scaled(b(3))).add(&id.scaled(b(1)));
        let u = a.matmul(&u_outer);

        let v_inner = a6.scaled(b(12)).add(&a4.scaled(b(10))).add(&a2.scaled(b(8)));
        let v =
            a6.matmul(&v_inner).add(&a6.scaled(b(6))).add(&a4.scaled(b(4))).add(&a2.scaled(b(2))).add(&id.scaled(b(0)));

        let mut r = v.sub(&u).solve(&v.add(&u)).expect("Padé denominator is nonsingular");
        for _ in 0..squarings {
            r = r.matmul(&r);
        }
        r
    }
}

impl<T> Index<(usize, usize)> for Mat<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Mat<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}
