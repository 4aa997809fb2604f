//! Dense-band Cholesky factorization for the symmetric positive definite
//! nodal matrices produced by crossbar meshes.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Four-way unrolled dot product; the split accumulators let the compiler vectorize.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len() / 4 * 4;
    let (mut s0, mut s1, mut s2, mut s3) = (T::zero(), T::zero(), T::zero(), T::zero());
    for (x, y) in a[..n].chunks_exact(4).zip(b[..n].chunks_exact(4)) {
        s0 = s0 + x[0] * y[0];
        s1 = s1 + x[1] * y[1];
        s2 = s2 + x[2] * y[2];
        s3 = s3 + x[3] * y[3];
    }
    let mut s = (s0 + s1) + (s2 + s3);
    for (x, y) in a[n..].iter().zip(&b[n..]) {
        s = s + *x * *y;
    }
    s
}

/// Lower band of a symmetric matrix: entry `(i, j)` with `i - bw <= j <= i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedSymmetric<T> {
    n: usize,
    bw: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandedSymmetric<T> {
    pub fn zeros(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![T::zero(); n * (bw + 1)],
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(j <= i && i - j <= self.bw);
        i * (self.bw + 1) + (j + self.bw - i)
    }

    /// Entry of the full symmetric matrix.
    pub fn get(&self, i: usize, j: usize) -> T {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        if i - j > self.bw {
            T::zero()
        } else {
            self.data[self.offset(i, j)]
        }
    }

    /// Adds `value` to entry `(i, j)` (and implicitly `(j, i)`).
    pub fn add(&mut self, i: usize, j: usize, value: T) {
        let (i, j) = if i >= j { (i, j) } else { (j, i) };
        assert!(
            i - j <= self.bw,
            "entry ({i}, {j}) outside band {}",
            self.bw
        );
        let k = self.offset(i, j);
        self.data[k] = self.data[k] + value;
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = T::zero();
            for j in lo..=i {
                let a = row[j + self.bw - i];
                acc = acc + a * x[j];
                if j != i {
                    y[j] = y[j] + a * x[i];
                }
            }
            y[i] = y[i] + acc;
        }
        y
    }

    /// Row-major dense copy, mostly for inspection in tests.
    pub fn to_dense(&self) -> Vec<Vec<T>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }

    /// Factors `A = L Lᵀ`. Fails with [`Error::Singular`] on a non-positive pivot.
    pub fn cholesky(&self) -> Result<BandedCholesky<T>> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        let mut l = self.data.clone();
        let max_diag = (0..n)
            .map(|i| self.data[i * w + bw])
            .fold(T::zero(), |a, b| a.max(b));
        let pivot_floor = max_diag * T::epsilon() * T::of_usize(n.max(1));
        for j in 0..n {
            let jlo = j.saturating_sub(bw);
            // diagonal
            let rj = &l[j * w + (jlo + bw - j)..j * w + bw];
            let s = l[j * w + bw] - dot(rj, rj);
            if !(s > pivot_floor) {
                return Err(Error::Singular(format!(
                    "non-positive pivot {} at unknown {j} of {n}",
                    s.as_f64()
                )));
            }
            let d = s.sqrt();
            l[j * w + bw] = d;
            let iend = (j + bw + 1).min(n);
            for i in j + 1..iend {
                let ilo = i.saturating_sub(bw);
                let klo = ilo.max(jlo);
                let ri = i * w + bw - i;
                let rj = j * w + bw - j;
                let s = l[i * w + (j + bw - i)] - dot(&l[ri + klo..ri + j], &l[rj + klo..rj + j]);
                l[i * w + (j + bw - i)] = s / d;
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }
}

/// Banded Cholesky factor `L` of an SPD matrix.
#[derive(Debug, Clone)]
pub struct BandedCholesky<T> {
    n: usize,
    bw: usize,
    l: Vec<T>,
}

impl<T: Scalar> BandedCholesky<T> {
    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        assert_eq!(b.len(), self.n);
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        // forward: L y = b
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let base = i * w + bw - i;
            let s = b[i] - dot(&self.l[base + lo..base + i], &b[lo..i]);
            b[i] = s / self.l[i * w + bw];
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let xi = b[i] / self.l[i * w + bw];
            b[i] = xi;
            let lo = i.saturating_sub(bw);
            let base = i * w + bw - i;
            for k in lo..i {
                b[k] = b[k] - self.l[base + k] * xi;
            }
        }
    }
}
