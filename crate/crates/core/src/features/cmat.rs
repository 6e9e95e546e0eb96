use num_complex::Complex64;
use serde::{Deserialize, Serialize};

/// Square complex matrix, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMat {
    pub n: usize,
    pub data: Vec<Complex64>,
}

impl CMat {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![Complex64::new(0.0, 0.0); n * n] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.set(i, i, Complex64::new(1.0, 0.0));
        }
        m
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> Complex64 {
        self.data[r * self.n + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: Complex64) {
        self.data[r * self.n + c] = v;
    }

    pub fn conj_transpose(&self) -> Self {
        let mut m = Self::zeros(self.n);
        for r in 0..self.n {
            for c in 0..self.n {
                m.set(c, r, self.get(r, c).conj());
            }
        }
        m
    }

    pub fn conj(&self) -> Self {
        Self { n: self.n, data: self.data.iter().map(|z| z.conj()).collect() }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let n = self.n;
        let mut m = Self::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                if a == Complex64::new(0.0, 0.0) {
                    continue;
                }
                for j in 0..n {
                    m.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        m
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.data.iter().zip(&other.data).fold(0.0, |m, (a, b)| m.max((a - b).norm()))
    }

    /// Largest `|A − A†|` entry.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for r in 0..self.n {
            for c in r..self.n {
                worst = worst.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    /// `V diag(values) V†`.
    pub fn from_spectrum(values: &[f64], vectors: &CMat) -> Self {
        let n = vectors.n;
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                let mut s = Complex64::new(0.0, 0.0);
                for (k, &lam) in values.iter().enumerate() {
                    s += vectors.get(i, k) * vectors.get(j, k).conj() * lam;
                }
                m.set(i, j, s);
            }
        }
        m
    }
}
