//! Cyclic Jacobi diagonalization of complex Hermitian matrices.
//!
//! Each rotation first removes the phase of the pivot `a_pq` with a diagonal unitary, then
//! applies the classic real symmetric rotation to the resulting 2×2 block. Sweeps repeat until
//! the largest off-diagonal magnitude drops below [`STOP_TOL`].

use num_complex::Complex64;

use super::{CMat, FeatureError};

/// Off-diagonal magnitude at which iteration stops.
pub const STOP_TOL: f64 = 1e-10;
/// Largest accepted `|A − A†|` entry on input.
pub const HERMITIAN_TOL: f64 = 1e-10;

fn max_off_diagonal(a: &CMat) -> f64 {
    let mut m = 0.0f64;
    for p in 0..a.n {
        for q in p + 1..a.n {
            m = m.max(a.get(p, q).norm());
        }
    }
    m
}

/// Returns eigenvalues in ascending order and the matching orthonormal eigenvectors as columns.
pub fn hermitian_eigendecomposition(l: &CMat) -> Result<(Vec<f64>, CMat), FeatureError> {
    let defect = l.hermitian_defect();
    if defect > HERMITIAN_TOL {
        return Err(FeatureError::NotHermitian { defect });
    }
    let n = l.n;
    let mut a = l.clone();
    for i in 0..n {
        a.set(i, i, Complex64::new(a.get(i, i).re, 0.0));
    }
    let mut v = CMat::identity(n);
    let max_sweeps = (100 * n * n).max(1);

    let mut sweeps = 0;
    loop {
        let off = max_off_diagonal(&a);
        if off <= STOP_TOL {
            break;
        }
        if sweeps == max_sweeps {
            return Err(FeatureError::ConvergenceFailure { sweeps, off_diagonal: off });
        }
        sweeps += 1;
        for p in 0..n {
            for q in p + 1..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a.get(i, i).re.total_cmp(&a.get(j, j).re));
    let values = order.iter().map(|&i| a.get(i, i).re).collect();
    let mut vectors = CMat::zeros(n);
    for (new, &old) in order.iter().enumerate() {
        for r in 0..n {
            vectors.set(r, new, v.get(r, old));
        }
    }
    Ok((values, vectors))
}

fn rotate(a: &mut CMat, v: &mut CMat, p: usize, q: usize) {
    let apq = a.get(p, q);
    let r = apq.norm();
    if r == 0.0 {
        return;
    }
    let phase = apq / r; // e^{iφ}
    let phase_c = phase.conj();
    let (app, aqq) = (a.get(p, p).re, a.get(q, q).re);
    let theta = (aqq - app) / (2.0 * r);
    let t = if theta >= 0.0 {
        1.0 / (theta + (theta * theta + 1.0).sqrt())
    } else {
        -1.0 / (-theta + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.n;

    // columns: A ← A U with U = diag(1, e^{-iφ}) · R
    for k in 0..n {
        let (akp, akq) = (a.get(k, p), a.get(k, q));
        a.set(k, p, akp * c - akq * phase_c * s);
        a.set(k, q, akp * s + akq * phase_c * c);
        let (vkp, vkq) = (v.get(k, p), v.get(k, q));
        v.set(k, p, vkp * c - vkq * phase_c * s);
        v.set(k, q, vkp * s + vkq * phase_c * c);
    }
    // rows: A ← U† A
    for k in 0..n {
        let (apk, aqk) = (a.get(p, k), a.get(q, k));
        a.set(p, k, apk * c - aqk * phase * s);
        a.set(q, k, apk * s + aqk * phase * c);
    }
    a.set(p, q, Complex64::new(0.0, 0.0));
    a.set(q, p, Complex64::new(0.0, 0.0));
    a.set(p, p, Complex64::new(a.get(p, p).re, 0.0));
    a.set(q, q, Complex64::new(a.get(q, q).re, 0.0));
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn orthonormality_defect(v: &CMat) -> f64 {
        v.conj_transpose().matmul(v).max_abs_diff(&CMat::identity(v.n))
    }

    #[test]
    fn identity_matrix() {
        let (vals, vecs) = hermitian_eigendecomposition(&CMat::identity(4)).unwrap();
        assert_eq!(vals, vec![1.0; 4]);
        assert!(CMat::from_spectrum(&vals, &vecs).max_abs_diff(&CMat::identity(4)) < 1e-12);
    }

    #[test]
    fn two_by_two_analytic() {
        let mut l = CMat::identity(2);
        l.set(0, 1, c(0.0, -1.0));
        l.set(1, 0, c(0.0, 1.0));
        let (vals, vecs) = hermitian_eigendecomposition(&l).unwrap();
        assert!(vals[0].abs() < 1e-14 && (vals[1] - 2.0).abs() < 1e-14);
        assert!(CMat::from_spectrum(&vals, &vecs).max_abs_diff(&l) < 1e-14);
        assert!(orthonormality_defect(&vecs) < 1e-14);
    }

    #[test]
    fn random_hermitian_reconstructs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1, 3, 8, 17] {
            let mut h = CMat::zeros(n);
            for i in 0..n {
                h.set(i, i, c(rng.random_range(-2.0..2.0), 0.0));
                for j in i + 1..n {
                    let z = c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    h.set(i, j, z);
                    h.set(j, i, z.conj());
                }
            }
            let (vals, vecs) = hermitian_eigendecomposition(&h).unwrap();
            assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            assert!(CMat::from_spectrum(&vals, &vecs).max_abs_diff(&h) < 1e-8, "n={n}");
            assert!(orthonormality_defect(&vecs) < 1e-8);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let mut m = CMat::identity(2);
        m.set(0, 1, c(1.0, 0.0));
        assert!(matches!(hermitian_eigendecomposition(&m), Err(FeatureError::NotHermitian { .. })));
    }
}
