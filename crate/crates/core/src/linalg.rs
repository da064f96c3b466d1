//! Dense symmetric linear algebra in `f64`: cyclic Jacobi eigendecomposition
//! plus the small helpers the analysis and evaluation paths need. Sizes here
//! are feature dimensions (tens to a few hundred), where Jacobi is exact
//! enough and fully deterministic.

/// Column-major-free dense symmetric matrix operations work on row-major
/// `&[f64]` with an explicit dimension.
pub fn mat_mul(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let av = a[i * n + k];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += av * b[k * n + j];
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], n: usize) -> Vec<f64> {
    let mut t = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            t[j * n + i] = a[i * n + j];
        }
    }
    t
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
/// Returns eigenvalues (descending) and matching eigenvectors as rows.
pub fn sym_eigen(mat: &[f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    assert_eq!(mat.len(), n * n);
    let mut a = mat.to_vec();
    // v accumulates rotations; rows of the returned matrix are eigenvectors
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let max_sweeps = 64;
    for _ in 0..max_sweeps {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[i * n + j] * a[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + frobenius(&a)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // rotate rows/cols p and q
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vpk = v[p * n + k];
                    let vqk = v[q * n + k];
                    v[p * n + k] = c * vpk - s * vqk;
                    v[q * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[j * n + j].partial_cmp(&a[i * n + i]).unwrap_or(std::cmp::Ordering::Equal)
    });
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (row, &i) in order.iter().enumerate() {
        vectors[row * n..(row + 1) * n].copy_from_slice(&v[i * n..(i + 1) * n]);
    }
    (eigenvalues, vectors)
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Symmetric positive-semidefinite square root via eigendecomposition.
/// Eigenvalues below zero are clamped; returns the largest clamp applied.
pub fn sym_sqrt(mat: &[f64], n: usize) -> (Vec<f64>, f64) {
    let (vals, vecs) = sym_eigen(mat, n);
    let mut worst = 0.0f64;
    let mut out = vec![0.0; n * n];
    for (r, &lam) in vals.iter().enumerate() {
        let clamped = if lam < 0.0 {
            worst = worst.min(lam);
            0.0
        } else {
            lam
        };
        let s = clamped.sqrt();
        let row = &vecs[r * n..(r + 1) * n];
        for i in 0..n {
            let vi = row[i] * s;
            if vi == 0.0 {
                continue;
            }
            for j in 0..n {
                out[i * n + j] += vi * row[j];
            }
        }
    }
    (out, worst)
}

/// Sample mean of row vectors.
pub fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let d = rows[0].len();
    let mut mu = vec![0.0; d];
    for r in rows {
        for (m, &x) in mu.iter_mut().zip(r.iter()) {
            *m += x;
        }
    }
    let n = rows.len() as f64;
    mu.iter_mut().for_each(|m| *m /= n);
    mu
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Cosine similarity; errors are the caller's concern, zero norms yield None.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some(dot(a, b) / (na * nb))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_symmetric(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut a = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v: f64 = StandardNormal.sample(rng);
                a[i * n + j] = v;
                a[j * n + i] = v;
            }
        }
        a
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for n in [2usize, 5, 12] {
            let a = random_symmetric(n, &mut rng);
            let (vals, vecs) = sym_eigen(&a, n);
            // A = Vᵀ diag(vals) V with eigenvectors as rows of V
            let mut recon = vec![0.0; n * n];
            for r in 0..n {
                for i in 0..n {
                    for j in 0..n {
                        recon[i * n + j] += vals[r] * vecs[r * n + i] * vecs[r * n + j];
                    }
                }
            }
            for (x, y) in a.iter().zip(recon.iter()) {
                assert!((x - y).abs() < 1e-9, "n={n}");
            }
            // descending order
            for w in vals.windows(2) {
                assert!(w[0] >= w[1] - 1e-12);
            }
        }
    }

    #[test]
    fn eigen_known_2x2() {
        // [[2,1],[1,2]] has eigenvalues 3 and 1
        let a = [2.0, 1.0, 1.0, 2.0];
        let (vals, _) = sym_eigen(&a, 2);
        assert!((vals[0] - 3.0).abs() < 1e-12);
        assert!((vals[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sqrt_squares_back() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let n = 6;
        // make a PSD matrix B Bᵀ
        let b = random_symmetric(n, &mut rng);
        let psd = mat_mul(&b, &transpose(&b, n), n);
        let (s, worst) = sym_sqrt(&psd, n);
        assert!(worst > -1e-9);
        let s2 = mat_mul(&s, &s, n);
        for (x, y) in psd.iter().zip(s2.iter()) {
            assert!((x - y).abs() < 1e-8);
        }
    }
}
