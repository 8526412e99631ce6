//! Karhunen-Loève transform estimated from training supervectors.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct KltModel {
    pub mean: Vec<f64>,
    /// Row-major `dim x dim`; column `j` is the eigenvector for `eigenvalues[j]`.
    pub basis: Vec<f64>,
    /// Sorted descending, floored at a small positive value.
    pub eigenvalues: Vec<f64>,
    /// Fit with fewer than `dim + 1` vectors.
    pub rank_deficient: bool,
}

impl KltModel {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn basis_column(&self, j: usize) -> Vec<f64> {
        let d = self.dim();
        (0..d).map(|i| self.basis[i * d + j]).collect()
    }

    /// Coefficients `basis^T (v - mean)`.
    pub fn apply(&self, v: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if v.len() != d {
            return Err(Error::Shape(format!("KLT expects {d} values, got {}", v.len())));
        }
        let centered: Vec<f64> = v.iter().zip(&self.mean).map(|(a, m)| a - m).collect();
        let mut c = vec![0.0; d];
        for (i, x) in centered.iter().enumerate() {
            let row = &self.basis[i * d..(i + 1) * d];
            for (cj, b) in c.iter_mut().zip(row) {
                *cj += b * x;
            }
        }
        Ok(c)
    }

    /// `basis c + mean`.
    pub fn invert(&self, c: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        if c.len() != d {
            return Err(Error::Shape(format!("KLT expects {d} coefficients, got {}", c.len())));
        }
        Ok((0..d)
            .map(|i| {
                let row = &self.basis[i * d..(i + 1) * d];
                self.mean[i] + row.iter().zip(c).map(|(b, x)| b * x).sum::<f64>()
            })
            .collect())
    }

    /// Fraction of total variance held by the first `k` coefficients.
    pub fn energy_captured(&self, k: usize) -> f64 {
        let total: f64 = self.eigenvalues.iter().sum();
        if total <= 0.0 {
            return 1.0;
        }
        self.eigenvalues[..k.min(self.eigenvalues.len())].iter().sum::<f64>() / total
    }
}

/// Sample mean and (biased, 1/n) covariance, row-major.
pub fn mean_and_covariance(data: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let d = data[0].len();
    let n = data.len() as f64;
    let mut mean = vec![0.0; d];
    for v in data {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut cov = vec![0.0; d * d];
    let mut centered = vec![0.0; d];
    for v in data {
        for ((c, x), m) in centered.iter_mut().zip(v).zip(&mean) {
            *c = x - m;
        }
        for i in 0..d {
            let ci = centered[i];
            let row = &mut cov[i * d..(i + 1) * d];
            for (r, cj) in row.iter_mut().zip(&centered) {
                *r += ci * cj;
            }
        }
    }
    cov.iter_mut().for_each(|c| *c /= n);
    (mean, cov)
}

/// Fits the KLT: eigenvectors of the sample covariance, sorted by descending
/// eigenvalue, each column signed so its largest-magnitude entry is positive.
pub fn fit_klt(data: &[Vec<f64>]) -> Result<KltModel> {
    if data.is_empty() {
        return Err(Error::Config("cannot fit a KLT on no data".into()));
    }
    let d = data[0].len();
    if data.iter().any(|v| v.len() != d) {
        return Err(Error::Shape("supervectors have inconsistent dimensions".into()));
    }
    if data.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite value in KLT training data".into()));
    }
    let rank_deficient = data.len() < d + 1;
    if rank_deficient {
        log::warn!(
            "fitting a {d}-dim KLT on {} vectors: covariance is rank deficient",
            data.len()
        );
    }
    let (mean, cov) = mean_and_covariance(data);
    let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
    let floor = 1e-12 * (trace / d as f64).max(f64::MIN_POSITIVE);

    let eig = SymmetricEigen::new(DMatrix::from_row_slice(d, d, &cov));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let mut basis = vec![0.0; d * d];
    let mut eigenvalues = Vec::with_capacity(d);
    for (j, &src) in order.iter().enumerate() {
        let col = eig.eigenvectors.column(src);
        let pivot = col.iter().copied().max_by(|a, b| a.abs().total_cmp(&b.abs())).unwrap_or(1.0);
        let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            basis[i * d + j] = sign * col[i];
        }
        eigenvalues.push(eig.eigenvalues[src].max(floor));
    }
    Ok(KltModel {
        mean,
        basis,
        eigenvalues,
        rank_deficient,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};

    fn gaussian(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        // correlated: x = A z with a fixed lower-triangular mixing
        (0..n)
            .map(|_| {
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
                (0..d)
                    .map(|i| (0..=i).map(|k| z[k] / (1.0 + (i - k) as f64)).sum::<f64>() + i as f64)
                    .collect()
            })
            .collect()
    }

    #[test]
    fn orthonormal_sorted_and_signed() {
        let m = fit_klt(&gaussian(500, 12, 1)).unwrap();
        let d = m.dim();
        for a in 0..d {
            for b in 0..d {
                let dot: f64 = (0..d).map(|i| m.basis[i * d + a] * m.basis[i * d + b]).sum();
                let want = if a == b { 1.0 } else { 0.0 };
                assert!((dot - want).abs() < 1e-8);
            }
            let col = m.basis_column(a);
            let pivot = col.iter().copied().max_by(|x, y| x.abs().total_cmp(&y.abs())).unwrap();
            assert!(pivot > 0.0);
        }
        assert!(m.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
        assert!(!m.rank_deficient);
    }

    #[test]
    fn isotropic_data_has_unit_eigenvalues() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let data: Vec<Vec<f64>> = (0..20000)
            .map(|_| (0..4).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let m = fit_klt(&data).unwrap();
        for l in &m.eigenvalues {
            assert!((l - 1.0).abs() < 0.05, "{l}");
        }
    }

    #[test]
    fn training_data_is_decorrelated() {
        let data = gaussian(800, 16, 3);
        let m = fit_klt(&data).unwrap();
        let coeffs: Vec<Vec<f64>> = data.iter().map(|v| m.apply(v).unwrap()).collect();
        let (_, cov) = mean_and_covariance(&coeffs);
        let d = m.dim();
        let trace: f64 = (0..d).map(|i| cov[i * d + i]).sum();
        for i in 0..d {
            for j in 0..d {
                if i != j {
                    assert!(cov[i * d + j].abs() <= 1e-6 * trace / d as f64);
                }
            }
        }
    }

    #[test]
    fn duplicated_data_gives_same_model() {
        let data = gaussian(300, 8, 4);
        let a = fit_klt(&data).unwrap();
        let doubled: Vec<Vec<f64>> = data.iter().chain(&data).cloned().collect();
        let b = fit_klt(&doubled).unwrap();
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-10);
        assert!(close(&a.mean, &b.mean));
        assert!(close(&a.basis, &b.basis));
        assert!(close(&a.eigenvalues, &b.eigenvalues));
    }

    #[test]
    fn mean_maps_to_zero_and_round_trips() {
        let data = gaussian(200, 10, 5);
        let m = fit_klt(&data).unwrap();
        assert!(m.apply(&m.mean).unwrap().iter().all(|c| c.abs() < 1e-12));
        for v in gaussian(20, 10, 6) {
            let c = m.apply(&v).unwrap();
            let back = m.invert(&c).unwrap();
            assert!(v.iter().zip(&back).all(|(a, b)| (a - b).abs() <= 1e-9));
            let norm_c = c.iter().map(|x| x * x).sum::<f64>().sqrt();
            let norm_v = v.iter().zip(&m.mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!((norm_c - norm_v).abs() <= 1e-9);
        }
        assert!(matches!(m.apply(&[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn few_samples_flag_rank_deficiency() {
        let m = fit_klt(&gaussian(5, 10, 7)).unwrap();
        assert!(m.rank_deficient);
        assert!(m.eigenvalues.iter().all(|&l| l > 0.0));
    }
}
