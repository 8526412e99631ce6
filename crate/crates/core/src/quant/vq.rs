//! Split vector quantization with per-split k-means codebooks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct KMeansOptions {
    pub max_iters: usize,
    pub rel_tol: f64,
    pub seed: u64,
}

impl Default for KMeansOptions {
    fn default() -> Self {
        Self {
            max_iters: 50,
            rel_tol: 1e-6,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KMeansResult {
    /// `k * dim`, row-major.
    pub centroids: Vec<f64>,
    /// Mean squared error after each assignment step.
    pub distortion_history: Vec<f64>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the nearest centroid; ties resolve to the lowest index.
pub fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (k, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(c, x);
        if d < best.1 {
            best = (k, d);
        }
    }
    best
}

/// Lloyd's k-means with k-means++ seeding.
pub fn kmeans(points: &[Vec<f64>], k: usize, opts: &KMeansOptions) -> Result<KMeansResult> {
    if k == 0 || points.len() < k {
        return Err(Error::Config(format!(
            "k-means needs at least {k} points, got {}",
            points.len()
        )));
    }
    let dim = points[0].len();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);

    let mut centroids = Vec::with_capacity(k * dim);
    centroids.extend_from_slice(&points[rng.gen_range(0..points.len())]);
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[..dim])).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.gen::<f64>() * total;
            let mut idx = points.len() - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.gen_range(0..points.len())
        };
        let start = centroids.len();
        centroids.extend_from_slice(&points[pick]);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &centroids[start..]));
        }
    }

    let n = points.len() as f64;
    let mut assign = vec![0usize; points.len()];
    let mut dists = vec![0.0; points.len()];
    let mut history = Vec::new();
    for _ in 0..opts.max_iters {
        for (i, p) in points.iter().enumerate() {
            let (a, d) = nearest(&centroids, dim, p);
            assign[i] = a;
            dists[i] = d;
        }
        let distortion = dists.iter().sum::<f64>() / n;
        let converged = history
            .last()
            .map_or(false, |&prev: &f64| (prev - distortion).abs() <= opts.rel_tol * prev.max(f64::MIN_POSITIVE));
        history.push(distortion);
        if converged || distortion == 0.0 {
            break;
        }

        let mut sums = vec![0.0; k * dim];
        let mut counts = vec![0usize; k];
        for (p, &a) in points.iter().zip(&assign) {
            counts[a] += 1;
            for (s, x) in sums[a * dim..(a + 1) * dim].iter_mut().zip(p) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for j in 0..dim {
                    centroids[c * dim + j] = sums[c * dim + j] / counts[c] as f64;
                }
            }
        }
        // empty clusters move to the currently worst-served point
        for c in 0..k {
            if counts[c] == 0 {
                let far = (0..points.len())
                    .max_by(|&a, &b| dists[a].total_cmp(&dists[b]))
                    .unwrap();
                centroids[c * dim..(c + 1) * dim].copy_from_slice(&points[far]);
                dists[far] = 0.0;
            }
        }
    }
    Ok(KMeansResult {
        centroids,
        distortion_history: history,
    })
}

/// One codebook per coefficient split. A split with 0 bits has a single
/// implicit centroid at the origin and consumes no bits.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitVqModel {
    pub split_dim: usize,
    pub allocations: Vec<usize>,
    /// Flattened `2^bits x split_len` centroids per split (empty for 0-bit splits).
    pub codebooks: Vec<Vec<f64>>,
    /// Total coefficient dimension.
    pub dim: usize,
}

impl SplitVqModel {
    pub fn bits_per_vector(&self) -> usize {
        self.allocations.iter().sum()
    }

    pub fn split_range(&self, k: usize) -> std::ops::Range<usize> {
        let start = k * self.split_dim;
        start..(start + self.split_dim).min(self.dim)
    }

    /// Nearest-centroid index for every split.
    pub fn quantize(&self, coeffs: &[f64]) -> Vec<u32> {
        (0..self.allocations.len())
            .map(|k| {
                if self.allocations[k] == 0 {
                    return 0;
                }
                let r = self.split_range(k);
                nearest(&self.codebooks[k], r.len(), &coeffs[r]).0 as u32
            })
            .collect()
    }

    pub fn reconstruct(&self, indices: &[u32]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        for (k, &idx) in indices.iter().enumerate() {
            if self.allocations[k] == 0 {
                continue;
            }
            let r = self.split_range(k);
            let len = r.len();
            let idx = idx as usize;
            out[r].copy_from_slice(&self.codebooks[k][idx * len..(idx + 1) * len]);
        }
        out
    }
}

/// Trains one k-means codebook per split. Split `k` is seeded with `seed + k`.
pub fn fit_codebooks(
    coefficients: &[Vec<f64>],
    allocations: &[usize],
    split_dim: usize,
    opts: &KMeansOptions,
) -> Result<SplitVqModel> {
    let dim = coefficients.first().map_or(0, |c| c.len());
    let mut model = SplitVqModel {
        split_dim,
        allocations: allocations.to_vec(),
        codebooks: Vec::with_capacity(allocations.len()),
        dim,
    };
    for (k, &bits) in allocations.iter().enumerate() {
        if bits == 0 {
            model.codebooks.push(Vec::new());
            continue;
        }
        let r = model.split_range(k);
        let pts: Vec<Vec<f64>> = coefficients.iter().map(|c| c[r.clone()].to_vec()).collect();
        let split_opts = KMeansOptions {
            seed: opts.seed.wrapping_add(k as u64),
            ..*opts
        };
        model.codebooks.push(kmeans(&pts, 1 << bits, &split_opts)?.centroids);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn cloud(n: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let a: f64 = StandardNormal.sample(&mut rng);
                let b: f64 = StandardNormal.sample(&mut rng);
                vec![3.0 * a, a + 0.5 * b]
            })
            .collect()
    }

    #[test]
    fn two_clusters() {
        let mut pts = Vec::new();
        for _ in 0..10 {
            pts.push(vec![-1.0, 0.0]);
            pts.push(vec![1.0, 0.0]);
        }
        let r = kmeans(&pts, 2, &KMeansOptions::default()).unwrap();
        let mut c: Vec<(f64, f64)> = r.centroids.chunks(2).map(|c| (c[0], c[1])).collect();
        c.sort_by(|a, b| a.0.total_cmp(&b.0));
        assert!((c[0].0 + 1.0).abs() < 1e-12 && c[0].1.abs() < 1e-12);
        assert!((c[1].0 - 1.0).abs() < 1e-12 && c[1].1.abs() < 1e-12);
    }

    #[test]
    fn distortion_never_increases() {
        let r = kmeans(&cloud(2000, 1), 16, &KMeansOptions::default()).unwrap();
        assert!(r.distortion_history.len() > 2);
        for w in r.distortion_history.windows(2) {
            assert!(w[1] <= w[0] * (1.0 + 1e-12), "{:?}", w);
        }
    }

    #[test]
    fn beats_random_codebook_on_held_out() {
        let train = cloud(3000, 2);
        let test = cloud(1000, 3);
        let trained = kmeans(&train, 16, &KMeansOptions::default()).unwrap().centroids;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let random: Vec<f64> = (0..16)
            .flat_map(|_| train[rng.gen_range(0..train.len())].clone())
            .collect();
        let mse = |cb: &[f64]| test.iter().map(|p| nearest(cb, 2, p).1).sum::<f64>() / test.len() as f64;
        assert!(mse(&trained) <= mse(&random));
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            kmeans(&cloud(3, 4), 4, &KMeansOptions::default()),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seeded_fit_is_deterministic() {
        let pts = cloud(500, 5);
        let a = kmeans(&pts, 8, &KMeansOptions::default()).unwrap();
        let b = kmeans(&pts, 8, &KMeansOptions::default()).unwrap();
        assert_eq!(a.centroids, b.centroids);
    }

    #[test]
    fn zero_bit_split_decodes_to_zero() {
        let coeffs: Vec<Vec<f64>> = cloud(100, 6)
            .into_iter()
            .map(|p| vec![p[0], p[1], 5.0, 5.0])
            .collect();
        let m = fit_codebooks(&coeffs, &[3, 0], 2, &KMeansOptions::default()).unwrap();
        let idx = m.quantize(&coeffs[0]);
        assert_eq!(idx[1], 0);
        let rec = m.reconstruct(&idx);
        assert_eq!(&rec[2..], &[0.0, 0.0]);
    }
}
