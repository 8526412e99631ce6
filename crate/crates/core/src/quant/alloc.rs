use crate::error::{Error, Result};

/// Greedy bit allocation over consecutive `split_dim`-sized coefficient groups.
///
/// Each bit goes to the split with the largest `eigen_sum / 4^bits`, ties to
/// the lower index, never exceeding `max_bits_per_split`.
pub fn allocate_bits(
    eigenvalues: &[f64],
    split_dim: usize,
    total_bits: usize,
    max_bits_per_split: usize,
) -> Result<Vec<usize>> {
    if split_dim == 0 {
        return Err(Error::Config("split_dim must be positive".into()));
    }
    let sums: Vec<f64> = eigenvalues.chunks(split_dim).map(|c| c.iter().sum()).collect();
    let n_splits = sums.len();
    if total_bits > n_splits * max_bits_per_split {
        return Err(Error::Config(format!(
            "{total_bits} bits exceed {n_splits} splits x {max_bits_per_split} bits"
        )));
    }
    let mut bits = vec![0usize; n_splits];
    for _ in 0..total_bits {
        let mut best: Option<(usize, f64)> = None;
        for (k, (&s, &b)) in sums.iter().zip(&bits).enumerate() {
            if b >= max_bits_per_split {
                continue;
            }
            let priority = s / 4f64.powi(b as i32);
            if best.map_or(true, |(_, p)| priority > p) {
                best = Some((k, priority));
            }
        }
        // capacity check above guarantees a candidate
        bits[best.expect("no split can take another bit").0] += 1;
    }
    Ok(bits)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_eigenvalues_uniform() {
        let bits = allocate_bits(&[1.0; 8], 2, 12, 8).unwrap();
        assert_eq!(bits, vec![3, 3, 3, 3]);
    }

    #[test]
    fn dominant_split_takes_everything() {
        let bits = allocate_bits(&[1000.0, 900.0, 1.0, 1.0, 0.5, 0.5], 2, 3, 8).unwrap();
        assert_eq!(bits, vec![3, 0, 0]);
    }

    #[test]
    fn full_budget() {
        let eig: Vec<f64> = (0..320).map(|i| (-(i as f64) / 15.0).exp()).collect();
        let bits = allocate_bits(&eig, 2, 120, 8).unwrap();
        assert_eq!(bits.len(), 160);
        assert_eq!(bits.iter().sum::<usize>(), 120);
        assert!(bits.iter().filter(|&&b| b == 0).count() > 80);
        assert!(bits.iter().all(|&b| b <= 8));
    }

    #[test]
    fn over_capacity_is_error() {
        assert!(allocate_bits(&[1.0; 4], 2, 17, 8).is_err());
    }

    #[test]
    fn ties_go_to_lower_index() {
        assert_eq!(allocate_bits(&[1.0; 6], 2, 1, 8).unwrap(), vec![1, 0, 0]);
    }
}
