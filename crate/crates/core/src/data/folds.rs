//! Deterministic cross-fitting fold assignment.

use crate::rng::stream_rng;
use crate::{Error, Result};
use rand::seq::SliceRandom;

/// RNG stream salt so fold draws never collide with other consumers of the
/// same base seed.
const STREAM_FOLDS: u64 = 0x464f_4c44;

/// A partition of `0..n` into `k` folds of near-equal size (differing by at
/// most one). Fully determined by `(n, k, seed)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    pub k: usize,
    pub seed: u64,
    /// `assignment[i]` is the fold id (in `0..k`) of observation `i`.
    pub assignment: Vec<usize>,
}

impl FoldPartition {
    pub fn n(&self) -> usize {
        self.assignment.len()
    }

    /// Indices in fold `j`, ascending.
    pub fn fold(&self, j: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f == j)
            .map(|(i, _)| i)
            .collect()
    }

    /// Indices outside fold `j`, ascending.
    pub fn complement(&self, j: usize) -> Vec<usize> {
        self.assignment
            .iter()
            .enumerate()
            .filter(|(_, &f)| f != j)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.k];
        for &f in &self.assignment {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Shuffles `0..n` with a stream derived from `seed` and cuts the permutation
/// into `k` contiguous blocks; the first `n mod k` folds get the extra
/// observation.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldPartition> {
    if k < 2 || k > n {
        return Err(Error::Parameter(format!(
            "fold count must satisfy 2 <= k <= n, got k={k}, n={n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut rng = stream_rng(seed, STREAM_FOLDS);
    perm.shuffle(&mut rng);
    let base = n / k;
    let rem = n % k;
    let mut assignment = vec![0usize; n];
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < rem);
        for &i in &perm[pos..pos + size] {
            assignment[i] = fold;
        }
        pos += size;
    }
    Ok(FoldPartition {
        k,
        seed,
        assignment,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes_differ_by_at_most_one() {
        let fp = make_folds(103, 5, 7).unwrap();
        let sizes = fp.sizes();
        assert_eq!(sizes.iter().sum::<usize>(), 103);
        let lo = *sizes.iter().min().unwrap();
        let hi = *sizes.iter().max().unwrap();
        assert!(hi - lo <= 1, "sizes {sizes:?}");
    }

    #[test]
    fn folds_partition_everything() {
        let fp = make_folds(50, 3, 11).unwrap();
        let mut seen = vec![false; 50];
        for j in 0..3 {
            for i in fp.fold(j) {
                assert!(!seen[i]);
                seen[i] = true;
            }
        }
        assert!(seen.iter().all(|&s| s));
        let comp = fp.complement(0);
        assert_eq!(comp.len(), 50 - fp.fold(0).len());
    }

    #[test]
    fn reconstruction_is_bit_identical() {
        let a = make_folds(200, 4, 42).unwrap();
        let b = make_folds(200, 4, 42).unwrap();
        assert_eq!(a, b);
        let c = make_folds(200, 4, 43).unwrap();
        assert_ne!(a.assignment, c.assignment);
    }

    #[test]
    fn bad_fold_counts_rejected() {
        assert!(make_folds(10, 1, 0).is_err());
        assert!(make_folds(10, 11, 0).is_err());
        assert!(make_folds(10, 10, 0).is_ok());
    }
}
