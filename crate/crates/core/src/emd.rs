//! Exact earth mover's distance between equal-size point batches.
//!
//! The transport plan between two uniform empirical measures with the same
//! number of atoms is a permutation, so the distance reduces to a linear
//! assignment problem over Euclidean costs. Values are reported as the mean
//! cost per point (total / n), not the total.

use itertools::Itertools;

use crate::data::Batch2D;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest size accepted by [`brute_force_emd`].
pub const BRUTE_FORCE_MAX: usize = 9;

/// Square matrix of finite, nonnegative costs.
#[derive(Clone, Debug, PartialEq)]
pub struct CostMatrix<T> {
    n: usize,
    costs: Vec<T>,
}

impl<T: Scalar> CostMatrix<T> {
    pub fn new(n: usize, costs: Vec<T>) -> Result<Self> {
        if costs.len() != n * n {
            return Err(Error::invalid(format!("cost matrix of size {n} needs {} entries, got {}", n * n, costs.len())));
        }
        if let Some(c) = costs.iter().find(|c| !c.is_finite() || **c < T::zero()) {
            return Err(Error::invalid(format!("costs must be finite and nonnegative, found {c}")));
        }
        Ok(CostMatrix { n, costs })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("cost matrix must be square"));
        }
        Self::new(n, rows.iter().flatten().copied().collect())
    }

    /// `costs[i][j] = |a_i - b_j|`.
    pub fn euclidean(a: &Batch2D<T>, b: &Batch2D<T>) -> Result<Self> {
        if a.len() != b.len() {
            return Err(Error::invalid(format!("batches differ in size: {} vs {}", a.len(), b.len())));
        }
        let mut costs = Vec::with_capacity(a.len() * b.len());
        for p in a.iter() {
            for q in b.iter() {
                costs.push((p[0] - q[0]).hypot(p[1] - q[1]));
            }
        }
        Self::new(a.len(), costs)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        self.costs[i * self.n + j]
    }

    /// `sum_i costs[i][perm[i]]`, accumulated in row order.
    pub fn cost_of(&self, perm: &[usize]) -> T {
        perm.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Assignment<T> {
    /// Row `i` is matched to column `perm[i]`.
    pub perm: Vec<usize>,
    pub total_cost: T,
}

/// Minimum-cost perfect matching, O(n^3).
///
/// Shortest augmenting paths with row/column potentials: rows are inserted one
/// at a time and each insertion grows a Dijkstra-like tree over reduced costs.
pub fn hungarian<T: Scalar>(costs: &CostMatrix<T>) -> Assignment<T> {
    let n = costs.n;
    let inf = T::infinity();
    // 1-based; index 0 of `row_of` is the virtual root of the augmenting tree.
    let mut u = vec![T::zero(); n + 1];
    let mut v = vec![T::zero(); n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut min_slack = vec![inf; n + 1];
    let mut used = vec![false; n + 1];

    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        min_slack.fill(inf);
        used.fill(false);
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = costs.get(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < min_slack[j] {
                    min_slack[j] = cur;
                    way[j] = j0;
                }
                if min_slack[j] < delta {
                    delta = min_slack[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[row_of[j] - 1] = j - 1;
    }
    let total_cost = costs.cost_of(&perm);
    Assignment { perm, total_cost }
}

/// Mean per-point transport cost of the optimal matching between `a` and `b`.
pub fn emd<T: Scalar>(a: &Batch2D<T>, b: &Batch2D<T>) -> Result<T> {
    let costs = CostMatrix::euclidean(a, b)?;
    Ok(hungarian(&costs).total_cost / T::lit(a.len() as f64))
}

/// [`emd`] by exhaustive search over all `n!` matchings; `n <= 9`.
pub fn brute_force_emd<T: Scalar>(a: &Batch2D<T>, b: &Batch2D<T>) -> Result<T> {
    if a.len() > BRUTE_FORCE_MAX {
        return Err(Error::invalid(format!(
            "brute force is limited to {BRUTE_FORCE_MAX} points, got {}",
            a.len()
        )));
    }
    let costs = CostMatrix::euclidean(a, b)?;
    Ok(brute_force_assignment(&costs).total_cost / T::lit(a.len() as f64))
}

pub fn brute_force_assignment<T: Scalar>(costs: &CostMatrix<T>) -> Assignment<T> {
    let n = costs.n();
    (0..n)
        .permutations(n)
        .map(|perm| {
            let total_cost = costs.cost_of(&perm);
            Assignment { perm, total_cost }
        })
        .min_by(|x, y| x.total_cost.partial_cmp(&y.total_cost).expect("finite costs"))
        .unwrap_or(Assignment { perm: Vec::new(), total_cost: T::zero() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Rng;

    fn batch(points: &[[f64; 2]]) -> Batch2D<f64> {
        Batch2D::from_points(points).unwrap()
    }

    #[test]
    fn identity_favoring() {
        let c = CostMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.perm, vec![0, 1]);
        assert_eq!(a.total_cost, 0.0);
    }

    #[test]
    fn anti_diagonal_wins() {
        let c = CostMatrix::from_rows(&[vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap();
        let a = hungarian(&c);
        assert_eq!(a.perm, vec![1, 0]);
        assert_eq!(a.total_cost, 3.0);
    }

    #[test]
    fn matches_all_permutations_on_6x6() {
        let mut rng = Rng::new(42);
        for _ in 0..50 {
            let costs: Vec<f64> = (0..36).map(|_| rng.uniform() * 10.0).collect();
            let c = CostMatrix::new(6, costs).unwrap();
            let fast = hungarian(&c);
            let slow = brute_force_assignment(&c);
            assert!((fast.total_cost - slow.total_cost).abs() < 1e-9);
            assert!(fast.perm.iter().sorted().copied().eq(0..6));
        }
    }

    #[test]
    fn rejects_bad_matrices() {
        assert!(CostMatrix::from_rows(&[vec![1.0, 2.0]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![f64::NAN]]).is_err());
        assert!(CostMatrix::from_rows(&[vec![-1.0]]).is_err());
        assert!(CostMatrix::<f64>::new(2, vec![0.0; 3]).is_err());
    }

    #[test]
    fn emd_examples() {
        let a = batch(&[[0.0, 0.0], [1.0, 0.0]]);
        assert_eq!(emd(&a, &a).unwrap(), 0.0);
        assert_eq!(emd(&batch(&[[0.0, 0.0]]), &batch(&[[3.0, 4.0]])).unwrap(), 5.0);
        assert_eq!(emd(&a, &batch(&[[1.0, 0.0], [0.0, 0.0]])).unwrap(), 0.0);
        assert!(emd(&a, &batch(&[[1.0, 0.0]])).is_err());
    }

    #[test]
    fn brute_force_guard_and_single_pair() {
        assert_eq!(brute_force_emd(&batch(&[[0.0, 0.0]]), &batch(&[[3.0, 4.0]])).unwrap(), 5.0);
        let ten: Vec<[f64; 2]> = (0..10).map(|i| [i as f64, 0.0]).collect();
        assert!(brute_force_emd(&batch(&ten), &batch(&ten)).is_err());
    }

    #[test]
    fn single_precision() {
        let c = CostMatrix::<f32>::from_rows(&[vec![4.0, 1.0], vec![2.0, 3.0]]).unwrap();
        assert_eq!(hungarian(&c).total_cost, 3.0f32);
    }
}
