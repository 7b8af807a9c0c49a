//! Minimum-cost matching between two point sets.

use crate::error::{Error, Result};

/// Pairs (row, col) of a minimum-cost assignment of a rectangular cost
/// matrix; min(rows, cols) pairs are returned, sorted by row.
pub fn min_cost_matching(cost: &[Vec<f64>]) -> Result<Vec<(usize, usize)>> {
    let nr = cost.len();
    let nc = cost.first().map_or(0, |r| r.len());
    if nr == 0 || nc == 0 {
        return Ok(vec![]);
    }
    if cost.iter().any(|r| r.len() != nc) {
        return Err(Error::InvalidInput("ragged cost matrix".into()));
    }
    let flat: Vec<f64> = cost.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite matching cost".into()));
    }
    let (rows, cols) =
        lsap::solve(nr, nc, &flat, false).map_err(|e| Error::Numerical(format!("assignment failed: {e:?}")))?;
    let mut pairs: Vec<(usize, usize)> = rows.into_iter().zip(cols).collect();
    pairs.sort();
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(cost: &[Vec<f64>]) -> f64 {
        // rows ≤ cols; all injections
        fn rec(cost: &[Vec<f64>], r: usize, used: &mut Vec<bool>) -> f64 {
            if r == cost.len() {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for c in 0..used.len() {
                if !used[c] {
                    used[c] = true;
                    best = best.min(cost[r][c] + rec(cost, r + 1, used));
                    used[c] = false;
                }
            }
            best
        }
        rec(cost, 0, &mut vec![false; cost[0].len()])
    }

    #[test]
    fn matches_brute_force() {
        let cost = vec![
            vec![4.0, 1.0, 3.0, 2.5],
            vec![2.0, 0.0, 5.0, 1.0],
            vec![3.0, 2.0, 2.0, 0.5],
        ];
        let pairs = min_cost_matching(&cost).unwrap();
        assert_eq!(pairs.len(), 3);
        let total: f64 = pairs.iter().map(|&(r, c)| cost[r][c]).sum();
        assert!((total - brute(&cost)).abs() < 1e-12);
    }

    #[test]
    fn tall_matrix() {
        let cost = vec![vec![1.0], vec![0.2], vec![3.0]];
        assert_eq!(min_cost_matching(&cost).unwrap(), vec![(1, 0)]);
    }

    #[test]
    fn empty() {
        assert!(min_cost_matching(&[]).unwrap().is_empty());
    }
}
