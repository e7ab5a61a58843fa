//! Cluster-to-class matching.
//!
//! [`hungarian`] solves the square assignment problem with the shortest
//! augmenting path form of the Hungarian method, then walks the equality
//! subgraph of the optimal duals to pick the lexicographically smallest of
//! the optimal permutations.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matching {
    /// `perm[cluster] = class`.
    pub perm: Vec<usize>,
    pub total_cost: f64,
}

pub fn hungarian(cost: ArrayView2<'_, f64>) -> Result<Matching> {
    let (rows, cols) = cost.dim();
    if rows != cols {
        return Err(Error::dims(format!("assignment cost must be square, got {rows}x{cols}")));
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(Error::invalid("assignment cost has non-finite entries"));
    }
    let n = rows;
    if n == 0 {
        return Ok(Matching { perm: Vec::new(), total_cost: 0.0 });
    }

    // 1-based potentials; index 0 is the virtual start column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![0usize; n];
    for j in 1..=n {
        row_to_col[owner[j] - 1] = j - 1;
    }

    let scale = cost.iter().fold(1.0f64, |m, c| m.max(c.abs()));
    let tol = 1e-9 * scale * n as f64;
    let tight = |i: usize, j: usize| (cost[[i, j]] - u[i + 1] - v[j + 1]).abs() <= tol;
    let perm = lexicographic_min(n, &tight, row_to_col);
    let total_cost = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    Ok(Matching { perm, total_cost })
}

/// Smallest permutation (lexicographic in row order) among the perfect
/// matchings of the tight-edge graph, starting from one such matching.
fn lexicographic_min(n: usize, tight: &dyn Fn(usize, usize) -> bool, mut row_to_col: Vec<usize>) -> Vec<usize> {
    let mut col_to_row = vec![0usize; n];
    for (r, &c) in row_to_col.iter().enumerate() {
        col_to_row[c] = r;
    }
    for i in 0..n {
        for j in 0..n {
            if row_to_col[i] == j {
                break;
            }
            // Columns owned by rows before i are fixed, so j would not be tight-reachable.
            if col_to_row[j] < i || !tight(i, j) {
                continue;
            }
            // Row owning j must move to another column, ending at i's current one.
            let target = row_to_col[i];
            let start = col_to_row[j];
            let mut visited = vec![false; n];
            visited[j] = true;
            let mut path = Vec::new();
            if reroute(start, target, i, tight, &row_to_col, &col_to_row, &mut visited, &mut path) {
                // path holds (row, new column) pairs.
                for (r, c) in path {
                    row_to_col[r] = c;
                    col_to_row[c] = r;
                }
                row_to_col[i] = j;
                col_to_row[j] = i;
                break;
            }
        }
    }
    row_to_col
}

#[allow(clippy::too_many_arguments)]
fn reroute(
    row: usize,
    target: usize,
    fixed_upto: usize,
    tight: &dyn Fn(usize, usize) -> bool,
    row_to_col: &[usize],
    col_to_row: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    for c in 0..row_to_col.len() {
        if visited[c] || !tight(row, c) {
            continue;
        }
        visited[c] = true;
        if c == target {
            path.push((row, c));
            return true;
        }
        let next = col_to_row[c];
        if next <= fixed_upto {
            continue;
        }
        if reroute(next, target, fixed_upto, tight, row_to_col, col_to_row, visited, path) {
            path.push((row, c));
            return true;
        }
    }
    false
}

fn check_labels(labels: &[u32], num_classes: usize, what: &str) -> Result<()> {
    match labels.iter().find(|&&l| l as usize >= num_classes) {
        Some(l) => Err(Error::invalid(format!("{what} label {l} out of range for {num_classes} classes"))),
        None => Ok(()),
    }
}

/// `counts[i][j] = #{pred = i, truth = j}`.
pub fn count_matrix(pred: &[u32], truth: &[u32], num_classes: usize) -> Result<Array2<u64>> {
    if pred.len() != truth.len() {
        return Err(Error::dims(format!("{} predictions for {} labels", pred.len(), truth.len())));
    }
    check_labels(pred, num_classes, "predicted")?;
    check_labels(truth, num_classes, "true")?;
    let mut counts = Array2::<u64>::zeros((num_classes, num_classes));
    for (&p, &t) in pred.iter().zip(truth) {
        counts[[p as usize, t as usize]] += 1;
    }
    Ok(counts)
}

/// Fraction of samples correct under the best cluster-to-class permutation.
pub fn cluster_accuracy(pred: &[u32], truth: &[u32], num_classes: usize) -> Result<(f64, Matching)> {
    if pred.is_empty() {
        return Err(Error::invalid("accuracy of an empty labeling"));
    }
    let counts = count_matrix(pred, truth, num_classes)?;
    let neg = counts.mapv(|c| -(c as f64));
    let matching = hungarian(neg.view())?;
    let matched: u64 = matching.perm.iter().enumerate().map(|(i, &j)| counts[[i, j]]).sum();
    Ok((matched as f64 / pred.len() as f64, matching))
}

/// Rows are predicted clusters relabeled through `matching`, columns are
/// true classes; a perfect clustering is diagonal.
pub fn confusion_matrix(pred: &[u32], truth: &[u32], matching: &Matching) -> Result<Array2<u64>> {
    let c = matching.perm.len();
    let counts = count_matrix(pred, truth, c)?;
    let mut out = Array2::<u64>::zeros((c, c));
    for (cluster, &class) in matching.perm.iter().enumerate() {
        out.row_mut(class).assign(&counts.row(cluster));
    }
    Ok(out)
}

pub fn confusion_to_csv(confusion: &Array2<u64>) -> String {
    let mut out = String::new();
    for row in confusion.outer_iter() {
        let line: Vec<String> = row.iter().map(u64::to_string).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    pub(crate) fn permutations(n: usize) -> Vec<Vec<usize>> {
        fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
            if prefix.len() == used.len() {
                out.push(prefix.clone());
                return;
            }
            for j in 0..used.len() {
                if !used[j] {
                    used[j] = true;
                    prefix.push(j);
                    rec(prefix, used, out);
                    prefix.pop();
                    used[j] = false;
                }
            }
        }
        let mut out = Vec::new();
        rec(&mut Vec::new(), &mut vec![false; n], &mut out);
        out
    }

    fn brute_force(cost: &Array2<f64>) -> (Vec<usize>, f64) {
        let mut best: Option<(Vec<usize>, f64)> = None;
        // Permutations come out in lexicographic order, so strict `<` keeps the smallest.
        for p in permutations(cost.nrows()) {
            let c: f64 = p.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
            if best.as_ref().is_none_or(|(_, b)| c < *b) {
                best = Some((p, c));
            }
        }
        best.unwrap()
    }

    #[test]
    fn small_examples() {
        let m = hungarian(array![[0.0, 1.0], [1.0, 0.0]].view()).unwrap();
        assert_eq!(m.perm, vec![0, 1]);
        assert_eq!(m.total_cost, 0.0);
        let m = hungarian(array![[4.0, 1.0], [2.0, 3.0]].view()).unwrap();
        assert_eq!(m.perm, vec![1, 0]);
        assert_eq!(m.total_cost, 3.0);
        assert!(hungarian(Array2::<f64>::zeros((2, 3)).view()).is_err());
    }

    #[test]
    fn ties_pick_smallest_permutation() {
        let m = hungarian(Array2::<f64>::zeros((4, 4)).view()).unwrap();
        assert_eq!(m.perm, vec![0, 1, 2, 3]);
        let cost = array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(hungarian(cost.view()).unwrap().perm, vec![1, 2, 0]);
    }

    #[test]
    fn random_seven_by_seven_matches_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let cost = Array2::from_shape_fn((7, 7), |_| rng.random_range(-5.0..5.0));
            let (perm, c) = brute_force(&cost);
            let m = hungarian(cost.view()).unwrap();
            assert_eq!(m.perm, perm);
            assert_eq!(m.total_cost, c);
        }
    }

    #[test]
    fn integer_ties_match_brute_force() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let n = rng.random_range(1..=6);
            let cost = Array2::from_shape_fn((n, n), |_| rng.random_range(0..3) as f64);
            assert_eq!(hungarian(cost.view()).unwrap().perm, brute_force(&cost).0, "{cost}");
        }
    }

    #[test]
    fn accuracy_examples() {
        let truth = vec![0, 1, 2, 2, 1, 0, 0];
        let (acc, m) = cluster_accuracy(&truth, &truth, 3).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(m.perm, vec![0, 1, 2]);

        let relabel = [2u32, 0, 1];
        let pred: Vec<u32> = truth.iter().map(|&t| relabel[t as usize]).collect();
        assert_eq!(cluster_accuracy(&pred, &truth, 3).unwrap().0, 1.0);

        // count matrix [[5,1],[2,8]]
        let mut pred = Vec::new();
        let mut truth = Vec::new();
        for (p, t, k) in [(0, 0, 5), (0, 1, 1), (1, 0, 2), (1, 1, 8)] {
            pred.extend(std::iter::repeat_n(p, k));
            truth.extend(std::iter::repeat_n(t, k));
        }
        let (acc, m) = cluster_accuracy(&pred, &truth, 2).unwrap();
        assert_eq!(acc, 0.8125);
        assert_eq!(m.perm, vec![0, 1]);

        assert!(cluster_accuracy(&[0, 1], &[0], 2).is_err());
    }

    #[test]
    fn confusion_examples() {
        let truth = vec![0u32, 0, 1, 2, 2, 2];
        let (_, m) = cluster_accuracy(&truth, &truth, 3).unwrap();
        let cm = confusion_matrix(&truth, &truth, &m).unwrap();
        assert_eq!(cm, Array2::from_diag(&array![2u64, 1, 3]));

        let truth = vec![0u32, 0, 1, 1, 1];
        let pred = vec![1u32, 1, 0, 0, 0];
        let (_, m) = cluster_accuracy(&pred, &truth, 2).unwrap();
        let cm = confusion_matrix(&pred, &truth, &m).unwrap();
        assert_eq!(cm, array![[2u64, 0], [0, 3]]);
        assert_eq!(confusion_to_csv(&cm), "2,0\n0,3\n");
    }

    #[test]
    fn empty_clusters_are_zero_rows() {
        let truth = vec![0u32, 1, 2, 2];
        let pred = vec![0u32, 0, 0, 0];
        let (acc, m) = cluster_accuracy(&pred, &truth, 3).unwrap();
        assert_eq!(acc, 0.5);
        let cm = confusion_matrix(&pred, &truth, &m).unwrap();
        assert_eq!(cm.sum(), 4);
        assert_eq!(cm.row(2).to_vec(), vec![1, 1, 2]);
    }

    proptest! {
        #[test]
        fn accuracy_relabel_invariance_and_trace(
            pairs in prop::collection::vec((0u32..4, 0u32..4), 1..80),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            let pred: Vec<u32> = pairs.iter().map(|p| p.0).collect();
            let truth: Vec<u32> = pairs.iter().map(|p| p.1).collect();
            let (acc, m) = cluster_accuracy(&pred, &truth, 4).unwrap();

            let cm = confusion_matrix(&pred, &truth, &m).unwrap();
            prop_assert_eq!(cm.sum() as usize, pred.len());
            prop_assert_eq!(cm.diag().sum() as f64 / pred.len() as f64, acc);

            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut sigma: Vec<u32> = (0..4).collect();
            let mut rho: Vec<u32> = (0..4).collect();
            sigma.shuffle(&mut rng);
            rho.shuffle(&mut rng);
            let pred2: Vec<u32> = pred.iter().map(|&p| sigma[p as usize]).collect();
            let truth2: Vec<u32> = truth.iter().map(|&t| rho[t as usize]).collect();
            prop_assert_eq!(cluster_accuracy(&pred2, &truth2, 4).unwrap().0, acc);
        }
    }
}
