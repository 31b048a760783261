//! Linear assignment solvers: an ε-scaling auction for the tracker's sparse
//! association problems and a dense Hungarian solver for OSPA.

/// Sparse benefit matrix; `None` marks a forbidden row/column pair.
pub(crate) type Benefits = Vec<Vec<Option<f64>>>;

/// Every row can be given a distinct admissible column (Kuhn's augmenting paths).
pub(crate) fn rows_matchable(benefit: &Benefits, cols: usize) -> bool {
    fn augment(i: usize, benefit: &Benefits, seen: &mut [bool], owner: &mut [Option<usize>]) -> bool {
        for (j, b) in benefit[i].iter().enumerate() {
            if b.is_none() || seen[j] {
                continue;
            }
            seen[j] = true;
            if owner[j].is_none_or(|k| augment(k, benefit, seen, owner)) {
                owner[j] = Some(i);
                return true;
            }
        }
        false
    }
    let mut owner = vec![None; cols];
    (0..benefit.len()).all(|i| {
        let mut seen = vec![false; cols];
        augment(i, benefit, &mut seen, &mut owner)
    })
}

/// Maximum-benefit assignment of every row to a distinct column, or `None`
/// when no such assignment exists. Requires `rows <= cols`.
///
/// Forward auction with ε-scaling. The rectangular problem is squared with
/// zero-benefit dummy rows so that the result is optimal to within
/// `cols * ε_final`, far below any benefit difference that matters here.
pub(crate) fn auction(benefit: &Benefits, cols: usize) -> Option<Vec<usize>> {
    let rows = benefit.len();
    if rows == 0 {
        return Some(Vec::new());
    }
    if rows > cols || !rows_matchable(benefit, cols) {
        return None;
    }
    let finite = benefit.iter().flatten().flatten();
    let (lo, hi) = finite.fold((0.0f64, 0.0f64), |(lo, hi), &b| (lo.min(b), hi.max(b)));
    let range = (hi - lo).max(1.0);
    // A row with a single admissible column bids as if its runner-up were
    // this far below; any value beyond the benefit spread works.
    let lone_gap = 4.0 * range + 1.0;
    let eps_final = range * 1e-12;
    let n = cols;
    let value = |i: usize, j: usize| -> Option<f64> {
        if i < rows {
            benefit[i][j]
        } else {
            Some(0.0)
        }
    };
    let mut price = vec![0.0f64; n];
    let mut eps = range / 4.0;
    let mut owner: Vec<Option<usize>>;
    let mut assigned: Vec<Option<usize>>;
    loop {
        owner = vec![None; n];
        assigned = vec![None; n];
        let mut queue: Vec<usize> = (0..n).rev().collect();
        while let Some(i) = queue.pop() {
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            let mut best_j = usize::MAX;
            for j in 0..n {
                if let Some(b) = value(i, j) {
                    let v = b - price[j];
                    if v > best {
                        second = best;
                        best = v;
                        best_j = j;
                    } else if v > second {
                        second = v;
                    }
                }
            }
            let second = if second.is_finite() { second } else { best - lone_gap };
            price[best_j] += best - second + eps;
            if let Some(prev) = owner[best_j] {
                assigned[prev] = None;
                queue.push(prev);
            }
            owner[best_j] = Some(i);
            assigned[i] = Some(best_j);
        }
        if eps <= eps_final {
            break;
        }
        eps = (eps / 7.0).max(eps_final);
    }
    Some(assigned[..rows].iter().map(|a| a.expect("auction assigns every row")).collect())
}

/// Minimum-cost assignment of each row to a distinct column of a dense
/// `rows x cols` cost matrix (`rows <= cols`). Returns the column per row.
pub(crate) fn hungarian(cost: &[Vec<f64>], cols: usize) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    assert!(n <= cols);
    let m = cols;
    // Shortest augmenting path with potentials; 1-based with a virtual column 0.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0usize; n];
    for j in 1..=m {
        if p[j] != 0 {
            result[p[j] - 1] = j - 1;
        }
    }
    result
}
