use super::{Assignment, MatchError};

fn validate(cost: &[Vec<f64>]) -> Result<(), MatchError> {
    let n = cost.len();
    for (row, r) in cost.iter().enumerate() {
        if r.len() != n {
            return Err(MatchError::NotSquare { rows: n, row, len: r.len() });
        }
        if let Some(col) = r.iter().position(|v| !v.is_finite()) {
            return Err(MatchError::NonFinite { row, col });
        }
    }
    Ok(())
}

/// Minimum-cost perfect matching of rows to columns in O(n³)
/// (shortest augmenting paths with row/column potentials).
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, MatchError> {
    validate(cost)?;
    let n = cost.len();
    // 1-based; column 0 is the virtual source.
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; n + 1];
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
    let mut perm = vec![0; n];
    for j in 1..=n {
        perm[owner[j] - 1] = j - 1;
    }
    let cost = Assignment::total(cost, &perm);
    Ok(Assignment { perm, cost })
}

/// Exhaustive minimum over all `n!` permutations (Heap's algorithm). Test oracle.
pub fn brute_force_assignment(cost: &[Vec<f64>]) -> Result<Assignment, MatchError> {
    validate(cost)?;
    let n = cost.len();
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = Assignment { cost: Assignment::total(cost, &perm), perm: perm.clone() };
    let mut c = vec![0usize; n];
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            let total = Assignment::total(cost, &perm);
            if total < best.cost {
                best = Assignment { perm: perm.clone(), cost: total };
            }
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best)
}
