//! Dense linear assignment by shortest augmenting paths (Jonker–Volgenant).
//!
//! Costs are produced on demand by a closure so large Euclidean instances do not
//! need an `n x n` matrix in memory.

/// Solves `min sum_i cost(i, perm[i])` over permutations; returns `perm`
/// (row -> column).
pub fn solve<C>(n: usize, cost: C) -> Vec<usize>
where
    C: Fn(usize, usize) -> f64,
{
    const FREE: usize = usize::MAX;
    if n == 0 {
        return Vec::new();
    }
    let mut row_of = vec![FREE; n]; // column -> row
    let mut col_of = vec![FREE; n]; // row -> column
    let mut v = vec![0.0f64; n]; // column duals

    // Column reduction: each column goes to its cheapest row if that row is free.
    let mut matches = vec![0usize; n];
    for j in (0..n).rev() {
        let (mut imin, mut min) = (0, cost(0, j));
        for i in 1..n {
            let c = cost(i, j);
            if c < min {
                min = c;
                imin = i;
            }
        }
        v[j] = min;
        matches[imin] += 1;
        if matches[imin] == 1 {
            col_of[imin] = j;
            row_of[j] = imin;
        } else if v[j] < v[col_of[imin]] {
            let j1 = col_of[imin];
            col_of[imin] = j;
            row_of[j] = imin;
            row_of[j1] = FREE;
        }
    }

    // Reduction transfer for rows matched exactly once.
    let mut free_rows = Vec::new();
    for i in 0..n {
        match matches[i] {
            0 => free_rows.push(i),
            1 => {
                let j1 = col_of[i];
                let mut min = f64::INFINITY;
                for j in 0..n {
                    if j != j1 {
                        min = min.min(cost(i, j) - v[j]);
                    }
                }
                if min.is_finite() {
                    v[j1] -= min;
                }
            }
            _ => {}
        }
    }

    // Rows matched more than once keep one column; the rest are free already.
    let mut dist = vec![0.0f64; n];
    let mut pred = vec![0usize; n];
    let mut cols: Vec<usize> = (0..n).collect();
    for &f in &free_rows {
        // Dijkstra over columns with reduced costs, stopping at the first free column.
        for j in 0..n {
            dist[j] = cost(f, j) - v[j];
            pred[j] = f;
            cols[j] = j;
        }
        let mut low = 0; // cols[..low] are settled
        let mut up = 0; // cols[low..up] are at the current minimum
        let mut min = 0.0;
        let mut last = 0;
        let end: usize;
        'search: loop {
            if up == low {
                last = low;
                min = dist[cols[up]];
                up += 1;
                for k in up..n {
                    let j = cols[k];
                    let h = dist[j];
                    if h <= min {
                        if h < min {
                            up = low;
                            min = h;
                        }
                        cols[k] = cols[up];
                        cols[up] = j;
                        up += 1;
                    }
                }
                for &j in &cols[low..up] {
                    if row_of[j] == FREE {
                        end = j;
                        break 'search;
                    }
                }
            }
            let j1 = cols[low];
            low += 1;
            let i = row_of[j1];
            let u1 = cost(i, j1) - v[j1] - min;
            let mut k = up;
            while k < n {
                let j = cols[k];
                let h = cost(i, j) - v[j] - u1;
                if h < dist[j] {
                    dist[j] = h;
                    pred[j] = i;
                    if h <= min {
                        if row_of[j] == FREE {
                            end = j;
                            break 'search;
                        }
                        cols[k] = cols[up];
                        cols[up] = j;
                        up += 1;
                    }
                }
                k += 1;
            }
        }
        for &j in &cols[..last] {
            v[j] += dist[j] - min;
        }
        let mut j = end;
        loop {
            let i = pred[j];
            row_of[j] = i;
            let next = col_of[i];
            col_of[i] = j;
            if i == f {
                break;
            }
            j = next;
        }
    }
    col_of
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute(n: usize, c: &dyn Fn(usize, usize) -> f64) -> f64 {
        fn rec(i: usize, n: usize, used: &mut Vec<bool>, c: &dyn Fn(usize, usize) -> f64) -> f64 {
            if i == n {
                return 0.0;
            }
            let mut best = f64::INFINITY;
            for j in 0..n {
                if !used[j] {
                    used[j] = true;
                    best = best.min(c(i, j) + rec(i + 1, n, used, c));
                    used[j] = false;
                }
            }
            best
        }
        rec(0, n, &mut vec![false; n], c)
    }

    #[test]
    fn small_integer_matrices() {
        let m = [[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let p = solve(3, |i, j| m[i][j]);
        let total: f64 = (0..3).map(|i| m[i][p[i]]).sum();
        assert_eq!(total, 5.0);
        let mut seen = p.clone();
        seen.sort();
        assert_eq!(seen, vec![0, 1, 2]);
    }

    #[test]
    fn ties_and_constant_costs() {
        let p = solve(5, |_, _| 1.0);
        let mut seen = p.clone();
        seen.sort();
        assert_eq!(seen, (0..5).collect::<Vec<_>>());
        // All rows prefer column 0.
        let p = solve(4, |i, j| if j == 0 { 0.0 } else { (i + j) as f64 });
        let total: f64 = (0..4).map(|i| if p[i] == 0 { 0.0 } else { (i + p[i]) as f64 }).sum();
        let want = brute(4, &|i, j| if j == 0 { 0.0 } else { (i + j) as f64 });
        assert_eq!(total, want);
    }

    #[test]
    fn pseudo_random_matrices_match_enumeration() {
        let mut state = 12345u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) % 1000) as f64 / 100.0
        };
        for n in 1..=7 {
            for _ in 0..30 {
                let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| next()).collect()).collect();
                let c = |i: usize, j: usize| m[i][j];
                let p = solve(n, c);
                let total: f64 = (0..n).map(|i| m[i][p[i]]).sum();
                assert!((total - brute(n, &c)).abs() < 1e-9);
            }
        }
    }
}
