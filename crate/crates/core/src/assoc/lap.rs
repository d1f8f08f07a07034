//! Rectangular linear assignment.
//!
//! Only entries that are feasible and at most `threshold` may be matched. Among
//! those the solver returns a matching of maximum cardinality and, within that,
//! minimum total cost (shortest augmenting path with potentials, O(n^2 m)).

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    feasible: Vec<bool>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize) -> Self {
        CostMatrix { rows, cols, data: vec![0.0; rows * cols], feasible: vec![true; rows * cols] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, Vec::len);
        let mut m = CostMatrix::new(r, c);
        for (i, row) in rows.iter().enumerate() {
            assert_eq!(row.len(), c, "ragged cost matrix");
            for (j, &v) in row.iter().enumerate() {
                m.set(i, j, v);
            }
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    #[inline]
    pub fn is_feasible(&self, r: usize, c: usize) -> bool {
        self.feasible[r * self.cols + c] && self.get(r, c).is_finite()
    }

    #[inline]
    pub fn mask(&mut self, r: usize, c: usize) {
        self.feasible[r * self.cols + c] = false;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> CostMatrix {
        CostMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
            feasible: self.feasible.clone(),
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Assignment {
    /// `(row, col)` pairs in ascending row order.
    pub matches: Vec<(usize, usize)>,
    pub unmatched_rows: Vec<usize>,
    pub unmatched_cols: Vec<usize>,
}

impl Assignment {
    /// Sum of matched costs, accumulated in row order.
    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.matches.iter().map(|&(r, c)| cost.get(r, c)).sum()
    }
}

/// Dense Hungarian on an `n x m` matrix with `n <= m`; returns the column
/// assigned to each row.
fn hungarian(n: usize, m: usize, a: impl Fn(usize, usize) -> f64) -> Vec<usize> {
    debug_assert!(n <= m);
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    // p[j]: row (1-based) assigned to column j; 0 = free
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = a(i0 - 1, j - 1) - u[i0] - v[j];
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
    let mut row_to_col = vec![usize::MAX; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

pub fn solve_assignment(cost: &CostMatrix, threshold: f64) -> Assignment {
    let (rows, cols) = (cost.rows, cost.cols);
    let allowed = |r: usize, c: usize| cost.is_feasible(r, c) && cost.get(r, c) <= threshold;

    let mut max_abs = 0.0f64;
    let mut any = false;
    for r in 0..rows {
        for c in 0..cols {
            if allowed(r, c) {
                max_abs = max_abs.max(cost.get(r, c).abs());
                any = true;
            }
        }
    }
    if !any {
        return Assignment {
            matches: Vec::new(),
            unmatched_rows: (0..rows).collect(),
            unmatched_cols: (0..cols).collect(),
        };
    }
    // a disallowed cell costs more than any complete set of allowed cells, so
    // cardinality is maximized before cost
    let k = rows.min(cols) as f64;
    let big = (2.0 * max_abs + 1.0) * (k + 1.0);
    let entry = |r: usize, c: usize| if allowed(r, c) { cost.get(r, c) } else { big };

    let mut matches = if rows <= cols {
        hungarian(rows, cols, entry)
            .into_iter()
            .enumerate()
            .filter(|&(r, c)| allowed(r, c))
            .collect::<Vec<_>>()
    } else {
        let mut m: Vec<(usize, usize)> = hungarian(cols, rows, |c, r| entry(r, c))
            .into_iter()
            .enumerate()
            .map(|(c, r)| (r, c))
            .filter(|&(r, c)| allowed(r, c))
            .collect();
        m.sort_unstable();
        m
    };
    matches.sort_unstable();

    let mut row_used = vec![false; rows];
    let mut col_used = vec![false; cols];
    for &(r, c) in &matches {
        row_used[r] = true;
        col_used[c] = true;
    }
    Assignment {
        matches,
        unmatched_rows: (0..rows).filter(|&r| !row_used[r]).collect(),
        unmatched_cols: (0..cols).filter(|&c| !col_used[c]).collect(),
    }
}
