//! Linear assignment solvers backing the earth mover's distance.
//!
//! Two routes: an exact O(n^3) shortest-augmenting-path solver (the
//! Hungarian method with dual potentials), and an epsilon-scaling auction
//! that certifies its result against a feasible dual bound.

/// Dense square cost matrix, row-major.
pub struct CostMatrix {
    pub n: usize,
    cost: Vec<f64>,
}

impl CostMatrix {
    pub fn new(n: usize, cost: Vec<f64>) -> Self {
        assert_eq!(cost.len(), n * n, "cost matrix must be n*n");
        CostMatrix { n, cost }
    }

    /// Builds the pairwise Euclidean distance matrix between two equal-size
    /// point lists.
    pub fn from_distances(a: &[crate::geom::Point3], b: &[crate::geom::Point3]) -> Self {
        assert_eq!(a.len(), b.len());
        let n = a.len();
        let mut cost = vec![0.0; n * n];
        for (i, p) in a.iter().enumerate() {
            for (j, q) in b.iter().enumerate() {
                cost[i * n + j] = p.dist(q);
            }
        }
        CostMatrix { n, cost }
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.cost[i * self.n + j]
    }

    pub fn assignment_cost(&self, assign: &[usize]) -> f64 {
        assign.iter().enumerate().map(|(i, &j)| self.at(i, j)).sum()
    }
}

const NONE: usize = usize::MAX;

/// Exact minimum-cost perfect matching; returns the column assigned to each
/// row. Shortest augmenting paths with potentials, O(n^3).
pub fn solve_exact(cost: &CostMatrix) -> Vec<usize> {
    let n = cost.n;
    if n == 0 {
        return Vec::new();
    }
    let mut u = vec![0.0f64; n]; // row potentials
    let mut v = vec![0.0f64; n + 1]; // column potentials, last slot is the virtual column
    let mut matched_row = vec![NONE; n + 1]; // matched_row[j] = row matched to column j
    let mut way = vec![0usize; n + 1];

    for row in 0..n {
        matched_row[n] = row;
        let mut j0 = n;
        let mut min_slack = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = n;
            for j in 0..n {
                if !used[j] {
                    let slack = cost.at(i0, j) - u[i0] - v[j];
                    if slack < min_slack[j] {
                        min_slack[j] = slack;
                        way[j] = j0;
                    }
                    if min_slack[j] < delta {
                        delta = min_slack[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    if matched_row[j] != NONE {
                        u[matched_row[j]] += delta;
                    }
                    v[j] -= delta;
                } else {
                    min_slack[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == NONE {
                break;
            }
        }
        // augment along the recorded path
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == n {
                break;
            }
        }
    }

    let mut result = vec![NONE; n];
    for j in 0..n {
        if matched_row[j] != NONE {
            result[matched_row[j]] = j;
        }
    }
    result
}

/// Outcome of the certified auction: an assignment, its cost, and the
/// duality gap bound it was certified against.
pub struct AuctionResult {
    pub assignment: Vec<usize>,
    pub cost: f64,
    /// Upper bound on (cost - optimal cost) established by the dual.
    pub gap_bound: f64,
}

/// Epsilon-scaling auction for minimum-cost assignment. Scales epsilon down
/// until a feasible dual solution certifies the gap at or below
/// `rel_gap` of the optimum (via gap <= rel_gap * dual <= rel_gap * opt).
pub fn solve_auction(cost: &CostMatrix, rel_gap: f64) -> AuctionResult {
    let n = cost.n;
    if n == 0 {
        return AuctionResult { assignment: Vec::new(), cost: 0.0, gap_bound: 0.0 };
    }
    let max_cost = cost.cost.iter().cloned().fold(0.0f64, f64::max);
    let mut eps = (max_cost / 4.0).max(1e-9);
    let mut price = vec![0.0f64; n];
    let mut person_for = vec![NONE; n]; // object -> person
    let mut object_for = vec![NONE; n]; // person -> object

    loop {
        // auction round at the current epsilon; prices persist across rounds
        for slot in object_for.iter_mut() {
            *slot = NONE;
        }
        for slot in person_for.iter_mut() {
            *slot = NONE;
        }
        let mut queue: std::collections::VecDeque<usize> = (0..n).collect();
        while let Some(person) = queue.pop_front() {
            // best and second-best net value (-cost - price)
            let mut best_j = 0usize;
            let mut best = f64::NEG_INFINITY;
            let mut second = f64::NEG_INFINITY;
            for j in 0..n {
                let value = -cost.at(person, j) - price[j];
                if value > best {
                    second = best;
                    best = value;
                    best_j = j;
                } else if value > second {
                    second = value;
                }
            }
            let bid = if second.is_finite() { best - second + eps } else { eps };
            price[best_j] += bid;
            if person_for[best_j] != NONE {
                let evicted = person_for[best_j];
                object_for[evicted] = NONE;
                queue.push_back(evicted);
            }
            person_for[best_j] = person;
            object_for[person] = best_j;
        }

        let total: f64 = object_for.iter().enumerate().map(|(i, &j)| cost.at(i, j)).sum();

        // dual feasibility: u_i = min_j (c_ij - v_j) with v_j = -price_j
        let mut dual = -price.iter().sum::<f64>();
        for i in 0..n {
            let mut m = f64::INFINITY;
            for j in 0..n {
                let r = cost.at(i, j) + price[j];
                if r < m {
                    m = r;
                }
            }
            dual += m;
        }

        let gap = total - dual;
        let tol = rel_gap * dual.max(0.0) + 1e-9 * (1.0 + total.abs());
        if gap <= tol {
            return AuctionResult { assignment: object_for, cost: total, gap_bound: gap.max(0.0) };
        }
        eps /= 5.0;
    }
}
