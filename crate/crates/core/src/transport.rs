//! Exact earth mover's distance for small balanced transportation problems,
//! solved with the transportation simplex (northwest-corner start, MODI
//! potentials, first-improving entering cell).

use std::collections::VecDeque;

use thiserror::Error;

use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("transportation problem has an empty side")]
    Empty,
    #[error("cost matrix is {rows}x{cols}, expected {m}x{n}")]
    Shape { rows: usize, cols: usize, m: usize, n: usize },
    #[error("supply and demand totals differ")]
    Unbalanced,
    #[error("negative or non-finite input")]
    BadValue,
    #[error("simplex did not converge in {0} pivots")]
    NoConvergence(usize),
}

/// Optimal flows and their total cost.
#[derive(Clone, Debug, PartialEq)]
pub struct TransportPlan<S> {
    pub cost: S,
    /// Nonzero `(source, sink, amount)` entries.
    pub flows: Vec<(usize, usize, S)>,
}

struct Basis<S> {
    m: usize,
    n: usize,
    /// `flow[i][j]` is `Some` for the m+n-1 basic cells.
    flow: Vec<Vec<Option<S>>>,
}

impl<S: Scalar> Basis<S> {
    fn northwest(supply: &[S], demand: &[S], eps: S) -> Self {
        let (m, n) = (supply.len(), demand.len());
        let mut flow = vec![vec![None; n]; m];
        let mut s = supply.to_vec();
        let mut d = demand.to_vec();
        let (mut i, mut j) = (0, 0);
        loop {
            let x = s[i].min(d[j]);
            flow[i][j] = Some(x);
            s[i] -= x;
            d[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if (s[i] <= eps && i < m - 1) || j == n - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
        Self { m, n, flow }
    }

    fn cells(&self) -> impl Iterator<Item = (usize, usize, S)> + '_ {
        self.flow.iter().enumerate().flat_map(|(i, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(j, f)| f.map(|x| (i, j, x)))
        })
    }

    /// Dual potentials with `u[0] = 0`.
    fn potentials(&self, cost: &[Vec<S>]) -> (Vec<S>, Vec<S>) {
        let mut u: Vec<Option<S>> = vec![None; self.m];
        let mut v: Vec<Option<S>> = vec![None; self.n];
        u[0] = Some(S::zero());
        let mut queue = VecDeque::from([(true, 0usize)]);
        while let Some((is_row, k)) = queue.pop_front() {
            if is_row {
                let ui = u[k].expect("visited row has potential");
                for j in 0..self.n {
                    if self.flow[k][j].is_some() && v[j].is_none() {
                        v[j] = Some(cost[k][j] - ui);
                        queue.push_back((false, j));
                    }
                }
            } else {
                let vj = v[k].expect("visited column has potential");
                for i in 0..self.m {
                    if self.flow[i][k].is_some() && u[i].is_none() {
                        u[i] = Some(cost[i][k] - vj);
                        queue.push_back((true, i));
                    }
                }
            }
        }
        (
            u.into_iter().map(|x| x.unwrap_or_else(S::zero)).collect(),
            v.into_iter().map(|x| x.unwrap_or_else(S::zero)).collect(),
        )
    }

    /// Basic cells on the tree path from row `r` to column `c`, starting in row `r`.
    fn path(&self, r: usize, c: usize) -> Vec<(usize, usize)> {
        // Nodes: rows 0..m, columns m..m+n.
        let total = self.m + self.n;
        let mut parent: Vec<Option<usize>> = vec![None; total];
        let mut seen = vec![false; total];
        seen[r] = true;
        let mut queue = VecDeque::from([r]);
        let target = self.m + c;
        while let Some(node) = queue.pop_front() {
            if node == target {
                break;
            }
            let neighbours: Vec<usize> = if node < self.m {
                (0..self.n)
                    .filter(|&j| self.flow[node][j].is_some())
                    .map(|j| self.m + j)
                    .collect()
            } else {
                let j = node - self.m;
                (0..self.m).filter(|&i| self.flow[i][j].is_some()).collect()
            };
            for nb in neighbours {
                if !seen[nb] {
                    seen[nb] = true;
                    parent[nb] = Some(node);
                    queue.push_back(nb);
                }
            }
        }
        let mut nodes = vec![target];
        let mut cur = target;
        while let Some(p) = parent[cur] {
            nodes.push(p);
            cur = p;
        }
        nodes.reverse();
        nodes
            .windows(2)
            .map(|w| {
                let (a, b) = (w[0], w[1]);
                if a < self.m {
                    (a, b - self.m)
                } else {
                    (b, a - self.m)
                }
            })
            .collect()
    }
}

fn check_inputs<S: Scalar>(supply: &[S], demand: &[S], cost: &[Vec<S>]) -> Result<S, TransportError> {
    let (m, n) = (supply.len(), demand.len());
    if m == 0 || n == 0 {
        return Err(TransportError::Empty);
    }
    if cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return Err(TransportError::Shape {
            rows: cost.len(),
            cols: cost.first().map_or(0, Vec::len),
            m,
            n,
        });
    }
    let ok = |x: &S| x.is_finite() && *x >= S::zero();
    if !supply.iter().all(ok) || !demand.iter().all(ok) || !cost.iter().flatten().all(|c| c.is_finite()) {
        return Err(TransportError::BadValue);
    }
    let total_s = supply.iter().fold(S::zero(), |a, &b| a + b);
    let total_d = demand.iter().fold(S::zero(), |a, &b| a + b);
    let scale = total_s.max(total_d).max(S::one());
    let tol = S::epsilon() * S::from_count(m + n) * scale * S::lit(16.0);
    if (total_s - total_d).abs() > tol {
        return Err(TransportError::Unbalanced);
    }
    Ok(tol)
}

/// Minimum-cost transport of `supply` onto `demand` under `cost[i][j]`.
pub fn solve<S: Scalar>(supply: &[S], demand: &[S], cost: &[Vec<S>]) -> Result<TransportPlan<S>, TransportError> {
    let flow_eps = check_inputs(supply, demand, cost)?;
    let (m, n) = (supply.len(), demand.len());
    let cost_scale = cost
        .iter()
        .flatten()
        .fold(S::one(), |a, &c| a.max(c.abs()));
    let cost_eps = S::epsilon() * cost_scale * S::from_count(m + n) * S::lit(16.0);

    let mut basis = Basis::northwest(supply, demand, flow_eps);
    let max_pivots = 64 * (m * n + m + n);
    let mut pivots = 0;
    loop {
        let (u, v) = basis.potentials(cost);
        let entering = (0..m)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .find(|&(i, j)| basis.flow[i][j].is_none() && cost[i][j] - u[i] - v[j] < -cost_eps);
        let Some((ei, ej)) = entering else { break };
        if pivots == max_pivots {
            return Err(TransportError::NoConvergence(pivots));
        }
        pivots += 1;

        // Cycle: entering (+), then alternating -, +, ... along the tree path.
        let path = basis.path(ei, ej);
        let minus: Vec<(usize, usize)> = path.iter().copied().step_by(2).collect();
        let theta = minus
            .iter()
            .map(|&(i, j)| basis.flow[i][j].expect("basic"))
            .fold(S::infinity(), S::min);
        let leaving = *minus
            .iter()
            .filter(|&&(i, j)| basis.flow[i][j].expect("basic") <= theta + flow_eps)
            .min()
            .expect("cycle has a minus cell");
        for (k, &(i, j)) in path.iter().enumerate() {
            let x = basis.flow[i][j].expect("basic");
            basis.flow[i][j] = Some(if k % 2 == 0 { x - theta } else { x + theta });
        }
        basis.flow[ei][ej] = Some(theta);
        basis.flow[leaving.0][leaving.1] = None;
    }

    let mut total = S::zero();
    let mut flows = Vec::new();
    for (i, j, x) in basis.cells() {
        let x = x.max(S::zero());
        if x > flow_eps {
            total += x * cost[i][j];
            flows.push((i, j, x));
        }
    }
    Ok(TransportPlan { cost: total, flows })
}

/// Earth mover's distance between two uniform distributions over the rows
/// and columns of `cost`. Masses are scaled to integers so the simplex
/// pivots are exact.
pub fn emd_uniform<S: Scalar>(cost: &[Vec<S>]) -> Result<S, TransportError> {
    let m = cost.len();
    let n = cost.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return Err(TransportError::Empty);
    }
    if m == 1 || n == 1 {
        // Every unit of mass has exactly one destination.
        let all = cost.iter().flatten().fold(S::zero(), |a, &c| a + c);
        return Ok(all / S::from_count(m * n));
    }
    let supply = vec![S::from_count(n); m];
    let demand = vec![S::from_count(m); n];
    let plan = solve(&supply, &demand, cost)?;
    Ok(plan.cost / S::from_count(m * n))
}

/// Relaxed lower bound: each token moves all its mass to its nearest
/// counterpart, taken in whichever direction is larger.
pub fn relaxed_lower_bound<S: Scalar>(cost: &[Vec<S>]) -> S {
    let m = cost.len();
    let n = cost.first().map_or(0, Vec::len);
    if m == 0 || n == 0 {
        return S::zero();
    }
    let rows = cost
        .iter()
        .map(|r| r.iter().copied().fold(S::infinity(), S::min))
        .fold(S::zero(), |a, b| a + b)
        / S::from_count(m);
    let cols = (0..n)
        .map(|j| cost.iter().map(|r| r[j]).fold(S::infinity(), S::min))
        .fold(S::zero(), |a, b| a + b)
        / S::from_count(n);
    rows.max(cols)
}
