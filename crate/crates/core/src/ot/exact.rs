use super::{CostMatrix, TransportPlan, MARGINAL_TOL};
use crate::error::{CoreError, Result};
use ndarray::{Array1, Array2};

/// Exact discrete transport on the bipartite graph by primal network
/// simplex with Bland's rule: the entering arc is the lexicographically
/// first `(k, l)` with negative reduced cost, the leaving arc the
/// lexicographically first among the minimum-ratio candidates. This keeps
/// pivoting deterministic and cycle-free on the (heavily degenerate)
/// transportation polytope.
pub fn solve_discrete_ot(
    c: &CostMatrix,
    w0: &Array1<f64>,
    w1: &Array1<f64>,
) -> Result<(TransportPlan, f64)> {
    let (k0, k1) = c.shape();
    if w0.len() != k0 || w1.len() != k1 {
        return Err(CoreError::Argument("marginal sizes do not match cost".into()));
    }
    if w0.iter().chain(w1.iter()).any(|&w| w < 0.0 || !w.is_finite()) {
        return Err(CoreError::Argument("marginals must be nonnegative".into()));
    }
    let (s0, s1): (f64, f64) = (w0.sum(), w1.sum());
    if (s0 - s1).abs() > MARGINAL_TOL {
        return Err(CoreError::Argument(format!(
            "infeasible marginals: sums {s0} vs {s1}"
        )));
    }

    let cost = c.matrix();
    let n_nodes = k0 + k1;
    let mut flow = Array2::<f64>::zeros((k0, k1));
    let mut basis: Vec<(usize, usize)> = Vec::with_capacity(n_nodes - 1);

    // North-west corner starting tree; on ties only the row index advances,
    // leaving a zero-flow basic arc.
    {
        let mut a = w0.to_vec();
        let mut b = w1.to_vec();
        let (mut i, mut j) = (0usize, 0usize);
        loop {
            let q = a[i].min(b[j]);
            flow[[i, j]] = q;
            basis.push((i, j));
            a[i] -= q;
            b[j] -= q;
            if i == k0 - 1 && j == k1 - 1 {
                break;
            }
            if (a[i] <= b[j] && i < k0 - 1) || j == k1 - 1 {
                i += 1;
            } else {
                j += 1;
            }
        }
    }

    let cmax = cost.iter().fold(0.0_f64, |m, &v| m.max(v.abs())).max(1.0);
    let enter_tol = 1e-12 * cmax;
    let max_pivots = 1000 * (k0 * k1 + n_nodes) + 1000;

    let mut u = vec![0.0_f64; k0];
    let mut v = vec![0.0_f64; k1];

    for _pivot in 0..max_pivots {
        compute_potentials(&basis, cost, k0, k1, &mut u, &mut v);

        let mut entering: Option<(usize, usize)> = None;
        'scan: for k in 0..k0 {
            for l in 0..k1 {
                let rc = cost[[k, l]] - u[k] - v[l];
                if rc < -enter_tol {
                    entering = Some((k, l));
                    break 'scan;
                }
            }
        }
        let (ek, el) = match entering {
            Some(arc) => arc,
            None => {
                let mut total = 0.0;
                for k in 0..k0 {
                    for l in 0..k1 {
                        total += flow[[k, l]] * cost[[k, l]];
                    }
                }
                let plan = TransportPlan::new(flow.mapv(|x| x.max(0.0)))?;
                return Ok((plan, total));
            }
        };

        // Unique tree path from the entering arc's sink back to its source;
        // arcs traversed sink->source give up flow.
        let path = tree_path(&basis, k0, n_nodes, ek, k0 + el);
        let mut theta = f64::INFINITY;
        let mut leaving: Option<usize> = None;
        for &(arc_idx, decreases) in &path {
            if decreases {
                let (bk, bl) = basis[arc_idx];
                let f = flow[[bk, bl]];
                let better = match leaving {
                    None => true,
                    Some(prev) => {
                        f < theta || (f == theta && basis[arc_idx] < basis[prev])
                    }
                };
                if better {
                    theta = f;
                    leaving = Some(arc_idx);
                }
            }
        }
        let leaving = leaving.expect("cycle always contains a decreasing arc");

        if theta > 0.0 {
            flow[[ek, el]] += theta;
            for &(arc_idx, decreases) in &path {
                let (bk, bl) = basis[arc_idx];
                if decreases {
                    flow[[bk, bl]] = (flow[[bk, bl]] - theta).max(0.0);
                } else {
                    flow[[bk, bl]] += theta;
                }
            }
        }
        basis[leaving] = (ek, el);
    }

    Err(CoreError::NotConverged {
        iterations: max_pivots,
        last_value: f64::NAN,
        last_plan: Some(flow),
    })
}

fn compute_potentials(
    basis: &[(usize, usize)],
    cost: &Array2<f64>,
    k0: usize,
    k1: usize,
    u: &mut [f64],
    v: &mut [f64],
) {
    let n_nodes = k0 + k1;
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
    for (idx, &(k, l)) in basis.iter().enumerate() {
        adj[k].push((k0 + l, idx));
        adj[k0 + l].push((k, idx));
    }
    let mut seen = vec![false; n_nodes];
    let mut stack = vec![0usize];
    u[0] = 0.0;
    seen[0] = true;
    while let Some(node) = stack.pop() {
        for &(next, arc) in &adj[node] {
            if seen[next] {
                continue;
            }
            let (bk, bl) = basis[arc];
            if next < k0 {
                u[next] = cost[[bk, bl]] - v[bl];
            } else {
                v[next - k0] = cost[[bk, bl]] - u[bk];
            }
            seen[next] = true;
            stack.push(next);
        }
    }
}

/// Path from `from` (a sink node) to `to` (a source node) in the basis
/// tree, as `(basis index, decreases)` pairs. Arcs traversed sink->source
/// lose flow when the entering arc gains.
fn tree_path(
    basis: &[(usize, usize)],
    k0: usize,
    n_nodes: usize,
    to_source: usize,
    from_sink: usize,
) -> Vec<(usize, bool)> {
    let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_nodes];
    for (idx, &(k, l)) in basis.iter().enumerate() {
        adj[k].push((k0 + l, idx));
        adj[k0 + l].push((k, idx));
    }
    let mut parent: Vec<Option<(usize, usize)>> = vec![None; n_nodes];
    let mut seen = vec![false; n_nodes];
    let mut queue = std::collections::VecDeque::new();
    queue.push_back(from_sink);
    seen[from_sink] = true;
    while let Some(node) = queue.pop_front() {
        if node == to_source {
            break;
        }
        for &(next, arc) in &adj[node] {
            if !seen[next] {
                seen[next] = true;
                parent[next] = Some((node, arc));
                queue.push_back(next);
            }
        }
    }

    // Walk back from the source endpoint; record each arc with its
    // traversal direction relative to the walk from sink to source.
    let mut rev = Vec::new();
    let mut node = to_source;
    while let Some((prev, arc)) = parent[node] {
        // Edge walked prev -> node along the sink-to-source direction.
        let decreases = prev >= k0; // leaving a sink towards a source
        rev.push((arc, decreases));
        node = prev;
    }
    rev
}

/// Exact 1D transport cost between weighted atom lists under squared
/// distance, by the sorted quantile coupling.
pub fn solve_1d_sorted(
    support0: &[f64],
    weights0: &[f64],
    support1: &[f64],
    weights1: &[f64],
) -> Result<f64> {
    if support0.len() != weights0.len() || support1.len() != weights1.len() {
        return Err(CoreError::Argument("support/weight length mismatch".into()));
    }
    let total0: f64 = weights0.iter().sum();
    let total1: f64 = weights1.iter().sum();
    if (total0 - total1).abs() > MARGINAL_TOL {
        return Err(CoreError::Argument("1d marginals must share total mass".into()));
    }
    let mut a: Vec<(f64, f64)> = support0
        .iter()
        .zip(weights0)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&x, &w)| (x, w))
        .collect();
    let mut b: Vec<(f64, f64)> = support1
        .iter()
        .zip(weights1)
        .filter(|(_, &w)| w > 0.0)
        .map(|(&x, &w)| (x, w))
        .collect();
    a.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());
    b.sort_by(|p, q| p.0.partial_cmp(&q.0).unwrap());

    let (mut i, mut j) = (0usize, 0usize);
    let mut cost = 0.0;
    let (mut ra, mut rb) = (
        a.first().map(|p| p.1).unwrap_or(0.0),
        b.first().map(|p| p.1).unwrap_or(0.0),
    );
    while i < a.len() && j < b.len() {
        let m = ra.min(rb);
        let diff = a[i].0 - b[j].0;
        cost += m * diff * diff;
        ra -= m;
        rb -= m;
        if ra <= 0.0 {
            i += 1;
            if i < a.len() {
                ra = a[i].1;
            }
        }
        if rb <= 0.0 {
            j += 1;
            if j < b.len() {
                rb = b[j].1;
            }
        }
    }
    Ok(cost)
}
