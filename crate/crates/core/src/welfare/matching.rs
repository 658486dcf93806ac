//! Maximum-weight b-matching between unit-demand agents and item copies,
//! solved as min-cost flow with successive shortest paths.

use crate::TOL;

struct Edge {
    to: usize,
    rev: usize,
    cap: i64,
    cost: f64,
}

struct FlowGraph {
    adj: Vec<Vec<Edge>>,
}

impl FlowGraph {
    fn new(nodes: usize) -> Self {
        Self { adj: (0..nodes).map(|_| Vec::new()).collect() }
    }

    fn add_edge(&mut self, from: usize, to: usize, cap: i64, cost: f64) {
        let rev_from = self.adj[to].len();
        let rev_to = self.adj[from].len();
        self.adj[from].push(Edge { to, rev: rev_from, cap, cost });
        self.adj[to].push(Edge { to: from, rev: rev_to, cap: 0, cost: -cost });
    }

    /// Bellman-Ford (queue based) shortest path in the residual graph.
    /// Relaxations must improve by more than a tiny epsilon so float noise
    /// cannot create spurious negative cycles.
    fn shortest_path(&self, source: usize, sink: usize) -> Option<(f64, Vec<(usize, usize)>)> {
        let n = self.adj.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; n];
        let mut in_queue = vec![false; n];
        let mut relax_count = vec![0usize; n];
        let mut queue = std::collections::VecDeque::new();
        dist[source] = 0.0;
        queue.push_back(source);
        in_queue[source] = true;
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            for (idx, e) in self.adj[u].iter().enumerate() {
                if e.cap <= 0 {
                    continue;
                }
                let cand = dist[u] + e.cost;
                if cand < dist[e.to] - 1e-12 {
                    dist[e.to] = cand;
                    parent[e.to] = Some((u, idx));
                    relax_count[e.to] += 1;
                    if !in_queue[e.to] && relax_count[e.to] <= n {
                        queue.push_back(e.to);
                        in_queue[e.to] = true;
                    }
                }
            }
        }
        if !dist[sink].is_finite() {
            return None;
        }
        let mut path = Vec::new();
        let mut v = sink;
        while v != source {
            let (u, idx) = parent[v]?;
            path.push((u, idx));
            v = u;
            if path.len() > n {
                return None;
            }
        }
        path.reverse();
        Some((dist[sink], path))
    }
}

/// Assigns each agent at most one item and each item `j` at most
/// `capacities[j]` agents, maximising total weight. Only edges with weight
/// above [`TOL`] are considered, so zero-value assignments never appear.
///
/// `weights[i]` is `None` for agents excluded from the market.
pub(crate) fn max_weight_b_matching(weights: &[Option<&[f64]>], capacities: &[usize]) -> (Vec<Option<usize>>, f64) {
    let n = weights.len();
    let m = capacities.len();
    let source = 0;
    let sink = n + m + 1;
    let mut graph = FlowGraph::new(n + m + 2);
    for (i, row) in weights.iter().enumerate() {
        let Some(row) = row else { continue };
        graph.add_edge(source, 1 + i, 1, 0.0);
        for (j, &w) in row.iter().enumerate() {
            if w > TOL && capacities[j] > 0 {
                graph.add_edge(1 + i, 1 + n + j, 1, -w);
            }
        }
    }
    for (j, &c) in capacities.iter().enumerate() {
        if c > 0 {
            graph.add_edge(1 + n + j, sink, c as i64, 0.0);
        }
    }

    // Path costs are nondecreasing, so stopping at the first nonnegative one
    // yields a maximum-weight (not maximum-cardinality) matching.
    while let Some((cost, path)) = graph.shortest_path(source, sink) {
        if cost >= -TOL {
            break;
        }
        for (u, idx) in path {
            let (to, rev) = {
                let e = &mut graph.adj[u][idx];
                e.cap -= 1;
                (e.to, e.rev)
            };
            graph.adj[to][rev].cap += 1;
        }
    }

    let mut assignment = vec![None; n];
    let mut total = 0.0;
    for (i, row) in weights.iter().enumerate() {
        let Some(row) = row else { continue };
        for e in &graph.adj[1 + i] {
            if e.to > n && e.to <= n + m && e.cap == 0 && e.cost < 0.0 {
                let j = e.to - 1 - n;
                assignment[i] = Some(j);
                total += row[j];
            }
        }
    }
    (assignment, total)
}
