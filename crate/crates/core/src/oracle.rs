//! Exact feasibility oracle for the k vertex-disjoint-paths problem, plus
//! brute-force enumerators of feasible binary solutions used to validate the
//! optimization pipeline on small models.
//!
//! The path search here is deliberately independent of the relaxation
//! machinery: it is a plain backtracking search over simple paths with
//! reachability pruning, and the enumerators check model constraints by
//! direct arithmetic over all binary vectors.

use crate::graph::DirectedGraph;
use crate::model::FlowModel;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("terminal pair ({s}, {t}) references a vertex >= {num_vertices}")]
    TerminalOutOfRange {
        s: usize,
        t: usize,
        num_vertices: usize,
    },
    #[error("arc id {arc} out of range ({num_arcs} arcs)")]
    ArcOutOfRange { arc: usize, num_arcs: usize },
    #[error("model has {n} arcs; enumeration is capped at {max_arcs}")]
    TooManyArcs { n: usize, max_arcs: usize },
}

/// A k vertex-disjoint-paths query: route one simple path per terminal pair
/// so that no two paths share any vertex (endpoints included). Pairs with
/// source equal to target are allowed and occupy that single vertex. Arcs can
/// be excluded from the search without copying the graph.
pub struct VdpQuery<'g> {
    graph: &'g DirectedGraph,
    pairs: Vec<(usize, usize)>,
    removed: Vec<bool>,
}

impl<'g> VdpQuery<'g> {
    pub fn new(
        graph: &'g DirectedGraph,
        pairs: Vec<(usize, usize)>,
    ) -> Result<Self, OracleError> {
        for &(s, t) in &pairs {
            if s >= graph.num_vertices() || t >= graph.num_vertices() {
                return Err(OracleError::TerminalOutOfRange {
                    s,
                    t,
                    num_vertices: graph.num_vertices(),
                });
            }
        }
        Ok(Self {
            graph,
            pairs,
            removed: vec![false; graph.num_arcs()],
        })
    }

    /// Excludes the given arc ids from the search.
    pub fn without_arcs(
        mut self,
        arcs: impl IntoIterator<Item = usize>,
    ) -> Result<Self, OracleError> {
        for e in arcs {
            if e >= self.graph.num_arcs() {
                return Err(OracleError::ArcOutOfRange {
                    arc: e,
                    num_arcs: self.graph.num_arcs(),
                });
            }
            self.removed[e] = true;
        }
        Ok(self)
    }

    pub fn feasible(&self) -> bool {
        self.witness().is_some()
    }

    /// Finds one family of pairwise vertex-disjoint paths, returned as arc-id
    /// sequences in the original pair order (empty sequence for a
    /// source-equals-target pair), or `None` if no family exists.
    pub fn witness(&self) -> Option<Vec<Vec<usize>>> {
        let nv = self.graph.num_vertices();

        // Strict disjointness: a vertex can serve as terminal for at most one
        // pair, so terminal collisions across pairs are immediately fatal.
        let mut owner = vec![usize::MAX; nv];
        for (i, &(s, t)) in self.pairs.iter().enumerate() {
            for v in [s, t] {
                if owner[v] != usize::MAX && owner[v] != i {
                    return None;
                }
                owner[v] = i;
            }
        }

        // Route the most constrained pairs first: ascending shortest-path
        // length in the arc-pruned graph, ties by pair index. Unreachable
        // here means unreachable, period.
        let mut order: Vec<usize> = (0..self.pairs.len()).collect();
        let mut dist = Vec::with_capacity(self.pairs.len());
        for &(s, t) in &self.pairs {
            dist.push(self.bfs_distance(s, t)?);
        }
        order.sort_by_key(|&i| (dist[i], i));

        let mut search = Search {
            query: self,
            owner,
            visited: vec![false; nv],
            order,
            paths: vec![Vec::new(); self.pairs.len()],
        };
        if search.route(0) {
            Some(search.paths)
        } else {
            None
        }
    }

    /// Shortest-path arc count from s to t ignoring disjointness, or `None`
    /// if unreachable.
    fn bfs_distance(&self, s: usize, t: usize) -> Option<usize> {
        if s == t {
            return Some(0);
        }
        let mut dist = vec![usize::MAX; self.graph.num_vertices()];
        dist[s] = 0;
        let mut queue = std::collections::VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            for &e in self.graph.out_arcs(v) {
                if self.removed[e] {
                    continue;
                }
                let w = self.graph.arc(e).1;
                if dist[w] == usize::MAX {
                    dist[w] = dist[v] + 1;
                    if w == t {
                        return Some(dist[w]);
                    }
                    queue.push_back(w);
                }
            }
        }
        None
    }
}

struct Search<'a, 'g> {
    query: &'a VdpQuery<'g>,
    /// Pair owning each terminal vertex, `usize::MAX` for non-terminals.
    owner: Vec<usize>,
    visited: Vec<bool>,
    order: Vec<usize>,
    paths: Vec<Vec<usize>>,
}

impl Search<'_, '_> {
    fn route(&mut self, idx: usize) -> bool {
        if idx == self.order.len() {
            return true;
        }
        let pair = self.order[idx];
        let (s, t) = self.query.pairs[pair];
        if self.visited[s] {
            return false;
        }
        if s == t {
            self.visited[s] = true;
            let ok = self.later_pairs_connected(idx) && self.route(idx + 1);
            if !ok {
                self.visited[s] = false;
            }
            return ok;
        }
        self.visited[s] = true;
        let ok = self.extend(idx, pair, s, t);
        if !ok {
            self.visited[s] = false;
        }
        ok
    }

    fn extend(&mut self, idx: usize, pair: usize, v: usize, t: usize) -> bool {
        if v == t {
            return self.later_pairs_connected(idx) && self.route(idx + 1);
        }
        let graph = self.query.graph;
        for &e in graph.out_arcs(v) {
            if self.query.removed[e] {
                continue;
            }
            let w = graph.arc(e).1;
            if self.visited[w] {
                continue;
            }
            // Other pairs' terminals are off limits: they must be free when
            // their own pair is routed.
            if self.owner[w] != usize::MAX && self.owner[w] != pair {
                continue;
            }
            if w != t && !self.reaches(w, t, pair) {
                continue;
            }
            self.visited[w] = true;
            self.paths[pair].push(e);
            if self.extend(idx, pair, w, t) {
                return true;
            }
            self.paths[pair].pop();
            self.visited[w] = false;
        }
        false
    }

    /// BFS reachability in the residual graph (unvisited vertices, foreign
    /// terminals blocked) from `from` to `to` for the given pair.
    fn reaches(&self, from: usize, to: usize, pair: usize) -> bool {
        if from == to {
            return true;
        }
        let graph = self.query.graph;
        let mut seen = vec![false; graph.num_vertices()];
        seen[from] = true;
        let mut queue = std::collections::VecDeque::from([from]);
        while let Some(v) = queue.pop_front() {
            for &e in graph.out_arcs(v) {
                if self.query.removed[e] {
                    continue;
                }
                let w = graph.arc(e).1;
                if w == to {
                    return true;
                }
                if seen[w] || self.visited[w] {
                    continue;
                }
                if self.owner[w] != usize::MAX && self.owner[w] != pair {
                    continue;
                }
                seen[w] = true;
                queue.push_back(w);
            }
        }
        false
    }

    /// After completing a path, every pair still to route must keep its
    /// terminals connected in the residual graph; otherwise backtrack now.
    fn later_pairs_connected(&self, idx: usize) -> bool {
        for &pair in &self.order[idx + 1..] {
            let (s, t) = self.query.pairs[pair];
            if self.visited[s] || (s != t && self.visited[t]) {
                return false;
            }
            if s != t && !self.reaches_from_source(s, t, pair) {
                return false;
            }
        }
        true
    }

    fn reaches_from_source(&self, s: usize, t: usize, pair: usize) -> bool {
        // The source itself is this pair's own terminal, so start there and
        // reuse the interior reachability rules.
        self.reaches(s, t, pair)
    }
}

/// All binary arc selections that are feasible for the path model: flow
/// conservation, vertex-disjointness, and no directed cycle inside any copy
/// (each copy's support is a union of simple paths covering its route).
/// Enumeration checks every binary vector directly, so it stays exact but is
/// capped at `max_arcs` arcs.
pub fn enumerate_bqp_feasible(
    model: &FlowModel,
    max_arcs: usize,
) -> Result<Vec<Vec<f64>>, OracleError> {
    enumerate(model, max_arcs, true)
}

/// All binary arc selections feasible for the subtour-relaxed model: flow
/// conservation and vertex-disjointness only, so supports may contain
/// disjoint cycles on top of the routed paths.
pub fn enumerate_relaxed_feasible(
    model: &FlowModel,
    max_arcs: usize,
) -> Result<Vec<Vec<f64>>, OracleError> {
    enumerate(model, max_arcs, false)
}

fn enumerate(
    model: &FlowModel,
    max_arcs: usize,
    require_acyclic: bool,
) -> Result<Vec<Vec<f64>>, OracleError> {
    let n = model.num_arcs();
    if n > max_arcs || n >= 63 {
        return Err(OracleError::TooManyArcs { n, max_arcs });
    }
    let mut out = Vec::new();
    let mut x = vec![0.0; n];
    for mask in 0u64..(1u64 << n) {
        for (e, xe) in x.iter_mut().enumerate() {
            *xe = if mask >> e & 1 == 1 { 1.0 } else { 0.0 };
        }
        if model.check_feasible(&x, require_acyclic) {
            out.push(x.clone());
        }
    }
    Ok(out)
}
