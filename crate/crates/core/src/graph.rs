//! Directed graphs, problem instances, and the disjoint-union flow model that
//! turns k vertex-disjoint-paths requests into a single network with one graph
//! copy per terminal pair.

use crate::linalg::SymMatrix;
use nalgebra::DMatrix;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GraphError {
    #[error("arc ({tail}, {head}) references a vertex >= {num_vertices}")]
    VertexOutOfRange {
        tail: usize,
        head: usize,
        num_vertices: usize,
    },
    #[error("self-loop ({v}, {v}) is not allowed")]
    SelfLoop { v: usize },
    #[error("parallel arc ({tail}, {head}) appears more than once")]
    ParallelArc { tail: usize, head: usize },
    #[error("terminal pair ({s}, {t}) references a vertex >= {num_vertices}")]
    TerminalOutOfRange {
        s: usize,
        t: usize,
        num_vertices: usize,
    },
    #[error("pair {i} has source equal to target ({v})")]
    DegeneratePair { i: usize, v: usize },
    #[error("sources of pairs {i} and {j} coincide (vertex {v})")]
    DuplicateSource { i: usize, j: usize, v: usize },
    #[error("targets of pairs {i} and {j} coincide (vertex {v})")]
    DuplicateTarget { i: usize, j: usize, v: usize },
    #[error("at least one terminal pair is required")]
    NoPairs,
    #[error("cost matrix is {got}x{got} but the union model has {want} arcs")]
    CostDimension { got: usize, want: usize },
    #[error(transparent)]
    Linalg(#[from] crate::linalg::LinalgError),
}

/// Simple directed graph with dense vertex ids and no self-loops or parallel
/// arcs. Arc ids are positions in the arc list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DirectedGraph {
    num_vertices: usize,
    arcs: Vec<(usize, usize)>,
    out_arcs: Vec<Vec<usize>>,
    in_arcs: Vec<Vec<usize>>,
}

impl DirectedGraph {
    pub fn new(num_vertices: usize, arcs: Vec<(usize, usize)>) -> Result<Self, GraphError> {
        let mut seen = std::collections::HashSet::new();
        for &(u, v) in &arcs {
            if u >= num_vertices || v >= num_vertices {
                return Err(GraphError::VertexOutOfRange {
                    tail: u,
                    head: v,
                    num_vertices,
                });
            }
            if u == v {
                return Err(GraphError::SelfLoop { v });
            }
            if !seen.insert((u, v)) {
                return Err(GraphError::ParallelArc { tail: u, head: v });
            }
        }
        let mut out_arcs = vec![Vec::new(); num_vertices];
        let mut in_arcs = vec![Vec::new(); num_vertices];
        for (e, &(u, v)) in arcs.iter().enumerate() {
            out_arcs[u].push(e);
            in_arcs[v].push(e);
        }
        Ok(Self {
            num_vertices,
            arcs,
            out_arcs,
            in_arcs,
        })
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    pub fn arcs(&self) -> &[(usize, usize)] {
        &self.arcs
    }

    pub fn arc(&self, e: usize) -> (usize, usize) {
        self.arcs[e]
    }

    /// Arc ids leaving `v`.
    pub fn out_arcs(&self, v: usize) -> &[usize] {
        &self.out_arcs[v]
    }

    /// Arc ids entering `v`.
    pub fn in_arcs(&self, v: usize) -> &[usize] {
        &self.in_arcs[v]
    }

    /// Copy of this graph without the listed arcs (ids refer to this graph;
    /// remaining arcs are re-indexed densely, order preserved). Also returns
    /// the map from new arc id to old arc id.
    pub fn without_arcs(&self, removed: &[usize]) -> (DirectedGraph, Vec<usize>) {
        let mut drop = vec![false; self.arcs.len()];
        for &e in removed {
            drop[e] = true;
        }
        let mut kept = Vec::new();
        let mut arcs = Vec::new();
        for (e, &a) in self.arcs.iter().enumerate() {
            if !drop[e] {
                kept.push(e);
                arcs.push(a);
            }
        }
        let g = DirectedGraph::new(self.num_vertices, arcs)
            .expect("subgraph of a valid graph is valid");
        (g, kept)
    }
}

/// A quadratic k vertex-disjoint-paths instance: a digraph, k terminal pairs,
/// and a symmetric cost matrix over the arcs of the k-fold disjoint union
/// (copy-major arc order: arc j of copy i has union id `i * num_arcs + j`).
#[derive(Debug, Clone)]
pub struct Instance {
    pub graph: DirectedGraph,
    pub pairs: Vec<(usize, usize)>,
    pub q: SymMatrix,
}

impl Instance {
    /// Validates terminals and cost dimensions. The cost matrix is
    /// symmetrized; input asymmetry beyond 1e-9 ruins nothing but earns a
    /// warning because it usually signals a data bug.
    pub fn new(
        graph: DirectedGraph,
        pairs: Vec<(usize, usize)>,
        q: DMatrix<f64>,
    ) -> Result<Self, GraphError> {
        if pairs.is_empty() {
            return Err(GraphError::NoPairs);
        }
        for (i, &(s, t)) in pairs.iter().enumerate() {
            if s >= graph.num_vertices() || t >= graph.num_vertices() {
                return Err(GraphError::TerminalOutOfRange {
                    s,
                    t,
                    num_vertices: graph.num_vertices(),
                });
            }
            if s == t {
                return Err(GraphError::DegeneratePair { i, v: s });
            }
            for (j, &(s2, t2)) in pairs.iter().enumerate().skip(i + 1) {
                if s == s2 {
                    return Err(GraphError::DuplicateSource { i, j, v: s });
                }
                if t == t2 {
                    return Err(GraphError::DuplicateTarget { i, j, v: t });
                }
            }
        }
        let want = pairs.len() * graph.num_arcs();
        if q.nrows() != want || q.ncols() != want {
            return Err(GraphError::CostDimension {
                got: q.nrows(),
                want,
            });
        }
        let skew = SymMatrix::asymmetry(&q);
        if skew > 1e-9 {
            log::warn!(
                "cost matrix asymmetry {skew:.3e} exceeds 1e-9; symmetrizing with (Q + Q^T)/2"
            );
        }
        Ok(Self {
            graph,
            pairs,
            q: SymMatrix::new(q)?,
        })
    }

    pub fn k(&self) -> usize {
        self.pairs.len()
    }
}

/// Disjoint union of k copies of the base graph, one per terminal pair, with
/// unit supply at each copy's source and unit demand at its target, plus the
/// conflict pairs that encode vertex-disjointness between arc variables.
#[derive(Debug, Clone)]
pub struct UnionModel {
    pub num_base_vertices: usize,
    pub num_base_arcs: usize,
    pub k: usize,
    /// Union arcs in copy-major order; endpoints are union vertex ids.
    pub arcs: Vec<(usize, usize)>,
    /// Supply/demand per union vertex: +1 at source copies, -1 at target
    /// copies, 0 elsewhere.
    pub b: Vec<f64>,
    /// Conflict pairs (p, q) with p < q over union arc ids: two arcs that no
    /// vertex-disjoint solution can use together. Sorted lexicographically.
    pub conflicts: Vec<(usize, usize)>,
}

/// Builds the k-fold disjoint-union model for the given graph and pairs.
pub fn disjoint_union(graph: &DirectedGraph, pairs: &[(usize, usize)]) -> Result<UnionModel, GraphError> {
    if pairs.is_empty() {
        return Err(GraphError::NoPairs);
    }
    for &(s, t) in pairs {
        if s >= graph.num_vertices() || t >= graph.num_vertices() {
            return Err(GraphError::TerminalOutOfRange {
                s,
                t,
                num_vertices: graph.num_vertices(),
            });
        }
    }
    let k = pairs.len();
    let nv = graph.num_vertices();
    let m = graph.num_arcs();

    let mut arcs = Vec::with_capacity(k * m);
    for copy in 0..k {
        for &(u, v) in graph.arcs() {
            arcs.push((copy * nv + u, copy * nv + v));
        }
    }

    let mut b = vec![0.0; k * nv];
    for (copy, &(s, t)) in pairs.iter().enumerate() {
        b[copy * nv + s] += 1.0;
        b[copy * nv + t] -= 1.0;
    }

    let model = UnionModel {
        num_base_vertices: nv,
        num_base_arcs: m,
        k,
        arcs,
        b,
        conflicts: conflict_set(graph, k),
    };
    Ok(model)
}

/// All unordered pairs of union arcs that cannot be used together in a
/// vertex-disjoint solution: arcs from different copies that touch a common
/// base vertex, and arcs of the same copy that share their tail or share
/// their head.
pub fn conflict_set(graph: &DirectedGraph, k: usize) -> Vec<(usize, usize)> {
    let m = graph.num_arcs();
    let mut set = std::collections::BTreeSet::new();
    let mut push = |a: usize, b: usize| {
        if a != b {
            set.insert((a.min(b), a.max(b)));
        }
    };
    for v in 0..graph.num_vertices() {
        let incident: Vec<usize> = graph
            .out_arcs(v)
            .iter()
            .chain(graph.in_arcs(v))
            .copied()
            .collect();
        // Cross-copy: any two arcs touching v from different copies.
        for ci in 0..k {
            for cj in (ci + 1)..k {
                for &e in &incident {
                    for &f in &incident {
                        push(ci * m + e, cj * m + f);
                    }
                }
            }
        }
        // Same copy: two distinct arcs out of v, or two distinct arcs into v.
        for c in 0..k {
            let outs = graph.out_arcs(v);
            for (i, &e) in outs.iter().enumerate() {
                for &f in &outs[i + 1..] {
                    push(c * m + e, c * m + f);
                }
            }
            let ins = graph.in_arcs(v);
            for (i, &e) in ins.iter().enumerate() {
                for &f in &ins[i + 1..] {
                    push(c * m + e, c * m + f);
                }
            }
        }
    }
    set.into_iter().collect()
}

impl UnionModel {
    pub fn num_vertices(&self) -> usize {
        self.k * self.num_base_vertices
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    /// Union vertex id of base vertex `v` in copy `copy`.
    pub fn union_vertex(&self, copy: usize, v: usize) -> usize {
        copy * self.num_base_vertices + v
    }

    /// Union arc id of base arc `e` in copy `copy`.
    pub fn union_arc(&self, copy: usize, e: usize) -> usize {
        copy * self.num_base_arcs + e
    }

    pub fn copy_of_arc(&self, union_arc: usize) -> usize {
        union_arc / self.num_base_arcs
    }

    pub fn base_of_arc(&self, union_arc: usize) -> usize {
        union_arc % self.num_base_arcs
    }

    /// Dense vertex-arc incidence matrix: +1 at the tail, -1 at the head.
    pub fn incidence_dense(&self) -> DMatrix<f64> {
        incidence(self.num_vertices(), &self.arcs)
    }
}

/// Dense incidence matrix for an arc list: column e has +1 at its tail row
/// and -1 at its head row.
pub fn incidence(num_vertices: usize, arcs: &[(usize, usize)]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(num_vertices, arcs.len());
    for (e, &(u, v)) in arcs.iter().enumerate() {
        a[(u, e)] = 1.0;
        a[(v, e)] = -1.0;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 6-vertex planar test graph with two crossing terminal pairs; the
    /// middle vertices 4 and 5 are shared bottlenecks.
    pub(crate) fn two_pair_bottleneck() -> (DirectedGraph, Vec<(usize, usize)>) {
        let arcs = vec![
            (0, 4),
            (0, 5),
            (2, 4),
            (2, 5),
            (4, 1),
            (5, 1),
            (4, 3),
            (5, 3),
        ];
        let g = DirectedGraph::new(6, arcs).unwrap();
        (g, vec![(0, 1), (2, 3)])
    }

    #[test]
    fn rejects_bad_graphs() {
        assert!(matches!(
            DirectedGraph::new(2, vec![(0, 2)]),
            Err(GraphError::VertexOutOfRange { .. })
        ));
        assert!(matches!(
            DirectedGraph::new(2, vec![(1, 1)]),
            Err(GraphError::SelfLoop { .. })
        ));
        assert!(matches!(
            DirectedGraph::new(2, vec![(0, 1), (0, 1)]),
            Err(GraphError::ParallelArc { .. })
        ));
    }

    #[test]
    fn adjacency_lists_match_arcs() {
        let g = DirectedGraph::new(3, vec![(0, 1), (1, 2), (0, 2)]).unwrap();
        assert_eq!(g.out_arcs(0), &[0, 2]);
        assert_eq!(g.in_arcs(2), &[1, 2]);
        assert_eq!(g.out_arcs(2), &[] as &[usize]);
    }

    #[test]
    fn union_of_two_pair_instance_has_expected_shape() {
        let (g, pairs) = two_pair_bottleneck();
        let u = disjoint_union(&g, &pairs).unwrap();
        assert_eq!(u.num_vertices(), 12);
        assert_eq!(u.num_arcs(), 16);
        assert_eq!(u.k, 2);
        // Supply +1 at source copies, -1 at target copies.
        assert_eq!(u.b[0], 1.0);
        assert_eq!(u.b[1], -1.0);
        assert_eq!(u.b[6 + 2], 1.0);
        assert_eq!(u.b[6 + 3], -1.0);
        assert_eq!(u.b.iter().sum::<f64>(), 0.0);
        // Incidence columns each sum to zero with exactly one +1 and one -1.
        let a = u.incidence_dense();
        for e in 0..u.num_arcs() {
            let col = a.column(e);
            assert_eq!(col.iter().filter(|&&x| x == 1.0).count(), 1);
            assert_eq!(col.iter().filter(|&&x| x == -1.0).count(), 1);
            assert_eq!(col.sum(), 0.0);
        }
    }

    #[test]
    fn union_with_one_pair_is_isomorphic_to_base() {
        let (g, _) = two_pair_bottleneck();
        let u = disjoint_union(&g, &[(0, 1)]).unwrap();
        assert_eq!(u.num_vertices(), g.num_vertices());
        assert_eq!(u.arcs, g.arcs());
    }

    #[test]
    fn union_replicates_small_graph_three_times() {
        let g = DirectedGraph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        let u = disjoint_union(&g, &[(0, 2), (0, 2), (0, 2)]).unwrap();
        assert_eq!(u.num_vertices(), 9);
        assert_eq!(u.num_arcs(), 6);
        let a = u.incidence_dense();
        for e in 0..6 {
            assert_eq!(a.column(e).sum(), 0.0);
        }
    }

    #[test]
    fn conflict_set_matches_known_count() {
        let (g, pairs) = two_pair_bottleneck();
        let u = disjoint_union(&g, &pairs).unwrap();
        assert_eq!(u.conflicts.len(), 56);
        for &(p, q) in &u.conflicts {
            assert!(p < q);
            assert!(q < u.num_arcs());
        }
        // Arcs 0 = (0,4) and 1 = (0,5) of copy 0 share their tail.
        assert!(u.conflicts.contains(&(0, 1)));
        // Arc 0 of copy 0 and arc 0 of copy 1 touch the same base vertices.
        assert!(u.conflicts.contains(&(0, 8)));
        // Anti-parallel arcs do not share a tail or a head: no conflict.
        let g2 = DirectedGraph::new(2, vec![(0, 1), (1, 0)]).unwrap();
        assert!(conflict_set(&g2, 1).is_empty());
    }

    #[test]
    fn single_copy_chain_has_no_conflicts() {
        let g = DirectedGraph::new(3, vec![(0, 1), (1, 2)]).unwrap();
        assert!(conflict_set(&g, 1).is_empty());
        // Two copies: every pair of arcs shares a base vertex somewhere.
        let c = conflict_set(&g, 2);
        assert!(c.contains(&(0, 2)));
        assert!(c.contains(&(1, 3)));
        assert!(c.contains(&(0, 3)));
    }

    #[test]
    fn conflict_set_matches_brute_force_definition() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let nv = rng.gen_range(3..7);
            let mut arcs = Vec::new();
            for u in 0..nv {
                for v in 0..nv {
                    if u != v && rng.gen_bool(0.4) {
                        arcs.push((u, v));
                    }
                }
            }
            let m = arcs.len();
            let g = DirectedGraph::new(nv, arcs).unwrap();
            let k = rng.gen_range(1..4);
            let got = conflict_set(&g, k);
            let mut want = Vec::new();
            for p in 0..k * m {
                for q in (p + 1)..k * m {
                    let (cp, ep) = (p / m, p % m);
                    let (cq, eq) = (q / m, q % m);
                    let (up, vp) = g.arc(ep);
                    let (uq, vq) = g.arc(eq);
                    let share_vertex = up == uq || up == vq || vp == uq || vp == vq;
                    let conflict = if cp != cq {
                        share_vertex
                    } else {
                        up == uq || vp == vq
                    };
                    if conflict {
                        want.push((p, q));
                    }
                }
            }
            assert_eq!(got, want);
        }
    }

    #[test]
    fn instance_validation() {
        let (g, pairs) = two_pair_bottleneck();
        let n = 2 * g.num_arcs();
        assert!(Instance::new(g.clone(), pairs.clone(), DMatrix::zeros(n, n)).is_ok());
        assert!(matches!(
            Instance::new(g.clone(), vec![], DMatrix::zeros(0, 0)),
            Err(GraphError::NoPairs)
        ));
        assert!(matches!(
            Instance::new(g.clone(), vec![(0, 0), (2, 3)], DMatrix::zeros(n, n)),
            Err(GraphError::DegeneratePair { .. })
        ));
        assert!(matches!(
            Instance::new(g.clone(), vec![(0, 1), (0, 3)], DMatrix::zeros(n, n)),
            Err(GraphError::DuplicateSource { .. })
        ));
        assert!(matches!(
            Instance::new(g.clone(), vec![(0, 1), (2, 1)], DMatrix::zeros(n, n)),
            Err(GraphError::DuplicateTarget { .. })
        ));
        assert!(matches!(
            Instance::new(g, pairs, DMatrix::zeros(3, 3)),
            Err(GraphError::CostDimension { .. })
        ));
    }
}
