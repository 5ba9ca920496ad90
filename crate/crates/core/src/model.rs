//! A unified quadratic flow model over binary arc variables: minimize
//! `x^T Q x + c^T x + kappa` subject to flow conservation `A x = b`,
//! per-base-vertex disjointness, and pairwise conflicts. Both the full
//! disjoint-union model and the reduced model after arc fixing lower to this
//! shape, so the relaxation and bound engines only ever see one type.

use crate::graph::{incidence, Instance, UnionModel};
use crate::linalg::SymMatrix;
use crate::reduce::ReducedModel;
use nalgebra::DMatrix;

#[derive(Debug, Clone)]
pub struct FlowModel {
    pub num_vertices: usize,
    /// Arcs with endpoints in local vertex ids.
    pub arcs: Vec<(usize, usize)>,
    /// Base-graph vertex behind each local vertex.
    pub base_vertex_of: Vec<usize>,
    /// Graph copy each local vertex belongs to.
    pub copy_of: Vec<usize>,
    /// Supply (+1), demand (-1), or transit (0) per local vertex.
    pub b: Vec<f64>,
    pub q: SymMatrix,
    pub c: Vec<f64>,
    pub kappa: f64,
    /// Conflicting arc pairs (p, q), p < q, over local arc ids.
    pub conflicts: Vec<(usize, usize)>,
    /// Per copy: ordered (origin, destination) vertex pairs that a solution
    /// must connect with vertex-disjoint paths. A copy whose route is fully
    /// decided by fixed arcs has an empty list.
    pub route_segments: Vec<Vec<(usize, usize)>>,
    pub num_base_vertices: usize,
    pub k: usize,
}

impl FlowModel {
    /// Lowers the disjoint-union model (with the instance's cost matrix) into
    /// the common shape: `c = 0`, `kappa = 0`, one route segment per copy.
    pub fn from_union(instance: &Instance, union: &UnionModel) -> Self {
        let nv = union.num_base_vertices;
        let total = union.num_vertices();
        let base_vertex_of = (0..total).map(|v| v % nv).collect();
        let copy_of = (0..total).map(|v| v / nv).collect();
        let route_segments = instance
            .pairs
            .iter()
            .enumerate()
            .map(|(copy, &(s, t))| vec![(union.union_vertex(copy, s), union.union_vertex(copy, t))])
            .collect();
        Self {
            num_vertices: total,
            arcs: union.arcs.clone(),
            base_vertex_of,
            copy_of,
            b: union.b.clone(),
            q: instance.q.clone(),
            c: vec![0.0; union.num_arcs()],
            kappa: 0.0,
            conflicts: union.conflicts.clone(),
            route_segments,
            num_base_vertices: nv,
            k: union.k,
        }
    }

    pub fn from_reduced(reduced: &ReducedModel) -> Self {
        Self {
            num_vertices: reduced.vertices.len(),
            arcs: reduced.arcs.clone(),
            base_vertex_of: reduced.base_vertex_of.clone(),
            copy_of: reduced.copy_of.clone(),
            b: reduced.b.clone(),
            q: reduced.q.clone(),
            c: reduced.c.clone(),
            kappa: reduced.kappa,
            conflicts: reduced.conflicts.clone(),
            route_segments: reduced.route_segments.clone(),
            num_base_vertices: reduced.num_base_vertices,
            k: reduced.k,
        }
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    /// Quadratic objective value of an arc selection.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let n = self.num_arcs();
        assert_eq!(x.len(), n);
        let mut total = self.kappa;
        for e in 0..n {
            if x[e] == 0.0 {
                continue;
            }
            total += self.c[e] * x[e];
            for f in 0..n {
                if x[f] != 0.0 {
                    total += x[e] * self.q.get(e, f) * x[f];
                }
            }
        }
        total
    }

    /// Dense vertex-arc incidence matrix of the model graph.
    pub fn incidence_dense(&self) -> DMatrix<f64> {
        incidence(self.num_vertices, &self.arcs)
    }

    /// Checks a binary vector against the model constraints by direct
    /// arithmetic: flow conservation at every vertex, at most one selected
    /// arc out of and into every base vertex (counted across copies), and,
    /// when `require_acyclic` is set, no directed cycle within any copy's
    /// selected arcs. Non-binary entries fail the check.
    pub fn check_feasible(&self, x: &[f64], require_acyclic: bool) -> bool {
        let n = self.num_arcs();
        if x.len() != n {
            return false;
        }
        let mut sel = vec![false; n];
        for (e, &v) in x.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            if v == 1.0 {
                sel[e] = true;
            } else {
                return false;
            }
        }

        // Flow conservation in integer arithmetic.
        let mut net = vec![0i64; self.num_vertices];
        for (e, &(u, v)) in self.arcs.iter().enumerate() {
            if sel[e] {
                net[u] += 1;
                net[v] -= 1;
            }
        }
        for (v, &want) in self.b.iter().enumerate() {
            if net[v] != want as i64 {
                return false;
            }
        }

        // Disjointness: across all copies, at most one selected arc leaves
        // each base vertex and at most one enters it.
        let mut out_used = vec![0u32; self.num_base_vertices];
        let mut in_used = vec![0u32; self.num_base_vertices];
        for (e, &(u, v)) in self.arcs.iter().enumerate() {
            if sel[e] {
                out_used[self.base_vertex_of[u]] += 1;
                in_used[self.base_vertex_of[v]] += 1;
            }
        }
        if out_used.iter().any(|&c| c > 1) || in_used.iter().any(|&c| c > 1) {
            return false;
        }

        if require_acyclic {
            for copy in 0..self.k {
                if self.copy_support_has_cycle(&sel, copy) {
                    return false;
                }
            }
        }
        true
    }

    fn copy_support_has_cycle(&self, sel: &[bool], copy: usize) -> bool {
        // Successor map of the selected arcs in this copy; out-degree is at
        // most one per vertex once the disjointness check passed.
        let mut next = vec![usize::MAX; self.num_vertices];
        let mut has_vertex = vec![false; self.num_vertices];
        for (e, &(u, v)) in self.arcs.iter().enumerate() {
            if sel[e] && self.copy_of[u] == copy {
                next[u] = v;
                has_vertex[u] = true;
                has_vertex[v] = true;
            }
        }
        // Walk forward from every vertex; revisiting a vertex on the current
        // walk means a cycle.
        let mut state = vec![0u8; self.num_vertices]; // 0 new, 1 active, 2 done
        for start in 0..self.num_vertices {
            if !has_vertex[start] || state[start] != 0 {
                continue;
            }
            let mut walk = Vec::new();
            let mut v = start;
            loop {
                if state[v] == 1 {
                    return true;
                }
                if state[v] == 2 || next[v] == usize::MAX {
                    break;
                }
                state[v] = 1;
                walk.push(v);
                v = next[v];
            }
            for w in walk {
                state[w] = 2;
            }
            if state[v] == 0 {
                state[v] = 2;
            }
        }
        false
    }
}
