//! Fixed-arc detection and model reduction. An arc is fixed to zero if no
//! feasible family of disjoint paths can use it, and fixed to one if every
//! feasible family must use it; both are decided exactly with auxiliary
//! vertex-disjoint-paths queries. Fixed arcs are then eliminated from the
//! quadratic model: fixed-one costs fold into a linear term and a constant,
//! and the supply/demand vector absorbs the forced flow.

use crate::graph::{Instance, UnionModel};
use crate::linalg::SymMatrix;
use crate::oracle::{OracleError, VdpQuery};
use std::collections::BTreeSet;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ReduceError {
    #[error("instance has no feasible family of vertex-disjoint paths")]
    InfeasibleInstance,
    #[error("vertex {vertex} keeps nonzero supply/demand but loses all incident arcs")]
    IsolatedDemand { vertex: usize },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

/// Result of arc fixing: union arc ids that are zero (resp. one) in every
/// feasible solution, plus one feasibility witness (per-pair base-arc paths)
/// that later stages reuse to order forced arcs along each route.
#[derive(Debug, Clone)]
pub struct FixedArcs {
    pub zero: Vec<usize>,
    pub one: Vec<usize>,
    pub witness: Vec<Vec<usize>>,
}

/// Union arcs that no feasible solution uses. Arc (u, v) in copy i is dead
/// exactly when splitting pair i into (s_i, u) and (v, t_i) leaves the
/// enlarged disjoint-paths query infeasible. Errors if the instance itself is
/// infeasible.
pub fn fixed_zero_arcs(
    instance: &Instance,
    union: &UnionModel,
) -> Result<Vec<usize>, ReduceError> {
    if !VdpQuery::new(&instance.graph, instance.pairs.clone())?.feasible() {
        return Err(ReduceError::InfeasibleInstance);
    }
    let mut zero = Vec::new();
    for e in 0..union.num_arcs() {
        let copy = union.copy_of_arc(e);
        let (u, v) = instance.graph.arc(union.base_of_arc(e));
        let mut pairs = Vec::with_capacity(instance.pairs.len() + 1);
        for (i, &(s, t)) in instance.pairs.iter().enumerate() {
            if i == copy {
                pairs.push((s, u));
                pairs.push((v, t));
            } else {
                pairs.push((s, t));
            }
        }
        if !VdpQuery::new(&instance.graph, pairs)?.feasible() {
            zero.push(e);
        }
    }
    Ok(zero)
}

/// Union arcs that every feasible solution uses: deleting the base arc from
/// the graph makes the instance infeasible, and all sibling copies of the arc
/// are already fixed to zero (so the forced use lands in this copy).
pub fn fixed_one_arcs(
    instance: &Instance,
    union: &UnionModel,
    zero: &[usize],
) -> Result<Vec<usize>, ReduceError> {
    let zero_set: BTreeSet<usize> = zero.iter().copied().collect();
    // Deleting a base arc affects every copy at once; cache per base arc.
    let mut deletion_kills: Vec<Option<bool>> = vec![None; instance.graph.num_arcs()];
    let mut one = Vec::new();
    for e in 0..union.num_arcs() {
        if zero_set.contains(&e) {
            continue;
        }
        let copy = union.copy_of_arc(e);
        let base = union.base_of_arc(e);
        let siblings_dead = (0..union.k)
            .filter(|&l| l != copy)
            .all(|l| zero_set.contains(&union.union_arc(l, base)));
        if !siblings_dead {
            continue;
        }
        let kills = match deletion_kills[base] {
            Some(v) => v,
            None => {
                let v = !VdpQuery::new(&instance.graph, instance.pairs.clone())?
                    .without_arcs([base])?
                    .feasible();
                deletion_kills[base] = Some(v);
                v
            }
        };
        if kills {
            one.push(e);
        }
    }
    Ok(one)
}

/// Zeros implied by a fixed-one arc (u, v) in copy i: every arc touching u or
/// v in any other copy, every other arc out of u in copy i, and every other
/// arc into v in copy i.
pub fn induced_fixed_zeros(
    instance: &Instance,
    union: &UnionModel,
    one: &[usize],
) -> Vec<usize> {
    let one_set: BTreeSet<usize> = one.iter().copied().collect();
    let graph = &instance.graph;
    let mut induced = BTreeSet::new();
    for &e in one {
        let copy = union.copy_of_arc(e);
        let base = union.base_of_arc(e);
        let (u, v) = graph.arc(base);
        for l in 0..union.k {
            if l == copy {
                continue;
            }
            for w in [u, v] {
                for &f in graph.out_arcs(w).iter().chain(graph.in_arcs(w)) {
                    induced.insert(union.union_arc(l, f));
                }
            }
        }
        for &f in graph.out_arcs(u) {
            if f != base {
                induced.insert(union.union_arc(copy, f));
            }
        }
        for &f in graph.in_arcs(v) {
            if f != base {
                induced.insert(union.union_arc(copy, f));
            }
        }
    }
    debug_assert!(
        induced.is_disjoint(&one_set),
        "a forced arc cannot also be forced to zero on a feasible instance"
    );
    induced.into_iter().collect()
}

/// Full fixing pass: direct zeros, then forced ones, then the zeros induced
/// by the forced ones, merged in a single closure round.
pub fn fix_arcs(instance: &Instance, union: &UnionModel) -> Result<FixedArcs, ReduceError> {
    let witness = VdpQuery::new(&instance.graph, instance.pairs.clone())?
        .witness()
        .ok_or(ReduceError::InfeasibleInstance)?;
    let zero = fixed_zero_arcs(instance, union)?;
    let one = fixed_one_arcs(instance, union, &zero)?;
    let induced = induced_fixed_zeros(instance, union, &one);
    let mut zero_set: BTreeSet<usize> = zero.into_iter().collect();
    zero_set.extend(induced);
    Ok(FixedArcs {
        zero: zero_set.into_iter().collect(),
        one,
        witness,
    })
}

/// The quadratic flow model restricted to the free arcs. Forced arcs fold
/// into the linear cost `c`, the constant `kappa`, and the adjusted
/// supply/demand vector; remaining vertices and arcs are re-indexed densely.
#[derive(Debug, Clone)]
pub struct ReducedModel {
    pub k: usize,
    pub num_base_vertices: usize,
    pub num_initial_arcs: usize,
    /// Union arc id behind each local arc, ascending.
    pub kept_arcs: Vec<usize>,
    /// Union vertex id behind each local vertex, ascending.
    pub vertices: Vec<usize>,
    /// Arcs with local vertex endpoints.
    pub arcs: Vec<(usize, usize)>,
    pub base_vertex_of: Vec<usize>,
    pub copy_of: Vec<usize>,
    pub b: Vec<f64>,
    pub q: SymMatrix,
    pub c: Vec<f64>,
    pub kappa: f64,
    /// Conflict pairs over local arc ids.
    pub conflicts: Vec<(usize, usize)>,
    /// Per copy: ordered (origin, destination) local vertex pairs still to be
    /// routed between the forced arcs.
    pub route_segments: Vec<Vec<(usize, usize)>>,
    pub fixed_zero: Vec<usize>,
    pub fixed_one: Vec<usize>,
}

/// Summary row for reduction reporting.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionStats {
    pub k: usize,
    pub m_v: usize,
    pub initial_arcs: usize,
    pub remaining_arcs: usize,
    pub time_s: f64,
}

/// Builds the reduced model from a fixing pass.
pub fn reduce_model(
    instance: &Instance,
    union: &UnionModel,
    fixed: &FixedArcs,
) -> Result<ReducedModel, ReduceError> {
    let zero_set: BTreeSet<usize> = fixed.zero.iter().copied().collect();
    let one_set: BTreeSet<usize> = fixed.one.iter().copied().collect();
    let kept_arcs: Vec<usize> = (0..union.num_arcs())
        .filter(|e| !zero_set.contains(e) && !one_set.contains(e))
        .collect();

    // Forced arcs hand their flow to the supply/demand vector: the tail of a
    // forced arc gains a demand, its head gains a supply.
    let mut b_full = union.b.clone();
    for &e in &fixed.one {
        let (u, v) = union.arcs[e];
        b_full[u] -= 1.0;
        b_full[v] += 1.0;
    }

    let mut vertex_set = BTreeSet::new();
    for &e in &kept_arcs {
        let (u, v) = union.arcs[e];
        vertex_set.insert(u);
        vertex_set.insert(v);
    }
    for (v, &demand) in b_full.iter().enumerate() {
        if demand != 0.0 && !vertex_set.contains(&v) {
            return Err(ReduceError::IsolatedDemand { vertex: v });
        }
    }
    let vertices: Vec<usize> = vertex_set.into_iter().collect();
    let mut local_of = vec![usize::MAX; union.num_vertices()];
    for (i, &v) in vertices.iter().enumerate() {
        local_of[v] = i;
    }

    let arcs: Vec<(usize, usize)> = kept_arcs
        .iter()
        .map(|&e| {
            let (u, v) = union.arcs[e];
            (local_of[u], local_of[v])
        })
        .collect();
    let base_vertex_of: Vec<usize> = vertices
        .iter()
        .map(|&v| v % union.num_base_vertices)
        .collect();
    let copy_of: Vec<usize> = vertices
        .iter()
        .map(|&v| v / union.num_base_vertices)
        .collect();
    let b: Vec<f64> = vertices.iter().map(|&v| b_full[v]).collect();

    let q = SymMatrix::from_fn(kept_arcs.len(), |i, j| {
        instance.q.get(kept_arcs[i], kept_arcs[j])
    });
    let c: Vec<f64> = kept_arcs
        .iter()
        .map(|&e| {
            fixed
                .one
                .iter()
                .map(|&f| instance.q.get(e, f) + instance.q.get(f, e))
                .sum()
        })
        .collect();
    let mut kappa = 0.0;
    for &e in &fixed.one {
        for &f in &fixed.one {
            kappa += instance.q.get(e, f);
        }
    }

    let mut arc_local = vec![usize::MAX; union.num_arcs()];
    for (i, &e) in kept_arcs.iter().enumerate() {
        arc_local[e] = i;
    }
    let conflicts: Vec<(usize, usize)> = union
        .conflicts
        .iter()
        .filter(|&&(p, q)| arc_local[p] != usize::MAX && arc_local[q] != usize::MAX)
        .map(|&(p, q)| (arc_local[p], arc_local[q]))
        .collect();

    // Split each witness path at its forced arcs: the gaps between forced
    // arcs are the route segments the reduced model still has to connect.
    // Forced arcs appear in the same position in every feasible solution, so
    // any witness yields the canonical segment order.
    let mut route_segments = Vec::with_capacity(union.k);
    for (copy, path) in fixed.witness.iter().enumerate() {
        let (s, t) = instance.pairs[copy];
        let mut segments = Vec::new();
        let mut origin = union.union_vertex(copy, s);
        for &base in path {
            let e = union.union_arc(copy, base);
            if one_set.contains(&e) {
                let (tail, head) = union.arcs[e];
                if origin != tail {
                    segments.push((local_of[origin], local_of[tail]));
                }
                origin = head;
            }
        }
        let dest = union.union_vertex(copy, t);
        if origin != dest {
            segments.push((local_of[origin], local_of[dest]));
        }
        debug_assert!(
            segments.iter().all(|&(o, d)| o != usize::MAX && d != usize::MAX),
            "segment endpoints must stay in the reduced vertex set"
        );
        route_segments.push(segments);
    }

    Ok(ReducedModel {
        k: union.k,
        num_base_vertices: union.num_base_vertices,
        num_initial_arcs: union.num_arcs(),
        kept_arcs,
        vertices,
        arcs,
        base_vertex_of,
        copy_of,
        b,
        q,
        c,
        kappa,
        conflicts,
        route_segments,
        fixed_zero: fixed.zero.clone(),
        fixed_one: fixed.one.clone(),
    })
}

impl ReducedModel {
    pub fn num_arcs(&self) -> usize {
        self.arcs.len()
    }

    /// Extends a reduced solution to the union arc space: kept arcs take
    /// their values, forced arcs take theirs.
    pub fn lift(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.kept_arcs.len());
        let mut full = vec![0.0; self.num_initial_arcs];
        for (i, &e) in self.kept_arcs.iter().enumerate() {
            full[e] = x[i];
        }
        for &e in &self.fixed_one {
            full[e] = 1.0;
        }
        full
    }

    /// Restricts a union-space solution to the kept arcs.
    pub fn restrict(&self, x_full: &[f64]) -> Vec<f64> {
        assert_eq!(x_full.len(), self.num_initial_arcs);
        self.kept_arcs.iter().map(|&e| x_full[e]).collect()
    }

    pub fn stats(&self, time_s: f64) -> ReductionStats {
        ReductionStats {
            k: self.k,
            m_v: self.num_base_vertices,
            initial_arcs: self.num_initial_arcs,
            remaining_arcs: self.arcs.len(),
            time_s,
        }
    }
}
