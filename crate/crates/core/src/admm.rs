//! Operator-splitting solver for the facially reduced relaxation, plus the
//! safe lower bound extracted from its dual iterate and a routing heuristic
//! that rounds the relaxation to feasible binary solutions.
//!
//! The relaxation splits into two easy blocks: R ranges over the PSD cone of
//! the reduced face, and Y ranges over a box-like polytope that couples each
//! diagonal entry to its first-row entry (both equal some t in [0, 1]),
//! pins conflict entries to zero, and honors branch-and-bound fixings. The
//! augmented-Lagrangian iteration alternates a projection onto each set and
//! a scaled multiplier update.
//!
//! Any multiplier Z whose compression onto the face is negative semidefinite
//! yields a bound: feasible Y satisfy <Z', Y> <= 0, so minimizing
//! <Q + Z', Y> over the box alone (a separable closed form) under-estimates
//! the SDP optimum, and hence the binary optimum. This holds at every
//! iterate, converged or not, which keeps early stopping safe.

use crate::linalg::psd_project_dense;
use crate::model::FlowModel;
use crate::sdp::SdpRelaxation;
use nalgebra::DMatrix;
use std::collections::{BTreeMap, HashSet};

/// Binary values imposed on lifted coordinates (index p >= 1 is arc p - 1).
/// Branching fixes a coordinate to 0 or 1; the box projection and the
/// separable bound both honor the fixings, so node bounds remain valid for
/// every completion consistent with them.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeFixings {
    fixed: BTreeMap<usize, f64>,
}

impl NodeFixings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fixes lifted coordinate `p` (>= 1) to 0.0 or 1.0.
    pub fn fix(&mut self, p: usize, value: f64) {
        assert!(p >= 1, "the homogenization coordinate cannot be fixed");
        assert!(
            value == 0.0 || value == 1.0,
            "fixings must be binary, got {value}"
        );
        self.fixed.insert(p, value);
    }

    pub fn value(&self, p: usize) -> Option<f64> {
        self.fixed.get(&p).copied()
    }

    pub fn is_fixed(&self, p: usize) -> bool {
        self.fixed.contains_key(&p)
    }

    pub fn len(&self) -> usize {
        self.fixed.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fixed.is_empty()
    }

    /// Iterates over (lifted index, value) pairs in index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.fixed.iter().map(|(&p, &v)| (p, v))
    }

    /// Iterates over (arc index, value) pairs in index order.
    pub fn arcs(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.fixed.iter().map(|(&p, &v)| (p - 1, v))
    }
}

/// Tuning knobs for the splitting iteration.
#[derive(Debug, Clone)]
pub struct AdmmParams {
    /// Augmented-Lagrangian penalty.
    pub beta: f64,
    /// Multiplier step scale; convergence requires rho in (0, (1+sqrt(5))/2).
    pub rho: f64,
    /// Relative primal/dual residual target.
    pub tol: f64,
    pub max_iters: usize,
    /// Rebalance the penalty when one residual lags the other tenfold.
    pub adaptive: bool,
    /// Stop as soon as the extracted lower bound reaches this value (the
    /// node is then prunable and further effort is wasted).
    pub cutoff: Option<f64>,
    /// Iterations between bound extractions for cutoff checks.
    pub check_period: usize,
    /// Emit a debug log line every this many iterations (0 = never).
    pub log_every: usize,
}

impl Default for AdmmParams {
    fn default() -> Self {
        Self {
            beta: 1.0,
            rho: 1.6,
            tol: 1e-5,
            max_iters: 20000,
            adaptive: true,
            cutoff: None,
            check_period: 200,
            log_every: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmmStatus {
    /// Primal and dual residuals reached the tolerance.
    Converged,
    /// The extracted bound crossed the caller's cutoff; iteration stopped
    /// early with a valid (prunable) bound.
    CutoffReached,
    /// The iteration budget ran out first; the reported bound is still safe.
    IterationCap,
}

/// Final iterates and diagnostics of one relaxation solve.
#[derive(Debug, Clone)]
pub struct AdmmSolution {
    pub y: DMatrix<f64>,
    pub z: DMatrix<f64>,
    pub status: AdmmStatus,
    pub iters: usize,
    pub primal_res: f64,
    pub dual_res: f64,
    /// Best safe lower bound extracted during the run.
    pub lower: f64,
    /// <Q, Y> at the final iterate (diagnostic; not a bound).
    pub relaxed_objective: f64,
}

/// Runs the splitting iteration. `warm` seeds (Y, Z) from a parent node;
/// fixed entries are re-projected immediately, so stale values are harmless.
pub fn solve_admm(
    sdp: &SdpRelaxation,
    fixings: &NodeFixings,
    params: &AdmmParams,
    warm: Option<(&DMatrix<f64>, &DMatrix<f64>)>,
) -> AdmmSolution {
    let n1 = sdp.dim;
    let v = &sdp.v_basis;
    let r = v.ncols();
    let q = sdp.q_lifted.as_dmatrix();
    let conflict_set: HashSet<(usize, usize)> = sdp.conflicts.iter().copied().collect();

    let mut beta = params.beta.max(1e-12);
    let (mut y, mut z) = match warm {
        Some((wy, wz)) => (wy.clone(), wz.clone()),
        None => (DMatrix::zeros(n1, n1), DMatrix::zeros(n1, n1)),
    };
    let y_seed = y.clone();
    apply_box(&mut y, &y_seed, fixings, &conflict_set);

    let mut r_mat = DMatrix::<f64>::zeros(r, r);
    let mut r_prev = DMatrix::<f64>::zeros(r, r);
    let mut face = DMatrix::<f64>::zeros(n1, n1);
    let mut vt_m = DMatrix::<f64>::zeros(r, n1);
    let mut scratch = DMatrix::<f64>::zeros(n1, n1);
    let mut y_hat = DMatrix::<f64>::zeros(n1, n1);

    let mut best_lower = f64::NEG_INFINITY;
    let mut primal_res = f64::INFINITY;
    let mut dual_res = f64::INFINITY;
    let mut status = AdmmStatus::IterationCap;
    let mut iters = params.max_iters;

    for it in 0..params.max_iters {
        // R-update: project the face compression of Y + Z / beta.
        scratch.copy_from(&z);
        scratch.unscale_mut(beta);
        scratch += &y;
        vt_m.gemm_tr(1.0, v, &scratch, 0.0);
        r_prev.copy_from(&r_mat);
        r_mat.gemm(1.0, &vt_m, v, 0.0);
        r_mat = psd_project_dense(&r_mat);

        // face = V R V^T.
        vt_m.gemm(1.0, &r_mat, &v.transpose(), 0.0);
        face.gemm(1.0, v, &vt_m, 0.0);

        // Y-update: box projection of V R V^T - (Q + Z) / beta.
        y_hat.copy_from(&face);
        scratch.copy_from(q);
        scratch += &z;
        scratch.unscale_mut(beta);
        y_hat -= &scratch;
        apply_box(&mut y, &y_hat, fixings, &conflict_set);

        // Z-update on the scaled residual.
        scratch.copy_from(&y);
        scratch -= &face;
        let primal_norm = scratch.norm();
        scratch.scale_mut(params.rho * beta);
        z += &scratch;

        primal_res = primal_norm / (1.0 + y.norm());
        dual_res = beta * (&r_mat - &r_prev).norm() / (1.0 + z.norm());

        if params.log_every > 0 && it % params.log_every == 0 {
            log::debug!(
                "iter {it}: primal {primal_res:.3e} dual {dual_res:.3e} beta {beta:.3e}"
            );
        }

        let converged = primal_res <= params.tol && dual_res <= params.tol;
        let check_bound = converged
            || (params.check_period > 0 && it % params.check_period == params.check_period - 1);
        if check_bound {
            let z_proj = dual_project(sdp, &z);
            best_lower = best_lower.max(lower_bound(sdp, fixings, &z_proj));
            if let Some(cutoff) = params.cutoff {
                if best_lower >= cutoff && !converged {
                    status = AdmmStatus::CutoffReached;
                    iters = it + 1;
                    break;
                }
            }
        }
        if converged {
            status = AdmmStatus::Converged;
            iters = it + 1;
            break;
        }

        if params.adaptive && it % 50 == 49 {
            if primal_res > 10.0 * dual_res && beta < 1e3 {
                beta *= 2.0;
            } else if dual_res > 10.0 * primal_res && beta > 1e-3 {
                beta *= 0.5;
            }
        }
    }

    // A final extraction in case the loop never hit a check point.
    let z_proj = dual_project(sdp, &z);
    best_lower = best_lower.max(lower_bound(sdp, fixings, &z_proj));

    let relaxed_objective = (q * &y).trace();
    AdmmSolution {
        y,
        z,
        status,
        iters,
        primal_res,
        dual_res,
        lower: best_lower,
        relaxed_objective,
    }
}

/// Projection onto the box polytope: Y_00 = 1; each unfixed coordinate's
/// diagonal and first-row entries collapse to a common t in [0, 1] (the
/// least-squares value clip((Yhat_pp + 2 Yhat_0p) / 3)); fixed coordinates
/// take their value, with a zero fixing clearing its whole row and column;
/// conflict entries vanish; remaining off-diagonal entries clip to [0, 1].
fn apply_box(
    y: &mut DMatrix<f64>,
    y_hat: &DMatrix<f64>,
    fixings: &NodeFixings,
    conflicts: &HashSet<(usize, usize)>,
) {
    let n1 = y_hat.nrows();
    y[(0, 0)] = 1.0;
    for p in 1..n1 {
        let t = match fixings.value(p) {
            Some(v) => v,
            None => coupled_box_entry(y_hat[(p, p)], y_hat[(0, p)]),
        };
        y[(p, p)] = t;
        y[(0, p)] = t;
        y[(p, 0)] = t;
    }
    for p in 1..n1 {
        for q in (p + 1)..n1 {
            let v = if conflicts.contains(&(p, q))
                || fixings.value(p) == Some(0.0)
                || fixings.value(q) == Some(0.0)
            {
                0.0
            } else {
                y_hat[(p, q)].clamp(0.0, 1.0)
            };
            y[(p, q)] = v;
            y[(q, p)] = v;
        }
    }
}

/// Least-squares value of the common entry t shared by Y_pp, Y_0p, and Y_p0
/// for an unfixed coordinate: the minimizer of (t - y_pp)^2 + 2 (t - y_0p)^2
/// over [0, 1], i.e. clip((y_pp + 2 y_0p) / 3).
pub fn coupled_box_entry(y_pp: f64, y_0p: f64) -> f64 {
    ((y_pp + 2.0 * y_0p) / 3.0).clamp(0.0, 1.0)
}

/// Shifts a multiplier onto the dual-feasible side: the returned Z' has
/// negative semidefinite face compression V^T Z' V, so <Z', Y> <= 0 for every
/// feasible Y and Z' may enter the separable bound.
pub fn dual_project(sdp: &SdpRelaxation, z: &DMatrix<f64>) -> DMatrix<f64> {
    let v = &sdp.v_basis;
    let compressed = v.transpose() * z * v;
    let positive_part = psd_project_dense(&compressed);
    z - v * positive_part * v.transpose()
}

/// Separable minimum of <Q + Z', Y> over the box polytope with fixings: a
/// valid lower bound on the binary optimum whenever V^T Z' V is negative
/// semidefinite (see [`dual_project`]). Every completion consistent with the
/// fixings lifts into the box, so the bound stays valid at any node.
pub fn lower_bound(sdp: &SdpRelaxation, fixings: &NodeFixings, z_proj: &DMatrix<f64>) -> f64 {
    let n1 = sdp.dim;
    let q = sdp.q_lifted.as_dmatrix();
    let c = |p: usize, r: usize| q[(p, r)] + z_proj[(p, r)];
    let conflict_set: HashSet<(usize, usize)> = sdp.conflicts.iter().copied().collect();

    let mut total = c(0, 0);
    for p in 1..n1 {
        let coef = c(p, p) + 2.0 * c(0, p);
        total += match fixings.value(p) {
            Some(v) => v * coef,
            None => coef.min(0.0),
        };
    }
    for p in 1..n1 {
        for r in (p + 1)..n1 {
            if conflict_set.contains(&(p, r))
                || fixings.value(p) == Some(0.0)
                || fixings.value(r) == Some(0.0)
            {
                continue;
            }
            total += 2.0 * c(p, r).min(0.0);
        }
    }
    total
}

/// A feasible binary solution produced by rounding, with its objective.
#[derive(Debug, Clone)]
pub struct RoundedSolution {
    pub x: Vec<f64>,
    pub value: f64,
}

/// Rounds relaxation weights to a feasible solution by exact depth-first
/// routing of every route segment, visiting high-weight arcs first. Arcs
/// fixed to zero are unavailable; arcs fixed to one must appear in the
/// result. Search is capped at `budget` node expansions and prunes on the
/// admissible estimate "collected weight plus all positive unused weights";
/// the best completion by weight is evaluated through the exact objective,
/// as is every intermediate improvement found along the way. Only
/// cycle-free solutions are reachable this way, which is fine for an upper
/// bound: optima that need cycles are still caught by exhausted branching.
pub fn upper_bound(
    model: &FlowModel,
    fixings: &NodeFixings,
    weights: &[f64],
    budget: usize,
) -> Option<RoundedSolution> {
    assert_eq!(weights.len(), model.num_arcs());
    let segments: Vec<(usize, usize)> = model
        .route_segments
        .iter()
        .flatten()
        .copied()
        .collect();
    if segments.is_empty() {
        // Fully decided model: the empty solution, if consistent.
        let x = vec![0.0; model.num_arcs()];
        if fixings.arcs().all(|(_, v)| v == 0.0) && model.check_feasible(&x, false) {
            return Some(RoundedSolution {
                value: model.objective(&x),
                x,
            });
        }
        return None;
    }

    let mut out_arcs: Vec<Vec<usize>> = vec![Vec::new(); model.num_vertices];
    for (a, &(u, _)) in model.arcs.iter().enumerate() {
        out_arcs[u].push(a);
    }
    let mut search = Rounding {
        model,
        weights,
        out_arcs,
        forbidden: vec![false; model.num_arcs()],
        required: vec![false; model.num_arcs()],
        used: vec![false; model.num_arcs()],
        out_used: vec![0u8; model.num_base_vertices],
        in_used: vec![0u8; model.num_base_vertices],
        segments,
        expansions: 0,
        budget,
        best_weight: f64::NEG_INFINITY,
        best: None,
    };
    for (arc, v) in fixings.arcs() {
        if v == 0.0 {
            search.forbidden[arc] = true;
        } else {
            search.required[arc] = true;
        }
    }
    let optimistic: f64 = weights
        .iter()
        .enumerate()
        .filter(|(a, _)| !search.forbidden[*a])
        .map(|(_, w)| w.max(0.0))
        .sum();
    search.route_segment(0, None, 0.0, optimistic);
    search.best.map(|(x, value)| RoundedSolution { x, value })
}

struct Rounding<'a> {
    model: &'a FlowModel,
    weights: &'a [f64],
    out_arcs: Vec<Vec<usize>>,
    forbidden: Vec<bool>,
    required: Vec<bool>,
    used: Vec<bool>,
    out_used: Vec<u8>,
    in_used: Vec<u8>,
    segments: Vec<(usize, usize)>,
    expansions: usize,
    budget: usize,
    best_weight: f64,
    best: Option<(Vec<f64>, f64)>,
}

impl Rounding<'_> {
    /// Depth-first routing: `seg` indexes the segment being routed, `at` is
    /// the current vertex within it (None = not started), `collected` is the
    /// weight gathered so far, and `slack` the admissible estimate of what
    /// unused arcs could still add.
    fn route_segment(&mut self, seg: usize, at: Option<usize>, collected: f64, slack: f64) {
        if self.expansions >= self.budget {
            return;
        }
        self.expansions += 1;
        if collected + slack <= self.best_weight {
            return;
        }
        if seg == self.segments.len() {
            if self.required.iter().zip(&self.used).any(|(&r, &u)| r && !u) {
                return;
            }
            let x: Vec<f64> = self.used.iter().map(|&u| if u { 1.0 } else { 0.0 }).collect();
            if !self.model.check_feasible(&x, false) {
                return;
            }
            let value = self.model.objective(&x);
            self.best_weight = self.best_weight.max(collected);
            match &self.best {
                Some((_, best_value)) if *best_value <= value => {}
                _ => self.best = Some((x, value)),
            }
            return;
        }
        let (start, end) = self.segments[seg];
        let here = at.unwrap_or(start);
        if here == end {
            // Segment complete; abandoning a copy with unused required arcs
            // cannot be repaired later if those arcs belong to this copy's
            // graph region, but requiredness is re-checked globally at the
            // leaf, so simply advance.
            self.route_segment(seg + 1, None, collected, slack);
            return;
        }

        let mut candidates: Vec<usize> = self.out_arcs[here].clone();
        candidates.retain(|&a| !self.forbidden[a] && !self.used[a]);
        candidates.sort_by(|&a, &b| {
            self.weights[b]
                .total_cmp(&self.weights[a])
                .then(a.cmp(&b))
        });
        for arc in candidates {
            let (u, vtx) = self.model.arcs[arc];
            debug_assert_eq!(u, here);
            let bu = self.model.base_vertex_of[u];
            let bv = self.model.base_vertex_of[vtx];
            if self.out_used[bu] > 0 || self.in_used[bv] > 0 {
                continue;
            }
            self.used[arc] = true;
            self.out_used[bu] += 1;
            self.in_used[bv] += 1;
            let gain = self.weights[arc];
            let slack_next = slack - gain.max(0.0);
            self.route_segment(seg, Some(vtx), collected + gain, slack_next);
            self.used[arc] = false;
            self.out_used[bu] -= 1;
            self.in_used[bv] -= 1;
        }
    }
}
