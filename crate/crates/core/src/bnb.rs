//! Branch-and-bound driver over the relaxation bounds. Nodes carry partial
//! binary fixings of the lifted coordinates; each is bounded by the
//! operator-splitting solver (warm-started from its parent), rounded to a
//! feasible incumbent when possible, and split on the most fractional
//! diagonal entry. Fixing an arc to one immediately fixes all its conflict
//! partners to zero, which keeps every node's box consistent.
//!
//! The search minimizes over all binary vectors satisfying flow
//! conservation and the per-base-vertex counting constraints; selected arc
//! sets may contain directed cycles, which the rounding heuristic never
//! produces but exhaustive branching still reaches through leaf evaluation.

use crate::admm::{solve_admm, upper_bound, AdmmParams, NodeFixings};
use crate::model::FlowModel;
use crate::sdp::SdpRelaxation;
use nalgebra::DMatrix;
use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct BnbParams {
    /// Terminate once the relative gap falls below this.
    pub gap_tol: f64,
    /// Prune nodes whose bound is within this of the incumbent.
    pub prune_tol: f64,
    /// Wall-clock budget in seconds.
    pub time_limit: Option<f64>,
    /// Worker threads; determinism is only guaranteed with one.
    pub threads: usize,
    /// Record per-node fixings and bounds for audits.
    pub record_nodes: bool,
    /// Base parameters for each node's relaxation solve (the cutoff field is
    /// overwritten per node from the current incumbent).
    pub admm: AdmmParams,
    /// Node-expansion budget for each rounding attempt.
    pub rounding_budget: usize,
}

impl Default for BnbParams {
    fn default() -> Self {
        Self {
            gap_tol: 1e-6,
            prune_tol: 1e-6,
            time_limit: None,
            threads: 1,
            record_nodes: false,
            admm: AdmmParams::default(),
            rounding_budget: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnbStatus {
    /// Incumbent proved optimal within the gap tolerance.
    Optimal,
    /// Ran out of time; bounds are still valid.
    TimeLimit,
    /// The search space holds no feasible solution.
    Infeasible,
}

/// One bounded node, for auditing the search tree.
#[derive(Debug, Clone)]
pub struct NodeRecord {
    /// Lifted-coordinate fixings active at the node.
    pub fixings: Vec<(usize, f64)>,
    /// The node's certified lower bound over completions of those fixings.
    pub lower: f64,
    pub depth: usize,
}

#[derive(Debug, Clone)]
pub struct BnbResult {
    pub status: BnbStatus,
    pub incumbent_value: Option<f64>,
    pub incumbent: Option<Vec<f64>>,
    /// Certified lower bound on the optimum.
    pub lower_bound: f64,
    /// Relative gap between incumbent and lower bound.
    pub gap: f64,
    /// Nodes popped and processed.
    pub nodes: usize,
    pub time_s: f64,
    pub records: Vec<NodeRecord>,
}

/// |ub - lb| / max(|ub|, 1e-8); zero when both bounds coincide.
pub fn relative_gap(ub: f64, lb: f64) -> f64 {
    (ub - lb).abs() / ub.abs().max(1e-8)
}

struct Node {
    fixings: NodeFixings,
    parent_lower: f64,
    depth: usize,
    warm: Option<Arc<(DMatrix<f64>, DMatrix<f64>)>>,
}

struct HeapEntry {
    key: f64,
    seq: u64,
    node: Node,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    // BinaryHeap is a max-heap; invert so the smallest bound (FIFO on ties)
    // pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Atomic f64 storing the incumbent value (monotone decreasing).
struct AtomicF64 {
    bits: AtomicU64,
}

impl AtomicF64 {
    fn new(v: f64) -> Self {
        Self {
            bits: AtomicU64::new(v.to_bits()),
        }
    }

    fn get(&self) -> f64 {
        f64::from_bits(self.bits.load(AtomicOrdering::SeqCst))
    }

    /// Lowers the stored value to `v` if `v` is smaller; returns whether the
    /// update won.
    fn fetch_min(&self, v: f64) -> bool {
        let mut cur = self.bits.load(AtomicOrdering::SeqCst);
        loop {
            if v >= f64::from_bits(cur) {
                return false;
            }
            match self.bits.compare_exchange(
                cur,
                v.to_bits(),
                AtomicOrdering::SeqCst,
                AtomicOrdering::SeqCst,
            ) {
                Ok(_) => return true,
                Err(actual) => cur = actual,
            }
        }
    }
}

struct Shared<'a> {
    model: &'a FlowModel,
    sdp: &'a SdpRelaxation,
    params: &'a BnbParams,
    start: Instant,
    heap: Mutex<HeapState>,
    wake: Condvar,
    out_of_time: AtomicBool,
    incumbent_value: AtomicF64,
    incumbent: Mutex<Option<Vec<f64>>>,
    /// Smallest bound among pruned or fathomed subtrees (the frontier part
    /// that no longer sits in the heap).
    settled_lower: AtomicF64,
    nodes: AtomicU64,
    seq: AtomicU64,
    records: Mutex<Vec<NodeRecord>>,
}

struct HeapState {
    heap: BinaryHeap<HeapEntry>,
    active: usize,
}

impl Shared<'_> {
    fn time_left(&self) -> bool {
        match self.params.time_limit {
            Some(limit) => self.start.elapsed().as_secs_f64() < limit,
            None => true,
        }
    }

    fn push(&self, node: Node) {
        let seq = self.seq.fetch_add(1, AtomicOrdering::SeqCst);
        let key = node.parent_lower;
        let mut state = self.heap.lock().unwrap();
        state.heap.push(HeapEntry { key, seq, node });
        drop(state);
        self.wake.notify_one();
    }

    fn settle(&self, lower: f64) {
        self.settled_lower.fetch_min(lower);
    }

    fn offer_incumbent(&self, x: Vec<f64>, value: f64) {
        if self.incumbent_value.fetch_min(value) {
            *self.incumbent.lock().unwrap() = Some(x);
        }
    }

    fn record(&self, fixings: &NodeFixings, lower: f64, depth: usize) {
        if self.params.record_nodes {
            self.records.lock().unwrap().push(NodeRecord {
                fixings: fixings.iter().collect(),
                lower,
                depth,
            });
        }
    }
}

/// Quick consistency screen for a node: the one-fixed arcs must not collide
/// on any base vertex, and every route segment's destination must remain
/// reachable from its origin through arcs not fixed to zero. Nodes failing
/// either test have no feasible completion.
fn node_has_hope(model: &FlowModel, fixings: &NodeFixings) -> bool {
    let nb = model.num_base_vertices;
    let mut out_used = vec![0u8; nb];
    let mut in_used = vec![0u8; nb];
    for (arc, v) in fixings.arcs() {
        if v != 1.0 {
            continue;
        }
        let (u, w) = model.arcs[arc];
        out_used[model.base_vertex_of[u]] += 1;
        in_used[model.base_vertex_of[w]] += 1;
    }
    if out_used.iter().chain(in_used.iter()).any(|&c| c > 1) {
        return false;
    }

    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); model.num_vertices];
    for (a, &(u, w)) in model.arcs.iter().enumerate() {
        if fixings.value(a + 1) != Some(0.0) {
            adj[u].push(w);
        }
    }
    for segs in &model.route_segments {
        for &(s, t) in segs {
            let mut seen = vec![false; model.num_vertices];
            let mut queue = std::collections::VecDeque::from([s]);
            seen[s] = true;
            let mut found = s == t;
            while let Some(v) = queue.pop_front() {
                if found {
                    break;
                }
                for &w in &adj[v] {
                    if !seen[w] {
                        seen[w] = true;
                        if w == t {
                            found = true;
                            break;
                        }
                        queue.push_back(w);
                    }
                }
            }
            if !found {
                return false;
            }
        }
    }
    true
}

fn process_node(shared: &Shared<'_>, node: Node) {
    let model = shared.model;
    let sdp = shared.sdp;
    let params = shared.params;
    let n = model.num_arcs();
    shared.nodes.fetch_add(1, AtomicOrdering::SeqCst);

    let incumbent = shared.incumbent_value.get();
    if node.parent_lower >= incumbent - params.prune_tol {
        shared.settle(node.parent_lower);
        return;
    }
    if !node_has_hope(model, &node.fixings) {
        shared.record(&node.fixings, f64::INFINITY, node.depth);
        return;
    }

    // Fully fixed: evaluate the completion exactly.
    if node.fixings.len() == n {
        let x: Vec<f64> = (0..n)
            .map(|e| node.fixings.value(e + 1).unwrap())
            .collect();
        if model.check_feasible(&x, false) {
            let value = model.objective(&x);
            shared.record(&node.fixings, value, node.depth);
            shared.offer_incumbent(x, value);
        } else {
            shared.record(&node.fixings, f64::INFINITY, node.depth);
        }
        return;
    }

    let mut admm = params.admm.clone();
    if incumbent.is_finite() {
        admm.cutoff = Some(incumbent - params.prune_tol);
    }
    let warm = node.warm.as_deref().map(|(y, z)| (y, z));
    let sol = solve_admm(sdp, &node.fixings, &admm, warm);
    shared.record(&node.fixings, sol.lower, node.depth);

    // Rounding: weights from the relaxation diagonal.
    let weights: Vec<f64> = (0..n)
        .map(|e| sol.y[(e + 1, e + 1)].clamp(0.0, 1.0))
        .collect();
    if let Some(rounded) = upper_bound(model, &node.fixings, &weights, params.rounding_budget) {
        shared.offer_incumbent(rounded.x, rounded.value);
    }

    let incumbent = shared.incumbent_value.get();
    if sol.lower >= incumbent - params.prune_tol {
        shared.settle(sol.lower);
        return;
    }

    // Branch on the most fractional unfixed diagonal entry (ties: lowest).
    let mut branch_p = None;
    let mut best_score = -1.0;
    for p in 1..=n {
        if node.fixings.is_fixed(p) {
            continue;
        }
        let t = sol.y[(p, p)].clamp(0.0, 1.0);
        let score = t.min(1.0 - t);
        if score > best_score + 1e-15 {
            best_score = score;
            branch_p = Some(p);
        }
    }
    let Some(p) = branch_p else {
        // Every coordinate is fixed or none is branchable; nothing to do.
        shared.settle(sol.lower);
        return;
    };

    let warm = Arc::new((sol.y, sol.z));

    let mut zero = node.fixings.clone();
    zero.fix(p, 0.0);
    shared.push(Node {
        fixings: zero,
        parent_lower: sol.lower,
        depth: node.depth + 1,
        warm: Some(Arc::clone(&warm)),
    });

    let mut one = node.fixings.clone();
    one.fix(p, 1.0);
    for &(a, b) in &sdp.conflicts {
        if a == p && !one.is_fixed(b) {
            one.fix(b, 0.0);
        } else if b == p && !one.is_fixed(a) {
            one.fix(a, 0.0);
        }
    }
    shared.push(Node {
        fixings: one,
        parent_lower: sol.lower,
        depth: node.depth + 1,
        warm: Some(warm),
    });
}

fn worker(shared: &Shared<'_>) {
    loop {
        let mut state = shared.heap.lock().unwrap();
        let node = loop {
            if !shared.time_left() {
                shared.out_of_time.store(true, AtomicOrdering::SeqCst);
            }
            if shared.out_of_time.load(AtomicOrdering::SeqCst) {
                shared.wake.notify_all();
                return;
            }
            if let Some(entry) = state.heap.pop() {
                state.active += 1;
                break entry.node;
            }
            if state.active == 0 {
                shared.wake.notify_all();
                return;
            }
            let (next, timeout) = shared
                .wake
                .wait_timeout(state, std::time::Duration::from_millis(20))
                .unwrap();
            state = next;
            let _ = timeout;
        };
        drop(state);

        process_node(shared, node);

        let mut state = shared.heap.lock().unwrap();
        state.active -= 1;
        if state.heap.is_empty() && state.active == 0 {
            shared.wake.notify_all();
        }
    }
}

/// Runs branch and bound on a model and its relaxation. The relaxation must
/// have been built from the same model.
pub fn solve_bnb(model: &FlowModel, sdp: &SdpRelaxation, params: &BnbParams) -> BnbResult {
    assert_eq!(sdp.dim, model.num_arcs() + 1, "relaxation/model mismatch");
    let start = Instant::now();
    let shared = Shared {
        model,
        sdp,
        params,
        start,
        heap: Mutex::new(HeapState {
            heap: BinaryHeap::new(),
            active: 0,
        }),
        wake: Condvar::new(),
        out_of_time: AtomicBool::new(false),
        incumbent_value: AtomicF64::new(f64::INFINITY),
        incumbent: Mutex::new(None),
        settled_lower: AtomicF64::new(f64::INFINITY),
        nodes: AtomicU64::new(0),
        seq: AtomicU64::new(0),
        records: Mutex::new(Vec::new()),
    };

    shared.push(Node {
        fixings: NodeFixings::new(),
        parent_lower: f64::NEG_INFINITY,
        depth: 0,
        warm: None,
    });

    let threads = params.threads.max(1);
    if threads == 1 {
        worker(&shared);
    } else {
        std::thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(|| worker(&shared));
            }
        });
    }

    let time_s = start.elapsed().as_secs_f64();
    let incumbent_value = {
        let v = shared.incumbent_value.get();
        v.is_finite().then_some(v)
    };
    let incumbent = shared.incumbent.lock().unwrap().take();
    let heap_lower = shared
        .heap
        .lock()
        .unwrap()
        .heap
        .iter()
        .map(|e| e.key)
        .fold(f64::INFINITY, f64::min);
    let settled = shared.settled_lower.get();
    let timed_out = shared.out_of_time.load(AtomicOrdering::SeqCst);

    let mut lower = heap_lower.min(settled);
    if let Some(v) = incumbent_value {
        lower = lower.min(v);
    }

    let (status, gap) = match (incumbent_value, timed_out) {
        (Some(v), _) => {
            let gap = relative_gap(v, lower);
            if !timed_out || gap <= params.gap_tol {
                (BnbStatus::Optimal, gap)
            } else {
                (BnbStatus::TimeLimit, gap)
            }
        }
        (None, true) => (BnbStatus::TimeLimit, f64::INFINITY),
        (None, false) => (BnbStatus::Infeasible, f64::INFINITY),
    };

    BnbResult {
        status,
        incumbent_value,
        incumbent,
        lower_bound: lower,
        gap,
        nodes: shared.nodes.load(AtomicOrdering::SeqCst) as usize,
        time_s,
        records: shared.records.into_inner().unwrap(),
    }
}
