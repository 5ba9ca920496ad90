//! Random planar benchmark instances.
//!
//! Instances start from a rectangular grid whose undirected edges are
//! replaced by anti-parallel arc pairs. Terminals are sampled uniformly,
//! then a trimming pass enforces two structural conditions that remove
//! trivially forced routing near the terminals:
//!
//! 1. sources have no incoming arcs and targets have no outgoing arcs;
//! 2. every source has at least two outgoing arcs and every target at
//!    least two incoming arcs — a terminal whose next step is forced is
//!    advanced along its single incident arc until a branching choice
//!    exists.
//!
//! Trimming only deletes arcs, so the result stays planar. Terminal
//! placements that degenerate (a terminal walks onto another terminal, or
//! loses all incident arcs) or that leave the query infeasible are
//! resampled up to a retry budget. Every returned instance is verified
//! feasible by the exact disjoint-paths oracle.
//!
//! The cost matrix is this suite's own scheme — benchmark sources rarely
//! publish one. Diagonal (linear) costs are always present; each
//! off-diagonal coupling appears with the configured density. All entries
//! are drawn uniformly from the configured range and mirrored exactly, so
//! the matrix is symmetric to the bit.
//!
//! Randomness comes from a portable counter-based generator seeded once
//! and split into three documented streams (topology, terminals, costs),
//! so equal configurations reproduce bit-identical instances anywhere.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{DirectedGraph, GraphError, Instance, UnionModel};
use crate::oracle::VdpQuery;

/// Stream ids for the split RNG. Grid shape, terminal placement, and cost
/// entries draw from independent streams so a retry in one stage never
/// perturbs the others.
const STREAM_TOPOLOGY: u64 = 1;
const STREAM_TERMINALS: u64 = 2;
const STREAM_COSTS: u64 = 3;

/// How many terminal placements to try before giving up on a seed.
pub const DEFAULT_RETRY_BUDGET: usize = 200;

#[derive(Debug, Error)]
pub enum GenError {
    #[error("vertex count {m_v} has no rows x cols factorization with both sides >= 2")]
    NotFactorable { m_v: usize },
    #[error("pair count must be at least 1")]
    ZeroPairs,
    #[error("need {needed} distinct terminals but the grid has only {m_v} vertices")]
    TooManyTerminals { needed: usize, m_v: usize },
    #[error("density {density} outside (0, 1]")]
    BadDensity { density: f64 },
    #[error("cost range [{lo}, {hi}] is not a finite nonempty interval")]
    BadCostRange { lo: f64, hi: f64 },
    #[error("seed {seed}: no feasible terminal placement after {attempts} attempts")]
    RetriesExhausted { seed: u64, attempts: usize },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Parameters for one generated instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenConfig {
    /// Grid vertex count; must factor as rows x cols with both sides >= 2.
    pub m_v: usize,
    /// Number of source-target pairs.
    pub k: usize,
    /// Master seed for all three RNG streams.
    pub seed: u64,
    /// Probability that an off-diagonal cost coupling is present.
    pub density: f64,
    /// Uniform range for cost entries, as (low, high).
    pub cost_range: (f64, f64),
    /// Terminal resampling budget.
    pub retry_budget: usize,
}

impl GenConfig {
    pub fn new(m_v: usize, k: usize, seed: u64) -> Self {
        Self {
            m_v,
            k,
            seed,
            density: 0.5,
            cost_range: (-10.0, 10.0),
            retry_budget: DEFAULT_RETRY_BUDGET,
        }
    }

    fn validate(&self) -> Result<(), GenError> {
        if self.k == 0 {
            return Err(GenError::ZeroPairs);
        }
        if factor_pairs(self.m_v).is_empty() {
            return Err(GenError::NotFactorable { m_v: self.m_v });
        }
        if 2 * self.k > self.m_v {
            return Err(GenError::TooManyTerminals {
                needed: 2 * self.k,
                m_v: self.m_v,
            });
        }
        if !(self.density > 0.0 && self.density <= 1.0) {
            return Err(GenError::BadDensity {
                density: self.density,
            });
        }
        let (lo, hi) = self.cost_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(GenError::BadCostRange { lo, hi });
        }
        Ok(())
    }
}

/// Where an instance came from: enough to regenerate it exactly.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub seed: u64,
    pub config: GenConfig,
    pub generator_version: String,
}

impl Provenance {
    pub fn new(config: &GenConfig) -> Self {
        Self {
            seed: config.seed,
            config: config.clone(),
            generator_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

/// All (rows, cols) factorizations of `m_v` with both sides >= 2, ascending
/// in rows. The empty list means `m_v` is prime or < 4.
fn factor_pairs(m_v: usize) -> Vec<(usize, usize)> {
    (2..=m_v / 2)
        .filter(|&rows| m_v.is_multiple_of(rows) && m_v / rows >= 2)
        .map(|rows| (rows, m_v / rows))
        .collect()
}

/// Rectangular grid digraph: vertex (r, c) has id `r * cols + c`, and every
/// undirected grid edge contributes two anti-parallel arcs. Arc order is
/// deterministic: row-major by vertex, right edge then down edge, forward
/// arc then backward arc.
pub fn grid_graph(rows: usize, cols: usize) -> Result<DirectedGraph, GraphError> {
    let mut arcs = Vec::with_capacity(2 * (rows * (cols - 1) + (rows - 1) * cols));
    for r in 0..rows {
        for c in 0..cols {
            let v = r * cols + c;
            if c + 1 < cols {
                arcs.push((v, v + 1));
                arcs.push((v + 1, v));
            }
            if r + 1 < rows {
                arcs.push((v, v + cols));
                arcs.push((v + cols, v));
            }
        }
    }
    DirectedGraph::new(rows * cols, arcs)
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Outcome of the trimming pass for one terminal placement.
enum Trimmed {
    /// Surviving arcs (original grid order) and possibly-moved pairs.
    Ok {
        arcs: Vec<(usize, usize)>,
        pairs: Vec<(usize, usize)>,
    },
    /// A terminal died or collided; the placement must be resampled.
    Degenerate,
}

/// Enforces the two structural conditions by deleting arcs and advancing
/// forced terminals. Runs to a fixpoint; each sweep either deletes an arc
/// or stops, so the loop is finite. Terminal walks are additionally capped
/// at one full grid traversal each.
fn trim(grid: &DirectedGraph, pairs: &[(usize, usize)]) -> Trimmed {
    let m_v = grid.num_vertices();
    let mut alive = vec![true; grid.num_arcs()];
    let mut sources: Vec<usize> = pairs.iter().map(|&(s, _)| s).collect();
    let mut targets: Vec<usize> = pairs.iter().map(|&(_, t)| t).collect();
    let mut moves = vec![0usize; 2 * pairs.len()];

    let distinct = |sources: &[usize], targets: &[usize]| {
        let mut seen = vec![false; m_v];
        sources.iter().chain(targets.iter()).all(|&v| {
            let fresh = !seen[v];
            seen[v] = true;
            fresh
        })
    };
    if !distinct(&sources, &targets) {
        return Trimmed::Degenerate;
    }

    loop {
        let mut changed = false;

        // Condition 1: no arcs into a source, none out of a target.
        let is_source = |v: usize| sources.contains(&v);
        let is_target = |v: usize| targets.contains(&v);
        for (e, &(tail, head)) in grid.arcs().iter().enumerate() {
            if alive[e] && (is_source(head) || is_target(tail)) {
                alive[e] = false;
                changed = true;
            }
        }

        // Condition 2: advance any terminal whose next step is forced.
        for i in 0..sources.len() {
            let out: Vec<usize> = grid
                .out_arcs(sources[i])
                .iter()
                .copied()
                .filter(|&e| alive[e])
                .collect();
            match out.len() {
                0 => return Trimmed::Degenerate,
                1 => {
                    let e = out[0];
                    alive[e] = false;
                    sources[i] = grid.arc(e).1;
                    moves[i] += 1;
                    if moves[i] > m_v || !distinct(&sources, &targets) {
                        return Trimmed::Degenerate;
                    }
                    changed = true;
                }
                _ => {}
            }
        }
        for i in 0..targets.len() {
            let inc: Vec<usize> = grid
                .in_arcs(targets[i])
                .iter()
                .copied()
                .filter(|&e| alive[e])
                .collect();
            match inc.len() {
                0 => return Trimmed::Degenerate,
                1 => {
                    let e = inc[0];
                    alive[e] = false;
                    targets[i] = grid.arc(e).0;
                    moves[pairs.len() + i] += 1;
                    if moves[pairs.len() + i] > m_v || !distinct(&sources, &targets) {
                        return Trimmed::Degenerate;
                    }
                    changed = true;
                }
                _ => {}
            }
        }

        if !changed {
            break;
        }
    }

    let arcs = grid
        .arcs()
        .iter()
        .enumerate()
        .filter(|&(e, _)| alive[e])
        .map(|(_, &a)| a)
        .collect();
    let pairs = sources.into_iter().zip(targets).collect();
    Trimmed::Ok { arcs, pairs }
}

/// Symmetric cost matrix on the union-arc index space. Diagonal entries are
/// always drawn; each upper-triangle coupling appears with probability
/// `density` and is mirrored exactly. Entries are uniform over `range`.
/// Values come from the cost stream of `seed`, so this reproduces the
/// matrix embedded in [`generate`]'s output for the same configuration.
pub fn cost_matrix(
    union: &UnionModel,
    density: f64,
    range: (f64, f64),
    seed: u64,
) -> Result<DMatrix<f64>, GenError> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(GenError::BadDensity { density });
    }
    let (lo, hi) = range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(GenError::BadCostRange { lo, hi });
    }
    let mut rng = stream_rng(seed, STREAM_COSTS);
    Ok(sample_costs(union.num_arcs(), density, range, &mut rng))
}

/// Draw order is fixed — row-major upper triangle, diagonal first — so the
/// output is a pure function of the RNG state.
fn sample_costs(n: usize, density: f64, (lo, hi): (f64, f64), rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut q = DMatrix::zeros(n, n);
    for p in 0..n {
        q[(p, p)] = rng.gen_range(lo..hi);
        for r in p + 1..n {
            if rng.gen_bool(density) {
                let v = rng.gen_range(lo..hi);
                q[(p, r)] = v;
                q[(r, p)] = v;
            }
        }
    }
    q
}

/// Generates one instance: grid shape from the topology stream, terminals
/// from the terminal stream (resampled on degeneracy or infeasibility, up
/// to the retry budget), costs from the cost stream. Equal configs yield
/// bit-identical instances.
pub fn generate(config: &GenConfig) -> Result<Instance, GenError> {
    config.validate()?;

    let factors = factor_pairs(config.m_v);
    let mut topo_rng = stream_rng(config.seed, STREAM_TOPOLOGY);
    let (rows, cols) = factors[topo_rng.gen_range(0..factors.len())];
    let grid = grid_graph(rows, cols)?;

    let mut term_rng = stream_rng(config.seed, STREAM_TERMINALS);
    let mut ids: Vec<usize> = (0..config.m_v).collect();
    for attempt in 0..config.retry_budget {
        // Partial Fisher-Yates: the first 2k slots become the terminals.
        for i in 0..2 * config.k {
            let j = term_rng.gen_range(i..config.m_v);
            ids.swap(i, j);
        }
        let pairs: Vec<(usize, usize)> = (0..config.k)
            .map(|i| (ids[2 * i], ids[2 * i + 1]))
            .collect();

        let (arcs, pairs) = match trim(&grid, &pairs) {
            Trimmed::Ok { arcs, pairs } => (arcs, pairs),
            Trimmed::Degenerate => continue,
        };
        let graph = DirectedGraph::new(config.m_v, arcs)?;
        let feasible = VdpQuery::new(&graph, pairs.clone())
            .map_err(|_| GenError::RetriesExhausted {
                seed: config.seed,
                attempts: attempt + 1,
            })?
            .feasible();
        if !feasible {
            continue;
        }

        let n = config.k * graph.num_arcs();
        let mut cost_rng = stream_rng(config.seed, STREAM_COSTS);
        let q = sample_costs(n, config.density, config.cost_range, &mut cost_rng);
        return Ok(Instance::new(graph, pairs, q)?);
    }

    Err(GenError::RetriesExhausted {
        seed: config.seed,
        attempts: config.retry_budget,
    })
}
