//! JSON persistence for instances, reduced models, solver results, and
//! certificate reports, plus atomic file writes.
//!
//! Schemas are stable, versioned by construction (append-only), and shared
//! with the command-line tools:
//!
//! * instance: `{"num_vertices", "arcs": [[tail, head], ...], "pairs":
//!   [[s, t], ...], "Q": {...}, "provenance"?}` — arc order defines arc ids;
//! * cost matrices: `{"format": "dense", "data": [[...], ...]}` or
//!   `{"format": "coo", "dim", "entries": [[i, j, v], ...]}`. Writers pick
//!   whichever is smaller; readers accept both. Coordinate entries are
//!   mirrored on load, so storing one triangle suffices;
//! * reduced model: every field needed to rebuild the solver input —
//!   local arcs, supply vector, cost blocks, conflicts, route segments,
//!   and the maps back to union arc/vertex ids;
//! * solve result: `{status, incumbent_value, lower_bound, gap, nodes,
//!   time_s, incumbent_arcs}`;
//! * certificate report: validity flags plus the exposing-vector entries.
//!
//! Writes go through a same-directory temp file followed by a rename, so a
//! crash never leaves a half-written artifact at the target path.

use std::fs;
use std::path::Path;
use std::process;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bnb::{BnbResult, BnbStatus};
use crate::gen::Provenance;
use crate::graph::{DirectedGraph, GraphError, Instance};
use crate::linalg::SymMatrix;
use crate::reduce::ReducedModel;
use crate::sdp::SlaterCertificate;

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("cost matrix entry ({i}, {j}) outside dimension {dim}")]
    CostIndex { i: usize, j: usize, dim: usize },
    #[error("dense cost row {row} has {got} entries, expected {want}")]
    RaggedRow { row: usize, got: usize, want: usize },
    #[error("{path}: neither an instance nor a reduced model")]
    UnknownSchema { path: String },
    #[error(transparent)]
    Graph(#[from] GraphError),
}

/// Symmetric matrix on disk: dense rows, or sparse coordinates covering
/// at least one triangle.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "lowercase")]
pub enum CostDoc {
    Dense { data: Vec<Vec<f64>> },
    Coo { dim: usize, entries: Vec<(usize, usize, f64)> },
}

impl CostDoc {
    /// Encodes a symmetric matrix, choosing the representation with fewer
    /// stored scalars (upper-triangle coordinates vs. the full square).
    fn encode(q: &SymMatrix) -> Self {
        let n = q.dim();
        let mut entries = Vec::new();
        for i in 0..n {
            for j in i..n {
                let v = q.get(i, j);
                if v != 0.0 {
                    entries.push((i, j, v));
                }
            }
        }
        if 3 * entries.len() < n * n {
            CostDoc::Coo { dim: n, entries }
        } else {
            CostDoc::Dense {
                data: (0..n)
                    .map(|i| (0..n).map(|j| q.get(i, j)).collect())
                    .collect(),
            }
        }
    }

    /// Decodes to a dense matrix. Coordinate entries set both (i, j) and
    /// (j, i); later entries overwrite earlier ones.
    fn decode(&self) -> Result<DMatrix<f64>, IoError> {
        match self {
            CostDoc::Dense { data } => {
                let n = data.len();
                let mut m = DMatrix::zeros(n, n);
                for (i, row) in data.iter().enumerate() {
                    if row.len() != n {
                        return Err(IoError::RaggedRow {
                            row: i,
                            got: row.len(),
                            want: n,
                        });
                    }
                    for (j, &v) in row.iter().enumerate() {
                        m[(i, j)] = v;
                    }
                }
                Ok(m)
            }
            CostDoc::Coo { dim, entries } => {
                let mut m = DMatrix::zeros(*dim, *dim);
                for &(i, j, v) in entries {
                    if i >= *dim || j >= *dim {
                        return Err(IoError::CostIndex { i, j, dim: *dim });
                    }
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
                Ok(m)
            }
        }
    }
}

/// An instance as stored on disk, with optional generation provenance.
#[derive(Debug)]
pub struct StoredInstance {
    pub instance: Instance,
    pub provenance: Option<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct InstanceDoc {
    num_vertices: usize,
    arcs: Vec<(usize, usize)>,
    pairs: Vec<(usize, usize)>,
    #[serde(rename = "Q")]
    q: CostDoc,
    #[serde(skip_serializing_if = "Option::is_none")]
    provenance: Option<Provenance>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ReducedModelDoc {
    k: usize,
    num_base_vertices: usize,
    num_initial_arcs: usize,
    kept_arcs: Vec<usize>,
    vertices: Vec<usize>,
    arcs: Vec<(usize, usize)>,
    base_vertex_of: Vec<usize>,
    copy_of: Vec<usize>,
    b: Vec<f64>,
    #[serde(rename = "Q")]
    q: CostDoc,
    c: Vec<f64>,
    kappa: f64,
    conflicts: Vec<(usize, usize)>,
    route_segments: Vec<Vec<(usize, usize)>>,
    fixed_zero: Vec<usize>,
    fixed_one: Vec<usize>,
}

/// JSON has no infinities, so unbounded values are stored as `null`.
/// A missing lower bound reads back as -inf, a missing gap as +inf.
mod null_as_neg_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::NEG_INFINITY))
    }
}

mod null_as_pos_inf {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_some(v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

/// Solver outcome in result-file form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveReport {
    pub status: String,
    pub incumbent_value: Option<f64>,
    #[serde(with = "null_as_neg_inf")]
    pub lower_bound: f64,
    #[serde(with = "null_as_pos_inf")]
    pub gap: f64,
    pub nodes: usize,
    pub time_s: f64,
    /// Local ids of arcs at one in the incumbent, if any.
    pub incumbent_arcs: Option<Vec<usize>>,
}

impl SolveReport {
    pub fn from_bnb(result: &BnbResult) -> Self {
        Self {
            status: match result.status {
                BnbStatus::Optimal => "optimal",
                BnbStatus::TimeLimit => "time_limit",
                BnbStatus::Infeasible => "infeasible",
            }
            .to_string(),
            incumbent_value: result.incumbent_value,
            lower_bound: result.lower_bound,
            gap: result.gap,
            nodes: result.nodes,
            time_s: result.time_s,
            incumbent_arcs: result.incumbent.as_ref().map(|x| {
                x.iter()
                    .enumerate()
                    .filter(|&(_, &v)| v > 0.5)
                    .map(|(e, _)| e)
                    .collect()
            }),
        }
    }
}

/// Certificate search outcome in report-file form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateReport {
    pub valid: bool,
    pub residual: f64,
    pub z_e0: f64,
    pub min_eig_w: f64,
    /// Dense rows of the exposing-vector candidate.
    pub w: Vec<Vec<f64>>,
}

impl CertificateReport {
    pub fn from_certificate(cert: &SlaterCertificate) -> Self {
        Self {
            valid: cert.valid,
            residual: cert.residual,
            z_e0: cert.z_e0,
            min_eig_w: cert.min_eig_w,
            w: (0..cert.w.dim())
                .map(|i| (0..cert.w.dim()).map(|j| cert.w.get(i, j)).collect())
                .collect(),
        }
    }
}

/// A model file of either schema, for commands that accept both.
#[derive(Debug)]
pub enum AnyModel {
    Instance(Box<StoredInstance>),
    Reduced(Box<ReducedModel>),
}

static TEMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes bytes to a same-directory temp file, then renames over the
/// target, so readers never observe a partial file.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty());
    let stem = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "out".to_string());
    let tmp_name = format!(
        ".{stem}.tmp.{}.{}",
        process::id(),
        TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    );
    let tmp = match dir {
        Some(d) => d.join(&tmp_name),
        None => Path::new(&tmp_name).to_path_buf(),
    };
    let result = fs::write(&tmp, bytes).and_then(|()| fs::rename(&tmp, path));
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

fn to_pretty_bytes<T: Serialize>(path: &Path, value: &T) -> Result<Vec<u8>, IoError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, bytes: &[u8]) -> Result<T, IoError> {
    serde_json::from_slice(bytes).map_err(|source| IoError::Json {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_instance(
    path: &Path,
    instance: &Instance,
    provenance: Option<&Provenance>,
) -> Result<(), IoError> {
    let doc = InstanceDoc {
        num_vertices: instance.graph.num_vertices(),
        arcs: instance.graph.arcs().to_vec(),
        pairs: instance.pairs.clone(),
        q: CostDoc::encode(&instance.q),
        provenance: provenance.cloned(),
    };
    atomic_write(path, &to_pretty_bytes(path, &doc)?)
}

pub fn read_instance(path: &Path) -> Result<StoredInstance, IoError> {
    let doc: InstanceDoc = parse(path, &fs::read(path)?)?;
    instance_from_doc(doc)
}

fn instance_from_doc(doc: InstanceDoc) -> Result<StoredInstance, IoError> {
    let graph = DirectedGraph::new(doc.num_vertices, doc.arcs)?;
    let q = doc.q.decode()?;
    let instance = Instance::new(graph, doc.pairs, q)?;
    Ok(StoredInstance {
        instance,
        provenance: doc.provenance,
    })
}

pub fn write_reduced(path: &Path, model: &ReducedModel) -> Result<(), IoError> {
    let doc = ReducedModelDoc {
        k: model.k,
        num_base_vertices: model.num_base_vertices,
        num_initial_arcs: model.num_initial_arcs,
        kept_arcs: model.kept_arcs.clone(),
        vertices: model.vertices.clone(),
        arcs: model.arcs.clone(),
        base_vertex_of: model.base_vertex_of.clone(),
        copy_of: model.copy_of.clone(),
        b: model.b.clone(),
        q: CostDoc::encode(&model.q),
        c: model.c.clone(),
        kappa: model.kappa,
        conflicts: model.conflicts.clone(),
        route_segments: model.route_segments.clone(),
        fixed_zero: model.fixed_zero.clone(),
        fixed_one: model.fixed_one.clone(),
    };
    atomic_write(path, &to_pretty_bytes(path, &doc)?)
}

pub fn read_reduced(path: &Path) -> Result<ReducedModel, IoError> {
    let doc: ReducedModelDoc = parse(path, &fs::read(path)?)?;
    reduced_from_doc(doc)
}

fn reduced_from_doc(doc: ReducedModelDoc) -> Result<ReducedModel, IoError> {
    let dense = doc.q.decode()?;
    let n = dense.nrows();
    let q = SymMatrix::from_fn(n, |i, j| dense[(i, j)]);
    Ok(ReducedModel {
        k: doc.k,
        num_base_vertices: doc.num_base_vertices,
        num_initial_arcs: doc.num_initial_arcs,
        kept_arcs: doc.kept_arcs,
        vertices: doc.vertices,
        arcs: doc.arcs,
        base_vertex_of: doc.base_vertex_of,
        copy_of: doc.copy_of,
        b: doc.b,
        q,
        c: doc.c,
        kappa: doc.kappa,
        conflicts: doc.conflicts,
        route_segments: doc.route_segments,
        fixed_zero: doc.fixed_zero,
        fixed_one: doc.fixed_one,
    })
}

/// Reads a model file of either schema, deciding by shape: reduced models
/// carry `route_segments`, instances carry `num_vertices` and `pairs`.
pub fn read_any_model(path: &Path) -> Result<AnyModel, IoError> {
    let bytes = fs::read(path)?;
    let value: serde_json::Value = parse(path, &bytes)?;
    let obj = value.as_object().ok_or_else(|| IoError::UnknownSchema {
        path: path.display().to_string(),
    })?;
    if obj.contains_key("route_segments") {
        let doc: ReducedModelDoc = parse(path, &bytes)?;
        Ok(AnyModel::Reduced(Box::new(reduced_from_doc(doc)?)))
    } else if obj.contains_key("num_vertices") && obj.contains_key("pairs") {
        let doc: InstanceDoc = parse(path, &bytes)?;
        Ok(AnyModel::Instance(Box::new(instance_from_doc(doc)?)))
    } else {
        Err(IoError::UnknownSchema {
            path: path.display().to_string(),
        })
    }
}

pub fn write_report(path: &Path, report: &SolveReport) -> Result<(), IoError> {
    atomic_write(path, &to_pretty_bytes(path, report)?)
}

pub fn read_report(path: &Path) -> Result<SolveReport, IoError> {
    parse(path, &fs::read(path)?)
}

pub fn write_certificate(path: &Path, report: &CertificateReport) -> Result<(), IoError> {
    atomic_write(path, &to_pretty_bytes(path, report)?)
}

pub fn read_certificate(path: &Path) -> Result<CertificateReport, IoError> {
    parse(path, &fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gen::{generate, GenConfig};
    use crate::graph::disjoint_union;
    use crate::reduce::{fix_arcs, reduce_model};

    fn tmp_dir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "qkvdp-io-{}-{}",
            process::id(),
            TEMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    #[test]
    fn instance_round_trips_with_provenance() {
        let dir = tmp_dir();
        let config = GenConfig::new(9, 2, 11);
        let instance = generate(&config).unwrap();
        let prov = Provenance::new(&config);
        let path = dir.join("instance.json");
        write_instance(&path, &instance, Some(&prov)).unwrap();
        let stored = read_instance(&path).unwrap();
        assert_eq!(stored.instance.graph.arcs(), instance.graph.arcs());
        assert_eq!(stored.instance.pairs, instance.pairs);
        assert_eq!(stored.instance.q, instance.q);
        let got = stored.provenance.expect("provenance kept");
        assert_eq!(got.seed, 11);
        assert_eq!(got.config, config);
    }

    #[test]
    fn sparse_and_dense_cost_forms_decode_identically() {
        let q = SymMatrix::from_fn(5, |i, j| if (i + j) % 3 == 0 { 0.0 } else { 1.5 });
        let dense = CostDoc::Dense {
            data: (0..5)
                .map(|i| (0..5).map(|j| q.get(i, j)).collect())
                .collect(),
        };
        let mut entries = Vec::new();
        for i in 0..5 {
            for j in i..5 {
                if q.get(i, j) != 0.0 {
                    entries.push((i, j, q.get(i, j)));
                }
            }
        }
        let coo = CostDoc::Coo { dim: 5, entries };
        assert_eq!(dense.decode().unwrap(), coo.decode().unwrap());
    }

    #[test]
    fn encode_prefers_the_smaller_form() {
        let sparse = SymMatrix::from_fn(10, |i, j| if i == j { 1.0 } else { 0.0 });
        assert!(matches!(CostDoc::encode(&sparse), CostDoc::Coo { .. }));
        let dense = SymMatrix::from_fn(10, |_, _| 2.0);
        assert!(matches!(CostDoc::encode(&dense), CostDoc::Dense { .. }));
    }

    #[test]
    fn reduced_model_round_trips() {
        let dir = tmp_dir();
        let instance = generate(&GenConfig::new(6, 1, 3)).unwrap();
        let union = disjoint_union(&instance.graph, &instance.pairs).unwrap();
        let fixed = fix_arcs(&instance, &union).unwrap();
        let model = reduce_model(&instance, &union, &fixed).unwrap();
        let path = dir.join("reduced.json");
        write_reduced(&path, &model).unwrap();
        let back = read_reduced(&path).unwrap();
        assert_eq!(back.k, model.k);
        assert_eq!(back.kept_arcs, model.kept_arcs);
        assert_eq!(back.vertices, model.vertices);
        assert_eq!(back.arcs, model.arcs);
        assert_eq!(back.b, model.b);
        assert_eq!(back.q, model.q);
        assert_eq!(back.c, model.c);
        assert_eq!(back.kappa, model.kappa);
        assert_eq!(back.conflicts, model.conflicts);
        assert_eq!(back.route_segments, model.route_segments);
        assert_eq!(back.fixed_zero, model.fixed_zero);
        assert_eq!(back.fixed_one, model.fixed_one);
    }

    #[test]
    fn schema_sniffing_distinguishes_model_kinds() {
        let dir = tmp_dir();
        let instance = generate(&GenConfig::new(6, 1, 3)).unwrap();
        let union = disjoint_union(&instance.graph, &instance.pairs).unwrap();
        let fixed = fix_arcs(&instance, &union).unwrap();
        let model = reduce_model(&instance, &union, &fixed).unwrap();
        let ipath = dir.join("i.json");
        let rpath = dir.join("r.json");
        write_instance(&ipath, &instance, None).unwrap();
        write_reduced(&rpath, &model).unwrap();
        assert!(matches!(
            read_any_model(&ipath).unwrap(),
            AnyModel::Instance(_)
        ));
        assert!(matches!(
            read_any_model(&rpath).unwrap(),
            AnyModel::Reduced(_)
        ));
        let junk = dir.join("junk.json");
        fs::write(&junk, b"{\"stuff\": 1}").unwrap();
        assert!(matches!(
            read_any_model(&junk),
            Err(IoError::UnknownSchema { .. })
        ));
    }

    #[test]
    fn reports_round_trip() {
        let dir = tmp_dir();
        let report = SolveReport {
            status: "optimal".into(),
            incumbent_value: Some(-4.25),
            lower_bound: -4.25,
            gap: 0.0,
            nodes: 7,
            time_s: 0.125,
            incumbent_arcs: Some(vec![0, 3, 5]),
        };
        let path = dir.join("result.json");
        write_report(&path, &report).unwrap();
        let back = read_report(&path).unwrap();
        assert_eq!(back.status, report.status);
        assert_eq!(back.incumbent_value, report.incumbent_value);
        assert_eq!(back.incumbent_arcs, report.incumbent_arcs);

        let cert = CertificateReport {
            valid: true,
            residual: 1e-9,
            z_e0: -0.5,
            min_eig_w: 0.0,
            w: vec![vec![0.5, -0.5], vec![-0.5, 0.5]],
        };
        let cpath = dir.join("cert.json");
        write_certificate(&cpath, &cert).unwrap();
        let cback = read_certificate(&cpath).unwrap();
        assert_eq!(cback.w, cert.w);
        assert!(cback.valid);
    }

    #[test]
    fn unbounded_reports_round_trip_through_null() {
        let dir = tmp_dir();
        let report = SolveReport {
            status: "time_limit".into(),
            incumbent_value: None,
            lower_bound: f64::NEG_INFINITY,
            gap: f64::INFINITY,
            nodes: 0,
            time_s: 0.0,
            incumbent_arcs: None,
        };
        let path = dir.join("unbounded.json");
        write_report(&path, &report).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.contains("\"lower_bound\": null"), "{text}");
        let back = read_report(&path).unwrap();
        assert_eq!(back.lower_bound, f64::NEG_INFINITY);
        assert_eq!(back.gap, f64::INFINITY);
    }

    #[test]
    fn bad_cost_docs_are_rejected() {
        let ragged = CostDoc::Dense {
            data: vec![vec![1.0, 2.0], vec![3.0]],
        };
        assert!(matches!(ragged.decode(), Err(IoError::RaggedRow { .. })));
        let oob = CostDoc::Coo {
            dim: 2,
            entries: vec![(0, 5, 1.0)],
        };
        assert!(matches!(oob.decode(), Err(IoError::CostIndex { .. })));
    }

    #[test]
    fn atomic_write_replaces_and_leaves_no_temps() {
        let dir = tmp_dir();
        let path = dir.join("file.json");
        atomic_write(&path, b"first").unwrap();
        atomic_write(&path, b"second").unwrap();
        assert_eq!(fs::read(&path).unwrap(), b"second");
        let leftovers: Vec<_> = fs::read_dir(&dir)
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().contains(".tmp."))
            .collect();
        assert!(leftovers.is_empty(), "temp files left behind");
    }

    #[test]
    fn solve_report_extracts_incumbent_arcs() {
        let result = BnbResult {
            status: BnbStatus::Optimal,
            incumbent_value: Some(-2.0),
            incumbent: Some(vec![1.0, 0.0, 1.0]),
            lower_bound: -2.0,
            gap: 0.0,
            nodes: 1,
            time_s: 0.01,
            records: Vec::new(),
        };
        let report = SolveReport::from_bnb(&result);
        assert_eq!(report.status, "optimal");
        assert_eq!(report.incumbent_arcs, Some(vec![0, 2]));
    }
}
