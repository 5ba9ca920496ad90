//! End-to-end tests of the `qkvdp` binary: every subcommand, the documented
//! exit codes, and determinism of generated artifacts.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use qkvdp::gen::{generate, GenConfig};
use qkvdp::graph::{disjoint_union, DirectedGraph, Instance};
use qkvdp::model::FlowModel;
use qkvdp::oracle::enumerate_relaxed_feasible;
use qkvdp::reduce::{fix_arcs, reduce_model};
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qkvdp"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("exit code")
}

/// Two crossing demands forced through a two-vertex cut; reduction fixes
/// half of the sixteen union arcs.
fn bottleneck_instance() -> Instance {
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
    let graph = DirectedGraph::new(6, arcs).unwrap();
    Instance::new(
        graph,
        vec![(0, 1), (2, 3)],
        nalgebra::DMatrix::zeros(16, 16),
    )
    .unwrap()
}

fn write_bottleneck_files(dir: &Path) -> (PathBuf, PathBuf) {
    let instance = bottleneck_instance();
    let ipath = dir.join("bottleneck.json");
    qkvdp::io::write_instance(&ipath, &instance, None).unwrap();
    let union = disjoint_union(&instance.graph, &instance.pairs).unwrap();
    let fixed = fix_arcs(&instance, &union).unwrap();
    let reduced = reduce_model(&instance, &union, &fixed).unwrap();
    let rpath = dir.join("bottleneck.reduced.json");
    qkvdp::io::write_reduced(&rpath, &reduced).unwrap();
    (ipath, rpath)
}

#[test]
fn generate_writes_deterministic_files() {
    let dir_a = TempDir::new().unwrap();
    let dir_b = TempDir::new().unwrap();
    for dir in [&dir_a, &dir_b] {
        let out = run(&[
            "generate",
            "--mv",
            "9",
            "--k",
            "2",
            "--count",
            "3",
            "--seed",
            "7",
            "--out",
            dir.path().to_str().unwrap(),
        ]);
        assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    }
    for seed in 7..10 {
        let name = format!("instance_mv9_k2_seed{seed}.json");
        let a = std::fs::read(dir_a.path().join(&name)).expect("file exists");
        let b = std::fs::read(dir_b.path().join(&name)).unwrap();
        assert_eq!(a, b, "{name} differs between identical runs");
    }
}

#[test]
fn usage_errors_exit_sixty_four() {
    let zero_count = run(&["generate", "--mv", "9", "--k", "1", "--count", "0"]);
    assert_eq!(code(&zero_count), 64);
    let prime_grid = run(&["generate", "--mv", "7", "--k", "1"]);
    assert_eq!(code(&prime_grid), 64);
    let unknown = run(&["frobnicate"]);
    assert_eq!(code(&unknown), 64);
    let no_args = run(&[]);
    assert_eq!(code(&no_args), 64);
}

#[test]
fn reduce_halves_the_bottleneck_union() {
    let dir = TempDir::new().unwrap();
    let (ipath, _) = write_bottleneck_files(dir.path());
    let stats = dir.path().join("stats.csv");
    let out = run(&[
        "reduce",
        ipath.to_str().unwrap(),
        "--stats",
        stats.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let reduced = qkvdp::io::read_reduced(&ipath.with_extension("reduced.json")).unwrap();
    assert_eq!(reduced.arcs.len(), 8);
    assert_eq!(reduced.num_initial_arcs, 16);
    let csv = std::fs::read_to_string(&stats).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "k,m_v,initial_arcs,remaining_arcs,time_s"
    );
    let row = lines.next().unwrap();
    assert!(row.starts_with("2,6,16,8,"), "unexpected stats row: {row}");
}

#[test]
fn solve_matches_brute_force_on_a_small_instance() {
    let dir = TempDir::new().unwrap();
    let instance = generate(&GenConfig::new(6, 1, 3)).unwrap();
    let union = disjoint_union(&instance.graph, &instance.pairs).unwrap();
    let model = FlowModel::from_union(&instance, &union);
    let best = enumerate_relaxed_feasible(&model, 20)
        .unwrap()
        .iter()
        .map(|x| model.objective(x))
        .fold(f64::INFINITY, f64::min);

    let ipath = dir.path().join("small.json");
    qkvdp::io::write_instance(&ipath, &instance, None).unwrap();
    let rpath = dir.path().join("small.result.json");
    let out = run(&[
        "solve",
        ipath.to_str().unwrap(),
        "--out",
        rpath.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let report = qkvdp::io::read_report(&rpath).unwrap();
    assert_eq!(report.status, "optimal");
    let value = report.incumbent_value.expect("incumbent");
    assert!(
        (value - best).abs() <= 1e-6,
        "solver {value} vs brute force {best}"
    );
    assert!(report.incumbent_arcs.is_some());
}

#[test]
fn exhausted_time_limit_exits_two() {
    let dir = TempDir::new().unwrap();
    let (_, rpath) = write_bottleneck_files(dir.path());
    let out = run(&[
        "solve",
        rpath.to_str().unwrap(),
        "--time-limit",
        "0",
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2, "stdout: {}", stdout(&out));
    let report = qkvdp::io::read_report(&dir.path().join("r.json")).unwrap();
    assert_eq!(report.status, "time_limit");
}

#[test]
fn infeasible_instance_exits_three() {
    let dir = TempDir::new().unwrap();
    let graph = DirectedGraph::new(2, vec![(1, 0)]).unwrap();
    let instance =
        Instance::new(graph, vec![(0, 1)], nalgebra::DMatrix::zeros(1, 1)).unwrap();
    let ipath = dir.path().join("impossible.json");
    qkvdp::io::write_instance(&ipath, &instance, None).unwrap();
    let out = run(&[
        "solve",
        ipath.to_str().unwrap(),
        "--out",
        dir.path().join("r.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3, "stdout: {}", stdout(&out));
    let report = qkvdp::io::read_report(&dir.path().join("r.json")).unwrap();
    assert_eq!(report.status, "infeasible");
    assert_eq!(report.incumbent_value, None);
}

#[test]
fn certify_finds_the_worked_example_certificate() {
    let dir = TempDir::new().unwrap();
    let (_, rpath) = write_bottleneck_files(dir.path());
    let cert_path = dir.path().join("cert.json");
    let out = run(&[
        "certify",
        rpath.to_str().unwrap(),
        "--max-iters",
        "4000",
        "--tol",
        "1e-3",
        "--out",
        cert_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(
        stdout(&out).contains("certificate found"),
        "stdout: {}",
        stdout(&out)
    );
    let report = qkvdp::io::read_certificate(&cert_path).unwrap();
    assert!(report.valid);
    assert!(report.residual <= 1e-3);
    assert!(report.z_e0 <= 1e-8);
}

#[test]
fn certify_reports_none_for_a_strictly_feasible_model() {
    let dir = TempDir::new().unwrap();
    let graph = DirectedGraph::new(2, vec![(0, 1)]).unwrap();
    let instance =
        Instance::new(graph, vec![(0, 1)], nalgebra::DMatrix::zeros(1, 1)).unwrap();
    let ipath = dir.path().join("chain.json");
    qkvdp::io::write_instance(&ipath, &instance, None).unwrap();
    let out = run(&["certify", ipath.to_str().unwrap(), "--max-iters", "2000"]);
    assert_eq!(code(&out), 0);
    assert!(
        stdout(&out).contains("no certificate found"),
        "stdout: {}",
        stdout(&out)
    );
}

#[test]
fn bench_then_report_aggregates_runs() {
    let dir = TempDir::new().unwrap();
    let out = run(&[
        "bench",
        "--mv",
        "6",
        "--k",
        "1",
        "--count",
        "2",
        "--seed",
        "3",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let runs: Vec<_> = std::fs::read_dir(dir.path())
        .unwrap()
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("run_"))
        .collect();
    assert_eq!(runs.len(), 2);

    let report = run(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    let text = stdout(&report);
    assert!(text.contains("[1,100)"), "report: {text}");
    assert!(text.contains(" 2 "), "report should count both runs: {text}");
}

#[test]
fn report_bins_follow_the_arc_count_edges() {
    let dir = TempDir::new().unwrap();
    for (name, arcs, status, gap) in [
        ("run_a.json", 100usize, "optimal", 0.0),
        ("run_b.json", 5, "optimal", 0.0),
        ("run_c.json", 900, "time_limit", 0.25),
    ] {
        let record = serde_json::json!({
            "id": name,
            "m_v": 0,
            "k": 0,
            "seed": 0,
            "arcs": arcs,
            "status": status,
            "gap": gap,
            "time_s": 1.0,
            "nodes": 1,
        });
        std::fs::write(
            dir.path().join(name),
            serde_json::to_vec_pretty(&record).unwrap(),
        )
        .unwrap();
    }
    let report = run(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(code(&report), 0);
    let text = stdout(&report);
    // |E| = 100 belongs to [100,200), not [1,100).
    let line_of = |label: &str| {
        text.lines()
            .find(|l| l.starts_with(label))
            .unwrap_or_else(|| panic!("missing {label} row in: {text}"))
            .to_string()
    };
    let first = line_of("[1,100)");
    let second = line_of("[100,200)");
    let last = line_of(">=800");
    for line in [&first, &second, &last] {
        let fields: Vec<&str> = line.split_whitespace().collect();
        assert_eq!(fields[1], "1", "one run per bin: {line}");
    }
    // The timed-out run is present but not counted as solved.
    let fields: Vec<&str> = last.split_whitespace().collect();
    assert_eq!(fields[2], "0", "timeout must not count as solved: {last}");
}

#[test]
fn report_on_empty_directory_fails_cleanly() {
    let dir = TempDir::new().unwrap();
    let out = run(&["report", dir.path().to_str().unwrap()]);
    assert_eq!(code(&out), 1);
}
