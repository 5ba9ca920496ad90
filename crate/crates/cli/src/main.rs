//! Command-line front end for the disjoint-paths solver suite.
//!
//! Subcommands cover the whole benchmark pipeline: `generate` random planar
//! instances, `reduce` them by fixed-arc analysis, `solve` either an
//! instance or a reduced model by branch and bound, `certify` the loss of
//! strict SDP feasibility, `bench` an end-to-end batch, and `report` an
//! aggregate table over recorded runs.
//!
//! Exit codes: 0 success (including a proven optimum), 2 time limit hit,
//! 3 instance infeasible, 64 usage error, 1 operational failure.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use qkvdp::gen::{self, GenConfig, GenError, Provenance};
use qkvdp::graph::{disjoint_union, Instance};
use qkvdp::io::{self, AnyModel, CertificateReport, SolveReport};
use qkvdp::model::FlowModel;
use qkvdp::reduce::{fix_arcs, reduce_model, ReductionStats};
use qkvdp::sdp::SdpRelaxation;
use qkvdp::{solve_bnb, BnbParams, BnbStatus};

const EXIT_TIME_LIMIT: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;
const EXIT_USAGE: u8 = 64;

#[derive(Parser)]
#[command(
    name = "qkvdp",
    version,
    about = "Quadratic k-vertex-disjoint-paths solver suite"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random planar benchmark instances.
    Generate(GenerateArgs),
    /// Fix arcs, write the reduced model, and append reduction stats.
    Reduce(ReduceArgs),
    /// Solve an instance or reduced-model file by branch and bound.
    Solve(SolveArgs),
    /// Search for a certificate that strict SDP feasibility fails.
    Certify(CertifyArgs),
    /// Generate, reduce, and solve a batch, recording one run file each.
    Bench(BenchArgs),
    /// Aggregate recorded runs into a table binned by arc count.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Grid vertex count (must factor as rows x cols, both >= 2).
    #[arg(long = "mv")]
    m_v: usize,
    /// Number of source-target pairs.
    #[arg(long)]
    k: usize,
    /// How many instances to generate (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Base random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Off-diagonal cost density in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReduceArgs {
    /// Instance files to reduce.
    #[arg(required = true)]
    instances: Vec<PathBuf>,
    /// Output path for the reduced model (single input only); defaults to
    /// `<input-stem>.reduced.json` next to each input.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a stats CSV (k, m_v, initial_arcs, remaining_arcs, time_s).
    #[arg(long)]
    stats: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    /// Instance or reduced-model file.
    model: PathBuf,
    /// Wall-clock budget in seconds.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// Relative optimality-gap tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Branch-and-bound worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Result file; defaults to `<input-stem>.result.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    /// Instance or reduced-model file.
    model: PathBuf,
    /// Alternating-projection iteration budget.
    #[arg(long = "max-iters", default_value_t = 20000)]
    max_iters: usize,
    /// Affine residual tolerance for a certificate to count as verified.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Optional certificate report file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// Grid vertex count per instance.
    #[arg(long = "mv")]
    m_v: usize,
    /// Number of source-target pairs.
    #[arg(long)]
    k: usize,
    /// How many runs (seeds seed, seed+1, ...).
    #[arg(long, default_value_t = 1)]
    count: usize,
    /// Base random seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Off-diagonal cost density in (0, 1].
    #[arg(long, default_value_t = 0.5)]
    density: f64,
    /// Per-run wall-clock budget in seconds.
    #[arg(long = "time-limit")]
    time_limit: Option<f64>,
    /// Relative optimality-gap tolerance.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    /// Branch-and-bound worker threads.
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Directory for run records.
    #[arg(long, default_value = ".")]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory holding `run_*.json` records.
    runs: PathBuf,
}

/// One benchmark run as recorded on disk.
#[derive(Debug, Serialize, Deserialize)]
struct RunRecord {
    id: String,
    m_v: usize,
    k: usize,
    seed: u64,
    /// Arc count of the solved (reduced) model; drives report binning.
    arcs: usize,
    status: String,
    gap: f64,
    time_s: f64,
    nodes: usize,
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let _ = err.print();
            return match err.kind() {
                clap::error::ErrorKind::DisplayHelp
                | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EXIT_USAGE),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Generate(args) => cmd_generate(args),
        Command::Reduce(args) => cmd_reduce(args),
        Command::Solve(args) => cmd_solve(args),
        Command::Certify(args) => cmd_certify(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Report(args) => cmd_report(args),
    }
}

fn usage_error(msg: &str) -> Result<ExitCode> {
    eprintln!("error: {msg}");
    Ok(ExitCode::from(EXIT_USAGE))
}

/// Config mistakes are usage errors; exhausted retries are operational.
fn generate_one(config: &GenConfig) -> Result<Result<Instance, ExitCode>> {
    match gen::generate(config) {
        Ok(instance) => Ok(Ok(instance)),
        Err(
            err @ (GenError::NotFactorable { .. }
            | GenError::ZeroPairs
            | GenError::TooManyTerminals { .. }
            | GenError::BadDensity { .. }
            | GenError::BadCostRange { .. }),
        ) => {
            eprintln!("error: {err}");
            Ok(Err(ExitCode::from(EXIT_USAGE)))
        }
        Err(err) => Err(err.into()),
    }
}

fn instance_file_name(config: &GenConfig) -> String {
    format!(
        "instance_mv{}_k{}_seed{}.json",
        config.m_v, config.k, config.seed
    )
}

fn cmd_generate(args: GenerateArgs) -> Result<ExitCode> {
    if args.count == 0 {
        return usage_error("--count must be at least 1");
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.count {
        let mut config = GenConfig::new(args.m_v, args.k, args.seed + i as u64);
        config.density = args.density;
        let instance = match generate_one(&config)? {
            Ok(instance) => instance,
            Err(code) => return Ok(code),
        };
        let path = args.out.join(instance_file_name(&config));
        io::write_instance(&path, &instance, Some(&Provenance::new(&config)))?;
        println!("{}", path.display());
    }
    Ok(ExitCode::SUCCESS)
}

fn reduce_instance(instance: &Instance) -> Result<(qkvdp::ReducedModel, ReductionStats)> {
    let union = disjoint_union(&instance.graph, &instance.pairs)?;
    let start = Instant::now();
    let fixed = fix_arcs(instance, &union)?;
    let reduced = reduce_model(instance, &union, &fixed)?;
    let stats = reduced.stats(start.elapsed().as_secs_f64());
    Ok((reduced, stats))
}

fn cmd_reduce(args: ReduceArgs) -> Result<ExitCode> {
    if args.out.is_some() && args.instances.len() > 1 {
        return usage_error("--out is only valid with a single input file");
    }
    let mut csv = String::from("k,m_v,initial_arcs,remaining_arcs,time_s\n");
    for input in &args.instances {
        let stored = io::read_instance(input)
            .with_context(|| format!("reading {}", input.display()))?;
        let (reduced, stats) = reduce_instance(&stored.instance)?;
        let out = match &args.out {
            Some(path) => path.clone(),
            None => input.with_extension("reduced.json"),
        };
        io::write_reduced(&out, &reduced)?;
        writeln!(
            csv,
            "{},{},{},{},{:.6}",
            stats.k, stats.m_v, stats.initial_arcs, stats.remaining_arcs, stats.time_s
        )?;
        println!(
            "{}: {} -> {} arcs, {}",
            input.display(),
            stats.initial_arcs,
            stats.remaining_arcs,
            out.display()
        );
    }
    if let Some(stats_path) = &args.stats {
        io::atomic_write(stats_path, csv.as_bytes())?;
    }
    Ok(ExitCode::SUCCESS)
}

/// Loads either file schema and lowers it to the common solver input.
fn load_model(path: &Path) -> Result<FlowModel> {
    let model = match io::read_any_model(path)
        .with_context(|| format!("reading {}", path.display()))?
    {
        AnyModel::Instance(stored) => {
            let instance = &stored.instance;
            let union = disjoint_union(&instance.graph, &instance.pairs)?;
            FlowModel::from_union(instance, &union)
        }
        AnyModel::Reduced(reduced) => FlowModel::from_reduced(&reduced),
    };
    Ok(model)
}

fn cmd_solve(args: SolveArgs) -> Result<ExitCode> {
    if args.threads == 0 {
        return usage_error("--threads must be at least 1");
    }
    let model = load_model(&args.model)?;
    let sdp = SdpRelaxation::build(&model);
    let params = BnbParams {
        gap_tol: args.tol,
        time_limit: args.time_limit,
        threads: args.threads,
        ..BnbParams::default()
    };
    let result = solve_bnb(&model, &sdp, &params);
    let report = SolveReport::from_bnb(&result);
    let out = args
        .out
        .unwrap_or_else(|| args.model.with_extension("result.json"));
    io::write_report(&out, &report)?;
    let value = report
        .incumbent_value
        .map(|v| format!("{v:.6}"))
        .unwrap_or_else(|| "-".to_string());
    println!(
        "status={} value={} lower={:.6} gap={:.3e} nodes={} time={:.3}s -> {}",
        report.status,
        value,
        report.lower_bound,
        report.gap,
        report.nodes,
        report.time_s,
        out.display()
    );
    Ok(match result.status {
        BnbStatus::Optimal => ExitCode::SUCCESS,
        BnbStatus::TimeLimit => ExitCode::from(EXIT_TIME_LIMIT),
        BnbStatus::Infeasible => ExitCode::from(EXIT_INFEASIBLE),
    })
}

fn cmd_certify(args: CertifyArgs) -> Result<ExitCode> {
    let model = load_model(&args.model)?;
    let sdp = SdpRelaxation::build(&model);
    match sdp.find_exposing_vector(args.max_iters, args.tol) {
        Some(cert) => {
            println!(
                "certificate found: residual={:.3e} min_eig={:.3e} z_e0={:.3e}",
                cert.residual, cert.min_eig_w, cert.z_e0
            );
            if let Some(out) = &args.out {
                io::write_certificate(out, &CertificateReport::from_certificate(&cert))?;
                println!("wrote {}", out.display());
            }
        }
        None => println!("no certificate found: the relaxation appears strictly feasible"),
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(args: BenchArgs) -> Result<ExitCode> {
    if args.count == 0 {
        return usage_error("--count must be at least 1");
    }
    if args.threads == 0 {
        return usage_error("--threads must be at least 1");
    }
    std::fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    for i in 0..args.count {
        let mut config = GenConfig::new(args.m_v, args.k, args.seed + i as u64);
        config.density = args.density;
        let instance = match generate_one(&config)? {
            Ok(instance) => instance,
            Err(code) => return Ok(code),
        };
        let (reduced, _) = reduce_instance(&instance)?;
        let model = FlowModel::from_reduced(&reduced);
        let sdp = SdpRelaxation::build(&model);
        let params = BnbParams {
            gap_tol: args.tol,
            time_limit: args.time_limit,
            threads: args.threads,
            ..BnbParams::default()
        };
        let result = solve_bnb(&model, &sdp, &params);
        let report = SolveReport::from_bnb(&result);
        let id = format!("mv{}_k{}_seed{}", config.m_v, config.k, config.seed);
        let record = RunRecord {
            id: id.clone(),
            m_v: config.m_v,
            k: config.k,
            seed: config.seed,
            arcs: model.arcs.len(),
            status: report.status.clone(),
            gap: report.gap,
            time_s: report.time_s,
            nodes: report.nodes,
        };
        let path = args.out.join(format!("run_{id}.json"));
        let mut bytes = serde_json::to_vec_pretty(&record)?;
        bytes.push(b'\n');
        io::atomic_write(&path, &bytes)?;
        println!(
            "{id}: arcs={} status={} gap={:.3e} time={:.3}s",
            record.arcs, record.status, record.gap, record.time_s
        );
    }
    Ok(ExitCode::SUCCESS)
}

/// Half-open arc-count bins used by the aggregate report.
const BIN_EDGES: [usize; 9] = [1, 100, 200, 300, 400, 500, 600, 700, 800];

fn bin_index(arcs: usize) -> usize {
    BIN_EDGES
        .iter()
        .rposition(|&lo| arcs >= lo)
        .unwrap_or(0)
}

fn bin_label(index: usize) -> String {
    if index + 1 < BIN_EDGES.len() {
        format!("[{},{})", BIN_EDGES[index], BIN_EDGES[index + 1])
    } else {
        format!(">={}", BIN_EDGES[index])
    }
}

fn cmd_report(args: ReportArgs) -> Result<ExitCode> {
    let mut records = Vec::new();
    for entry in std::fs::read_dir(&args.runs)
        .with_context(|| format!("reading {}", args.runs.display()))?
    {
        let entry = entry?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with("run_") && name.ends_with(".json") {
            let bytes = std::fs::read(entry.path())?;
            let record: RunRecord = serde_json::from_slice(&bytes)
                .with_context(|| format!("parsing {}", entry.path().display()))?;
            records.push(record);
        }
    }
    if records.is_empty() {
        anyhow::bail!("no run_*.json records in {}", args.runs.display());
    }

    let mut bins: Vec<Vec<&RunRecord>> = vec![Vec::new(); BIN_EDGES.len()];
    for record in &records {
        bins[bin_index(record.arcs)].push(record);
    }
    println!(
        "{:<10} {:>6} {:>8} {:>12} {:>12}",
        "bin", "runs", "solved", "avg_gap", "avg_time_s"
    );
    for (index, bin) in bins.iter().enumerate() {
        if bin.is_empty() {
            continue;
        }
        let runs = bin.len();
        let solved = bin.iter().filter(|r| r.status == "optimal").count();
        let avg_gap: f64 = bin.iter().map(|r| r.gap).sum::<f64>() / runs as f64;
        let avg_time: f64 = bin.iter().map(|r| r.time_s).sum::<f64>() / runs as f64;
        println!(
            "{:<10} {:>6} {:>8} {:>12.3e} {:>12.3}",
            bin_label(index),
            runs,
            solved,
            avg_gap,
            avg_time
        );
    }
    Ok(ExitCode::SUCCESS)
}
