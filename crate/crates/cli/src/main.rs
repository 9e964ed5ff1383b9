use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

use rmips::bench::{
    emit_gnuplot, emit_report, run_sweep, Baseline, DatasetSource, PlotMetric, ReportFormat, SweepAxis, SweepConfig,
};
use rmips::index::{build_index, BuildConfig};
use rmips::ingest::{
    generate, load_path, sample_query_positions, save_path, DatasetSpec, VectorDistribution, DEFAULT_NORM_SIGMA,
};
use rmips::oracle::brute_reverse_kmips;
use rmips::persist::{load_index_from_path, save_index_to_path};
use rmips::{reverse_kmips_parallel_with, Index, QueryOptions, Record};

#[derive(Parser)]
#[command(
    name = "rmips",
    version,
    about = "Exact reverse k-MIPS: which users rank an item in their top k?"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic user/item dataset.
    Gen(GenArgs),
    /// Build an index from user and item files and save it.
    Build(BuildArgs),
    /// Answer one reverse k-MIPS query against a saved index.
    Query(QueryArgs),
    /// Compare the engine with the brute-force oracle on random queries.
    Verify(VerifyArgs),
    /// Run a parameter sweep and emit a report.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Gaussian,
    NormSkewed,
}

#[derive(clap::Args)]
struct DataArgs {
    /// Number of users.
    #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(1..))]
    n: u64,
    /// Number of items.
    #[arg(long, default_value_t = 500, value_parser = clap::value_parser!(u64).range(1..))]
    m: u64,
    /// Dimensionality.
    #[arg(long, default_value_t = 50, value_parser = clap::value_parser!(u64).range(1..))]
    d: u64,
    #[arg(long, value_enum, default_value_t = Dist::NormSkewed)]
    dist: Dist,
    /// Lognormal shape for norm-skewed data.
    #[arg(long, default_value_t = DEFAULT_NORM_SIGMA)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl DataArgs {
    fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            n: self.n as usize,
            m: self.m as usize,
            d: self.d as usize,
            distribution: match self.dist {
                Dist::Uniform => VectorDistribution::Uniform,
                Dist::Gaussian => VectorDistribution::Gaussian,
                Dist::NormSkewed => VectorDistribution::NormSkewed { sigma: self.sigma },
            },
            seed: self.seed,
        }
    }
}

#[derive(clap::Args)]
struct GenArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Output path for users (`.csv` for CSV, otherwise binary).
    #[arg(long)]
    users: PathBuf,
    /// Output path for items.
    #[arg(long)]
    items: PathBuf,
}

#[derive(clap::Args)]
struct BuildArgs {
    #[arg(long)]
    users: PathBuf,
    #[arg(long)]
    items: PathBuf,
    /// Largest k answerable without a rebuild.
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..))]
    k_max: u64,
    /// Candidate pool is the `factor * k_max` largest-norm items.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u64).range(1..))]
    pool_factor: u64,
    /// Where to write the index.
    #[arg(long)]
    out: PathBuf,
}

#[derive(clap::Args)]
#[command(group = clap::ArgGroup::new("query").required(true).args(["q_vec", "q_file", "q_item"]))]
struct QueryArgs {
    #[arg(long)]
    index: PathBuf,
    /// Query vector as comma-separated reals.
    #[arg(long, allow_hyphen_values = true)]
    q_vec: Option<String>,
    /// File whose first vector is the query.
    #[arg(long)]
    q_file: Option<PathBuf>,
    /// Id of an indexed item to use as the query.
    #[arg(long)]
    q_item: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Skip the block filter.
    #[arg(long)]
    no_blocks: bool,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..))]
    k_max: u64,
    /// Number of queries drawn from the items.
    #[arg(long, default_value_t = 20, value_parser = clap::value_parser!(u64).range(1..))]
    queries: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    #[arg(long)]
    no_blocks: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    K,
    N,
    M,
    Workers,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Simpfer,
    SimpferNoBlocks,
    BruteForce,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(clap::Args)]
struct BenchArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    axis: Axis,
    /// Strictly increasing comma-separated axis values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
    repetitions: u64,
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    queries: u64,
    #[arg(long, value_enum, default_value_t = BaselineArg::Simpfer)]
    baseline: BaselineArg,
    #[arg(long, default_value_t = 10, value_parser = clap::value_parser!(u64).range(1..))]
    k: u64,
    #[arg(long, default_value_t = 25, value_parser = clap::value_parser!(u64).range(1..))]
    k_max: u64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Load users from a file instead of generating them.
    #[arg(long, requires = "items_file")]
    users_file: Option<PathBuf>,
    #[arg(long, requires = "users_file")]
    items_file: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
    /// Report destination; standard output if omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write gnuplot two-column files into this directory.
    #[arg(long)]
    gnuplot_dir: Option<PathBuf>,
}

fn parse_vector(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| {
            let t = t.trim();
            let v: f64 = t.parse().map_err(|_| anyhow!("cannot parse {t:?} as a number"))?;
            if !v.is_finite() {
                bail!("non-finite component {t:?}");
            }
            Ok(v)
        })
        .collect()
}

fn load_records(path: &Path, flag: &str) -> Result<Vec<Record>> {
    load_path(path).with_context(|| format!("--{flag} {}", path.display()))
}

fn cmd_gen(args: GenArgs) -> Result<()> {
    let (users, items) = generate(&args.data.spec()).context("--n/--m/--d")?;
    save_path(&users, &args.users).with_context(|| format!("--users {}", args.users.display()))?;
    save_path(&items, &args.items).with_context(|| format!("--items {}", args.items.display()))?;
    println!(
        "{}",
        json!({ "users": users.len(), "items": items.len(), "d": args.data.d })
    );
    Ok(())
}

fn cmd_build(args: BuildArgs) -> Result<()> {
    let users = load_records(&args.users, "users")?;
    let items = load_records(&args.items, "items")?;
    let config = BuildConfig {
        k_max: args.k_max as usize,
        candidate_pool_factor: args.pool_factor as usize,
    };
    let index = build_index(&users, &items, config).context("--users/--items")?;
    let bytes = save_index_to_path(&index, &args.out).with_context(|| format!("--out {}", args.out.display()))?;
    println!(
        "{}",
        json!({
            "build_seconds": index.stats().build_seconds,
            "index_bytes": bytes,
            "n": index.n(),
            "m": index.m(),
            "d": index.dim(),
            "k_max": index.k_max(),
            "blocks": index.blocks().len(),
            "block_capacity": index.block_capacity(),
            "lower_bound_entries": index.lower_bound_entries(),
        })
    );
    Ok(())
}

fn query_vector(args: &QueryArgs, index: &Index) -> Result<Vec<f64>> {
    if let Some(text) = &args.q_vec {
        return parse_vector(text).context("--q-vec");
    }
    if let Some(path) = &args.q_file {
        let records = load_records(path, "q-file")?;
        return Ok(records[0].vector.as_slice().to_vec());
    }
    let id = args.q_item.expect("clap enforces one query source");
    let pos = index
        .item_position(id)
        .ok_or_else(|| anyhow!("--q-item: no item with id {id}"))?;
    Ok(index.item(pos).vector.to_vec())
}

fn cmd_query(args: QueryArgs) -> Result<()> {
    let index = load_index_from_path(&args.index).with_context(|| format!("--index {}", args.index.display()))?;
    let q = query_vector(&args, &index)?;
    let options = QueryOptions {
        use_blocks: !args.no_blocks,
        trace: false,
    };
    let report = reverse_kmips_parallel_with(&index, &q, args.k as usize, args.workers as usize, options)
        .context("--q-vec/--k")?;
    let ids: Vec<String> = report.result_ids.iter().map(u64::to_string).collect();
    println!("{}", ids.join(" "));
    println!(
        "{}",
        json!({
            "results": report.result_ids.len(),
            "ip_count": report.ip_count,
            "alpha": report.alpha,
            "blocks_pruned": report.blocks_pruned,
            "blocks_total": report.blocks_total,
            "mean_scan_length": report.mean_scan_length,
            "lower_bound_evaluations": report.lower_bound_evaluations,
            "elapsed_seconds": report.elapsed_seconds,
            "rebuild_seconds": report.rebuild_seconds,
        })
    );
    Ok(())
}

/// Returns `Ok(false)` on a mismatch (already printed).
fn cmd_verify(args: VerifyArgs) -> Result<bool> {
    let spec = args.data.spec();
    let (users, items) = generate(&spec).context("--n/--m/--d")?;
    let index = build_index(&users, &items, BuildConfig::with_k_max(args.k_max as usize)).context("--k-max")?;
    let k = args.k as usize;
    let options = QueryOptions {
        use_blocks: !args.no_blocks,
        trace: false,
    };
    let positions = sample_query_positions(items.len(), args.queries as usize, spec.seed);
    for &j in &positions {
        let q = items[j].vector.as_slice();
        let report = reverse_kmips_parallel_with(&index, q, k, args.workers as usize, options)?;
        let expected = brute_reverse_kmips(&users, &items, q, k);
        if report.result_ids != expected {
            let extra: Vec<u64> = report
                .result_ids
                .iter()
                .filter(|id| !expected.contains(id))
                .copied()
                .collect();
            let missing: Vec<u64> = expected
                .iter()
                .filter(|id| !report.result_ids.contains(id))
                .copied()
                .collect();
            println!(
                "{}",
                json!({ "ok": false, "query_item": items[j].id, "k": k, "unexpected": extra, "missing": missing })
            );
            return Ok(false);
        }
    }
    println!(
        "{}",
        json!({ "ok": true, "queries": positions.len(), "n": users.len(), "m": items.len(), "k": k })
    );
    Ok(true)
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let dataset = match (&args.users_file, &args.items_file) {
        (Some(users), Some(items)) => DatasetSource::Files {
            users: users.clone(),
            items: items.clone(),
        },
        _ => DatasetSource::Synthetic(args.data.spec()),
    };
    let config = SweepConfig {
        repetitions: args.repetitions as usize,
        query_count: args.queries as usize,
        baseline: match args.baseline {
            BaselineArg::Simpfer => Baseline::Simpfer,
            BaselineArg::SimpferNoBlocks => Baseline::SimpferNoBlocks,
            BaselineArg::BruteForce => Baseline::BruteForce,
        },
        k: args.k as usize,
        k_max: args.k_max as usize,
        workers: args.workers as usize,
        query_seed: args.data.seed,
        ..SweepConfig::new(
            match args.axis {
                Axis::K => SweepAxis::K,
                Axis::N => SweepAxis::N,
                Axis::M => SweepAxis::M,
                Axis::Workers => SweepAxis::Workers,
            },
            args.values.clone(),
            dataset,
        )
    };
    let report = run_sweep(&config).context("--axis/--values")?;
    let format = match args.format {
        Format::Json => ReportFormat::Json,
        Format::Csv => ReportFormat::Csv,
    };
    match &args.out {
        Some(path) => emit_report(&report, format, BufWriter::new(File::create(path)?))
            .with_context(|| format!("--out {}", path.display()))?,
        None => emit_report(&report, format, io::stdout().lock())?,
    }
    if let Some(dir) = &args.gnuplot_dir {
        fs::create_dir_all(dir).with_context(|| format!("--gnuplot-dir {}", dir.display()))?;
        for (name, metric) in [
            ("median_seconds", PlotMetric::MedianSeconds),
            ("ip_count", PlotMetric::IpCount),
            ("alpha", PlotMetric::Alpha),
            ("scan_length", PlotMetric::ScanLength),
            ("speedup", PlotMetric::Speedup),
        ] {
            let path = dir.join(format!("{name}.dat"));
            emit_gnuplot(&report, metric, BufWriter::new(File::create(&path)?))?;
        }
    }
    let bad = report.points.iter().filter(|p| p.verified == Some(false)).count();
    if bad > 0 {
        bail!("{bad} sweep point(s) disagreed with the brute-force oracle");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Gen(a) => cmd_gen(a).map(|_| true),
        Command::Build(a) => cmd_build(a).map(|_| true),
        Command::Query(a) => cmd_query(a).map(|_| true),
        Command::Verify(a) => cmd_verify(a),
        Command::Bench(a) => cmd_bench(a).map(|_| true),
    };
    let _ = io::stdout().flush();
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
