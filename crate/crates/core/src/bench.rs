//! Parameter sweeps over k, |Q|, |P| and worker count, with optional
//! brute-force cross-checking and JSON/CSV/gnuplot output.

use std::io::Write;
use std::path::PathBuf;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::engine::{reverse_kmips_parallel_with, QueryOptions};
use crate::error::{Error, Result};
use crate::index::{build_index, BuildConfig};
use crate::ingest::{generate, load_path, sample_query_positions, DatasetSpec};
use crate::model::Record;
use crate::oracle::brute_reverse_kmips;
use crate::persist::encoded_len;

/// Runs are cross-checked against the oracle only when `n * m` is at most this.
pub const DEFAULT_CROSS_CHECK_LIMIT: u64 = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    K,
    N,
    M,
    Workers,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    Simpfer,
    SimpferNoBlocks,
    BruteForce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "source")]
pub enum DatasetSource {
    Synthetic(DatasetSpec),
    Files { users: PathBuf, items: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub axis: SweepAxis,
    pub values: Vec<usize>,
    pub repetitions: usize,
    pub query_count: usize,
    pub baseline: Baseline,
    pub dataset: DatasetSource,
    /// k for points where k is not the swept axis.
    pub k: usize,
    /// Worker count for points where it is not the swept axis.
    pub workers: usize,
    pub k_max: usize,
    pub query_seed: u64,
    pub cross_check_limit: u64,
}

impl SweepConfig {
    pub fn new(axis: SweepAxis, values: Vec<usize>, dataset: DatasetSource) -> Self {
        Self {
            axis,
            values,
            repetitions: 3,
            query_count: 100,
            baseline: Baseline::Simpfer,
            dataset,
            k: 10,
            workers: 1,
            k_max: BuildConfig::default().k_max,
            query_seed: 0,
            cross_check_limit: DEFAULT_CROSS_CHECK_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions < 1 {
            return Err(Error::InvalidSweep("repetitions must be at least 1".into()));
        }
        if self.query_count < 1 {
            return Err(Error::InvalidSweep("query_count must be at least 1".into()));
        }
        if self.values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidSweep("values must be strictly increasing".into()));
        }
        if self.values.first() == Some(&0) {
            return Err(Error::InvalidSweep("axis values must be positive".into()));
        }
        if self.k < 1 || self.workers < 1 || self.k_max < 1 {
            return Err(Error::InvalidSweep("k, workers and k_max must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentInfo {
    pub os: String,
    pub arch: String,
    pub available_parallelism: usize,
    pub crate_version: String,
    pub unix_time: u64,
}

impl EnvironmentInfo {
    pub fn capture() -> Self {
        Self {
            os: std::env::consts::OS.into(),
            arch: std::env::consts::ARCH.into(),
            available_parallelism: std::thread::available_parallelism().map_or(1, |n| n.get()),
            crate_version: env!("CARGO_PKG_VERSION").into(),
            unix_time: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }
}

/// Totals over one pass of the query set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub repetition: usize,
    pub elapsed_seconds: f64,
    pub query_seconds: Vec<f64>,
    pub ip_count: u64,
    pub blocks_pruned: u64,
    /// Mean over queries of the per-query pruning ratio.
    pub alpha: f64,
    pub lower_bound_evaluations: u64,
    pub scanned_users: u64,
    pub scanned_items: u64,
    pub result_count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: usize,
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub workers: usize,
    pub build_seconds: f64,
    pub index_bytes: u64,
    pub repetitions: Vec<RepetitionResult>,
    pub median_elapsed_seconds: f64,
    pub mean_elapsed_seconds: f64,
    pub median_query_seconds: f64,
    pub ip_count: u64,
    pub alpha: f64,
    /// Items scanned per scanned user.
    pub mean_scan_length: f64,
    pub lower_bound_evaluations: u64,
    /// Median one-worker time over median time at this point (workers axis).
    pub speedup: Option<f64>,
    /// `None` when the cross-check was skipped for size.
    pub verified: Option<bool>,
    pub mismatched_queries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub config: SweepConfig,
    pub environment: EnvironmentInfo,
    pub points: Vec<SweepPoint>,
}

fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        v[mid]
    } else {
        (v[mid - 1] + v[mid]) / 2.0
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

struct PointParams {
    n: usize,
    m: usize,
    k: usize,
    workers: usize,
}

struct Loaded {
    users: Vec<Record>,
    items: Vec<Record>,
}

fn prepare(
    config: &SweepConfig,
    value: usize,
    files: Option<&Loaded>,
) -> Result<(PointParams, Vec<Record>, Vec<Record>)> {
    let (mut users, mut items) = match (&config.dataset, files) {
        (DatasetSource::Synthetic(spec), _) => {
            let mut spec = *spec;
            match config.axis {
                SweepAxis::N => spec.n = value,
                SweepAxis::M => spec.m = value,
                _ => {}
            }
            generate(&spec)?
        }
        (DatasetSource::Files { .. }, Some(l)) => (l.users.clone(), l.items.clone()),
        (DatasetSource::Files { .. }, None) => unreachable!("files are loaded up front"),
    };
    let fit = |records: &mut Vec<Record>, what: &str| -> Result<()> {
        if value > records.len() {
            return Err(Error::InvalidSweep(format!(
                "{what} = {value} exceeds the {} available vectors",
                records.len()
            )));
        }
        records.truncate(value);
        Ok(())
    };
    match config.axis {
        SweepAxis::N => fit(&mut users, "n")?,
        SweepAxis::M => fit(&mut items, "m")?,
        _ => {}
    }
    let params = PointParams {
        n: users.len(),
        m: items.len(),
        k: if config.axis == SweepAxis::K { value } else { config.k },
        workers: if config.axis == SweepAxis::Workers {
            value
        } else {
            config.workers
        },
    };
    Ok((params, users, items))
}

struct Measured {
    repetitions: Vec<RepetitionResult>,
    mismatched: Option<usize>,
}

fn measure(
    config: &SweepConfig,
    params: &PointParams,
    users: &[Record],
    items: &[Record],
    build: BuildConfig,
    check: bool,
) -> Result<(Measured, f64, u64)> {
    let index = build_index(users, items, build)?;
    let build_seconds = index.stats().build_seconds;
    let index_bytes = encoded_len(&index);
    let queries: Vec<Vec<f64>> = sample_query_positions(index.m(), config.query_count, config.query_seed)
        .into_iter()
        .map(|j| index.item(j).vector.to_vec())
        .collect();

    let options = QueryOptions {
        use_blocks: config.baseline != Baseline::SimpferNoBlocks,
        trace: false,
    };
    let mut mismatched = check.then_some(0usize);
    let mut repetitions = Vec::with_capacity(config.repetitions);
    for rep in 0..config.repetitions {
        let mut r = RepetitionResult {
            repetition: rep,
            elapsed_seconds: 0.0,
            query_seconds: Vec::with_capacity(queries.len()),
            ip_count: 0,
            blocks_pruned: 0,
            alpha: 0.0,
            lower_bound_evaluations: 0,
            scanned_users: 0,
            scanned_items: 0,
            result_count: 0,
        };
        let mut alpha_sum = 0.0;
        for q in &queries {
            let (ids, seconds) = match config.baseline {
                Baseline::BruteForce => {
                    let t = Instant::now();
                    let ids = brute_reverse_kmips(users, items, q, params.k);
                    r.ip_count += (params.n * (params.m + 1)) as u64;
                    (ids, t.elapsed().as_secs_f64())
                }
                _ => {
                    let report = reverse_kmips_parallel_with(&index, q, params.k, params.workers, options)?;
                    r.ip_count += report.ip_count;
                    r.blocks_pruned += report.blocks_pruned as u64;
                    r.lower_bound_evaluations += report.lower_bound_evaluations;
                    r.scanned_users += report.scanned_users;
                    r.scanned_items += report.scanned_items;
                    alpha_sum += report.alpha;
                    (report.result_ids, report.elapsed_seconds)
                }
            };
            r.result_count += ids.len() as u64;
            r.query_seconds.push(seconds);
            r.elapsed_seconds += seconds;
            if rep == 0 && config.baseline != Baseline::BruteForce {
                if let Some(bad) = mismatched.as_mut() {
                    if ids != brute_reverse_kmips(users, items, q, params.k) {
                        *bad += 1;
                    }
                }
            }
        }
        r.alpha = alpha_sum / queries.len().max(1) as f64;
        repetitions.push(r);
    }
    Ok((
        Measured {
            repetitions,
            mismatched,
        },
        build_seconds,
        index_bytes,
    ))
}

/// Runs every point of the sweep.
pub fn run_sweep(config: &SweepConfig) -> Result<SweepReport> {
    config.validate()?;
    let files = match &config.dataset {
        DatasetSource::Files { users, items } => Some(Loaded {
            users: load_path(users)?,
            items: load_path(items)?,
        }),
        DatasetSource::Synthetic(_) => None,
    };

    let mut points = Vec::with_capacity(config.values.len());
    let mut one_worker_median: Option<f64> = None;
    for &value in &config.values {
        let (params, users, items) = prepare(config, value, files.as_ref())?;
        let build = BuildConfig {
            k_max: config.k_max.max(params.k),
            ..BuildConfig::default()
        };
        let check = (params.n as u64).saturating_mul(params.m as u64) <= config.cross_check_limit;
        let (measured, build_seconds, index_bytes) = measure(config, &params, &users, &items, build, check)?;

        let totals: Vec<f64> = measured.repetitions.iter().map(|r| r.elapsed_seconds).collect();
        let all_queries: Vec<f64> = measured
            .repetitions
            .iter()
            .flat_map(|r| r.query_seconds.iter().copied())
            .collect();
        let median_elapsed = median(&totals);

        let speedup = if config.axis == SweepAxis::Workers {
            if one_worker_median.is_none() {
                one_worker_median = Some(if params.workers == 1 {
                    median_elapsed
                } else {
                    let single = PointParams { workers: 1, ..params };
                    let (m, _, _) = measure(config, &single, &users, &items, build, false)?;
                    let t: Vec<f64> = m.repetitions.iter().map(|r| r.elapsed_seconds).collect();
                    median(&t)
                });
            }
            one_worker_median.map(|base| {
                if median_elapsed > 0.0 {
                    base / median_elapsed
                } else {
                    0.0
                }
            })
        } else {
            None
        };

        let first = &measured.repetitions[0];
        points.push(SweepPoint {
            value,
            n: params.n,
            m: params.m,
            k: params.k,
            workers: params.workers,
            build_seconds,
            index_bytes,
            median_elapsed_seconds: median_elapsed,
            mean_elapsed_seconds: mean(&totals),
            median_query_seconds: median(&all_queries),
            ip_count: first.ip_count,
            alpha: first.alpha,
            mean_scan_length: if first.scanned_users == 0 {
                0.0
            } else {
                first.scanned_items as f64 / first.scanned_users as f64
            },
            lower_bound_evaluations: first.lower_bound_evaluations,
            speedup,
            verified: measured.mismatched.map(|bad| bad == 0),
            mismatched_queries: measured.mismatched.unwrap_or(0),
            repetitions: measured.repetitions,
        });
    }

    Ok(SweepReport {
        config: config.clone(),
        environment: EnvironmentInfo::capture(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_COLUMNS: [&str; 16] = [
    "axis",
    "value",
    "repetition",
    "baseline",
    "n",
    "m",
    "k",
    "workers",
    "elapsed_seconds",
    "ip_count",
    "alpha",
    "mean_scan_length",
    "lower_bound_evaluations",
    "blocks_pruned",
    "result_count",
    "verified",
];

fn axis_name(axis: SweepAxis) -> &'static str {
    match axis {
        SweepAxis::K => "k",
        SweepAxis::N => "n",
        SweepAxis::M => "m",
        SweepAxis::Workers => "workers",
    }
}

fn baseline_name(b: Baseline) -> &'static str {
    match b {
        Baseline::Simpfer => "simpfer",
        Baseline::SimpferNoBlocks => "simpfer-no-blocks",
        Baseline::BruteForce => "brute-force",
    }
}

/// Writes the report. JSON is the whole document; CSV has one row per
/// (axis value, repetition).
pub fn emit_report<W: Write>(report: &SweepReport, format: ReportFormat, mut sink: W) -> Result<()> {
    match format {
        ReportFormat::Json => {
            serde_json::to_writer_pretty(&mut sink, report)?;
            sink.write_all(b"\n")?;
        }
        ReportFormat::Csv => {
            let mut w = csv::Writer::from_writer(&mut sink);
            w.write_record(CSV_COLUMNS)?;
            for p in &report.points {
                for r in &p.repetitions {
                    let scan = if r.scanned_users == 0 {
                        0.0
                    } else {
                        r.scanned_items as f64 / r.scanned_users as f64
                    };
                    w.write_record([
                        axis_name(report.config.axis).to_string(),
                        p.value.to_string(),
                        r.repetition.to_string(),
                        baseline_name(report.config.baseline).to_string(),
                        p.n.to_string(),
                        p.m.to_string(),
                        p.k.to_string(),
                        p.workers.to_string(),
                        r.elapsed_seconds.to_string(),
                        r.ip_count.to_string(),
                        r.alpha.to_string(),
                        scan.to_string(),
                        r.lower_bound_evaluations.to_string(),
                        r.blocks_pruned.to_string(),
                        r.result_count.to_string(),
                        p.verified.map_or("skipped".to_string(), |v| v.to_string()),
                    ])?;
                }
            }
            w.flush()?;
        }
    }
    sink.flush()?;
    Ok(())
}

pub fn parse_json_report(text: &str) -> Result<SweepReport> {
    Ok(serde_json::from_str(text)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotMetric {
    MedianSeconds,
    IpCount,
    Alpha,
    ScanLength,
    Speedup,
}

/// Two-column `value metric` data for gnuplot.
pub fn emit_gnuplot<W: Write>(report: &SweepReport, metric: PlotMetric, mut sink: W) -> Result<()> {
    let label = match metric {
        PlotMetric::MedianSeconds => "median_elapsed_seconds",
        PlotMetric::IpCount => "ip_count",
        PlotMetric::Alpha => "alpha",
        PlotMetric::ScanLength => "mean_scan_length",
        PlotMetric::Speedup => "speedup",
    };
    writeln!(sink, "# {} {}", axis_name(report.config.axis), label)?;
    for p in &report.points {
        let y = match metric {
            PlotMetric::MedianSeconds => p.median_elapsed_seconds,
            PlotMetric::IpCount => p.ip_count as f64,
            PlotMetric::Alpha => p.alpha,
            PlotMetric::ScanLength => p.mean_scan_length,
            PlotMetric::Speedup => p.speedup.unwrap_or(f64::NAN),
        };
        writeln!(sink, "{} {}", p.value, y)?;
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::VectorDistribution;

    fn small(axis: SweepAxis, values: Vec<usize>) -> SweepConfig {
        let spec = DatasetSpec {
            n: 300,
            m: 120,
            d: 8,
            distribution: VectorDistribution::norm_skewed(),
            seed: 4,
        };
        SweepConfig {
            repetitions: 2,
            query_count: 5,
            ..SweepConfig::new(axis, values, DatasetSource::Synthetic(spec))
        }
    }

    #[test]
    fn k_sweep_is_verified_and_monotone() {
        let report = run_sweep(&small(SweepAxis::K, vec![1, 5, 10, 25])).unwrap();
        assert_eq!(report.points.len(), 4);
        for p in &report.points {
            assert_eq!(p.verified, Some(true));
        }
        assert!(report.points.windows(2).all(|w| w[0].ip_count <= w[1].ip_count));
    }

    #[test]
    fn no_blocks_never_evaluates_fewer_users() {
        let with = run_sweep(&small(SweepAxis::K, vec![1, 10])).unwrap();
        let without = run_sweep(&SweepConfig {
            baseline: Baseline::SimpferNoBlocks,
            ..small(SweepAxis::K, vec![1, 10])
        })
        .unwrap();
        for (a, b) in with.points.iter().zip(&without.points) {
            assert!(a.lower_bound_evaluations <= b.lower_bound_evaluations);
            assert_eq!(b.lower_bound_evaluations, 300 * 5);
        }
    }

    #[test]
    fn workers_axis_reports_speedup() {
        let report = run_sweep(&small(SweepAxis::Workers, vec![2, 3])).unwrap();
        assert!(report.points.iter().all(|p| p.speedup.is_some()));
        assert_eq!(report.points[0].ip_count, report.points[1].ip_count);
    }

    #[test]
    fn n_and_m_axes_resize_the_dataset() {
        let report = run_sweep(&small(SweepAxis::M, vec![50, 100])).unwrap();
        assert_eq!(report.points[1].m, 100);
        let report = run_sweep(&small(SweepAxis::N, vec![40])).unwrap();
        assert_eq!(report.points[0].n, 40);
    }

    #[test]
    fn brute_force_baseline_counts_everything() {
        let report = run_sweep(&SweepConfig {
            baseline: Baseline::BruteForce,
            ..small(SweepAxis::K, vec![3])
        })
        .unwrap();
        assert_eq!(report.points[0].ip_count, 5 * 300 * 121);
        assert_eq!(report.points[0].verified, Some(true));
    }

    #[test]
    fn invalid_configs() {
        assert!(run_sweep(&small(SweepAxis::K, vec![5, 5])).is_err());
        assert!(run_sweep(&SweepConfig {
            repetitions: 0,
            ..small(SweepAxis::K, vec![1])
        })
        .is_err());
    }

    #[test]
    fn empty_sweep_emits_valid_documents() {
        let report = run_sweep(&small(SweepAxis::K, vec![])).unwrap();
        let mut json = Vec::new();
        emit_report(&report, ReportFormat::Json, &mut json).unwrap();
        let back = parse_json_report(std::str::from_utf8(&json).unwrap()).unwrap();
        assert!(back.points.is_empty());
        let mut csv = Vec::new();
        emit_report(&report, ReportFormat::Csv, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1);
    }

    #[test]
    fn json_re_emits_identically_and_csv_rows_match() {
        let report = run_sweep(&small(SweepAxis::K, vec![1, 4])).unwrap();
        let mut first = Vec::new();
        emit_report(&report, ReportFormat::Json, &mut first).unwrap();
        let back = parse_json_report(std::str::from_utf8(&first).unwrap()).unwrap();
        let mut second = Vec::new();
        emit_report(&back, ReportFormat::Json, &mut second).unwrap();
        assert_eq!(first, second);

        let mut csv = Vec::new();
        emit_report(&report, ReportFormat::Csv, &mut csv).unwrap();
        assert_eq!(String::from_utf8(csv).unwrap().lines().count(), 1 + 2 * 2);

        let mut plot = Vec::new();
        emit_gnuplot(&report, PlotMetric::IpCount, &mut plot).unwrap();
        assert_eq!(String::from_utf8(plot).unwrap().lines().count(), 3);
    }

    #[test]
    fn median_and_mean() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert_eq!(mean(&[1.0, 2.0, 6.0]), 3.0);
        assert_eq!(median(&[]), 0.0);
    }
}
