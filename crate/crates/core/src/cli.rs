//! Command-line front end. Every subcommand writes machine-readable output
//! to stdout and diagnostics to stderr; failures exit nonzero.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::bench::{
    calibrate, export_samples, generate_query_set, run_benchmark, warmup, write_metrics,
    DriverConfig, KeywordPool, RunMetrics, WorkloadSpec, SUMMARY_HEADER,
};
use crate::cluster::build_segments;
use crate::corpus::{read_corpus, synthetic_corpus, Document, SyntheticConfig};
use crate::index::IndexConfig;
use crate::master::{Master, MasterService, TopKResult};
use crate::model::{
    estimate_response, estimation_error, read_samples, slave_max_partitioning, write_samples,
    ModelError, ModelParams,
};
use crate::proto::FanoutClient;
use crate::qlang::{parse_query, Query, SearchCondition};
use crate::server::{serve, termination_signal};
use crate::slave::{LimitedStrategy, SlaveNode};
use crate::storage::{load_index_with, LoadOptions};

#[derive(Debug, Parser)]
#[command(
    name = "odys",
    version,
    about = "Document-partitioned search cluster and its response-time model"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Partition a corpus round-robin over rank order and write one index file per slave.
    BuildIndex(BuildIndexArgs),
    /// Serve one index file.
    Slave(SlaveArgs),
    /// Fan user queries out to slaves and merge.
    Master(MasterArgs),
    /// Run queries once and print results with their timing breakdown.
    Query(QueryArgs),
    /// Drive Poisson load and record per-query metrics and slave samples.
    Bench(BenchArgs),
    /// Measure model parameters on an idle cluster.
    Calibrate(CalibrateArgs),
    /// Project response times over a load grid for a given slave count.
    Estimate(EstimateArgs),
    /// Relative error of estimated against measured means.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
pub struct CorpusSource {
    /// Tab-separated corpus: docKey, url, siteId, domainId, rank, content.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Generate this many synthetic documents instead.
    #[arg(long)]
    pub synthetic: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BuildIndexArgs {
    #[command(flatten)]
    pub source: CorpusSource,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub partitions: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 128)]
    pub skip_interval: usize,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum StrategyArg {
    Auto,
    Embedded,
    Join,
}

impl From<StrategyArg> for LimitedStrategy {
    fn from(s: StrategyArg) -> LimitedStrategy {
        match s {
            StrategyArg::Auto => LimitedStrategy::Auto,
            StrategyArg::Embedded => LimitedStrategy::Embedded,
            StrategyArg::Join => LimitedStrategy::Join,
        }
    }
}

#[derive(Debug, Args)]
pub struct SlaveArgs {
    #[arg(long)]
    pub listen: String,
    #[arg(long)]
    pub index: PathBuf,
    /// Pinned sections plus posting cache; defaults to the whole file.
    #[arg(long)]
    pub buffer_bytes: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pub concurrency: usize,
    #[arg(long)]
    pub miss_penalty_us: Option<u64>,
    #[arg(long, value_enum, default_value_t = StrategyArg::Auto)]
    pub strategy: StrategyArg,
}

#[derive(Debug, Args)]
pub struct MasterArgs {
    #[arg(long)]
    pub listen: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub slaves: Vec<String>,
    #[arg(long, default_value_t = 64)]
    pub concurrency: usize,
    #[arg(long, default_value_t = 5000)]
    pub timeout_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Text,
    Lines,
}

#[derive(Debug, Args)]
pub struct QueryArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub slaves: Vec<String>,
    #[arg(long, value_enum, default_value_t = OutputFormat::Text)]
    pub format: OutputFormat,
    #[arg(long, default_value_t = 5000)]
    pub timeout_ms: u64,
    /// Queries in the SELECT TOP syntax; read one per line from stdin when absent.
    pub queries: Vec<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub slaves: Vec<String>,
    #[command(flatten)]
    pub source: CorpusSource,
    /// Seed of the synthetic corpus.
    #[arg(long, default_value_t = 7)]
    pub corpus_seed: u64,
    /// key=value workload file; defaults to single-keyword top-10.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[arg(long)]
    pub queries: Option<usize>,
    /// Arrival rates in queries per second.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda: Vec<f64>,
    #[arg(long, default_value_t = 1)]
    pub repetitions: usize,
    /// Warmup queries drawn from a keyword pool disjoint from the measured one.
    #[arg(long, default_value_t = 100)]
    pub warmup_queries: usize,
    /// Allow running without warmup.
    #[arg(long)]
    pub cold: bool,
    /// Keywords must occur in at least this many documents.
    #[arg(long, default_value_t = 5)]
    pub min_docs: usize,
    #[arg(long, default_value_t = 30_000)]
    pub timeout_ms: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[arg(long, value_delimiter = ',', required = true)]
    pub slaves: Vec<String>,
    #[command(flatten)]
    pub source: CorpusSource,
    #[arg(long, default_value_t = 7)]
    pub corpus_seed: u64,
    /// Workload whose query mix goes into the parameter file.
    #[arg(long)]
    pub workload: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "10,50,1000")]
    pub ks: Vec<u32>,
    /// Probe queries per top-k.
    #[arg(long, default_value_t = 60)]
    pub probes: usize,
    #[arg(long, default_value_t = 2)]
    pub repeats: usize,
    #[arg(long, default_value_t = 5)]
    pub min_docs: usize,
    #[arg(long, default_value_t = 11)]
    pub seed: u64,
    /// Parameter file; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub params: PathBuf,
    /// Slave sojourn samples measured for the estimated query type.
    #[arg(long)]
    pub samples: PathBuf,
    /// Arrival rates in queries per second.
    #[arg(long, value_delimiter = ',', required = true)]
    pub lambda_grid: Vec<f64>,
    /// Slave count to project to; defaults to the parameter file's.
    #[arg(long)]
    pub ns: Option<u32>,
    /// Links the slave replies share. Calibration writes one per slave.
    #[arg(long)]
    pub nh: Option<u32>,
    #[arg(long, default_value_t = 10)]
    pub k: u32,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub estimated: PathBuf,
    #[arg(long)]
    pub measured: PathBuf,
    /// Defaults to TOTAL-EST, else mean_total_ms.
    #[arg(long)]
    pub estimated_column: Option<String>,
    /// Defaults to mean_total_ms, else TOTAL-EST.
    #[arg(long)]
    pub measured_column: Option<String>,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildIndex(a) => build_index(a),
        Command::Slave(a) => runtime()?.block_on(slave(a)),
        Command::Master(a) => runtime()?.block_on(master(a)),
        Command::Query(a) => runtime()?.block_on(query(a)),
        Command::Bench(a) => runtime()?.block_on(bench(a)),
        Command::Calibrate(a) => runtime()?.block_on(calibrate_cmd(a)),
        Command::Estimate(a) => estimate(a),
        Command::Compare(a) => compare(a),
    }
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    Ok(tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()?)
}

fn load_docs(source: &CorpusSource, seed: u64) -> Result<Vec<Document>> {
    match (&source.corpus, source.synthetic) {
        (Some(path), _) => Ok(read_corpus(path)?),
        (None, Some(docs)) => Ok(synthetic_corpus(&SyntheticConfig {
            docs,
            seed,
            ..SyntheticConfig::default()
        })),
        (None, None) => bail!("one of --corpus or --synthetic is required"),
    }
}

fn build_index(a: BuildIndexArgs) -> Result<()> {
    if a.partitions == 0 {
        bail!("--partitions must be at least 1");
    }
    let docs = load_docs(&a.source, a.seed)?;
    let cfg = IndexConfig {
        skip_interval: a.skip_interval,
        ..IndexConfig::default()
    };
    let summaries = build_segments(docs, a.partitions, &cfg, &a.out)?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "segment,path,terms,file_bytes,pinned_bytes")?;
    for (i, s) in summaries.iter().enumerate() {
        writeln!(
            out,
            "{i},{},{},{},{}",
            s.path.display(),
            s.dictionary_entries,
            s.file_bytes,
            s.pinned_bytes
        )?;
    }
    Ok(())
}

async fn bind(addr: &str) -> Result<tokio::net::TcpListener> {
    let l = tokio::net::TcpListener::bind(addr)
        .await
        .with_context(|| format!("bind {addr}"))?;
    println!("listening {}", l.local_addr()?);
    std::io::stdout().flush()?;
    Ok(l)
}

async fn slave(a: SlaveArgs) -> Result<()> {
    let buffer_bytes = match a.buffer_bytes {
        Some(b) => b,
        None => fs::metadata(&a.index)
            .with_context(|| a.index.display().to_string())?
            .len(),
    };
    let opts = LoadOptions {
        buffer_bytes,
        miss_penalty: a.miss_penalty_us.map(Duration::from_micros),
    };
    let index = Arc::new(load_index_with(&a.index, opts)?);
    let node = Arc::new(SlaveNode::new(index).with_strategy(a.strategy.into()));
    let listener = bind(&a.listen).await?;
    serve(
        listener,
        node,
        a.concurrency,
        termination_signal(),
        Duration::from_secs(5),
    )
    .await?;
    Ok(())
}

fn client(slaves: &[String], timeout_ms: u64) -> Result<FanoutClient> {
    Ok(FanoutClient::new(slaves)?.with_timeout(Duration::from_millis(timeout_ms)))
}

async fn master(a: MasterArgs) -> Result<()> {
    let service = Arc::new(MasterService::new(Master::new(client(
        &a.slaves,
        a.timeout_ms,
    )?)));
    let listener = bind(&a.listen).await?;
    serve(
        listener,
        service,
        a.concurrency,
        termination_signal(),
        Duration::from_secs(5),
    )
    .await?;
    Ok(())
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn print_result(
    out: &mut impl Write,
    n: usize,
    q: &Query,
    r: &TopKResult,
    format: OutputFormat,
) -> std::io::Result<()> {
    let t = &r.timing;
    match format {
        OutputFormat::Text => {
            writeln!(out, "{q}")?;
            writeln!(
                out,
                "{} results, total {:.3} ms, slowest slave {:.3} ms, merge {:.3} ms",
                r.items.len(),
                ms(t.total),
                ms(t.slave_max()),
                ms(t.merge)
            )?;
            for (i, it) in r.items.iter().enumerate() {
                writeln!(
                    out,
                    "{:>5}  {:<24} {:.6}  (slave {})",
                    i + 1,
                    it.doc_key,
                    it.rank,
                    it.slave
                )?;
            }
            for (i, s) in t.per_slave.iter().enumerate() {
                writeln!(
                    out,
                    "  slave {i}: s {:.3} ms, m {:.3} ms, nt {:.3} ms, round trip {:.3} ms",
                    ms(s.slave),
                    ms(s.master),
                    ms(s.network),
                    ms(s.round_trip)
                )?;
            }
        }
        OutputFormat::Lines => {
            writeln!(out, "query\t{n}\t{q}")?;
            for (i, it) in r.items.iter().enumerate() {
                writeln!(
                    out,
                    "item\t{n}\t{}\t{}\t{}\t{}",
                    i + 1,
                    it.doc_key,
                    it.rank,
                    it.slave
                )?;
            }
            for (i, s) in t.per_slave.iter().enumerate() {
                writeln!(
                    out,
                    "slave\t{n}\t{i}\t{:.4}\t{:.4}\t{:.4}\t{:.4}",
                    ms(s.slave),
                    ms(s.master),
                    ms(s.network),
                    ms(s.round_trip)
                )?;
            }
            writeln!(
                out,
                "timing\t{n}\t{:.4}\t{:.4}\t{:.4}",
                ms(t.total),
                ms(t.slave_max()),
                ms(t.merge)
            )?;
        }
    }
    Ok(())
}

async fn query(a: QueryArgs) -> Result<()> {
    let texts = if a.queries.is_empty() {
        std::io::stdin()
            .lines()
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|l| !l.trim().is_empty())
            .collect()
    } else {
        a.queries.clone()
    };
    let master = Master::new(client(&a.slaves, a.timeout_ms)?);
    let mut out = std::io::stdout().lock();
    for (n, text) in texts.iter().enumerate() {
        let q = parse_query(text).with_context(|| format!("query {}: {text}", n + 1))?;
        let r = master.execute(&q).await?;
        print_result(&mut out, n, &q, &r, a.format)?;
    }
    Ok(())
}

fn workload(path: &Option<PathBuf>) -> Result<WorkloadSpec> {
    Ok(match path {
        Some(p) => WorkloadSpec::load(p)?,
        None => WorkloadSpec::default(),
    })
}

/// Concatenates repetitions so one summary row covers them all.
fn combined(runs: &[RunMetrics]) -> RunMetrics {
    RunMetrics {
        lambda_qps: runs[0].lambda_qps,
        queries: runs
            .iter()
            .flat_map(|r| r.queries.iter().cloned())
            .collect(),
        wall: runs.iter().map(|r| r.wall).sum(),
        in_flight: runs
            .iter()
            .flat_map(|r| r.in_flight.iter().copied())
            .collect(),
        unstable: runs.iter().any(|r| r.unstable),
    }
}

async fn bench(a: BenchArgs) -> Result<()> {
    let mut spec = workload(&a.workload)?;
    if let Some(n) = a.queries {
        spec.queries = n;
    }
    spec.repetitions = a.repetitions.max(1);
    let docs = load_docs(&a.source, a.corpus_seed)?;
    let pool = KeywordPool::from_corpus(&docs, a.min_docs);
    let (warm_pool, measured_pool) = if a.warmup_queries > 0 {
        pool.split(0.3, spec.seed)
    } else {
        (KeywordPool::default(), pool)
    };
    let measured = generate_query_set(&spec, &measured_pool)?;
    let warm = if a.warmup_queries > 0 {
        let ws = WorkloadSpec {
            queries: a.warmup_queries,
            seed: spec.seed ^ 0x5eed,
            ..spec.clone()
        };
        generate_query_set(&ws, &warm_pool)?
    } else {
        Vec::new()
    };
    fs::create_dir_all(&a.out).with_context(|| a.out.display().to_string())?;
    let master = Arc::new(Master::new(client(&a.slaves, a.timeout_ms)?));
    master.client().connect_all().await?;
    let report = warmup(&master, &warm, &measured, a.cold).await?;
    eprintln!("warmup: {} queries", report.queries);

    let mut summary = String::from(SUMMARY_HEADER);
    summary.push('\n');
    for &lambda in &a.lambda {
        let mut runs = Vec::new();
        for rep in 0..spec.repetitions {
            let cfg = DriverConfig::new(lambda, spec.seed.wrapping_add(rep as u64));
            let m = run_benchmark(master.clone(), &measured, cfg).await?;
            write_metrics(&a.out.join(format!("metrics-{lambda}-{rep}.csv")), &m)?;
            if m.unstable {
                eprintln!(
                    "lambda {lambda}: repetition {rep} backlog kept growing; treat as unstable"
                );
            }
            runs.push(m);
        }
        let samples = export_samples(&runs, a.slaves.len())?;
        write_samples(&a.out.join(format!("samples-{lambda}.csv")), &samples)?;
        summary.push_str(&crate::bench::summary_row(&combined(&runs).summary()));
        summary.push('\n');
    }
    let path = a.out.join("summary.csv");
    fs::write(&path, &summary).with_context(|| path.display().to_string())?;
    print!("{summary}");
    Ok(())
}

async fn calibrate_cmd(a: CalibrateArgs) -> Result<()> {
    if !a.ks.contains(&10) {
        bail!("--ks must include 10");
    }
    let spec = workload(&a.workload)?;
    let docs = load_docs(&a.source, a.corpus_seed)?;
    let pool = KeywordPool::from_corpus(&docs, a.min_docs);
    let mut probes = BTreeMap::new();
    for (i, &k) in a.ks.iter().enumerate() {
        let ps = WorkloadSpec {
            queries: a.probes,
            qmr: [((SearchCondition::Single, k), 1.0)].into_iter().collect(),
            seed: a.seed.wrapping_add(i as u64),
            ..WorkloadSpec::default()
        };
        probes.insert(k, generate_query_set(&ps, &pool)?);
    }
    let master = Master::new(client(&a.slaves, 30_000)?);
    let cal = calibrate(&master, &probes, a.repeats, spec.qmr.clone()).await?;
    for (k, p) in &cal.per_k {
        eprintln!(
            "top-{k}: {} runs, total {:.3} ms (cv {:.2}), slave {:.3} ms, master {:.4} ms, network {:.4} ms",
            p.runs, p.mean_total_ms, p.cv_total, p.mean_slave_ms, p.mean_master_ms, p.st_network_ms
        );
    }
    for n in cal.noisy.iter().chain(&cal.notes) {
        eprintln!("note: {n}");
    }
    match &a.out {
        Some(path) => cal.params.save(path)?,
        None => print!("{}", cal.params.to_kv().to_text()),
    }
    Ok(())
}

pub const ESTIMATE_HEADER: &str = "lambda_qps,TOTAL-EST,SLAVE-MAX-EST,MN-EST,status";

fn estimate(a: EstimateArgs) -> Result<()> {
    let mut p = ModelParams::load(&a.params)?;
    if let Some(ns) = a.ns {
        p.ns = ns;
    }
    if let Some(nh) = a.nh {
        p.nh = nh;
    }
    p.validate()?;
    let samples = read_samples(&a.samples)?;
    let slave_max = slave_max_partitioning(&samples, p.ns as usize)?;
    let mut body = format!("{ESTIMATE_HEADER}\n");
    for &qps in &a.lambda_grid {
        match estimate_response(a.k, qps / 1000.0, &p, slave_max) {
            Ok(e) => body.push_str(&format!(
                "{qps},{:.6},{:.6},{:.6},ok\n",
                e.total, e.slave_max, e.master_network
            )),
            Err(ModelError::Saturated { component, rho }) => {
                let c = component.map_or("queue".to_string(), |c| c.to_string());
                body.push_str(&format!("{qps},,,,saturated {c} rho={rho:.4}\n"));
            }
            Err(e) => return Err(e.into()),
        }
    }
    match &a.out {
        Some(path) => fs::write(path, &body).with_context(|| path.display().to_string())?,
        None => print!("{body}"),
    }
    Ok(())
}

/// (lambda, value) rows; rows with an empty value are skipped.
fn read_column(
    path: &Path,
    wanted: &Option<String>,
    fallbacks: [&str; 2],
) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_path(path).with_context(|| path.display().to_string())?;
    let headers = rd.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);
    let lambda =
        find("lambda_qps").ok_or_else(|| anyhow!("{}: no lambda_qps column", path.display()))?;
    let col = match wanted {
        Some(c) => find(c).ok_or_else(|| anyhow!("{}: no {c} column", path.display()))?,
        None => fallbacks
            .iter()
            .find_map(|c| find(c))
            .ok_or_else(|| anyhow!("{}: none of {} found", path.display(), fallbacks.join(", ")))?,
    };
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let v = rec.get(col).unwrap_or("").trim();
        if v.is_empty() {
            continue;
        }
        let l: f64 = rec
            .get(lambda)
            .unwrap_or("")
            .trim()
            .parse()
            .with_context(|| format!("{}: lambda", path.display()))?;
        rows.push((
            l,
            v.parse()
                .with_context(|| format!("{}: value {v:?}", path.display()))?,
        ));
    }
    Ok(rows)
}

fn compare(a: CompareArgs) -> Result<()> {
    let est = read_column(
        &a.estimated,
        &a.estimated_column,
        ["TOTAL-EST", "mean_total_ms"],
    )?;
    let meas = read_column(
        &a.measured,
        &a.measured_column,
        ["mean_total_ms", "TOTAL-EST"],
    )?;
    let mut out = std::io::stdout().lock();
    writeln!(out, "lambda_qps,estimated_ms,measured_ms,error")?;
    let mut matched = 0;
    for (l, m) in &meas {
        let Some((_, e)) = est
            .iter()
            .find(|(el, _)| (el - l).abs() <= 1e-9 * l.abs().max(1.0))
        else {
            continue;
        };
        writeln!(out, "{l},{e:.6},{m:.6},{:.6}", estimation_error(*e, *m)?)?;
        matched += 1;
    }
    if matched == 0 {
        bail!("no load point appears in both files");
    }
    Ok(())
}
