//! Workload generation and load driving against a running master.

pub mod calibrate;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use thiserror::Error;

use crate::corpus::{tokenize, Document};
use crate::index::Attribute;
use crate::kv::{parse_k, KvError, KvMap};
use crate::master::{Master, MasterError, SlaveTiming};
use crate::model::{ModelError, SojournSampleSet};
use crate::qlang::{Query, Scope, SearchCondition};

pub use calibrate::{calibrate, loser_tree_cost, network_service_from_decomposition, Calibration};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("keyword pool exhausted: {need} more {what} needed")]
    PoolExhausted { what: &'static str, need: usize },
    #[error("warmup set overlaps the measured set on {what} {value:?}")]
    Overlap { what: &'static str, value: String },
    #[error("empty warmup set; pass the cold-run flag to allow it")]
    EmptyWarmup,
    #[error("invalid workload: {0}")]
    Spec(String),
    #[error(transparent)]
    Kv(#[from] KvError),
    #[error(transparent)]
    Master(#[from] MasterError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("measurements inconsistent: {0}")]
    Inconsistent(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadSpec {
    pub queries: usize,
    pub qmr: BTreeMap<(SearchCondition, u32), f64>,
    /// Keywords per multi-keyword query.
    pub multi_keywords: usize,
    pub limited_field: Attribute,
    /// Queries per second.
    pub lambda_qps: f64,
    pub repetitions: usize,
    pub seed: u64,
}

impl Default for WorkloadSpec {
    fn default() -> WorkloadSpec {
        WorkloadSpec {
            queries: 1000,
            qmr: [((SearchCondition::Single, 10), 1.0)].into_iter().collect(),
            multi_keywords: 2,
            limited_field: Attribute::SiteId,
            lambda_qps: 10.0,
            repetitions: 1,
            seed: 7,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), BenchError> {
        let sum: f64 = self.qmr.values().sum();
        if self.qmr.values().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
            return Err(BenchError::Spec(format!(
                "query mix must be nonnegative and sum to 1 (got {sum})"
            )));
        }
        if self.qmr.keys().any(|&(_, k)| k == 0) {
            return Err(BenchError::Spec("top-k must be positive".into()));
        }
        if self.multi_keywords < 2 {
            return Err(BenchError::Spec(
                "multi-keyword queries need at least 2 keywords".into(),
            ));
        }
        if !(self.lambda_qps > 0.0) || self.repetitions == 0 {
            return Err(BenchError::Spec(
                "lambda and repetitions must be positive".into(),
            ));
        }
        Ok(())
    }

    pub fn from_kv(kv: &KvMap) -> Result<WorkloadSpec, BenchError> {
        let d = WorkloadSpec::default();
        let mut qmr = BTreeMap::new();
        for (suffix, v) in kv.with_prefix("qmr") {
            let key = format!("qmr.{suffix}");
            let (sct, k) = suffix
                .split_once('.')
                .and_then(|(s, k)| Some((SearchCondition::from_name(s)?, parse_k(k)?)))
                .ok_or_else(|| KvError::Unknown(key.clone()))?;
            let v: f64 = v.parse().map_err(|_| KvError::BadValue {
                key,
                value: v.into(),
            })?;
            qmr.insert((sct, k), v);
        }
        let field = match kv.get_str("limited_field") {
            None | Some("siteId") => Attribute::SiteId,
            Some("domainId") => Attribute::DomainId,
            Some(other) => return Err(BenchError::Spec(format!("limited_field {other:?}"))),
        };
        for key in kv.keys() {
            let known = [
                "queries",
                "multi_keywords",
                "limited_field",
                "lambda_qps",
                "repetitions",
                "seed",
            ];
            if !key.starts_with("qmr.") && !known.contains(&key) {
                return Err(KvError::Unknown(key.to_string()).into());
            }
        }
        let spec = WorkloadSpec {
            queries: kv.get("queries")?.unwrap_or(d.queries),
            qmr: if qmr.is_empty() { d.qmr } else { qmr },
            multi_keywords: kv.get("multi_keywords")?.unwrap_or(d.multi_keywords),
            limited_field: field,
            lambda_qps: kv.get("lambda_qps")?.unwrap_or(d.lambda_qps),
            repetitions: kv.get("repetitions")?.unwrap_or(d.repetitions),
            seed: kv.get("seed")?.unwrap_or(d.seed),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<WorkloadSpec, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        WorkloadSpec::from_kv(&KvMap::parse(&text)?)
    }

    pub fn to_kv(&self) -> KvMap {
        let mut kv = KvMap::default();
        kv.insert("queries", self.queries);
        kv.insert("multi_keywords", self.multi_keywords);
        kv.insert("limited_field", self.limited_field.name());
        kv.insert("lambda_qps", self.lambda_qps);
        kv.insert("repetitions", self.repetitions);
        kv.insert("seed", self.seed);
        for ((sct, k), v) in &self.qmr {
            kv.insert(format!("qmr.{}.k{k}", sct.name()), v);
        }
        kv
    }

    /// Query count per (condition, k), largest-remainder rounding so the
    /// counts sum to `queries`.
    pub fn type_counts(&self) -> BTreeMap<(SearchCondition, u32), usize> {
        let n = self.queries as f64;
        let mut counts: Vec<((SearchCondition, u32), usize, f64)> = self
            .qmr
            .iter()
            .map(|(&t, &r)| {
                let exact = r * n;
                (t, exact.floor() as usize, exact - exact.floor())
            })
            .collect();
        let assigned: usize = counts.iter().map(|c| c.1).sum();
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].2.total_cmp(&counts[a].2).then(a.cmp(&b)));
        for &i in order.iter().take(self.queries.saturating_sub(assigned)) {
            counts[i].1 += 1;
        }
        counts.into_iter().map(|(t, c, _)| (t, c)).collect()
    }
}

/// Values a query set draws from. Each is used at most once per set so no
/// query can be served from an earlier one's cached pages.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeywordPool {
    pub keywords: Vec<String>,
    pub site_ids: Vec<u64>,
    pub domain_ids: Vec<u64>,
}

impl KeywordPool {
    /// Tokens occurring in at least `min_docs` documents, with every site and
    /// domain id, in sorted order.
    pub fn from_corpus(docs: &[Document], min_docs: usize) -> KeywordPool {
        let mut df: BTreeMap<String, usize> = BTreeMap::new();
        let mut sites = BTreeSet::new();
        let mut domains = BTreeSet::new();
        for d in docs {
            let toks: BTreeSet<String> = tokenize(&d.content).into_iter().collect();
            for t in toks {
                *df.entry(t).or_default() += 1;
            }
            sites.insert(d.site_id);
            domains.insert(d.domain_id);
        }
        KeywordPool {
            keywords: df
                .into_iter()
                .filter(|&(_, n)| n >= min_docs)
                .map(|(t, _)| t)
                .collect(),
            site_ids: sites.into_iter().collect(),
            domain_ids: domains.into_iter().collect(),
        }
    }

    /// Deterministically splits every list into two disjoint pools; the first
    /// receives about `fraction` of each.
    pub fn split(&self, fraction: f64, seed: u64) -> (KeywordPool, KeywordPool) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        fn cut<T: Clone>(v: &[T], f: f64, rng: &mut ChaCha8Rng) -> (Vec<T>, Vec<T>) {
            let mut v = v.to_vec();
            v.shuffle(rng);
            let at = ((v.len() as f64) * f).round() as usize;
            let b = v.split_off(at.min(v.len()));
            (v, b)
        }
        let (ka, kb) = cut(&self.keywords, fraction, &mut rng);
        let (sa, sb) = cut(&self.site_ids, fraction, &mut rng);
        let (da, db) = cut(&self.domain_ids, fraction, &mut rng);
        (
            KeywordPool {
                keywords: ka,
                site_ids: sa,
                domain_ids: da,
            },
            KeywordPool {
                keywords: kb,
                site_ids: sb,
                domain_ids: db,
            },
        )
    }
}

/// Draws values without replacement in a seeded order.
struct Draw<T> {
    what: &'static str,
    items: Vec<T>,
}

impl<T: Clone> Draw<T> {
    fn new(what: &'static str, src: &[T], rng: &mut ChaCha8Rng) -> Draw<T> {
        let mut items = src.to_vec();
        items.shuffle(rng);
        items.reverse();
        Draw { what, items }
    }

    fn take(&mut self, n: usize) -> Result<Vec<T>, BenchError> {
        if self.items.len() < n {
            return Err(BenchError::PoolExhausted {
                what: self.what,
                need: n - self.items.len(),
            });
        }
        Ok((0..n).map(|_| self.items.pop().unwrap()).collect())
    }
}

/// Builds `spec.queries` queries in a seeded order. Within the set no
/// keyword, site id or domain id is used twice.
pub fn generate_query_set(
    spec: &WorkloadSpec,
    pool: &KeywordPool,
) -> Result<Vec<Query>, BenchError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut kws = Draw::new("keywords", &pool.keywords, &mut rng);
    let scope_src = match spec.limited_field {
        Attribute::SiteId => &pool.site_ids,
        Attribute::DomainId => &pool.domain_ids,
    };
    let mut scopes = Draw::new("scope ids", scope_src, &mut rng);
    let mut types: Vec<(SearchCondition, u32)> = spec
        .type_counts()
        .into_iter()
        .flat_map(|(t, n)| std::iter::repeat_n(t, n))
        .collect();
    types.shuffle(&mut rng);
    types
        .into_iter()
        .map(|(sct, k)| {
            let (words, scope) = match sct {
                SearchCondition::Single => (kws.take(1)?, None),
                SearchCondition::Multi => (kws.take(spec.multi_keywords)?, None),
                SearchCondition::Limited => (
                    kws.take(1)?,
                    Some(Scope {
                        field: spec.limited_field,
                        value: scopes.take(1)?[0],
                    }),
                ),
            };
            Query::with_condition(sct, words, scope, k)
                .map_err(|e| BenchError::Spec(format!("pool produced an invalid query: {e}")))
        })
        .collect()
}

fn footprint(set: &[Query]) -> (BTreeSet<&str>, BTreeSet<(Attribute, u64)>) {
    let mut kws = BTreeSet::new();
    let mut scopes = BTreeSet::new();
    for q in set {
        kws.extend(q.keywords().iter().map(String::as_str));
        if let Some(s) = q.scope() {
            scopes.insert((s.field, s.value));
        }
    }
    (kws, scopes)
}

/// Rejects warmup sets sharing a keyword or scope id with the measured set.
pub fn check_disjoint(warm: &[Query], measured: &[Query]) -> Result<(), BenchError> {
    let (wk, ws) = footprint(warm);
    let (mk, ms) = footprint(measured);
    if let Some(k) = wk.intersection(&mk).next() {
        return Err(BenchError::Overlap {
            what: "keyword",
            value: k.to_string(),
        });
    }
    if let Some((f, v)) = ws.intersection(&ms).next() {
        return Err(BenchError::Overlap {
            what: f.name(),
            value: v.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WarmupReport {
    pub queries: usize,
}

/// Runs the independent set to load index structures, then zeroes every
/// slave's counters. An empty set is a cold run and needs `allow_cold`.
pub async fn warmup(
    master: &Master,
    warm: &[Query],
    measured: &[Query],
    allow_cold: bool,
) -> Result<WarmupReport, BenchError> {
    if warm.is_empty() && !allow_cold {
        return Err(BenchError::EmptyWarmup);
    }
    check_disjoint(warm, measured)?;
    for q in warm {
        master.execute(q).await?;
    }
    master
        .client()
        .stats_all(true)
        .await
        .map_err(MasterError::from)?;
    Ok(WarmupReport {
        queries: warm.len(),
    })
}

/// Issue offsets from the start of a run; gaps are exponential with mean
/// `1/lambda_qps` seconds.
pub fn arrival_schedule(n: usize, lambda_qps: f64, seed: u64) -> Vec<Duration> {
    let gap = Exp::new(lambda_qps).expect("positive rate");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    (0..n)
        .map(|_| {
            t += gap.sample(&mut rng);
            Duration::from_secs_f64(t)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryMetrics {
    /// Position in the query set.
    pub index: usize,
    pub condition: SearchCondition,
    pub k: u32,
    pub issued_at: Duration,
    pub total: Duration,
    pub merge: Duration,
    pub per_slave: Vec<SlaveTiming>,
}

impl QueryMetrics {
    pub fn slave_max(&self) -> Duration {
        self.per_slave
            .iter()
            .map(|t| t.slave)
            .max()
            .unwrap_or_default()
    }

    /// Everything but the slowest slave.
    pub fn master_network(&self) -> Duration {
        self.total.saturating_sub(self.slave_max())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub lambda_qps: f64,
    pub queries: Vec<QueryMetrics>,
    pub wall: Duration,
    /// In-flight count at the end of each observation window.
    pub in_flight: Vec<usize>,
    pub unstable: bool,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1000.0
}

fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (p * (sorted.len() - 1) as f64).round() as usize;
    sorted[rank.min(sorted.len() - 1)]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub lambda_qps: f64,
    pub queries: usize,
    pub mean_total_ms: f64,
    pub p50_total_ms: f64,
    pub p95_total_ms: f64,
    pub p99_total_ms: f64,
    pub mean_slave_max_ms: f64,
    pub mean_master_network_ms: f64,
    pub throughput_qps: f64,
    pub unstable: bool,
}

impl RunMetrics {
    pub fn summary(&self) -> RunSummary {
        let n = self.queries.len();
        let mut totals: Vec<f64> = self.queries.iter().map(|q| ms(q.total)).collect();
        totals.sort_by(f64::total_cmp);
        let mean = |f: &dyn Fn(&QueryMetrics) -> f64| {
            if n == 0 {
                0.0
            } else {
                self.queries.iter().map(f).sum::<f64>() / n as f64
            }
        };
        RunSummary {
            lambda_qps: self.lambda_qps,
            queries: n,
            mean_total_ms: mean(&|q| ms(q.total)),
            p50_total_ms: percentile(&totals, 0.5),
            p95_total_ms: percentile(&totals, 0.95),
            p99_total_ms: percentile(&totals, 0.99),
            mean_slave_max_ms: mean(&|q| ms(q.slave_max())),
            mean_master_network_ms: mean(&|q| ms(q.master_network())),
            throughput_qps: if self.wall.is_zero() {
                0.0
            } else {
                n as f64 / self.wall.as_secs_f64()
            },
            unstable: self.unstable,
        }
    }
}

/// A run that stopped on a failed query; `partial` holds what completed.
#[derive(Debug, Error)]
#[error("query {index} failed: {source}")]
pub struct RunFailure {
    pub index: usize,
    #[source]
    pub source: MasterError,
    pub partial: RunMetrics,
}

#[derive(Debug, Clone, Copy)]
pub struct DriverConfig {
    pub lambda_qps: f64,
    pub seed: u64,
    /// Window for in-flight observations.
    pub window: Duration,
    /// Consecutive growing windows that mark a run unstable.
    pub growth_windows: usize,
}

impl DriverConfig {
    pub fn new(lambda_qps: f64, seed: u64) -> DriverConfig {
        DriverConfig {
            lambda_qps,
            seed,
            window: Duration::from_secs(10),
            growth_windows: 3,
        }
    }
}

/// True once the in-flight count has risen across `windows` consecutive windows.
pub fn backlog_growing(in_flight: &[usize], windows: usize) -> bool {
    windows > 0
        && in_flight
            .windows(2)
            .collect::<Vec<_>>()
            .windows(windows)
            .any(|run| run.iter().all(|w| w[1] > w[0]))
}

/// Issues the queries on a Poisson schedule without waiting for earlier
/// ones, then waits for all of them.
pub async fn run_benchmark(
    master: Arc<Master>,
    queries: &[Query],
    cfg: DriverConfig,
) -> Result<RunMetrics, RunFailure> {
    let schedule = arrival_schedule(queries.len(), cfg.lambda_qps, cfg.seed);
    let in_flight = Arc::new(AtomicUsize::new(0));
    let start = tokio::time::Instant::now();
    let mut tasks = tokio::task::JoinSet::new();
    let mut samples = Vec::new();
    let mut next_window = start + cfg.window;
    for (i, (q, at)) in queries.iter().zip(&schedule).enumerate() {
        let due = start + *at;
        while next_window <= due {
            tokio::time::sleep_until(next_window).await;
            samples.push(in_flight.load(Ordering::Relaxed));
            next_window += cfg.window;
        }
        tokio::time::sleep_until(due).await;
        let (master, q, counter) = (master.clone(), q.clone(), in_flight.clone());
        counter.fetch_add(1, Ordering::Relaxed);
        let issued_at = start.elapsed();
        tasks.spawn(async move {
            let r = master.execute(&q).await;
            counter.fetch_sub(1, Ordering::Relaxed);
            (i, q, issued_at, r)
        });
    }
    let mut done = Vec::with_capacity(queries.len());
    let mut failure = None;
    loop {
        let next = tokio::select! {
            r = tasks.join_next() => r,
            _ = tokio::time::sleep_until(next_window) => {
                samples.push(in_flight.load(Ordering::Relaxed));
                next_window += cfg.window;
                continue;
            }
        };
        let Some(joined) = next else { break };
        let (i, q, issued_at, r) = joined.expect("benchmark task panicked");
        match r {
            Ok(res) => done.push(QueryMetrics {
                index: i,
                condition: q.condition(),
                k: q.k(),
                issued_at,
                total: res.timing.total,
                merge: res.timing.merge,
                per_slave: res.timing.per_slave,
            }),
            Err(e) => {
                if failure.is_none() {
                    failure = Some((i, e));
                    tasks.abort_all();
                }
            }
        }
    }
    done.sort_by_key(|q| q.index);
    let metrics = RunMetrics {
        lambda_qps: cfg.lambda_qps,
        wall: start.elapsed(),
        unstable: backlog_growing(&samples, cfg.growth_windows),
        in_flight: samples,
        queries: done,
    };
    match failure {
        Some((index, source)) => Err(RunFailure {
            index,
            source,
            partial: metrics,
        }),
        None => Ok(metrics),
    }
}

/// One repetition per run; every run must cover the same queries. Each
/// query's samples come out in (repetition, slave) order.
pub fn export_samples(runs: &[RunMetrics], np: usize) -> Result<SojournSampleSet, BenchError> {
    let Some(first) = runs.first() else {
        return Err(BenchError::Inconsistent("no runs".into()));
    };
    let n = first.queries.len();
    let mut per_query = vec![Vec::with_capacity(np * runs.len()); n];
    for (rep, run) in runs.iter().enumerate() {
        if run.queries.len() != n {
            return Err(BenchError::Inconsistent(format!(
                "repetition {rep} has {} queries, expected {n}",
                run.queries.len()
            )));
        }
        for (slot, q) in per_query.iter_mut().zip(&run.queries) {
            if q.per_slave.len() != np {
                return Err(BenchError::Inconsistent(format!(
                    "query {} has {} slave timings, expected {np}",
                    q.index,
                    q.per_slave.len()
                )));
            }
            // Zero-duration timings would be rejected as samples; clamp to 1 µs resolution.
            slot.extend(q.per_slave.iter().map(|t| ms(t.slave).max(1e-3)));
        }
    }
    Ok(SojournSampleSet::new(np, runs.len(), per_query)?)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> BenchError + '_ {
    move |source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One line per query.
pub fn write_metrics(path: &Path, m: &RunMetrics) -> Result<(), BenchError> {
    let f = std::fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    let join = |f: &dyn Fn(&SlaveTiming) -> Duration, q: &QueryMetrics| {
        q.per_slave
            .iter()
            .map(|t| format!("{:.3}", ms(f(t))))
            .collect::<Vec<_>>()
            .join(";")
    };
    let mut body = String::from("index,condition,k,issued_ms,total_ms,slave_max_ms,master_network_ms,merge_ms,s_ms,m_ms,nt_ms\n");
    for q in &m.queries {
        body.push_str(&format!(
            "{},{},{},{:.3},{:.3},{:.3},{:.3},{:.4},{},{},{}\n",
            q.index,
            q.condition,
            q.k,
            ms(q.issued_at),
            ms(q.total),
            ms(q.slave_max()),
            ms(q.master_network()),
            ms(q.merge),
            join(&|t| t.slave, q),
            join(&|t| t.master, q),
            join(&|t| t.network, q),
        ));
    }
    w.write_all(body.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub const SUMMARY_HEADER: &str =
    "lambda_qps,queries,mean_total_ms,p50_total_ms,p95_total_ms,p99_total_ms,mean_slave_max_ms,mean_master_network_ms,throughput_qps,unstable";

pub fn summary_row(s: &RunSummary) -> String {
    format!(
        "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4},{:.3},{}",
        s.lambda_qps,
        s.queries,
        s.mean_total_ms,
        s.p50_total_ms,
        s.p95_total_ms,
        s.p99_total_ms,
        s.mean_slave_max_ms,
        s.mean_master_network_ms,
        s.throughput_qps,
        s.unstable
    )
}
