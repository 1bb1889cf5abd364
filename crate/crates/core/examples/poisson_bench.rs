//! Calibrate a disk-backed local cluster, drive Poisson load, and compare
//! the model's projection with what was measured.
//!
//! cargo run --release --example poisson_bench

use std::collections::BTreeMap;
use std::time::Duration;

use odys::bench::{
    calibrate, export_samples, generate_query_set, run_benchmark, warmup, DriverConfig,
    KeywordPool, WorkloadSpec,
};
use odys::cluster::{Backing, ClusterConfig, LocalCluster};
use odys::corpus::{synthetic_corpus, SyntheticConfig};
use odys::model::{estimation_error, total_response_time};
use odys::qlang::SearchCondition;
use odys::storage::PAGE_SIZE;

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = synthetic_corpus(&SyntheticConfig {
        docs: 10_000,
        ..SyntheticConfig::default()
    });
    let (warm_pool, pool) = KeywordPool::from_corpus(&docs, 20).split(0.3, 1);
    let dir = tempfile::tempdir()?;
    let cfg = ClusterConfig {
        backing: Backing::Disk {
            dir: dir.path().into(),
            buffer_slack: 2 * PAGE_SIZE as u64,
            miss_penalty: Some(Duration::from_millis(1)),
        },
        concurrency: 1,
        ..ClusterConfig::default()
    };
    let cluster = LocalCluster::start(docs, cfg).await?;
    let master = cluster.master();

    let spec = WorkloadSpec {
        queries: 200,
        ..WorkloadSpec::default()
    };
    let measured = generate_query_set(&spec, &pool)?;
    let warm = generate_query_set(
        &WorkloadSpec {
            queries: 60,
            ..spec.clone()
        },
        &warm_pool,
    )?;
    warmup(master, &warm, &measured, false).await?;

    let probes = BTreeMap::from([(10, warm.clone())]);
    let qmr = BTreeMap::from([((SearchCondition::Single, 10), 1.0)]);
    let params = calibrate(master, &probes, 1, qmr).await?.params;
    // A slave serves one query at a time, so its mean service time bounds the load.
    let idle = export_samples(
        &[run_benchmark(master.clone(), &warm, DriverConfig::new(5.0, 9)).await?],
        5,
    )?;
    let all: Vec<f64> = idle.per_query().iter().flatten().copied().collect();
    let capacity = 1000.0 * all.len() as f64 / all.iter().sum::<f64>();
    println!("about {capacity:.0} qps per slave");

    println!("qps    measured_ms  estimated_ms  error");
    for share in [0.2, 0.4, 0.6] {
        let qps = share * capacity;
        let mut runs = Vec::new();
        for rep in 0..3 {
            runs.push(
                run_benchmark(master.clone(), &measured, DriverConfig::new(qps, 100 + rep)).await?,
            );
        }
        let n = runs.iter().map(|r| r.queries.len()).sum::<usize>() as f64;
        let mean = runs
            .iter()
            .flat_map(|r| &r.queries)
            .map(|q| q.total.as_secs_f64() * 1000.0)
            .sum::<f64>()
            / n;
        let est = total_response_time(
            SearchCondition::Single,
            10,
            qps / 1000.0,
            &params,
            &export_samples(&runs, 5)?,
        )?;
        println!(
            "{qps:<6.1} {mean:<12.3} {est:<13.3} {:.3}",
            estimation_error(est, mean)?
        );
    }
    cluster.shutdown().await;
    Ok(())
}
