//! Five slaves on loopback, one master, and the per-slave timing breakdown
//! of a query.
//!
//! cargo run --example scatter_gather

use odys::cluster::{ClusterConfig, LocalCluster};
use odys::corpus::{synthetic_corpus, SyntheticConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let docs = synthetic_corpus(&SyntheticConfig {
        docs: 20_000,
        ..SyntheticConfig::default()
    });
    let cluster = LocalCluster::start(docs, ClusterConfig::default()).await?;
    println!("slaves: {}", cluster.endpoints().join(" "));

    let text = r#"SELECT TOP 10 WHERE MATCH(content, "w2" AND "w9")"#;
    // The first query pays for cold caches on both ends.
    cluster.master().execute_text(text).await?;
    let r = cluster.master().execute_text(text).await?;
    for it in &r.items {
        println!("{:<10} {:.4} from slave {}", it.doc_key, it.rank, it.slave);
    }
    let t = &r.timing;
    for (i, s) in t.per_slave.iter().enumerate() {
        println!(
            "slave {i}: s={:?} m={:?} nt={:?} rt={:?}",
            s.slave, s.master, s.network, s.round_trip
        );
    }
    println!(
        "slowest slave {:?}, merge {:?}, total {:?}",
        t.slave_max(),
        t.merge,
        t.total
    );

    let stats = cluster.master().client().stats_all(false).await?;
    println!(
        "queries served per slave: {:?}",
        stats.iter().map(|s| s.queries).collect::<Vec<_>>()
    );
    cluster.shutdown().await;
    Ok(())
}
