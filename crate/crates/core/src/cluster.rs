//! Building segment indexes and running a whole cluster inside one process.

use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::corpus::{partition_round_robin, Document};
use crate::index::{IndexConfig, IndexError, IndexReader, IrIndex};
use crate::master::Master;
use crate::proto::{FanoutClient, FanoutError, DEFAULT_TIMEOUT};
use crate::server::ServerHandle;
use crate::slave::{BufferCounters, LimitedStrategy, SlaveNode};
use crate::storage::{
    load_index_with, save_index, DiskIndex, IndexFileSummary, LoadOptions, StorageError,
};

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error(transparent)]
    Index(#[from] IndexError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error(transparent)]
    Fanout(#[from] FanoutError),
    #[error("{what}: {source}")]
    Io {
        what: String,
        #[source]
        source: io::Error,
    },
}

pub fn segment_path(dir: &Path, segment: usize) -> PathBuf {
    dir.join(format!("segment-{segment:03}.odx"))
}

/// Partitions the corpus round-robin over rank order and writes one index
/// file per segment into `dir`.
pub fn build_segments(
    docs: Vec<Document>,
    parts: usize,
    config: &IndexConfig,
    dir: &Path,
) -> Result<Vec<IndexFileSummary>, ClusterError> {
    std::fs::create_dir_all(dir).map_err(|source| ClusterError::Io {
        what: dir.display().to_string(),
        source,
    })?;
    partition_round_robin(docs, parts)
        .into_iter()
        .enumerate()
        .map(|(i, seg)| {
            let idx = IrIndex::from_corpus(seg, config.clone())?;
            Ok(save_index(&idx, &segment_path(dir, i))?)
        })
        .collect()
}

pub async fn spawn_slave<I>(
    addr: &str,
    index: Arc<I>,
    concurrency: usize,
    strategy: LimitedStrategy,
) -> io::Result<ServerHandle>
where
    I: IndexReader + BufferCounters + Send + Sync + 'static,
{
    let node = Arc::new(SlaveNode::new(index).with_strategy(strategy));
    ServerHandle::start(addr, node, concurrency).await
}

#[derive(Debug, Clone)]
pub enum Backing {
    Memory,
    /// Segment files in `dir`, each loaded with its pinned size plus `buffer_slack` bytes of pool.
    Disk {
        dir: PathBuf,
        buffer_slack: u64,
        miss_penalty: Option<Duration>,
    },
}

#[derive(Debug, Clone)]
pub struct ClusterConfig {
    pub slaves: usize,
    pub index: IndexConfig,
    pub backing: Backing,
    pub concurrency: usize,
    pub strategy: LimitedStrategy,
    pub timeout: Duration,
}

impl Default for ClusterConfig {
    fn default() -> ClusterConfig {
        ClusterConfig {
            slaves: 5,
            index: IndexConfig::default(),
            backing: Backing::Memory,
            concurrency: 8,
            strategy: LimitedStrategy::Auto,
            timeout: DEFAULT_TIMEOUT,
        }
    }
}

/// Slaves on loopback ports plus a master connected to them.
pub struct LocalCluster {
    servers: Vec<ServerHandle>,
    endpoints: Vec<String>,
    disk: Vec<Arc<DiskIndex>>,
    master: Arc<Master>,
}

impl LocalCluster {
    pub async fn start(
        docs: Vec<Document>,
        cfg: ClusterConfig,
    ) -> Result<LocalCluster, ClusterError> {
        let mut servers = Vec::new();
        let mut disk = Vec::new();
        let bind_err = |source| ClusterError::Io {
            what: "bind slave".into(),
            source,
        };
        match &cfg.backing {
            Backing::Memory => {
                for seg in partition_round_robin(docs, cfg.slaves) {
                    let idx = Arc::new(IrIndex::from_corpus(seg, cfg.index.clone())?);
                    servers.push(
                        spawn_slave("127.0.0.1:0", idx, cfg.concurrency, cfg.strategy)
                            .await
                            .map_err(bind_err)?,
                    );
                }
            }
            Backing::Disk {
                dir,
                buffer_slack,
                miss_penalty,
            } => {
                for summary in build_segments(docs, cfg.slaves, &cfg.index, dir)? {
                    let idx = Arc::new(load_index_with(
                        &summary.path,
                        LoadOptions {
                            buffer_bytes: summary.pinned_bytes + buffer_slack,
                            miss_penalty: *miss_penalty,
                        },
                    )?);
                    disk.push(idx.clone());
                    servers.push(
                        spawn_slave("127.0.0.1:0", idx, cfg.concurrency, cfg.strategy)
                            .await
                            .map_err(bind_err)?,
                    );
                }
            }
        }
        let endpoints: Vec<String> = servers.iter().map(|s| s.local_addr().to_string()).collect();
        let client = FanoutClient::new(&endpoints)?.with_timeout(cfg.timeout);
        client.connect_all().await?;
        Ok(LocalCluster {
            servers,
            endpoints,
            disk,
            master: Arc::new(Master::new(client)),
        })
    }

    pub fn master(&self) -> &Arc<Master> {
        &self.master
    }

    pub fn endpoints(&self) -> &[String] {
        &self.endpoints
    }

    /// Loaded segment indexes when disk-backed, in slave order.
    pub fn disk_indexes(&self) -> &[Arc<DiskIndex>] {
        &self.disk
    }

    pub async fn shutdown(self) {
        for s in self.servers {
            let _ = s.shutdown().await;
        }
    }
}
