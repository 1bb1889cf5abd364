//! The master: scatter a query to every slave, then merge the per-slave
//! top-k lists with a loser tree.

use std::cmp::Ordering as CmpOrdering;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::proto::{
    ErrorPayload, FanoutClient, FanoutError, Message, QueryPayload, ResultItem, SlaveStats,
    TopKPayload,
};
use crate::qlang::{parse_query, Query, QueryError};
use crate::server::{BoxFuture, QueryService};

#[derive(Debug, Clone, PartialEq)]
pub struct MergedItem {
    pub doc_key: String,
    pub rank: f64,
    pub slave: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub items: Vec<MergedItem>,
    /// Comparisons spent building the initial tournament.
    pub build_comparisons: u64,
    /// Comparisons spent replaying after each emitted item.
    pub replay_comparisons: u64,
    /// Largest single replay.
    pub max_replay: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MergeError {
    #[error("stream {stream} is not rank-descending at position {position}")]
    Unsorted { stream: usize, position: usize },
}

/// Global result order: rank descending, then docKey, then slave.
pub fn result_order(a: &ResultItem, a_slave: usize, b: &ResultItem, b_slave: usize) -> CmpOrdering {
    b.rank
        .total_cmp(&a.rank)
        .then_with(|| a.doc_key.cmp(&b.doc_key))
        .then_with(|| a_slave.cmp(&b_slave))
}

struct LoserTree<'a> {
    streams: &'a [Vec<ResultItem>],
    pos: Vec<usize>,
    /// `tree[0]` is the current winner; `tree[1..p]` hold the loser at each match.
    tree: Vec<usize>,
    p: usize,
    comparisons: u64,
}

impl<'a> LoserTree<'a> {
    fn new(streams: &'a [Vec<ResultItem>]) -> LoserTree<'a> {
        let p = streams.len().next_power_of_two();
        let mut t = LoserTree {
            streams,
            pos: vec![0; streams.len()],
            tree: vec![0; p],
            p,
            comparisons: 0,
        };
        let mut win = vec![0usize; 2 * p];
        for (i, w) in win[p..].iter_mut().enumerate() {
            *w = i;
        }
        for node in (1..p).rev() {
            let (l, r) = (win[2 * node], win[2 * node + 1]);
            if t.beats(l, r) {
                win[node] = l;
                t.tree[node] = r;
            } else {
                win[node] = r;
                t.tree[node] = l;
            }
        }
        t.tree[0] = if p == 1 { 0 } else { win[1] };
        t
    }

    fn head(&self, leaf: usize) -> Option<&ResultItem> {
        self.streams.get(leaf).and_then(|s| s.get(self.pos[leaf]))
    }

    fn beats(&mut self, a: usize, b: usize) -> bool {
        self.comparisons += 1;
        match (self.head(a), self.head(b)) {
            (None, _) => false,
            (Some(_), None) => true,
            (Some(x), Some(y)) => result_order(x, a, y, b) == CmpOrdering::Less,
        }
    }

    /// Advances the winning stream and replays its path to the root.
    fn pop(&mut self) {
        let leaf = self.tree[0];
        self.pos[leaf] += 1;
        let mut winner = leaf;
        let mut node = (leaf + self.p) / 2;
        while node >= 1 {
            if self.beats(self.tree[node], winner) {
                std::mem::swap(&mut self.tree[node], &mut winner);
            }
            node /= 2;
        }
        self.tree[0] = winner;
    }
}

/// Merges rank-descending streams into the global first `k`.
pub fn loser_tree_merge(streams: &[Vec<ResultItem>], k: usize) -> Result<MergeOutcome, MergeError> {
    for (stream, s) in streams.iter().enumerate() {
        if let Some(i) = s.windows(2).position(|w| !(w[0].rank >= w[1].rank)) {
            return Err(MergeError::Unsorted {
                stream,
                position: i + 1,
            });
        }
    }
    let mut out = MergeOutcome {
        items: Vec::new(),
        build_comparisons: 0,
        replay_comparisons: 0,
        max_replay: 0,
    };
    if streams.is_empty() || k == 0 {
        return Ok(out);
    }
    let mut tree = LoserTree::new(streams);
    out.build_comparisons = tree.comparisons;
    while out.items.len() < k {
        let w = tree.tree[0];
        let Some(item) = tree.head(w) else { break };
        out.items.push(MergedItem {
            doc_key: item.doc_key.clone(),
            rank: item.rank,
            slave: w,
        });
        if out.items.len() == k {
            break;
        }
        let before = tree.comparisons;
        tree.pop();
        let spent = tree.comparisons - before;
        out.replay_comparisons += spent;
        out.max_replay = out.max_replay.max(spent);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SlaveTiming {
    /// Master-side handling for this slave.
    pub master: Duration,
    /// Slave-reported time.
    pub slave: Duration,
    /// Residual: round trip minus the two above.
    pub network: Duration,
    pub round_trip: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingBreakdown {
    pub per_slave: Vec<SlaveTiming>,
    pub fanout: Duration,
    pub merge: Duration,
    pub total: Duration,
}

impl TimingBreakdown {
    pub fn slave_max(&self) -> Duration {
        self.per_slave
            .iter()
            .map(|t| t.slave)
            .max()
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKResult {
    pub items: Vec<MergedItem>,
    pub timing: TimingBreakdown,
    pub merge: MergeStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MergeStats {
    pub build_comparisons: u64,
    pub replay_comparisons: u64,
    pub max_replay: u64,
}

#[derive(Debug, Error)]
pub enum MasterError {
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Fanout(#[from] FanoutError),
    #[error("slave {slave}: {source}")]
    Merge {
        slave: String,
        #[source]
        source: MergeError,
    },
}

pub struct Master {
    client: FanoutClient,
}

impl Master {
    pub fn new(client: FanoutClient) -> Master {
        Master { client }
    }

    pub fn client(&self) -> &FanoutClient {
        &self.client
    }

    /// Waits for every slave, then merges.
    pub async fn execute(&self, query: &Query) -> Result<TopKResult, MasterError> {
        let start = Instant::now();
        let replies = self.client.query(query).await?;
        let fanout = start.elapsed();
        let per_slave = replies
            .iter()
            .map(|r| SlaveTiming {
                master: r.master_time,
                slave: r.slave_time,
                network: r.round_trip.saturating_sub(r.master_time + r.slave_time),
                round_trip: r.round_trip,
            })
            .collect();
        let streams: Vec<Vec<ResultItem>> = replies.into_iter().map(|r| r.items).collect();
        let merge_start = Instant::now();
        let merged = loser_tree_merge(&streams, query.k() as usize).map_err(|source| {
            let MergeError::Unsorted { stream, .. } = &source;
            MasterError::Merge {
                slave: self.client.endpoints()[*stream].to_string(),
                source,
            }
        })?;
        let merge = merge_start.elapsed();
        Ok(TopKResult {
            items: merged.items,
            merge: MergeStats {
                build_comparisons: merged.build_comparisons,
                replay_comparisons: merged.replay_comparisons,
                max_replay: merged.max_replay,
            },
            timing: TimingBreakdown {
                per_slave,
                fanout,
                merge,
                total: start.elapsed(),
            },
        })
    }

    pub async fn execute_text(&self, text: &str) -> Result<TopKResult, MasterError> {
        let q = parse_query(text)?;
        self.execute(&q).await
    }
}

/// Serves user QUERY frames with the same protocol the slaves speak. The
/// TOPK time field carries the master's total time.
pub struct MasterService {
    master: Master,
    queries: AtomicU64,
    errors: AtomicU64,
}

impl MasterService {
    pub fn new(master: Master) -> MasterService {
        MasterService {
            master,
            queries: AtomicU64::new(0),
            errors: AtomicU64::new(0),
        }
    }

    pub fn master(&self) -> &Master {
        &self.master
    }
}

impl QueryService for MasterService {
    fn execute(self: Arc<Self>, payload: QueryPayload, received: Instant) -> BoxFuture<Message> {
        Box::pin(async move {
            match self.master.execute(&payload.query).await {
                Ok(r) => {
                    self.queries.fetch_add(1, Ordering::Relaxed);
                    Message::TopK(TopKPayload {
                        query_id: payload.query_id,
                        slave_time_us: received.elapsed().as_micros() as u64,
                        items: r
                            .items
                            .into_iter()
                            .map(|m| ResultItem {
                                doc_key: m.doc_key,
                                rank: m.rank,
                            })
                            .collect(),
                    })
                }
                Err(e) => {
                    self.errors.fetch_add(1, Ordering::Relaxed);
                    Message::Error(ErrorPayload {
                        query_id: payload.query_id,
                        message: e.to_string(),
                    })
                }
            }
        })
    }

    fn stats(&self, reset: bool) -> SlaveStats {
        let s = SlaveStats {
            queries: self.queries.load(Ordering::Relaxed),
            errors: self.errors.load(Ordering::Relaxed),
            buffer: Default::default(),
        };
        if reset {
            self.queries.store(0, Ordering::Relaxed);
            self.errors.store(0, Ordering::Relaxed);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(ranks: &[f64]) -> Vec<ResultItem> {
        ranks
            .iter()
            .enumerate()
            .map(|(i, &r)| ResultItem {
                doc_key: format!("k{r}-{i}"),
                rank: r,
            })
            .collect()
    }

    fn ranks(o: &MergeOutcome) -> Vec<f64> {
        o.items.iter().map(|i| i.rank).collect()
    }

    #[test]
    fn two_streams() {
        let o = loser_tree_merge(&[stream(&[9.0, 7.0]), stream(&[8.0, 6.0])], 3).unwrap();
        assert_eq!(ranks(&o), [9.0, 8.0, 7.0]);
        assert_eq!(
            o.items.iter().map(|i| i.slave).collect::<Vec<_>>(),
            [0, 1, 0]
        );
    }

    #[test]
    fn single_stream_is_prefix() {
        let o = loser_tree_merge(&[stream(&[5.0, 4.0, 3.0])], 2).unwrap();
        assert_eq!(ranks(&o), [5.0, 4.0]);
        assert_eq!(o.replay_comparisons, 0);
    }

    #[test]
    fn short_streams_are_not_padded() {
        let o = loser_tree_merge(&[stream(&[2.0]), stream(&[]), stream(&[1.0])], 10).unwrap();
        assert_eq!(ranks(&o), [2.0, 1.0]);
    }

    #[test]
    fn unsorted_stream_rejected() {
        let err = loser_tree_merge(&[stream(&[1.0]), stream(&[1.0, 3.0])], 2).unwrap_err();
        assert_eq!(
            err,
            MergeError::Unsorted {
                stream: 1,
                position: 1
            }
        );
    }

    #[test]
    fn ties_break_on_key_then_slave() {
        let a = vec![ResultItem {
            doc_key: "b".into(),
            rank: 1.0,
        }];
        let b = vec![
            ResultItem {
                doc_key: "a".into(),
                rank: 1.0,
            },
            ResultItem {
                doc_key: "b".into(),
                rank: 1.0,
            },
        ];
        let o = loser_tree_merge(&[a, b], 3).unwrap();
        let got: Vec<_> = o
            .items
            .iter()
            .map(|i| (i.doc_key.as_str(), i.slave))
            .collect();
        assert_eq!(got, [("a", 1), ("b", 0), ("b", 1)]);
    }
}
