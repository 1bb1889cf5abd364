//! A slave owns one document segment and answers QUERY frames for it.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use crate::index::{
    search_limited_embedded, search_limited_join, search_multi, search_single, IndexError,
    IndexReader, IrIndex, TopKItem,
};
use crate::proto::{ErrorPayload, Message, QueryPayload, ResultItem, SlaveStats, TopKPayload};
use crate::qlang::{Query, SearchCondition};
use crate::server::{BoxFuture, QueryService};
use crate::storage::{BufferStats, DiskIndex};

/// Indexes that can report buffer counters over STATS.
pub trait BufferCounters {
    fn buffer_stats(&self) -> BufferStats;
    fn reset_buffer_stats(&self);
}

impl BufferCounters for DiskIndex {
    fn buffer_stats(&self) -> BufferStats {
        DiskIndex::buffer_stats(self)
    }

    fn reset_buffer_stats(&self) {
        DiskIndex::reset_buffer_stats(self)
    }
}

/// Fully resident; no buffer activity to report.
impl BufferCounters for IrIndex {
    fn buffer_stats(&self) -> BufferStats {
        BufferStats::default()
    }

    fn reset_buffer_stats(&self) {}
}

/// How limited-search queries are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LimitedStrategy {
    /// Embedded attribute when the index has it, scope join otherwise.
    #[default]
    Auto,
    Embedded,
    Join,
}

pub struct SlaveNode<I> {
    index: Arc<I>,
    strategy: LimitedStrategy,
    queries: AtomicU64,
    errors: AtomicU64,
}

impl<I> SlaveNode<I>
where
    I: IndexReader + BufferCounters + Send + Sync + 'static,
{
    pub fn new(index: Arc<I>) -> SlaveNode<I> {
        SlaveNode {
            index,
            strategy: LimitedStrategy::Auto,
            queries: AtomicU64::new(0),
            errors: AtomicU64::new(0),
        }
    }

    pub fn with_strategy(mut self, strategy: LimitedStrategy) -> SlaveNode<I> {
        self.strategy = strategy;
        self
    }

    pub fn index(&self) -> &Arc<I> {
        &self.index
    }

    /// Runs the query against the local segment.
    pub fn handle_query(&self, query: &Query) -> Result<Vec<TopKItem>, IndexError> {
        let idx = &*self.index;
        let k = query.k() as usize;
        let kws = query.keywords();
        match query.condition() {
            SearchCondition::Single => search_single(idx, &kws[0], k),
            SearchCondition::Multi => search_multi(idx, kws, k),
            SearchCondition::Limited => {
                let scope = query.scope().expect("limited query has a scope");
                let embedded = idx.embed_spec().contains(&scope.field);
                match self.strategy {
                    LimitedStrategy::Embedded => {
                        search_limited_embedded(idx, kws, scope.field, scope.value, k)
                    }
                    LimitedStrategy::Join => {
                        search_limited_join(idx, kws, scope.field, scope.value, k)
                    }
                    LimitedStrategy::Auto if embedded => {
                        search_limited_embedded(idx, kws, scope.field, scope.value, k)
                    }
                    LimitedStrategy::Auto => {
                        search_limited_join(idx, kws, scope.field, scope.value, k)
                    }
                }
            }
        }
    }

    /// Builds the TOPK or ERROR reply. The reported time runs from `received`
    /// to the moment the reply is ready.
    pub fn respond(&self, payload: &QueryPayload, received: Instant) -> Message {
        match self.handle_query(&payload.query) {
            Ok(items) => {
                self.queries.fetch_add(1, Ordering::Relaxed);
                Message::TopK(TopKPayload {
                    query_id: payload.query_id,
                    items: items
                        .into_iter()
                        .map(|it| ResultItem {
                            doc_key: it.doc_key,
                            rank: it.rank,
                        })
                        .collect(),
                    slave_time_us: received.elapsed().as_micros() as u64,
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
    }
}

impl<I> QueryService for SlaveNode<I>
where
    I: IndexReader + BufferCounters + Send + Sync + 'static,
{
    fn execute(self: Arc<Self>, payload: QueryPayload, received: Instant) -> BoxFuture<Message> {
        Box::pin(async move {
            let query_id = payload.query_id;
            // Index access may block on file reads.
            tokio::task::spawn_blocking(move || self.respond(&payload, received))
                .await
                .unwrap_or_else(|e| {
                    Message::Error(ErrorPayload {
                        query_id,
                        message: format!("handler failed: {e}"),
                    })
                })
        })
    }

    fn stats(&self, reset: bool) -> SlaveStats {
        let s = SlaveStats {
            queries: self.queries.load(Ordering::Relaxed),
            errors: self.errors.load(Ordering::Relaxed),
            buffer: self.index.buffer_stats(),
        };
        if reset {
            self.queries.store(0, Ordering::Relaxed);
            self.errors.store(0, Ordering::Relaxed);
            self.index.reset_buffer_stats();
        }
        s
    }
}
