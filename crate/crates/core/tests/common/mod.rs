//! Independent reference implementations used as test oracles. None of them
//! touch the index, cursor, merge or model code they check.
#![allow(dead_code)]

use std::collections::{HashSet, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use odys::corpus::{synthetic_corpus, Document, SyntheticConfig};
use odys::proto::{ErrorPayload, Message, QueryPayload, ResultItem, SlaveStats, TopKPayload};
use odys::qlang::Query;
use odys::server::{BoxFuture, QueryService};

/// Writes past the test harness's output capture so the line always shows.
pub fn report(line: &str) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

pub fn corpus(docs: usize, seed: u64) -> Vec<Document> {
    synthetic_corpus(&SyntheticConfig {
        docs,
        seed,
        ..SyntheticConfig::default()
    })
}

/// Lowercased alphanumeric runs, written out longhand.
pub fn words(text: &str) -> HashSet<String> {
    let mut out = HashSet::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_alphanumeric() {
            cur.extend(ch.to_lowercase());
        } else if !cur.is_empty() {
            out.insert(std::mem::take(&mut cur));
        }
    }
    if !cur.is_empty() {
        out.insert(cur);
    }
    out
}

/// Scans the whole corpus: documents containing every keyword and matching
/// the scope, best rank first, ties by key.
pub struct BruteForce {
    docs: Vec<(Document, HashSet<String>)>,
}

impl BruteForce {
    pub fn new(docs: &[Document]) -> BruteForce {
        let mut docs: Vec<(Document, HashSet<String>)> = docs
            .iter()
            .map(|d| (d.clone(), words(&d.content)))
            .collect();
        docs.sort_by(|a, b| {
            b.0.rank
                .partial_cmp(&a.0.rank)
                .unwrap()
                .then_with(|| a.0.key.cmp(&b.0.key))
        });
        BruteForce { docs }
    }

    pub fn search(&self, q: &Query) -> Vec<(String, f64)> {
        self.docs
            .iter()
            .filter(|(d, w)| {
                q.keywords().iter().all(|k| w.contains(k))
                    && q.scope().is_none_or(|s| match s.field.name() {
                        "siteId" => d.site_id == s.value,
                        _ => d.domain_id == s.value,
                    })
            })
            .take(q.k() as usize)
            .map(|(d, _)| (d.key.clone(), d.rank))
            .collect()
    }
}

/// Sorted-set intersection by membership test, truncated to `k`.
pub fn naive_intersection(lists: &[Vec<u32>], k: usize) -> Vec<u32> {
    let sets: Vec<HashSet<u32>> = lists.iter().map(|l| l.iter().copied().collect()).collect();
    let mut out: Vec<u32> = lists[0]
        .iter()
        .copied()
        .filter(|d| sets.iter().all(|s| s.contains(d)))
        .collect();
    out.sort_unstable();
    out.dedup();
    out.truncate(k);
    out
}

/// Concatenate, sort by (rank desc, key asc, stream asc), truncate.
pub fn flatten_sort_truncate(streams: &[Vec<ResultItem>], k: usize) -> Vec<(String, f64, usize)> {
    let mut all: Vec<(String, f64, usize)> = streams
        .iter()
        .enumerate()
        .flat_map(|(s, items)| items.iter().map(move |i| (i.doc_key.clone(), i.rank, s)))
        .collect();
    all.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap()
            .then_with(|| a.0.cmp(&b.0))
            .then(a.2.cmp(&b.2))
    });
    all.truncate(k);
    all
}

/// Average over queries of the mean of maxima of consecutive groups of
/// `ns`, written with explicit index arithmetic.
pub fn slave_max_oracle(per_query: &[Vec<f64>], ns: usize) -> f64 {
    let mut total = 0.0;
    for samples in per_query {
        let groups = samples.len() / ns;
        let mut sum = 0.0;
        for g in 0..groups {
            let mut best = samples[g * ns];
            for j in 1..ns {
                if samples[g * ns + j] > best {
                    best = samples[g * ns + j];
                }
            }
            sum += best;
        }
        total += sum / groups as f64;
    }
    total / per_query.len() as f64
}

/// Page-granular LRU with a byte budget, as a plain deque.
pub struct LruSim {
    capacity: u64,
    page_size: u64,
    section_len: u64,
    pages: VecDeque<u64>,
    pub hits: u64,
    pub misses: u64,
    pub evictions: u64,
}

impl LruSim {
    pub fn new(capacity: u64, page_size: u64, section_len: u64) -> LruSim {
        LruSim {
            capacity,
            page_size,
            section_len,
            pages: VecDeque::new(),
            hits: 0,
            misses: 0,
            evictions: 0,
        }
    }

    fn size(&self, p: u64) -> u64 {
        (self.section_len - p * self.page_size).min(self.page_size)
    }

    fn used(&self) -> u64 {
        self.pages.iter().map(|&p| self.size(p)).sum()
    }

    pub fn touch(&mut self, page: u64) {
        if let Some(i) = self.pages.iter().position(|&p| p == page) {
            self.hits += 1;
            self.pages.remove(i);
            self.pages.push_back(page);
            return;
        }
        self.misses += 1;
        if self.size(page) > self.capacity {
            return;
        }
        self.pages.push_back(page);
        while self.used() > self.capacity {
            self.pages.pop_front();
            self.evictions += 1;
        }
    }

    /// Least recent first.
    pub fn resident(&self) -> Vec<u64> {
        self.pages.iter().copied().collect()
    }
}

/// Slave stand-in answering every query with fixed items after a delay.
pub struct StubSlave {
    pub items: Vec<ResultItem>,
    pub delay: Box<dyn Fn(&Query) -> Duration + Send + Sync>,
    pub fail: bool,
    pub queries: AtomicU64,
}

impl StubSlave {
    pub fn fixed(delay: Duration, items: Vec<ResultItem>) -> Arc<StubSlave> {
        Arc::new(StubSlave {
            items,
            delay: Box::new(move |_| delay),
            fail: false,
            queries: AtomicU64::new(0),
        })
    }

    pub fn failing() -> Arc<StubSlave> {
        Arc::new(StubSlave {
            items: vec![],
            delay: Box::new(|_| Duration::ZERO),
            fail: true,
            queries: AtomicU64::new(0),
        })
    }
}

impl QueryService for StubSlave {
    fn execute(self: Arc<Self>, p: QueryPayload, received: Instant) -> BoxFuture<Message> {
        Box::pin(async move {
            // Timer wheels round up to the next millisecond; finish by yielding.
            let due = received + (self.delay)(&p.query);
            if let Some(coarse) = due.checked_sub(Duration::from_millis(2)) {
                tokio::time::sleep_until(coarse.into()).await;
            }
            while Instant::now() < due {
                tokio::task::yield_now().await;
            }
            self.queries.fetch_add(1, Ordering::Relaxed);
            if self.fail {
                return Message::Error(ErrorPayload {
                    query_id: p.query_id,
                    message: "stub failure".into(),
                });
            }
            Message::TopK(TopKPayload {
                query_id: p.query_id,
                slave_time_us: received.elapsed().as_micros() as u64,
                items: self
                    .items
                    .iter()
                    .take(p.query.k() as usize)
                    .cloned()
                    .collect(),
            })
        })
    }

    fn stats(&self, reset: bool) -> SlaveStats {
        let queries = if reset {
            self.queries.swap(0, Ordering::Relaxed)
        } else {
            self.queries.load(Ordering::Relaxed)
        };
        SlaveStats {
            queries,
            ..Default::default()
        }
    }
}
