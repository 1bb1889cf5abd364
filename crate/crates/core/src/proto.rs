//! Length-prefixed binary frames between master and slaves, and the
//! fan-out client the master uses to scatter a query.
//!
//! A frame is `length: u32 | msg_type: u8 | payload`, where `length` counts
//! the type byte plus the payload. Every integer on the wire is big-endian.
//!
//! | type  | payload |
//! |-------|---------|
//! | QUERY | query id u64, condition u8, k u32, keyword count u16, keywords (u16 len + utf8), scope u8 (0 none, 1 + field code), scope value u64 |
//! | TOPK  | query id u64, slave time µs u64, item count u32, items (u16 len + key, rank f64 bits) |
//! | PING  | empty |
//! | ERROR | query id u64, message (u32 len + utf8) |
//! | STATS | 0 + reset u8 (request), or 1 + nine u64 counters (report) |

use std::collections::{HashMap, VecDeque};
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use thiserror::Error;
use tokio::io::{AsyncRead, AsyncReadExt, AsyncWrite, AsyncWriteExt};
use tokio::net::tcp::OwnedWriteHalf;
use tokio::net::TcpStream;
use tokio::sync::oneshot;
use tokio::task::JoinHandle;

use crate::index::Attribute;
use crate::qlang::{Query, QueryError, Scope, SearchCondition};
use crate::storage::BufferStats;

/// Largest accepted value of the length prefix.
pub const MAX_FRAME_LEN: u32 = 16 << 20;
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    Query = 1,
    TopK = 2,
    Ping = 3,
    Error = 4,
    Stats = 5,
}

impl MsgType {
    pub fn from_u8(v: u8) -> Option<MsgType> {
        Some(match v {
            1 => MsgType::Query,
            2 => MsgType::TopK,
            3 => MsgType::Ping,
            4 => MsgType::Error,
            5 => MsgType::Stats,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultItem {
    pub doc_key: String,
    pub rank: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QueryPayload {
    pub query_id: u64,
    pub query: Query,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopKPayload {
    pub query_id: u64,
    /// Slave-side time for this query in microseconds.
    pub slave_time_us: u64,
    pub items: Vec<ResultItem>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ErrorPayload {
    pub query_id: u64,
    pub message: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SlaveStats {
    pub queries: u64,
    pub errors: u64,
    pub buffer: BufferStats,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StatsPayload {
    Request { reset: bool },
    Report(SlaveStats),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Query(QueryPayload),
    TopK(TopKPayload),
    Ping,
    Error(ErrorPayload),
    Stats(StatsPayload),
}

impl Message {
    pub fn msg_type(&self) -> MsgType {
        match self {
            Message::Query(_) => MsgType::Query,
            Message::TopK(_) => MsgType::TopK,
            Message::Ping => MsgType::Ping,
            Message::Error(_) => MsgType::Error,
            Message::Stats(_) => MsgType::Stats,
        }
    }
}

#[derive(Debug, Error)]
pub enum ProtoError {
    #[error("truncated frame: needed {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("frame declares length 0")]
    ZeroLength,
    #[error("frame length {0} exceeds the 16 MiB limit")]
    Overlength(u64),
    #[error("unknown message type {0}")]
    BadMsgType(u8),
    #[error("query {query_id}: unknown search condition type {code}")]
    UnknownConditionType { query_id: u64, code: u8 },
    #[error("query {query_id}: {source}")]
    InvalidQuery {
        query_id: u64,
        #[source]
        source: QueryError,
    },
    #[error("query {query_id}: result items are not in rank-descending order")]
    NotRankOrdered { query_id: u64 },
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ProtoError {
    /// Query id the error refers to, when one could be decoded.
    pub fn query_id(&self) -> Option<u64> {
        match self {
            ProtoError::UnknownConditionType { query_id, .. }
            | ProtoError::InvalidQuery { query_id, .. }
            | ProtoError::NotRankOrdered { query_id } => Some(*query_id),
            _ => None,
        }
    }
}

struct Enc(Vec<u8>);

impl Enc {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn short_str(&mut self, s: &str) {
        // Longer strings are cut at a char boundary rather than corrupting the frame.
        let mut end = s.len().min(u16::MAX as usize);
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        self.u16(end as u16);
        self.0.extend_from_slice(&s.as_bytes()[..end]);
    }
}

fn encode_stats(e: &mut Enc, s: &SlaveStats) {
    for v in [
        s.queries,
        s.errors,
        s.buffer.hits,
        s.buffer.misses,
        s.buffer.evictions,
        s.buffer.pinned_lookups,
        s.buffer.resident_bytes,
        s.buffer.pinned_bytes,
        s.buffer.capacity_bytes,
    ] {
        e.u64(v);
    }
}

/// Serializes one message as a complete frame.
pub fn encode_frame(msg: &Message) -> Vec<u8> {
    let mut e = Enc(vec![0, 0, 0, 0, msg.msg_type() as u8]);
    match msg {
        Message::Query(p) => {
            e.u64(p.query_id);
            e.u8(p.query.condition().code());
            e.u32(p.query.k());
            e.u16(p.query.keywords().len() as u16);
            for kw in p.query.keywords() {
                e.short_str(kw);
            }
            match p.query.scope() {
                None => {
                    e.u8(0);
                    e.u64(0);
                }
                Some(s) => {
                    e.u8(1 + s.field.code());
                    e.u64(s.value);
                }
            }
        }
        Message::TopK(p) => {
            e.u64(p.query_id);
            e.u64(p.slave_time_us);
            e.u32(p.items.len() as u32);
            for it in &p.items {
                e.short_str(&it.doc_key);
                e.u64(it.rank.to_bits());
            }
        }
        Message::Ping => {}
        Message::Error(p) => {
            e.u64(p.query_id);
            e.u32(p.message.len() as u32);
            e.0.extend_from_slice(p.message.as_bytes());
        }
        Message::Stats(StatsPayload::Request { reset }) => {
            e.u8(0);
            e.u8(*reset as u8);
        }
        Message::Stats(StatsPayload::Report(s)) => {
            e.u8(1);
            encode_stats(&mut e, s);
        }
    }
    let len = (e.0.len() - 4) as u32;
    e.0[..4].copy_from_slice(&len.to_be_bytes());
    e.0
}

struct Dec<'a> {
    b: &'a [u8],
    at: usize,
}

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtoError> {
        let end = self.at + n;
        if end > self.b.len() {
            return Err(ProtoError::Truncated {
                needed: end,
                available: self.b.len(),
            });
        }
        let s = &self.b[self.at..end];
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, ProtoError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, ProtoError> {
        Ok(u16::from_be_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, ProtoError> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, ProtoError> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self, n: usize) -> Result<String, ProtoError> {
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| ProtoError::Malformed("invalid utf-8".into()))
    }
    fn finish(&self) -> Result<(), ProtoError> {
        if self.at == self.b.len() {
            Ok(())
        } else {
            Err(ProtoError::Malformed(format!(
                "{} trailing bytes",
                self.b.len() - self.at
            )))
        }
    }
}

/// Decodes the payload of a frame whose type byte is `msg_type`.
pub fn decode_payload(msg_type: u8, payload: &[u8]) -> Result<Message, ProtoError> {
    let ty = MsgType::from_u8(msg_type).ok_or(ProtoError::BadMsgType(msg_type))?;
    let mut d = Dec { b: payload, at: 0 };
    let msg = match ty {
        MsgType::Query => {
            let query_id = d.u64()?;
            let code = d.u8()?;
            let condition = SearchCondition::from_code(code)
                .ok_or(ProtoError::UnknownConditionType { query_id, code })?;
            let k = d.u32()?;
            let n = d.u16()?;
            let mut keywords = Vec::with_capacity(n as usize);
            for _ in 0..n {
                let len = d.u16()? as usize;
                keywords.push(d.str(len)?);
            }
            let scope_code = d.u8()?;
            let value = d.u64()?;
            let scope = match scope_code {
                0 => None,
                c => Some(Scope {
                    field: Attribute::from_code(c - 1)
                        .ok_or_else(|| ProtoError::Malformed(format!("scope field code {c}")))?,
                    value,
                }),
            };
            let query = Query::with_condition(condition, keywords, scope, k)
                .map_err(|source| ProtoError::InvalidQuery { query_id, source })?;
            Message::Query(QueryPayload { query_id, query })
        }
        MsgType::TopK => {
            let query_id = d.u64()?;
            let slave_time_us = d.u64()?;
            let n = d.u32()? as usize;
            // Each item needs at least 10 bytes; refuse counts the payload cannot hold.
            if n > payload.len() / 10 {
                return Err(ProtoError::Malformed(format!(
                    "item count {n} exceeds payload"
                )));
            }
            let mut items = Vec::with_capacity(n);
            for _ in 0..n {
                let len = d.u16()? as usize;
                let doc_key = d.str(len)?;
                let rank = f64::from_bits(d.u64()?);
                items.push(ResultItem { doc_key, rank });
            }
            if items.windows(2).any(|w| !(w[0].rank >= w[1].rank)) {
                return Err(ProtoError::NotRankOrdered { query_id });
            }
            Message::TopK(TopKPayload {
                query_id,
                slave_time_us,
                items,
            })
        }
        MsgType::Ping => Message::Ping,
        MsgType::Error => {
            let query_id = d.u64()?;
            let len = d.u32()? as usize;
            let message = d.str(len)?;
            Message::Error(ErrorPayload { query_id, message })
        }
        MsgType::Stats => match d.u8()? {
            0 => Message::Stats(StatsPayload::Request {
                reset: d.u8()? != 0,
            }),
            1 => {
                let mut v = [0u64; 9];
                for x in &mut v {
                    *x = d.u64()?;
                }
                Message::Stats(StatsPayload::Report(SlaveStats {
                    queries: v[0],
                    errors: v[1],
                    buffer: BufferStats {
                        hits: v[2],
                        misses: v[3],
                        evictions: v[4],
                        pinned_lookups: v[5],
                        resident_bytes: v[6],
                        pinned_bytes: v[7],
                        capacity_bytes: v[8],
                    },
                }))
            }
            other => return Err(ProtoError::Malformed(format!("stats direction {other}"))),
        },
    };
    d.finish()?;
    Ok(msg)
}

fn check_length(len: u32) -> Result<(), ProtoError> {
    if len == 0 {
        Err(ProtoError::ZeroLength)
    } else if len > MAX_FRAME_LEN {
        Err(ProtoError::Overlength(len as u64))
    } else {
        Ok(())
    }
}

/// Decodes exactly one complete frame.
pub fn decode_frame(bytes: &[u8]) -> Result<Message, ProtoError> {
    if bytes.len() < 4 {
        return Err(ProtoError::Truncated {
            needed: 4,
            available: bytes.len(),
        });
    }
    let len = u32::from_be_bytes(bytes[..4].try_into().unwrap());
    check_length(len)?;
    let end = 4 + len as usize;
    if bytes.len() < end {
        return Err(ProtoError::Truncated {
            needed: end,
            available: bytes.len(),
        });
    }
    if bytes.len() > end {
        return Err(ProtoError::Malformed(format!(
            "{} bytes after frame",
            bytes.len() - end
        )));
    }
    decode_payload(bytes[4], &bytes[5..end])
}

/// Reads one frame's type byte and payload. `None` on a clean end of stream.
/// Payload-level problems are left to [`decode_payload`] so a server can
/// answer them and keep the connection.
pub async fn read_raw_frame<R: AsyncRead + Unpin>(
    r: &mut R,
) -> Result<Option<(u8, Vec<u8>)>, ProtoError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        let n = r.read(&mut len[got..]).await?;
        if n == 0 {
            if got == 0 {
                return Ok(None);
            }
            return Err(ProtoError::Truncated {
                needed: 4,
                available: got,
            });
        }
        got += n;
    }
    let len = u32::from_be_bytes(len);
    check_length(len)?;
    let mut body = vec![0u8; len as usize];
    r.read_exact(&mut body).await.map_err(|e| match e.kind() {
        io::ErrorKind::UnexpectedEof => ProtoError::Truncated {
            needed: len as usize + 4,
            available: 4,
        },
        _ => ProtoError::Io(e),
    })?;
    let ty = body[0];
    body.remove(0);
    Ok(Some((ty, body)))
}

pub async fn read_frame<R: AsyncRead + Unpin>(r: &mut R) -> Result<Option<Message>, ProtoError> {
    match read_raw_frame(r).await? {
        None => Ok(None),
        Some((ty, payload)) => decode_payload(ty, &payload).map(Some),
    }
}

pub async fn write_frame<W: AsyncWrite + Unpin>(w: &mut W, msg: &Message) -> io::Result<()> {
    w.write_all(&encode_frame(msg)).await
}

#[derive(Debug, Error)]
pub enum FanoutError {
    #[error("no slave endpoints configured")]
    NoEndpoints,
    #[error("{endpoint}: connect failed: {source}")]
    Connect {
        endpoint: String,
        #[source]
        source: io::Error,
    },
    #[error("{endpoint}: no response within {after:?}")]
    Timeout { endpoint: String, after: Duration },
    #[error("{endpoint}: connection lost: {reason}")]
    Disconnected { endpoint: String, reason: String },
    #[error("{endpoint}: slave error: {message}")]
    Remote { endpoint: String, message: String },
    #[error("{endpoint}: unexpected {got:?} reply")]
    Unexpected { endpoint: String, got: MsgType },
}

impl FanoutError {
    pub fn endpoint(&self) -> Option<&str> {
        match self {
            FanoutError::NoEndpoints => None,
            FanoutError::Connect { endpoint, .. }
            | FanoutError::Timeout { endpoint, .. }
            | FanoutError::Disconnected { endpoint, .. }
            | FanoutError::Remote { endpoint, .. }
            | FanoutError::Unexpected { endpoint, .. } => Some(endpoint),
        }
    }
}

/// A reply as seen by the connection's reader task.
struct Delivery {
    msg: Message,
    received: Instant,
    decode: Duration,
}

type Reply = oneshot::Sender<Result<Delivery, String>>;

#[derive(Default)]
struct LinkState {
    by_id: HashMap<u64, Reply>,
    pings: VecDeque<Reply>,
    stats: VecDeque<Reply>,
    closed: Option<String>,
}

impl LinkState {
    fn fail_all(&mut self, reason: &str) {
        self.closed = Some(reason.to_string());
        let waiting = self
            .by_id
            .drain()
            .map(|(_, tx)| tx)
            .chain(self.pings.drain(..))
            .chain(self.stats.drain(..));
        for tx in waiting {
            let _ = tx.send(Err(reason.to_string()));
        }
    }
}

struct Link {
    writer: tokio::sync::Mutex<OwnedWriteHalf>,
    state: Arc<Mutex<LinkState>>,
    reader: JoinHandle<()>,
}

impl Drop for Link {
    fn drop(&mut self) {
        self.reader.abort();
    }
}

enum Expect {
    Id(u64),
    Ping,
    Stats,
}

struct Endpoint {
    addr: String,
    link: tokio::sync::Mutex<Option<Arc<Link>>>,
}

/// Per-slave outcome of one scattered query.
#[derive(Debug, Clone)]
pub struct SlaveReply {
    pub slave: usize,
    pub items: Vec<ResultItem>,
    /// Slave-reported time.
    pub slave_time: Duration,
    /// Master-side handling: encoding and queuing the request plus decoding the reply.
    pub master_time: Duration,
    pub round_trip: Duration,
}

/// Persistent connections to a fixed set of slaves. Safe to share between
/// tasks; concurrent queries multiplex over the same connections by query id.
pub struct FanoutClient {
    endpoints: Vec<Endpoint>,
    timeout: Duration,
    next_id: AtomicU64,
}

impl FanoutClient {
    /// Connections are opened lazily and re-opened after a failure.
    pub fn new<S: AsRef<str>>(endpoints: &[S]) -> Result<FanoutClient, FanoutError> {
        if endpoints.is_empty() {
            return Err(FanoutError::NoEndpoints);
        }
        Ok(FanoutClient {
            endpoints: endpoints
                .iter()
                .map(|a| Endpoint {
                    addr: a.as_ref().to_string(),
                    link: tokio::sync::Mutex::new(None),
                })
                .collect(),
            timeout: DEFAULT_TIMEOUT,
            next_id: AtomicU64::new(1),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> FanoutClient {
        self.timeout = timeout;
        self
    }

    pub fn timeout(&self) -> Duration {
        self.timeout
    }

    pub fn endpoints(&self) -> Vec<&str> {
        self.endpoints.iter().map(|e| e.addr.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.endpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.endpoints.is_empty()
    }

    /// Opens every connection now instead of on first use.
    pub async fn connect_all(&self) -> Result<(), FanoutError> {
        futures::future::try_join_all(self.endpoints.iter().map(|ep| self.link(ep))).await?;
        Ok(())
    }

    async fn link(&self, ep: &Endpoint) -> Result<Arc<Link>, FanoutError> {
        let mut slot = ep.link.lock().await;
        if let Some(l) = slot.as_ref() {
            if l.state.lock().closed.is_none() {
                return Ok(l.clone());
            }
        }
        let stream = tokio::time::timeout(self.timeout, TcpStream::connect(&ep.addr))
            .await
            .map_err(|_| FanoutError::Timeout {
                endpoint: ep.addr.clone(),
                after: self.timeout,
            })?
            .map_err(|source| FanoutError::Connect {
                endpoint: ep.addr.clone(),
                source,
            })?;
        let _ = stream.set_nodelay(true);
        let (mut rd, wr) = stream.into_split();
        let state = Arc::new(Mutex::new(LinkState::default()));
        let st = state.clone();
        let reader = tokio::spawn(async move {
            let reason = loop {
                let (ty, payload) = match read_raw_frame(&mut rd).await {
                    Ok(Some(f)) => f,
                    Ok(None) => break "closed by peer".to_string(),
                    Err(e) => break e.to_string(),
                };
                let received = Instant::now();
                let msg = match decode_payload(ty, &payload) {
                    Ok(m) => m,
                    Err(e) => break e.to_string(),
                };
                let decode = received.elapsed();
                let mut s = st.lock();
                let tx = match &msg {
                    Message::TopK(p) => s.by_id.remove(&p.query_id),
                    Message::Error(p) => s.by_id.remove(&p.query_id),
                    Message::Ping => s.pings.pop_front(),
                    Message::Stats(StatsPayload::Report(_)) => s.stats.pop_front(),
                    _ => None,
                };
                if let Some(tx) = tx {
                    let _ = tx.send(Ok(Delivery {
                        msg,
                        received,
                        decode,
                    }));
                }
            };
            st.lock().fail_all(&reason);
        });
        let link = Arc::new(Link {
            writer: tokio::sync::Mutex::new(wr),
            state,
            reader,
        });
        *slot = Some(link.clone());
        Ok(link)
    }

    /// Sends `msg` to one endpoint and waits for its reply. Returns the
    /// reply, the time spent before the write, and the send instant.
    async fn call(
        &self,
        idx: usize,
        msg: &Message,
        expect: Expect,
    ) -> Result<(Delivery, Duration, Instant), FanoutError> {
        let ep = &self.endpoints[idx];
        let fut = async {
            let link = self.link(ep).await?;
            let (tx, rx) = oneshot::channel();
            let start = Instant::now();
            let frame = encode_frame(msg);
            let send;
            {
                // Register under the writer lock so FIFO replies line up with write order.
                let mut w = link.writer.lock().await;
                {
                    let mut s = link.state.lock();
                    if let Some(reason) = &s.closed {
                        return Err(FanoutError::Disconnected {
                            endpoint: ep.addr.clone(),
                            reason: reason.clone(),
                        });
                    }
                    match expect {
                        Expect::Id(id) => {
                            s.by_id.insert(id, tx);
                        }
                        Expect::Ping => s.pings.push_back(tx),
                        Expect::Stats => s.stats.push_back(tx),
                    }
                }
                // The write syscall counts as network: on loopback it can
                // carry the frame all the way to the peer before returning.
                send = start.elapsed();
                if let Err(e) = w.write_all(&frame).await {
                    link.state.lock().fail_all(&e.to_string());
                    return Err(FanoutError::Disconnected {
                        endpoint: ep.addr.clone(),
                        reason: e.to_string(),
                    });
                }
            }
            match rx.await {
                Ok(Ok(d)) => Ok((d, send, start)),
                Ok(Err(reason)) => Err(FanoutError::Disconnected {
                    endpoint: ep.addr.clone(),
                    reason,
                }),
                Err(_) => Err(FanoutError::Disconnected {
                    endpoint: ep.addr.clone(),
                    reason: "reply channel dropped".into(),
                }),
            }
        };
        match tokio::time::timeout(self.timeout, fut).await {
            Ok(r) => r,
            Err(_) => {
                if let Expect::Id(id) = expect {
                    if let Some(l) = ep.link.lock().await.as_ref() {
                        l.state.lock().by_id.remove(&id);
                    }
                }
                Err(FanoutError::Timeout {
                    endpoint: ep.addr.clone(),
                    after: self.timeout,
                })
            }
        }
    }

    /// Issues the query to every slave at once and waits for all replies.
    /// Any failure fails the whole query.
    pub async fn query(&self, query: &Query) -> Result<Vec<SlaveReply>, FanoutError> {
        let query_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let msg = Message::Query(QueryPayload {
            query_id,
            query: query.clone(),
        });
        let calls = (0..self.endpoints.len()).map(|i| {
            let msg = &msg;
            async move {
                let (d, send, start) = self.call(i, msg, Expect::Id(query_id)).await?;
                let endpoint = self.endpoints[i].addr.clone();
                match d.msg {
                    Message::TopK(p) => Ok(SlaveReply {
                        slave: i,
                        items: p.items,
                        slave_time: Duration::from_micros(p.slave_time_us),
                        master_time: send + d.decode,
                        round_trip: d.received.duration_since(start),
                    }),
                    Message::Error(p) => Err(FanoutError::Remote {
                        endpoint,
                        message: p.message,
                    }),
                    other => Err(FanoutError::Unexpected {
                        endpoint,
                        got: other.msg_type(),
                    }),
                }
            }
        });
        futures::future::try_join_all(calls).await
    }

    /// Round-trip time of an empty PING to one slave.
    pub async fn ping(&self, slave: usize) -> Result<Duration, FanoutError> {
        let (d, _, start) = self.call(slave, &Message::Ping, Expect::Ping).await?;
        Ok(d.received.duration_since(start))
    }

    pub async fn stats(&self, slave: usize, reset: bool) -> Result<SlaveStats, FanoutError> {
        let msg = Message::Stats(StatsPayload::Request { reset });
        let (d, _, _) = self.call(slave, &msg, Expect::Stats).await?;
        match d.msg {
            Message::Stats(StatsPayload::Report(s)) => Ok(s),
            other => Err(FanoutError::Unexpected {
                endpoint: self.endpoints[slave].addr.clone(),
                got: other.msg_type(),
            }),
        }
    }

    pub async fn stats_all(&self, reset: bool) -> Result<Vec<SlaveStats>, FanoutError> {
        futures::future::try_join_all((0..self.endpoints.len()).map(|i| self.stats(i, reset))).await
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ping_frame_is_five_bytes() {
        let f = encode_frame(&Message::Ping);
        assert_eq!(f, [0, 0, 0, 1, 3]);
        assert_eq!(decode_frame(&f).unwrap(), Message::Ping);
    }

    #[test]
    fn zero_length_rejected() {
        assert!(matches!(
            decode_frame(&[0, 0, 0, 0]),
            Err(ProtoError::ZeroLength)
        ));
    }

    #[test]
    fn overlength_rejected() {
        let len = (MAX_FRAME_LEN + 1).to_be_bytes();
        assert!(matches!(
            decode_frame(&[len[0], len[1], len[2], len[3], 3]),
            Err(ProtoError::Overlength(_))
        ));
    }

    #[test]
    fn unknown_type_rejected() {
        assert!(matches!(
            decode_frame(&[0, 0, 0, 1, 9]),
            Err(ProtoError::BadMsgType(9))
        ));
    }

    #[test]
    fn truncated_rejected() {
        let q = Query::single("apple", 10).unwrap();
        let f = encode_frame(&Message::Query(QueryPayload {
            query_id: 4,
            query: q,
        }));
        for cut in [2, 5, f.len() - 1] {
            assert!(matches!(
                decode_frame(&f[..cut]),
                Err(ProtoError::Truncated { .. })
            ));
        }
    }

    #[test]
    fn unknown_condition_keeps_query_id() {
        let q = Query::single("apple", 10).unwrap();
        let mut f = encode_frame(&Message::Query(QueryPayload {
            query_id: 77,
            query: q,
        }));
        f[13] = 9;
        let err = decode_frame(&f).unwrap_err();
        assert!(matches!(
            err,
            ProtoError::UnknownConditionType {
                query_id: 77,
                code: 9
            }
        ));
        assert_eq!(err.query_id(), Some(77));
    }

    #[test]
    fn topk_must_be_rank_descending() {
        let items = vec![
            ResultItem {
                doc_key: "a".into(),
                rank: 0.1,
            },
            ResultItem {
                doc_key: "b".into(),
                rank: 0.5,
            },
        ];
        let f = encode_frame(&Message::TopK(TopKPayload {
            query_id: 1,
            slave_time_us: 3,
            items,
        }));
        assert!(matches!(
            decode_frame(&f),
            Err(ProtoError::NotRankOrdered { query_id: 1 })
        ));
    }
}
