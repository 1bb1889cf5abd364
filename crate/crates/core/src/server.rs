//! Frame server shared by slave and master processes.

use std::future::Future;
use std::io;
use std::net::SocketAddr;
use std::pin::Pin;
use std::sync::Arc;
use std::time::{Duration, Instant};

use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot, watch, Semaphore};
use tokio::task::{JoinHandle, JoinSet};

use crate::proto::{
    decode_payload, encode_frame, read_raw_frame, ErrorPayload, Message, ProtoError, QueryPayload,
    SlaveStats, StatsPayload,
};

pub type BoxFuture<T> = Pin<Box<dyn Future<Output = T> + Send>>;

/// What a server does with decoded QUERY and STATS frames.
pub trait QueryService: Send + Sync + 'static {
    /// Produces a TOPK or ERROR reply. `received` is when the frame was read.
    fn execute(self: Arc<Self>, payload: QueryPayload, received: Instant) -> BoxFuture<Message>;

    fn stats(&self, reset: bool) -> SlaveStats;
}

fn error_reply(query_id: u64, message: impl Into<String>) -> Message {
    Message::Error(ErrorPayload {
        query_id,
        message: message.into(),
    })
}

async fn connection<S: QueryService>(
    stream: TcpStream,
    service: Arc<S>,
    permits: Arc<Semaphore>,
    mut stop: watch::Receiver<bool>,
) {
    let _ = stream.set_nodelay(true);
    let (mut rd, mut wr) = stream.into_split();
    let (tx, mut rx) = mpsc::unbounded_channel::<Vec<u8>>();
    let writer = tokio::spawn(async move {
        use tokio::io::AsyncWriteExt;
        while let Some(frame) = rx.recv().await {
            if wr.write_all(&frame).await.is_err() {
                break;
            }
        }
    });
    loop {
        let frame = tokio::select! {
            f = read_raw_frame(&mut rd) => f,
            _ = stop.changed() => break,
        };
        let received = Instant::now();
        let (ty, payload) = match frame {
            Ok(Some(f)) => f,
            Ok(None) => break,
            Err(e @ (ProtoError::ZeroLength | ProtoError::Overlength(_))) => {
                // The stream cannot be resynchronized after a bad length prefix.
                let _ = tx.send(encode_frame(&error_reply(0, e.to_string())));
                break;
            }
            Err(_) => break,
        };
        match decode_payload(ty, &payload) {
            Ok(Message::Query(p)) => {
                let service = service.clone();
                let permits = permits.clone();
                let tx = tx.clone();
                tokio::spawn(async move {
                    let _permit = permits.acquire_owned().await;
                    let reply = service.execute(p, received).await;
                    let _ = tx.send(encode_frame(&reply));
                });
            }
            Ok(Message::Ping) => {
                let _ = tx.send(encode_frame(&Message::Ping));
            }
            Ok(Message::Stats(StatsPayload::Request { reset })) => {
                let report = service.stats(reset);
                let _ = tx.send(encode_frame(&Message::Stats(StatsPayload::Report(report))));
            }
            Ok(other) => {
                let _ = tx.send(encode_frame(&error_reply(
                    0,
                    format!("unexpected {:?} frame", other.msg_type()),
                )));
            }
            Err(e) => {
                let _ = tx.send(encode_frame(&error_reply(
                    e.query_id().unwrap_or(0),
                    e.to_string(),
                )));
            }
        }
    }
    // In-flight replies hold senders; the writer drains them before exiting.
    drop(tx);
    let _ = writer.await;
}

/// Accepts connections until `shutdown` resolves, then stops reading new
/// frames and waits up to `drain` for in-flight replies.
pub async fn serve<S, F>(
    listener: TcpListener,
    service: Arc<S>,
    concurrency: usize,
    shutdown: F,
    drain: Duration,
) -> io::Result<()>
where
    S: QueryService,
    F: Future<Output = ()> + Send,
{
    let permits = Arc::new(Semaphore::new(concurrency.max(1)));
    let (stop_tx, stop_rx) = watch::channel(false);
    let mut conns = JoinSet::new();
    tokio::pin!(shutdown);
    loop {
        tokio::select! {
            _ = &mut shutdown => break,
            accepted = listener.accept() => {
                let (stream, _) = match accepted {
                    Ok(a) => a,
                    // Transient accept failures (e.g. fd exhaustion) should not end the service.
                    Err(_) => {
                        tokio::time::sleep(Duration::from_millis(10)).await;
                        continue;
                    }
                };
                conns.spawn(connection(stream, service.clone(), permits.clone(), stop_rx.clone()));
            }
            Some(_) = conns.join_next(), if !conns.is_empty() => {}
        }
    }
    drop(listener);
    let _ = stop_tx.send(true);
    let _ = tokio::time::timeout(drain, async { while conns.join_next().await.is_some() {} }).await;
    conns.abort_all();
    Ok(())
}

/// A server running on the current tokio runtime.
pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    task: JoinHandle<io::Result<()>>,
}

impl ServerHandle {
    pub async fn start<S: QueryService>(
        addr: &str,
        service: Arc<S>,
        concurrency: usize,
    ) -> io::Result<ServerHandle> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let (stop, rx) = oneshot::channel::<()>();
        let task = tokio::spawn(serve(
            listener,
            service,
            concurrency,
            async move {
                let _ = rx.await;
            },
            Duration::from_secs(5),
        ));
        Ok(ServerHandle {
            local_addr,
            stop: Some(stop),
            task,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub async fn shutdown(mut self) -> io::Result<()> {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
        (&mut self.task).await.map_err(io::Error::other)?
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if let Some(s) = self.stop.take() {
            let _ = s.send(());
        }
    }
}

/// Resolves on Ctrl-C or, on Unix, SIGTERM.
pub async fn termination_signal() {
    #[cfg(unix)]
    {
        use tokio::signal::unix::{signal, SignalKind};
        let mut term = match signal(SignalKind::terminate()) {
            Ok(s) => s,
            Err(_) => {
                let _ = tokio::signal::ctrl_c().await;
                return;
            }
        };
        tokio::select! {
            _ = tokio::signal::ctrl_c() => {}
            _ = term.recv() => {}
        }
    }
    #[cfg(not(unix))]
    {
        let _ = tokio::signal::ctrl_c().await;
    }
}
