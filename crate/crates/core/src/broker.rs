//! Query Broker: the client-facing front end of a cluster.
//!
//! A broker accepts client connections, queues their queries, and lets k
//! worker threads claim them exactly once each. A worker broadcasts its
//! query to one searcher per partition, gathers the per-partition top
//! lists under a deadline, and merges them into a global top-l reply. Each
//! worker keeps its own lazily-connected searcher links; queries time out
//! individually and a late reply is recognized by its internal id and
//! skipped, so one slow searcher cannot poison the connection.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering as AtomicOrdering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use crossbeam_channel::{unbounded, Receiver, Sender};
use thiserror::Error;

use crate::eval::{rank_cmp, ScoredHit};
use crate::searcher::ConnTable;
use crate::wire::{write_message, FrameReader, Message};

pub const DEFAULT_GATHER_TIMEOUT: Duration = Duration::from_secs(5);

const SEND_ATTEMPTS: usize = 3;
const RETRY_BACKOFF: Duration = Duration::from_millis(10);

#[derive(Debug, Error)]
pub enum BrokerError {
    #[error("broker i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("broker needs at least one searcher address")]
    NoSearchers,
    #[error("broker needs at least one worker")]
    NoWorkers,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MergeError {
    #[error("partition {0} sent an unsorted or duplicated result list")]
    Unsorted(usize),
}

/// A claimed client query waiting for a worker.
struct PendingQuery {
    client: Arc<Mutex<TcpStream>>,
    query_id: u64,
    limit: u16,
    text: String,
}

/// Merges per-partition rank-sorted top lists into the global top
/// `limit`, validating sortedness up front and then walking the p list
/// heads through a heap (never a full sort).
pub fn merge_top_l(
    lists: Vec<Vec<ScoredHit>>,
    limit: usize,
) -> Result<Vec<ScoredHit>, MergeError> {
    struct Head {
        hit: ScoredHit,
        list: usize,
        pos: usize,
    }
    impl PartialEq for Head {
        fn eq(&self, other: &Self) -> bool {
            self.cmp(other) == Ordering::Equal
        }
    }
    impl Eq for Head {}
    impl PartialOrd for Head {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }
    impl Ord for Head {
        fn cmp(&self, other: &Self) -> Ordering {
            // Max-heap must pop the best-ranked head first.
            rank_cmp(&other.hit, &self.hit)
        }
    }

    for (i, list) in lists.iter().enumerate() {
        if list
            .windows(2)
            .any(|w| rank_cmp(&w[0], &w[1]) != Ordering::Less)
        {
            return Err(MergeError::Unsorted(i));
        }
    }
    let mut heap: BinaryHeap<Head> = lists
        .iter()
        .enumerate()
        .filter_map(|(i, list)| {
            list.first().map(|&hit| Head {
                hit,
                list: i,
                pos: 0,
            })
        })
        .collect();
    let mut out = Vec::with_capacity(limit.min(64));
    while out.len() < limit {
        let Some(head) = heap.pop() else { break };
        out.push(head.hit);
        if let Some(&next) = lists[head.list].get(head.pos + 1) {
            heap.push(Head {
                hit: next,
                list: head.list,
                pos: head.pos + 1,
            });
        }
    }
    Ok(out)
}

/// Why one partition failed to contribute to a query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LinkError {
    /// Could not connect or transmit within the retry budget.
    SendFailed,
    /// No reply before the deadline (connection stays usable).
    Timeout,
    /// The searcher flagged the query as failed.
    Flagged,
    /// The connection broke or the peer violated the protocol.
    Broken,
}

/// One worker's connection to the searcher serving one partition.
struct SearcherLink {
    addr: SocketAddr,
    conn: Option<LinkConn>,
    sent_current: bool,
}

struct LinkConn {
    writer: TcpStream,
    reader: FrameReader<TcpStream>,
}

impl SearcherLink {
    fn new(addr: SocketAddr) -> Self {
        Self {
            addr,
            conn: None,
            sent_current: false,
        }
    }

    /// Transmits a query, reconnecting with backoff on failure.
    fn send(&mut self, query_id: u64, limit: u16, text: &str) -> Result<(), LinkError> {
        self.sent_current = false;
        for attempt in 0..SEND_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(RETRY_BACKOFF * attempt as u32);
            }
            if self.conn.is_none() {
                match TcpStream::connect(self.addr) {
                    Ok(stream) => match stream.try_clone() {
                        Ok(read_half) => {
                            self.conn = Some(LinkConn {
                                writer: stream,
                                reader: FrameReader::new(read_half),
                            });
                        }
                        Err(_) => continue,
                    },
                    Err(_) => continue,
                }
            }
            let conn = self.conn.as_mut().expect("connected above");
            let msg = Message::Query {
                query_id,
                limit,
                text: text.to_string(),
            };
            match write_message(&mut conn.writer, &msg) {
                Ok(()) => {
                    self.sent_current = true;
                    return Ok(());
                }
                Err(_) => self.conn = None,
            }
        }
        Err(LinkError::SendFailed)
    }

    /// Waits for this partition's reply to `want`, skipping stale replies
    /// left over from earlier timed-out queries.
    fn gather(&mut self, want: u64, deadline: Instant) -> Result<Vec<ScoredHit>, LinkError> {
        let mut conn = self.conn.take().ok_or(LinkError::Broken)?;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            if remaining.is_zero() {
                // Keep the connection: the reply is late, not lost, and the
                // next gather will skip it by id.
                self.conn = Some(conn);
                return Err(LinkError::Timeout);
            }
            if conn
                .reader
                .get_ref()
                .set_read_timeout(Some(remaining))
                .is_err()
            {
                return Err(LinkError::Broken);
            }
            match conn.reader.read_message() {
                Ok(Some(Message::Hits {
                    query_id,
                    error,
                    hits,
                })) => {
                    if query_id == want {
                        self.conn = Some(conn);
                        return if error { Err(LinkError::Flagged) } else { Ok(hits) };
                    }
                    if query_id > want {
                        // Internal ids only grow; a future id means the
                        // stream is out of step.
                        return Err(LinkError::Broken);
                    }
                    // Stale reply to a query that already timed out.
                }
                Err(e) if e.is_timeout() => {
                    self.conn = Some(conn);
                    return Err(LinkError::Timeout);
                }
                Ok(Some(_)) | Ok(None) | Err(_) => return Err(LinkError::Broken),
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct QaOptions {
    /// Worker (broker) threads sharing the query queue.
    pub workers: usize,
    /// Result-list length used when a client asks for 0.
    pub default_limit: u16,
    /// Per-query gather deadline.
    pub timeout: Duration,
}

impl Default for QaOptions {
    fn default() -> Self {
        Self {
            workers: 1,
            default_limit: 10,
            timeout: DEFAULT_GATHER_TIMEOUT,
        }
    }
}

pub struct QaServer {
    shared: Arc<QaShared>,
    accept_thread: JoinHandle<()>,
    worker_threads: Vec<JoinHandle<()>>,
}

struct QaShared {
    addr: SocketAddr,
    stop: AtomicBool,
    conns: Mutex<ConnTable>,
    reader_threads: Mutex<Vec<JoinHandle<()>>>,
}

impl QaShared {
    fn register(&self, stream: &TcpStream) -> Option<u64> {
        let mut conns = self.conns.lock().unwrap();
        if self.stop.load(AtomicOrdering::SeqCst) {
            return None;
        }
        Some(conns.insert(stream))
    }

    fn deregister(&self, token: u64) {
        self.conns.lock().unwrap().remove(token);
    }

    fn begin_shutdown(&self) {
        {
            let conns = self.conns.lock().unwrap();
            if self.stop.swap(true, AtomicOrdering::SeqCst) {
                return;
            }
            conns.shutdown_read_all();
        }
        let _ = TcpStream::connect(self.addr);
    }
}

impl QaServer {
    /// Binds the client listener and starts `opts.workers` broker threads
    /// that answer from one searcher per entry of `searchers`.
    pub fn start<A: ToSocketAddrs>(
        listen: A,
        searchers: Vec<SocketAddr>,
        opts: QaOptions,
    ) -> Result<Self, BrokerError> {
        if searchers.is_empty() {
            return Err(BrokerError::NoSearchers);
        }
        if opts.workers == 0 {
            return Err(BrokerError::NoWorkers);
        }
        let listener = TcpListener::bind(listen)?;
        let shared = Arc::new(QaShared {
            addr: listener.local_addr()?,
            stop: AtomicBool::new(false),
            conns: Mutex::new(ConnTable::new()),
            reader_threads: Mutex::new(Vec::new()),
        });
        let (tx, rx) = unbounded::<PendingQuery>();
        let internal_ids = Arc::new(AtomicU64::new(1));
        let worker_threads = (0..opts.workers)
            .map(|_| {
                let rx = rx.clone();
                let searchers = searchers.clone();
                let ids = Arc::clone(&internal_ids);
                let opts = opts.clone();
                std::thread::spawn(move || worker_loop(rx, searchers, ids, opts))
            })
            .collect();
        let accept_shared = Arc::clone(&shared);
        let accept_thread =
            std::thread::spawn(move || accept_loop(listener, accept_shared, tx));
        Ok(Self {
            shared,
            accept_thread,
            worker_threads,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.shared.addr
    }

    /// Blocks until shutdown, reaping threads. Queries already queued are
    /// still answered before the workers exit.
    pub fn wait(self) {
        let _ = self.accept_thread.join();
        let readers = std::mem::take(&mut *self.shared.reader_threads.lock().unwrap());
        for handle in readers {
            let _ = handle.join();
        }
        for handle in self.worker_threads {
            let _ = handle.join();
        }
    }

    /// Stops accepting, drains queued queries, then returns.
    pub fn shutdown(self) {
        self.shared.begin_shutdown();
        self.wait();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<QaShared>, tx: Sender<PendingQuery>) {
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                let Some(token) = shared.register(&stream) else {
                    return;
                };
                let tx = tx.clone();
                let conn_shared = Arc::clone(&shared);
                let handle = std::thread::spawn(move || {
                    client_loop(stream, &conn_shared, tx);
                    conn_shared.deregister(token);
                });
                shared.reader_threads.lock().unwrap().push(handle);
            }
            Err(_) => {
                if shared.stop.load(AtomicOrdering::SeqCst) {
                    return;
                }
            }
        }
    }
}

/// Reads one client's frames, queueing queries and answering pings
/// directly. Replies go through a shared writer lock because a worker may
/// answer while the client is already sending its next query.
fn client_loop(stream: TcpStream, shared: &QaShared, tx: Sender<PendingQuery>) {
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let mut reader = FrameReader::new(read_half);
    let writer = Arc::new(Mutex::new(stream));
    loop {
        match reader.read_message() {
            Ok(Some(Message::Query {
                query_id,
                limit,
                text,
            })) => {
                let pending = PendingQuery {
                    client: Arc::clone(&writer),
                    query_id,
                    limit,
                    text,
                };
                if tx.send(pending).is_err() {
                    return;
                }
            }
            Ok(Some(Message::Ping)) => {
                if write_message(&mut *writer.lock().unwrap(), &Message::Pong).is_err() {
                    return;
                }
            }
            Ok(Some(Message::Shutdown)) => {
                shared.begin_shutdown();
                return;
            }
            Ok(Some(_)) | Ok(None) | Err(_) => return,
        }
    }
}

fn worker_loop(
    rx: Receiver<PendingQuery>,
    searchers: Vec<SocketAddr>,
    ids: Arc<AtomicU64>,
    opts: QaOptions,
) {
    let mut links: Vec<SearcherLink> =
        searchers.into_iter().map(SearcherLink::new).collect();
    while let Ok(pending) = rx.recv() {
        let internal_id = ids.fetch_add(1, AtomicOrdering::SeqCst);
        let limit = if pending.limit == 0 {
            opts.default_limit
        } else {
            pending.limit
        };
        let deadline = Instant::now() + opts.timeout;

        let mut all_ok = true;
        for link in &mut links {
            if link.send(internal_id, limit, &pending.text).is_err() {
                all_ok = false;
            }
        }
        // Gather from every partition the query reached, even after a
        // failure, so healthy connections stay in step.
        let mut lists = Vec::with_capacity(links.len());
        for link in &mut links {
            if !link.sent_current {
                continue;
            }
            match link.gather(internal_id, deadline) {
                Ok(hits) => lists.push(hits),
                Err(_) => all_ok = false,
            }
        }
        let hits = if all_ok {
            match merge_top_l(lists, limit as usize) {
                Ok(merged) => merged,
                Err(_) => {
                    all_ok = false;
                    Vec::new()
                }
            }
        } else {
            Vec::new()
        };
        let reply = Message::Hits {
            query_id: pending.query_id,
            error: !all_ok,
            hits,
        };
        // A vanished client is its own problem; the worker moves on.
        let _ = write_message(&mut *pending.client.lock().unwrap(), &reply);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_record, DocumentRecord};
    use crate::docid::DocId;
    use crate::eval::evaluate;
    use crate::index::{build_subindex, SubIndex};
    use crate::query::parse_query;
    use crate::searcher::SearcherServer;
    use proptest::prelude::*;
    use std::io::BufReader;

    fn hit(partition: u16, local: u64, score: f32) -> ScoredHit {
        ScoredHit {
            doc: DocId::new(partition, local),
            score,
        }
    }

    #[test]
    fn merge_takes_the_globally_best_hits() {
        let lists = vec![
            vec![hit(0, 0, 3.0), hit(0, 4, 1.0)],
            vec![hit(1, 1, 2.5), hit(1, 3, 2.0), hit(1, 9, 0.5)],
        ];
        let merged = merge_top_l(lists, 3).unwrap();
        assert_eq!(
            merged,
            vec![hit(0, 0, 3.0), hit(1, 1, 2.5), hit(1, 3, 2.0)]
        );
    }

    #[test]
    fn merge_breaks_ties_by_document_order() {
        // Same score everywhere; global order is by (local, partition).
        let lists = vec![
            vec![hit(0, 0, 1.0), hit(0, 2, 1.0)],
            vec![hit(1, 0, 1.0), hit(1, 1, 1.0)],
        ];
        let merged = merge_top_l(lists, 4).unwrap();
        assert_eq!(
            merged,
            vec![hit(0, 0, 1.0), hit(1, 0, 1.0), hit(1, 1, 1.0), hit(0, 2, 1.0)]
        );
    }

    #[test]
    fn merge_rejects_unsorted_input() {
        let lists = vec![vec![hit(0, 1, 1.0), hit(0, 0, 5.0)]];
        assert_eq!(merge_top_l(lists, 2).unwrap_err(), MergeError::Unsorted(0));
        let dup = vec![vec![hit(0, 1, 1.0), hit(0, 1, 1.0)]];
        assert_eq!(merge_top_l(dup, 2).unwrap_err(), MergeError::Unsorted(0));
    }

    proptest! {
        #[test]
        fn merge_equals_sort_and_truncate(
            raw in proptest::collection::vec(
                proptest::collection::vec((0u64..50, 1u8..6), 0..12),
                1..5,
            ),
            limit in 0usize..15,
        ) {
            // Build rank-sorted per-partition lists with unique doc ids.
            let lists: Vec<Vec<ScoredHit>> = raw
                .into_iter()
                .enumerate()
                .map(|(p, docs)| {
                    let mut seen = std::collections::BTreeMap::new();
                    for (local, s) in docs {
                        seen.entry(local).or_insert(f32::from(s));
                    }
                    let mut list: Vec<ScoredHit> = seen
                        .into_iter()
                        .map(|(local, score)| hit(p as u16, local, score))
                        .collect();
                    list.sort_by(rank_cmp);
                    list
                })
                .collect();
            let mut oracle: Vec<ScoredHit> = lists.concat();
            oracle.sort_by(rank_cmp);
            oracle.truncate(limit);
            prop_assert_eq!(merge_top_l(lists, limit).unwrap(), oracle);
        }
    }

    fn partition_index(id: u16, docs: &[&str]) -> Arc<SubIndex> {
        let mut buf = Vec::new();
        for (i, body) in docs.iter().enumerate() {
            write_record(
                &mut buf,
                &DocumentRecord {
                    url: format!("http://{id}/{i}"),
                    body: body.to_string(),
                },
            )
            .unwrap();
        }
        Arc::new(
            build_subindex(BufReader::new(buf.as_slice()), id, 1)
                .unwrap()
                .0,
        )
    }

    fn ask(addr: SocketAddr, text: &str, limit: u16) -> Message {
        let mut stream = TcpStream::connect(addr).unwrap();
        write_message(
            &mut stream,
            &Message::Query {
                query_id: 1234,
                limit,
                text: text.to_string(),
            },
        )
        .unwrap();
        FrameReader::new(stream).read_message().unwrap().unwrap()
    }

    #[test]
    fn broker_merges_partitions_like_a_single_ranker() {
        let parts = [
            partition_index(0, &["apple apple banana", "cherry", "apple banana"]),
            partition_index(1, &["banana banana", "apple cherry cherry"]),
        ];
        let servers: Vec<SearcherServer> = parts
            .iter()
            .map(|p| SearcherServer::start(Arc::clone(p), &["127.0.0.1:0"], 10).unwrap())
            .collect();
        let searcher_addrs: Vec<SocketAddr> =
            servers.iter().map(|s| s.local_addrs()[0]).collect();
        let qa = QaServer::start(
            "127.0.0.1:0",
            searcher_addrs,
            QaOptions {
                workers: 2,
                ..QaOptions::default()
            },
        )
        .unwrap();

        for (text, limit) in [
            ("apple", 10u16),
            ("apple OR banana", 3),
            ("apple ANDNOT cherry", 10),
            ("banana AND apple", 10),
        ] {
            let ast = parse_query(text).unwrap();
            let mut oracle: Vec<ScoredHit> = parts
                .iter()
                .flat_map(|p| evaluate(p, &ast, limit as usize).unwrap())
                .collect();
            oracle.sort_by(rank_cmp);
            oracle.truncate(limit as usize);
            assert_eq!(
                ask(qa.local_addr(), text, limit),
                Message::Hits {
                    query_id: 1234,
                    error: false,
                    hits: oracle,
                },
                "query {text}"
            );
        }

        // Limit 0 defers to the broker's default.
        let Message::Hits { hits, error, .. } = ask(qa.local_addr(), "apple", 0) else {
            panic!("expected hits");
        };
        assert!(!error);
        assert_eq!(hits.len(), 3);

        // Unparseable text is flagged, not fatal.
        let reply = ask(qa.local_addr(), "((", 5);
        assert_eq!(
            reply,
            Message::Hits {
                query_id: 1234,
                error: true,
                hits: vec![],
            }
        );

        qa.shutdown();
        for server in servers {
            server.shutdown();
        }
    }

    #[test]
    fn dead_searcher_yields_error_replies_but_broker_survives() {
        // Reserve a port and close it again: nothing listens there.
        let dead_addr = {
            let l = TcpListener::bind("127.0.0.1:0").unwrap();
            l.local_addr().unwrap()
        };
        let live = partition_index(0, &["apple"]);
        let server = SearcherServer::start(live, &["127.0.0.1:0"], 10).unwrap();
        let qa = QaServer::start(
            "127.0.0.1:0",
            vec![server.local_addrs()[0], dead_addr],
            QaOptions::default(),
        )
        .unwrap();
        for _ in 0..2 {
            let reply = ask(qa.local_addr(), "apple", 5);
            assert_eq!(
                reply,
                Message::Hits {
                    query_id: 1234,
                    error: true,
                    hits: vec![],
                }
            );
        }
        // The broker itself is healthy.
        let mut stream = TcpStream::connect(qa.local_addr()).unwrap();
        write_message(&mut stream, &Message::Ping).unwrap();
        assert_eq!(
            FrameReader::new(stream).read_message().unwrap(),
            Some(Message::Pong)
        );
        qa.shutdown();
        server.shutdown();
    }

    /// Minimal scripted searcher: answers every query, stalling when the
    /// query text contains "slow".
    fn scripted_searcher(delay: Duration) -> (SocketAddr, JoinHandle<()>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let handle = std::thread::spawn(move || {
            let Ok((stream, _)) = listener.accept() else {
                return;
            };
            let mut writer = stream.try_clone().unwrap();
            let mut reader = FrameReader::new(stream);
            while let Ok(Some(Message::Query { query_id, text, .. })) =
                reader.read_message()
            {
                if text.contains("slow") {
                    std::thread::sleep(delay);
                }
                let reply = Message::Hits {
                    query_id,
                    error: false,
                    hits: vec![hit(0, 0, 1.0)],
                };
                if write_message(&mut writer, &reply).is_err() {
                    return;
                }
            }
        });
        (addr, handle)
    }

    #[test]
    fn late_replies_are_skipped_and_the_link_recovers() {
        let (addr, handle) = scripted_searcher(Duration::from_millis(400));
        let qa = QaServer::start(
            "127.0.0.1:0",
            vec![addr],
            QaOptions {
                timeout: Duration::from_millis(100),
                ..QaOptions::default()
            },
        )
        .unwrap();

        // The stalled query times out.
        let reply = ask(qa.local_addr(), "slow", 5);
        assert_eq!(
            reply,
            Message::Hits {
                query_id: 1234,
                error: true,
                hits: vec![],
            }
        );
        // Give the stale reply time to land in the socket, then confirm
        // the next query skips it and succeeds on the same connection.
        std::thread::sleep(Duration::from_millis(500));
        let reply = ask(qa.local_addr(), "fast", 5);
        assert_eq!(
            reply,
            Message::Hits {
                query_id: 1234,
                error: false,
                hits: vec![hit(0, 0, 1.0)],
            }
        );
        qa.shutdown();
        let _ = handle.join();
    }
}
