//! Local Searcher: serves ranked boolean queries for one partition.
//!
//! A server can bind several listeners that all answer from the same
//! shared sub-index, so co-located searchers for one partition never load
//! the index twice. Connections are handled one request at a time by a
//! dedicated thread. A SHUTDOWN frame stops accepting, lets in-flight
//! requests finish, and unblocks idle readers.

use std::collections::HashMap;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use thiserror::Error;

use crate::eval::evaluate;
use crate::index::SubIndex;
use crate::query::parse_query;
use crate::wire::{write_message, FrameReader, Message};

#[derive(Debug, Error)]
pub enum SearcherError {
    #[error("searcher i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("searcher needs at least one listen address")]
    NoListeners,
}

pub struct SearcherServer {
    shared: Arc<Shared>,
    accept_threads: Vec<JoinHandle<()>>,
}

/// Registry of live connections, keyed so a finished connection drops its
/// entry again; a plain list would pin every socket (and deny its peer an
/// EOF) for as long as the server lives.
pub(crate) struct ConnTable {
    next_token: u64,
    conns: HashMap<u64, TcpStream>,
}

/// Token for a connection that could not be cloned into the table; it is
/// served anyway, it just cannot be unblocked by a later shutdown.
pub(crate) const UNTRACKED: u64 = u64::MAX;

impl ConnTable {
    pub(crate) fn new() -> Self {
        Self {
            next_token: 0,
            conns: HashMap::new(),
        }
    }

    pub(crate) fn insert(&mut self, stream: &TcpStream) -> u64 {
        let Ok(clone) = stream.try_clone() else {
            return UNTRACKED;
        };
        let token = self.next_token;
        self.next_token += 1;
        self.conns.insert(token, clone);
        token
    }

    pub(crate) fn remove(&mut self, token: u64) {
        self.conns.remove(&token);
    }

    /// Closes only the read halves: blocked readers wake up while replies
    /// still being written go out untouched.
    pub(crate) fn shutdown_read_all(&self) {
        for conn in self.conns.values() {
            let _ = conn.shutdown(Shutdown::Read);
        }
    }
}

struct Shared {
    index: Arc<SubIndex>,
    default_limit: u16,
    addrs: Vec<SocketAddr>,
    stop: AtomicBool,
    conns: Mutex<ConnTable>,
    conn_threads: Mutex<Vec<JoinHandle<()>>>,
}

impl Shared {
    /// Registers a live connection unless shutdown already started.
    fn register(&self, stream: &TcpStream) -> Option<u64> {
        let mut conns = self.conns.lock().unwrap();
        if self.stop.load(Ordering::SeqCst) {
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
            if self.stop.swap(true, Ordering::SeqCst) {
                return;
            }
            conns.shutdown_read_all();
        }
        // Nudge every accept loop awake.
        for addr in &self.addrs {
            let _ = TcpStream::connect(addr);
        }
    }
}

impl SearcherServer {
    /// Binds every address and starts serving `index`.
    pub fn start<A: ToSocketAddrs>(
        index: Arc<SubIndex>,
        listen: &[A],
        default_limit: u16,
    ) -> Result<Self, SearcherError> {
        if listen.is_empty() {
            return Err(SearcherError::NoListeners);
        }
        let mut listeners = Vec::new();
        let mut addrs = Vec::new();
        for addr in listen {
            let listener = TcpListener::bind(addr)?;
            addrs.push(listener.local_addr()?);
            listeners.push(listener);
        }
        let shared = Arc::new(Shared {
            index,
            default_limit,
            addrs,
            stop: AtomicBool::new(false),
            conns: Mutex::new(ConnTable::new()),
            conn_threads: Mutex::new(Vec::new()),
        });
        let accept_threads = listeners
            .into_iter()
            .map(|listener| {
                let shared = Arc::clone(&shared);
                std::thread::spawn(move || accept_loop(listener, shared))
            })
            .collect();
        Ok(Self {
            shared,
            accept_threads,
        })
    }

    /// Addresses actually bound (resolves port 0 to the assigned port).
    pub fn local_addrs(&self) -> &[SocketAddr] {
        &self.shared.addrs
    }

    /// Blocks until a SHUTDOWN frame (or [`Self::shutdown`] elsewhere)
    /// stops the server, then reaps every thread.
    pub fn wait(self) {
        for handle in self.accept_threads {
            let _ = handle.join();
        }
        let handles = std::mem::take(&mut *self.shared.conn_threads.lock().unwrap());
        for handle in handles {
            let _ = handle.join();
        }
    }

    /// Initiates shutdown and waits for it to complete.
    pub fn shutdown(self) {
        self.shared.begin_shutdown();
        self.wait();
    }
}

fn accept_loop(listener: TcpListener, shared: Arc<Shared>) {
    loop {
        match listener.accept() {
            Ok((stream, _)) => {
                let Some(token) = shared.register(&stream) else {
                    return;
                };
                let conn_shared = Arc::clone(&shared);
                let handle = std::thread::spawn(move || {
                    serve_connection(stream, &conn_shared);
                    conn_shared.deregister(token);
                });
                shared.conn_threads.lock().unwrap().push(handle);
            }
            Err(_) => {
                if shared.stop.load(Ordering::SeqCst) {
                    return;
                }
            }
        }
    }
}

fn serve_connection(stream: TcpStream, shared: &Shared) {
    let Ok(read_half) = stream.try_clone() else {
        return;
    };
    let mut reader = FrameReader::new(read_half);
    let mut writer = stream;
    loop {
        let reply = match reader.read_message() {
            Ok(Some(Message::Query {
                query_id,
                limit,
                text,
            })) => {
                let limit = if limit == 0 {
                    shared.default_limit
                } else {
                    limit
                };
                answer(&shared.index, query_id, limit, &text)
            }
            Ok(Some(Message::Ping)) => Message::Pong,
            Ok(Some(Message::Shutdown)) => {
                shared.begin_shutdown();
                return;
            }
            // A reply type from a client is a protocol violation.
            Ok(Some(Message::Hits { .. })) | Ok(Some(Message::Pong)) => return,
            Ok(None) | Err(_) => return,
        };
        if write_message(&mut writer, &reply).is_err() {
            return;
        }
        if shared.stop.load(Ordering::SeqCst) {
            return;
        }
    }
}

/// Evaluates one query; any parse or index failure becomes an
/// error-flagged empty reply rather than a dropped connection.
fn answer(index: &SubIndex, query_id: u64, limit: u16, text: &str) -> Message {
    let hits = parse_query(text)
        .ok()
        .and_then(|ast| evaluate(index, &ast, limit as usize).ok());
    match hits {
        Some(hits) => Message::Hits {
            query_id,
            error: false,
            hits,
        },
        None => Message::Hits {
            query_id,
            error: true,
            hits: Vec::new(),
        },
    }
}
