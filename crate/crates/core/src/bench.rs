//! Benchmark harness and synthetic workload generation.
//!
//! Closed-loop clients share an atomic cursor over a query log: a warmup
//! batch runs first, every client then passes a barrier together, and the
//! measured batch is claimed query by query so each one is executed
//! exactly once. Reports carry per-query result digests (canonicalized to
//! corpus record indexes) so runs over different topologies can be checked
//! for identical answers, plus a CSV row per run.

use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Barrier;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::client::QueryClient;
use crate::corpus::{write_record, CorpusError, DocumentRecord};
use crate::eval::ScoredHit;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("benchmark needs at least one client")]
    NoClients,
    #[error("benchmark needs a non-empty query log")]
    EmptyLog,
    #[error("benchmark needs at least one server address")]
    NoServers,
}

/// Zipf-distributed rank sampler via the inverse of the cumulative
/// weight function.
pub struct ZipfSampler {
    cumulative: Vec<f64>,
}

impl ZipfSampler {
    pub fn new(vocab: usize, exponent: f64) -> Self {
        let mut cumulative = Vec::with_capacity(vocab);
        let mut total = 0.0;
        for rank in 1..=vocab {
            total += 1.0 / (rank as f64).powf(exponent);
            cumulative.push(total);
        }
        Self { cumulative }
    }

    /// Samples a 0-based rank; rank 0 is the most frequent.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().expect("vocabulary is non-empty");
        let u = rng.gen_range(0.0..total);
        self.cumulative.partition_point(|&c| c <= u)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SynthOptions {
    pub docs: u64,
    pub vocab: usize,
    pub zipf: f64,
    pub seed: u64,
}

fn term_for(rank: usize) -> String {
    format!("w{rank:06}")
}

/// Writes a deterministic synthetic corpus: Zipf-distributed terms,
/// document lengths uniform in 30..=150.
pub fn synth_corpus<W: Write>(out: &mut W, opts: &SynthOptions) -> Result<(), CorpusError> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let zipf = ZipfSampler::new(opts.vocab, opts.zipf);
    let mut body = String::new();
    for i in 0..opts.docs {
        let len = rng.gen_range(30..=150);
        body.clear();
        for t in 0..len {
            if t > 0 {
                body.push(' ');
            }
            body.push_str(&term_for(zipf.sample(&mut rng)));
        }
        write_record(
            out,
            &DocumentRecord {
                url: format!("synth://doc/{i}"),
                body: body.clone(),
            },
        )?;
    }
    Ok(())
}

/// Builds a deterministic query log over the same term universe: one to
/// three Zipf-sampled terms joined by a mix of operators.
pub fn synth_query_log(queries: u64, vocab: usize, zipf: f64, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sampler = ZipfSampler::new(vocab, zipf);
    let mut log = Vec::with_capacity(queries as usize);
    for _ in 0..queries {
        let terms = rng.gen_range(1..=3);
        let mut text = term_for(sampler.sample(&mut rng));
        for _ in 1..terms {
            let op = match rng.gen_range(0..4) {
                0 => " AND ",
                1 => " OR ",
                2 => " ANDNOT ",
                _ => " ", // adjacency
            };
            text.push_str(op);
            text.push_str(&term_for(sampler.sample(&mut rng)));
        }
        log.push(text);
    }
    log
}

#[derive(Debug, Clone, Copy)]
pub struct BenchOptions {
    pub clients: usize,
    /// Measured queries (claimed exactly once across all clients).
    pub queries: u64,
    /// Warmup queries executed before the timed phase.
    pub warmup: u64,
    /// Per-query result limit (0 asks the server for its default).
    pub limit: u16,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub brokers: usize,
    pub workers: usize,
    pub partitions: usize,
    pub clients: usize,
    /// Measured queries that received a reply.
    pub answered: u64,
    /// Error-flagged replies plus transport failures.
    pub errors: u64,
    pub mean_ms: f64,
    pub qps: f64,
    /// Latency of every answered query in milliseconds, sorted ascending.
    pub latencies_ms: Vec<f64>,
    /// Canonical result digest per query-log position.
    pub digests: BTreeMap<usize, u64>,
    /// Times the same log position produced two different digests.
    pub digest_conflicts: u64,
}

pub const CSV_HEADER: &str = "n,k,p,clients,queries,mean_ms,qps,errors";

impl BenchReport {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.3},{:.1},{}",
            self.brokers,
            self.workers,
            self.partitions,
            self.clients,
            self.answered,
            self.mean_ms,
            self.qps,
            self.errors
        )
    }
}

/// Digest of a result list in topology-independent form: every doc id is
/// mapped back to its corpus record index given the partition count.
pub fn digest_hits(hits: &[ScoredHit], partitions: u16) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    let mut mix = |v: u64| {
        for byte in v.to_le_bytes() {
            h ^= u64::from(byte);
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    for hit in hits {
        mix(hit.doc.global_index(partitions));
        mix(u64::from(hit.score.to_bits()));
    }
    h
}

struct ClientStats {
    answered: u64,
    errors: u64,
    latencies: Vec<Duration>,
    digests: Vec<(usize, u64)>,
    started: Instant,
    finished: Instant,
}

/// Replays a query log against the given brokers and measures the timed
/// phase.
pub fn run_bench(
    qa_addrs: &[SocketAddr],
    log: &[String],
    label: (usize, usize, usize),
    opts: &BenchOptions,
) -> Result<BenchReport, BenchError> {
    if opts.clients == 0 {
        return Err(BenchError::NoClients);
    }
    if log.is_empty() {
        return Err(BenchError::EmptyLog);
    }
    if qa_addrs.is_empty() {
        return Err(BenchError::NoServers);
    }
    let warmup_cursor = AtomicU64::new(0);
    let measured_cursor = AtomicU64::new(0);
    let barrier = Barrier::new(opts.clients);
    let (brokers, workers, partitions) = label;

    let stats: Vec<ClientStats> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..opts.clients)
            .map(|c| {
                let addr = qa_addrs[c % qa_addrs.len()];
                let warmup_cursor = &warmup_cursor;
                let measured_cursor = &measured_cursor;
                let barrier = &barrier;
                scope.spawn(move || {
                    client_run(
                        addr,
                        log,
                        opts,
                        partitions as u16,
                        warmup_cursor,
                        measured_cursor,
                        barrier,
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("bench client panicked"))
            .collect()
    });

    let mut digests: BTreeMap<usize, u64> = BTreeMap::new();
    let mut digest_conflicts = 0;
    let mut answered = 0;
    let mut errors = 0;
    let mut latencies_ms = Vec::new();
    for s in &stats {
        answered += s.answered;
        errors += s.errors;
        latencies_ms.extend(s.latencies.iter().map(|d| d.as_secs_f64() * 1e3));
        for &(pos, digest) in &s.digests {
            match digests.insert(pos, digest) {
                Some(previous) if previous != digest => digest_conflicts += 1,
                _ => {}
            }
        }
    }
    latencies_ms.sort_unstable_by(f64::total_cmp);
    let started = stats.iter().map(|s| s.started).min().expect("clients > 0");
    let finished = stats.iter().map(|s| s.finished).max().expect("clients > 0");
    let wall = finished.saturating_duration_since(started).max(Duration::from_nanos(1));
    let mean_ms = if answered > 0 {
        latencies_ms.iter().sum::<f64>() / answered as f64
    } else {
        0.0
    };
    Ok(BenchReport {
        brokers,
        workers,
        partitions,
        clients: opts.clients,
        answered,
        errors,
        mean_ms,
        qps: answered as f64 / wall.as_secs_f64(),
        latencies_ms,
        digests,
        digest_conflicts,
    })
}

fn client_run(
    addr: SocketAddr,
    log: &[String],
    opts: &BenchOptions,
    partitions: u16,
    warmup_cursor: &AtomicU64,
    measured_cursor: &AtomicU64,
    barrier: &Barrier,
) -> ClientStats {
    let mut client = QueryClient::connect(addr).ok();
    loop {
        let claim = warmup_cursor.fetch_add(1, Ordering::Relaxed);
        if claim >= opts.warmup {
            break;
        }
        if let Some(c) = client.as_mut() {
            let _ = c.search(&log[claim as usize % log.len()], opts.limit);
        }
    }
    barrier.wait();

    let started = Instant::now();
    let mut stats = ClientStats {
        answered: 0,
        errors: 0,
        latencies: Vec::new(),
        digests: Vec::new(),
        started,
        finished: started,
    };
    loop {
        let claim = measured_cursor.fetch_add(1, Ordering::Relaxed);
        if claim >= opts.queries {
            break;
        }
        let pos = claim as usize % log.len();
        let Some(c) = client.as_mut() else {
            stats.errors += 1;
            client = QueryClient::connect(addr).ok();
            continue;
        };
        let t0 = Instant::now();
        match c.search(&log[pos], opts.limit) {
            Ok(outcome) => {
                stats.answered += 1;
                stats.latencies.push(t0.elapsed());
                if outcome.error {
                    stats.errors += 1;
                } else {
                    stats.digests.push((pos, digest_hits(&outcome.hits, partitions)));
                }
            }
            Err(_) => {
                stats.errors += 1;
                client = QueryClient::connect(addr).ok();
            }
        }
    }
    stats.finished = Instant::now();
    stats
}
