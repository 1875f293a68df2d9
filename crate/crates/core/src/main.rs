//! Command-line front end for the search engine.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use clap::{Parser, Subcommand};

use mose::bench::{run_bench, synth_corpus, BenchOptions, SynthOptions, CSV_HEADER};
use mose::broker::{QaOptions, QaServer};
use mose::client::QueryClient;
use mose::cluster::{launch, partition_corpus, ClusterConfig};
use mose::format::{read_subindex, write_subindex, PostingsMode};
use mose::index::build_subindex;
use mose::searcher::SearcherServer;

#[derive(Parser)]
#[command(name = "mose", version, about = "Document-partitioned parallel search engine")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split a corpus file round-robin into per-partition files.
    Partition {
        /// Corpus file, one `url TAB body` record per line.
        #[arg(long)]
        input: PathBuf,
        /// Number of partitions to produce.
        #[arg(long)]
        parts: usize,
        /// Directory receiving part0..part<parts-1>.
        #[arg(long)]
        out: PathBuf,
    },
    /// Build the index for one partition.
    Index {
        /// Corpus slice to index (e.g. DIR/part0).
        #[arg(long)]
        input: PathBuf,
        /// Partition number baked into every document id.
        #[arg(long)]
        partition_id: u16,
        /// Output index file.
        #[arg(long)]
        out: PathBuf,
        /// Indexing worker threads.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Serve one partition index as a Local Searcher.
    Ls {
        /// Index file to serve.
        #[arg(long)]
        index: PathBuf,
        /// Listen address; repeat to bind several endpoints to this index.
        #[arg(long, required = true)]
        listen: Vec<String>,
        /// Result-list length used when a query asks for 0.
        #[arg(long, default_value_t = 10)]
        l: u16,
        /// Posting-list cache budget in bytes (postings stay on disk).
        #[arg(long, default_value_t = 0)]
        cache_bytes: u64,
    },
    /// Run a Query Broker in front of one searcher per partition.
    Qb {
        /// Client-facing listen address.
        #[arg(long)]
        listen: String,
        /// Searcher address per partition, in partition order.
        #[arg(long, required = true, value_delimiter = ',')]
        searchers: Vec<String>,
        /// Broker worker threads.
        #[arg(long, default_value_t = 1)]
        k: usize,
        /// Result-list length used when a query asks for 0.
        #[arg(long, default_value_t = 10)]
        l: u16,
        /// Per-query gather deadline in milliseconds.
        #[arg(long, default_value_t = 5000)]
        timeout_ms: u64,
    },
    /// Launch a whole (n, k, p) topology from a config file.
    Launch {
        #[arg(long)]
        config: PathBuf,
    },
    /// Send one query to a broker and print its ranked hits.
    Query {
        /// Broker address.
        #[arg(long)]
        qa: String,
        /// How many hits to request.
        #[arg(long, default_value_t = 10)]
        l: u16,
        /// Index file(s) used to resolve result urls; repeatable.
        #[arg(long)]
        index: Vec<PathBuf>,
        /// Query text, e.g. "compression AND (golomb OR gamma)".
        text: String,
    },
    /// Replay a query log against brokers and report throughput.
    Bench {
        /// Broker address; repeat to spread clients over several brokers.
        #[arg(long, required = true)]
        qa: Vec<String>,
        /// Query log, one query per line.
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 1)]
        clients: usize,
        /// Measured queries (each executed exactly once).
        #[arg(long)]
        queries: u64,
        /// Untimed queries run before the measured phase.
        #[arg(long, default_value_t = 0)]
        warmup: u64,
        /// Per-query result limit.
        #[arg(long, default_value_t = 10)]
        l: u16,
        /// CSV file to append the result row to.
        #[arg(long)]
        csv: Option<PathBuf>,
        /// CSV file receiving one per-query latency (ms) per line.
        #[arg(long)]
        latency_csv: Option<PathBuf>,
        /// Topology label for the CSV as N,K,P.
        #[arg(long)]
        label: Option<String>,
        /// Read the topology label from a cluster config instead.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Ask brokers (or searchers) to drain and stop.
    Shutdown {
        /// Address to send the shutdown frame to; repeatable.
        #[arg(long, required = true)]
        addr: Vec<String>,
    },
    /// Generate a synthetic corpus with Zipf-distributed terms.
    Synth {
        #[arg(long)]
        docs: u64,
        #[arg(long)]
        vocab: usize,
        /// Zipf exponent.
        #[arg(long, default_value_t = 1.0)]
        zipf: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() {
    if let Err(e) = run(Cli::parse()) {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn resolve(addr: &str) -> Result<SocketAddr, String> {
    addr.to_socket_addrs()
        .ok()
        .and_then(|mut it| it.next())
        .ok_or_else(|| format!("cannot resolve address {addr:?}"))
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    match cli.command {
        Command::Partition { input, parts, out } => {
            let plan = partition_corpus(&input, parts, &out)?;
            for (file, records) in plan.files.iter().zip(&plan.records) {
                println!("{}\t{records} records", file.display());
            }
        }
        Command::Index {
            input,
            partition_id,
            out,
            workers,
        } => {
            let reader = BufReader::new(File::open(&input)?);
            let (index, stats) = build_subindex(reader, partition_id, workers)?;
            write_subindex(&index, &out)?;
            println!(
                "indexed {} documents ({} skipped), {} terms, {} postings bytes -> {}",
                stats.documents,
                stats.skipped_records,
                stats.distinct_terms,
                stats.postings_bytes,
                out.display()
            );
        }
        Command::Ls {
            index,
            listen,
            l,
            cache_bytes,
        } => {
            let sub = read_subindex(&index, PostingsMode::OnDisk { cache_bytes })?;
            println!(
                "partition {}: {} documents, {} terms",
                sub.partition_id,
                sub.doc_count,
                sub.term_count()
            );
            let listen: Vec<&str> = listen.iter().map(String::as_str).collect();
            let server = SearcherServer::start(Arc::new(sub), &listen, l)?;
            for addr in server.local_addrs() {
                println!("listening on {addr}");
            }
            server.wait();
        }
        Command::Qb {
            listen,
            searchers,
            k,
            l,
            timeout_ms,
        } => {
            let addrs = searchers
                .iter()
                .map(|s| resolve(s))
                .collect::<Result<Vec<_>, _>>()?;
            let qa = QaServer::start(
                listen.as_str(),
                addrs,
                QaOptions {
                    workers: k,
                    default_limit: l,
                    timeout: Duration::from_millis(timeout_ms),
                },
            )?;
            println!("listening on {}", qa.local_addr());
            qa.wait();
        }
        Command::Launch { config } => {
            let config = ClusterConfig::load(&config)?;
            let cluster = launch(&config)?;
            println!(
                "strategy: {} (n={}, k={}, p={})",
                config.strategy(),
                config.brokers,
                config.workers,
                config.partitions
            );
            for addr in cluster.qa_addrs() {
                println!("qa listening on {addr}");
            }
            cluster.wait();
        }
        Command::Query { qa, l, index, text } => {
            let mut tables = HashMap::new();
            for path in index {
                let sub = read_subindex(&path, PostingsMode::OnDisk { cache_bytes: 0 })?;
                tables.insert(sub.partition_id, sub);
            }
            let mut client = QueryClient::connect(resolve(&qa)?)?;
            let outcome = client.search(&text, l)?;
            if outcome.error {
                return Err("server reported a query error".into());
            }
            for hit in outcome.hits {
                let url = tables
                    .get(&hit.doc.partition())
                    .and_then(|sub| sub.doc_entry(hit.doc.local()))
                    .map_or("-", |entry| entry.url.as_str());
                println!("{}\t{}\t{}", hit.doc, hit.score, url);
            }
        }
        Command::Bench {
            qa,
            log,
            clients,
            queries,
            warmup,
            l,
            csv,
            latency_csv,
            label,
            config,
        } => {
            let label = match (label, config) {
                (Some(s), _) => parse_label(&s)?,
                (None, Some(path)) => {
                    let c = ClusterConfig::load(&path)?;
                    (c.brokers, c.workers, c.partitions)
                }
                (None, None) => return Err("pass --label N,K,P or --config FILE".into()),
            };
            let log: Vec<String> = std::fs::read_to_string(&log)?
                .lines()
                .map(str::trim)
                .filter(|line| !line.is_empty())
                .map(String::from)
                .collect();
            let addrs = qa
                .iter()
                .map(|s| resolve(s))
                .collect::<Result<Vec<_>, _>>()?;
            let report = run_bench(
                &addrs,
                &log,
                label,
                &BenchOptions {
                    clients,
                    queries,
                    warmup,
                    limit: l,
                },
            )?;
            let row = report.csv_row();
            if let Some(path) = latency_csv {
                let mut file = BufWriter::new(File::create(&path)?);
                writeln!(file, "ms")?;
                for ms in &report.latencies_ms {
                    writeln!(file, "{ms:.3}")?;
                }
                file.flush()?;
            }
            if let Some(path) = csv {
                let fresh = std::fs::metadata(&path).map_or(true, |m| m.len() == 0);
                let mut file = File::options().create(true).append(true).open(&path)?;
                if fresh {
                    writeln!(file, "{CSV_HEADER}")?;
                }
                writeln!(file, "{row}")?;
            }
            println!("{row}");
            eprintln!(
                "answered {}/{} queries, {} errors, {} distinct results",
                report.answered,
                queries,
                report.errors,
                report.digests.len()
            );
        }
        Command::Shutdown { addr } => {
            for a in &addr {
                let mut client = QueryClient::connect(resolve(a)?)?;
                client.send_shutdown()?;
                println!("shutdown sent to {a}");
            }
        }
        Command::Synth {
            docs,
            vocab,
            zipf,
            seed,
            out,
        } => {
            let mut writer = BufWriter::new(File::create(&out)?);
            synth_corpus(
                &mut writer,
                &SynthOptions {
                    docs,
                    vocab,
                    zipf,
                    seed,
                },
            )?;
            writer.flush()?;
            println!("wrote {docs} documents to {}", out.display());
        }
    }
    Ok(())
}

fn parse_label(s: &str) -> Result<(usize, usize, usize), String> {
    let parts: Vec<&str> = s.split(',').collect();
    let parse = |i: usize| parts[i].trim().parse::<usize>();
    match parts.len() {
        3 => match (parse(0), parse(1), parse(2)) {
            (Ok(n), Ok(k), Ok(p)) => Ok((n, k, p)),
            _ => Err(format!("bad label {s:?}: expected N,K,P")),
        },
        _ => Err(format!("bad label {s:?}: expected N,K,P")),
    }
}
