//! Cluster topology: configuration, corpus partitioning and launch.
//!
//! A cluster is (n, k, p): n brokers with k workers each, over p document
//! partitions. Every broker reaches one searcher endpoint per partition;
//! endpoints of the same partition that share an address are served by one
//! listener over one shared sub-index.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::broker::{BrokerError, QaOptions, QaServer, DEFAULT_GATHER_TIMEOUT};
use crate::corpus::RawLines;
use crate::format::{read_subindex, FormatError, PostingsMode};
use crate::searcher::{SearcherError, SearcherServer};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: expected key=value")]
    Syntax { line: usize },
    #[error("line {line}: unknown key {key:?}")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: duplicate key {key:?}")]
    DuplicateKey { line: usize, key: String },
    #[error("line {line}: invalid value for {key:?}")]
    BadValue { line: usize, key: String },
    #[error("missing key {key:?}")]
    MissingKey { key: String },
    #[error("line {line}: {key:?} is outside the configured topology")]
    StrayKey { line: usize, key: String },
}

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("cluster i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Searcher(#[from] SearcherError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("cannot resolve address {0:?}")]
    BadAddress(String),
    #[error("partition count must be at least 1")]
    NoPartitions,
}

/// How a given (n, k, p) exploits parallelism.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    /// One broker, one worker, one partition.
    Sequential,
    /// Whole-index replicas answer different queries concurrently (p = 1,
    /// n·k > 1).
    TaskParallel,
    /// One query at a time fans out over partitions (p > 1, n = k = 1).
    DataParallel,
    /// Both at once.
    Hybrid,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self {
            Self::Sequential => "sequential",
            Self::TaskParallel => "task-parallel",
            Self::DataParallel => "data-parallel",
            Self::Hybrid => "hybrid",
        };
        f.write_str(name)
    }
}

pub fn strategy_of(brokers: usize, workers: usize, partitions: usize) -> Strategy {
    match (brokers, workers, partitions) {
        (1, 1, 1) => Strategy::Sequential,
        (_, _, 1) => Strategy::TaskParallel,
        (1, 1, _) => Strategy::DataParallel,
        _ => Strategy::Hybrid,
    }
}

/// Parsed and fully validated cluster description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterConfig {
    pub brokers: usize,
    pub workers: usize,
    pub partitions: usize,
    pub default_limit: u16,
    /// Client-facing address per broker (length n).
    pub qa_addrs: Vec<String>,
    /// `searcher_addrs[i][j]`: the partition-j endpoint broker i queries.
    pub searcher_addrs: Vec<Vec<String>>,
    /// Index file per partition (length p).
    pub index_paths: Vec<PathBuf>,
}

impl ClusterConfig {
    pub fn strategy(&self) -> Strategy {
        strategy_of(self.brokers, self.workers, self.partitions)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Parses `key=value` lines (`#` comments allowed). Keys: `n`, `k`,
    /// `p`, `l` (optional), `qa.<i>`, `searcher.<i>.<j>`, `index.<j>`.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut n = None;
        let mut k = None;
        let mut p = None;
        let mut l = None;
        let mut qa: BTreeMap<usize, (String, usize)> = BTreeMap::new();
        let mut searcher: BTreeMap<(usize, usize), (String, usize)> = BTreeMap::new();
        let mut index: BTreeMap<usize, (String, usize)> = BTreeMap::new();

        for (line_idx, raw) in text.lines().enumerate() {
            let line = line_idx + 1;
            let trimmed = raw.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let (key, value) = trimmed
                .split_once('=')
                .ok_or(ConfigError::Syntax { line })?;
            let (key, value) = (key.trim(), value.trim().to_string());
            let bad_value = || ConfigError::BadValue {
                line,
                key: key.to_string(),
            };
            let duplicate = || ConfigError::DuplicateKey {
                line,
                key: key.to_string(),
            };
            let scalar = |slot: &mut Option<usize>| -> Result<(), ConfigError> {
                let parsed: usize = value.parse().map_err(|_| bad_value())?;
                if parsed == 0 {
                    return Err(bad_value());
                }
                if slot.replace(parsed).is_some() {
                    return Err(duplicate());
                }
                Ok(())
            };
            match key {
                "n" => scalar(&mut n)?,
                "k" => scalar(&mut k)?,
                "p" => scalar(&mut p)?,
                "l" => {
                    let parsed: u16 = value.parse().map_err(|_| bad_value())?;
                    if parsed == 0 || l.replace(parsed).is_some() {
                        return Err(if parsed == 0 { bad_value() } else { duplicate() });
                    }
                }
                _ => {
                    if let Some(i) = key.strip_prefix("qa.") {
                        let i: usize = i.parse().map_err(|_| ConfigError::UnknownKey {
                            line,
                            key: key.to_string(),
                        })?;
                        if value.is_empty() {
                            return Err(bad_value());
                        }
                        if qa.insert(i, (value, line)).is_some() {
                            return Err(duplicate());
                        }
                    } else if let Some(rest) = key.strip_prefix("searcher.") {
                        let (i, j) = rest
                            .split_once('.')
                            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
                            .ok_or(ConfigError::UnknownKey {
                                line,
                                key: key.to_string(),
                            })?;
                        if value.is_empty() {
                            return Err(bad_value());
                        }
                        if searcher.insert((i, j), (value, line)).is_some() {
                            return Err(duplicate());
                        }
                    } else if let Some(j) = key.strip_prefix("index.") {
                        let j: usize = j.parse().map_err(|_| ConfigError::UnknownKey {
                            line,
                            key: key.to_string(),
                        })?;
                        if value.is_empty() {
                            return Err(bad_value());
                        }
                        if index.insert(j, (value, line)).is_some() {
                            return Err(duplicate());
                        }
                    } else {
                        return Err(ConfigError::UnknownKey {
                            line,
                            key: key.to_string(),
                        });
                    }
                }
            }
        }

        let missing = |key: &str| ConfigError::MissingKey {
            key: key.to_string(),
        };
        let n = n.ok_or_else(|| missing("n"))?;
        let k = k.ok_or_else(|| missing("k"))?;
        let p = p.ok_or_else(|| missing("p"))?;
        let l = l.unwrap_or(10);

        for (&i, &(_, line)) in &qa {
            if i >= n {
                return Err(ConfigError::StrayKey {
                    line,
                    key: format!("qa.{i}"),
                });
            }
        }
        for (&(i, j), &(_, line)) in &searcher {
            if i >= n || j >= p {
                return Err(ConfigError::StrayKey {
                    line,
                    key: format!("searcher.{i}.{j}"),
                });
            }
        }
        for (&j, &(_, line)) in &index {
            if j >= p {
                return Err(ConfigError::StrayKey {
                    line,
                    key: format!("index.{j}"),
                });
            }
        }

        let qa_addrs = (0..n)
            .map(|i| {
                qa.remove(&i)
                    .map(|(v, _)| v)
                    .ok_or_else(|| missing(&format!("qa.{i}")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let searcher_addrs = (0..n)
            .map(|i| {
                (0..p)
                    .map(|j| {
                        searcher
                            .remove(&(i, j))
                            .map(|(v, _)| v)
                            .ok_or_else(|| missing(&format!("searcher.{i}.{j}")))
                    })
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()?;
        let index_paths = (0..p)
            .map(|j| {
                index
                    .remove(&j)
                    .map(|(v, _)| PathBuf::from(v))
                    .ok_or_else(|| missing(&format!("index.{j}")))
            })
            .collect::<Result<Vec<_>, _>>()?;

        Ok(Self {
            brokers: n,
            workers: k,
            partitions: p,
            default_limit: l,
            qa_addrs,
            searcher_addrs,
            index_paths,
        })
    }
}

/// Where each partition's corpus slice landed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    pub files: Vec<PathBuf>,
    pub records: Vec<u64>,
}

/// Splits a corpus round-robin by record index into `parts` files named
/// `part0..part<parts-1>`, preserving every line byte for byte.
pub fn partition_corpus(
    input: &Path,
    parts: usize,
    out_dir: &Path,
) -> Result<PartitionPlan, ClusterError> {
    if parts == 0 {
        return Err(ClusterError::NoPartitions);
    }
    std::fs::create_dir_all(out_dir)?;
    let mut files = Vec::with_capacity(parts);
    let mut writers = Vec::with_capacity(parts);
    for j in 0..parts {
        let path = out_dir.join(format!("part{j}"));
        writers.push(BufWriter::new(File::create(&path)?));
        files.push(path);
    }
    let mut records = vec![0u64; parts];
    let reader = BufReader::new(File::open(input)?);
    for (i, line) in RawLines::new(reader).enumerate() {
        let line = line?;
        let j = i % parts;
        writers[j].write_all(&line)?;
        records[j] += 1;
    }
    for mut w in writers {
        w.flush()?;
    }
    Ok(PartitionPlan { files, records })
}

#[derive(Debug, Clone, Copy)]
pub struct LaunchOptions {
    pub postings: PostingsMode,
    pub timeout: Duration,
}

impl Default for LaunchOptions {
    fn default() -> Self {
        Self {
            postings: PostingsMode::InMemory,
            timeout: DEFAULT_GATHER_TIMEOUT,
        }
    }
}

/// A running topology. Shutting down drains the brokers before stopping
/// the searchers, so every accepted query is answered.
pub struct Cluster {
    qa_addrs: Vec<SocketAddr>,
    qas: Vec<QaServer>,
    searchers: Vec<SearcherServer>,
}

impl Cluster {
    pub fn qa_addrs(&self) -> &[SocketAddr] {
        &self.qa_addrs
    }

    pub fn shutdown(self) {
        for qa in self.qas {
            qa.shutdown();
        }
        for searcher in self.searchers {
            searcher.shutdown();
        }
    }

    /// Blocks until every broker has been shut down (e.g. by a client's
    /// SHUTDOWN frame), then stops the searchers.
    pub fn wait(self) {
        for qa in self.qas {
            qa.wait();
        }
        for searcher in self.searchers {
            searcher.shutdown();
        }
    }
}

fn resolve(addr: &str) -> Result<SocketAddr, ClusterError> {
    addr.to_socket_addrs()
        .map_err(|_| ClusterError::BadAddress(addr.to_string()))?
        .next()
        .ok_or_else(|| ClusterError::BadAddress(addr.to_string()))
}

pub fn launch(config: &ClusterConfig) -> Result<Cluster, ClusterError> {
    launch_with(config, LaunchOptions::default())
}

/// Starts every searcher and broker of the configured topology, undoing
/// partial progress on failure.
pub fn launch_with(
    config: &ClusterConfig,
    opts: LaunchOptions,
) -> Result<Cluster, ClusterError> {
    // Distinct endpoints per partition; equal addresses collapse onto one
    // listener backed by one shared sub-index.
    let mut endpoints: Vec<Vec<SocketAddr>> = vec![Vec::new(); config.partitions];
    for row in &config.searcher_addrs {
        for (j, addr) in row.iter().enumerate() {
            let resolved = resolve(addr)?;
            if !endpoints[j].contains(&resolved) {
                endpoints[j].push(resolved);
            }
        }
    }

    let mut searchers: Vec<SearcherServer> = Vec::with_capacity(config.partitions);
    let mut bound: Vec<BTreeMap<SocketAddr, SocketAddr>> = Vec::new();
    for (j, addrs) in endpoints.iter().enumerate() {
        let index = match read_subindex(&config.index_paths[j], opts.postings) {
            Ok(index) => Arc::new(index),
            Err(e) => {
                searchers.into_iter().for_each(SearcherServer::shutdown);
                return Err(e.into());
            }
        };
        match SearcherServer::start(index, addrs, config.default_limit) {
            Ok(server) => {
                bound.push(
                    addrs
                        .iter()
                        .copied()
                        .zip(server.local_addrs().iter().copied())
                        .collect(),
                );
                searchers.push(server);
            }
            Err(e) => {
                searchers.into_iter().for_each(SearcherServer::shutdown);
                return Err(e.into());
            }
        }
    }

    let mut qas: Vec<QaServer> = Vec::with_capacity(config.brokers);
    let mut qa_addrs = Vec::with_capacity(config.brokers);
    for i in 0..config.brokers {
        let wired: Result<Vec<SocketAddr>, ClusterError> = (0..config.partitions)
            .map(|j| {
                let configured = resolve(&config.searcher_addrs[i][j])?;
                Ok(bound[j][&configured])
            })
            .collect();
        let started = wired.and_then(|searcher_list| {
            QaServer::start(
                config.qa_addrs[i].as_str(),
                searcher_list,
                QaOptions {
                    workers: config.workers,
                    default_limit: config.default_limit,
                    timeout: opts.timeout,
                },
            )
            .map_err(ClusterError::from)
        });
        match started {
            Ok(qa) => {
                qa_addrs.push(qa.local_addr());
                qas.push(qa);
            }
            Err(e) => {
                qas.into_iter().for_each(QaServer::shutdown);
                searchers.into_iter().for_each(SearcherServer::shutdown);
                return Err(e);
            }
        }
    }
    Ok(Cluster {
        qa_addrs,
        qas,
        searchers,
    })
}
