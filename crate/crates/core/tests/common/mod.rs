//! Shared helpers for the integration suites: corpus generation, random
//! boolean queries, a brute-force reference searcher, and cluster bring-up.

#![allow(dead_code)]

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use mose::bench::{synth_corpus, SynthOptions};
use mose::client::QueryClient;
use mose::cluster::{launch_with, partition_corpus, Cluster, ClusterConfig, LaunchOptions};
use mose::corpus::{CorpusReader, DocumentRecord};
use mose::eval::ScoredHit;
use mose::format::write_subindex;
use mose::index::{build_subindex, tokenize};
use mose::query::QueryNode;

/// Term naming scheme of the synthetic corpus: rank 17 → "w000017".
pub fn term_for(rank: usize) -> String {
    format!("w{rank:06}")
}

/// Writes a synthetic corpus file and returns its path.
pub fn make_corpus(dir: &Path, opts: &SynthOptions) -> PathBuf {
    let path = dir.join("corpus.tsv");
    let mut out = BufWriter::new(File::create(&path).expect("create corpus"));
    synth_corpus(&mut out, opts).expect("synth corpus");
    out.flush().expect("flush corpus");
    path
}

/// Reads every record of a corpus file, in order.
pub fn load_records(path: &Path) -> Vec<DocumentRecord> {
    CorpusReader::new(BufReader::new(File::open(path).expect("open corpus")))
        .map(|r| r.expect("well-formed corpus record"))
        .collect()
}

/// Generates random boolean query strings over the synthetic vocabulary.
///
/// Operands are parenthesized at every level, so operator precedence cannot
/// make two readings of the same string; a small share of the terms is drawn
/// from outside the vocabulary to exercise empty posting lists.
pub fn random_queries(count: usize, vocab: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| render(&random_node(&mut rng, vocab, 0))).collect()
}

fn random_node(rng: &mut ChaCha8Rng, vocab: usize, depth: u32) -> QueryNode {
    let leaf = depth >= 4 || rng.gen_bool(0.35);
    if leaf {
        let rank = if rng.gen_bool(0.05) {
            vocab + rng.gen_range(0..100) // never indexed
        } else {
            // Square the unit draw to favour frequent (low-rank) terms.
            let u: f64 = rng.gen();
            (u * u * vocab as f64) as usize
        };
        return QueryNode::Term(term_for(rank));
    }
    let l = Box::new(random_node(rng, vocab, depth + 1));
    let r = Box::new(random_node(rng, vocab, depth + 1));
    match rng.gen_range(0..4) {
        0 | 1 => QueryNode::And(l, r),
        2 => QueryNode::Or(l, r),
        _ => QueryNode::AndNot(l, r),
    }
}

fn render(node: &QueryNode) -> String {
    match node {
        QueryNode::Term(t) => t.clone(),
        QueryNode::And(l, r) => format!("({} AND {})", render(l), render(r)),
        QueryNode::Or(l, r) => format!("({} OR {})", render(l), render(r)),
        QueryNode::AndNot(l, r) => format!("({} ANDNOT {})", render(l), render(r)),
    }
}

/// Brute-force reference searcher: evaluates queries by scanning the term
/// frequencies of every document, with no index, postings, or merge logic.
pub struct Oracle {
    tfs: Vec<HashMap<String, u32>>,
}

impl Oracle {
    pub fn build(records: &[DocumentRecord]) -> Self {
        let tfs = records
            .iter()
            .map(|rec| {
                let mut tf = HashMap::new();
                for token in tokenize(&rec.body) {
                    *tf.entry(token).or_insert(0u32) += 1;
                }
                tf
            })
            .collect();
        Self { tfs }
    }

    pub fn doc_count(&self) -> usize {
        self.tfs.len()
    }

    fn score(&self, doc: usize, node: &QueryNode) -> Option<f32> {
        match node {
            QueryNode::Term(t) => self.tfs[doc]
                .get(t)
                .map(|&tf| 1.0 + (tf as f32).ln()),
            QueryNode::And(l, r) => match (self.score(doc, l), self.score(doc, r)) {
                (Some(a), Some(b)) => Some(a + b),
                _ => None,
            },
            QueryNode::Or(l, r) => match (self.score(doc, l), self.score(doc, r)) {
                (Some(a), Some(b)) => Some(a + b),
                (Some(a), None) => Some(a),
                (None, Some(b)) => Some(b),
                (None, None) => None,
            },
            QueryNode::AndNot(l, r) => match self.score(doc, r) {
                Some(_) => None,
                None => self.score(doc, l),
            },
        }
    }

    /// Every matching document as (corpus record index, score), by index.
    pub fn matches(&self, node: &QueryNode) -> Vec<(u64, f32)> {
        (0..self.tfs.len())
            .filter_map(|doc| self.score(doc, node).map(|s| (doc as u64, s)))
            .collect()
    }

    /// The `limit` best hits, score descending with record index as the
    /// tie-break, as (corpus record index, score).
    pub fn top(&self, node: &QueryNode, limit: usize) -> Vec<(u64, f32)> {
        let mut all = self.matches(node);
        all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        all.truncate(limit);
        all
    }
}

/// Maps a reply onto (corpus record index, score) pairs so results from
/// different partition counts can be compared directly.
pub fn canonical_hits(hits: &[ScoredHit], partitions: u16) -> Vec<(u64, f32)> {
    hits.iter()
        .map(|h| (h.doc.global_index(partitions), h.score))
        .collect()
}

/// Serializes canonical hits for exact (bit-level) equality checks.
pub fn canonical_bytes(hits: &[ScoredHit], partitions: u16) -> Vec<u8> {
    let mut out = Vec::with_capacity(hits.len() * 12);
    for h in hits {
        out.extend_from_slice(&h.doc.global_index(partitions).to_le_bytes());
        out.extend_from_slice(&h.score.to_bits().to_le_bytes());
    }
    out
}

/// Compares scored lists exactly: same indices, same score bits, same order.
pub fn assert_hits_equal(got: &[(u64, f32)], want: &[(u64, f32)], context: &str) {
    assert_eq!(
        got.len(),
        want.len(),
        "{context}: hit count {} != {}\n got: {got:?}\nwant: {want:?}",
        got.len(),
        want.len()
    );
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        assert_eq!(g.0, w.0, "{context}: doc mismatch at hit {i}\n got: {got:?}\nwant: {want:?}");
        assert_eq!(
            g.1.to_bits(),
            w.1.to_bits(),
            "{context}: score mismatch at hit {i} ({} vs {})",
            g.1,
            w.1
        );
    }
}

/// Splits a corpus into `parts` slices and builds one index file per slice.
pub fn build_partition_indexes(
    corpus: &Path,
    parts: usize,
    dir: &Path,
    workers: usize,
) -> Vec<PathBuf> {
    let slices = dir.join("parts");
    let plan = partition_corpus(corpus, parts, &slices).expect("partition corpus");
    plan.files
        .iter()
        .enumerate()
        .map(|(j, slice)| {
            let reader = BufReader::new(File::open(slice).expect("open slice"));
            let (index, _) = build_subindex(reader, j as u16, workers).expect("build index");
            let path = dir.join(format!("part{j}.idx"));
            write_subindex(&index, &path).expect("write index");
            path
        })
        .collect()
}

/// Builds the indexes for an (n, k, p) topology on ephemeral ports and
/// launches it.
pub fn start_cluster(
    corpus: &Path,
    n: usize,
    k: usize,
    p: usize,
    default_limit: u16,
    dir: &Path,
    opts: LaunchOptions,
) -> Cluster {
    let index_paths = build_partition_indexes(corpus, p, dir, 2);
    let config = ClusterConfig {
        brokers: n,
        workers: k,
        partitions: p,
        default_limit,
        qa_addrs: vec!["127.0.0.1:0".to_string(); n],
        searcher_addrs: vec![vec!["127.0.0.1:0".to_string(); p]; n],
        index_paths,
    };
    launch_with(&config, opts).expect("launch cluster")
}

/// Connects one client to the first broker of a cluster.
pub fn connect(cluster: &Cluster) -> QueryClient {
    QueryClient::connect(cluster.qa_addrs()[0]).expect("connect to qa")
}
