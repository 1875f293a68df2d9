//! Sort-based construction of per-partition indexes and the in-memory /
//! on-disk sub-index they produce.
//!
//! A master thread assigns dense local document ids in corpus order and
//! feeds records to a pool of workers. Each worker turns documents into
//! `(term, doc, tf)` triples and flushes them as sorted runs; the runs are
//! then k-way merged into per-term posting lists. Because the merged
//! sequence is fully ordered by `(term, doc)`, the resulting index bytes do
//! not depend on the number of workers.

use std::collections::HashMap;
use std::io::{self, BufRead};

use crossbeam_channel::{bounded, Receiver};
use thiserror::Error;

use crate::codec::{
    golomb_parameter, read_gamma, read_golomb, write_gamma, write_golomb, BitReader, BitWriter,
    CodecError,
};
use crate::corpus::{CorpusError, CorpusReader, DocumentRecord};
use crate::docid::{DocId, MAX_LOCAL_ID};
use crate::format::PostingsSource;
use crate::lexicon::{Lexicon, LexiconError, TermInfo, DEFAULT_BLOCK_SIZE};

/// Terms are capped at this many bytes (cut at a character boundary).
pub const MAX_TERM_BYTES: usize = 64;
/// A worker flushes its run buffer once it holds this many triples.
pub const RUN_FLUSH_TRIPLES: usize = 1_000_000;

const FEED_QUEUE_LEN: usize = 256;

pub type Triple = (String, u64, u32);
type Run = Vec<Triple>;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("index i/o error: {0}")]
    Io(#[from] io::Error),
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("run {run} is not sorted by (term, doc)")]
    CorruptRun { run: usize },
    #[error("posting list is corrupt: {0}")]
    BadPostings(&'static str),
    #[error("partition exceeds the 48-bit local document id space")]
    DocLimit,
}

/// Splits text into lowercased maximal runs of alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(|s| cap_term(s.to_lowercase()))
        .collect()
}

fn cap_term(mut term: String) -> String {
    if term.len() > MAX_TERM_BYTES {
        let mut end = MAX_TERM_BYTES;
        while !term.is_char_boundary(end) {
            end -= 1;
        }
        term.truncate(end);
    }
    term
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocEntry {
    pub url: String,
    pub doc_length: u32,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BuildStats {
    pub documents: u64,
    pub skipped_records: u64,
    pub distinct_terms: u64,
    pub postings_bytes: u64,
}

/// One partition's searchable index.
#[derive(Debug)]
pub struct SubIndex {
    pub partition_id: u16,
    pub doc_count: u64,
    pub doc_table: Vec<DocEntry>,
    pub lexicon: Lexicon,
    pub postings: PostingsSource,
}

impl SubIndex {
    /// Decodes the posting list for `term`, or `None` if it is absent.
    pub fn posting_list(&self, term: &str) -> Result<Option<Vec<(DocId, u32)>>, IndexError> {
        let Some(info) = self.lexicon.lookup(term) else {
            return Ok(None);
        };
        let bytes = self
            .postings
            .read(info.postings_offset, u64::from(info.postings_len))?;
        let locals = decode_postings(&bytes, self.doc_count, info.doc_freq)?;
        Ok(Some(
            locals
                .into_iter()
                .map(|(local, tf)| (DocId::new(self.partition_id, local), tf))
                .collect(),
        ))
    }

    pub fn doc_entry(&self, local: u64) -> Option<&DocEntry> {
        self.doc_table.get(local as usize)
    }

    pub fn term_count(&self) -> u64 {
        self.lexicon.len() as u64
    }
}

/// Indexes a corpus stream into an in-memory sub-index, skipping (and
/// counting) malformed records.
pub fn build_subindex<R: BufRead>(
    input: R,
    partition_id: u16,
    workers: usize,
) -> Result<(SubIndex, BuildStats), IndexError> {
    build_subindex_with(input, partition_id, workers, RUN_FLUSH_TRIPLES)
}

fn build_subindex_with<R: BufRead>(
    input: R,
    partition_id: u16,
    workers: usize,
    flush_threshold: usize,
) -> Result<(SubIndex, BuildStats), IndexError> {
    let workers = workers.max(1);
    let flush_threshold = flush_threshold.max(1);
    let (runs, entries, doc_count, skipped) = std::thread::scope(|scope| {
        let (tx, rx) = bounded::<(u64, DocumentRecord)>(FEED_QUEUE_LEN);
        let handles: Vec<_> = (0..workers)
            .map(|_| {
                let rx = rx.clone();
                scope.spawn(move || worker_loop(rx, flush_threshold))
            })
            .collect();
        drop(rx);

        let mut skipped = 0u64;
        let mut next_local = 0u64;
        let mut feed_err = None;
        for item in CorpusReader::new(input) {
            match item {
                Ok(record) => {
                    if next_local > MAX_LOCAL_ID {
                        feed_err = Some(IndexError::DocLimit);
                        break;
                    }
                    let local = next_local;
                    next_local += 1;
                    if tx.send((local, record)).is_err() {
                        break;
                    }
                }
                Err(CorpusError::Malformed { .. }) => skipped += 1,
                Err(CorpusError::Io(e)) => {
                    feed_err = Some(e.into());
                    break;
                }
            }
        }
        drop(tx);

        let mut runs = Vec::new();
        let mut entries = Vec::new();
        for handle in handles {
            let (worker_runs, worker_entries) =
                handle.join().expect("index worker panicked");
            runs.extend(worker_runs);
            entries.extend(worker_entries);
        }
        match feed_err {
            Some(e) => Err(e),
            None => Ok((runs, entries, next_local, skipped)),
        }
    })?;

    let mut table: Vec<Option<DocEntry>> = (0..doc_count).map(|_| None).collect();
    for (local, entry) in entries {
        table[local as usize] = Some(entry);
    }
    let doc_table: Vec<DocEntry> = table
        .into_iter()
        .map(|e| e.expect("every assigned document is indexed"))
        .collect();

    let merged = merge_runs(runs)?;
    let mut postings_buf = Vec::new();
    let mut lex_entries = Vec::with_capacity(merged.len());
    for (term, plist) in merged {
        let bytes = encode_postings(&plist, doc_count)?;
        lex_entries.push((
            term,
            TermInfo {
                doc_freq: plist.len() as u32,
                postings_offset: postings_buf.len() as u64,
                postings_len: bytes.len() as u32,
            },
        ));
        postings_buf.extend_from_slice(&bytes);
    }
    let lexicon = Lexicon::from_entries(lex_entries, DEFAULT_BLOCK_SIZE)?;

    let stats = BuildStats {
        documents: doc_count,
        skipped_records: skipped,
        distinct_terms: lexicon.len() as u64,
        postings_bytes: postings_buf.len() as u64,
    };
    let index = SubIndex {
        partition_id,
        doc_count,
        doc_table,
        lexicon,
        postings: PostingsSource::Memory(postings_buf),
    };
    Ok((index, stats))
}

fn worker_loop(
    rx: Receiver<(u64, DocumentRecord)>,
    flush_threshold: usize,
) -> (Vec<Run>, Vec<(u64, DocEntry)>) {
    let mut runs = Vec::new();
    let mut buf: Run = Vec::new();
    let mut entries = Vec::new();
    while let Ok((local, record)) = rx.recv() {
        let mut tf: HashMap<String, u32> = HashMap::new();
        let mut tokens = 0u32;
        for term in tokenize(&record.body) {
            tokens = tokens.saturating_add(1);
            *tf.entry(term).or_insert(0) += 1;
        }
        entries.push((
            local,
            DocEntry {
                url: record.url,
                doc_length: tokens,
            },
        ));
        buf.extend(tf.into_iter().map(|(term, count)| (term, local, count)));
        if buf.len() >= flush_threshold {
            buf.sort_unstable();
            runs.push(std::mem::take(&mut buf));
        }
    }
    if !buf.is_empty() {
        buf.sort_unstable();
        runs.push(buf);
    }
    (runs, entries)
}

/// Per-term posting list of `(doc local id, term frequency)`, by doc.
type Postings = Vec<(u64, u32)>;

/// K-way merges sorted runs of `(term, doc, tf)` triples into per-term
/// posting lists, summing tf when the same `(term, doc)` appears in more
/// than one run.
pub fn merge_runs(runs: Vec<Run>) -> Result<Vec<(String, Postings)>, IndexError> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    let mut heap: BinaryHeap<Reverse<(String, u64, usize)>> = BinaryHeap::new();
    let mut cursors = vec![0usize; runs.len()];
    for (i, run) in runs.iter().enumerate() {
        if let Some((term, local, _)) = run.first() {
            heap.push(Reverse((term.clone(), *local, i)));
        }
    }

    let mut out: Vec<(String, Vec<(u64, u32)>)> = Vec::new();
    while let Some(Reverse((term, local, run_idx))) = heap.pop() {
        let pos = cursors[run_idx];
        let tf = runs[run_idx][pos].2;
        cursors[run_idx] += 1;
        if let Some(next) = runs[run_idx].get(pos + 1) {
            if (next.0.as_str(), next.1) <= (term.as_str(), local) {
                return Err(IndexError::CorruptRun { run: run_idx });
            }
            heap.push(Reverse((next.0.clone(), next.1, run_idx)));
        }
        match out.last_mut() {
            Some((t, plist)) if *t == term => match plist.last_mut() {
                Some(last) if last.0 == local => last.1 = last.1.saturating_add(tf),
                _ => plist.push((local, tf)),
            },
            _ => out.push((term, vec![(local, tf)])),
        }
    }
    Ok(out)
}

/// Compresses one posting list: per-term Golomb parameter from the
/// partition's document count, doc-id gaps in Golomb code interleaved with
/// gamma-coded term frequencies, padded to a whole byte.
pub fn encode_postings(list: &[(u64, u32)], doc_count: u64) -> Result<Vec<u8>, IndexError> {
    let b = golomb_parameter(doc_count, list.len() as u64)?;
    let mut w = BitWriter::new();
    let mut prev: Option<u64> = None;
    for &(local, tf) in list {
        let gap = match prev {
            None => local + 1,
            Some(p) if local > p => local - p,
            Some(_) => return Err(IndexError::BadPostings("doc ids not strictly increasing")),
        };
        if tf == 0 {
            return Err(IndexError::BadPostings("zero term frequency"));
        }
        write_golomb(&mut w, gap, b)?;
        write_gamma(&mut w, u64::from(tf))?;
        prev = Some(local);
    }
    Ok(w.into_bytes())
}

/// Inverse of [`encode_postings`]; `doc_freq` fixes how many postings to
/// read and any non-zero padding or out-of-range doc id is an error.
pub fn decode_postings(
    bytes: &[u8],
    doc_count: u64,
    doc_freq: u32,
) -> Result<Vec<(u64, u32)>, IndexError> {
    let b = golomb_parameter(doc_count, u64::from(doc_freq))?;
    let mut r = BitReader::new(bytes);
    let mut out = Vec::with_capacity(doc_freq as usize);
    let mut prev: Option<u64> = None;
    for _ in 0..doc_freq {
        let gap = read_golomb(&mut r, b)?;
        let tf = read_gamma(&mut r)?;
        if tf > u64::from(u32::MAX) {
            return Err(IndexError::BadPostings("term frequency overflow"));
        }
        let local = match prev {
            None => gap - 1,
            Some(p) => p
                .checked_add(gap)
                .ok_or(IndexError::BadPostings("doc id overflow"))?,
        };
        if local >= doc_count {
            return Err(IndexError::BadPostings("doc id out of range"));
        }
        out.push((local, tf as u32));
        prev = Some(local);
    }
    let trailing = bytes.len() * 8 - r.bit_pos();
    if trailing >= 8 {
        return Err(IndexError::BadPostings("unread trailing bytes"));
    }
    for _ in 0..trailing {
        if r.read_bit()? {
            return Err(IndexError::BadPostings("non-zero padding"));
        }
    }
    Ok(out)
}
