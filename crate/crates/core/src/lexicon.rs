//! Blocked front-coded term dictionary.
//!
//! Terms are kept sorted and grouped into fixed-size blocks. The first term
//! of a block is stored in full; every following entry stores only the
//! length of the byte prefix it shares with its predecessor plus the
//! remaining suffix. Lookups binary-search the block heads and then
//! reconstruct terms within a single block.

use thiserror::Error;

pub const DEFAULT_BLOCK_SIZE: u16 = 16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LexiconError {
    #[error("block size must be at least 1")]
    BadBlockSize,
    #[error("term at index {0} is empty")]
    EmptyTerm(usize),
    #[error("term at index {0} is longer than 65535 bytes")]
    TermTooLong(usize),
    #[error("term at index {0} is not strictly greater than its predecessor")]
    NotStrictlyIncreasing(usize),
    #[error("encoded lexicon is truncated")]
    Truncated,
    #[error("encoded lexicon entry {0} is invalid")]
    BadEntry(usize),
    #[error("decoded term {0} is not valid UTF-8")]
    InvalidUtf8(usize),
}

/// Per-term metadata: document frequency and the location of the term's
/// posting list inside the postings section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TermInfo {
    pub doc_freq: u32,
    pub postings_offset: u64,
    pub postings_len: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexiconEntry {
    pub term: String,
    pub info: TermInfo,
}

#[derive(Debug, Clone)]
struct Encoded {
    lcp: u16,
    suffix: Box<[u8]>,
    info: TermInfo,
}

#[derive(Debug, Clone)]
pub struct Lexicon {
    block_size: u16,
    entries: Vec<Encoded>,
}

fn common_prefix_len(a: &[u8], b: &[u8]) -> usize {
    a.iter().zip(b).take_while(|(x, y)| x == y).count()
}

impl Lexicon {
    /// Builds a lexicon from strictly increasing `(term, info)` pairs.
    pub fn from_entries<I>(entries: I, block_size: u16) -> Result<Self, LexiconError>
    where
        I: IntoIterator<Item = (String, TermInfo)>,
    {
        if block_size == 0 {
            return Err(LexiconError::BadBlockSize);
        }
        let block_len = block_size as usize;
        let mut encoded = Vec::new();
        let mut prev: Vec<u8> = Vec::new();
        for (i, (term, info)) in entries.into_iter().enumerate() {
            let bytes = term.into_bytes();
            if bytes.is_empty() {
                return Err(LexiconError::EmptyTerm(i));
            }
            if bytes.len() > u16::MAX as usize {
                return Err(LexiconError::TermTooLong(i));
            }
            if i > 0 && bytes.as_slice() <= prev.as_slice() {
                return Err(LexiconError::NotStrictlyIncreasing(i));
            }
            let lcp = if i % block_len == 0 {
                0
            } else {
                common_prefix_len(&prev, &bytes)
            };
            encoded.push(Encoded {
                lcp: lcp as u16,
                suffix: bytes[lcp..].into(),
                info,
            });
            prev = bytes;
        }
        Ok(Self {
            block_size,
            entries: encoded,
        })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn block_size(&self) -> u16 {
        self.block_size
    }

    /// Finds a term's metadata, reconstructing at most one block.
    pub fn lookup(&self, term: &str) -> Option<TermInfo> {
        let target = term.as_bytes();
        let block_len = self.block_size as usize;
        let block_count = self.entries.len().div_ceil(block_len);
        if block_count == 0 {
            return None;
        }
        // First block whose head is beyond the target; the target can only
        // live in the block before it.
        let after = (0..block_count)
            .collect::<Vec<_>>()
            .partition_point(|&b| self.entries[b * block_len].suffix.as_ref() <= target);
        if after == 0 {
            return None;
        }
        let start = (after - 1) * block_len;
        let end = (start + block_len).min(self.entries.len());
        let mut current: Vec<u8> = Vec::new();
        for entry in &self.entries[start..end] {
            current.truncate(entry.lcp as usize);
            current.extend_from_slice(&entry.suffix);
            if current.as_slice() == target {
                return Some(entry.info);
            }
            if current.as_slice() > target {
                break;
            }
        }
        None
    }

    /// Reconstructs every term in order.
    pub fn decode_terms(&self) -> Result<Vec<LexiconEntry>, LexiconError> {
        let mut out = Vec::with_capacity(self.entries.len());
        let mut current: Vec<u8> = Vec::new();
        for (i, entry) in self.entries.iter().enumerate() {
            if entry.lcp as usize > current.len() {
                return Err(LexiconError::BadEntry(i));
            }
            current.truncate(entry.lcp as usize);
            current.extend_from_slice(&entry.suffix);
            let term = std::str::from_utf8(&current)
                .map_err(|_| LexiconError::InvalidUtf8(i))?
                .to_string();
            out.push(LexiconEntry {
                term,
                info: entry.info,
            });
        }
        Ok(out)
    }

    /// Serializes the lexicon section body.
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.block_size.to_le_bytes());
        for entry in &self.entries {
            out.extend_from_slice(&entry.lcp.to_le_bytes());
            out.extend_from_slice(&(entry.suffix.len() as u16).to_le_bytes());
            out.extend_from_slice(&entry.suffix);
            out.extend_from_slice(&entry.info.doc_freq.to_le_bytes());
            out.extend_from_slice(&entry.info.postings_offset.to_le_bytes());
            out.extend_from_slice(&entry.info.postings_len.to_le_bytes());
        }
    }

    /// Parses a lexicon section body, consuming it exactly.
    pub fn decode(bytes: &[u8]) -> Result<Self, LexiconError> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let block_size = cursor.u16()?;
        if block_size == 0 {
            return Err(LexiconError::BadBlockSize);
        }
        let block_len = block_size as usize;
        let mut entries = Vec::new();
        let mut prev_len = 0usize;
        while !cursor.done() {
            let i = entries.len();
            let lcp = cursor.u16()?;
            let suffix_len = cursor.u16()?;
            let suffix: Box<[u8]> = cursor.take(suffix_len as usize)?.into();
            let info = TermInfo {
                doc_freq: cursor.u32()?,
                postings_offset: cursor.u64()?,
                postings_len: cursor.u32()?,
            };
            let is_head = i % block_len == 0;
            if (is_head && lcp != 0) || (!is_head && lcp as usize > prev_len) {
                return Err(LexiconError::BadEntry(i));
            }
            prev_len = lcp as usize + suffix.len();
            if prev_len == 0 {
                return Err(LexiconError::EmptyTerm(i));
            }
            entries.push(Encoded { lcp, suffix, info });
        }
        Ok(Self {
            block_size,
            entries,
        })
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], LexiconError> {
        let end = self.pos.checked_add(n).ok_or(LexiconError::Truncated)?;
        if end > self.bytes.len() {
            return Err(LexiconError::Truncated);
        }
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u16(&mut self) -> Result<u16, LexiconError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, LexiconError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, LexiconError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
