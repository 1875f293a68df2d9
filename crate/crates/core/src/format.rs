//! On-disk index container.
//!
//! Little-endian layout: magic `MOSE`, version, partition id, document
//! count, term count, then a three-entry section table (offset, length)
//! locating the document table, the lexicon and the postings. Postings can
//! be loaded whole or left on disk and fetched with positioned reads
//! through an optional bounded cache.

use std::collections::{HashMap, VecDeque};
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::os::unix::fs::FileExt;
use std::path::Path;
use std::sync::Mutex;

use thiserror::Error;

use crate::index::{DocEntry, SubIndex};
use crate::lexicon::{Lexicon, LexiconError};

pub const MAGIC: [u8; 4] = *b"MOSE";
pub const VERSION: u32 = 1;

const HEADER_LEN: u64 = 4 + 4 + 2 + 8 + 8 + 3 * 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("index file i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("bad magic number (not an index file)")]
    BadMagic,
    #[error("unsupported index version {0}")]
    BadVersion(u32),
    #[error("index file is truncated or its section table is inconsistent")]
    Truncated,
    #[error("document table is corrupt")]
    BadDocTable,
    #[error(transparent)]
    Lexicon(#[from] LexiconError),
    #[error("header says {header} terms but the lexicon holds {lexicon}")]
    TermCountMismatch { header: u64, lexicon: u64 },
}

/// How `read_subindex` should treat the postings section.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostingsMode {
    /// Load all postings into memory.
    InMemory,
    /// Leave postings on disk; `cache_bytes` bounds an in-process cache of
    /// decompressed-input byte ranges (0 disables caching).
    OnDisk { cache_bytes: u64 },
}

/// Where a sub-index's compressed postings live.
#[derive(Debug)]
pub enum PostingsSource {
    Memory(Vec<u8>),
    Disk {
        file: File,
        base: u64,
        len: u64,
        cache: Option<Mutex<PostingsCache>>,
    },
}

impl PostingsSource {
    pub fn len(&self) -> u64 {
        match self {
            Self::Memory(bytes) => bytes.len() as u64,
            Self::Disk { len, .. } => *len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Fetches `len` bytes starting at a section-relative offset.
    pub fn read(&self, offset: u64, len: u64) -> io::Result<Vec<u8>> {
        let end = offset
            .checked_add(len)
            .filter(|&end| end <= self.len())
            .ok_or_else(|| {
                io::Error::new(io::ErrorKind::InvalidInput, "postings range out of bounds")
            })?;
        match self {
            Self::Memory(bytes) => Ok(bytes[offset as usize..end as usize].to_vec()),
            Self::Disk {
                file, base, cache, ..
            } => {
                if let Some(cache) = cache {
                    if let Some(hit) = cache.lock().unwrap().get(offset) {
                        return Ok(hit);
                    }
                }
                let mut buf = vec![0u8; len as usize];
                file.read_exact_at(&mut buf, base + offset)?;
                if let Some(cache) = cache {
                    cache.lock().unwrap().insert(offset, &buf);
                }
                Ok(buf)
            }
        }
    }
}

/// FIFO cache of posting-list byte ranges with a hard byte budget.
#[derive(Debug)]
pub struct PostingsCache {
    budget: u64,
    used: u64,
    map: HashMap<u64, Vec<u8>>,
    order: VecDeque<u64>,
}

impl PostingsCache {
    pub fn new(budget: u64) -> Self {
        Self {
            budget,
            used: 0,
            map: HashMap::new(),
            order: VecDeque::new(),
        }
    }

    pub fn used(&self) -> u64 {
        self.used
    }

    fn get(&mut self, offset: u64) -> Option<Vec<u8>> {
        self.map.get(&offset).cloned()
    }

    fn insert(&mut self, offset: u64, bytes: &[u8]) {
        let size = bytes.len() as u64;
        if size > self.budget || self.map.contains_key(&offset) {
            return;
        }
        while self.used + size > self.budget {
            let oldest = self.order.pop_front().expect("cache accounting is exact");
            let evicted = self.map.remove(&oldest).expect("cache accounting is exact");
            self.used -= evicted.len() as u64;
        }
        self.used += size;
        self.order.push_back(offset);
        self.map.insert(offset, bytes.to_vec());
    }
}

/// Serializes a sub-index to `path`.
pub fn write_subindex(index: &SubIndex, path: &Path) -> Result<(), FormatError> {
    let mut doc_section = Vec::new();
    for entry in &index.doc_table {
        let url_len =
            u16::try_from(entry.url.len()).map_err(|_| FormatError::BadDocTable)?;
        doc_section.extend_from_slice(&url_len.to_le_bytes());
        doc_section.extend_from_slice(entry.url.as_bytes());
        doc_section.extend_from_slice(&entry.doc_length.to_le_bytes());
    }
    let mut lex_section = Vec::new();
    index.lexicon.encode_into(&mut lex_section);
    let postings = index.postings.read(0, index.postings.len())?;

    let doc_offset = HEADER_LEN;
    let lex_offset = doc_offset + doc_section.len() as u64;
    let post_offset = lex_offset + lex_section.len() as u64;

    let mut out = BufWriter::new(File::create(path)?);
    out.write_all(&MAGIC)?;
    out.write_all(&VERSION.to_le_bytes())?;
    out.write_all(&index.partition_id.to_le_bytes())?;
    out.write_all(&index.doc_count.to_le_bytes())?;
    out.write_all(&(index.lexicon.len() as u64).to_le_bytes())?;
    for (offset, len) in [
        (doc_offset, doc_section.len() as u64),
        (lex_offset, lex_section.len() as u64),
        (post_offset, postings.len() as u64),
    ] {
        out.write_all(&offset.to_le_bytes())?;
        out.write_all(&len.to_le_bytes())?;
    }
    out.write_all(&doc_section)?;
    out.write_all(&lex_section)?;
    out.write_all(&postings)?;
    out.flush()?;
    Ok(())
}

/// Opens a sub-index file, validating the header and both in-memory
/// sections before returning.
pub fn read_subindex(path: &Path, mode: PostingsMode) -> Result<SubIndex, FormatError> {
    let file = File::open(path)?;
    let file_len = file.metadata()?.len();
    if file_len < HEADER_LEN {
        return Err(FormatError::Truncated);
    }
    let mut header = [0u8; HEADER_LEN as usize];
    file.read_exact_at(&mut header, 0)?;
    if header[0..4] != MAGIC {
        return Err(FormatError::BadMagic);
    }
    let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(FormatError::BadVersion(version));
    }
    let partition_id = u16::from_le_bytes(header[8..10].try_into().unwrap());
    let doc_count = u64::from_le_bytes(header[10..18].try_into().unwrap());
    let term_count = u64::from_le_bytes(header[18..26].try_into().unwrap());
    let mut sections = [(0u64, 0u64); 3];
    for (i, section) in sections.iter_mut().enumerate() {
        let at = 26 + i * 16;
        let offset = u64::from_le_bytes(header[at..at + 8].try_into().unwrap());
        let len = u64::from_le_bytes(header[at + 8..at + 16].try_into().unwrap());
        if offset
            .checked_add(len)
            .is_none_or(|end| end > file_len || offset < HEADER_LEN)
        {
            return Err(FormatError::Truncated);
        }
        *section = (offset, len);
    }
    let [docs, lex, post] = sections;

    let read_section = |(offset, len): (u64, u64)| -> Result<Vec<u8>, FormatError> {
        let mut buf =
            vec![0u8; usize::try_from(len).map_err(|_| FormatError::Truncated)?];
        file.read_exact_at(&mut buf, offset)?;
        Ok(buf)
    };

    let doc_table = parse_doc_table(&read_section(docs)?, doc_count)?;
    let lexicon = Lexicon::decode(&read_section(lex)?)?;
    if lexicon.len() as u64 != term_count {
        return Err(FormatError::TermCountMismatch {
            header: term_count,
            lexicon: lexicon.len() as u64,
        });
    }
    let postings = match mode {
        PostingsMode::InMemory => PostingsSource::Memory(read_section(post)?),
        PostingsMode::OnDisk { cache_bytes } => PostingsSource::Disk {
            file,
            base: post.0,
            len: post.1,
            cache: (cache_bytes > 0).then(|| Mutex::new(PostingsCache::new(cache_bytes))),
        },
    };
    Ok(SubIndex {
        partition_id,
        doc_count,
        doc_table,
        lexicon,
        postings,
    })
}

fn parse_doc_table(bytes: &[u8], doc_count: u64) -> Result<Vec<DocEntry>, FormatError> {
    let count = usize::try_from(doc_count).map_err(|_| FormatError::BadDocTable)?;
    let mut table = Vec::with_capacity(count);
    let mut pos = 0usize;
    for _ in 0..count {
        let take = |pos: &mut usize, n: usize| -> Result<&[u8], FormatError> {
            let end = pos.checked_add(n).ok_or(FormatError::BadDocTable)?;
            let slice = bytes.get(*pos..end).ok_or(FormatError::BadDocTable)?;
            *pos = end;
            Ok(slice)
        };
        let url_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
        let url = std::str::from_utf8(take(&mut pos, url_len as usize)?)
            .map_err(|_| FormatError::BadDocTable)?
            .to_string();
        let doc_length = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap());
        table.push(DocEntry { url, doc_length });
    }
    if pos != bytes.len() {
        return Err(FormatError::BadDocTable);
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{write_record, DocumentRecord};
    use crate::index::build_subindex;
    use std::io::BufReader;

    fn sample_index(partition_id: u16) -> SubIndex {
        let docs = [
            ("http://0", "golomb codes pack small gaps tightly"),
            ("http://1", "gap gap gap gamma"),
            ("http://2", "pack codes pack"),
        ];
        let mut buf = Vec::new();
        for (url, body) in docs {
            write_record(
                &mut buf,
                &DocumentRecord {
                    url: url.into(),
                    body: body.into(),
                },
            )
            .unwrap();
        }
        build_subindex(BufReader::new(buf.as_slice()), partition_id, 1)
            .unwrap()
            .0
    }

    fn assert_same_answers(a: &SubIndex, b: &SubIndex) {
        assert_eq!(a.partition_id, b.partition_id);
        assert_eq!(a.doc_count, b.doc_count);
        assert_eq!(a.doc_table, b.doc_table);
        let terms = a.lexicon.decode_terms().unwrap();
        assert_eq!(terms, b.lexicon.decode_terms().unwrap());
        for entry in terms {
            assert_eq!(
                a.posting_list(&entry.term).unwrap(),
                b.posting_list(&entry.term).unwrap(),
                "term {}",
                entry.term
            );
        }
    }

    #[test]
    fn roundtrips_through_every_postings_mode() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("part0.idx");
        let original = sample_index(3);
        write_subindex(&original, &path).unwrap();
        for mode in [
            PostingsMode::InMemory,
            PostingsMode::OnDisk { cache_bytes: 0 },
            PostingsMode::OnDisk { cache_bytes: 1 << 20 },
        ] {
            let loaded = read_subindex(&path, mode).unwrap();
            assert_same_answers(&original, &loaded);
        }
    }

    #[test]
    fn empty_index_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.idx");
        let (original, _) =
            build_subindex(BufReader::new(&b""[..]), 0, 1).unwrap();
        write_subindex(&original, &path).unwrap();
        let loaded = read_subindex(&path, PostingsMode::InMemory).unwrap();
        assert_eq!(loaded.doc_count, 0);
        assert_eq!(loaded.term_count(), 0);
    }

    #[test]
    fn rejects_wrong_magic_version_and_term_count() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx");
        write_subindex(&sample_index(0), &path).unwrap();
        let good = std::fs::read(&path).unwrap();

        let mut bad = good.clone();
        bad[0] ^= 0xff;
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_subindex(&path, PostingsMode::InMemory),
            Err(FormatError::BadMagic)
        ));

        let mut bad = good.clone();
        bad[4..8].copy_from_slice(&9u32.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_subindex(&path, PostingsMode::InMemory),
            Err(FormatError::BadVersion(9))
        ));

        let mut bad = good.clone();
        bad[18..26].copy_from_slice(&999u64.to_le_bytes());
        std::fs::write(&path, &bad).unwrap();
        assert!(matches!(
            read_subindex(&path, PostingsMode::InMemory),
            Err(FormatError::TermCountMismatch { header: 999, .. })
        ));
    }

    #[test]
    fn truncation_anywhere_is_an_error_not_a_panic() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx");
        write_subindex(&sample_index(0), &path).unwrap();
        let good = std::fs::read(&path).unwrap();
        for cut in (0..good.len()).step_by(3) {
            std::fs::write(&path, &good[..cut]).unwrap();
            assert!(
                read_subindex(&path, PostingsMode::InMemory).is_err(),
                "cut at {cut}"
            );
        }
    }

    #[test]
    fn cache_never_exceeds_its_budget() {
        let mut cache = PostingsCache::new(10);
        cache.insert(0, &[1; 4]);
        cache.insert(10, &[2; 4]);
        assert_eq!(cache.used(), 8);
        // Third entry evicts the oldest to stay within budget.
        cache.insert(20, &[3; 4]);
        assert_eq!(cache.used(), 8);
        assert!(cache.get(0).is_none());
        assert_eq!(cache.get(10), Some(vec![2; 4]));
        // Oversized entries are passed through, not cached.
        cache.insert(30, &[4; 11]);
        assert!(cache.get(30).is_none());
        assert_eq!(cache.used(), 8);
    }

    #[test]
    fn disk_reads_hit_the_cache_and_stay_in_bounds() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("idx");
        let original = sample_index(0);
        write_subindex(&original, &path).unwrap();
        let loaded =
            read_subindex(&path, PostingsMode::OnDisk { cache_bytes: 64 }).unwrap();
        // Repeated decodes of the same term exercise the cache path.
        for _ in 0..3 {
            assert_eq!(
                loaded.posting_list("pack").unwrap(),
                original.posting_list("pack").unwrap()
            );
        }
        // Out-of-bounds range is rejected by the source itself.
        assert!(loaded.postings.read(0, loaded.postings.len() + 1).is_err());
    }
}
