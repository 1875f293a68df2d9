//! Line-oriented corpus files.
//!
//! One document per line: `url TAB body`, where tabs, newlines and
//! backslashes inside the body are escaped as `\t`, `\n` and `\\`.
//! Malformed records are reported per line so callers can skip and count
//! them rather than abort.

use std::io::{self, BufRead, Write};

use thiserror::Error;

/// Hard cap so a url always fits the index doc table's u16 length field.
pub const MAX_URL_BYTES: usize = u16::MAX as usize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DocumentRecord {
    pub url: String,
    pub body: String,
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("malformed record at line {line}: {reason}")]
    Malformed { line: u64, reason: MalformedReason },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MalformedReason {
    MissingSeparator,
    EmptyUrl,
    UrlTooLong,
    InvalidUtf8,
    BadEscape,
}

impl std::fmt::Display for MalformedReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::MissingSeparator => "missing tab separator",
            Self::EmptyUrl => "empty url",
            Self::UrlTooLong => "url longer than 65535 bytes",
            Self::InvalidUtf8 => "record is not valid UTF-8",
            Self::BadEscape => "unknown escape sequence in body",
        };
        f.write_str(s)
    }
}

pub fn escape_body(body: &str) -> String {
    let mut out = String::with_capacity(body.len());
    for ch in body.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            _ => out.push(ch),
        }
    }
    out
}

pub fn unescape_body(escaped: &str) -> Option<String> {
    let mut out = String::with_capacity(escaped.len());
    let mut chars = escaped.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            _ => return None,
        }
    }
    Some(out)
}

/// Writes one record as a corpus line, validating the url field.
pub fn write_record<W: Write>(w: &mut W, record: &DocumentRecord) -> Result<(), CorpusError> {
    if record.url.is_empty() {
        return Err(CorpusError::Malformed {
            line: 0,
            reason: MalformedReason::EmptyUrl,
        });
    }
    if record.url.len() > MAX_URL_BYTES {
        return Err(CorpusError::Malformed {
            line: 0,
            reason: MalformedReason::UrlTooLong,
        });
    }
    if record.url.contains(['\t', '\n']) {
        return Err(CorpusError::Malformed {
            line: 0,
            reason: MalformedReason::MissingSeparator,
        });
    }
    writeln!(w, "{}\t{}", record.url, escape_body(&record.body))?;
    Ok(())
}

/// Iterator over parsed corpus records; malformed lines yield errors that
/// identify the 1-based line number.
pub struct CorpusReader<R: BufRead> {
    inner: R,
    line: u64,
    buf: Vec<u8>,
}

impl<R: BufRead> CorpusReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            line: 0,
            buf: Vec::new(),
        }
    }

    fn parse_line(&self) -> Result<DocumentRecord, CorpusError> {
        let malformed = |reason| CorpusError::Malformed {
            line: self.line,
            reason,
        };
        let mut bytes = self.buf.as_slice();
        if bytes.last() == Some(&b'\n') {
            bytes = &bytes[..bytes.len() - 1];
        }
        let text = std::str::from_utf8(bytes)
            .map_err(|_| malformed(MalformedReason::InvalidUtf8))?;
        let (url, body) = text
            .split_once('\t')
            .ok_or_else(|| malformed(MalformedReason::MissingSeparator))?;
        if url.is_empty() {
            return Err(malformed(MalformedReason::EmptyUrl));
        }
        if url.len() > MAX_URL_BYTES {
            return Err(malformed(MalformedReason::UrlTooLong));
        }
        let body = unescape_body(body).ok_or_else(|| malformed(MalformedReason::BadEscape))?;
        Ok(DocumentRecord {
            url: url.to_string(),
            body,
        })
    }
}

impl<R: BufRead> Iterator for CorpusReader<R> {
    type Item = Result<DocumentRecord, CorpusError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.buf.clear();
        match self.inner.read_until(b'\n', &mut self.buf) {
            Ok(0) => None,
            Ok(_) => {
                self.line += 1;
                Some(self.parse_line())
            }
            Err(e) => Some(Err(e.into())),
        }
    }
}

/// Iterator over raw corpus lines (trailing newline included when present),
/// for operations that move records around without interpreting them.
pub struct RawLines<R: BufRead> {
    inner: R,
}

impl<R: BufRead> RawLines<R> {
    pub fn new(inner: R) -> Self {
        Self { inner }
    }
}

impl<R: BufRead> Iterator for RawLines<R> {
    type Item = io::Result<Vec<u8>>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = Vec::new();
        match self.inner.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => Some(Ok(buf)),
            Err(e) => Some(Err(e)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::BufReader;

    fn read_all(input: &[u8]) -> Vec<Result<DocumentRecord, CorpusError>> {
        CorpusReader::new(BufReader::new(input)).collect()
    }

    #[test]
    fn roundtrips_records_with_control_characters() {
        let records = vec![
            DocumentRecord {
                url: "http://a".into(),
                body: "plain body".into(),
            },
            DocumentRecord {
                url: "http://b".into(),
                body: "tab\there\nnewline \\ backslash".into(),
            },
            DocumentRecord {
                url: "http://c".into(),
                body: String::new(),
            },
        ];
        let mut buf = Vec::new();
        for r in &records {
            write_record(&mut buf, r).unwrap();
        }
        let parsed: Vec<DocumentRecord> =
            read_all(&buf).into_iter().map(|r| r.unwrap()).collect();
        assert_eq!(parsed, records);
    }

    #[test]
    fn reports_malformed_lines_with_numbers() {
        let input = b"http://ok\tfine\nno separator here\n\tempty url\nhttp://bad\tdangling\\\n";
        let results = read_all(input);
        assert!(results[0].is_ok());
        match &results[1] {
            Err(CorpusError::Malformed { line: 2, reason }) => {
                assert_eq!(*reason, MalformedReason::MissingSeparator)
            }
            other => panic!("unexpected: {other:?}"),
        }
        match &results[2] {
            Err(CorpusError::Malformed { line: 3, reason }) => {
                assert_eq!(*reason, MalformedReason::EmptyUrl)
            }
            other => panic!("unexpected: {other:?}"),
        }
        match &results[3] {
            Err(CorpusError::Malformed { line: 4, reason }) => {
                assert_eq!(*reason, MalformedReason::BadEscape)
            }
            other => panic!("unexpected: {other:?}"),
        }
    }

    #[test]
    fn last_line_without_newline_is_a_record() {
        let results = read_all(b"http://a\tbody");
        assert_eq!(results.len(), 1);
        assert_eq!(results[0].as_ref().unwrap().body, "body");
    }

    #[test]
    fn raw_lines_preserve_bytes() {
        let input: &[u8] = b"one\ntwo\nthree";
        let lines: Vec<Vec<u8>> = RawLines::new(BufReader::new(input))
            .map(|l| l.unwrap())
            .collect();
        let rejoined: Vec<u8> = lines.concat();
        assert_eq!(rejoined, input);
    }

    #[test]
    fn write_rejects_invalid_urls() {
        let mut buf = Vec::new();
        let bad = DocumentRecord {
            url: "has\ttab".into(),
            body: String::new(),
        };
        assert!(write_record(&mut buf, &bad).is_err());
        let empty = DocumentRecord {
            url: String::new(),
            body: String::new(),
        };
        assert!(write_record(&mut buf, &empty).is_err());
    }
}
