//! Framed searcher/broker protocol.
//!
//! Every frame is a little-endian `u32` length (covering the type byte and
//! payload), one type byte, then the payload; a bare PING is the five
//! bytes `01 00 00 00 03`. Frames are capped at 1 MiB and decoding rejects
//! unknown types, reserved flag bits and trailing bytes, so a corrupt or
//! hostile peer can't take a server down.

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::docid::DocId;
use crate::eval::ScoredHit;

pub const MAX_FRAME_LEN: u32 = 1 << 20;

const TYPE_QUERY: u8 = 0x01;
const TYPE_HITS: u8 = 0x02;
const TYPE_PING: u8 = 0x03;
const TYPE_PONG: u8 = 0x04;
const TYPE_SHUTDOWN: u8 = 0x05;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("connection i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("frame length {0} exceeds the 1 MiB cap")]
    FrameTooLarge(u32),
    #[error("frame has no type byte")]
    EmptyFrame,
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("message payload is truncated")]
    Truncated,
    #[error("message has {0} trailing bytes")]
    TrailingBytes(usize),
    #[error("query text is not valid UTF-8")]
    BadText,
    #[error("query text is longer than 65535 bytes")]
    TextTooLong,
    #[error("a reply cannot carry more than 65535 hits")]
    TooManyHits,
    #[error("reserved flag bits are set: {0:#04x}")]
    BadFlags(u8),
    #[error("stream ended inside a frame")]
    UnexpectedEof,
}

impl ProtocolError {
    /// True when the underlying read hit its timeout rather than failing.
    pub fn is_timeout(&self) -> bool {
        matches!(
            self,
            Self::Io(e) if matches!(e.kind(), io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut)
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    Query {
        query_id: u64,
        limit: u16,
        text: String,
    },
    Hits {
        query_id: u64,
        error: bool,
        hits: Vec<ScoredHit>,
    },
    Ping,
    Pong,
    Shutdown,
}

/// Serializes a message as a complete frame.
pub fn encode_message(msg: &Message) -> Result<Vec<u8>, ProtocolError> {
    let mut body = Vec::new();
    match msg {
        Message::Query {
            query_id,
            limit,
            text,
        } => {
            let text_len =
                u16::try_from(text.len()).map_err(|_| ProtocolError::TextTooLong)?;
            body.push(TYPE_QUERY);
            body.extend_from_slice(&query_id.to_le_bytes());
            body.extend_from_slice(&limit.to_le_bytes());
            body.extend_from_slice(&text_len.to_le_bytes());
            body.extend_from_slice(text.as_bytes());
        }
        Message::Hits {
            query_id,
            error,
            hits,
        } => {
            let count =
                u16::try_from(hits.len()).map_err(|_| ProtocolError::TooManyHits)?;
            body.push(TYPE_HITS);
            body.extend_from_slice(&query_id.to_le_bytes());
            body.push(u8::from(*error));
            body.extend_from_slice(&count.to_le_bytes());
            for hit in hits {
                body.extend_from_slice(&hit.doc.to_u64().to_le_bytes());
                body.extend_from_slice(&hit.score.to_le_bytes());
            }
        }
        Message::Ping => body.push(TYPE_PING),
        Message::Pong => body.push(TYPE_PONG),
        Message::Shutdown => body.push(TYPE_SHUTDOWN),
    }
    let len = u32::try_from(body.len()).unwrap_or(u32::MAX);
    if len > MAX_FRAME_LEN {
        return Err(ProtocolError::FrameTooLarge(len));
    }
    let mut frame = Vec::with_capacity(4 + body.len());
    frame.extend_from_slice(&len.to_le_bytes());
    frame.extend_from_slice(&body);
    Ok(frame)
}

/// Parses one frame body (type byte plus payload).
pub fn decode_frame(body: &[u8]) -> Result<Message, ProtocolError> {
    let (&kind, payload) = body.split_first().ok_or(ProtocolError::EmptyFrame)?;
    let mut cur = Cursor {
        bytes: payload,
        pos: 0,
    };
    let msg = match kind {
        TYPE_QUERY => {
            let query_id = cur.u64()?;
            let limit = cur.u16()?;
            let text_len = cur.u16()?;
            let text = std::str::from_utf8(cur.take(text_len as usize)?)
                .map_err(|_| ProtocolError::BadText)?
                .to_string();
            Message::Query {
                query_id,
                limit,
                text,
            }
        }
        TYPE_HITS => {
            let query_id = cur.u64()?;
            let flags = cur.u8()?;
            if flags & !1 != 0 {
                return Err(ProtocolError::BadFlags(flags));
            }
            let count = cur.u16()?;
            let mut hits = Vec::with_capacity(count as usize);
            for _ in 0..count {
                let doc = DocId::from_u64(cur.u64()?);
                let score = f32::from_le_bytes(cur.take(4)?.try_into().unwrap());
                hits.push(ScoredHit { doc, score });
            }
            Message::Hits {
                query_id,
                error: flags & 1 != 0,
                hits,
            }
        }
        TYPE_PING => Message::Ping,
        TYPE_PONG => Message::Pong,
        TYPE_SHUTDOWN => Message::Shutdown,
        other => return Err(ProtocolError::UnknownType(other)),
    };
    let rest = payload.len() - cur.pos;
    if rest != 0 {
        return Err(ProtocolError::TrailingBytes(rest));
    }
    Ok(msg)
}

/// Writes one framed message and flushes it.
pub fn write_message<W: Write>(w: &mut W, msg: &Message) -> Result<(), ProtocolError> {
    w.write_all(&encode_message(msg)?)?;
    w.flush()?;
    Ok(())
}

/// Incremental frame reader that survives read timeouts.
///
/// A timed-out `read` returns the i/o error but keeps any partial frame
/// buffered, so the next call resumes exactly where the stream left off
/// instead of desynchronizing.
#[derive(Debug)]
pub struct FrameReader<R: Read> {
    inner: R,
    buf: Vec<u8>,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self {
            inner,
            buf: Vec::new(),
        }
    }

    pub fn get_ref(&self) -> &R {
        &self.inner
    }

    /// Reads the next message; `Ok(None)` is a clean end of stream
    /// (between frames only).
    pub fn read_message(&mut self) -> Result<Option<Message>, ProtocolError> {
        loop {
            if let Some(msg) = self.extract()? {
                return Ok(Some(msg));
            }
            let mut chunk = [0u8; 4096];
            match self.inner.read(&mut chunk) {
                Ok(0) => {
                    return if self.buf.is_empty() {
                        Ok(None)
                    } else {
                        Err(ProtocolError::UnexpectedEof)
                    };
                }
                Ok(n) => self.buf.extend_from_slice(&chunk[..n]),
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e.into()),
            }
        }
    }

    fn extract(&mut self) -> Result<Option<Message>, ProtocolError> {
        if self.buf.len() < 4 {
            return Ok(None);
        }
        let len = u32::from_le_bytes(self.buf[..4].try_into().unwrap());
        if len == 0 {
            return Err(ProtocolError::EmptyFrame);
        }
        if len > MAX_FRAME_LEN {
            return Err(ProtocolError::FrameTooLarge(len));
        }
        let total = 4 + len as usize;
        if self.buf.len() < total {
            return Ok(None);
        }
        let msg = decode_frame(&self.buf[4..total])?;
        self.buf.drain(..total);
        Ok(Some(msg))
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ProtocolError> {
        let end = self.pos.checked_add(n).ok_or(ProtocolError::Truncated)?;
        let slice = self
            .bytes
            .get(self.pos..end)
            .ok_or(ProtocolError::Truncated)?;
        self.pos = end;
        Ok(slice)
    }

    fn u8(&mut self) -> Result<u8, ProtocolError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, ProtocolError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, ProtocolError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::VecDeque;

    fn sample_messages() -> Vec<Message> {
        vec![
            Message::Ping,
            Message::Pong,
            Message::Shutdown,
            Message::Query {
                query_id: 42,
                limit: 10,
                text: "alpha AND beta".into(),
            },
            Message::Query {
                query_id: 0,
                limit: 0,
                text: String::new(),
            },
            Message::Hits {
                query_id: 42,
                error: false,
                hits: vec![
                    ScoredHit {
                        doc: DocId::new(3, 17),
                        score: 2.5,
                    },
                    ScoredHit {
                        doc: DocId::new(0, 0),
                        score: 1.0,
                    },
                ],
            },
            Message::Hits {
                query_id: 7,
                error: true,
                hits: vec![],
            },
        ]
    }

    #[test]
    fn ping_frame_is_exactly_five_bytes() {
        assert_eq!(
            encode_message(&Message::Ping).unwrap(),
            vec![0x01, 0x00, 0x00, 0x00, 0x03]
        );
    }

    #[test]
    fn all_message_kinds_roundtrip_through_a_stream() {
        let mut stream = Vec::new();
        for msg in sample_messages() {
            write_message(&mut stream, &msg).unwrap();
        }
        let mut reader = FrameReader::new(stream.as_slice());
        for expected in sample_messages() {
            assert_eq!(reader.read_message().unwrap(), Some(expected));
        }
        assert_eq!(reader.read_message().unwrap(), None);
    }

    #[test]
    fn rejects_malformed_frames() {
        // Trailing byte inside the payload.
        let mut frame = encode_message(&Message::Query {
            query_id: 1,
            limit: 5,
            text: "x".into(),
        })
        .unwrap();
        frame.push(0xaa);
        let len = (frame.len() - 4) as u32;
        frame[..4].copy_from_slice(&len.to_le_bytes());
        assert!(matches!(
            decode_frame(&frame[4..]),
            Err(ProtocolError::TrailingBytes(1))
        ));

        assert!(matches!(
            decode_frame(&[0x77]),
            Err(ProtocolError::UnknownType(0x77))
        ));
        assert!(matches!(decode_frame(&[]), Err(ProtocolError::EmptyFrame)));
        // Reserved HITS flag bits.
        let mut hits = encode_message(&Message::Hits {
            query_id: 1,
            error: false,
            hits: vec![],
        })
        .unwrap();
        hits[4 + 1 + 8] = 0x02;
        assert!(matches!(
            decode_frame(&hits[4..]),
            Err(ProtocolError::BadFlags(0x02))
        ));
    }

    #[test]
    fn length_cap_and_eof_handling() {
        let mut oversize = Vec::new();
        oversize.extend_from_slice(&(MAX_FRAME_LEN + 1).to_le_bytes());
        oversize.push(TYPE_PING);
        let mut reader = FrameReader::new(oversize.as_slice());
        assert!(matches!(
            reader.read_message(),
            Err(ProtocolError::FrameTooLarge(_))
        ));

        let zero = 0u32.to_le_bytes();
        let mut reader = FrameReader::new(&zero[..]);
        assert!(matches!(
            reader.read_message(),
            Err(ProtocolError::EmptyFrame)
        ));

        // EOF in the middle of a frame is never silent.
        let ping = encode_message(&Message::Ping).unwrap();
        for cut in 1..ping.len() {
            let mut reader = FrameReader::new(&ping[..cut]);
            assert!(
                matches!(reader.read_message(), Err(ProtocolError::UnexpectedEof)),
                "cut at {cut}"
            );
        }
    }

    /// Read source that replays scripted chunks and errors.
    struct Scripted {
        steps: VecDeque<Result<Vec<u8>, io::ErrorKind>>,
    }

    impl Read for Scripted {
        fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
            match self.steps.pop_front() {
                Some(Ok(bytes)) => {
                    buf[..bytes.len()].copy_from_slice(&bytes);
                    Ok(bytes.len())
                }
                Some(Err(kind)) => Err(kind.into()),
                None => Ok(0),
            }
        }
    }

    #[test]
    fn reader_resumes_after_a_timeout_mid_frame() {
        let frame = encode_message(&Message::Query {
            query_id: 9,
            limit: 3,
            text: "resume".into(),
        })
        .unwrap();
        let (head, tail) = frame.split_at(6);
        let mut reader = FrameReader::new(Scripted {
            steps: VecDeque::from([
                Ok(head.to_vec()),
                Err(io::ErrorKind::WouldBlock),
                Ok(tail.to_vec()),
            ]),
        });
        let err = reader.read_message().unwrap_err();
        assert!(err.is_timeout());
        assert_eq!(
            reader.read_message().unwrap(),
            Some(Message::Query {
                query_id: 9,
                limit: 3,
                text: "resume".into(),
            })
        );
    }

    #[test]
    fn byte_at_a_time_delivery_still_decodes() {
        let frame = encode_message(&Message::Pong).unwrap();
        let steps = frame.iter().map(|&b| Ok(vec![b])).collect();
        let mut reader = FrameReader::new(Scripted { steps });
        assert_eq!(reader.read_message().unwrap(), Some(Message::Pong));
    }

    proptest! {
        #[test]
        fn decoding_arbitrary_bytes_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..200)) {
            let _ = decode_frame(&bytes);
        }

        #[test]
        fn queries_and_hits_roundtrip(
            query_id in any::<u64>(),
            limit in any::<u16>(),
            text in "[a-z ()]{0,40}",
            hits in proptest::collection::vec((any::<u16>(), 0u64..1 << 48, 1.0f32..100.0), 0..20),
        ) {
            let q = Message::Query { query_id, limit, text };
            let frame = encode_message(&q).unwrap();
            prop_assert_eq!(decode_frame(&frame[4..]).unwrap(), q);

            let h = Message::Hits {
                query_id,
                error: false,
                hits: hits
                    .into_iter()
                    .map(|(p, l, score)| ScoredHit { doc: DocId::new(p, l), score })
                    .collect(),
            };
            let frame = encode_message(&h).unwrap();
            prop_assert_eq!(decode_frame(&frame[4..]).unwrap(), h);
        }
    }
}
