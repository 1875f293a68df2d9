//! Blocking client for brokers and searchers.

use std::net::{TcpStream, ToSocketAddrs};

use thiserror::Error;

use crate::eval::ScoredHit;
use crate::wire::{write_message, FrameReader, Message, ProtocolError};

#[derive(Debug, Error)]
pub enum ClientError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("connection i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("server closed the connection")]
    ServerClosed,
    #[error("server sent a reply for an unknown query")]
    UnexpectedReply,
}

/// One round-trip's outcome: either ranked hits or a server-flagged error.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryOutcome {
    pub error: bool,
    pub hits: Vec<ScoredHit>,
}

pub struct QueryClient {
    writer: TcpStream,
    reader: FrameReader<TcpStream>,
    next_id: u64,
}

impl QueryClient {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self, ClientError> {
        let writer = TcpStream::connect(addr)?;
        let reader = FrameReader::new(writer.try_clone()?);
        Ok(Self {
            writer,
            reader,
            next_id: 1,
        })
    }

    /// Sends one query and blocks for its reply. A `limit` of 0 asks the
    /// server to apply its default.
    pub fn search(&mut self, text: &str, limit: u16) -> Result<QueryOutcome, ClientError> {
        let query_id = self.next_id;
        self.next_id += 1;
        write_message(
            &mut self.writer,
            &Message::Query {
                query_id,
                limit,
                text: text.to_string(),
            },
        )?;
        match self.reader.read_message()? {
            Some(Message::Hits {
                query_id: got,
                error,
                hits,
            }) if got == query_id => Ok(QueryOutcome { error, hits }),
            Some(_) => Err(ClientError::UnexpectedReply),
            None => Err(ClientError::ServerClosed),
        }
    }

    pub fn ping(&mut self) -> Result<(), ClientError> {
        write_message(&mut self.writer, &Message::Ping)?;
        match self.reader.read_message()? {
            Some(Message::Pong) => Ok(()),
            Some(_) => Err(ClientError::UnexpectedReply),
            None => Err(ClientError::ServerClosed),
        }
    }

    /// Asks the server to drain and stop; there is no reply.
    pub fn send_shutdown(&mut self) -> Result<(), ClientError> {
        write_message(&mut self.writer, &Message::Shutdown)?;
        Ok(())
    }
}
