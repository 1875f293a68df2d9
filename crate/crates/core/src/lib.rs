//! mose — a document-partitioned parallel search engine.
//!
//! The engine answers ranked boolean queries over a corpus that has been
//! split into `p` disjoint partitions. Each partition is indexed into a
//! compressed inverted index (front-coded lexicon, Golomb-coded postings)
//! and served by a Local Searcher. Query Brokers pull queries from a shared
//! queue, broadcast each one to the `p` searchers of their Query Analyzer,
//! and merge the partial top-`l` lists into the global result.
//!
//! Crate layout:
//!
//! - [`codec`]: bit-level Golomb and gamma coders used by the postings format
//! - [`corpus`]: the line-oriented corpus file format and document records
//! - [`lexicon`]: blocked front-coded term dictionary with binary search
//! - [`index`]: parallel sort-based index construction and the [`index::SubIndex`]
//! - [`format`]: the on-disk index layout
//! - [`query`]: boolean query parsing into [`query::QueryAst`]
//! - [`eval`]: bottom-up query evaluation and top-`l` selection
//! - [`wire`]: the framed binary protocol spoken between clients, brokers and searchers
//! - [`searcher`]: the Local Searcher TCP server
//! - [`broker`]: Query Broker workers and the Query Analyzer front end
//! - [`cluster`]: topology configuration, corpus partitioning and launch
//! - [`client`]: a small blocking client for submitting queries
//! - [`bench`]: query-log replay harness and synthetic corpus generation

pub mod bench;
pub mod broker;
pub mod client;
pub mod cluster;
pub mod codec;
pub mod corpus;
pub mod docid;
pub mod eval;
pub mod format;
pub mod index;
pub mod lexicon;
pub mod query;
pub mod searcher;
pub mod wire;

pub use docid::DocId;
