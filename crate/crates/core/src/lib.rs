//! A document-partitioned keyword search cluster and a response-time model
//! for scaling it out.
//!
//! Slaves each hold one rank-ordered segment index ([`index`], persisted by
//! [`storage`]) and answer top-k queries ([`qlang`]) over a small framed TCP
//! protocol ([`proto`], [`server`], [`slave`]). A master fans every query out
//! and merges the ranked replies with a loser tree ([`master`]).
//! [`model`] turns measured constants and slave sojourn samples into
//! projected response times for larger clusters, and [`bench`] produces both
//! by calibrating and load-testing a running cluster ([`cluster`] starts one
//! in-process).
//!
//! Examples, one per capability:
//!
//! | example | shows |
//! |---|---|
//! | `build_and_search` | in-memory index, single, multi and limited search |
//! | `persist_and_buffer` | index files and the page cache |
//! | `query_language` | parsing and printing queries |
//! | `scatter_gather` | a five-slave loopback cluster and its timing breakdown |
//! | `loser_tree_merge` | merge cost against tree height |
//! | `queueing_model` | per-queue sojourn times and saturation |
//! | `slave_max_projection` | projecting the slowest slave from samples |
//! | `poisson_bench` | calibrate, load, project, compare |
//!
//! The `odys` binary exposes the same workflows as subcommands ([`cli`]).

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod cli;
pub mod cluster;
pub mod corpus;
pub mod index;
pub mod kv;
pub mod master;
pub mod model;
pub mod proto;
pub mod qlang;
pub mod server;
pub mod slave;
pub mod storage;
