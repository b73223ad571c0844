//! HTTP/JSON transport for the four model backends: a blocking client that
//! implements the backend traits, and a stub server that exposes any
//! in-process [`Backends`](hopcf::backends::Backends) over the same protocol.

mod client;
mod server;
pub mod wire;

pub use client::{remote_backends, RemoteClient, RemoteEmbedder, RemoteRecognizer, RemoteScorer, RemoteVerifier, RetryPolicy};
pub use server::StubServer;
