use std::io;
use std::net::{SocketAddr, TcpListener, ToSocketAddrs};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::de::DeserializeOwned;
use serde::Serialize;
use socket2::{Domain, Socket, Type};
use tiny_http::{Header, Method, Request, Response, Server};

use hopcf::backends::{verify, Backends};
use hopcf::{BackendError, EvidenceItem};

use crate::wire::*;

/// Serves in-process backends over the wire protocol on a loopback port.
/// Stops when dropped.
pub struct StubServer {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl StubServer {
    /// Binds `addr` (use port 0 for an ephemeral port) with `threads` handlers.
    pub fn start(backends: Backends, addr: &str, threads: usize) -> io::Result<Self> {
        let server = Server::from_listener(nodelay_listener(addr)?, None).map_err(io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("server is not bound to an IP address"))?;
        let server = Arc::new(server);
        let backends = Arc::new(backends);
        let workers = (0..threads.max(1))
            .map(|_| {
                let server = Arc::clone(&server);
                let backends = Arc::clone(&backends);
                thread::spawn(move || {
                    while let Ok(req) = server.recv() {
                        handle(&backends, req);
                    }
                })
            })
            .collect();
        Ok(Self { server, addr, workers })
    }

    pub fn local(backends: Backends) -> io::Result<Self> {
        Self::start(backends, "127.0.0.1:0", 4)
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server is stopped from elsewhere.
    pub fn join(mut self) {
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
    }
}

/// Accepted sockets inherit TCP_NODELAY from the listener. Without it the
/// response body waits on the client's delayed ACK of the header segment.
fn nodelay_listener(addr: &str) -> io::Result<TcpListener> {
    let addr = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| io::Error::other(format!("{addr} resolves to no address")))?;
    let socket = Socket::new(Domain::for_address(addr), Type::STREAM, None)?;
    socket.set_reuse_address(true)?;
    socket.set_tcp_nodelay(true)?;
    socket.bind(&addr.into())?;
    socket.listen(128)?;
    Ok(socket.into())
}

fn json_response<T: Serialize>(status: u16, body: &T) -> Response<io::Cursor<Vec<u8>>> {
    let bytes = serde_json::to_vec(body).expect("wire types serialize");
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    Response::from_data(bytes).with_status_code(status).with_header(header)
}

fn error_response(status: u16, msg: impl Into<String>) -> Response<io::Cursor<Vec<u8>>> {
    json_response(status, &ErrorBody { error: msg.into() })
}

fn parse<T: DeserializeOwned>(req: &mut Request) -> Result<T, String> {
    let mut body = String::new();
    req.as_reader()
        .read_to_string(&mut body)
        .map_err(|e| e.to_string())?;
    serde_json::from_str(&body).map_err(|e| e.to_string())
}

fn backend_status(e: &BackendError) -> u16 {
    match e {
        BackendError::UnknownToken(_) | BackendError::InvalidInput(_) => 400,
        BackendError::Unavailable { .. } | BackendError::Protocol(_) => 502,
    }
}

fn dispatch(backends: &Backends, path: &str, req: &mut Request) -> Response<io::Cursor<Vec<u8>>> {
    macro_rules! answer {
        ($ty:ty, |$r:ident| $body:expr) => {
            match parse::<$ty>(req) {
                Err(e) => error_response(400, e),
                Ok($r) => match $body {
                    Ok(resp) => json_response(200, &resp),
                    Err(e) => error_response(backend_status(&e), e.to_string()),
                },
            }
        };
    }
    match path {
        SCORE => answer!(ScoreRequest, |r| backends
            .scorer
            .score_next_tokens(&r.context, &r.prefix)
            .map(|log_probs| ScoreResponse { log_probs })),
        EMBED => answer!(EmbedRequest, |r| backends.embedder.embed(&r.text).map(|vectors| EmbedResponse {
            vectors,
            dimension: backends.embedder.dimension(),
        })),
        NER => answer!(NerRequest, |r| backends.ner.recognize(&r.text).map(|m| NerResponse {
            entities: m.into_iter().map(WireEntity::from).collect(),
        })),
        VERIFY => answer!(VerifyRequest, |r| {
            let evidence: Vec<EvidenceItem> = r.evidence.iter().map(|t| EvidenceItem::new("", t.as_str())).collect();
            verify(backends.verifier.as_ref(), &r.claim, &evidence).map(|v| VerifyResponse {
                label: v.label,
                scores: v.scores,
            })
        }),
        _ => error_response(404, format!("no endpoint {path}")),
    }
}

fn handle(backends: &Backends, mut req: Request) {
    let resp = if *req.method() != Method::Post {
        error_response(405, "only POST is supported")
    } else {
        let path = req.url().split('?').next().unwrap_or_default().to_string();
        dispatch(backends, &path, &mut req)
    };
    if let Err(e) = req.respond(resp) {
        log::warn!("stub server: failed to respond: {e}");
    }
}
