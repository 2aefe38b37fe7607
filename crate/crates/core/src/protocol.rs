//! Line-delimited JSON scoring protocol for out-of-process scorers.
//!
//! Each request is one JSON object on one line and gets exactly one
//! response line carrying the same `id`:
//!
//! ```text
//! {"id":1,"op":"score_relation","template":["[CLS]","[X3]","were","sensitive","to","[X1]"]}
//! {"id":1,"p":0.93}
//! {"id":2,"op":"score_pair","x":{"tokens":[...],"span":[0,1]},"y":{"tokens":[...],"span":[3,5]}}
//! {"id":2,"p":0.12}
//! {"id":3,"error":"unknown op"}
//! ```
//!
//! A pair request carries each mention's sentence tokens and half-open
//! token span. Responses on one connection may arrive in any order.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::corpus::{Document, Mention};
use crate::error::{Error, Result};
use crate::relation::{RelationScorer, ScorerKind, Template};
use crate::resolution::PairScoring;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MentionContext {
    pub tokens: Vec<String>,
    pub span: (usize, usize),
}

impl MentionContext {
    pub fn of(doc: &Document, m: &Mention) -> Self {
        MentionContext {
            tokens: doc.sentence(m.sentence).tokens.clone(),
            span: m.token_span,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Op {
    ScoreRelation { template: Vec<String> },
    ScorePair { x: MentionContext, y: MentionContext },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub id: u64,
    #[serde(flatten)]
    pub op: Op,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub id: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClientConfig {
    /// Connections kept open; also the bound on requests in flight.
    pub max_connections: usize,
    /// Tries per request, the first included.
    pub attempts: u32,
    pub timeout_ms: u64,
    pub backoff_ms: u64,
}

impl Default for ClientConfig {
    fn default() -> Self {
        ClientConfig {
            max_connections: 4,
            attempts: 3,
            timeout_ms: 30_000,
            backoff_ms: 50,
        }
    }
}

struct Conn {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Conn {
    fn open(addr: &str, timeout: Duration) -> std::io::Result<Conn> {
        let sock = addr
            .to_socket_addrs()?
            .next()
            .ok_or_else(|| std::io::Error::new(std::io::ErrorKind::NotFound, "address resolves to nothing"))?;
        let stream = TcpStream::connect_timeout(&sock, timeout)?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        Ok(Conn {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
        })
    }

    /// Sends all requests, then reads until every id is answered.
    fn exchange(&mut self, reqs: &[Request]) -> std::io::Result<HashMap<u64, Response>> {
        let mut buf = Vec::new();
        for r in reqs {
            serde_json::to_writer(&mut buf, r)?;
            buf.push(b'\n');
        }
        self.writer.write_all(&buf)?;
        self.writer.flush()?;
        let mut out = HashMap::with_capacity(reqs.len());
        let mut line = String::new();
        while out.len() < reqs.len() {
            line.clear();
            if self.reader.read_line(&mut line)? == 0 {
                return Err(std::io::Error::new(std::io::ErrorKind::UnexpectedEof, "server closed the connection"));
            }
            let resp: Response = serde_json::from_str(line.trim_end())
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            out.insert(resp.id, resp);
        }
        Ok(out)
    }
}

/// Pooled, retrying client. Safe to share across threads.
pub struct ProtocolClient {
    addr: String,
    cfg: ClientConfig,
    idle: Mutex<(Vec<Conn>, usize)>,
    freed: Condvar,
    next_id: AtomicU64,
}

impl ProtocolClient {
    pub fn new(addr: impl Into<String>, cfg: ClientConfig) -> Result<Self> {
        if cfg.max_connections == 0 || cfg.attempts == 0 {
            return Err(Error::Config("scoring client needs at least one connection and one attempt".into()));
        }
        Ok(ProtocolClient {
            addr: addr.into(),
            cfg,
            idle: Mutex::new((Vec::new(), 0)),
            freed: Condvar::new(),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn addr(&self) -> &str {
        &self.addr
    }

    fn checkout(&self) -> std::io::Result<Conn> {
        let mut g = self.idle.lock().unwrap();
        loop {
            if let Some(c) = g.0.pop() {
                return Ok(c);
            }
            if g.1 < self.cfg.max_connections {
                g.1 += 1;
                drop(g);
                let c = Conn::open(&self.addr, Duration::from_millis(self.cfg.timeout_ms));
                if c.is_err() {
                    self.idle.lock().unwrap().1 -= 1;
                    self.freed.notify_one();
                }
                return c;
            }
            g = self.freed.wait(g).unwrap();
        }
    }

    fn checkin(&self, conn: Option<Conn>) {
        let mut g = self.idle.lock().unwrap();
        match conn {
            Some(c) => g.0.push(c),
            None => g.1 -= 1,
        }
        drop(g);
        self.freed.notify_one();
    }

    /// Scores a batch of operations; results follow input order.
    pub fn call(&self, ops: Vec<Op>) -> Result<Vec<f64>> {
        if ops.is_empty() {
            return Ok(Vec::new());
        }
        let first = self.next_id.fetch_add(ops.len() as u64, Ordering::Relaxed);
        let reqs: Vec<Request> = ops
            .into_iter()
            .enumerate()
            .map(|(i, op)| Request { id: first + i as u64, op })
            .collect();
        let mut last = String::new();
        for attempt in 1..=self.cfg.attempts {
            if attempt > 1 {
                thread::sleep(Duration::from_millis(self.cfg.backoff_ms * u64::from(attempt - 1)));
            }
            let mut conn = match self.checkout() {
                Ok(c) => c,
                Err(e) => {
                    log::warn!("scorer {} attempt {attempt}: connect failed: {e}", self.addr);
                    last = e.to_string();
                    continue;
                }
            };
            match conn.exchange(&reqs) {
                Ok(mut got) => {
                    self.checkin(Some(conn));
                    return reqs.iter().map(|r| answer(&self.addr, got.remove(&r.id), r.id)).collect();
                }
                Err(e) => {
                    log::warn!("scorer {} attempt {attempt}: {e}", self.addr);
                    let _ = conn.writer.shutdown(Shutdown::Both);
                    self.checkin(None);
                    last = e.to_string();
                }
            }
        }
        Err(Error::Transport {
            attempts: self.cfg.attempts,
            message: format!("{}: {last}", self.addr),
        })
    }
}

fn answer(addr: &str, resp: Option<Response>, id: u64) -> Result<f64> {
    let resp = resp.ok_or_else(|| Error::Transport {
        attempts: 1,
        message: format!("{addr}: no response for request {id}"),
    })?;
    if let Some(e) = resp.error {
        return Err(Error::Validation(format!("{addr} rejected request {id}: {e}")));
    }
    match resp.p {
        Some(p) if (0.0..=1.0).contains(&p) => Ok(p),
        Some(p) => Err(Error::Domain(format!("{addr} returned probability {p} for request {id}"))),
        None => Err(Error::Validation(format!("{addr} sent neither p nor error for request {id}"))),
    }
}

/// Relation detector served by another process.
pub struct ExternalRelationScorer {
    client: Arc<ProtocolClient>,
    /// Templates per pipelined batch.
    pub chunk: usize,
}

impl ExternalRelationScorer {
    pub fn new(client: Arc<ProtocolClient>) -> Self {
        ExternalRelationScorer { client, chunk: 256 }
    }
}

impl RelationScorer for ExternalRelationScorer {
    fn kind(&self) -> ScorerKind {
        ScorerKind::ExternalProtocol
    }

    fn score(&self, template: &Template) -> Result<f64> {
        Ok(self.client.call(vec![Op::ScoreRelation { template: template.0.clone() }])?[0])
    }

    fn score_many(&self, templates: &[Template]) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(templates.len());
        for chunk in templates.chunks(self.chunk.max(1)) {
            let ops = chunk.iter().map(|t| Op::ScoreRelation { template: t.0.clone() }).collect();
            out.extend(self.client.call(ops)?);
        }
        Ok(out)
    }
}

/// Pairwise resolver served by another process.
pub struct ExternalPairScorer {
    client: Arc<ProtocolClient>,
}

impl ExternalPairScorer {
    pub fn new(client: Arc<ProtocolClient>) -> Self {
        ExternalPairScorer { client }
    }
}

impl PairScoring for ExternalPairScorer {
    fn score_pair(&self, doc: &Document, m: &str, n: &str) -> Result<f64> {
        let (a, b) = (doc.require_mention(m)?, doc.require_mention(n)?);
        let op = Op::ScorePair {
            x: MentionContext::of(doc, a),
            y: MentionContext::of(doc, b),
        };
        Ok(self.client.call(vec![op])?[0])
    }
}

/// What a server does with each request.
pub type Handler = Arc<dyn Fn(&Op) -> std::result::Result<f64, String> + Send + Sync>;

/// Handler backed by in-process scorers. Pair requests are scored by
/// rebuilding a two-sentence document around the mentions.
pub fn scorer_handler(relation: Option<Arc<dyn RelationScorer>>, pair: Option<Arc<crate::resolution::PairScorer>>) -> Handler {
    Arc::new(move |op: &Op| match op {
        Op::ScoreRelation { template } => match &relation {
            Some(r) => r.score(&Template(template.clone())).map_err(|e| e.to_string()),
            None => Err("score_relation not served".into()),
        },
        Op::ScorePair { x, y } => match &pair {
            Some(s) => pair_from_context(s, x, y).map_err(|e| e.to_string()),
            None => Err("score_pair not served".into()),
        },
    })
}

fn pair_from_context(s: &crate::resolution::PairScorer, x: &MentionContext, y: &MentionContext) -> Result<f64> {
    use crate::corpus::{MentionKind, RawDocument, RawMention, RawParagraph, RawSentence};
    let m = |id: &str, s: usize, c: &MentionContext| RawMention {
        id: id.into(),
        entity: None,
        kind: MentionKind::CandidateNounPhrase,
        p: 0,
        s,
        t0: c.span.0,
        t1: c.span.1,
    };
    let doc = Document::from_raw(RawDocument {
        id: "request".into(),
        paragraphs: vec![RawParagraph {
            sentences: vec![RawSentence { tokens: x.tokens.clone() }, RawSentence { tokens: y.tokens.clone() }],
        }],
        entities: vec![],
        mentions: vec![m("x", 0, x), m("y", 1, y)],
    })?;
    s.score_pair(&doc, "x", "y")
}

/// A running protocol server on a background thread.
pub struct ServerHandle {
    addr: String,
    stop: Arc<AtomicBool>,
    thread: Option<thread::JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> &str {
        &self.addr
    }

    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        let _ = TcpStream::connect(&self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_now();
    }
}

/// Serves `handler` on `addr` (use port 0 for an ephemeral port), one thread
/// per connection. Malformed lines get an error response and the
/// connection stays open.
pub fn serve(addr: &str, handler: Handler) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr).map_err(|e| Error::io(addr, e))?;
    let local = listener.local_addr().map_err(|e| Error::io(addr, e))?.to_string();
    let stop = Arc::new(AtomicBool::new(false));
    let flag = stop.clone();
    let thread = thread::spawn(move || {
        for stream in listener.incoming() {
            if flag.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = stream else { continue };
            let h = handler.clone();
            thread::spawn(move || {
                let _ = handle_connection(stream, h);
            });
        }
    });
    Ok(ServerHandle {
        addr: local,
        stop,
        thread: Some(thread),
    })
}

fn handle_connection(stream: TcpStream, handler: Handler) -> std::io::Result<()> {
    let mut writer = stream.try_clone()?;
    let reader = BufReader::new(stream);
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let resp = match serde_json::from_str::<Request>(&line) {
            Ok(req) => match handler(&req.op) {
                Ok(p) => Response { id: req.id, p: Some(p), error: None },
                Err(e) => Response { id: req.id, p: None, error: Some(e) },
            },
            Err(e) => {
                let id = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("id").and_then(|i| i.as_u64()))
                    .unwrap_or(0);
                Response { id, p: None, error: Some(format!("malformed request: {e}")) }
            }
        };
        let mut out = serde_json::to_vec(&resp)?;
        out.push(b'\n');
        writer.write_all(&out)?;
    }
    Ok(())
}
