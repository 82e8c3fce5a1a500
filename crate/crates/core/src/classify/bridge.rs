//! Client for classifiers served out of process over the wire protocol.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use super::protocol::Frame;
use super::{Activation, Classifier, ClassifierInfo, Provenance};
use crate::emotion::EmotionLabel;
use crate::error::{Error, Result};
use crate::render::Image;

/// Where a bridge process listens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Endpoint {
    /// `tcp://host:port`
    Tcp(String),
    /// `stdio:program arg ...`; the program is spawned and spoken to over
    /// its stdin/stdout.
    Stdio { program: String, args: Vec<String> },
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if let Some(addr) = s.strip_prefix("tcp://") {
            if addr.rsplit_once(':').is_none_or(|(h, p)| h.is_empty() || p.parse::<u16>().is_err()) {
                return Err(Error::Config(format!("bad tcp endpoint '{s}', expected tcp://host:port")));
            }
            return Ok(Endpoint::Tcp(addr.to_string()));
        }
        if let Some(cmd) = s.strip_prefix("stdio:") {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| Error::Config("empty stdio endpoint command".into()))?;
            return Ok(Endpoint::Stdio { program, args: parts.collect() });
        }
        Err(Error::Config(format!("unknown endpoint '{s}', expected tcp://host:port or stdio:command")))
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Tcp(addr) => write!(f, "tcp://{addr}"),
            Endpoint::Stdio { program, args } => {
                write!(f, "stdio:{program}")?;
                args.iter().try_for_each(|a| write!(f, " {a}"))
            }
        }
    }
}

enum Stream {
    Tcp { reader: BufReader<TcpStream>, writer: TcpStream },
    Stdio { child: Child, reader: BufReader<ChildStdout>, writer: ChildStdin },
}

pub(super) struct Connection {
    stream: Stream,
}

fn transport(e: impl fmt::Display) -> Error {
    Error::Transport(e.to_string())
}

impl Connection {
    pub(super) fn open(endpoint: &Endpoint, timeout: Duration) -> Result<Self> {
        let stream = match endpoint {
            Endpoint::Tcp(addr) => {
                let writer = TcpStream::connect(addr).map_err(|e| transport(format!("connect {addr}: {e}")))?;
                writer.set_read_timeout(Some(timeout)).map_err(transport)?;
                writer.set_nodelay(true).map_err(transport)?;
                let reader = BufReader::new(writer.try_clone().map_err(transport)?);
                Stream::Tcp { reader, writer }
            }
            Endpoint::Stdio { program, args } => {
                let mut child = Command::new(program)
                    .args(args)
                    .stdin(Stdio::piped())
                    .stdout(Stdio::piped())
                    .stderr(Stdio::inherit())
                    .spawn()
                    .map_err(|e| transport(format!("spawn {program}: {e}")))?;
                let writer = child.stdin.take().expect("piped stdin");
                let reader = BufReader::new(child.stdout.take().expect("piped stdout"));
                Stream::Stdio { child, reader, writer }
            }
        };
        Ok(Self { stream })
    }

    pub(super) fn send(&mut self, frame: &Frame) -> Result<()> {
        let line = frame.encode();
        let w: &mut dyn Write = match &mut self.stream {
            Stream::Tcp { writer, .. } => writer,
            Stream::Stdio { writer, .. } => writer,
        };
        w.write_all(line.as_bytes()).and_then(|_| w.flush()).map_err(transport)
    }

    pub(super) fn recv(&mut self) -> Result<Frame> {
        let r: &mut dyn BufRead = match &mut self.stream {
            Stream::Tcp { reader, .. } => reader,
            Stream::Stdio { reader, .. } => reader,
        };
        let mut line = String::new();
        match r.read_line(&mut line) {
            Ok(0) => Err(Error::Transport("bridge closed the connection".into())),
            Ok(_) => Frame::decode(&line),
            Err(e) => Err(transport(e)),
        }
    }

    pub(super) fn handshake(&mut self, model_id: &str) -> Result<ClassifierInfo> {
        self.send(&Frame::Hello { model: model_id.to_string() })?;
        match self.recv()? {
            Frame::Ready { labels, input, normalization } => {
                let labels = labels.iter().map(|l| l.parse()).collect::<Result<Vec<EmotionLabel>>>()?;
                if input[0] == 0 || input[1] == 0 {
                    return Err(Error::Protocol(format!("declared input size {}x{} is empty", input[0], input[1])));
                }
                Ok(ClassifierInfo {
                    name: model_id.to_string(),
                    labels,
                    input_size: Some((input[0], input[1])),
                    normalization,
                })
            }
            Frame::Error { message, .. } => Err(Error::Protocol(format!("handshake for '{model_id}' rejected: {message}"))),
            other => Err(Error::Protocol(format!("expected ready frame, got {other:?}"))),
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        if let Stream::Stdio { child, .. } = &mut self.stream {
            let _ = child.kill();
            let _ = child.wait();
        }
    }
}

/// Retry policy for transport failures.
#[derive(Debug, Clone, Copy)]
pub struct RetryPolicy {
    pub retries: u32,
    pub initial_backoff: Duration,
    /// Read timeout for a single response (TCP only).
    pub timeout: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { retries: 3, initial_backoff: Duration::from_millis(100), timeout: Duration::from_secs(60) }
    }
}

impl RetryPolicy {
    fn run<T>(&self, mut attempt: impl FnMut() -> Result<T>) -> Result<T> {
        let mut backoff = self.initial_backoff;
        let mut tries = 0;
        loop {
            match attempt() {
                Err(e) if e.is_retryable() && tries < self.retries => {
                    tries += 1;
                    std::thread::sleep(backoff);
                    backoff *= 2;
                }
                other => return other,
            }
        }
    }
}

/// A classifier living behind a bridge endpoint.
///
/// Requests on one connection are serialized. A transport failure drops the
/// connection; the next attempt reconnects and repeats the handshake, which
/// must declare the same labels, input size and normalization as the first.
pub struct BridgeClassifier {
    endpoint: Endpoint,
    model_id: String,
    info: ClassifierInfo,
    policy: RetryPolicy,
    conn: Mutex<Option<Connection>>,
    next_id: AtomicU64,
}

/// Connect to `endpoint`, handshake for `model_id`, and return the adapter.
pub fn bridge_connect(endpoint: &Endpoint, model_id: &str) -> Result<BridgeClassifier> {
    BridgeClassifier::connect(endpoint, model_id, RetryPolicy::default())
}

impl BridgeClassifier {
    pub fn connect(endpoint: &Endpoint, model_id: &str, policy: RetryPolicy) -> Result<Self> {
        let (conn, info) = policy.run(|| {
            let mut conn = Connection::open(endpoint, policy.timeout)?;
            let info = conn.handshake(model_id)?;
            Ok((conn, info))
        })?;
        Ok(Self {
            endpoint: endpoint.clone(),
            model_id: model_id.to_string(),
            info,
            policy,
            conn: Mutex::new(Some(conn)),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn endpoint(&self) -> &Endpoint {
        &self.endpoint
    }

    fn request(&self, slot: &mut Option<Connection>, image: &Image) -> Result<Activation> {
        if slot.is_none() {
            let mut conn = Connection::open(&self.endpoint, self.policy.timeout)?;
            let info = conn.handshake(&self.model_id)?;
            if info != self.info {
                return Err(Error::Protocol(format!(
                    "bridge model '{}' changed its declaration on reconnect: {:?} -> {:?}",
                    self.model_id, self.info, info
                )));
            }
            *slot = Some(conn);
        }
        let conn = slot.as_mut().expect("connected above");
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        conn.send(&Frame::classify(id, image))?;
        match conn.recv()? {
            Frame::Result { id: got, activations } if got == id => self.to_activation(activations),
            Frame::Result { id: got, .. } => Err(Error::Protocol(format!("response id {got} does not match request {id}"))),
            Frame::Error { message, .. } => Err(Error::Protocol(format!("bridge error for request {id}: {message}"))),
            other => Err(Error::Protocol(format!("unexpected frame {other:?}"))),
        }
    }

    fn to_activation(&self, raw: BTreeMap<String, f64>) -> Result<Activation> {
        let mut values = BTreeMap::new();
        for (k, v) in raw {
            values.insert(k.parse::<EmotionLabel>().map_err(|_| Error::Protocol(format!("undeclared label '{k}'")))?, v);
        }
        if let Some(missing) = self.info.labels.iter().find(|l| !values.contains_key(l)) {
            return Err(Error::Protocol(format!("response lacks declared label {missing}")));
        }
        if values.len() != self.info.labels.len() {
            return Err(Error::Protocol("response carries undeclared labels".into()));
        }
        Activation::new(values, self.info.normalization)
    }
}

impl Classifier for BridgeClassifier {
    fn info(&self) -> &ClassifierInfo {
        &self.info
    }

    fn classify(&self, image: &Image, _provenance: &Provenance) -> Result<Activation> {
        let image = self.info.prepare(image);
        let mut slot = self.conn.lock().unwrap_or_else(|p| p.into_inner());
        self.policy.run(|| {
            let out = self.request(&mut slot, &image);
            if out.is_err() {
                // the stream may be mid-frame; start over on the next attempt
                *slot = None;
            }
            out
        })
    }
}
