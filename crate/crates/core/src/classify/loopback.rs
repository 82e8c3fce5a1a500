//! In-process server for the wire protocol, used to test the bridge client
//! without any model runtime.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use super::protocol::{decode_pixels, Frame};
use super::Normalization;
use crate::emotion::EmotionLabel;
use crate::error::Result;

/// Callback invoked with `(request id, decoded RGB8 bytes)` for every
/// successfully decoded classify request.
pub type ImageObserver = Arc<dyn Fn(u64, &[u8]) + Send + Sync>;

/// A model that returns the same activations for every image.
#[derive(Clone)]
pub struct EchoModel {
    pub id: String,
    pub input: (u32, u32),
    pub normalization: Normalization,
    pub activations: BTreeMap<String, f64>,
    pub observer: Option<ImageObserver>,
}

impl Default for EchoModel {
    fn default() -> Self {
        let activations = EmotionLabel::BASE.iter().map(|l| (l.to_string(), 1.0 / 6.0)).collect();
        Self { id: "echo".into(), input: (224, 224), normalization: Normalization::Softmax, activations, observer: None }
    }
}

impl EchoModel {
    pub fn with_observer(mut self, observer: impl Fn(u64, &[u8]) + Send + Sync + 'static) -> Self {
        self.observer = Some(Arc::new(observer));
        self
    }

    fn respond(&self, frame: Frame, ready: &mut bool) -> Frame {
        match frame {
            Frame::Hello { model } if model == self.id => {
                *ready = true;
                Frame::Ready {
                    labels: self.activations.keys().cloned().collect(),
                    input: [self.input.0, self.input.1],
                    normalization: self.normalization,
                }
            }
            Frame::Hello { model } => Frame::error(None, format!("unknown model '{model}'")),
            Frame::Classify { id, .. } if !*ready => Frame::error(Some(id), "classify before hello"),
            Frame::Classify { id, width, height, pixels } => match decode_pixels(width, height, &pixels) {
                Ok(img) => {
                    if let Some(obs) = &self.observer {
                        obs(id, img.as_bytes());
                    }
                    Frame::Result { id, activations: self.activations.clone() }
                }
                Err(e) => Frame::error(Some(id), e.to_string()),
            },
            other => Frame::error(other.id(), "unexpected frame from client"),
        }
    }
}

/// Serve one connection until the client closes it.
pub fn serve(model: &EchoModel, reader: impl BufRead, mut writer: impl Write) -> Result<()> {
    let mut ready = false;
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let reply = match Frame::decode(&line) {
            Ok(frame) => model.respond(frame, &mut ready),
            Err(e) => Frame::error(id_hint(&line), e.to_string()),
        };
        writer.write_all(reply.encode().as_bytes())?;
        writer.flush()?;
    }
    Ok(())
}

// Best-effort id recovery from a frame that failed to decode.
fn id_hint(line: &str) -> Option<u64> {
    serde_json::from_str::<serde_json::Value>(line).ok()?.get("id")?.as_u64()
}

/// TCP echo server on a background thread, one thread per connection.
pub struct TcpEchoServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl TcpEchoServer {
    pub fn spawn(model: EchoModel) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let handle = std::thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let model = model.clone();
                std::thread::spawn(move || {
                    if let Ok(read_half) = stream.try_clone() {
                        let _ = serve(&model, BufReader::new(read_half), stream);
                    }
                });
            }
        });
        Ok(Self { addr, stop, handle: Some(handle) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn endpoint(&self) -> String {
        format!("tcp://{}", self.addr)
    }
}

impl Drop for TcpEchoServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // wake the accept loop
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}
