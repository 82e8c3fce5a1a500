//! Conformance checks for a wire-protocol server.
//!
//! The suite only assumes the server follows the protocol contract, so it
//! runs unchanged against the in-process echo server and against any bridge
//! process. Each check opens its own connection.

use std::time::Duration;

use serde::Serialize;

use super::bridge::{BridgeClassifier, Connection, RetryPolicy};
use super::protocol::Frame;
use super::{Classifier, Endpoint, Provenance};
use crate::error::{Error, Result};
use crate::render::Image;

const GOLDEN: &str = include_str!("../../../../protocol/golden/frames.jsonl");

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn policy() -> RetryPolicy {
    RetryPolicy { retries: 1, initial_backoff: Duration::from_millis(50), timeout: Duration::from_secs(30) }
}

fn fail(msg: impl Into<String>) -> Error {
    Error::Protocol(msg.into())
}

fn raw(endpoint: &Endpoint, model_id: &str) -> Result<Connection> {
    let mut conn = Connection::open(endpoint, policy().timeout)?;
    conn.handshake(model_id)?;
    Ok(conn)
}

fn check_handshake(endpoint: &Endpoint, model_id: &str) -> Result<String> {
    let c = BridgeClassifier::connect(endpoint, model_id, policy())?;
    let info = c.info();
    if info.labels.is_empty() {
        return Err(fail("ready frame declares no labels"));
    }
    let (w, h) = info.input_size.expect("bridge adapters always know their input size");
    Ok(format!("{} labels, input {w}x{h}, {:?}", info.labels.len(), info.normalization))
}

fn check_round_trips(endpoint: &Endpoint, model_id: &str) -> Result<String> {
    let c = BridgeClassifier::connect(endpoint, model_id, policy())?;
    let images = [Image::filled(4, 4, [255, 0, 0]), Image::filled(37, 19, [10, 200, 30]), Image::filled(64, 64, [128; 3])];
    for img in &images {
        let a = c.classify(img, &Provenance::none())?;
        if a.values.values().any(|v| !v.is_finite()) {
            return Err(fail("non-finite activation"));
        }
    }
    Ok(format!("{} requests on one connection", images.len()))
}

fn check_unknown_model(endpoint: &Endpoint) -> Result<String> {
    match BridgeClassifier::connect(endpoint, "no-such-model-facesym-conformance", policy()) {
        Err(Error::Protocol(m)) => Ok(m),
        Err(e) => Err(fail(format!("expected a handshake error frame, got {e}"))),
        Ok(_) => Err(fail("unknown model accepted")),
    }
}

fn check_bad_payload(endpoint: &Endpoint, model_id: &str) -> Result<String> {
    let mut conn = raw(endpoint, model_id)?;
    conn.send(&Frame::Classify { id: 41, width: 2, height: 2, pixels: "AAAA".into() })?;
    match conn.recv()? {
        Frame::Error { id: Some(41), .. } => {}
        other => return Err(fail(format!("expected error frame for id 41, got {other:?}"))),
    }
    conn.send(&Frame::classify(42, &Image::filled(2, 2, [1, 2, 3])))?;
    match conn.recv()? {
        Frame::Result { id: 42, .. } => Ok("error frame, connection still usable".into()),
        other => Err(fail(format!("expected result for id 42 after an error, got {other:?}"))),
    }
}

fn check_golden(endpoint: &Endpoint, model_id: &str) -> Result<String> {
    let request = GOLDEN
        .lines()
        .map(Frame::decode)
        .find(|f| matches!(f, Ok(Frame::Classify { .. })))
        .expect("golden file holds a classify frame")?;
    let mut conn = raw(endpoint, model_id)?;
    conn.send(&request)?;
    match conn.recv()? {
        Frame::Result { id, .. } if Some(id) == request.id() => Ok(format!("golden request {id} answered")),
        other => Err(fail(format!("unexpected reply to the golden request: {other:?}"))),
    }
}

type CheckFn<'a> = Box<dyn Fn() -> Result<String> + 'a>;

/// Run every check against `endpoint`, serving `model_id`.
pub fn conformance_suite(endpoint: &Endpoint, model_id: &str) -> Vec<CheckOutcome> {
    let checks: [(&'static str, CheckFn<'_>); 5] = [
        ("handshake", Box::new(|| check_handshake(endpoint, model_id))),
        ("round trips", Box::new(|| check_round_trips(endpoint, model_id))),
        ("unknown model", Box::new(|| check_unknown_model(endpoint))),
        ("bad payload", Box::new(|| check_bad_payload(endpoint, model_id))),
        ("golden request", Box::new(|| check_golden(endpoint, model_id))),
    ];
    checks
        .into_iter()
        .map(|(name, run)| match run() {
            Ok(detail) => CheckOutcome { name, passed: true, detail },
            Err(e) => CheckOutcome { name, passed: false, detail: e.to_string() },
        })
        .collect()
}
