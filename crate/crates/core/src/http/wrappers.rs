use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{Request, Response, Transport, TransportError};
use crate::clock::SimClock;

/// Adds a fixed round-trip time on a virtual clock.
pub struct LatencyTransport<T> {
    inner: T,
    clock: SimClock,
    rtt_ms: i64,
}

impl<T: Transport> LatencyTransport<T> {
    pub fn new(inner: T, clock: SimClock, rtt_ms: i64) -> Self {
        LatencyTransport { inner, clock, rtt_ms }
    }
}

impl<T: Transport> Transport for LatencyTransport<T> {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        self.clock.advance(self.rtt_ms);
        self.inner.send(req)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub method: String,
    pub url: String,
    pub status: Option<u16>,
}

/// Records every request that passes through.
pub struct TracingTransport<T> {
    inner: T,
    trace: Mutex<Vec<TraceEntry>>,
}

impl<T: Transport> TracingTransport<T> {
    pub fn new(inner: T) -> Self {
        TracingTransport { inner, trace: Mutex::new(Vec::new()) }
    }

    pub fn trace(&self) -> Vec<TraceEntry> {
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn count(&self) -> usize {
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).len()
    }

    pub fn clear(&self) {
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    pub fn inner(&self) -> &T {
        &self.inner
    }
}

impl<T: Transport> Transport for TracingTransport<T> {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        let r = self.inner.send(req);
        self.trace.lock().unwrap_or_else(|e| e.into_inner()).push(TraceEntry {
            method: req.method.clone(),
            url: req.url.to_string(),
            status: r.as_ref().ok().map(|r| r.status),
        });
        r
    }
}
