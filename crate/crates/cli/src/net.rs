use std::io::Read;
use std::time::Duration;

use routegraph::http::{Request, Response, Transport, TransportError};

const MAX_BODY: u64 = 8 << 20;

/// Blocking HTTP over real sockets.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new(timeout: Duration) -> Self {
        UreqTransport { agent: ureq::AgentBuilder::new().timeout(timeout).redirects(0).build() }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new(Duration::from_secs(30))
    }
}

fn convert(resp: ureq::Response) -> Result<Response, TransportError> {
    let mut out = Response::new(resp.status());
    for name in resp.headers_names() {
        if let Some(v) = resp.header(&name) {
            out.headers.insert(name.to_ascii_lowercase(), v.to_owned());
        }
    }
    let mut body = Vec::new();
    resp.into_reader()
        .take(MAX_BODY)
        .read_to_end(&mut body)
        .map_err(|e| TransportError::Unreachable(e.to_string()))?;
    out.body = body;
    Ok(out)
}

impl Transport for UreqTransport {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        let mut call = self.agent.request_url(&req.method, &req.url);
        for (k, v) in &req.headers {
            call = call.set(k, v);
        }
        let sent = match &req.body {
            Some(b) => call.send_bytes(b),
            None => call.call(),
        };
        match sent {
            Ok(resp) | Err(ureq::Error::Status(_, resp)) => convert(resp),
            Err(ureq::Error::Transport(t)) => {
                let msg = t.to_string();
                if msg.contains("timed out") {
                    Err(TransportError::Timeout)
                } else {
                    Err(TransportError::Unreachable(msg))
                }
            }
        }
    }
}
