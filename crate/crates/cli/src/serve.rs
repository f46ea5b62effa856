//! Socket binding for the registry and agent services.

use std::io::Read;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use routegraph::http::{AgentService, Request, Response, Transport};
use routegraph::trust::{spawn_verifier, VerificationConfig};
use serde_json::json;
use tiny_http::{Header, Server};
use url::Url;

use crate::app::App;
use crate::error::CliError;
use crate::net::UreqTransport;

const MAX_REQUEST: u64 = 8 << 20;

fn to_request(req: &mut tiny_http::Request, base: &Url) -> Option<Request> {
    let url = base.join(req.url()).ok()?;
    let mut out = Request::new(req.method().as_str(), url);
    for h in req.headers() {
        out = out.with_header(h.field.as_str().as_str(), h.value.as_str());
    }
    let mut body = Vec::new();
    req.as_reader().take(MAX_REQUEST).read_to_end(&mut body).ok()?;
    if !body.is_empty() {
        out.body = Some(body);
    }
    Some(out)
}

fn to_response(resp: Response) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let mut out = tiny_http::Response::from_data(resp.body).with_status_code(resp.status);
    for (k, v) in &resp.headers {
        if let Ok(h) = Header::from_bytes(k.as_bytes(), v.as_bytes()) {
            out.add_header(h);
        }
    }
    out
}

/// Serves until the process is killed. Prints one JSON line with the bound
/// address once listening, so `--addr 127.0.0.1:0` is usable.
pub fn serve(app: &App, addr: &str, verify: bool, print: impl Fn(&serde_json::Value)) -> Result<(), CliError> {
    let (orch, local) = app.orchestrator(None)?;
    let local = local.ok_or_else(|| CliError::Usage("serve needs a local registry directory".into()))?;
    let agent = AgentService::new(Arc::new(orch));
    let server = Server::http(addr).map_err(|e| CliError::Network(format!("bind {addr}: {e}")))?;
    let bound = server.server_addr().to_ip().map(|a| a.to_string()).unwrap_or_else(|| addr.to_owned());
    let base = Url::parse(&format!("http://{bound}/")).map_err(|e| CliError::Internal(e.to_string()))?;

    let stop = Arc::new(AtomicBool::new(false));
    let _verifier = verify.then(|| {
        let prober: Arc<dyn Transport> = Arc::new(UreqTransport::default());
        spawn_verifier(
            local.service.registry.clone(),
            prober,
            local.service.clock.clone(),
            VerificationConfig::default(),
            Duration::from_secs(60),
            stop.clone(),
        )
    });
    print(&json!({"listening": bound, "registry": local.dir.display().to_string()}));

    for mut raw in server.incoming_requests() {
        let resp = match to_request(&mut raw, &base) {
            Some(req) if req.url.path().starts_with("/v1/intent/") => agent.handle(&req),
            Some(req) => local.service.handle(&req),
            None => Response::error(400, "bad_request", "unreadable request"),
        };
        // a client hanging up mid-response is not a server failure
        let _ = raw.respond(to_response(resp));
    }
    Ok(())
}
