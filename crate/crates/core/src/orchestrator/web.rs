use thiserror::Error;

use crate::capture::CaptureArchive;
use crate::distill::AuthDescriptor;
use crate::http::{Request, Response, Transport, TransportError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum WebError {
    #[error("no site matches {0:?}")]
    NoSite(String),
    #[error("{0} blocked the browser session")]
    Blocked(String),
    #[error("browser capture is not available: {0}")]
    Unsupported(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
}

/// A recorded browser session against one site.
#[derive(Debug, Clone)]
pub struct BrowserSession {
    pub domain: String,
    pub archive: CaptureArchive,
    /// Virtual or real milliseconds the session took.
    pub elapsed_ms: i64,
}

/// The agent's view of the web: direct HTTP for executing routes, a browser
/// for discovery, and a way to re-authenticate.
pub trait Web: Transport {
    fn browse(&self, domain_hint: Option<&str>, intent: &str) -> Result<BrowserSession, WebError>;

    /// Fresh credential for `domain` after an auth failure, if the agent can
    /// log in again.
    fn refresh_credential(&self, domain: &str, auth: &AuthDescriptor) -> Option<String>;
}

/// Executes requests over a transport; no browser.
pub struct HttpOnlyWeb<T>(pub T);

impl<T: Transport> Transport for HttpOnlyWeb<T> {
    fn send(&self, req: &Request) -> Result<Response, TransportError> {
        self.0.send(req)
    }
}

impl<T: Transport> Web for HttpOnlyWeb<T> {
    fn browse(&self, _: Option<&str>, _: &str) -> Result<BrowserSession, WebError> {
        Err(WebError::Unsupported("no browser attached".into()))
    }

    fn refresh_credential(&self, _: &str, _: &AuthDescriptor) -> Option<String> {
        None
    }
}
