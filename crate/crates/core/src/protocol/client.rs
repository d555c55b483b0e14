use std::time::Duration;

use log::warn;
use thiserror::Error;

use super::codec::{read_frame, write_frame, FrameError, WireMessage};
use super::endpoint::{Conn, Endpoint};
use crate::platform::TargetKind;
use crate::threshold::ExecutionRecord;

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(1);

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("cannot reach scheduler at {endpoint}: {source}")]
    Connect {
        endpoint: Endpoint,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("server closed the connection")]
    Closed,
    #[error("unexpected reply {0:?}")]
    Unexpected(WireMessage),
}

impl From<std::io::Error> for ClientError {
    fn from(e: std::io::Error) -> Self {
        ClientError::Frame(FrameError::Io(e))
    }
}

/// A blocking connection to the scheduler server.
pub struct Client {
    conn: Conn,
}

impl Client {
    pub fn connect(endpoint: &Endpoint, timeout: Duration) -> Result<Client, ClientError> {
        let conn = Conn::connect(endpoint, timeout).map_err(|source| ClientError::Connect {
            endpoint: endpoint.clone(),
            source,
        })?;
        Ok(Client { conn })
    }

    fn call(&mut self, msg: &WireMessage) -> Result<WireMessage, ClientError> {
        write_frame(&mut self.conn, msg)?;
        read_frame(&mut self.conn)?.ok_or(ClientError::Closed)
    }

    pub fn request(&mut self, app_id: &str, function_id: &str) -> Result<TargetKind, ClientError> {
        let msg = WireMessage::Request {
            app_id: app_id.to_string(),
            function_id: function_id.to_string(),
        };
        match self.call(&msg)? {
            WireMessage::Response { target } => Ok(target),
            other => Err(ClientError::Unexpected(other)),
        }
    }

    pub fn report(&mut self, record: &ExecutionRecord) -> Result<(), ClientError> {
        match self.call(&WireMessage::Completion(record.clone()))? {
            WireMessage::Ack => Ok(()),
            other => Err(ClientError::Unexpected(other)),
        }
    }

    pub fn kernels(&mut self) -> Result<Vec<String>, ClientError> {
        match self.call(&WireMessage::KernelQuery)? {
            WireMessage::KernelList { kernel_ids } => Ok(kernel_ids),
            other => Err(ClientError::Unexpected(other)),
        }
    }

    pub fn shutdown(&mut self) -> Result<(), ClientError> {
        match self.call(&WireMessage::Shutdown)? {
            WireMessage::Ack => Ok(()),
            other => Err(ClientError::Unexpected(other)),
        }
    }
}

/// Outcome of [`client_request`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement {
    pub target: TargetKind,
    /// The server could not be asked; `target` is the x86 default.
    pub fallback: bool,
}

/// Asks where to run one invocation. Any failure yields x86.
pub fn client_request(
    endpoint: &Endpoint,
    app_id: &str,
    function_id: &str,
    timeout: Duration,
) -> Placement {
    let answer =
        Client::connect(endpoint, timeout).and_then(|mut c| c.request(app_id, function_id));
    match answer {
        Ok(target) => Placement {
            target,
            fallback: false,
        },
        Err(e) => {
            warn!("scheduler request for `{app_id}` failed ({e}); running on x86");
            Placement {
                target: TargetKind::X86,
                fallback: true,
            }
        }
    }
}

/// Reports a finished run and waits for the acknowledgement.
pub fn client_report(
    endpoint: &Endpoint,
    record: &ExecutionRecord,
    timeout: Duration,
) -> Result<(), ClientError> {
    Client::connect(endpoint, timeout)?.report(record)
}
