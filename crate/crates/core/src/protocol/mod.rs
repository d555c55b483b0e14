//! Client/server scheduling protocol over local or TCP stream sockets.

mod client;
pub mod codec;
mod endpoint;
mod server;

pub use client::{client_report, client_request, Client, ClientError, Placement, DEFAULT_TIMEOUT};
pub use codec::{decode, encode, CodecError, WireMessage};
pub use endpoint::{Endpoint, DEFAULT_ENDPOINT};
pub use server::{
    single_image_state, FixedLoad, LoadSource, ProcLoadavg, SchedulerServer, ServerReport,
    SharedLoad,
};
