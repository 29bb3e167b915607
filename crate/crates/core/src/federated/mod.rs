//! Coordinator, aggregation, parameter wire format and transports.

mod aggregate;
pub mod codec;
pub mod metrics;
pub mod protocol;
mod run;
pub mod server;
pub mod service;

pub use aggregate::{aggregate, aggregation_weights, AggregationMode};
pub use codec::{deserialize_params, serialize_params, DecodeError};
pub use protocol::{Endpoint, Message, TransportError};
pub use run::{
    client_worker, coordinator_for, resume_federation, run_federation, run_from, ClientMetrics, FederatedConfig,
    GlobalState, RoundMetrics, Transport,
};
pub use service::Event;
