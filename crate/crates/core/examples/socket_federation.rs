//! The same federation over loopback TCP, checked against the in-process
//! run, plus a raw status query against a standalone coordinator.
//!
//! ```text
//! cargo run --release --example socket_federation
//! ```

use fedattn::data::{build_federated_dataset, even_sizes, synthesize_dataset};
use fedattn::federated::protocol::TcpEndpoint;
use fedattn::federated::server::SocketServer;
use fedattn::federated::service::{Coordinator, Shared};
use fedattn::federated::{run_federation, Endpoint, FederatedConfig, Message, Transport};
use fedattn::model::{ModelParams, Preset};

pub fn run_example() -> fedattn::Result<()> {
    let pairs = synthesize_dataset(41, 132, 400, 5)?;
    let (vocab, shards) = build_federated_dataset(&pairs, &even_sizes(400, 4), 0.8, 5)?;
    let mut config = FederatedConfig::new(Preset::Desk.dims(vocab.input.len(), vocab.output.len()));
    config.num_clients = 4;
    config.num_rounds = 2;
    config.train.local_epochs = 1;

    let local = run_federation(&config, &shards)?;
    config.transport = Transport::Socket {
        address: "127.0.0.1:0".into(),
    };
    let remote = run_federation(&config, &shards)?;
    println!(
        "socket global test loss {:.6}, in-process {:.6}, bitwise equal: {}",
        remote.history[1].global_test_loss,
        local.history[1].global_test_loss,
        remote.global_params.bitwise_eq(&local.global_params)
    );

    // Talking to a coordinator directly.
    let init = ModelParams::init(config.dims, 0)?;
    let shared = Shared::new(Coordinator::new(init, 4, 2, 1));
    let server = SocketServer::start("127.0.0.1:0", shared)?;
    let mut endpoint = TcpEndpoint::connect(server.address(), None)?;
    if let Message::Status(status) = endpoint.exchange(Message::GetStatus)? {
        println!(
            "coordinator at {}: round {}, expecting {} clients, {} reported",
            server.address(),
            status.round,
            status.expected,
            status.received.len()
        );
    }
    match endpoint.exchange(Message::GetGlobal { round: 2, client_id: 0 })? {
        Message::NotReady { current_round } => println!("round 2 not open yet, current round {current_round}"),
        other => println!("unexpected reply {other:?}"),
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> fedattn::Result<()> {
    run_example()
}
