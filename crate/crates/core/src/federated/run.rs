//! The round loop: broadcast, local training, aggregation, evaluation.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::aggregate::{aggregate, AggregationMode};
use super::codec::{checkpoint_name, read_checkpoint, write_checkpoint};
use super::metrics::{read_metrics_csv, write_metrics_csv, METRICS_FILE};
use super::protocol::{Endpoint, ErrorCode, Message, TcpEndpoint, TransportError};
use super::server::SocketServer;
use super::service::{ClientFailure, Coordinator, Event, InProcessEndpoint, RoundWait, Shared};
use crate::data::{ClientShard, TokenizedPair};
use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};
use crate::rng;
use crate::train::{evaluate, local_train, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Transport {
    InProcess,
    /// `address` is bound by the coordinator; `127.0.0.1:0` picks a free port.
    Socket { address: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FederatedConfig {
    pub num_clients: usize,
    pub num_rounds: usize,
    pub dims: ModelDims,
    pub train: TrainConfig,
    pub aggregation: AggregationMode,
    pub transport: Transport,
    pub seed: u64,
    /// Where `round_{t}.fedw` and the metrics CSV go after each round.
    pub checkpoint_dir: Option<PathBuf>,
    /// Abort a round if some client has not reported by then.
    pub round_timeout_secs: Option<u64>,
}

impl FederatedConfig {
    /// Five clients, thirty rounds, weighted aggregation, in-process.
    pub fn new(dims: ModelDims) -> Self {
        Self {
            num_clients: 5,
            num_rounds: 30,
            dims,
            train: TrainConfig::default(),
            aggregation: AggregationMode::Weighted,
            transport: Transport::InProcess,
            seed: 0,
            checkpoint_dir: None,
            round_timeout_secs: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::Config("at least one client is required".into()));
        }
        if self.num_rounds == 0 {
            return Err(Error::Config("at least one round is required".into()));
        }
        self.dims.validate()?;
        self.train.validate()
    }

    /// Training settings for round `round`: a fresh shuffle seed per round.
    pub fn round_train_config(&self, round: usize) -> TrainConfig {
        TrainConfig {
            seed: rng::derive_seed(rng::derive_seed(self.seed, self.train.seed), round as u64),
            ..self.train.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientMetrics {
    pub client_id: usize,
    pub train_loss: f64,
    pub test_loss: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round_index: usize,
    pub clients: Vec<ClientMetrics>,
    /// The new global parameters on the union of the clients' training sets.
    pub global_train_loss: f64,
    /// The new global parameters on the union of the clients' test sets.
    pub global_test_loss: f64,
}

impl RoundMetrics {
    /// Unweighted mean of the clients' own training losses, the other
    /// plausible reading of a "global training loss".
    pub fn clients_mean_train_loss(&self) -> f64 {
        self.clients.iter().map(|c| c.train_loss).sum::<f64>() / self.clients.len() as f64
    }

    pub fn clients_mean_test_loss(&self) -> f64 {
        self.clients.iter().map(|c| c.test_loss).sum::<f64>() / self.clients.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct GlobalState {
    /// Completed rounds.
    pub round_index: usize,
    pub global_params: ModelParams,
    pub history: Vec<RoundMetrics>,
    /// Protocol events of this process, in the order the coordinator saw them.
    pub events: Vec<Event>,
}

impl GlobalState {
    pub fn initial(config: &FederatedConfig) -> Result<Self> {
        Ok(Self {
            round_index: 0,
            global_params: ModelParams::init(config.dims, config.seed)?,
            history: Vec::new(),
            events: Vec::new(),
        })
    }

    /// State after the last checkpointed round in `dir`, with history read
    /// back from the metrics file when present.
    pub fn from_checkpoints(dir: &Path) -> Result<Option<Self>> {
        let mut last: Option<usize> = None;
        for entry in std::fs::read_dir(dir)? {
            let name = entry?.file_name();
            let name = name.to_string_lossy();
            if let Some(t) = name
                .strip_prefix("round_")
                .and_then(|r| r.strip_suffix(".fedw"))
                .and_then(|r| r.parse::<usize>().ok())
            {
                last = last.max(Some(t));
            }
        }
        let Some(t) = last else { return Ok(None) };
        let global_params = read_checkpoint(&dir.join(checkpoint_name(t)))?;
        let metrics = dir.join(METRICS_FILE);
        let history = if metrics.exists() {
            let mut h = read_metrics_csv(std::fs::File::open(metrics)?)?;
            h.retain(|m| m.round_index <= t);
            h
        } else {
            Vec::new()
        };
        Ok(Some(Self {
            round_index: t,
            global_params,
            history,
            events: Vec::new(),
        }))
    }
}

fn pooled<'a>(shards: &'a [ClientShard], pick: impl Fn(&'a ClientShard) -> &'a [TokenizedPair]) -> Vec<TokenizedPair> {
    shards.iter().flat_map(|s| pick(s).iter().cloned()).collect()
}

fn check_shards(config: &FederatedConfig, shards: &[ClientShard]) -> Result<()> {
    if shards.len() != config.num_clients {
        return Err(Error::Config(format!(
            "{} clients configured but {} shards given",
            config.num_clients,
            shards.len()
        )));
    }
    for (k, s) in shards.iter().enumerate() {
        if s.client_id != k {
            return Err(Error::Config(format!("shard {k} belongs to client {}", s.client_id)));
        }
        if s.train.is_empty() {
            return Err(Error::Config(format!("client {k} has no training pairs")));
        }
    }
    if shards.iter().all(|s| s.test.is_empty()) {
        return Err(Error::Config("no client has test pairs".into()));
    }
    Ok(())
}

/// Delay between polls while the next round is not yet open.
fn backoff(attempt: u32) -> Duration {
    Duration::from_micros(200 << attempt.min(7))
}

/// The client side of rounds `first..=last`: fetch W_g, train locally, push
/// the update. Stops quietly if the coordinator aborts.
pub fn client_worker<E: Endpoint>(
    endpoint: &mut E,
    shard: &ClientShard,
    config: &FederatedConfig,
    first: usize,
    last: usize,
) -> Result<()> {
    let client = shard.client_id;
    let transport = |e: TransportError| Error::Transport(e).for_client(client);
    for round in first..=last {
        let mut attempt = 0;
        let global = loop {
            match endpoint.exchange(Message::GetGlobal { round, client_id: client }).map_err(transport)? {
                Message::GlobalParams { params, .. } => break params,
                Message::NotReady { .. } => {
                    std::thread::sleep(backoff(attempt));
                    attempt += 1;
                }
                Message::Error {
                    code: ErrorCode::Aborted,
                    ..
                } => return Ok(()),
                other => return Err(transport(unexpected(other))),
            }
        };
        let update = match local_train(&global, shard, &config.round_train_config(round)) {
            Ok(u) => u,
            Err(e) => {
                let _ = endpoint.exchange(Message::ReportFailure {
                    round,
                    client_id: client,
                    message: e.to_string(),
                });
                return Err(e.in_round(round));
            }
        };
        match endpoint.exchange(Message::PushUpdate { round, update }).map_err(transport)? {
            Message::Ack { .. } => {}
            Message::Error {
                code: ErrorCode::Aborted,
                ..
            } => return Ok(()),
            other => return Err(transport(unexpected(other))),
        }
    }
    Ok(())
}

fn unexpected(reply: Message) -> TransportError {
    match reply {
        Message::Error { code, message } => TransportError::Remote { code, message },
        other => TransportError::Unexpected(format!("message kind {}", other.kind())),
    }
}

/// Runs all rounds from a fresh initialization.
pub fn run_federation(config: &FederatedConfig, shards: &[ClientShard]) -> Result<GlobalState> {
    config.validate()?;
    run_from(config, shards, GlobalState::initial(config)?)
}

/// Continues from the last checkpoint in `config.checkpoint_dir`, or starts
/// fresh when there is none.
pub fn resume_federation(config: &FederatedConfig, shards: &[ClientShard]) -> Result<GlobalState> {
    config.validate()?;
    let dir = config
        .checkpoint_dir
        .as_deref()
        .ok_or_else(|| Error::Config("resuming needs a checkpoint directory".into()))?;
    let state = match GlobalState::from_checkpoints(dir)? {
        Some(s) => s,
        None => GlobalState::initial(config)?,
    };
    if state.global_params.dims != config.dims {
        return Err(Error::Config("checkpoint dims differ from the configuration".into()));
    }
    run_from(config, shards, state)
}

/// Executes rounds `state.round_index + 1 ..= config.num_rounds`.
pub fn run_from(config: &FederatedConfig, shards: &[ClientShard], state: GlobalState) -> Result<GlobalState> {
    config.validate()?;
    check_shards(config, shards)?;
    if state.round_index >= config.num_rounds {
        return Ok(state);
    }
    if let Some(dir) = &config.checkpoint_dir {
        std::fs::create_dir_all(dir)?;
    }
    let first = state.round_index + 1;
    let shared = Shared::new(Coordinator::new(
        state.global_params.clone(),
        config.num_clients,
        config.num_rounds,
        first,
    ));

    let mut server = match &config.transport {
        Transport::InProcess => None,
        Transport::Socket { address } => Some(SocketServer::start(address, shared.clone())?),
    };
    let address = server.as_ref().map(SocketServer::address);

    let outcome = std::thread::scope(|scope| {
        let workers: Vec<_> = shards
            .iter()
            .map(|shard| {
                let shared = shared.clone();
                scope.spawn(move || match address {
                    None => client_worker(&mut InProcessEndpoint::new(shared), shard, config, first, config.num_rounds),
                    Some(addr) => {
                        let mut ep = TcpEndpoint::connect_with_retry(addr, Some(Duration::from_secs(600)), 8)
                            .map_err(|e| Error::Transport(e).for_client(shard.client_id))?;
                        client_worker(&mut ep, shard, config, first, config.num_rounds)
                    }
                })
            })
            .collect();
        let driven = drive(config, shards, &shared, state);
        if driven.is_err() {
            shared.abort();
        }
        let results: Vec<Result<()>> = workers
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::Contract("client thread panicked".into()))))
            .collect();
        (driven, results)
    });
    if let Some(s) = server.as_mut() {
        s.stop();
    }

    let (driven, results) = outcome;
    match driven {
        Ok(mut state) => {
            state.events = shared.lock().events().to_vec();
            Ok(state)
        }
        // Prefer the client's own error, which keeps its structure, over the
        // coordinator's summary of it.
        Err((round, failed_client, summary)) => {
            let own = failed_client.and_then(|c| results.into_iter().nth(c)).and_then(Result::err);
            Err(match own {
                Some(e) => e,
                None => summary,
            }
            .in_round(round))
        }
    }
}

type DriveError = (usize, Option<usize>, Error);

fn drive(config: &FederatedConfig, shards: &[ClientShard], shared: &Shared, mut state: GlobalState) -> Result<GlobalState, DriveError> {
    let pooled_train = pooled(shards, |s| &s.train);
    let pooled_test = pooled(shards, |s| &s.test);
    let timeout = config.round_timeout_secs.map(Duration::from_secs);
    for round in state.round_index + 1..=config.num_rounds {
        let fail = |client: Option<usize>, e: Error| (round, client, e);
        let updates = match shared.wait_round(timeout) {
            RoundWait::Complete(u) => u,
            RoundWait::Failed(ClientFailure::Reported { client, message }) => {
                return Err(fail(Some(client), Error::Client { client, source: Box::new(Error::Contract(message)) }))
            }
            RoundWait::Failed(ClientFailure::Lost { client, error }) => {
                return Err(fail(Some(client), Error::Transport(error).for_client(client)))
            }
            RoundWait::TimedOut { missing } => {
                let client = missing[0];
                return Err(fail(Some(client), Error::Transport(TransportError::Timeout).for_client(client)));
            }
        };
        let global = aggregate(&updates, config.aggregation).map_err(|e| fail(None, e))?;
        if !global.is_finite() {
            return Err(fail(None, Error::NonFinite { op: "aggregate" }));
        }
        let metrics = RoundMetrics {
            round_index: round,
            clients: updates
                .iter()
                .map(|u| ClientMetrics {
                    client_id: u.client_id,
                    train_loss: u.mean_train_loss,
                    test_loss: u.mean_test_loss,
                    sample_count: u.sample_count,
                })
                .collect(),
            global_train_loss: evaluate(&global, &pooled_train).map_err(|e| fail(None, e))?,
            global_test_loss: evaluate(&global, &pooled_test).map_err(|e| fail(None, e))?,
        };
        log::info!(
            "round {round}: global train {:.5} test {:.5}",
            metrics.global_train_loss,
            metrics.global_test_loss
        );
        state.history.push(metrics);
        if let Some(dir) = &config.checkpoint_dir {
            let io = |e: Error| fail(None, e);
            write_checkpoint(&dir.join(checkpoint_name(round)), &global).map_err(io)?;
            let file = std::fs::File::create(dir.join(METRICS_FILE)).map_err(|e| io(e.into()))?;
            write_metrics_csv(file, &state.history).map_err(io)?;
        }
        state.round_index = round;
        state.global_params = global.clone();
        shared.advance(global);
    }
    Ok(state)
}

/// Shared handle to a coordinator for driving clients by hand.
pub fn coordinator_for(state: &GlobalState, config: &FederatedConfig) -> Arc<Shared> {
    Shared::new(Coordinator::new(
        state.global_params.clone(),
        config.num_clients,
        config.num_rounds,
        state.round_index + 1,
    ))
}
