//! Coordinator-side request handling, shared by every transport.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::protocol::{Endpoint, ErrorCode, Message, Status, TransportError};
use crate::model::ModelParams;
use crate::train::ClientUpdate;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Event {
    Broadcast { round: usize, client: usize },
    UpdateReceived { round: usize, client: usize },
    Aggregated { round: usize },
}

/// Why a client could not contribute to the open round.
#[derive(Debug, Clone, PartialEq)]
pub enum ClientFailure {
    Reported { client: usize, message: String },
    Lost { client: usize, error: TransportError },
}

impl ClientFailure {
    pub fn client(&self) -> usize {
        match self {
            ClientFailure::Reported { client, .. } | ClientFailure::Lost { client, .. } => *client,
        }
    }
}

#[derive(Debug)]
pub struct Coordinator {
    num_clients: usize,
    num_rounds: usize,
    /// Round accepting updates, 1-based. `num_rounds + 1` once finished.
    round: usize,
    global: ModelParams,
    pending: BTreeMap<usize, ClientUpdate>,
    failure: Option<ClientFailure>,
    aborted: bool,
    events: Vec<Event>,
}

fn reply_error(code: ErrorCode, message: impl Into<String>) -> Message {
    Message::Error {
        code,
        message: message.into(),
    }
}

impl Coordinator {
    /// A coordinator whose next open round is `first_round`.
    pub fn new(global: ModelParams, num_clients: usize, num_rounds: usize, first_round: usize) -> Self {
        Self {
            num_clients,
            num_rounds,
            round: first_round,
            global,
            pending: BTreeMap::new(),
            failure: None,
            aborted: false,
            events: Vec::new(),
        }
    }

    pub fn finished(&self) -> bool {
        self.round > self.num_rounds
    }

    pub fn status(&self) -> Status {
        Status {
            round: self.round,
            expected: self.num_clients,
            received: self.pending.keys().copied().collect(),
            finished: self.finished(),
        }
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn handle(&mut self, msg: Message) -> Message {
        if self.aborted && !matches!(msg, Message::GetStatus) {
            return reply_error(ErrorCode::Aborted, "federation aborted");
        }
        match msg {
            Message::GetGlobal { round, client_id } => {
                if client_id >= self.num_clients {
                    reply_error(ErrorCode::Rejected, format!("unknown client {client_id}"))
                } else if round == 0 || round > self.num_rounds {
                    reply_error(ErrorCode::Rejected, format!("no round {round}"))
                } else if round < self.round {
                    reply_error(ErrorCode::Rejected, format!("round {round} is closed"))
                } else if round > self.round {
                    Message::NotReady {
                        current_round: self.round,
                    }
                } else {
                    self.events.push(Event::Broadcast {
                        round,
                        client: client_id,
                    });
                    Message::GlobalParams {
                        round,
                        params: self.global.clone(),
                    }
                }
            }
            Message::PushUpdate { round, update } => {
                let c = update.client_id;
                if round != self.round || self.finished() {
                    reply_error(ErrorCode::Rejected, format!("round {round} is not open"))
                } else if c >= self.num_clients {
                    reply_error(ErrorCode::Rejected, format!("unknown client {c}"))
                } else if self.pending.contains_key(&c) {
                    reply_error(ErrorCode::Rejected, format!("client {c} already reported round {round}"))
                } else if update.params.dims != self.global.dims {
                    reply_error(ErrorCode::Rejected, format!("client {c} sent parameters of the wrong shape"))
                } else if update.sample_count == 0 || !update.params.is_finite() {
                    reply_error(ErrorCode::Rejected, format!("client {c} sent an unusable update"))
                } else {
                    self.events.push(Event::UpdateReceived { round, client: c });
                    self.pending.insert(c, update);
                    Message::Ack { round }
                }
            }
            Message::GetStatus => Message::Status(self.status()),
            Message::ReportFailure {
                round,
                client_id,
                message,
            } => {
                if self.failure.is_none() {
                    self.failure = Some(ClientFailure::Reported {
                        client: client_id,
                        message,
                    });
                }
                Message::Ack { round }
            }
            other => reply_error(
                ErrorCode::Rejected,
                format!("message kind {} is not a request", other.kind()),
            ),
        }
    }

    /// A connection that spoke for `client` went away. This only matters if
    /// the client still owes an update for the open round; returns whether
    /// it failed the round.
    pub fn client_lost(&mut self, client: usize, error: TransportError) -> bool {
        if self.finished() || self.aborted || self.pending.contains_key(&client) || self.failure.is_some() {
            return false;
        }
        self.failure = Some(ClientFailure::Lost { client, error });
        true
    }

    fn round_complete(&self) -> bool {
        self.pending.len() == self.num_clients
    }
}

/// A coordinator behind a lock, with a signal for round completion.
#[derive(Debug)]
pub struct Shared {
    inner: Mutex<Coordinator>,
    changed: Condvar,
}

pub enum RoundWait {
    Complete(Vec<ClientUpdate>),
    Failed(ClientFailure),
    TimedOut { missing: Vec<usize> },
}

impl Shared {
    pub fn new(coordinator: Coordinator) -> Arc<Self> {
        Arc::new(Self {
            inner: Mutex::new(coordinator),
            changed: Condvar::new(),
        })
    }

    pub fn lock(&self) -> MutexGuard<'_, Coordinator> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }

    pub fn handle(&self, msg: Message) -> Message {
        let reply = self.lock().handle(msg);
        self.changed.notify_all();
        reply
    }

    pub fn client_lost(&self, client: usize, error: TransportError) -> bool {
        let failed = self.lock().client_lost(client, error);
        self.changed.notify_all();
        failed
    }

    /// Blocks until every client has reported for the open round, one has
    /// failed, or `timeout` elapses. Completed updates are taken out.
    pub fn wait_round(&self, timeout: Option<Duration>) -> RoundWait {
        let deadline = timeout.map(|t| Instant::now() + t);
        let mut c = self.lock();
        loop {
            if let Some(f) = c.failure.clone() {
                return RoundWait::Failed(f);
            }
            if c.round_complete() {
                return RoundWait::Complete(std::mem::take(&mut c.pending).into_values().collect());
            }
            c = match deadline {
                None => self.changed.wait(c).unwrap_or_else(|p| p.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        let missing = (0..c.num_clients).filter(|k| !c.pending.contains_key(k)).collect();
                        return RoundWait::TimedOut { missing };
                    }
                    self.changed.wait_timeout(c, d - now).unwrap_or_else(|p| p.into_inner()).0
                }
            };
        }
    }

    /// Installs the aggregated parameters and opens the next round.
    pub fn advance(&self, global: ModelParams) {
        let mut c = self.lock();
        let closed = c.round;
        c.events.push(Event::Aggregated { round: closed });
        c.global = global;
        c.round += 1;
        drop(c);
        self.changed.notify_all();
    }

    /// Rejects all further requests so waiting clients stop.
    pub fn abort(&self) {
        self.lock().aborted = true;
        self.changed.notify_all();
    }
}

/// Direct calls into a [`Shared`] coordinator, no bytes involved.
#[derive(Clone)]
pub struct InProcessEndpoint {
    shared: Arc<Shared>,
}

impl InProcessEndpoint {
    pub fn new(shared: Arc<Shared>) -> Self {
        Self { shared }
    }
}

impl Endpoint for InProcessEndpoint {
    fn exchange(&mut self, request: Message) -> Result<Message, TransportError> {
        Ok(self.shared.handle(request))
    }
}
