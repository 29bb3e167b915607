//! TCP front end for a [`Shared`] coordinator.

use std::io::Write;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use super::protocol::{decode_body, encode_body, read_frame, write_frame, ErrorCode, Message, TransportError};
use super::service::Shared;

pub struct SocketServer {
    address: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl SocketServer {
    /// Binds `address` (port 0 picks a free port) and starts accepting.
    pub fn start(address: &str, shared: Arc<Shared>) -> std::io::Result<Self> {
        let listener = TcpListener::bind(address)?;
        let address = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let connections = Arc::new(Mutex::new(Vec::new()));
        let acceptor = {
            let (stop, connections) = (stop.clone(), connections.clone());
            std::thread::spawn(move || {
                for stream in listener.incoming() {
                    if stop.load(Ordering::SeqCst) {
                        break;
                    }
                    let stream = match stream {
                        Ok(s) => s,
                        Err(e) => {
                            log::warn!("accept failed: {e}");
                            continue;
                        }
                    };
                    let _ = stream.set_nodelay(true);
                    if let Ok(copy) = stream.try_clone() {
                        let mut open = connections.lock().unwrap_or_else(|p| p.into_inner());
                        // Shut-down sockets no longer have a peer.
                        open.retain(|c: &TcpStream| c.peer_addr().is_ok());
                        open.push(copy);
                    }
                    let shared = shared.clone();
                    std::thread::spawn(move || {
                        serve_connection(&stream, &shared);
                        // The clone kept for `stop` would otherwise hold it open.
                        let _ = stream.shutdown(Shutdown::Both);
                    });
                }
            })
        };
        Ok(Self {
            address,
            stop,
            connections,
            acceptor: Some(acceptor),
        })
    }

    pub fn address(&self) -> SocketAddr {
        self.address
    }

    /// Stops accepting and closes every open connection.
    pub fn stop(&mut self) {
        if self.stop.swap(true, Ordering::SeqCst) {
            return;
        }
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.address);
        if let Some(h) = self.acceptor.take() {
            let _ = h.join();
        }
        for c in self.connections.lock().unwrap_or_else(|p| p.into_inner()).drain(..) {
            let _ = c.shutdown(Shutdown::Both);
        }
    }
}

impl Drop for SocketServer {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Answers frames until the peer leaves. Malformed bodies get an error reply
/// and the connection stays usable; a connection that ends mid-frame is
/// reported against the client it last spoke for.
fn serve_connection(mut stream: &TcpStream, shared: &Shared) {
    let peer = stream.peer_addr().map(|a| a.to_string()).unwrap_or_default();
    let mut client: Option<usize> = None;
    let lost = |client: Option<usize>, error: TransportError| {
        if let Some(c) = client {
            if shared.client_lost(c, error.clone()) {
                log::warn!("connection {peer} for client {c} lost mid-round: {error}");
            } else {
                log::debug!("connection {peer} for client {c} closed");
            }
        }
    };
    loop {
        let body = match read_frame(&mut stream) {
            Ok(Some(body)) => body,
            Ok(None) => {
                lost(client, TransportError::Disconnected);
                return;
            }
            Err(e @ TransportError::Malformed(_)) => {
                log::warn!("connection {peer}: {e}");
                let reply = Message::Error {
                    code: ErrorCode::Malformed,
                    message: e.to_string(),
                };
                let _ = write_frame(&mut stream, &encode_body(&reply));
                let _ = stream.flush();
                lost(client, e);
                return;
            }
            Err(e) => {
                lost(client, e);
                return;
            }
        };
        let reply = match decode_body(&body) {
            Ok(msg) => {
                if let Some(c) = msg.client_id() {
                    client = Some(c);
                }
                shared.handle(msg)
            }
            Err(e) => {
                log::warn!("connection {peer}: {e}");
                Message::Error {
                    code: ErrorCode::Malformed,
                    message: e.to_string(),
                }
            }
        };
        if let Err(e) = write_frame(&mut stream, &encode_body(&reply)) {
            lost(client, e);
            return;
        }
    }
}
