use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use super::wire::{deserialize, serialize, WireError};
use super::{MessageKind, RoundMessage};

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("synchronization timeout in epoch {epoch} round {round}: {received} of {expected} updates")]
    SyncTimeout {
        epoch: u32,
        round: u32,
        received: usize,
        expected: usize,
    },
    #[error("peer disconnected")]
    Disconnected,
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Bytes and messages moved so far, in each direction.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrafficStats {
    pub bytes_up: u64,
    pub bytes_down: u64,
    pub messages_up: u64,
    pub messages_down: u64,
}

/// Server side: one downlink per client, one shared uplink.
pub struct ServerEndpoint {
    downlinks: Vec<Sender<Arc<[u8]>>>,
    uplink: Receiver<Vec<u8>>,
    timeout: Duration,
    traffic: TrafficStats,
}

/// Client side of the channel. Only serialized parameter messages cross it.
pub struct ClientEndpoint {
    client_id: u32,
    downlink: Receiver<Arc<[u8]>>,
    uplink: Sender<Vec<u8>>,
}

/// Connects a server to `num_clients` clients with ids `0..num_clients`.
pub fn channel(num_clients: usize, timeout: Duration) -> (ServerEndpoint, Vec<ClientEndpoint>) {
    let (up_tx, up_rx) = mpsc::channel();
    let mut downlinks = Vec::with_capacity(num_clients);
    let mut clients = Vec::with_capacity(num_clients);
    for id in 0..num_clients {
        let (tx, rx) = mpsc::channel();
        downlinks.push(tx);
        clients.push(ClientEndpoint {
            client_id: id as u32,
            downlink: rx,
            uplink: up_tx.clone(),
        });
    }
    let server = ServerEndpoint {
        downlinks,
        uplink: up_rx,
        timeout,
        traffic: TrafficStats::default(),
    };
    (server, clients)
}

impl ServerEndpoint {
    pub fn num_clients(&self) -> usize {
        self.downlinks.len()
    }

    pub fn traffic(&self) -> TrafficStats {
        self.traffic
    }

    /// Sends the global model to every client. Returns the encoded size of
    /// one copy.
    pub fn broadcast(&mut self, msg: &RoundMessage) -> Result<usize, ChannelError> {
        if msg.kind != MessageKind::GlobalModel {
            return Err(ChannelError::Protocol("server may only broadcast the global model".into()));
        }
        let bytes: Arc<[u8]> = serialize(msg).into();
        for tx in &self.downlinks {
            tx.send(Arc::clone(&bytes)).map_err(|_| ChannelError::Disconnected)?;
            self.traffic.bytes_down += bytes.len() as u64;
            self.traffic.messages_down += 1;
        }
        Ok(bytes.len())
    }

    /// Waits for exactly one local update per client for `(epoch, round)`
    /// and returns them ordered by client id.
    pub fn collect(&mut self, epoch: u32, round: u32) -> Result<Vec<RoundMessage>, ChannelError> {
        let expected = self.num_clients();
        let mut slots: Vec<Option<RoundMessage>> = vec![None; expected];
        let mut received = 0;
        while received < expected {
            let bytes = self.next_update().ok_or(ChannelError::SyncTimeout {
                epoch,
                round,
                received,
                expected,
            })?;
            self.traffic.bytes_up += bytes.len() as u64;
            self.traffic.messages_up += 1;
            let msg = deserialize(&bytes)?;
            let client = match msg.kind {
                MessageKind::LocalUpdate { client_id } => client_id as usize,
                MessageKind::GlobalModel => {
                    return Err(ChannelError::Protocol("client sent a global model".into()));
                }
            };
            if (msg.epoch, msg.round) != (epoch, round) {
                return Err(ChannelError::Protocol(format!(
                    "client {client} sent epoch {} round {} during epoch {epoch} round {round}",
                    msg.epoch, msg.round
                )));
            }
            let slot = slots
                .get_mut(client)
                .ok_or_else(|| ChannelError::Protocol(format!("unknown client {client}")))?;
            if slot.is_some() {
                return Err(ChannelError::Protocol(format!(
                    "duplicate update from client {client} in round {round}"
                )));
            }
            *slot = Some(msg);
            received += 1;
        }
        Ok(slots.into_iter().flatten().collect())
    }

    fn next_update(&self) -> Option<Vec<u8>> {
        if let Ok(bytes) = self.uplink.try_recv() {
            return Some(bytes);
        }
        // no clock on wasm32-unknown-unknown: only already-delivered updates count
        if cfg!(target_arch = "wasm32") {
            return None;
        }
        self.uplink.recv_timeout(self.timeout).ok()
    }
}

impl ClientEndpoint {
    pub fn client_id(&self) -> u32 {
        self.client_id
    }

    pub fn receive(&mut self) -> Result<RoundMessage, ChannelError> {
        let bytes = self.downlink.recv().map_err(|_| ChannelError::Disconnected)?;
        let msg = deserialize(&bytes)?;
        if msg.kind != MessageKind::GlobalModel {
            return Err(ChannelError::Protocol("client received a non-global message".into()));
        }
        Ok(msg)
    }

    /// Sends a local update; returns its encoded size.
    pub fn send(&mut self, msg: &RoundMessage) -> Result<usize, ChannelError> {
        if msg.client_id() != Some(self.client_id) {
            return Err(ChannelError::Protocol(format!(
                "client {} may only send its own updates",
                self.client_id
            )));
        }
        let bytes = serialize(msg);
        let n = bytes.len();
        self.uplink.send(bytes).map_err(|_| ChannelError::Disconnected)?;
        Ok(n)
    }

    /// Sends an arbitrary pre-encoded frame. Exists so tests can exercise the
    /// server's protocol checks.
    #[doc(hidden)]
    pub fn send_raw(&mut self, bytes: Vec<u8>) -> Result<(), ChannelError> {
        self.uplink.send(bytes).map_err(|_| ChannelError::Disconnected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BlockShape, ParamVector};

    fn params(v: f64) -> ParamVector {
        ParamVector::new(vec![BlockShape::new("w", 3, 1)], vec![v; 3]).unwrap()
    }

    #[test]
    fn round_trip_accounting() {
        let (mut server, mut clients) = channel(3, Duration::from_secs(1));
        let global = RoundMessage::global(1, 0, params(0.0));
        let size = server.broadcast(&global).unwrap();
        let mut up = 0;
        for c in clients.iter_mut() {
            let got = c.receive().unwrap();
            assert_eq!(got, global);
            let id = c.client_id();
            up += c.send(&RoundMessage::local(id, 1, 0, params(f64::from(id)))).unwrap();
        }
        let updates = server.collect(1, 0).unwrap();
        assert_eq!(updates.iter().map(|m| m.client_id().unwrap()).collect::<Vec<_>>(), vec![0, 1, 2]);
        let t = server.traffic();
        assert_eq!(t.bytes_down, 3 * size as u64);
        assert_eq!(t.bytes_up, up as u64);
        assert_eq!((t.messages_down, t.messages_up), (3, 3));
    }

    #[test]
    fn collect_orders_by_client_id() {
        let (mut server, mut clients) = channel(3, Duration::from_secs(1));
        for c in clients.iter_mut().rev() {
            let id = c.client_id();
            c.send(&RoundMessage::local(id, 0, 0, params(1.0))).unwrap();
        }
        let ids: Vec<_> = server.collect(0, 0).unwrap().iter().map(|m| m.client_id().unwrap()).collect();
        assert_eq!(ids, vec![0, 1, 2]);
    }

    #[test]
    fn duplicate_update_is_protocol_error() {
        let (mut server, mut clients) = channel(2, Duration::from_millis(50));
        let msg = RoundMessage::local(0, 0, 4, params(1.0));
        clients[0].send(&msg).unwrap();
        clients[0].send(&msg).unwrap();
        assert!(matches!(server.collect(0, 4), Err(ChannelError::Protocol(_))));
    }

    #[test]
    fn missing_update_times_out() {
        let (mut server, mut clients) = channel(2, Duration::from_millis(20));
        clients[1].send(&RoundMessage::local(1, 0, 0, params(1.0))).unwrap();
        match server.collect(0, 0) {
            Err(ChannelError::SyncTimeout { received, expected, .. }) => assert_eq!((received, expected), (1, 2)),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn stale_round_rejected() {
        let (mut server, mut clients) = channel(1, Duration::from_millis(20));
        clients[0].send(&RoundMessage::local(0, 0, 2, params(1.0))).unwrap();
        assert!(matches!(server.collect(0, 3), Err(ChannelError::Protocol(_))));
    }

    #[test]
    fn client_cannot_impersonate() {
        let (_server, mut clients) = channel(2, Duration::from_millis(20));
        assert!(clients[0].send(&RoundMessage::local(1, 0, 0, params(1.0))).is_err());
        assert!(clients[0].send(&RoundMessage::global(0, 0, params(1.0))).is_err());
    }

    #[test]
    fn server_only_broadcasts_global() {
        let (mut server, _clients) = channel(1, Duration::from_millis(20));
        assert!(server.broadcast(&RoundMessage::local(0, 0, 0, params(1.0))).is_err());
    }
}
