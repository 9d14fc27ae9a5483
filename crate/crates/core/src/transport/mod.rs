//! Round messages, the `FLAM` wire format, checkpoints and the in-process
//! client/server channel.
//!
//! Wire layout (all integers little-endian):
//!
//! ```text
//! "FLAM"            4 bytes
//! version           u16   (currently 1)
//! kind              u8    (0 = GlobalModel, 1 = LocalUpdate)
//! epoch             u32
//! round             u32
//! client_id         u32   (0xFFFF_FFFF for GlobalModel)
//! block count       u32
//! per block         u16 name length, UTF-8 name, u32 rows, u32 cols
//! data              f64 per parameter, manifest order
//! crc32             u32 over every preceding byte
//! ```

mod channel;
mod checkpoint;
mod wire;

pub use channel::{channel, ChannelError, ClientEndpoint, ServerEndpoint, TrafficStats};
pub use checkpoint::Checkpoint;
pub use wire::{deserialize, encoded_len, serialize, WireError, HEADER_LEN, TRAILER_LEN, WIRE_VERSION};

use crate::model::ParamVector;

/// Who sent a message. Neither variant can carry features or labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MessageKind {
    GlobalModel,
    LocalUpdate { client_id: u32 },
}

/// Parameters exchanged in one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundMessage {
    pub kind: MessageKind,
    pub epoch: u32,
    pub round: u32,
    pub params: ParamVector,
}

impl RoundMessage {
    pub fn global(epoch: u32, round: u32, params: ParamVector) -> Self {
        Self {
            kind: MessageKind::GlobalModel,
            epoch,
            round,
            params,
        }
    }

    pub fn local(client_id: u32, epoch: u32, round: u32, params: ParamVector) -> Self {
        Self {
            kind: MessageKind::LocalUpdate { client_id },
            epoch,
            round,
            params,
        }
    }

    pub fn client_id(&self) -> Option<u32> {
        match self.kind {
            MessageKind::GlobalModel => None,
            MessageKind::LocalUpdate { client_id } => Some(client_id),
        }
    }
}
