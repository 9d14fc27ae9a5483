use thiserror::Error;

use crate::model::{BlockShape, ParamVector};

use super::{MessageKind, RoundMessage};

pub const MAGIC: &[u8; 4] = b"FLAM";
pub const WIRE_VERSION: u16 = 1;
/// Magic, version, kind, epoch, round, client id and block count.
pub const HEADER_LEN: usize = 4 + 2 + 1 + 4 + 4 + 4 + 4;
pub const TRAILER_LEN: usize = 4;
const NO_CLIENT: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad magic bytes")]
    BadMagic,
    #[error("unsupported wire version {0}")]
    UnsupportedVersion(u16),
    #[error("crc mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    CrcMismatch { stored: u32, computed: u32 },
    #[error("input truncated in {0}")]
    Truncated(&'static str),
    #[error("unknown message kind {0}")]
    UnknownKind(u8),
    #[error("malformed message: {0}")]
    Malformed(String),
}

/// Exact byte length of the encoding of `params`.
pub fn encoded_len(params: &ParamVector) -> usize {
    let names: usize = params.manifest().iter().map(|b| 2 + b.name.len() + 8).sum();
    HEADER_LEN + names + 8 * params.len() + TRAILER_LEN
}

pub fn serialize(msg: &RoundMessage) -> Vec<u8> {
    let mut out = Vec::with_capacity(encoded_len(&msg.params));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&WIRE_VERSION.to_le_bytes());
    let (kind, client) = match msg.kind {
        MessageKind::GlobalModel => (0u8, NO_CLIENT),
        MessageKind::LocalUpdate { client_id } => (1u8, client_id),
    };
    out.push(kind);
    out.extend_from_slice(&msg.epoch.to_le_bytes());
    out.extend_from_slice(&msg.round.to_le_bytes());
    out.extend_from_slice(&client.to_le_bytes());
    let manifest = msg.params.manifest();
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    for block in manifest {
        let name = block.name.as_bytes();
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name);
        out.extend_from_slice(&(block.rows as u32).to_le_bytes());
        out.extend_from_slice(&(block.cols as u32).to_le_bytes());
    }
    for v in msg.params.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, section: &'static str) -> Result<&'a [u8], WireError> {
        let end = self.at.checked_add(n).ok_or(WireError::Truncated(section))?;
        if end > self.bytes.len() {
            return Err(WireError::Truncated(section));
        }
        let s = &self.bytes[self.at..end];
        self.at = end;
        Ok(s)
    }

    fn u8(&mut self, section: &'static str) -> Result<u8, WireError> {
        Ok(self.take(1, section)?[0])
    }

    fn u16(&mut self, section: &'static str) -> Result<u16, WireError> {
        Ok(u16::from_le_bytes(self.take(2, section)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, section: &'static str) -> Result<u32, WireError> {
        Ok(u32::from_le_bytes(self.take(4, section)?.try_into().expect("4 bytes")))
    }
}

/// Parses the structure first (reporting truncation), then checks the CRC.
pub fn deserialize(bytes: &[u8]) -> Result<RoundMessage, WireError> {
    let mut r = Reader { bytes, at: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(WireError::BadMagic);
    }
    let version = r.u16("header")?;
    if version != WIRE_VERSION {
        return Err(WireError::UnsupportedVersion(version));
    }
    let kind = r.u8("header")?;
    let epoch = r.u32("header")?;
    let round = r.u32("header")?;
    let client = r.u32("header")?;
    let kind = match (kind, client) {
        (0, NO_CLIENT) => MessageKind::GlobalModel,
        (0, _) => return Err(WireError::Malformed("global model carries a client id".into())),
        (1, NO_CLIENT) => return Err(WireError::Malformed("local update without client id".into())),
        (1, client_id) => MessageKind::LocalUpdate { client_id },
        (k, _) => return Err(WireError::UnknownKind(k)),
    };
    let n_blocks = r.u32("header")? as usize;
    let mut manifest = Vec::with_capacity(n_blocks.min(1024));
    let mut total = 0usize;
    for _ in 0..n_blocks {
        let len = r.u16("manifest")? as usize;
        let name = std::str::from_utf8(r.take(len, "manifest")?)
            .map_err(|_| WireError::Malformed("block name is not UTF-8".into()))?
            .to_owned();
        let rows = r.u32("manifest")? as usize;
        let cols = r.u32("manifest")? as usize;
        total = rows
            .checked_mul(cols)
            .and_then(|n| total.checked_add(n))
            .ok_or_else(|| WireError::Malformed("block size overflow".into()))?;
        manifest.push(BlockShape { name, rows, cols });
    }
    let raw = r.take(total.checked_mul(8).ok_or(WireError::Truncated("data"))?, "data")?;
    let data: Vec<f64> = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let body_end = r.at;
    let stored = r.u32("crc")?;
    let computed = crc32fast::hash(&bytes[..body_end]);
    if stored != computed {
        return Err(WireError::CrcMismatch { stored, computed });
    }
    if r.at != bytes.len() {
        return Err(WireError::Malformed(format!("{} trailing bytes", bytes.len() - r.at)));
    }
    let params = ParamVector::new(manifest, data).map_err(|e| WireError::Malformed(e.to_string()))?;
    Ok(RoundMessage {
        kind,
        epoch,
        round,
        params,
    })
}
