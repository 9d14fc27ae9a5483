use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{BlockShape, ParamVector};
use crate::numkit::{Matrix, Vector};
use crate::transform::AffineTransform;

use super::{deserialize, serialize, MessageKind, RoundMessage};

/// A global model on disk: a `GlobalModel` message whose manifest may carry
/// extra `client{i}.A` / `client{i}.b` blocks for per-client transforms.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: u32,
    pub round: u32,
    pub params: ParamVector,
    pub transforms: BTreeMap<usize, AffineTransform>,
}

fn transform_block(name: &str) -> Option<(usize, &str)> {
    let rest = name.strip_prefix("client")?;
    let (id, part) = rest.split_once('.')?;
    let id = id.parse().ok()?;
    matches!(part, "A" | "b").then_some((id, part))
}

impl Checkpoint {
    pub fn new(params: ParamVector) -> Self {
        Self {
            epoch: 0,
            round: 0,
            params,
            transforms: BTreeMap::new(),
        }
    }

    pub fn to_message(&self) -> RoundMessage {
        let mut blocks = self.params.clone().into_blocks();
        for (id, f) in &self.transforms {
            let d = f.dim();
            blocks.push((BlockShape::new(format!("client{id}.A"), d, d), f.a.as_slice().to_vec()));
            blocks.push((BlockShape::new(format!("client{id}.b"), d, 1), f.b.as_slice().to_vec()));
        }
        let params = ParamVector::from_blocks(blocks).expect("blocks are consistent");
        RoundMessage::global(self.epoch, self.round, params)
    }

    pub fn from_message(msg: RoundMessage) -> Result<Self> {
        if msg.kind != MessageKind::GlobalModel {
            return Err(Error::Validation("checkpoint must hold a global model".into()));
        }
        let mut model = Vec::new();
        let mut parts: BTreeMap<usize, (Option<Vec<f64>>, Option<Vec<f64>>)> = BTreeMap::new();
        for (shape, values) in msg.params.into_blocks() {
            match transform_block(&shape.name) {
                Some((id, "A")) => parts.entry(id).or_default().0 = Some(values),
                Some((id, _)) => parts.entry(id).or_default().1 = Some(values),
                None => model.push((shape, values)),
            }
        }
        let mut transforms = BTreeMap::new();
        for (id, (a, b)) in parts {
            let (Some(a), Some(b)) = (a, b) else {
                return Err(Error::Validation(format!("client{id} transform is incomplete")));
            };
            let d = b.len();
            let f = AffineTransform::new(Matrix::from_vec(d, d, a)?, Vector::from(b))?;
            transforms.insert(id, f);
        }
        Ok(Self {
            epoch: msg.epoch,
            round: msg.round,
            params: ParamVector::from_blocks(model)?,
            transforms,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        serialize(&self.to_message())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        Self::from_message(deserialize(bytes)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transforms_survive_round_trip() {
        let params = ParamVector::new(vec![BlockShape::new("layer0.weight", 2, 2)], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut ck = Checkpoint::new(params);
        ck.epoch = 3;
        ck.transforms.insert(
            4,
            AffineTransform::new(Matrix::diag(&[2.0, 0.5]), Vector::from(vec![0.1, -0.1])).unwrap(),
        );
        ck.transforms.insert(0, AffineTransform::identity(2));
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        let names: Vec<_> = ck.to_message().params.manifest().iter().map(|b| b.name.clone()).collect();
        assert_eq!(names, ["layer0.weight", "client0.A", "client0.b", "client4.A", "client4.b"]);
    }

    #[test]
    fn incomplete_transform_rejected() {
        let params = ParamVector::from_blocks(vec![(BlockShape::new("client1.A", 1, 1), vec![1.0])]).unwrap();
        assert!(Checkpoint::from_message(RoundMessage::global(0, 0, params)).is_err());
    }
}
