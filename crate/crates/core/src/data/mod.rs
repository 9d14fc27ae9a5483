//! Client datasets, per-epoch round shards, synthetic non-iid generation and
//! CSV ingestion.

mod csv_io;
mod synthetic;

pub use csv_io::{load_csv, write_csv, write_metadata, DatasetMetadata};
pub use synthetic::{
    apply_skew, generate_base, generate_task, BaseDistribution, EvalSplit, EvalSplitSpec, SkewSpec,
    SyntheticSpec, SyntheticTask,
};

use crate::error::{Error, Result};
use crate::model::LabeledBatch;
use crate::numkit::{Matrix, Rng};

/// One client's private samples.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset {
    pub client_id: usize,
    pub features: Matrix,
    pub labels: Vec<usize>,
    pub num_classes: usize,
    pub domain_tag: String,
}

impl ClientDataset {
    pub fn new(
        client_id: usize,
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        domain_tag: impl Into<String>,
    ) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset labels",
                expected: features.rows(),
                found: labels.len(),
            });
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::Validation(format!(
                "client {client_id}: label {bad} out of range for {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::Validation(format!("client {client_id}: non-finite feature")));
        }
        Ok(Self {
            client_id,
            features,
            labels,
            num_classes,
            domain_tag: domain_tag.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn as_batch(&self) -> Result<LabeledBatch> {
        LabeledBatch::new(self.features.clone(), self.labels.clone())
    }
}

/// The samples a client uses in one communication round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundShard {
    pub round: usize,
    /// Row indices into the client's dataset, in visiting order.
    pub indices: Vec<usize>,
    pub batch: LabeledBatch,
}

impl RoundShard {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Consecutive mini-batches of at most `batch_size` rows; the last one may
    /// be short, so `⌈len / batch_size⌉` batches in total.
    pub fn batches(&self, batch_size: usize) -> impl Iterator<Item = LabeledBatch> + '_ {
        let n = self.len();
        let bs = batch_size.max(1);
        (0..n.div_ceil(bs)).map(move |k| self.batch.slice(k * bs, ((k + 1) * bs).min(n)))
    }
}

/// Sizes of `rounds` near-equal chunks of `n`; the first `n mod rounds`
/// chunks carry one extra sample.
pub fn shard_sizes(n: usize, rounds: usize) -> Vec<usize> {
    let (base, extra) = (n / rounds, n % rounds);
    (0..rounds).map(|t| base + usize::from(t < extra)).collect()
}

/// Permutes the client's data for `epoch` and splits it into `rounds`
/// disjoint shards covering every sample once.
pub fn shard_epoch(ds: &ClientDataset, rounds: usize, epoch: usize, seed: u64) -> Result<Vec<RoundShard>> {
    if rounds == 0 {
        return Err(Error::InvalidInput("rounds per epoch must be at least 1".into()));
    }
    if ds.len() < rounds {
        return Err(Error::InvalidInput(format!(
            "client {} has {} samples, fewer than {rounds} rounds",
            ds.client_id,
            ds.len()
        )));
    }
    let mut rng = Rng::keyed(seed, "shard", &[ds.client_id as u64, epoch as u64]);
    let perm = rng.permutation(ds.len());
    let mut shards = Vec::with_capacity(rounds);
    let mut at = 0;
    for (t, size) in shard_sizes(ds.len(), rounds).into_iter().enumerate() {
        let indices = perm[at..at + size].to_vec();
        at += size;
        let batch = LabeledBatch {
            features: ds.features.select_rows(&indices),
            labels: indices.iter().map(|&i| ds.labels[i]).collect(),
        };
        shards.push(RoundShard {
            round: t,
            indices,
            batch,
        });
    }
    Ok(shards)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn dataset(n: usize) -> ClientDataset {
        let feats = (0..n * 2).map(|i| i as f64).collect();
        ClientDataset::new(3, Matrix::from_vec(n, 2, feats).unwrap(), (0..n).map(|i| i % 2).collect(), 2, "t")
            .unwrap()
    }

    #[test]
    fn even_split() {
        let shards = shard_epoch(&dataset(100), 20, 1, 0).unwrap();
        assert!(shards.iter().all(|s| s.len() == 5));
    }

    #[test]
    fn remainder_goes_to_earliest_shards() {
        let sizes: Vec<_> = shard_epoch(&dataset(7), 3, 1, 0).unwrap().iter().map(RoundShard::len).collect();
        assert_eq!(sizes, vec![3, 2, 2]);
    }

    #[test]
    fn single_round_is_whole_permutation() {
        let ds = dataset(10);
        let shards = shard_epoch(&ds, 1, 2, 9).unwrap();
        assert_eq!(shards.len(), 1);
        let mut idx = shards[0].indices.clone();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
        for (k, &i) in shards[0].indices.iter().enumerate() {
            assert_eq!(shards[0].batch.features.row(k), ds.features.row(i));
            assert_eq!(shards[0].batch.labels[k], ds.labels[i]);
        }
    }

    #[test]
    fn too_few_samples_rejected() {
        assert!(shard_epoch(&dataset(3), 4, 1, 0).is_err());
        assert!(shard_epoch(&dataset(3), 0, 1, 0).is_err());
    }

    #[test]
    fn epochs_reshuffle() {
        let ds = dataset(32);
        let a = shard_epoch(&ds, 1, 1, 5).unwrap();
        let b = shard_epoch(&ds, 1, 2, 5).unwrap();
        assert_ne!(a[0].indices, b[0].indices);
    }

    #[test]
    fn batches_cover_shard_with_short_tail() {
        let shards = shard_epoch(&dataset(10), 1, 1, 1).unwrap();
        let sizes: Vec<_> = shards[0].batches(4).map(|b| b.len()).collect();
        assert_eq!(sizes, vec![4, 4, 2]);
    }

    proptest! {
        #[test]
        fn shards_partition_dataset(n in 1usize..300, t in 1usize..40, epoch in 1usize..5) {
            prop_assume!(n >= t);
            let shards = shard_epoch(&dataset(n), t, epoch, 17).unwrap();
            let sizes: Vec<_> = shards.iter().map(RoundShard::len).collect();
            let (lo, hi) = (*sizes.iter().min().unwrap(), *sizes.iter().max().unwrap());
            prop_assert!(hi - lo <= 1);
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            let mut all: Vec<usize> = shards.iter().flat_map(|s| s.indices.clone()).collect();
            all.sort_unstable();
            prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        }
    }
}
