use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tasks::Pair;
use crate::vocab::{TokenId, Vocabulary, EOS, PAD};

/// A training pair as ids. The target ends with EOS.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EncodedPair {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
}

impl EncodedPair {
    pub fn encode(vocab: &Vocabulary, pair: &Pair) -> Self {
        let mut tgt = vocab.encode(&pair.output);
        tgt.push(EOS);
        EncodedPair {
            src: vocab.encode(&pair.input),
            tgt,
        }
    }

    pub fn encode_all(vocab: &Vocabulary, pairs: &[Pair]) -> Vec<Self> {
        pairs.iter().map(|p| Self::encode(vocab, p)).collect()
    }
}

/// Padded id matrices with masks marking the real tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub src: Vec<Vec<TokenId>>,
    pub tgt: Vec<Vec<TokenId>>,
    pub src_mask: Vec<Vec<bool>>,
    pub tgt_mask: Vec<Vec<bool>>,
}

fn pad(rows: Vec<&[TokenId]>) -> (Vec<Vec<TokenId>>, Vec<Vec<bool>>) {
    let width = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let mut ids = Vec::with_capacity(rows.len());
    let mut mask = Vec::with_capacity(rows.len());
    for r in rows {
        let mut row = r.to_vec();
        row.resize(width, PAD);
        let mut m = vec![true; r.len()];
        m.resize(width, false);
        ids.push(row);
        mask.push(m);
    }
    (ids, mask)
}

impl Batch {
    pub fn from_pairs(pairs: &[&EncodedPair]) -> Self {
        let (src, src_mask) = pad(pairs.iter().map(|p| p.src.as_slice()).collect());
        let (tgt, tgt_mask) = pad(pairs.iter().map(|p| p.tgt.as_slice()).collect());
        Batch {
            src,
            tgt,
            src_mask,
            tgt_mask,
        }
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// Source row `i` without padding.
    pub fn src_row(&self, i: usize) -> &[TokenId] {
        let n = self.src_mask[i].iter().filter(|&&m| m).count();
        &self.src[i][..n]
    }

    pub fn tgt_row(&self, i: usize) -> &[TokenId] {
        let n = self.tgt_mask[i].iter().filter(|&&m| m).count();
        &self.tgt[i][..n]
    }
}

const SHUFFLE_SALT: u64 = 1;
const BUCKET_SALT: u64 = 2;

/// Batches per sorting pool when length bucketing is on.
pub const BUCKET_POOL: usize = 50;

fn epoch_order(n: usize, seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(seed, SHUFFLE_SALT, epoch));
    order.shuffle(&mut rng);
    order
}

/// Sorts each pool of `BUCKET_POOL` batches by source length, then shuffles
/// the full batches among themselves. The short final batch stays last.
fn bucket_order(pairs: &[EncodedPair], mut order: Vec<usize>, batch_size: usize, seed: u64, epoch: u64) -> Vec<usize> {
    for pool in order.chunks_mut(batch_size * BUCKET_POOL) {
        pool.sort_by_key(|&i| (pairs[i].src.len(), pairs[i].tgt.len()));
    }
    let full = order.len() / batch_size;
    let mut chunks: Vec<&[usize]> = order[..full * batch_size].chunks(batch_size).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(seed, BUCKET_SALT, epoch));
    chunks.shuffle(&mut rng);
    let mut out: Vec<usize> = chunks.concat();
    out.extend_from_slice(&order[full * batch_size..]);
    out
}

/// The batches of one epoch: a fresh shuffle seeded by `(seed, epoch)`,
/// cut into `batch_size` chunks with a short final chunk.
pub fn epoch_batches(pairs: &[EncodedPair], batch_size: usize, seed: u64, epoch: u64) -> Vec<Batch> {
    assert!(batch_size > 0, "batch_size must be positive");
    let order = epoch_order(pairs.len(), seed, epoch);
    order
        .chunks(batch_size)
        .map(|idx| Batch::from_pairs(&idx.iter().map(|&i| &pairs[i]).collect::<Vec<_>>()))
        .collect()
}

/// First-epoch batches.
pub fn make_batches(pairs: &[EncodedPair], batch_size: usize, seed: u64) -> Vec<Batch> {
    epoch_batches(pairs, batch_size, seed, 0)
}

/// Endless batch sequence addressed by global step, so a resumed run sees
/// the same batches as an uninterrupted one.
#[derive(Debug, Clone)]
pub struct BatchStream {
    pairs: Vec<EncodedPair>,
    batch_size: usize,
    seed: u64,
    length_buckets: bool,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchStream {
    pub fn new(pairs: Vec<EncodedPair>, batch_size: usize, seed: u64) -> Self {
        assert!(!pairs.is_empty() && batch_size > 0);
        BatchStream {
            pairs,
            batch_size,
            seed,
            length_buckets: false,
            cached: None,
        }
    }

    /// Groups pairs of similar length into the same batch.
    pub fn with_length_buckets(mut self, on: bool) -> Self {
        self.length_buckets = on;
        self
    }

    pub fn batches_per_epoch(&self) -> u64 {
        self.pairs.len().div_ceil(self.batch_size) as u64
    }

    /// The batch consumed by optimizer step `step` (0-based).
    pub fn batch_for_step(&mut self, step: u64) -> Batch {
        let per = self.batches_per_epoch();
        let (epoch, k) = (step / per, (step % per) as usize);
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order = epoch_order(self.pairs.len(), self.seed, epoch);
            if self.length_buckets {
                order = bucket_order(&self.pairs, order, self.batch_size, self.seed, epoch);
            }
            self.cached = Some((epoch, order));
        }
        let order = &self.cached.as_ref().expect("cached").1;
        let end = ((k + 1) * self.batch_size).min(order.len());
        let chosen: Vec<&EncodedPair> = order[k * self.batch_size..end].iter().map(|&i| &self.pairs[i]).collect();
        Batch::from_pairs(&chosen)
    }
}
