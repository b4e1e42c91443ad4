//! Time-major, left-padded mini-batches of index sequences.

use crate::tokenizer::PAD_INDEX;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub steps: usize,
    pub batch: usize,
    /// `steps × batch`, element `(t, b)` at `t * batch + b`.
    pub indexes: Vec<u32>,
    pub mask: Vec<bool>,
}

impl TokenBatch {
    /// Left-pads every sequence to the longest one.
    pub fn from_sequences(seqs: &[&[u32]]) -> Self {
        let batch = seqs.len();
        let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut indexes = vec![PAD_INDEX; steps * batch];
        let mut mask = vec![false; steps * batch];
        for (b, s) in seqs.iter().enumerate() {
            let pad = steps - s.len();
            for (k, &ix) in s.iter().enumerate() {
                indexes[(pad + k) * batch + b] = ix;
                mask[(pad + k) * batch + b] = true;
            }
        }
        TokenBatch { steps, batch, indexes, mask }
    }

    /// A single already padded sequence as a batch of one.
    pub fn single(indexes: &[u32], mask: &[bool]) -> Self {
        TokenBatch { steps: indexes.len(), batch: 1, indexes: indexes.to_vec(), mask: mask.to_vec() }
    }

    #[inline]
    pub fn at(&self, t: usize, b: usize) -> (u32, bool) {
        let k = t * self.batch + b;
        (self.indexes[k], self.mask[k])
    }
}

/// Splits `seq` into consecutive pieces of at most `window` tokens.
pub fn chunk(seq: &[u32], window: usize) -> impl Iterator<Item = &[u32]> {
    seq.chunks(window.max(1))
}
