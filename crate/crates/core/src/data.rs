//! Sequences, parallel examples and padded training batches.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary, PAD};

/// A token-id sequence. PAD never appears inside; BOS/EOS are added by the
/// model at the batch/decode boundary and are not stored here.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sequence {
    pub ids: Vec<TokenId>,
}

impl Sequence {
    pub fn new(ids: Vec<TokenId>) -> Self {
        Sequence { ids }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    /// Validate against a vocabulary: nonempty, every id in range.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.ids.is_empty() {
            return Err(Error::Usage("empty sequence".into()));
        }
        if let Some(&bad) = self.ids.iter().find(|&&id| id >= vocab_size) {
            return Err(Error::Config(format!(
                "token id {bad} out of range for vocab of size {vocab_size}"
            )));
        }
        Ok(())
    }

    pub fn render(&self, vocab: &Vocabulary) -> String {
        self.ids
            .iter()
            .map(|&id| vocab.token(id).unwrap_or("<?>"))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

impl From<Vec<TokenId>> for Sequence {
    fn from(ids: Vec<TokenId>) -> Self {
        Sequence { ids }
    }
}

/// A source/target pair (an element of a parallel dataset).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParallelExample {
    pub source: Sequence,
    pub target: Sequence,
}

impl ParallelExample {
    pub fn new(source: Sequence, target: Sequence) -> Result<Self> {
        if source.is_empty() || target.is_empty() {
            return Err(Error::Usage("parallel example with empty side".into()));
        }
        Ok(ParallelExample { source, target })
    }
}

/// An ordered collection of parallel examples.
#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub examples: Vec<ParallelExample>,
}

impl Dataset {
    pub fn new(examples: Vec<ParallelExample>) -> Self {
        Dataset { examples }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn sources(&self) -> Vec<Sequence> {
        self.examples.iter().map(|e| e.source.clone()).collect()
    }
}

/// A padded mini-batch. `src[b, t]` is PAD for `t >= src_len[b]`, likewise
/// for targets. The dropout seed pins the masks used by a training step so
/// forward and backward see the same noise.
#[derive(Debug, Clone)]
pub struct Batch {
    pub src: Array2<TokenId>,
    pub src_len: Vec<usize>,
    pub tgt: Array2<TokenId>,
    pub tgt_len: Vec<usize>,
    pub dropout_seed: u64,
}

impl Batch {
    pub fn from_examples(examples: &[ParallelExample], dropout_seed: u64) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::Usage("cannot build a batch from zero examples".into()));
        }
        let pairs: Vec<(&Sequence, &Sequence)> =
            examples.iter().map(|e| (&e.source, &e.target)).collect();
        Self::from_pairs(&pairs, dropout_seed)
    }

    pub fn from_pairs(pairs: &[(&Sequence, &Sequence)], dropout_seed: u64) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Usage("cannot build a batch from zero examples".into()));
        }
        for (s, t) in pairs {
            if s.is_empty() || t.is_empty() {
                return Err(Error::Usage("batch contains an empty sequence".into()));
            }
        }
        let b = pairs.len();
        let max_s = pairs.iter().map(|(s, _)| s.len()).max().unwrap();
        let max_t = pairs.iter().map(|(_, t)| t.len()).max().unwrap();
        let mut src = Array2::from_elem((b, max_s), PAD);
        let mut tgt = Array2::from_elem((b, max_t), PAD);
        let mut src_len = Vec::with_capacity(b);
        let mut tgt_len = Vec::with_capacity(b);
        for (row, (s, t)) in pairs.iter().enumerate() {
            for (col, &id) in s.ids.iter().enumerate() {
                src[[row, col]] = id;
            }
            for (col, &id) in t.ids.iter().enumerate() {
                tgt[[row, col]] = id;
            }
            src_len.push(s.len());
            tgt_len.push(t.len());
        }
        Ok(Batch {
            src,
            src_len,
            tgt,
            tgt_len,
            dropout_seed,
        })
    }

    pub fn batch_size(&self) -> usize {
        self.src.nrows()
    }

    /// Number of scored target tokens (targets plus one EOS per example).
    pub fn target_tokens(&self) -> usize {
        self.tgt_len.iter().map(|l| l + 1).sum()
    }

    pub fn validate_for_vocab(&self, vocab_size: usize) -> Result<()> {
        for (row, &len) in self.src_len.iter().enumerate() {
            for col in 0..len {
                if self.src[[row, col]] >= vocab_size {
                    return Err(Error::Config(format!(
                        "source token id {} out of range (vocab {vocab_size})",
                        self.src[[row, col]]
                    )));
                }
            }
        }
        for (row, &len) in self.tgt_len.iter().enumerate() {
            for col in 0..len {
                if self.tgt[[row, col]] >= vocab_size {
                    return Err(Error::Config(format!(
                        "target token id {} out of range (vocab {vocab_size})",
                        self.tgt[[row, col]]
                    )));
                }
            }
        }
        Ok(())
    }
}
