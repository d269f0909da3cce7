//! Zero-padded, masked mini-batches of variable-length sequences.

use crate::error::{Error, Result};
use crate::hsic::SampleSet;
use crate::numerics::Matrix;

/// One cycle after channel selection, scaling and subsampling:
/// `len x dim` values in time-major order plus its capacity label.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub cycle_index: usize,
    pub dim: usize,
    pub values: Vec<f64>,
    pub label: f64,
}

impl Sequence {
    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.values.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Sequences right-padded with zeros to a common length.
///
/// `features` is `n x max_len x dim`, row-major. Entries past each valid
/// length are exactly zero and the mask row is `lengths[i]` ones followed by
/// zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct PaddedBatch {
    n: usize,
    max_len: usize,
    dim: usize,
    features: Vec<f64>,
    lengths: Vec<usize>,
    mask: Vec<u8>,
    labels: Vec<f64>,
    cycle_indices: Vec<usize>,
    x_repr: SampleSet,
}

impl PaddedBatch {
    pub fn from_sequences(seqs: &[&Sequence]) -> Result<Self> {
        Self::padded_to(seqs, 0)
    }

    /// Pads to `max(min_len, longest sequence)` steps.
    pub fn padded_to(seqs: &[&Sequence], min_len: usize) -> Result<Self> {
        let first = seqs
            .first()
            .ok_or_else(|| Error::invalid("cannot batch zero sequences"))?;
        let dim = first.dim;
        if dim == 0 {
            return Err(Error::invalid("sequences must have at least one channel"));
        }
        for s in seqs {
            if s.dim != dim || s.values.len() % dim != 0 {
                return Err(Error::shape(format!(
                    "cycle {} has {} values for {} channels, batch uses {dim}",
                    s.cycle_index,
                    s.values.len(),
                    s.dim
                )));
            }
            if s.is_empty() {
                return Err(Error::invalid(format!(
                    "cycle {} is a zero-length sequence",
                    s.cycle_index
                )));
            }
        }
        let n = seqs.len();
        let max_len = seqs.iter().map(|s| s.len()).max().unwrap_or(0).max(min_len);
        let stride = max_len * dim;
        let mut features = vec![0.0; n * stride];
        let mut mask = vec![0u8; n * max_len];
        for (i, s) in seqs.iter().enumerate() {
            features[i * stride..i * stride + s.values.len()].copy_from_slice(&s.values);
            mask[i * max_len..i * max_len + s.len()].fill(1);
        }
        let x_repr = SampleSet::new(Matrix::from_vec(n, stride, features.clone())?)?;
        Ok(PaddedBatch {
            n,
            max_len,
            dim,
            features,
            lengths: seqs.iter().map(|s| s.len()).collect(),
            mask,
            labels: seqs.iter().map(|s| s.label).collect(),
            cycle_indices: seqs.iter().map(|s| s.cycle_index).collect(),
            x_repr,
        })
    }

    /// Same batch with `extra` more zero steps appended to every row.
    pub fn with_extra_padding(&self, extra: usize) -> PaddedBatch {
        let seqs = self.sequences();
        let refs: Vec<&Sequence> = seqs.iter().collect();
        PaddedBatch::padded_to(&refs, self.max_len + extra).expect("valid batch stays valid")
    }

    /// Valid prefixes of every row.
    pub fn sequences(&self) -> Vec<Sequence> {
        (0..self.n)
            .map(|i| Sequence {
                cycle_index: self.cycle_indices[i],
                dim: self.dim,
                values: self.valid_features(i).to_vec(),
                label: self.labels[i],
            })
            .collect()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lengths(&self) -> &[usize] {
        &self.lengths
    }

    pub fn labels(&self) -> &[f64] {
        &self.labels
    }

    pub fn cycle_indices(&self) -> &[usize] {
        &self.cycle_indices
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    /// Padded `max_len x dim` block of sequence `i`.
    pub fn row(&self, i: usize) -> &[f64] {
        let stride = self.max_len * self.dim;
        &self.features[i * stride..(i + 1) * stride]
    }

    pub fn valid_features(&self, i: usize) -> &[f64] {
        &self.row(i)[..self.lengths[i] * self.dim]
    }

    pub fn mask_row(&self, i: usize) -> &[u8] {
        &self.mask[i * self.max_len..(i + 1) * self.max_len]
    }

    /// Flattened padded feature blocks, one sample per sequence.
    pub fn x_repr(&self) -> &SampleSet {
        &self.x_repr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seq(len: usize, dim: usize, start: f64) -> Sequence {
        Sequence {
            cycle_index: len,
            dim,
            values: (0..len * dim).map(|k| start + k as f64 + 1.0).collect(),
            label: 1.0,
        }
    }

    #[test]
    fn pads_and_masks() {
        let a = seq(3, 2, 0.0);
        let b = seq(5, 2, 10.0);
        let batch = PaddedBatch::from_sequences(&[&a, &b]).unwrap();
        assert_eq!(batch.max_len(), 5);
        assert_eq!(batch.mask_row(0), &[1, 1, 1, 0, 0]);
        assert_eq!(batch.mask_row(1), &[1, 1, 1, 1, 1]);
        assert_eq!(&batch.row(0)[..6], &a.values[..]);
        assert!(batch.row(0)[6..].iter().all(|&v| v == 0.0));
        assert_eq!(batch.x_repr().n(), 2);
        assert_eq!(batch.x_repr().d(), 10);
    }

    #[test]
    fn single_sequence_is_unpadded() {
        let a = seq(4, 1, 0.0);
        let batch = PaddedBatch::from_sequences(&[&a]).unwrap();
        assert_eq!(batch.mask_row(0), &[1, 1, 1, 1]);
        assert_eq!(batch.row(0), &a.values[..]);
    }

    #[test]
    fn extra_padding_preserves_valid_region() {
        let a = seq(3, 2, 0.0);
        let b = seq(2, 2, 5.0);
        let batch = PaddedBatch::from_sequences(&[&a, &b]).unwrap();
        let wider = batch.with_extra_padding(4);
        assert_eq!(wider.max_len(), 7);
        assert_eq!(wider.sequences(), batch.sequences());
        assert_eq!(wider.mask_row(1), &[1, 1, 0, 0, 0, 0, 0]);
    }

    #[test]
    fn rejects_empty_and_ragged() {
        assert!(PaddedBatch::from_sequences(&[]).is_err());
        let empty = Sequence {
            cycle_index: 0,
            dim: 2,
            values: vec![],
            label: 1.0,
        };
        assert!(PaddedBatch::from_sequences(&[&empty]).is_err());
        let a = seq(3, 2, 0.0);
        let b = seq(3, 1, 0.0);
        assert!(PaddedBatch::from_sequences(&[&a, &b]).is_err());
    }
}
