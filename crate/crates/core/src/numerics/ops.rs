//! Value-level kernels shared by the tape's forward pass and by callers
//! that only need numbers.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

/// Marks real (`true`) and padding (`false`) positions of a sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mask(Vec<bool>);

impl Mask {
    pub fn new(entries: Vec<bool>) -> Result<Self> {
        if !entries.iter().any(|&b| b) {
            return Err(Error::contract("Mask::new", "every position is masked"));
        }
        Ok(Self(entries))
    }

    /// All `len` positions real.
    pub fn all(len: usize) -> Self {
        assert!(len > 0, "mask of length zero");
        Self(vec![true; len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn is_set(&self, i: usize) -> bool {
        self.0[i]
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    pub fn is_full(&self) -> bool {
        self.0.iter().all(|&b| b)
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.0
    }

    pub fn slice(&self, start: usize, end: usize) -> Result<Mask> {
        if start >= end || end > self.0.len() {
            return Err(Error::contract(
                "Mask::slice",
                format!("bad range {start}..{end}"),
            ));
        }
        Mask::new(self.0[start..end].to_vec())
    }
}

/// Softmax over the first index: every column of the output is a
/// distribution over the unmasked rows; masked rows are exactly zero.
pub fn masked_column_softmax(scores: &Matrix, mask: &Mask) -> Result<Matrix> {
    let (rows, cols) = scores.shape();
    if mask.len() != rows {
        return Err(Error::contract(
            "masked_column_softmax",
            format!("mask length {} for {rows} rows", mask.len()),
        ));
    }
    if mask.count() == 0 {
        return Err(Error::contract("masked_column_softmax", "all rows masked"));
    }
    let mut out = Matrix::zeros(rows, cols);
    for c in 0..cols {
        let max = (0..rows)
            .filter(|&r| mask.is_set(r))
            .map(|r| scores.get(r, c))
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for r in (0..rows).filter(|&r| mask.is_set(r)) {
            let e = (scores.get(r, c) - max).exp();
            out.set(r, c, e);
            total += e;
        }
        for r in (0..rows).filter(|&r| mask.is_set(r)) {
            out.set(r, c, out.get(r, c) / total);
        }
    }
    Ok(out)
}

/// Softmax of a plain score vector.
pub fn softmax(scores: &[f64]) -> Result<Vec<f64>> {
    let m = Matrix::column(scores)?;
    Ok(masked_column_softmax(&m, &Mask::all(scores.len()))?.into_vec())
}

/// Row-wise maximum with the winning column of each row (first
/// occurrence on ties).
pub fn rowwise_max(m: &Matrix) -> (Matrix, Vec<usize>) {
    let mut values = Vec::with_capacity(m.rows());
    let mut argmax = Vec::with_capacity(m.rows());
    for r in 0..m.rows() {
        let row = m.row(r);
        let mut best = 0;
        for (c, &x) in row.iter().enumerate().skip(1) {
            if x > row[best] {
                best = c;
            }
        }
        values.push(row[best]);
        argmax.push(best);
    }
    (Matrix::new(m.rows(), 1, values).expect("non-empty"), argmax)
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Index of the largest value, lowest index on exact ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_single_row() {
        let s = Matrix::zeros(4, 3);
        let a = masked_column_softmax(&s, &Mask::all(4)).unwrap();
        assert!(a.as_slice().iter().all(|&x| x == 0.25));
        let s = Matrix::from_rows(&[[3.0, -7.0, 100.0]]).unwrap();
        let a = masked_column_softmax(&s, &Mask::all(1)).unwrap();
        assert!(a.as_slice().iter().all(|&x| x == 1.0));
    }

    #[test]
    fn ln3_column() {
        let s = Matrix::column(&[0.0, 3f64.ln()]).unwrap();
        let a = masked_column_softmax(&s, &Mask::all(2)).unwrap();
        assert!((a.get(0, 0) - 0.25).abs() < 1e-15);
        assert!((a.get(1, 0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn masked_rows_are_zero() {
        let s = Matrix::from_rows(&[[1.0, 2.0], [5.0, -1.0], [0.0, 0.0]]).unwrap();
        let mask = Mask::new(vec![true, false, true]).unwrap();
        let a = masked_column_softmax(&s, &mask).unwrap();
        assert_eq!(a.row(1), &[0.0, 0.0]);
        for c in 0..2 {
            assert!((a.col(c).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_mask_rejected() {
        assert!(Mask::new(vec![false, false]).is_err());
        let s = Matrix::zeros(3, 1);
        assert!(masked_column_softmax(&s, &Mask::all(2)).is_err());
    }

    #[test]
    fn large_scores_do_not_overflow() {
        let s = Matrix::column(&[1000.0, 1001.0]).unwrap();
        let a = masked_column_softmax(&s, &Mask::all(2)).unwrap();
        assert!(a.is_finite());
    }

    #[test]
    fn max_pool_examples() {
        let m = Matrix::from_rows(&[[1.0, 3.0], [2.0, 0.0]]).unwrap();
        let (v, idx) = rowwise_max(&m);
        assert_eq!(v.as_slice(), &[3.0, 2.0]);
        assert_eq!(idx, vec![1, 0]);
        let (_, idx) = rowwise_max(&Matrix::from_rows(&[[4.0, 4.0, 4.0]]).unwrap());
        assert_eq!(idx, vec![0]);
    }

    #[test]
    fn argmax_first_tie() {
        assert_eq!(argmax(&[0.1, 0.3, 0.3]), 1);
        assert_eq!(argmax(&[0.25; 4]), 0);
    }
}
