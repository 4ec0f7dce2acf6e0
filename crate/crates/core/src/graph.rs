//! Binary cross-modal similarity matrices.
//!
//! Labeled pairs are similar when their labels agree. Unlabeled pairs are
//! similar when either member is among the other's `k` nearest cross-modal
//! neighbours inside the current mini-batch (Euclidean distance in the
//! shallow shared space, ties broken by the lower index).

use alloc::vec;
use alloc::vec::Vec;

use crate::nd::{squared_distance, Matrix};
use crate::{Error, Label, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimilarityKind {
    /// Label agreement over the labeled slice of a batch.
    Labeled,
    /// kNN adjacency over the unlabeled slice of a batch.
    Unlabeled,
}

/// Binary `images × texts` matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimilarityMatrix {
    rows: usize,
    cols: usize,
    entries: Vec<bool>,
    kind: SimilarityKind,
}

impl SimilarityMatrix {
    pub fn new(rows: usize, cols: usize, kind: SimilarityKind) -> Self {
        Self {
            rows,
            cols,
            entries: vec![false; rows * cols],
            kind,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn kind(&self) -> SimilarityKind {
        self.kind
    }

    #[inline]
    pub fn get(&self, image: usize, text: usize) -> bool {
        self.entries[image * self.cols + text]
    }

    /// Bounds-checked lookup.
    pub fn try_get(&self, image: usize, text: usize) -> Result<bool> {
        if image >= self.rows {
            return Err(Error::IndexOutOfRange { index: image, len: self.rows });
        }
        if text >= self.cols {
            return Err(Error::IndexOutOfRange { index: text, len: self.cols });
        }
        Ok(self.get(image, text))
    }

    pub fn set(&mut self, image: usize, text: usize, value: bool) {
        self.entries[image * self.cols + text] = value;
    }

    /// Entries as 0/1 rows, convenient for comparisons in tests.
    pub fn to_rows(&self) -> Vec<Vec<u8>> {
        (0..self.rows)
            .map(|r| (0..self.cols).map(|c| self.get(r, c) as u8).collect())
            .collect()
    }

    /// The `rows.len() × cols.len()` block at the given ranges.
    pub fn block(&self, rows: core::ops::Range<usize>, cols: core::ops::Range<usize>) -> Self {
        let mut out = Self::new(rows.len(), cols.len(), self.kind);
        for (i, r) in rows.enumerate() {
            for (j, c) in cols.clone().enumerate() {
                out.set(i, j, self.get(r, c));
            }
        }
        out
    }

    pub fn count_ones(&self) -> usize {
        self.entries.iter().filter(|&&e| e).count()
    }
}

/// `C(p, q) = 1` iff image `p` and text `q` carry the same label.
pub fn labeled_similarity(labels_img: &[Label], labels_txt: &[Label]) -> SimilarityMatrix {
    let mut c = SimilarityMatrix::new(labels_img.len(), labels_txt.len(), SimilarityKind::Labeled);
    for (p, li) in labels_img.iter().enumerate() {
        for (q, lt) in labels_txt.iter().enumerate() {
            c.set(p, q, li == lt);
        }
    }
    c
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Modality {
    Image,
    Text,
}

/// The `k` nearest opposite-modality samples of one sample, nearest first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NeighborSet {
    pub owner: usize,
    pub modality: Modality,
    pub neighbors: Vec<usize>,
}

impl NeighborSet {
    pub fn contains(&self, idx: usize) -> bool {
        self.neighbors.contains(&idx)
    }
}

fn nearest(query: &[f64], candidates: &Matrix, k: usize) -> Vec<usize> {
    let mut scored: Vec<(f64, usize)> = candidates
        .iter_rows()
        .enumerate()
        .map(|(i, c)| (squared_distance(query, c), i))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    scored.truncate(k);
    scored.into_iter().map(|(_, i)| i).collect()
}

/// Cross-modal kNN in both directions. `k` is clamped to the candidate count.
pub fn knn_cross_modal(s_img: &Matrix, s_txt: &Matrix, k: usize) -> Result<(Vec<NeighborSet>, Vec<NeighborSet>)> {
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if s_img.cols() != s_txt.cols() {
        return Err(Error::shape("knn_cross_modal", (s_txt.rows(), s_img.cols()), s_txt.shape()));
    }
    let images = (0..s_img.rows())
        .map(|p| NeighborSet {
            owner: p,
            modality: Modality::Image,
            neighbors: nearest(s_img.row(p), s_txt, k),
        })
        .collect();
    let texts = (0..s_txt.rows())
        .map(|q| NeighborSet {
            owner: q,
            modality: Modality::Text,
            neighbors: nearest(s_txt.row(q), s_img, k),
        })
        .collect();
    Ok((images, texts))
}

/// `A(p, q) = 1` iff image `p` is among text `q`'s neighbours or text `q` is
/// among image `p`'s neighbours.
pub fn unlabeled_similarity(s_img_u: &Matrix, s_txt_u: &Matrix, k: usize) -> Result<SimilarityMatrix> {
    let mut a = SimilarityMatrix::new(s_img_u.rows(), s_txt_u.rows(), SimilarityKind::Unlabeled);
    if s_img_u.is_empty() || s_txt_u.is_empty() {
        return Ok(a);
    }
    let (images, texts) = knn_cross_modal(s_img_u, s_txt_u, k)?;
    for set in &images {
        for &q in &set.neighbors {
            a.set(set.owner, q, true);
        }
    }
    for set in &texts {
        for &p in &set.neighbors {
            a.set(p, set.owner, true);
        }
    }
    Ok(a)
}
