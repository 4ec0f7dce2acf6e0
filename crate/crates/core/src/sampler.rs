//! Mini-batch assembly, balanced pair selection for the contrastive branch
//! and quadruplet sampling for the ranking branch.

use alloc::vec::Vec;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::{index, IndexedRandom};
use rand::Rng as _;

use crate::graph::SimilarityMatrix;
use crate::nd::Matrix;
use crate::{Error, Label, Result, Rng};

/// Shallow representations of the training pool with its labeled and
/// unlabeled index sets. `labels[i]` is ignored for unlabeled rows.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub s_img: Matrix,
    pub s_txt: Matrix,
    pub labels: Vec<Label>,
    pub labeled: Vec<usize>,
    pub unlabeled: Vec<usize>,
}

impl TrainingSet {
    pub fn new(
        s_img: Matrix,
        s_txt: Matrix,
        labels: Vec<Label>,
        labeled: Vec<usize>,
        unlabeled: Vec<usize>,
    ) -> Result<Self> {
        if s_img.shape() != s_txt.shape() {
            return Err(Error::shape("TrainingSet", s_img.shape(), s_txt.shape()));
        }
        if labels.len() != s_img.rows() {
            return Err(Error::shape("TrainingSet labels", (s_img.rows(), 1), (labels.len(), 1)));
        }
        let n = s_img.rows();
        let mut seen = alloc::vec![false; n];
        for &i in labeled.iter().chain(&unlabeled) {
            if i >= n {
                return Err(Error::IndexOutOfRange { index: i, len: n });
            }
            if seen[i] {
                return Err(Error::invalid(alloc::format!("row {i} assigned to a pool twice")));
            }
            seen[i] = true;
        }
        Ok(Self { s_img, s_txt, labels, labeled, unlabeled })
    }

    pub fn dim(&self) -> usize {
        self.s_img.cols()
    }

    /// Number of distinct labels among labeled rows.
    pub fn labeled_classes(&self) -> usize {
        let mut l: Vec<Label> = self.labeled.iter().map(|&i| self.labels[i]).collect();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}

/// `n` paired rows; the first `m` are labeled.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub s_img: Matrix,
    pub s_txt: Matrix,
    /// Labels of rows `0..m`.
    pub labels: Vec<Label>,
    pub m: usize,
    pub n: usize,
    /// Row of each batch entry in the training set.
    pub source: Vec<usize>,
}

/// Draws `m` labeled and `n - m` unlabeled rows without replacement.
pub fn make_minibatch(data: &TrainingSet, m: usize, n: usize, rng: &mut Rng) -> Result<MiniBatch> {
    if m > n {
        return Err(Error::invalid("labeled batch part m exceeds batch size n"));
    }
    if data.labeled.len() < m {
        return Err(Error::InsufficientPool { pool: "labeled", need: m, have: data.labeled.len() });
    }
    if data.unlabeled.len() < n - m {
        return Err(Error::InsufficientPool { pool: "unlabeled", need: n - m, have: data.unlabeled.len() });
    }
    let mut source = Vec::with_capacity(n);
    source.extend(index::sample(rng, data.labeled.len(), m).into_iter().map(|i| data.labeled[i]));
    source.extend(index::sample(rng, data.unlabeled.len(), n - m).into_iter().map(|i| data.unlabeled[i]));
    Ok(MiniBatch {
        s_img: data.s_img.select_rows(&source)?,
        s_txt: data.s_txt.select_rows(&source)?,
        labels: source[..m].iter().map(|&i| data.labels[i]).collect(),
        m,
        n,
        source,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pair {
    pub image: usize,
    pub text: usize,
    pub similar: bool,
    pub labeled: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PairSelection {
    pub pairs: Vec<Pair>,
}

impl PairSelection {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn count_similar(&self) -> usize {
        self.pairs.iter().filter(|p| p.similar).count()
    }
}

/// For every image row and every text row, one random similar and one
/// random dissimilar cross-modal partner, whenever such partners exist.
/// Labeled anchors use `c` (rows `0..m`); unlabeled anchors use `a`
/// (rows `m..n`).
pub fn select_pairs(batch: &MiniBatch, c: &SimilarityMatrix, a: &SimilarityMatrix, rng: &mut Rng) -> Result<PairSelection> {
    let (m, n) = (batch.m, batch.n);
    if c.rows() != m || c.cols() != m {
        return Err(Error::shape("select_pairs C", (m, m), (c.rows(), c.cols())));
    }
    if a.rows() != n - m || a.cols() != n - m {
        return Err(Error::shape("select_pairs A", (n - m, n - m), (a.rows(), a.cols())));
    }
    let mut out = PairSelection::default();
    let mut sim = Vec::new();
    let mut dis = Vec::new();
    for image_anchor in [true, false] {
        for anchor in 0..n {
            let labeled = anchor < m;
            let (lo, hi, mat) = if labeled { (0, m, c) } else { (m, n, a) };
            sim.clear();
            dis.clear();
            for partner in lo..hi {
                let s = if image_anchor {
                    mat.get(anchor - lo, partner - lo)
                } else {
                    mat.get(partner - lo, anchor - lo)
                };
                if s { sim.push(partner) } else { dis.push(partner) }
            }
            for (cands, similar) in [(&sim, true), (&dis, false)] {
                if let Some(&partner) = cands.choose(rng) {
                    let (image, text) = if image_anchor { (anchor, partner) } else { (partner, anchor) };
                    out.pairs.push(Pair { image, text, similar, labeled });
                }
            }
        }
    }
    Ok(out)
}

/// Batch row indices `(I+, T+, I-, T-)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Quadruplet {
    pub i_plus: usize,
    pub t_plus: usize,
    pub i_minus: usize,
    pub t_minus: usize,
}

impl Quadruplet {
    /// Both relative-similarity constraints hold and all indices are labeled.
    pub fn is_valid(&self, labels: &[Label]) -> bool {
        let m = labels.len();
        if [self.i_plus, self.t_plus, self.i_minus, self.t_minus].iter().any(|&i| i >= m) {
            return false;
        }
        labels[self.i_plus] == labels[self.t_plus]
            && labels[self.i_minus] != labels[self.t_plus]
            && labels[self.t_minus] != labels[self.i_plus]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SamplerWarning {
    /// Fewer than two classes in the labeled slice; no quadruplet exists.
    SingleClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct QuadrupletSample {
    pub quadruplets: Vec<Quadruplet>,
    pub warning: Option<SamplerWarning>,
}

/// `count` quadruplets drawn uniformly from all valid index tuples of the
/// labeled slice. A class `c` with `k` members owns `k²(m-k)²` tuples, so the
/// class is drawn with that weight, then the four members uniformly.
pub fn sample_quadruplets(batch: &MiniBatch, count: usize, rng: &mut Rng) -> QuadrupletSample {
    let labels = &batch.labels;
    let mut classes: Vec<Label> = labels.clone();
    classes.sort_unstable();
    classes.dedup();
    if classes.len() < 2 {
        return QuadrupletSample { quadruplets: Vec::new(), warning: Some(SamplerWarning::SingleClass) };
    }
    let m = labels.len();
    let members: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| (0..m).filter(|&i| labels[i] == *c).collect())
        .collect();
    let others: Vec<Vec<usize>> = classes
        .iter()
        .map(|c| (0..m).filter(|&i| labels[i] != *c).collect())
        .collect();
    let weights = members.iter().map(|mem| {
        let k = mem.len() as f64;
        let rest = m as f64 - k;
        k * k * rest * rest
    });
    // at least two classes, so some weight is positive
    let by_class = WeightedIndex::new(weights).expect("positive class weights");
    let quadruplets = (0..count)
        .map(|_| {
            let c = by_class.sample(rng);
            let (pos, neg) = (&members[c], &others[c]);
            Quadruplet {
                i_plus: pos[rng.random_range(0..pos.len())],
                t_plus: pos[rng.random_range(0..pos.len())],
                i_minus: neg[rng.random_range(0..neg.len())],
                t_minus: neg[rng.random_range(0..neg.len())],
            }
        })
        .collect();
    QuadrupletSample { quadruplets, warning: None }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{labeled_similarity, unlabeled_similarity, SimilarityKind};
    use crate::nd::{init_with_rng, InitScheme};
    use alloc::vec;
    use std::collections::HashMap;

    fn set(n_labeled: usize, n_unlabeled: usize, classes: i64) -> TrainingSet {
        let n = n_labeled + n_unlabeled;
        let mut rng = crate::rng_from_seed(0);
        let s_img = init_with_rng(n, 3, InitScheme::Uniform(1.0), &mut rng);
        let s_txt = init_with_rng(n, 3, InitScheme::Uniform(1.0), &mut rng);
        let labels = (0..n as i64).map(|i| i % classes).collect();
        TrainingSet::new(s_img, s_txt, labels, (0..n_labeled).collect(), (n_labeled..n).collect()).unwrap()
    }

    fn batch_with_labels(labels: &[Label], unlabeled: usize) -> MiniBatch {
        let m = labels.len();
        let n = m + unlabeled;
        let mut rng = crate::rng_from_seed(1);
        MiniBatch {
            s_img: init_with_rng(n, 2, InitScheme::Uniform(1.0), &mut rng),
            s_txt: init_with_rng(n, 2, InitScheme::Uniform(1.0), &mut rng),
            labels: labels.to_vec(),
            m,
            n,
            source: (0..n).collect(),
        }
    }

    #[test]
    fn minibatch_composition() {
        let data = set(10, 10, 3);
        let mut rng = crate::rng_from_seed(5);
        let full = make_minibatch(&data, 6, 6, &mut rng).unwrap();
        assert_eq!((full.m, full.n), (6, 6));
        assert!(full.source.iter().all(|&i| i < 10));
        let none = make_minibatch(&data, 0, 4, &mut rng).unwrap();
        assert!(none.labels.is_empty());
        assert!(none.source.iter().all(|&i| i >= 10));
        let q = sample_quadruplets(&none, 4, &mut rng);
        assert!(q.quadruplets.is_empty());

        let mut dedup = full.source.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 6);

        let a = make_minibatch(&data, 4, 8, &mut crate::rng_from_seed(9)).unwrap();
        let b = make_minibatch(&data, 4, 8, &mut crate::rng_from_seed(9)).unwrap();
        assert_eq!(a, b);
        assert!(matches!(
            make_minibatch(&data, 11, 12, &mut rng),
            Err(Error::InsufficientPool { pool: "labeled", .. })
        ));
        assert!(make_minibatch(&data, 5, 4, &mut rng).is_err());
    }

    #[test]
    fn training_set_rejects_overlap() {
        let d = set(2, 2, 2);
        assert!(TrainingSet::new(d.s_img.clone(), d.s_txt.clone(), d.labels.clone(), vec![0, 1], vec![1]).is_err());
        assert!(TrainingSet::new(d.s_img.clone(), d.s_txt.clone(), d.labels.clone(), vec![7], vec![]).is_err());
    }

    #[test]
    fn all_similar_batch_emits_only_similar() {
        let b = batch_with_labels(&[4, 4, 4], 0);
        let c = labeled_similarity(&b.labels, &b.labels);
        let a = SimilarityMatrix::new(0, 0, SimilarityKind::Unlabeled);
        let p = select_pairs(&b, &c, &a, &mut crate::rng_from_seed(2)).unwrap();
        assert_eq!(p.len(), 6);
        assert_eq!(p.count_similar(), 6);
    }

    #[test]
    fn two_class_batch_is_balanced() {
        let b = batch_with_labels(&[0, 0, 1, 1], 0);
        let c = labeled_similarity(&b.labels, &b.labels);
        let a = SimilarityMatrix::new(0, 0, SimilarityKind::Unlabeled);
        let p = select_pairs(&b, &c, &a, &mut crate::rng_from_seed(3)).unwrap();
        // 4 image anchors + 4 text anchors, one similar and one dissimilar each
        assert_eq!(p.len(), 16);
        assert_eq!(p.count_similar(), 8);
        for pair in &p.pairs {
            assert_eq!(pair.similar, c.get(pair.image, pair.text));
        }
    }

    #[test]
    fn unlabeled_pairs_follow_adjacency() {
        let b = batch_with_labels(&[0, 1], 6);
        let c = labeled_similarity(&b.labels, &b.labels);
        let a = unlabeled_similarity(&b.s_img.slice_rows(2, 8), &b.s_txt.slice_rows(2, 8), 2).unwrap();
        let p = select_pairs(&b, &c, &a, &mut crate::rng_from_seed(4)).unwrap();
        for pair in &p.pairs {
            if pair.labeled {
                assert!(pair.image < 2 && pair.text < 2);
                assert_eq!(pair.similar, c.get(pair.image, pair.text));
            } else {
                assert!(pair.image >= 2 && pair.text >= 2);
                assert_eq!(pair.similar, a.get(pair.image - 2, pair.text - 2));
            }
        }
        let bad = SimilarityMatrix::new(3, 3, SimilarityKind::Unlabeled);
        assert!(select_pairs(&b, &c, &bad, &mut crate::rng_from_seed(4)).is_err());
    }

    #[test]
    fn two_label_quadruplets_enumerated() {
        let b = batch_with_labels(&[7, 9], 0);
        let q = sample_quadruplets(&b, 50, &mut crate::rng_from_seed(6));
        assert!(q.warning.is_none());
        // with one sample per class the only valid tuples are (0,0,1,1) and (1,1,0,0)
        for t in &q.quadruplets {
            assert!(
                *t == Quadruplet { i_plus: 0, t_plus: 0, i_minus: 1, t_minus: 1 }
                    || *t == Quadruplet { i_plus: 1, t_plus: 1, i_minus: 0, t_minus: 0 }
            );
        }
    }

    #[test]
    fn single_class_gives_warning() {
        let b = batch_with_labels(&[3, 3, 3], 2);
        let q = sample_quadruplets(&b, 5, &mut crate::rng_from_seed(6));
        assert!(q.quadruplets.is_empty());
        assert_eq!(q.warning, Some(SamplerWarning::SingleClass));
    }

    #[test]
    fn quadruplets_are_valid_and_uniform() {
        let labels = [0, 0, 0, 1, 2, 2];
        let b = batch_with_labels(&labels, 0);
        // enumerate every valid tuple
        let mut valid = Vec::new();
        for ip in 0..6 {
            for tp in 0..6 {
                for im in 0..6 {
                    for tm in 0..6 {
                        let q = Quadruplet { i_plus: ip, t_plus: tp, i_minus: im, t_minus: tm };
                        if q.is_valid(&labels) {
                            valid.push(q);
                        }
                    }
                }
            }
        }
        let draws = 200_000;
        let sample = sample_quadruplets(&b, draws, &mut crate::rng_from_seed(8));
        let mut counts: HashMap<(usize, usize, usize, usize), usize> = HashMap::new();
        for q in &sample.quadruplets {
            assert!(q.is_valid(&labels));
            *counts.entry((q.i_plus, q.t_plus, q.i_minus, q.t_minus)).or_default() += 1;
        }
        assert_eq!(counts.len(), valid.len());
        let expected = draws as f64 / valid.len() as f64;
        for c in counts.values() {
            // 5 sigma binomial band
            let sigma = libm::sqrt(expected);
            assert!((*c as f64 - expected).abs() < 5.0 * sigma, "{c} vs {expected}");
        }
        let again = sample_quadruplets(&b, 100, &mut crate::rng_from_seed(8));
        assert_eq!(&again.quadruplets[..], &sample.quadruplets[..100]);
    }
}
