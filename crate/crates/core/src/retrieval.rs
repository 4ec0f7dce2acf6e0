//! Cross-modal retrieval by cosine distance and MAP evaluation.

use alloc::vec::Vec;
use core::fmt;

use crate::nd::{dot, Matrix};
use crate::{Error, Label, Result};

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(dot(v, v))
}

/// `1 - a·b / (‖a‖‖b‖)`.
pub fn cosine_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::shape("cosine_distance", (1, a.len()), (1, b.len())));
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 {
        return Err(Error::ZeroNorm(0));
    }
    if nb == 0.0 {
        return Err(Error::ZeroNorm(1));
    }
    Ok((1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub query_id: usize,
    /// Candidate indices, nearest first.
    pub order: Vec<usize>,
    /// Distances aligned with `order`.
    pub distances: Vec<f64>,
}

fn sort_ranked(query_id: usize, distances: Vec<f64>) -> RankedList {
    let mut order: Vec<usize> = (0..distances.len()).collect();
    order.sort_by(|&a, &b| distances[a].total_cmp(&distances[b]).then(a.cmp(&b)));
    let sorted = order.iter().map(|&i| distances[i]).collect();
    RankedList { query_id, order, distances: sorted }
}

/// All candidate rows ordered by ascending cosine distance to `query`, ties
/// by candidate index. A zero-norm candidate yields `ZeroNorm(row)`.
pub fn rank(query_id: usize, query: &[f64], candidates: &Matrix) -> Result<RankedList> {
    if candidates.rows() == 0 {
        return Err(Error::Empty("candidates"));
    }
    if query.len() != candidates.cols() {
        return Err(Error::shape("rank", (1, candidates.cols()), (1, query.len())));
    }
    if norm(query) == 0.0 {
        return Err(Error::ZeroNorm(query_id));
    }
    let distances = candidates
        .iter_rows()
        .enumerate()
        .map(|(i, c)| cosine_distance(query, c).map_err(|e| if e == Error::ZeroNorm(1) { Error::ZeroNorm(i) } else { e }))
        .collect::<Result<Vec<_>>>()?;
    Ok(sort_ranked(query_id, distances))
}

/// Normalizer of the truncated AP sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ApNorm {
    /// Relevant items inside the cutoff.
    #[default]
    RelevantWithinCutoff,
    /// All relevant items in the list.
    TotalRelevant,
}

impl ApNorm {
    pub fn tag(self) -> &'static str {
        match self {
            ApNorm::RelevantWithinCutoff => "within_cutoff",
            ApNorm::TotalRelevant => "total_relevant",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "within_cutoff" => Some(ApNorm::RelevantWithinCutoff),
            "total_relevant" => Some(ApNorm::TotalRelevant),
            _ => None,
        }
    }
}

/// `relevance[c]` is the relevance of candidate `c` (not of rank position).
/// Returns 0 when nothing relevant is retrieved.
pub fn average_precision(ranked: &RankedList, relevance: &[bool], cutoff: Option<usize>, norm: ApNorm) -> Result<f64> {
    if relevance.len() != ranked.order.len() {
        return Err(Error::shape("average_precision", (ranked.order.len(), 1), (relevance.len(), 1)));
    }
    let limit = cutoff.unwrap_or(usize::MAX).min(ranked.order.len());
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &c) in ranked.order[..limit].iter().enumerate() {
        if relevance[c] {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    let denom = match norm {
        ApNorm::RelevantWithinCutoff => hits,
        ApNorm::TotalRelevant => relevance.iter().filter(|&&r| r).count(),
    };
    Ok(if denom == 0 { 0.0 } else { sum / denom as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ImageToText,
    TextToImage,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::ImageToText => "img2txt",
            Task::TextToImage => "txt2img",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scope {
    All,
    Top(usize),
}

impl fmt::Display for Scope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scope::All => f.write_str("all"),
            Scope::Top(k) => write!(f, "top{k}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    pub task: Task,
    pub scope: Scope,
    pub map_score: f64,
    pub average_precisions: Vec<f64>,
}

/// `task=img2txt scope=all map=0.4123`
impl fmt::Display for MapReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "task={} scope={} map={:.4}", self.task, self.scope, self.map_score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    pub top_k: usize,
    pub ap_norm: ApNorm,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { top_k: 50, ap_norm: ApNorm::RelevantWithinCutoff }
    }
}

fn unit_rows(m: &Matrix) -> Result<Matrix> {
    let mut out = m.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let n = norm(row);
        if n == 0.0 {
            return Err(Error::ZeroNorm(r));
        }
        row.iter_mut().for_each(|v| *v /= n);
    }
    Ok(out)
}

fn task_reports(
    task: Task,
    queries: &Matrix,
    candidates: &Matrix,
    q_labels: &[Label],
    c_labels: &[Label],
    cfg: &EvalConfig,
) -> [MapReport; 2] {
    let n = queries.rows();
    let mut all = Vec::with_capacity(n);
    let mut top = Vec::with_capacity(n);
    let mut relevance = Vec::with_capacity(c_labels.len());
    for (qi, q) in queries.iter_rows().enumerate() {
        let distances = candidates.iter_rows().map(|c| 1.0 - dot(q, c)).collect();
        let ranked = sort_ranked(qi, distances);
        relevance.clear();
        relevance.extend(c_labels.iter().map(|l| *l == q_labels[qi]));
        // lengths agree by construction
        all.push(average_precision(&ranked, &relevance, None, cfg.ap_norm).unwrap_or(0.0));
        top.push(average_precision(&ranked, &relevance, Some(cfg.top_k), cfg.ap_norm).unwrap_or(0.0));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    [
        MapReport { task, scope: Scope::All, map_score: mean(&all), average_precisions: all },
        MapReport { task, scope: Scope::Top(cfg.top_k), map_score: mean(&top), average_precisions: top },
    ]
}

/// Four reports: img2txt all/top-k, then txt2img all/top-k.
pub fn evaluate(
    q_img: &Matrix,
    q_txt: &Matrix,
    labels_img: &[Label],
    labels_txt: &[Label],
    cfg: &EvalConfig,
) -> Result<Vec<MapReport>> {
    if q_img.rows() == 0 || q_txt.rows() == 0 {
        return Err(Error::Empty("test set"));
    }
    if q_img.cols() != q_txt.cols() {
        return Err(Error::shape("evaluate", (q_txt.rows(), q_img.cols()), q_txt.shape()));
    }
    if labels_img.len() != q_img.rows() {
        return Err(Error::shape("evaluate image labels", (q_img.rows(), 1), (labels_img.len(), 1)));
    }
    if labels_txt.len() != q_txt.rows() {
        return Err(Error::shape("evaluate text labels", (q_txt.rows(), 1), (labels_txt.len(), 1)));
    }
    q_img.ensure_finite("image embeddings")?;
    q_txt.ensure_finite("text embeddings")?;
    let ui = unit_rows(q_img)?;
    let ut = unit_rows(q_txt)?;
    let mut out = Vec::with_capacity(4);
    out.extend(task_reports(Task::ImageToText, &ui, &ut, labels_img, labels_txt, cfg));
    out.extend(task_reports(Task::TextToImage, &ut, &ui, labels_txt, labels_img, cfg));
    Ok(out)
}

/// Mean of the two tasks' MAP at `scope`.
pub fn average_map(reports: &[MapReport], scope: Scope) -> f64 {
    let picked: Vec<f64> = reports.iter().filter(|r| r.scope == scope).map(|r| r.map_score).collect();
    if picked.is_empty() {
        return 0.0;
    }
    picked.iter().sum::<f64>() / picked.len() as f64
}
