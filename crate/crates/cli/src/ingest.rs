//! Dataset manifests and validated in-memory datasets.

use std::path::{Path, PathBuf};

use xmmr_core::{Label, Matrix};

use crate::error::{CliError, Result};
use crate::formats::{read_labels, read_matrix, read_split, Part, SplitEntry};

/// `key = value` file naming the four data files. Relative paths resolve
/// against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub image: PathBuf,
    pub text: PathBuf,
    pub labels: PathBuf,
    pub split: PathBuf,
    pub image_dim: Option<usize>,
    pub text_dim: Option<usize>,
}

impl Manifest {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let base = path.parent().unwrap_or(Path::new(""));
        let (mut image, mut txt, mut labels, mut split) = (None, None, None, None);
        let (mut image_dim, mut text_dim) = (None, None);
        for (k, v, line) in crate::config::parse_config_text(text, path)? {
            let dim = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| CliError::parse(path, line, format!("`{k}` must be a positive integer")))
            };
            match k.as_str() {
                "image" => image = Some(base.join(v)),
                "text" => txt = Some(base.join(v)),
                "labels" => labels = Some(base.join(v)),
                "split" => split = Some(base.join(v)),
                "image_dim" => image_dim = Some(dim(&v)?),
                "text_dim" => text_dim = Some(dim(&v)?),
                _ => return Err(CliError::parse(path, line, format!("unknown manifest key `{k}`"))),
            }
        }
        let need = |p: Option<PathBuf>, k: &str| {
            p.ok_or_else(|| CliError::parse(path, 0, format!("manifest lacks `{k}`")))
        };
        Ok(Self {
            image: need(image, "image")?,
            text: need(txt, "text")?,
            labels: need(labels, "labels")?,
            split: need(split, "split")?,
            image_dim,
            text_dim,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Manifest text pointing at sibling files with the given names.
    pub fn render(image: &str, text: &str, labels: &str, split: &str, dims: (usize, usize)) -> String {
        format!(
            "image = {image}\ntext = {text}\nlabels = {labels}\nsplit = {split}\nimage_dim = {}\ntext_dim = {}\n",
            dims.0, dims.1
        )
    }
}

/// Paired features with labels and split flags. Image features are
/// standardized with train-split statistics; text features stay raw counts.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub image: Matrix,
    pub text: Matrix,
    pub labels: Vec<Option<Label>>,
    pub split: Vec<SplitEntry>,
    pub image_mean: Vec<f64>,
    pub image_std: Vec<f64>,
}

/// Per-column mean and standard deviation over `rows`; constant columns get
/// a deviation of 1.
pub fn column_stats(m: &Matrix, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; m.cols()];
    for &r in rows {
        for (a, v) in mean.iter_mut().zip(m.row(r)) {
            *a += v;
        }
    }
    mean.iter_mut().for_each(|a| *a /= n);
    let mut var = vec![0.0; m.cols()];
    for &r in rows {
        for ((a, v), mu) in var.iter_mut().zip(m.row(r)).zip(&mean) {
            *a += (v - mu) * (v - mu);
        }
    }
    let std = var
        .iter()
        .map(|v| {
            let s = (v / n).sqrt();
            if s > 0.0 { s } else { 1.0 }
        })
        .collect();
    (mean, std)
}

pub fn standardize(m: &Matrix, mean: &[f64], std: &[f64]) -> Matrix {
    let mut out = m.clone();
    for r in 0..out.rows() {
        for ((v, mu), s) in out.row_mut(r).iter_mut().zip(mean).zip(std) {
            *v = (*v - mu) / s;
        }
    }
    out
}

impl Dataset {
    /// Validates aligned raw data and standardizes the image features.
    pub fn from_parts(image: Matrix, text: Matrix, labels: Vec<Option<Label>>, split: Vec<SplitEntry>) -> Result<Self> {
        let n = image.rows();
        if text.rows() != n || labels.len() != n || split.len() != n {
            return Err(CliError::data(format!(
                "row counts disagree: image {n}, text {}, labels {}, split {}",
                text.rows(),
                labels.len(),
                split.len()
            )));
        }
        if text.as_slice().iter().any(|&v| v < 0.0) {
            return Err(CliError::data("text features must be nonnegative word counts"));
        }
        for (i, (s, l)) in split.iter().zip(&labels).enumerate() {
            if s.unlabeled && s.part != Part::Train {
                return Err(CliError::data(format!("row {}: only train rows can be unlabeled", i + 1)));
            }
            if !s.unlabeled && l.is_none() {
                return Err(CliError::data(format!("row {} ({}) has no label", i + 1, s.part.tag())));
            }
        }
        let train: Vec<usize> = (0..n).filter(|&i| split[i].part == Part::Train).collect();
        if train.is_empty() {
            return Err(CliError::data("split has no train rows"));
        }
        let (image_mean, image_std) = column_stats(&image, &train);
        Ok(Self { image: standardize(&image, &image_mean, &image_std), text, labels, split, image_mean, image_std })
    }

    pub fn rows(&self) -> usize {
        self.image.rows()
    }

    pub fn part(&self, part: Part) -> Vec<usize> {
        (0..self.rows()).filter(|&i| self.split[i].part == part).collect()
    }

    pub fn train_labeled(&self) -> Vec<usize> {
        (0..self.rows())
            .filter(|&i| self.split[i].part == Part::Train && !self.split[i].unlabeled)
            .collect()
    }

    pub fn train_unlabeled(&self) -> Vec<usize> {
        (0..self.rows())
            .filter(|&i| self.split[i].part == Part::Train && self.split[i].unlabeled)
            .collect()
    }

    /// Labels of rows known to be labeled.
    pub fn labels_of(&self, rows: &[usize]) -> Result<Vec<Label>> {
        rows.iter()
            .map(|&r| self.labels[r].ok_or_else(|| CliError::data(format!("row {} has no label", r + 1))))
            .collect()
    }
}

pub fn ingest(manifest_path: &Path) -> Result<Dataset> {
    let m = Manifest::load(manifest_path)?;
    let image = read_matrix(&m.image)?;
    let text = read_matrix(&m.text)?;
    let labels = read_labels(&m.labels)?;
    let split = read_split(&m.split)?;
    let mismatch = |a: &Path, na: usize, b: &Path, nb: usize| {
        CliError::data(format!("{} has {na} rows but {} has {nb}", a.display(), b.display()))
    };
    if text.rows() != image.rows() {
        return Err(mismatch(&m.image, image.rows(), &m.text, text.rows()));
    }
    if labels.len() != image.rows() {
        return Err(mismatch(&m.image, image.rows(), &m.labels, labels.len()));
    }
    if split.len() != image.rows() {
        return Err(mismatch(&m.image, image.rows(), &m.split, split.len()));
    }
    for (declared, actual, path) in [(m.image_dim, image.cols(), &m.image), (m.text_dim, text.cols(), &m.text)] {
        if let Some(d) = declared.filter(|&d| d != actual) {
            return Err(CliError::data(format!("{} has {actual} columns, manifest declares {d}", path.display())));
        }
    }
    Dataset::from_parts(image, text, labels, split)
}
