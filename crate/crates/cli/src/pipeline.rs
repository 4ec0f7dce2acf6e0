//! Pipeline stages and the file artifacts each subcommand produces.

use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use xmmr_core::base_net::{pretrain as pretrain_base, BaseNet, LabeledRows, PretrainReport};
use xmmr_core::metric_net::ModelState;
use xmmr_core::retrieval::{average_map, evaluate, MapReport, Scope};
use xmmr_core::sampler::TrainingSet;
use xmmr_core::trainer::{ablation_train, prepared_state, train_mode, AblationMode, Embedder, TrainReport, ValidationSet};
use xmmr_core::{Label, Matrix};

use crate::checkpoint::{base_net_checkpoint, model_checkpoint, model_from_checkpoint, Checkpoint};
use crate::config::Settings;
use crate::error::{CliError, Result};
use crate::formats::{read_labels, read_matrix, write_labels, write_matrix, write_text, Part};
use crate::ingest::{ingest, Dataset};

pub const BASE_CKPT: &str = "base_net.ckpt";
pub const MODEL_CKPT: &str = "metric_net.ckpt";
pub const S_IMG: &str = "s_img.txt";
pub const S_TXT: &str = "s_txt.txt";
pub const Q_IMG: &str = "q_img.txt";
pub const Q_TXT: &str = "q_txt.txt";
pub const LABELS: &str = "labels.txt";
pub const LOSS_TRACE: &str = "loss_trace.csv";

/// Fits the base network on all train rows (labeled and unlabeled).
pub fn pretrain(ds: &Dataset, s: &Settings) -> Result<(BaseNet, PretrainReport)> {
    let train = ds.part(Part::Train);
    let img = ds.image.select_rows(&train)?;
    let txt = ds.text.select_rows(&train)?;
    // heads see the labeled train rows, indexed within `train`
    let labeled: Vec<usize> = (0..train.len())
        .filter(|&i| !ds.split[train[i]].unlabeled)
        .collect();
    let labels = ds.labels_of(&labeled.iter().map(|&i| train[i]).collect::<Vec<_>>())?;
    let rows = LabeledRows { rows: &labeled, labels: &labels };
    Ok(pretrain_base(&img, &txt, Some(rows), &s.pretrain)?)
}

/// Shallow representations of every row.
pub fn shared_reps(net: &BaseNet, ds: &Dataset) -> Result<(Matrix, Matrix)> {
    Ok(net.shared_rep(&ds.image, &ds.text)?)
}

pub fn training_set(ds: &Dataset, s_img: &Matrix, s_txt: &Matrix) -> Result<TrainingSet> {
    let labels = ds.labels.iter().map(|l| l.unwrap_or(0)).collect();
    Ok(TrainingSet::new(s_img.clone(), s_txt.clone(), labels, ds.train_labeled(), ds.train_unlabeled())?)
}

/// Paired embeddings of one split with its labels.
pub struct PartEmbeddings {
    pub q_img: Matrix,
    pub q_txt: Matrix,
    pub labels: Vec<Label>,
}

pub fn embed_part(embedder: &Embedder, ds: &Dataset, s_img: &Matrix, s_txt: &Matrix, part: Part) -> Result<PartEmbeddings> {
    let rows = ds.part(part);
    let (q_img, q_txt) = embedder.embed(&s_img.select_rows(&rows)?, &s_txt.select_rows(&rows)?)?;
    Ok(PartEmbeddings { q_img, q_txt, labels: ds.labels_of(&rows)? })
}

pub fn evaluate_embeddings(e: &PartEmbeddings, s: &Settings) -> Result<Vec<MapReport>> {
    Ok(evaluate(&e.q_img, &e.q_txt, &e.labels, &e.labels, &s.eval)?)
}

/// Trains the metric network, optionally continuing from `resume`.
pub fn train(
    ds: &Dataset,
    s_img: &Matrix,
    s_txt: &Matrix,
    s: &Settings,
    mode: AblationMode,
    resume: Option<ModelState>,
) -> Result<(ModelState, TrainReport)> {
    let data = training_set(ds, s_img, s_txt)?;
    let state = match resume {
        Some(st) => st,
        None => prepared_state(&s.net.for_input(s_img.cols()), s.seed, &data)?,
    };
    let val_rows = ds.part(Part::Val);
    let (vi, vt) = (s_img.select_rows(&val_rows)?, s_txt.select_rows(&val_rows)?);
    let vl = ds.labels_of(&val_rows)?;
    let validation = (s.train.early_stopping.is_some() && !val_rows.is_empty())
        .then_some(ValidationSet { s_img: &vi, s_txt: &vt, labels: &vl });
    let mut cfg = s.train;
    if validation.is_none() {
        cfg.early_stopping = None;
    }
    let start = Instant::now();
    let (state, mut report) = train_mode(state, &data, &cfg, mode, validation)?;
    report.wall_clock_secs = Some(start.elapsed().as_secs_f64());
    Ok((state, report))
}

pub fn loss_trace_csv(report: &TrainReport, first_step: usize) -> String {
    let mut out = String::from("step,semi_loss,quad_loss,total\n");
    for (i, ((a, b), c)) in report.semi_loss.iter().zip(&report.quad_loss).zip(&report.total_loss).enumerate() {
        let _ = writeln!(out, "{},{a},{b},{c}", first_step + i + 1);
    }
    out
}

pub fn format_reports(reports: &[MapReport]) -> String {
    reports.iter().map(|r| format!("{r}\n")).collect()
}

/// One ablation mode's test-set results.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub mode: AblationMode,
    pub reports: Vec<MapReport>,
    pub train_report: Option<TrainReport>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct AblationReport {
    pub rows: Vec<AblationRow>,
    pub pretrain: PretrainReport,
    pub pretrain_seconds: f64,
}

impl AblationReport {
    pub fn average_map(&self, mode: AblationMode, scope: Scope) -> Option<f64> {
        self.rows.iter().find(|r| r.mode == mode).map(|r| average_map(&r.reports, scope))
    }

    pub fn total_seconds(&self) -> f64 {
        self.pretrain_seconds + self.rows.iter().map(|r| r.seconds).sum::<f64>()
    }
}

/// One line per mode with MAP for both tasks and their average, over all
/// results and over the top-k cutoff.
impl fmt::Display for AblationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let top = self
            .rows
            .first()
            .and_then(|r| r.reports.iter().find_map(|m| if let Scope::Top(k) = m.scope { Some(k) } else { None }))
            .unwrap_or(50);
        writeln!(
            f,
            "{:<10} {:>12} {:>12} {:>12} {:>12} {:>12} {:>12}",
            "mode",
            "img2txt_all",
            "txt2img_all",
            "avg_all",
            format!("img2txt_t{top}"),
            format!("txt2img_t{top}"),
            format!("avg_t{top}")
        )?;
        for r in &self.rows {
            let m = |i: usize| r.reports.get(i).map_or(f64::NAN, |x| x.map_score);
            writeln!(
                f,
                "{:<10} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4}",
                r.mode.tag(),
                m(0),
                m(2),
                (m(0) + m(2)) / 2.0,
                m(1),
                m(3),
                (m(1) + m(3)) / 2.0
            )?;
        }
        Ok(())
    }
}

/// Pretrains once, then runs every ablation mode from the same initial
/// metric-network parameters and evaluates on the test split.
pub fn ablate(ds: &Dataset, s: &Settings) -> Result<AblationReport> {
    let start = Instant::now();
    let (net, pretrain_report) = pretrain(ds, s)?;
    let (s_img, s_txt) = shared_reps(&net, ds)?;
    let pretrain_seconds = start.elapsed().as_secs_f64();
    info!("pretraining took {pretrain_seconds:.1}s");
    let data = training_set(ds, &s_img, &s_txt)?;
    let init = prepared_state(&s.net.for_input(s_img.cols()), s.seed, &data)?;
    let mut rows = Vec::new();
    for mode in AblationMode::ALL {
        let t = Instant::now();
        let (embedder, train_report) = ablation_train(mode, init.clone(), &data, &s.train)?;
        let e = embed_part(&embedder, ds, &s_img, &s_txt, Part::Test)?;
        let reports = evaluate_embeddings(&e, s)?;
        let seconds = t.elapsed().as_secs_f64();
        info!("{}: avg MAP(all) {:.4} in {seconds:.1}s", mode.tag(), average_map(&reports, Scope::All));
        rows.push(AblationRow { mode, reports, train_report, seconds });
    }
    Ok(AblationReport { rows, pretrain: pretrain_report, pretrain_seconds })
}

// ---- subcommands: artifacts on disk ----

pub fn cmd_pretrain(manifest: &Path, out: &Path, s: &Settings) -> Result<String> {
    let ds = ingest(manifest)?;
    let (net, report) = pretrain(&ds, s)?;
    let (s_img, s_txt) = shared_reps(&net, &ds)?;
    base_net_checkpoint(&net, s.seed, s.to_text()).save(&out.join(BASE_CKPT))?;
    write_matrix(&out.join(S_IMG), &s_img)?;
    write_matrix(&out.join(S_TXT), &s_txt)?;
    let last = |v: &[f64]| v.last().copied().unwrap_or(f64::NAN);
    Ok(format!(
        "gaussian_rbm error {:.4} -> {:.4}\nsoftmax_rbm error {:.4} -> {:.4}\nbimodal_ae loss {:.4} -> {:.4}\nwrote {}\n",
        report.image.layer1.initial_error,
        last(&report.image.layer1.epoch_errors),
        report.text.layer1.initial_error,
        last(&report.text.layer1.epoch_errors),
        report.ae.initial_loss,
        last(&report.ae.epoch_losses),
        out.display()
    ))
}

fn load_shared(dir: &Path, ds: &Dataset) -> Result<(Matrix, Matrix)> {
    let s_img = read_matrix(&dir.join(S_IMG))?;
    let s_txt = read_matrix(&dir.join(S_TXT))?;
    if s_img.rows() != ds.rows() || s_txt.rows() != ds.rows() {
        return Err(CliError::data(format!(
            "shared representations in {} do not match the dataset's {} rows",
            dir.display(),
            ds.rows()
        )));
    }
    Ok((s_img, s_txt))
}

pub fn cmd_train(manifest: &Path, shared: &Path, out: &Path, resume: Option<&Path>, s: &Settings) -> Result<String> {
    let ds = ingest(manifest)?;
    let (s_img, s_txt) = load_shared(shared, &ds)?;
    let resume = resume.map(|p| model_from_checkpoint(&Checkpoint::load(p)?)).transpose()?;
    let first = resume.as_ref().map_or(0, |r| r.step);
    let (state, mut report) = train(&ds, &s_img, &s_txt, s, AblationMode::Full, resume)?;
    let ckpt = out.join(MODEL_CKPT);
    model_checkpoint(&state, s.seed, s.to_text()).save(&ckpt)?;
    write_text(&out.join(LOSS_TRACE), &loss_trace_csv(&report, first))?;
    report.checkpoint = Some(ckpt.display().to_string());
    let mut msg = format!(
        "steps {} final_total_loss {:.6} wall_clock {:.1}s\nwrote {}\n",
        report.final_step,
        report.total_loss.last().copied().unwrap_or(f64::NAN),
        report.wall_clock_secs.unwrap_or(0.0),
        ckpt.display()
    );
    for w in &report.warnings {
        let _ = writeln!(msg, "warning: {w:?}");
    }
    Ok(msg)
}

pub fn cmd_embed(manifest: &Path, shared: &Path, model: Option<&Path>, out: &Path, part: Part) -> Result<String> {
    let ds = ingest(manifest)?;
    let (s_img, s_txt) = load_shared(shared, &ds)?;
    let embedder = match model {
        Some(p) => Embedder::Metric(Box::new(model_from_checkpoint(&Checkpoint::load(p)?)?)),
        None => Embedder::Base,
    };
    let e = embed_part(&embedder, &ds, &s_img, &s_txt, part)?;
    write_matrix(&out.join(Q_IMG), &e.q_img)?;
    write_matrix(&out.join(Q_TXT), &e.q_txt)?;
    write_labels(&out.join(LABELS), &e.labels)?;
    Ok(format!("wrote {} {} rows to {}\n", e.labels.len(), part.tag(), out.display()))
}

pub fn cmd_evaluate(embeddings: &Path, s: &Settings) -> Result<String> {
    let q_img = read_matrix(&embeddings.join(Q_IMG))?;
    let q_txt = read_matrix(&embeddings.join(Q_TXT))?;
    let labels_path = embeddings.join(LABELS);
    let labels = read_labels(&labels_path)?
        .into_iter()
        .enumerate()
        .map(|(i, l)| l.ok_or_else(|| CliError::parse(&labels_path, i + 1, "missing label")))
        .collect::<Result<Vec<_>>>()?;
    let e = PartEmbeddings { q_img, q_txt, labels };
    Ok(format_reports(&evaluate_embeddings(&e, s)?))
}

pub fn cmd_ablate(manifest: &Path, s: &Settings) -> Result<String> {
    let ds = ingest(manifest)?;
    let report = ablate(&ds, s)?;
    Ok(format!("{report}total_seconds {:.1}\n", report.total_seconds()))
}

pub fn cmd_synthgen(out: &Path, s: &Settings) -> Result<PathBuf> {
    crate::synth::write(&crate::synth::generate(&s.synth)?, out)
}
