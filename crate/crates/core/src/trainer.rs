//! Multi-task training loop of the metric network and its ablations.

use alloc::boxed::Box;
use alloc::vec::Vec;

use crate::graph::{labeled_similarity, unlabeled_similarity, SimilarityMatrix};
use crate::losses::{quadruplet_batch_loss, semi_supervised_loss, ContrastiveConfig, QuadrupletConfig};
use crate::metric_net::{Branch, InferenceBranch, ModelState, NetConfig, PathwayGrads};
use crate::nd::{Matrix, OptimizerConfig};
use crate::retrieval::{average_map, evaluate, EvalConfig, Scope};
use crate::sampler::{
    make_minibatch, sample_quadruplets, select_pairs, MiniBatch, PairSelection, Quadruplet, SamplerWarning,
    TrainingSet,
};
use crate::{derive_seed, Error, Label, Result, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EarlyStopping {
    /// Steps between validation evaluations.
    pub eval_every: usize,
    /// Evaluations without improvement before stopping.
    pub patience: usize,
}

impl Default for EarlyStopping {
    fn default() -> Self {
        Self { eval_every: 100, patience: 5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    /// Labeled rows per batch.
    pub batch_labeled: usize,
    /// Total rows per batch.
    pub batch_size: usize,
    pub contrastive: ContrastiveConfig,
    pub quadruplet: QuadrupletConfig,
    pub graph_k: usize,
    /// Labeled batch rows also act as kNN candidates when building `A`.
    pub mixed_candidates: bool,
    /// Quadruplets per batch; `None` means one per labeled row.
    pub quadruplets_per_batch: Option<usize>,
    pub w_semi: f64,
    pub w_quad: f64,
    pub seed: u64,
    pub early_stopping: Option<EarlyStopping>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            optimizer: OptimizerConfig::default(),
            batch_labeled: 64,
            batch_size: 128,
            contrastive: ContrastiveConfig::default(),
            quadruplet: QuadrupletConfig::default(),
            graph_k: 5,
            mixed_candidates: true,
            quadruplets_per_batch: None,
            w_semi: 1.0,
            w_quad: 1.0,
            seed: 0,
            early_stopping: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optimizer.validate()?;
        if self.batch_size == 0 || self.batch_labeled > self.batch_size {
            return Err(Error::invalid("batch sizes need 0 <= m <= n and n > 0"));
        }
        if self.graph_k == 0 {
            return Err(Error::invalid("graph_k must be >= 1"));
        }
        if !(self.contrastive.margin > 0.0 && self.quadruplet.margin > 0.0) {
            return Err(Error::invalid("margins must be > 0"));
        }
        for w in [self.w_semi, self.w_quad] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::invalid("loss weights must be finite and >= 0"));
            }
        }
        if let Some(es) = self.early_stopping {
            if es.eval_every == 0 || es.patience == 0 {
                return Err(Error::invalid("early stopping needs eval_every and patience >= 1"));
            }
        }
        Ok(())
    }

    fn quad_count(&self) -> usize {
        self.quadruplets_per_batch.unwrap_or(self.batch_labeled)
    }
}

/// Which loss branches contribute gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationMode {
    /// No metric learning: shallow representations are the embeddings.
    Base,
    SemiOnly,
    QuadOnly,
    Full,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [AblationMode::Base, AblationMode::SemiOnly, AblationMode::QuadOnly, AblationMode::Full];

    pub fn tag(self) -> &'static str {
        match self {
            AblationMode::Base => "base",
            AblationMode::SemiOnly => "semi_only",
            AblationMode::QuadOnly => "quad_only",
            AblationMode::Full => "full",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == s)
    }

    fn uses_semi(self) -> bool {
        matches!(self, AblationMode::SemiOnly | AblationMode::Full)
    }

    fn uses_quad(self) -> bool {
        matches!(self, AblationMode::QuadOnly | AblationMode::Full)
    }
}

/// Everything sampled for one step; independent of the ablation mode.
#[derive(Debug, Clone)]
pub struct StepPlan {
    pub batch: MiniBatch,
    pub c: SimilarityMatrix,
    pub a: SimilarityMatrix,
    pub pairs: PairSelection,
    pub quadruplets: Vec<Quadruplet>,
    pub warning: Option<SamplerWarning>,
}

/// Samples a batch, builds both similarity matrices, pairs and quadruplets.
pub fn plan_step(data: &TrainingSet, cfg: &TrainConfig, rng: &mut Rng) -> Result<StepPlan> {
    let (m, n) = (cfg.batch_labeled, cfg.batch_size);
    let batch = make_minibatch(data, m, n, rng)?;
    let c = labeled_similarity(&batch.labels, &batch.labels);
    let a = if cfg.mixed_candidates {
        unlabeled_similarity(&batch.s_img, &batch.s_txt, cfg.graph_k)?.block(m..n, m..n)
    } else {
        unlabeled_similarity(&batch.s_img.slice_rows(m, n), &batch.s_txt.slice_rows(m, n), cfg.graph_k)?
    };
    let pairs = select_pairs(&batch, &c, &a, rng)?;
    let q = sample_quadruplets(&batch, cfg.quad_count(), rng);
    Ok(StepPlan { batch, c, a, pairs, quadruplets: q.quadruplets, warning: q.warning })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub image: PathwayGrads,
    pub text: PathwayGrads,
}

impl ModelGrads {
    pub fn add_assign(&mut self, other: &ModelGrads) -> Result<()> {
        self.image.add_assign(&other.image)?;
        self.text.add_assign(&other.text)
    }

    pub fn max_abs(&self) -> f64 {
        self.image.max_abs().max(self.text.max_abs())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub grads: ModelGrads,
    /// Mean contrastive loss per selected pair.
    pub semi_loss: f64,
    /// Mean quadruplet loss per quadruplet.
    pub quad_loss: f64,
    /// `w_semi * semi_loss + w_quad * quad_loss` over the active branches.
    pub total: f64,
}

/// Losses and parameter gradients of one planned step under `mode`. Each
/// branch's gradient is averaged over its pair or quadruplet count.
pub fn step_gradients(state: &ModelState, plan: &StepPlan, cfg: &TrainConfig, mode: AblationMode) -> Result<StepOutcome> {
    let b = &plan.batch;
    let ti = state.image.forward_trunk(&b.s_img)?;
    let tt = state.text.forward_trunk(&b.s_txt)?;
    let mut img_terms: Vec<(Branch, Matrix, Matrix)> = Vec::new();
    let mut txt_terms: Vec<(Branch, Matrix, Matrix)> = Vec::new();
    let (mut semi_loss, mut quad_loss) = (0.0, 0.0);

    if mode.uses_semi() && !plan.pairs.is_empty() {
        let f = state.image.forward_head(&ti, Branch::Semi)?;
        let g = state.text.forward_head(&tt, Branch::Semi)?;
        let mut lg = semi_supervised_loss(&f, &g, &plan.c, &plan.a, &plan.pairs, &cfg.contrastive)?;
        lg.scale(1.0 / plan.pairs.len() as f64);
        semi_loss = lg.loss;
        lg.grad_f.scale(cfg.w_semi);
        lg.grad_g.scale(cfg.w_semi);
        img_terms.push((Branch::Semi, f, lg.grad_f));
        txt_terms.push((Branch::Semi, g, lg.grad_g));
    }
    if mode.uses_quad() && !plan.quadruplets.is_empty() {
        let f = state.image.forward_head(&ti, Branch::Quad)?;
        let g = state.text.forward_head(&tt, Branch::Quad)?;
        let mut lg = quadruplet_batch_loss(&f, &g, &plan.quadruplets, &cfg.quadruplet)?;
        lg.scale(1.0 / plan.quadruplets.len() as f64);
        quad_loss = lg.loss;
        lg.grad_f.scale(cfg.w_quad);
        lg.grad_g.scale(cfg.w_quad);
        img_terms.push((Branch::Quad, f, lg.grad_f));
        txt_terms.push((Branch::Quad, g, lg.grad_g));
    }

    let image = state.image.backward_multi(&ti, &as_refs(&img_terms))?;
    let text = state.text.backward_multi(&tt, &as_refs(&txt_terms))?;
    let total = cfg.w_semi * semi_loss + cfg.w_quad * quad_loss;
    if !(total.is_finite() && image.max_abs().is_finite() && text.max_abs().is_finite()) {
        return Err(Error::NonFinite("training step"));
    }
    Ok(StepOutcome { grads: ModelGrads { image, text }, semi_loss, quad_loss, total })
}

fn as_refs(terms: &[(Branch, Matrix, Matrix)]) -> Vec<(Branch, &Matrix, &Matrix)> {
    terms.iter().map(|(b, o, g)| (*b, o, g)).collect()
}

pub fn apply_gradients(state: &mut ModelState, grads: &ModelGrads, opt: &OptimizerConfig) -> Result<()> {
    state.image.apply(&grads.image, opt)?;
    state.text.apply(&grads.text, opt)?;
    state.step += 1;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainWarning {
    /// The labeled pool has a single class; the quadruplet branch is off.
    QuadrupletBranchDisabled,
    /// Early stopping ended training at this step.
    EarlyStopped { step: usize },
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub semi_loss: Vec<f64>,
    pub quad_loss: Vec<f64>,
    pub total_loss: Vec<f64>,
    /// Value of the step counter when training ended.
    pub final_step: usize,
    /// `(step, mean MAP over all results)` for each validation evaluation.
    pub validation_map: Vec<(usize, f64)>,
    pub warnings: Vec<TrainWarning>,
    /// Filled in by callers with a clock.
    pub wall_clock_secs: Option<f64>,
    /// Filled in by callers that persist the model.
    pub checkpoint: Option<alloc::string::String>,
}

/// Held-out data for early stopping.
#[derive(Debug, Clone, Copy)]
pub struct ValidationSet<'a> {
    pub s_img: &'a Matrix,
    pub s_txt: &'a Matrix,
    pub labels: &'a [Label],
}

/// Fresh parameters for `net`, seeded from the training seed.
pub fn initial_state(net: &NetConfig, seed: u64) -> Result<ModelState> {
    ModelState::init(net, &mut crate::rng_from_seed(derive_seed(seed, 9)))
}

/// Full multi-task training.
pub fn train(
    state: ModelState,
    data: &TrainingSet,
    cfg: &TrainConfig,
    validation: Option<ValidationSet<'_>>,
) -> Result<(ModelState, TrainReport)> {
    train_mode(state, data, cfg, AblationMode::Full, validation)
}

/// Runs steps until the step counter reaches `max_steps`. Step `t` draws its
/// batch from a generator seeded by `(seed, t)`, so resumed runs match
/// uninterrupted ones.
pub fn train_mode(
    mut state: ModelState,
    data: &TrainingSet,
    cfg: &TrainConfig,
    mode: AblationMode,
    validation: Option<ValidationSet<'_>>,
) -> Result<(ModelState, TrainReport)> {
    cfg.validate()?;
    if mode == AblationMode::Base {
        return Err(Error::invalid("base mode has no metric training"));
    }
    if data.dim() != state.image.input_dim() {
        return Err(Error::shape("train", (data.s_img.rows(), state.image.input_dim()), data.s_img.shape()));
    }
    let mut report = TrainReport::default();
    if data.labeled_classes() < 2 {
        if mode == AblationMode::QuadOnly {
            return Err(Error::Degenerate("quadruplet branch needs at least two labeled classes".into()));
        }
        if mode == AblationMode::Full {
            report.warnings.push(TrainWarning::QuadrupletBranchDisabled);
        }
    }
    if cfg.early_stopping.is_some() && validation.is_none() {
        return Err(Error::invalid("early stopping needs a validation set"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    while state.step < cfg.optimizer.max_steps {
        let mut rng = crate::rng_from_seed(derive_seed(cfg.seed, state.step as u64));
        let plan = plan_step(data, cfg, &mut rng)?;
        let out = step_gradients(&state, &plan, cfg, mode)?;
        apply_gradients(&mut state, &out.grads, &cfg.optimizer)?;
        report.semi_loss.push(out.semi_loss);
        report.quad_loss.push(out.quad_loss);
        report.total_loss.push(out.total);

        if let (Some(es), Some(v)) = (cfg.early_stopping, validation) {
            if state.step.is_multiple_of(es.eval_every) {
                let (qi, qt) = state.embed(v.s_img, v.s_txt)?;
                let reports = evaluate(&qi, &qt, v.labels, v.labels, &EvalConfig::default())?;
                let score = average_map(&reports, Scope::All);
                report.validation_map.push((state.step, score));
                if score > best {
                    best = score;
                    stale = 0;
                } else {
                    stale += 1;
                    if stale >= es.patience {
                        report.warnings.push(TrainWarning::EarlyStopped { step: state.step });
                        break;
                    }
                }
            }
        }
    }
    report.final_step = state.step;
    Ok((state, report))
}

/// Embedding source produced by an ablation run.
#[derive(Debug, Clone, PartialEq)]
pub enum Embedder {
    /// Shallow representations pass through unchanged.
    Base,
    Metric(Box<ModelState>),
}

impl Embedder {
    pub fn embed(&self, s_img: &Matrix, s_txt: &Matrix) -> Result<(Matrix, Matrix)> {
        match self {
            Embedder::Base => Ok((s_img.clone(), s_txt.clone())),
            Embedder::Metric(state) => state.embed(s_img, s_txt),
        }
    }
}

/// [`initial_state`] with input normalization fitted on the training rows
/// when `net.normalize_input` is set.
pub fn prepared_state(net: &NetConfig, seed: u64, data: &TrainingSet) -> Result<ModelState> {
    let mut state = initial_state(net, seed)?;
    if net.normalize_input {
        let rows: Vec<usize> = data.labeled.iter().chain(&data.unlabeled).copied().collect();
        state.fit_input_norm(&data.s_img, &data.s_txt, &rows)?;
    }
    Ok(state)
}

/// Trains one ablation mode. Single-loss modes embed through the head they
/// trained unless the trunk output is configured.
pub fn ablation_train(
    mode: AblationMode,
    state: ModelState,
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<(Embedder, Option<TrainReport>)> {
    if mode == AblationMode::Base {
        return Ok((Embedder::Base, None));
    }
    let (mut state, report) = train_mode(state, data, cfg, mode, None)?;
    if state.config.inference != InferenceBranch::Trunk {
        match mode {
            AblationMode::SemiOnly => state.config.inference = InferenceBranch::Semi,
            AblationMode::QuadOnly => state.config.inference = InferenceBranch::Quad,
            _ => {}
        }
    }
    Ok((Embedder::Metric(Box::new(state)), Some(report)))
}

/// Trailing moving average; entry `i` covers steps `i..i + window`.
pub fn moving_average(trace: &[f64], window: usize) -> Vec<f64> {
    if window == 0 || trace.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(trace.len() - window + 1);
    let mut sum: f64 = trace[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..trace.len() {
        sum += trace[i] - trace[i - window];
        out.push(sum / window as f64);
    }
    out
}

/// First step `t` (0-based) at which the `window`-smoothed loss has changed by
/// at most `tol` (relative) over the preceding `span` steps.
pub fn plateau_step(trace: &[f64], window: usize, span: usize, tol: f64) -> Option<usize> {
    let s = moving_average(trace, window);
    (span..s.len())
        .find(|&j| (s[j] - s[j - span]).abs() <= tol * s[j - span].abs())
        .map(|j| j + window - 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metric_net::NetConfig;
    use crate::nd::{seeded_init, InitScheme};
    use rand::Rng as _;

    fn two_class_set(n_labeled: usize, n_unlabeled: usize, dim: usize, seed: u64) -> TrainingSet {
        let n = n_labeled + n_unlabeled;
        let mut rng = crate::rng_from_seed(seed);
        let mut s_img = Matrix::zeros(n, dim);
        let mut s_txt = Matrix::zeros(n, dim);
        let mut labels = Vec::new();
        for r in 0..n {
            let c = (r % 2) as i64;
            labels.push(c);
            for j in 0..dim {
                let mu = if (j as i64 + c) % 2 == 0 { 0.8 } else { 0.2 };
                s_img.set(r, j, mu + 0.3 * (rng.random::<f64>() - 0.5));
                s_txt.set(r, j, 1.0 - mu + 0.3 * (rng.random::<f64>() - 0.5));
            }
        }
        TrainingSet::new(s_img, s_txt, labels, (0..n_labeled).collect(), (n_labeled..n).collect()).unwrap()
    }

    fn small_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            optimizer: OptimizerConfig { learning_rate: 0.05, max_steps: steps, ..OptimizerConfig::default() },
            batch_labeled: 8,
            batch_size: 16,
            graph_k: 2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn small_net(dim: usize) -> NetConfig {
        NetConfig { trunk_dim: 8, head_dim: 6, ..NetConfig::new(dim) }
    }

    #[test]
    fn zero_learning_rate_is_noop() {
        let data = two_class_set(20, 20, 4, 1);
        let mut cfg = small_cfg(5);
        cfg.optimizer.learning_rate = 0.0;
        let init = initial_state(&small_net(4), 3).unwrap();
        let (after, report) = train(init.clone(), &data, &cfg, None).unwrap();
        assert_eq!(after.image, init.image);
        assert_eq!(after.text, init.text);
        assert_eq!(report.total_loss.len(), 5);
    }

    #[test]
    fn loss_descends_on_two_clusters() {
        let data = two_class_set(40, 40, 6, 2);
        let cfg = small_cfg(500);
        let (_, report) = train(initial_state(&small_net(6), 1).unwrap(), &data, &cfg, None).unwrap();
        assert!(report.total_loss.iter().all(|v| v.is_finite()));
        let s = moving_average(&report.total_loss, 50);
        assert!(s.last().unwrap() < &s[0], "{} vs {}", s.last().unwrap(), s[0]);
    }

    #[test]
    fn same_seed_same_result_and_resume_matches() {
        let data = two_class_set(20, 20, 4, 3);
        let cfg = small_cfg(12);
        let init = initial_state(&small_net(4), 2).unwrap();
        let (a, ra) = train(init.clone(), &data, &cfg, None).unwrap();
        let (b, rb) = train(init.clone(), &data, &cfg, None).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);

        let half = TrainConfig { optimizer: OptimizerConfig { max_steps: 5, ..cfg.optimizer }, ..cfg };
        let (mid, _) = train(init, &data, &half, None).unwrap();
        let (resumed, _) = train(mid, &data, &cfg, None).unwrap();
        assert_eq!(resumed, a);
    }

    #[test]
    fn full_step_is_sum_of_branches() {
        let data = two_class_set(20, 20, 4, 4);
        let cfg = small_cfg(1);
        let state = initial_state(&small_net(4), 6).unwrap();
        let plan = plan_step(&data, &cfg, &mut crate::rng_from_seed(1)).unwrap();
        let full = step_gradients(&state, &plan, &cfg, AblationMode::Full).unwrap();
        let mut sum = step_gradients(&state, &plan, &cfg, AblationMode::SemiOnly).unwrap().grads;
        sum.add_assign(&step_gradients(&state, &plan, &cfg, AblationMode::QuadOnly).unwrap().grads).unwrap();
        let mut diff = full.grads.clone();
        diff.image.trunk.iter_mut().chain(diff.image.heads.iter_mut()).chain(diff.text.trunk.iter_mut()).chain(diff.text.heads.iter_mut()).for_each(|g| g.scale(-1.0));
        diff.add_assign(&sum).unwrap();
        assert!(diff.max_abs() <= 1e-12);
    }

    #[test]
    fn zero_margins_at_global_minimum() {
        // all rows one class, zero parameters: every embedding is 0.5
        let n = 10;
        let s = seeded_init(n, 3, InitScheme::Uniform(1.0), 1);
        let data = TrainingSet::new(s.clone(), s, alloc::vec![7; n], (0..n).collect(), Vec::new()).unwrap();
        let mut cfg = small_cfg(1);
        cfg.batch_labeled = n;
        cfg.batch_size = n;
        cfg.contrastive.margin = 0.0;
        cfg.quadruplet.margin = 0.0;
        let state = ModelState::zeros(&small_net(3));
        let plan = plan_step(&data, &cfg, &mut crate::rng_from_seed(2)).unwrap();
        assert!(plan.pairs.pairs.iter().all(|p| p.similar));
        let out = step_gradients(&state, &plan, &cfg, AblationMode::Full).unwrap();
        assert_eq!(out.total, 0.0);
        assert_eq!(out.grads.max_abs(), 0.0);
    }

    #[test]
    fn single_class_handling() {
        let n = 12;
        let s = seeded_init(n, 3, InitScheme::Uniform(1.0), 1);
        let data = TrainingSet::new(s.clone(), s, alloc::vec![1; n], (0..6).collect(), (6..n).collect()).unwrap();
        let cfg = TrainConfig { batch_labeled: 4, batch_size: 8, ..small_cfg(3) };
        let st = initial_state(&small_net(3), 1).unwrap();
        assert!(matches!(ablation_train(AblationMode::QuadOnly, st.clone(), &data, &cfg), Err(Error::Degenerate(_))));
        let (_, report) = train(st, &data, &cfg, None).unwrap();
        assert_eq!(report.warnings, alloc::vec![TrainWarning::QuadrupletBranchDisabled]);
        assert!(report.quad_loss.iter().all(|&q| q == 0.0));
    }

    #[test]
    fn base_mode_passes_through() {
        let data = two_class_set(10, 10, 4, 5);
        let (e, r) = ablation_train(AblationMode::Base, initial_state(&small_net(4), 1).unwrap(), &data, &small_cfg(3)).unwrap();
        assert!(r.is_none());
        let (qi, qt) = e.embed(&data.s_img, &data.s_txt).unwrap();
        assert_eq!((qi, qt), (data.s_img.clone(), data.s_txt.clone()));
    }

    #[test]
    fn single_loss_modes_embed_through_their_head() {
        let data = two_class_set(10, 10, 4, 5);
        let init = initial_state(&small_net(4), 1).unwrap();
        for (mode, want) in [
            (AblationMode::SemiOnly, InferenceBranch::Semi),
            (AblationMode::QuadOnly, InferenceBranch::Quad),
            (AblationMode::Full, InferenceBranch::Semi),
        ] {
            let (e, _) = ablation_train(mode, init.clone(), &data, &small_cfg(2)).unwrap();
            let Embedder::Metric(st) = e else { panic!("expected a metric embedder") };
            assert_eq!(st.config.inference, want, "{mode:?}");
        }
    }

    #[test]
    fn early_stopping_records_evaluations() {
        let data = two_class_set(20, 20, 4, 6);
        let mut cfg = small_cfg(400);
        cfg.early_stopping = Some(EarlyStopping { eval_every: 10, patience: 2 });
        let v = ValidationSet { s_img: &data.s_img, s_txt: &data.s_txt, labels: &data.labels };
        let (st, report) = train(initial_state(&small_net(4), 1).unwrap(), &data, &cfg, Some(v)).unwrap();
        assert!(!report.validation_map.is_empty());
        assert_eq!(report.final_step, st.step);
        assert_eq!(report.total_loss.len(), st.step);
        assert!(train(st, &data, &cfg, None).is_err());
    }

    #[test]
    fn config_validation() {
        let mut cfg = TrainConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.quadruplet.margin = 0.0;
        assert!(cfg.validate().is_err());
        let cfg = TrainConfig { batch_labeled: 5, batch_size: 4, ..TrainConfig::default() };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn plateau_detection() {
        let trace: Vec<f64> = (0..3000).map(|t| 1.0 + libm::exp(-(t as f64) / 200.0)).collect();
        let p = plateau_step(&trace, 50, 500, 0.01).unwrap();
        // smoothed drop over 500 steps falls below 1% of the value near t ≈ 1300
        assert!((1000..1700).contains(&p), "{p}");
        assert_eq!(plateau_step(&trace[..400], 50, 500, 0.01), None);
        assert_eq!(moving_average(&[1.0, 2.0, 3.0, 4.0], 2), alloc::vec![1.5, 2.5, 3.5]);
    }
}
