//! Flat `section.key = value` configuration.
//!
//! Precedence, lowest first: built-in defaults, config file, `XMMR_SEED`,
//! command-line `--section.key value` flags.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use xmmr_core::base_net::{PretrainConfig, RbmConfig};
use xmmr_core::losses::ContrastiveVariant;
use xmmr_core::metric_net::{Activation, InferenceBranch, NetConfig};
use xmmr_core::retrieval::{ApNorm, EvalConfig};
use xmmr_core::trainer::{EarlyStopping, TrainConfig};

use crate::error::{CliError, Result};
use crate::synth::SynthConfig;

pub const SEED_ENV: &str = "XMMR_SEED";

/// Metric-network settings that do not depend on the data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetSettings {
    pub trunk_dim: usize,
    pub head_dim: usize,
    pub trunk_activation: Activation,
    pub shared_head: bool,
    pub inference: InferenceBranch,
    pub normalize_input: bool,
}

impl Default for NetSettings {
    fn default() -> Self {
        let n = NetConfig::new(1);
        Self {
            trunk_dim: n.trunk_dim,
            head_dim: n.head_dim,
            trunk_activation: n.trunk_activation,
            shared_head: n.shared_head,
            inference: n.inference,
            normalize_input: n.normalize_input,
        }
    }
}

impl NetSettings {
    pub fn for_input(&self, input_dim: usize) -> NetConfig {
        NetConfig {
            input_dim,
            trunk_dim: self.trunk_dim,
            head_dim: self.head_dim,
            trunk_activation: self.trunk_activation,
            shared_head: self.shared_head,
            inference: self.inference,
            normalize_input: self.normalize_input,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Settings {
    pub seed: u64,
    pub pretrain: PretrainConfig,
    pub net: NetSettings,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub synth: SynthConfig,
    /// Copied into `train.early_stopping` by [`Settings::finish`].
    pub early_stopping: bool,
    pub early_stopping_cfg: EarlyStopping,
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| CliError::usage(format!("invalid value `{v}` for `{key}`")))
}

fn flag(key: &str, v: &str) -> Result<bool> {
    match v.trim() {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(CliError::usage(format!("invalid boolean `{v}` for `{key}`"))),
    }
}

fn tagged<T>(key: &str, v: &str, f: impl Fn(&str) -> Option<T>) -> Result<T> {
    f(v.trim()).ok_or_else(|| CliError::usage(format!("invalid value `{v}` for `{key}`")))
}

fn variant_tag(v: ContrastiveVariant) -> &'static str {
    match v {
        ContrastiveVariant::Squared => "squared",
        ContrastiveVariant::HingedNorm => "hinged_norm",
    }
}

fn variant_from_tag(s: &str) -> Option<ContrastiveVariant> {
    match s {
        "squared" => Some(ContrastiveVariant::Squared),
        "hinged_norm" => Some(ContrastiveVariant::HingedNorm),
        _ => None,
    }
}

fn rbm_keys(prefix: &str, c: &RbmConfig, out: &mut Vec<(String, String)>) {
    let mut put = |k: &str, v: &dyn Display| out.push((format!("pretrain.{prefix}_{k}"), v.to_string()));
    put("epochs", &c.epochs);
    put("batch_size", &c.batch_size);
    put("learning_rate", &c.learning_rate);
    put("momentum", &c.momentum);
    put("weight_decay", &c.weight_decay);
    put("init_scale", &c.init_scale);
}

fn set_rbm(c: &mut RbmConfig, field: &str, key: &str, v: &str) -> Result<bool> {
    match field {
        "epochs" => c.epochs = num(key, v)?,
        "batch_size" => c.batch_size = num(key, v)?,
        "learning_rate" => c.learning_rate = num(key, v)?,
        "momentum" => c.momentum = num(key, v)?,
        "weight_decay" => c.weight_decay = num(key, v)?,
        "init_scale" => c.init_scale = num(key, v)?,
        _ => return Ok(false),
    }
    Ok(true)
}

impl Settings {
    /// Sets one key. Unknown keys are usage errors.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let p = &mut self.pretrain;
        let t = &mut self.train;
        let s = &mut self.synth;
        match key {
            "seed" => self.seed = num(key, v)?,

            "pretrain.image_hidden1" => p.image_hidden.0 = num(key, v)?,
            "pretrain.image_hidden2" => p.image_hidden.1 = num(key, v)?,
            "pretrain.text_hidden1" => p.text_hidden.0 = num(key, v)?,
            "pretrain.text_hidden2" => p.text_hidden.1 = num(key, v)?,
            "pretrain.ae_epochs" => p.ae.epochs = num(key, v)?,
            "pretrain.ae_batch_size" => p.ae.batch_size = num(key, v)?,
            "pretrain.ae_learning_rate" => p.ae.learning_rate = num(key, v)?,
            "pretrain.ae_momentum" => p.ae.momentum = num(key, v)?,
            "pretrain.ae_weight_decay" => p.ae.weight_decay = num(key, v)?,
            "pretrain.ae_single_views" => p.ae.single_modality_views = flag(key, v)?,
            "pretrain.softmax_head" => p.softmax_head = flag(key, v)?,
            "pretrain.head_epochs" => p.head.epochs = num(key, v)?,
            "pretrain.head_batch_size" => p.head.batch_size = num(key, v)?,
            "pretrain.head_learning_rate" => p.head.learning_rate = num(key, v)?,
            "pretrain.head_momentum" => p.head.momentum = num(key, v)?,

            "net.trunk_dim" => self.net.trunk_dim = num(key, v)?,
            "net.head_dim" => self.net.head_dim = num(key, v)?,
            "net.trunk_activation" => self.net.trunk_activation = tagged(key, v, Activation::from_tag)?,
            "net.shared_head" => self.net.shared_head = flag(key, v)?,
            "net.inference_branch" => self.net.inference = tagged(key, v, InferenceBranch::from_tag)?,
            "net.normalize_input" => self.net.normalize_input = flag(key, v)?,

            "train.learning_rate" => t.optimizer.learning_rate = num(key, v)?,
            "train.momentum" => t.optimizer.momentum = num(key, v)?,
            "train.weight_decay" => t.optimizer.weight_decay = num(key, v)?,
            "train.max_steps" => t.optimizer.max_steps = num(key, v)?,
            "train.batch_labeled" => t.batch_labeled = num(key, v)?,
            "train.batch_size" => t.batch_size = num(key, v)?,
            "train.quadruplets_per_batch" => {
                let n: usize = num(key, v)?;
                t.quadruplets_per_batch = (n > 0).then_some(n);
            }
            "train.early_stopping" => self.early_stopping = flag(key, v)?,
            "train.eval_every" => self.early_stopping_cfg.eval_every = num(key, v)?,
            "train.patience" => self.early_stopping_cfg.patience = num(key, v)?,

            "loss.alpha" => t.contrastive.margin = num(key, v)?,
            "loss.beta" => t.quadruplet.margin = num(key, v)?,
            "loss.w_semi" => t.w_semi = num(key, v)?,
            "loss.w_quad" => t.w_quad = num(key, v)?,
            "loss.contrastive_variant" => t.contrastive.variant = tagged(key, v, variant_from_tag)?,

            "graph.k" => t.graph_k = num(key, v)?,
            "graph.mixed_candidates" => t.mixed_candidates = flag(key, v)?,

            "eval.top_k" => self.eval.top_k = num(key, v)?,
            "eval.ap_norm" => self.eval.ap_norm = tagged(key, v, ApNorm::from_tag)?,

            "synth.classes" => s.classes = num(key, v)?,
            "synth.per_class" => s.per_class = num(key, v)?,
            "synth.image_dim" => s.image_dim = num(key, v)?,
            "synth.text_dim" => s.text_dim = num(key, v)?,
            "synth.latent_dim" => s.latent_dim = num(key, v)?,
            "synth.image_noise" => s.image_noise = num(key, v)?,
            "synth.text_noise" => s.text_noise = num(key, v)?,
            "synth.doc_length" => s.doc_length = num(key, v)?,
            "synth.train_frac" => s.train_frac = num(key, v)?,
            "synth.val_frac" => s.val_frac = num(key, v)?,
            "synth.unlabeled_frac" => s.unlabeled_frac = num(key, v)?,

            _ => {
                let handled = if let Some(rest) = key.strip_prefix("pretrain.") {
                    let (layer, field) = rest.split_once('_').unwrap_or((rest, ""));
                    match layer {
                        "gaussian" => set_rbm(&mut p.image_rbm, field, key, v)?,
                        "softmax" => set_rbm(&mut p.text_rbm, field, key, v)?,
                        "binary" => set_rbm(&mut p.top_rbm, field, key, v)?,
                        _ => false,
                    }
                } else {
                    false
                };
                if !handled {
                    return Err(CliError::usage(format!("unknown configuration key `{key}`")));
                }
            }
        }
        Ok(())
    }

    /// Every key with its current value, in a stable order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: &dyn Display| out.push((k.to_string(), v.to_string()));
        let (p, t, s) = (&self.pretrain, &self.train, &self.synth);
        put("seed", &self.seed);
        put("pretrain.image_hidden1", &p.image_hidden.0);
        put("pretrain.image_hidden2", &p.image_hidden.1);
        put("pretrain.text_hidden1", &p.text_hidden.0);
        put("pretrain.text_hidden2", &p.text_hidden.1);
        put("pretrain.ae_epochs", &p.ae.epochs);
        put("pretrain.ae_batch_size", &p.ae.batch_size);
        put("pretrain.ae_learning_rate", &p.ae.learning_rate);
        put("pretrain.ae_momentum", &p.ae.momentum);
        put("pretrain.ae_weight_decay", &p.ae.weight_decay);
        put("pretrain.ae_single_views", &p.ae.single_modality_views);
        put("pretrain.softmax_head", &p.softmax_head);
        put("pretrain.head_epochs", &p.head.epochs);
        put("pretrain.head_batch_size", &p.head.batch_size);
        put("pretrain.head_learning_rate", &p.head.learning_rate);
        put("pretrain.head_momentum", &p.head.momentum);
        put("net.trunk_dim", &self.net.trunk_dim);
        put("net.head_dim", &self.net.head_dim);
        put("net.trunk_activation", &self.net.trunk_activation.tag());
        put("net.shared_head", &self.net.shared_head);
        put("net.inference_branch", &self.net.inference.tag());
        put("net.normalize_input", &self.net.normalize_input);
        put("train.learning_rate", &t.optimizer.learning_rate);
        put("train.momentum", &t.optimizer.momentum);
        put("train.weight_decay", &t.optimizer.weight_decay);
        put("train.max_steps", &t.optimizer.max_steps);
        put("train.batch_labeled", &t.batch_labeled);
        put("train.batch_size", &t.batch_size);
        put("train.quadruplets_per_batch", &t.quadruplets_per_batch.unwrap_or(0));
        put("train.early_stopping", &self.early_stopping);
        put("train.eval_every", &self.early_stopping_cfg.eval_every);
        put("train.patience", &self.early_stopping_cfg.patience);
        put("loss.alpha", &t.contrastive.margin);
        put("loss.beta", &t.quadruplet.margin);
        put("loss.w_semi", &t.w_semi);
        put("loss.w_quad", &t.w_quad);
        put("loss.contrastive_variant", &variant_tag(t.contrastive.variant));
        put("graph.k", &t.graph_k);
        put("graph.mixed_candidates", &t.mixed_candidates);
        put("eval.top_k", &self.eval.top_k);
        put("eval.ap_norm", &self.eval.ap_norm.tag());
        put("synth.classes", &s.classes);
        put("synth.per_class", &s.per_class);
        put("synth.image_dim", &s.image_dim);
        put("synth.text_dim", &s.text_dim);
        put("synth.latent_dim", &s.latent_dim);
        put("synth.image_noise", &s.image_noise);
        put("synth.text_noise", &s.text_noise);
        put("synth.doc_length", &s.doc_length);
        put("synth.train_frac", &s.train_frac);
        put("synth.val_frac", &s.val_frac);
        put("synth.unlabeled_frac", &s.unlabeled_frac);
        for (prefix, c) in [("gaussian", &p.image_rbm), ("softmax", &p.text_rbm), ("binary", &p.top_rbm)] {
            rbm_keys(prefix, c, &mut out);
        }
        out
    }

    /// Config-file rendering of [`Self::entries`]; parses back to `self`.
    pub fn to_text(&self) -> String {
        self.entries().iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    /// Propagates the global seed and checks cross-field constraints.
    pub fn finish(mut self) -> Result<Self> {
        self.pretrain.seed = self.seed;
        self.train.seed = self.seed;
        self.synth.seed = self.seed;
        self.train.early_stopping = self.early_stopping.then_some(self.early_stopping_cfg);
        self.train.validate()?;
        if self.net.trunk_dim == 0 || self.net.head_dim == 0 {
            return Err(CliError::usage("net dimensions must be positive"));
        }
        if self.eval.top_k == 0 {
            return Err(CliError::usage("eval.top_k must be positive"));
        }
        self.synth.validate()?;
        Ok(self)
    }
}

/// `(key, value, line)` triples of a config text; `#` starts a comment.
pub fn parse_config_text(text: &str, path: &Path) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::parse(path, i + 1, "expected `key = value`"))?;
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

pub fn apply_text(settings: &mut Settings, text: &str, path: &Path) -> Result<()> {
    for (k, v, line) in parse_config_text(text, path)? {
        settings.set(&k, &v).map_err(|e| CliError::parse(path, line, e.to_string()))?;
    }
    Ok(())
}

/// Resolves settings from an optional file, the seed variable and overrides.
pub fn load_settings(file: Option<&Path>, env_seed: Option<&str>, overrides: &[(String, String)]) -> Result<Settings> {
    let mut s = Settings::default();
    if let Some(path) = file {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        apply_text(&mut s, &text, path)?;
    }
    if let Some(seed) = env_seed {
        s.set("seed", seed)
            .map_err(|_| CliError::usage(format!("{SEED_ENV} must be an unsigned integer, got `{seed}`")))?;
    }
    for (k, v) in overrides {
        s.set(k, v)?;
    }
    s.finish()
}

/// `(key, value)` pairs given on the command line.
pub type Overrides = Vec<(String, String)>;

/// Splits `--section.key value` and `--section.key=value` (and `--seed`)
/// out of an argument list, returning the remaining arguments.
pub fn extract_overrides(args: Vec<String>) -> Result<(Vec<String>, Overrides)> {
    let mut rest = Vec::with_capacity(args.len());
    let mut overrides = Vec::new();
    let mut it = args.into_iter();
    while let Some(a) = it.next() {
        let Some(body) = a.strip_prefix("--") else {
            rest.push(a);
            continue;
        };
        let (key, inline) = match body.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (body.to_string(), None),
        };
        if !(key.contains('.') || key == "seed") {
            rest.push(a);
            continue;
        }
        let value = match inline {
            Some(v) => v,
            None => it.next().ok_or_else(|| CliError::usage(format!("missing value for --{key}")))?,
        };
        overrides.push((key, value));
    }
    Ok((rest, overrides))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut s = Settings::default();
        s.set("train.learning_rate", "0.0123").unwrap();
        s.set("net.shared_head", "true").unwrap();
        s.set("pretrain.softmax_batch_size", "7").unwrap();
        s.set("train.early_stopping", "true").unwrap();
        let mut back = Settings::default();
        apply_text(&mut back, &s.to_text(), Path::new("mem")).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn precedence_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.conf");
        std::fs::write(&path, "# comment\nseed = 5\ngraph.k = 3 # trailing\n").unwrap();
        let s = load_settings(Some(&path), Some("9"), &[("graph.k".into(), "4".into())]).unwrap();
        assert_eq!(s.seed, 9);
        assert_eq!(s.train.seed, 9);
        assert_eq!(s.train.graph_k, 4);

        std::fs::write(&path, "nope.key = 1\n").unwrap();
        let err = load_settings(Some(&path), None, &[]).unwrap_err();
        assert!(err.to_string().contains(":1:"), "{err}");
        assert!(load_settings(None, Some("x"), &[]).is_err());
        assert!(load_settings(None, None, &[("loss.alpha".into(), "0".into())]).is_err());
    }

    #[test]
    fn overrides_are_extracted() {
        let args = ["train", "--manifest", "m.txt", "--train.max_steps", "10", "--graph.k=2", "--seed", "3"];
        let (rest, o) = extract_overrides(args.iter().map(|s| s.to_string()).collect()).unwrap();
        assert_eq!(rest, vec!["train", "--manifest", "m.txt"]);
        assert_eq!(o.len(), 3);
        assert_eq!(o[1], ("graph.k".to_string(), "2".to_string()));
        assert!(extract_overrides(vec!["--graph.k".into()]).is_err());
    }
}
