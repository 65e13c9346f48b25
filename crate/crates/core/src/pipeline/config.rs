//! Flat `key = value` configuration. `#` starts a comment; blank lines are
//! ignored; unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::ToyWorldSpec;
use crate::dpcore::PrivacyMode;
use crate::error::{Error, Result};
use crate::generative::{
    ModelKind, DEFAULT_BETA_END, DEFAULT_BETA_START, DEFAULT_DIFFUSION_STEPS, DEFAULT_SAMPLER_STEPS,
    DEFAULT_UPDATE_RATIO,
};
use crate::metrics::ClassifierTag;
use crate::nn::Activation;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub mode: PrivacyMode,
    pub output: PathBuf,

    /// Data files; when `public` is absent a toy world is generated.
    pub public: Option<PathBuf>,
    pub sensitive_train: Option<PathBuf>,
    pub sensitive_test: Option<PathBuf>,
    pub vocabulary: Option<Vec<String>>,
    pub toy: ToyWorldSpec,

    pub k: usize,
    pub k1: Option<usize>,
    pub k2: Option<usize>,
    pub sigma2: f64,
    pub per_category: bool,
    pub sqf_hidden: usize,
    pub sqf_epochs: usize,
    pub sqf_lr: f64,

    pub epsilon: f64,
    pub delta: f64,
    pub steps: usize,
    pub batch_size: f64,
    pub clip_norm: f64,
    pub eta: f64,
    pub sigma1: Option<f64>,

    pub model: ModelKind,
    pub conditional: bool,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub latent_dim: usize,
    pub update_ratio: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub sampler_steps: usize,
    pub synth_count: Option<usize>,
    pub eval_classifier: ClassifierTag,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: PrivacyMode::Enforced,
            output: PathBuf::from("run"),
            public: None,
            sensitive_train: None,
            sensitive_test: None,
            vocabulary: None,
            toy: ToyWorldSpec::default(),
            k: 1,
            k1: None,
            k2: None,
            sigma2: 20.0,
            per_category: true,
            sqf_hidden: 0,
            sqf_epochs: 200,
            sqf_lr: 0.05,
            epsilon: 10.0,
            delta: 1e-5,
            steps: 200,
            batch_size: 32.0,
            clip_norm: 1.0,
            eta: 0.05,
            sigma1: None,
            model: ModelKind::Diffusion,
            conditional: true,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            diffusion_steps: DEFAULT_DIFFUSION_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            latent_dim: 8,
            update_ratio: DEFAULT_UPDATE_RATIO,
            pretrain_epochs: 40,
            pretrain_batch: 64,
            pretrain_lr: 0.01,
            sampler_steps: DEFAULT_SAMPLER_STEPS,
            synth_count: None,
            eval_classifier: ClassifierTag::Linear,
        }
    }
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse().map_err(|_| cfg_err(format!("`{key}`: cannot parse `{v}`")))
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>> {
    v.split(',').map(|s| parse(key, s.trim())).collect()
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(cfg_err(format!("`{key}`: expected true/false, got `{v}`"))),
    }
}

fn parse_mode(v: &str) -> Result<PrivacyMode> {
    match v {
        "enforced" => Ok(PrivacyMode::Enforced),
        "testing" => Ok(PrivacyMode::Testing),
        other => Err(cfg_err(format!("`mode`: unknown mode `{other}`"))),
    }
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Relu => "relu",
        Activation::Tanh => "tanh",
        Activation::Identity => "identity",
        Activation::Sigmoid => "sigmoid",
    }
}

fn join<T: ToString>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut seen = BTreeMap::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| cfg_err(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if seen.insert(k.clone(), v).is_some() {
                return Err(cfg_err(format!("line {}: `{k}` set twice", no + 1)));
            }
        }
        let mut cfg = Self::default();
        for (k, v) in &seen {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| cfg_err(format!("{}: {e}", path.as_ref().display())))?;
        Self::parse(&text)
    }

    /// Sets one key; values are validated together by [`Self::validate`].
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        let opt_usize = |v: &str| -> Result<Option<usize>> {
            if v == "auto" {
                Ok(None)
            } else {
                parse(key, v).map(Some)
            }
        };
        match key {
            "seed" => self.seed = parse(key, v)?,
            "mode" => self.mode = parse_mode(v)?,
            "output" => self.output = PathBuf::from(v),
            "public" => self.public = Some(PathBuf::from(v)),
            "sensitive_train" => self.sensitive_train = Some(PathBuf::from(v)),
            "sensitive_test" => self.sensitive_test = Some(PathBuf::from(v)),
            "vocabulary" => self.vocabulary = Some(v.split(',').map(|s| s.trim().to_string()).collect()),
            "toy.names" => self.toy.names = v.split(',').map(|s| s.trim().to_string()).collect(),
            "toy.dim" => self.toy.dim = parse(key, v)?,
            "toy.separation" => self.toy.separation = parse(key, v)?,
            "toy.spread" => self.toy.spread = parse(key, v)?,
            "toy.public_size" => self.toy.public_size = parse(key, v)?,
            "toy.sensitive_size" => self.toy.sensitive_size = parse(key, v)?,
            "toy.overlap" => self.toy.overlap = parse_list(key, v)?,
            "toy.mixture" => self.toy.mixture = parse_list(key, v)?,
            "toy.sensitive_shift" => self.toy.sensitive_shift = parse(key, v)?,
            "toy.split" => {
                let s: Vec<f64> = parse_list(key, v)?;
                self.toy.split = s
                    .try_into()
                    .map_err(|_| cfg_err("`toy.split` needs three fractions"))?;
            }
            "k" => self.k = parse(key, v)?,
            "k1" => self.k1 = opt_usize(v)?,
            "k2" => self.k2 = opt_usize(v)?,
            "sigma2" => self.sigma2 = parse(key, v)?,
            "per_category" => self.per_category = parse_bool(key, v)?,
            "sqf_hidden" => self.sqf_hidden = parse(key, v)?,
            "sqf_epochs" => self.sqf_epochs = parse(key, v)?,
            "sqf_lr" => self.sqf_lr = parse(key, v)?,
            "epsilon" => self.epsilon = parse(key, v)?,
            "delta" => self.delta = parse(key, v)?,
            "steps" => self.steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "clip_norm" => self.clip_norm = parse(key, v)?,
            "eta" => self.eta = parse(key, v)?,
            "sigma1" => {
                self.sigma1 = if v == "auto" { None } else { Some(parse(key, v)?) };
            }
            "model" => self.model = parse(key, v)?,
            "conditional" => self.conditional = parse_bool(key, v)?,
            "hidden" => self.hidden = parse_list(key, v)?,
            "activation" => self.activation = parse(key, v)?,
            "diffusion_steps" => self.diffusion_steps = parse(key, v)?,
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "latent_dim" => self.latent_dim = parse(key, v)?,
            "update_ratio" => self.update_ratio = parse(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = parse(key, v)?,
            "pretrain_batch" => self.pretrain_batch = parse(key, v)?,
            "pretrain_lr" => self.pretrain_lr = parse(key, v)?,
            "sampler_steps" => self.sampler_steps = parse(key, v)?,
            "synth_count" => self.synth_count = opt_usize(v)?,
            "eval_classifier" => self.eval_classifier = parse(key, v)?,
            other => return Err(cfg_err(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// `k1` after applying the `k` default.
    pub fn k1(&self) -> usize {
        self.k1.unwrap_or(self.k)
    }

    pub fn k2(&self) -> usize {
        self.k2.unwrap_or(self.k)
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 || self.k1() == 0 || self.k2() == 0 {
            return Err(cfg_err("k, k1 and k2 must be >= 1"));
        }
        if self.k1() != self.k2() {
            log::warn!("k1 = {} differs from k2 = {}; selection may be vacuous", self.k1(), self.k2());
        }
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(cfg_err("epsilon must be finite and > 0"));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(cfg_err("delta must lie in (0, 1)"));
        }
        let zero_sigma2_ok = self.mode == PrivacyMode::Testing && self.sigma2 == 0.0;
        if !zero_sigma2_ok && (!(self.sigma2 > 0.0) || !self.sigma2.is_finite()) {
            return Err(cfg_err("sigma2 must be finite and > 0 (0 only in testing mode)"));
        }
        if self.public.is_some() != self.sensitive_train.is_some() {
            return Err(cfg_err("`public` and `sensitive_train` must be given together"));
        }
        if self.public.is_none() {
            self.toy.validate().map_err(|e| cfg_err(format!("toy world: {e}")))?;
        }
        for (v, what) in [
            (self.batch_size, "batch_size"),
            (self.clip_norm, "clip_norm"),
            (self.eta, "eta"),
            (self.pretrain_lr, "pretrain_lr"),
            (self.sqf_lr, "sqf_lr"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(cfg_err(format!("{what} must be finite and > 0")));
            }
        }
        if let Some(s) = self.sigma1 {
            let ok = s > 0.0 || (s == 0.0 && self.mode == PrivacyMode::Testing);
            if !ok || !s.is_finite() {
                return Err(cfg_err("sigma1 must be finite and > 0 (0 only in testing mode)"));
            }
        }
        if self.pretrain_batch == 0 || self.sampler_steps == 0 || self.diffusion_steps == 0 {
            return Err(cfg_err("pretrain_batch, sampler_steps and diffusion_steps must be >= 1"));
        }
        if self.sampler_steps > self.diffusion_steps {
            return Err(cfg_err("sampler_steps cannot exceed diffusion_steps"));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(cfg_err("hidden widths must be >= 1"));
        }
        Ok(())
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("write to string");
        kv("seed", self.seed.to_string());
        kv(
            "mode",
            match self.mode {
                PrivacyMode::Enforced => "enforced",
                PrivacyMode::Testing => "testing",
            }
            .into(),
        );
        kv("output", self.output.display().to_string());
        for (k, p) in [
            ("public", &self.public),
            ("sensitive_train", &self.sensitive_train),
            ("sensitive_test", &self.sensitive_test),
        ] {
            if let Some(p) = p {
                kv(k, p.display().to_string());
            }
        }
        if let Some(v) = &self.vocabulary {
            kv("vocabulary", v.join(","));
        }
        kv("toy.names", self.toy.names.join(","));
        kv("toy.dim", self.toy.dim.to_string());
        kv("toy.separation", self.toy.separation.to_string());
        kv("toy.spread", self.toy.spread.to_string());
        kv("toy.public_size", self.toy.public_size.to_string());
        kv("toy.sensitive_size", self.toy.sensitive_size.to_string());
        kv("toy.overlap", join(&self.toy.overlap));
        kv("toy.mixture", join(&self.toy.mixture));
        kv("toy.sensitive_shift", self.toy.sensitive_shift.to_string());
        kv("toy.split", join(&self.toy.split));
        kv("k", self.k.to_string());
        let auto = |o: Option<usize>| o.map_or("auto".to_string(), |v| v.to_string());
        kv("k1", auto(self.k1));
        kv("k2", auto(self.k2));
        kv("sigma2", self.sigma2.to_string());
        kv("per_category", self.per_category.to_string());
        kv("sqf_hidden", self.sqf_hidden.to_string());
        kv("sqf_epochs", self.sqf_epochs.to_string());
        kv("sqf_lr", self.sqf_lr.to_string());
        kv("epsilon", self.epsilon.to_string());
        kv("delta", self.delta.to_string());
        kv("steps", self.steps.to_string());
        kv("batch_size", self.batch_size.to_string());
        kv("clip_norm", self.clip_norm.to_string());
        kv("eta", self.eta.to_string());
        kv("sigma1", self.sigma1.map_or("auto".to_string(), |v| v.to_string()));
        kv("model", self.model.to_string());
        kv("conditional", self.conditional.to_string());
        kv("hidden", join(&self.hidden));
        kv("activation", activation_name(self.activation).into());
        kv("diffusion_steps", self.diffusion_steps.to_string());
        kv("beta_start", self.beta_start.to_string());
        kv("beta_end", self.beta_end.to_string());
        kv("latent_dim", self.latent_dim.to_string());
        kv("update_ratio", self.update_ratio.to_string());
        kv("pretrain_epochs", self.pretrain_epochs.to_string());
        kv("pretrain_batch", self.pretrain_batch.to_string());
        kv("pretrain_lr", self.pretrain_lr.to_string());
        kv("sampler_steps", self.sampler_steps.to_string());
        kv("synth_count", auto(self.synth_count));
        kv(
            "eval_classifier",
            match self.eval_classifier {
                ClassifierTag::Linear => "linear",
                ClassifierTag::Mlp => "mlp",
            }
            .into(),
        );
        s
    }
}
