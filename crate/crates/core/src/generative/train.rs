use ndarray::{Array2, Axis};

use super::diffusion::{dm_batch, draw_steps};
use super::gan::{dis_grads, gen_grad, generate};
use super::{ddim_sample, dm_per_example_loss_grads, GenerativeModel, ModelBody};
use crate::accountant::{rdp_to_dp, sgm_curve, SgmParams};
use crate::data::{LabeledDataset, Split};
use crate::dpcore::{sanitize_with_normalizer, ClipConfig, PrivacyMode};
use crate::error::{invalid, Error, Result};
use crate::ledger::{BudgetLedger, Mechanism};
use crate::nn::{batch_gradient, DenseNet, Loss};
use crate::noise::NoiseSource;
use crate::semantics::SensitiveData;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Discriminator steps per generator step (GAN only).
    pub update_ratio: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            batch_size: 64,
            lr: 0.01,
            update_ratio: super::DEFAULT_UPDATE_RATIO,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub model: GenerativeModel,
    /// Mean training loss of every minibatch step (discriminator loss for a GAN).
    pub losses: Vec<f64>,
    /// Set when the dataset was empty and training was skipped.
    pub skipped: bool,
}

fn private_net_mut(model: &mut GenerativeModel) -> &mut DenseNet {
    match &mut model.body {
        ModelBody::Diffusion(m) => &mut m.denoiser,
        ModelBody::Gan(m) => &mut m.discriminator,
    }
}

fn generator_mut(model: &mut GenerativeModel) -> Option<&mut DenseNet> {
    match &mut model.body {
        ModelBody::Gan(m) => Some(&mut m.generator),
        ModelBody::Diffusion(_) => None,
    }
}

/// Labels used for conditioning: the dataset's categories when the model is
/// conditional and the data carries them.
fn conditioning_labels<'a>(model: &GenerativeModel, data: &'a LabeledDataset) -> Result<Option<&'a [usize]>> {
    if model.num_classes() == 0 {
        return Ok(None);
    }
    if data.labels().is_some() && data.num_classes() > model.num_classes() {
        return Err(Error::UnknownLabel(format!(
            "data has {} categories, model {}",
            data.num_classes(),
            model.num_classes()
        )));
    }
    Ok(data.labels())
}

fn pick(labels: Option<&[usize]>, rows: &[usize]) -> Option<Vec<usize>> {
    labels.map(|l| rows.iter().map(|&i| l[i]).collect())
}

fn check_dim(model: &GenerativeModel, d: usize) -> Result<()> {
    if d != model.data_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.data_dim(),
            actual: d,
        });
    }
    Ok(())
}

fn gaussian_matrix(rows: usize, cols: usize, noise: &mut NoiseSource) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| noise.gaussian())
}

/// One generator update on fresh latents. Conditional generators receive
/// uniformly drawn categories; no sensitive record is involved.
fn generator_step(model: &mut GenerativeModel, rows: usize, lr: f64, noise: &mut NoiseSource) -> Result<f64> {
    let gan = model.as_gan()?;
    let z = gaussian_matrix(rows, gan.latent_dim, noise);
    let labels: Option<Vec<usize>> = (model.num_classes() > 0)
        .then(|| (0..rows).map(|_| noise.uniform_int(0, model.num_classes() - 1)).collect());
    let cond = model.conditioning(labels.as_deref(), rows)?;
    let (loss, grad) = gen_grad(gan, &z, cond.as_ref())?;
    generator_mut(model).expect("gan").apply_gradient(&grad, lr)?;
    Ok(loss)
}

/// Non-private minibatch SGD on public data.
pub fn pretrain(
    model: &GenerativeModel,
    data: &LabeledDataset,
    cfg: &PretrainConfig,
    noise: &mut NoiseSource,
) -> Result<PretrainOutcome> {
    if cfg.batch_size == 0 || !(cfg.lr > 0.0) || !cfg.lr.is_finite() {
        return Err(invalid("pretraining needs batch_size >= 1 and lr > 0"));
    }
    let mut model = model.clone();
    if data.is_empty() {
        log::warn!("pretraining set is empty; skipping pretraining");
        return Ok(PretrainOutcome {
            model,
            losses: Vec::new(),
            skipped: true,
        });
    }
    check_dim(&model, data.dim())?;
    let labels = conditioning_labels(&model, data)?;
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::new();
    let mut dis_steps = 0usize;
    for _ in 0..cfg.epochs {
        noise.shuffle(&mut order);
        for rows in order.chunks(cfg.batch_size) {
            let x = data.features().select(Axis(0), rows);
            let lab = pick(labels, rows);
            let cond = model.conditioning(lab.as_deref(), rows.len())?;
            match &model.body {
                ModelBody::Diffusion(dm) => {
                    let (ts, es) = draw_steps(rows.len(), x.ncols(), dm.schedule.steps(), noise);
                    let batch = dm_batch(dm, &x, cond.as_ref(), &ts, &es)?;
                    let (loss, grad) = batch_gradient(&dm.denoiser, &batch, &Loss::Mse)?;
                    losses.push(loss);
                    private_net_mut(&mut model).apply_gradient(&grad, cfg.lr)?;
                }
                ModelBody::Gan(gan) => {
                    let z = gaussian_matrix(rows.len(), gan.latent_dim, noise);
                    let (l, g) = dis_grads(gan, &x, cond.as_ref(), &z)?;
                    let mean = mean_rows(&g, gan.discriminator.param_count());
                    losses.push(l.iter().sum::<f64>() / l.len() as f64);
                    private_net_mut(&mut model).apply_gradient(&mean, cfg.lr)?;
                    dis_steps += 1;
                    if cfg.update_ratio > 0 && dis_steps % cfg.update_ratio == 0 {
                        generator_step(&mut model, rows.len(), cfg.lr, noise)?;
                    }
                }
            }
        }
    }
    Ok(PretrainOutcome {
        model,
        losses,
        skipped: false,
    })
}

fn mean_rows(rows: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; dim];
    for r in rows {
        for (o, v) in out.iter_mut().zip(r) {
            *o += v;
        }
    }
    let n = rows.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o /= n);
    out
}

/// DP-SGD hyperparameters. `sample_rate = batch_size / |D_s|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FineTuneConfig {
    pub clip_norm: f64,
    /// Expected Poisson batch size; also the gradient normalizer.
    pub batch_size: f64,
    pub eta: f64,
    pub sigma1: f64,
    pub max_steps: usize,
    pub sample_rate: f64,
    pub update_ratio: usize,
    pub mode: PrivacyMode,
}

impl FineTuneConfig {
    pub fn new(
        clip_norm: f64,
        batch_size: f64,
        eta: f64,
        sigma1: f64,
        max_steps: usize,
        dataset_len: usize,
    ) -> Result<Self> {
        if dataset_len == 0 {
            return Err(Error::Empty("sensitive dataset"));
        }
        let cfg = Self {
            clip_norm,
            batch_size,
            eta,
            sigma1,
            max_steps,
            sample_rate: batch_size / dataset_len as f64,
            update_ratio: super::DEFAULT_UPDATE_RATIO,
            mode: PrivacyMode::Enforced,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        for (v, what) in [
            (self.clip_norm, "clip_norm"),
            (self.batch_size, "batch_size"),
            (self.eta, "eta"),
            (self.sample_rate, "sample_rate"),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(invalid(format!("{what}={v} must be finite and > 0")));
            }
        }
        if self.sample_rate > 1.0 {
            return Err(invalid(format!("sample_rate={} exceeds 1", self.sample_rate)));
        }
        let zero_ok = self.mode == PrivacyMode::Testing && self.sigma1 == 0.0;
        if !zero_ok && (!(self.sigma1 > 0.0) || !self.sigma1.is_finite()) {
            return Err(invalid(format!("sigma1={} must be finite and > 0", self.sigma1)));
        }
        Ok(())
    }

    fn charged(&self) -> bool {
        !(self.mode == PrivacyMode::Testing && self.sigma1 == 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub model: GenerativeModel,
    pub steps: usize,
    /// Realized Poisson batch size of every step.
    pub batch_sizes: Vec<usize>,
}

/// DP-SGD on the sensitive data for exactly `max_steps` iterations. Each
/// step charges one subsampled-Gaussian mechanism before touching the data;
/// the whole run is checked against the ledger's target up front.
///
/// Per step, in this order: Poisson sample, model randomness (diffusion
/// `(t, e)` or GAN latents), sanitization noise, then the generator update
/// every `update_ratio` steps for a GAN.
pub fn finetune_dp(
    model: &GenerativeModel,
    sensitive: &SensitiveData,
    cfg: &FineTuneConfig,
    ledger: &mut BudgetLedger,
    noise: &mut NoiseSource,
) -> Result<FineTuneOutcome> {
    cfg.validate()?;
    let data = sensitive.records();
    check_dim(model, data.dim())?;
    let n = data.len();
    if n == 0 {
        return Err(Error::Empty("sensitive dataset"));
    }
    if cfg.charged() && cfg.max_steps > 0 {
        if let Some(target) = ledger.target() {
            let run = sgm_curve(ledger.orders(), &SgmParams::new(cfg.sample_rate, cfg.sigma1, cfg.max_steps as u64)?)?;
            let projected = rdp_to_dp(&ledger.curve().add(&run)?, ledger.delta())?.epsilon;
            if projected > target {
                return Err(Error::BudgetExceeded { projected, target });
            }
        }
    } else if !cfg.charged() {
        log::warn!("fine-tuning without noise (testing mode); steps are not charged");
    }

    let mut model = model.clone();
    let labels = conditioning_labels(&model, data)?;
    let clip = ClipConfig::new(cfg.clip_norm)?;
    let dim = model.private_net().param_count();
    let mut batch_sizes = Vec::with_capacity(cfg.max_steps);
    for step in 0..cfg.max_steps {
        if cfg.charged() {
            ledger.charge(Mechanism::Sgm {
                q: cfg.sample_rate,
                sigma: cfg.sigma1,
            })?;
        }
        let rows = noise.poisson_subsample(n, cfg.sample_rate);
        batch_sizes.push(rows.len());
        let per_example = if rows.is_empty() {
            Vec::new()
        } else {
            let x = data.features().select(Axis(0), &rows);
            let lab = pick(labels, &rows);
            match &model.body {
                ModelBody::Diffusion(_) => dm_per_example_loss_grads(&model, &x, lab.as_deref(), noise)?.grads,
                ModelBody::Gan(gan) => {
                    let z = gaussian_matrix(rows.len(), gan.latent_dim, noise);
                    let cond = model.conditioning(lab.as_deref(), rows.len())?;
                    dis_grads(gan, &x, cond.as_ref(), &z)?.1
                }
            }
        };
        let g = sanitize_with_normalizer(&per_example, dim, cfg.batch_size, &clip, cfg.sigma1, noise)?;
        private_net_mut(&mut model).apply_gradient(&g, cfg.eta)?;
        if model.as_gan().is_ok() && cfg.update_ratio > 0 && (step + 1) % cfg.update_ratio == 0 {
            let rows = cfg.batch_size.round().max(1.0) as usize;
            generator_step(&mut model, rows, cfg.eta, noise)?;
        }
    }
    Ok(FineTuneOutcome {
        model,
        steps: cfg.max_steps,
        batch_sizes,
    })
}

/// `i mod classes` for `i < n`.
pub fn balanced_labels(n: usize, classes: usize) -> Vec<usize> {
    if classes == 0 {
        return Vec::new();
    }
    (0..n).map(|i| i % classes).collect()
}

/// `n` synthetic rows. Diffusion models run DDIM over `sampler_steps`
/// timesteps; GANs map `z ~ N(0, I)` through the generator.
pub fn synthesize(
    model: &GenerativeModel,
    n: usize,
    labels: Option<&[usize]>,
    sampler_steps: usize,
    noise: &mut NoiseSource,
) -> Result<LabeledDataset> {
    let cond = model.conditioning(labels, n)?;
    let d = model.data_dim();
    let x = match &model.body {
        ModelBody::Diffusion(dm) => ddim_sample(dm, &dm.schedule, n, d, cond.as_ref(), sampler_steps, noise)?,
        ModelBody::Gan(gan) => {
            let z = gaussian_matrix(n, gan.latent_dim, noise);
            if n == 0 {
                Array2::zeros((0, d))
            } else {
                generate(gan, &z, cond.as_ref())?
            }
        }
    };
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("synthetic data"));
    }
    let (labels, classes) = match labels {
        Some(l) => (Some(l.to_vec()), model.num_classes()),
        None => (None, 0),
    };
    LabeledDataset::new(x, labels, classes, None, 0, Split::Train)
}
