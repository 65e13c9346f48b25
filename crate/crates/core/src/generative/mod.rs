//! Small generative models over feature vectors: a denoising diffusion model
//! and a GAN, with non-private pretraining, DP fine-tuning and sampling.

mod checkpoint;
mod diffusion;
mod gan;
mod schedule;
mod train;

pub use checkpoint::{
    read_model, read_model_from, write_model, write_model_to, MODEL_MAGIC, MODEL_VERSION,
};
pub use diffusion::{
    ddim_sample, dm_loss_grads_at, dm_per_example_loss_grads, sampler_timesteps, time_features,
    DmDraw, NoisePredictor, DEFAULT_SAMPLER_STEPS, TIME_FEATURES,
};
pub use gan::{gan_step_grads, generator_updates, GanGrads, DEFAULT_UPDATE_RATIO};
pub use schedule::{
    forward_noise, make_schedule, DiffusionSchedule, DEFAULT_BETA_END, DEFAULT_BETA_START,
    DEFAULT_DIFFUSION_STEPS,
};
pub use train::{
    balanced_labels, finetune_dp, pretrain, synthesize, FineTuneConfig, FineTuneOutcome,
    PretrainConfig, PretrainOutcome,
};

use std::fmt;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{invalid, Error, Result};
use crate::nn::{Activation, DenseNet};
use crate::noise::NoiseSource;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    #[default]
    Diffusion,
    Gan,
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Diffusion => "diffusion",
            ModelKind::Gan => "gan",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "diffusion" => Ok(ModelKind::Diffusion),
            "gan" => Ok(ModelKind::Gan),
            other => Err(invalid(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Denoiser `e_θ(x_t, t, c)`: input `[x_t | time features | one-hot c]`,
/// output the predicted noise.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionModel {
    pub denoiser: DenseNet,
    pub schedule: DiffusionSchedule,
}

/// Generator `[z | one-hot c] → x` and discriminator `[x | one-hot c] → logit`.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: DenseNet,
    pub discriminator: DenseNet,
    pub latent_dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelBody {
    Diffusion(DiffusionModel),
    Gan(GanModel),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerativeModel {
    pub body: ModelBody,
    data_dim: usize,
    num_classes: usize,
}

/// Architecture for [`GenerativeModel::init`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub data_dim: usize,
    /// 0 for an unconditional model.
    pub num_classes: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub diffusion_steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub latent_dim: usize,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, data_dim: usize, num_classes: usize) -> Self {
        Self {
            kind,
            data_dim,
            num_classes,
            hidden: vec![64, 64],
            activation: Activation::Relu,
            diffusion_steps: DEFAULT_DIFFUSION_STEPS,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
            latent_dim: 8,
        }
    }
}

fn widths(input: usize, hidden: &[usize], output: usize) -> Vec<usize> {
    std::iter::once(input)
        .chain(hidden.iter().copied())
        .chain(std::iter::once(output))
        .collect()
}

impl GenerativeModel {
    pub fn init(spec: &ModelSpec, noise: &mut NoiseSource) -> Result<Self> {
        if spec.data_dim == 0 {
            return Err(invalid("data dimension must be >= 1"));
        }
        let (d, c) = (spec.data_dim, spec.num_classes);
        let body = match spec.kind {
            ModelKind::Diffusion => {
                let schedule = make_schedule(spec.diffusion_steps, spec.beta_start, spec.beta_end)?;
                let denoiser = DenseNet::init(
                    &widths(d + TIME_FEATURES + c, &spec.hidden, d),
                    spec.activation,
                    Activation::Identity,
                    noise,
                )?;
                ModelBody::Diffusion(DiffusionModel { denoiser, schedule })
            }
            ModelKind::Gan => {
                if spec.latent_dim == 0 {
                    return Err(invalid("latent dimension must be >= 1"));
                }
                let generator = DenseNet::init(
                    &widths(spec.latent_dim + c, &spec.hidden, d),
                    spec.activation,
                    Activation::Identity,
                    noise,
                )?;
                let discriminator = DenseNet::init(
                    &widths(d + c, &spec.hidden, 1),
                    spec.activation,
                    Activation::Identity,
                    noise,
                )?;
                ModelBody::Gan(GanModel {
                    generator,
                    discriminator,
                    latent_dim: spec.latent_dim,
                })
            }
        };
        Ok(Self {
            body,
            data_dim: d,
            num_classes: c,
        })
    }

    /// Assembles a model from parts, checking that the shapes agree.
    pub fn from_parts(body: ModelBody, data_dim: usize, num_classes: usize) -> Result<Self> {
        let mismatch = |expected, actual| Error::DimensionMismatch { expected, actual };
        match &body {
            ModelBody::Diffusion(m) => {
                let want = data_dim + TIME_FEATURES + num_classes;
                if m.denoiser.input_dim() != want {
                    return Err(mismatch(want, m.denoiser.input_dim()));
                }
                if m.denoiser.output_dim() != data_dim {
                    return Err(mismatch(data_dim, m.denoiser.output_dim()));
                }
            }
            ModelBody::Gan(m) => {
                let want = m.latent_dim + num_classes;
                if m.generator.input_dim() != want {
                    return Err(mismatch(want, m.generator.input_dim()));
                }
                if m.generator.output_dim() != data_dim {
                    return Err(mismatch(data_dim, m.generator.output_dim()));
                }
                if m.discriminator.input_dim() != data_dim + num_classes {
                    return Err(mismatch(data_dim + num_classes, m.discriminator.input_dim()));
                }
                if m.discriminator.output_dim() != 1 {
                    return Err(mismatch(1, m.discriminator.output_dim()));
                }
            }
        }
        Ok(Self {
            body,
            data_dim,
            num_classes,
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self.body {
            ModelBody::Diffusion(_) => ModelKind::Diffusion,
            ModelBody::Gan(_) => ModelKind::Gan,
        }
    }

    pub fn data_dim(&self) -> usize {
        self.data_dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn as_diffusion(&self) -> Result<&DiffusionModel> {
        match &self.body {
            ModelBody::Diffusion(m) => Ok(m),
            ModelBody::Gan(_) => Err(Error::WrongModelKind { expected: "diffusion" }),
        }
    }

    pub fn as_gan(&self) -> Result<&GanModel> {
        match &self.body {
            ModelBody::Gan(m) => Ok(m),
            ModelBody::Diffusion(_) => Err(Error::WrongModelKind { expected: "gan" }),
        }
    }

    /// The network whose parameters are trained on sensitive data.
    pub fn private_net(&self) -> &DenseNet {
        match &self.body {
            ModelBody::Diffusion(m) => &m.denoiser,
            ModelBody::Gan(m) => &m.discriminator,
        }
    }

    /// One-hot conditioning columns for `rows` records; `None` for an
    /// unconditional model. Rows without a label get the all-zero code.
    pub fn conditioning(&self, labels: Option<&[usize]>, rows: usize) -> Result<Option<Array2<f64>>> {
        one_hot(labels, rows, self.num_classes)
    }
}

pub(crate) fn one_hot(labels: Option<&[usize]>, rows: usize, classes: usize) -> Result<Option<Array2<f64>>> {
    if classes == 0 {
        return match labels {
            Some(_) => Err(Error::UnknownLabel("labels given to an unconditional model".into())),
            None => Ok(None),
        };
    }
    let mut m = Array2::zeros((rows, classes));
    if let Some(labels) = labels {
        if labels.len() != rows {
            return Err(Error::DimensionMismatch {
                expected: rows,
                actual: labels.len(),
            });
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= classes {
                return Err(Error::UnknownLabel(format!("{l} >= {classes}")));
            }
            m[[i, l]] = 1.0;
        }
    }
    Ok(Some(m))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kinds_are_consistent() {
        let mut noise = NoiseSource::new(0, 0);
        let dm = GenerativeModel::init(&ModelSpec::new(ModelKind::Diffusion, 3, 2), &mut noise).unwrap();
        assert_eq!(dm.private_net().input_dim(), 3 + TIME_FEATURES + 2);
        assert!(matches!(dm.as_gan(), Err(Error::WrongModelKind { .. })));
        let gan = GenerativeModel::init(&ModelSpec::new(ModelKind::Gan, 3, 0), &mut noise).unwrap();
        assert!(gan.as_diffusion().is_err());
        assert_eq!(gan.private_net().output_dim(), 1);
        let rebuilt = GenerativeModel::from_parts(gan.body.clone(), 3, 0).unwrap();
        assert_eq!(rebuilt, gan);
        assert!(GenerativeModel::from_parts(gan.body.clone(), 4, 0).is_err());
    }

    #[test]
    fn one_hot_rules() {
        assert!(one_hot(None, 2, 0).unwrap().is_none());
        assert!(one_hot(Some(&[0]), 1, 0).is_err());
        assert!(one_hot(Some(&[2]), 1, 2).is_err());
        let m = one_hot(Some(&[1, 0]), 2, 2).unwrap().unwrap();
        assert_eq!(m, ndarray::array![[0.0, 1.0], [1.0, 0.0]]);
        assert_eq!(one_hot(None, 2, 3).unwrap().unwrap().sum(), 0.0);
    }
}
