use ndarray::{concatenate, Array2, Axis};

use super::{GanModel, GenerativeModel};
use crate::error::{invalid, Error, Result};
use crate::nn::{batch_gradient, per_example_losses_and_grads, Batch, Loss, Targets};

/// Discriminator steps per generator step.
pub const DEFAULT_UPDATE_RATIO: usize = 5;

/// Number of generator updates after `steps` discriminator steps.
pub fn generator_updates(steps: usize, ratio: usize) -> usize {
    if ratio == 0 {
        0
    } else {
        steps / ratio
    }
}

#[derive(Debug, Clone)]
pub struct GanGrads {
    /// One row per real record: the gradient of its real-side loss plus that
    /// of the fake it is paired with.
    pub dis_per_example: Vec<Vec<f64>>,
    pub dis_losses: Vec<f64>,
    pub gen_grad: Vec<f64>,
    pub gen_loss: f64,
}

fn with_cond(x: &Array2<f64>, cond: Option<&Array2<f64>>) -> Result<Array2<f64>> {
    match cond {
        Some(c) => concatenate(Axis(1), &[x.view(), c.view()]).map_err(|_| invalid("conditioning rows differ")),
        None => Ok(x.clone()),
    }
}

pub(crate) fn generate(gan: &GanModel, z: &Array2<f64>, cond: Option<&Array2<f64>>) -> Result<Array2<f64>> {
    gan.generator.forward(&with_cond(z, cond)?)
}

/// Paired discriminator gradients: row `i` pairs `real[i]` with `Gen(z[i])`.
pub(crate) fn dis_grads(
    gan: &GanModel,
    real: &Array2<f64>,
    cond: Option<&Array2<f64>>,
    z: &Array2<f64>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let b = real.nrows();
    if z.nrows() != b {
        return Err(Error::DimensionMismatch { expected: b, actual: z.nrows() });
    }
    let fake = generate(gan, z, cond)?;
    let real_batch = Batch::new(real.clone(), Targets::Binary(vec![1.0; b]), cond.cloned())?;
    let fake_batch = Batch::new(fake, Targets::Binary(vec![0.0; b]), cond.cloned())?;
    let (mut losses, mut grads) = per_example_losses_and_grads(&gan.discriminator, &real_batch, &Loss::GanDiscriminator)?;
    let (fl, fg) = per_example_losses_and_grads(&gan.discriminator, &fake_batch, &Loss::GanDiscriminator)?;
    for i in 0..b {
        losses[i] += fl[i];
        for (g, f) in grads[i].iter_mut().zip(&fg[i]) {
            *g += f;
        }
    }
    Ok((losses, grads))
}

/// Mean non-saturating generator loss and gradient at the current discriminator.
pub(crate) fn gen_grad(gan: &GanModel, z: &Array2<f64>, cond: Option<&Array2<f64>>) -> Result<(f64, Vec<f64>)> {
    let batch = Batch::new(z.clone(), Targets::None, cond.cloned())?;
    batch_gradient(
        &gan.generator,
        &batch,
        &Loss::GanGenerator {
            discriminator: &gan.discriminator,
            conditioning: cond,
        },
    )
}

/// Discriminator per-example gradients (to be sanitized) and the generator's
/// batch gradient, both at the current parameters.
pub fn gan_step_grads(
    model: &GenerativeModel,
    real: &Array2<f64>,
    labels: Option<&[usize]>,
    z: &Array2<f64>,
) -> Result<GanGrads> {
    let gan = model.as_gan()?;
    if real.ncols() != model.data_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.data_dim(),
            actual: real.ncols(),
        });
    }
    if z.ncols() != gan.latent_dim {
        return Err(Error::DimensionMismatch {
            expected: gan.latent_dim,
            actual: z.ncols(),
        });
    }
    let cond = model.conditioning(labels, real.nrows())?;
    let (dis_losses, dis_per_example) = dis_grads(gan, real, cond.as_ref(), z)?;
    let (gen_loss, gen_grad) = gen_grad(gan, z, cond.as_ref())?;
    Ok(GanGrads {
        dis_per_example,
        dis_losses,
        gen_grad,
        gen_loss,
    })
}
