use std::str::FromStr;

use ndarray::{concatenate, s, Array2, Axis};

use super::{sigmoid, DenseNet, ForwardCache};
use crate::error::{invalid, Error, Result};

/// Discriminator logits are clamped to `±LOGIT_CLAMP` before the log loss;
/// beyond the clamp the loss is flat and its gradient is zero.
pub const LOGIT_CLAMP: f64 = 30.0;

#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    None,
    /// `b × out` regression targets.
    Regression(Array2<f64>),
    /// Class index per row.
    Classes(Vec<usize>),
    /// 1.0 for real, 0.0 for fake.
    Binary(Vec<f64>),
}

impl Targets {
    fn rows(&self) -> Option<usize> {
        match self {
            Targets::None => None,
            Targets::Regression(m) => Some(m.nrows()),
            Targets::Classes(v) => Some(v.len()),
            Targets::Binary(v) => Some(v.len()),
        }
    }
}

/// Rows of features plus optional targets and per-row conditioning. The
/// conditioning columns are appended to the features before the first layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Targets,
    pub aux: Option<Array2<f64>>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Targets, aux: Option<Array2<f64>>) -> Result<Self> {
        let rows = inputs.nrows();
        if let Some(t) = targets.rows() {
            if t != rows {
                return Err(Error::DimensionMismatch { expected: rows, actual: t });
            }
        }
        if let Some(a) = &aux {
            if a.nrows() != rows {
                return Err(Error::DimensionMismatch {
                    expected: rows,
                    actual: a.nrows(),
                });
            }
        }
        Ok(Self {
            inputs,
            targets,
            aux,
        })
    }

    pub fn rows(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn net_input(&self) -> Array2<f64> {
        match &self.aux {
            Some(a) => concatenate(Axis(1), &[self.inputs.view(), a.view()])
                .expect("row counts checked at construction"),
            None => self.inputs.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LossTag {
    Mse,
    CrossEntropy,
    GanD,
    GanG,
}

impl FromStr for LossTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mse" => Ok(LossTag::Mse),
            "cross_entropy" => Ok(LossTag::CrossEntropy),
            "gan_d" => Ok(LossTag::GanD),
            "gan_g" => Ok(LossTag::GanG),
            other => Err(Error::UnsupportedLoss(other.to_string())),
        }
    }
}

/// Per-example objectives.
///
/// * `Mse`: `‖y − t‖²` summed over output coordinates.
/// * `CrossEntropy`: `−log softmax(y)[label]`, fused and stable.
/// * `GanDiscriminator`: `t·softplus(−l) + (1−t)·softplus(l)` on the clamped
///   logit, i.e. `−log Dis(x)` on real rows and `−log(1 − Dis(x))` on fakes.
/// * `GanGenerator`: the non-saturating `−log Dis(Gen(z))`, differentiated
///   through the discriminator into the generator's parameters.
#[derive(Debug, Clone, Copy)]
pub enum Loss<'a> {
    Mse,
    CrossEntropy,
    GanDiscriminator,
    GanGenerator {
        discriminator: &'a DenseNet,
        /// Extra columns appended to `Gen(z)` before the discriminator.
        conditioning: Option<&'a Array2<f64>>,
    },
}

impl Loss<'_> {
    pub fn tag(&self) -> LossTag {
        match self {
            Loss::Mse => LossTag::Mse,
            Loss::CrossEntropy => LossTag::CrossEntropy,
            Loss::GanDiscriminator => LossTag::GanD,
            Loss::GanGenerator { .. } => LossTag::GanG,
        }
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Loss and its derivative w.r.t. a single discriminator logit.
fn binary_logit_loss(logit: f64, target: f64) -> (f64, f64) {
    let l = logit.clamp(-LOGIT_CLAMP, LOGIT_CLAMP);
    let loss = target * softplus(-l) + (1.0 - target) * softplus(l);
    let grad = if logit.abs() < LOGIT_CLAMP {
        sigmoid(l) - target
    } else {
        0.0
    };
    (loss, grad)
}

struct Evaluated {
    cache: ForwardCache,
    losses: Vec<f64>,
    d_out: Array2<f64>,
}

fn evaluate(net: &DenseNet, batch: &Batch, loss: &Loss) -> Result<Evaluated> {
    let cache = net.forward_cached(&batch.net_input())?;
    let out = cache.activations.last().expect("nonempty");
    let b = batch.rows();
    let k = net.output_dim();
    let mut d_out = Array2::<f64>::zeros((b, k));
    let mut losses = vec![0.0; b];

    match (loss, &batch.targets) {
        (Loss::Mse, Targets::Regression(t)) => {
            if t.ncols() != k {
                return Err(Error::DimensionMismatch { expected: k, actual: t.ncols() });
            }
            for i in 0..b {
                for j in 0..k {
                    let r = out[[i, j]] - t[[i, j]];
                    losses[i] += r * r;
                    d_out[[i, j]] = 2.0 * r;
                }
            }
        }
        (Loss::CrossEntropy, Targets::Classes(labels)) => {
            for (i, &label) in labels.iter().enumerate() {
                if label >= k {
                    return Err(Error::UnknownLabel(label.to_string()));
                }
                let row = out.row(i);
                let m = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
                let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
                let lse = m + sum.ln();
                losses[i] = lse - row[label];
                for j in 0..k {
                    d_out[[i, j]] = (row[j] - lse).exp() - if j == label { 1.0 } else { 0.0 };
                }
            }
        }
        (Loss::GanDiscriminator, Targets::Binary(t)) => {
            if k != 1 {
                return Err(invalid("discriminator must have a single output logit"));
            }
            for i in 0..b {
                let (l, g) = binary_logit_loss(out[[i, 0]], t[i]);
                losses[i] = l;
                d_out[[i, 0]] = g;
            }
        }
        (
            Loss::GanGenerator {
                discriminator,
                conditioning,
            },
            _,
        ) => {
            if discriminator.output_dim() != 1 {
                return Err(invalid("discriminator must have a single output logit"));
            }
            let dis_in = match conditioning {
                Some(c) => concatenate(Axis(1), &[out.view(), c.view()])
                    .map_err(|_| invalid("conditioning rows differ from generator batch"))?,
                None => out.clone(),
            };
            let dis_cache = discriminator.forward_cached(&dis_in)?;
            let logits = dis_cache.activations.last().expect("nonempty");
            let mut d_logit = Array2::<f64>::zeros((b, 1));
            for i in 0..b {
                let (l, g) = binary_logit_loss(logits[[i, 0]], 1.0);
                losses[i] = l;
                d_logit[[i, 0]] = g;
            }
            let (_, d_dis_in) = discriminator.backward(&dis_cache, d_logit);
            d_out.assign(&d_dis_in.slice(s![.., ..k]));
        }
        (loss, _) => {
            return Err(invalid(format!(
                "targets do not match loss {:?}",
                loss.tag()
            )))
        }
    }
    Ok(Evaluated {
        cache,
        losses,
        d_out,
    })
}

pub fn per_example_losses(net: &DenseNet, batch: &Batch, loss: &Loss) -> Result<Vec<f64>> {
    Ok(evaluate(net, batch, loss)?.losses)
}

/// Gradient of each row's loss w.r.t. every parameter, in canonical order.
pub fn per_example_grads(net: &DenseNet, batch: &Batch, loss: &Loss) -> Result<Vec<Vec<f64>>> {
    let ev = evaluate(net, batch, loss)?;
    let (grads, _) = net.backward(&ev.cache, ev.d_out);
    Ok(grads.outer_iter().map(|r| r.to_vec()).collect())
}

/// Per-row losses and per-row gradients from a single forward pass.
pub fn per_example_losses_and_grads(
    net: &DenseNet,
    batch: &Batch,
    loss: &Loss,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let ev = evaluate(net, batch, loss)?;
    let (grads, _) = net.backward(&ev.cache, ev.d_out);
    Ok((ev.losses, grads.outer_iter().map(|r| r.to_vec()).collect()))
}

/// Mean loss over the batch and its gradient.
pub fn batch_gradient(net: &DenseNet, batch: &Batch, loss: &Loss) -> Result<(f64, Vec<f64>)> {
    let ev = evaluate(net, batch, loss)?;
    let mean = ev.losses.iter().sum::<f64>() / batch.rows().max(1) as f64;
    let (grad, _) = net.backward_mean(&ev.cache, ev.d_out);
    Ok((mean, grad))
}
