//! Softmax classifiers trained by full-batch gradient descent.

use ndarray::Array2;

use super::{batch_gradient, Activation, Batch, DenseNet, Loss, Targets};
use crate::error::{invalid, Error, Result};
use crate::noise::NoiseSource;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifierConfig {
    /// Width of the single hidden layer; `None` gives a linear model.
    pub hidden: Option<usize>,
    pub epochs: usize,
    pub lr: f64,
}

impl ClassifierConfig {
    pub fn linear() -> Self {
        Self {
            hidden: None,
            epochs: 200,
            lr: 0.05,
        }
    }

    pub fn mlp(width: usize) -> Self {
        Self {
            hidden: Some(width),
            epochs: 200,
            lr: 0.05,
        }
    }
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self::linear()
    }
}

/// A trained classifier plus the mean training loss recorded at the start of
/// each epoch.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub net: DenseNet,
    pub epoch_losses: Vec<f64>,
}

pub fn train_classifier(
    features: &Array2<f64>,
    labels: &[usize],
    num_classes: usize,
    cfg: &ClassifierConfig,
    noise: &mut NoiseSource,
) -> Result<TrainedClassifier> {
    if features.nrows() == 0 {
        return Err(Error::Empty("classifier training set"));
    }
    if num_classes == 0 {
        return Err(invalid("classifier needs >= 1 class"));
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
        return Err(Error::UnknownLabel(format!("{bad} >= {num_classes}")));
    }
    if !(cfg.lr > 0.0) || !cfg.lr.is_finite() {
        return Err(invalid(format!("learning rate {} must be > 0", cfg.lr)));
    }
    let d = features.ncols();
    let sizes = match cfg.hidden {
        Some(h) => vec![d, h, num_classes],
        None => vec![d, num_classes],
    };
    let mut net = DenseNet::init(&sizes, Activation::Tanh, Activation::Identity, noise)?;
    let batch = Batch::new(features.clone(), Targets::Classes(labels.to_vec()), None)?;
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        let (loss, grad) = batch_gradient(&net, &batch, &Loss::CrossEntropy)?;
        epoch_losses.push(loss);
        net.apply_gradient(&grad, cfg.lr)?;
    }
    Ok(TrainedClassifier { net, epoch_losses })
}

/// Indices of the `k` largest scores, largest first; ties go to the lower index.
pub fn top_k(scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > scores.len() {
        return Err(invalid(format!("k={k} outside 1..={}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    Ok(order)
}

/// Top-1 class per row.
pub fn predict(net: &DenseNet, features: &Array2<f64>) -> Result<Vec<usize>> {
    let out = net.forward(features)?;
    out.outer_iter()
        .map(|row| top_k(row.as_slice().expect("standard layout"), 1).map(|v| v[0]))
        .collect()
}
