//! Evaluation: semantic distribution similarity, Fréchet distance between
//! Gaussian fits, and downstream classification accuracy.

use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;

use crate::data::{EmbeddingTable, LabeledDataset};
use crate::error::{invalid, Error, Result};
use crate::nn::{predict, train_classifier, ClassifierConfig};
use crate::noise::NoiseSource;

/// A weighted set of named semantics.
#[derive(Debug, Clone, Copy)]
pub struct WeightedSemantics<'a> {
    pub names: &'a [&'a str],
    pub weights: &'a [f64],
}

impl<'a> WeightedSemantics<'a> {
    pub fn new(names: &'a [&'a str], weights: &'a [f64]) -> Self {
        Self { names, weights }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

fn lookup<'t>(table: &'t EmbeddingTable, side: &WeightedSemantics) -> Result<Vec<&'t [f64]>> {
    if side.names.is_empty() {
        return Err(Error::Empty("semantic set"));
    }
    if side.names.len() != side.weights.len() {
        return Err(Error::DimensionMismatch {
            expected: side.names.len(),
            actual: side.weights.len(),
        });
    }
    if side.weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
        return Err(invalid("semantic weights must be finite and nonnegative"));
    }
    side.names
        .iter()
        .map(|n| table.get(n).ok_or_else(|| Error::UnknownLabel(n.to_string())))
        .collect()
}

/// `Σ_i Σ_k w1_i·w2_k·cos(V(s1_i), V(s2_k))` with the weights exactly as given.
pub fn sds_raw(a: &WeightedSemantics, b: &WeightedSemantics, table: &EmbeddingTable) -> Result<f64> {
    let va = lookup(table, a)?;
    let vb = lookup(table, b)?;
    let mut total = 0.0;
    for (wa, ea) in a.weights.iter().zip(&va) {
        for (wb, eb) in b.weights.iter().zip(&vb) {
            total += wa * wb * cosine(ea, eb);
        }
    }
    Ok(total)
}

/// Semantic distribution similarity with each side's weights normalized to
/// sum 1. Lies in `[−1, 1]`.
pub fn sds(a: &WeightedSemantics, b: &WeightedSemantics, table: &EmbeddingTable) -> Result<f64> {
    let norm = |w: &[f64]| -> Result<Vec<f64>> {
        let s: f64 = w.iter().sum();
        if !(s > 0.0) {
            return Err(invalid("semantic weights must have positive total"));
        }
        Ok(w.iter().map(|x| x / s).collect())
    };
    lookup(table, a)?;
    lookup(table, b)?;
    let wa = norm(a.weights)?;
    let wb = norm(b.weights)?;
    sds_raw(
        &WeightedSemantics::new(a.names, &wa),
        &WeightedSemantics::new(b.names, &wb),
        table,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFit {
    pub mean: Vec<f64>,
    /// `d × d`, row-major.
    pub cov: Array2<f64>,
}

impl GaussianFit {
    /// Checks symmetry and positive semidefiniteness (to 1e-10).
    pub fn new(mean: Vec<f64>, cov: Array2<f64>) -> Result<Self> {
        let d = mean.len();
        if cov.dim() != (d, d) {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: cov.nrows(),
            });
        }
        for i in 0..d {
            for j in 0..i {
                if (cov[[i, j]] - cov[[j, i]]).abs() > 1e-10 {
                    return Err(invalid("covariance is not symmetric"));
                }
            }
        }
        let eig = SymmetricEigen::new(to_matrix(&cov));
        if eig.eigenvalues.iter().any(|&l| l < -1e-10) {
            return Err(invalid("covariance is not positive semidefinite"));
        }
        Ok(Self { mean, cov })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Sample mean and biased (`1/n`) covariance.
pub fn fit_gaussian(x: &Array2<f64>) -> Result<GaussianFit> {
    let (n, d) = x.dim();
    if n < 2 {
        return Err(invalid(format!("need >= 2 rows to fit a Gaussian, got {n}")));
    }
    let mean: Vec<f64> = (0..d).map(|j| x.column(j).sum() / n as f64).collect();
    let mut cov = Array2::zeros((d, d));
    for row in x.outer_iter() {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in 0..=i {
                cov[[i, j]] += di * (row[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in 0..=i {
            let v = cov[[i, j]] / n as f64;
            cov[[i, j]] = v;
            cov[[j, i]] = v;
        }
    }
    Ok(GaussianFit { mean, cov })
}

pub fn fit_dataset(data: &LabeledDataset) -> Result<GaussianFit> {
    fit_gaussian(data.features())
}

fn to_matrix(a: &Array2<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[[i, j]])
}

fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(m.clone());
    let roots = DVector::from_iterator(eig.eigenvalues.len(), eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()));
    &eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose()
}

/// `‖μa − μb‖² + tr(Σa + Σb − 2(Σa Σb)^{1/2})`, clamped at 0.
///
/// The trace of the cross term is taken from the eigenvalues of the
/// symmetric matrix `Σa^{1/2} Σb Σa^{1/2}`, which has the same spectrum as
/// `Σa Σb`.
pub fn frechet_distance(a: &GaussianFit, b: &GaussianFit) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch {
            expected: a.dim(),
            actual: b.dim(),
        });
    }
    let mean_term: f64 = a.mean.iter().zip(&b.mean).map(|(x, y)| (x - y) * (x - y)).sum();
    let sa = to_matrix(&a.cov);
    let sb = to_matrix(&b.cov);
    let root_a = psd_sqrt(&sa);
    let mut m = &root_a * &sb * &root_a;
    m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let cross: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0).sqrt()).sum();
    let dist = mean_term + sa.trace() + sb.trace() - 2.0 * cross;
    if !dist.is_finite() {
        return Err(Error::NonFinite("frechet distance"));
    }
    Ok(dist.max(0.0))
}

/// Fréchet distance between the Gaussian fits of two feature matrices.
pub fn frechet_between(a: &Array2<f64>, b: &Array2<f64>) -> Result<f64> {
    frechet_distance(&fit_gaussian(a)?, &fit_gaussian(b)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassifierTag {
    #[default]
    Linear,
    Mlp,
}

impl FromStr for ClassifierTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(ClassifierTag::Linear),
            "mlp" => Ok(ClassifierTag::Mlp),
            other => Err(invalid(format!("unknown classifier `{other}`"))),
        }
    }
}

impl ClassifierTag {
    pub fn config(self) -> ClassifierConfig {
        match self {
            ClassifierTag::Linear => ClassifierConfig::linear(),
            ClassifierTag::Mlp => ClassifierConfig::mlp(32),
        }
    }
}

/// Trains the tagged classifier on `synthetic` only and reports top-1
/// accuracy on `test`.
pub fn classification_accuracy(
    synthetic: &LabeledDataset,
    test: &LabeledDataset,
    tag: ClassifierTag,
    noise: &mut NoiseSource,
) -> Result<f64> {
    classification_accuracy_with(synthetic, test, &tag.config(), noise)
}

pub fn classification_accuracy_with(
    synthetic: &LabeledDataset,
    test: &LabeledDataset,
    cfg: &ClassifierConfig,
    noise: &mut NoiseSource,
) -> Result<f64> {
    if synthetic.is_empty() || test.is_empty() {
        return Err(Error::Empty("classification data"));
    }
    let (Some(train_labels), Some(test_labels)) = (synthetic.labels(), test.labels()) else {
        return Err(invalid("classification needs labeled synthetic and test data"));
    };
    if synthetic.num_classes() != test.num_classes() {
        return Err(invalid(format!(
            "label spaces differ: {} vs {} classes",
            synthetic.num_classes(),
            test.num_classes()
        )));
    }
    if synthetic.dim() != test.dim() {
        return Err(Error::DimensionMismatch {
            expected: synthetic.dim(),
            actual: test.dim(),
        });
    }
    let trained = train_classifier(synthetic.features(), train_labels, synthetic.num_classes(), cfg, noise)?;
    let pred = predict(&trained.net, test.features())?;
    let hits = pred.iter().zip(test_labels).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / test.len() as f64)
}
