use std::fmt;
use std::str::FromStr;

use ndarray::{Array2, ArrayView1, Axis};

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Split {
    #[default]
    Train,
    Validation,
    Test,
}

impl Split {
    pub(crate) fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Validation => 1,
            Split::Test => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Split::Train),
            1 => Some(Split::Validation),
            2 => Some(Split::Test),
            _ => None,
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validation" | "val" => Ok(Split::Validation),
            "test" => Ok(Split::Test),
            other => Err(invalid(format!("unknown split {other}"))),
        }
    }
}

/// Flat feature rows with optional category labels and optional semantic
/// (public-vocabulary) labels.
///
/// `num_classes` and `num_semantics` declare the label ranges; they are kept
/// even when the corresponding label column is absent so that label spaces
/// can be compared.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
    num_classes: usize,
    semantic_labels: Option<Vec<usize>>,
    num_semantics: usize,
    split: Split,
}

fn check_labels(labels: &Option<Vec<usize>>, n: usize, range: usize, what: &str) -> Result<()> {
    if let Some(l) = labels {
        if l.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: l.len(),
            });
        }
        if let Some(bad) = l.iter().find(|&&x| x >= range) {
            return Err(Error::UnknownLabel(format!("{what} {bad} >= {range}")));
        }
    }
    Ok(())
}

impl LabeledDataset {
    pub fn new(
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        num_classes: usize,
        semantic_labels: Option<Vec<usize>>,
        num_semantics: usize,
        split: Split,
    ) -> Result<Self> {
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dataset features"));
        }
        let n = features.nrows();
        check_labels(&labels, n, num_classes, "label")?;
        check_labels(&semantic_labels, n, num_semantics, "semantic label")?;
        Ok(Self {
            features,
            labels,
            num_classes,
            semantic_labels,
            num_semantics,
            split,
        })
    }

    /// Features only.
    pub fn unlabeled(features: Array2<f64>) -> Result<Self> {
        Self::new(features, None, 0, None, 0, Split::Train)
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            features: Array2::zeros((0, dim)),
            labels: None,
            num_classes: 0,
            semantic_labels: None,
            num_semantics: 0,
            split: Split::Train,
        }
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.features.row(i)
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn semantic_labels(&self) -> Option<&[usize]> {
        self.semantic_labels.as_deref()
    }

    pub fn num_semantics(&self) -> usize {
        self.num_semantics
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn with_split(mut self, split: Split) -> Self {
        self.split = split;
        self
    }

    /// Replaces the category labels (and their declared range).
    pub fn with_labels(mut self, labels: Option<Vec<usize>>, num_classes: usize) -> Result<Self> {
        check_labels(&labels, self.len(), num_classes, "label")?;
        self.labels = labels;
        self.num_classes = num_classes;
        Ok(self)
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(invalid(format!("row {bad} out of range {}", self.len())));
        }
        let pick = |v: &Option<Vec<usize>>| v.as_ref().map(|l| indices.iter().map(|&i| l[i]).collect());
        Ok(Self {
            features: self.features.select(Axis(0), indices),
            labels: pick(&self.labels),
            num_classes: self.num_classes,
            semantic_labels: pick(&self.semantic_labels),
            num_semantics: self.num_semantics,
            split: self.split,
        })
    }

    /// Row indices grouped by category label; `None` without labels.
    pub fn class_partition(&self) -> Option<Vec<Vec<usize>>> {
        let labels = self.labels.as_ref()?;
        let mut parts = vec![Vec::new(); self.num_classes];
        for (i, &l) in labels.iter().enumerate() {
            parts[l].push(i);
        }
        Some(parts)
    }

    /// Row-wise concatenation; both sides must agree on dimension and label
    /// layout.
    pub fn concat(&self, other: &LabeledDataset) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        let join = |a: &Option<Vec<usize>>, b: &Option<Vec<usize>>| -> Result<Option<Vec<usize>>> {
            match (a, b) {
                (Some(x), Some(y)) => Ok(Some(x.iter().chain(y).copied().collect())),
                (None, None) => Ok(None),
                _ => Err(invalid("cannot concatenate labeled and unlabeled datasets")),
            }
        };
        let features = ndarray::concatenate(Axis(0), &[self.features.view(), other.features.view()])
            .map_err(|e| invalid(e.to_string()))?;
        Self::new(
            features,
            join(&self.labels, &other.labels)?,
            self.num_classes.max(other.num_classes),
            join(&self.semantic_labels, &other.semantic_labels)?,
            self.num_semantics.max(other.num_semantics),
            self.split,
        )
    }
}
