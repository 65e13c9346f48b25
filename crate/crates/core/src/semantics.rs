//! Semantic query, private semantic distribution, and public-data selection.
//!
//! A classifier `Q` trained on public semantic labels tags every sensitive
//! record with its `k1` most probable semantics. The tallies form the
//! semantic distribution (SD), released once with Gaussian noise. The `k2`
//! largest noisy entries form the semantic description, which filters the
//! public dataset down to the pretraining subset.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::data::LabeledDataset;
use crate::dpcore::{perturb_histogram, PrivacyMode};
use crate::error::{invalid, Error, Result};
use crate::ledger::{BudgetLedger, Mechanism};
use crate::nn::{top_k, train_classifier, ClassifierConfig, DenseNet, TrainedClassifier};
use crate::noise::NoiseSource;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticVocabulary {
    names: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl SemanticVocabulary {
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::Empty("semantic vocabulary"));
        }
        let mut index = BTreeMap::new();
        for (i, n) in names.iter().enumerate() {
            if index.insert(n.clone(), i).is_some() {
                return Err(invalid(format!("duplicate semantic `{n}`")));
            }
        }
        Ok(Self { names, index })
    }

    /// `s0, s1, …` for data without named semantics.
    pub fn numbered(ns: usize) -> Result<Self> {
        Self::new((0..ns).map(|i| format!("s{i}")))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> Option<&str> {
        self.names.get(i).map(String::as_str)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownLabel(name.to_string()))
    }
}

/// Sensitive records. Only the stages that are accounted for (building the
/// semantic distribution and DP fine-tuning) accept this type.
#[derive(Debug, Clone)]
pub struct SensitiveData(LabeledDataset);

impl SensitiveData {
    pub fn new(data: LabeledDataset) -> Self {
        Self(data)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    pub(crate) fn records(&self) -> &LabeledDataset {
        &self.0
    }
}

/// Semantic frequencies over the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticDistribution {
    counts: Vec<f64>,
    k1: usize,
    noisy: bool,
    released: bool,
}

impl SemanticDistribution {
    /// A raw (un-noised) distribution from explicit counts.
    pub fn raw(counts: Vec<f64>, k1: usize) -> Result<Self> {
        if k1 == 0 {
            return Err(invalid("k1 must be >= 1"));
        }
        if counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
            return Err(invalid("raw counts must be finite and nonnegative"));
        }
        Ok(Self {
            counts,
            k1,
            noisy: false,
            released: false,
        })
    }

    /// A previously released noisy vector, e.g. read back from disk.
    pub fn noisy(counts: Vec<f64>, k1: usize) -> Result<Self> {
        if k1 == 0 {
            return Err(invalid("k1 must be >= 1"));
        }
        if counts.iter().any(|c| !c.is_finite()) {
            return Err(Error::NonFinite("noisy counts"));
        }
        Ok(Self {
            counts,
            k1,
            noisy: true,
            released: false,
        })
    }

    pub fn counts(&self) -> &[f64] {
        &self.counts
    }

    pub fn k1(&self) -> usize {
        self.k1
    }

    pub fn is_noisy(&self) -> bool {
        self.noisy
    }

    /// True once a raw distribution has been released.
    pub fn is_released(&self) -> bool {
        self.released
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    /// `index,name,noisy_count` table.
    pub fn to_table(&self, vocab: &SemanticVocabulary) -> String {
        let mut out = String::from("index,name,noisy_count\n");
        for (i, c) in self.counts.iter().enumerate() {
            let name = vocab.name(i).unwrap_or("");
            writeln!(out, "{i},{name},{c:e}").expect("write to string");
        }
        out
    }

    /// Parses a table written by [`Self::to_table`] as a noisy release.
    pub fn from_table(text: &str, k1: usize) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut counts = Vec::new();
        for (row, rec) in reader.records().enumerate() {
            let rec = rec?;
            let index: usize = rec
                .get(0)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Corrupt(format!("row {row}: bad index")))?;
            if index != row {
                return Err(Error::Corrupt(format!("row {row}: index {index} out of order")));
            }
            let c: f64 = rec
                .get(2)
                .and_then(|v| v.trim().parse().ok())
                .ok_or_else(|| Error::Corrupt(format!("row {row}: bad count")))?;
            counts.push(c);
        }
        Self::noisy(counts, k1)
    }
}

/// Selected semantics, plus one selection per sensitive category in the
/// per-category variant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SemanticDescription {
    pub selected: Vec<usize>,
    pub per_category: Option<BTreeMap<usize, Vec<usize>>>,
}

impl SemanticDescription {
    pub fn contains(&self, semantic: usize) -> bool {
        self.selected.contains(&semantic)
    }
}

/// Trains `Q` on the public semantic labels. Public data only; no budget is
/// charged.
pub fn train_sqf(
    public: &LabeledDataset,
    vocab: &SemanticVocabulary,
    cfg: &ClassifierConfig,
    noise: &mut NoiseSource,
) -> Result<TrainedClassifier> {
    if public.is_empty() {
        return Err(Error::Empty("public dataset"));
    }
    let labels = public
        .semantic_labels()
        .ok_or_else(|| invalid("public dataset has no semantic labels"))?;
    if let Some(bad) = labels.iter().find(|&&l| l >= vocab.len()) {
        return Err(Error::UnknownLabel(format!("semantic {bad} outside vocabulary of {}", vocab.len())));
    }
    let trained = train_classifier(public.features(), labels, vocab.len(), cfg, noise)?;
    log::info!(
        "semantic query function trained: loss {:.4} -> {:.4}",
        trained.epoch_losses.first().copied().unwrap_or(f64::NAN),
        trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(trained)
}

/// The `k1` most probable semantics of one record, most probable first.
pub fn query_topk(q: &DenseNet, x: &[f64], k1: usize) -> Result<Vec<usize>> {
    let row = ndarray::Array2::from_shape_vec((1, x.len()), x.to_vec())
        .map_err(|e| invalid(e.to_string()))?;
    let out = q.forward(&row)?;
    // softmax is monotone, so ranking logits ranks probabilities
    top_k(out.row(0).as_slice().expect("standard layout"), k1)
}

fn count_rows(q: &DenseNet, data: &LabeledDataset, rows: &[usize], k1: usize) -> Result<Vec<f64>> {
    let ns = q.output_dim();
    if k1 == 0 || k1 > ns {
        return Err(invalid(format!("k1={k1} outside 1..={ns}")));
    }
    let mut counts = vec![0.0; ns];
    if rows.is_empty() {
        return Ok(counts);
    }
    let out = q.forward(&data.features().select(ndarray::Axis(0), rows))?;
    for row in out.outer_iter() {
        for j in top_k(row.as_slice().expect("standard layout"), k1)? {
            counts[j] += 1.0;
        }
    }
    Ok(counts)
}

/// Raw SD: how often each semantic appears among every record's top-`k1`.
pub fn build_distribution(q: &DenseNet, sensitive: &SensitiveData, k1: usize) -> Result<SemanticDistribution> {
    let rows: Vec<usize> = (0..sensitive.len()).collect();
    let counts = count_rows(q, sensitive.records(), &rows, k1)?;
    SemanticDistribution::raw(counts, k1)
}

/// Releases `raw` once with noise `N(0, k1·σ2²)` per coordinate and charges
/// the semantic-query mechanism to `ledger`.
///
/// In testing mode σ2 = 0 is admitted; such a release has no privacy
/// guarantee and is not charged.
pub fn release_distribution(
    raw: &mut SemanticDistribution,
    sigma2: f64,
    mode: PrivacyMode,
    noise: &mut NoiseSource,
    ledger: &mut BudgetLedger,
) -> Result<SemanticDistribution> {
    let mut map = BTreeMap::from([(0, std::mem::replace(raw, SemanticDistribution::raw(vec![], 1)?))]);
    let result = release_conditional(&mut map, sigma2, mode, noise, ledger);
    *raw = map.remove(&0).expect("entry kept");
    result.map(|mut m| m.remove(&0).expect("entry released"))
}

/// Releases a family of raw distributions built on disjoint subsets of one
/// sensitive dataset. The concatenated vector has the same sensitivity as a
/// single SD, so one charge covers the family.
pub fn release_conditional(
    raws: &mut BTreeMap<usize, SemanticDistribution>,
    sigma2: f64,
    mode: PrivacyMode,
    noise: &mut NoiseSource,
    ledger: &mut BudgetLedger,
) -> Result<BTreeMap<usize, SemanticDistribution>> {
    for sd in raws.values() {
        if sd.noisy {
            return Err(invalid("distribution is already noisy"));
        }
        if sd.released {
            return Err(Error::AlreadyReleased);
        }
    }
    let k1 = raws.values().map(|sd| sd.k1).max().unwrap_or(1);
    if raws.values().any(|sd| sd.k1 != k1) {
        return Err(invalid("all distributions in a family must share k1"));
    }
    let zero_noise = mode == PrivacyMode::Testing && sigma2 == 0.0;
    if zero_noise {
        log::warn!("semantic distribution released without noise (testing mode); not charged");
    } else {
        // validate before charging
        perturb_histogram(&[], k1, sigma2, mode, noise)?;
        ledger.charge(Mechanism::SemanticQuery { sigma2 })?;
    }
    let mut out = BTreeMap::new();
    for (&cat, sd) in raws.iter_mut() {
        let counts = perturb_histogram(&sd.counts, k1, sigma2, mode, noise)?;
        sd.released = true;
        out.insert(cat, SemanticDistribution::noisy(counts, k1)?);
    }
    Ok(out)
}

/// The `k2` largest entries of the SD. Selecting from raw counts is only
/// allowed in testing mode.
pub fn select_description(sd: &SemanticDistribution, k2: usize, mode: PrivacyMode) -> Result<SemanticDescription> {
    if !sd.noisy && mode != PrivacyMode::Testing {
        return Err(Error::RawDistribution);
    }
    Ok(SemanticDescription {
        selected: top_k(&sd.counts, k2)?,
        per_category: None,
    })
}

/// One selection per category. `selected` is the top-`k2` of the summed
/// noisy vectors.
pub fn select_conditional(
    sds: &BTreeMap<usize, SemanticDistribution>,
    k2: usize,
    mode: PrivacyMode,
) -> Result<SemanticDescription> {
    let ns = sds.values().next().ok_or(Error::Empty("conditional distributions"))?.counts.len();
    let mut sum = vec![0.0; ns];
    let mut per_category = BTreeMap::new();
    for (&cat, sd) in sds {
        if sd.counts.len() != ns {
            return Err(Error::DimensionMismatch { expected: ns, actual: sd.counts.len() });
        }
        per_category.insert(cat, select_description(sd, k2, mode)?.selected);
        for (s, c) in sum.iter_mut().zip(&sd.counts) {
            *s += c;
        }
    }
    Ok(SemanticDescription {
        selected: top_k(&sum, k2)?,
        per_category: Some(per_category),
    })
}

/// Public subset admitted by a description.
#[derive(Debug, Clone)]
pub struct Selection {
    pub data: LabeledDataset,
    /// Set when nothing was selected.
    pub empty: bool,
}

impl Selection {
    pub fn ratio(&self, public_len: usize) -> f64 {
        if public_len == 0 {
            0.0
        } else {
            self.data.len() as f64 / public_len as f64
        }
    }
}

/// Keeps the public records whose semantic label was selected. With
/// per-category selections each kept record is labeled with the lowest
/// category whose selection admitted it.
pub fn select_pretraining_data(public: &LabeledDataset, desc: &SemanticDescription) -> Result<Selection> {
    let semantics = public
        .semantic_labels()
        .ok_or_else(|| invalid("public dataset has no semantic labels"))?;
    let ns = public.num_semantics();
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    match &desc.per_category {
        None => {
            if let Some(&bad) = desc.selected.iter().find(|&&s| s >= ns) {
                return Err(Error::UnknownLabel(format!("semantic {bad} >= {ns}")));
            }
            rows.extend((0..public.len()).filter(|&i| desc.selected.contains(&semantics[i])));
        }
        Some(map) => {
            for (i, s) in semantics.iter().enumerate() {
                if let Some((&cat, _)) = map.iter().find(|(_, sel)| sel.contains(s)) {
                    rows.push(i);
                    labels.push(cat);
                }
            }
        }
    }
    let mut data = public.subset(&rows)?;
    if let Some(map) = &desc.per_category {
        let classes = map.keys().max().map_or(0, |m| m + 1);
        data = data.with_labels(Some(labels), classes)?;
    }
    let empty = data.is_empty();
    if empty {
        log::warn!("semantic description selected no public records");
    }
    Ok(Selection { data, empty })
}

/// Raw SD of each category's subset. The index sets must be disjoint.
pub fn conditional_distributions(
    q: &DenseNet,
    sensitive: &SensitiveData,
    partition: &BTreeMap<usize, Vec<usize>>,
    k1: usize,
) -> Result<BTreeMap<usize, SemanticDistribution>> {
    let mut seen = vec![false; sensitive.len()];
    for rows in partition.values() {
        for &r in rows {
            if r >= seen.len() {
                return Err(invalid(format!("record {r} out of range {}", seen.len())));
            }
            if std::mem::replace(&mut seen[r], true) {
                return Err(Error::OverlappingPartition(r));
            }
        }
    }
    partition
        .iter()
        .map(|(&cat, rows)| {
            let counts = count_rows(q, sensitive.records(), rows, k1)?;
            Ok((cat, SemanticDistribution::raw(counts, k1)?))
        })
        .collect()
}

/// Category partition of a labeled sensitive set.
pub fn category_partition(sensitive: &SensitiveData) -> Result<BTreeMap<usize, Vec<usize>>> {
    let parts = sensitive
        .records()
        .class_partition()
        .ok_or_else(|| invalid("sensitive dataset has no category labels"))?;
    Ok(parts.into_iter().enumerate().collect())
}
