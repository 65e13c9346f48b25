//! Deterministic Gaussian-cluster corpora standing in for the public and
//! sensitive image datasets.
//!
//! Every public semantic is one cluster. The sensitive set draws from a chosen
//! subset of those clusters (its categories), with exact per-category counts,
//! so its true semantic distribution is known by construction.

use ndarray::Array2;

use super::{LabeledDataset, Split, DEFAULT_VOCABULARY};
use crate::error::{invalid, Result};
use crate::noise::{streams, NoiseSource};

#[derive(Debug, Clone, PartialEq)]
pub struct ToyWorldSpec {
    /// Semantic vocabulary, one cluster per name.
    pub names: Vec<String>,
    pub dim: usize,
    /// Norm of every cluster mean.
    pub separation: f64,
    /// Per-coordinate standard deviation inside a cluster.
    pub spread: f64,
    pub public_size: usize,
    pub sensitive_size: usize,
    /// Clusters the sensitive set is drawn from; category `c` is cluster
    /// `overlap[c]`.
    pub overlap: Vec<usize>,
    /// Mixture weight of each sensitive category.
    pub mixture: Vec<f64>,
    /// Norm of a per-category offset applied to sensitive records, so they
    /// resemble but do not equal the public cluster.
    pub sensitive_shift: f64,
    /// Train / validation / test fractions of the sensitive set.
    pub split: [f64; 3],
}

impl Default for ToyWorldSpec {
    fn default() -> Self {
        Self {
            names: DEFAULT_VOCABULARY.iter().map(|s| s.to_string()).collect(),
            dim: 16,
            separation: 4.0,
            spread: 1.0,
            public_size: 2000,
            sensitive_size: 500,
            overlap: vec![0, 1],
            mixture: vec![0.5, 0.5],
            sensitive_shift: 0.0,
            split: [0.8, 0.1, 0.1],
        }
    }
}

impl ToyWorldSpec {
    pub fn num_semantics(&self) -> usize {
        self.names.len()
    }

    pub fn validate(&self) -> Result<()> {
        let ns = self.names.len();
        if ns == 0 || self.dim == 0 {
            return Err(invalid("toy world needs >= 1 semantic and >= 1 dimension"));
        }
        let mut sorted = self.names.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ns {
            return Err(invalid("semantic names must be unique"));
        }
        if self.overlap.is_empty() || self.overlap.iter().any(|&c| c >= ns) {
            return Err(invalid("overlap must be a nonempty subset of the clusters"));
        }
        let mut ov = self.overlap.clone();
        ov.sort_unstable();
        ov.dedup();
        if ov.len() != self.overlap.len() {
            return Err(invalid("overlap clusters must be distinct"));
        }
        check_weights(&self.mixture, "mixture")?;
        if self.mixture.len() != self.overlap.len() {
            return Err(invalid("one mixture weight per overlap cluster"));
        }
        check_weights(&self.split, "split")?;
        for (v, what) in [
            (self.separation, "separation"),
            (self.spread, "spread"),
            (self.sensitive_shift, "sensitive_shift"),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("{what} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

fn check_weights(w: &[f64], what: &str) -> Result<()> {
    if w.iter().any(|x| !(*x >= 0.0) || !x.is_finite()) {
        return Err(invalid(format!("{what} weights must be finite and >= 0")));
    }
    if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(invalid(format!("{what} weights must sum to 1")));
    }
    Ok(())
}

/// Largest-remainder apportionment of `total` by `weights`; ties go to the
/// lower index.
pub fn apportion(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let exact: Vec<f64> = weights.iter().map(|w| w / sum * total as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|x| x.floor() as usize).collect();
    let mut rest = total - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &i in order.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[i] += 1;
        rest -= 1;
    }
    counts
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub spec: ToyWorldSpec,
    pub cluster_means: Vec<Vec<f64>>,
    pub public: LabeledDataset,
    pub sensitive_train: LabeledDataset,
    pub sensitive_validation: LabeledDataset,
    pub sensitive_test: LabeledDataset,
}

fn unit_vector(dim: usize, noise: &mut NoiseSource) -> Vec<f64> {
    loop {
        let v = noise.gaussian_vec(dim);
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

fn draw(center: &[f64], spread: f64, noise: &mut NoiseSource) -> Vec<f64> {
    center.iter().map(|m| m + spread * noise.gaussian()).collect()
}

pub fn make_toy_world(seed: u64, spec: &ToyWorldSpec) -> Result<ToyWorld> {
    spec.validate()?;
    let mut noise = NoiseSource::new(seed, streams::TOY_WORLD);
    let ns = spec.num_semantics();
    let d = spec.dim;

    let cluster_means: Vec<Vec<f64>> = (0..ns)
        .map(|_| unit_vector(d, &mut noise).into_iter().map(|x| x * spec.separation).collect())
        .collect();
    let sensitive_centers: Vec<Vec<f64>> = spec
        .overlap
        .iter()
        .map(|&c| {
            let offset = unit_vector(d, &mut noise);
            cluster_means[c]
                .iter()
                .zip(offset)
                .map(|(m, o)| m + spec.sensitive_shift * o)
                .collect()
        })
        .collect();

    // public: evenly spread over every cluster
    let per_cluster = apportion(spec.public_size, &vec![1.0; ns]);
    let mut rows: Vec<(Vec<f64>, usize)> = Vec::with_capacity(spec.public_size);
    for (c, &count) in per_cluster.iter().enumerate() {
        for _ in 0..count {
            rows.push((draw(&cluster_means[c], spec.spread, &mut noise), c));
        }
    }
    noise.shuffle(&mut rows);
    let public = assemble(rows, d, None, ns, Split::Train)?;

    let split_sizes = apportion(spec.sensitive_size, &spec.split);
    let mut splits = Vec::with_capacity(3);
    for (size, split) in split_sizes.into_iter().zip([Split::Train, Split::Validation, Split::Test]) {
        let counts = apportion(size, &spec.mixture);
        let mut rows = Vec::with_capacity(size);
        for (cat, &count) in counts.iter().enumerate() {
            for _ in 0..count {
                rows.push((draw(&sensitive_centers[cat], spec.spread, &mut noise), cat));
            }
        }
        noise.shuffle(&mut rows);
        splits.push(assemble(rows, d, Some(&spec.overlap), ns, split)?);
    }
    let sensitive_test = splits.pop().expect("three splits");
    let sensitive_validation = splits.pop().expect("three splits");
    let sensitive_train = splits.pop().expect("three splits");

    Ok(ToyWorld {
        spec: spec.clone(),
        cluster_means,
        public,
        sensitive_train,
        sensitive_validation,
        sensitive_test,
    })
}

/// Public rows carry semantic labels only; sensitive rows carry their
/// category plus the ground-truth semantic `overlap[category]`.
fn assemble(
    rows: Vec<(Vec<f64>, usize)>,
    d: usize,
    overlap: Option<&[usize]>,
    ns: usize,
    split: Split,
) -> Result<LabeledDataset> {
    let n = rows.len();
    let mut features = Array2::zeros((n, d));
    let mut tags = Vec::with_capacity(n);
    for (i, (x, t)) in rows.into_iter().enumerate() {
        for (j, v) in x.into_iter().enumerate() {
            features[[i, j]] = v;
        }
        tags.push(t);
    }
    match overlap {
        None => LabeledDataset::new(features, None, 0, Some(tags), ns, split),
        Some(ov) => {
            let semantics = tags.iter().map(|&c| ov[c]).collect();
            LabeledDataset::new(features, Some(tags), ov.len(), Some(semantics), ns, split)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apportion_sums_exactly() {
        assert_eq!(apportion(10, &[0.8, 0.1, 0.1]), vec![8, 1, 1]);
        assert_eq!(apportion(7, &[1.0, 1.0, 1.0]), vec![3, 2, 2]);
        assert_eq!(apportion(0, &[0.5, 0.5]), vec![0, 0]);
        assert_eq!(apportion(501, &[0.8, 0.1, 0.1]).iter().sum::<usize>(), 501);
    }

    #[test]
    fn split_sizes_match_spec() {
        let world = make_toy_world(1, &ToyWorldSpec::default()).unwrap();
        assert_eq!(world.public.len(), 2000);
        assert_eq!(world.sensitive_train.len(), 400);
        assert_eq!(world.sensitive_validation.len(), 50);
        assert_eq!(world.sensitive_test.len(), 50);
        assert_eq!(world.sensitive_test.split(), Split::Test);
    }

    #[test]
    fn zero_spread_repeats_cluster_means() {
        let spec = ToyWorldSpec {
            spread: 0.0,
            public_size: 30,
            sensitive_size: 10,
            ..Default::default()
        };
        let world = make_toy_world(3, &spec).unwrap();
        let sem = world.public.semantic_labels().unwrap();
        for i in 0..world.public.len() {
            let mean = &world.cluster_means[sem[i]];
            assert!(world.public.row(i).iter().zip(mean).all(|(a, b)| a == b));
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let spec = ToyWorldSpec::default();
        let a = make_toy_world(9, &spec).unwrap();
        let b = make_toy_world(9, &spec).unwrap();
        assert_eq!(a.public, b.public);
        assert_eq!(a.sensitive_train, b.sensitive_train);
        let c = make_toy_world(10, &spec).unwrap();
        assert_ne!(a.public, c.public);
    }

    #[test]
    fn ground_truth_distribution_equals_mixture() {
        let spec = ToyWorldSpec {
            overlap: vec![3, 7, 1],
            mixture: vec![0.5, 0.25, 0.25],
            ..Default::default()
        };
        let world = make_toy_world(4, &spec).unwrap();
        let train = &world.sensitive_train;
        let mut counts = vec![0usize; spec.num_semantics()];
        for &s in train.semantic_labels().unwrap() {
            counts[s] += 1;
        }
        let n = train.len() as f64;
        for (cat, &c) in spec.overlap.iter().enumerate() {
            assert_eq!(counts[c] as f64 / n, spec.mixture[cat]);
        }
        assert_eq!(counts.iter().sum::<usize>(), train.len());
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad = [
            ToyWorldSpec { overlap: vec![10], mixture: vec![1.0], ..Default::default() },
            ToyWorldSpec { overlap: vec![1, 1], ..Default::default() },
            ToyWorldSpec { mixture: vec![0.7, 0.7], ..Default::default() },
            ToyWorldSpec { split: [0.5, 0.1, 0.1], ..Default::default() },
            ToyWorldSpec { spread: -1.0, ..Default::default() },
            ToyWorldSpec { names: vec![], ..Default::default() },
        ];
        for spec in bad {
            assert!(make_toy_world(0, &spec).is_err());
        }
    }
}
