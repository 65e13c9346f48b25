use std::collections::BTreeMap;

use ndarray::Array2;
use privsynth::accountant::default_orders;
use privsynth::data::{LabeledDataset, Split};
use privsynth::dpcore::PrivacyMode;
use privsynth::ledger::BudgetLedger;
use privsynth::nn::{Activation, ClassifierConfig, DenseNet};
use privsynth::noise::NoiseSource;
use privsynth::semantics::*;
use privsynth::Error;

/// Public corpus with one tight cluster per semantic at `±4` on an axis.
fn public_corpus(ns: usize, per: usize, noise: &mut NoiseSource) -> LabeledDataset {
    let d = ns;
    let mut x = Array2::zeros((ns * per, d));
    let mut sem = Vec::new();
    for s in 0..ns {
        for r in 0..per {
            let i = s * per + r;
            for j in 0..d {
                x[[i, j]] = 0.3 * noise.gaussian();
            }
            x[[i, s]] += 4.0;
            sem.push(s);
        }
    }
    LabeledDataset::new(x, None, 0, Some(sem), ns, Split::Train).unwrap()
}

fn sensitive_rows(rows: &[Vec<f64>]) -> SensitiveData {
    let d = rows[0].len();
    let x = Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j]);
    SensitiveData::new(LabeledDataset::unlabeled(x).unwrap())
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn zebra_bee_worked_example() {
    let mut noise = NoiseSource::new(31, 0);
    let vocab = SemanticVocabulary::new(["zebra", "bee"]).unwrap();
    let public = public_corpus(2, 20, &mut noise);
    let q = train_sqf(&public, &vocab, &ClassifierConfig::linear(), &mut noise).unwrap().net;
    // three zebra-like sensitive images
    let sensitive = sensitive_rows(&[vec![3.8, 0.1], vec![4.2, -0.2], vec![4.0, 0.3]]);
    let mut raw = build_distribution(&q, &sensitive, 1).unwrap();
    assert_eq!(raw.counts(), &[3.0, 0.0]);

    let mut ledger = BudgetLedger::new(&default_orders(), 1e-5).unwrap();
    let released = release_distribution(&mut raw, 0.0, PrivacyMode::Testing, &mut noise, &mut ledger).unwrap();
    assert_eq!(released.counts(), &[3.0, 0.0]);
    assert!(ledger.is_empty(), "zero-noise testing release is not charged");

    let desc = select_description(&released, 1, PrivacyMode::Testing).unwrap();
    assert_eq!(desc.selected, vec![0]);
    let sel = select_pretraining_data(&public, &desc).unwrap();
    let sem = sel.data.semantic_labels().unwrap();
    assert_eq!(sel.data.len(), 20);
    assert!(sem.iter().all(|&s| s == 0));
}

#[test]
fn noisy_worked_example_still_picks_zebra() {
    let mut noise = NoiseSource::new(32, 0);
    let vocab = SemanticVocabulary::new(["zebra", "bee"]).unwrap();
    let public = public_corpus(2, 20, &mut noise);
    let q = train_sqf(&public, &vocab, &ClassifierConfig::linear(), &mut noise).unwrap().net;
    let sensitive = sensitive_rows(&vec![vec![4.0, 0.0]; 30]);
    let mut raw = build_distribution(&q, &sensitive, 1).unwrap();
    let mut ledger = BudgetLedger::new(&default_orders(), 1e-5).unwrap();
    let noisy = release_distribution(&mut raw, 2.0, PrivacyMode::Enforced, &mut noise, &mut ledger).unwrap();
    assert_ne!(noisy.counts(), raw.counts());
    assert_eq!(select_description(&noisy, 1, PrivacyMode::Enforced).unwrap().selected, vec![0]);
    assert_eq!(ledger.query_charges(), 1);
}

#[test]
fn raw_counts_cannot_be_selected_when_enforced() {
    let raw = SemanticDistribution::raw(vec![3.0, 0.0], 1).unwrap();
    assert!(matches!(select_description(&raw, 1, PrivacyMode::Enforced), Err(Error::RawDistribution)));
}

#[test]
fn release_happens_once() {
    let mut noise = NoiseSource::new(33, 0);
    let mut ledger = BudgetLedger::new(&default_orders(), 1e-5).unwrap();
    let mut raw = SemanticDistribution::raw(vec![1.0, 2.0], 1).unwrap();
    release_distribution(&mut raw, 5.0, PrivacyMode::Enforced, &mut noise, &mut ledger).unwrap();
    assert!(raw.is_released());
    assert!(matches!(
        release_distribution(&mut raw, 5.0, PrivacyMode::Enforced, &mut noise, &mut ledger),
        Err(Error::AlreadyReleased)
    ));
    let mut other = SemanticDistribution::raw(vec![1.0, 2.0], 1).unwrap();
    assert!(matches!(
        release_distribution(&mut other, 5.0, PrivacyMode::Enforced, &mut noise, &mut ledger),
        Err(Error::DuplicateQueryCharge)
    ));
    assert_eq!(ledger.len(), 1);
}

/// Random linear SQF over `ns` semantics.
fn random_sqf(d: usize, ns: usize, noise: &mut NoiseSource) -> DenseNet {
    DenseNet::init(&[d, ns], Activation::Identity, Activation::Identity, noise).unwrap()
}

#[test]
fn adjacent_datasets_move_the_distribution_by_at_most_sqrt_k1() {
    let mut noise = NoiseSource::new(34, 0);
    let (d, ns) = (3, 6);
    for k1 in [1usize, 2, 4] {
        for _trial in 0..5 {
            let q = random_sqf(d, ns, &mut noise);
            let base: Vec<Vec<f64>> = (0..30).map(|_| noise.gaussian_vec(d)).collect();
            let candidates: Vec<Vec<f64>> = (0..30).map(|_| noise.gaussian_vec(d)).collect();
            let sd = build_distribution(&q, &sensitive_rows(&base), k1).unwrap();
            // every removal
            for i in 0..base.len() {
                let mut rows = base.clone();
                rows.remove(i);
                let other = build_distribution(&q, &sensitive_rows(&rows), k1).unwrap();
                let dist = l2(sd.counts(), other.counts());
                assert!(dist <= (k1 as f64).sqrt() + 1e-12, "k1={k1} removal {i}: {dist}");
            }
            // every addition from the candidate pool
            for c in &candidates {
                let mut rows = base.clone();
                rows.push(c.clone());
                let other = build_distribution(&q, &sensitive_rows(&rows), k1).unwrap();
                let dist = l2(sd.counts(), other.counts());
                assert!(dist <= (k1 as f64).sqrt() + 1e-12);
            }
        }
    }
}

#[test]
fn worst_case_adjacency_attains_sqrt_k1() {
    let mut noise = NoiseSource::new(35, 0);
    for k1 in [1usize, 2, 4] {
        let q = random_sqf(3, 6, &mut noise);
        let base: Vec<Vec<f64>> = (0..30).map(|_| noise.gaussian_vec(3)).collect();
        let mut plus = base.clone();
        plus.push(noise.gaussian_vec(3));
        let a = build_distribution(&q, &sensitive_rows(&base), k1).unwrap();
        let b = build_distribution(&q, &sensitive_rows(&plus), k1).unwrap();
        // the added record contributes k1 distinct ones
        assert_eq!(l2(a.counts(), b.counts()), (k1 as f64).sqrt());
    }
}

#[test]
fn per_category_family_has_the_same_sensitivity() {
    let mut noise = NoiseSource::new(36, 0);
    let k1 = 2;
    let q = random_sqf(3, 5, &mut noise);
    let rows: Vec<Vec<f64>> = (0..30).map(|_| noise.gaussian_vec(3)).collect();
    let labels: Vec<usize> = (0..30).map(|i| i % 3).collect();
    let make = |rows: &[Vec<f64>], labels: &[usize]| {
        let x = Array2::from_shape_fn((rows.len(), 3), |(i, j)| rows[i][j]);
        SensitiveData::new(LabeledDataset::new(x, Some(labels.to_vec()), 3, None, 0, Split::Train).unwrap())
    };
    let concat = |m: &BTreeMap<usize, SemanticDistribution>| -> Vec<f64> {
        (0..3).flat_map(|c| m.get(&c).map_or(vec![0.0; 5], |sd| sd.counts().to_vec())).collect()
    };
    let full = make(&rows, &labels);
    let base = concat(&conditional_distributions(&q, &full, &category_partition(&full).unwrap(), k1).unwrap());
    for i in 0..30 {
        let mut r = rows.clone();
        let mut l = labels.clone();
        r.remove(i);
        l.remove(i);
        let s = make(&r, &l);
        let v = concat(&conditional_distributions(&q, &s, &category_partition(&s).unwrap(), k1).unwrap());
        assert_eq!(l2(&base, &v), (k1 as f64).sqrt());
    }
}

#[test]
fn overlapping_partition_rejected() {
    let mut noise = NoiseSource::new(37, 0);
    let q = random_sqf(2, 3, &mut noise);
    let s = sensitive_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
    let part = BTreeMap::from([(0, vec![0, 1]), (1, vec![1])]);
    assert!(matches!(
        conditional_distributions(&q, &s, &part, 1),
        Err(Error::OverlappingPartition(1))
    ));
}

#[test]
fn per_category_selection_labels_records() {
    let mut noise = NoiseSource::new(38, 0);
    let public = public_corpus(4, 5, &mut noise);
    let desc = SemanticDescription {
        selected: vec![2],
        per_category: Some(BTreeMap::from([(0, vec![2]), (1, vec![3, 2])])),
    };
    let sel = select_pretraining_data(&public, &desc).unwrap();
    assert_eq!(sel.data.len(), 10);
    let sem = sel.data.semantic_labels().unwrap();
    let lab = sel.data.labels().unwrap();
    for (s, l) in sem.iter().zip(lab) {
        assert_eq!(*l, if *s == 2 { 0 } else { 1 });
    }
    assert!((sel.ratio(public.len()) - 0.5).abs() < 1e-15);
}

#[test]
fn table_round_trip() {
    let vocab = SemanticVocabulary::new(["zebra", "bee", "sorrel"]).unwrap();
    let sd = SemanticDistribution::noisy(vec![2.7, 1.5, -0.25], 1).unwrap();
    let back = SemanticDistribution::from_table(&sd.to_table(&vocab), 1).unwrap();
    assert_eq!(back.counts(), sd.counts());
    assert!(back.is_noisy());
}
