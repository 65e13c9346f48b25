use std::collections::BTreeMap;
use std::io::Read;

use crate::error::{invalid, Error, Result};

/// 16-dimensional embeddings for the toy vocabulary, `name,v1,…,v16`.
pub const BUNDLED_EMBEDDINGS: &str = include_str!("../../assets/embeddings.csv");

/// Unit-length word vectors keyed by semantic name.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    vectors: BTreeMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    /// Vectors are normalized to unit length; zero vectors are rejected.
    pub fn new(entries: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let dim = entries.first().map(|(_, v)| v.len()).ok_or(Error::Empty("embedding table"))?;
        let mut vectors = BTreeMap::new();
        for (name, v) in entries {
            if v.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, actual: v.len() });
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if !(norm > 0.0) || !norm.is_finite() {
                return Err(invalid(format!("embedding for `{name}` has no direction")));
            }
            let unit = v.iter().map(|x| x / norm).collect();
            if vectors.insert(name.clone(), unit).is_some() {
                return Err(invalid(format!("duplicate embedding name `{name}`")));
            }
        }
        Ok(Self { dim, vectors })
    }

    pub fn from_csv(r: impl Read) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let mut entries = Vec::new();
        for record in reader.records() {
            let record = record?;
            let mut fields = record.iter();
            let name = fields.next().ok_or(Error::Empty("embedding row"))?.trim().to_string();
            let v = fields
                .map(|f| f.trim().parse::<f64>().map_err(|_| invalid(format!("bad embedding value `{f}`"))))
                .collect::<Result<Vec<_>>>()?;
            entries.push((name, v));
        }
        Self::new(entries)
    }

    pub fn bundled() -> Self {
        Self::from_csv(BUNDLED_EMBEDDINGS.as_bytes()).expect("bundled embedding table is valid")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.vectors.get(name).map(Vec::as_slice)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.vectors.keys().map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_table_covers_toy_vocabulary() {
        let table = EmbeddingTable::bundled();
        assert_eq!(table.dim(), 16);
        for name in crate::data::DEFAULT_VOCABULARY {
            let v = table.get(name).unwrap();
            let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_tables() {
        assert!(EmbeddingTable::new(vec![]).is_err());
        assert!(EmbeddingTable::new(vec![("a".into(), vec![0.0, 0.0])]).is_err());
        assert!(EmbeddingTable::new(vec![("a".into(), vec![1.0]), ("a".into(), vec![2.0])]).is_err());
        assert!(EmbeddingTable::new(vec![("a".into(), vec![1.0]), ("b".into(), vec![1.0, 0.0])]).is_err());
    }
}
