//! On-disk dataset formats.
//!
//! Binary layout (little-endian):
//!
//! ```text
//! magic          "PSDS"
//! version        u32   (= 1)
//! n              u64   rows
//! d              u64   feature dimension
//! flags          u32   bit 0: category labels present, bit 1: semantic labels present
//! split          u8    0 train, 1 validation, 2 test
//! num_classes    u32
//! num_semantics  u32
//! features       f64 × n·d, row-major
//! labels         u32 × n   (if bit 0)
//! semantics      u32 × n   (if bit 1)
//! ```
//!
//! The CSV path reads a header row; columns named `label` and `semantic`
//! hold the label columns, every other column is a feature.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{LabeledDataset, Split};
use crate::binio::*;
use crate::error::{invalid, Error, Result};

pub const DATASET_MAGIC: &[u8; 4] = b"PSDS";
pub const DATASET_VERSION: u32 = 1;

const FLAG_LABELS: u32 = 1;
const FLAG_SEMANTICS: u32 = 2;
const MAX_CELLS: u64 = 1 << 32;

pub fn write_dataset_to(w: &mut impl Write, ds: &LabeledDataset) -> Result<()> {
    w.write_all(DATASET_MAGIC)?;
    put_u32(w, DATASET_VERSION)?;
    put_u64(w, ds.len() as u64)?;
    put_u64(w, ds.dim() as u64)?;
    let mut flags = 0;
    if ds.labels().is_some() {
        flags |= FLAG_LABELS;
    }
    if ds.semantic_labels().is_some() {
        flags |= FLAG_SEMANTICS;
    }
    put_u32(w, flags)?;
    put_u8(w, ds.split().code())?;
    put_u32(w, ds.num_classes() as u32)?;
    put_u32(w, ds.num_semantics() as u32)?;
    for x in ds.features().iter() {
        put_f64(w, *x)?;
    }
    for labels in [ds.labels(), ds.semantic_labels()].into_iter().flatten() {
        for &l in labels {
            put_u32(w, l as u32)?;
        }
    }
    Ok(())
}

pub fn read_dataset_from(r: &mut impl Read) -> Result<LabeledDataset> {
    expect_magic(r, DATASET_MAGIC)?;
    let version = get_u32(r, "version")?;
    if version != DATASET_VERSION {
        return Err(Error::Version(version));
    }
    let n = get_u64(r, "row count")?;
    let d = get_u64(r, "dimension")?;
    let cells = n
        .checked_mul(d)
        .ok_or_else(|| Error::Corrupt("row × dimension overflows".into()))?;
    checked_len(cells, MAX_CELLS, "feature")?;
    let (n, d) = (n as usize, d as usize);
    let flags = get_u32(r, "flags")?;
    if flags & !(FLAG_LABELS | FLAG_SEMANTICS) != 0 {
        return Err(Error::Corrupt(format!("unknown flag bits {flags:#x}")));
    }
    let split_code = get_u8(r, "split")?;
    let split = Split::from_code(split_code)
        .ok_or_else(|| Error::Corrupt(format!("unknown split code {split_code}")))?;
    let num_classes = get_u32(r, "class count")? as usize;
    let num_semantics = get_u32(r, "semantic count")? as usize;

    let mut features = Array2::zeros((n, d));
    for x in features.iter_mut() {
        *x = get_f64(r, "features")?;
    }
    let mut read_labels = |present: bool, what: &str| -> Result<Option<Vec<usize>>> {
        if !present {
            return Ok(None);
        }
        (0..n)
            .map(|_| get_u32(r, what).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    };
    let labels = read_labels(flags & FLAG_LABELS != 0, "labels")?;
    let semantics = read_labels(flags & FLAG_SEMANTICS != 0, "semantic labels")?;
    LabeledDataset::new(features, labels, num_classes, semantics, num_semantics, split)
        .map_err(|e| Error::Corrupt(e.to_string()))
}

pub fn save_dataset(path: impl AsRef<Path>, ds: &LabeledDataset) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_dataset_to(&mut w, ds)?;
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    read_dataset_from(&mut BufReader::new(File::open(path)?))
}

/// Reads a CSV with a header row. Label ranges are the observed maximum + 1
/// unless overridden.
pub fn read_csv_from(
    r: impl Read,
    num_classes: Option<usize>,
    num_semantics: Option<usize>,
) -> Result<LabeledDataset> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let headers = reader.headers()?.clone();
    let label_col = headers.iter().position(|h| h == "label");
    let sem_col = headers.iter().position(|h| h == "semantic");
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|i| Some(*i) != label_col && Some(*i) != sem_col)
        .collect();

    let mut values = Vec::new();
    let mut labels = label_col.map(|_| Vec::new());
    let mut semantics = sem_col.map(|_| Vec::new());
    let mut rows = 0;
    for (line, record) in reader.records().enumerate() {
        let record = record?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        for &c in &feature_cols {
            let v: f64 = field(c)
                .parse()
                .map_err(|_| invalid(format!("row {}: bad number `{}`", line + 2, field(c))))?;
            values.push(v);
        }
        let parse_label = |c: usize| -> Result<usize> {
            field(c)
                .parse()
                .map_err(|_| invalid(format!("row {}: bad label `{}`", line + 2, field(c))))
        };
        if let (Some(c), Some(l)) = (label_col, labels.as_mut()) {
            l.push(parse_label(c)?);
        }
        if let (Some(c), Some(s)) = (sem_col, semantics.as_mut()) {
            s.push(parse_label(c)?);
        }
        rows += 1;
    }
    let features = Array2::from_shape_vec((rows, feature_cols.len()), values)
        .map_err(|e| invalid(e.to_string()))?;
    let range = |v: &Option<Vec<usize>>, given: Option<usize>| {
        given.unwrap_or_else(|| v.as_ref().and_then(|l| l.iter().max().map(|m| m + 1)).unwrap_or(0))
    };
    let nc = range(&labels, num_classes);
    let ns = range(&semantics, num_semantics);
    LabeledDataset::new(features, labels, nc, semantics, ns, Split::Train)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    read_csv_from(File::open(path)?, None, None)
}

/// Writes `f0..f{d-1}` plus optional `label`/`semantic` columns.
pub fn write_csv_to(w: impl Write, ds: &LabeledDataset) -> Result<()> {
    let mut writer = csv::Writer::from_writer(w);
    let mut header: Vec<String> = (0..ds.dim()).map(|j| format!("f{j}")).collect();
    if ds.labels().is_some() {
        header.push("label".into());
    }
    if ds.semantic_labels().is_some() {
        header.push("semantic".into());
    }
    writer.write_record(&header)?;
    for i in 0..ds.len() {
        let mut rec: Vec<String> = ds.row(i).iter().map(|v| format!("{v:e}")).collect();
        if let Some(l) = ds.labels() {
            rec.push(l[i].to_string());
        }
        if let Some(s) = ds.semantic_labels() {
            rec.push(s[i].to_string());
        }
        writer.write_record(&rec)?;
    }
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn sample() -> LabeledDataset {
        LabeledDataset::new(
            array![[0.1, -2.5], [3.0, 1e-300], [f64::MAX, -0.0]],
            Some(vec![0, 1, 1]),
            2,
            Some(vec![4, 0, 2]),
            5,
            Split::Validation,
        )
        .unwrap()
    }

    fn encode(ds: &LabeledDataset) -> Vec<u8> {
        let mut buf = Vec::new();
        write_dataset_to(&mut buf, ds).unwrap();
        buf
    }

    #[test]
    fn binary_round_trip() {
        let ds = sample();
        let back = read_dataset_from(&mut encode(&ds).as_slice()).unwrap();
        assert_eq!(back, ds);
        let bits = |d: &LabeledDataset| d.features().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&ds));
    }

    #[test]
    fn empty_round_trip() {
        let ds = LabeledDataset::empty(7);
        assert_eq!(read_dataset_from(&mut encode(&ds).as_slice()).unwrap(), ds);
    }

    #[test]
    fn truncated_file_is_corrupt_not_panic() {
        let buf = encode(&sample());
        for cut in [0, 3, 10, 30, buf.len() - 1] {
            let err = read_dataset_from(&mut &buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::Corrupt(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn header_errors() {
        let mut buf = encode(&sample());
        buf[0] = b'X';
        assert!(matches!(read_dataset_from(&mut buf.as_slice()), Err(Error::Corrupt(_))));
        let mut buf = encode(&sample());
        buf[4] = 2;
        assert!(matches!(read_dataset_from(&mut buf.as_slice()), Err(Error::Version(2))));
    }

    #[test]
    fn csv_round_trip() {
        let ds = sample().with_split(Split::Train);
        let mut buf = Vec::new();
        write_csv_to(&mut buf, &ds).unwrap();
        let back = read_csv_from(buf.as_slice(), Some(2), Some(5)).unwrap();
        assert_eq!(back, ds);
    }

    #[test]
    fn csv_infers_ranges() {
        let text = "a,b,label\n1,2,0\n3,4,2\n";
        let ds = read_csv_from(text.as_bytes(), None, None).unwrap();
        assert_eq!(ds.dim(), 2);
        assert_eq!(ds.num_classes(), 3);
        assert!(read_csv_from("a\nx\n".as_bytes(), None, None).is_err());
    }
}
