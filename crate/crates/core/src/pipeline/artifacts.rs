//! Run-directory layout shared by the full run and the per-stage commands.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use super::{PipelineOutput, Query};
use crate::data::{load_dataset, save_dataset, write_csv_to, LabeledDataset};
use crate::error::{Error, Result};
use crate::generative::write_model;
use crate::ledger::BudgetLedger;
use crate::nn::write_net;
use crate::semantics::{SemanticDescription, SemanticDistribution, SemanticVocabulary};

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunFiles {
    pub dir: PathBuf,
}

impl RunFiles {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn create(&self) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        Ok(())
    }

    fn at(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn config(&self) -> PathBuf {
        self.at("config.txt")
    }
    pub fn sqf(&self) -> PathBuf {
        self.at("sqf.psnn")
    }
    pub fn distribution(&self) -> PathBuf {
        self.at("semantic_distribution.csv")
    }
    pub fn category_distribution(&self, category: usize) -> PathBuf {
        self.at(&format!("semantic_distribution_c{category}.csv"))
    }
    pub fn description(&self) -> PathBuf {
        self.at("description.txt")
    }
    pub fn selected(&self) -> PathBuf {
        self.at("selected.psds")
    }
    pub fn pretrained(&self) -> PathBuf {
        self.at("pretrained.psgm")
    }
    pub fn finetuned(&self) -> PathBuf {
        self.at("finetuned.psgm")
    }
    pub fn synthetic_csv(&self) -> PathBuf {
        self.at("synthetic.csv")
    }
    pub fn synthetic(&self) -> PathBuf {
        self.at("synthetic.psds")
    }
    pub fn ledger(&self) -> PathBuf {
        self.at("ledger.csv")
    }
    pub fn report_text(&self) -> PathBuf {
        self.at("report.txt")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.at("report.csv")
    }
    pub fn manifest(&self) -> PathBuf {
        self.at("manifest.txt")
    }

    pub fn write_query(&self, query: &Query, vocab: &SemanticVocabulary) -> Result<()> {
        fs::write(self.distribution(), query.noisy.to_table(vocab))?;
        if let Some(map) = &query.per_category {
            for (c, sd) in map {
                fs::write(self.category_distribution(*c), sd.to_table(vocab))?;
            }
        }
        Ok(())
    }

    /// Reads the released distribution(s); per-category tables are picked up
    /// for categories `0..num_classes` when present.
    pub fn read_query(&self, k1: usize, num_classes: usize) -> Result<Query> {
        let noisy = SemanticDistribution::from_table(&fs::read_to_string(self.distribution())?, k1)?;
        let mut map = BTreeMap::new();
        for c in 0..num_classes {
            let p = self.category_distribution(c);
            if p.exists() {
                map.insert(c, SemanticDistribution::from_table(&fs::read_to_string(p)?, k1)?);
            }
        }
        Ok(Query {
            noisy,
            per_category: (!map.is_empty()).then_some(map),
        })
    }

    pub fn write_ledger(&self, ledger: &BudgetLedger) -> Result<()> {
        fs::write(self.ledger(), ledger.to_csv())?;
        Ok(())
    }

    pub fn read_ledger(&self, orders: &[f64], delta: f64) -> Result<BudgetLedger> {
        let p = self.ledger();
        if !p.exists() {
            return BudgetLedger::new(orders, delta);
        }
        BudgetLedger::from_csv(&fs::read_to_string(p)?, orders, delta)
    }

    pub fn write_synthetic(&self, data: &LabeledDataset) -> Result<()> {
        save_dataset(self.synthetic(), data)?;
        write_csv_to(BufWriter::new(File::create(self.synthetic_csv())?), data)
    }

    pub fn read_synthetic(&self) -> Result<LabeledDataset> {
        load_dataset(self.synthetic())
    }
}

/// `all: a b c` then one `c<k>: ...` line per category.
pub fn description_to_text(desc: &SemanticDescription) -> String {
    let join = |v: &[usize]| v.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(" ");
    let mut s = format!("all: {}\n", join(&desc.selected));
    if let Some(map) = &desc.per_category {
        for (c, v) in map {
            let _ = writeln!(s, "c{c}: {}", join(v));
        }
    }
    s
}

pub fn description_from_text(text: &str) -> Result<SemanticDescription> {
    let bad = |l: &str| Error::Corrupt(format!("description line `{l}`"));
    let mut selected = None;
    let mut per = BTreeMap::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let (key, rest) = line.split_once(':').ok_or_else(|| bad(line))?;
        let ids = rest
            .split_whitespace()
            .map(|t| t.parse::<usize>().map_err(|_| bad(line)))
            .collect::<Result<Vec<_>>>()?;
        match key.trim() {
            "all" => selected = Some(ids),
            k => {
                let c = k.strip_prefix('c').and_then(|c| c.parse().ok()).ok_or_else(|| bad(line))?;
                per.insert(c, ids);
            }
        }
    }
    Ok(SemanticDescription {
        selected: selected.ok_or_else(|| Error::Corrupt("description lacks `all:`".into()))?,
        per_category: (!per.is_empty()).then_some(per),
    })
}

/// Writes every artifact of a finished run plus a manifest listing them.
pub fn write_run(dir: &Path, out: &PipelineOutput) -> Result<RunFiles> {
    let files = RunFiles::new(dir);
    files.create()?;
    fs::write(files.config(), out.config.to_text())?;
    write_net(files.sqf(), &out.sqf)?;
    files.write_query(&out.query, &out.vocab)?;
    fs::write(files.description(), description_to_text(&out.description))?;
    save_dataset(files.selected(), &out.selected)?;
    write_model(files.pretrained(), &out.pretrained)?;
    write_model(files.finetuned(), &out.finetuned)?;
    files.write_synthetic(&out.synthetic)?;
    files.write_ledger(&out.ledger)?;
    fs::write(files.report_text(), out.report.to_text())?;
    fs::write(files.report_csv(), out.report.to_csv())?;

    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != "manifest.txt")
        .collect();
    names.sort();
    let mut manifest = String::new();
    for n in names {
        let len = fs::metadata(dir.join(&n))?.len();
        let _ = writeln!(manifest, "{n}\t{len}");
    }
    fs::write(files.manifest(), manifest)?;
    Ok(files)
}
