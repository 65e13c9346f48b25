use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::ledger::BudgetLedger;

/// Final run summary. Optional values are absent when the corresponding
/// stage did not apply (e.g. accuracy for unlabeled synthetic data).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Report {
    pub epsilon: f64,
    pub delta: f64,
    pub order: f64,
    pub charges: usize,
    pub query_charges: usize,
    pub sigma1: Option<f64>,
    pub sigma2: f64,
    pub steps: usize,
    pub sample_rate: Option<f64>,
    pub k1: usize,
    pub k2: usize,
    pub selected: Vec<String>,
    pub selected_records: usize,
    pub public_records: usize,
    pub selection_ratio: f64,
    pub synthetic_records: usize,
    pub sds: Option<f64>,
    pub frechet: Option<f64>,
    pub accuracy: Option<f64>,
}

impl Report {
    /// Privacy fields from the ledger; an empty ledger reports ε = 0.
    pub fn from_ledger(ledger: &BudgetLedger) -> Result<Self> {
        let p = ledger.projection()?;
        Ok(Self {
            epsilon: p.epsilon,
            delta: p.delta,
            order: p.order,
            charges: ledger.len(),
            query_charges: ledger.query_charges(),
            ..Default::default()
        })
    }

    fn rows(&self) -> Vec<(&'static str, String)> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        vec![
            ("epsilon", self.epsilon.to_string()),
            ("delta", self.delta.to_string()),
            ("order", self.order.to_string()),
            ("charges", self.charges.to_string()),
            ("query_charges", self.query_charges.to_string()),
            ("sigma1", opt(self.sigma1)),
            ("sigma2", self.sigma2.to_string()),
            ("steps", self.steps.to_string()),
            ("sample_rate", opt(self.sample_rate)),
            ("k1", self.k1.to_string()),
            ("k2", self.k2.to_string()),
            ("selected", self.selected.join(";")),
            ("selected_records", self.selected_records.to_string()),
            ("public_records", self.public_records.to_string()),
            ("selection_ratio", self.selection_ratio.to_string()),
            ("synthetic_records", self.synthetic_records.to_string()),
            ("sds", opt(self.sds)),
            ("frechet", opt(self.frechet)),
            ("accuracy", opt(self.accuracy)),
        ]
    }

    /// Human-readable summary followed by a `key=value` block.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let na = |v: Option<f64>, digits: usize| v.map_or("n/a".to_string(), |x| format!("{x:.digits$}"));
        writeln!(s, "privacy: ({:.4}, {:e})-DP at order {}", self.epsilon, self.delta, self.order).unwrap();
        writeln!(
            s,
            "ledger: {} charges ({} semantic query, {} DP-SGD steps)",
            self.charges,
            self.query_charges,
            self.charges - self.query_charges
        )
        .unwrap();
        writeln!(s, "noise: sigma1 = {}, sigma2 = {}", na(self.sigma1, 4), self.sigma2).unwrap();
        writeln!(
            s,
            "selection: {} of {} public records ({:.1}%), semantics [{}]",
            self.selected_records,
            self.public_records,
            100.0 * self.selection_ratio,
            self.selected.join(", ")
        )
        .unwrap();
        writeln!(
            s,
            "quality: frechet = {}, sds = {}, accuracy = {}",
            na(self.frechet, 4),
            na(self.sds, 4),
            na(self.accuracy, 4)
        )
        .unwrap();
        s.push('\n');
        for (k, v) in self.rows() {
            writeln!(s, "{k}={v}").unwrap();
        }
        s
    }

    /// `metric,value` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("metric,value\n");
        for (k, v) in self.rows() {
            writeln!(s, "{k},{v}").unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(text.as_bytes());
        let mut r = Report::default();
        for rec in reader.records() {
            let rec = rec?;
            let key = rec.get(0).unwrap_or("");
            let v = rec.get(1).unwrap_or("").trim();
            let bad = || Error::Corrupt(format!("report: bad value `{v}` for `{key}`"));
            let f = || v.parse::<f64>().map_err(|_| bad());
            let u = || v.parse::<usize>().map_err(|_| bad());
            let of = || if v.is_empty() { Ok(None) } else { f().map(Some) };
            match key {
                "epsilon" => r.epsilon = f()?,
                "delta" => r.delta = f()?,
                "order" => r.order = f()?,
                "charges" => r.charges = u()?,
                "query_charges" => r.query_charges = u()?,
                "sigma1" => r.sigma1 = of()?,
                "sigma2" => r.sigma2 = f()?,
                "steps" => r.steps = u()?,
                "sample_rate" => r.sample_rate = of()?,
                "k1" => r.k1 = u()?,
                "k2" => r.k2 = u()?,
                "selected" => {
                    r.selected = if v.is_empty() {
                        Vec::new()
                    } else {
                        v.split(';').map(str::to_string).collect()
                    }
                }
                "selected_records" => r.selected_records = u()?,
                "public_records" => r.public_records = u()?,
                "selection_ratio" => r.selection_ratio = f()?,
                "synthetic_records" => r.synthetic_records = u()?,
                "sds" => r.sds = of()?,
                "frechet" => r.frechet = of()?,
                "accuracy" => r.accuracy = of()?,
                other => return Err(Error::Corrupt(format!("report: unknown metric `{other}`"))),
            }
        }
        Ok(r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::default_orders;

    #[test]
    fn empty_ledger_reports_zero() {
        let ledger = BudgetLedger::new(&default_orders(), 1e-5).unwrap();
        let r = Report::from_ledger(&ledger).unwrap();
        assert_eq!(r.epsilon, 0.0);
        assert!(r.to_text().contains("epsilon=0\n"));
    }

    #[test]
    fn csv_round_trip() {
        let r = Report {
            epsilon: 9.87654321,
            delta: 1e-5,
            order: 12.0,
            charges: 201,
            query_charges: 1,
            sigma1: Some(0.8123),
            sigma2: 20.0,
            steps: 200,
            sample_rate: Some(0.08),
            k1: 2,
            k2: 2,
            selected: vec!["zebra".into(), "bee".into()],
            selected_records: 400,
            public_records: 2000,
            selection_ratio: 0.2,
            synthetic_records: 400,
            sds: Some(0.61),
            frechet: Some(1.25e-3),
            accuracy: None,
        };
        assert_eq!(Report::from_csv(&r.to_csv()).unwrap(), r);
    }
}
