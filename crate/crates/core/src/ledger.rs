//! Append-only record of every privacy charge made during a run.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::accountant::{
    gaussian_query_curve, rdp_to_dp, sgm_curve, DpGuarantee, PrivacyBudget, RdpCurve, SgmParams,
};
use crate::error::{Error, Result};

/// A mechanism that touched sensitive data once.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mechanism {
    /// One DP-SGD step: subsampled Gaussian at rate `q`, noise multiplier `sigma`.
    Sgm { q: f64, sigma: f64 },
    /// The one-shot noisy semantic-distribution release.
    SemanticQuery { sigma2: f64 },
}

impl Mechanism {
    pub fn tag(&self) -> &'static str {
        match self {
            Mechanism::Sgm { .. } => "sgm",
            Mechanism::SemanticQuery { .. } => "semantic_query",
        }
    }

    fn curve(&self, orders: &[f64]) -> Result<RdpCurve> {
        match *self {
            Mechanism::Sgm { q, sigma } => sgm_curve(orders, &SgmParams::single(q, sigma)?),
            Mechanism::SemanticQuery { sigma2 } => gaussian_query_curve(orders, sigma2),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BudgetLedger {
    orders: Vec<f64>,
    delta: f64,
    target: Option<f64>,
    charges: Vec<Mechanism>,
    total: RdpCurve,
    /// Distinct mechanisms with their per-use curve and use count. The total
    /// is `Σ count·curve`, so `T` identical steps cost exactly what a single
    /// `T`-step composition costs.
    groups: Vec<(Mechanism, RdpCurve, u64)>,
}

impl BudgetLedger {
    /// A ledger without a hard stop; it only projects.
    pub fn new(orders: &[f64], delta: f64) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::InvalidParameter(format!("delta={delta} outside (0, 1)")));
        }
        Ok(Self {
            orders: orders.to_vec(),
            delta,
            target: None,
            charges: Vec::new(),
            total: RdpCurve::zeros(orders)?,
            groups: Vec::new(),
        })
    }

    /// A ledger that refuses any charge pushing ε past `budget.epsilon()`.
    pub fn with_budget(orders: &[f64], budget: &PrivacyBudget) -> Result<Self> {
        let mut ledger = Self::new(orders, budget.delta())?;
        ledger.target = Some(budget.epsilon());
        Ok(ledger)
    }

    /// Installs a hard stop on an existing ledger, e.g. one rebuilt from CSV.
    pub fn with_target(mut self, budget: &PrivacyBudget) -> Result<Self> {
        if budget.delta() != self.delta {
            return Err(Error::InvalidParameter(format!(
                "budget delta {} differs from ledger delta {}",
                budget.delta(),
                self.delta
            )));
        }
        let spent = self.projection()?.epsilon;
        if spent > budget.epsilon() {
            return Err(Error::BudgetExceeded {
                projected: spent,
                target: budget.epsilon(),
            });
        }
        self.target = Some(budget.epsilon());
        Ok(self)
    }

    pub fn orders(&self) -> &[f64] {
        &self.orders
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn target(&self) -> Option<f64> {
        self.target
    }

    pub fn charges(&self) -> &[Mechanism] {
        &self.charges
    }

    pub fn len(&self) -> usize {
        self.charges.len()
    }

    pub fn is_empty(&self) -> bool {
        self.charges.is_empty()
    }

    pub fn curve(&self) -> &RdpCurve {
        &self.total
    }

    pub fn query_charges(&self) -> usize {
        self.charges
            .iter()
            .filter(|m| matches!(m, Mechanism::SemanticQuery { .. }))
            .count()
    }

    fn total_of(&self, groups: &[(Mechanism, RdpCurve, u64)]) -> Result<RdpCurve> {
        let mut total = RdpCurve::zeros(&self.orders)?;
        for (_, curve, count) in groups {
            total.add_assign(&curve.scale(*count as f64))?;
        }
        Ok(total)
    }

    /// Appends a charge. Fails, leaving the ledger untouched, when the
    /// projected ε would exceed the target or a second semantic query is
    /// charged.
    pub fn charge(&mut self, mechanism: Mechanism) -> Result<DpGuarantee> {
        if matches!(mechanism, Mechanism::SemanticQuery { .. }) && self.query_charges() > 0 {
            return Err(Error::DuplicateQueryCharge);
        }
        let mut groups = self.groups.clone();
        match groups.iter_mut().find(|(m, _, _)| *m == mechanism) {
            Some(g) => g.2 += 1,
            None => groups.push((mechanism, mechanism.curve(&self.orders)?, 1)),
        }
        let total = self.total_of(&groups)?;
        let projected = rdp_to_dp(&total, self.delta)?;
        if let Some(target) = self.target {
            if projected.epsilon > target {
                return Err(Error::BudgetExceeded {
                    projected: projected.epsilon,
                    target,
                });
            }
        }
        self.total = total;
        self.groups = groups;
        self.charges.push(mechanism);
        Ok(projected)
    }

    /// Projected (ε, δ). An empty ledger has spent nothing and reports ε = 0.
    pub fn projection(&self) -> Result<DpGuarantee> {
        if self.charges.is_empty() {
            return Ok(DpGuarantee {
                epsilon: 0.0,
                delta: self.delta,
                order: self.orders[0],
            });
        }
        rdp_to_dp(&self.total, self.delta)
    }

    /// CSV audit trail: `index,mechanism,q,sigma,sigma2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,mechanism,q,sigma,sigma2\n");
        for (i, m) in self.charges.iter().enumerate() {
            let _ = match *m {
                Mechanism::Sgm { q, sigma } => writeln!(out, "{i},sgm,{q:e},{sigma:e},"),
                Mechanism::SemanticQuery { sigma2 } => {
                    writeln!(out, "{i},semantic_query,,,{sigma2:e}")
                }
            };
        }
        out
    }

    /// Rebuilds a ledger (without target) from [`to_csv`](Self::to_csv) output.
    pub fn from_csv(text: &str, orders: &[f64], delta: f64) -> Result<Self> {
        let mut ledger = Self::new(orders, delta)?;
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 5 {
                return Err(Error::Corrupt(format!("ledger line {}: {line}", n + 1)));
            }
            let num = |s: &str| {
                f64::from_str(s).map_err(|_| Error::Corrupt(format!("ledger line {}: bad number {s}", n + 1)))
            };
            let m = match fields[1] {
                "sgm" => Mechanism::Sgm {
                    q: num(fields[2])?,
                    sigma: num(fields[3])?,
                },
                "semantic_query" => Mechanism::SemanticQuery {
                    sigma2: num(fields[4])?,
                },
                other => return Err(Error::Corrupt(format!("unknown mechanism {other}"))),
            };
            ledger.charge(m)?;
        }
        Ok(ledger)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accountant::{compose_rdp, default_orders};

    #[test]
    fn empty_ledger_reports_zero() {
        let ledger = BudgetLedger::new(&default_orders(), 1e-5).unwrap();
        assert_eq!(ledger.projection().unwrap().epsilon, 0.0);
    }

    #[test]
    fn projection_matches_direct_composition() {
        let orders = default_orders();
        let mut ledger = BudgetLedger::new(&orders, 1e-5).unwrap();
        ledger.charge(Mechanism::SemanticQuery { sigma2: 484.0 }).unwrap();
        for _ in 0..300 {
            ledger.charge(Mechanism::Sgm { q: 0.02, sigma: 1.3 }).unwrap();
        }
        let direct = compose_rdp(
            &orders,
            &[
                sgm_curve(&orders, &SgmParams::new(0.02, 1.3, 300).unwrap()).unwrap(),
                gaussian_query_curve(&orders, 484.0).unwrap(),
            ],
        )
        .unwrap();
        let want = rdp_to_dp(&direct, 1e-5).unwrap().epsilon;
        assert!((ledger.projection().unwrap().epsilon - want).abs() < 1e-9);
        assert_eq!(ledger.len(), 301);
    }

    #[test]
    fn projection_is_monotone() {
        let mut ledger = BudgetLedger::new(&default_orders(), 1e-5).unwrap();
        let mut last = ledger.projection().unwrap().epsilon;
        for i in 0..50 {
            let eps = ledger
                .charge(Mechanism::Sgm { q: 0.01 * (1 + i % 3) as f64, sigma: 1.0 })
                .unwrap()
                .epsilon;
            assert!(eps >= last);
            last = eps;
        }
    }

    #[test]
    fn second_query_charge_is_rejected() {
        let mut ledger = BudgetLedger::new(&default_orders(), 1e-5).unwrap();
        ledger.charge(Mechanism::SemanticQuery { sigma2: 10.0 }).unwrap();
        assert!(matches!(
            ledger.charge(Mechanism::SemanticQuery { sigma2: 10.0 }),
            Err(Error::DuplicateQueryCharge)
        ));
        assert_eq!(ledger.len(), 1);
    }

    #[test]
    fn hard_stop_leaves_ledger_unchanged() {
        let budget = PrivacyBudget::new(1.0, 1e-5).unwrap();
        let mut ledger = BudgetLedger::with_budget(&default_orders(), &budget).unwrap();
        let mut accepted = 0;
        let err = loop {
            match ledger.charge(Mechanism::Sgm { q: 0.5, sigma: 1.0 }) {
                Ok(_) => accepted += 1,
                Err(e) => break e,
            }
        };
        assert!(matches!(err, Error::BudgetExceeded { .. }));
        assert_eq!(ledger.len(), accepted);
        assert!(ledger.projection().unwrap().epsilon <= 1.0);
    }

    #[test]
    fn csv_round_trip() {
        let orders = default_orders();
        let mut ledger = BudgetLedger::new(&orders, 1e-5).unwrap();
        ledger.charge(Mechanism::SemanticQuery { sigma2: 484.0 }).unwrap();
        ledger.charge(Mechanism::Sgm { q: 0.1, sigma: 0.9 }).unwrap();
        let back = BudgetLedger::from_csv(&ledger.to_csv(), &orders, 1e-5).unwrap();
        assert_eq!(back.charges(), ledger.charges());
        assert_eq!(back.projection().unwrap(), ledger.projection().unwrap());
    }
}
