use crate::error::{invalid, Result};

/// Noise levels `β_1..β_T` and their running products `ᾱ_t = Π_{s≤t}(1 − β_s)`.
/// Steps are 1-based throughout.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionSchedule {
    betas: Vec<f64>,
    alpha_bars: Vec<f64>,
}

pub const DEFAULT_DIFFUSION_STEPS: usize = 100;
pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 2e-2;

impl DiffusionSchedule {
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(invalid("schedule needs >= 1 step"));
        }
        if betas.iter().any(|b| !(*b > 0.0 && *b < 1.0)) {
            return Err(invalid("every beta must lie in (0, 1)"));
        }
        let mut alpha_bars = Vec::with_capacity(betas.len());
        let mut running = 1.0;
        for b in &betas {
            running *= 1.0 - b;
            alpha_bars.push(running);
        }
        if !(running > 0.0) {
            return Err(invalid("alpha_bar underflows to zero"));
        }
        Ok(Self { betas, alpha_bars })
    }

    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bars
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    /// `ᾱ_t`; `t = 0` is the clean data with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bars[t - 1]
        }
    }

    pub(crate) fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(invalid(format!("step {t} outside 1..={}", self.steps())));
        }
        Ok(())
    }
}

impl Default for DiffusionSchedule {
    fn default() -> Self {
        make_schedule(DEFAULT_DIFFUSION_STEPS, DEFAULT_BETA_START, DEFAULT_BETA_END)
            .expect("default schedule is valid")
    }
}

/// Linear β from `beta_start` to `beta_end` over `t` steps.
pub fn make_schedule(t: usize, beta_start: f64, beta_end: f64) -> Result<DiffusionSchedule> {
    if t == 0 {
        return Err(invalid("schedule needs >= 1 step"));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(invalid(format!(
            "need 0 < beta_start <= beta_end < 1, got {beta_start}, {beta_end}"
        )));
    }
    let betas = (0..t)
        .map(|i| {
            if t == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (t - 1) as f64
            }
        })
        .collect();
    DiffusionSchedule::from_betas(betas)
}

/// `x_t = √ᾱ_t·x0 + √(1 − ᾱ_t)·e`.
pub fn forward_noise(x0: &[f64], t: usize, e: &[f64], sched: &DiffusionSchedule) -> Result<Vec<f64>> {
    sched.check_step(t)?;
    if x0.len() != e.len() {
        return Err(crate::Error::DimensionMismatch {
            expected: x0.len(),
            actual: e.len(),
        });
    }
    let ab = sched.alpha_bar(t);
    let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(x0.iter().zip(e).map(|(x, n)| a * x + s * n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_step() {
        let s = make_schedule(1, 0.1, 0.2).unwrap();
        assert_eq!(s.alpha_bars(), &[0.9]);
    }

    #[test]
    fn constant_beta_is_geometric() {
        let s = make_schedule(20, 0.05, 0.05).unwrap();
        for t in 1..=20 {
            assert!((s.alpha_bar(t) - 0.95f64.powi(t as i32)).abs() < 1e-14);
        }
    }

    #[test]
    fn recurrence_is_exact_and_decreasing() {
        let s = DiffusionSchedule::default();
        for t in 2..=s.steps() {
            assert_eq!(s.alpha_bar(t), s.alpha_bar(t - 1) * (1.0 - s.beta(t)));
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
        }
        assert!(s.alpha_bar(s.steps()) > 0.0);
    }

    #[test]
    fn invalid_ranges() {
        assert!(make_schedule(0, 0.1, 0.2).is_err());
        assert!(make_schedule(5, 0.3, 0.2).is_err());
        assert!(make_schedule(5, 0.0, 0.2).is_err());
        assert!(make_schedule(5, 0.1, 1.0).is_err());
    }

    #[test]
    fn forward_noise_edges() {
        let s = make_schedule(10, 1e-4, 2e-2).unwrap();
        let x = forward_noise(&[0.0, 0.0], 4, &[1.0, -2.0], &s).unwrap();
        let sd = (1.0 - s.alpha_bar(4)).sqrt();
        assert_eq!(x, vec![sd, -2.0 * sd]);
        assert!(forward_noise(&[0.0], 0, &[0.0], &s).is_err());
        assert!(forward_noise(&[0.0], 11, &[0.0], &s).is_err());
        let tiny = make_schedule(1, 1e-12, 1e-12).unwrap();
        let x = forward_noise(&[3.0], 1, &[1.0], &tiny).unwrap();
        assert!((x[0] - 3.0).abs() < 1e-5);
    }
}
