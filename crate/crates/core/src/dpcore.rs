//! The two sanitizers: per-example clipping with one noisy aggregate
//! (DP-SGD), and Gaussian perturbation of a frequency vector.

use crate::error::{invalid, Error, Result};
use crate::noise::NoiseSource;

/// ℓ2 clipping bound applied to every per-example gradient.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipConfig {
    clip_norm: f64,
}

impl ClipConfig {
    pub fn new(clip_norm: f64) -> Result<Self> {
        if !(clip_norm > 0.0) || !clip_norm.is_finite() {
            return Err(invalid(format!("clip norm C={clip_norm} must be finite and > 0")));
        }
        Ok(Self { clip_norm })
    }

    pub fn clip_norm(&self) -> f64 {
        self.clip_norm
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `min{1, C/‖g‖}·g`. A zero vector is its own image.
///
/// After scaling, a norm that rounds to just above `C` is shrunk by whole
/// ulps until it does not, so `‖clip(g)‖ ≤ C` holds exactly in floating
/// point.
pub fn clip_vector(g: &[f64], cfg: &ClipConfig) -> Result<Vec<f64>> {
    if g.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("gradient"));
    }
    let norm = l2_norm(g);
    let c = cfg.clip_norm;
    if norm <= c {
        return Ok(g.to_vec());
    }
    let mut scale = c / norm;
    let mut out: Vec<f64> = g.iter().map(|x| x * scale).collect();
    while l2_norm(&out) > c {
        scale = f64::from_bits(scale.to_bits() - 1);
        out = g.iter().map(|x| x * scale).collect();
    }
    Ok(out)
}

/// Sum of clipped per-example gradients. Empty input yields `None`.
fn clipped_sum(per_example: &[Vec<f64>], cfg: &ClipConfig) -> Result<Option<Vec<f64>>> {
    let Some(first) = per_example.first() else {
        return Ok(None);
    };
    let dim = first.len();
    let mut sum = vec![0.0; dim];
    for g in per_example {
        if g.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: g.len(),
            });
        }
        for (s, x) in sum.iter_mut().zip(clip_vector(g, cfg)?) {
            *s += x;
        }
    }
    Ok(Some(sum))
}

/// `(1/b)·Σ clip(g_i) + (σ1·C/b)·e` with `b = per_example.len()` and
/// `e ~ N(0, I)`.
pub fn sanitize_batch(
    per_example: &[Vec<f64>],
    cfg: &ClipConfig,
    sigma1: f64,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>> {
    if per_example.is_empty() {
        return Err(Error::Empty("batch"));
    }
    let dim = per_example[0].len();
    sanitize_with_normalizer(per_example, dim, per_example.len() as f64, cfg, sigma1, noise)
}

/// Like [`sanitize_batch`] but divides by a fixed `normalizer` (the expected
/// Poisson batch size) instead of the realized batch size, which keeps the
/// sensitivity at `C/normalizer`. An empty realized batch releases noise only.
pub fn sanitize_with_normalizer(
    per_example: &[Vec<f64>],
    dim: usize,
    normalizer: f64,
    cfg: &ClipConfig,
    sigma1: f64,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>> {
    if !(normalizer > 0.0) {
        return Err(invalid(format!("batch normalizer {normalizer} must be > 0")));
    }
    if !(sigma1 >= 0.0) || !sigma1.is_finite() {
        return Err(invalid(format!("noise multiplier sigma1={sigma1} must be finite and >= 0")));
    }
    let sum = clipped_sum(per_example, cfg)?.unwrap_or_else(|| vec![0.0; dim]);
    if sum.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: sum.len(),
        });
    }
    let noise_scale = sigma1 * cfg.clip_norm / normalizer;
    let mut out: Vec<f64> = sum.into_iter().map(|s| s / normalizer).collect();
    if sigma1 > 0.0 {
        for o in out.iter_mut() {
            *o += noise_scale * noise.gaussian();
        }
    }
    Ok(out)
}

/// Whether a release must carry real noise. `Testing` additionally admits
/// σ2 = 0 and selection from raw counts; it exists for audits and tests only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PrivacyMode {
    #[default]
    Enforced,
    Testing,
}

/// Adds i.i.d. `N(0, k1·σ2²)` to every coordinate of a frequency vector.
pub fn perturb_histogram(
    counts: &[f64],
    k1: usize,
    sigma2: f64,
    mode: PrivacyMode,
    noise: &mut NoiseSource,
) -> Result<Vec<f64>> {
    if k1 == 0 {
        return Err(invalid("k1 must be >= 1"));
    }
    if counts.iter().any(|c| !(*c >= 0.0) || !c.is_finite()) {
        return Err(invalid("histogram counts must be finite and nonnegative"));
    }
    let zero_allowed = mode == PrivacyMode::Testing && sigma2 == 0.0;
    if !zero_allowed && (!(sigma2 > 0.0) || !sigma2.is_finite()) {
        return Err(invalid(format!("sigma2={sigma2} must be finite and > 0")));
    }
    if zero_allowed {
        return Ok(counts.to_vec());
    }
    let std = (k1 as f64).sqrt() * sigma2;
    Ok(counts.iter().map(|c| c + std * noise.gaussian()).collect())
}
