use std::f64::consts::PI;

use ndarray::{concatenate, Array2, Axis};

use super::{DiffusionModel, DiffusionSchedule, GenerativeModel};
use crate::error::{invalid, Error, Result};
use crate::nn::{per_example_losses_and_grads, Batch, Loss, Targets};
use crate::noise::NoiseSource;

pub const TIME_FEATURES: usize = 5;
pub const DEFAULT_SAMPLER_STEPS: usize = 50;

/// `[t/T, sin πs, cos πs, sin 2πs, cos 2πs]` with `s = t/T`.
pub fn time_features(t: usize, total: usize) -> [f64; TIME_FEATURES] {
    let s = t as f64 / total as f64;
    [s, (PI * s).sin(), (PI * s).cos(), (2.0 * PI * s).sin(), (2.0 * PI * s).cos()]
}

fn denoiser_input(x: &Array2<f64>, ts: &[usize], total: usize) -> Array2<f64> {
    let mut out = Array2::zeros((x.nrows(), x.ncols() + TIME_FEATURES));
    for (i, &t) in ts.iter().enumerate() {
        let mut row = out.row_mut(i);
        for j in 0..x.ncols() {
            row[j] = x[[i, j]];
        }
        for (k, f) in time_features(t, total).into_iter().enumerate() {
            row[x.ncols() + k] = f;
        }
    }
    out
}

/// Per-example denoising losses and gradients at a fixed `(t, e)` draw.
#[derive(Debug, Clone)]
pub struct DmDraw {
    pub ts: Vec<usize>,
    pub es: Array2<f64>,
    pub losses: Vec<f64>,
    pub grads: Vec<Vec<f64>>,
}

/// Loss `‖e − e_θ(√ᾱ_t·x0 + √(1−ᾱ_t)·e, t, c)‖²` for each row, with its
/// parameter gradient.
pub fn dm_loss_grads_at(
    model: &DiffusionModel,
    x0: &Array2<f64>,
    cond: Option<&Array2<f64>>,
    ts: &[usize],
    es: &Array2<f64>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let batch = dm_batch(model, x0, cond, ts, es)?;
    per_example_losses_and_grads(&model.denoiser, &batch, &Loss::Mse)
}

/// Regression batch for the denoiser at a fixed `(t, e)` draw.
pub(crate) fn dm_batch(
    model: &DiffusionModel,
    x0: &Array2<f64>,
    cond: Option<&Array2<f64>>,
    ts: &[usize],
    es: &Array2<f64>,
) -> Result<Batch> {
    let b = x0.nrows();
    if ts.len() != b || es.dim() != x0.dim() {
        return Err(Error::DimensionMismatch {
            expected: b,
            actual: ts.len(),
        });
    }
    let sched = &model.schedule;
    let mut xt = Array2::zeros(x0.dim());
    for (i, &t) in ts.iter().enumerate() {
        sched.check_step(t)?;
        let ab = sched.alpha_bar(t);
        let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
        for j in 0..x0.ncols() {
            xt[[i, j]] = a * x0[[i, j]] + s * es[[i, j]];
        }
    }
    let batch = Batch::new(
        denoiser_input(&xt, ts, sched.steps()),
        Targets::Regression(es.clone()),
        cond.cloned(),
    )?;
    Ok(batch)
}

/// Draws `t ~ U{1..T}` then `e ~ N(0, I)` for each row in order, and
/// evaluates the denoising loss and gradients.
pub fn dm_per_example_loss_grads(
    model: &GenerativeModel,
    x0: &Array2<f64>,
    labels: Option<&[usize]>,
    noise: &mut NoiseSource,
) -> Result<DmDraw> {
    let dm = model.as_diffusion()?;
    if x0.ncols() != model.data_dim() {
        return Err(Error::DimensionMismatch {
            expected: model.data_dim(),
            actual: x0.ncols(),
        });
    }
    let cond = model.conditioning(labels, x0.nrows())?;
    let (ts, es) = draw_steps(x0.nrows(), x0.ncols(), dm.schedule.steps(), noise);
    let (losses, grads) = dm_loss_grads_at(dm, x0, cond.as_ref(), &ts, &es)?;
    Ok(DmDraw { ts, es, losses, grads })
}

pub(crate) fn draw_steps(rows: usize, d: usize, total: usize, noise: &mut NoiseSource) -> (Vec<usize>, Array2<f64>) {
    let mut ts = Vec::with_capacity(rows);
    let mut es = Array2::zeros((rows, d));
    for i in 0..rows {
        ts.push(noise.uniform_int(1, total));
        for j in 0..d {
            es[[i, j]] = noise.gaussian();
        }
    }
    (ts, es)
}

/// Anything that predicts the noise in `x_t`.
pub trait NoisePredictor {
    fn predict(&self, x: &Array2<f64>, t: usize, cond: Option<&Array2<f64>>) -> Result<Array2<f64>>;
}

impl NoisePredictor for DiffusionModel {
    fn predict(&self, x: &Array2<f64>, t: usize, cond: Option<&Array2<f64>>) -> Result<Array2<f64>> {
        let ts = vec![t; x.nrows()];
        let mut input = denoiser_input(x, &ts, self.schedule.steps());
        if let Some(c) = cond {
            input = concatenate(Axis(1), &[input.view(), c.view()])
                .map_err(|_| invalid("conditioning rows differ from sample rows"))?;
        }
        self.denoiser.forward(&input)
    }
}

/// `steps` evenly spaced timesteps in `1..=T`, ascending, ending at `T`.
pub fn sampler_timesteps(total: usize, steps: usize) -> Result<Vec<usize>> {
    if steps == 0 || steps > total {
        return Err(invalid(format!("sampler steps {steps} outside 1..={total}")));
    }
    Ok((1..=steps).map(|i| (i * total + steps / 2) / steps).map(|t| t.max(1)).collect())
}

/// Deterministic DDIM (η = 0) from `x_T ~ N(0, I)` down to a sample.
pub fn ddim_sample(
    predictor: &impl NoisePredictor,
    schedule: &DiffusionSchedule,
    n: usize,
    d: usize,
    cond: Option<&Array2<f64>>,
    steps: usize,
    noise: &mut NoiseSource,
) -> Result<Array2<f64>> {
    let taus = sampler_timesteps(schedule.steps(), steps)?;
    let mut x = Array2::from_shape_fn((n, d), |_| noise.gaussian());
    if n == 0 {
        return Ok(x);
    }
    for i in (0..taus.len()).rev() {
        let t = taus[i];
        let prev = if i == 0 { 0 } else { taus[i - 1] };
        let e = predictor.predict(&x, t, cond)?;
        if e.dim() != x.dim() {
            return Err(Error::DimensionMismatch {
                expected: d,
                actual: e.ncols(),
            });
        }
        let ab = schedule.alpha_bar(t);
        let ab_prev = schedule.alpha_bar(prev);
        let (sa, sn) = (ab.sqrt(), (1.0 - ab).sqrt());
        let (pa, pn) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
        ndarray::Zip::from(&mut x).and(&e).for_each(|xv, &ev| {
            let x0 = (*xv - sn * ev) / sa;
            *xv = pa * x0 + pn * ev;
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("diffusion sample"));
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::make_schedule;

    #[test]
    fn timesteps_cover_the_schedule() {
        assert_eq!(sampler_timesteps(100, 100).unwrap(), (1..=100).collect::<Vec<_>>());
        let t = sampler_timesteps(100, 50).unwrap();
        assert_eq!(t.len(), 50);
        assert_eq!(*t.last().unwrap(), 100);
        assert!(t.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(sampler_timesteps(10, 1).unwrap(), vec![10]);
        assert!(sampler_timesteps(10, 11).is_err());
    }

    struct SinglePoint(Vec<f64>, DiffusionSchedule);

    impl NoisePredictor for SinglePoint {
        fn predict(&self, x: &Array2<f64>, t: usize, _: Option<&Array2<f64>>) -> Result<Array2<f64>> {
            let ab = self.1.alpha_bar(t);
            Ok(Array2::from_shape_fn(x.dim(), |(i, j)| {
                (x[[i, j]] - ab.sqrt() * self.0[j]) / (1.0 - ab).sqrt()
            }))
        }
    }

    #[test]
    fn exact_denoiser_recovers_point() {
        let s = make_schedule(100, 1e-4, 2e-2).unwrap();
        let oracle = SinglePoint(vec![1.5, -0.25, 3.0], s.clone());
        let mut noise = NoiseSource::new(2, 0);
        let out = ddim_sample(&oracle, &s, 4, 3, None, 100, &mut noise).unwrap();
        for row in out.outer_iter() {
            for (a, b) in row.iter().zip(&oracle.0) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }
}
