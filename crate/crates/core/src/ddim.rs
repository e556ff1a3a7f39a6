//! Deterministic skip-step sampling over an evenly spaced subsequence of
//! schedule indices. The variance term is omitted entirely.

use crate::ddpm::{FrameRecorder, SampleShape, Trajectory};
use crate::diffusion::Diffusion;
use crate::error::{Error, Result};
use crate::rng::{randn, Rng};
use crate::scalar::Scalar;
use crate::schedule::extract;
use crate::tensor::{no_grad, Tensor};
use crate::unet::{predict_noise, Conditioning, NoisePredictor};

/// Index pairs visited by the sampler: step `i` maps `seq[i]` to `seq_prev[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DdimPlan {
    pub steps: usize,
    pub seq: Vec<usize>,
    pub seq_prev: Vec<usize>,
}

impl DdimPlan {
    /// `seq[i] = 1 + i·⌊T/S⌋`, `seq_prev = [0, seq[0], …, seq[S−2]]`.
    /// Plans whose last index would reach `T` are rejected.
    pub fn new(timesteps: usize, steps: usize) -> Result<Self> {
        if steps < 1 || steps > timesteps {
            return Err(Error::invalid(format!(
                "DDIM steps must be in [1, {timesteps}], got {steps}"
            )));
        }
        let stride = timesteps / steps;
        let seq: Vec<usize> = (0..steps).map(|i| 1 + i * stride).collect();
        let last = *seq.last().unwrap();
        if last >= timesteps {
            return Err(Error::invalid(format!(
                "DDIM plan with {steps} steps over T={timesteps} would index timestep {last}"
            )));
        }
        let mut seq_prev = vec![0];
        seq_prev.extend_from_slice(&seq[..steps - 1]);
        Ok(DdimPlan { steps, seq, seq_prev })
    }
}

impl Diffusion {
    /// Deterministic update from index `t` to `t_prev < t`:
    /// `x̂0 = clamp((x_t − √(1−ᾱ_t)·ε̂)/√ᾱ_t)`, `x_prev = √ᾱ_prev·x̂0 + √(1−ᾱ_prev)·ε̂`.
    /// Both ᾱ values come straight from the cumulative-product column.
    pub fn ddim_step<S: Scalar, M: NoisePredictor<S> + ?Sized>(
        &self,
        model: &M,
        xt: &Tensor<S>,
        t: usize,
        t_prev: usize,
        cond: &Conditioning,
    ) -> Result<Tensor<S>> {
        if t_prev >= t {
            return Err(Error::invalid(format!(
                "DDIM step must move backwards, got {t} -> {t_prev}"
            )));
        }
        let batch = *xt.shape().first().unwrap_or(&0);
        no_grad(|| {
            let ts = vec![t; batch];
            let eps = predict_noise(model, xt, &ts, cond)?;
            self.ddim_update(xt, t, t_prev, &eps)
        })
    }

    /// The DDIM update for a given noise estimate.
    pub fn ddim_update<S: Scalar>(
        &self,
        xt: &Tensor<S>,
        t: usize,
        t_prev: usize,
        eps: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        let batch = *xt.shape().first().unwrap_or(&0);
        let ac = &self.schedule().alphas_cumprod;
        let column = |idx: usize, f: fn(f64) -> f64| -> Result<Tensor<S>> {
            let values: Vec<f64> = ac.iter().map(|&a| f(a)).collect();
            extract(&values, &vec![idx; batch], xt.rank())
        };
        let sqrt_ac = column(t, f64::sqrt)?;
        let sqrt_one_minus = column(t, |a| (1.0 - a).sqrt())?;
        let sqrt_prev = column(t_prev, f64::sqrt)?;
        let sqrt_one_minus_prev = column(t_prev, |a| (1.0 - a).sqrt())?;

        let x0 = no_grad(|| -> Result<Tensor<S>> {
            let inv = sqrt_ac.map(|v| S::one() / v);
            Ok(xt.sub(&eps.mul(&sqrt_one_minus)?)?.mul(&inv)?.clamp(-S::one(), S::one()))
        })?;
        x0.mul(&sqrt_prev)?.add(&eps.mul(&sqrt_one_minus_prev)?)
    }

    /// Draws `x_T` once, then applies `S` deterministic steps from the end
    /// of the plan back to `(seq[0], seq_prev[0]) = (1, 0)`.
    pub fn ddim_sample_loop<S: Scalar, M: NoisePredictor<S> + ?Sized>(
        &self,
        model: &M,
        shape: SampleShape,
        steps: usize,
        rng: &mut Rng,
        cond: &Conditioning,
        record_every: usize,
    ) -> Result<Trajectory<S>> {
        let plan = DdimPlan::new(self.timesteps(), steps)?;
        let x_t = randn::<S>(rng, &shape.dims());
        self.ddim_sample_from(model, &plan, x_t, cond, record_every)
    }

    /// Runs a plan from a given starting noise.
    pub fn ddim_sample_from<S: Scalar, M: NoisePredictor<S> + ?Sized>(
        &self,
        model: &M,
        plan: &DdimPlan,
        x_t: Tensor<S>,
        cond: &Conditioning,
        record_every: usize,
    ) -> Result<Trajectory<S>> {
        let mut x = x_t;
        let mut recorder = FrameRecorder::new(record_every, plan.steps, &x);
        for (done, i) in (0..plan.steps).rev().enumerate() {
            x = self.ddim_step(model, &x, plan.seq[i], plan.seq_prev[i], cond)?;
            recorder.observe(done + 1, &x);
        }
        Ok(recorder.finish(&x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plan_300_50() {
        let p = DdimPlan::new(300, 50).unwrap();
        assert_eq!(p.seq.len(), 50);
        assert_eq!(&p.seq[..3], &[1, 7, 13]);
        assert_eq!(*p.seq.last().unwrap(), 295);
        assert_eq!(&p.seq_prev[..3], &[0, 1, 7]);
        assert_eq!(*p.seq_prev.last().unwrap(), 289);
    }

    #[test]
    fn plan_300_10() {
        let p = DdimPlan::new(300, 10).unwrap();
        assert_eq!(p.seq, (0..10).map(|i| 1 + 30 * i).collect::<Vec<_>>());
        assert_eq!(p.seq_prev[0], 0);
    }

    #[test]
    fn plan_rejections() {
        assert!(DdimPlan::new(300, 300).is_err());
        assert!(DdimPlan::new(300, 0).is_err());
        assert!(DdimPlan::new(300, 301).is_err());
        assert!(DdimPlan::new(300, 299).is_ok());
    }

    #[test]
    fn plans_are_strictly_increasing() {
        for s in 1..300 {
            if let Ok(p) = DdimPlan::new(300, s) {
                assert!(p.seq.windows(2).all(|w| w[0] < w[1]));
                assert!(p.seq_prev.windows(2).all(|w| w[0] < w[1]));
                assert!(p.seq.iter().all(|&v| v < 300));
            }
        }
    }

    #[test]
    fn order_violation_is_an_error() {
        struct Zero;
        impl NoisePredictor<f32> for Zero {
            fn predict(&self, xt: &Tensor<f32>, _: &[usize], _: Option<&[usize]>) -> Result<Tensor<f32>> {
                Ok(Tensor::zeros(xt.shape()))
            }
        }
        let d = Diffusion::linear(50).unwrap();
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(d.ddim_step(&Zero, &x, 3, 3, &Conditioning::default()).is_err());
        assert!(d.ddim_step(&Zero, &x, 3, 5, &Conditioning::default()).is_err());
    }
}
