//! Closed-form forward noising and the ε-prediction training loss.

use crate::error::{Error, Result};
use crate::rng::{randn, Rng};
use crate::scalar::Scalar;
use crate::schedule::{extract, ScheduleTable};
use crate::tensor::Tensor;
use crate::unet::NoisePredictor;

/// A noise schedule together with the operations defined over it. The
/// DDPM and DDIM samplers add further methods in their own modules.
#[derive(Debug, Clone)]
pub struct Diffusion {
    schedule: ScheduleTable,
}

pub(crate) fn same_shape<S: Scalar>(op: &'static str, a: &Tensor<S>, b: &Tensor<S>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

pub(crate) fn batch_matches<S: Scalar>(x: &Tensor<S>, t: &[usize]) -> Result<()> {
    if x.rank() == 0 || x.shape()[0] != t.len() {
        return Err(Error::invalid(format!(
            "{} timesteps for a batch of shape {:?}",
            t.len(),
            x.shape()
        )));
    }
    Ok(())
}

impl Diffusion {
    pub fn linear(timesteps: usize) -> Result<Self> {
        Ok(Self::new(ScheduleTable::linear(timesteps)?))
    }

    pub fn new(schedule: ScheduleTable) -> Self {
        Diffusion { schedule }
    }

    pub fn schedule(&self) -> &ScheduleTable {
        &self.schedule
    }

    pub fn timesteps(&self) -> usize {
        self.schedule.timesteps
    }

    pub(crate) fn coef<S: Scalar>(&self, column: &[f64], t: &[usize], like: &Tensor<S>) -> Result<Tensor<S>> {
        extract(column, t, like.rank())
    }

    /// `x_t = √ᾱ_t · x0 + √(1−ᾱ_t) · noise`.
    pub fn q_sample<S: Scalar>(&self, x0: &Tensor<S>, t: &[usize], noise: &Tensor<S>) -> Result<Tensor<S>> {
        same_shape("q_sample", x0, noise)?;
        batch_matches(x0, t)?;
        let signal = self.coef(&self.schedule.sqrt_alphas_cumprod, t, x0)?;
        let sigma = self.coef(&self.schedule.sqrt_one_minus_alphas_cumprod, t, x0)?;
        x0.mul(&signal)?.add(&noise.mul(&sigma)?)
    }

    /// Inverts [`Self::q_sample`] given the noise: `x0 = x_t/√ᾱ_t − √(1/ᾱ_t − 1)·ε`.
    /// The result is not clamped.
    pub fn predict_x0_from_noise<S: Scalar>(
        &self,
        xt: &Tensor<S>,
        t: &[usize],
        eps: &Tensor<S>,
    ) -> Result<Tensor<S>> {
        same_shape("predict_x0_from_noise", xt, eps)?;
        batch_matches(xt, t)?;
        let recip = self.coef(&self.schedule.sqrt_recip_alphas_cumprod, t, xt)?;
        let recipm1 = self.coef(&self.schedule.sqrt_recipm1_alphas_cumprod, t, xt)?;
        xt.mul(&recip)?.sub(&eps.mul(&recipm1)?)
    }

    /// Uniform training timesteps in `[0, T)`.
    pub fn sample_timesteps(&self, rng: &mut Rng, batch: usize) -> Vec<usize> {
        (0..batch).map(|_| rng.index(self.timesteps())).collect()
    }

    /// Draws ε from `rng`, noises `x0` to `x_t` and returns `mean((ε − ε̂)²)`.
    pub fn train_loss<S: Scalar, M: NoisePredictor<S> + ?Sized>(
        &self,
        model: &M,
        x0: &Tensor<S>,
        t: &[usize],
        rng: &mut Rng,
        labels: Option<&[usize]>,
    ) -> Result<Tensor<S>> {
        if labels.is_some() && model.null_label().is_none() {
            return Err(Error::Conditioning(
                "labels were given to an unconditional model".into(),
            ));
        }
        let noise = randn::<S>(rng, x0.shape());
        let xt = self.q_sample(x0, t, &noise)?;
        let predicted = model.predict(&xt, t, labels)?;
        predicted.mse(&noise)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Zero;
    impl NoisePredictor<f64> for Zero {
        fn predict(&self, xt: &Tensor<f64>, _: &[usize], _: Option<&[usize]>) -> Result<Tensor<f64>> {
            Ok(Tensor::zeros(xt.shape()))
        }
    }

    fn toy() -> Diffusion {
        Diffusion::new(ScheduleTable::from_betas(vec![0.1, 0.2, 0.3]).unwrap())
    }

    #[test]
    fn zero_noise_scales_signal() {
        let d = Diffusion::linear(300).unwrap();
        let x0 = Tensor::<f64>::new(&[2, 1, 1, 2], vec![0.5, -1.0, 1.0, 0.25]).unwrap();
        let zero = Tensor::zeros(x0.shape());
        let xt = d.q_sample(&x0, &[10, 200], &zero).unwrap().to_vec();
        let s = &d.schedule().sqrt_alphas_cumprod;
        assert_eq!(xt, vec![0.5 * s[10], -1.0 * s[10], 1.0 * s[200], 0.25 * s[200]]);
    }

    #[test]
    fn hand_evaluated_sample() {
        // ᾱ_1 = 0.72 on the toy table
        let x0 = Tensor::<f64>::new(&[1, 1], vec![1.0]).unwrap();
        let noise = Tensor::<f64>::new(&[1, 1], vec![1.0]).unwrap();
        let xt = toy().q_sample(&x0, &[1], &noise).unwrap().item();
        assert!((xt - 1.377678).abs() < 1e-5);
    }

    #[test]
    fn x0_from_zero_noise() {
        let d = toy();
        let xt = Tensor::<f64>::new(&[1, 2], vec![0.3, -0.6]).unwrap();
        let x0 = d.predict_x0_from_noise(&xt, &[2], &Tensor::zeros(&[1, 2])).unwrap();
        for (got, v) in x0.to_vec().iter().zip([0.3, -0.6]) {
            assert!((got - v / 0.504f64.sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn shape_errors() {
        let d = toy();
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 4]);
        assert!(d.q_sample(&a, &[0, 1], &b).is_err());
        assert!(d.q_sample(&a, &[0], &a).is_err());
        assert!(d.predict_x0_from_noise(&a, &[0, 1], &b).is_err());
        assert!(d.q_sample(&a, &[0, 3], &a).is_err());
    }

    #[test]
    fn zero_predictor_loss_is_mean_square_noise() {
        let d = Diffusion::linear(300).unwrap();
        let x0 = Tensor::<f64>::zeros(&[64, 1, 8, 8]);
        let t = d.sample_timesteps(&mut Rng::seed_from_u64(1), 64);
        let loss = d.train_loss(&Zero, &x0, &t, &mut Rng::seed_from_u64(2), None).unwrap();
        // E[ε²] = 1 with standard deviation √2/√4096 ≈ 0.022
        assert!((loss.item() - 1.0).abs() < 0.1, "loss {}", loss.item());
    }

    #[test]
    fn labels_on_unconditional_model_are_rejected() {
        let d = toy();
        let x0 = Tensor::<f64>::zeros(&[1, 1]);
        let err = d.train_loss(&Zero, &x0, &[0], &mut Rng::seed_from_u64(0), Some(&[1]));
        assert!(matches!(err, Err(Error::Conditioning(_))));
    }
}
