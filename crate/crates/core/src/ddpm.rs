//! Stochastic ancestral sampling: the posterior `q(x_{t−1} | x_t, x_0)`,
//! single reverse steps and the full T-step loop.

use crate::diffusion::{batch_matches, same_shape, Diffusion};
use crate::error::Result;
use crate::rng::{randn, Rng};
use crate::scalar::Scalar;
use crate::tensor::{no_grad, Tensor};
use crate::unet::{predict_noise, Conditioning, NoisePredictor};

#[derive(Debug, Clone)]
pub struct PosteriorMoments<S: Scalar> {
    pub mean: Tensor<S>,
    pub variance: Tensor<S>,
    pub log_variance: Tensor<S>,
}

/// Batch geometry of a sampling run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SampleShape {
    pub batch: usize,
    pub channels: usize,
    pub image_size: usize,
}

impl SampleShape {
    pub fn dims(&self) -> [usize; 4] {
        [self.batch, self.channels, self.image_size, self.image_size]
    }
}

/// Frames recorded during sampling, oldest first. The last frame is the
/// final sample.
#[derive(Debug, Clone)]
pub struct Trajectory<S: Scalar> {
    pub frames: Vec<Tensor<S>>,
    /// Number of reverse steps completed when each frame was taken.
    pub steps: Vec<usize>,
}

impl<S: Scalar> Trajectory<S> {
    pub fn final_sample(&self) -> &Tensor<S> {
        self.frames.last().expect("trajectory always holds the final sample")
    }
}

/// Records the start frame and every `every`-th step; the final frame is
/// always kept. `every == 0` keeps only the final frame.
pub(crate) struct FrameRecorder<S: Scalar> {
    every: usize,
    total: usize,
    trajectory: Trajectory<S>,
}

impl<S: Scalar> FrameRecorder<S> {
    pub(crate) fn new(every: usize, total: usize, start: &Tensor<S>) -> Self {
        let mut rec = FrameRecorder {
            every,
            total,
            trajectory: Trajectory {
                frames: Vec::new(),
                steps: Vec::new(),
            },
        };
        if every > 0 && total > 0 {
            rec.push(0, start);
        }
        rec
    }

    fn push(&mut self, step: usize, x: &Tensor<S>) {
        self.trajectory.frames.push(x.clone());
        self.trajectory.steps.push(step);
    }

    pub(crate) fn observe(&mut self, step: usize, x: &Tensor<S>) {
        if step == self.total || (self.every > 0 && step % self.every == 0) {
            self.push(step, x);
        }
    }

    pub(crate) fn finish(mut self, last: &Tensor<S>) -> Trajectory<S> {
        if self.trajectory.steps.last() != Some(&self.total) {
            self.push(self.total, last);
        }
        self.trajectory
    }
}

impl Diffusion {
    /// Mean `coef1·x0 + coef2·x_t` plus the tabulated variance and clipped
    /// log-variance at `t`.
    pub fn q_posterior<S: Scalar>(
        &self,
        x0: &Tensor<S>,
        xt: &Tensor<S>,
        t: &[usize],
    ) -> Result<PosteriorMoments<S>> {
        same_shape("q_posterior", x0, xt)?;
        batch_matches(xt, t)?;
        let s = self.schedule();
        let c1 = self.coef(&s.posterior_mean_coef1, t, xt)?;
        let c2 = self.coef(&s.posterior_mean_coef2, t, xt)?;
        let mean = x0.mul(&c1)?.add(&xt.mul(&c2)?)?;
        let ones = Tensor::<S>::full(xt.shape(), S::one());
        let variance = ones.mul(&self.coef(&s.posterior_variance, t, xt)?)?;
        let log_variance = ones.mul(&self.coef(&s.posterior_log_variance_clipped, t, xt)?)?;
        Ok(PosteriorMoments {
            mean,
            variance,
            log_variance,
        })
    }

    /// Posterior moments with `x0` estimated from the model's noise
    /// prediction and clamped to `[−1, 1]`.
    pub fn p_mean_variance<S: Scalar, M: NoisePredictor<S> + ?Sized>(
        &self,
        model: &M,
        xt: &Tensor<S>,
        t: &[usize],
        cond: &Conditioning,
    ) -> Result<PosteriorMoments<S>> {
        no_grad(|| {
            let eps = predict_noise(model, xt, t, cond)?;
            let x0 = self
                .predict_x0_from_noise(xt, t, &eps)?
                .clamp(-S::one(), S::one());
            self.q_posterior(&x0, xt, t)
        })
    }

    /// One reverse step `x_{t−1} = μ + mask·exp(½·log σ²)·z`. The normal
    /// draw is taken for every row, but rows with `t == 0` return the mean.
    pub fn p_sample<S: Scalar, M: NoisePredictor<S> + ?Sized>(
        &self,
        model: &M,
        xt: &Tensor<S>,
        t: &[usize],
        rng: &mut Rng,
        cond: &Conditioning,
    ) -> Result<Tensor<S>> {
        let moments = self.p_mean_variance(model, xt, t, cond)?;
        let z = randn::<S>(rng, xt.shape());
        let row = xt.numel() / t.len();
        let mean = moments.mean.data();
        let logvar = moments.log_variance.data();
        let z = z.data();
        let half = S::of(0.5);
        let out = (0..xt.numel())
            .map(|i| {
                if t[i / row] == 0 {
                    mean[i]
                } else {
                    mean[i] + (half * logvar[i]).exp() * z[i]
                }
            })
            .collect();
        Tensor::new(xt.shape(), out)
    }

    /// Full ancestral sampling from `x_T ~ N(0, I)` through `t = T−1 … 0`.
    pub fn sample_loop<S: Scalar, M: NoisePredictor<S> + ?Sized>(
        &self,
        model: &M,
        shape: SampleShape,
        rng: &mut Rng,
        cond: &Conditioning,
        record_every: usize,
    ) -> Result<Trajectory<S>> {
        let total = self.timesteps();
        let mut x = randn::<S>(rng, &shape.dims());
        let mut recorder = FrameRecorder::new(record_every, total, &x);
        for (done, step) in (0..total).rev().enumerate() {
            let t = vec![step; shape.batch];
            x = self.p_sample(model, &x, &t, rng, cond)?;
            recorder.observe(done + 1, &x);
        }
        Ok(recorder.finish(&x))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleTable;
    use crate::unet::GuidanceConfig;

    struct Constant(f64);
    impl NoisePredictor<f64> for Constant {
        fn predict(&self, xt: &Tensor<f64>, _: &[usize], _: Option<&[usize]>) -> Result<Tensor<f64>> {
            Ok(Tensor::full(xt.shape(), self.0))
        }
        fn null_label(&self) -> Option<usize> {
            Some(10)
        }
    }

    fn toy() -> Diffusion {
        Diffusion::new(ScheduleTable::from_betas(vec![0.1, 0.2, 0.3]).unwrap())
    }

    fn scalar(v: f64) -> Tensor<f64> {
        Tensor::new(&[1, 1], vec![v]).unwrap()
    }

    #[test]
    fn posterior_of_zero_inputs() {
        let d = toy();
        let m = d.q_posterior(&scalar(0.0), &scalar(0.0), &[2]).unwrap();
        assert_eq!(m.mean.item(), 0.0);
        assert_eq!(m.variance.item(), d.schedule().posterior_variance[2]);
    }

    #[test]
    fn posterior_mean_on_toy_table() {
        let m = toy().q_posterior(&scalar(1.0), &scalar(2.0), &[1]).unwrap();
        assert!((m.mean.item() - 1.316507).abs() < 1e-5);
    }

    #[test]
    fn log_variance_matches_variance() {
        let d = Diffusion::linear(50).unwrap();
        for t in 0..50 {
            let m = d.q_posterior(&scalar(0.0), &scalar(0.0), &[t]).unwrap();
            let floor = m.variance.item().max(1e-20);
            assert!((m.log_variance.item().exp() - floor).abs() <= 1e-12 * floor.max(1e-20));
            if t > 0 {
                let sd = (0.5 * m.log_variance.item()).exp();
                assert!((sd - m.variance.item().sqrt()).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn zero_predictor_mean_follows_clamped_estimate() {
        let d = toy();
        let xt = Tensor::new(&[2, 1], vec![0.5, 30.0]).unwrap();
        let m = d
            .p_mean_variance(&Constant(0.0), &xt, &[1, 1], &Conditioning::unconditional())
            .unwrap();
        let s = d.schedule();
        let x0 = [0.5 / 0.72f64.sqrt(), 1.0];
        let got = m.mean.to_vec();
        for i in 0..2 {
            let want = s.posterior_mean_coef1[1] * x0[i] + s.posterior_mean_coef2[1] * [0.5, 30.0][i];
            assert!((got[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn huge_inputs_saturate_the_x0_estimate() {
        let d = toy();
        let xt = Tensor::new(&[2, 1], vec![1e6, -1e6]).unwrap();
        let eps = Tensor::zeros(&[2, 1]);
        let x0 = d.predict_x0_from_noise(&xt, &[2, 2], &eps).unwrap().clamp(-1.0, 1.0);
        assert_eq!(x0.to_vec(), vec![1.0, -1.0]);
    }

    #[test]
    fn zero_weight_guidance_equals_conditional_call() {
        let d = toy();
        let xt = scalar(0.3);
        let a = d
            .p_mean_variance(&Constant(0.2), &xt, &[2], &Conditioning::labels(vec![4]))
            .unwrap();
        let g = GuidanceConfig { weight: 0.0, null_label: 10 };
        let b = d
            .p_mean_variance(&Constant(0.2), &xt, &[2], &Conditioning::guided(vec![4], g))
            .unwrap();
        assert_eq!(a.mean.to_vec(), b.mean.to_vec());
    }

    #[test]
    fn mixed_batch_mask() {
        let d = Diffusion::linear(50).unwrap();
        let xt = Tensor::new(&[3, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]).unwrap();
        let t = [0, 7, 0];
        let cond = Conditioning::unconditional();
        let mean = d.p_mean_variance(&Constant(0.1), &xt, &t, &cond).unwrap().mean.to_vec();
        let out = d
            .p_sample(&Constant(0.1), &xt, &t, &mut Rng::seed_from_u64(5), &cond)
            .unwrap()
            .to_vec();
        assert_eq!(&out[0..2], &mean[0..2]);
        assert_eq!(&out[4..6], &mean[4..6]);
        assert_ne!(&out[2..4], &mean[2..4]);
    }

    #[test]
    fn recorder_stride() {
        let d = Diffusion::linear(300).unwrap();
        let shape = SampleShape { batch: 1, channels: 1, image_size: 2 };
        let traj = d
            .sample_loop(&Constant(0.0), shape, &mut Rng::seed_from_u64(0), &Conditioning::default(), 30)
            .unwrap();
        assert_eq!(traj.frames.len(), 11);
        assert_eq!(traj.steps[0], 0);
        assert_eq!(*traj.steps.last().unwrap(), 300);
        let only_final = d
            .sample_loop(&Constant(0.0), shape, &mut Rng::seed_from_u64(0), &Conditioning::default(), 0)
            .unwrap();
        assert_eq!(only_final.steps, vec![300]);
    }
}
