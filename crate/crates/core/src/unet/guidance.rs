//! The ε-predictor interface and classifier-free guidance.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Anything that maps `(x_t, t, label)` to a noise estimate shaped like `x_t`.
pub trait NoisePredictor<S: Scalar> {
    fn predict(&self, xt: &Tensor<S>, t: &[usize], labels: Option<&[usize]>) -> Result<Tensor<S>>;

    /// Reserved "no condition" label of a conditional model; `None` for
    /// unconditional models.
    fn null_label(&self) -> Option<usize> {
        None
    }
}

impl<S: Scalar, P: NoisePredictor<S> + ?Sized> NoisePredictor<S> for &P {
    fn predict(&self, xt: &Tensor<S>, t: &[usize], labels: Option<&[usize]>) -> Result<Tensor<S>> {
        (**self).predict(xt, t, labels)
    }

    fn null_label(&self) -> Option<usize> {
        (**self).null_label()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceConfig {
    /// Guidance strength `w ≥ 0`; zero means the plain conditional prediction.
    pub weight: f64,
    pub null_label: usize,
}

/// How a sampler conditions each model call.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Conditioning {
    pub labels: Option<Vec<usize>>,
    pub guidance: Option<GuidanceConfig>,
}

impl Conditioning {
    pub fn unconditional() -> Self {
        Self::default()
    }

    pub fn labels(labels: Vec<usize>) -> Self {
        Conditioning {
            labels: Some(labels),
            guidance: None,
        }
    }

    pub fn guided(labels: Vec<usize>, guidance: GuidanceConfig) -> Self {
        Conditioning {
            labels: Some(labels),
            guidance: Some(guidance),
        }
    }
}

/// `ε̃ = ε_cond + w·(ε_cond − ε_uncond)`, i.e. `(1+w)·ε_cond − w·ε_uncond`.
/// A zero weight makes a single conditional call.
pub fn guided_predict<S: Scalar, M: NoisePredictor<S> + ?Sized>(
    model: &M,
    xt: &Tensor<S>,
    t: &[usize],
    labels: &[usize],
    guidance: &GuidanceConfig,
) -> Result<Tensor<S>> {
    if model.null_label().is_none() {
        return Err(Error::Conditioning(
            "classifier-free guidance needs a conditional model".into(),
        ));
    }
    if !(guidance.weight >= 0.0 && guidance.weight.is_finite()) {
        return Err(Error::Conditioning(format!(
            "guidance weight must be finite and non-negative, got {}",
            guidance.weight
        )));
    }
    let cond = model.predict(xt, t, Some(labels))?;
    if guidance.weight == 0.0 {
        return Ok(cond);
    }
    let null = vec![guidance.null_label; labels.len()];
    let uncond = model.predict(xt, t, Some(&null))?;
    cond.add(&cond.sub(&uncond)?.mul_scalar(S::of(guidance.weight)))
}

/// The noise estimate a sampler uses under `cond`.
pub fn predict_noise<S: Scalar, M: NoisePredictor<S> + ?Sized>(
    model: &M,
    xt: &Tensor<S>,
    t: &[usize],
    cond: &Conditioning,
) -> Result<Tensor<S>> {
    match (&cond.labels, &cond.guidance) {
        (None, Some(_)) => Err(Error::Conditioning("guidance requires labels".into())),
        (None, None) => model.predict(xt, t, None),
        (Some(labels), None) => model.predict(xt, t, Some(labels)),
        (Some(labels), Some(g)) => guided_predict(model, xt, t, labels, g),
    }
}
