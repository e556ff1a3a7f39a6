//! The minimal noise-prediction U-Net.
//!
//! ```text
//! x1 = nr(conv(x))            C,   H
//! x2 = nr(conv_s2(x1))        C,   H/2
//! x3 = nr(conv(x2))           2C,  H/2
//! x4 = nr(conv_s2(x3))        2C,  H/4
//! m  = res(x4) + relu(lin(temb(t)))[+ relu(emb(label))]
//! x5 = nr(conv(up(m + x4)))   2C,  H/2
//! x6 = nr(conv(x5 + x3))      C,   H/2
//! x7 = nr(conv(up(x6 + x2)))  C,   H
//! out = conv(x7 + x1)         io,  H
//! ```
//! `nr` is group-norm then relu. Skips are additive. With a depth
//! extension every block gains one channel-preserving conv stage and the
//! middle gains a second residual block.

mod embedding;
mod guidance;
mod layers;

pub use embedding::{timestep_embedding, timestep_frequencies, MAX_PERIOD};
pub use guidance::{guided_predict, predict_noise, Conditioning, GuidanceConfig, NoisePredictor};
pub use layers::{norm_relu, Conv2d, Embedding, Init, Linear, ResidualBlock, GROUPS, NORM_EPS};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use layers::Named;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UNetConfig {
    /// 1 for grayscale, 3 for RGB.
    pub io_channels: usize,
    /// Base width `C`; must be a positive multiple of 32.
    pub model_channels: usize,
    /// Number of real classes for a conditional model. The embedding table
    /// gets one extra row, the null label, at index `class_count`.
    pub class_count: Option<usize>,
    pub depth_extension: bool,
}

impl UNetConfig {
    pub fn unconditional(io_channels: usize, model_channels: usize) -> Self {
        UNetConfig {
            io_channels,
            model_channels,
            class_count: None,
            depth_extension: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.io_channels == 0 {
            return Err(Error::invalid("io_channels must be positive"));
        }
        if self.model_channels == 0 || self.model_channels % GROUPS != 0 {
            return Err(Error::invalid(format!(
                "model_channels must be a positive multiple of {GROUPS}, got {}",
                self.model_channels
            )));
        }
        if self.class_count == Some(0) {
            return Err(Error::invalid("a conditional model needs at least one class"));
        }
        Ok(())
    }

    pub fn null_label(&self) -> Option<usize> {
        self.class_count
    }
}

/// A block's main conv followed by the optional depth-extension conv.
struct Stage<S> {
    conv: Conv2d<S>,
    extra: Option<Conv2d<S>>,
}

impl<S: Scalar> Stage<S> {
    fn new(init: &mut Init, deep: bool, in_ch: usize, out_ch: usize, stride: usize) -> Self {
        let conv = Conv2d::new(init, in_ch, out_ch, 3, stride);
        let extra = deep.then(|| Conv2d::new(init, out_ch, out_ch, 3, 1));
        Stage { conv, extra }
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let h = norm_relu(&self.conv.forward(x)?)?;
        match &self.extra {
            Some(extra) => norm_relu(&extra.forward(&h)?),
            None => Ok(h),
        }
    }

    fn collect(&self, prefix: &str, out: &mut Named<S>) {
        self.conv.collect(prefix, out);
        if let Some(extra) = &self.extra {
            extra.collect(&format!("{prefix}.extra"), out);
        }
    }
}

pub struct UNet<S> {
    config: UNetConfig,
    down1: Stage<S>,
    down2: Stage<S>,
    down3: Stage<S>,
    down4: Stage<S>,
    middle: ResidualBlock<S>,
    middle2: Option<ResidualBlock<S>>,
    time_emb: Linear<S>,
    class_emb: Option<Embedding<S>>,
    up1: Stage<S>,
    up2: Stage<S>,
    up3: Stage<S>,
    up4_extra: Option<Conv2d<S>>,
    up4: Conv2d<S>,
}

impl<S: Scalar> UNet<S> {
    pub fn new(config: UNetConfig, rng: &mut Rng) -> Result<Self> {
        Self::build(config, &mut Init::Random(rng))
    }

    /// Same architecture with every parameter zero.
    pub fn zeros(config: UNetConfig) -> Result<Self> {
        Self::build(config, &mut Init::Zeros)
    }

    fn build(config: UNetConfig, init: &mut Init) -> Result<Self> {
        config.validate()?;
        let (io, c, deep) = (config.io_channels, config.model_channels, config.depth_extension);
        Ok(UNet {
            config,
            down1: Stage::new(init, deep, io, c, 1),
            down2: Stage::new(init, deep, c, c, 2),
            down3: Stage::new(init, deep, c, 2 * c, 1),
            down4: Stage::new(init, deep, 2 * c, 2 * c, 2),
            middle: ResidualBlock::new(init, 2 * c, 2 * c),
            middle2: deep.then(|| ResidualBlock::new(init, 2 * c, 2 * c)),
            time_emb: Linear::new(init, c, 2 * c),
            class_emb: config.class_count.map(|k| Embedding::new(init, k + 1, 2 * c)),
            up1: Stage::new(init, deep, 2 * c, 2 * c, 1),
            up2: Stage::new(init, deep, 2 * c, c, 1),
            up3: Stage::new(init, deep, c, c, 1),
            up4_extra: deep.then(|| Conv2d::new(init, c, c, 3, 1)),
            up4: Conv2d::new(init, c, io, 3, 1),
        })
    }

    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    /// Parameters under their stable checkpoint names, in a fixed order.
    pub fn named_parameters(&self) -> Vec<(String, Tensor<S>)> {
        let mut out = Vec::new();
        self.down1.collect("down1", &mut out);
        self.down2.collect("down2", &mut out);
        self.down3.collect("down3", &mut out);
        self.down4.collect("down4", &mut out);
        self.middle.collect("middle", &mut out);
        if let Some(m) = &self.middle2 {
            m.collect("middle2", &mut out);
        }
        self.time_emb.collect("time_emb", &mut out);
        if let Some(e) = &self.class_emb {
            e.collect("class_emb", &mut out);
        }
        self.up1.collect("up1", &mut out);
        self.up2.collect("up2", &mut out);
        self.up3.collect("up3", &mut out);
        if let Some(extra) = &self.up4_extra {
            extra.collect("up4.extra", &mut out);
        }
        self.up4.collect("up4", &mut out);
        out
    }

    pub fn parameters(&self) -> Vec<Tensor<S>> {
        self.named_parameters().into_iter().map(|(_, t)| t).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.numel()).sum()
    }

    pub fn zero_grad(&self) {
        self.parameters().iter().for_each(|p| p.zero_grad());
    }

    /// Copies parameter values from `source`, matched by name.
    pub fn load_parameters<'a, T: Scalar>(
        &self,
        source: impl IntoIterator<Item = (&'a str, &'a Tensor<T>)>,
    ) -> Result<()> {
        let source: std::collections::HashMap<&str, &Tensor<T>> = source.into_iter().collect();
        for (name, param) in self.named_parameters() {
            let src = source.get(name.as_str()).ok_or_else(|| Error::MissingTensor(name.clone()))?;
            if src.shape() != param.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_parameters",
                    lhs: param.shape().to_vec(),
                    rhs: src.shape().to_vec(),
                });
            }
            let values = src.data();
            let mut dst = param.data_mut();
            for (d, s) in dst.iter_mut().zip(values.iter()) {
                *d = S::of(s.to_f64_lossy());
            }
        }
        Ok(())
    }

    /// The same network at another precision.
    pub fn cast<T: Scalar>(&self) -> UNet<T> {
        let out = UNet::<T>::zeros(self.config).expect("config already validated");
        let named = self.named_parameters();
        out.load_parameters(named.iter().map(|(n, t)| (n.as_str(), t)))
            .expect("identical architecture");
        out
    }

    fn check_inputs(&self, x: &Tensor<S>, t: &[usize], labels: Option<&[usize]>) -> Result<()> {
        let cfg = &self.config;
        let &[batch, channels, h, w] = x.shape() else {
            return Err(Error::invalid(format!(
                "U-Net input must be (B, C, H, W), got {:?}",
                x.shape()
            )));
        };
        if channels != cfg.io_channels {
            return Err(Error::ShapeMismatch {
                op: "unet input channels",
                lhs: vec![cfg.io_channels],
                rhs: vec![channels],
            });
        }
        if h % 4 != 0 || w % 4 != 0 || h == 0 || w == 0 {
            return Err(Error::invalid(format!(
                "image extents must be positive multiples of 4, got {h}x{w}"
            )));
        }
        if t.len() != batch {
            return Err(Error::invalid(format!("{} timesteps for batch {batch}", t.len())));
        }
        match (cfg.class_count, labels) {
            (None, Some(_)) => Err(Error::Conditioning(
                "labels were given to an unconditional model".into(),
            )),
            (Some(_), None) => Err(Error::Conditioning(
                "a conditional model needs labels (use the null label for none)".into(),
            )),
            (Some(k), Some(l)) => {
                if l.len() != batch {
                    return Err(Error::invalid(format!("{} labels for batch {batch}", l.len())));
                }
                match l.iter().find(|&&v| v > k) {
                    Some(&bad) => Err(Error::Conditioning(format!(
                        "label {bad} out of range for {k} classes plus null label {k}"
                    ))),
                    None => Ok(()),
                }
            }
            (None, None) => Ok(()),
        }
    }

    pub fn forward(&self, x: &Tensor<S>, t: &[usize], labels: Option<&[usize]>) -> Result<Tensor<S>> {
        self.check_inputs(x, t, labels)?;
        let batch = x.shape()[0];
        let wide = 2 * self.config.model_channels;

        let x1 = self.down1.forward(x)?;
        let x2 = self.down2.forward(&x1)?;
        let x3 = self.down3.forward(&x2)?;
        let x4 = self.down4.forward(&x3)?;

        let mut middle = self.middle.forward(&x4)?;
        if let Some(m2) = &self.middle2 {
            middle = m2.forward(&middle)?;
        }
        let temb = timestep_embedding::<S>(t, self.config.model_channels)?;
        let temb = self.time_emb.forward(&temb)?.relu().reshape(&[batch, wide, 1, 1])?;
        middle = middle.add(&temb)?;
        if let (Some(emb), Some(labels)) = (&self.class_emb, labels) {
            let cemb = emb.forward(labels)?.relu().reshape(&[batch, wide, 1, 1])?;
            middle = middle.add(&cemb)?;
        }

        let x5 = self.up1.forward(&middle.add(&x4)?.upsample_nearest2x()?)?;
        let x6 = self.up2.forward(&x5.add(&x3)?)?;
        let x7 = self.up3.forward(&x6.add(&x2)?.upsample_nearest2x()?)?;
        let mut h = x7.add(&x1)?;
        if let Some(extra) = &self.up4_extra {
            h = norm_relu(&extra.forward(&h)?)?;
        }
        self.up4.forward(&h)
    }
}

impl<S: Scalar> NoisePredictor<S> for UNet<S> {
    fn predict(&self, xt: &Tensor<S>, t: &[usize], labels: Option<&[usize]>) -> Result<Tensor<S>> {
        self.forward(xt, t, labels)
    }

    fn null_label(&self) -> Option<usize> {
        self.config.null_label()
    }
}
