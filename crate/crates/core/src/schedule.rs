//! Linear β schedule and the per-timestep coefficient table derived from it.
//!
//! All columns are built and stored at `f64`; [`extract`] gathers a batch of
//! entries and casts them to the working precision.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Floor applied before taking the log of the posterior variance.
pub const POSTERIOR_VARIANCE_FLOOR: f64 = 1e-20;

/// Linear β ramp scaled so the endpoints are `0.0003·s` and `0.03·s`,
/// with `s = 1000 / timesteps`. Endpoints are exact.
pub fn linear_beta_schedule(timesteps: usize) -> Result<Vec<f64>> {
    if timesteps < 2 {
        return Err(Error::InvalidSchedule(format!(
            "need at least 2 timesteps, got {timesteps}"
        )));
    }
    let scale = 1000.0 / timesteps as f64;
    let start = 0.0003 * scale;
    let end = 0.03 * scale;
    let step = (end - start) / (timesteps - 1) as f64;
    let mut betas: Vec<f64> = (0..timesteps).map(|i| start + i as f64 * step).collect();
    betas[timesteps - 1] = end;
    Ok(betas)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    Linear,
}

impl ScheduleKind {
    pub fn code(self) -> u8 {
        match self {
            ScheduleKind::Linear => 0,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        (code == 0).then_some(ScheduleKind::Linear)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTable {
    pub timesteps: usize,
    pub betas: Vec<f64>,
    pub alphas: Vec<f64>,
    pub alphas_cumprod: Vec<f64>,
    pub alphas_cumprod_prev: Vec<f64>,
    pub sqrt_alphas_cumprod: Vec<f64>,
    pub sqrt_one_minus_alphas_cumprod: Vec<f64>,
    pub sqrt_recip_alphas_cumprod: Vec<f64>,
    pub sqrt_recipm1_alphas_cumprod: Vec<f64>,
    pub posterior_mean_coef1: Vec<f64>,
    pub posterior_mean_coef2: Vec<f64>,
    pub posterior_variance: Vec<f64>,
    pub posterior_log_variance_clipped: Vec<f64>,
}

impl ScheduleTable {
    pub fn linear(timesteps: usize) -> Result<Self> {
        Self::from_betas(linear_beta_schedule(timesteps)?)
    }

    /// Derives every column from `betas`. Each β must lie strictly inside
    /// `(0, 1)`; out-of-range values are rejected, never clamped.
    pub fn from_betas(betas: Vec<f64>) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("empty beta schedule".into()));
        }
        if let Some((t, b)) = betas
            .iter()
            .enumerate()
            .find(|(_, &b)| !(b > 0.0 && b < 1.0))
        {
            return Err(Error::InvalidSchedule(format!(
                "beta[{t}] = {b} is outside (0, 1)"
            )));
        }

        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let alphas_cumprod: Vec<f64> = alphas
            .iter()
            .scan(1.0, |acc, &a| {
                *acc *= a;
                Some(*acc)
            })
            .collect();
        let mut alphas_cumprod_prev = vec![1.0];
        alphas_cumprod_prev.extend_from_slice(&alphas_cumprod[..alphas_cumprod.len() - 1]);

        let map = |v: &[f64], f: fn(f64) -> f64| v.iter().map(|&x| f(x)).collect::<Vec<_>>();
        let sqrt_alphas_cumprod = map(&alphas_cumprod, f64::sqrt);
        let sqrt_one_minus_alphas_cumprod = map(&alphas_cumprod, |a| (1.0 - a).sqrt());
        let sqrt_recip_alphas_cumprod = map(&alphas_cumprod, |a| (1.0 / a).sqrt());
        let sqrt_recipm1_alphas_cumprod = map(&alphas_cumprod, |a| (1.0 / a - 1.0).sqrt());

        let n = betas.len();
        let mut posterior_mean_coef1 = Vec::with_capacity(n);
        let mut posterior_mean_coef2 = Vec::with_capacity(n);
        let mut posterior_variance = Vec::with_capacity(n);
        for t in 0..n {
            let (beta, alpha) = (betas[t], alphas[t]);
            let (ac, ac_prev) = (alphas_cumprod[t], alphas_cumprod_prev[t]);
            posterior_mean_coef1.push(beta * ac_prev.sqrt() / (1.0 - ac));
            posterior_mean_coef2.push((1.0 - ac_prev) * alpha.sqrt() / (1.0 - ac));
            posterior_variance.push(beta * (1.0 - ac_prev) / (1.0 - ac));
        }
        let posterior_log_variance_clipped = posterior_variance
            .iter()
            .map(|&v: &f64| v.max(POSTERIOR_VARIANCE_FLOOR).ln())
            .collect();

        Ok(ScheduleTable {
            timesteps: n,
            betas,
            alphas,
            alphas_cumprod,
            alphas_cumprod_prev,
            sqrt_alphas_cumprod,
            sqrt_one_minus_alphas_cumprod,
            sqrt_recip_alphas_cumprod,
            sqrt_recipm1_alphas_cumprod,
            posterior_mean_coef1,
            posterior_mean_coef2,
            posterior_variance,
            posterior_log_variance_clipped,
        })
    }

    /// Columns in the fixed order used by the CSV dump.
    pub fn columns(&self) -> [(&'static str, &[f64]); 12] {
        [
            ("betas", &self.betas),
            ("alphas", &self.alphas),
            ("alphas_cumprod", &self.alphas_cumprod),
            ("alphas_cumprod_prev", &self.alphas_cumprod_prev),
            ("sqrt_alphas_cumprod", &self.sqrt_alphas_cumprod),
            ("sqrt_one_minus_alphas_cumprod", &self.sqrt_one_minus_alphas_cumprod),
            ("sqrt_recip_alphas_cumprod", &self.sqrt_recip_alphas_cumprod),
            ("sqrt_recipm1_alphas_cumprod", &self.sqrt_recipm1_alphas_cumprod),
            ("posterior_mean_coef1", &self.posterior_mean_coef1),
            ("posterior_mean_coef2", &self.posterior_mean_coef2),
            ("posterior_variance", &self.posterior_variance),
            ("posterior_log_variance_clipped", &self.posterior_log_variance_clipped),
        ]
    }

    /// CSV with a `t` column followed by [`Self::columns`]. Values use the
    /// shortest representation that parses back to the same `f64`.
    pub fn to_csv(&self) -> String {
        let cols = self.columns();
        let mut out = String::from("t");
        for (name, _) in &cols {
            out.push(',');
            out.push_str(name);
        }
        out.push('\n');
        for t in 0..self.timesteps {
            write!(out, "{t}").unwrap();
            for (_, col) in &cols {
                write!(out, ",{:?}", col[t]).unwrap();
            }
            out.push('\n');
        }
        out
    }
}

/// Gathers `column[t[i]]` for a batch and reshapes to `(B, 1, …, 1)` with
/// `target_rank` axes in total, ready to broadcast against a batch tensor.
pub fn extract<S: Scalar>(column: &[f64], t: &[usize], target_rank: usize) -> Result<Tensor<S>> {
    if let Some(&bad) = t.iter().find(|&&i| i >= column.len()) {
        return Err(Error::IndexOutOfRange {
            index: bad,
            len: column.len(),
        });
    }
    let mut shape = vec![1; target_rank.max(1)];
    shape[0] = t.len();
    Tensor::new(&shape, t.iter().map(|&i| S::of(column[i])).collect())
}
