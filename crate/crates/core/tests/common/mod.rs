//! Helpers shared by the integration tests.

#![allow(dead_code)]

use minidiff::unet::UNet;
use minidiff::{no_grad, randn, Result, Rng, Tensor, UNetConfig};

pub type Op = dyn Fn(&[Tensor<f64>]) -> Result<Tensor<f64>>;

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or the plain difference when both are ~0.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale < 1e-12 {
        norm(&diff)
    } else {
        norm(&diff) / scale
    }
}

pub fn param(rng: &mut Rng, shape: &[usize]) -> Tensor<f64> {
    let t = randn::<f64>(rng, shape);
    Tensor::parameter(shape, t.to_vec()).unwrap()
}

/// Like [`param`] but with every entry at least `margin` away from each
/// point in `kinks`, so central differences never straddle one.
pub fn param_avoiding(rng: &mut Rng, shape: &[usize], kinks: &[f64], margin: f64) -> Tensor<f64> {
    let mut v = randn::<f64>(rng, shape).to_vec();
    for x in v.iter_mut() {
        for &k in kinks {
            if (*x - k).abs() < margin {
                *x = if *x >= k { k + margin } else { k - margin };
            }
        }
    }
    Tensor::parameter(shape, v).unwrap()
}

/// Worst relative error over `inputs` between autodiff gradients and
/// central differences of `sum(op(inputs) ⊙ R)` for a fixed random `R`.
pub fn check_op(op: &Op, inputs: &[Tensor<f64>], seed: u64, h: f64) -> f64 {
    let out = op(inputs).unwrap();
    let proj = randn::<f64>(&mut Rng::seed_from_u64(seed ^ 0x5eed), out.shape());
    let loss = |xs: &[Tensor<f64>]| -> f64 {
        no_grad(|| op(xs).unwrap().mul(&proj).unwrap().sum().item())
    };
    inputs.iter().for_each(|x| x.zero_grad());
    out.mul(&proj).unwrap().sum().backward().unwrap();

    let mut worst: f64 = 0.0;
    for x in inputs {
        let analytic = x.grad().unwrap_or_else(|| vec![0.0; x.numel()]);
        let mut numeric = vec![0.0; x.numel()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let plus = loss(inputs);
            x.data_mut()[i] = orig - h;
            let minus = loss(inputs);
            x.data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * h);
        }
        worst = worst.max(rel_err(&analytic, &numeric));
    }
    worst
}

/// The differentiable ops, each with five random instances. Returns
/// `(op, worst relative error)`.
pub fn op_suite() -> Vec<(&'static str, f64)> {
    const H: f64 = 1e-3;
    let mut results = Vec::new();
    let mut record = |name: &'static str, errs: Vec<f64>| {
        assert!(errs.len() >= 5);
        results.push((name, errs.into_iter().fold(0.0, f64::max)));
    };
    let instances = |f: &dyn Fn(u64, &mut Rng) -> f64| -> Vec<f64> {
        (0..5u64).map(|i| f(i, &mut Rng::seed_from_u64(1000 + i))).collect()
    };

    record("add (broadcast)", instances(&|s, r| {
        let (a, b) = (param(r, &[2, 3, 2, 2]), param(r, &[2, 3, 1, 1]));
        check_op(&|x| x[0].add(&x[1]), &[a, b], s, H)
    }));
    record("sub (broadcast)", instances(&|s, r| {
        let (a, b) = (param(r, &[3, 4]), param(r, &[4]));
        check_op(&|x| x[0].sub(&x[1]), &[a, b], s, H)
    }));
    record("mul (broadcast)", instances(&|s, r| {
        let (a, b) = (param(r, &[2, 1, 3]), param(r, &[4, 1]));
        check_op(&|x| x[0].mul(&x[1]), &[a, b], s, H)
    }));
    record("mul_scalar", instances(&|s, r| {
        check_op(&|x| Ok(x[0].mul_scalar(-1.7)), &[param(r, &[5])], s, H)
    }));
    record("add_scalar", instances(&|s, r| {
        check_op(&|x| Ok(x[0].add_scalar(0.3).square()), &[param(r, &[5])], s, H)
    }));
    record("neg", instances(&|s, r| check_op(&|x| Ok(x[0].neg()), &[param(r, &[4])], s, H)));
    record("relu", instances(&|s, r| {
        check_op(&|x| Ok(x[0].relu()), &[param_avoiding(r, &[3, 7], &[0.0], 0.01)], s, H)
    }));
    record("square", instances(&|s, r| check_op(&|x| Ok(x[0].square()), &[param(r, &[6])], s, H)));
    record("exp", instances(&|s, r| check_op(&|x| Ok(x[0].exp()), &[param(r, &[6])], s, H)));
    record("clamp", instances(&|s, r| {
        let x = param_avoiding(r, &[12], &[-0.5, 0.5], 0.01);
        check_op(&|x| Ok(x[0].clamp(-0.5, 0.5)), &[x], s, H)
    }));
    record("sum", instances(&|s, r| check_op(&|x| Ok(x[0].sum()), &[param(r, &[3, 2])], s, H)));
    record("mean", instances(&|s, r| check_op(&|x| Ok(x[0].mean()), &[param(r, &[3, 2])], s, H)));
    record("mse", instances(&|s, r| {
        let (a, b) = (param(r, &[2, 5]), param(r, &[2, 5]));
        check_op(&|x| x[0].mse(&x[1]), &[a, b], s, H)
    }));
    record("reshape", instances(&|s, r| {
        check_op(&|x| Ok(x[0].reshape(&[3, 4])?.square()), &[param(r, &[2, 6])], s, H)
    }));
    record("conv2d", instances(&|s, r| {
        let (x, w, b) = (param(r, &[1, 2, 5, 5]), param(r, &[3, 2, 3, 3]), param(r, &[3]));
        check_op(&|v| v[0].conv2d(&v[1], Some(&v[2]), 1, 0), &[x, w, b], s, H)
    }));
    record("conv2d (stride 2, padding 1)", instances(&|s, r| {
        let (x, w, b) = (param(r, &[2, 2, 6, 6]), param(r, &[3, 2, 3, 3]), param(r, &[3]));
        check_op(&|v| v[0].conv2d(&v[1], Some(&v[2]), 2, 1), &[x, w, b], s, H)
    }));
    record("conv2d (1x1)", instances(&|s, r| {
        let (x, w) = (param(r, &[1, 3, 4, 4]), param(r, &[2, 3, 1, 1]));
        check_op(&|v| v[0].conv2d(&v[1], None, 1, 0), &[x, w], s, H)
    }));
    record("group_norm", instances(&|s, r| {
        check_op(&|x| x[0].group_norm(2, 1e-5), &[param(r, &[1, 4, 3, 3])], s, H)
    }));
    record("linear", instances(&|s, r| {
        let (x, w, b) = (param(r, &[4, 128]), param(r, &[256, 128]), param(r, &[256]));
        check_op(&|v| v[0].linear(&v[1], Some(&v[2])), &[x, w, b], s, H)
    }));
    record("embedding", instances(&|s, r| {
        check_op(&|x| x[0].embedding(&[2, 0, 2, 4]), &[param(r, &[5, 3])], s, H)
    }));
    record("upsample_nearest2x", instances(&|s, r| {
        check_op(&|x| x[0].upsample_nearest2x(), &[param(r, &[1, 2, 3, 3])], s, H)
    }));
    results
}

/// Gradient check of `mean(unet(x)²)` for a 32-bit tiny U-Net. Autodiff
/// runs at 32-bit; the finite-difference oracle runs on a 64-bit copy of
/// the same weights so its own rounding stays far below the tolerance.
/// Checks `coords` random entries of every parameter tensor and returns
/// `(name, relative error)` per tensor.
///
/// Biases feeding a group norm with one channel per group have an exact
/// zero gradient, which leaves only rounding noise on both sides. The
/// denominator is therefore floored at a small fraction of the largest
/// per-tensor gradient norm.
pub fn unet_gradcheck(config: UNetConfig, seed: u64, coords: usize) -> Vec<(String, f64)> {
    const H: f64 = 1e-5;
    const ZERO_GROUP_FLOOR: f64 = 1e-3;
    let mut rng = Rng::seed_from_u64(seed);
    let model = UNet::<f32>::new(config, &mut rng).unwrap();
    let x = randn::<f32>(&mut rng, &[2, config.io_channels, 8, 8]);
    let t = [3usize, 40];
    let labels = config.class_count.map(|k| vec![1, k]);

    model.zero_grad();
    let out = model.forward(&x, &t, labels.as_deref()).unwrap();
    out.square().mean().backward().unwrap();

    let wide = model.cast::<f64>();
    let x64 = x.cast::<f64>();
    let loss = || -> f64 {
        no_grad(|| wide.forward(&x64, &t, labels.as_deref()).unwrap().square().mean().item())
    };

    let mut sampled = Vec::new();
    for ((name, p32), (_, p64)) in model.named_parameters().into_iter().zip(wide.named_parameters()) {
        let grad = p32.grad().expect("every parameter is on the loss path");
        let picks: Vec<usize> = (0..coords.min(p64.numel())).map(|_| rng.index(p64.numel())).collect();
        let analytic: Vec<f64> = picks.iter().map(|&i| grad[i] as f64).collect();
        let numeric: Vec<f64> = picks
            .iter()
            .map(|&i| {
                let orig = p64.data()[i];
                p64.data_mut()[i] = orig + H;
                let plus = loss();
                p64.data_mut()[i] = orig - H;
                let minus = loss();
                p64.data_mut()[i] = orig;
                (plus - minus) / (2.0 * H)
            })
            .collect();
        sampled.push((name, analytic, numeric));
    }
    let scale = sampled.iter().map(|(_, a, _)| norm(a)).fold(0.0, f64::max);
    sampled
        .into_iter()
        .map(|(name, a, n)| {
            let diff: Vec<f64> = a.iter().zip(&n).map(|(x, y)| x - y).collect();
            let denom = norm(&a).max(norm(&n)).max(ZERO_GROUP_FLOOR * scale);
            (name, norm(&diff) / denom)
        })
        .collect()
}
