//! Network operators: convolution, group normalization, affine maps,
//! embedding lookup and nearest-neighbour upsampling.

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::{gemm, Scalar};

struct ConvGeometry {
    channels: usize,
    height: usize,
    width: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl ConvGeometry {
    fn patch_len(&self) -> usize {
        self.channels * self.kernel * self.kernel
    }

    fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    /// Input coordinate for output coordinate `o` and kernel tap `k`.
    fn source(&self, o: usize, k: usize, extent: usize) -> Option<usize> {
        let pos = (o * self.stride + k) as isize - self.padding as isize;
        (pos >= 0 && (pos as usize) < extent).then_some(pos as usize)
    }

    /// Unfolds one `(C, H, W)` image into a `(C*K*K, OH*OW)` patch matrix.
    fn im2col<S: Scalar>(&self, image: &[S], col: &mut [S]) {
        let k = self.kernel;
        let ow = self.out_w;
        for c in 0..self.channels {
            let plane = &image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * self.out_len();
                    for oy in 0..self.out_h {
                        let dst = &mut col[row + oy * ow..row + (oy + 1) * ow];
                        match self.source(oy, ky, self.height) {
                            None => dst.fill(S::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.width..(iy + 1) * self.width];
                                for (ox, d) in dst.iter_mut().enumerate() {
                                    *d = match self.source(ox, kx, self.width) {
                                        Some(ix) => src[ix],
                                        None => S::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto the image.
    fn col2im<S: Scalar>(&self, col: &[S], image: &mut [S]) {
        let k = self.kernel;
        let ow = self.out_w;
        for c in 0..self.channels {
            let plane =
                &mut image[c * self.height * self.width..(c + 1) * self.height * self.width];
            for ky in 0..k {
                for kx in 0..k {
                    let row = ((c * k + ky) * k + kx) * self.out_len();
                    for oy in 0..self.out_h {
                        let Some(iy) = self.source(oy, ky, self.height) else {
                            continue;
                        };
                        let src = &col[row + oy * ow..row + (oy + 1) * ow];
                        for (ox, &v) in src.iter().enumerate() {
                            if let Some(ix) = self.source(ox, kx, self.width) {
                                plane[iy * self.width + ix] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn expect_rank<S: Scalar>(t: &Tensor<S>, rank: usize, op: &'static str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::invalid(format!(
            "{op} expects a rank-{rank} tensor, got shape {:?}",
            t.shape()
        )));
    }
    Ok(())
}

impl<S: Scalar> Tensor<S> {
    /// 2-D cross-correlation. `self` is `(N, C, H, W)`, `weight` is
    /// `(O, C, K, K)` and `bias`, when given, is `(O)`.
    pub fn conv2d(
        &self,
        weight: &Tensor<S>,
        bias: Option<&Tensor<S>>,
        stride: usize,
        padding: usize,
    ) -> Result<Tensor<S>> {
        expect_rank(self, 4, "conv2d input")?;
        expect_rank(weight, 4, "conv2d weight")?;
        let &[n, c, h, w] = self.shape() else { unreachable!() };
        let &[o, wc, kh, kw] = weight.shape() else { unreachable!() };
        if wc != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d channels",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if kh != kw {
            return Err(Error::invalid("conv2d supports square kernels only"));
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        if h + 2 * padding < kh || w + 2 * padding < kw {
            return Err(Error::invalid(format!(
                "kernel {kh}x{kw} does not fit padded input {h}x{w} (padding {padding})"
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d bias",
                    lhs: vec![o],
                    rhs: b.shape().to_vec(),
                });
            }
        }

        let geo = ConvGeometry {
            channels: c,
            height: h,
            width: w,
            kernel: kh,
            stride,
            padding,
            out_h: (h + 2 * padding - kh) / stride + 1,
            out_w: (w + 2 * padding - kw) / stride + 1,
        };
        let (patch, spatial) = (geo.patch_len(), geo.out_len());
        let in_len = c * h * w;

        let mut out = vec![S::zero(); n * o * spatial];
        {
            let x = self.data();
            let wt = weight.data();
            let mut col = vec![S::zero(); patch * spatial];
            for s in 0..n {
                geo.im2col(&x[s * in_len..(s + 1) * in_len], &mut col);
                let dst = &mut out[s * o * spatial..(s + 1) * o * spatial];
                gemm(o, patch, spatial, &wt, false, &col, false, S::zero(), dst);
                if let Some(b) = bias {
                    for (ch, &bv) in b.data().iter().enumerate() {
                        dst[ch * spatial..(ch + 1) * spatial]
                            .iter_mut()
                            .for_each(|v| *v += bv);
                    }
                }
            }
        }

        let out_shape = vec![n, o, geo.out_h, geo.out_w];
        let (input, kernel) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op(out_shape, out, parents, move |g| {
            let x = input.data();
            let wt = kernel.data();
            let mut gx = input.requires_grad().then(|| vec![S::zero(); x.len()]);
            let mut gw = kernel.requires_grad().then(|| vec![S::zero(); wt.len()]);
            let mut col = vec![S::zero(); patch * spatial];
            for s in 0..n {
                let gs = &g[s * o * spatial..(s + 1) * o * spatial];
                if let Some(gw) = gw.as_mut() {
                    geo.im2col(&x[s * in_len..(s + 1) * in_len], &mut col);
                    gemm(o, spatial, patch, gs, false, &col, true, S::one(), gw);
                }
                if let Some(gx) = gx.as_mut() {
                    gemm(patch, o, spatial, &wt, true, gs, false, S::zero(), &mut col);
                    geo.col2im(&col, &mut gx[s * in_len..(s + 1) * in_len]);
                }
            }
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![S::zero(); o];
                for s in 0..n {
                    for (ch, acc) in gb.iter_mut().enumerate() {
                        let base = (s * o + ch) * spatial;
                        *acc += g[base..base + spatial].iter().copied().sum::<S>();
                    }
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }

    /// Standardizes each `(sample, group)` slab of an `(N, C, ...)` tensor
    /// to zero mean and unit variance. No affine parameters.
    pub fn group_norm(&self, num_groups: usize, eps: f64) -> Result<Tensor<S>> {
        if self.rank() < 2 {
            return Err(Error::invalid("group_norm needs at least (N, C)"));
        }
        let (n, c) = (self.shape()[0], self.shape()[1]);
        if num_groups == 0 || c % num_groups != 0 {
            return Err(Error::invalid(format!(
                "group_norm: {c} channels not divisible into {num_groups} groups"
            )));
        }
        let slab = self.numel() / (n * num_groups).max(1);
        let slabs = n * num_groups;

        let mut out = vec![S::zero(); self.numel()];
        let mut rstd = vec![S::zero(); slabs];
        {
            let x = self.data();
            for s in 0..slabs {
                let xs = &x[s * slab..(s + 1) * slab];
                let mean = xs.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / slab as f64;
                let var = xs
                    .iter()
                    .map(|v| (v.to_f64_lossy() - mean).powi(2))
                    .sum::<f64>()
                    / slab as f64;
                let r = 1.0 / (var + eps).sqrt();
                rstd[s] = S::of(r);
                for (o, &v) in out[s * slab..(s + 1) * slab].iter_mut().zip(xs) {
                    *o = S::of((v.to_f64_lossy() - mean) * r);
                }
            }
        }

        let normalized = out.clone();
        Ok(Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let mut gx = vec![S::zero(); g.len()];
            let inv = S::one() / S::of(slab as f64);
            for s in 0..slabs {
                let range = s * slab..(s + 1) * slab;
                let (gs, ys) = (&g[range.clone()], &normalized[range.clone()]);
                let mean_g = gs.iter().copied().sum::<S>() * inv;
                let mean_gy = gs.iter().zip(ys).map(|(&a, &b)| a * b).sum::<S>() * inv;
                for ((dst, &gv), &yv) in gx[range].iter_mut().zip(gs).zip(ys) {
                    *dst = rstd[s] * (gv - mean_g - yv * mean_gy);
                }
            }
            vec![Some(gx)]
        }))
    }

    /// `self · weightᵀ + bias` for `self: (N, in)`, `weight: (out, in)`.
    pub fn linear(&self, weight: &Tensor<S>, bias: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        expect_rank(self, 2, "linear input")?;
        expect_rank(weight, 2, "linear weight")?;
        let (n, fan_in) = (self.shape()[0], self.shape()[1]);
        let fan_out = weight.shape()[0];
        if weight.shape()[1] != fan_in {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if let Some(b) = bias {
            if b.shape() != [fan_out] {
                return Err(Error::ShapeMismatch {
                    op: "linear bias",
                    lhs: vec![fan_out],
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let mut out = vec![S::zero(); n * fan_out];
        gemm(n, fan_in, fan_out, &self.data(), false, &weight.data(), true, S::zero(), &mut out);
        if let Some(b) = bias {
            let b = b.data();
            for row in out.chunks_mut(fan_out) {
                row.iter_mut().zip(b.iter()).for_each(|(v, &bv)| *v += bv);
            }
        }

        let (input, kernel) = (self.clone(), weight.clone());
        let has_bias = bias.is_some();
        let mut parents = vec![self.clone(), weight.clone()];
        parents.extend(bias.cloned());
        Ok(Tensor::from_op(vec![n, fan_out], out, parents, move |g| {
            let gx = input.requires_grad().then(|| {
                let mut gx = vec![S::zero(); n * fan_in];
                gemm(n, fan_out, fan_in, g, false, &kernel.data(), false, S::zero(), &mut gx);
                gx
            });
            let gw = kernel.requires_grad().then(|| {
                let mut gw = vec![S::zero(); fan_out * fan_in];
                gemm(fan_out, n, fan_in, g, true, &input.data(), false, S::zero(), &mut gw);
                gw
            });
            let mut grads = vec![gx, gw];
            if has_bias {
                let mut gb = vec![S::zero(); fan_out];
                for row in g.chunks(fan_out) {
                    gb.iter_mut().zip(row).for_each(|(a, &b)| *a += b);
                }
                grads.push(Some(gb));
            }
            grads
        }))
    }

    /// Gathers rows of a `(rows, dim)` table; differentiable in the table only.
    pub fn embedding(&self, indices: &[usize]) -> Result<Tensor<S>> {
        expect_rank(self, 2, "embedding table")?;
        let (rows, dim) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::IndexOutOfRange { index: bad, len: rows });
        }
        let table = self.data();
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&table[i * dim..(i + 1) * dim]);
        }
        drop(table);
        let idx = indices.to_vec();
        Ok(Tensor::from_op(vec![indices.len(), dim], out, vec![self.clone()], move |g| {
            let mut gt = vec![S::zero(); rows * dim];
            for (r, &i) in idx.iter().enumerate() {
                gt[i * dim..(i + 1) * dim]
                    .iter_mut()
                    .zip(&g[r * dim..(r + 1) * dim])
                    .for_each(|(a, &b)| *a += b);
            }
            vec![Some(gt)]
        }))
    }

    /// Duplicates every pixel of an `(N, C, H, W)` tensor into a 2×2 block.
    pub fn upsample_nearest2x(&self) -> Result<Tensor<S>> {
        expect_rank(self, 4, "upsample")?;
        let &[n, c, h, w] = self.shape() else { unreachable!() };
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![S::zero(); n * c * oh * ow];
        {
            let x = self.data();
            for plane in 0..n * c {
                let src = &x[plane * h * w..(plane + 1) * h * w];
                let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
                for y in 0..oh {
                    for xx in 0..ow {
                        dst[y * ow + xx] = src[(y / 2) * w + xx / 2];
                    }
                }
            }
        }
        Ok(Tensor::from_op(vec![n, c, oh, ow], out, vec![self.clone()], move |g| {
            let mut gx = vec![S::zero(); n * c * h * w];
            for plane in 0..n * c {
                let src = &g[plane * oh * ow..(plane + 1) * oh * ow];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for y in 0..oh {
                    for xx in 0..ow {
                        dst[(y / 2) * w + xx / 2] += src[y * ow + xx];
                    }
                }
            }
            vec![Some(gx)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_of_ones_sums_the_window() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let b = Tensor::<f32>::zeros(&[1]);
        let y = x.conv2d(&w, Some(&b), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.item(), 9.0);
    }

    #[test]
    fn conv_output_extent_formula() {
        let x = Tensor::<f32>::zeros(&[2, 32, 28, 28]);
        let w = Tensor::<f32>::zeros(&[64, 32, 3, 3]);
        assert_eq!(x.conv2d(&w, None, 2, 1).unwrap().shape(), &[2, 64, 14, 14]);
        let x = Tensor::<f32>::zeros(&[1, 4, 7, 7]);
        let w = Tensor::<f32>::zeros(&[4, 4, 3, 3]);
        assert_eq!(x.conv2d(&w, None, 2, 1).unwrap().shape(), &[1, 4, 4, 4]);
    }

    #[test]
    fn conv_same_padding_preserves_extent_for_odd_kernels() {
        for k in [1, 3, 5] {
            let x = Tensor::<f32>::zeros(&[1, 2, 9, 6]);
            let w = Tensor::<f32>::zeros(&[3, 2, k, k]);
            assert_eq!(x.conv2d(&w, None, 1, (k - 1) / 2).unwrap().shape(), &[1, 3, 9, 6]);
        }
    }

    #[test]
    fn conv_rejects_bad_arguments() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        let w = Tensor::<f32>::zeros(&[1, 3, 3, 3]);
        assert!(matches!(x.conv2d(&w, None, 1, 1), Err(Error::ShapeMismatch { .. })));
        let w = Tensor::<f32>::zeros(&[1, 2, 3, 3]);
        assert!(x.conv2d(&w, None, 0, 1).is_err());
        let w = Tensor::<f32>::zeros(&[1, 2, 7, 7]);
        assert!(x.conv2d(&w, None, 1, 0).is_err());
    }

    #[test]
    fn conv_matches_direct_loop() {
        let (n, c, h, w, o, k, stride, pad) = (2, 2, 5, 4, 3, 3, 2, 1);
        let xs: Vec<f64> = (0..n * c * h * w).map(|i| ((i * 7) % 11) as f64 - 5.0).collect();
        let ws: Vec<f64> = (0..o * c * k * k).map(|i| ((i * 5) % 7) as f64 * 0.1).collect();
        let x = Tensor::<f64>::new(&[n, c, h, w], xs.clone()).unwrap();
        let wt = Tensor::<f64>::new(&[o, c, k, k], ws.clone()).unwrap();
        let y = x.conv2d(&wt, None, stride, pad).unwrap();
        let (oh, ow) = (y.shape()[2], y.shape()[3]);
        let got = y.to_vec();
        for s in 0..n {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        let mut acc = 0.0;
                        for ic in 0..c {
                            for ky in 0..k {
                                for kx in 0..k {
                                    let iy = (oy * stride + ky) as isize - pad as isize;
                                    let ix = (ox * stride + kx) as isize - pad as isize;
                                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                        continue;
                                    }
                                    acc += xs[((s * c + ic) * h + iy as usize) * w + ix as usize]
                                        * ws[((oc * c + ic) * k + ky) * k + kx];
                                }
                            }
                        }
                        let v = got[((s * o + oc) * oh + oy) * ow + ox];
                        assert!((v - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn group_norm_of_constant_slab_is_zero() {
        let x = Tensor::<f32>::full(&[1, 4, 3, 3], 0.5);
        assert!(x.group_norm(2, 1e-5).unwrap().to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn group_norm_requires_divisible_channels() {
        let x = Tensor::<f32>::zeros(&[1, 6, 2, 2]);
        assert!(x.group_norm(4, 1e-5).is_err());
        assert!(x.group_norm(3, 1e-5).is_ok());
    }

    #[test]
    fn upsample_duplicates_pixels() {
        let x = Tensor::<f32>::new(&[1, 1, 2, 2], vec![1., 2., 3., 4.]).unwrap();
        let y = x.upsample_nearest2x().unwrap();
        assert_eq!(y.shape(), &[1, 1, 4, 4]);
        assert_eq!(
            y.to_vec(),
            vec![1., 1., 2., 2., 1., 1., 2., 2., 3., 3., 4., 4., 3., 3., 4., 4.]
        );
    }

    #[test]
    fn embedding_lookup_and_bounds() {
        let table = Tensor::<f32>::parameter(&[3, 2], vec![0., 1., 2., 3., 4., 5.]).unwrap();
        let e = table.embedding(&[2, 0, 2]).unwrap();
        assert_eq!(e.to_vec(), vec![4., 5., 0., 1., 4., 5.]);
        e.sum().backward().unwrap();
        assert_eq!(table.grad().unwrap(), vec![1., 1., 0., 0., 2., 2.]);
        assert!(matches!(table.embedding(&[3]), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn linear_forward_values() {
        let x = Tensor::<f64>::new(&[1, 2], vec![1.0, 2.0]).unwrap();
        let w = Tensor::<f64>::new(&[3, 2], vec![1., 0., 0., 1., 1., 1.]).unwrap();
        let b = Tensor::<f64>::new(&[3], vec![0.5, 0.5, 0.5]).unwrap();
        assert_eq!(x.linear(&w, Some(&b)).unwrap().to_vec(), vec![1.5, 2.5, 3.5]);
    }
}
