//! Differentiable tensor operations.

use super::kernels::{self, DiffKind, PadMode};
use super::{Element, Tensor};
use crate::error::{Error, Result};

fn same_shape<E: Element>(op: &'static str, a: &Tensor<E>, b: &Tensor<E>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

fn dims4<E: Element>(op: &'static str, t: &Tensor<E>) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::InvalidShape {
            op,
            shape: t.shape().to_vec(),
            reason: "expected a 4-d [n, c, h, w] tensor",
        }),
    }
}

impl<E: Element> Tensor<E> {
    pub fn add(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("add", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(&a, &b)| a + b)
            .collect();
        let (na, nb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| g.to_vec()),
                    nb.then(|| g.to_vec()),
                ]
            }),
        ))
    }

    pub fn sub(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("sub", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(&a, &b)| a - b)
            .collect();
        let (na, nb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| g.to_vec()),
                    nb.then(|| g.iter().map(|&v| -v).collect()),
                ]
            }),
        ))
    }

    pub fn mul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        same_shape("mul", self, rhs)?;
        let data = self
            .data()
            .iter()
            .zip(rhs.data())
            .map(|(&a, &b)| a * b)
            .collect();
        let (na, nb) = (self.requires_grad(), rhs.requires_grad());
        let a = self.clone();
        let b = rhs.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| g.iter().zip(b.data()).map(|(&g, &b)| g * b).collect()),
                    nb.then(|| g.iter().zip(a.data()).map(|(&g, &a)| g * a).collect()),
                ]
            }),
        ))
    }

    pub fn scale(&self, k: E) -> Result<Tensor<E>> {
        let data = self.data().iter().map(|&a| a * k).collect();
        let need = self.requires_grad();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| vec![need.then(|| g.iter().map(|&v| v * k).collect())]),
        ))
    }

    pub fn neg(&self) -> Result<Tensor<E>> {
        self.scale(-E::one())
    }

    pub fn abs(&self) -> Result<Tensor<E>> {
        let data = self.data().iter().map(|&a| a.abs()).collect();
        let need = self.requires_grad();
        let x = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                vec![need.then(|| {
                    g.iter()
                        .zip(x.data())
                        .map(|(&g, &x)| {
                            if x > E::zero() {
                                g
                            } else if x < E::zero() {
                                -g
                            } else {
                                E::zero()
                            }
                        })
                        .collect()
                })]
            }),
        ))
    }

    /// `x * sigmoid(x)` smooth nonlinearity.
    pub fn silu(&self) -> Result<Tensor<E>> {
        let sig = |x: E| E::one() / (E::one() + (-x).exp());
        let data = self.data().iter().map(|&x| x * sig(x)).collect();
        let need = self.requires_grad();
        let x = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            Box::new(move |g| {
                vec![need.then(|| {
                    g.iter()
                        .zip(x.data())
                        .map(|(&g, &x)| {
                            let s = sig(x);
                            g * (s * (E::one() + x * (E::one() - s)))
                        })
                        .collect()
                })]
            }),
        ))
    }

    pub fn sum(&self) -> Result<Tensor<E>> {
        // f64 accumulation keeps large reductions accurate and deterministic.
        let mut acc = 0.0f64;
        for v in self.data() {
            acc += v.to_f64();
        }
        let need = self.requires_grad();
        let n = self.numel();
        Ok(Tensor::from_op(
            vec![1],
            vec![E::from_f64(acc)],
            vec![self.clone()],
            Box::new(move |g| vec![need.then(|| vec![g[0]; n])]),
        ))
    }

    pub fn mean(&self) -> Result<Tensor<E>> {
        let n = self.numel();
        let inv = E::from_f64(1.0 / n as f64);
        let mut acc = 0.0f64;
        for v in self.data() {
            acc += v.to_f64();
        }
        let need = self.requires_grad();
        Ok(Tensor::from_op(
            vec![1],
            vec![E::from_f64(acc / n as f64)],
            vec![self.clone()],
            Box::new(move |g| vec![need.then(|| vec![g[0] * inv; n])]),
        ))
    }

    /// Matrix product of `[m, k]` and `[k, n]`.
    pub fn matmul(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let (m, k) = match self.shape() {
            &[m, k] => (m, k),
            _ => {
                return Err(Error::InvalidShape {
                    op: "matmul",
                    shape: self.shape().to_vec(),
                    reason: "lhs must be 2-d",
                })
            }
        };
        let (k2, n) = match rhs.shape() {
            &[k2, n] => (k2, n),
            _ => {
                return Err(Error::InvalidShape {
                    op: "matmul",
                    shape: rhs.shape().to_vec(),
                    reason: "rhs must be 2-d",
                })
            }
        };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let data = kernels::matmul_nn(self.data(), rhs.data(), m, k, n);
        let (na, nb) = (self.requires_grad(), rhs.requires_grad());
        let a = self.clone();
        let b = rhs.clone();
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| kernels::matmul_nt(g, b.data(), m, n, k)),
                    nb.then(|| kernels::matmul_tn(a.data(), g, k, m, n)),
                ]
            }),
        ))
    }

    /// Broadcast add of a `[n]` bias row to a `[m, n]` matrix.
    pub fn add_row(&self, bias: &Tensor<E>) -> Result<Tensor<E>> {
        let (m, n) = match self.shape() {
            &[m, n] => (m, n),
            _ => {
                return Err(Error::InvalidShape {
                    op: "add_row",
                    shape: self.shape().to_vec(),
                    reason: "expected a 2-d tensor",
                })
            }
        };
        if bias.shape() != [n] {
            return Err(Error::ShapeMismatch {
                op: "add_row",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let mut data = self.data().to_vec();
        for row in data.chunks_mut(n) {
            for (v, b) in row.iter_mut().zip(bias.data()) {
                *v += *b;
            }
        }
        let (na, nb) = (self.requires_grad(), bias.requires_grad());
        Ok(Tensor::from_op(
            vec![m, n],
            data,
            vec![self.clone(), bias.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| g.to_vec()),
                    nb.then(|| {
                        let mut gb = vec![E::zero(); n];
                        for row in g.chunks(n) {
                            for (acc, &v) in gb.iter_mut().zip(row) {
                                *acc += v;
                            }
                        }
                        gb
                    }),
                ]
            }),
        ))
    }

    /// Broadcast add of `[n, c]` per-channel values over the spatial axes of
    /// a `[n, c, h, w]` tensor.
    pub fn add_channel(&self, per_channel: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, c, h, w) = dims4("add_channel", self)?;
        if per_channel.shape() != [n, c] {
            return Err(Error::ShapeMismatch {
                op: "add_channel",
                lhs: self.shape().to_vec(),
                rhs: per_channel.shape().to_vec(),
            });
        }
        let plane = h * w;
        let mut data = self.data().to_vec();
        for (idx, chunk) in data.chunks_mut(plane).enumerate() {
            let b = per_channel.data()[idx];
            for v in chunk {
                *v += b;
            }
        }
        let (na, nb) = (self.requires_grad(), per_channel.requires_grad());
        Ok(Tensor::from_op(
            vec![n, c, h, w],
            data,
            vec![self.clone(), per_channel.clone()],
            Box::new(move |g| {
                vec![
                    na.then(|| g.to_vec()),
                    nb.then(|| {
                        g.chunks(plane)
                            .map(|chunk| {
                                let mut acc = E::zero();
                                for &v in chunk {
                                    acc += v;
                                }
                                acc
                            })
                            .collect()
                    }),
                ]
            }),
        ))
    }

    /// 2-d convolution, stride 1, zero padding. Weights are `[o, c, kh, kw]`.
    pub fn conv2d(&self, weight: &Tensor<E>, bias: Option<&Tensor<E>>, pad: usize) -> Result<Tensor<E>> {
        self.conv2d_mode(weight, bias, pad, PadMode::Zero)
    }

    /// 2-d convolution with replicate (edge) padding of one pixel; the
    /// border rule of the difference-convolution family and its merged
    /// kernels.
    pub fn conv2d_replicate(&self, weight: &Tensor<E>, bias: Option<&Tensor<E>>) -> Result<Tensor<E>> {
        self.conv2d_mode(weight, bias, 1, PadMode::Replicate)
    }

    fn conv2d_mode(
        &self,
        weight: &Tensor<E>,
        bias: Option<&Tensor<E>>,
        pad: usize,
        mode: PadMode,
    ) -> Result<Tensor<E>> {
        let (n, c, h, w) = dims4("conv2d", self)?;
        let (o, cw, kh, kw) = match weight.shape() {
            &[o, cw, kh, kw] => (o, cw, kh, kw),
            _ => {
                return Err(Error::InvalidShape {
                    op: "conv2d",
                    shape: weight.shape().to_vec(),
                    reason: "weights must be [o, c, kh, kw]",
                })
            }
        };
        if cw != c {
            return Err(Error::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        if kh != kw || kh == 0 {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: weight.shape().to_vec(),
                reason: "kernel must be square",
            });
        }
        if pad >= kh {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: weight.shape().to_vec(),
                reason: "padding must be smaller than the kernel size",
            });
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::InvalidShape {
                op: "conv2d",
                shape: self.shape().to_vec(),
                reason: "kernel larger than padded input",
            });
        }
        if let Some(b) = bias {
            if b.shape() != [o] {
                return Err(Error::ShapeMismatch {
                    op: "conv2d",
                    lhs: weight.shape().to_vec(),
                    rhs: b.shape().to_vec(),
                });
            }
        }
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let xp = kernels::pad_nchw(self.data(), n, c, h, w, pad, mode);
        let out = kernels::conv2d_fwd(
            &xp,
            n,
            c,
            hp,
            wp,
            weight.data(),
            o,
            kh,
            kw,
            bias.map(|b| b.data()),
        );
        let (oh, ow) = (hp - kh + 1, wp - kw + 1);

        let nx = self.requires_grad();
        let nw = weight.requires_grad();
        let nb = bias.map(|b| b.requires_grad()).unwrap_or(false);
        let wt = weight.clone();
        let mut parents = vec![self.clone(), weight.clone()];
        if let Some(b) = bias {
            parents.push(b.clone());
        }
        let has_bias = bias.is_some();
        Ok(Tensor::from_op(
            vec![n, o, oh, ow],
            out,
            parents,
            Box::new(move |g| {
                let gx = nx.then(|| {
                    kernels::conv2d_grad_x(g, n, o, oh, ow, wt.data(), c, kh, kw, h, w, pad, mode)
                });
                let gw = nw.then(|| kernels::conv2d_grad_w(g, &xp, n, c, hp, wp, o, kh, kw));
                let mut grads = vec![gx, gw];
                if has_bias {
                    grads.push(nb.then(|| kernels::conv2d_grad_b(g, n, o, oh * ow)));
                }
                grads
            }),
        ))
    }

    /// Difference convolution: 3x3, stride 1, zero padding 1, no bias.
    /// Each kernel tap responds to the difference against a paired tap, so
    /// constant inputs map to exactly zero.
    pub fn diff_conv2d(&self, weight: &Tensor<E>, kind: DiffKind) -> Result<Tensor<E>> {
        let (n, c, h, w) = dims4("diff_conv2d", self)?;
        let (o, cw, kh, kw) = match weight.shape() {
            &[o, cw, kh, kw] => (o, cw, kh, kw),
            _ => {
                return Err(Error::InvalidShape {
                    op: "diff_conv2d",
                    shape: weight.shape().to_vec(),
                    reason: "weights must be [o, c, 3, 3]",
                })
            }
        };
        if kh != 3 || kw != 3 {
            return Err(Error::InvalidShape {
                op: "diff_conv2d",
                shape: weight.shape().to_vec(),
                reason: "difference convolutions are defined for 3x3 kernels",
            });
        }
        if cw != c {
            return Err(Error::ShapeMismatch {
                op: "diff_conv2d",
                lhs: self.shape().to_vec(),
                rhs: weight.shape().to_vec(),
            });
        }
        let pad = 1usize;
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let xp = kernels::pad_nchw(self.data(), n, c, h, w, pad, PadMode::Replicate);
        let out = kernels::diffconv2d_fwd(&xp, n, c, hp, wp, weight.data(), o, kind);

        let nx = self.requires_grad();
        let nw = weight.requires_grad();
        let wt = weight.clone();
        Ok(Tensor::from_op(
            vec![n, o, h, w],
            out,
            vec![self.clone(), weight.clone()],
            Box::new(move |g| {
                let gx = nx.then(|| {
                    // The input gradient of the difference form equals the
                    // gradient of the plain convolution with the transformed
                    // kernel.
                    let merged = kind.transform(wt.data());
                    kernels::conv2d_grad_x(
                        g, n, o, h, w, &merged, c, 3, 3, h, w, pad,
                        PadMode::Replicate,
                    )
                });
                let gw = nw.then(|| kernels::diffconv2d_grad_w(g, &xp, n, c, hp, wp, o, kind));
                vec![gx, gw]
            }),
        ))
    }

    /// Fused five-branch residual-difference convolution: the sum of a
    /// vanilla 3x3 convolution (with bias) and up to four difference
    /// convolutions over the same input, evaluated in one sweep. Pass `None`
    /// to ablate a branch. The caller adds the residual input.
    #[allow(clippy::too_many_arguments)]
    pub fn rdc_conv2d(
        &self,
        vanilla: &Tensor<E>,
        bias: &Tensor<E>,
        central: Option<&Tensor<E>>,
        angular: Option<&Tensor<E>>,
        horizontal: Option<&Tensor<E>>,
        vertical: Option<&Tensor<E>>,
    ) -> Result<Tensor<E>> {
        let (n, c, h, w) = dims4("rdc_conv2d", self)?;
        let (o, cw, kh, kw) = match vanilla.shape() {
            &[o, cw, kh, kw] => (o, cw, kh, kw),
            _ => {
                return Err(Error::InvalidShape {
                    op: "rdc_conv2d",
                    shape: vanilla.shape().to_vec(),
                    reason: "weights must be [o, c, 3, 3]",
                })
            }
        };
        if kh != 3 || kw != 3 || cw != c {
            return Err(Error::ShapeMismatch {
                op: "rdc_conv2d",
                lhs: self.shape().to_vec(),
                rhs: vanilla.shape().to_vec(),
            });
        }
        if bias.shape() != [o] {
            return Err(Error::ShapeMismatch {
                op: "rdc_conv2d",
                lhs: vanilla.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let branches: Vec<(DiffKind, &Tensor<E>)> = [
            (DiffKind::Central, central),
            (DiffKind::Angular, angular),
            (DiffKind::Horizontal, horizontal),
            (DiffKind::Vertical, vertical),
        ]
        .into_iter()
        .filter_map(|(k, t)| t.map(|t| (k, t)))
        .collect();
        for (_, t) in &branches {
            if t.shape() != vanilla.shape() {
                return Err(Error::ShapeMismatch {
                    op: "rdc_conv2d",
                    lhs: vanilla.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }

        let pad = 1usize;
        let (hp, wp) = (h + 2 * pad, w + 2 * pad);
        let xp = kernels::pad_nchw(self.data(), n, c, h, w, pad, PadMode::Replicate);
        let kinds: Vec<DiffKind> = branches.iter().map(|(k, _)| *k).collect();
        let branch_tensors: Vec<Tensor<E>> = branches.iter().map(|(_, t)| (*t).clone()).collect();
        let weights = kernels::RdcWeights {
            vanilla: vanilla.data(),
            central: central.map(|t| t.data()),
            angular: angular.map(|t| t.data()),
            horizontal: horizontal.map(|t| t.data()),
            vertical: vertical.map(|t| t.data()),
        };
        let out = kernels::rdc_fwd(&xp, n, c, hp, wp, weights, bias.data(), o);

        let nx = self.requires_grad();
        let nv = vanilla.requires_grad();
        let nb = bias.requires_grad();
        let nks: Vec<bool> = branch_tensors.iter().map(|t| t.requires_grad()).collect();
        let vt = vanilla.clone();
        let bts = branch_tensors.clone();
        let kinds_bw = kinds.clone();
        let mut parents = vec![self.clone(), vanilla.clone(), bias.clone()];
        parents.extend(branch_tensors);
        Ok(Tensor::from_op(
            vec![n, o, h, w],
            out,
            parents,
            Box::new(move |g| {
                let gx = nx.then(|| {
                    let weights = kernels::RdcWeights {
                        vanilla: vt.data(),
                        central: None,
                        angular: None,
                        horizontal: None,
                        vertical: None,
                    };
                    let mut merged = weights.merged();
                    for (kind, t) in kinds_bw.iter().zip(&bts) {
                        for (m, tr) in merged.iter_mut().zip(kind.transform(t.data())) {
                            *m += tr;
                        }
                    }
                    kernels::conv2d_grad_x(
                        g, n, o, h, w, &merged, c, 3, 3, h, w, pad,
                        PadMode::Replicate,
                    )
                });
                let need_any_w = nv || nks.iter().any(|&b| b);
                let (gwv, gwk) = if need_any_w {
                    let (gwv, gwk) = kernels::rdc_grad_w(g, &xp, n, c, hp, wp, o, &kinds_bw);
                    (Some(gwv), gwk.into_iter().map(Some).collect())
                } else {
                    (None, vec![None; kinds_bw.len()])
                };
                let gb = nb.then(|| kernels::conv2d_grad_b(g, n, o, h * w));
                let mut grads = vec![gx, if nv { gwv } else { None }, gb];
                for (gk, &need) in gwk.into_iter().zip(&nks) {
                    grads.push(if need { gk } else { None });
                }
                grads
            }),
        ))
    }

    /// Group normalization over `[n, c, h, w]` with per-channel affine
    /// parameters.
    pub fn group_norm(
        &self,
        gamma: &Tensor<E>,
        beta: &Tensor<E>,
        groups: usize,
        eps: f64,
    ) -> Result<Tensor<E>> {
        let (n, c, h, w) = dims4("group_norm", self)?;
        if groups == 0 || c % groups != 0 {
            return Err(Error::InvalidGroupCount {
                channels: c,
                groups,
            });
        }
        if gamma.shape() != [c] || beta.shape() != [c] {
            return Err(Error::ShapeMismatch {
                op: "group_norm",
                lhs: vec![c],
                rhs: gamma.shape().to_vec(),
            });
        }
        let plane = h * w;
        let group_ch = c / groups;
        let group_size = group_ch * plane;
        let x = self.data();
        let mut xhat = vec![E::zero(); x.len()];
        let mut inv_std = vec![E::zero(); n * groups];
        for ni in 0..n {
            for gi in 0..groups {
                let start = (ni * c + gi * group_ch) * plane;
                let seg = &x[start..start + group_size];
                let mut mean = 0.0f64;
                for v in seg {
                    mean += v.to_f64();
                }
                mean /= group_size as f64;
                let mut var = 0.0f64;
                for v in seg {
                    let d = v.to_f64() - mean;
                    var += d * d;
                }
                var /= group_size as f64;
                let inv = 1.0 / (var + eps).sqrt();
                inv_std[ni * groups + gi] = E::from_f64(inv);
                let m = E::from_f64(mean);
                let iv = E::from_f64(inv);
                for (dst, &v) in xhat[start..start + group_size].iter_mut().zip(seg) {
                    *dst = (v - m) * iv;
                }
            }
        }
        let mut out = vec![E::zero(); x.len()];
        for ni in 0..n {
            for ci in 0..c {
                let gm = gamma.data()[ci];
                let bt = beta.data()[ci];
                let start = (ni * c + ci) * plane;
                for j in 0..plane {
                    out[start + j] = gm * xhat[start + j] + bt;
                }
            }
        }

        let nx = self.requires_grad();
        let ng = gamma.requires_grad();
        let nb = beta.requires_grad();
        let gamma_t = gamma.clone();
        Ok(Tensor::from_op(
            vec![n, c, h, w],
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            Box::new(move |g| {
                let gx = nx.then(|| {
                    let mut gx = vec![E::zero(); g.len()];
                    for ni in 0..n {
                        for gi in 0..groups {
                            let start = (ni * c + gi * group_ch) * plane;
                            // ghat = g * gamma (per channel within the group)
                            let mut sum_ghat = 0.0f64;
                            let mut sum_ghat_xhat = 0.0f64;
                            for cc in 0..group_ch {
                                let gm = gamma_t.data()[gi * group_ch + cc].to_f64();
                                let base = start + cc * plane;
                                for j in 0..plane {
                                    let gh = g[base + j].to_f64() * gm;
                                    sum_ghat += gh;
                                    sum_ghat_xhat += gh * xhat[base + j].to_f64();
                                }
                            }
                            let msize = group_size as f64;
                            let mean_ghat = E::from_f64(sum_ghat / msize);
                            let mean_gx = E::from_f64(sum_ghat_xhat / msize);
                            let iv = inv_std[ni * groups + gi];
                            for cc in 0..group_ch {
                                let gm = gamma_t.data()[gi * group_ch + cc];
                                let base = start + cc * plane;
                                for j in 0..plane {
                                    let gh = g[base + j] * gm;
                                    gx[base + j] =
                                        iv * (gh - mean_ghat - xhat[base + j] * mean_gx);
                                }
                            }
                        }
                    }
                    gx
                });
                let gg = ng.then(|| {
                    let mut gg = vec![E::zero(); c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * plane;
                            let mut acc = E::zero();
                            for j in 0..plane {
                                acc += g[base + j] * xhat[base + j];
                            }
                            gg[ci] += acc;
                        }
                    }
                    gg
                });
                let gb = nb.then(|| {
                    let mut gb = vec![E::zero(); c];
                    for ni in 0..n {
                        for ci in 0..c {
                            let base = (ni * c + ci) * plane;
                            let mut acc = E::zero();
                            for j in 0..plane {
                                acc += g[base + j];
                            }
                            gb[ci] += acc;
                        }
                    }
                    gb
                });
                vec![gx, gg, gb]
            }),
        ))
    }

    /// Nearest-neighbor 2x upsampling of `[n, c, h, w]`.
    pub fn upsample_nearest2(&self) -> Result<Tensor<E>> {
        let (n, c, h, w) = dims4("upsample_nearest2", self)?;
        let (oh, ow) = (h * 2, w * 2);
        let mut out = vec![E::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let src = &self.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for r in 0..oh {
                for col in 0..ow {
                    dst[r * ow + col] = src[(r / 2) * w + col / 2];
                }
            }
        }
        let need = self.requires_grad();
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                vec![need.then(|| {
                    let mut gx = vec![E::zero(); n * c * h * w];
                    for plane in 0..n * c {
                        let gsrc = &g[plane * oh * ow..(plane + 1) * oh * ow];
                        let gdst = &mut gx[plane * h * w..(plane + 1) * h * w];
                        for r in 0..oh {
                            for col in 0..ow {
                                gdst[(r / 2) * w + col / 2] += gsrc[r * ow + col];
                            }
                        }
                    }
                    gx
                })]
            }),
        ))
    }

    /// Nearest-neighbor 2x downsampling (keeps the top-left sample of each
    /// 2x2 cell). Spatial extents must be even.
    pub fn downsample_nearest2(&self) -> Result<Tensor<E>> {
        let (n, c, h, w) = dims4("downsample_nearest2", self)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidShape {
                op: "downsample_nearest2",
                shape: self.shape().to_vec(),
                reason: "spatial extents must be even",
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![E::zero(); n * c * oh * ow];
        for plane in 0..n * c {
            let src = &self.data()[plane * h * w..(plane + 1) * h * w];
            let dst = &mut out[plane * oh * ow..(plane + 1) * oh * ow];
            for r in 0..oh {
                for col in 0..ow {
                    dst[r * ow + col] = src[(r * 2) * w + col * 2];
                }
            }
        }
        let need = self.requires_grad();
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            Box::new(move |g| {
                vec![need.then(|| {
                    let mut gx = vec![E::zero(); n * c * h * w];
                    for plane in 0..n * c {
                        let gsrc = &g[plane * oh * ow..(plane + 1) * oh * ow];
                        let gdst = &mut gx[plane * h * w..(plane + 1) * h * w];
                        for r in 0..oh {
                            for col in 0..ow {
                                gdst[(r * 2) * w + col * 2] = gsrc[r * ow + col];
                            }
                        }
                    }
                    gx
                })]
            }),
        ))
    }

    /// Concatenate two `[n, c, h, w]` tensors along the channel axis.
    pub fn concat_channels(&self, rhs: &Tensor<E>) -> Result<Tensor<E>> {
        let (n, c1, h, w) = dims4("concat_channels", self)?;
        let (n2, c2, h2, w2) = dims4("concat_channels", rhs)?;
        if n != n2 || h != h2 || w != w2 {
            return Err(Error::ShapeMismatch {
                op: "concat_channels",
                lhs: self.shape().to_vec(),
                rhs: rhs.shape().to_vec(),
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity((c1 + c2) * n * plane);
        for ni in 0..n {
            data.extend_from_slice(&self.data()[ni * c1 * plane..(ni + 1) * c1 * plane]);
            data.extend_from_slice(&rhs.data()[ni * c2 * plane..(ni + 1) * c2 * plane]);
        }
        let (na, nb) = (self.requires_grad(), rhs.requires_grad());
        Ok(Tensor::from_op(
            vec![n, c1 + c2, h, w],
            data,
            vec![self.clone(), rhs.clone()],
            Box::new(move |g| {
                let stride = (c1 + c2) * plane;
                let ga = na.then(|| {
                    let mut ga = Vec::with_capacity(n * c1 * plane);
                    for ni in 0..n {
                        ga.extend_from_slice(&g[ni * stride..ni * stride + c1 * plane]);
                    }
                    ga
                });
                let gb = nb.then(|| {
                    let mut gb = Vec::with_capacity(n * c2 * plane);
                    for ni in 0..n {
                        gb.extend_from_slice(
                            &g[ni * stride + c1 * plane..(ni + 1) * stride],
                        );
                    }
                    gb
                });
                vec![ga, gb]
            }),
        ))
    }

    /// Channel slice `[start, start + len)` of a `[n, c, h, w]` tensor.
    pub fn slice_channels(&self, start: usize, len: usize) -> Result<Tensor<E>> {
        let (n, c, h, w) = dims4("slice_channels", self)?;
        if start + len > c || len == 0 {
            return Err(Error::InvalidShape {
                op: "slice_channels",
                shape: self.shape().to_vec(),
                reason: "channel range out of bounds",
            });
        }
        let plane = h * w;
        let mut data = Vec::with_capacity(n * len * plane);
        for ni in 0..n {
            let base = (ni * c + start) * plane;
            data.extend_from_slice(&self.data()[base..base + len * plane]);
        }
        let need = self.requires_grad();
        Ok(Tensor::from_op(
            vec![n, len, h, w],
            data,
            vec![self.clone()],
            Box::new(move |g| {
                vec![need.then(|| {
                    let mut gx = vec![E::zero(); n * c * plane];
                    for ni in 0..n {
                        let base = (ni * c + start) * plane;
                        gx[base..base + len * plane]
                            .copy_from_slice(&g[ni * len * plane..(ni + 1) * len * plane]);
                    }
                    gx
                })]
            }),
        ))
    }

    /// Mean absolute difference; the training loss.
    pub fn l1_loss(&self, target: &Tensor<E>) -> Result<Tensor<E>> {
        self.sub(target)?.abs()?.mean()
    }
}
