//! Raw compute kernels behind the tensor operations.
//!
//! Kernels are generic over the element type and parallelize only across
//! independent output regions, so results are bitwise identical regardless
//! of thread count. The 3x3 convolutions (all the network uses) take a
//! shifted-window fast path with fully unrolled taps; other kernel sizes go
//! through a straightforward generic path.

use rayon::prelude::*;

use super::Element;

/// Minimum per-task scalar ops before a kernel bothers with rayon.
const PAR_THRESHOLD: usize = 1 << 15;

/// Border handling for convolutions. Plain convolutions zero-pad; the
/// difference-convolution family replicates edges so that constant inputs
/// stay constant after padding (exact nulling at the borders too).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PadMode {
    Zero,
    Replicate,
}

pub(crate) fn pad_nchw<E: Element>(
    x: &[E],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    pad: usize,
    mode: PadMode,
) -> Vec<E> {
    if pad == 0 {
        return x.to_vec();
    }
    let hp = h + 2 * pad;
    let wp = w + 2 * pad;
    let mut out = vec![E::zero(); n * c * hp * wp];
    for plane in 0..n * c {
        let src = &x[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * hp * wp..(plane + 1) * hp * wp];
        for row in 0..h {
            let d = (row + pad) * wp + pad;
            dst[d..d + w].copy_from_slice(&src[row * w..(row + 1) * w]);
        }
        if mode == PadMode::Replicate {
            for rp in 0..hp {
                let r = rp.saturating_sub(pad).min(h - 1);
                for cp in 0..wp {
                    if rp >= pad && rp < h + pad && cp >= pad && cp < w + pad {
                        continue;
                    }
                    let c0 = cp.saturating_sub(pad).min(w - 1);
                    dst[rp * wp + cp] = src[r * w + c0];
                }
            }
        }
    }
    out
}

/// Dot product with eight striped partial sums folded in a fixed order:
/// deterministic, and the independent stripes let the loop vectorize under
/// strict floating-point semantics.
#[inline]
fn striped_dot<E: Element>(a: &[E], b: &[E]) -> E {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [E::zero(); 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let x = &a[i * 8..i * 8 + 8];
        let y = &b[i * 8..i * 8 + 8];
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = E::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// One 3x3-convolved output plane accumulated over input channels.
fn conv3x3_plane<E: Element>(
    xp: &[E],
    c: usize,
    hp: usize,
    wp: usize,
    // weights for this output channel, layout [c, 9]
    wrow: &[E],
    bias: E,
    plane: &mut [E],
    acc: &mut [E],
) {
    let oh = hp - 2;
    let ow = wp - 2;
    for row in 0..oh {
        let acc = &mut acc[..ow];
        acc.fill(bias);
        for ci in 0..c {
            let base = ci * hp * wp + row * wp;
            let r0 = &xp[base..base + ow + 2];
            let r1 = &xp[base + wp..base + wp + ow + 2];
            let r2 = &xp[base + 2 * wp..base + 2 * wp + ow + 2];
            let wk = &wrow[ci * 9..ci * 9 + 9];
            let (w00, w01, w02) = (wk[0], wk[1], wk[2]);
            let (w10, w11, w12) = (wk[3], wk[4], wk[5]);
            let (w20, w21, w22) = (wk[6], wk[7], wk[8]);
            for j in 0..ow {
                acc[j] += w00 * r0[j]
                    + w01 * r0[j + 1]
                    + w02 * r0[j + 2]
                    + w10 * r1[j]
                    + w11 * r1[j + 1]
                    + w12 * r1[j + 2]
                    + w20 * r2[j]
                    + w21 * r2[j + 1]
                    + w22 * r2[j + 2];
            }
        }
        plane[row * ow..(row + 1) * ow].copy_from_slice(&acc[..ow]);
    }
}

/// Plain convolution, stride 1, on an already padded input.
/// `xp` is `[n, c, hp, wp]`, weights `[o, c, kh, kw]`, output `[n, o, oh, ow]`.
pub(crate) fn conv2d_fwd<E: Element>(
    xp: &[E],
    n: usize,
    c: usize,
    hp: usize,
    wp: usize,
    wgt: &[E],
    o: usize,
    kh: usize,
    kw: usize,
    bias: Option<&[E]>,
) -> Vec<E> {
    let oh = hp - kh + 1;
    let ow = wp - kw + 1;
    let mut out = vec![E::zero(); n * o * oh * ow];
    let work = c * kh * kw * oh * ow;
    if kh == 3 && kw == 3 {
        let body = |(idx, plane): (usize, &mut [E])| {
            let ni = idx / o;
            let oi = idx % o;
            let b = bias.map(|b| b[oi]).unwrap_or_else(E::zero);
            let mut acc = vec![E::zero(); ow];
            conv3x3_plane(
                &xp[ni * c * hp * wp..(ni + 1) * c * hp * wp],
                c,
                hp,
                wp,
                &wgt[oi * c * 9..(oi + 1) * c * 9],
                b,
                plane,
                &mut acc,
            );
        };
        if work >= PAR_THRESHOLD && n * o > 1 {
            out.par_chunks_mut(oh * ow).enumerate().for_each(body);
        } else {
            out.chunks_mut(oh * ow).enumerate().for_each(body);
        }
        return out;
    }
    let body = |(idx, plane): (usize, &mut [E])| {
        let ni = idx / o;
        let oi = idx % o;
        if let Some(b) = bias {
            plane.fill(b[oi]);
        }
        for ci in 0..c {
            let xplane = &xp[(ni * c + ci) * hp * wp..(ni * c + ci + 1) * hp * wp];
            for kr in 0..kh {
                for kc in 0..kw {
                    let wv = wgt[((oi * c + ci) * kh + kr) * kw + kc];
                    for row in 0..oh {
                        let xrow = &xplane[(row + kr) * wp + kc..(row + kr) * wp + kc + ow];
                        let orow = &mut plane[row * ow..(row + 1) * ow];
                        for j in 0..ow {
                            orow[j] += wv * xrow[j];
                        }
                    }
                }
            }
        }
    };
    if work >= PAR_THRESHOLD && n * o > 1 {
        out.par_chunks_mut(oh * ow).enumerate().for_each(body);
    } else {
        out.chunks_mut(oh * ow).enumerate().for_each(body);
    }
    out
}

/// Gradient w.r.t. the (unpadded) convolution input. Expressed as a
/// convolution of the padded output gradient with the tap-reversed kernel,
/// which reuses the 3x3 fast path. For replicate padding, the gradient of
/// the padded plane is folded back onto the clamped source pixels.
pub(crate) fn conv2d_grad_x<E: Element>(
    gout: &[E],
    n: usize,
    o: usize,
    oh: usize,
    ow: usize,
    wgt: &[E],
    c: usize,
    kh: usize,
    kw: usize,
    h: usize,
    w: usize,
    pad: usize,
    mode: PadMode,
) -> Vec<E> {
    debug_assert!(kh > pad && kw > pad);
    // Flip taps and swap the channel roles: wfl[ci][oi][tap] = w[oi][ci][rev tap].
    let mut wfl = vec![E::zero(); c * o * kh * kw];
    for oi in 0..o {
        for ci in 0..c {
            for tap in 0..kh * kw {
                wfl[(ci * o + oi) * kh * kw + (kh * kw - 1 - tap)] =
                    wgt[(oi * c + ci) * kh * kw + tap];
            }
        }
    }
    match mode {
        PadMode::Zero => {
            let gpad = pad_nchw(gout, n, o, oh, ow, kh - 1 - pad, PadMode::Zero);
            let (ghp, gwp) = (oh + 2 * (kh - 1 - pad), ow + 2 * (kw - 1 - pad));
            let gx = conv2d_fwd(&gpad, n, o, ghp, gwp, &wfl, c, kh, kw, None);
            debug_assert_eq!(gx.len(), n * c * h * w);
            gx
        }
        PadMode::Replicate => {
            // Gradient w.r.t. the padded input, then the pad adjoint.
            let gpad = pad_nchw(gout, n, o, oh, ow, kh - 1, PadMode::Zero);
            let (ghp, gwp) = (oh + 2 * (kh - 1), ow + 2 * (kw - 1));
            let gxp = conv2d_fwd(&gpad, n, o, ghp, gwp, &wfl, c, kh, kw, None);
            let (hp, wp) = (h + 2 * pad, w + 2 * pad);
            debug_assert_eq!(gxp.len(), n * c * hp * wp);
            let mut gx = vec![E::zero(); n * c * h * w];
            for plane in 0..n * c {
                let src = &gxp[plane * hp * wp..(plane + 1) * hp * wp];
                let dst = &mut gx[plane * h * w..(plane + 1) * h * w];
                for rp in 0..hp {
                    let r = rp.saturating_sub(pad).min(h - 1);
                    for cp in 0..wp {
                        let c0 = cp.saturating_sub(pad).min(w - 1);
                        dst[r * w + c0] += src[rp * wp + cp];
                    }
                }
            }
            gx
        }
    }
}

/// Correlation of an output-gradient plane against a shifted input plane:
/// one pass per kernel tap with striped accumulators hoisted over rows.
#[inline]
fn tap_dot<E: Element>(
    gplane: &[E],
    xplane: &[E],
    oh: usize,
    ow: usize,
    wp: usize,
    kr: usize,
    kc: usize,
) -> E {
    let mut acc = [E::zero(); 8];
    let mut tail = E::zero();
    let chunks = ow / 8;
    for row in 0..oh {
        let grow = &gplane[row * ow..(row + 1) * ow];
        let xrow = &xplane[(row + kr) * wp + kc..(row + kr) * wp + kc + ow];
        for i in 0..chunks {
            let g = &grow[i * 8..i * 8 + 8];
            let x = &xrow[i * 8..i * 8 + 8];
            for k in 0..8 {
                acc[k] += g[k] * x[k];
            }
        }
        for i in chunks * 8..ow {
            tail += grow[i] * xrow[i];
        }
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// Gradient w.r.t. convolution weights; input is the padded activation.
pub(crate) fn conv2d_grad_w<E: Element>(
    gout: &[E],
    xp: &[E],
    n: usize,
    c: usize,
    hp: usize,
    wp: usize,
    o: usize,
    kh: usize,
    kw: usize,
) -> Vec<E> {
    let oh = hp - kh + 1;
    let ow = wp - kw + 1;
    let mut gw = vec![E::zero(); o * c * kh * kw];
    let work = n * c * kh * kw * oh * ow;
    let body = |(oi, wplane): (usize, &mut [E])| {
        for ni in 0..n {
            let gplane = &gout[(ni * o + oi) * oh * ow..(ni * o + oi + 1) * oh * ow];
            for ci in 0..c {
                let xplane = &xp[(ni * c + ci) * hp * wp..(ni * c + ci + 1) * hp * wp];
                for kr in 0..kh {
                    for kc in 0..kw {
                        wplane[(ci * kh + kr) * kw + kc] +=
                            tap_dot(gplane, xplane, oh, ow, wp, kr, kc);
                    }
                }
            }
        }
    };
    if work >= PAR_THRESHOLD && o > 1 {
        gw.par_chunks_mut(c * kh * kw).enumerate().for_each(body);
    } else {
        gw.chunks_mut(c * kh * kw).enumerate().for_each(body);
    }
    gw
}

pub(crate) fn conv2d_grad_b<E: Element>(gout: &[E], n: usize, o: usize, plane: usize) -> Vec<E> {
    let mut gb = vec![E::zero(); o];
    for ni in 0..n {
        for oi in 0..o {
            let g = &gout[(ni * o + oi) * plane..(ni * o + oi + 1) * plane];
            let mut acc = E::zero();
            for v in g {
                acc += *v;
            }
            gb[oi] += acc;
        }
    }
    gb
}

/// The four difference-convolution variants. Each 3x3 tap is paired with a
/// neighboring tap and the branch responds to `w_i * (x_i - x_pair(i))`, so
/// constant inputs produce exactly zero for any weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiffKind {
    /// Every tap differences against the center tap.
    Central,
    /// Ring taps difference against their 45-degree clockwise neighbor.
    Angular,
    /// Taps difference against the horizontally adjacent tap.
    Horizontal,
    /// Taps difference against the vertically adjacent tap.
    Vertical,
}

impl DiffKind {
    /// Pair table: `pairs()[tap]` is the tap subtracted from `tap`.
    /// Taps are indexed row-major over the 3x3 kernel. Self-paired taps
    /// contribute exactly zero.
    pub fn pairs(self) -> [usize; 9] {
        match self {
            DiffKind::Central => [4; 9],
            // Ring order: 0 1 2 / 3 _ 5 / 6 7 8, clockwise rotation by one.
            DiffKind::Angular => [1, 2, 5, 0, 4, 8, 3, 6, 7],
            DiffKind::Horizontal => [1, 2, 1, 4, 5, 4, 7, 8, 7],
            DiffKind::Vertical => [3, 4, 5, 6, 7, 8, 3, 4, 5],
        }
    }

    /// Map a learnable 3x3 kernel to the plain kernel with identical response.
    pub fn transform<E: Element>(self, w: &[E]) -> Vec<E> {
        debug_assert_eq!(w.len() % 9, 0);
        let pairs = self.pairs();
        let mut out = vec![E::zero(); w.len()];
        for k in 0..w.len() / 9 {
            let src = &w[k * 9..(k + 1) * 9];
            let dst = &mut out[k * 9..(k + 1) * 9];
            for tap in 0..9 {
                dst[tap] += src[tap];
                dst[pairs[tap]] -= src[tap];
            }
        }
        out
    }
}

/// Difference convolution forward on a padded input (3x3 kernels, stride 1).
/// Computed in difference form so constant inputs are nulled exactly.
pub(crate) fn diffconv2d_fwd<E: Element>(
    xp: &[E],
    n: usize,
    c: usize,
    hp: usize,
    wp: usize,
    wgt: &[E],
    o: usize,
    kind: DiffKind,
) -> Vec<E> {
    let oh = hp - 2;
    let ow = wp - 2;
    let pairs = kind.pairs();
    // Per-tap start offsets of the tap row and its paired row within a plane.
    let off = |tap: usize| (tap / 3) * wp + tap % 3;
    let aoff: Vec<usize> = (0..9).map(off).collect();
    let boff: Vec<usize> = (0..9).map(|t| off(pairs[t])).collect();
    let mut out = vec![E::zero(); n * o * oh * ow];
    let work = c * 9 * oh * ow;
    let body = |(idx, plane): (usize, &mut [E])| {
        let ni = idx / o;
        let oi = idx % o;
        let mut acc = vec![E::zero(); ow];
        for row in 0..oh {
            let acc = &mut acc[..ow];
            acc.fill(E::zero());
            for ci in 0..c {
                let base = (ni * c + ci) * hp * wp + row * wp;
                let wk = &wgt[(oi * c + ci) * 9..(oi * c + ci) * 9 + 9];
                let s = |k: usize| &xp[base + aoff[k]..base + aoff[k] + ow];
                let p = |k: usize| &xp[base + boff[k]..base + boff[k] + ow];
                let (a0, b0) = (s(0), p(0));
                let (a1, b1) = (s(1), p(1));
                let (a2, b2) = (s(2), p(2));
                let (a3, b3) = (s(3), p(3));
                let (a4, b4) = (s(4), p(4));
                let (a5, b5) = (s(5), p(5));
                let (a6, b6) = (s(6), p(6));
                let (a7, b7) = (s(7), p(7));
                let (a8, b8) = (s(8), p(8));
                // Self-paired taps contribute exact zeros.
                for j in 0..ow {
                    acc[j] += wk[0] * (a0[j] - b0[j])
                        + wk[1] * (a1[j] - b1[j])
                        + wk[2] * (a2[j] - b2[j])
                        + wk[3] * (a3[j] - b3[j])
                        + wk[4] * (a4[j] - b4[j])
                        + wk[5] * (a5[j] - b5[j])
                        + wk[6] * (a6[j] - b6[j])
                        + wk[7] * (a7[j] - b7[j])
                        + wk[8] * (a8[j] - b8[j]);
                }
            }
            plane[row * ow..(row + 1) * ow].copy_from_slice(&acc[..ow]);
        }
    };
    if work >= PAR_THRESHOLD && n * o > 1 {
        out.par_chunks_mut(oh * ow).enumerate().for_each(body);
    } else {
        out.chunks_mut(oh * ow).enumerate().for_each(body);
    }
    out
}

/// Gradient w.r.t. difference-convolution weights: the gradient of
/// `w_tap (x_tap - x_pair)` is the plain tap correlation minus the paired
/// tap correlation.
pub(crate) fn diffconv2d_grad_w<E: Element>(
    gout: &[E],
    xp: &[E],
    n: usize,
    c: usize,
    hp: usize,
    wp: usize,
    o: usize,
    kind: DiffKind,
) -> Vec<E> {
    let oh = hp - 2;
    let ow = wp - 2;
    let pairs = kind.pairs();
    let mut gw = vec![E::zero(); o * c * 9];
    let work = n * c * 9 * oh * ow;
    let body = |(oi, wplane): (usize, &mut [E])| {
        for ni in 0..n {
            let gplane = &gout[(ni * o + oi) * oh * ow..(ni * o + oi + 1) * oh * ow];
            for ci in 0..c {
                let xplane = &xp[(ni * c + ci) * hp * wp..(ni * c + ci + 1) * hp * wp];
                let mut dots = [E::zero(); 9];
                for (tap, dot) in dots.iter_mut().enumerate() {
                    *dot = tap_dot(gplane, xplane, oh, ow, wp, tap / 3, tap % 3);
                }
                for tap in 0..9 {
                    if pairs[tap] != tap {
                        wplane[ci * 9 + tap] += dots[tap] - dots[pairs[tap]];
                    }
                }
            }
        }
    };
    if work >= PAR_THRESHOLD && o > 1 {
        gw.par_chunks_mut(c * 9).enumerate().for_each(body);
    } else {
        gw.chunks_mut(c * 9).enumerate().for_each(body);
    }
    gw
}

/// Branch weights of a residual difference-convolution unit: one vanilla
/// 3x3 kernel plus one kernel per enabled difference variant.
#[derive(Clone, Copy)]
pub(crate) struct RdcWeights<'a, E: Element> {
    pub vanilla: &'a [E],
    pub central: Option<&'a [E]>,
    pub angular: Option<&'a [E]>,
    pub horizontal: Option<&'a [E]>,
    pub vertical: Option<&'a [E]>,
}

impl<'a, E: Element> RdcWeights<'a, E> {
    pub fn enabled(&self) -> Vec<(DiffKind, &'a [E])> {
        let mut v = Vec::new();
        if let Some(w) = self.central {
            v.push((DiffKind::Central, w));
        }
        if let Some(w) = self.angular {
            v.push((DiffKind::Angular, w));
        }
        if let Some(w) = self.horizontal {
            v.push((DiffKind::Horizontal, w));
        }
        if let Some(w) = self.vertical {
            v.push((DiffKind::Vertical, w));
        }
        v
    }

    /// Plain kernel with the same response as the branch sum.
    pub fn merged(&self) -> Vec<E> {
        let mut merged = self.vanilla.to_vec();
        for (kind, w) in self.enabled() {
            for (m, t) in merged.iter_mut().zip(kind.transform(w)) {
                *m += t;
            }
        }
        merged
    }
}

/// Fused forward pass of the five-branch sum
/// `conv(x, w_vanilla) + sum_k diffconv(x, w_k)` on a padded input.
/// Branches are evaluated in difference form sharing one sweep over the
/// input, so disabled or zero difference branches change nothing and
/// constant inputs excite only the vanilla branch.
pub(crate) fn rdc_fwd<E: Element>(
    xp: &[E],
    n: usize,
    c: usize,
    hp: usize,
    wp: usize,
    weights: RdcWeights<'_, E>,
    bias: &[E],
    o: usize,
) -> Vec<E> {
    let oh = hp - 2;
    let ow = wp - 2;
    let mut out = vec![E::zero(); n * o * oh * ow];
    let enabled = weights.enabled();
    let all = enabled.len() == 4;
    let work = c * 9 * (1 + enabled.len()) * oh * ow;
    let body = |(idx, plane): (usize, &mut [E])| {
        let ni = idx / o;
        let oi = idx % o;
        let mut acc = vec![E::zero(); ow];
        let xbase = ni * c * hp * wp;
        for row in 0..oh {
            let acc = &mut acc[..ow];
            acc.fill(bias[oi]);
            for ci in 0..c {
                let base = xbase + ci * hp * wp + row * wp;
                let r0 = &xp[base..base + ow + 2];
                let r1 = &xp[base + wp..base + wp + ow + 2];
                let r2 = &xp[base + 2 * wp..base + 2 * wp + ow + 2];
                let k = (oi * c + ci) * 9;
                let wv = &weights.vanilla[k..k + 9];
                if all {
                    let wc = &weights.central.unwrap()[k..k + 9];
                    let wa = &weights.angular.unwrap()[k..k + 9];
                    let wh = &weights.horizontal.unwrap()[k..k + 9];
                    let wd = &weights.vertical.unwrap()[k..k + 9];
                    for j in 0..ow {
                        let x00 = r0[j];
                        let x01 = r0[j + 1];
                        let x02 = r0[j + 2];
                        let x10 = r1[j];
                        let x11 = r1[j + 1];
                        let x12 = r1[j + 2];
                        let x20 = r2[j];
                        let x21 = r2[j + 1];
                        let x22 = r2[j + 2];
                        let mut s = wv[0] * x00
                            + wv[1] * x01
                            + wv[2] * x02
                            + wv[3] * x10
                            + wv[4] * x11
                            + wv[5] * x12
                            + wv[6] * x20
                            + wv[7] * x21
                            + wv[8] * x22;
                        // central: every tap against the center
                        s += wc[0] * (x00 - x11)
                            + wc[1] * (x01 - x11)
                            + wc[2] * (x02 - x11)
                            + wc[3] * (x10 - x11)
                            + wc[5] * (x12 - x11)
                            + wc[6] * (x20 - x11)
                            + wc[7] * (x21 - x11)
                            + wc[8] * (x22 - x11);
                        // angular: clockwise ring neighbor
                        s += wa[0] * (x00 - x01)
                            + wa[1] * (x01 - x02)
                            + wa[2] * (x02 - x12)
                            + wa[3] * (x10 - x00)
                            + wa[5] * (x12 - x22)
                            + wa[6] * (x20 - x10)
                            + wa[7] * (x21 - x20)
                            + wa[8] * (x22 - x21);
                        // horizontal neighbors
                        s += wh[0] * (x00 - x01)
                            + wh[1] * (x01 - x02)
                            + wh[2] * (x02 - x01)
                            + wh[3] * (x10 - x11)
                            + wh[4] * (x11 - x12)
                            + wh[5] * (x12 - x11)
                            + wh[6] * (x20 - x21)
                            + wh[7] * (x21 - x22)
                            + wh[8] * (x22 - x21);
                        // vertical neighbors
                        s += wd[0] * (x00 - x10)
                            + wd[1] * (x01 - x11)
                            + wd[2] * (x02 - x12)
                            + wd[3] * (x10 - x20)
                            + wd[4] * (x11 - x21)
                            + wd[5] * (x12 - x22)
                            + wd[6] * (x20 - x10)
                            + wd[7] * (x21 - x11)
                            + wd[8] * (x22 - x12);
                        acc[j] += s;
                    }
                } else {
                    for j in 0..ow {
                        acc[j] += wv[0] * r0[j]
                            + wv[1] * r0[j + 1]
                            + wv[2] * r0[j + 2]
                            + wv[3] * r1[j]
                            + wv[4] * r1[j + 1]
                            + wv[5] * r1[j + 2]
                            + wv[6] * r2[j]
                            + wv[7] * r2[j + 1]
                            + wv[8] * r2[j + 2];
                    }
                    for &(kind, w) in &enabled {
                        let pairs = kind.pairs();
                        let wk = &w[k..k + 9];
                        for tap in 0..9 {
                            let pair = pairs[tap];
                            if pair == tap {
                                continue;
                            }
                            let aoff = (tap / 3) * wp + tap % 3;
                            let boff = (pair / 3) * wp + pair % 3;
                            let a = &xp[base + aoff..base + aoff + ow];
                            let b = &xp[base + boff..base + boff + ow];
                            let wt = wk[tap];
                            for j in 0..ow {
                                acc[j] += wt * (a[j] - b[j]);
                            }
                        }
                    }
                }
            }
            plane[row * ow..(row + 1) * ow].copy_from_slice(&acc[..ow]);
        }
    };
    if work >= PAR_THRESHOLD && n * o > 1 {
        out.par_chunks_mut(oh * ow).enumerate().for_each(body);
    } else {
        out.chunks_mut(oh * ow).enumerate().for_each(body);
    }
    out
}

/// Weight gradients for every branch of the fused unit in one sweep: the
/// nine plain tap correlations determine the vanilla gradient directly and
/// every difference-branch gradient as tap-pair differences.
pub(crate) fn rdc_grad_w<E: Element>(
    gout: &[E],
    xp: &[E],
    n: usize,
    c: usize,
    hp: usize,
    wp: usize,
    o: usize,
    kinds: &[DiffKind],
) -> (Vec<E>, Vec<Vec<E>>) {
    let oh = hp - 2;
    let ow = wp - 2;
    let mut gw_all = vec![E::zero(); (1 + kinds.len()) * o * c * 9];
    let work = n * c * 9 * oh * ow;
    let stride = c * 9;
    let total = o * c * 9;
    let kinds_owned: Vec<DiffKind> = kinds.to_vec();
    {
        let body = |(oi, chunk): (usize, &mut [E])| {
            // chunk holds [vanilla | kind 0 | kind 1 | ...] for this output
            // channel, each of size c * 9.
            for ni in 0..n {
                let gplane = &gout[(ni * o + oi) * oh * ow..(ni * o + oi + 1) * oh * ow];
                for ci in 0..c {
                    let xplane = &xp[(ni * c + ci) * hp * wp..(ni * c + ci + 1) * hp * wp];
                    let mut dots = [E::zero(); 9];
                    for (tap, dot) in dots.iter_mut().enumerate() {
                        *dot = tap_dot(gplane, xplane, oh, ow, wp, tap / 3, tap % 3);
                    }
                    for tap in 0..9 {
                        chunk[ci * 9 + tap] += dots[tap];
                    }
                    for (ki, kind) in kinds_owned.iter().enumerate() {
                        let pairs = kind.pairs();
                        let dst = &mut chunk[(ki + 1) * stride + ci * 9..(ki + 1) * stride + ci * 9 + 9];
                        for tap in 0..9 {
                            if pairs[tap] != tap {
                                dst[tap] += dots[tap] - dots[pairs[tap]];
                            }
                        }
                    }
                }
            }
        };
        // Regroup: parallelize over output channels with interleaved layout
        // [o][branch][c][9], then split below.
        let mut interleaved = vec![E::zero(); o * (1 + kinds.len()) * stride];
        if work >= PAR_THRESHOLD && o > 1 {
            interleaved
                .par_chunks_mut((1 + kinds.len()) * stride)
                .enumerate()
                .for_each(body);
        } else {
            interleaved
                .chunks_mut((1 + kinds.len()) * stride)
                .enumerate()
                .for_each(body);
        }
        for oi in 0..o {
            for br in 0..1 + kinds.len() {
                let src = &interleaved[oi * (1 + kinds.len()) * stride + br * stride
                    ..oi * (1 + kinds.len()) * stride + (br + 1) * stride];
                gw_all[br * total + oi * stride..br * total + (oi + 1) * stride]
                    .copy_from_slice(src);
            }
        }
    }
    let gwv = gw_all[..total].to_vec();
    let gks = (0..kinds.len())
        .map(|ki| gw_all[(ki + 1) * total..(ki + 2) * total].to_vec())
        .collect();
    (gwv, gks)
}

/// C = A[m,k] * B[k,n]
pub(crate) fn matmul_nn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    let body = |(i, orow): (usize, &mut [E])| {
        let arow = &a[i * k..(i + 1) * k];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
    out
}

/// C = A[m,k] * B[n,k]^T
pub(crate) fn matmul_nt<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    let body = |(i, orow): (usize, &mut [E])| {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            orow[j] = striped_dot(arow, brow);
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
    out
}

/// C = A[k,m]^T * B[k,n]
pub(crate) fn matmul_tn<E: Element>(a: &[E], b: &[E], m: usize, k: usize, n: usize) -> Vec<E> {
    let mut out = vec![E::zero(); m * n];
    let body = |(i, orow): (usize, &mut [E])| {
        for kk in 0..k {
            let av = a[kk * m + i];
            let brow = &b[kk * n..(kk + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    };
    if m * k * n >= PAR_THRESHOLD && m > 1 {
        out.par_chunks_mut(n).enumerate().for_each(body);
    } else {
        out.chunks_mut(n).enumerate().for_each(body);
    }
    out
}
