//! Losses: masked Dice over two classes, and masked mean absolute
//! error for sparse regression targets.
//!
//! Both return the scalar loss together with the gradient with respect
//! to the prediction tensor; pixels outside the mask get zero gradient.

use crate::error::{Error, Result};
use crate::kernel::Scalar;
use crate::tensor::Tensor;

/// Soft Dice loss over the two-channel probability map `p` against
/// one-hot labels `g`, restricted to `mask` (layout N x H x W, true =
/// labeled and valid). Per class c:
///
///   term_c = 1 - (2 * sum(p*g) + eps) / (sum(p) + sum(g) + eps)
///
/// with sums over masked pixels; the loss is the sum over both classes,
/// so it lies in [0, 2]. Sums accumulate in f64 regardless of `S`.
pub fn dice_loss<S: Scalar>(
    p: &Tensor<S>,
    g: &Tensor<S>,
    mask: &[bool],
    eps: f64,
) -> Result<(f64, Tensor<S>)> {
    let (n, c, h, w) = p.nchw()?;
    if c != 2 || !g.same_shape(p) {
        return Err(Error::ShapeMismatch {
            op: "dice_loss",
            detail: format!("p {:?}, g {:?}", p.dims(), g.dims()),
        });
    }
    let plane = h * w;
    if mask.len() != n * plane {
        return Err(Error::ShapeMismatch {
            op: "dice_loss",
            detail: format!("mask length {} for {} pixels", mask.len(), n * plane),
        });
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::EmptyMask);
    }

    let mut inter = [0.0f64; 2];
    let mut psum = [0.0f64; 2];
    let mut gsum = [0.0f64; 2];
    for s in 0..n {
        for ch in 0..2 {
            let pp = p.plane(s, ch);
            let gp = g.plane(s, ch);
            let mrow = &mask[s * plane..(s + 1) * plane];
            for i in 0..plane {
                if mrow[i] {
                    let pv = pp[i].to_f64();
                    let gv = gp[i].to_f64();
                    inter[ch] += pv * gv;
                    psum[ch] += pv;
                    gsum[ch] += gv;
                }
            }
        }
    }

    let mut loss = 0.0;
    // Per class, d(term)/dp_i = -(u*g_i - v) / d2 on masked pixels,
    // where u = 2(B+eps), v = 2A+eps, d2 = (B+eps)^2.
    let mut coef_u = [0.0f64; 2];
    let mut coef_v = [0.0f64; 2];
    let mut denom2 = [0.0f64; 2];
    for ch in 0..2 {
        let a = inter[ch];
        let b = psum[ch] + gsum[ch];
        loss += 1.0 - (2.0 * a + eps) / (b + eps);
        coef_u[ch] = 2.0 * (b + eps);
        coef_v[ch] = 2.0 * a + eps;
        denom2[ch] = (b + eps) * (b + eps);
    }

    let mut grad = Tensor::zeros_like(p);
    for s in 0..n {
        for ch in 0..2 {
            let gp = g.plane(s, ch);
            let mrow = &mask[s * plane..(s + 1) * plane];
            let gout = grad.plane_mut(s, ch);
            for i in 0..plane {
                if mrow[i] {
                    let gv = gp[i].to_f64();
                    gout[i] = S::from_f64(-(coef_u[ch] * gv - coef_v[ch]) / denom2[ch]);
                }
            }
        }
    }
    Ok((loss, grad))
}

/// Mean absolute error over masked elements; `mask` is elementwise over
/// the flattened tensor. The subgradient at zero difference is zero.
pub fn masked_l1_loss<S: Scalar>(
    pred: &Tensor<S>,
    target: &Tensor<S>,
    mask: &[bool],
) -> Result<(f64, Tensor<S>)> {
    if !pred.same_shape(target) {
        return Err(Error::ShapeMismatch {
            op: "masked_l1_loss",
            detail: format!("pred {:?}, target {:?}", pred.dims(), target.dims()),
        });
    }
    if mask.len() != pred.len() {
        return Err(Error::ShapeMismatch {
            op: "masked_l1_loss",
            detail: format!("mask length {} for {} elements", mask.len(), pred.len()),
        });
    }
    let m = mask.iter().filter(|&&b| b).count();
    if m == 0 {
        return Err(Error::EmptyMask);
    }

    let mut total = 0.0f64;
    let mut grad = Tensor::zeros_like(pred);
    let gd = grad.data_mut();
    let inv = 1.0 / m as f64;
    for i in 0..pred.len() {
        if mask[i] {
            let d = pred.data()[i].to_f64() - target.data()[i].to_f64();
            total += d.abs();
            gd[i] = S::from_f64(d.signum() * inv);
            if d == 0.0 {
                gd[i] = S::ZERO;
            }
        }
    }
    Ok((total * inv, grad))
}
