//! Forward and backward passes for the fixed layer set.
//!
//! Every backward function takes the saved forward inputs it needs and
//! accumulates parameter gradients (so batches can sum into one
//! gradient), returning the gradient with respect to the layer input.
//!
//! Channel accumulation in the 1x1 convolution runs in a fixed order
//! that depends only on the channel count, never on the spatial size,
//! which keeps tiled inference bitwise identical to a full-image pass.

use crate::error::{Error, Result};
use crate::kernel::Scalar;
use crate::tensor::Tensor;

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::ShapeMismatch { op, detail }
}

/// Per-pixel affine channel mix: x(N,Ci,H,W) * w(Co,Ci) + b(Co).
pub fn conv1x1_forward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    b: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, ci, h, wd) = x.nchw()?;
    let (co, wci) = match w.dims() {
        [co, wci] => (*co, *wci),
        d => return Err(shape_err("conv1x1", format!("weight dims {d:?}"))),
    };
    if wci != ci || b.dims() != [co] {
        return Err(shape_err(
            "conv1x1",
            format!("x {:?}, w {:?}, b {:?}", x.dims(), w.dims(), b.dims()),
        ));
    }

    let mut y = Tensor::zeros(vec![n, co, h, wd]);
    let wv = w.data();
    let bv = b.data();
    for s in 0..n {
        for o in 0..co {
            y.plane_mut(s, o).fill(bv[o]);
        }
        for o in 0..co {
            let row = &wv[o * ci..(o + 1) * ci];
            let mut i = 0;
            while i + 4 <= ci {
                let a = [row[i], row[i + 1], row[i + 2], row[i + 3]];
                let xs = [
                    x.plane(s, i),
                    x.plane(s, i + 1),
                    x.plane(s, i + 2),
                    x.plane(s, i + 3),
                ];
                S::axpy4(a, xs, y.plane_mut(s, o));
                i += 4;
            }
            while i < ci {
                S::axpy(row[i], x.plane(s, i), y.plane_mut(s, o));
                i += 1;
            }
        }
    }
    Ok(y)
}

/// Accumulates dL/dw into `gw`, dL/db into `gb`; returns dL/dx.
pub fn conv1x1_backward<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    gy: &Tensor<S>,
    gw: &mut Tensor<S>,
    gb: &mut Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, ci, h, wd) = x.nchw()?;
    let (gn, co, gh, gwd) = gy.nchw()?;
    if gn != n || gh != h || gwd != wd || w.dims() != [co, ci] {
        return Err(shape_err(
            "conv1x1_backward",
            format!("x {:?}, w {:?}, gy {:?}", x.dims(), w.dims(), gy.dims()),
        ));
    }
    if !gw.same_shape(w) || gb.dims() != [co] {
        return Err(shape_err("conv1x1_backward", "gradient buffer shapes".into()));
    }

    let mut gx = Tensor::zeros(vec![n, ci, h, wd]);
    let wv = w.data();
    for s in 0..n {
        for o in 0..co {
            let gyp = gy.plane(s, o);
            gb.data_mut()[o] += S::sum(gyp);
            for i in 0..ci {
                gw.data_mut()[o * ci + i] += S::dot(gyp, x.plane(s, i));
            }
        }
        for i in 0..ci {
            for o in 0..co {
                S::axpy(wv[o * ci + i], gy.plane(s, o), gx.plane_mut(s, i));
            }
        }
    }
    Ok(gx)
}

/// Tap offsets for a 3x3 kernel in fixed scan order.
const TAPS: [(isize, isize); 9] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 0),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Row overlap of an offset: output range and matching input start.
fn tap_span(extent: usize, d: isize) -> (usize, usize) {
    // Output index r is valid when r + d lies in [0, extent).
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 {
        extent - d as usize
    } else {
        extent
    };
    (lo, hi)
}

/// Per-channel 3x3 filter with implicit zero padding: x(N,C,H,W) * k(C,3,3).
pub fn depthwise3x3_forward<S: Scalar>(x: &Tensor<S>, k: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.nchw()?;
    if k.dims() != [c, 3, 3] {
        return Err(shape_err(
            "depthwise3x3",
            format!("x {:?}, k {:?}", x.dims(), k.dims()),
        ));
    }

    let mut y = Tensor::zeros(vec![n, c, h, w]);
    let kv = k.data();
    for s in 0..n {
        for ch in 0..c {
            let xp = x.plane(s, ch);
            let yp = y.plane_mut(s, ch);
            for (t, (dy, dx)) in TAPS.iter().enumerate() {
                let a = kv[ch * 9 + t];
                let (r0, r1) = tap_span(h, *dy);
                let (c0, c1) = tap_span(w, *dx);
                if r0 >= r1 || c0 >= c1 {
                    continue;
                }
                for r in r0..r1 {
                    let xi = (r as isize + dy) as usize;
                    let src = &xp[xi * w + (c0 as isize + dx) as usize..][..c1 - c0];
                    let dst = &mut yp[r * w + c0..][..c1 - c0];
                    S::axpy(a, src, dst);
                }
            }
        }
    }
    Ok(y)
}

/// Accumulates dL/dk into `gk`; returns dL/dx.
pub fn depthwise3x3_backward<S: Scalar>(
    x: &Tensor<S>,
    k: &Tensor<S>,
    gy: &Tensor<S>,
    gk: &mut Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.nchw()?;
    if k.dims() != [c, 3, 3] || !gy.same_shape(x) || !gk.same_shape(k) {
        return Err(shape_err(
            "depthwise3x3_backward",
            format!("x {:?}, k {:?}, gy {:?}", x.dims(), k.dims(), gy.dims()),
        ));
    }

    let mut gx = Tensor::zeros(vec![n, c, h, w]);
    let kv = k.data();
    for s in 0..n {
        for ch in 0..c {
            let xp = x.plane(s, ch);
            let gyp = gy.plane(s, ch);
            let gxp = gx.plane_mut(s, ch);
            for (t, (dy, dx)) in TAPS.iter().enumerate() {
                let (r0, r1) = tap_span(h, *dy);
                let (c0, c1) = tap_span(w, *dx);
                if r0 >= r1 || c0 >= c1 {
                    continue;
                }
                let a = kv[ch * 9 + t];
                let mut acc = S::ZERO;
                for r in r0..r1 {
                    let xi = (r as isize + dy) as usize;
                    let xoff = xi * w + (c0 as isize + dx) as usize;
                    let gsrc = &gyp[r * w + c0..][..c1 - c0];
                    // dL/dx at the tapped position picks up k_t * gy.
                    S::axpy(a, gsrc, &mut gxp[xoff..xoff + (c1 - c0)]);
                    acc += S::dot(gsrc, &xp[xoff..xoff + (c1 - c0)]);
                }
                gk.data_mut()[ch * 9 + t] += acc;
            }
        }
    }
    Ok(gx)
}

pub fn relu_forward<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let mut y = x.clone();
    for v in y.data_mut() {
        *v = v.max(S::ZERO);
    }
    y
}

/// Uses the forward output for the mask; gradient at exactly 0 is 0.
pub fn relu_backward<S: Scalar>(y: &Tensor<S>, gy: &Tensor<S>) -> Result<Tensor<S>> {
    if !y.same_shape(gy) {
        return Err(shape_err(
            "relu_backward",
            format!("y {:?}, gy {:?}", y.dims(), gy.dims()),
        ));
    }
    let mut gx = gy.clone();
    for (g, v) in gx.data_mut().iter_mut().zip(y.data()) {
        if !(*v > S::ZERO) {
            *g = S::ZERO;
        }
    }
    Ok(gx)
}

/// Two-way softmax over the channel pair, stabilized by max subtraction.
pub fn softmax2_forward<S: Scalar>(x: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.nchw()?;
    if c != 2 {
        return Err(shape_err("softmax2", format!("need 2 channels, got {c}")));
    }
    let mut y = Tensor::zeros(vec![n, 2, h, w]);
    let p = h * w;
    for s in 0..n {
        for i in 0..p {
            let a = x.plane(s, 0)[i];
            let b = x.plane(s, 1)[i];
            let m = a.max(b);
            let ea = (a - m).exp();
            let eb = (b - m).exp();
            let inv = S::ONE / (ea + eb);
            y.plane_mut(s, 0)[i] = ea * inv;
            y.plane_mut(s, 1)[i] = eb * inv;
        }
    }
    Ok(y)
}

pub fn softmax2_backward<S: Scalar>(y: &Tensor<S>, gy: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = y.nchw()?;
    if c != 2 || !y.same_shape(gy) {
        return Err(shape_err(
            "softmax2_backward",
            format!("y {:?}, gy {:?}", y.dims(), gy.dims()),
        ));
    }
    let mut gx = Tensor::zeros(vec![n, 2, h, w]);
    let p = h * w;
    for s in 0..n {
        for i in 0..p {
            let y0 = y.plane(s, 0)[i];
            let y1 = y.plane(s, 1)[i];
            let g0 = gy.plane(s, 0)[i];
            let g1 = gy.plane(s, 1)[i];
            let pull = g0 * y0 + g1 * y1;
            gx.plane_mut(s, 0)[i] = y0 * (g0 - pull);
            gx.plane_mut(s, 1)[i] = y1 * (g1 - pull);
        }
    }
    Ok(gx)
}

/// Adds the single height channel to every feature channel.
pub fn inject_height_forward<S: Scalar>(x: &Tensor<S>, h: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, hh, ww) = x.nchw()?;
    if h.dims() != [n, 1, hh, ww] {
        return Err(shape_err(
            "inject_height",
            format!("features {:?}, height {:?}", x.dims(), h.dims()),
        ));
    }
    let mut y = x.clone();
    for s in 0..n {
        let hp = h.plane(s, 0).to_vec();
        for ch in 0..c {
            for (v, hv) in y.plane_mut(s, ch).iter_mut().zip(&hp) {
                *v += *hv;
            }
        }
    }
    Ok(y)
}

/// Returns (dL/dx, dL/dh); dL/dh is the channel sum of the upstream
/// gradient.
pub fn inject_height_backward<S: Scalar>(
    gy: &Tensor<S>,
) -> Result<(Tensor<S>, Tensor<S>)> {
    let (n, c, h, w) = gy.nchw()?;
    let gx = gy.clone();
    let mut gh = Tensor::zeros(vec![n, 1, h, w]);
    for s in 0..n {
        for ch in 0..c {
            let src = gy.plane(s, ch);
            let dst = gh.plane_mut(s, 0);
            for (d, g) in dst.iter_mut().zip(src) {
                *d += *g;
            }
        }
    }
    Ok((gx, gh))
}
