//! Central finite-difference verification of every layer's backward
//! pass, in double precision at step 1e-5. Each layer runs 20 random
//! trials; the worst relative error must stay below 1e-4.
//!
//! Scalar losses are built by projecting the layer output onto a fixed
//! random direction, which makes dL/dy the direction itself and keeps
//! the probe sensitive to every output coordinate.

use autodiff::grad_check;
use autodiff::layers::{BlockKind, ResidualBlock};
use autodiff::loss::{dice_loss, masked_l1_loss};
use autodiff::ops::*;
use autodiff::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: usize = 20;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims, rand_vec(rng, n)).unwrap()
}

fn project(y: &Tensor<f64>, dir: &Tensor<f64>) -> f64 {
    y.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum()
}

/// Runs grad_check against `eval`, which must return the loss and the
/// analytic gradient with respect to the probed vector.
fn check(mut x: Vec<f64>, eval: &dyn Fn(&[f64]) -> (f64, Vec<f64>)) -> f64 {
    let analytic = eval(&x).1;
    grad_check(|v| eval(v).0, &mut x, &analytic, STEP)
}

#[test]
fn conv1x1_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (n, ci, co, h, w) = (2, 3, 4, 4, 4);
    for trial in 0..TRIALS {
        let x = rand_tensor(&mut rng, vec![n, ci, h, w]);
        let wt = rand_tensor(&mut rng, vec![co, ci]);
        let b = rand_tensor(&mut rng, vec![co]);
        let dir = rand_tensor(&mut rng, vec![n, co, h, w]);

        let backward = |x: &Tensor<f64>, wt: &Tensor<f64>, b: &Tensor<f64>| {
            let y = conv1x1_forward(x, wt, b).unwrap();
            let mut gw = Tensor::zeros_like(wt);
            let mut gb = Tensor::zeros_like(b);
            let gx = conv1x1_backward(x, wt, &dir, &mut gw, &mut gb).unwrap();
            (project(&y, &dir), gx, gw, gb)
        };

        let e_x = check(x.data().to_vec(), &|v| {
            let xt = Tensor::new(x.dims().to_vec(), v.to_vec()).unwrap();
            let (l, gx, _, _) = backward(&xt, &wt, &b);
            (l, gx.data().to_vec())
        });
        let e_w = check(wt.data().to_vec(), &|v| {
            let wv = Tensor::new(wt.dims().to_vec(), v.to_vec()).unwrap();
            let (l, _, gw, _) = backward(&x, &wv, &b);
            (l, gw.data().to_vec())
        });
        let e_b = check(b.data().to_vec(), &|v| {
            let bv = Tensor::new(b.dims().to_vec(), v.to_vec()).unwrap();
            let (l, _, _, gb) = backward(&x, &wt, &bv);
            (l, gb.data().to_vec())
        });
        for (name, e) in [("x", e_x), ("w", e_w), ("b", e_b)] {
            assert!(e < TOL, "trial {trial}, wrt {name}: rel err {e}");
        }
    }
}

#[test]
fn depthwise3x3_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let (n, c, h, w) = (2, 3, 4, 5);
    for trial in 0..TRIALS {
        let x = rand_tensor(&mut rng, vec![n, c, h, w]);
        let k = rand_tensor(&mut rng, vec![c, 3, 3]);
        let dir = rand_tensor(&mut rng, vec![n, c, h, w]);

        let e_x = check(x.data().to_vec(), &|v| {
            let xt = Tensor::new(x.dims().to_vec(), v.to_vec()).unwrap();
            let y = depthwise3x3_forward(&xt, &k).unwrap();
            let mut gk = Tensor::zeros_like(&k);
            let gx = depthwise3x3_backward(&xt, &k, &dir, &mut gk).unwrap();
            (project(&y, &dir), gx.data().to_vec())
        });
        let e_k = check(k.data().to_vec(), &|v| {
            let kt = Tensor::new(k.dims().to_vec(), v.to_vec()).unwrap();
            let y = depthwise3x3_forward(&x, &kt).unwrap();
            let mut gk = Tensor::zeros_like(&kt);
            depthwise3x3_backward(&x, &kt, &dir, &mut gk).unwrap();
            (project(&y, &dir), gk.data().to_vec())
        });
        assert!(e_x < TOL, "trial {trial}, wrt x: rel err {e_x}");
        assert!(e_k < TOL, "trial {trial}, wrt k: rel err {e_k}");
    }
}

/// Flattens a residual block's parameters, runs the block as a function
/// of that flat vector, and checks it end to end.
#[test]
fn residual_block_gradients_both_kinds() {
    for (seed, kind) in [(103u64, BlockKind::Spectral1x1), (104, BlockKind::Separable3x3)] {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let width = 3;
        for trial in 0..TRIALS {
            let mut block: ResidualBlock<f64> = ResidualBlock::new(kind, width, &mut rng);
            let x = rand_tensor(&mut rng, vec![1, width, 4, 4]);
            let dir = rand_tensor(&mut rng, vec![1, width, 4, 4]);

            let flat: Vec<f64> = block
                .params_mut()
                .iter()
                .flat_map(|p| p.value.data().to_vec())
                .collect();

            let run = |theta: &[f64], probe_x: &[f64]| {
                let mut blk = block.clone();
                let mut at = 0;
                for p in blk.params_mut() {
                    let n = p.value.len();
                    p.value.data_mut().copy_from_slice(&theta[at..at + n]);
                    p.zero_grad();
                    at += n;
                }
                let xt = Tensor::new(x.dims().to_vec(), probe_x.to_vec()).unwrap();
                let tr = blk.forward(&xt).unwrap();
                let loss = project(&tr.y, &dir);
                let gx = blk.backward(&xt, &tr, &dir).unwrap();
                let gtheta: Vec<f64> = blk
                    .params_mut()
                    .iter()
                    .flat_map(|p| p.grad.data().to_vec())
                    .collect();
                (loss, gx.data().to_vec(), gtheta)
            };

            let e_x = check(x.data().to_vec(), &|v| {
                let (l, gx, _) = run(&flat, v);
                (l, gx)
            });
            let e_p = check(flat.clone(), &|v| {
                let (l, _, gt) = run(v, x.data());
                (l, gt)
            });
            assert!(e_x < TOL, "{kind:?} trial {trial}, wrt x: rel err {e_x}");
            assert!(e_p < TOL, "{kind:?} trial {trial}, wrt params: rel err {e_p}");
        }
    }
}

#[test]
fn softmax2_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for trial in 0..TRIALS {
        let x = rand_tensor(&mut rng, vec![2, 2, 3, 3]);
        let dir = rand_tensor(&mut rng, vec![2, 2, 3, 3]);
        let e = check(x.data().to_vec(), &|v| {
            let xt = Tensor::new(x.dims().to_vec(), v.to_vec()).unwrap();
            let y = softmax2_forward(&xt).unwrap();
            let gx = softmax2_backward(&y, &dir).unwrap();
            (project(&y, &dir), gx.data().to_vec())
        });
        assert!(e < TOL, "trial {trial}: rel err {e}");
    }
}

#[test]
fn dice_loss_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for trial in 0..TRIALS {
        let (n, h, w) = (1, 2, 2);
        let p = rand_tensor(&mut rng, vec![n, 2, h, w]);
        let mut g = Tensor::zeros(vec![n, 2, h, w]);
        let mut mask = Vec::new();
        for i in 0..n * h * w {
            let cocoa = rng.gen_bool(0.5);
            g.plane_mut(0, usize::from(cocoa))[i] = 1.0;
            mask.push(i == 0 || rng.gen_bool(0.75));
        }
        let e = check(p.data().to_vec(), &|v| {
            let pt = Tensor::new(p.dims().to_vec(), v.to_vec()).unwrap();
            let (l, grad) = dice_loss(&pt, &g, &mask, 1.0).unwrap();
            (l, grad.data().to_vec())
        });
        assert!(e < TOL, "trial {trial}: rel err {e}");
    }
}

#[test]
fn softmax_dice_composition_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for trial in 0..TRIALS {
        let (n, h, w) = (2, 2, 2);
        let logits = rand_tensor(&mut rng, vec![n, 2, h, w]);
        let mut g = Tensor::zeros(vec![n, 2, h, w]);
        let mut mask = Vec::new();
        for s in 0..n {
            for i in 0..h * w {
                let cocoa = rng.gen_bool(0.5);
                g.plane_mut(s, usize::from(cocoa))[i] = 1.0;
                mask.push((s, i) == (0, 0) || rng.gen_bool(0.8));
            }
        }
        let e = check(logits.data().to_vec(), &|v| {
            let xt = Tensor::new(logits.dims().to_vec(), v.to_vec()).unwrap();
            let y = softmax2_forward(&xt).unwrap();
            let (l, gy) = dice_loss(&y, &g, &mask, 1.0).unwrap();
            let gx = softmax2_backward(&y, &gy).unwrap();
            (l, gx.data().to_vec())
        });
        assert!(e < TOL, "trial {trial}: rel err {e}");
    }
}

#[test]
fn masked_l1_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(108);
    for trial in 0..TRIALS {
        let pred = rand_tensor(&mut rng, vec![1, 1, 3, 3]);
        let target = rand_tensor(&mut rng, vec![1, 1, 3, 3]);
        let mask: Vec<bool> = (0..9).map(|i| i == 0 || rng.gen_bool(0.6)).collect();
        let e = check(pred.data().to_vec(), &|v| {
            let pt = Tensor::new(pred.dims().to_vec(), v.to_vec()).unwrap();
            let (l, grad) = masked_l1_loss(&pt, &target, &mask).unwrap();
            (l, grad.data().to_vec())
        });
        assert!(e < TOL, "trial {trial}: rel err {e}");
    }
}

#[test]
fn inject_height_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    for trial in 0..TRIALS {
        let x = rand_tensor(&mut rng, vec![2, 3, 3, 3]);
        let h = rand_tensor(&mut rng, vec![2, 1, 3, 3]);
        let dir = rand_tensor(&mut rng, vec![2, 3, 3, 3]);

        let e_x = check(x.data().to_vec(), &|v| {
            let xt = Tensor::new(x.dims().to_vec(), v.to_vec()).unwrap();
            let y = inject_height_forward(&xt, &h).unwrap();
            let (gx, _) = inject_height_backward(&dir).unwrap();
            (project(&y, &dir), gx.data().to_vec())
        });
        let e_h = check(h.data().to_vec(), &|v| {
            let ht = Tensor::new(h.dims().to_vec(), v.to_vec()).unwrap();
            let y = inject_height_forward(&x, &ht).unwrap();
            let (_, gh) = inject_height_backward(&dir).unwrap();
            (project(&y, &dir), gh.data().to_vec())
        });
        assert!(e_x < TOL, "trial {trial}, wrt x: rel err {e_x}");
        assert!(e_h < TOL, "trial {trial}, wrt h: rel err {e_h}");
    }
}

/// Probing Dice along its negative gradient must reduce the loss for a
/// small step; guards against sign errors that finite differences of
/// individual coordinates could miss in aggregate.
#[test]
fn dice_descent_direction_decreases_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    for _ in 0..TRIALS {
        let p = {
            let mut t = rand_tensor(&mut rng, vec![1, 2, 3, 3]);
            for v in t.data_mut() {
                *v = 0.2 + 0.6 * (*v + 1.0) / 2.0; // keep probabilities interior
            }
            t
        };
        let mut g = Tensor::zeros(vec![1, 2, 3, 3]);
        for i in 0..9 {
            let cocoa = rng.gen_bool(0.5);
            g.plane_mut(0, usize::from(cocoa))[i] = 1.0;
        }
        let mask = vec![true; 9];
        let (l0, grad) = dice_loss(&p, &g, &mask, 1.0).unwrap();
        let mut stepped = p.clone();
        for (v, gr) in stepped.data_mut().iter_mut().zip(grad.data()) {
            *v -= 1e-4 * gr;
        }
        let (l1, _) = dice_loss(&stepped, &g, &mask, 1.0).unwrap();
        assert!(l1 < l0, "loss rose from {l0} to {l1}");
    }
}
