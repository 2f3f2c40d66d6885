//! The `gradcheck` subcommand: central finite-difference verification
//! of every backward pass, reported as a table.
//!
//! Each layer runs 20 random double-precision trials at step 1e-5 and
//! must keep its worst relative error below 1e-4; the assembled
//! width-4 network on an 8x8 input is allowed 1e-3 because its longer
//! composition chain accumulates roundoff in the differences.

use autodiff::grad_check;
use autodiff::layers::{BlockKind, Conv1x1, ResidualBlock, SepConv3x3};
use autodiff::loss::{dice_loss, masked_l1_loss};
use autodiff::ops::{
    inject_height_backward, inject_height_forward, softmax2_backward, softmax2_forward,
};
use autodiff::tensor::Tensor;
use pipeline::model::{Model, ModelConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const STEP: f64 = 1e-5;
pub const LAYER_TOL: f64 = 1e-4;
pub const MODEL_TOL: f64 = 1e-3;
const TRIALS: usize = 20;

/// Outcome of one table row.
#[derive(Debug, Clone)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub trials: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl LayerCheck {
    pub fn pass(&self) -> bool {
        self.max_rel_error < self.tolerance
    }
}

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn rand_tensor(rng: &mut ChaCha8Rng, dims: Vec<usize>) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::new(dims, rand_vec(rng, n)).unwrap()
}

/// Projection onto a fixed random direction turns a tensor-valued
/// layer into a scalar loss with dL/dy equal to the direction.
fn project(y: &Tensor<f64>, dir: &Tensor<f64>) -> f64 {
    y.data().iter().zip(dir.data()).map(|(a, b)| a * b).sum()
}

fn check(mut x: Vec<f64>, eval: &dyn Fn(&[f64]) -> (f64, Vec<f64>)) -> f64 {
    let analytic = eval(&x).1;
    grad_check(|v| eval(v).0, &mut x, &analytic, STEP)
}

fn scatter_params<L>(layer: &mut L, theta: &[f64])
where
    L: ParamAccess,
{
    let mut at = 0;
    for p in layer.params() {
        let n = p.value.len();
        p.value.data_mut().copy_from_slice(&theta[at..at + n]);
        p.zero_grad();
        at += n;
    }
    assert_eq!(at, theta.len());
}

fn gather_values<L: ParamAccess>(layer: &mut L) -> Vec<f64> {
    layer
        .params()
        .iter()
        .flat_map(|p| p.value.data().to_vec())
        .collect()
}

fn gather_grads<L: ParamAccess>(layer: &mut L) -> Vec<f64> {
    layer
        .params()
        .iter()
        .flat_map(|p| p.grad.data().to_vec())
        .collect()
}

/// Uniform access to a layer's parameter list, so the flat-vector
/// probing below works for every layer type.
trait ParamAccess: Clone {
    fn params(&mut self) -> Vec<&mut autodiff::tensor::Param<f64>>;
}

impl ParamAccess for Conv1x1<f64> {
    fn params(&mut self) -> Vec<&mut autodiff::tensor::Param<f64>> {
        self.params_mut()
    }
}

impl ParamAccess for SepConv3x3<f64> {
    fn params(&mut self) -> Vec<&mut autodiff::tensor::Param<f64>> {
        self.params_mut()
    }
}

impl ParamAccess for ResidualBlock<f64> {
    fn params(&mut self) -> Vec<&mut autodiff::tensor::Param<f64>> {
        self.params_mut()
    }
}

fn conv1x1_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(201);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let mut layer: Conv1x1<f64> = Conv1x1::new(3, 4, &mut rng);
        let x = rand_tensor(&mut rng, vec![2, 3, 4, 4]);
        let dir = rand_tensor(&mut rng, vec![2, 4, 4, 4]);
        let theta = gather_values(&mut layer);
        let run = |theta: &[f64], xv: &[f64]| {
            let mut l = layer.clone();
            scatter_params(&mut l, theta);
            let xt = Tensor::new(x.dims().to_vec(), xv.to_vec()).unwrap();
            let y = l.forward(&xt).unwrap();
            let gx = l.backward(&xt, &dir).unwrap();
            (project(&y, &dir), gx.data().to_vec(), gather_grads(&mut l))
        };
        let e_p = check(theta.clone(), &|v| {
            let (l, _, gt) = run(v, x.data());
            (l, gt)
        });
        let e_x = check(x.data().to_vec(), &|v| {
            let (l, gx, _) = run(&theta, v);
            (l, gx)
        });
        worst = worst.max(e_p).max(e_x);
    }
    worst
}

fn sepconv_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let mut layer: SepConv3x3<f64> = SepConv3x3::new(3, 4, &mut rng);
        let x = rand_tensor(&mut rng, vec![1, 3, 5, 4]);
        let dir = rand_tensor(&mut rng, vec![1, 4, 5, 4]);
        let theta = gather_values(&mut layer);
        let run = |theta: &[f64], xv: &[f64]| {
            let mut l = layer.clone();
            scatter_params(&mut l, theta);
            let xt = Tensor::new(x.dims().to_vec(), xv.to_vec()).unwrap();
            let (y, mid) = l.forward(&xt).unwrap();
            let gx = l.backward(&xt, &mid, &dir).unwrap();
            (project(&y, &dir), gx.data().to_vec(), gather_grads(&mut l))
        };
        let e_p = check(theta.clone(), &|v| {
            let (l, _, gt) = run(v, x.data());
            (l, gt)
        });
        let e_x = check(x.data().to_vec(), &|v| {
            let (l, gx, _) = run(&theta, v);
            (l, gx)
        });
        worst = worst.max(e_p).max(e_x);
    }
    worst
}

fn residual_worst(kind: BlockKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let mut block: ResidualBlock<f64> = ResidualBlock::new(kind, 3, &mut rng);
        let x = rand_tensor(&mut rng, vec![1, 3, 4, 4]);
        let dir = rand_tensor(&mut rng, vec![1, 3, 4, 4]);
        let theta = gather_values(&mut block);
        let run = |theta: &[f64], xv: &[f64]| {
            let mut blk = block.clone();
            scatter_params(&mut blk, theta);
            let xt = Tensor::new(x.dims().to_vec(), xv.to_vec()).unwrap();
            let tr = blk.forward(&xt).unwrap();
            let gx = blk.backward(&xt, &tr, &dir).unwrap();
            (project(&tr.y, &dir), gx.data().to_vec(), gather_grads(&mut blk))
        };
        let e_p = check(theta.clone(), &|v| {
            let (l, _, gt) = run(v, x.data());
            (l, gt)
        });
        let e_x = check(x.data().to_vec(), &|v| {
            let (l, gx, _) = run(&theta, v);
            (l, gx)
        });
        worst = worst.max(e_p).max(e_x);
    }
    worst
}

fn softmax2_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(205);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let x = rand_tensor(&mut rng, vec![2, 2, 3, 3]);
        let dir = rand_tensor(&mut rng, vec![2, 2, 3, 3]);
        let e = check(x.data().to_vec(), &|v| {
            let xt = Tensor::new(x.dims().to_vec(), v.to_vec()).unwrap();
            let y = softmax2_forward(&xt).unwrap();
            let gx = softmax2_backward(&y, &dir).unwrap();
            (project(&y, &dir), gx.data().to_vec())
        });
        worst = worst.max(e);
    }
    worst
}

fn inject_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(206);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
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
        worst = worst.max(e_x).max(e_h);
    }
    worst
}

fn dice_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(207);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
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
        worst = worst.max(e);
    }
    worst
}

fn masked_l1_worst() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(208);
    let mut worst = 0.0f64;
    for _ in 0..TRIALS {
        let pred = rand_tensor(&mut rng, vec![1, 1, 3, 3]);
        let target = rand_tensor(&mut rng, vec![1, 1, 3, 3]);
        let mask: Vec<bool> = (0..9).map(|i| i == 0 || rng.gen_bool(0.6)).collect();
        let e = check(pred.data().to_vec(), &|v| {
            let pt = Tensor::new(pred.dims().to_vec(), v.to_vec()).unwrap();
            let (l, grad) = masked_l1_loss(&pt, &target, &mask).unwrap();
            (l, grad.data().to_vec())
        });
        worst = worst.max(e);
    }
    worst
}

/// Fresh models hold zero biases, which leave ReLU-clipped pixels at
/// exactly zero through the 1x1 stages; the loss is nondifferentiable
/// there. Jittering every parameter moves the probe to a generic,
/// differentiable point.
fn jitter(model: &mut Model<f64>, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in model.params_mut() {
        for v in p.value.data_mut() {
            *v += rng.gen_range(-0.05..0.05);
        }
    }
}

fn full_model_worst() -> f64 {
    let cfg = ModelConfig {
        hidden_width: 4,
        seed: 17,
        ..ModelConfig::default()
    };
    let mut model: Model<f64> = Model::build(&cfg).unwrap();
    jitter(&mut model, 41);

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (h, w) = (8, 8);
    let x = rand_tensor(&mut rng, vec![1, 9, h, w]);
    let height = {
        let vals: Vec<f64> = (0..h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
        Tensor::new(vec![1, 1, h, w], vals).unwrap()
    };
    let mut target = Tensor::zeros(vec![1, 2, h, w]);
    let mut mask = vec![false; h * w];
    for i in 0..h * w {
        let class = usize::from(rng.gen_bool(0.4));
        target.plane_mut(0, class)[i] = 1.0;
        mask[i] = rng.gen_bool(0.7);
    }

    let trace = model.forward_trace(&x, Some(&height)).unwrap();
    let (_, g_out) = dice_loss(&trace.output, &target, &mask, 1.0).unwrap();
    model.zero_grads();
    model.backward(&x, &trace, &g_out).unwrap();
    let analytic: Vec<f64> = model
        .params_mut()
        .iter()
        .flat_map(|p| p.grad.data().to_vec())
        .collect();
    let mut theta: Vec<f64> = model
        .params_mut()
        .iter()
        .flat_map(|p| p.value.data().to_vec())
        .collect();

    grad_check(
        |flat| {
            let mut at = 0;
            for p in model.params_mut() {
                let n = p.value.len();
                p.value.data_mut().copy_from_slice(&flat[at..at + n]);
                at += n;
            }
            let y = model.forward(&x, Some(&height)).unwrap();
            dice_loss(&y, &target, &mask, 1.0).unwrap().0
        },
        &mut theta,
        &analytic,
        STEP,
    )
}

/// Runs every check. Deterministic: seeds are fixed.
pub fn run_all() -> Vec<LayerCheck> {
    let row = |layer, trials, err, tol| LayerCheck {
        layer,
        trials,
        max_rel_error: err,
        tolerance: tol,
    };
    vec![
        row("conv1x1", TRIALS, conv1x1_worst(), LAYER_TOL),
        row("sepconv3x3", TRIALS, sepconv_worst(), LAYER_TOL),
        row(
            "residual_spectral",
            TRIALS,
            residual_worst(BlockKind::Spectral1x1, 203),
            LAYER_TOL,
        ),
        row(
            "residual_separable",
            TRIALS,
            residual_worst(BlockKind::Separable3x3, 204),
            LAYER_TOL,
        ),
        row("softmax2", TRIALS, softmax2_worst(), LAYER_TOL),
        row("height_injection", TRIALS, inject_worst(), LAYER_TOL),
        row("dice_loss", TRIALS, dice_worst(), LAYER_TOL),
        row("masked_l1", TRIALS, masked_l1_worst(), LAYER_TOL),
        row("full_model_w4", 1, full_model_worst(), MODEL_TOL),
    ]
}

pub fn render_table(checks: &[LayerCheck]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<20} {:>6} {:>14} {:>10} {:>7}\n",
        "layer", "trials", "max rel error", "tolerance", "status"
    ));
    for c in checks {
        out.push_str(&format!(
            "{:<20} {:>6} {:>14.3e} {:>10.0e} {:>7}\n",
            c.layer,
            c.trials,
            c.max_rel_error,
            c.tolerance,
            if c.pass() { "pass" } else { "FAIL" }
        ));
    }
    out
}
