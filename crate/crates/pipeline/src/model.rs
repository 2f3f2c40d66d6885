//! The two fully convolutional networks: cocoa segmentation with
//! canopy-height injection, and the canopy-height regressor that shares
//! the same backbone.
//!
//! Architecture: a 1x1 entry convolution with ReLU lifts the 9 input
//! bands to the hidden width; spectral residual blocks (1x1 convs) mix
//! bands per pixel; separable 3x3 residual blocks add texture context;
//! the normalized height map is added to every channel; two more
//! separable blocks follow; a 1x1 head maps to the output channels.
//! The segmentation head applies a two-way softmax, the height head is
//! linear with a single channel and skips the injection.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use autodiff::kernel::Scalar;
use autodiff::layers::{BlockKind, BlockTrace, Conv1x1, ResidualBlock};
use autodiff::ops;
use autodiff::tensor::{Param, Tensor};
use autodiff::{read_checkpoint, write_checkpoint};

use crate::error::{Error, Result};
use crate::sampling::BandStats;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// Two channels through a per-pixel softmax; channel 1 is cocoa.
    Softmax2,
    /// Raw channels, used by the height regressor.
    Linear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(default = "default_in_bands")]
    pub in_bands: usize,
    #[serde(default = "default_width")]
    pub hidden_width: usize,
    #[serde(default = "default_spectral")]
    pub n_spectral_blocks: usize,
    #[serde(default = "default_texture")]
    pub n_texture_blocks: usize,
    #[serde(default = "default_post")]
    pub n_post_injection_blocks: usize,
    #[serde(default = "default_out")]
    pub out_channels: usize,
    #[serde(default = "default_head")]
    pub head: HeadKind,
    /// When false the injection stage is skipped entirely; the
    /// ablation arm and the height regressor both use this.
    #[serde(default = "default_use_height")]
    pub use_height: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_in_bands() -> usize {
    9
}
fn default_width() -> usize {
    32
}
fn default_spectral() -> usize {
    3
}
fn default_texture() -> usize {
    6
}
fn default_post() -> usize {
    2
}
fn default_out() -> usize {
    2
}
fn default_head() -> HeadKind {
    HeadKind::Softmax2
}
fn default_use_height() -> bool {
    true
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            in_bands: default_in_bands(),
            hidden_width: default_width(),
            n_spectral_blocks: default_spectral(),
            n_texture_blocks: default_texture(),
            n_post_injection_blocks: default_post(),
            out_channels: default_out(),
            head: default_head(),
            use_height: default_use_height(),
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Height-regressor variant of this config: one linear output
    /// channel, no injection, same backbone widths.
    pub fn height_variant(&self, seed: u64) -> Self {
        Self {
            out_channels: 1,
            head: HeadKind::Linear,
            use_height: false,
            seed,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.in_bands == 0 || self.hidden_width == 0 || self.out_channels == 0 {
            return Err(Error::InvalidArgument(
                "model dims must be positive".into(),
            ));
        }
        if self.head == HeadKind::Softmax2 && self.out_channels != 2 {
            return Err(Error::InvalidArgument(format!(
                "softmax head needs 2 output channels, got {}",
                self.out_channels
            )));
        }
        Ok(())
    }

    /// Maximum pixel distance a prediction can depend on: one per 3x3
    /// tap, two taps per separable block.
    pub fn receptive_field(&self) -> usize {
        2 * (self.n_texture_blocks + self.n_post_injection_blocks)
    }

    /// Closed-form trainable parameter count.
    pub fn param_count(&self) -> usize {
        let w = self.hidden_width;
        let entry = self.in_bands * w + w;
        let spectral = self.n_spectral_blocks * 2 * (w * w + w);
        let separable =
            (self.n_texture_blocks + self.n_post_injection_blocks) * 2 * (9 * w + w * w + w);
        let head = w * self.out_channels + self.out_channels;
        entry + spectral + separable + head
    }
}

#[derive(Debug, Clone)]
pub struct Model<S> {
    pub cfg: ModelConfig,
    entry: Conv1x1<S>,
    spectral: Vec<ResidualBlock<S>>,
    texture: Vec<ResidualBlock<S>>,
    post: Vec<ResidualBlock<S>>,
    head: Conv1x1<S>,
}

/// Saved activations of one forward pass, consumed by `backward`.
pub struct ModelTrace<S> {
    entry_r: Tensor<S>,
    spectral: Vec<BlockTrace<S>>,
    texture: Vec<BlockTrace<S>>,
    injected: Option<Tensor<S>>,
    post: Vec<BlockTrace<S>>,
    logits: Tensor<S>,
    pub output: Tensor<S>,
}

impl<S: Scalar> Model<S> {
    /// Deterministic per seed: two builds with the same config are
    /// parameter-identical.
    pub fn build(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let w = cfg.hidden_width;
        let entry = Conv1x1::new(cfg.in_bands, w, &mut rng);
        let spectral = (0..cfg.n_spectral_blocks)
            .map(|_| ResidualBlock::new(BlockKind::Spectral1x1, w, &mut rng))
            .collect();
        let texture = (0..cfg.n_texture_blocks)
            .map(|_| ResidualBlock::new(BlockKind::Separable3x3, w, &mut rng))
            .collect();
        let post = (0..cfg.n_post_injection_blocks)
            .map(|_| ResidualBlock::new(BlockKind::Separable3x3, w, &mut rng))
            .collect();
        let head = Conv1x1::new(w, cfg.out_channels, &mut rng);
        Ok(Self {
            cfg: cfg.clone(),
            entry,
            spectral,
            texture,
            post,
            head,
        })
    }

    /// All trainable parameters in declaration order; this order also
    /// defines the checkpoint tensor layout.
    pub fn params_mut(&mut self) -> Vec<&mut Param<S>> {
        let mut ps = self.entry.params_mut();
        for b in &mut self.spectral {
            ps.extend(b.params_mut());
        }
        for b in &mut self.texture {
            ps.extend(b.params_mut());
        }
        for b in &mut self.post {
            ps.extend(b.params_mut());
        }
        ps.extend(self.head.params_mut());
        ps
    }

    pub fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.params_mut().iter().map(|p| p.len()).sum()
    }

    fn check_height<'h>(
        &self,
        x: &Tensor<S>,
        height: Option<&'h Tensor<S>>,
    ) -> Result<Option<&'h Tensor<S>>> {
        if !self.cfg.use_height {
            return Ok(None);
        }
        let h = height.ok_or_else(|| {
            Error::InvalidArgument("model expects a height map but none was given".into())
        })?;
        let (n, _, hh, ww) = x.nchw()?;
        if h.dims() != [n, 1, hh, ww] {
            return Err(Error::InvalidArgument(format!(
                "height dims {:?} do not match input {:?}",
                h.dims(),
                x.dims()
            )));
        }
        Ok(Some(h))
    }

    /// Forward pass keeping every activation the backward pass needs.
    pub fn forward_trace(
        &self,
        x: &Tensor<S>,
        height: Option<&Tensor<S>>,
    ) -> Result<ModelTrace<S>> {
        let height = self.check_height(x, height)?;
        let entry_r = ops::relu_forward(&self.entry.forward(x)?);

        let mut spectral = Vec::with_capacity(self.spectral.len());
        let mut cur = entry_r.clone();
        for b in &self.spectral {
            let tr = b.forward(&cur)?;
            cur = tr.y.clone();
            spectral.push(tr);
        }
        let mut texture = Vec::with_capacity(self.texture.len());
        for b in &self.texture {
            let tr = b.forward(&cur)?;
            cur = tr.y.clone();
            texture.push(tr);
        }
        let injected = match height {
            Some(h) => {
                let inj = ops::inject_height_forward(&cur, h)?;
                cur = inj.clone();
                Some(inj)
            }
            None => None,
        };
        let mut post = Vec::with_capacity(self.post.len());
        for b in &self.post {
            let tr = b.forward(&cur)?;
            cur = tr.y.clone();
            post.push(tr);
        }
        let logits = self.head.forward(&cur)?;
        let output = match self.cfg.head {
            HeadKind::Softmax2 => ops::softmax2_forward(&logits)?,
            HeadKind::Linear => logits.clone(),
        };
        Ok(ModelTrace {
            entry_r,
            spectral,
            texture,
            injected,
            post,
            logits,
            output,
        })
    }

    /// Inference-only forward; intermediate activations are dropped as
    /// soon as the next stage has consumed them.
    pub fn forward(&self, x: &Tensor<S>, height: Option<&Tensor<S>>) -> Result<Tensor<S>> {
        let height = self.check_height(x, height)?;
        let mut cur = ops::relu_forward(&self.entry.forward(x)?);
        for b in &self.spectral {
            cur = b.forward(&cur)?.y;
        }
        for b in &self.texture {
            cur = b.forward(&cur)?.y;
        }
        if let Some(h) = height {
            cur = ops::inject_height_forward(&cur, h)?;
        }
        for b in &self.post {
            cur = b.forward(&cur)?.y;
        }
        let logits = self.head.forward(&cur)?;
        match self.cfg.head {
            HeadKind::Softmax2 => Ok(ops::softmax2_forward(&logits)?),
            HeadKind::Linear => Ok(logits),
        }
    }

    /// Backward from a gradient on the model output; accumulates into
    /// parameter grads and returns (d/d input, d/d height).
    pub fn backward(
        &mut self,
        x: &Tensor<S>,
        trace: &ModelTrace<S>,
        g_output: &Tensor<S>,
    ) -> Result<(Tensor<S>, Option<Tensor<S>>)> {
        let mut g = match self.cfg.head {
            HeadKind::Softmax2 => ops::softmax2_backward(&trace.output, g_output)?,
            HeadKind::Linear => g_output.clone(),
        };
        let head_in: &Tensor<S> = trace
            .post
            .last()
            .map(|t| &t.y)
            .or(trace.injected.as_ref())
            .or(trace.texture.last().map(|t| &t.y))
            .or(trace.spectral.last().map(|t| &t.y))
            .unwrap_or(&trace.entry_r);
        let _ = &trace.logits; // logits kept for completeness; softmax backward uses output
        g = self.head.backward(head_in, &g)?;

        for i in (0..self.post.len()).rev() {
            let input: &Tensor<S> = if i > 0 {
                &trace.post[i - 1].y
            } else if let Some(inj) = &trace.injected {
                inj
            } else if let Some(t) = trace.texture.last() {
                &t.y
            } else if let Some(t) = trace.spectral.last() {
                &t.y
            } else {
                &trace.entry_r
            };
            g = self.post[i].backward(input, &trace.post[i], &g)?;
        }

        let g_height = if trace.injected.is_some() {
            let (gx, gh) = ops::inject_height_backward(&g)?;
            g = gx;
            Some(gh)
        } else {
            None
        };

        for i in (0..self.texture.len()).rev() {
            let input: &Tensor<S> = if i > 0 {
                &trace.texture[i - 1].y
            } else if let Some(t) = trace.spectral.last() {
                &t.y
            } else {
                &trace.entry_r
            };
            g = self.texture[i].backward(input, &trace.texture[i], &g)?;
        }
        for i in (0..self.spectral.len()).rev() {
            let input: &Tensor<S> = if i > 0 {
                &trace.spectral[i - 1].y
            } else {
                &trace.entry_r
            };
            g = self.spectral[i].backward(input, &trace.spectral[i], &g)?;
        }

        let g_entry = ops::relu_backward(&trace.entry_r, &g)?;
        let gx = self.entry.backward(x, &g_entry)?;
        Ok((gx, g_height))
    }
}

/// Everything a checkpoint stores beside the raw tensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band_stats: Option<BandStats>,
}

pub fn save_model(
    path: impl AsRef<std::path::Path>,
    model: &mut Model<f32>,
    meta: &CheckpointMeta,
) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string(meta).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let params = model.params_mut();
    let tensors: Vec<&Tensor<f32>> = params.iter().map(|p| &p.value as &Tensor<f32>).collect();
    write_checkpoint(path, &json, &tensors)?;
    Ok(())
}

pub fn load_model(path: impl AsRef<std::path::Path>) -> Result<(Model<f32>, CheckpointMeta)> {
    let path = path.as_ref();
    let (json, tensors) = read_checkpoint(path)?;
    let meta: CheckpointMeta = serde_json::from_str(&json).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut model = Model::build(&meta.config)?;
    {
        let mut params = model.params_mut();
        if params.len() != tensors.len() {
            return Err(Error::Manifest {
                path: path.to_path_buf(),
                detail: format!(
                    "checkpoint has {} tensors, model defines {}",
                    tensors.len(),
                    params.len()
                ),
            });
        }
        for (p, t) in params.iter_mut().zip(tensors) {
            if p.value.dims() != t.dims() {
                return Err(Error::Manifest {
                    path: path.to_path_buf(),
                    detail: format!(
                        "tensor dims {:?} do not match model shape {:?}",
                        t.dims(),
                        p.value.dims()
                    ),
                });
            }
            p.value = t;
        }
    }
    Ok((model, meta))
}
