//! Vector-quantised autoencoder: MLP encoder to `M` tokens of width `d`,
//! nearest-code quantisation against a learned codebook, MLP decoder with a
//! sigmoid output. Gradients pass the quantiser by straight-through copy.
//!
//! With `patch_size = Some(p)` the image is cut into non-overlapping `p × p`
//! patches; one shared encoder maps each patch to one token and one shared
//! decoder maps each token back to its patch, so `M` is the patch count.

mod train;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::nn::{MlpArchitecture, MlpParams, OptimConfig};
use crate::rng::Rng;
use crate::tensor::{Graph, Tensor, Var};

pub use train::{train_vqvae, TrainedVqVae, VqEpochRecord};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VqVaeConfig {
    /// K
    pub num_codes: usize,
    /// d
    pub code_dim: usize,
    /// M
    pub num_tokens: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub beta: f64,
    /// side of the square patch each token covers; `None` encodes the whole image
    pub patch_size: Option<usize>,
    pub optim: OptimConfig,
}

impl Default for VqVaeConfig {
    fn default() -> Self {
        VqVaeConfig {
            num_codes: 128,
            code_dim: 2,
            num_tokens: 16,
            encoder_hidden: vec![512],
            decoder_hidden: vec![512],
            beta: 0.25,
            patch_size: None,
            optim: OptimConfig {
                learning_rate: 0.3,
                epochs: 120,
                batch_size: 16,
                ..OptimConfig::default()
            },
        }
    }
}

impl VqVaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_codes == 0 || self.code_dim == 0 || self.num_tokens == 0 {
            return Err(Error::usage(
                "num_codes, code_dim and num_tokens must be positive",
            ));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::usage(format!(
                "beta must be >= 0, got {}",
                self.beta
            )));
        }
        if self.encoder_hidden.contains(&0) || self.decoder_hidden.contains(&0) {
            return Err(Error::usage("hidden widths must be positive"));
        }
        if self.patch_size == Some(0) {
            return Err(Error::usage("patch_size must be positive"));
        }
        self.optim.validate()
    }

    /// Checks that the patch grid tiles `image_shape` with exactly `M` patches.
    pub fn validate_for(&self, image_shape: (usize, usize, usize)) -> Result<()> {
        self.validate()?;
        if let Some(p) = self.patch_size {
            let (h, w, _) = image_shape;
            if h % p != 0 || w % p != 0 {
                return Err(Error::usage(format!(
                    "patch_size {p} does not tile {h}x{w} images"
                )));
            }
            let patches = (h / p) * (w / p);
            if patches != self.num_tokens {
                return Err(Error::usage(format!(
                    "patch_size {p} gives {patches} patches on {h}x{w} images but num_tokens is {}",
                    self.num_tokens
                )));
            }
        }
        Ok(())
    }

    pub fn latent_width(&self) -> usize {
        self.num_tokens * self.code_dim
    }
}

/// The K learned quantisation vectors, `[K, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    pub codes: Tensor,
}

impl Codebook {
    /// Uniform in [-1/K, 1/K].
    pub fn init(num_codes: usize, dim: usize, rng: &mut Rng) -> Result<Self> {
        if num_codes == 0 || dim == 0 {
            return Err(Error::usage(
                "codebook needs at least one code of positive width",
            ));
        }
        let r = 1.0 / num_codes as f64;
        let data = (0..num_codes * dim)
            .map(|_| rng.random_range(-r..=r))
            .collect();
        Ok(Codebook {
            codes: Tensor::new(vec![num_codes, dim], data)?,
        })
    }

    pub fn from_tensor(codes: Tensor) -> Result<Self> {
        if codes.rank() != 2 {
            return Err(Error::usage(format!(
                "codebook must be [K, d], got {:?}",
                codes.shape()
            )));
        }
        if !codes.is_finite() {
            return Err(Error::numerical("codebook", "non-finite code"));
        }
        Ok(Codebook { codes })
    }

    pub fn num_codes(&self) -> usize {
        self.codes.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.codes.shape()[1]
    }

    pub fn code(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.codes.data()[j * d..(j + 1) * d]
    }

    /// Index of the nearest code by squared Euclidean distance; ties go to
    /// the lowest index.
    pub fn nearest(&self, token: &[f64]) -> usize {
        let mut best = 0;
        let mut best_dist = f64::INFINITY;
        for j in 0..self.num_codes() {
            let dist: f64 = token
                .iter()
                .zip(self.code(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist < best_dist {
                best = j;
                best_dist = dist;
            }
        }
        best
    }

    /// Maps each row of `[n, d]` to its nearest code.
    pub fn quantize(&self, continuous: &Tensor) -> Result<(Tensor, Vec<usize>)> {
        if self.num_codes() == 0 {
            return Err(Error::usage("empty codebook"));
        }
        if continuous.rank() != 2 || continuous.cols() != self.dim() {
            return Err(Error::Shape {
                op: "quantize",
                lhs: continuous.shape().to_vec(),
                rhs: self.codes.shape().to_vec(),
            });
        }
        let indices: Vec<usize> = continuous
            .data()
            .chunks(self.dim())
            .map(|t| self.nearest(t))
            .collect();
        let data = indices
            .iter()
            .flat_map(|&j| self.code(j).iter().copied())
            .collect();
        Ok((Tensor::new(continuous.shape().to_vec(), data)?, indices))
    }

    /// Pairs of codes that are bit-identical.
    pub fn duplicate_pairs(&self) -> Vec<(usize, usize)> {
        let k = self.num_codes();
        let mut out = Vec::new();
        for a in 0..k {
            for b in a + 1..k {
                if self.code(a) == self.code(b) {
                    out.push((a, b));
                }
            }
        }
        out
    }
}

/// Pre- and post-quantisation latents of one or more images, `[n·M, d]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    pub continuous: Tensor,
    pub quantised: Tensor,
    pub indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VqVaeParams {
    pub encoder: MlpParams,
    pub decoder: MlpParams,
    pub codebook: Codebook,
    pub num_tokens: usize,
    pub beta: f64,
    /// (height, width, channels) of the images it models
    pub image_shape: (usize, usize, usize),
    pub patch_size: Option<usize>,
}

impl VqVaeParams {
    pub fn init(
        config: &VqVaeConfig,
        image_shape: (usize, usize, usize),
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate_for(image_shape)?;
        let (pixels, latent) = match config.patch_size {
            Some(p) => (p * p * image_shape.2, config.code_dim),
            None => (
                image_shape.0 * image_shape.1 * image_shape.2,
                config.latent_width(),
            ),
        };
        let mut enc = vec![pixels];
        enc.extend_from_slice(&config.encoder_hidden);
        enc.push(latent);
        let mut dec = vec![latent];
        dec.extend_from_slice(&config.decoder_hidden);
        dec.push(pixels);
        let encoder = MlpParams::init(&enc, rng)?;
        let decoder = MlpParams::init(&dec, rng)?;
        let codebook = Codebook::init(config.num_codes, config.code_dim, rng)?;
        Self::new(
            encoder,
            decoder,
            codebook,
            config.num_tokens,
            config.beta,
            image_shape,
            config.patch_size,
        )
    }

    pub fn new(
        encoder: MlpParams,
        decoder: MlpParams,
        codebook: Codebook,
        num_tokens: usize,
        beta: f64,
        image_shape: (usize, usize, usize),
        patch_size: Option<usize>,
    ) -> Result<Self> {
        let (tokens_per_pass, pixels) = match patch_size {
            Some(p) => {
                let (h, w, c) = image_shape;
                if p == 0 || h % p != 0 || w % p != 0 || (h / p) * (w / p) != num_tokens {
                    return Err(Error::usage(format!(
                        "patch_size {p} does not tile {h}x{w} images into {num_tokens} tokens"
                    )));
                }
                (1, p * p * c)
            }
            None => (num_tokens, image_shape.0 * image_shape.1 * image_shape.2),
        };
        let latent = tokens_per_pass * codebook.dim();
        if encoder.output_dim() != latent || decoder.input_dim() != latent {
            return Err(Error::usage(format!(
                "encoder emits {} and decoder takes {} values, expected {latent}",
                encoder.output_dim(),
                decoder.input_dim()
            )));
        }
        if encoder.input_dim() != pixels || decoder.output_dim() != pixels {
            return Err(Error::usage(format!(
                "autoencoder widths {}/{} do not match {pixels} input values",
                encoder.input_dim(),
                decoder.output_dim()
            )));
        }
        Ok(VqVaeParams {
            encoder,
            decoder,
            codebook,
            num_tokens,
            beta,
            image_shape,
            patch_size,
        })
    }

    pub fn latent_width(&self) -> usize {
        self.num_tokens * self.codebook.dim()
    }

    /// Values per flattened image.
    pub fn pixels(&self) -> usize {
        self.image_shape.0 * self.image_shape.1 * self.image_shape.2
    }

    /// For each position of the patch-major layout, the image position it
    /// holds (identity without patches).
    fn patch_order(&self) -> Vec<usize> {
        let (h, w, c) = self.image_shape;
        let Some(p) = self.patch_size else {
            return (0..h * w * c).collect();
        };
        let mut order = Vec::with_capacity(h * w * c);
        for py in 0..h / p {
            for px in 0..w / p {
                for dy in 0..p {
                    for dx in 0..p {
                        let base = ((py * p + dy) * w + px * p + dx) * c;
                        order.extend(base..base + c);
                    }
                }
            }
        }
        order
    }

    /// `perm` repeated for `n` stacked images.
    fn batched(perm: &[usize], n: usize) -> Vec<usize> {
        let len = perm.len();
        (0..n)
            .flat_map(|i| perm.iter().map(move |&j| i * len + j))
            .collect()
    }

    fn inverse_patch_order(&self) -> Vec<usize> {
        let order = self.patch_order();
        let mut inv = vec![0; order.len()];
        for (k, &j) in order.iter().enumerate() {
            inv[j] = k;
        }
        inv
    }

    fn encoder_rows(&self, n: usize) -> usize {
        if self.patch_size.is_some() {
            n * self.num_tokens
        } else {
            n
        }
    }

    /// Continuous latents `[n·M, d]` for flattened images `[n, pixels]`.
    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        let n = self.check_batch(images, self.pixels(), "encode")?;
        let rows = self.encoder_rows(n);
        let input = if self.patch_size.is_some() {
            let src = images.data();
            let data = Self::batched(&self.patch_order(), n)
                .into_iter()
                .map(|j| src[j])
                .collect();
            Tensor::new(vec![rows, self.encoder.input_dim()], data)?
        } else {
            images.clone()
        };
        let z = crate::nn::predict_logits(&self.encoder, &input)?;
        z.reshape(vec![n * self.num_tokens, self.codebook.dim()])
    }

    pub fn latent_code(&self, images: &Tensor) -> Result<LatentCode> {
        let continuous = self.encode(images)?;
        let (quantised, indices) = self.codebook.quantize(&continuous)?;
        Ok(LatentCode {
            continuous,
            quantised,
            indices,
        })
    }

    /// Images `[n, pixels]` in [0, 1] from latents `[n·M, d]` (or `[n, M·d]`).
    pub fn decode(&self, latents: &Tensor) -> Result<Tensor> {
        let width = self.latent_width();
        if !latents.len().is_multiple_of(width) || latents.is_empty() {
            return Err(Error::usage(format!(
                "decoder expects a multiple of {width} latent values, got {:?}",
                latents.shape()
            )));
        }
        let n = latents.len() / width;
        let rows = self.encoder_rows(n);
        let flat = latents
            .clone()
            .reshape(vec![rows, self.decoder.input_dim()])?;
        let logits = crate::nn::predict_logits(&self.decoder, &flat)?;
        if self.patch_size.is_none() {
            return Ok(logits.map(sigmoid));
        }
        let src = logits.data();
        let data = Self::batched(&self.inverse_patch_order(), n)
            .into_iter()
            .map(|k| sigmoid(src[k]))
            .collect();
        Tensor::new(vec![n, self.pixels()], data)
    }

    /// decode(quantize(encode(x))).
    pub fn reconstruct(&self, images: &Tensor) -> Result<Tensor> {
        self.decode(&self.latent_code(images)?.quantised)
    }

    fn check_batch(&self, x: &Tensor, width: usize, op: &str) -> Result<usize> {
        if x.rank() != 2 || x.cols() != width {
            return Err(Error::usage(format!(
                "{op} expects [n, {width}], got {:?}",
                x.shape()
            )));
        }
        Ok(x.rows())
    }

    pub fn to_checkpoint(
        &self,
        seed: u64,
        iterations: usize,
        has_momentum_buffers: bool,
    ) -> Checkpoint {
        let manifest = serde_json::to_value(VqVaeManifest {
            kind: "vqvae".into(),
            k: self.codebook.num_codes(),
            d: self.codebook.dim(),
            m: self.num_tokens,
            beta: self.beta,
            image_shape: self.image_shape,
            patch_size: self.patch_size,
            encoder: self.encoder.architecture(),
            decoder: self.decoder.architecture(),
            seed,
            iterations,
            has_momentum_buffers,
        })
        .expect("manifest serializes");
        let mut ckpt = Checkpoint::new(manifest);
        self.encoder.write_tensors("encoder.", &mut ckpt);
        self.decoder.write_tensors("decoder.", &mut ckpt);
        ckpt.push("codebook", self.codebook.codes.clone());
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let m: VqVaeManifest = serde_json::from_value(ckpt.manifest.clone())
            .map_err(|e| Error::format("checkpoint", format!("not a vqvae checkpoint: {e}")))?;
        if m.kind != "vqvae" {
            return Err(Error::format(
                "checkpoint",
                format!("expected a vqvae checkpoint, found '{}'", m.kind),
            ));
        }
        let encoder = MlpParams::read_tensors("encoder.", m.encoder.dims.len() - 1, ckpt)?;
        let decoder = MlpParams::read_tensors("decoder.", m.decoder.dims.len() - 1, ckpt)?;
        let codebook = Codebook::from_tensor(ckpt.tensor("codebook")?.clone())?;
        if codebook.num_codes() != m.k || codebook.dim() != m.d {
            return Err(Error::format(
                "checkpoint",
                "codebook shape disagrees with manifest",
            ));
        }
        Self::new(
            encoder,
            decoder,
            codebook,
            m.m,
            m.beta,
            m.image_shape,
            m.patch_size,
        )
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct VqVaeManifest {
    kind: String,
    #[serde(rename = "K")]
    k: usize,
    d: usize,
    #[serde(rename = "M")]
    m: usize,
    beta: f64,
    image_shape: (usize, usize, usize),
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patch_size: Option<usize>,
    encoder: MlpArchitecture,
    decoder: MlpArchitecture,
    seed: u64,
    iterations: usize,
    has_momentum_buffers: bool,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Graph handles for the four loss terms.
#[derive(Debug, Clone, Copy)]
pub struct VqLoss {
    pub total: Var,
    pub reconstruction: Var,
    pub codebook: Var,
    pub commitment: Var,
}

/// reconstruction = mean (x - x̂)², codebook = mean (sg(z) - q)²,
/// commitment = β · mean (z - sg(q))², total = their sum.
pub fn vqvae_loss(
    g: &mut Graph,
    x: Var,
    x_hat: Var,
    continuous: Var,
    quantised: Var,
    beta: f64,
) -> Result<VqLoss> {
    let diff = g.sub(x, x_hat)?;
    let sq = g.square(diff)?;
    let reconstruction = g.mean(sq)?;

    let z_sg = g.detach(continuous)?;
    let d1 = g.sub(z_sg, quantised)?;
    let s1 = g.square(d1)?;
    let codebook = g.mean(s1)?;

    let q_sg = g.detach(quantised)?;
    let d2 = g.sub(continuous, q_sg)?;
    let s2 = g.square(d2)?;
    let m2 = g.mean(s2)?;
    let commitment = g.scale(m2, beta)?;

    let t = g.add(reconstruction, codebook)?;
    let total = g.add(t, commitment)?;
    Ok(VqLoss {
        total,
        reconstruction,
        codebook,
        commitment,
    })
}

/// Graph handles from one differentiable autoencoder pass.
#[derive(Debug, Clone)]
pub struct VqForward {
    pub continuous: Var,
    pub quantised: Var,
    /// straight-through decoder input
    pub decoder_input: Var,
    pub reconstruction: Var,
    pub indices: Vec<usize>,
    pub encoder_vars: Vec<Var>,
    pub decoder_vars: Vec<Var>,
    pub codebook_var: Var,
}

/// Builds encode → quantise → decode on `g` for a `[n, pixels]` batch.
pub fn vqvae_forward(
    params: &VqVaeParams,
    g: &mut Graph,
    x: Var,
    trainable: bool,
) -> Result<VqForward> {
    let n = g.shape(x)[0];
    let enc = params.encoder.bind(g, trainable)?;
    let dec = params.decoder.bind(g, trainable)?;
    let codebook_var = g.leaf(params.codebook.codes.clone(), trainable)?;
    let enc_in = if params.patch_size.is_some() {
        let col = g.reshape(x, &[n * params.pixels(), 1])?;
        let patched = g.gather_rows(col, &VqVaeParams::batched(&params.patch_order(), n))?;
        g.reshape(
            patched,
            &[n * params.num_tokens, params.encoder.input_dim()],
        )?
    } else {
        x
    };
    let z = enc.forward(g, enc_in)?;
    let continuous = g.reshape(z, &[n * params.num_tokens, params.codebook.dim()])?;
    let (_, indices) = params.codebook.quantize(g.value(continuous))?;
    let quantised = g.gather_rows(codebook_var, &indices)?;
    let st = g.straight_through(continuous, quantised)?;
    let decoder_input = g.reshape(st, &[params.encoder_rows(n), params.decoder.input_dim()])?;
    let mut logits = dec.forward(g, decoder_input)?;
    if params.patch_size.is_some() {
        let col = g.reshape(logits, &[n * params.pixels(), 1])?;
        let restored =
            g.gather_rows(col, &VqVaeParams::batched(&params.inverse_patch_order(), n))?;
        logits = g.reshape(restored, &[n, params.pixels()])?;
    }
    let reconstruction = g.sigmoid(logits)?;
    Ok(VqForward {
        continuous,
        quantised,
        decoder_input,
        reconstruction,
        indices,
        encoder_vars: enc.vars(),
        decoder_vars: dec.vars(),
        codebook_var,
    })
}
