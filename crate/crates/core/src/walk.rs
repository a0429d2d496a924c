//! Quantisation-constrained entropy ascent on VQ-VAE latents, and dataset
//! debiasing by decoding the walked latents.

use serde::{Deserialize, Serialize};

use crate::biasdata::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::{mlp_forward, predictive_entropy, MlpParams};
use crate::tensor::{Graph, Tensor};
use crate::vqvae::{Codebook, LatentCode, VqVaeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WalkConfig {
    pub alpha: f64,
    pub steps: usize,
    pub grad_std_epsilon: f64,
    /// redo the walk with fresh latents before every f_strong epoch
    pub regenerate_per_epoch: bool,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            alpha: 0.1,
            steps: 20,
            grad_std_epsilon: 1e-8,
            regenerate_per_epoch: false,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(Error::usage(format!(
                "walk alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.grad_std_epsilon > 0.0) {
            return Err(Error::usage("grad_std_epsilon must be > 0"));
        }
        Ok(())
    }
}

/// `alpha · (g − mean g) / std g` with population std; zero when `std < epsilon`.
pub fn standardize_gradient(grad: &[f64], alpha: f64, epsilon: f64) -> Vec<f64> {
    let n = grad.len() as f64;
    if grad.is_empty() {
        return Vec::new();
    }
    let mean = grad.iter().sum::<f64>() / n;
    let var = grad.iter().map(|g| (g - mean) * (g - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if !(std >= epsilon) {
        return vec![0.0; grad.len()];
    }
    grad.iter().map(|g| alpha * (g - mean) / std).collect()
}

/// Per-example predictive entropy of `f` on latents `[n, M·d]`.
pub fn entropy_of(f: &MlpParams, latents: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let x = g.constant(latents.clone())?;
    let logits = mlp_forward(f, &mut g, x)?;
    let h = predictive_entropy(&mut g, logits)?;
    Ok(g.value(h).data().to_vec())
}

/// Entropies `[n]` and their gradient with respect to the latents.
pub fn entropy_gradient(f: &MlpParams, latents: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut g = Graph::new();
    let x = g.leaf(latents.clone(), true)?;
    let logits = mlp_forward(f, &mut g, x)?;
    let h = predictive_entropy(&mut g, logits)?;
    // rows are independent, so the gradient of the sum is per-example
    let total = g.sum(h)?;
    g.backward(total)?;
    let grad = g.grad(x).expect("leaf requires grad").to_vec();
    Ok((g.value(h).data().to_vec(), grad))
}

/// Entropy and codebook indices at each step `0..=steps`, per example.
#[derive(Debug, Clone, PartialEq)]
pub struct WalkTrace {
    /// `[step][example]`
    pub entropy: Vec<Vec<f64>>,
    /// `[step][example · M + token]`
    pub indices: Vec<Vec<usize>>,
    pub initial: LatentCode,
    pub last: LatentCode,
}

impl WalkTrace {
    pub fn len(&self) -> usize {
        self.entropy.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entropy.is_empty()
    }

    /// Tokens of example `i` whose code differs from step 0 at `step`.
    pub fn tokens_changed(&self, step: usize, i: usize, num_tokens: usize) -> usize {
        let r = i * num_tokens..(i + 1) * num_tokens;
        self.indices[0][r.clone()]
            .iter()
            .zip(&self.indices[step][r])
            .filter(|(a, b)| a != b)
            .count()
    }
}

/// Walks a batch of quantised latents (`h.quantised` is `[n·M, d]`), each
/// example independently: ascend f's predictive entropy by the
/// standardised gradient, then re-project onto the codebook.
pub fn adversarial_walk(
    f: &MlpParams,
    h: &LatentCode,
    codebook: &Codebook,
    config: &WalkConfig,
) -> Result<(LatentCode, WalkTrace)> {
    config.validate()?;
    let width = f.input_dim();
    let d = codebook.dim();
    let q = &h.quantised;
    if q.rank() != 2 || q.cols() != d || !q.len().is_multiple_of(width) {
        return Err(Error::Shape {
            op: "adversarial_walk",
            lhs: q.shape().to_vec(),
            rhs: vec![width],
        });
    }
    let n = q.len() / width;
    let mut current = q.clone().reshape(vec![n, width])?;
    let mut indices = h.indices.clone();
    let mut trace_h = Vec::with_capacity(config.steps + 1);
    let mut trace_idx = Vec::with_capacity(config.steps + 1);

    let check = |step: usize, ent: &[f64]| -> Result<()> {
        if let Some(bad) = ent.iter().find(|v| !v.is_finite()) {
            return Err(Error::numerical(
                format!("walk step {step}"),
                format!("entropy {bad}"),
            ));
        }
        Ok(())
    };

    for step in 0..config.steps {
        let (ent, grad) = entropy_gradient(f, &current).map_err(|e| match e {
            Error::Numerical { detail, .. } => {
                Error::numerical(format!("walk step {step}"), detail)
            }
            other => other,
        })?;
        check(step, &ent)?;
        trace_h.push(ent);
        trace_idx.push(indices.clone());
        let mut moved = current.clone();
        for (row, gr) in moved.data_mut().chunks_mut(width).zip(grad.chunks(width)) {
            let delta = standardize_gradient(gr, config.alpha, config.grad_std_epsilon);
            row.iter_mut().zip(delta).for_each(|(v, dv)| *v += dv);
        }
        let (proj, idx) = codebook.quantize(&moved.reshape(vec![n * width / d, d])?)?;
        current = proj.reshape(vec![n, width])?;
        indices = idx;
    }
    let ent = entropy_of(f, &current)?;
    check(config.steps, &ent)?;
    trace_h.push(ent);
    trace_idx.push(indices.clone());

    let quantised = current.reshape(vec![n * width / d, d])?;
    let last = LatentCode {
        continuous: quantised.clone(),
        quantised,
        indices,
    };
    let trace = WalkTrace {
        entropy: trace_h,
        indices: trace_idx,
        initial: h.clone(),
        last: last.clone(),
    };
    Ok((last, trace))
}

/// One row of the per-example walk trace CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkTraceRow {
    pub example_id: usize,
    pub step: usize,
    pub entropy: f64,
    pub num_tokens_changed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkSummary {
    pub examples: usize,
    pub steps: usize,
    pub mean_initial_entropy: f64,
    pub mean_final_entropy: f64,
    /// fraction of examples whose final entropy exceeds the initial one
    pub fraction_increased: f64,
    pub mean_tokens_changed: f64,
}

#[derive(Debug, Clone)]
pub struct DebiasOutput {
    pub dataset: LabeledDataset,
    pub rows: Vec<WalkTraceRow>,
    pub summary: WalkSummary,
}

const CHUNK: usize = 256;

/// Encode, quantise, walk and decode every example. Labels, order and the
/// bias records are carried over unchanged.
pub fn debias_dataset(
    vqvae: &VqVaeParams,
    f: &MlpParams,
    dataset: &LabeledDataset,
    config: &WalkConfig,
) -> Result<DebiasOutput> {
    config.validate()?;
    if dataset.image_shape() != vqvae.image_shape {
        return Err(Error::usage(format!(
            "dataset images {:?} do not match the autoencoder's {:?}",
            dataset.image_shape(),
            vqvae.image_shape
        )));
    }
    if f.input_dim() != vqvae.latent_width() {
        return Err(Error::usage(format!(
            "f takes {} inputs but latents have {}",
            f.input_dim(),
            vqvae.latent_width()
        )));
    }
    let inputs = dataset.flatten();
    let n = dataset.len();
    let m = vqvae.num_tokens;
    let mut images = Vec::with_capacity(inputs.len());
    let mut rows = Vec::with_capacity(n * (config.steps + 1));
    let (mut h0, mut h1, mut up, mut changed) = (0.0, 0.0, 0usize, 0usize);
    let order: Vec<usize> = (0..n).collect();
    for chunk in order.chunks(CHUNK) {
        let start = chunk[0];
        let wrap = |e: Error| match e {
            Error::Numerical { context, detail } => Error::numerical(
                format!(
                    "debias examples {start}..{}: {context}",
                    start + chunk.len()
                ),
                detail,
            ),
            other => other,
        };
        let code = vqvae.latent_code(&inputs.select_leading(chunk)?)?;
        let (walked, trace) = adversarial_walk(f, &code, &vqvae.codebook, config).map_err(wrap)?;
        images.extend_from_slice(vqvae.decode(&walked.quantised)?.data());
        for (local, &i) in chunk.iter().enumerate() {
            for step in 0..trace.len() {
                rows.push(WalkTraceRow {
                    example_id: i,
                    step,
                    entropy: trace.entropy[step][local],
                    num_tokens_changed: trace.tokens_changed(step, local, m),
                });
            }
            let (a, b) = (trace.entropy[0][local], trace.entropy[config.steps][local]);
            h0 += a;
            h1 += b;
            up += usize::from(b > a);
            changed += trace.tokens_changed(config.steps, local, m);
        }
    }
    let (h, w, c) = dataset.image_shape();
    let out = dataset.with_images(Tensor::new(vec![n, h, w, c], images)?, "vqvae_walk")?;
    let nf = n as f64;
    Ok(DebiasOutput {
        dataset: out,
        rows,
        summary: WalkSummary {
            examples: n,
            steps: config.steps,
            mean_initial_entropy: h0 / nf,
            mean_final_entropy: h1 / nf,
            fraction_increased: up as f64 / nf,
            mean_tokens_changed: changed as f64 / nf,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use crate::vqvae::VqVaeConfig;

    /// one-pass (Welford) mean and population std
    fn welford(x: &[f64]) -> (f64, f64) {
        let (mut mean, mut m2) = (0.0, 0.0);
        for (i, &v) in x.iter().enumerate() {
            let d = v - mean;
            mean += d / (i + 1) as f64;
            m2 += d * (v - mean);
        }
        (mean, (m2 / x.len() as f64).sqrt())
    }

    #[test]
    fn standardize_small_example() {
        let d = standardize_gradient(&[1.0, 2.0, 3.0], 0.1, 1e-8);
        let (mean, std) = welford(&[1.0, 2.0, 3.0]);
        let expect: Vec<f64> = [1.0, 2.0, 3.0]
            .iter()
            .map(|g| 0.1 * (g - mean) / std)
            .collect();
        for (a, b) in d.iter().zip(&expect) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!((d[0] + 0.122_474_487).abs() < 1e-8 && d[1].abs() < 1e-15);
    }

    #[test]
    fn constant_gradient_gives_zero_step() {
        assert_eq!(standardize_gradient(&[4.0; 5], 0.1, 1e-8), vec![0.0; 5]);
    }

    #[test]
    fn standardize_scales_linearly_in_alpha() {
        let g = [0.3, -1.2, 5.0, 0.0];
        let a = standardize_gradient(&g, 1e-3, 1e-8);
        let b = standardize_gradient(&g, 2e-3, 1e-8);
        assert!(a.iter().zip(&b).all(|(x, y)| (2.0 * x - y).abs() < 1e-15));
    }

    #[test]
    fn config_rejects_zero_alpha() {
        assert!(WalkConfig {
            alpha: 0.0,
            ..WalkConfig::default()
        }
        .validate()
        .is_err());
    }

    fn fixture() -> (VqVaeParams, MlpParams, LabeledDataset) {
        let cfg = VqVaeConfig {
            num_codes: 6,
            code_dim: 2,
            num_tokens: 3,
            encoder_hidden: vec![8],
            decoder_hidden: vec![8],
            ..VqVaeConfig::default()
        };
        let mut rng = rng_for(1, "walk-fixture");
        let vq = VqVaeParams::init(&cfg, (8, 8, 1), &mut rng).unwrap();
        let f = MlpParams::init(&[6, 10, 3], &mut rng).unwrap();
        let ds = crate::biasdata::gen_glyphs(&crate::biasdata::GeneratorSpec {
            num_classes: 3,
            samples_per_class: 4,
            image_size: (8, 8, 1),
            ..Default::default()
        })
        .unwrap();
        (vq, f, ds)
    }

    #[test]
    fn zero_steps_is_identity() {
        let (vq, f, ds) = fixture();
        let code = vq.latent_code(&ds.flatten()).unwrap();
        let cfg = WalkConfig {
            steps: 0,
            ..WalkConfig::default()
        };
        let (out, trace) = adversarial_walk(&f, &code, &vq.codebook, &cfg).unwrap();
        assert_eq!(out.quantised, code.quantised);
        assert_eq!(trace.len(), 1);
        let deb = debias_dataset(&vq, &f, &ds, &cfg).unwrap();
        let rec = vq.reconstruct(&ds.flatten()).unwrap();
        assert_eq!(deb.dataset.images.data(), rec.data());
        assert_eq!(deb.dataset.labels, ds.labels);
    }

    #[test]
    fn walk_stays_on_codebook() {
        let (vq, f, ds) = fixture();
        let code = vq.latent_code(&ds.flatten()).unwrap();
        let cfg = WalkConfig {
            alpha: 0.5,
            steps: 5,
            ..WalkConfig::default()
        };
        let (out, trace) = adversarial_walk(&f, &code, &vq.codebook, &cfg).unwrap();
        assert_eq!(trace.len(), 6);
        for (tok, &j) in out.quantised.data().chunks(2).zip(&out.indices) {
            assert_eq!(tok, vq.codebook.code(j));
        }
    }

    #[test]
    fn continuous_substep_does_not_lower_entropy() {
        let (vq, f, ds) = fixture();
        let code = vq.latent_code(&ds.flatten()).unwrap();
        let x = code.quantised.reshape(vec![ds.len(), 6]).unwrap();
        let (before, grad) = entropy_gradient(&f, &x).unwrap();
        let mut moved = x.clone();
        for (row, g) in moved.data_mut().chunks_mut(6).zip(grad.chunks(6)) {
            for (v, dv) in row.iter_mut().zip(standardize_gradient(g, 1e-3, 1e-8)) {
                *v += dv;
            }
        }
        let after = entropy_of(&f, &moved).unwrap();
        for (a, b) in after.iter().zip(&before) {
            assert!(*a >= b - 1e-6);
        }
    }

    #[test]
    fn debias_is_deterministic() {
        let (vq, f, ds) = fixture();
        let cfg = WalkConfig {
            steps: 3,
            ..WalkConfig::default()
        };
        let a = debias_dataset(&vq, &f, &ds, &cfg).unwrap();
        let b = debias_dataset(&vq, &f, &ds, &cfg).unwrap();
        assert_eq!(a.dataset, b.dataset);
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), ds.len() * 4);
    }
}
