use log::{info, warn};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{vqvae_forward, vqvae_loss, VqVaeConfig, VqVaeParams};
use crate::biasdata::LabeledDataset;
use crate::error::{Error, Result};
use crate::nn::Optimizer;
use crate::rng::rng_for;
use crate::tensor::Graph;

/// Batch-mean loss terms over one epoch, plus codebook usage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VqEpochRecord {
    pub epoch: usize,
    pub total: f64,
    pub reconstruction: f64,
    pub codebook: f64,
    pub commitment: f64,
    pub codes_used: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedVqVae {
    pub params: VqVaeParams,
    pub epochs: Vec<VqEpochRecord>,
    /// code assignment counts over the last epoch; sums to M × dataset size
    pub usage: Vec<usize>,
    pub collapse_warning: Option<String>,
    pub iterations: usize,
    pub has_momentum_buffers: bool,
}

/// Minibatch training on flattened images. The codebook is updated by the
/// gradient of the codebook term only; the encoder sees reconstruction
/// (through the straight-through copy) and commitment gradients.
pub fn train_vqvae(dataset: &LabeledDataset, config: &VqVaeConfig) -> Result<TrainedVqVae> {
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::usage("cannot train a VQ-VAE on an empty dataset"));
    }
    let seed = config.optim.seed;
    let mut params = VqVaeParams::init(
        config,
        dataset.image_shape(),
        &mut rng_for(seed, "vqvae-init"),
    )?;
    let inputs = dataset.flatten();
    let n = dataset.len();
    let k = config.num_codes;
    let mut order: Vec<usize> = (0..n).collect();
    let mut shuffle = rng_for(seed, "vqvae-shuffle");
    let mut opt = Optimizer::new(&config.optim);
    let mut epochs = Vec::new();
    let mut usage = vec![0usize; k];
    let mut collapse_warning = None;
    let mut iteration = 0usize;

    for epoch in 0..config.optim.epochs {
        order.shuffle(&mut shuffle);
        usage = vec![0; k];
        let mut sums = [0.0; 4];
        let mut batches = 0usize;
        for chunk in order.chunks(config.optim.batch_size) {
            let batch = inputs.select_leading(chunk)?;
            let mut g = Graph::new();
            let x = g.constant(batch)?;
            let step = (|| {
                let fwd = vqvae_forward(&params, &mut g, x, true)?;
                let l = vqvae_loss(
                    &mut g,
                    x,
                    fwd.reconstruction,
                    fwd.continuous,
                    fwd.quantised,
                    params.beta,
                )?;
                g.backward(l.total)?;
                Ok::<_, Error>((fwd, l))
            })()
            .map_err(|e| match e {
                Error::Numerical { detail, .. } => {
                    Error::numerical(format!("vqvae iteration {iteration}"), detail)
                }
                other => other,
            })?;
            let (fwd, l) = step;
            for &j in &fwd.indices {
                usage[j] += 1;
            }
            for (s, v) in sums
                .iter_mut()
                .zip([l.total, l.reconstruction, l.codebook, l.commitment])
            {
                *s += g.value(v).data()[0];
            }
            let mut vars = fwd.encoder_vars.clone();
            vars.extend_from_slice(&fwd.decoder_vars);
            vars.push(fwd.codebook_var);
            let grads: Vec<Option<&[f64]>> = vars.iter().map(|&v| g.grad(v)).collect();
            let mut tensors = params.encoder.tensors_mut();
            tensors.extend(params.decoder.tensors_mut());
            tensors.push(&mut params.codebook.codes);
            opt.step(&mut tensors, &grads).map_err(|e| match e {
                Error::Numerical { detail, .. } => {
                    Error::numerical(format!("vqvae iteration {iteration}"), detail)
                }
                other => other,
            })?;
            batches += 1;
            iteration += 1;
        }
        let b = batches as f64;
        let codes_used = usage.iter().filter(|&&u| u > 0).count();
        let rec = VqEpochRecord {
            epoch,
            total: sums[0] / b,
            reconstruction: sums[1] / b,
            codebook: sums[2] / b,
            commitment: sums[3] / b,
            codes_used,
        };
        info!(
            "stage=vqvae epoch={epoch} reconstruction={:.6} codes_used={codes_used}",
            rec.reconstruction
        );
        epochs.push(rec);
        if 2 * (k - codes_used) >= k {
            collapse_warning = Some(format!(
                "codebook collapse: {} of {k} codes unused in epoch {epoch}",
                k - codes_used
            ));
        }
    }
    if let Some(w) = &collapse_warning {
        warn!("{w}");
    }
    let dups = params.codebook.duplicate_pairs();
    if !dups.is_empty() && collapse_warning.is_none() {
        collapse_warning = Some(format!("{} pairs of bit-identical codes", dups.len()));
    }
    Ok(TrainedVqVae {
        params,
        epochs,
        usage,
        collapse_warning,
        iterations: iteration,
        has_momentum_buffers: opt.has_momentum_buffers(),
    })
}
