use rand::Rng as _;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, example_rng, Rng};
use crate::tensor::Tensor;

/// One draw of the zero-pad, crop and flip augmentation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropFlip {
    /// crop offset into the padded image, each in `0..=2 * padding`
    pub dy: usize,
    pub dx: usize,
    pub flip: bool,
}

impl CropFlip {
    pub fn sample(rng: &mut Rng, padding: usize, flip: bool) -> Self {
        CropFlip {
            dy: rng.random_range(0..=2 * padding),
            dx: rng.random_range(0..=2 * padding),
            flip: flip && rng.random_bool(0.5),
        }
    }

    /// Writes the augmented copy of `src` (`[h, w, c]`) into `out`.
    pub fn apply(
        &self,
        src: &[f64],
        out: &mut [f64],
        (h, w, c): (usize, usize, usize),
        padding: usize,
    ) {
        for y in 0..h {
            let sy = (y + self.dy) as isize - padding as isize;
            for x in 0..w {
                let xx = if self.flip { w - 1 - x } else { x };
                let sx = (xx + self.dx) as isize - padding as isize;
                let dst = &mut out[(y * w + x) * c..(y * w + x + 1) * c];
                if sy >= 0 && sx >= 0 && (sy as usize) < h && (sx as usize) < w {
                    let s = (sy as usize * w + sx as usize) * c;
                    dst.copy_from_slice(&src[s..s + c]);
                } else {
                    dst.fill(0.0);
                }
            }
        }
    }
}

/// Augments a flattened `[batch, h * w * c]` minibatch.
pub fn crop_flip_batch(
    batch: &Tensor,
    shape: (usize, usize, usize),
    padding: usize,
    flip: bool,
    rng: &mut Rng,
) -> Result<Tensor> {
    let per = shape.0 * shape.1 * shape.2;
    if !batch.len().is_multiple_of(per) {
        return Err(Error::Shape {
            op: "crop_flip_batch",
            lhs: batch.shape().to_vec(),
            rhs: vec![shape.0, shape.1, shape.2],
        });
    }
    let mut out = batch.clone();
    for (src, dst) in batch.data().chunks(per).zip(out.data_mut().chunks_mut(per)) {
        CropFlip::sample(rng, padding, flip).apply(src, dst, shape, padding);
    }
    Ok(out)
}

/// Zero-pads by `padding`, crops back at a uniform offset and optionally
/// flips horizontally with probability 1/2, per example.
pub fn augment_random_crop_flip(
    ds: &LabeledDataset,
    padding: usize,
    flip: bool,
    seed: u64,
) -> LabeledDataset {
    let shape = ds.image_shape();
    let base = derive_seed(seed, "crop-flip");
    let mut out = ds.clone();
    for i in 0..ds.len() {
        let mut rng = example_rng(base, i as u64);
        CropFlip::sample(&mut rng, padding, flip).apply(
            ds.image(i),
            out.image_mut(i),
            shape,
            padding,
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biasdata::{gen_glyphs, GeneratorSpec};
    use crate::rng::rng_for;

    fn ds() -> LabeledDataset {
        gen_glyphs(&GeneratorSpec {
            num_classes: 3,
            samples_per_class: 4,
            ..GeneratorSpec::default()
        })
        .unwrap()
        .to_rgb()
    }

    #[test]
    fn no_padding_no_flip_is_identity() {
        let d = ds();
        assert_eq!(augment_random_crop_flip(&d, 0, false, 5), d);
    }

    #[test]
    fn offsets_cover_full_range() {
        let mut rng = rng_for(1, "cover");
        let mut seen = [[0usize; 9]; 9];
        for _ in 0..10_000 {
            let c = CropFlip::sample(&mut rng, 4, false);
            seen[c.dy][c.dx] += 1;
        }
        assert!(seen.iter().flatten().all(|&n| n > 0));
    }

    #[test]
    fn double_flip_is_identity() {
        let d = ds();
        let shape = d.image_shape();
        let f = CropFlip {
            dy: 0,
            dx: 0,
            flip: true,
        };
        let mut once = vec![0.0; d.pixels_per_image()];
        let mut twice = once.clone();
        f.apply(d.image(0), &mut once, shape, 0);
        assert_ne!(once.as_slice(), d.image(0));
        f.apply(&once, &mut twice, shape, 0);
        assert_eq!(twice.as_slice(), d.image(0));
    }

    #[test]
    fn shift_moves_content() {
        let src: Vec<f64> = (0..9).map(f64::from).collect();
        let mut out = vec![0.0; 9];
        // dy = dx = 2 with padding 1 shifts content up-left by one
        CropFlip {
            dy: 2,
            dx: 2,
            flip: false,
        }
        .apply(&src, &mut out, (3, 3, 1), 1);
        assert_eq!(out, vec![4., 5., 0., 7., 8., 0., 0., 0., 0.]);
    }
}
