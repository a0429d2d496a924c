use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{BiasKind, BiasSpec, LabeledDataset, NO_FACTOR};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, example_rng, Rng};

/// Glyph intensity at or above which a pixel counts as foreground.
pub const FOREGROUND_THRESHOLD: f64 = 0.1;

/// Per-example choice of confounding factor.
#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Factor {
    /// the factor designated for class `j`
    Index(usize),
    /// a fixed colour (no noise)
    Constant([f64; 3]),
    /// nothing applied
    Clean,
}

/// `n` evenly spaced hues at full saturation and value.
pub fn default_palette(n: usize) -> Vec<[f64; 3]> {
    (0..n)
        .map(|k| {
            let h = 6.0 * k as f64 / n as f64;
            let x = 1.0 - ((h % 2.0) - 1.0).abs();
            match h as usize {
                0 => [1.0, x, 0.0],
                1 => [x, 1.0, 0.0],
                2 => [0.0, 1.0, x],
                3 => [0.0, x, 1.0],
                4 => [x, 0.0, 1.0],
                _ => [1.0, 0.0, x],
            }
        })
        .collect()
}

/// Foreground mask of one `[h, w, c]` image: max channel ≥ the threshold.
pub fn glyph_mask(img: &[f64], channels: usize) -> Vec<bool> {
    img.chunks(channels)
        .map(|px| px.iter().cloned().fold(0.0, f64::max) >= FOREGROUND_THRESHOLD)
        .collect()
}

/// Aligned with probability `bias_ratio`, otherwise a uniformly drawn
/// different class's factor.
pub(crate) fn training_factors(ds: &LabeledDataset, ratio: f64, seed: u64) -> Vec<Factor> {
    let base = derive_seed(seed, "bias-choice");
    let c = ds.num_classes;
    ds.labels
        .iter()
        .enumerate()
        .map(|(i, &label)| {
            let mut rng = example_rng(base, i as u64);
            if rng.random::<f64>() < ratio || c < 2 {
                Factor::Index(label)
            } else {
                let j = rng.random_range(0..c - 1);
                Factor::Index(if j >= label { j + 1 } else { j })
            }
        })
        .collect()
}

fn noisy_color(base: [f64; 3], std: f64, rng: &mut Rng) -> [f64; 3] {
    if std == 0.0 {
        return base;
    }
    let normal = Normal::new(0.0, std).expect("std >= 0");
    base.map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0))
}

pub(crate) fn apply_factors(
    ds: &LabeledDataset,
    spec: &BiasSpec,
    factors: &[Factor],
    seed: u64,
) -> Result<LabeledDataset> {
    spec.validate(ds.num_classes)?;
    if factors.len() != ds.len() {
        return Err(Error::usage("one factor per example required"));
    }
    let (h, w, _) = ds.image_shape();
    let mut out = match spec.kind {
        BiasKind::BackgroundColor | BiasKind::ForegroundColor => ds.to_rgb(),
        _ => ds.clone(),
    };
    let (_, _, c) = out.image_shape();
    if spec.kind == BiasKind::OnePixel && ds.num_classes > w {
        return Err(Error::usage(format!(
            "one-pixel bias needs width >= {} classes, got {w}",
            ds.num_classes
        )));
    }
    let palette = spec.palette_or_default(ds.num_classes);
    let noise_base = derive_seed(seed, "bias-noise");

    for (i, factor) in factors.iter().enumerate() {
        let label = ds.labels[i];
        let (value, aligned) = match factor {
            Factor::Index(j) => (*j as i64, *j == label),
            _ => (NO_FACTOR, false),
        };
        out.bias_values[i] = value;
        out.aligned[i] = aligned;
        if *factor == Factor::Clean {
            continue;
        }
        let mut rng = example_rng(noise_base, i as u64);
        let img = out.image_mut(i);
        match spec.kind {
            BiasKind::OnePixel => {
                if let Factor::Index(j) = factor {
                    img[j * c..(j + 1) * c].fill(spec.pixel_value);
                }
            }
            BiasKind::BackgroundColor | BiasKind::ForegroundColor => {
                let color = match factor {
                    Factor::Index(j) => noisy_color(palette[*j], spec.color_noise_std, &mut rng),
                    Factor::Constant(col) => *col,
                    Factor::Clean => unreachable!(),
                };
                let mask = glyph_mask(img, c);
                let background = spec.kind == BiasKind::BackgroundColor;
                for (px, &is_glyph) in img.chunks_mut(c).zip(&mask) {
                    match (background, is_glyph) {
                        (true, false) | (false, true) => px.copy_from_slice(&color),
                        (false, false) => px.fill(0.0),
                        (true, true) => {}
                    }
                }
            }
            BiasKind::Corruption => {
                if let Factor::Index(j) = factor {
                    let list = spec.corruptions.as_ref().expect("validated");
                    list[*j].apply(img, h, w, c);
                }
            }
        }
    }
    Ok(out)
}

fn apply_kind(
    ds: &LabeledDataset,
    spec: &BiasSpec,
    kind: BiasKind,
    seed: u64,
) -> Result<LabeledDataset> {
    if spec.kind != kind {
        return Err(Error::usage(format!(
            "bias spec of kind {} passed to the {} generator",
            spec.kind.name(),
            kind.name()
        )));
    }
    let factors = training_factors(ds, spec.bias_ratio, seed);
    apply_factors(ds, spec, &factors, seed)
}

/// Sets pixel (0, k) to `pixel_value`, with k the label for aligned
/// examples and another class index otherwise.
pub fn apply_one_pixel_bias(
    ds: &LabeledDataset,
    spec: &BiasSpec,
    seed: u64,
) -> Result<LabeledDataset> {
    apply_kind(ds, spec, BiasKind::OnePixel, seed)
}

/// Colours background pixels with a noisy palette entry (output is RGB).
pub fn apply_background_bias(
    ds: &LabeledDataset,
    spec: &BiasSpec,
    seed: u64,
) -> Result<LabeledDataset> {
    apply_kind(ds, spec, BiasKind::BackgroundColor, seed)
}

/// Colours glyph pixels with a noisy palette entry on black (output is RGB).
pub fn apply_foreground_bias(
    ds: &LabeledDataset,
    spec: &BiasSpec,
    seed: u64,
) -> Result<LabeledDataset> {
    apply_kind(ds, spec, BiasKind::ForegroundColor, seed)
}

pub fn apply_corruption_bias(
    ds: &LabeledDataset,
    spec: &BiasSpec,
    seed: u64,
) -> Result<LabeledDataset> {
    apply_kind(ds, spec, BiasKind::Corruption, seed)
}

/// Dispatches on `spec.kind`.
pub fn apply_bias(ds: &LabeledDataset, spec: &BiasSpec, seed: u64) -> Result<LabeledDataset> {
    apply_kind(ds, spec, spec.kind, seed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::biasdata::{gen_glyphs, Corruption, GeneratorSpec};

    fn glyphs(classes: usize, per_class: usize, seed: u64) -> LabeledDataset {
        gen_glyphs(&GeneratorSpec {
            num_classes: classes,
            samples_per_class: per_class,
            seed,
            ..GeneratorSpec::default()
        })
        .unwrap()
    }

    fn spec(kind: BiasKind, ratio: f64) -> BiasSpec {
        BiasSpec {
            kind,
            bias_ratio: ratio,
            ..BiasSpec::default()
        }
    }

    fn masks(ds: &LabeledDataset) -> Vec<Vec<bool>> {
        let c = ds.image_shape().2;
        (0..ds.len()).map(|i| glyph_mask(ds.image(i), c)).collect()
    }

    #[test]
    fn one_pixel_full_bias_marks_label_column() {
        let ds = glyphs(10, 20, 0);
        let s = BiasSpec {
            pixel_value: 0.7,
            ..spec(BiasKind::OnePixel, 1.0)
        };
        let b = apply_one_pixel_bias(&ds, &s, 1).unwrap();
        for i in 0..b.len() {
            let k = b.labels[i];
            assert_eq!(b.image(i)[k], 0.7);
            assert_eq!(b.bias_values[i], k as i64);
            assert!(b.aligned[i]);
            // only the label column of row 0 is set
            assert_eq!(b.image(i)[..12].iter().filter(|&&v| v != 0.0).count(), 1);
        }
    }

    #[test]
    fn one_pixel_rejects_narrow_images_and_bad_values() {
        let mut ds = glyphs(4, 2, 0);
        let bad = BiasSpec {
            pixel_value: 1.5,
            ..spec(BiasKind::OnePixel, 1.0)
        };
        assert!(apply_one_pixel_bias(&ds, &bad, 0).is_err());
        ds.num_classes = 17;
        assert!(apply_one_pixel_bias(&ds, &spec(BiasKind::OnePixel, 1.0), 0).is_err());
    }

    #[test]
    fn background_full_bias_records_label_and_exact_colour() {
        let ds = glyphs(5, 10, 2);
        let s = BiasSpec {
            color_noise_std: 0.0,
            ..spec(BiasKind::BackgroundColor, 1.0)
        };
        let b = apply_background_bias(&ds, &s, 3).unwrap();
        let pal = default_palette(5);
        assert_eq!(b.image_shape().2, 3);
        for i in 0..b.len() {
            assert_eq!(b.bias_values[i], b.labels[i] as i64);
            for (p, px) in b.image(i).chunks(3).enumerate() {
                if ds.image(i)[p] < FOREGROUND_THRESHOLD {
                    assert_eq!(px, pal[b.labels[i]]);
                }
            }
        }
    }

    #[test]
    fn aligned_fraction_within_three_sigma() {
        let ds = glyphs(10, 200, 4);
        let b = apply_background_bias(&ds, &spec(BiasKind::BackgroundColor, 0.95), 5).unwrap();
        let f = b.aligned_fraction();
        assert!((0.935..=0.965).contains(&f), "{f}");
        for i in 0..b.len() {
            assert_eq!(b.aligned[i], b.bias_values[i] == b.labels[i] as i64);
        }
    }

    #[test]
    fn foreground_colour_mean_and_mask() {
        let ds = glyphs(4, 250, 6);
        let b = apply_foreground_bias(&ds, &spec(BiasKind::ForegroundColor, 1.0), 7).unwrap();
        assert_eq!(masks(&ds.to_rgb()), masks(&b));
        let pal = default_palette(4);
        let mut sums = [[0.0; 3]; 4];
        let mut counts = [0.0; 4];
        for i in 0..b.len() {
            let l = b.labels[i];
            let px = b
                .image(i)
                .chunks(3)
                .zip(glyph_mask(b.image(i), 3))
                .find(|(_, m)| *m)
                .map(|(p, _)| p.to_vec())
                .unwrap();
            for ch in 0..3 {
                sums[l][ch] += px[ch];
            }
            counts[l] += 1.0;
        }
        for l in 0..4 {
            for ch in 0..3 {
                assert!((sums[l][ch] / counts[l] - pal[l][ch]).abs() < 0.01);
            }
        }
    }

    #[test]
    fn colour_biases_preserve_glyph_mask() {
        let ds = glyphs(6, 15, 8);
        for kind in [BiasKind::BackgroundColor, BiasKind::ForegroundColor] {
            let b = apply_bias(&ds, &spec(kind, 0.8), 9).unwrap();
            assert_eq!(b.image_shape().2, 3);
            // background colours are bright, so compare against the original mask directly
            for i in 0..b.len() {
                let orig = glyph_mask(ds.image(i), 1);
                if kind == BiasKind::ForegroundColor {
                    assert_eq!(glyph_mask(b.image(i), 3), orig);
                } else {
                    for (p, &g) in orig.iter().enumerate() {
                        if g {
                            assert_eq!(b.image(i)[p * 3], ds.image(i)[p]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn corruption_bias_records_ids() {
        let ds = glyphs(4, 10, 10).to_rgb();
        let s = BiasSpec {
            corruptions: Some(Corruption::ALL.to_vec()),
            ..spec(BiasKind::Corruption, 1.0)
        };
        let b = apply_corruption_bias(&ds, &s, 11).unwrap();
        for i in 0..b.len() {
            assert_eq!(b.bias_values[i], b.labels[i] as i64);
        }
        // brightness class: zero background becomes 0.3
        let i = b.labels.iter().position(|&l| l == 0).unwrap();
        assert!((b.image(i)[0] - 0.3).abs() < 1e-12);
    }

    #[test]
    fn kind_mismatch_rejected() {
        let ds = glyphs(4, 2, 0);
        assert!(apply_foreground_bias(&ds, &spec(BiasKind::OnePixel, 1.0), 0).is_err());
    }

    #[test]
    fn palette_is_distinct_and_saturated() {
        let p = default_palette(10);
        for c in &p {
            assert_eq!(c.iter().cloned().fold(0.0, f64::max), 1.0);
            assert_eq!(c.iter().cloned().fold(1.0, f64::min), 0.0);
        }
        for a in 0..10 {
            for b in a + 1..10 {
                assert_ne!(p[a], p[b]);
            }
        }
    }
}
