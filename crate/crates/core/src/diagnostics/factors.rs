use crate::biasdata::{glyph_mask, Corruption, LabeledDataset, NO_FACTOR};
use crate::error::{Error, Result};

/// Re-estimates each image's confounding factor from its pixels alone.
#[derive(Debug, Clone, PartialEq)]
pub enum FactorExtractor {
    /// mean colour of the border pixels, nearest palette entry
    BackgroundPalette(Vec<[f64; 3]>),
    /// mean colour of the foreground pixels, palette entry of closest hue
    ForegroundPalette(Vec<[f64; 3]>),
    /// brightest of the first `num_classes` pixels of row 0; `num_classes`
    /// when none exceeds half of `pixel_value`
    OnePixelColumn {
        num_classes: usize,
        pixel_value: f64,
    },
    /// nearest centroid in a small image-statistics feature space
    NearestCentroid(Vec<Vec<f64>>),
}

fn mean_color(img: &[f64], c: usize, keep: impl Fn(usize) -> bool) -> Option<[f64; 3]> {
    let mut acc = [0.0; 3];
    let mut n = 0usize;
    for (p, px) in img.chunks(c).enumerate() {
        if keep(p) {
            for ch in 0..3 {
                acc[ch] += px[ch.min(c - 1)];
            }
            n += 1;
        }
    }
    (n > 0).then(|| acc.map(|v| v / n as f64))
}

fn nearest_by(palette: &[[f64; 3]], score: impl Fn(&[f64; 3]) -> f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::INFINITY;
    for (j, p) in palette.iter().enumerate() {
        let s = score(p);
        if s < best_score {
            best = j;
            best_score = s;
        }
    }
    best
}

/// Features for corruption detection: mean, spread about the mean, mean
/// channel spread, and the fraction of 2×2 blocks that are constant.
fn corruption_features(img: &[f64], h: usize, w: usize, c: usize) -> Vec<f64> {
    let n = img.len() as f64;
    let mean = img.iter().sum::<f64>() / n;
    let std = (img.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    let chroma = img
        .chunks(c)
        .map(|px| {
            let m = px.iter().sum::<f64>() / c as f64;
            px.iter().map(|v| (v - m).abs()).sum::<f64>() / c as f64
        })
        .sum::<f64>()
        / (h * w) as f64;
    let mut flat = 0usize;
    let mut blocks = 0usize;
    for by in (0..h.saturating_sub(1)).step_by(2) {
        for bx in (0..w.saturating_sub(1)).step_by(2) {
            let at = |y: usize, x: usize| &img[(y * w + x) * c..(y * w + x + 1) * c];
            let a = at(by, bx);
            let same = [at(by, bx + 1), at(by + 1, bx), at(by + 1, bx + 1)]
                .iter()
                .all(|b| a.iter().zip(b.iter()).all(|(u, v)| (u - v).abs() < 1e-9));
            flat += usize::from(same);
            blocks += 1;
        }
    }
    vec![mean, std, chroma, flat as f64 / blocks.max(1) as f64]
}

/// Per-factor mean feature vectors from a reference set whose
/// `bias_values` are known (e.g. a freshly generated corruption-biased set).
pub fn fit_corruption_centroids(
    reference: &LabeledDataset,
    corruptions: &[Corruption],
) -> Result<FactorExtractor> {
    let (h, w, c) = reference.image_shape();
    let k = corruptions.len();
    let mut sums = vec![vec![0.0; 4]; k];
    let mut counts = vec![0usize; k];
    for i in 0..reference.len() {
        let v = reference.bias_values[i];
        if v == NO_FACTOR {
            continue;
        }
        let j = v as usize;
        if j >= k {
            return Err(Error::usage(format!(
                "bias value {j} outside the corruption list"
            )));
        }
        for (s, f) in sums[j]
            .iter_mut()
            .zip(corruption_features(reference.image(i), h, w, c))
        {
            *s += f;
        }
        counts[j] += 1;
    }
    if counts.contains(&0) {
        return Err(Error::usage(
            "reference set lacks examples of some corruption",
        ));
    }
    Ok(FactorExtractor::NearestCentroid(
        sums.into_iter()
            .zip(counts)
            .map(|(s, n)| s.into_iter().map(|v| v / n as f64).collect())
            .collect(),
    ))
}

/// Estimated factor index for every image.
pub fn extract_factors(ds: &LabeledDataset, extractor: &FactorExtractor) -> Result<Vec<usize>> {
    let (h, w, c) = ds.image_shape();
    let needs_rgb = matches!(
        extractor,
        FactorExtractor::BackgroundPalette(_) | FactorExtractor::ForegroundPalette(_)
    );
    if needs_rgb && c != 3 {
        return Err(Error::usage("colour factors need RGB images"));
    }
    let border = |p: usize| {
        let (y, x) = (p / w, p % w);
        y == 0 || x == 0 || y == h - 1 || x == w - 1
    };
    (0..ds.len())
        .map(|i| {
            let img = ds.image(i);
            Ok(match extractor {
                FactorExtractor::BackgroundPalette(pal) => {
                    let m = mean_color(img, c, border).expect("border is nonempty");
                    nearest_by(pal, |p| {
                        p.iter().zip(&m).map(|(a, b)| (a - b).powi(2)).sum()
                    })
                }
                FactorExtractor::ForegroundPalette(pal) => {
                    let mask = glyph_mask(img, c);
                    let m = mean_color(img, c, |p| mask[p]).unwrap_or([0.0; 3]);
                    let mn = m.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                    nearest_by(pal, |p| {
                        let pn = p.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
                        -p.iter().zip(&m).map(|(a, b)| a * b).sum::<f64>() / (pn * mn)
                    })
                }
                FactorExtractor::OnePixelColumn {
                    num_classes,
                    pixel_value,
                } => {
                    let vals: Vec<f64> = (0..*num_classes)
                        .map(|j| img[j * c..(j + 1) * c].iter().sum::<f64>() / c as f64)
                        .collect();
                    let best = vals
                        .iter()
                        .enumerate()
                        .fold(0, |b, (k, &v)| if v > vals[b] { k } else { b });
                    if vals[best] > pixel_value / 2.0 {
                        best
                    } else {
                        *num_classes
                    }
                }
                FactorExtractor::NearestCentroid(centroids) => {
                    let f = corruption_features(img, h, w, c);
                    let mut best = 0;
                    let mut bd = f64::INFINITY;
                    for (j, cen) in centroids.iter().enumerate() {
                        let d: f64 = cen.iter().zip(&f).map(|(a, b)| (a - b).powi(2)).sum();
                        if d < bd {
                            best = j;
                            bd = d;
                        }
                    }
                    best
                }
            })
        })
        .collect()
}
