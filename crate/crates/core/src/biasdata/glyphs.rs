use rand::Rng as _;

use super::{GeneratorSpec, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, example_rng};
use crate::tensor::Tensor;

pub const MAX_GLYPH_CLASSES: usize = 10;

type Segment = ((f64, f64), (f64, f64));

/// Stroke patterns in a unit box, (x, y) with y pointing down.
fn pattern(class: usize) -> &'static [Segment] {
    const P: [&[Segment]; MAX_GLYPH_CLASSES] = [
        // vertical bar
        &[((0.5, 0.0), (0.5, 1.0))],
        // horizontal bar
        &[((0.0, 0.5), (1.0, 0.5))],
        // falling diagonal
        &[((0.0, 0.0), (1.0, 1.0))],
        // rising diagonal
        &[((0.0, 1.0), (1.0, 0.0))],
        // box
        &[
            ((0.0, 0.0), (1.0, 0.0)),
            ((1.0, 0.0), (1.0, 1.0)),
            ((1.0, 1.0), (0.0, 1.0)),
            ((0.0, 1.0), (0.0, 0.0)),
        ],
        // plus
        &[((0.5, 0.0), (0.5, 1.0)), ((0.0, 0.5), (1.0, 0.5))],
        // cross
        &[((0.0, 0.0), (1.0, 1.0)), ((0.0, 1.0), (1.0, 0.0))],
        // L
        &[((0.0, 0.0), (0.0, 1.0)), ((0.0, 1.0), (1.0, 1.0))],
        // T
        &[((0.0, 0.0), (1.0, 0.0)), ((0.5, 0.0), (0.5, 1.0))],
        // triangle
        &[
            ((0.5, 0.0), (1.0, 1.0)),
            ((1.0, 1.0), (0.0, 1.0)),
            ((0.0, 1.0), (0.5, 0.0)),
        ],
    ];
    P[class]
}

fn segment_distance(px: f64, py: f64, ((ax, ay), (bx, by)): Segment) -> f64 {
    let (dx, dy) = (bx - ax, by - ay);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((px - ax) * dx + (py - ay) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (cx, cy) = (ax + t * dx, ay + t * dy);
    ((px - cx).powi(2) + (py - cy).powi(2)).sqrt()
}

const MAX_SHIFT: f64 = 2.0;
const MAX_RADIUS: f64 = 1.2;

fn margins(h: usize, w: usize) -> (f64, f64) {
    (4.0f64.min(h as f64 / 3.0), 3.0f64.min(w as f64 / 4.0))
}

/// Largest upward shift that keeps the thickest stroke out of row 0.
fn vertical_shift_limit(h: usize) -> f64 {
    (margins(h, h).0 - MAX_RADIUS - 0.51).clamp(0.0, MAX_SHIFT)
}

/// Renders one glyph into `out` (`h * w` grayscale values).
fn render(class: usize, h: usize, w: usize, shift: (f64, f64), radius: f64, out: &mut [f64]) {
    let (top, side) = margins(h, w);
    let box_h = (h as f64 - 1.0 - top - side).max(1.0);
    let box_w = (w as f64 - 1.0 - 2.0 * side).max(1.0);
    let segments: Vec<Segment> = pattern(class)
        .iter()
        .map(|&((ax, ay), (bx, by))| {
            (
                (side + ax * box_w + shift.0, top + ay * box_h + shift.1),
                (side + bx * box_w + shift.0, top + by * box_h + shift.1),
            )
        })
        .collect();
    for y in 0..h {
        for x in 0..w {
            let d = segments
                .iter()
                .map(|&s| segment_distance(x as f64, y as f64, s))
                .fold(f64::INFINITY, f64::min);
            out[y * w + x] = (radius + 0.5 - d).clamp(0.0, 1.0);
        }
    }
}

/// Procedural class glyphs with per-example translation (up to ±2 px, less
/// vertically on small images so row 0 stays blank) and stroke thickness
/// jitter. Example `i` has label `i % num_classes`; every example
/// draws from its own substream of `spec.seed`.
pub fn gen_glyphs(spec: &GeneratorSpec) -> Result<LabeledDataset> {
    spec.validate()?;
    if spec.num_classes > MAX_GLYPH_CLASSES {
        return Err(Error::usage(format!(
            "only {MAX_GLYPH_CLASSES} glyph patterns exist"
        )));
    }
    let (h, w, c) = spec.image_size;
    let n = spec.num_classes * spec.samples_per_class;
    let base = derive_seed(spec.seed, "glyphs");
    let mut data = vec![0.0; n * h * w * c];
    let mut gray = vec![0.0; h * w];
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let class = i % spec.num_classes;
        let mut rng = example_rng(base, i as u64);
        let dy = vertical_shift_limit(h);
        let shift = (
            rng.random_range(-MAX_SHIFT..=MAX_SHIFT),
            rng.random_range(-dy..=dy),
        );
        let radius = rng.random_range(0.6..=MAX_RADIUS);
        render(class, h, w, shift, radius, &mut gray);
        let img = &mut data[i * h * w * c..(i + 1) * h * w * c];
        for (p, &v) in gray.iter().enumerate() {
            for ch in 0..c {
                img[p * c + ch] = v;
            }
        }
        labels.push(class);
    }
    LabeledDataset::new(
        Tensor::new(vec![n, h, w, c], data)?,
        labels,
        spec.num_classes,
        "glyphs",
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(classes: usize, per_class: usize, seed: u64) -> GeneratorSpec {
        GeneratorSpec {
            num_classes: classes,
            samples_per_class: per_class,
            seed,
            ..GeneratorSpec::default()
        }
    }

    #[test]
    fn balanced_labels() {
        let d = gen_glyphs(&spec(4, 10, 0)).unwrap();
        assert_eq!(d.len(), 40);
        assert_eq!(d.class_counts(), vec![10; 4]);
        assert_eq!(d.images.shape(), &[40, 12, 12, 1]);
        d.check_pixel_range().unwrap();
    }

    #[test]
    fn deterministic() {
        assert_eq!(
            gen_glyphs(&spec(3, 5, 7)).unwrap(),
            gen_glyphs(&spec(3, 5, 7)).unwrap()
        );
        assert_ne!(
            gen_glyphs(&spec(3, 5, 7)).unwrap().images,
            gen_glyphs(&spec(3, 5, 8)).unwrap().images
        );
    }

    #[test]
    fn row_zero_stays_blank() {
        for size in [8, 12, 16] {
            let d = gen_glyphs(&GeneratorSpec {
                image_size: (size, size, 1),
                ..spec(8, 30, 1)
            })
            .unwrap();
            for i in 0..d.len() {
                assert!(
                    d.image(i)[..size].iter().all(|&v| v == 0.0),
                    "size {size} example {i}"
                );
            }
        }
    }

    #[test]
    fn class_means_differ() {
        let d = gen_glyphs(&spec(10, 50, 2)).unwrap();
        let n = d.pixels_per_image();
        let mut means = vec![vec![0.0; n]; 10];
        for i in 0..d.len() {
            for (m, &v) in means[d.labels[i]].iter_mut().zip(d.image(i)) {
                *m += v / 50.0;
            }
        }
        for a in 0..10 {
            for b in a + 1..10 {
                let dist: f64 = means[a]
                    .iter()
                    .zip(&means[b])
                    .map(|(x, y)| (x - y).powi(2))
                    .sum::<f64>()
                    .sqrt();
                assert!(dist > 0.5, "classes {a} and {b}: {dist}");
            }
        }
    }

    #[test]
    fn too_many_classes() {
        let mut s = spec(11, 1, 0);
        s.image_size = (16, 16, 1);
        assert!(matches!(gen_glyphs(&s), Err(Error::Usage(_))));
    }
}
