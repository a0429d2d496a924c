//! Gradient-ratio instrument, the one-pixel experiment, and label/bias
//! dependence measures used to audit debiasing.

mod factors;
mod one_pixel;

use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

pub use factors::{extract_factors, fit_corruption_centroids, FactorExtractor};
pub use one_pixel::{
    run_one_pixel_experiment, write_gr_csv, GrRecord, OnePixelConfig, OnePixelResult,
};

/// Disjoint causal/confounding masks over the pixels of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelPartition {
    causal: Vec<bool>,
    confounding: Vec<bool>,
}

impl PixelPartition {
    pub fn new(causal: Vec<bool>, confounding: Vec<bool>) -> Result<Self> {
        if causal.len() != confounding.len() {
            return Err(Error::usage(format!(
                "mask lengths differ: {} vs {}",
                causal.len(),
                confounding.len()
            )));
        }
        if let Some(i) = causal.iter().zip(&confounding).position(|(a, b)| *a && *b) {
            return Err(Error::usage(format!("masks overlap at pixel {i}")));
        }
        if let Some(i) = causal
            .iter()
            .zip(&confounding)
            .position(|(a, b)| !*a && !*b)
        {
            return Err(Error::usage(format!("pixel {i} is in neither mask")));
        }
        Ok(PixelPartition {
            causal,
            confounding,
        })
    }

    /// Confounding = the first `num_classes` pixels of row 0 (all channels).
    pub fn one_pixel(image_shape: (usize, usize, usize), num_classes: usize) -> Result<Self> {
        let (h, w, c) = image_shape;
        if num_classes > w {
            return Err(Error::usage(format!(
                "{num_classes} classes exceed width {w}"
            )));
        }
        let mut conf = vec![false; h * w * c];
        conf[..num_classes * c].iter_mut().for_each(|v| *v = true);
        let causal = conf.iter().map(|v| !v).collect();
        Self::new(causal, conf)
    }

    pub fn pixels(&self) -> usize {
        self.causal.len()
    }

    pub fn causal_mask(&self) -> &[bool] {
        &self.causal
    }

    pub fn confounding_mask(&self) -> &[bool] {
        &self.confounding
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradientRatio {
    pub causal_norm: f64,
    pub confounding_norm: f64,
    /// `+inf` when the confounding norm is below 1e-12
    pub gr: f64,
}

pub const GR_DENOMINATOR_FLOOR: f64 = 1e-12;

/// L2 norm of the gradient on causal pixels over that on confounding
/// pixels, taken jointly over every image of a flattened batch gradient.
pub fn gradient_ratio(input_grad: &[f64], partition: &PixelPartition) -> Result<GradientRatio> {
    let p = partition.pixels();
    if p == 0 || !input_grad.len().is_multiple_of(p) {
        return Err(Error::usage(format!(
            "gradient of length {} is not a whole number of {p}-pixel images",
            input_grad.len()
        )));
    }
    let (mut sc, mut sf) = (0.0, 0.0);
    for img in input_grad.chunks(p) {
        for ((g, &c), &f) in img
            .iter()
            .zip(&partition.causal)
            .zip(&partition.confounding)
        {
            if c {
                sc += g * g;
            } else if f {
                sf += g * g;
            }
        }
    }
    let (causal_norm, confounding_norm) = (sc.sqrt(), sf.sqrt());
    let gr = if confounding_norm < GR_DENOMINATOR_FLOOR {
        f64::INFINITY
    } else {
        causal_norm / confounding_norm
    };
    Ok(GradientRatio {
        causal_norm,
        confounding_norm,
        gr,
    })
}

fn joint_counts(labels: &[usize], factors: &[usize]) -> Result<(Vec<Vec<f64>>, f64)> {
    if labels.is_empty() {
        return Err(Error::usage("mutual information of an empty dataset"));
    }
    if labels.len() != factors.len() {
        return Err(Error::usage(format!(
            "{} labels for {} factor estimates",
            labels.len(),
            factors.len()
        )));
    }
    let rows = labels.iter().max().unwrap() + 1;
    let cols = factors.iter().max().unwrap() + 1;
    let mut t = vec![vec![0.0; cols]; rows];
    for (&l, &f) in labels.iter().zip(factors) {
        t[l][f] += 1.0;
    }
    Ok((t, labels.len() as f64))
}

/// Plug-in estimate (nats) from the joint histogram of (label, factor).
pub fn label_bias_mutual_information(labels: &[usize], factors: &[usize]) -> Result<f64> {
    let (t, n) = joint_counts(labels, factors)?;
    let row: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..t[0].len())
        .map(|j| t.iter().map(|r| r[j]).sum())
        .collect();
    let mut mi = 0.0;
    for (i, r) in t.iter().enumerate() {
        for (j, &nij) in r.iter().enumerate() {
            if nij > 0.0 {
                mi += nij / n * (nij * n / (row[i] * col[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// Plug-in entropy (nats) of a discrete sample.
pub fn discrete_entropy(values: &[usize]) -> f64 {
    let n = values.len() as f64;
    let mut counts = vec![0.0; values.iter().max().map_or(0, |m| m + 1)];
    values.iter().for_each(|&v| counts[v] += 1.0);
    counts
        .iter()
        .filter(|&&c| c > 0.0)
        .map(|&c| -c / n * (c / n).ln())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: usize,
    pub p_value: f64,
}

/// Pearson's test of independence on the (label, factor) contingency table.
/// Empty rows and columns are dropped.
pub fn chi_square_independence(labels: &[usize], factors: &[usize]) -> Result<ChiSquareTest> {
    let (t, n) = joint_counts(labels, factors)?;
    let row: Vec<f64> = t.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<f64> = (0..t[0].len())
        .map(|j| t.iter().map(|r| r[j]).sum())
        .collect();
    let mut stat = 0.0;
    for (i, r) in t.iter().enumerate() {
        for (j, &o) in r.iter().enumerate() {
            if row[i] > 0.0 && col[j] > 0.0 {
                let e = row[i] * col[j] / n;
                stat += (o - e) * (o - e) / e;
            }
        }
    }
    let nr = row.iter().filter(|&&v| v > 0.0).count();
    let nc = col.iter().filter(|&&v| v > 0.0).count();
    let dof = (nr.saturating_sub(1)) * (nc.saturating_sub(1));
    let p_value = if dof == 0 {
        1.0
    } else {
        ChiSquared::new(dof as f64).expect("positive dof").sf(stat)
    };
    Ok(ChiSquareTest {
        statistic: stat,
        dof,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_for;
    use proptest::prelude::*;

    fn norm(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |acc, x| acc.hypot(*x))
    }

    #[test]
    fn equal_norms_give_one() {
        let p = PixelPartition::new(
            vec![true, true, false, false],
            vec![false, false, true, true],
        )
        .unwrap();
        let r = gradient_ratio(&[1.0, -2.0, 2.0, 1.0], &p).unwrap();
        assert!((r.gr - 1.0).abs() < 1e-15);
    }

    #[test]
    fn three_four_over_five_twelve() {
        let p = PixelPartition::new(
            vec![true, true, false, false],
            vec![false, false, true, true],
        )
        .unwrap();
        let r = gradient_ratio(&[3.0, 4.0, 5.0, 12.0], &p).unwrap();
        let expect = norm(&[3.0, 4.0]) / norm(&[5.0, 12.0]);
        assert!((r.gr - expect).abs() < 1e-15);
        assert!((r.gr - 5.0 / 13.0).abs() < 1e-15);
    }

    #[test]
    fn zero_confounding_gradient_is_infinite() {
        let p = PixelPartition::new(vec![true, false], vec![false, true]).unwrap();
        assert_eq!(gradient_ratio(&[1.0, 0.0], &p).unwrap().gr, f64::INFINITY);
    }

    #[test]
    fn overlapping_masks_rejected() {
        assert!(matches!(
            PixelPartition::new(vec![true, true], vec![true, false]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn one_pixel_partition_covers_first_row_prefix() {
        let p = PixelPartition::one_pixel((4, 5, 3), 4).unwrap();
        assert_eq!(p.confounding_mask().iter().filter(|&&c| c).count(), 12);
        assert!(p.confounding_mask()[..12].iter().all(|&c| c));
        assert!(PixelPartition::one_pixel((4, 3, 1), 4).is_err());
    }

    #[test]
    fn mi_of_copied_label_is_log_classes() {
        let labels: Vec<usize> = (0..400).map(|i| i % 4).collect();
        let mi = label_bias_mutual_information(&labels, &labels).unwrap();
        assert!((mi - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn mi_of_independent_factor_is_small() {
        let mut rng = rng_for(1, "mi");
        let labels: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..4)).collect();
        let factors: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..4)).collect();
        assert!(label_bias_mutual_information(&labels, &factors).unwrap() <= 0.02);
        let t = chi_square_independence(&labels, &factors).unwrap();
        assert_eq!(t.dof, 9);
        assert!(t.p_value > 0.01);
    }

    #[test]
    fn mi_single_class_is_zero() {
        let mi =
            label_bias_mutual_information(&[0; 50], &(0..50).map(|i| i % 5).collect::<Vec<_>>())
                .unwrap();
        assert_eq!(mi, 0.0);
        assert!(label_bias_mutual_information(&[], &[]).is_err());
    }

    #[test]
    fn chi_square_detects_dependence() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 2).collect();
        let t = chi_square_independence(&labels, &labels).unwrap();
        assert!(t.p_value < 1e-10);
    }

    proptest! {
        #[test]
        fn gr_is_scale_invariant(seed in 0u64..200, c in 0.01f64..100.0) {
            let mut rng = rng_for(seed, "gr");
            let p = PixelPartition::one_pixel((3, 4, 1), 3).unwrap();
            let g: Vec<f64> = (0..24).map(|_| rng.random_range(-1.0..1.0)).collect();
            let scaled: Vec<f64> = g.iter().map(|v| v * c).collect();
            let a = gradient_ratio(&g, &p).unwrap().gr;
            let b = gradient_ratio(&scaled, &p).unwrap().gr;
            prop_assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }

        #[test]
        fn mi_is_bounded_by_marginal_entropies(seed in 0u64..300, n in 1usize..300, k in 1usize..6) {
            let mut rng = rng_for(seed, "mi-prop");
            let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
            let factors: Vec<usize> = labels.iter().map(|&l| if rng.random_bool(0.5) { l } else { rng.random_range(0..k) }).collect();
            let mi = label_bias_mutual_information(&labels, &factors).unwrap();
            prop_assert!(mi >= 0.0);
            prop_assert!(mi <= discrete_entropy(&labels).min(discrete_entropy(&factors)) + 1e-12);
        }
    }
}
