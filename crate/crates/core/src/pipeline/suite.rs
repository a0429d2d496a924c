use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{headline_accuracies, run_experiment, ExperimentConfig, ExperimentReport, Method};
use crate::biasdata::BiasKind;
use crate::error::{Error, Result};

/// One (config, seed) run; `report` is absent when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteCell {
    pub config_index: usize,
    pub seed: u64,
    pub report: Option<ExperimentReport>,
    pub error: Option<String>,
}

/// One summary table row. Spread is the sample standard deviation over
/// successful seeds (0 for a single seed).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteRow {
    pub dataset: String,
    pub method: String,
    pub bias_ratio: f64,
    pub acc_independent_mean: Option<f64>,
    pub acc_independent_std: Option<f64>,
    pub acc_conditioned_mean: Option<f64>,
    pub acc_conditioned_std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub seeds: Vec<u64>,
    pub rows: Vec<SuiteRow>,
    pub cells: Vec<SuiteCell>,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let std = if v.len() < 2 {
        0.0
    } else {
        (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (Some(mean), Some(std))
}

/// Runs every config under every seed (overriding `seed`), at most `jobs`
/// at a time. Failed runs are recorded and the suite carries on.
pub fn run_suite(configs: &[ExperimentConfig], seeds: &[u64], jobs: usize) -> Result<SuiteReport> {
    if seeds.is_empty() {
        return Err(Error::usage("run_suite needs at least one seed"));
    }
    if configs.is_empty() {
        return Err(Error::usage("run_suite needs at least one config"));
    }
    for c in configs {
        c.validate()?;
    }
    let tasks: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|i| seeds.iter().map(move |&s| (i, s)))
        .collect();
    let results: Vec<Mutex<Option<SuiteCell>>> = tasks.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.max(1).min(tasks.len()) {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::SeqCst);
                let Some(&(ci, seed)) = tasks.get(t) else {
                    break;
                };
                let cfg = ExperimentConfig {
                    seed,
                    ..configs[ci].clone()
                };
                let cell = match run_experiment(&cfg) {
                    Ok(run) => SuiteCell {
                        config_index: ci,
                        seed,
                        report: Some(run.report),
                        error: None,
                    },
                    Err(e) => {
                        warn!("suite run config={ci} seed={seed} failed: {e}");
                        SuiteCell {
                            config_index: ci,
                            seed,
                            report: None,
                            error: Some(e.to_string()),
                        }
                    }
                };
                *results[t].lock().expect("no poisoned runs") = Some(cell);
            });
        }
    });
    let cells: Vec<SuiteCell> = results
        .into_iter()
        .map(|m| {
            m.into_inner()
                .expect("no poisoned runs")
                .expect("every task ran")
        })
        .collect();
    let rows = configs
        .iter()
        .enumerate()
        .map(|(ci, cfg)| {
            let (mut ind, mut cond) = (Vec::new(), Vec::new());
            for r in cells
                .iter()
                .filter(|c| c.config_index == ci)
                .filter_map(|c| c.report.as_ref())
            {
                let (i, c) = headline_accuracies(r);
                ind.extend(i);
                cond.extend(c);
            }
            let (im, is) = mean_std(&ind);
            let (cm, cs) = mean_std(&cond);
            SuiteRow {
                dataset: cfg.dataset_name(),
                method: cfg.mode.name().to_string(),
                bias_ratio: cfg.bias.bias_ratio,
                acc_independent_mean: im,
                acc_independent_std: is,
                acc_conditioned_mean: cm,
                acc_conditioned_std: cs,
            }
        })
        .collect();
    Ok(SuiteReport {
        seeds: seeds.to_vec(),
        rows,
        cells,
    })
}

/// Summary table with columns `dataset,method,bias_ratio,acc_independent_mean,
/// acc_independent_std,acc_conditioned_mean,acc_conditioned_std`; missing
/// values are empty fields.
pub fn write_suite_csv<W: Write>(w: W, rows: &[SuiteRow]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)
            .map_err(|e| Error::format("suite table", e.to_string()))?;
    }
    out.flush().map_err(|e| Error::io("suite table", e))
}

/// Vanilla and LAD on background- and foreground-biased glyphs at ratio 1.
pub fn default_suite(base: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let mut out = Vec::new();
    for kind in [BiasKind::BackgroundColor, BiasKind::ForegroundColor] {
        for mode in [Method::Vanilla, Method::Lad] {
            let mut c = base.clone();
            c.bias.kind = kind;
            c.bias.bias_ratio = 1.0;
            c.mode = mode;
            out.push(c);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_std_and_single_seed() {
        assert_eq!(mean_std(&[0.4]), (Some(0.4), Some(0.0)));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, Some(2.0));
        assert!((s.unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(mean_std(&[]), (None, None));
    }

    #[test]
    fn csv_columns() {
        let row = SuiteRow {
            dataset: "glyphs_background_color".into(),
            method: "lad".into(),
            bias_ratio: 1.0,
            acc_independent_mean: Some(0.5),
            acc_independent_std: Some(0.0),
            acc_conditioned_mean: None,
            acc_conditioned_std: None,
        };
        let mut buf = Vec::new();
        write_suite_csv(&mut buf, &[row]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "dataset,method,bias_ratio,acc_independent_mean,acc_independent_std,acc_conditioned_mean,acc_conditioned_std"
        );
        assert_eq!(lines[1], "glyphs_background_color,lad,1.0,0.5,0.0,,");
    }
}
