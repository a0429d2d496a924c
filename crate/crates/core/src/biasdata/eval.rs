use rand::Rng as _;

use super::bias::{apply_factors, Factor};
use super::{BiasSpec, BiasValue, EvalKind, EvalMode, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, example_rng};

/// Builds a test set from an unbiased base set.
///
/// Independent mode draws each example's factor uniformly over all classes'
/// factors, regardless of its label. Conditioned mode applies one fixed value
/// to every example; for one-pixel and corruption biases that value is "no
/// bias" and the clean image is returned.
pub fn make_eval_set(
    base: &LabeledDataset,
    spec: &BiasSpec,
    mode: &EvalMode,
    seed: u64,
) -> Result<LabeledDataset> {
    mode.validate()?;
    let factors: Vec<Factor> = match mode.mode {
        EvalKind::Independent => {
            let s = derive_seed(seed, "eval-independent");
            (0..base.len())
                .map(|i| Factor::Index(example_rng(s, i as u64).random_range(0..base.num_classes)))
                .collect()
        }
        EvalKind::Conditioned => {
            let value = mode.conditioned_bias_value.as_ref().expect("validated");
            let f = match (spec.kind.is_color(), value) {
                (true, BiasValue::Color(c)) => {
                    if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                        return Err(Error::usage("conditioned colour must lie in [0, 1]"));
                    }
                    Factor::Constant(*c)
                }
                (true, BiasValue::Clean(_)) => {
                    return Err(Error::usage(format!(
                        "{} evaluation needs a conditioned colour",
                        spec.kind.name()
                    )))
                }
                (false, _) => Factor::Clean,
            };
            vec![f; base.len()]
        }
    };
    let mut out = apply_factors(base, spec, &factors, derive_seed(seed, "eval"))?;
    out.provenance = format!("{}:{}", base.provenance, mode.label());
    Ok(out)
}
