use crate::error::{Error, Result};
use crate::tensor::{Graph, Var};

fn logits_shape(g: &Graph, logits: Var, op: &str) -> Result<(usize, usize)> {
    let s = g.shape(logits);
    if s.len() != 2 {
        return Err(Error::usage(format!(
            "{op} expects [batch, classes] logits, got {s:?}"
        )));
    }
    Ok((s[0], s[1]))
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy(g: &mut Graph, logits: Var, labels: &[usize]) -> Result<Var> {
    let (batch, classes) = logits_shape(g, logits, "cross_entropy")?;
    if labels.is_empty() {
        return Err(Error::usage("cross_entropy on an empty batch"));
    }
    if labels.len() != batch {
        return Err(Error::usage(format!(
            "cross_entropy: {} labels for a batch of {batch}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::usage(format!("label {bad} outside [0, {classes})")));
    }
    let lp = g.log_softmax(logits)?;
    let picked = g.pick(lp, labels)?;
    let m = g.mean(picked)?;
    g.scale(m, -1.0)
}

/// Per-row entropy `-Σ p ln p` of `softmax(logits)`, shape `[batch]`.
pub fn predictive_entropy(g: &mut Graph, logits: Var) -> Result<Var> {
    let (_, classes) = logits_shape(g, logits, "predictive_entropy")?;
    if classes < 2 {
        return Err(Error::usage(
            "predictive_entropy needs at least two classes",
        ));
    }
    let p = g.softmax(logits)?;
    let lp = g.log_softmax(logits)?;
    let plp = g.mul(p, lp)?;
    let s = g.sum_rows(plp)?;
    g.scale(s, -1.0)
}
