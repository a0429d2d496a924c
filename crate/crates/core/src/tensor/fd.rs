use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Outcome of comparing autodiff gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct FdReport {
    /// max over coordinates of |analytic - numeric| / (|analytic| + 1e-8)
    pub max_relative_error: f64,
    pub worst_index: usize,
    /// Coordinates where the one-sided slopes disagree (a kink within `h`).
    pub non_differentiable: Vec<usize>,
}

impl FdReport {
    pub fn is_smooth(&self) -> bool {
        self.non_differentiable.is_empty()
    }
}

fn eval(f: &impl Fn(&mut Graph, Var) -> Result<Var>, point: &Tensor) -> Result<f64> {
    let mut g = Graph::new();
    let x = g.leaf(point.clone(), false)?;
    let out = f(&mut g, x)?;
    let v = g.value(out);
    if v.len() != 1 {
        return Err(Error::usage(format!(
            "finite difference target must be scalar, got {:?}",
            v.shape()
        )));
    }
    let y = v.data()[0];
    if !y.is_finite() {
        return Err(Error::numerical(
            "finite_difference_check",
            "non-finite function value",
        ));
    }
    Ok(y)
}

/// Compares the reverse-mode gradient of the scalar function `f` at `point`
/// against central differences with step `h`.
pub fn finite_difference_check(
    f: impl Fn(&mut Graph, Var) -> Result<Var>,
    point: &Tensor,
    h: f64,
) -> Result<FdReport> {
    if !(h > 0.0) {
        return Err(Error::usage(format!(
            "finite difference step must be > 0, got {h}"
        )));
    }
    let mut g = Graph::new();
    let x = g.leaf(point.clone(), true)?;
    let out = f(&mut g, x)?;
    g.backward(out)?;
    let analytic: Vec<f64> = g
        .grad(x)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; point.len()]);
    let center = g.value(out).data()[0];

    let mut report = FdReport {
        max_relative_error: 0.0,
        worst_index: 0,
        non_differentiable: Vec::new(),
    };
    let mut probe = point.clone();
    for i in 0..point.len() {
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + h;
        let fp = eval(&f, &probe)?;
        probe.data_mut()[i] = x0 - h;
        let fm = eval(&f, &probe)?;
        probe.data_mut()[i] = x0;

        let forward = (fp - center) / h;
        let backward = (center - fm) / h;
        let scale = 1.0f64.max(forward.abs()).max(backward.abs());
        if (forward - backward).abs() > 1e-2 * scale {
            report.non_differentiable.push(i);
        }
        let numeric = (fp - fm) / (2.0 * h);
        let rel = (analytic[i] - numeric).abs() / (analytic[i].abs() + 1e-8);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_nearly_exact() {
        let r = finite_difference_check(
            |g, x| {
                let s = g.square(x)?;
                g.sum(s)
            },
            &Tensor::scalar(3.0),
            1e-5,
        )
        .unwrap();
        assert!(r.max_relative_error < 1e-6, "{r:?}");
        assert!(r.is_smooth());
    }

    #[test]
    fn relu_kink_is_flagged() {
        let r = finite_difference_check(
            |g, x| {
                let r = g.relu(x)?;
                g.sum(r)
            },
            &Tensor::scalar(0.0),
            1e-5,
        )
        .unwrap();
        assert_eq!(r.non_differentiable, vec![0]);
    }

    #[test]
    fn rejects_non_positive_step() {
        let f = |g: &mut Graph, x| g.sum(x);
        assert!(finite_difference_check(f, &Tensor::scalar(1.0), 0.0).is_err());
    }

    #[test]
    fn non_finite_value_near_point_is_numerical_error() {
        // log(x) at x = 1e-6 with h = 1e-5 probes a negative argument
        let r = finite_difference_check(
            |g, x| {
                let l = g.log(x)?;
                g.sum(l)
            },
            &Tensor::scalar(1e-6),
            1e-5,
        );
        assert!(matches!(r, Err(Error::Numerical { .. })));
    }
}
