use ndarray::ArrayD;

use super::graph::{Graph, NodeKind, Var};
use crate::error::{Error, Result};

/// Denominator floor of the relative error.
pub const GRAD_FLOOR: f64 = 1e-8;

/// Outcome of comparing reverse-mode and central-difference gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_err: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn evaluate<F>(f: &F, x: &ArrayD<f64>, fault: Option<NodeKind>) -> Result<f64>
where
    F: Fn(&mut Graph, Var) -> Var,
{
    let mut g = fault.map_or_else(Graph::new, Graph::with_fault);
    let v = g.input(x.clone());
    let out = f(&mut g, v);
    let value = g.value(out);
    if value.len() != 1 {
        return Err(Error::Shape(format!(
            "checked function must be scalar, got shape {:?}",
            value.shape()
        )));
    }
    Ok(g.scalar_value(out))
}

/// Compares the gradient of the scalar function `f` at `x` against
/// `(f(x + eps e_i) - f(x - eps e_i)) / (2 eps)` for every coordinate.
///
/// `f` must be a pure function of its input: any randomness has to be drawn
/// before the call. The function is evaluated twice at `x` first and a
/// mismatch is reported as [`Error::NonDeterministic`].
pub fn gradient_check<F>(f: F, x: &ArrayD<f64>, eps: f64) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Var,
{
    gradient_check_with(f, x, eps, None)
}

/// [`gradient_check`] on graphs carrying an injected backward fault.
pub fn gradient_check_with<F>(
    f: F,
    x: &ArrayD<f64>,
    eps: f64,
    fault: Option<NodeKind>,
) -> Result<GradCheck>
where
    F: Fn(&mut Graph, Var) -> Var,
{
    if !(1e-7..=1e-3).contains(&eps) {
        return Err(Error::Config(format!("eps {eps} outside [1e-7, 1e-3]")));
    }
    let first = evaluate(&f, x, fault)?;
    let second = evaluate(&f, x, fault)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic);
    }

    let mut g = fault.map_or_else(Graph::new, Graph::with_fault);
    let v = g.param(x.clone());
    let out = f(&mut g, v);
    g.backward(out);
    let analytic: Vec<f64> = match g.grad(v) {
        Some(d) => d.iter().copied().collect(),
        None => vec![0.0; x.len()],
    };

    let mut numeric = Vec::with_capacity(x.len());
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = probe.as_slice().unwrap()[i];
        probe.as_slice_mut().unwrap()[i] = orig + eps;
        let up = evaluate(&f, &probe, fault)?;
        probe.as_slice_mut().unwrap()[i] = orig - eps;
        let down = evaluate(&f, &probe, fault)?;
        probe.as_slice_mut().unwrap()[i] = orig;
        numeric.push((up - down) / (2.0 * eps));
    }

    let (mut max_rel_err, mut worst_index) = (0.0f64, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let e = (a - n).abs() / a.abs().max(GRAD_FLOOR);
        if e > max_rel_err || e.is_nan() {
            max_rel_err = e;
            worst_index = i;
        }
    }
    Ok(GradCheck {
        max_rel_err,
        worst_index,
        analytic,
        numeric,
    })
}
