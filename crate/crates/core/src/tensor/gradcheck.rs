//! Central finite-difference gradient checking.

use rand::Rng;

use super::{Graph, Tensor, Var};
use crate::error::{Error, Result};

/// Smallest denominator used when forming relative errors, so that
/// gradients that are both (numerically) zero compare as equal.
pub const REL_FLOOR: f64 = 1e-7;

#[derive(Clone, Debug)]
pub struct GradReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, element index)` of the worst relative error.
    pub worst: (usize, usize),
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Uniform values in `[-1, 1)`.
pub fn random_tensor<R: Rng>(rng: &mut R, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape/data agree")
}

fn evaluate<F>(inputs: &[Tensor], build: &F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    Ok(g.value(loss).item())
}

/// Compares backward gradients against central differences for every
/// element of every input.
pub fn check_gradients<F>(inputs: &[Tensor], h: f64, build: F) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let all: Vec<(usize, usize)> = inputs
        .iter()
        .enumerate()
        .flat_map(|(i, t)| (0..t.numel()).map(move |e| (i, e)))
        .collect();
    check_gradients_at(inputs, h, &all, build)
}

/// Like [`check_gradients`] but only probes the listed `(input, element)`
/// coordinates.
pub fn check_gradients_at<F>(
    inputs: &[Tensor],
    h: f64,
    coords: &[(usize, usize)],
    build: F,
) -> Result<GradReport>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let loss = build(&mut g, &vars)?;
    g.backward(loss)?;

    let mut report = GradReport {
        checked: 0,
        max_rel_error: 0.0,
        max_abs_error: 0.0,
        worst: (0, 0),
    };
    let mut probe = inputs.to_vec();
    for &(i, e) in coords {
        if i >= inputs.len() || e >= inputs[i].numel() {
            return Err(Error::InvalidArgument(format!("no element ({i}, {e})")));
        }
        let analytic = g.grad(vars[i]).map_or(0.0, |gr| gr[e]);
        let orig = inputs[i].data()[e];
        probe[i].data_mut()[e] = orig + h;
        let up = evaluate(&probe, &build)?;
        probe[i].data_mut()[e] = orig - h;
        let down = evaluate(&probe, &build)?;
        probe[i].data_mut()[e] = orig;
        let numeric = (up - down) / (2.0 * h);
        let rel = relative_error(analytic, numeric);
        report.checked += 1;
        report.max_abs_error = report.max_abs_error.max((analytic - numeric).abs());
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst = (i, e);
        }
    }
    Ok(report)
}
