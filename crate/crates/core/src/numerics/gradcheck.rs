use std::collections::BTreeMap;

use rand::seq::index::sample;

use super::{gradient_of, Graph, NumericsError, ParamSet, Rng, Tensor, Var};

/// Coordinates sampled per tensor (all of them when the tensor is smaller).
const COORDS_PER_TENSOR: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
}

fn eval_loss<E, F>(build: &F, params: &ParamSet) -> Result<f64, E>
where
    F: Fn(&mut Graph, &ParamSet) -> Result<Var, E>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    Ok(g.value(loss).item())
}

/// Central-difference check of the tape gradient of the loss built by
/// `build`. Relative error per coordinate is `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn finite_difference_check<E, F>(
    build: F,
    params: &ParamSet,
    eps: f64,
    rng: &mut Rng,
) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: Fn(&mut Graph, &ParamSet) -> Result<Var, E>,
{
    let mut g = Graph::new();
    let loss = build(&mut g, params)?;
    let analytic = gradient_of(&g, loss, params)?;
    compare_with_finite_differences(build, params, &analytic, eps, rng)
}

/// Compares a supplied gradient against central differences.
pub fn compare_with_finite_differences<E, F>(
    build: F,
    params: &ParamSet,
    analytic: &BTreeMap<String, Tensor>,
    eps: f64,
    rng: &mut Rng,
) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: Fn(&mut Graph, &ParamSet) -> Result<Var, E>,
{
    let mut work = params.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        coords_checked: 0,
    };
    let names: Vec<String> = params
        .iter()
        .filter(|(_, p)| p.trainable)
        .map(|(n, _)| n.to_string())
        .collect();
    for name in names {
        let grad = analytic
            .get(&name)
            .ok_or_else(|| NumericsError::UnknownParam(name.clone()))?;
        let n = grad.len();
        let coords: Vec<usize> = if n <= COORDS_PER_TENSOR {
            (0..n).collect()
        } else {
            let mut c = sample(rng, n, COORDS_PER_TENSOR).into_vec();
            c.sort_unstable();
            c
        };
        for i in coords {
            let orig = work.get(&name).expect("present").data()[i];
            work.get_mut(&name).expect("present").data_mut()[i] = orig + eps;
            let up = eval_loss(&build, &work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig - eps;
            let down = eval_loss(&build, &work)?;
            work.get_mut(&name).expect("present").data_mut()[i] = orig;

            let numeric = (up - down) / (2.0 * eps);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst = Some((name.clone(), i));
            }
        }
    }
    Ok(report)
}
