//! Central finite-difference verification of analytic gradients.

use std::collections::BTreeMap;

use super::graph::{Graph, Var};
use super::params::ParamStore;
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// `|a − n| / max(|a|, |n|, 1e-12)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-12);
    (analytic - numeric).abs() / denom
}

fn check_step(h: f64) -> Result<()> {
    if !(1e-7..=1e-4).contains(&h) {
        return Err(Error::InvalidArgument(format!(
            "finite-difference step {h} outside [1e-7, 1e-4]"
        )));
    }
    Ok(())
}

fn scalar_of(graph: &Graph, out: Var) -> Result<f64> {
    let v = graph.value(out);
    if !v.is_scalar() {
        return Err(Error::InvalidArgument(format!(
            "gradient check needs a scalar function, got shape {:?}",
            v.shape
        )));
    }
    Ok(v.item())
}

/// Max relative error between the analytic gradient of `f` at `x` and
/// central differences with step `h`.
pub fn grad_check<F>(mut f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: FnMut(&mut Graph, Var) -> Result<Var>,
{
    check_step(h)?;
    let mut graph = Graph::new();
    let xv = graph.variable(x.clone())?;
    let out = f(&mut graph, xv)?;
    scalar_of(&graph, out)?;
    let grads = graph.backward(out)?;
    let analytic = grads
        .get(xv)
        .map(<[f64]>::to_vec)
        .unwrap_or_else(|| vec![0.0; x.numel()]);

    let mut eval = |t: Tensor| -> Result<f64> {
        let mut g = Graph::new();
        let v = g.variable(t)?;
        let o = f(&mut g, v)?;
        scalar_of(&g, o)
    };
    let mut worst = 0.0f64;
    for i in 0..x.numel() {
        let mut plus = x.clone();
        plus.data[i] += h;
        let mut minus = x.clone();
        minus.data[i] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        worst = worst.max(relative_error(analytic[i], numeric));
    }
    Ok(worst)
}

/// Per-parameter max relative error for a loss built from `store`.
pub fn grad_check_params<F>(store: &ParamStore, mut f: F, h: f64) -> Result<BTreeMap<String, f64>>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Var>,
{
    grad_check_param_terms(store, |g, s| Ok(vec![f(g, s)?]), &[h])
}

/// As [`grad_check_params`] for a loss given as a sum of scalar terms.
/// Differences are taken per term before summing, which keeps the
/// rounding of a large total out of small gradient coordinates. Each
/// coordinate is scored at the step in `steps` that agrees best, so a
/// ReLU kink crossed by one step does not mask the others.
pub fn grad_check_param_terms<F>(
    store: &ParamStore,
    mut f: F,
    steps: &[f64],
) -> Result<BTreeMap<String, f64>>
where
    F: FnMut(&mut Graph, &ParamStore) -> Result<Vec<Var>>,
{
    if steps.is_empty() {
        return Err(Error::InvalidArgument(
            "gradient check needs at least one step".into(),
        ));
    }
    for &h in steps {
        check_step(h)?;
    }
    fn eval<F>(f: &mut F, s: &ParamStore) -> Result<Vec<f64>>
    where
        F: FnMut(&mut Graph, &ParamStore) -> Result<Vec<Var>>,
    {
        let mut g = Graph::new();
        let terms = f(&mut g, s)?;
        terms.iter().map(|t| scalar_of(&g, *t)).collect()
    }
    let mut graph = Graph::new();
    let terms = f(&mut graph, store)?;
    if terms.is_empty() {
        return Err(Error::InvalidArgument(
            "gradient check needs at least one term".into(),
        ));
    }
    let mut out = terms[0];
    for &t in &terms[1..] {
        scalar_of(&graph, t)?;
        out = graph.add(out, t)?;
    }
    scalar_of(&graph, out)?;
    let analytic = graph.backward(out)?.by_name(&graph);

    let mut work = store.clone();
    let mut report = BTreeMap::new();
    let names: Vec<String> = store.names().map(str::to_string).collect();
    for name in names {
        let zeros;
        let a = match analytic.get(&name) {
            Some(a) => a,
            None => {
                zeros = vec![0.0; store.get(&name)?.numel()];
                &zeros
            }
        };
        let mut worst = 0.0f64;
        for i in 0..a.len() {
            let orig = work.get(&name)?.data[i];
            let mut best = f64::INFINITY;
            for &h in steps {
                work.get_mut(&name)?.data[i] = orig + h;
                let fp = eval(&mut f, &work)?;
                work.get_mut(&name)?.data[i] = orig - h;
                let fm = eval(&mut f, &work)?;
                let numeric: f64 = fp.iter().zip(&fm).map(|(p, m)| (p - m) / (2.0 * h)).sum();
                best = best.min(relative_error(a[i], numeric));
            }
            work.get_mut(&name)?.data[i] = orig;
            worst = worst.max(best);
        }
        report.insert(name, worst);
    }
    Ok(report)
}
