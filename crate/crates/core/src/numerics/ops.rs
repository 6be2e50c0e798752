//! Eager versions of the layer primitives, for callers that hold plain
//! tensors and do not need gradients.

use super::{Graph, NumericsError, Tensor};

fn run<F>(f: F) -> Result<Tensor, NumericsError>
where
    F: FnOnce(&mut Graph<'_>) -> Result<super::Var, NumericsError>,
{
    let mut g = Graph::new();
    let out = f(&mut g)?;
    Ok(g.tensor(out))
}

pub fn affine(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor, NumericsError> {
    run(|g| {
        let (x, w, b) = (g.constant(x.clone()), g.constant(w.clone()), g.constant(b.clone()));
        g.affine(x, w, b)
    })
}

pub fn sigmoid(x: &Tensor) -> Tensor {
    run(|g| {
        let x = g.constant(x.clone());
        Ok(g.sigmoid(x))
    })
    .expect("sigmoid is total")
}

pub fn logsumexp(x: &[f64]) -> Result<f64, NumericsError> {
    if x.is_empty() {
        return Err(NumericsError::Domain { op: "logsumexp", detail: "empty input".into() });
    }
    Ok(super::kernels::logsumexp(x))
}

pub fn layer_norm(x: &Tensor, eps: f64) -> Result<Tensor, NumericsError> {
    run(|g| {
        let x = g.constant(x.clone());
        g.layer_norm(x, eps)
    })
}

/// One `(kernel, bias)` per window width; outputs are concatenated in
/// ascending width order regardless of the order given.
pub fn conv_maxpool(
    x: &Tensor,
    kernels: &[(Tensor, Tensor)],
    windows: &[usize],
) -> Result<Tensor, NumericsError> {
    if kernels.len() != windows.len() || windows.is_empty() {
        return Err(NumericsError::Contract("one kernel per window width".into()));
    }
    let mut order: Vec<usize> = (0..windows.len()).collect();
    order.sort_by_key(|&i| windows[i]);
    run(|g| {
        let xv = g.constant(x.clone());
        let mut pooled = Vec::with_capacity(order.len());
        for i in order {
            let (k, b) = &kernels[i];
            let (k, b) = (g.constant(k.clone()), g.constant(b.clone()));
            pooled.push(g.conv_maxpool(xv, k, b, windows[i])?);
        }
        g.concat(&pooled)
    })
}

pub fn dropout(x: &Tensor, rate: f64, seed: u64, training: bool) -> Result<(Tensor, Vec<f64>), NumericsError> {
    let mut g = Graph::new();
    let xv = g.constant(x.clone());
    let (y, mask) = g.dropout(xv, rate, seed, training)?;
    Ok((g.tensor(y), mask))
}

pub fn cosine_sim(a: &Tensor, b: &Tensor) -> Result<f64, NumericsError> {
    let mut g = Graph::new();
    let (a, b) = (g.constant(a.clone()), g.constant(b.clone()));
    let s = g.cosine_sim(a, b)?;
    Ok(g.scalar(s))
}
