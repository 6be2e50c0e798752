use super::{Graph, NumericsError, ParamStore, Var};

/// Relative error used by every gradient comparison in the crate.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamCheck {
    pub name: String,
    pub entries: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub loss: f64,
    pub h: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn entries_checked(&self) -> usize {
        self.params.iter().map(|p| p.entries).sum()
    }

    pub fn worst(&self) -> Option<&ParamCheck> {
        self.params.iter().max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error() <= tolerance
    }
}

/// Loss value and the gradient of every parameter in `store`, in store order.
pub fn analytic_gradients<E, F>(store: &ParamStore, mut build: F) -> Result<(f64, Vec<Vec<f64>>), E>
where
    E: From<NumericsError>,
    F: FnMut(&mut Graph<'_>) -> Result<Var, E>,
{
    let mut graph = Graph::with_params(store);
    let loss = build(&mut graph)?;
    let grads = graph.backward(loss)?;
    let per_param = store
        .ids()
        .map(|id| grads.param(id).map_or_else(|| vec![0.0; store.get(id).len()], <[f64]>::to_vec))
        .collect();
    Ok((graph.scalar(loss), per_param))
}

/// Compares `analytic` against central differences `(f(θ+h) − f(θ−h)) / 2h`
/// for every entry of every parameter.
///
/// `build` must be deterministic: any dropout masks or noise it draws have to
/// come from fixed seeds so each re-evaluation sees the same function.
pub fn compare_with_numeric<E, F>(
    store: &ParamStore,
    analytic: &[Vec<f64>],
    h: f64,
    mut build: F,
) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: FnMut(&mut Graph<'_>) -> Result<Var, E>,
{
    let reports = compare_many(store, &[analytic.to_vec()], h, |g| build(g).map(|l| vec![l]))?;
    Ok(reports.into_iter().next().expect("one loss"))
}

/// Gradients of several losses built on one graph, one backward sweep each.
pub fn analytic_gradients_many<E, F>(store: &ParamStore, build: F) -> Result<(Vec<f64>, Vec<Vec<Vec<f64>>>), E>
where
    E: From<NumericsError>,
    F: FnOnce(&mut Graph<'_>) -> Result<Vec<Var>, E>,
{
    let mut graph = Graph::with_params(store);
    let losses = build(&mut graph)?;
    let mut values = Vec::with_capacity(losses.len());
    let mut all = Vec::with_capacity(losses.len());
    for loss in losses {
        let grads = graph.backward(loss)?;
        all.push(
            store
                .ids()
                .map(|id| grads.param(id).map_or_else(|| vec![0.0; store.get(id).len()], <[f64]>::to_vec))
                .collect(),
        );
        values.push(graph.scalar(loss));
    }
    Ok((values, all))
}

/// [`compare_with_numeric`] for several losses that share one forward pass.
/// `analytic[i]` holds the per-parameter gradients of loss `i`.
pub fn compare_many<E, F>(
    store: &ParamStore,
    analytic: &[Vec<Vec<f64>>],
    h: f64,
    mut build: F,
) -> Result<Vec<GradCheckReport>, E>
where
    E: From<NumericsError>,
    F: FnMut(&mut Graph<'_>) -> Result<Vec<Var>, E>,
{
    let mut probe = store.clone();
    let eval = |p: &ParamStore, build: &mut F| -> Result<Vec<f64>, E> {
        let mut graph = Graph::with_params(p);
        let losses = build(&mut graph)?;
        Ok(losses.iter().map(|&l| graph.scalar(l)).collect())
    };
    let base = eval(&probe, &mut build)?;
    if base.len() != analytic.len() {
        return Err(NumericsError::Contract(format!(
            "{} analytic gradient sets for {} losses",
            analytic.len(),
            base.len()
        ))
        .into());
    }
    let mut reports: Vec<GradCheckReport> =
        base.iter().map(|&loss| GradCheckReport { loss, h, params: Vec::with_capacity(store.len()) }).collect();
    for id in store.ids() {
        let mut checks: Vec<ParamCheck> = (0..base.len())
            .map(|_| ParamCheck {
                name: store.name(id).to_owned(),
                entries: 0,
                max_rel_error: 0.0,
                worst_index: 0,
                analytic: 0.0,
                numeric: 0.0,
            })
            .collect();
        for k in 0..store.get(id).len() {
            let original = store.get(id).data()[k];
            probe.get_mut(id).data_mut()[k] = original + h;
            let plus = eval(&probe, &mut build)?;
            probe.get_mut(id).data_mut()[k] = original - h;
            let minus = eval(&probe, &mut build)?;
            probe.get_mut(id).data_mut()[k] = original;
            for (i, check) in checks.iter_mut().enumerate() {
                let numeric = (plus[i] - minus[i]) / (2.0 * h);
                let a = analytic[i][id.index()][k];
                let err = relative_error(a, numeric);
                if err > check.max_rel_error || check.entries == 0 {
                    check.max_rel_error = err;
                    check.worst_index = k;
                    check.analytic = a;
                    check.numeric = numeric;
                }
                check.entries += 1;
            }
        }
        for (r, c) in reports.iter_mut().zip(checks) {
            r.params.push(c);
        }
    }
    Ok(reports)
}

/// Analytic-versus-central-difference check over all entries of `store`.
pub fn finite_diff_check<E, F>(store: &ParamStore, h: f64, mut build: F) -> Result<GradCheckReport, E>
where
    E: From<NumericsError>,
    F: FnMut(&mut Graph<'_>) -> Result<Var, E>,
{
    let (_, analytic) = analytic_gradients(store, &mut build)?;
    compare_with_numeric(store, &analytic, h, build)
}
