//! Central finite-difference checks of [`Graph::backward`].

use super::{Bound, Graph, ParamStore, Result, Tensor, TensorError, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckOptions {
    /// Perturbation `h` of the central difference `(f(x + h) - f(x - h)) / 2h`.
    pub step: f64,
    /// Lower bound on the relative-error denominator, so gradients near zero are compared absolutely.
    pub floor: f64,
    /// Second-difference magnitude `|f(x+h) + f(x-h) - 2 f(x)| / h^2` above which the probe is taken
    /// to straddle a kink (a rectifier switching sign) and is repeated with `h / 10`.
    pub curvature_limit: f64,
    /// Maximum number of step reductions per entry.
    pub max_refinements: u32,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-3,
            curvature_limit: 1e3,
            max_refinements: 2,
        }
    }
}

/// Location and size of the largest discrepancy.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter path and flat element index of the worst entry.
    pub worst: Option<(String, usize)>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Entries whose probe straddled a kink and was repeated with a smaller step.
    pub refined: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

fn scalar(graph: &Graph, loss: Var) -> Result<f64> {
    let v = graph.value(loss);
    if v.len() != 1 {
        return Err(TensorError::NonScalarLoss(v.shape().to_vec()));
    }
    Ok(v.item())
}

/// Compares the analytic gradient of `f` with central differences for every scalar in `store`.
/// `f` must build a scalar loss from the bound parameters.
pub fn check_params<F, E>(store: &ParamStore, opts: GradCheckOptions, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &Bound) -> Result<Var, E>,
    E: From<TensorError>,
{
    let eval = |s: &ParamStore| -> Result<f64, E> {
        let mut g = Graph::new();
        let bound = g.bind(s);
        let loss = f(&mut g, &bound)?;
        Ok(scalar(&g, loss)?)
    };

    let mut graph = Graph::new();
    let bound = graph.bind(store);
    let loss = f(&mut graph, &bound)?;
    let base = scalar(&graph, loss)?;
    let analytic = graph.backward(loss)?.for_params(&graph, &bound);

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        refined: 0,
    };
    let mut probe = store.clone();
    for (p, grad) in analytic.iter().enumerate() {
        for i in 0..grad.len() {
            let x = store.values()[p].data()[i];
            let mut step = opts.step;
            let mut numeric;
            let mut refinements = 0;
            loop {
                probe.values_mut()[p].data_mut()[i] = x + step;
                let up = eval(&probe)?;
                probe.values_mut()[p].data_mut()[i] = x - step;
                let down = eval(&probe)?;
                probe.values_mut()[p].data_mut()[i] = x;
                numeric = (up - down) / (2.0 * step);
                let curvature = (up + down - 2.0 * base).abs() / (step * step);
                if curvature <= opts.curvature_limit || refinements == opts.max_refinements {
                    break;
                }
                refinements += 1;
                step /= 10.0;
            }
            report.refined += usize::from(refinements > 0);
            let a = grad.data()[i];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(opts.floor);
            report.checked += 1;
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = rel;
                report.worst = Some((store.names()[p].clone(), i));
                report.analytic = a;
                report.numeric = numeric;
            }
        }
    }
    Ok(report)
}

/// [`check_params`] over plain input tensors, each bound as a trainable leaf.
pub fn check<F, E>(inputs: &[Tensor], opts: GradCheckOptions, f: F) -> Result<GradCheckReport, E>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: From<TensorError>,
{
    let mut store = ParamStore::new();
    for (i, t) in inputs.iter().enumerate() {
        store.register(format!("input.{i}"), t.clone())?;
    }
    check_params(&store, opts, |g, b| f(g, b.vars()))
}

/// Reduces any output to a scalar by a fixed weighted sum, so every output element is probed.
pub fn weighted_total(graph: &mut Graph, output: Var, weights: &Tensor) -> Result<Var> {
    let w = graph.constant(weights.clone());
    let prod = graph.mul(output, w)?;
    Ok(graph.sum(prod))
}
