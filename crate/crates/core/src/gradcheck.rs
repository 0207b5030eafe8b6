//! Central finite-difference checks against [`Graph::backward`].
//!
//! Used by the unit and acceptance tests; always runs in `f64`.

use crate::autograd::{Graph, Var};
use crate::params::ParamStore;
use crate::tensor::Tensor;

/// Worst discrepancy found by a check.
#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: Option<String>,
}

impl GradCheckReport {
    fn record(&mut self, label: impl FnOnce() -> String, analytic: f64, numeric: f64, floor: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric, floor);
        if self.worst.is_none() || err > self.max_rel_err {
            self.max_rel_err = err;
            self.worst = Some(format!("{} analytic={analytic:.6e} numeric={numeric:.6e}", label()));
        }
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// `|a - n| / max(|a|, |n|, floor)`; the floor keeps near-zero gradients
/// from dominating.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Checks gradients of `f` w.r.t. each tensor in `inputs`.
pub fn check_inputs<F>(
    params: &ParamStore<f64>,
    inputs: &[Tensor<f64>],
    step: f64,
    floor: f64,
    f: F,
) -> GradCheckReport
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Var,
{
    let eval = |ins: &[Tensor<f64>]| {
        let mut g = Graph::inference(params);
        let vars: Vec<Var> = ins.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.item(out)
    };
    let mut g = Graph::new(params);
    let vars: Vec<Var> = inputs.iter().map(|t| g.input(t.clone())).collect();
    let loss = f(&mut g, &vars);
    let back = g.backward(loss);

    let mut report = GradCheckReport::default();
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for (which, &v) in vars.iter().enumerate() {
        let n = inputs[which].len();
        let zeros = Tensor::zeros(inputs[which].rows(), inputs[which].cols());
        let analytic = back.wrt(v).unwrap_or(&zeros).clone();
        for e in 0..n {
            let orig = work[which].data()[e];
            work[which].data_mut()[e] = orig + step;
            let plus = eval(&work);
            work[which].data_mut()[e] = orig - step;
            let minus = eval(&work);
            work[which].data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            report.record(|| format!("input {which}[{e}]"), analytic.data()[e], numeric, floor);
        }
    }
    report
}

/// Checks gradients of `f` w.r.t. every parameter entry in `params`.
pub fn check_params<F>(params: &ParamStore<f64>, step: f64, floor: f64, f: F) -> GradCheckReport
where
    F: Fn(&mut Graph<'_, f64>) -> Var,
{
    let mut g = Graph::new(params);
    let loss = f(&mut g);
    let back = g.backward(loss);

    let mut report = GradCheckReport::default();
    let mut work = params.clone();
    for (id, name, value) in params.iter() {
        for e in 0..value.len() {
            let orig = value.data()[e];
            work.get_mut(id).data_mut()[e] = orig + step;
            let plus = {
                let mut g = Graph::inference(&work);
                let out = f(&mut g);
                g.item(out)
            };
            work.get_mut(id).data_mut()[e] = orig - step;
            let minus = {
                let mut g = Graph::inference(&work);
                let out = f(&mut g);
                g.item(out)
            };
            work.get_mut(id).data_mut()[e] = orig;
            let numeric = (plus - minus) / (2.0 * step);
            report.record(|| format!("{name}[{e}]"), back.param(id).data()[e], numeric, floor);
        }
    }
    report
}
