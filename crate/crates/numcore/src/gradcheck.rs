//! Finite-difference verification of tape gradients.

use crate::graph::{Graph, Var};
use crate::{NumError, ParamStore};

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    /// Central difference step.
    pub h: f64,
    /// Denominator floor for the relative error. Entries whose analytic and
    /// numeric gradients are both below it are effectively compared in
    /// absolute terms, which keeps structurally zero gradients (a key bias
    /// under softmax, say) from turning round-off into huge ratios.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions { h: 1e-5, floor: 1e-4 }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Parameter name and flat index of the worst relative error.
    pub worst: Option<(String, usize)>,
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_rel_error < tolerance
    }
}

/// Compares tape gradients of the scalar built by `f` against central
/// differences for every parameter element in `store`.
///
/// `f` must be deterministic: it is re-evaluated twice per element.
pub fn grad_check<F>(store: &mut ParamStore<f64>, f: F, opts: GradCheckOptions) -> Result<GradCheckReport, NumError>
where
    F: Fn(&mut Graph<'_, f64>) -> Result<Var, NumError>,
{
    let analytic: Vec<(usize, Vec<f64>)> = {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        let grads = g.backward(out)?;
        grads.params().map(|(id, t)| (id.0, t.data().to_vec())).collect()
    };
    let eval = |store: &ParamStore<f64>| -> Result<f64, NumError> {
        let mut g = Graph::new(store);
        let out = f(&mut g)?;
        Ok(g.value(out).data()[0])
    };
    let mut report = GradCheckReport { max_rel_error: 0.0, max_abs_error: 0.0, worst: None, checked: 0 };
    let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
    for id in ids {
        let n = store.get(id).value.len();
        let tape = analytic.iter().find(|(i, _)| *i == id.0).map(|(_, g)| g.as_slice());
        for i in 0..n {
            let orig = store.get(id).value.data()[i];
            store.get_mut(id).value.data_mut()[i] = orig + opts.h;
            let plus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig - opts.h;
            let minus = eval(store)?;
            store.get_mut(id).value.data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * opts.h);
            let a = tape.map_or(0.0, |g| g[i]);
            let abs = (a - numeric).abs();
            let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
            report.max_abs_error = report.max_abs_error.max(abs);
            if rel > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = report.max_rel_error.max(rel);
                report.worst = Some((store.get(id).name.clone(), i));
            }
            report.checked += 1;
        }
    }
    Ok(report)
}
