//! Central finite-difference verification of tape gradients.

use serde::{Deserialize, Serialize};

use super::tape::{Tape, Var};
use super::tensor::ParamStore;
use crate::error::Result;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: f64,
    /// Denominator floor for the relative error, so exact zeros compare sanely.
    pub floor: f64,
    /// Upper bound on checked elements per parameter (evenly strided).
    pub max_elements: usize,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            max_elements: usize::MAX,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub params: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.params.iter().all(|p| p.passed)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the tape gradient of `model_fn` against central differences for
/// every trainable parameter in `store`. Parameter values are restored
/// before returning; gradients are cleared.
pub fn grad_check<F>(
    model_fn: F,
    store: &mut ParamStore,
    tolerance: f64,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &ParamStore) -> Result<Var>,
{
    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new();
        let loss = model_fn(&mut tape, store)?;
        Ok(tape.value(loss).item())
    };

    store.zero_grad();
    let mut tape = Tape::new();
    let loss = model_fn(&mut tape, store)?;
    tape.backward(loss, store)?;

    let mut params = Vec::new();
    for id in store.ids() {
        let p = store.get(id);
        if !p.requires_grad {
            continue;
        }
        let n = p.value.len();
        let analytic = p.grad.clone().unwrap_or_else(|| vec![0.0; n]);
        let name = p.name.clone();
        let stride = n.div_ceil(opts.max_elements.min(n)).max(1);

        let (mut max_rel, mut max_abs, mut checked) = (0.0f64, 0.0f64, 0);
        for k in (0..n).step_by(stride) {
            let orig = store.value(id).data()[k];
            store.get_mut(id).value.data_mut()[k] = orig + opts.step;
            let plus = eval(store);
            store.get_mut(id).value.data_mut()[k] = orig - opts.step;
            let minus = eval(store);
            store.get_mut(id).value.data_mut()[k] = orig;
            let numeric = (plus? - minus?) / (2.0 * opts.step);
            max_abs = max_abs.max((analytic[k] - numeric).abs());
            max_rel = max_rel.max(relative_error(analytic[k], numeric, opts.floor));
            checked += 1;
        }
        params.push(ParamCheck {
            name,
            checked,
            max_rel_error: max_rel,
            max_abs_error: max_abs,
            passed: max_rel <= tolerance,
        });
    }
    store.zero_grad();
    Ok(GradCheckReport { tolerance, params })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffkernel::tensor::Tensor;

    #[test]
    fn quadratic_form_is_exact() {
        // f(x) = x^T A x with A symmetric positive definite.
        let mut store = ParamStore::new();
        store
            .add("x", Tensor::new(vec![1, 3], vec![0.4, -1.1, 2.3]).unwrap())
            .unwrap();
        let a = Tensor::from_rows(&[
            vec![2.0, 0.5, 0.1],
            vec![0.5, 3.0, -0.4],
            vec![0.1, -0.4, 1.5],
        ])
        .unwrap();
        let report = grad_check(
            |t, s| {
                let x = t.param(s, s.id("x").unwrap());
                let av = t.constant(a.clone())?;
                let ax = t.matmul(x, av)?;
                let xax = t.mul(ax, x)?;
                t.sum(xax)
            },
            &mut store,
            1e-8,
            &GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.all_passed(), "{report:?}");
    }
}
