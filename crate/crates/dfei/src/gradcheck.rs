//! Central-difference gradient verification.
//!
//! Analytic gradients from [`crate::graph`] are trusted only because every op
//! is cross-checked against finite differences. This module is the checker:
//! it perturbs one parameter element at a time, re-runs a caller-supplied
//! loss closure, and compares the numeric slope against the analytic value.
//!
//! The loss closure must be deterministic given the parameter store. Models
//! that use dropout must re-seed their mask RNG inside the closure so that
//! both perturbed evaluations see identical masks.
//!
//! One caveat for freshly initialized ReLU networks: when dropout (or ReLU
//! itself) zeroes an entire input row, the next layer's pre-activation
//! equals its bias — which zero-initialization parks exactly on the ReLU
//! kink. The loss is not differentiable there: the analytic backward uses
//! the 0 subgradient while central differences measure the average of the
//! two one-sided slopes, and the gap does not shrink with `h`. Check
//! gradients after at least one optimizer step (biases move off zero), or
//! at any point where no pre-activation is exactly zero.

use crate::error::{Error, Result};
use crate::graph::Gradients;
use crate::params::ParamStore;

/// Outcome of a finite-difference sweep over a parameter store.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    /// Largest relative error observed across all checked elements.
    pub max_rel_err: f64,
    /// Parameter name and flat element index where the maximum occurred.
    pub worst: Option<(String, usize)>,
    /// Total number of scalar elements compared.
    pub elements_checked: usize,
}

impl GradCheckReport {
    /// True when every element agreed within `tol`.
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err < tol
    }
}

/// Relative error between an analytic and a numeric derivative.
///
/// The denominator is floored at `1e-6` so that near-zero gradients are
/// compared on an absolute scale instead of blowing up the ratio.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(1e-6);
    (analytic - numeric).abs() / denom
}

/// Compares `analytic` gradients against central finite differences of `loss`.
///
/// For every parameter listed in `names` (every parameter in the store when
/// `names` is empty) and every element of that parameter, the element is
/// nudged by `±h` and the loss re-evaluated; the slope
/// `(f(x+h) - f(x-h)) / 2h` is compared against the analytic entry via
/// [`relative_error`]. The store is restored to its original values before
/// returning.
pub fn check_gradients<F>(
    store: &mut ParamStore,
    analytic: &Gradients,
    names: &[String],
    h: f64,
    mut loss: F,
) -> Result<GradCheckReport>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::Argument(format!(
            "finite-difference step must be positive and finite, got {h}"
        )));
    }
    let targets: Vec<String> = if names.is_empty() {
        store.names().cloned().collect()
    } else {
        names.to_vec()
    };

    let mut max_rel_err = 0.0_f64;
    let mut worst = None;
    let mut elements_checked = 0_usize;

    for name in &targets {
        let grad = analytic.get(name).ok_or_else(|| {
            Error::State(format!("no analytic gradient recorded for parameter `{name}`"))
        })?;
        let n = store.tensor(name)?.len();
        if grad.len() != n {
            return Err(Error::Shape(format!(
                "gradient for `{name}` has {} elements but the parameter has {n}",
                grad.len()
            )));
        }
        for idx in 0..n {
            let original = store.tensor(name)?.data()[idx];

            store.tensor_mut(name)?.data_mut()[idx] = original + h;
            let f_plus = loss(store)?;
            store.tensor_mut(name)?.data_mut()[idx] = original - h;
            let f_minus = loss(store)?;
            store.tensor_mut(name)?.data_mut()[idx] = original;

            if !(f_plus.is_finite() && f_minus.is_finite()) {
                return Err(Error::Numeric(format!(
                    "loss became non-finite while perturbing `{name}`[{idx}]"
                )));
            }
            let numeric = (f_plus - f_minus) / (2.0 * h);
            let rel = relative_error(grad.data()[idx], numeric);
            if rel > max_rel_err {
                max_rel_err = rel;
                worst = Some((name.clone(), idx));
            }
            elements_checked += 1;
        }
    }

    Ok(GradCheckReport { max_rel_err, worst, elements_checked })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Graph;
    use crate::params::Scope;
    use crate::tensor::Tensor;

    fn quadratic_store() -> ParamStore {
        let mut store = ParamStore::new();
        store.insert(
            "w",
            Scope::Shared,
            true,
            Tensor::from_vec(&[2], vec![0.7, -1.3]).unwrap(),
        );
        store
    }

    fn quadratic_loss(s: &ParamStore) -> crate::error::Result<f64> {
        let mut g = Graph::new();
        let w = g.param("w", s.tensor("w")?.clone());
        let l = g.square_sum(w);
        Ok(g.value(l).item())
    }

    /// loss = sum(w^2); gradient 2w is matched by finite differences.
    #[test]
    fn quadratic_gradient_matches() {
        let mut store = quadratic_store();
        let mut graph = Graph::new();
        let w = graph.param("w", store.tensor("w").unwrap().clone());
        let loss = graph.square_sum(w);
        let grads = graph.backward(loss).unwrap();

        let report = check_gradients(&mut store, &grads, &[], 1e-5, quadratic_loss).unwrap();
        assert_eq!(report.elements_checked, 2);
        assert!(report.passes(1e-7), "max rel err {}", report.max_rel_err);
    }

    /// A deliberately corrupted analytic gradient is flagged.
    #[test]
    fn corrupted_gradient_is_caught() {
        let mut store = quadratic_store();
        let mut graph = Graph::new();
        let w = graph.param("w", store.tensor("w").unwrap().clone());
        let loss = graph.square_sum(w);
        let mut grads = graph.backward(loss).unwrap();
        let bad = grads.get("w").unwrap().clone().map(|g| g + 0.5);
        grads.insert("w".to_string(), bad);

        let report = check_gradients(&mut store, &grads, &[], 1e-5, quadratic_loss).unwrap();
        assert!(!report.passes(1e-4));
        assert!(report.worst.is_some());
    }

    #[test]
    fn store_is_restored_after_check() {
        let mut store = quadratic_store();
        let before = store.tensor("w").unwrap().data().to_vec();
        let mut graph = Graph::new();
        let w = graph.param("w", store.tensor("w").unwrap().clone());
        let loss = graph.square_sum(w);
        let grads = graph.backward(loss).unwrap();
        check_gradients(&mut store, &grads, &[], 1e-5, quadratic_loss).unwrap();
        assert_eq!(store.tensor("w").unwrap().data(), before.as_slice());
    }

    #[test]
    fn rejects_bad_step() {
        let mut store = quadratic_store();
        let grads = Gradients::default();
        let err = check_gradients(&mut store, &grads, &[], 0.0, |_| Ok(0.0)).unwrap_err();
        assert!(matches!(err, Error::Argument(_)));
    }
}
