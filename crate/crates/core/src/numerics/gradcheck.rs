//! Finite-difference verification of reverse-mode gradients.

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Pass threshold on the maximum relative error.
    pub tolerance: f64,
    /// Components whose analytic and numeric magnitudes are both below this
    /// are compared in absolute terms.
    pub abs_floor: f64,
    /// Checks at most this many evenly spaced coordinates per parameter.
    pub max_coords_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            tolerance: 1e-4,
            abs_floor: 1e-4,
            max_coords_per_param: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst coordinate.
    pub worst: Option<(String, usize)>,
    pub coords_checked: usize,
    pub passed: bool,
}

fn eval(store: &ParamStore, f: &impl Fn(&mut Graph, &ParamStore) -> Result<Var>) -> Result<f64> {
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    let v = g.value(out);
    if v.numel() != 1 {
        return Err(Error::Usage(format!(
            "gradient check needs a scalar function, got shape {:?}",
            v.shape()
        )));
    }
    Ok(v.data()[0])
}

fn coords(numel: usize, limit: Option<usize>) -> Vec<usize> {
    match limit {
        Some(k) if k < numel => {
            let stride = numel as f64 / k as f64;
            (0..k).map(|i| (i as f64 * stride) as usize).collect()
        }
        _ => (0..numel).collect(),
    }
}

/// Compares the tape gradient of the scalar `f` with respect to every
/// parameter in `store` against central finite differences. Existing
/// gradients in `store` are reset.
pub fn check_gradients(
    store: &mut ParamStore,
    f: impl Fn(&mut Graph, &ParamStore) -> Result<Var>,
    options: &GradCheckOptions,
) -> Result<GradCheckReport> {
    store.zero_grads();
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward_into(out, store)?;
    let analytic: Vec<Vec<f64>> = store
        .ids()
        .map(|id| store.get(id).grad().map(<[f64]>::to_vec).unwrap_or_default())
        .collect();

    let mut max_rel = 0.0f64;
    let mut worst = None;
    let mut checked = 0;
    let ids: Vec<ParamId> = store.ids().collect();
    for id in ids {
        for i in coords(store.get(id).numel(), options.max_coords_per_param) {
            let orig = store.get(id).data()[i];
            store.get_mut(id).data_mut()[i] = orig + options.step;
            let plus = eval(store, &f)?;
            store.get_mut(id).data_mut()[i] = orig - options.step;
            let minus = eval(store, &f)?;
            store.get_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * options.step);
            let a = analytic[id.0][i];
            let denom = a.abs().max(numeric.abs()).max(options.abs_floor);
            let rel = (a - numeric).abs() / denom;
            checked += 1;
            if worst.is_none() || rel > max_rel {
                max_rel = rel;
                worst = Some((store.name(id).to_string(), i));
            }
        }
    }
    store.zero_grads();
    Ok(GradCheckReport {
        max_rel_error: max_rel,
        worst,
        coords_checked: checked,
        passed: max_rel <= options.tolerance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Tensor;

    #[test]
    fn sum_of_squares_matches_closed_form() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0, 2.0, 3.0]));
        let f = |g: &mut Graph, s: &ParamStore| {
            let v = g.param(s, x);
            let sq = g.mul(v, v)?;
            Ok(g.sum(sq))
        };
        let mut g = Graph::new();
        let out = f(&mut g, &store).unwrap();
        g.backward_into(out, &mut store).unwrap();
        assert_eq!(store.get(x).grad().unwrap(), &[2.0, 4.0, 6.0]);

        let report = check_gradients(&mut store, f, &GradCheckOptions::default()).unwrap();
        assert!(report.max_rel_error < 1e-7, "{report:?}");
        assert!(report.passed);
    }

    #[test]
    fn constant_function_has_exactly_zero_gradient() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![0.3, -0.7]));
        let f = move |g: &mut Graph, s: &ParamStore| {
            let v = g.param(s, x);
            let zero = g.scale(v, 0.0);
            let s = g.sum(zero);
            let c = g.constant(Tensor::scalar(4.0));
            g.add(s, c)
        };
        let mut g = Graph::new();
        let out = f(&mut g, &store).unwrap();
        g.backward_into(out, &mut store).unwrap();
        assert_eq!(store.get(x).grad().unwrap(), &[0.0, 0.0]);
        let report = check_gradients(&mut store, f, &GradCheckOptions::default()).unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }

    #[test]
    fn non_scalar_output_is_a_usage_error() {
        let mut store = ParamStore::new();
        let x = store.add("x", Tensor::vector(vec![1.0, 2.0]));
        let err = check_gradients(
            &mut store,
            |g, s| Ok(g.param(s, x)),
            &GradCheckOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::Usage(_)), "{err}");
    }
}
