//! Gradient verification against central finite differences.

use crate::error::Result;
use crate::nn::store::ParamStore;
use crate::nn::tape::{Tape, VarId};
use crate::nn::tensor::Tensor;

/// Compare the reverse-mode gradient of a scalar function against central
/// finite differences over every parameter component.
///
/// Returns the maximum of |g_ad - g_fd| / max(1e-8, |g_ad| + |g_fd|). The
/// function must be smooth at the evaluation point; callers re-sample when an
/// activation kink lies within `eps` of the point.
pub fn grad_check<F>(store: &mut ParamStore, f: F, eps: f64) -> Result<f64>
where
    F: Fn(&mut Tape) -> VarId,
{
    let n_params = store.len();
    let analytic: Vec<Tensor> = {
        let (values, _) = store.split_mut();
        let mut tape = Tape::new(values);
        let root = f(&mut tape);
        tape.check_healthy()?;
        let mut grads: Vec<Tensor> = (0..n_params)
            .map(|id| Tensor::zeros(values.value(id).shape()))
            .collect();
        tape.backward(root, 1.0, None, &mut grads)?;
        grads
    };

    let eval = |store: &ParamStore| -> Result<f64> {
        let mut tape = Tape::new(store.values());
        let root = f(&mut tape);
        tape.check_healthy()?;
        Ok(tape.scalar_value(root))
    };

    let mut max_err = 0.0f64;
    for id in 0..n_params {
        for i in 0..store.value(id).len() {
            let original = store.value(id).at(i);
            store.value_mut(id).data_mut()[i] = original + eps;
            let plus = eval(store)?;
            store.value_mut(id).data_mut()[i] = original - eps;
            let minus = eval(store)?;
            store.value_mut(id).data_mut()[i] = original;

            let g_fd = (plus - minus) / (2.0 * eps);
            let g_ad = analytic[id].at(i);
            let err = (g_ad - g_fd).abs() / (1e-8f64).max(g_ad.abs() + g_fd.abs());
            if err > max_err {
                max_err = err;
            }
        }
    }
    Ok(max_err)
}

pub const DEFAULT_EPS: f64 = 1e-5;
