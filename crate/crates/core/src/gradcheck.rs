//! Central finite-difference gradient verification.
//!
//! Used by the unit tests of every layer and by the acceptance suite. The
//! checks perturb raw `f64` storage directly, so they exercise exactly the
//! parameters the optimizer sees.

use crate::mat::Mat;
use crate::nn::params::{Grads, Params};

/// Central-difference step recommended by the verification protocol.
pub const FD_STEP: f64 = 1e-5;

/// Relative error with a floor so near-zero gradient pairs compare on an
/// absolute scale. The floor sits far above central-difference roundoff
/// noise (~1e-16 * |f| / step) while still flagging any real backprop bug,
/// whose error scales with the gradient magnitude itself.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs()).max(1e-3);
    (a - b).abs() / denom
}

/// Max relative error between `analytic` parameter gradients and central
/// finite differences of `f` over every scalar in `params`.
///
/// `f` must be a pure function of `(params, x)`.
pub fn max_rel_err_params(
    params: &mut Params,
    x: &Mat,
    mut f: impl FnMut(&Params, &Mat) -> f64,
    analytic: &Grads,
) -> f64 {
    let mut worst = 0.0f64;
    for id in params.ids().collect::<alloc::vec::Vec<_>>() {
        let n = params.get(id).len();
        for idx in 0..n {
            let orig = params.get(id).data()[idx];
            params.get_mut(id).data_mut()[idx] = orig + FD_STEP;
            let plus = f(params, x);
            params.get_mut(id).data_mut()[idx] = orig - FD_STEP;
            let minus = f(params, x);
            params.get_mut(id).data_mut()[idx] = orig;
            let fd = (plus - minus) / (2.0 * FD_STEP);
            let an = analytic.get(id).data()[idx];
            worst = worst.max(rel_err(fd, an));
        }
    }
    worst
}

/// Max relative error between an analytic input gradient and central finite
/// differences over every element of `x`.
pub fn max_rel_err_inputs(
    params: &Params,
    x: &mut Mat,
    mut f: impl FnMut(&Params, &Mat) -> f64,
    analytic: &Mat,
) -> f64 {
    let mut worst = 0.0f64;
    for idx in 0..x.len() {
        let orig = x.data()[idx];
        x.data_mut()[idx] = orig + FD_STEP;
        let plus = f(params, x);
        x.data_mut()[idx] = orig - FD_STEP;
        let minus = f(params, x);
        x.data_mut()[idx] = orig;
        let fd = (plus - minus) / (2.0 * FD_STEP);
        worst = worst.max(rel_err(fd, analytic.data()[idx]));
    }
    worst
}
