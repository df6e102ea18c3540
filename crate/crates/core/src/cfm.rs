//! Optimal-transport conditional flow matching primitives.
//!
//! Shared by the latent denoiser and both duration generators: interpolant
//! path construction, target velocities, the noise-enriched prior, the two
//! regression losses, and a fixed-step Euler sampler whose evaluation count
//! is the NFE metric.

use alloc::boxed::Box;
use alloc::format;

use crate::err::{Error, Result};
use crate::mat::{mse, Mat};
use crate::rng::Rng;

/// Flow-matching hyperparameters.
///
/// `tau_train` and `tau_infer` are deliberately separate: training enriches
/// the prior with full-scale noise while sampling defaults to a smaller
/// scale, and the two are tuned independently.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowConfig {
    /// Minimum path variance of the interpolant, in [0, 1).
    pub sigma_min: f64,
    /// Noise scale added to the prior during training.
    pub tau_train: f64,
    /// Noise scale added to the prior at sampling time.
    pub tau_infer: f64,
    /// Euler step count (= number of vector-field evaluations).
    pub nfe: usize,
}

impl Default for FlowConfig {
    fn default() -> Self {
        FlowConfig {
            sigma_min: 1e-4,
            tau_train: 1.0,
            tau_infer: 0.3,
            nfe: 16,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma_min) {
            return Err(Error::Domain {
                what: "sigma_min must be in [0, 1)",
                value: self.sigma_min,
            });
        }
        if self.tau_train < 0.0 {
            return Err(Error::Domain {
                what: "tau_train must be >= 0",
                value: self.tau_train,
            });
        }
        if self.tau_infer < 0.0 {
            return Err(Error::Domain {
                what: "tau_infer must be >= 0",
                value: self.tau_infer,
            });
        }
        if self.nfe == 0 {
            return Err(Error::Domain {
                what: "nfe must be >= 1",
                value: 0.0,
            });
        }
        Ok(())
    }
}

/// One training example of the flow: prior point, data point, time, the
/// interpolant at that time and its target velocity.
#[derive(Clone, Debug)]
pub struct FlowSample {
    pub x0_prime: Mat,
    pub x1: Mat,
    pub t: f64,
    pub xt: Mat,
    pub ut: Mat,
}

impl FlowSample {
    /// Build the interpolant and target velocity for `(x0', x1, t)`.
    pub fn new(x0_prime: Mat, x1: Mat, t: f64, sigma_min: f64) -> Result<Self> {
        let xt = ot_path(&x0_prime, &x1, t, sigma_min)?;
        let ut = ot_velocity(&x0_prime, &x1, sigma_min)?;
        Ok(FlowSample {
            x0_prime,
            x1,
            t,
            xt,
            ut,
        })
    }
}

fn check_t(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain {
            what: "t must be in [0, 1]",
            value: t,
        });
    }
    Ok(())
}

/// Interpolant `x_t = t*x1 + (1 - (1 - sigma_min)*t) * x0`.
pub fn ot_path(x0: &Mat, x1: &Mat, t: f64, sigma_min: f64) -> Result<Mat> {
    x0.expect_same_shape(x1, "ot_path")?;
    check_t(t)?;
    let a = 1.0 - (1.0 - sigma_min) * t;
    let mut out = x1.scale(t);
    out.add_scaled(x0, a);
    Ok(out)
}

/// Target velocity `u_t = x1 - (1 - sigma_min) * x0`; independent of `t`.
pub fn ot_velocity(x0: &Mat, x1: &Mat, sigma_min: f64) -> Result<Mat> {
    x0.expect_same_shape(x1, "ot_velocity")?;
    let mut out = x1.clone();
    out.add_scaled(x0, -(1.0 - sigma_min));
    Ok(out)
}

/// Noise-enriched prior point `x0' = x_pr + tau * noise`.
pub fn enriched_prior(x_pr: &Mat, tau: f64, noise: &Mat) -> Result<Mat> {
    if tau < 0.0 {
        return Err(Error::Domain {
            what: "tau must be >= 0",
            value: tau,
        });
    }
    x_pr.expect_same_shape(noise, "enriched_prior")?;
    let mut out = x_pr.clone();
    out.add_scaled(noise, tau);
    Ok(out)
}

/// Flow-matching regression loss: mean squared error between the predicted
/// velocity and the enriched-prior target `x1 - x0'`. No `sigma_min` factor
/// appears in this target; the classical target lives in [`ot_velocity`].
pub fn cfm_loss(v_pred: &Mat, x1: &Mat, x0_prime: &Mat) -> Result<f64> {
    v_pred.expect_same_shape(x1, "cfm_loss")?;
    v_pred.expect_same_shape(x0_prime, "cfm_loss")?;
    let target = x1.sub(x0_prime);
    mse(v_pred, &target)
}

/// [`cfm_loss`] plus its gradient with respect to `v_pred`.
pub fn cfm_loss_with_grad(v_pred: &Mat, x1: &Mat, x0_prime: &Mat) -> Result<(f64, Mat)> {
    v_pred.expect_same_shape(x1, "cfm_loss")?;
    v_pred.expect_same_shape(x0_prime, "cfm_loss")?;
    let n = v_pred.len() as f64;
    let mut grad = v_pred.sub(x1);
    grad.add_assign(x0_prime);
    let loss = grad.sq_norm() / n;
    grad.scale_inplace(2.0 / n);
    Ok((loss, grad))
}

/// Anchor loss: extrapolate the endpoint `x~1 = x_t + (1-t) * v_pred` and
/// penalize its mean squared distance to the true `x1`.
pub fn anchor_loss(v_pred: &Mat, xt: &Mat, x1: &Mat, t: f64) -> Result<f64> {
    check_t(t)?;
    v_pred.expect_same_shape(xt, "anchor_loss")?;
    v_pred.expect_same_shape(x1, "anchor_loss")?;
    let mut x1_hat = xt.clone();
    x1_hat.add_scaled(v_pred, 1.0 - t);
    mse(&x1_hat, x1)
}

/// [`anchor_loss`] plus gradients with respect to `v_pred` and `xt`.
///
/// Returns `(loss, d_v, d_xt)` where `d_xt` is only the direct path through
/// the extrapolation; the caller adds the network-input path.
pub fn anchor_loss_with_grad(v_pred: &Mat, xt: &Mat, x1: &Mat, t: f64) -> Result<(f64, Mat, Mat)> {
    check_t(t)?;
    v_pred.expect_same_shape(xt, "anchor_loss")?;
    v_pred.expect_same_shape(x1, "anchor_loss")?;
    let n = v_pred.len() as f64;
    let mut resid = xt.clone();
    resid.add_scaled(v_pred, 1.0 - t);
    let resid = resid.sub(x1);
    let loss = resid.sq_norm() / n;
    let d_xt = resid.scale(2.0 / n);
    let d_v = d_xt.scale(1.0 - t);
    Ok((loss, d_v, d_xt))
}

/// Fixed-step Euler integration of a learned velocity field from `t = 0` to
/// `t = 1`. The field is evaluated exactly `nfe` times; the count is
/// returned so callers can report it as the NFE metric. Conditioning is
/// captured inside the `field` closure.
pub fn euler_sample(
    mut field: impl FnMut(&Mat, f64) -> Result<Mat>,
    x0_prime: &Mat,
    nfe: usize,
) -> Result<(Mat, usize)> {
    if nfe == 0 {
        return Err(Error::Domain {
            what: "nfe must be >= 1",
            value: 0.0,
        });
    }
    let dt = 1.0 / nfe as f64;
    let mut x = x0_prime.clone();
    let mut evals = 0;
    for step in 0..nfe {
        let t = step as f64 * dt;
        let v = field(&x, t)?;
        evals += 1;
        if !v.same_shape(&x) {
            return Err(Error::ShapeMismatch {
                context: "euler_sample field output",
                expected: x.shape(),
                got: v.shape(),
            });
        }
        x.add_scaled(&v, dt);
    }
    Ok((x, evals))
}

/// Standard-normal noise with the shape of `reference`.
pub fn noise_like(reference: &Mat, rng: &mut Rng) -> Mat {
    rng.normal_mat(reference.rows(), reference.cols())
}

/// Checks a velocity estimate for non-finite values, naming the producer.
pub fn ensure_finite(m: &Mat, who: &str) -> Result<()> {
    if m.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite values produced by {who}")))
    }
}

/// Object-safe velocity field, used where dynamic dispatch is convenient.
pub type BoxedField<'a> = Box<dyn FnMut(&Mat, f64) -> Result<Mat> + 'a>;
