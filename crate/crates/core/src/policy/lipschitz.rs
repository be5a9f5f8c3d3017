//! Lipschitz constants of the actor and critic maps in their input.
//!
//! Each head is `W3 · s(W2 · s(W1 · u + b1) + b2) + b3` with `s` the
//! sigmoid, whose slope is at most 1/4 and whose second derivative is at
//! most `1 / (6 √3)` in magnitude.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use super::{forward, input_gradient, PolicyParameters};
use crate::error::Result;

pub const SIGMOID_MAX_SLOPE: f64 = 0.25;
/// `max |s''(x)|`, attained at `x = ln(2 ± √3)`.
pub const SIGMOID_MAX_CURVATURE: f64 = 0.096_225_044_864_937_63;

/// Largest singular value by power iteration on `Wᵀ W`.
pub fn spectral_norm(w: ArrayView2<f64>, max_iters: usize) -> f64 {
    let n = w.ncols();
    if n == 0 || w.nrows() == 0 {
        return 0.0;
    }
    // Deterministic start with no special symmetry.
    let mut v = Array1::from_shape_fn(n, |i| 1.0 + 0.1 * ((i as f64) * 0.618_033_988_7).fract());
    v /= v.dot(&v).sqrt();
    let mut estimate = 0.0;
    for _ in 0..max_iters {
        let u = w.dot(&v);
        let norm_u = u.dot(&u).sqrt();
        if norm_u == 0.0 {
            return 0.0;
        }
        let next = w.t().dot(&u);
        let norm = next.dot(&next).sqrt();
        let prev = estimate;
        estimate = norm / norm_u;
        v = next / norm;
        if (estimate - prev).abs() <= 1e-13 * estimate {
            break;
        }
    }
    estimate
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LipschitzBounds {
    /// Bound on `‖μ(u) − μ(u')‖ / ‖u − u'‖`.
    pub actor: f64,
    /// Bound on `|ν(u) − ν(u')| / ‖u − u'‖`.
    pub critic: f64,
    /// Bound on `‖Jμ(u) − Jμ(u')‖₂ / ‖u − u'‖`.
    pub actor_jacobian: f64,
    /// Bound on `‖∇ν(u) − ∇ν(u')‖ / ‖u − u'‖`.
    pub critic_gradient: f64,
}

const POWER_ITERS: usize = 1000;

fn head_bounds(w1: f64, w2: f64, w3: f64) -> (f64, f64) {
    let s = SIGMOID_MAX_SLOPE;
    let value = s * s * w1 * w2 * w3;
    // J(u) = W3 D2 W2 D1 W1 with D = diag(s'); each D moves by at most
    // curvature × the change of its pre-activation.
    let jacobian = w3 * w2 * w1 * SIGMOID_MAX_CURVATURE * w1 * s * (1.0 + s * w2);
    (value, jacobian)
}

pub fn lipschitz_bounds(params: &PolicyParameters) -> LipschitzBounds {
    let w1 = spectral_norm(params.shared.weight.view(), POWER_ITERS);
    let (actor, actor_jacobian) = head_bounds(
        w1,
        spectral_norm(params.actor_hidden.weight.view(), POWER_ITERS),
        spectral_norm(params.actor_out.weight.view(), POWER_ITERS),
    );
    let (critic, critic_gradient) = head_bounds(
        w1,
        spectral_norm(params.critic_hidden.weight.view(), POWER_ITERS),
        spectral_norm(params.critic_out.weight.view(), POWER_ITERS),
    );
    LipschitzBounds {
        actor,
        critic,
        actor_jacobian,
        critic_gradient,
    }
}

/// Jacobian of the actor mean (`κ × κ`) and gradient of the critic value with
/// respect to the input state.
pub fn input_jacobian(params: &PolicyParameters, state: ArrayView1<f64>) -> Result<(Array2<f64>, Array1<f64>)> {
    let k = params.kappa();
    let out = forward(params, state)?;
    let mut jac = Array2::zeros((k, k));
    let mut e = Array1::zeros(k);
    for i in 0..k {
        e[i] = 1.0;
        jac.row_mut(i)
            .assign(&input_gradient(params, &out.cache, e.view(), 0.0)?);
        e[i] = 0.0;
    }
    let grad_v = input_gradient(params, &out.cache, e.view(), 1.0)?;
    Ok((jac, grad_v))
}
