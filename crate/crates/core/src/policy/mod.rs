//! Actor-critic network over the cell-embedding space.
//!
//! Both heads read the state through one shared sigmoid layer, then each has
//! its own sigmoid hidden layer and a linear output: the actor emits the mean
//! of an isotropic Gaussian over actions, the critic a scalar state value.
//! Gradients are computed by hand; updates use Adam.

mod lipschitz;

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::embedding::CellEmbeddingTable;
use crate::error::{Error, Result};

pub use lipschitz::{input_jacobian, lipschitz_bounds, spectral_norm, LipschitzBounds, SIGMOID_MAX_CURVATURE};

pub const DEFAULT_HIDDEN: usize = 256;
pub const SIGMA_FLOOR: f64 = 1e-3;

/// Affine layer `weight · x + bias`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    fn xavier(outputs: usize, inputs: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (inputs + outputs) as f64).sqrt();
        Self {
            weight: Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-bound..bound)),
            bias: Array1::zeros(outputs),
        }
    }

    pub fn apply(&self, x: ArrayView1<f64>) -> Array1<f64> {
        self.weight.dot(&x) + &self.bias
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weight.nrows(), self.weight.ncols())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyParameters {
    pub shared: Dense,
    pub actor_hidden: Dense,
    pub actor_out: Dense,
    pub critic_hidden: Dense,
    pub critic_out: Dense,
    pub log_sigma: f64,
}

impl PolicyParameters {
    pub fn zeros(kappa: usize, hidden: usize) -> Self {
        Self {
            shared: Dense::zeros(hidden, kappa),
            actor_hidden: Dense::zeros(hidden, hidden),
            actor_out: Dense::zeros(kappa, hidden),
            critic_hidden: Dense::zeros(hidden, hidden),
            critic_out: Dense::zeros(1, hidden),
            log_sigma: 0.0,
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            shared: self.shared.zeros_like(),
            actor_hidden: self.actor_hidden.zeros_like(),
            actor_out: self.actor_out.zeros_like(),
            critic_hidden: self.critic_hidden.zeros_like(),
            critic_out: self.critic_out.zeros_like(),
            log_sigma: 0.0,
        }
    }

    pub fn kappa(&self) -> usize {
        self.shared.weight.ncols()
    }

    pub fn hidden(&self) -> usize {
        self.shared.weight.nrows()
    }

    pub fn sigma(&self) -> f64 {
        self.log_sigma.exp()
    }

    fn layers(&self) -> [&Dense; 5] {
        [&self.shared, &self.actor_hidden, &self.actor_out, &self.critic_hidden, &self.critic_out]
    }

    /// Every parameter as a flat slice, in a fixed order; `log_sigma` last.
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(11);
        for layer in self.layers() {
            out.push(layer.weight.as_slice().expect("row-major weight"));
            out.push(layer.bias.as_slice().expect("contiguous bias"));
        }
        out.push(std::slice::from_ref(&self.log_sigma));
        out
    }

    pub fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(11);
        for layer in [
            &mut self.shared,
            &mut self.actor_hidden,
            &mut self.actor_out,
            &mut self.critic_hidden,
            &mut self.critic_out,
        ] {
            out.push(layer.weight.as_slice_mut().expect("row-major weight"));
            out.push(layer.bias.as_slice_mut().expect("contiguous bias"));
        }
        out.push(std::slice::from_mut(&mut self.log_sigma));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.slices().iter().map(|s| s.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.slices().iter().all(|s| s.iter().all(|x| x.is_finite()))
    }

    fn check_shapes(&self) -> Result<()> {
        let (k, h) = (self.kappa(), self.hidden());
        let ok = self.shared.weight.dim() == (h, k)
            && self.actor_hidden.weight.dim() == (h, h)
            && self.actor_out.weight.dim() == (k, h)
            && self.critic_hidden.weight.dim() == (h, h)
            && self.critic_out.weight.dim() == (1, h)
            && self.layers().iter().all(|l| l.bias.len() == l.weight.nrows());
        if ok {
            Ok(())
        } else {
            Err(Error::Internal("inconsistent parameter shapes".into()))
        }
    }

    /// Adds `scale * other` in place.
    pub fn add_scaled(&mut self, other: &PolicyParameters, scale: f64) {
        for (dst, src) in self.slices_mut().into_iter().zip(other.slices()) {
            for (d, s) in dst.iter_mut().zip(src) {
                *d += scale * s;
            }
        }
    }
}

/// Adam first and second moments plus the step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub first_moment: PolicyParameters,
    pub second_moment: PolicyParameters,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(params: &PolicyParameters) -> Self {
        Self {
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
            step: 0,
        }
    }
}

/// Half the mean nearest-neighbor distance between cell embeddings, floored
/// at [`SIGMA_FLOOR`].
pub fn initial_sigma(embeddings: &CellEmbeddingTable) -> f64 {
    let sigma = embeddings.mean_nearest_neighbor_distance().map_or(0.0, |d| 0.5 * d);
    if sigma < SIGMA_FLOOR {
        log::warn!("cell embeddings are degenerate; exploration sigma floored at {SIGMA_FLOOR}");
        SIGMA_FLOOR
    } else {
        sigma
    }
}

/// Xavier-uniform weights, zero hidden biases, an actor output bias that puts
/// the mean action of the empty state at the centroid of the cell
/// embeddings, and an exploration scale matched to their spacing.
pub fn init_params(
    kappa: usize,
    hidden: usize,
    seed: u64,
    embeddings: &CellEmbeddingTable,
) -> Result<(PolicyParameters, OptimizerState)> {
    if kappa == 0 || hidden == 0 {
        return Err(Error::Input("kappa and hidden size must be positive".into()));
    }
    if embeddings.kappa() != kappa {
        return Err(Error::Internal(format!(
            "embedding width {} does not match kappa {kappa}",
            embeddings.kappa()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParameters {
        shared: Dense::xavier(hidden, kappa, &mut rng),
        actor_hidden: Dense::xavier(hidden, hidden, &mut rng),
        actor_out: Dense::xavier(kappa, hidden, &mut rng),
        critic_hidden: Dense::xavier(hidden, hidden, &mut rng),
        critic_out: Dense::xavier(1, hidden, &mut rng),
        log_sigma: initial_sigma(embeddings).ln(),
    };
    // Sigmoid activations average about 0.5, so a zero output bias would put
    // the first action mean at a random offset and starve distant cells of
    // samples. Start it at the centroid of the cells instead.
    if !embeddings.is_empty() {
        let centroid = embeddings.matrix().mean_axis(Axis(0)).expect("non-empty table");
        let mu0 = forward(&params, Array1::zeros(kappa).view())?.mu;
        params.actor_out.bias = centroid - mu0;
    }
    let state = OptimizerState::new(&params);
    Ok((params, state))
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations kept from a forward pass for backpropagation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub input: Array1<f64>,
    pub shared: Array1<f64>,
    pub actor_hidden: Array1<f64>,
    pub critic_hidden: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub mu: Array1<f64>,
    pub value: f64,
    pub cache: ForwardCache,
}

pub fn forward(params: &PolicyParameters, state: ArrayView1<f64>) -> Result<ForwardOutput> {
    if state.len() != params.kappa() {
        return Err(Error::Internal(format!(
            "state has {} coordinates, network expects {}",
            state.len(),
            params.kappa()
        )));
    }
    if state.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite state vector".into()));
    }
    let h1 = params.shared.apply(state).mapv_into(sigmoid);
    let h2a = params.actor_hidden.apply(h1.view()).mapv_into(sigmoid);
    let h2c = params.critic_hidden.apply(h1.view()).mapv_into(sigmoid);
    let mu = params.actor_out.apply(h2a.view());
    let value = params.critic_out.apply(h2c.view())[0];
    Ok(ForwardOutput {
        mu,
        value,
        cache: ForwardCache {
            input: state.to_owned(),
            shared: h1,
            actor_hidden: h2a,
            critic_hidden: h2c,
        },
    })
}

/// Log-density of an isotropic Gaussian and its gradients in the mean and in
/// the scalar standard deviation.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianTerms {
    pub log_density: f64,
    pub grad_mu: Array1<f64>,
    pub grad_sigma: f64,
}

pub fn gaussian_log_density(a: ArrayView1<f64>, mu: ArrayView1<f64>, sigma: f64) -> Result<GaussianTerms> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    if a.len() != mu.len() {
        return Err(Error::Internal("action and mean differ in length".into()));
    }
    let k = a.len() as f64;
    let diff = &a - &mu;
    let sq = diff.dot(&diff);
    let var = sigma * sigma;
    Ok(GaussianTerms {
        log_density: -0.5 * k * (2.0 * std::f64::consts::PI).ln() - k * sigma.ln() - sq / (2.0 * var),
        grad_mu: diff / var,
        grad_sigma: (sq - k * var) / (var * sigma),
    })
}

pub fn sample_action(mu: ArrayView1<f64>, sigma: f64, rng: &mut impl Rng) -> Array1<f64> {
    mu.mapv(|m| m + sigma * rng.sample::<f64, _>(StandardNormal))
}

fn backward(
    params: &PolicyParameters,
    cache: &ForwardCache,
    upstream_mu: ArrayView1<f64>,
    upstream_value: f64,
) -> Result<(PolicyParameters, Array1<f64>)> {
    params.check_shapes()?;
    if upstream_mu.len() != params.kappa() || cache.input.len() != params.kappa() {
        return Err(Error::Internal("upstream gradient does not match network shape".into()));
    }
    let outer = |a: &Array1<f64>, b: &Array1<f64>| {
        let a2 = a.view().insert_axis(ndarray::Axis(1));
        let b2 = b.view().insert_axis(ndarray::Axis(0));
        a2.dot(&b2).as_standard_layout().into_owned()
    };
    let dsig = |h: &Array1<f64>, g: Array1<f64>| g * &h.mapv(|x| x * (1.0 - x));

    let mut grads = params.zeros_like();

    let d_mu = upstream_mu.to_owned();
    grads.actor_out.weight = outer(&d_mu, &cache.actor_hidden);
    grads.actor_out.bias = d_mu.clone();
    let dz_a = dsig(&cache.actor_hidden, params.actor_out.weight.t().dot(&d_mu));
    grads.actor_hidden.weight = outer(&dz_a, &cache.shared);
    let dh1_actor = params.actor_hidden.weight.t().dot(&dz_a);
    grads.actor_hidden.bias = dz_a;

    let d_v = Array1::from_elem(1, upstream_value);
    grads.critic_out.weight = outer(&d_v, &cache.critic_hidden);
    grads.critic_out.bias = d_v.clone();
    let dz_c = dsig(&cache.critic_hidden, params.critic_out.weight.t().dot(&d_v));
    grads.critic_hidden.weight = outer(&dz_c, &cache.shared);
    let dh1_critic = params.critic_hidden.weight.t().dot(&dz_c);
    grads.critic_hidden.bias = dz_c;

    let dz1 = dsig(&cache.shared, dh1_actor + dh1_critic);
    grads.shared.weight = outer(&dz1, &cache.input);
    let d_input = params.shared.weight.t().dot(&dz1);
    grads.shared.bias = dz1;

    Ok((grads, d_input))
}

/// Gradient of `upstream_mu · mu + upstream_value · value` with respect to
/// every network parameter. `log_sigma` is not part of the network and gets
/// a zero entry.
pub fn param_gradients(
    params: &PolicyParameters,
    cache: &ForwardCache,
    upstream_mu: ArrayView1<f64>,
    upstream_value: f64,
) -> Result<PolicyParameters> {
    backward(params, cache, upstream_mu, upstream_value).map(|(g, _)| g)
}

/// Gradient of `upstream_mu · mu + upstream_value · value` with respect to
/// the input state.
pub fn input_gradient(
    params: &PolicyParameters,
    cache: &ForwardCache,
    upstream_mu: ArrayView1<f64>,
    upstream_value: f64,
) -> Result<Array1<f64>> {
    backward(params, cache, upstream_mu, upstream_value).map(|(_, g)| g)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam update.
pub fn adam_step(params: &mut PolicyParameters, grads: &PolicyParameters, state: &mut OptimizerState, cfg: &AdamConfig) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    let OptimizerState {
        first_moment,
        second_moment,
        ..
    } = state;
    for (((p, g), m), v) in params
        .slices_mut()
        .into_iter()
        .zip(grads.slices())
        .zip(first_moment.slices_mut())
        .zip(second_moment.slices_mut())
    {
        for i in 0..p.len() {
            m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
            v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
}

/// Serialized network with its construction metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub kappa: usize,
    pub hidden: usize,
    pub seed: u64,
    pub params: PolicyParameters,
}

impl Checkpoint {
    pub fn new(params: PolicyParameters, seed: u64) -> Self {
        Self {
            kappa: params.kappa(),
            hidden: params.hidden(),
            seed,
            params,
        }
    }

    pub fn write(&self, writer: impl Write) -> Result<()> {
        serde_json::to_writer(writer, self)?;
        Ok(())
    }

    pub fn read(reader: impl Read) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(reader)?;
        ck.params.check_shapes()?;
        if ck.params.kappa() != ck.kappa || ck.params.hidden() != ck.hidden {
            return Err(Error::Input("checkpoint metadata disagrees with weight shapes".into()));
        }
        Ok(ck)
    }
}
