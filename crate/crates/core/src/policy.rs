//! Stochastic MLP policy over per-column mixing weights.
//!
//! The network maps a state summary to the mean and log standard deviation
//! of a diagonal Gaussian over pre-squash values `z`; actions are
//! `a = sigmoid(z)`. Densities include the change-of-variables term so
//! `log_prob` is the exact log-density of `a` on `(0, 1)^w`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::embedding::{ActionVector, ConceptPair, Embedding};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, streams, SeededRng};
use crate::scalar::Scalar;

pub const LOG_STD_MIN: f64 = -5.0;
pub const LOG_STD_MAX: f64 = 2.0;
pub const DEFAULT_HIDDEN: [usize; 2] = [256, 256];

/// How an `(e_f, e1, e2)` state is turned into the network input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryMode {
    /// Per-column means, `w` values per matrix.
    #[default]
    ColumnMean,
    /// Full row-major flattening, `h·w` values per matrix.
    Flatten,
}

/// Summary mode plus whether the source embeddings are appended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateEncoding {
    pub mode: SummaryMode,
    pub condition_on_sources: bool,
}

impl Default for StateEncoding {
    fn default() -> Self {
        Self {
            mode: SummaryMode::ColumnMean,
            condition_on_sources: true,
        }
    }
}

impl StateEncoding {
    pub fn input_dim(&self, rows: usize, cols: usize) -> usize {
        let per_matrix = match self.mode {
            SummaryMode::ColumnMean => cols,
            SummaryMode::Flatten => rows * cols,
        };
        if self.condition_on_sources {
            3 * per_matrix
        } else {
            per_matrix
        }
    }

    pub fn encode<S: Scalar>(&self, state: &Embedding<S>, pair: &ConceptPair<S>) -> Result<Vec<S>> {
        if state.shape() != pair.shape() {
            return Err(Error::InvalidPair(format!(
                "state shape {:?} does not match pair shape {:?}",
                state.shape(),
                pair.shape()
            )));
        }
        let part = |e: &Embedding<S>| match self.mode {
            SummaryMode::ColumnMean => e.column_means(),
            SummaryMode::Flatten => e.as_slice().to_vec(),
        };
        let mut out = part(state);
        if self.condition_on_sources {
            out.extend(part(pair.first()));
            out.extend(part(pair.second()));
        }
        Ok(out)
    }
}

/// State summary conditioned on both sources: `[summary(e_f), summary(e1), summary(e2)]`.
pub fn summarize_state<S: Scalar>(
    state: &Embedding<S>,
    pair: &ConceptPair<S>,
    mode: SummaryMode,
) -> Result<Vec<S>> {
    StateEncoding {
        mode,
        condition_on_sources: true,
    }
    .encode(state, pair)
}

/// MLP weights and biases. `weights[l]` is `layer_sizes[l+1] × layer_sizes[l]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams<S> {
    layer_sizes: Vec<usize>,
    weights: Vec<Vec<S>>,
    biases: Vec<Vec<S>>,
    log_std_bounds: (S, S),
}

/// Gradient with the same layout as [`PolicyParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrad<S> {
    pub weights: Vec<Vec<S>>,
    pub biases: Vec<Vec<S>>,
}

/// Pre-squash diagonal Gaussian.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionDistribution<S> {
    pub mean: Vec<S>,
    pub log_std: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SamplingMode {
    #[default]
    Stochastic,
    /// Use `z = mean` instead of drawing.
    Deterministic,
}

impl<S: Scalar> PolicyParams<S> {
    /// Hidden layers get `N(0, 1/fan_in)` weights and zero biases; the
    /// output layer is all zeros so the initial action is 0.5 per column.
    pub fn init(input_dim: usize, cols: usize, hidden: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || cols == 0 || hidden.contains(&0) {
            return Err(Error::InvalidInput("layer sizes must be positive".into()));
        }
        let mut layer_sizes = vec![input_dim];
        layer_sizes.extend_from_slice(hidden);
        layer_sizes.push(2 * cols);

        let mut rng = SeededRng::new(derive_seed(seed, streams::POLICY_INIT));
        let n_layers = layer_sizes.len() - 1;
        let mut weights = Vec::with_capacity(n_layers);
        let mut biases = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let (fan_in, fan_out) = (layer_sizes[l], layer_sizes[l + 1]);
            let w = if l + 1 == n_layers {
                vec![S::zero(); fan_in * fan_out]
            } else {
                let scale = (1.0 / fan_in as f64).sqrt();
                (0..fan_in * fan_out).map(|_| S::of(rng.normal() * scale)).collect()
            };
            weights.push(w);
            biases.push(vec![S::zero(); fan_out]);
        }
        Ok(Self {
            layer_sizes,
            weights,
            biases,
            log_std_bounds: (S::of(LOG_STD_MIN), S::of(LOG_STD_MAX)),
        })
    }

    /// Builds params from explicit arrays, checking every shape.
    pub fn from_parts(layer_sizes: Vec<usize>, weights: Vec<Vec<S>>, biases: Vec<Vec<S>>) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!("bad layer sizes {layer_sizes:?}")));
        }
        if layer_sizes.last().unwrap() % 2 != 0 {
            return Err(Error::InvalidInput("output size must be 2·w".into()));
        }
        let n_layers = layer_sizes.len() - 1;
        if weights.len() != n_layers || biases.len() != n_layers {
            return Err(Error::InvalidInput(format!(
                "expected {n_layers} weight and bias arrays, got {} and {}",
                weights.len(),
                biases.len()
            )));
        }
        for l in 0..n_layers {
            if weights[l].len() != layer_sizes[l] * layer_sizes[l + 1] || biases[l].len() != layer_sizes[l + 1] {
                return Err(Error::InvalidInput(format!("layer {l} arrays have the wrong size")));
            }
        }
        let params = Self {
            layer_sizes,
            weights,
            biases,
            log_std_bounds: (S::of(LOG_STD_MIN), S::of(LOG_STD_MAX)),
        };
        params.validate()?;
        Ok(params)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    /// Number of action columns `w`.
    pub fn action_dim(&self) -> usize {
        self.layer_sizes.last().unwrap() / 2
    }

    pub fn log_std_bounds(&self) -> (S, S) {
        self.log_std_bounds
    }

    pub fn weights(&self) -> &[Vec<S>] {
        &self.weights
    }

    pub fn biases(&self) -> &[Vec<S>] {
        &self.biases
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(Vec::len).sum::<usize>() + self.biases.iter().map(Vec::len).sum::<usize>()
    }

    /// All parameters, layer by layer (weights then biases).
    pub fn values(&self) -> impl Iterator<Item = &S> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.values().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NumericDomain("policy parameters contain non-finite values".into()))
        }
    }

    fn run(&self, input: &[S]) -> Result<Vec<Vec<S>>> {
        if input.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "policy expects {} inputs, got {}",
                self.input_dim(),
                input.len()
            )));
        }
        if input.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("state summary is not finite".into()));
        }
        self.validate()?;
        let n_layers = self.weights.len();
        let mut activations = Vec::with_capacity(n_layers + 1);
        activations.push(input.to_vec());
        for l in 0..n_layers {
            let x = &activations[l];
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = &self.weights[l];
            let mut y: Vec<S> = (0..n_out)
                .map(|k| {
                    let row = &w[k * n_in..(k + 1) * n_in];
                    row.iter().zip(x).fold(self.biases[l][k], |acc, (&wi, &xi)| acc + wi * xi)
                })
                .collect();
            if l + 1 < n_layers {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            activations.push(y);
        }
        Ok(activations)
    }

    /// Raw network output (mean then unclamped log-std).
    pub fn raw_output(&self, input: &[S]) -> Result<Vec<S>> {
        Ok(self.run(input)?.pop().unwrap())
    }

    fn split_output(&self, out: &[S]) -> ActionDistribution<S> {
        let w = self.action_dim();
        let (lo, hi) = self.log_std_bounds;
        ActionDistribution {
            mean: out[..w].to_vec(),
            log_std: out[w..].iter().map(|&v| v.max(lo).min(hi)).collect(),
        }
    }

    /// Forward pass returning every layer's activations (input first).
    pub(crate) fn activations(&self, input: &[S]) -> Result<Vec<Vec<S>>> {
        self.run(input)
    }

    pub(crate) fn distribution_from(&self, activations: &[Vec<S>]) -> ActionDistribution<S> {
        self.split_output(activations.last().unwrap())
    }

    /// Adds `scale · ∇_θ log π(action | input)` into `grad`.
    pub fn accumulate_grad_log_prob(
        &self,
        input: &[S],
        action: &ActionVector<S>,
        scale: S,
        grad: &mut ParamGrad<S>,
    ) -> Result<()> {
        let activations = self.run(input)?;
        self.backprop_log_prob(&activations, action, scale, grad)
    }

    pub(crate) fn backprop_log_prob(
        &self,
        activations: &[Vec<S>],
        action: &ActionVector<S>,
        scale: S,
        grad: &mut ParamGrad<S>,
    ) -> Result<()> {
        let out = activations.last().unwrap();
        let w = self.action_dim();
        check_action(action, w)?;
        let (lo, hi) = self.log_std_bounds;

        let mut delta = vec![S::zero(); 2 * w];
        for j in 0..w {
            let a = action.as_slice()[j];
            let z = logit(a);
            let mean = out[j];
            let raw_log_std = out[w + j];
            let log_std = raw_log_std.max(lo).min(hi);
            let inv_var = (-S::two() * log_std).exp();
            let diff = z - mean;
            delta[j] = scale * diff * inv_var;
            if raw_log_std >= lo && raw_log_std <= hi {
                delta[w + j] = scale * (diff * diff * inv_var - S::one());
            }
        }

        for l in (0..self.weights.len()).rev() {
            let x = &activations[l];
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (gw, gb) = (&mut grad.weights[l], &mut grad.biases[l]);
            for k in 0..n_out {
                let d = delta[k];
                if d == S::zero() {
                    continue;
                }
                gb[k] += d;
                let row = &mut gw[k * n_in..(k + 1) * n_in];
                for (g, &xi) in row.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            if l == 0 {
                break;
            }
            let weights = &self.weights[l];
            let mut next = vec![S::zero(); n_in];
            for k in 0..n_out {
                let d = delta[k];
                if d == S::zero() {
                    continue;
                }
                let row = &weights[k * n_in..(k + 1) * n_in];
                for (acc, &wi) in next.iter_mut().zip(row) {
                    *acc += wi * d;
                }
            }
            // x is tanh output of the previous layer
            for (v, &h) in next.iter_mut().zip(x) {
                *v *= S::one() - h * h;
            }
            delta = next;
        }
        Ok(())
    }
}

impl<S: Scalar> ParamGrad<S> {
    pub fn zeros_like(params: &PolicyParams<S>) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![S::zero(); w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![S::zero(); b.len()]).collect(),
        }
    }

    /// Same ordering as [`PolicyParams::values`].
    pub fn values(&self) -> impl Iterator<Item = &S> {
        self.weights.iter().zip(&self.biases).flat_map(|(w, b)| w.iter().chain(b))
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut S> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| w.iter_mut().chain(b.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<S> {
        self.values().copied().collect()
    }

    pub fn scale(&mut self, factor: S) {
        self.values_mut().for_each(|v| *v *= factor);
    }

    pub fn l2_norm(&self) -> S {
        self.values().map(|&v| v * v).sum::<S>().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Deterministic MLP pass producing the pre-squash distribution.
pub fn forward<S: Scalar>(params: &PolicyParams<S>, state_summary: &[S]) -> Result<ActionDistribution<S>> {
    let out = params.raw_output(state_summary)?;
    Ok(params.split_output(&out))
}

#[inline]
fn logit<S: Scalar>(a: S) -> S {
    a.ln() - (-a).ln_1p()
}

fn check_action<S: Scalar>(action: &ActionVector<S>, cols: usize) -> Result<()> {
    if action.len() != cols {
        return Err(Error::InvalidAction(format!(
            "action has {} entries, policy emits {cols}",
            action.len()
        )));
    }
    if let Some(j) = action.as_slice().iter().position(|&a| !(a > S::zero() && a < S::one())) {
        return Err(Error::NumericDomain(format!("action entry {j} is outside (0, 1)")));
    }
    Ok(())
}

impl<S: Scalar> ActionDistribution<S> {
    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Exact log-density of `action` under the squashed Gaussian.
    pub fn log_density(&self, action: &ActionVector<S>) -> Result<S> {
        check_action(action, self.len())?;
        let half_log_two_pi = S::half() * (S::TAU()).ln();
        let mut total = S::zero();
        for ((&a, &mean), &log_std) in action.as_slice().iter().zip(&self.mean).zip(&self.log_std) {
            let z = logit(a);
            let u = (z - mean) * (-log_std).exp();
            let gaussian = -S::half() * u * u - log_std - half_log_two_pi;
            let log_jacobian = -a.ln() - (-a).ln_1p();
            total += gaussian + log_jacobian;
        }
        Ok(total)
    }

    /// Draws `a = sigmoid(z)`; the returned log-prob is evaluated at the
    /// stored action, so re-evaluating it later gives the same number.
    pub fn sample(&self, seed: u64, mode: SamplingMode) -> Result<(ActionVector<S>, S)> {
        let mut rng = SeededRng::new(seed);
        let eps = S::epsilon();
        let coeffs = self
            .mean
            .iter()
            .zip(&self.log_std)
            .map(|(&mean, &log_std)| {
                let z = match mode {
                    SamplingMode::Stochastic => mean + log_std.exp() * S::of(rng.normal()),
                    SamplingMode::Deterministic => mean,
                };
                z.sigmoid().max(eps).min(S::one() - eps)
            })
            .collect();
        let action = ActionVector::new(coeffs)?;
        let lp = self.log_density(&action)?;
        Ok((action, lp))
    }
}

/// See [`ActionDistribution::sample`].
pub fn sample_action<S: Scalar>(
    dist: &ActionDistribution<S>,
    seed: u64,
    mode: SamplingMode,
) -> Result<(ActionVector<S>, S)> {
    dist.sample(seed, mode)
}

pub fn log_prob<S: Scalar>(params: &PolicyParams<S>, state_summary: &[S], action: &ActionVector<S>) -> Result<S> {
    forward(params, state_summary)?.log_density(action)
}

pub fn grad_log_prob<S: Scalar>(
    params: &PolicyParams<S>,
    state_summary: &[S],
    action: &ActionVector<S>,
) -> Result<ParamGrad<S>> {
    let mut grad = ParamGrad::zeros_like(params);
    params.accumulate_grad_log_prob(state_summary, action, S::one(), &mut grad)?;
    Ok(grad)
}

/// Policy for `cols` columns reading a column-mean summary of `(e_f, e1, e2)`.
pub fn init_policy<S: Scalar>(cols: usize, hidden: &[usize], seed: u64) -> Result<PolicyParams<S>> {
    PolicyParams::init(3 * cols, cols, hidden, seed)
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub iteration: usize,
    pub best_reward: f64,
    pub config_hash: String,
}

/// On-disk policy snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound = "S: Scalar")]
pub struct Checkpoint<S> {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<S>>,
    pub biases: Vec<Vec<S>>,
    pub meta: CheckpointMeta,
}

impl<S: Scalar> Checkpoint<S> {
    pub fn new(params: &PolicyParams<S>, meta: CheckpointMeta) -> Self {
        Self {
            layer_sizes: params.layer_sizes.clone(),
            weights: params.weights.clone(),
            biases: params.biases.clone(),
            meta,
        }
    }

    pub fn params(&self) -> Result<PolicyParams<S>> {
        PolicyParams::from_parts(self.layer_sizes.clone(), self.weights.clone(), self.biases.clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::ArtifactNotFound(path.to_path_buf()));
        }
        let ckpt: Self = serde_json::from_slice(&fs::read(path)?)?;
        ckpt.params()?;
        Ok(ckpt)
    }
}
