//! Toy language models with exact log-probabilities and closed-form gradients.
//!
//! Two parameterizations are provided:
//!
//! * [`LinearHeadLM`]: frozen hidden states `h_i` followed by a learnable
//!   `d × V` output layer, `π(y^i | x, y^{<i}) = softmax(h_iᵀ θ)[y^i]`.
//! * [`LogitsLM`]: per-position learnable logits for one chosen/rejected pair,
//!   with the rows before the first differing token shared between branches.
//!
//! [`finite_diff_grad`] is the central-difference oracle used to check every
//! closed-form gradient in the crate.

mod grad;
mod hidden;
mod linear_head;
mod logits;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use grad::{GradientVector, ParamBlock, ParamIndex, ParamShape};
pub use hidden::HiddenProvider;
pub use linear_head::LinearHeadLM;
pub use logits::{Branch, LogitsLM};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

/// Common interface of the toy models.
///
/// Models are immutable values: [`LanguageModel::apply_step`] returns a new model.
pub trait LanguageModel: Clone + Send + Sync {
    fn vocab_size(&self) -> usize;

    fn shape(&self) -> Arc<ParamShape>;

    fn params(&self) -> &[f64];

    /// Same model with its parameters replaced.
    fn with_params(&self, params: Vec<f64>) -> Result<Self>;

    /// `log π(y^i | x, y^{<i})` for every response position.
    fn token_logprobs(&self, prompt: &[usize], response: &[usize]) -> Result<Vec<f64>>;

    /// `∇θ log π(y^i | x, y^{<i})` for every response position.
    fn token_grads(&self, prompt: &[usize], response: &[usize]) -> Result<Vec<GradientVector>>;

    /// Sequence log-probability `Σ_i log π(y^i | x, y^{<i})`.
    fn logprob(&self, prompt: &[usize], response: &[usize]) -> Result<f64> {
        Ok(pairwise_sum(&self.token_logprobs(prompt, response)?))
    }

    fn grad_logprob(&self, prompt: &[usize], response: &[usize]) -> Result<GradientVector> {
        let grads = self.token_grads(prompt, response)?;
        GradientVector::sum(self.shape(), &grads)
    }

    /// Parameters moved by `-eta * direction`.
    fn apply_step(&self, direction: &GradientVector, eta: f64) -> Result<Self> {
        if direction.len() != self.params().len() || **direction.shape() != *self.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.params().len(),
                found: direction.len(),
            });
        }
        if eta == 0.0 {
            return Ok(self.clone());
        }
        let params = self
            .params()
            .iter()
            .zip(direction.values())
            .map(|(p, d)| p - eta * d)
            .collect();
        self.with_params(params)
    }

    fn export_params(&self) -> ModelParams {
        ModelParams {
            shape: (*self.shape()).clone(),
            values: self.params().to_vec(),
        }
    }
}

/// Plain JSON form of a model's parameters, `{shape, values}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub shape: ParamShape,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Loads these values into a model with the same layout.
    pub fn load_into<M: LanguageModel>(&self, model: &M) -> Result<M> {
        if self.shape != *model.shape() {
            return Err(Error::DimensionMismatch {
                expected: model.params().len(),
                found: self.values.len(),
            });
        }
        model.with_params(self.values.clone())
    }
}

/// Central-difference gradient of `f` over a flat vector. Coordinate `k` uses
/// step `step · (1 + |x_k|)`; truncation error is O(step²).
pub fn central_difference<F>(x: &[f64], step: f64, mut f: F) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    if step.is_nan() || step <= 0.0 {
        return Err(Error::InvalidArgument("finite-difference step must be > 0".into()));
    }
    let mut probe = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for k in 0..x.len() {
        let h = step * (1.0 + x[k].abs());
        probe[k] = x[k] + h;
        let plus = f(&probe)?;
        probe[k] = x[k] - h;
        let minus = f(&probe)?;
        probe[k] = x[k];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite {
                what: "finite-difference probe",
                step: None,
            });
        }
        out.push((plus - minus) / (2.0 * h));
    }
    Ok(out)
}

/// Central-difference gradient of a scalar function of the model's parameters.
pub fn finite_diff_grad<M, F>(model: &M, step: f64, mut f: F) -> Result<GradientVector>
where
    M: LanguageModel,
    F: FnMut(&M) -> Result<f64>,
{
    let values = central_difference(model.params(), step, |p| f(&model.with_params(p.to_vec())?))?;
    GradientVector::from_values(model.shape(), values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_function_has_zero_gradient() {
        let model = LinearHeadLM::new(4, 3, HiddenProvider::prefix_hash(1)).randomized(0.5, 2);
        let g = finite_diff_grad(&model, 1e-6, |_| Ok(3.25)).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn non_finite_probe_is_an_error() {
        let r = central_difference(&[1.0], 1e-3, |x| Ok(if x[0] > 1.0 { f64::NAN } else { 0.0 }));
        assert!(matches!(r, Err(Error::NonFinite { .. })));
        assert!(central_difference(&[1.0], 0.0, |_| Ok(0.0)).is_err());
    }

    #[test]
    fn params_json_round_trip() {
        let model = LinearHeadLM::new(5, 2, HiddenProvider::prefix_hash(1)).randomized(1.0, 9);
        let json = serde_json::to_string(&model.export_params()).unwrap();
        let back: ModelParams = serde_json::from_str(&json).unwrap();
        let fresh = LinearHeadLM::new(5, 2, HiddenProvider::prefix_hash(1));
        assert_eq!(back.load_into(&fresh).unwrap().params(), model.params());
        let wrong = LinearHeadLM::new(4, 2, HiddenProvider::prefix_hash(1));
        assert!(back.load_into(&wrong).is_err());
    }
}
