use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{GradientVector, HiddenProvider, LanguageModel, ParamShape};
use crate::error::{Error, Result};
use crate::numeric::{log_sum_exp, softmax};

/// Frozen hidden states followed by a learnable last linear layer `θ ∈ R^{d×V}`.
///
/// An optional support mask restricts every softmax to a subset of the
/// vocabulary; tokens outside it have probability exactly zero and receive zero
/// gradient. With `θ = 0` the model is then exactly uniform on the support.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHeadLM {
    vocab: usize,
    dim: usize,
    /// Row-major `d × V`: `theta[k * V + j]`.
    theta: Vec<f64>,
    hidden: HiddenProvider,
    support: Option<Arc<Vec<bool>>>,
    shape: Arc<ParamShape>,
}

impl LinearHeadLM {
    /// A model with `θ = 0`.
    pub fn new(vocab: usize, dim: usize, hidden: HiddenProvider) -> Self {
        assert!(vocab >= 2, "vocabulary must hold at least two tokens");
        assert!(dim >= 1, "hidden width must be positive");
        Self {
            vocab,
            dim,
            theta: vec![0.0; vocab * dim],
            hidden,
            support: None,
            shape: Arc::new(ParamShape::single("theta", dim, vocab)),
        }
    }

    /// Replaces `θ` with i.i.d. `N(0, scale²)` entries.
    pub fn randomized(mut self, scale: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for t in &mut self.theta {
            let z: f64 = StandardNormal.sample(&mut rng);
            *t = scale * z;
        }
        self
    }

    /// Restricts the softmax support to `tokens`.
    pub fn with_support(mut self, tokens: &[usize]) -> Result<Self> {
        let mut mask = vec![false; self.vocab];
        for &t in tokens {
            if t >= self.vocab {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab: self.vocab,
                });
            }
            mask[t] = true;
        }
        if mask.iter().filter(|&&m| m).count() < 1 {
            return Err(Error::InvalidArgument("support must contain a token".into()));
        }
        self.support = Some(Arc::new(mask));
        Ok(self)
    }

    pub fn hidden_dim(&self) -> usize {
        self.dim
    }

    pub fn hidden_provider(&self) -> &HiddenProvider {
        &self.hidden
    }

    pub fn support(&self) -> Option<&[bool]> {
        self.support.as_deref().map(Vec::as_slice)
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Hidden state used to predict `response[position]`.
    pub fn hidden_state(&self, prompt: &[usize], response: &[usize], position: usize) -> Vec<f64> {
        let mut context = Vec::with_capacity(prompt.len() + position);
        context.extend_from_slice(prompt);
        context.extend_from_slice(&response[..position]);
        self.hidden.hidden(&context, self.dim)
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.vocab];
        for (k, &hk) in h.iter().enumerate() {
            let row = &self.theta[k * self.vocab..(k + 1) * self.vocab];
            for (zj, &t) in z.iter_mut().zip(row) {
                *zj += hk * t;
            }
        }
        z
    }

    /// Next-token distribution after `prompt ++ response[..position]`.
    pub fn next_token_probs(&self, prompt: &[usize], response: &[usize], position: usize) -> Vec<f64> {
        let h = self.hidden_state(prompt, response, position);
        softmax(&self.logits(&h), self.support())
    }

    fn in_support(&self, token: usize) -> bool {
        self.support().is_none_or(|s| s[token])
    }

    fn validate(&self, prompt: &[usize], response: &[usize]) -> Result<()> {
        for &t in prompt.iter().chain(response) {
            if t >= self.vocab {
                return Err(Error::TokenOutOfVocab {
                    token: t,
                    vocab: self.vocab,
                });
            }
        }
        for (position, &token) in response.iter().enumerate() {
            if !self.in_support(token) {
                return Err(Error::ZeroProbability { position, token });
            }
        }
        Ok(())
    }
}

impl LanguageModel for LinearHeadLM {
    fn vocab_size(&self) -> usize {
        self.vocab
    }

    fn shape(&self) -> Arc<ParamShape> {
        Arc::clone(&self.shape)
    }

    fn params(&self) -> &[f64] {
        &self.theta
    }

    fn with_params(&self, params: Vec<f64>) -> Result<Self> {
        if params.len() != self.theta.len() {
            return Err(Error::DimensionMismatch {
                expected: self.theta.len(),
                found: params.len(),
            });
        }
        Ok(Self {
            theta: params,
            ..self.clone()
        })
    }

    fn token_logprobs(&self, prompt: &[usize], response: &[usize]) -> Result<Vec<f64>> {
        self.validate(prompt, response)?;
        let support = self.support();
        Ok((0..response.len())
            .map(|i| {
                let z = self.logits(&self.hidden_state(prompt, response, i));
                let active = z
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| support.is_none_or(|s| s[*j]))
                    .map(|(_, &v)| v);
                z[response[i]] - log_sum_exp(active)
            })
            .collect())
    }

    fn token_grads(&self, prompt: &[usize], response: &[usize]) -> Result<Vec<GradientVector>> {
        self.validate(prompt, response)?;
        let v = self.vocab;
        Ok((0..response.len())
            .map(|i| {
                let h = self.hidden_state(prompt, response, i);
                let mut coeff = softmax(&self.logits(&h), self.support());
                coeff.iter_mut().for_each(|s| *s = -*s);
                coeff[response[i]] += 1.0;
                let mut g = GradientVector::zeros(self.shape());
                let values = g.values_mut();
                for (k, &hk) in h.iter().enumerate() {
                    for (slot, &c) in values[k * v..(k + 1) * v].iter_mut().zip(&coeff) {
                        *slot = c * hk;
                    }
                }
                g
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::finite_diff_grad;
    use crate::numeric::{dot, norm_sq};

    #[test]
    fn zero_theta_is_uniform() {
        let model = LinearHeadLM::new(2, 4, HiddenProvider::prefix_hash(0));
        let lp = model.logprob(&[1, 0], &[1]).unwrap();
        assert!((lp + std::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn probabilities_normalize_on_support() {
        let model = LinearHeadLM::new(10, 5, HiddenProvider::prefix_hash(2))
            .randomized(2.0, 3)
            .with_support(&[1, 3, 5, 7])
            .unwrap();
        let p = model.next_token_probs(&[0, 1], &[3, 5], 1);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(p.iter().enumerate().all(|(j, &x)| x >= 0.0 && (j % 2 == 1 || x == 0.0)));
    }

    #[test]
    fn matches_direct_softmax() {
        // Independent route: explicit exp / sum with no shifting.
        let model = LinearHeadLM::new(6, 3, HiddenProvider::prefix_hash(5)).randomized(0.7, 7);
        let prompt = [2, 4];
        let response = [1, 5, 0];
        let mut expected = 0.0;
        for i in 0..response.len() {
            let h = model.hidden_state(&prompt, &response, i);
            let z: Vec<f64> = (0..6)
                .map(|j| (0..3).map(|k| h[k] * model.theta()[k * 6 + j]).sum())
                .collect();
            let total: f64 = z.iter().map(|x| x.exp()).sum();
            expected += (z[response[i]].exp() / total).ln();
        }
        let got = model.logprob(&prompt, &response).unwrap();
        assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");
    }

    #[test]
    fn off_support_token_has_zero_probability() {
        let model = LinearHeadLM::new(5, 2, HiddenProvider::prefix_hash(0))
            .with_support(&[0, 1])
            .unwrap();
        assert!(matches!(
            model.logprob(&[], &[0, 3]),
            Err(Error::ZeroProbability { position: 1, token: 3 })
        ));
        assert!(matches!(model.logprob(&[9], &[0]), Err(Error::TokenOutOfVocab { .. })));
    }

    #[test]
    fn uniform_support_gradient_columns() {
        let m = 4;
        let model = LinearHeadLM::new(8, 3, HiddenProvider::prefix_hash(1))
            .with_support(&[0, 2, 4, 6])
            .unwrap();
        let h = model.hidden_state(&[1], &[2], 0);
        let g = model.grad_logprob(&[1], &[2]).unwrap();
        for (k, hk) in h.iter().enumerate() {
            for j in 0..8 {
                let expected = match j {
                    2 => (1.0 - 1.0 / m as f64) * hk,
                    0 | 4 | 6 => -hk / m as f64,
                    _ => 0.0,
                };
                assert!((g.values()[k * 8 + j] - expected).abs() < 1e-15);
            }
        }
        let norm = g.norm_sq();
        assert!((norm - (m as f64 - 1.0) / m as f64 * norm_sq(&h)).abs() < 1e-14);
        let gl = model.grad_logprob(&[1], &[4]).unwrap();
        assert!((g.dot(&gl).unwrap() + dot(&h, &h) / m as f64).abs() < 1e-14);
    }

    #[test]
    fn certain_token_has_zero_gradient() {
        let model = LinearHeadLM::new(4, 2, HiddenProvider::prefix_hash(0))
            .with_support(&[3])
            .unwrap();
        let g = model.grad_logprob(&[0], &[3, 3]).unwrap();
        assert!(g.values().iter().all(|&v| v == 0.0));
        assert_eq!(model.logprob(&[0], &[3, 3]).unwrap(), 0.0);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let model = LinearHeadLM::new(7, 4, HiddenProvider::prefix_hash(11)).randomized(0.5, 11);
        let prompt = [3, 1, 4];
        let response = [1, 5, 2, 6];
        let exact = model.grad_logprob(&prompt, &response).unwrap();
        let fd = finite_diff_grad(&model, 1e-6, |m| m.logprob(&prompt, &response)).unwrap();
        assert!(exact.relative_error(&fd, 1e-12).unwrap() < 1e-6);
    }

    #[test]
    fn zero_step_keeps_model() {
        let model = LinearHeadLM::new(5, 2, HiddenProvider::prefix_hash(0)).randomized(1.0, 1);
        let dir = model.grad_logprob(&[0], &[1]).unwrap();
        assert_eq!(model.apply_step(&dir, 0.0).unwrap(), model);
        let moved = model.apply_step(&dir, 0.1).unwrap();
        assert!(moved.logprob(&[0], &[1]).unwrap() < model.logprob(&[0], &[1]).unwrap());
    }
}
